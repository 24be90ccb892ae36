mod common;

use common::*;
use proptest::prelude::*;
use tetrasplat::mesh::{barycentric_position, init_gaussians_on_faces, read_mesh_text, write_mesh_text, MeshError, TetraMesh};
use tetrasplat::scene::Vec3;

fn unit_tetra() -> Vec<Vec3> {
    vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()]
}

fn cube_corners() -> Vec<Vec3> {
    (0..8).map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64)).collect()
}

#[test]
fn minimal_simplex() {
    let m = TetraMesh::build(&unit_tetra(), None).unwrap();
    assert_eq!(m.tetrahedra.len(), 1);
    assert_eq!(m.faces.len(), 4);
}

#[test]
fn cube_is_filled_and_delaunay() {
    let pts = cube_corners();
    let m = TetraMesh::build(&pts, None).unwrap();
    assert_eq!(circumsphere_violations(&m.vertices, &m.tetrahedra, 1e-9), 0);
    let volume: f64 = (0..m.tetrahedra.len())
        .map(|t| {
            let [a, b, c, d] = m.tet_vertices(t);
            (b - a).cross(&(c - a)).dot(&(d - a)).abs() / 6.0
        })
        .sum();
    assert!((volume - 1.0).abs() < 1e-9, "volume {volume}");
}

#[test]
fn random_clouds_are_valid() {
    let mut r = rng(11);
    for trial in 0..10 {
        let n = 10 + trial * 19;
        let pts = random_cloud(&mut r, n);
        let m = TetraMesh::build(&pts, None).unwrap();
        assert_eq!(circumsphere_violations(&m.vertices, &m.tetrahedra, 1e-9), 0);
        // Internal faces have two tets, hull faces one.
        let mut uses = vec![0; m.faces.len()];
        m.face_of_tet.iter().flatten().for_each(|&f| uses[f] += 1);
        assert!(uses.iter().all(|&u| u == 1 || u == 2));
        // Euler characteristic of a triangulated ball: V - E + F - T = 1.
        let mut edges = std::collections::HashSet::new();
        for f in &m.faces {
            for (a, b) in [(f[0], f[1]), (f[0], f[2]), (f[1], f[2])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let chi = m.vertices.len() as i64 - edges.len() as i64 + m.faces.len() as i64 - m.tetrahedra.len() as i64;
        assert_eq!(chi, 1);
        for _ in 0..300 {
            let p = sample_inside(&mut r, &pts);
            assert!((0..m.tetrahedra.len()).any(|t| in_tet(&p, m.tet_vertices(t), 1e-9)));
            let q = sample_outside(&mut r, &pts);
            assert!(!(0..m.tetrahedra.len()).any(|t| in_tet(&q, m.tet_vertices(t), -1e-12)));
        }
    }
}

#[test]
fn too_few_or_degenerate_points() {
    let err = TetraMesh::build(&unit_tetra()[..3], None).unwrap_err();
    assert!(matches!(err, MeshError::InsufficientPoints { .. }));
    let dup = vec![Vec3::zeros(); 6];
    assert!(TetraMesh::build(&dup, None).is_err());
}

#[test]
fn barycentric_examples() {
    let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
    assert_eq!(barycentric_position(&a, &b, &c, [1.0, 0.0, 0.0]).unwrap(), a);
    let third = 1.0 / 3.0;
    let p = barycentric_position(&a, &b, &c, [third; 3]).unwrap();
    assert!((p - Vec3::new(third, third, 0.0)).norm() < 1e-15);
    let p = barycentric_position(&a, &b, &c, [0.5, 0.25, 0.25]).unwrap();
    assert!((p - Vec3::new(0.25, 0.25, 0.0)).norm() < 1e-15);
    assert!(matches!(
        barycentric_position(&a, &b, &c, [0.5, 0.5, 0.5]),
        Err(MeshError::InvalidWeights(_))
    ));
}

#[test]
fn count_rule_and_centroids() {
    let m = TetraMesh::build(&unit_tetra(), None).unwrap();
    assert_eq!(init_gaussians_on_faces(&m, 3, 3).unwrap().len(), 12);
    let cube = TetraMesh::build(&cube_corners(), None).unwrap();
    assert_eq!(init_gaussians_on_faces(&cube, 2, 0).unwrap().len(), 2 * cube.faces.len());
    let one = init_gaussians_on_faces(&cube, 1, 0).unwrap();
    for g in &one.gaussians {
        let [a, b, c] = cube.face_vertices(g.anchor.unwrap().face).unwrap();
        assert!((g.position - (a + b + c) / 3.0).norm() < 1e-12);
    }
    assert_eq!(init_gaussians_on_faces(&m, 0, 0).unwrap_err(), MeshError::InvalidSplatCount);
}

#[test]
fn anchored_splats_start_on_their_face() {
    let mut r = rng(5);
    let m = TetraMesh::build(&random_cloud(&mut r, 40), None).unwrap();
    let scene = init_gaussians_on_faces(&m, 4, 1).unwrap();
    for g in &scene.gaussians {
        let a = g.anchor.unwrap();
        let [v1, v2, v3] = m.face_vertices(a.face).unwrap();
        let w = a.logits.map(f64::exp);
        let w = w / w.sum();
        let expected = v1 * w[0] + v2 * w[1] + v3 * w[2];
        assert!((g.position - expected).norm() < 1e-12);
        // In-plane axes span the face; the normal axis is orthogonal to it.
        let rot = g.rotation_matrix();
        let n = (v2 - v1).cross(&(v3 - v1)).normalize();
        assert!(rot.column(2).dot(&n).abs() > 1.0 - 1e-9);
    }
}

#[test]
fn mesh_text_round_trip() {
    let mut r = rng(9);
    let pts = random_cloud(&mut r, 30);
    let colors: Vec<[f64; 3]> = (0..30).map(|i| [i as f64 / 30.0, 0.5, 0.25]).collect();
    let m = TetraMesh::build(&pts, Some(&colors)).unwrap();
    assert_eq!(read_mesh_text(&write_mesh_text(&m)).unwrap(), m);
}

proptest! {
    #[test]
    fn barycentric_stays_in_triangle(
        w in prop::array::uniform3(0.0f64..1.0),
        v in prop::array::uniform3(prop::array::uniform3(-10.0f64..10.0)),
    ) {
        let s: f64 = w.iter().sum();
        prop_assume!(s > 1e-6);
        let w = w.map(|x| x / s);
        let [a, b, c] = v.map(|p| Vec3::new(p[0], p[1], p[2]));
        let p = barycentric_position(&a, &b, &c, w).unwrap();
        // Reconstruct weights from areas; they must be non-negative.
        let n = (b - a).cross(&(c - a));
        prop_assume!(n.norm() > 1e-6);
        let area = |x: Vec3, y: Vec3, z: Vec3| (y - x).cross(&(z - x)).dot(&n) / n.norm_squared();
        for l in [area(p, b, c), area(a, p, c), area(a, b, p)] {
            prop_assert!(l >= -1e-9);
        }
    }
}
