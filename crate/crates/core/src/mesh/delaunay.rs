//! Incremental Bowyer-Watson tetrahedralisation with ghost tetrahedra.
//!
//! Every tetrahedron is stored positively oriented. Ghost tetrahedra close the
//! hull: `[a, b, c, INF]` with `orient3d(a, b, c, q) > 0` for `q` beyond the
//! hull facet `abc`. Points are inserted in a seeded random order; the
//! in-sphere test is symbolically perturbed by vertex index so ties never
//! reach the cavity logic.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::predicates::{collinear, insphere_sos, orient3d};
use super::MeshError;
use crate::scene::Vec3;

const INF: u32 = u32::MAX;
const NONE: u32 = u32::MAX;

/// Distance below which two input points are merged.
pub const MERGE_DISTANCE: f64 = 1e-9;
/// Jitter amplitude, relative to the bounding-box diagonal, applied when the
/// whole input is coplanar.
pub const COPLANAR_JITTER: f64 = 1e-7;
const SEED: u64 = 0x7e7_a5ed;

/// Vertex order within a tetrahedron of the face opposite each vertex,
/// arranged so that `orient3d(face, opposite) > 0`.
const FACE: [[usize; 3]; 4] = [[2, 1, 3], [0, 2, 3], [1, 0, 3], [0, 1, 2]];

#[derive(Debug, Clone, Copy)]
struct Tet {
    v: [u32; 4],
    n: [u32; 4],
    alive: bool,
}

impl Tet {
    fn is_ghost(&self) -> bool {
        self.v[3] == INF
    }
}

/// Result of a tetrahedralisation: the (possibly deduplicated or jittered)
/// vertex positions and positively oriented tetrahedra over them.
pub struct Tetrahedralization {
    pub vertices: Vec<Vec3>,
    pub tetrahedra: Vec<[usize; 4]>,
    /// Index of the input point each vertex came from.
    pub source: Vec<usize>,
    pub jittered: bool,
}

/// Merges points closer than [`MERGE_DISTANCE`], keeping first occurrences.
pub fn dedup_points(points: &[Vec3]) -> (Vec<Vec3>, Vec<usize>) {
    let cell = MERGE_DISTANCE;
    let key = |p: &Vec3| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let mut kept: Vec<Vec3> = Vec::new();
    let mut source = Vec::new();
    'outer: for (i, p) in points.iter().enumerate() {
        let (kx, ky, kz) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&(kx + dx, ky + dy, kz + dz)) {
                        if list.iter().any(|&j| (kept[j] - p).norm() <= MERGE_DISTANCE) {
                            continue 'outer;
                        }
                    }
                }
            }
        }
        grid.entry((kx, ky, kz)).or_default().push(kept.len());
        kept.push(*p);
        source.push(i);
    }
    (kept, source)
}

fn initial_simplex(pts: &[Vec3]) -> Option<[usize; 4]> {
    let a = 0;
    let b = (1..pts.len()).find(|&i| pts[i] != pts[a])?;
    let c = (0..pts.len()).find(|&i| !collinear(&pts[a], &pts[b], &pts[i]))?;
    let d = (0..pts.len()).find(|&i| orient3d(&pts[a], &pts[b], &pts[c], &pts[i]) != 0.0)?;
    Some([a, b, c, d])
}

/// Delaunay tetrahedralisation of `points`.
pub fn tetrahedralize(points: &[Vec3]) -> Result<Tetrahedralization, MeshError> {
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(MeshError::NonFinitePoint);
    }
    let (mut pts, source) = dedup_points(points);
    if pts.len() < 4 {
        return Err(MeshError::InsufficientPoints { found: pts.len() });
    }
    let mut jittered = false;
    let simplex = match initial_simplex(&pts) {
        Some(s) => s,
        None => {
            let (lo, hi) = bounds(&pts);
            let amp = (hi - lo).norm() * COPLANAR_JITTER;
            let mut rng = ChaCha8Rng::seed_from_u64(SEED);
            for p in &mut pts {
                *p += Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ) * amp;
            }
            jittered = true;
            initial_simplex(&pts).ok_or(MeshError::DegenerateInput)?
        }
    };
    let mut builder = Builder::new(&pts, simplex);
    let mut order: Vec<usize> = (0..pts.len()).filter(|i| !simplex.contains(i)).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(SEED));
    for i in order {
        builder.insert(i as u32)?;
    }
    let tetrahedra = builder
        .tets
        .iter()
        .filter(|t| t.alive && !t.is_ghost())
        .map(|t| t.v.map(|v| v as usize))
        .collect();
    Ok(Tetrahedralization {
        vertices: pts,
        tetrahedra,
        source,
        jittered,
    })
}

fn bounds(pts: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

struct Builder<'a> {
    pts: &'a [Vec3],
    tets: Vec<Tet>,
    free: Vec<u32>,
    last: u32,
    rng: ChaCha8Rng,
    // Per-insertion scratch: 0 unknown, 1 in conflict, 2 outside.
    mark: Vec<u8>,
    touched: Vec<u32>,
}

impl<'a> Builder<'a> {
    fn new(pts: &'a [Vec3], s: [usize; 4]) -> Self {
        let mut v = s.map(|i| i as u32);
        if orient3d(&pts[s[0]], &pts[s[1]], &pts[s[2]], &pts[s[3]]) < 0.0 {
            v.swap(0, 1);
        }
        let mut tets = vec![Tet {
            v,
            n: [1, 2, 3, 4],
            alive: true,
        }];
        // Ghost i sits across face i of the finite tet; its finite face is
        // that face with reversed orientation.
        for i in 0..4 {
            let f = FACE[i].map(|k| v[k]);
            tets.push(Tet {
                v: [f[1], f[0], f[2], INF],
                n: [NONE, NONE, NONE, 0],
                alive: true,
            });
        }
        let mut b = Self {
            pts,
            tets,
            free: Vec::new(),
            last: 0,
            rng: ChaCha8Rng::seed_from_u64(SEED ^ 1),
            mark: vec![0; 5],
            touched: Vec::new(),
        };
        b.link_ghost_ring(&[1, 2, 3, 4]);
        b
    }

    /// Connects ghost-to-ghost adjacency among `ids` by their shared edges.
    fn link_ghost_ring(&mut self, ids: &[u32]) {
        let mut edges: HashMap<(u32, u32), (u32, usize)> = HashMap::new();
        for &t in ids {
            for j in 0..3 {
                let v = self.tets[t as usize].v;
                let others: Vec<u32> = (0..3).filter(|&k| k != j).map(|k| v[k]).collect();
                let key = (others[0].min(others[1]), others[0].max(others[1]));
                if let Some((u, uj)) = edges.remove(&key) {
                    self.tets[t as usize].n[j] = u;
                    self.tets[u as usize].n[uj] = t;
                } else {
                    edges.insert(key, (t, j));
                }
            }
        }
    }

    fn p(&self, i: u32) -> &Vec3 {
        &self.pts[i as usize]
    }

    fn conflicts(&self, t: u32, p: u32) -> bool {
        let tet = &self.tets[t as usize];
        if tet.is_ghost() {
            let o = orient3d(self.p(tet.v[0]), self.p(tet.v[1]), self.p(tet.v[2]), self.p(p));
            if o != 0.0 {
                return o > 0.0;
            }
            // On the hull plane: conflict exactly when the finite tet behind
            // the facet does, which keeps both sides of the facet consistent.
            return self.conflicts(tet.n[3], p);
        }
        let v = tet.v;
        insphere_sos(
            [self.p(v[0]), self.p(v[1]), self.p(v[2]), self.p(v[3]), self.p(p)],
            [v[0] as usize, v[1] as usize, v[2] as usize, v[3] as usize, p as usize],
        ) > 0
    }

    /// Visibility walk to a tetrahedron in conflict with `p`.
    fn locate(&mut self, p: u32) -> u32 {
        let mut t = self.last;
        if !self.tets[t as usize].alive {
            t = (0..self.tets.len() as u32).find(|&i| self.tets[i as usize].alive).unwrap();
        }
        if self.tets[t as usize].is_ghost() {
            t = self.tets[t as usize].n[3];
        }
        let limit = 4 * self.tets.len() + 64;
        for _ in 0..limit {
            let tet = self.tets[t as usize];
            if tet.is_ghost() {
                return t;
            }
            let start = self.rng.random_range(0..4);
            let mut moved = false;
            for k in 0..4 {
                let i = (start + k) % 4;
                let mut q = tet.v;
                q[i] = p;
                if orient3d(self.p(q[0]), self.p(q[1]), self.p(q[2]), self.p(q[3])) < 0.0 {
                    t = tet.n[i];
                    moved = true;
                    break;
                }
            }
            if !moved {
                return t;
            }
        }
        // The walk is acyclic on Delaunay meshes; this is a safety net.
        (0..self.tets.len() as u32)
            .find(|&i| self.tets[i as usize].alive && self.conflicts(i, p))
            .expect("a point not yet inserted always conflicts with some tetrahedron")
    }

    fn alloc(&mut self, tet: Tet) -> u32 {
        if let Some(id) = self.free.pop() {
            self.tets[id as usize] = tet;
            id
        } else {
            self.tets.push(tet);
            self.mark.push(0);
            (self.tets.len() - 1) as u32
        }
    }

    fn insert(&mut self, p: u32) -> Result<(), MeshError> {
        let seed = self.locate(p);
        if !self.conflicts(seed, p) {
            return Err(MeshError::Robustness(format!("located tetrahedron does not conflict with point {p}")));
        }
        // Grow the conflict region.
        let mut cavity = vec![seed];
        let mut boundary: Vec<(u32, usize)> = Vec::new();
        self.mark[seed as usize] = 1;
        self.touched.push(seed);
        let mut stack = vec![seed];
        while let Some(t) = stack.pop() {
            for i in 0..4 {
                let nb = self.tets[t as usize].n[i];
                match self.mark[nb as usize] {
                    1 => {}
                    2 => boundary.push((t, i)),
                    _ => {
                        self.touched.push(nb);
                        if self.conflicts(nb, p) {
                            self.mark[nb as usize] = 1;
                            cavity.push(nb);
                            stack.push(nb);
                        } else {
                            self.mark[nb as usize] = 2;
                            boundary.push((t, i));
                        }
                    }
                }
            }
        }
        for &t in &self.touched {
            self.mark[t as usize] = 0;
        }
        self.touched.clear();

        // Fan new tetrahedra from p to every boundary face.
        let mut created = Vec::with_capacity(boundary.len());
        for &(t, i) in &boundary {
            let old = self.tets[t as usize];
            let outside = old.n[i];
            let mut v = old.v;
            v[i] = p;
            if v[3] != INF && orient3d(self.p(v[0]), self.p(v[1]), self.p(v[2]), self.p(v[3])) <= 0.0 {
                return Err(MeshError::Robustness(format!("inserting point {p} produced a flat tetrahedron")));
            }
            let mut n = [NONE; 4];
            n[i] = outside;
            created.push((v, n, outside, t));
        }
        // Cavity slots are recycled only by later insertions, so back-pointers
        // to cavity ids stay unambiguous while relinking.
        let mut ids = Vec::with_capacity(created.len());
        for (v, n, outside, old) in created {
            // Ghosts keep INF in the last slot; an even permutation moves it there.
            let (v, n) = normalize_ghost(v, n);
            let id = self.alloc(Tet { v, n, alive: true });
            let back = self.tets[outside as usize].n.iter().position(|&x| x == old).expect("outside tet links back to the cavity");
            self.tets[outside as usize].n[back] = id;
            ids.push(id);
        }
        for &t in &cavity {
            self.tets[t as usize].alive = false;
            self.free.push(t);
        }
        // Link new tetrahedra to each other through the faces that contain p.
        let mut edges: HashMap<(u32, u32), (u32, usize)> = HashMap::with_capacity(ids.len() * 3);
        for &t in &ids {
            let v = self.tets[t as usize].v;
            let pi = v.iter().position(|&x| x == p).unwrap();
            for j in 0..4 {
                if j == pi {
                    continue;
                }
                let mut e = [0u32; 2];
                let mut k = 0;
                for s in 0..4 {
                    if s != pi && s != j {
                        e[k] = v[s];
                        k += 1;
                    }
                }
                let key = (e[0].min(e[1]), e[0].max(e[1]));
                if let Some((u, uj)) = edges.remove(&key) {
                    self.tets[t as usize].n[j] = u;
                    self.tets[u as usize].n[uj] = t;
                } else {
                    edges.insert(key, (t, j));
                }
            }
        }
        if !edges.is_empty() {
            return Err(MeshError::Robustness(format!("cavity of point {p} is not closed")));
        }
        self.last = *ids.last().unwrap();
        Ok(())
    }
}

/// Rotates a ghost tetrahedron so INF is in slot 3, using an even permutation
/// (so orientation is unchanged); neighbour slots follow their vertices.
fn normalize_ghost(v: [u32; 4], n: [u32; 4]) -> ([u32; 4], [u32; 4]) {
    let Some(k) = v.iter().position(|&x| x == INF) else {
        return (v, n);
    };
    let perm: [usize; 4] = match k {
        3 => return (v, n),
        0 => [1, 3, 2, 0],
        1 => [2, 3, 0, 1],
        _ => [0, 3, 1, 2],
    };
    (perm.map(|i| v[i]), perm.map(|i| n[i]))
}
