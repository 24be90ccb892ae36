//! Exact orientation and in-sphere tests, with a symbolic perturbation of the
//! lifted coordinates that resolves every cospherical tie consistently.

use robust::Coord3D;

use crate::scene::Vec3;

#[inline]
fn c(p: &Vec3) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

/// Positive when `d` lies below the plane through `a, b, c` (that is,
/// `det[a-d; b-d; c-d] > 0`), negative above, zero when coplanar. Exact sign.
#[inline]
pub fn orient3d(a: &Vec3, b: &Vec3, cc: &Vec3, d: &Vec3) -> f64 {
    robust::orient3d(c(a), c(b), c(cc), c(d))
}

/// Positive when `e` is strictly inside the sphere through the positively
/// oriented tetrahedron `a, b, c, d`. Exact sign.
#[inline]
pub fn insphere(a: &Vec3, b: &Vec3, cc: &Vec3, d: &Vec3, e: &Vec3) -> f64 {
    robust::insphere(c(a), c(b), c(cc), c(d), c(e))
}

/// In-sphere sign under an infinitesimal perturbation of each point's lifted
/// coordinate `|p|^2 + eps_i`, with larger indices perturbed more. Never
/// returns zero as long as `pts[0..4]` is a non-degenerate tetrahedron.
///
/// The in-sphere determinant is linear in the lifted column, so the perturbed
/// value is `det + sum_i eps_i * C_i` where `C_i` is the cofactor of point
/// `i`'s lifted entry: `(-1)^(i+3) * orient3d(other four points, in order)`.
pub fn insphere_sos(pts: [&Vec3; 5], ids: [usize; 5]) -> i32 {
    let det = insphere(pts[0], pts[1], pts[2], pts[3], pts[4]);
    if det > 0.0 {
        return 1;
    }
    if det < 0.0 {
        return -1;
    }
    let mut order = [0usize, 1, 2, 3, 4];
    order.sort_unstable_by(|&a, &b| ids[b].cmp(&ids[a]));
    for k in order {
        let mut others = [pts[0]; 4];
        let mut n = 0;
        for (i, p) in pts.iter().enumerate() {
            if i != k {
                others[n] = p;
                n += 1;
            }
        }
        let o = orient3d(others[0], others[1], others[2], others[3]);
        if o != 0.0 {
            let parity = if (k + 3) % 2 == 0 { 1 } else { -1 };
            return parity * if o > 0.0 { 1 } else { -1 };
        }
    }
    0
}

/// Exact collinearity test for three points.
pub fn collinear(a: &Vec3, b: &Vec3, cc: &Vec3) -> bool {
    use robust::{orient2d, Coord};
    let xy = |p: &Vec3| Coord { x: p.x, y: p.y };
    let yz = |p: &Vec3| Coord { x: p.y, y: p.z };
    let zx = |p: &Vec3| Coord { x: p.z, y: p.x };
    orient2d(xy(a), xy(b), xy(cc)) == 0.0 && orient2d(yz(a), yz(b), yz(cc)) == 0.0 && orient2d(zx(a), zx(b), zx(cc)) == 0.0
}
