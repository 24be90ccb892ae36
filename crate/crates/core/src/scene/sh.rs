//! Real spherical harmonics up to degree 3, in the coefficient order and sign
//! convention used by common splatting checkpoints.

use super::{SceneError, Vec3};

pub const MAX_SH_DEGREE: usize = 3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Colour offset added to the SH expansion so that all-zero coefficients give mid grey.
pub const SH_OFFSET: f64 = 0.5;

/// Number of coefficients per colour channel for degree `degree`.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Converts an RGB colour to the DC coefficient that reproduces it.
pub fn rgb_to_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - SH_OFFSET) / SH_C0)
}

pub fn dc_to_rgb(dc: [f64; 3]) -> [f64; 3] {
    dc.map(|c| c * SH_C0 + SH_OFFSET)
}

/// Basis values `Y_k(dir)` for `k < coeff_count(degree)`. Entries past the
/// requested degree are zero.
pub fn basis(dir: &Vec3, degree: usize) -> [f64; 16] {
    basis_and_gradient(dir, degree).0
}

/// Basis values together with their partial derivatives with respect to the
/// components of `dir`, treating the basis as a polynomial in `dir`.
pub fn basis_and_gradient(dir: &Vec3, degree: usize) -> ([f64; 16], [[f64; 3]; 16]) {
    let mut y = [0.0; 16];
    let mut g = [[0.0; 3]; 16];
    let (x, yy, z) = (dir.x, dir.y, dir.z);
    y[0] = SH_C0;
    if degree >= 1 {
        y[1] = -SH_C1 * yy;
        y[2] = SH_C1 * z;
        y[3] = -SH_C1 * x;
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, y2, zz) = (x * x, yy * yy, z * z);
        let c = SH_C2;
        y[4] = c[0] * x * yy;
        y[5] = c[1] * yy * z;
        y[6] = c[2] * (2.0 * zz - xx - y2);
        y[7] = c[3] * x * z;
        y[8] = c[4] * (xx - y2);
        g[4] = [c[0] * yy, c[0] * x, 0.0];
        g[5] = [0.0, c[1] * z, c[1] * yy];
        g[6] = [-2.0 * c[2] * x, -2.0 * c[2] * yy, 4.0 * c[2] * z];
        g[7] = [c[3] * z, 0.0, c[3] * x];
        g[8] = [2.0 * c[4] * x, -2.0 * c[4] * yy, 0.0];
        if degree >= 3 {
            let c = SH_C3;
            y[9] = c[0] * yy * (3.0 * xx - y2);
            y[10] = c[1] * x * yy * z;
            y[11] = c[2] * yy * (4.0 * zz - xx - y2);
            y[12] = c[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * y2);
            y[13] = c[4] * x * (4.0 * zz - xx - y2);
            y[14] = c[5] * z * (xx - y2);
            y[15] = c[6] * x * (xx - 3.0 * y2);
            g[9] = [c[0] * 6.0 * x * yy, c[0] * (3.0 * xx - 3.0 * y2), 0.0];
            g[10] = [c[1] * yy * z, c[1] * x * z, c[1] * x * yy];
            g[11] = [
                c[2] * -2.0 * x * yy,
                c[2] * (4.0 * zz - xx - 3.0 * y2),
                c[2] * 8.0 * yy * z,
            ];
            g[12] = [
                c[3] * -6.0 * x * z,
                c[3] * -6.0 * yy * z,
                c[3] * (6.0 * zz - 3.0 * xx - 3.0 * y2),
            ];
            g[13] = [
                c[4] * (4.0 * zz - 3.0 * xx - y2),
                c[4] * -2.0 * x * yy,
                c[4] * 8.0 * x * z,
            ];
            g[14] = [c[5] * 2.0 * x * z, c[5] * -2.0 * yy * z, c[5] * (xx - y2)];
            g[15] = [c[6] * (3.0 * xx - 3.0 * y2), c[6] * -6.0 * x * yy, 0.0];
        }
    }
    (y, g)
}

fn check_shape(sh: &[[f64; 3]], degree: usize) -> Result<(), SceneError> {
    if degree > MAX_SH_DEGREE {
        return Err(SceneError::UnsupportedShDegree(degree));
    }
    if sh.len() != coeff_count(degree) {
        return Err(SceneError::ShapeMismatch {
            expected: coeff_count(degree),
            found: sh.len(),
        });
    }
    Ok(())
}

/// SH colour before clamping: `sum_k c_k Y_k(dir) + 0.5` per channel.
pub fn evaluate_sh_raw(sh: &[[f64; 3]], view_dir: &Vec3, degree: usize) -> Result<[f64; 3], SceneError> {
    check_shape(sh, degree)?;
    let y = basis(view_dir, degree);
    let mut rgb = [SH_OFFSET; 3];
    for (coeff, yk) in sh.iter().zip(y.iter()) {
        for c in 0..3 {
            rgb[c] += coeff[c] * yk;
        }
    }
    Ok(rgb)
}

/// Display colour: [`evaluate_sh_raw`] clamped to be non-negative.
pub fn evaluate_sh(sh: &[[f64; 3]], view_dir: &Vec3, degree: usize) -> Result<[f64; 3], SceneError> {
    Ok(evaluate_sh_raw(sh, view_dir, degree)?.map(|c| c.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn dc_only_gives_offset_plus_one() {
        let sh = vec![[1.0 / SH_C0, 0.0, 0.0]];
        let rgb = evaluate_sh_raw(&sh, &Vec3::new(0.0, 0.6, 0.8), 0).unwrap();
        assert!((rgb[0] - 1.5).abs() < 1e-12);
        assert!((rgb[1] - 0.5).abs() < 1e-12);
        assert!((rgb[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_coefficients_are_mid_grey() {
        let sh = vec![[0.0; 3]; 16];
        assert_eq!(evaluate_sh(&sh, &Vec3::z(), 3).unwrap(), [0.5; 3]);
    }

    #[test]
    fn degree_one_terms_are_odd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sh = vec![[0.0; 3]; 4];
        for k in 1..4 {
            sh[k] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        }
        let d = random_dir(&mut rng);
        let a = evaluate_sh_raw(&sh, &d, 1).unwrap();
        let b = evaluate_sh_raw(&sh, &-d, 1).unwrap();
        for c in 0..3 {
            assert!(((a[c] - 0.5) + (b[c] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_coefficient_count_is_rejected() {
        let sh = vec![[0.0; 3]; 9];
        assert!(matches!(
            evaluate_sh(&sh, &Vec3::z(), 3),
            Err(SceneError::ShapeMismatch { expected: 16, found: 9 })
        ));
        assert!(matches!(evaluate_sh(&sh, &Vec3::z(), 4), Err(SceneError::UnsupportedShDegree(4))));
    }

    #[test]
    fn degree_zero_is_direction_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sh = vec![[0.3, -0.7, 1.1]];
        let reference = evaluate_sh(&sh, &Vec3::z(), 0).unwrap();
        for _ in 0..1000 {
            let d = random_dir(&mut rng);
            assert_eq!(evaluate_sh(&sh, &d, 0).unwrap(), reference);
        }
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..20 {
            let d = random_dir(&mut rng);
            let (_, g) = basis_and_gradient(&d, 3);
            for axis in 0..3 {
                let mut dp = d;
                let mut dm = d;
                dp[axis] += h;
                dm[axis] -= h;
                let (yp, ym) = (basis(&dp, 3), basis(&dm, 3));
                for k in 0..16 {
                    let fd = (yp[k] - ym[k]) / (2.0 * h);
                    assert!((fd - g[k][axis]).abs() < 1e-7, "k={k} axis={axis}");
                }
            }
        }
    }

    #[test]
    fn basis_is_orthonormal_on_the_sphere() {
        // Monte-Carlo check of the normalisation constants.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let mut gram = [[0.0f64; 16]; 16];
        for _ in 0..n {
            let y = basis(&random_dir(&mut rng), 3);
            for i in 0..16 {
                for j in 0..16 {
                    gram[i][j] += y[i] * y[j];
                }
            }
        }
        let area = 4.0 * std::f64::consts::PI;
        for i in 0..16 {
            for j in 0..16 {
                let v = gram[i][j] * area / n as f64;
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 0.03, "({i},{j}) = {v}");
            }
        }
    }
}
