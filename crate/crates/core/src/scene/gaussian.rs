use nalgebra::{Quaternion, UnitQuaternion};

use super::{Mat3, SceneError, Vec3};

/// Activated scales are clamped to at least this many world units so the
/// covariance stays invertible.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Covariances whose condition number exceeds this are treated as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax3(logits: &Vec3) -> [f64; 3] {
    let m = logits.max();
    let e = [(logits.x - m).exp(), (logits.y - m).exp(), (logits.z - m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Attachment of a Gaussian centre to a mesh face through barycentric logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub face: usize,
    pub logits: Vec3,
}

impl Anchor {
    pub fn weights(&self) -> [f64; 3] {
        softmax3(&self.logits)
    }
}

/// One splat primitive, stored in raw (pre-activation) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    /// World-space centre. For anchored Gaussians this is derived from the
    /// anchor and kept in sync by [`super::SceneModel::refresh_anchored_positions`].
    pub position: Vec3,
    /// Raw quaternion `(w, x, y, z)`; normalised on use.
    pub rotation: [f64; 4],
    /// Log of the per-axis standard deviation.
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    /// `(L+1)^2` RGB coefficient triples, degree-major.
    pub sh: Vec<[f64; 3]>,
    pub anchor: Option<Anchor>,
}

impl Gaussian {
    /// An isotropic, un-anchored Gaussian with the given display colour.
    pub fn isotropic(position: Vec3, sigma: f64, opacity: f64, rgb: [f64; 3], sh_degree: usize) -> Self {
        let mut sh = vec![[0.0; 3]; super::sh::coeff_count(sh_degree)];
        sh[0] = super::sh::rgb_to_dc(rgb);
        let opacity = opacity.clamp(1e-12, 1.0 - 1e-12);
        Self {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vec3::repeat(sigma.ln()),
            opacity_logit: (opacity / (1.0 - opacity)).ln(),
            sh,
            anchor: None,
        }
    }

    /// Normalised rotation quaternion. A zero quaternion activates to identity.
    pub fn unit_rotation(&self) -> [f64; 4] {
        let [w, x, y, z] = self.rotation;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n < 1e-300 || !n.is_finite() {
            [1.0, 0.0, 0.0, 0.0]
        } else {
            [w / n, x / n, y / n, z / n]
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        let [w, x, y, z] = self.unit_rotation();
        UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
    }

    /// Activated per-axis standard deviations, floored at [`SCALE_FLOOR`].
    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(|s| s.exp().max(SCALE_FLOOR))
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// `R S S^T R^T`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation_matrix();
        let s = self.scale();
        let m = r * Mat3::from_diagonal(&s);
        m * m.transpose()
    }

    pub fn condition_number(&self) -> f64 {
        let s = self.scale();
        let ratio = s.max() / s.min();
        ratio * ratio
    }

    /// Unnormalised Gaussian density `exp(-1/2 (x-mu)^T Sigma^-1 (x-mu))`.
    pub fn evaluate(&self, x: &Vec3) -> Result<f64, SceneError> {
        let condition = self.condition_number();
        if !(condition <= MAX_CONDITION) {
            return Err(SceneError::DegenerateCovariance { condition });
        }
        // Sigma^-1 = R S^-2 R^T, so the quadratic form is |S^-1 R^T chi|^2.
        let local = self.rotation_matrix().transpose() * (x - self.position);
        let s = self.scale();
        let q = (local.x / s.x).powi(2) + (local.y / s.y).powi(2) + (local.z / s.z).powi(2);
        Ok((-0.5 * q).exp())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().flatten().all(|v| v.is_finite())
            && self.anchor.map_or(true, |a| a.logits.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian(rotation: [f64; 4], log_scale: Vec3) -> Gaussian {
        Gaussian {
            position: Vec3::zeros(),
            rotation,
            log_scale,
            opacity_logit: 0.0,
            sh: vec![[0.0; 3]],
            anchor: None,
        }
    }

    fn max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn identity_covariance() {
        let g = gaussian([1.0, 0.0, 0.0, 0.0], Vec3::zeros());
        assert!(max_abs_diff(&g.covariance(), &Mat3::identity()) < 1e-15);
    }

    #[test]
    fn stretched_covariance() {
        let g = gaussian([1.0, 0.0, 0.0, 0.0], Vec3::new(2f64.ln(), 0.0, 0.0));
        assert!(max_abs_diff(&g.covariance(), &Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0))) < 1e-12);
    }

    #[test]
    fn rotated_covariance() {
        // 90 degrees about z: (cos 45, 0, 0, sin 45).
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let g = gaussian([h, 0.0, 0.0, h], Vec3::new(2f64.ln(), 0.0, 0.0));
        // R = [[0,-1,0],[1,0,0],[0,0,1]]; R diag(4,1,1) R^T = diag(1,4,1).
        let r = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expected = r * Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)) * r.transpose();
        assert!(max_abs_diff(&expected, &Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0))) < 1e-15);
        assert!(max_abs_diff(&g.covariance(), &expected) < 1e-12);
    }

    #[test]
    fn evaluate_known_values() {
        let g = gaussian([1.0, 0.0, 0.0, 0.0], Vec3::zeros());
        assert_eq!(g.evaluate(&Vec3::zeros()).unwrap(), 1.0);
        let v = g.evaluate(&Vec3::new(0.6, 0.8, 0.0)).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        let g = gaussian([1.0, 0.0, 0.0, 0.0], Vec3::new(2f64.ln(), 0.0, 0.0));
        let v = g.evaluate(&Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_covariance_is_reported() {
        let g = gaussian([1.0, 0.0, 0.0, 0.0], Vec3::new(5.0, -20.0, 0.0));
        assert!(matches!(g.evaluate(&Vec3::zeros()), Err(SceneError::DegenerateCovariance { .. })));
    }

    #[test]
    fn scale_floor_applies() {
        let g = gaussian([1.0, 0.0, 0.0, 0.0], Vec3::repeat(-100.0));
        assert_eq!(g.scale(), Vec3::repeat(SCALE_FLOOR));
    }

    #[test]
    fn softmax_sums_to_one() {
        let w = softmax3(&Vec3::new(700.0, -3.0, 2.0));
        assert!(((w[0] + w[1] + w[2]) - 1.0).abs() < 1e-15);
        assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn covariance_eigenvalues_are_squared_scales(
            q in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(-2.0f64..2.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let g = gaussian(q, Vec3::from(s));
            let cov = g.covariance();
            prop_assert!(max_abs_diff(&cov, &cov.transpose()) < 1e-12);
            let eig = sorted(cov.symmetric_eigenvalues().iter().copied().collect());
            let expected = sorted(s.iter().map(|v| (2.0 * v).exp()).collect());
            for (a, b) in eig.iter().zip(expected.iter()) {
                prop_assert!((a - b).abs() < 1e-9 * b.max(1.0));
            }
            let [w, x, y, z] = g.unit_rotation();
            prop_assert!(((w * w + x * x + y * y + z * z).sqrt() - 1.0).abs() < 1e-6);
            prop_assert!(g.scale().iter().all(|v| *v > 0.0));
            prop_assert!(g.opacity() > 0.0 && g.opacity() < 1.0);
        }

        #[test]
        fn evaluate_is_rigid_invariant(
            q in prop::array::uniform4(-1.0f64..1.0),
            rq in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(-1.0f64..1.0),
            mu in prop::array::uniform3(-3.0f64..3.0),
            x in prop::array::uniform3(-3.0f64..3.0),
            t in prop::array::uniform3(-3.0f64..3.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            prop_assume!(rq.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let mut g = gaussian(q, Vec3::from(s));
            g.position = Vec3::from(mu);
            let x = Vec3::from(x);
            let before = g.evaluate(&x).unwrap();

            let rigid = UnitQuaternion::from_quaternion(Quaternion::new(rq[0], rq[1], rq[2], rq[3]));
            let t = Vec3::from(t);
            let [w, qx, qy, qz] = g.unit_rotation();
            let composed = rigid * UnitQuaternion::new_unchecked(Quaternion::new(w, qx, qy, qz));
            let moved = Gaussian {
                position: rigid * g.position + t,
                rotation: [composed.w, composed.i, composed.j, composed.k],
                ..g.clone()
            };
            let after = moved.evaluate(&(rigid * x + t)).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
