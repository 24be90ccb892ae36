use super::{Mat3, SceneError, Vec3};

/// Pinhole camera with a rigid world-to-camera transform `p_cam = R p + t`.
/// Camera looks down +z; image x grows right, y grows down. Pixel `(i, j)` is
/// sampled at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self, SceneError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` giving the approximate
    /// image-up direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: u32, height: u32) -> Result<Self, SceneError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(SceneError::InvalidCamera("up vector parallel to view direction".into()));
        }
        let right = right.normalize();
        // Image y points down.
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(SceneError::InvalidCamera(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::InvalidCamera(format!("image size {}x{} is empty", self.width, self.height)));
        }
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Mat3::identity()).abs().max();
        if !(ortho < 1e-6) || !((r.determinant() - 1.0).abs() < 1e-6) {
            return Err(SceneError::InvalidCamera("rotation is not a proper orthonormal matrix".into()));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(SceneError::InvalidCamera("translation is not finite".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Projects a world point to pixel coordinates, if it is in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}
