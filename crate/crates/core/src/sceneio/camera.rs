use crate::math::{Mat4, V3};

use super::IoError;

/// Pinhole camera, OpenCV axes (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// World-from-camera, row-major.
    pub pose: Mat4,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target` with a symmetric field of view.
    pub fn look_at(eye: V3, target: V3, up: V3, fov_y_deg: f64, width: usize, height: usize) -> Camera {
        let f = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Camera {
            pose: Mat4::look_at(eye, target, up),
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    pub fn center(&self) -> V3 {
        self.pose.translation()
    }

    /// World-space ray through image coordinates `(u, v)` (pixel centres at `+0.5`).
    pub fn ray(&self, u: f64, v: f64) -> (V3, V3) {
        let dc = V3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.center(), self.pose.transform_vector(dc).normalized())
    }

    /// Image coordinates of a world point in front of the camera.
    pub fn project(&self, p: V3) -> Option<(f64, f64)> {
        let q = p - self.center();
        let m = &self.pose;
        // camera-from-world rotation is the transpose
        let xc = m.at(0, 0) * q.x + m.at(1, 0) * q.y + m.at(2, 0) * q.z;
        let yc = m.at(0, 1) * q.x + m.at(1, 1) * q.y + m.at(2, 1) * q.z;
        let zc = m.at(0, 2) * q.x + m.at(1, 2) * q.y + m.at(2, 2) * q.z;
        (zc > 1e-12).then(|| (self.fx * xc / zc + self.cx, self.fy * yc / zc + self.cy))
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let err = self.pose.rotation_error();
        if !(err <= 1e-6) {
            return Err(IoError::Invalid(format!("pose rotation is not orthonormal (error {err:.3e})")));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(IoError::Invalid(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(IoError::Invalid("image size must be positive".into()));
        }
        Ok(())
    }

    /// Parse a pose file: 16 row-major matrix entries, `fx fy cx cy`, and an
    /// optional `width height` (taken from `default_size` when absent).
    pub fn parse(text: &str, default_size: Option<(usize, usize)>) -> Result<Camera, IoError> {
        let nums: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| IoError::Invalid(format!("pose: `{t}` is not a number"))))
            .collect::<Result<_, _>>()?;
        if nums.len() != 20 && nums.len() != 22 {
            return Err(IoError::Invalid(format!(
                "pose: expected 20 or 22 numbers (16 matrix + fx fy cx cy [+ w h]), found {}",
                nums.len()
            )));
        }
        let mut m = [0.0; 16];
        m.copy_from_slice(&nums[..16]);
        let (width, height) = if nums.len() == 22 {
            (nums[20] as usize, nums[21] as usize)
        } else {
            default_size.ok_or_else(|| IoError::Invalid("pose: image size missing".into()))?
        };
        let cam = Camera { pose: Mat4(m), fx: nums[16], fy: nums[17], cx: nums[18], cy: nums[19], width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in 0..4 {
            let row: Vec<String> = (0..4).map(|c| format!("{:?}", self.pose.at(r, c))).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s.push_str(&format!("{:?} {:?} {:?} {:?}\n{} {}\n", self.fx, self.fy, self.cx, self.cy, self.width, self.height));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_ray_points_at_target() {
        let cam = Camera::look_at(V3::new(0.0, -3.0, 2.0), V3::ZERO, V3::Z, 40.0, 32, 24);
        let (o, d) = cam.ray(16.0, 12.0);
        assert!((o - V3::new(0.0, -3.0, 2.0)).length() < 1e-12);
        let want = (V3::ZERO - o).normalized();
        assert!((d - want).length() < 1e-12);
    }

    #[test]
    fn project_inverts_ray() {
        let cam = Camera::look_at(V3::new(2.0, -3.0, 2.0), V3::new(0.1, 0.2, 0.0), V3::Z, 50.0, 40, 30);
        let (o, d) = cam.ray(7.25, 20.5);
        let (u, v) = cam.project(o + d * 3.7).unwrap();
        assert!((u - 7.25).abs() < 1e-9 && (v - 20.5).abs() < 1e-9);
    }

    #[test]
    fn text_round_trip() {
        let cam = Camera::look_at(V3::new(2.0, -3.0, 2.0), V3::ZERO, V3::Z, 50.0, 40, 30);
        let back = Camera::parse(&cam.to_text(), None).unwrap();
        assert_eq!(back, cam);
    }

    #[test]
    fn rejects_skewed_rotation() {
        let mut cam = Camera::look_at(V3::new(2.0, -3.0, 2.0), V3::ZERO, V3::Z, 50.0, 40, 30);
        cam.pose.0[0] *= 1.01;
        assert!(Camera::parse(&cam.to_text(), None).is_err());
    }
}
