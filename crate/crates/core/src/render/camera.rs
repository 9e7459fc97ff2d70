use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square-pixel intrinsics for a horizontal field of view in degrees.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Input(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Axis-aligned scene bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn validate(&self) -> Result<()> {
        if (0..3).any(|i| !(self.max[i] > self.min[i])) {
            return Err(Error::Input(format!("empty bounding box {self:?}")));
        }
        Ok(())
    }

    /// Maps the box onto `[-1, 1]^3`.
    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| 2.0 * (p[i] - self.min[i]) / (self.max[i] - self.min[i]) - 1.0)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 * (self.min[i] + self.max[i]))
    }
}

/// Everything a renderer needs to know about the scene besides the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub bbox: Aabb,
    pub near: f64,
    pub far: f64,
    pub intrinsics: Intrinsics,
}

impl SceneFrame {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        self.intrinsics.validate()?;
        if !(self.near >= 0.0 && self.far > self.near) {
            return Err(Error::Input(format!(
                "near/far must satisfy 0 <= near < far, got {}/{}",
                self.near, self.far
            )));
        }
        Ok(())
    }
}

/// Rigid camera-to-world transform; the camera looks down its local `-z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Parses a row-major 4x4 camera-to-world matrix.
    pub fn from_c2w(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::Input(format!("c2w needs 16 values, got {}", m.len())));
        }
        if m[12..16] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Input("c2w bottom row must be 0 0 0 1".into()));
        }
        let pose = Pose {
            rotation: [
                [m[0], m[1], m[2]],
                [m[4], m[5], m[6]],
                [m[8], m[9], m[10]],
            ],
            translation: [m[3], m[7], m[11]],
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn to_c2w(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1],
            r[2][2], t[2], 0.0, 0.0, 0.0, 1.0,
        ]
    }

    /// Checks that the rotation is orthonormal within 1e-6.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (v - want).abs() > 1e-6 || !v.is_finite() {
                    return Err(Error::Input(format!("rotation is not orthonormal: {r:?}")));
                }
            }
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite camera translation".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Self {
        let back = normalize(sub(eye, target));
        let right = normalize(cross(up, back));
        let cam_up = cross(back, right);
        Pose {
            rotation: [
                [right[0], cam_up[0], back[0]],
                [right[1], cam_up[1], back[1]],
                [right[2], cam_up[2], back[2]],
            ],
            translation: eye,
        }
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| dot(self.rotation[i], v))
    }
}

/// A posed pinhole camera with its exposure time in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraView {
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub exposure_time: f64,
}

impl CameraView {
    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        self.intrinsics.validate()?;
        if !(self.exposure_time > 0.0 && self.exposure_time.is_finite()) {
            return Err(Error::Input(format!(
                "exposure time must be positive, got {}",
                self.exposure_time
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: [f64; 3], direction: [f64; 3], near: f64, far: f64) -> Result<Self> {
        let r = Ray {
            origin,
            direction,
            near,
            far,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near < self.far) {
            return Err(Error::Input(format!(
                "ray near {} must be below far {}",
                self.near, self.far
            )));
        }
        let n = dot(self.direction, self.direction).sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("ray direction must be unit, |d| = {n}")));
        }
        Ok(())
    }

    pub fn at(&self, s: f64) -> [f64; 3] {
        std::array::from_fn(|i| self.origin[i] + s * self.direction[i])
    }
}

/// Rays through the centers of `(row, col)` pixels.
pub fn generate_rays(
    view: &CameraView,
    pixels: &[(usize, usize)],
    near: f64,
    far: f64,
) -> Result<Vec<Ray>> {
    let k = &view.intrinsics;
    pixels
        .iter()
        .map(|&(row, col)| {
            if row >= k.height || col >= k.width {
                return Err(Error::Input(format!(
                    "pixel ({row}, {col}) outside {}x{} image",
                    k.width, k.height
                )));
            }
            let local = [
                (col as f64 + 0.5 - k.cx) / k.fx,
                -(row as f64 + 0.5 - k.cy) / k.fy,
                -1.0,
            ];
            let d = normalize(view.pose.rotate(local));
            Ray::new(view.pose.translation, d, near, far)
        })
        .collect()
}
