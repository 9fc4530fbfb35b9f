use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pinhole camera. Camera space has `+z` along the viewing direction,
/// `+x` right and `+y` down; a camera-space point `(x, y, z)` lands on pixel
/// `(fx·x/z + cx, fy·y/z + cy)`. Pixel `(i, j)` has its center at `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct Camera {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation: `p_cam = R·p + t`.
    pub translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    id: u32,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: Vec<f64>,
    translation: Vec<f64>,
}

impl TryFrom<CameraRecord> for Camera {
    type Error = String;

    fn try_from(r: CameraRecord) -> std::result::Result<Self, String> {
        if r.rotation.len() != 9 {
            return Err(format!("camera {}: rotation needs 9 numbers", r.id));
        }
        if r.translation.len() != 3 {
            return Err(format!("camera {}: translation needs 3 numbers", r.id));
        }
        let m = &r.rotation;
        Ok(Camera {
            id: r.id,
            width: r.width,
            height: r.height,
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            rotation: [[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]],
            translation: [r.translation[0], r.translation[1], r.translation[2]],
        })
    }
}

impl From<Camera> for CameraRecord {
    fn from(c: Camera) -> Self {
        CameraRecord {
            id: c.id,
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: c.rotation.iter().flatten().copied().collect(),
            translation: c.translation.to_vec(),
        }
    }
}

impl Camera {
    /// A camera at `eye` looking at `target`, with world `up` mapped as close
    /// to image-up (`-y`) as possible.
    pub fn look_at(
        id: u32,
        width: u32,
        height: u32,
        focal: f64,
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    ) -> Camera {
        let forward = normalize(sub(target, eye));
        let right = normalize(cross(forward, up));
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let translation = [
            -dot(right, eye),
            -dot(down, eye),
            -dot(forward, eye),
        ];
        Camera {
            id,
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// World point to camera space.
    #[inline]
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            dot(r[0], p) + self.translation[0],
            dot(r[1], p) + self.translation[1],
            dot(r[2], p) + self.translation[2],
        ]
    }

    /// Camera center in world space, `-Rᵀt`.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.id;
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Data(format!("camera {id}: focal lengths must be positive")));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::Data(format!("camera {id}: cx outside (0, width)")));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::Data(format!("camera {id}: cy outside (0, height)")));
        }
        let r = &self.rotation;
        for a in 0..3 {
            for b in 0..3 {
                let expected = if a == b { 1.0 } else { 0.0 };
                if (dot(r[a], r[b]) - expected).abs() > 1e-5 {
                    return Err(Error::Data(format!(
                        "camera {id}: rotation is not orthonormal"
                    )));
                }
            }
        }
        if self
            .rotation
            .iter()
            .flatten()
            .chain(self.translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Data(format!("camera {id}: non-finite extrinsics")));
        }
        Ok(())
    }
}

/// Parses a camera list from JSON text; sorts by id and validates.
pub fn parse_cameras(text: &str) -> Result<Vec<Camera>> {
    let mut cams: Vec<Camera> = serde_json::from_str(text)?;
    cams.sort_by_key(|c| c.id);
    for pair in cams.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::Data(format!("duplicate camera id {}", pair[0].id)));
        }
    }
    for c in &cams {
        c.validate()?;
    }
    Ok(cams)
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text)
}

pub fn save_cameras(cameras: &[Camera], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(cameras)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
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

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: &str = r#"[{"id": 0, "width": 100, "height": 100, "fx": 100, "fy": 100,
        "cx": 50, "cy": 50, "rotation": [1,0,0, 0,1,0, 0,0,1], "translation": [0,0,0]}]"#;

    #[test]
    fn identity_camera_space_is_world_space() {
        let cams = parse_cameras(IDENTITY).unwrap();
        assert_eq!(cams.len(), 1);
        assert_eq!(cams[0].to_camera([1.0, -2.0, 3.0]), [1.0, -2.0, 3.0]);
        assert_eq!(cams[0].center(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("[{}, {}]", &IDENTITY[1..IDENTITY.len() - 1], &IDENTITY[1..IDENTITY.len() - 1]);
        let err = parse_cameras(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn non_orthonormal_rotation_names_camera() {
        let text = IDENTITY.replace("[1,0,0, 0,1,0, 0,0,1]", "[1,0.1,0, 0,1,0, 0,0,1]");
        let text = text.replace("\"id\": 0", "\"id\": 7");
        let err = parse_cameras(&text).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("camera 7")), "{err}");
    }

    #[test]
    fn sorted_by_id_and_round_trip() {
        let a = Camera::look_at(3, 64, 48, 50.0, [4.0, 1.0, 2.0], [0.0; 3], [0.0, 0.0, 1.0]);
        let b = Camera::look_at(1, 64, 48, 60.0, [-4.0, 1.0, 2.0], [0.0; 3], [0.0, 0.0, 1.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cams.json");
        save_cameras(&[a.clone(), b.clone()], &p).unwrap();
        let back = load_cameras(&p).unwrap();
        assert_eq!(back, vec![b, a]);
    }

    #[test]
    fn look_at_puts_target_on_axis() {
        let c = Camera::look_at(0, 64, 64, 50.0, [5.0, -3.0, 2.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        c.validate().unwrap();
        let p = c.to_camera([1.0, 1.0, 0.0]);
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && p[2] > 0.0);
        let center = c.center();
        for k in 0..3 {
            assert!((center[k] - [5.0, -3.0, 2.0][k]).abs() < 1e-12);
        }
        // world up projects above the target
        let above = c.to_camera([1.0, 1.0, 1.0]);
        assert!(above[1] < 0.0);
    }
}
