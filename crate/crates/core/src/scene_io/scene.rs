use crate::error::{Error, Result};

/// Number of higher-order spherical-harmonic coefficients (degree 3, RGB).
pub const SH_REST_LEN: usize = 45;

/// Zeroth-order spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// A single Gaussian, used when building or editing scenes one element at
/// a time. Values are activated (opacity in `[0, 1]`, scale in world units).
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub opacity: f64,
    pub sh_dc: [f64; 3],
    pub sh_rest: [f64; SH_REST_LEN],
}

impl Gaussian {
    /// An axis-aligned isotropic Gaussian with a flat color.
    pub fn isotropic(position: [f64; 3], scale: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        Gaussian {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [scale; 3],
            opacity,
            sh_dc: rgb.map(rgb_to_sh_dc),
            sh_rest: [0.0; SH_REST_LEN],
        }
    }
}

/// Converts a color channel in `[0, 1]` to its DC spherical-harmonic term.
pub(crate) fn rgb_to_sh_dc(c: f64) -> f64 {
    (c - 0.5) / SH_C0
}

/// Structure-of-arrays Gaussian scene. All arrays share one length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianScene {
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub scales: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
    pub sh_dc: Vec<[f64; 3]>,
    pub sh_rest: Vec<[f64; SH_REST_LEN]>,
}

impl GaussianScene {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.scales.push(g.scale);
        self.opacities.push(g.opacity);
        self.sh_dc.push(g.sh_dc);
        self.sh_rest.push(g.sh_rest);
    }

    pub fn get(&self, index: usize) -> Gaussian {
        Gaussian {
            position: self.positions[index],
            rotation: self.rotations[index],
            scale: self.scales[index],
            opacity: self.opacities[index],
            sh_dc: self.sh_dc[index],
            sh_rest: self.sh_rest[index],
        }
    }

    /// Keeps only the Gaussians whose index satisfies `keep`, preserving order.
    pub fn retain_indices(&self, mut keep: impl FnMut(usize) -> bool) -> GaussianScene {
        let mut out = GaussianScene::new();
        for i in 0..self.len() {
            if keep(i) {
                out.push(self.get(i));
            }
        }
        out
    }

    /// True when any higher-order SH coefficient is nonzero.
    pub fn has_sh_rest(&self) -> bool {
        self.sh_rest.iter().any(|c| c.iter().any(|&v| v != 0.0))
    }

    /// Checks array lengths, unit quaternions, opacity range and positive scales.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.rotations.len(),
            self.scales.len(),
            self.opacities.len(),
            self.sh_dc.len(),
            self.sh_rest.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Data(format!(
                "scene arrays have differing lengths: positions {n}, others {lens:?}"
            )));
        }
        for i in 0..n {
            let q = self.rotations[i];
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-3 {
                return Err(Error::Data(format!("gaussian {i}: quaternion norm {norm}")));
            }
            let o = self.opacities[i];
            if !(0.0..=1.0).contains(&o) {
                return Err(Error::Data(format!("gaussian {i}: opacity {o} outside [0, 1]")));
            }
            if self.scales[i].iter().any(|&s| s <= 0.0 || !s.is_finite()) {
                return Err(Error::Data(format!(
                    "gaussian {i}: non-positive scale {:?}",
                    self.scales[i]
                )));
            }
        }
        Ok(())
    }
}
