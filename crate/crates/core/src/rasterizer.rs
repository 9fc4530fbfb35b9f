//! Exact per-pixel alpha compositing of projected Gaussians.
//!
//! Each Gaussian is projected with the local affine (EWA) approximation,
//! `Σ' = J W Σ Wᵀ Jᵀ + 0.3·I`, and covers the pixels within three standard
//! deviations of its mean. A pixel blends its covering Gaussians front to
//! back with weights `w_i = α_i Π_{j<i} (1 - α_j)`, where
//! `α_i = min(opacity_i · exp(-½ dᵀ Σ'⁻¹ d), 0.99)`, and stops once the
//! transmittance falls below `1e-4`. The same weights blend colors and
//! identity encodings, so rendered features are linear in the encodings and
//! their gradient is a weighted scatter of the pixel gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::{Classifier, Encoding, IDENTITY_DIM};
use crate::scene_io::{Camera, GaussianScene, LabelMap, SH_C0};

const TILE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub near: f64,
    pub alpha_max: f64,
    pub transmittance_min: f64,
    /// Pixels with less accumulated opacity are labeled 0.
    pub label_alpha_threshold: f64,
    /// Added to both diagonal entries of every 2D covariance (px²).
    pub dilation: f64,
    /// Footprint radius in standard deviations.
    pub cutoff_sigma: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            near: 0.01,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            label_alpha_threshold: 0.5,
            dilation: 0.3,
            cutoff_sigma: 3.0,
        }
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub mean: [f64; 2],
    /// Symmetric 2D covariance `[[a, b], [b, c]]` stored as `[a, b, c]`.
    pub cov: [f64; 3],
    /// Inverse of `cov`, same layout.
    pub conic: [f64; 3],
    pub depth: f64,
    /// `cutoff_sigma` times the largest standard deviation, in pixels.
    pub radius: f64,
    pub culled: bool,
}

impl Footprint {
    fn culled(depth: f64) -> Self {
        Footprint {
            mean: [0.0; 2],
            cov: [0.0; 3],
            conic: [0.0; 3],
            depth,
            radius: 0.0,
            culled: true,
        }
    }

    /// Mahalanobis distance squared from the mean.
    #[inline]
    pub fn power(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// 3D covariance `R S Sᵀ Rᵀ` of one Gaussian.
pub fn covariance_3d(rotation: [f64; 4], scale: [f64; 3]) -> [[f64; 3]; 3] {
    let r = quat_to_matrix(rotation);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| r[i][k] * r[j][k] * scale[k] * scale[k]).sum();
        }
    }
    m
}

fn footprint(scene: &GaussianScene, camera: &Camera, i: usize, opts: &RenderOptions) -> Footprint {
    let [x, y, z] = camera.to_camera(scene.positions[i]);
    if z <= opts.near {
        return Footprint::culled(z);
    }
    // Keep the Jacobian sane for centers far outside the frustum.
    let lim_x = 1.3 * 0.5 * camera.width as f64 / camera.fx;
    let lim_y = 1.3 * 0.5 * camera.height as f64 / camera.fy;
    let tx = (x / z).clamp(-lim_x, lim_x) * z;
    let ty = (y / z).clamp(-lim_y, lim_y) * z;
    let j = [
        [camera.fx / z, 0.0, -camera.fx * tx / (z * z)],
        [0.0, camera.fy / z, -camera.fy * ty / (z * z)],
    ];
    let w = camera.rotation;
    // T = J W (2x3)
    let mut t = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            t[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    let s = covariance_3d(scene.rotations[i], scene.scales[i]);
    let mut cov = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    acc += t[a][k] * s[k][l] * t[b][l];
                }
            }
            cov[a][b] = acc;
        }
    }
    let a = cov[0][0] + opts.dilation;
    let b = 0.5 * (cov[0][1] + cov[1][0]);
    let c = cov[1][1] + opts.dilation;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return Footprint::culled(z);
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = opts.cutoff_sigma * lambda_max.sqrt();
    let mean = [camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy];
    let (wmax, hmax) = (camera.width as f64 - 1.0, camera.height as f64 - 1.0);
    let culled = mean[0] + radius < 0.0
        || mean[0] - radius > wmax
        || mean[1] + radius < 0.0
        || mean[1] - radius > hmax;
    Footprint {
        mean,
        cov: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: z,
        radius,
        culled,
    }
}

/// Screen-space footprints of all Gaussians.
pub fn project_footprint(
    scene: &GaussianScene,
    camera: &Camera,
    opts: &RenderOptions,
) -> Vec<Footprint> {
    (0..scene.len())
        .into_par_iter()
        .map(|i| footprint(scene, camera, i, opts))
        .collect()
}

const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// View-dependent RGB of one Gaussian seen along `dir` (unit, from the
/// camera towards the Gaussian), clamped to `[0, 1]`.
pub fn sh_color(dc: [f64; 3], rest: &[f64; 45], dir: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let basis = [
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ];
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let mut c = SH_C0 * dc[ch] + 0.5;
        let coeffs = &rest[ch * 15..(ch + 1) * 15];
        for k in 0..15 {
            c += basis[k] * coeffs[k];
        }
        out[ch] = c.clamp(0.0, 1.0);
    }
    out
}

/// Ordered per-pixel blend records, stored compressed-row style.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Contributions {
    offsets: Vec<u32>,
    entries: Vec<(u32, f32)>,
}

impl Contributions {
    /// `(gaussian, weight)` pairs of a pixel, nearest first.
    pub fn pixel(&self, p: usize) -> &[(u32, f32)] {
        &self.entries[self.offsets[p] as usize..self.offsets[p + 1] as usize]
    }

    pub fn pixel_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn total_entries(&self) -> usize {
        self.entries.len()
    }

    /// Per-Gaussian lists of `(pixel, weight)`, pixels ascending.
    pub fn transpose(&self, n_gaussians: usize) -> Contributions {
        let mut counts = vec![0u32; n_gaussians + 1];
        for &(g, _) in &self.entries {
            counts[g as usize + 1] += 1;
        }
        for i in 0..n_gaussians {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut entries = vec![(0u32, 0f32); self.entries.len()];
        for p in 0..self.pixel_count() {
            for &(g, w) in self.pixel(p) {
                let slot = &mut cursor[g as usize];
                entries[*slot as usize] = (p as u32, w);
                *slot += 1;
            }
        }
        Contributions { offsets, entries }
    }
}

/// Output of [`render`]. Images are row-major.
#[derive(Debug, Clone)]
pub struct Render2D {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[f32; 3]>,
    /// Blended identity encodings, present when encodings were supplied.
    pub feature: Option<Vec<Encoding>>,
    pub alpha_acc: Vec<f64>,
    /// Recorded in training mode.
    pub contribs: Option<Contributions>,
    /// Number of Gaussians in the rendered scene.
    pub n_gaussians: usize,
}

impl Render2D {
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

struct PixelOut {
    color: [f64; 3],
    feature: Encoding,
    alpha: f64,
}

/// Renders one view. With `identities` the feature image is produced; with
/// a `classifier` as well, a label map is decoded by per-pixel argmax and
/// set to 0 where accumulated opacity is below the threshold. In
/// `train_mode` the blend weights of every pixel are kept.
pub fn render(
    scene: &GaussianScene,
    camera: &Camera,
    identities: Option<&[Encoding]>,
    classifier: Option<&Classifier>,
    train_mode: bool,
    opts: &RenderOptions,
) -> Result<(Render2D, Option<LabelMap>)> {
    if let Some(ids) = identities {
        if ids.len() != scene.len() {
            return Err(Error::Dimension(format!(
                "{} identity encodings for {} gaussians",
                ids.len(),
                scene.len()
            )));
        }
    }
    if classifier.is_some() && identities.is_none() {
        return Err(Error::Invalid("a classifier needs identity encodings".into()));
    }

    let (width, height) = (camera.width, camera.height);
    let fps = project_footprint(scene, camera, opts);
    let center = camera.center();
    let colors: Vec<[f64; 3]> = (0..scene.len())
        .into_par_iter()
        .map(|i| {
            let p = scene.positions[i];
            let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-12);
            sh_color(scene.sh_dc[i], &scene.sh_rest[i], [d[0] / n, d[1] / n, d[2] / n])
        })
        .collect();

    let mut order: Vec<u32> = (0..scene.len() as u32)
        .filter(|&i| !fps[i as usize].culled)
        .collect();
    order.sort_unstable_by(|&a, &b| {
        fps[a as usize]
            .depth
            .total_cmp(&fps[b as usize].depth)
            .then(a.cmp(&b))
    });

    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for &g in &order {
        let f = &fps[g as usize];
        let x0 = ((f.mean[0] - f.radius).floor().max(0.0) as u32).min(width - 1);
        let x1 = ((f.mean[0] + f.radius).ceil().max(0.0) as u32).min(width - 1);
        let y0 = ((f.mean[1] - f.radius).floor().max(0.0) as u32).min(height - 1);
        let y1 = ((f.mean[1] + f.radius).ceil().max(0.0) as u32).min(height - 1);
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                tiles[(ty * tiles_x + tx) as usize].push(g);
            }
        }
    }

    let cutoff = opts.cutoff_sigma * opts.cutoff_sigma;
    let rows: Vec<(Vec<PixelOut>, Vec<u32>, Vec<(u32, f32)>)> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut pixels = Vec::with_capacity(width as usize);
            let mut counts = Vec::new();
            let mut entries = Vec::new();
            for x in 0..width {
                let tile = &tiles[((y / TILE) * tiles_x + x / TILE) as usize];
                let (px, py) = (x as f64, y as f64);
                let mut t = 1.0;
                let mut out = PixelOut {
                    color: [0.0; 3],
                    feature: [0.0; IDENTITY_DIM],
                    alpha: 0.0,
                };
                let mut n = 0u32;
                for &g in tile {
                    let gi = g as usize;
                    let f = &fps[gi];
                    let power = f.power(px, py);
                    if power > cutoff {
                        continue;
                    }
                    let alpha = (scene.opacities[gi] * (-0.5 * power).exp()).min(opts.alpha_max);
                    if alpha <= 0.0 {
                        continue;
                    }
                    // Stored weight is f32; features use exactly the stored
                    // value so training and rendering agree.
                    let w32 = (alpha * t) as f32;
                    let w = alpha * t;
                    for ch in 0..3 {
                        out.color[ch] += w * colors[gi][ch];
                    }
                    if let Some(ids) = identities {
                        let wf = w32 as f64;
                        for (acc, &e) in out.feature.iter_mut().zip(&ids[gi]) {
                            *acc += wf * e;
                        }
                    }
                    out.alpha += w;
                    if train_mode {
                        entries.push((g, w32));
                        n += 1;
                    }
                    t *= 1.0 - alpha;
                    if t < opts.transmittance_min {
                        break;
                    }
                }
                pixels.push(out);
                if train_mode {
                    counts.push(n);
                }
            }
            (pixels, counts, entries)
        })
        .collect();

    let n_pix = width as usize * height as usize;
    let mut color = Vec::with_capacity(n_pix);
    let mut alpha_acc = Vec::with_capacity(n_pix);
    let mut feature = identities.map(|_| Vec::with_capacity(n_pix));
    let mut contribs = train_mode.then(|| Contributions {
        offsets: vec![0],
        entries: Vec::new(),
    });
    for (pixels, counts, entries) in rows {
        for p in pixels {
            color.push(p.color.map(|c| c.clamp(0.0, 1.0) as f32));
            alpha_acc.push(p.alpha);
            if let Some(f) = feature.as_mut() {
                f.push(p.feature);
            }
        }
        if let Some(c) = contribs.as_mut() {
            for n in counts {
                let last = *c.offsets.last().unwrap();
                c.offsets.push(last + n);
            }
            c.entries.extend(entries);
        }
    }

    let out = Render2D {
        width,
        height,
        color,
        feature,
        alpha_acc,
        contribs,
        n_gaussians: scene.len(),
    };
    let labels = match (classifier, out.feature.as_ref()) {
        (Some(cls), Some(feat)) => Some(decode_labels(
            cls,
            feat,
            &out.alpha_acc,
            width,
            height,
            opts.label_alpha_threshold,
        )?),
        _ => None,
    };
    Ok((out, labels))
}

/// Per-pixel argmax decoding of a feature image.
pub fn decode_labels(
    classifier: &Classifier,
    feature: &[Encoding],
    alpha_acc: &[f64],
    width: u32,
    height: u32,
    alpha_threshold: f64,
) -> Result<LabelMap> {
    let labels = feature
        .par_iter()
        .zip(alpha_acc)
        .map(|(f, &a)| {
            if a < alpha_threshold {
                0
            } else {
                classifier.predict(f) as u32
            }
        })
        .collect();
    LabelMap::from_labels(width, height, labels)
}

/// Gradient of a loss with respect to every identity encoding, given the
/// loss gradient with respect to every rendered feature pixel. Exact because
/// features are linear in the encodings.
pub fn backward_identity(render: &Render2D, pixel_grads: &[Encoding]) -> Result<Vec<Encoding>> {
    let contribs = render
        .contribs
        .as_ref()
        .ok_or_else(|| Error::Invalid("backward pass needs a train-mode render".into()))?;
    if pixel_grads.len() != render.pixel_count() {
        return Err(Error::Dimension(format!(
            "{} pixel gradients for {} pixels",
            pixel_grads.len(),
            render.pixel_count()
        )));
    }
    let by_gaussian = contribs.transpose(render.n_gaussians);
    Ok(scatter_gradients(&by_gaussian, pixel_grads))
}

/// Accumulates `Σ_p w·grad[p]` per Gaussian from a transposed contribution
/// table. Each Gaussian sums its pixels in ascending order, so the result
/// does not depend on thread count.
pub(crate) fn scatter_gradients(by_gaussian: &Contributions, pixel_grads: &[Encoding]) -> Vec<Encoding> {
    (0..by_gaussian.pixel_count())
        .into_par_iter()
        .map(|g| {
            let mut acc = [0.0; IDENTITY_DIM];
            for &(p, w) in by_gaussian.pixel(g) {
                let wf = w as f64;
                for (a, &d) in acc.iter_mut().zip(&pixel_grads[p as usize]) {
                    *a += wf * d;
                }
            }
            acc
        })
        .collect()
}
