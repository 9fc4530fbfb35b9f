//! Identity encodings: a 16-dimensional feature per Gaussian, rendered like
//! color and decoded per pixel by a linear classifier followed by softmax.
//!
//! Training keeps all geometry fixed and fits the encodings and classifier
//! to the associated label maps with plain gradient descent on the mean
//! per-pixel cross-entropy. Pixels labeled 0 carry no mask evidence and are
//! left out of the loss.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory_bank::AssociationResult;
use crate::rasterizer::{render, scatter_gradients, Contributions, RenderOptions};
use crate::scene_io::{Camera, GaussianScene, LabelMap};

pub const IDENTITY_DIM: usize = 16;

pub type Encoding = [f64; IDENTITY_DIM];

/// Linear layer mapping an encoding to `K + 1` class scores; class `k`
/// stands for group id `k`, class 0 for "no group".
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub weights: Vec<Encoding>,
    pub bias: Vec<f64>,
}

impl Classifier {
    pub fn zeros(num_classes: usize) -> Self {
        Classifier {
            weights: vec![[0.0; IDENTITY_DIM]; num_classes],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    #[inline]
    pub fn logits_into(&self, f: &Encoding, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.weights[k];
            let mut s = self.bias[k];
            for d in 0..IDENTITY_DIM {
                s += w[d] * f[d];
            }
            *o = s;
        }
    }

    /// Argmax class, lowest index on ties.
    pub fn predict(&self, f: &Encoding) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..self.num_classes() {
            let w = &self.weights[k];
            let mut s = self.bias[k];
            for d in 0..IDENTITY_DIM {
                s += w[d] * f[d];
            }
            if s > best_score {
                best = k;
                best_score = s;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityField {
    pub encodings: Vec<Encoding>,
    pub classifier: Classifier,
}

impl IdentityField {
    /// Number of groups `K`; the classifier has `K + 1` outputs.
    pub fn num_groups(&self) -> u32 {
        self.classifier.num_classes() as u32 - 1
    }

    pub fn len(&self) -> usize {
        self.encodings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encodings.is_empty()
    }

    /// Keeps the encodings whose index satisfies `keep`.
    pub fn retain_indices(&self, mut keep: impl FnMut(usize) -> bool) -> IdentityField {
        IdentityField {
            encodings: self
                .encodings
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, e)| *e)
                .collect(),
            classifier: self.classifier.clone(),
        }
    }

    /// Writes the sidecar: `u32 count, u32 K`, then `count×16` encodings,
    /// `(K+1)×16` weights (row-major) and `K+1` biases, all little-endian
    /// float32.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&(self.encodings.len() as u32).to_le_bytes())?;
        w.write_all(&self.num_groups().to_le_bytes())?;
        let mut put = |v: f64| w.write_all(&(v as f32).to_le_bytes());
        for e in &self.encodings {
            for &v in e {
                put(v)?;
            }
        }
        for row in &self.classifier.weights {
            for &v in row {
                put(v)?;
            }
        }
        for &b in &self.classifier.bias {
            put(b)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<IdentityField> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("identity sidecar", e))?;
        if bytes.len() < 8 {
            return Err(Error::Format("identity sidecar shorter than its header".into()));
        }
        let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n_floats = count * IDENTITY_DIM + (k + 1) * IDENTITY_DIM + (k + 1);
        if bytes.len() != 8 + 4 * n_floats {
            return Err(Error::Format(format!(
                "identity sidecar has {} bytes, expected {} for {count} gaussians and {k} groups",
                bytes.len(),
                8 + 4 * n_floats
            )));
        }
        let mut floats = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let mut take = || -> Encoding {
            let mut e = [0.0; IDENTITY_DIM];
            e.iter_mut().for_each(|v| *v = floats.next().unwrap());
            e
        };
        let encodings = (0..count).map(|_| take()).collect();
        let weights = (0..=k).map(|_| take()).collect();
        let bias = floats.collect();
        Ok(IdentityField {
            encodings,
            classifier: Classifier { weights, bias },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<IdentityField> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr_encodings: f64,
    pub lr_classifier: f64,
    pub seed: u64,
    /// Steps per reported mean-loss point.
    pub loss_report_interval: usize,
    /// Shuffle the view order every epoch instead of round-robin.
    pub shuffle_views: bool,
    /// Half-width of the uniform initialization of encodings and weights.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            lr_encodings: 2000.0,
            lr_classifier: 2.0,
            seed: 0,
            loss_report_interval: 100,
            shuffle_views: false,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.iterations < 1 {
            problems.push("iterations must be at least 1".to_string());
        }
        if !(self.lr_encodings > 0.0) || !(self.lr_classifier > 0.0) {
            problems.push("learning rates must be positive".to_string());
        }
        if self.loss_report_interval < 1 {
            problems.push("loss_report_interval must be at least 1".to_string());
        }
        if !(self.init_scale >= 0.0) {
            problems.push("init_scale must be non-negative".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Mean loss over one reporting interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    /// Last step (1-based) of the interval.
    pub step: usize,
    pub mean_loss: f64,
}

pub fn write_loss_csv(curve: &[LossPoint], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "step,mean_loss")?;
    for p in curve {
        writeln!(w, "{},{}", p.step, p.mean_loss)?;
    }
    Ok(())
}

/// Numerically stable `-log softmax(logits)[target]` and the softmax itself.
pub fn cross_entropy(logits: &[f64], target: usize, probs: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - max).exp();
        sum += *p;
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    -(logits[target] - max - sum.ln())
}

/// One view prepared for training: fixed blend weights and targets.
struct TrainView {
    contribs: Contributions,
    by_gaussian: Contributions,
    /// `(pixel, class)` of every labeled pixel.
    targets: Vec<(u32, u32)>,
    n_pixels: usize,
}

struct StepGrads {
    loss: f64,
    weights: Vec<Encoding>,
    bias: Vec<f64>,
}

const CHUNK: usize = 1024;

/// Mean cross-entropy of a rendered feature image against a label map,
/// with the gradients of that loss. Pixels labeled 0 are skipped; returns
/// `None` when no pixel is labeled.
pub fn view_loss(
    classifier: &Classifier,
    feature: &[Encoding],
    target: &LabelMap,
) -> Option<(f64, Vec<Encoding>, Classifier)> {
    let targets: Vec<(u32, u32)> = target
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != 0)
        .map(|(p, &l)| (p as u32, l))
        .collect();
    if targets.is_empty() {
        return None;
    }
    let mut pixel_grads = vec![[0.0; IDENTITY_DIM]; feature.len()];
    let g = loss_and_grads(classifier, feature, &targets, &mut pixel_grads);
    Some((
        g.loss,
        pixel_grads,
        Classifier {
            weights: g.weights,
            bias: g.bias,
        },
    ))
}

fn loss_and_grads(
    classifier: &Classifier,
    feature: &[Encoding],
    targets: &[(u32, u32)],
    pixel_grads: &mut [Encoding],
) -> StepGrads {
    let k = classifier.num_classes();
    let inv_n = 1.0 / targets.len() as f64;
    // Chunked so the reduction order is fixed regardless of thread count.
    let partials: Vec<(StepGrads, Vec<(u32, Encoding)>)> = targets
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = StepGrads {
                loss: 0.0,
                weights: vec![[0.0; IDENTITY_DIM]; k],
                bias: vec![0.0; k],
            };
            let mut dfs = Vec::with_capacity(chunk.len());
            let mut logits = vec![0.0; k];
            let mut probs = vec![0.0; k];
            for &(p, class) in chunk {
                let f = &feature[p as usize];
                classifier.logits_into(f, &mut logits);
                g.loss += cross_entropy(&logits, class as usize, &mut probs);
                let mut df = [0.0; IDENTITY_DIM];
                for c in 0..k {
                    let d = (probs[c] - if c == class as usize { 1.0 } else { 0.0 }) * inv_n;
                    g.bias[c] += d;
                    let w = &classifier.weights[c];
                    let gw = &mut g.weights[c];
                    for j in 0..IDENTITY_DIM {
                        gw[j] += d * f[j];
                        df[j] += d * w[j];
                    }
                }
                dfs.push((p, df));
            }
            (g, dfs)
        })
        .collect();
    let mut total = StepGrads {
        loss: 0.0,
        weights: vec![[0.0; IDENTITY_DIM]; k],
        bias: vec![0.0; k],
    };
    for (g, dfs) in partials {
        total.loss += g.loss;
        for c in 0..k {
            total.bias[c] += g.bias[c];
            for j in 0..IDENTITY_DIM {
                total.weights[c][j] += g.weights[c][j];
            }
        }
        for (p, df) in dfs {
            pixel_grads[p as usize] = df;
        }
    }
    total.loss *= inv_n;
    total
}

fn blend_features(contribs: &Contributions, encodings: &[Encoding], out: &mut [Encoding]) {
    out.par_iter_mut().enumerate().for_each(|(p, f)| {
        *f = [0.0; IDENTITY_DIM];
        for &(g, w) in contribs.pixel(p) {
            let wf = w as f64;
            let e = &encodings[g as usize];
            for j in 0..IDENTITY_DIM {
                f[j] += wf * e[j];
            }
        }
    });
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub field: IdentityField,
    pub loss_curve: Vec<LossPoint>,
}

/// Fits encodings and classifier to the associated label maps. One full
/// view per step; geometry is read-only.
pub fn train(
    scene: &GaussianScene,
    cameras: &[Camera],
    assoc: &AssociationResult,
    cfg: &TrainConfig,
    render_opts: &RenderOptions,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if cameras.len() != assoc.relabeled.len() {
        return Err(Error::Dimension(format!(
            "{} cameras but {} associated label maps",
            cameras.len(),
            assoc.relabeled.len()
        )));
    }
    let k = assoc.num_groups() as usize;
    if k < 1 {
        return Err(Error::Invalid("training needs at least one group".into()));
    }
    let n = scene.len();

    let mut views = Vec::new();
    for (cam, target) in cameras.iter().zip(&assoc.relabeled) {
        if cam.width != target.width || cam.height != target.height {
            return Err(Error::Dimension(format!(
                "camera {} does not match its label map",
                cam.id
            )));
        }
        let targets: Vec<(u32, u32)> = target
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(p, &l)| (p as u32, l))
            .collect();
        if targets.is_empty() {
            log::warn!("camera {}: associated map is empty, skipping view", cam.id);
            continue;
        }
        let (r, _) = render(scene, cam, None, None, true, render_opts)?;
        let contribs = r.contribs.expect("train mode records contributions");
        let by_gaussian = contribs.transpose(n);
        views.push(TrainView {
            contribs,
            by_gaussian,
            targets,
            n_pixels: cam.pixel_count(),
        });
    }
    if views.is_empty() {
        return Err(Error::Invalid("every associated label map is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = cfg.init_scale;
    let uniform = |rng: &mut ChaCha8Rng| -> Encoding {
        let mut e = [0.0; IDENTITY_DIM];
        e.iter_mut().for_each(|v| *v = if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 });
        e
    };
    let mut encodings: Vec<Encoding> = (0..n).map(|_| uniform(&mut rng)).collect();
    let mut classifier = Classifier {
        weights: (0..=k).map(|_| uniform(&mut rng)).collect(),
        bias: vec![0.0; k + 1],
    };

    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut curve = Vec::new();
    let mut interval_sum = 0.0;
    let mut interval_len = 0usize;
    let max_pixels = views.iter().map(|v| v.n_pixels).max().unwrap_or(0);
    let mut feature = vec![[0.0; IDENTITY_DIM]; max_pixels];
    let mut pixel_grads = vec![[0.0; IDENTITY_DIM]; max_pixels];

    for step in 0..cfg.iterations {
        let slot = step % views.len();
        if slot == 0 && cfg.shuffle_views {
            order.shuffle(&mut rng);
        }
        let view = &views[order[slot]];
        let feature = &mut feature[..view.n_pixels];
        let pixel_grads = &mut pixel_grads[..view.n_pixels];
        blend_features(&view.contribs, &encodings, feature);
        pixel_grads.iter_mut().for_each(|g| *g = [0.0; IDENTITY_DIM]);
        let grads = loss_and_grads(&classifier, feature, &view.targets, pixel_grads);
        let enc_grads = scatter_gradients(&view.by_gaussian, pixel_grads);

        encodings
            .par_iter_mut()
            .zip(enc_grads.par_iter())
            .for_each(|(e, g)| {
                for j in 0..IDENTITY_DIM {
                    e[j] -= cfg.lr_encodings * g[j];
                }
            });
        for c in 0..=k {
            classifier.bias[c] -= cfg.lr_classifier * grads.bias[c];
            for j in 0..IDENTITY_DIM {
                classifier.weights[c][j] -= cfg.lr_classifier * grads.weights[c][j];
            }
        }

        interval_sum += grads.loss;
        interval_len += 1;
        if interval_len == cfg.loss_report_interval || step + 1 == cfg.iterations {
            curve.push(LossPoint {
                step: step + 1,
                mean_loss: interval_sum / interval_len as f64,
            });
            log::debug!("step {}: loss {:.5}", step + 1, interval_sum / interval_len as f64);
            interval_sum = 0.0;
            interval_len = 0;
        }
    }
    if encodings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("training diverged: non-finite encodings".into()));
    }
    Ok(TrainOutput {
        field: IdentityField {
            encodings,
            classifier,
        },
        loss_curve: curve,
    })
}

/// Group label of every Gaussian from its own encoding.
pub fn classify_gaussians(field: &IdentityField) -> Vec<u32> {
    field
        .encodings
        .par_iter()
        .map(|e| field.classifier.predict(e) as u32)
        .collect()
}
