//! Desk-scale scenes with known instances.
//!
//! Each instance is a dome (upper hemisphere shell) of small opaque
//! Gaussians resting on the ground `z = 0`, so every Gaussian faces some
//! elevated camera. A large flat ground-plane instance can be added.
//! Cameras orbit the scene centroid looking at it. Ground-truth masks come
//! from rendering (the strongest contributor of each pixel decides), and
//! the segmenter's inconsistency is emulated by relabeling every view with
//! its own random permutation, optionally splitting or dropping masks.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rasterizer::{render, RenderOptions};
use crate::scene_io::{Camera, Gaussian, GaussianScene, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Instances on a square grid with pitch `spread`.
    Grid,
    /// Instances placed at random, at least `spread` apart.
    RandomSpheres,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    Permute,
    /// Each mask is split in two along a random line with probability `p`.
    PermuteSplit { p: f64 },
    /// Each mask is erased with probability `p`.
    PermuteDrop { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundPlane {
    pub gaussians: usize,
    /// Half-width of the square plane.
    pub extent: f64,
}

impl Default for GroundPlane {
    fn default() -> Self {
        GroundPlane {
            gaussians: 3600,
            extent: 7.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraOrbit {
    pub radius: f64,
    /// Camera height above the ground.
    pub height: f64,
    pub n_views: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Number cameras in a seeded random order instead of by azimuth,
    /// like an unordered photo collection.
    pub shuffle_ids: bool,
}

impl Default for CameraOrbit {
    fn default() -> Self {
        CameraOrbit {
            radius: 8.0,
            height: 3.5,
            n_views: 24,
            fov_deg: 55.0,
            shuffle_ids: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_instances: usize,
    pub gaussians_per_instance: usize,
    pub layout: Layout,
    /// Distance between neighboring instance centers.
    pub spread: f64,
    /// Instance radius as a fraction of `spread`.
    pub radius_frac: f64,
    pub opacity_range: [f64; 2],
    pub ground_plane: Option<GroundPlane>,
    pub orbit: CameraOrbit,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub corruption: Corruption,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_instances: 8,
            gaussians_per_instance: 250,
            layout: Layout::Grid,
            spread: 2.0,
            radius_frac: 0.3,
            opacity_range: [0.8, 0.99],
            ground_plane: None,
            orbit: CameraOrbit::default(),
            width: 128,
            height: 128,
            seed: 0,
            corruption: Corruption::Permute,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_instances < 1 {
            problems.push("n_instances must be at least 1".to_string());
        }
        if self.gaussians_per_instance < 1 {
            problems.push("gaussians_per_instance must be at least 1".to_string());
        }
        if self.orbit.n_views < 1 {
            problems.push("orbit.n_views must be at least 1".to_string());
        }
        if self.n_instances > 1 && !(self.spread > 0.0) {
            problems.push("spread must be positive with more than one instance".to_string());
        }
        if !(self.spread >= 0.0) {
            problems.push("spread must be non-negative".to_string());
        }
        if !(self.radius_frac > 0.0) {
            problems.push("radius_frac must be positive".to_string());
        }
        let [lo, hi] = self.opacity_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            problems.push(format!("opacity_range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"));
        }
        if self.width < 2 || self.height < 2 {
            problems.push("image must be at least 2x2".to_string());
        }
        if !(self.orbit.fov_deg > 0.0 && self.orbit.fov_deg < 180.0) {
            problems.push("orbit.fov_deg must be in (0, 180)".to_string());
        }
        match self.corruption {
            Corruption::PermuteSplit { p } | Corruption::PermuteDrop { p } if !(0.0..=1.0).contains(&p) => {
                problems.push(format!("corruption probability {p} outside [0, 1]"));
            }
            _ => {}
        }
        if let Some(plane) = &self.ground_plane {
            if plane.gaussians < 1 || !(plane.extent > 0.0) {
                problems.push("ground_plane needs gaussians >= 1 and extent > 0".to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Object radius in world units; a single instance with zero spread
    /// gets unit radius.
    pub fn instance_radius(&self) -> f64 {
        if self.spread > 0.0 {
            self.radius_frac * self.spread
        } else {
            self.radius_frac
        }
    }

    /// Label of the ground plane instance when present.
    pub fn plane_label(&self) -> Option<u32> {
        self.ground_plane.as_ref().map(|_| self.n_instances as u32 + 1)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scene: GaussianScene,
    /// Instance label of every Gaussian, 1-based.
    pub gt_instance: Vec<u32>,
    pub cameras: Vec<Camera>,
    /// Instance centers (objects only).
    pub centers: Vec<[f64; 3]>,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.fract() * 6.0).max(0.0);
    let i = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn instance_centers(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 3]>> {
    let k = spec.n_instances;
    let mut centers = Vec::with_capacity(k);
    match spec.layout {
        Layout::Grid => {
            let cols = (k as f64).sqrt().ceil() as usize;
            let rows = k.div_ceil(cols);
            for i in 0..k {
                let (row, col) = (i / cols, i % cols);
                let x = (col as f64 - (cols - 1) as f64 / 2.0) * spec.spread;
                let y = (row as f64 - (rows - 1) as f64 / 2.0) * spec.spread;
                centers.push([x, y, 0.0]);
            }
        }
        Layout::RandomSpheres => {
            let half = spec.spread * (k as f64).sqrt() * 0.9;
            let mut attempts = 0;
            while centers.len() < k {
                attempts += 1;
                if attempts > 100_000 {
                    return Err(Error::Invalid(
                        "could not place random instances at the requested spread".into(),
                    ));
                }
                let c = [rng.gen_range(-half..=half), rng.gen_range(-half..=half), 0.0];
                let far = centers.iter().all(|o: &[f64; 3]| {
                    ((o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2)).sqrt() >= spec.spread
                });
                if far {
                    centers.push(c);
                }
            }
        }
    }
    Ok(centers)
}

/// Builds the scene, per-Gaussian instance labels and orbit cameras.
/// Deterministic per `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = instance_centers(spec, &mut rng)?;
    let radius = spec.instance_radius();
    let n = spec.gaussians_per_instance;
    let spacing = radius * (2.0 * std::f64::consts::PI / n as f64).sqrt();
    let scale = 0.6 * spacing;
    let [o_lo, o_hi] = spec.opacity_range;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());

    let mut scene = GaussianScene::new();
    let mut gt_instance = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        let rgb = hsv_to_rgb(k as f64 / spec.n_instances as f64, 0.75, 0.9);
        for i in 0..n {
            // Fibonacci hemisphere with a little tangential jitter
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let ring = (1.0 - z * z).sqrt();
            let phi = golden * i as f64 + rng.gen_range(-0.1..0.1);
            let dir = [ring * phi.cos(), ring * phi.sin(), z];
            let p = [c[0] + radius * dir[0], c[1] + radius * dir[1], c[2] + radius * dir[2]];
            let opacity = if o_hi > o_lo { rng.gen_range(o_lo..=o_hi) } else { o_lo };
            scene.push(Gaussian::isotropic(p, scale, opacity, rgb));
            gt_instance.push(k as u32 + 1);
        }
    }
    if let (Some(plane), Some(label)) = (&spec.ground_plane, spec.plane_label()) {
        let side = (plane.gaussians as f64).sqrt().ceil() as usize;
        let step = 2.0 * plane.extent / side as f64;
        let rgb = [0.55, 0.55, 0.5];
        let mut placed = 0;
        'rows: for iy in 0..side {
            for ix in 0..side {
                if placed == plane.gaussians {
                    break 'rows;
                }
                let x = -plane.extent + (ix as f64 + 0.5) * step + rng.gen_range(-0.2..0.2) * step;
                let y = -plane.extent + (iy as f64 + 0.5) * step + rng.gen_range(-0.2..0.2) * step;
                let opacity = if o_hi > o_lo { rng.gen_range(o_lo..=o_hi) } else { o_lo };
                scene.push(Gaussian {
                    scale: [0.7 * step, 0.7 * step, 0.02 * step],
                    ..Gaussian::isotropic([x, y, 0.0], 1.0, opacity, rgb)
                });
                gt_instance.push(label);
                placed += 1;
            }
        }
    }

    let target = {
        let m = centers.len() as f64;
        let mut t = [0.0; 3];
        for c in &centers {
            for a in 0..3 {
                t[a] += c[a] / m;
            }
        }
        t
    };
    let focal = spec.width as f64 / 2.0 / (spec.orbit.fov_deg.to_radians() / 2.0).tan();
    let mut ids: Vec<u32> = (0..spec.orbit.n_views as u32).collect();
    if spec.orbit.shuffle_ids {
        ids.shuffle(&mut rng);
    }
    let mut cameras: Vec<Camera> = (0..spec.orbit.n_views)
        .map(|v| {
            let theta = 2.0 * std::f64::consts::PI * v as f64 / spec.orbit.n_views as f64;
            let eye = [
                target[0] + spec.orbit.radius * theta.cos(),
                target[1] + spec.orbit.radius * theta.sin(),
                spec.orbit.height,
            ];
            Camera::look_at(ids[v], spec.width, spec.height, focal, eye, target, [0.0, 0.0, 1.0])
        })
        .collect();
    cameras.sort_by_key(|c| c.id);

    Ok(SyntheticScene {
        scene,
        gt_instance,
        cameras,
        centers,
    })
}

/// Consistent ground-truth label maps: every pixel takes the instance of
/// its largest-weight contributor, or 0 where accumulated opacity is below
/// the label threshold.
pub fn render_gt_masks(
    scene: &GaussianScene,
    gt_instance: &[u32],
    cameras: &[Camera],
    opts: &RenderOptions,
) -> Result<Vec<LabelMap>> {
    if gt_instance.len() != scene.len() {
        return Err(Error::Dimension(format!(
            "{} instance labels for {} gaussians",
            gt_instance.len(),
            scene.len()
        )));
    }
    cameras
        .par_iter()
        .map(|cam| {
            let (r, _) = render(scene, cam, None, None, true, opts)?;
            let contribs = r.contribs.as_ref().expect("train mode");
            let labels = (0..r.pixel_count())
                .map(|p| {
                    if r.alpha_acc[p] < opts.label_alpha_threshold {
                        return 0;
                    }
                    let mut best: Option<(u32, f32)> = None;
                    for &(g, w) in contribs.pixel(p) {
                        if best.is_none_or(|(_, bw)| w > bw) {
                            best = Some((g, w));
                        }
                    }
                    best.map_or(0, |(g, _)| gt_instance[g as usize])
                })
                .collect();
            LabelMap::from_labels(cam.width, cam.height, labels)
        })
        .collect()
}

/// For every view, the ground-truth instance behind each corrupted label.
pub type LabelTruth = Vec<BTreeMap<u32, u32>>;

fn view_rng(seed: u64, view: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(view as u64 + 1);
    rng
}

/// Relabels every view with its own permutation and applies the optional
/// split or drop corruption. Returns the corrupted maps and, per view, the
/// instance behind each new label.
pub fn corrupt(maps: &[LabelMap], corruption: Corruption, seed: u64) -> (Vec<LabelMap>, LabelTruth) {
    maps.par_iter()
        .enumerate()
        .map(|(v, map)| {
            let mut rng = view_rng(seed, v);
            let (w, h) = (map.width as usize, map.height as usize);
            // piece id per pixel: (instance, half)
            let mut pieces: Vec<Option<(u32, u8)>> =
                map.labels.iter().map(|&l| (l != 0).then_some((l, 0u8))).collect();
            for inst in map.mask_labels() {
                match corruption {
                    Corruption::Permute => {}
                    Corruption::PermuteDrop { p } => {
                        if rng.gen_bool(p) {
                            pieces.iter_mut().for_each(|px| {
                                if matches!(px, Some((l, _)) if *l == inst) {
                                    *px = None;
                                }
                            });
                        }
                    }
                    Corruption::PermuteSplit { p } => {
                        if rng.gen_bool(p) {
                            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
                            for (i, &l) in map.labels.iter().enumerate() {
                                if l == inst {
                                    sx += (i % w) as f64;
                                    sy += (i / w) as f64;
                                    n += 1;
                                }
                            }
                            let (cx, cy) = (sx / n as f64, sy / n as f64);
                            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                            let (nx, ny) = (angle.cos(), angle.sin());
                            for (i, px) in pieces.iter_mut().enumerate() {
                                if let Some((l, half)) = px {
                                    if *l == inst {
                                        let side = ((i % w) as f64 - cx) * nx + ((i / w) as f64 - cy) * ny;
                                        *half = u8::from(side >= 0.0);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let mut present: Vec<(u32, u8)> = pieces.iter().flatten().copied().collect();
            present.sort_unstable();
            present.dedup();
            let mut new_labels: Vec<u32> = (1..=present.len() as u32).collect();
            new_labels.shuffle(&mut rng);
            let rename: HashMap<(u32, u8), u32> =
                present.iter().copied().zip(new_labels.iter().copied()).collect();
            let labels = pieces.iter().map(|px| px.map_or(0, |k| rename[&k])).collect();
            let truth = present
                .iter()
                .map(|k| (rename[k], k.0))
                .collect::<BTreeMap<u32, u32>>();
            debug_assert_eq!(labels_len(w, h), map.labels.len());
            (
                LabelMap {
                    width: map.width,
                    height: map.height,
                    labels,
                },
                truth,
            )
        })
        .unzip()
}

fn labels_len(w: usize, h: usize) -> usize {
    w * h
}

/// Everything needed to run and score the pipeline on a synthetic scene.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub scene: SyntheticScene,
    /// Consistent ground-truth masks.
    pub gt_masks: Vec<LabelMap>,
    /// Per-view inconsistent masks fed to association.
    pub masks: Vec<LabelMap>,
    pub truth: LabelTruth,
}

impl SyntheticDataset {
    pub fn build(spec: &SyntheticSpec, opts: &RenderOptions) -> Result<Self> {
        let scene = generate(spec)?;
        let gt_masks = render_gt_masks(&scene.scene, &scene.gt_instance, &scene.cameras, opts)?;
        let (masks, truth) = corrupt(&gt_masks, spec.corruption, spec.seed);
        Ok(SyntheticDataset {
            spec: spec.clone(),
            scene,
            gt_masks,
            masks,
            truth,
        })
    }

    /// Keeps every `stride`-th view, starting at the first.
    pub fn subsample_views(&self, stride: usize) -> SyntheticDataset {
        let keep = |v: usize| v.is_multiple_of(stride.max(1));
        let pick = |maps: &[LabelMap]| -> Vec<LabelMap> {
            maps.iter().enumerate().filter(|(v, _)| keep(*v)).map(|(_, m)| m.clone()).collect()
        };
        let mut out = self.clone();
        out.scene.cameras = self
            .scene
            .cameras
            .iter()
            .enumerate()
            .filter(|(v, _)| keep(*v))
            .map(|(_, c)| c.clone())
            .collect();
        out.gt_masks = pick(&self.gt_masks);
        out.masks = pick(&self.masks);
        out.truth = self
            .truth
            .iter()
            .enumerate()
            .filter(|(v, _)| keep(*v))
            .map(|(_, t)| t.clone())
            .collect();
        out
    }
}

/// Association accuracy under the majority mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationScore {
    pub n_masks: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    /// Distinct nonzero groups used.
    pub n_groups: usize,
}

/// Scores relabeled masks against the corruption record. Every instance is
/// mapped to the group most of its masks received and every group to the
/// instance most of its masks show; a mask is correct when its group and
/// its instance map to each other. Masks left at group 0 count as wrong.
pub fn association_accuracy(
    inputs: &[LabelMap],
    relabeled: &[LabelMap],
    truth: &LabelTruth,
) -> Result<AssociationScore> {
    if inputs.len() != relabeled.len() || inputs.len() != truth.len() {
        return Err(Error::Dimension("inputs, outputs and truth differ in view count".into()));
    }
    // (instance, group) of every mask
    let mut masks: Vec<(u32, u32)> = Vec::new();
    for ((input, out), t) in inputs.iter().zip(relabeled).zip(truth) {
        if !input.same_shape(out) {
            return Err(Error::Dimension("relabeled map shape differs from input".into()));
        }
        let mut group_of: BTreeMap<u32, u32> = BTreeMap::new();
        for (&l, &g) in input.labels.iter().zip(&out.labels) {
            if l != 0 {
                group_of.entry(l).or_insert(g);
            }
        }
        for (l, g) in group_of {
            let inst = *t
                .get(&l)
                .ok_or_else(|| Error::Invalid(format!("label {l} missing from truth record")))?;
            masks.push((inst, g));
        }
    }
    let mut counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for &(i, g) in &masks {
        if g != 0 {
            *counts.entry((i, g)).or_insert(0) += 1;
        }
    }
    let mut best_group: BTreeMap<u32, (u32, usize)> = BTreeMap::new();
    let mut best_inst: BTreeMap<u32, (u32, usize)> = BTreeMap::new();
    for (&(i, g), &c) in &counts {
        let e = best_group.entry(i).or_insert((g, c));
        if c > e.1 {
            *e = (g, c);
        }
        let e = best_inst.entry(g).or_insert((i, c));
        if c > e.1 {
            *e = (i, c);
        }
    }
    let n_correct = masks
        .iter()
        .filter(|&&(i, g)| {
            g != 0
                && best_group.get(&i).map(|e| e.0) == Some(g)
                && best_inst.get(&g).map(|e| e.0) == Some(i)
        })
        .count();
    Ok(AssociationScore {
        n_masks: masks.len(),
        n_correct,
        accuracy: if masks.is_empty() { 0.0 } else { n_correct as f64 / masks.len() as f64 },
        n_groups: best_inst.len(),
    })
}
