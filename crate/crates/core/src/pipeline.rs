//! Reproducible runs driven by one TOML config.
//!
//! Every command writes into its own directory under `paths.out`
//! (`associate/`, `train/`, `render/`, `eval/`, `edit/`) and leaves a
//! `run.json` record there with the config hash, crate version and stage
//! timings. Inputs are never modified, and reruns with the same config and
//! seed produce byte-identical label maps and identity sidecars.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! scene = "scene.ply"
//! cameras = "cameras.json"
//! masks = "masks"
//! out = "out"
//!
//! [association]
//! front_pct = 20.0
//! grid = { rows = 32, cols = 32 }
//!
//! [train]
//! iterations = 2000
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate, iou_drop, mean_boundary_iou, EvalReport};
use crate::identity::{train, write_loss_csv, IdentityField, TrainConfig};
use crate::manipulation::{apply, EditScript};
use crate::memory_bank::{associate, AssociationConfig, AssociationMode, AssociationResult, MemoryBank};
use crate::projection::PatchGrid;
use crate::rasterizer::{render, Render2D, RenderOptions};
use crate::scene_io::{
    label_path, load_cameras, load_gaussian_ply, load_label_map, load_label_maps, save_cameras,
    save_colorized, save_gaussian_ply, save_label_maps, Camera, GaussianScene, LabelMap,
};
use crate::synthetic::{SyntheticDataset, SyntheticSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Palette seed for colorized label previews.
const PALETTE: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub scene: PathBuf,
    pub cameras: PathBuf,
    /// Directory of per-view input label maps.
    pub masks: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            scene: "scene.ply".into(),
            cameras: "cameras.json".into(),
            masks: "masks".into(),
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub boundary: bool,
    pub band_frac: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            boundary: false,
            band_frac: 0.02,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seeds of every stochastic stage.
    pub seed: u64,
    pub paths: Paths,
    pub association: AssociationConfig,
    pub train: TrainConfig,
    pub render: RenderOptions,
    pub eval: EvalOptions,
    pub synthetic: Option<SyntheticSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.propagate_seed();
        Ok(cfg)
    }

    /// Reads a config file; relative paths are taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.scene,
            &mut self.paths.cameras,
            &mut self.paths.masks,
            &mut self.paths.out,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.seed = seed;
        self.propagate_seed();
        self
    }

    fn propagate_seed(&mut self) {
        self.train.seed = self.seed;
        if let Some(spec) = &mut self.synthetic {
            spec.seed = self.seed;
        }
    }

    /// Checks every section and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut collect = |prefix: &str, r: Result<()>| match r {
            Ok(()) => {}
            Err(Error::Config(list)) => problems.extend(list.into_iter().map(|p| format!("{prefix}.{p}"))),
            Err(e) => problems.push(format!("{prefix}: {e}")),
        };
        collect("association", self.association.validate());
        collect("train", self.train.validate());
        if let Some(spec) = &self.synthetic {
            collect("synthetic", spec.validate());
        }
        if !(self.eval.band_frac > 0.0) {
            problems.push(format!("eval.band_frac {} must be positive", self.eval.band_frac));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn command_dir(&self, command: &str) -> PathBuf {
        self.paths.out.join(command)
    }

    /// Where `train` writes the identity sidecar.
    pub fn sidecar_path(&self) -> PathBuf {
        let stem = self
            .paths
            .scene
            .file_stem()
            .map_or_else(|| "scene".into(), |s| s.to_string_lossy().into_owned());
        self.command_dir("train").join(format!("{stem}.ids"))
    }
}

/// The ablation presets: front percentages, grid sizes and thresholds.
pub fn ablation_presets() -> Vec<(String, AssociationConfig)> {
    let base = AssociationConfig::default();
    let mut out = Vec::new();
    for pct in [10.0, 20.0, 30.0, 100.0] {
        out.push((
            format!("front_pct_{pct}"),
            AssociationConfig {
                front_pct: pct,
                ..base.clone()
            },
        ));
    }
    for n in [1, 16, 32, 64] {
        out.push((
            format!("grid_{n}"),
            AssociationConfig {
                grid: PatchGrid::square(n),
                ..base.clone()
            },
        ));
    }
    for t in [0.01, 0.1, 0.2] {
        out.push((
            format!("threshold_{t}"),
            AssociationConfig {
                overlap_threshold: t,
                ..base.clone()
            },
        ));
    }
    out.push((
        "no_association".into(),
        AssociationConfig {
            mode: AssociationMode::NoAssociation,
            ..base
        },
    ));
    out
}

pub fn preset(name: &str) -> Option<AssociationConfig> {
    ablation_presets().into_iter().find(|(n, _)| n == name).map(|(_, c)| c)
}

/// Provenance record written as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Seconds per stage, in order of execution.
    pub timings_s: Vec<(String, f64)>,
    pub total_s: f64,
}

struct Recorder {
    record: RunRecord,
    started: Instant,
    stage: Instant,
}

impl Recorder {
    fn new(command: &str, hash: String, seed: u64, inputs: Vec<PathBuf>) -> Recorder {
        Recorder {
            record: RunRecord {
                command: command.into(),
                version: VERSION.into(),
                config_sha256: hash,
                seed,
                inputs,
                outputs: Vec::new(),
                timings_s: Vec::new(),
                total_s: 0.0,
            },
            started: Instant::now(),
            stage: Instant::now(),
        }
    }

    fn lap(&mut self, name: &str) {
        self.record
            .timings_s
            .push((name.into(), self.stage.elapsed().as_secs_f64()));
        self.stage = Instant::now();
    }

    fn output(&mut self, path: impl Into<PathBuf>) {
        self.record.outputs.push(path.into());
    }

    fn finish(mut self, dir: &Path) -> Result<RunRecord> {
        self.record.total_s = self.started.elapsed().as_secs_f64();
        write_json(&dir.join("run.json"), &self.record)?;
        Ok(self.record)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn require(paths: &[&Path]) -> Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| format!("missing input {}", p.display()))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(missing))
    }
}

/// Writes a synthetic dataset into `out`: `scene.ply`, `cameras.json`,
/// corrupted `masks/`, consistent `gt/`, `gt_instance.json`, `truth.json`
/// and a ready-to-run `config.toml`.
pub fn cmd_synth(spec: &SyntheticSpec, out: &Path, render_opts: &RenderOptions) -> Result<RunRecord> {
    spec.validate()?;
    ensure_dir(out)?;
    let config = RunConfig {
        seed: spec.seed,
        synthetic: Some(spec.clone()),
        render: *render_opts,
        ..Default::default()
    };
    let mut rec = Recorder::new("synth", config.hash(), spec.seed, Vec::new());
    let data = SyntheticDataset::build(spec, render_opts)?;
    rec.lap("generate");

    let cams = &data.scene.cameras;
    save_gaussian_ply(&data.scene.scene, out.join("scene.ply"))?;
    save_cameras(cams, out.join("cameras.json"))?;
    let ids = || cams.iter().map(|c| c.id);
    save_label_maps(ids().zip(&data.masks), out.join("masks"))?;
    save_label_maps(ids().zip(&data.gt_masks), out.join("gt"))?;
    write_json(&out.join("gt_instance.json"), &data.scene.gt_instance)?;
    let truth: BTreeMap<u32, &BTreeMap<u32, u32>> = ids().zip(&data.truth).collect();
    write_json(&out.join("truth.json"), &truth)?;
    fs::write(out.join("config.toml"), config.to_toml()).map_err(|e| Error::io(out, e))?;
    for name in ["scene.ply", "cameras.json", "masks", "gt", "gt_instance.json", "truth.json", "config.toml"] {
        rec.output(out.join(name));
    }
    rec.lap("write");
    rec.finish(out)
}

/// Loaded inputs shared by most commands.
pub struct Inputs {
    pub scene: GaussianScene,
    pub cameras: Vec<Camera>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    require(&[&cfg.paths.scene, &cfg.paths.cameras])?;
    Ok(Inputs {
        scene: load_gaussian_ply(&cfg.paths.scene)?,
        cameras: load_cameras(&cfg.paths.cameras)?,
    })
}

/// Association: writes `labels/`, colorized `preview/`, `log.jsonl` and
/// the serialized memory bank `bank.json`.
pub fn cmd_associate(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    require(&[&cfg.paths.scene, &cfg.paths.cameras, &cfg.paths.masks])?;
    let dir = cfg.command_dir("associate");
    let mut rec = Recorder::new(
        "associate",
        cfg.hash(),
        cfg.seed,
        vec![cfg.paths.scene.clone(), cfg.paths.cameras.clone(), cfg.paths.masks.clone()],
    );
    let inputs = load_inputs(cfg)?;
    let masks = load_label_maps(&cfg.paths.masks, &inputs.cameras)?;
    rec.lap("load");
    let result = associate(&inputs.scene, &inputs.cameras, &masks, &cfg.association)?;
    rec.lap("associate");

    ensure_dir(&dir)?;
    let ids = || inputs.cameras.iter().map(|c| c.id);
    save_label_maps(ids().zip(&result.relabeled), dir.join("labels"))?;
    save_colorized(ids().zip(&result.relabeled), dir.join("preview"), PALETTE)?;
    let log_path = dir.join("log.jsonl");
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut w = BufWriter::new(file);
    result.write_log(&mut w)?;
    w.flush().map_err(|e| Error::io(&log_path, e))?;
    write_json(&dir.join("bank.json"), &result.bank)?;
    for name in ["labels", "preview", "log.jsonl", "bank.json"] {
        rec.output(dir.join(name));
    }
    rec.lap("write");
    rec.finish(&dir)
}

/// Reads back what [`cmd_associate`] wrote.
pub fn load_association(cfg: &RunConfig, cameras: &[Camera]) -> Result<AssociationResult> {
    let dir = cfg.command_dir("associate");
    require(&[&dir.join("bank.json"), &dir.join("labels")])?;
    let mut bank: MemoryBank = read_json(&dir.join("bank.json"))?;
    bank.rebuild_index();
    bank.check_invariants()?;
    Ok(AssociationResult {
        relabeled: load_label_maps(dir.join("labels"), cameras)?,
        bank,
        log: Vec::new(),
    })
}

/// Training: writes `<scene_stem>.ids` and `loss.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let dir = cfg.command_dir("train");
    let mut rec = Recorder::new(
        "train",
        cfg.hash(),
        cfg.seed,
        vec![cfg.paths.scene.clone(), cfg.paths.cameras.clone(), cfg.command_dir("associate")],
    );
    let inputs = load_inputs(cfg)?;
    let assoc = load_association(cfg, &inputs.cameras)?;
    rec.lap("load");
    let out = train(&inputs.scene, &inputs.cameras, &assoc, &cfg.train, &cfg.render)?;
    rec.lap("train");

    ensure_dir(&dir)?;
    let sidecar = cfg.sidecar_path();
    out.field.save(&sidecar)?;
    let csv = dir.join("loss.csv");
    let file = fs::File::create(&csv).map_err(|e| Error::io(&csv, e))?;
    let mut w = BufWriter::new(file);
    write_loss_csv(&out.loss_curve, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&csv, e))?;
    rec.output(sidecar);
    rec.output(csv);
    rec.lap("write");
    rec.finish(&dir)
}

fn save_color(r: &Render2D, path: &Path) -> Result<()> {
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let raw: Vec<u8> = r.color.iter().flat_map(|c| c.map(to_u8)).collect();
    let img: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(r.width, r.height, raw)
        .ok_or_else(|| Error::Dimension("color buffer size".into()))?;
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn select_cameras(cameras: &[Camera], views: Option<&[u32]>) -> Result<Vec<Camera>> {
    let Some(views) = views else {
        return Ok(cameras.to_vec());
    };
    let unknown: Vec<String> = views
        .iter()
        .filter(|v| !cameras.iter().any(|c| c.id == **v))
        .map(|v| format!("unknown view id {v}"))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(unknown));
    }
    Ok(cameras.iter().filter(|c| views.contains(&c.id)).cloned().collect())
}

/// Renders color, labels and label previews into `<dir>/{color,labels,preview}`.
fn render_views(
    scene: &GaussianScene,
    field: &IdentityField,
    cameras: &[Camera],
    opts: &RenderOptions,
    dir: &Path,
) -> Result<()> {
    for sub in ["color", "labels", "preview"] {
        ensure_dir(&dir.join(sub))?;
    }
    let mut labels = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let (r, l) = render(scene, cam, Some(&field.encodings), Some(&field.classifier), false, opts)?;
        save_color(&r, &label_path(&dir.join("color"), cam.id))?;
        labels.push((cam.id, l.expect("classifier given")));
    }
    save_label_maps(labels.iter().map(|(id, m)| (*id, m)), dir.join("labels"))?;
    save_colorized(labels.iter().map(|(id, m)| (*id, m)), dir.join("preview"), PALETTE)
}

/// Renders the trained field for `views` (all cameras when `None`).
pub fn cmd_render(cfg: &RunConfig, views: Option<&[u32]>) -> Result<RunRecord> {
    cfg.validate()?;
    let sidecar = cfg.sidecar_path();
    require(&[&cfg.paths.scene, &cfg.paths.cameras, &sidecar])?;
    let dir = cfg.command_dir("render");
    let mut rec = Recorder::new(
        "render",
        cfg.hash(),
        cfg.seed,
        vec![cfg.paths.scene.clone(), cfg.paths.cameras.clone(), sidecar.clone()],
    );
    let inputs = load_inputs(cfg)?;
    let field = IdentityField::load(&sidecar)?;
    let cameras = select_cameras(&inputs.cameras, views)?;
    rec.lap("load");
    render_views(&inputs.scene, &field, &cameras, &cfg.render, &dir)?;
    for sub in ["color", "labels", "preview"] {
        rec.output(dir.join(sub));
    }
    rec.lap("render");
    rec.finish(&dir)
}

/// Label maps `<id>.png` in a directory, sorted by id.
pub fn load_label_dir(dir: &Path) -> Result<Vec<(u32, LabelMap)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u32>().ok()) {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    ids.into_iter()
        .map(|id| Ok((id, load_label_map(label_path(dir, id))?)))
        .collect()
}

/// An [`EvalReport`] plus the relative IoU drop against a baseline report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    #[serde(flatten)]
    pub report: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_mean_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_drop: Option<f64>,
}

/// Compares same-named label maps of `pred_dir` and `gt_dir`; writes
/// `report.json` and `report.txt` into `out`.
pub fn cmd_eval(
    pred_dir: &Path,
    gt_dir: &Path,
    opts: &EvalOptions,
    sparse_baseline: Option<&Path>,
    out: &Path,
) -> Result<(EvalSummary, RunRecord)> {
    let mut inputs = vec![pred_dir.to_path_buf(), gt_dir.to_path_buf()];
    inputs.extend(sparse_baseline.map(Path::to_path_buf));
    require(&inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let hash = hex::encode(Sha256::digest(serde_json::to_vec(opts)?));
    let mut rec = Recorder::new("eval", hash, 0, inputs);
    let pred = load_label_dir(pred_dir)?;
    let gt = load_label_dir(gt_dir)?;
    let pred_ids: Vec<u32> = pred.iter().map(|p| p.0).collect();
    let gt_ids: Vec<u32> = gt.iter().map(|g| g.0).collect();
    if pred_ids != gt_ids {
        return Err(Error::Data(format!(
            "prediction views {pred_ids:?} differ from ground-truth views {gt_ids:?}"
        )));
    }
    let pred: Vec<LabelMap> = pred.into_iter().map(|p| p.1).collect();
    let gt: Vec<LabelMap> = gt.into_iter().map(|g| g.1).collect();
    rec.lap("load");
    let mut report = evaluate(&pred, &gt)?;
    if opts.boundary {
        report.mean_boundary_iou = Some(mean_boundary_iou(&pred, &gt, &report, opts.band_frac)?);
    }
    let mut summary = EvalSummary {
        report,
        baseline_mean_iou: None,
        iou_drop: None,
    };
    if let Some(path) = sparse_baseline {
        let full: EvalSummary = read_json(path)?;
        summary.baseline_mean_iou = Some(full.report.mean_iou);
        summary.iou_drop = Some(iou_drop(full.report.mean_iou, summary.report.mean_iou)?);
    }
    rec.lap("evaluate");
    ensure_dir(out)?;
    write_json(&out.join("report.json"), &summary)?;
    let mut text = summary.report.table();
    if let Some(d) = summary.iou_drop {
        text.push_str(&format!("IoU drop vs baseline {:.2}%\n", 100.0 * d));
    }
    fs::write(out.join("report.txt"), text).map_err(|e| Error::io(out, e))?;
    rec.output(out.join("report.json"));
    rec.output(out.join("report.txt"));
    let record = rec.finish(out)?;
    Ok((summary, record))
}

/// Applies an edit script: writes the edited PLY and sidecar plus
/// re-renders of every camera.
pub fn cmd_edit(cfg: &RunConfig, script_path: &Path) -> Result<RunRecord> {
    cfg.validate()?;
    let sidecar = cfg.sidecar_path();
    require(&[&cfg.paths.scene, &cfg.paths.cameras, &sidecar, script_path])?;
    let dir = cfg.command_dir("edit");
    let mut rec = Recorder::new(
        "edit",
        cfg.hash(),
        cfg.seed,
        vec![cfg.paths.scene.clone(), sidecar.clone(), script_path.to_path_buf()],
    );
    let inputs = load_inputs(cfg)?;
    let field = IdentityField::load(&sidecar)?;
    let script = EditScript::load(script_path)?;
    rec.lap("load");
    let edited = apply(&inputs.scene, &field, &script)?;
    rec.lap("edit");

    ensure_dir(&dir)?;
    let name = |ext: &str| {
        let stem = sidecar.file_stem().map_or("scene".into(), |s| s.to_string_lossy().into_owned());
        dir.join(format!("{stem}.{ext}"))
    };
    save_gaussian_ply(&edited.scene, name("ply"))?;
    edited.field.save(name("ids"))?;
    write_json(&dir.join("remap.json"), &edited.remap)?;
    render_views(&edited.scene, &edited.field, &inputs.cameras, &cfg.render, &dir)?;
    for out in [name("ply"), name("ids"), dir.join("remap.json"), dir.join("color")] {
        rec.output(out);
    }
    rec.lap("write");
    rec.finish(&dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 5\n[association]\nfront_pct = 30.0\ngrid = { rows = 16, cols = 16 }\n",
        )
        .unwrap();
        assert_eq!(cfg.association.front_pct, 30.0);
        assert_eq!(cfg.association.grid, PatchGrid::square(16));
        assert_eq!(cfg.train.seed, 5);
        assert_eq!(cfg.paths, Paths::default());
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(matches!(
            RunConfig::from_toml("[association]\nfront = 3\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn every_violation_listed() {
        let mut cfg = RunConfig::default();
        cfg.association.front_pct = 0.0;
        cfg.association.overlap_threshold = 2.0;
        cfg.train.iterations = 0;
        let Err(Error::Config(list)) = cfg.validate() else {
            panic!("expected config error")
        };
        assert_eq!(list.len(), 3, "{list:?}");
        assert!(list.iter().any(|p| p.starts_with("association.front_pct")));
        assert!(list.iter().any(|p| p.starts_with("train.iterations")));
    }

    #[test]
    fn seed_reaches_every_stage() {
        let cfg = RunConfig {
            synthetic: Some(SyntheticSpec::default()),
            ..Default::default()
        }
        .with_seed(11);
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.synthetic.unwrap().seed, 11);
    }

    #[test]
    fn presets_cover_the_ablation_grid() {
        let names: Vec<String> = ablation_presets().into_iter().map(|p| p.0).collect();
        assert_eq!(names.len(), 12);
        assert_eq!(preset("grid_64").unwrap().grid, PatchGrid::square(64));
        assert_eq!(preset("threshold_0.01").unwrap().overlap_threshold, 0.01);
        assert_eq!(preset("front_pct_100").unwrap().front_pct, 100.0);
        assert!(preset("grid_8").is_none());
    }

    #[test]
    fn missing_inputs_listed() {
        let cfg = RunConfig {
            paths: Paths {
                scene: "/nonexistent/a.ply".into(),
                cameras: "/nonexistent/c.json".into(),
                masks: "/nonexistent/m".into(),
                out: "/tmp".into(),
            },
            ..Default::default()
        };
        let Err(Error::Config(list)) = cmd_associate(&cfg) else {
            panic!("expected config error")
        };
        assert_eq!(list.len(), 3);
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let mut cfg = RunConfig::default();
        cfg.resolve_paths(Path::new("/data/run"));
        assert_eq!(cfg.paths.scene, PathBuf::from("/data/run/scene.ply"));
        assert_eq!(cfg.sidecar_path(), PathBuf::from("/data/run/out/train/scene.ids"));
    }
}
