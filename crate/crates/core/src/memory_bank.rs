//! Cross-view mask association through a bank of disjoint Gaussian groups.
//!
//! Views are visited in camera order. For every mask the corresponding
//! Gaussians are computed, compared against each stored group by the shared
//! fraction `#(G(m) ∩ G_i) / #G(m)`, and the mask either joins the best
//! group (when that fraction is strictly above the threshold) or founds a
//! new one. A Gaussian belongs to at most one group: when a mask joins or
//! founds a group, only its not-yet-owned Gaussians are added.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{corresponding_sets, project, CorrespondingSet, PatchGrid};
use crate::scene_io::{Camera, GaussianScene, LabelMap};

pub type GroupId = u32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBank {
    groups: BTreeMap<GroupId, Vec<u32>>,
    #[serde(skip)]
    owner: HashMap<u32, GroupId>,
    next_id: GroupId,
}

/// Outcome of one [`MemoryBank::assign`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub group: GroupId,
    /// Best overlap ratio found before the assignment.
    pub ratio: f64,
    pub created_new: bool,
}

impl MemoryBank {
    pub fn new() -> Self {
        MemoryBank {
            groups: BTreeMap::new(),
            owner: HashMap::new(),
            next_id: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn next_id(&self) -> GroupId {
        self.next_id
    }

    pub fn group(&self, id: GroupId) -> Option<&[u32]> {
        self.groups.get(&id).map(Vec::as_slice)
    }

    pub fn groups(&self) -> impl Iterator<Item = (GroupId, &[u32])> {
        self.groups.iter().map(|(&id, g)| (id, g.as_slice()))
    }

    /// Group owning a Gaussian, if any.
    pub fn owner_of(&self, gaussian: u32) -> Option<GroupId> {
        self.owner.get(&gaussian).copied()
    }

    pub fn owned_count(&self) -> usize {
        self.owner.len()
    }

    /// Group with the largest overlap ratio and that ratio. Ties go to the
    /// smaller id; `None` when the bank has no eligible group.
    pub fn best_overlap(&self, gm: &CorrespondingSet) -> Result<(Option<GroupId>, f64)> {
        self.best_overlap_excluding(gm, &BTreeSet::new())
    }

    /// Like [`best_overlap`](Self::best_overlap), ignoring groups in `excluded`.
    pub fn best_overlap_excluding(
        &self,
        gm: &CorrespondingSet,
        excluded: &BTreeSet<GroupId>,
    ) -> Result<(Option<GroupId>, f64)> {
        if gm.is_empty() {
            return Err(Error::EmptyCorrespondingSet);
        }
        let mut shared: BTreeMap<GroupId, usize> = BTreeMap::new();
        for &g in gm.indices() {
            if let Some(&id) = self.owner.get(&g) {
                *shared.entry(id).or_insert(0) += 1;
            }
        }
        let mut best: Option<(GroupId, usize)> = None;
        for &id in self.groups.keys() {
            if excluded.contains(&id) {
                continue;
            }
            let count = shared.get(&id).copied().unwrap_or(0);
            match best {
                Some((_, c)) if c >= count => {}
                _ => best = Some((id, count)),
            }
        }
        Ok(match best {
            Some((id, count)) => (Some(id), count as f64 / gm.len() as f64),
            None => (None, 0.0),
        })
    }

    /// Assigns a mask to an existing group when its best overlap exceeds
    /// `threshold`, otherwise founds a new group. Either way the group only
    /// receives the Gaussians of `gm` no other group owns yet.
    pub fn assign(&mut self, gm: &CorrespondingSet, threshold: f64) -> Result<Assignment> {
        self.assign_excluding(gm, threshold, &BTreeSet::new())
    }

    pub fn assign_excluding(
        &mut self,
        gm: &CorrespondingSet,
        threshold: f64,
        excluded: &BTreeSet<GroupId>,
    ) -> Result<Assignment> {
        let (best, ratio) = self.best_overlap_excluding(gm, excluded)?;
        let (group, created_new) = match best {
            Some(id) if ratio > threshold => (id, false),
            _ => {
                let id = self.next_id;
                self.next_id += 1;
                self.groups.insert(id, Vec::new());
                (id, true)
            }
        };
        let members = self.groups.get_mut(&group).expect("group exists");
        let before = members.len();
        for &g in gm.indices() {
            if let std::collections::hash_map::Entry::Vacant(e) = self.owner.entry(g) {
                e.insert(group);
                members.push(g);
            }
        }
        if members.len() != before {
            members.sort_unstable();
        }
        Ok(Assignment {
            group,
            ratio,
            created_new,
        })
    }

    /// Rebuilds the ownership index, e.g. after deserializing.
    pub fn rebuild_index(&mut self) {
        self.owner.clear();
        for (&id, members) in &self.groups {
            for &g in members {
                self.owner.insert(g, id);
            }
        }
    }

    /// Verifies disjointness, the ownership index and id allocation.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen: HashMap<u32, GroupId> = HashMap::new();
        for (&id, members) in &self.groups {
            if id == 0 || id >= self.next_id {
                return Err(Error::Invalid(format!("group id {id} out of range")));
            }
            if members.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Invalid(format!("group {id} is not sorted and unique")));
            }
            for &g in members {
                if let Some(other) = seen.insert(g, id) {
                    return Err(Error::Invalid(format!(
                        "gaussian {g} is in groups {other} and {id}"
                    )));
                }
            }
        }
        if seen != self.owner {
            return Err(Error::Invalid("ownership index differs from group union".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOrder {
    /// Larger masks first, ties by label.
    #[default]
    AreaDesc,
    LabelAsc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationMode {
    #[default]
    MemoryBank,
    /// Input labels pass through unchanged.
    NoAssociation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationConfig {
    pub front_pct: f64,
    pub grid: PatchGrid,
    pub overlap_threshold: f64,
    pub mask_order: MaskOrder,
    pub per_view_exclusive: bool,
    pub mode: AssociationMode,
    /// Gaussians closer than this are not projected.
    pub near: f64,
    /// Gaussians less opaque than this never represent a mask.
    pub opacity_floor: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            front_pct: 20.0,
            grid: PatchGrid::default(),
            overlap_threshold: 0.1,
            mask_order: MaskOrder::AreaDesc,
            per_view_exclusive: false,
            mode: AssociationMode::MemoryBank,
            near: 0.01,
            opacity_floor: 0.1,
        }
    }
}

impl AssociationConfig {
    /// Every violated field, or `Ok`.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.front_pct > 0.0 && self.front_pct <= 100.0) {
            problems.push(format!("front_pct {} outside (0, 100]", self.front_pct));
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            problems.push(format!(
                "overlap_threshold {} outside [0, 1]",
                self.overlap_threshold
            ));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 {
            problems.push("grid must have at least one row and column".into());
        }
        if !(self.near >= 0.0) {
            problems.push(format!("near {} must be non-negative", self.near));
        }
        if !(0.0..=1.0).contains(&self.opacity_floor) {
            problems.push(format!("opacity_floor {} outside [0, 1]", self.opacity_floor));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Audit record for one input mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub view: u32,
    pub label: u32,
    /// Assigned group; 0 when the mask had no corresponding Gaussians.
    pub group: GroupId,
    pub ratio: f64,
    pub created_new: bool,
    pub area: usize,
    pub n_gaussians: usize,
}

#[derive(Debug, Clone)]
pub struct AssociationResult {
    pub relabeled: Vec<LabelMap>,
    pub bank: MemoryBank,
    pub log: Vec<MaskRecord>,
}

impl AssociationResult {
    /// Largest label appearing in the output, which sizes the classifier.
    pub fn num_groups(&self) -> u32 {
        let from_maps = self
            .relabeled
            .iter()
            .flat_map(|m| m.labels.iter().copied())
            .max()
            .unwrap_or(0);
        from_maps.max(self.bank.next_id() - 1)
    }

    /// Writes the log as one JSON object per line.
    pub fn write_log(&self, mut w: impl Write) -> Result<()> {
        for rec in &self.log {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")
                .map_err(|e| Error::io("association log", e))?;
        }
        Ok(())
    }
}

fn ordered_masks(map: &LabelMap, order: MaskOrder) -> Vec<(u32, usize)> {
    let mut masks: Vec<(u32, usize)> = map.mask_areas().into_iter().collect();
    if order == MaskOrder::AreaDesc {
        masks.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    }
    masks
}

/// Assigns a universal group id to every mask of every view.
///
/// `cameras` and `label_maps` are paired by position; views are processed in
/// ascending camera id. Masks with no visible Gaussian become label 0.
pub fn associate(
    scene: &GaussianScene,
    cameras: &[Camera],
    label_maps: &[LabelMap],
    config: &AssociationConfig,
) -> Result<AssociationResult> {
    config.validate()?;
    if cameras.len() != label_maps.len() {
        return Err(Error::Dimension(format!(
            "{} cameras but {} label maps",
            cameras.len(),
            label_maps.len()
        )));
    }
    for (cam, map) in cameras.iter().zip(label_maps) {
        if cam.width != map.width || cam.height != map.height {
            return Err(Error::Dimension(format!(
                "camera {} is {}x{} but its label map is {}x{}",
                cam.id, cam.width, cam.height, map.width, map.height
            )));
        }
    }
    if scene.is_empty() {
        return Err(Error::Invalid("cannot associate masks over an empty scene".into()));
    }

    let mut order: Vec<usize> = (0..cameras.len()).collect();
    order.sort_by_key(|&i| cameras[i].id);

    if config.mode == AssociationMode::NoAssociation {
        let mut log = Vec::new();
        for &v in &order {
            for (label, area) in ordered_masks(&label_maps[v], config.mask_order) {
                log.push(MaskRecord {
                    view: cameras[v].id,
                    label,
                    group: label,
                    ratio: 0.0,
                    created_new: false,
                    area,
                    n_gaussians: 0,
                });
            }
        }
        return Ok(AssociationResult {
            relabeled: label_maps.to_vec(),
            bank: MemoryBank::new(),
            log,
        });
    }

    // Corresponding sets only depend on the view, so compute them up front.
    let per_view: Vec<BTreeMap<u32, CorrespondingSet>> = order
        .par_iter()
        .map(|&v| {
            let proj = project(scene, &cameras[v], config.near, config.opacity_floor);
            corresponding_sets(&label_maps[v], &proj, config.grid, config.front_pct)
        })
        .collect();

    let mut bank = MemoryBank::new();
    let mut log = Vec::new();
    let mut relabeled = label_maps.to_vec();
    for (&v, sets) in order.iter().zip(&per_view) {
        let view_id = cameras[v].id;
        let mut mapping: HashMap<u32, GroupId> = HashMap::new();
        let mut used = BTreeSet::new();
        for (label, area) in ordered_masks(&label_maps[v], config.mask_order) {
            let record = match sets.get(&label).filter(|s| !s.is_empty()) {
                None => {
                    log::debug!("view {view_id}: mask {label} has no visible gaussians");
                    MaskRecord {
                        view: view_id,
                        label,
                        group: 0,
                        ratio: 0.0,
                        created_new: false,
                        area,
                        n_gaussians: 0,
                    }
                }
                Some(gm) => {
                    let excluded = if config.per_view_exclusive {
                        used.clone()
                    } else {
                        BTreeSet::new()
                    };
                    let a = bank.assign_excluding(gm, config.overlap_threshold, &excluded)?;
                    used.insert(a.group);
                    MaskRecord {
                        view: view_id,
                        label,
                        group: a.group,
                        ratio: a.ratio,
                        created_new: a.created_new,
                        area,
                        n_gaussians: gm.len(),
                    }
                }
            };
            mapping.insert(label, record.group);
            log.push(record);
        }
        relabeled[v] = label_maps[v].relabel(|l| mapping[&l]);
    }
    Ok(AssociationResult {
        relabeled,
        bank,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[u32]) -> CorrespondingSet {
        CorrespondingSet::from_unsorted(v.to_vec())
    }

    #[test]
    fn overlap_half() {
        let mut bank = MemoryBank::new();
        bank.assign(&set(&[3, 4, 5]), 0.1).unwrap();
        assert_eq!(bank.best_overlap(&set(&[1, 2, 3, 4])).unwrap(), (Some(1), 0.5));
    }

    #[test]
    fn overlap_disjoint_reports_lowest_id() {
        let mut bank = MemoryBank::new();
        bank.assign(&set(&[1]), 0.1).unwrap();
        bank.assign(&set(&[2]), 0.1).unwrap();
        assert_eq!(bank.best_overlap(&set(&[9, 10])).unwrap(), (Some(1), 0.0));
    }

    #[test]
    fn overlap_subset_is_one() {
        let mut bank = MemoryBank::new();
        bank.assign(&set(&[1, 2]), 0.1).unwrap();
        bank.assign(&set(&[5, 6, 7, 8]), 0.1).unwrap();
        assert_eq!(bank.best_overlap(&set(&[6, 7])).unwrap(), (Some(2), 1.0));
    }

    #[test]
    fn overlap_empty_bank_and_empty_set() {
        let bank = MemoryBank::new();
        assert_eq!(bank.best_overlap(&set(&[1])).unwrap(), (None, 0.0));
        assert!(matches!(
            bank.best_overlap(&set(&[])),
            Err(Error::EmptyCorrespondingSet)
        ));
    }

    #[test]
    fn first_mask_creates_group_one() {
        let mut bank = MemoryBank::new();
        let a = bank.assign(&set(&[1, 2]), 0.1).unwrap();
        assert_eq!(a.group, 1);
        assert!(a.created_new);
        assert_eq!(bank.group(1).unwrap(), &[1, 2]);
    }

    #[test]
    fn merge_adds_only_unowned() {
        let mut bank = MemoryBank::new();
        bank.assign(&set(&[1, 2, 3, 4]), 0.1).unwrap();
        let a = bank.assign(&set(&[3, 4, 9]), 0.1).unwrap();
        assert_eq!(a.group, 1);
        assert!((a.ratio - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(bank.group(1).unwrap(), &[1, 2, 3, 4, 9]);
    }

    #[test]
    fn disjoint_forces_new_group() {
        let mut bank = MemoryBank::new();
        bank.assign(&set(&(1..=100).collect::<Vec<_>>()), 0.1).unwrap();
        let a = bank.assign(&set(&(200..210).collect::<Vec<_>>()), 0.1).unwrap();
        assert_eq!(a.group, 2);
        assert!(a.created_new);
        assert_eq!(bank.group(2).unwrap().len(), 10);
    }

    #[test]
    fn threshold_is_strict() {
        let mut bank = MemoryBank::new();
        bank.assign(&set(&[1]), 0.1).unwrap();
        // exactly 1/10 shared: not above 0.1
        let gm = set(&[1, 20, 21, 22, 23, 24, 25, 26, 27, 28]);
        let a = bank.assign(&gm, 0.1).unwrap();
        assert!(a.created_new);
        assert_eq!(bank.group(a.group).unwrap().len(), 9);
        bank.check_invariants().unwrap();
    }

    #[test]
    fn new_group_may_be_empty_when_everything_is_owned() {
        let mut bank = MemoryBank::new();
        for i in 0..20u32 {
            bank.assign(&set(&[i]), 0.1).unwrap();
        }
        let gm = set(&(0..20).collect::<Vec<_>>());
        let a = bank.assign(&gm, 0.1).unwrap();
        assert!(a.created_new);
        assert_eq!(bank.group(a.group).unwrap(), &[] as &[u32]);
        bank.check_invariants().unwrap();
    }

    #[test]
    fn exclusion_skips_used_groups() {
        let mut bank = MemoryBank::new();
        bank.assign(&set(&[1, 2, 3]), 0.1).unwrap();
        bank.assign(&set(&[4, 5, 6]), 0.1).unwrap();
        let excluded: BTreeSet<_> = [1].into_iter().collect();
        let (best, ratio) = bank.best_overlap_excluding(&set(&[1, 2, 4]), &excluded).unwrap();
        assert_eq!(best, Some(2));
        assert!((ratio - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let mut bank = MemoryBank::new();
        bank.assign(&set(&[1, 2, 3]), 0.1).unwrap();
        bank.assign(&set(&[7, 8]), 0.1).unwrap();
        let text = serde_json::to_string(&bank).unwrap();
        let mut back: MemoryBank = serde_json::from_str(&text).unwrap();
        back.rebuild_index();
        assert_eq!(back, bank);
        back.check_invariants().unwrap();
    }

    #[test]
    fn config_errors_list_every_field() {
        let cfg = AssociationConfig {
            front_pct: 0.0,
            overlap_threshold: 1.5,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::Config(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
