//! Group-level edits: recolor, remove or translate every Gaussian the
//! identity field assigns to a group.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::{classify_gaussians, IdentityField};
use crate::memory_bank::GroupId;
use crate::scene_io::{GaussianScene, SH_C0, SH_REST_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Edit {
    Recolor { group_id: GroupId, color: [f64; 3] },
    Remove { group_id: GroupId },
    Translate { group_id: GroupId, offset: [f64; 3] },
}

impl Edit {
    pub fn group_id(&self) -> GroupId {
        match *self {
            Edit::Recolor { group_id, .. } | Edit::Remove { group_id } | Edit::Translate { group_id, .. } => {
                group_id
            }
        }
    }
}

/// Ordered edits, stored as `{"edits": [{"op": "recolor", ...}, ...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditScript {
    pub edits: Vec<Edit>,
}

impl EditScript {
    pub fn from_json(text: &str) -> Result<EditScript> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EditScript> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rejects ids outside `1..=num_groups` and colors outside `[0, 1]`.
    pub fn validate(&self, num_groups: u32) -> Result<()> {
        let mut problems = Vec::new();
        for (i, edit) in self.edits.iter().enumerate() {
            let g = edit.group_id();
            if g == 0 || g > num_groups {
                problems.push(format!("edits[{i}].group_id {g} not in 1..={num_groups}"));
            }
            match edit {
                Edit::Recolor { color, .. } if color.iter().any(|c| !(0.0..=1.0).contains(c)) => {
                    problems.push(format!("edits[{i}].color {color:?} outside [0, 1]"));
                }
                Edit::Translate { offset, .. } if offset.iter().any(|o| !o.is_finite()) => {
                    problems.push(format!("edits[{i}].offset is not finite"));
                }
                _ => {}
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Indices of the Gaussians classified as `group_id`, ascending.
pub fn select_group(field: &IdentityField, group_id: GroupId) -> Vec<usize> {
    let selected: Vec<usize> = classify_gaussians(field)
        .into_iter()
        .enumerate()
        .filter(|&(_, g)| g == group_id)
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        log::warn!("group {group_id} has no gaussians");
    }
    selected
}

#[derive(Debug, Clone)]
pub struct Edited {
    pub scene: GaussianScene,
    pub field: IdentityField,
    /// New index of every original Gaussian, `None` once removed.
    pub remap: Vec<Option<usize>>,
}

/// Applies `script` in order. Selections are recomputed before every edit
/// on the current (possibly compacted) field.
pub fn apply(scene: &GaussianScene, field: &IdentityField, script: &EditScript) -> Result<Edited> {
    if scene.len() != field.len() {
        return Err(Error::Dimension(format!(
            "{} gaussians but {} identity encodings",
            scene.len(),
            field.len()
        )));
    }
    script.validate(field.num_groups())?;
    let mut out = Edited {
        scene: scene.clone(),
        field: field.clone(),
        remap: (0..scene.len()).map(Some).collect(),
    };
    for edit in &script.edits {
        let selected = select_group(&out.field, edit.group_id());
        match *edit {
            Edit::Recolor { color, .. } => {
                let dc = color.map(|c| (c - 0.5) / SH_C0);
                for &i in &selected {
                    out.scene.sh_dc[i] = dc;
                    out.scene.sh_rest[i] = [0.0; SH_REST_LEN];
                }
            }
            Edit::Translate { offset, .. } => {
                for &i in &selected {
                    let p = &mut out.scene.positions[i];
                    for a in 0..3 {
                        p[a] += offset[a];
                    }
                }
            }
            Edit::Remove { .. } => {
                let mut drop = vec![false; out.scene.len()];
                for &i in &selected {
                    drop[i] = true;
                }
                out.scene = out.scene.retain_indices(|i| !drop[i]);
                out.field = out.field.retain_indices(|i| !drop[i]);
                let mut new_index = Vec::with_capacity(drop.len());
                let mut next = 0;
                for d in drop {
                    new_index.push((!d).then(|| {
                        next += 1;
                        next - 1
                    }));
                }
                for r in out.remap.iter_mut() {
                    *r = r.and_then(|i| new_index[i]);
                }
                if out.scene.is_empty() {
                    log::warn!("edit removed every gaussian");
                }
            }
        }
    }
    Ok(out)
}
