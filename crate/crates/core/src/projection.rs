//! Projecting Gaussian centers into a view and finding the Gaussians that
//! stand for a 2D mask.
//!
//! A mask's corresponding set is built per patch: the image is split into a
//! [`PatchGrid`], and inside every cell the visible Gaussians whose rounded
//! center pixel carries the mask label are sorted by depth. Only the nearest
//! `front_pct` percent of each cell is kept (at least one per non-empty
//! cell), which drops geometry seen through the mask from behind while still
//! sampling the whole mask shape.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::scene_io::{Camera, GaussianScene, LabelMap};

/// Pinhole projection of every Gaussian center in one view.
#[derive(Debug, Clone)]
pub struct ProjectedGaussians {
    pub width: u32,
    pub height: u32,
    /// Continuous pixel coordinates; may be out of bounds.
    pub pixel_xy: Vec<[f64; 2]>,
    /// Camera-space z.
    pub depth: Vec<f64>,
    /// In bounds, beyond the near plane and at least `opacity_floor` opaque.
    pub visible: Vec<bool>,
}

impl ProjectedGaussians {
    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    /// Rounded pixel of a visible Gaussian.
    #[inline]
    pub fn pixel(&self, index: usize) -> Option<(u32, u32)> {
        if !self.visible[index] {
            return None;
        }
        let [x, y] = self.pixel_xy[index];
        Some((x.round() as u32, y.round() as u32))
    }
}

/// Projects every center. A Gaussian is visible when its depth exceeds
/// `near`, its opacity is at least `opacity_floor`, and its pixel lies in
/// `[0, width-1] × [0, height-1]` so that the rounded pixel is in range.
pub fn project(
    scene: &GaussianScene,
    camera: &Camera,
    near: f64,
    opacity_floor: f64,
) -> ProjectedGaussians {
    let n = scene.len();
    let mut pixel_xy = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    let mut visible = Vec::with_capacity(n);
    let (w, h) = (camera.width as f64, camera.height as f64);
    for i in 0..n {
        let [x, y, z] = camera.to_camera(scene.positions[i]);
        let (u, v) = if z > 0.0 {
            (camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy)
        } else {
            (f64::NAN, f64::NAN)
        };
        let in_bounds = u >= 0.0 && u <= w - 1.0 && v >= 0.0 && v <= h - 1.0;
        pixel_xy.push([u, v]);
        depth.push(z);
        visible.push(z > near && in_bounds && scene.opacities[i] >= opacity_floor);
    }
    ProjectedGaussians {
        width: camera.width,
        height: camera.height,
        pixel_xy,
        depth,
        visible,
    }
}

/// Rectangular tiling of the image. Cell sizes are the ceiling division of
/// the image size by the grid size, so the last row and column hold the
/// remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: u32,
    pub cols: u32,
}

impl Default for PatchGrid {
    fn default() -> Self {
        PatchGrid { rows: 32, cols: 32 }
    }
}

impl PatchGrid {
    pub fn new(rows: u32, cols: u32) -> Self {
        assert!(rows > 0 && cols > 0, "patch grid needs at least one cell");
        PatchGrid { rows, cols }
    }

    pub fn square(n: u32) -> Self {
        Self::new(n, n)
    }

    /// Pixel size of a cell, `(cell_width, cell_height)`.
    pub fn cell_size(&self, width: u32, height: u32) -> (u32, u32) {
        (width.div_ceil(self.cols).max(1), height.div_ceil(self.rows).max(1))
    }

    /// Row-major cell index of a pixel.
    #[inline]
    pub fn cell_of(&self, x: u32, y: u32, cell_size: (u32, u32)) -> usize {
        let c = (x / cell_size.0).min(self.cols - 1);
        let r = (y / cell_size.1).min(self.rows - 1);
        (r * self.cols + c) as usize
    }

    /// Pixel bounds `[x0, x1) × [y0, y1)` of a cell; empty when the grid has
    /// more cells than the image has pixels along an axis.
    pub fn cell_bounds(&self, cell: usize, width: u32, height: u32) -> ([u32; 2], [u32; 2]) {
        let (cw, ch) = self.cell_size(width, height);
        let r = cell as u32 / self.cols;
        let c = cell as u32 % self.cols;
        let x0 = (c * cw).min(width);
        let y0 = (r * ch).min(height);
        let x1 = if c == self.cols - 1 { width } else { ((c + 1) * cw).min(width) };
        let y1 = if r == self.rows - 1 { height } else { ((r + 1) * ch).min(height) };
        ([x0, x1], [y0, y1])
    }
}

/// Sorted, duplicate-free Gaussian indices standing for one mask.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondingSet {
    indices: Vec<u32>,
}

impl CorrespondingSet {
    pub fn from_unsorted(mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        CorrespondingSet { indices }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: u32) -> bool {
        self.indices.binary_search(&index).is_ok()
    }
}

impl FromIterator<u32> for CorrespondingSet {
    fn from_iter<T: IntoIterator<Item = u32>>(iter: T) -> Self {
        Self::from_unsorted(iter.into_iter().collect())
    }
}

/// Number of Gaussians kept from a cell holding `n` candidates.
#[inline]
pub fn front_count(n: usize, front_pct: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let keep = (front_pct * n as f64 / 100.0).ceil() as usize;
    keep.clamp(1, n)
}

fn select_front(mut cell: Vec<(f64, u32)>, front_pct: f64, out: &mut Vec<u32>) {
    cell.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let keep = front_count(cell.len(), front_pct);
    out.extend(cell[..keep].iter().map(|&(_, i)| i));
}

/// Corresponding Gaussians of the mask with label `mask_label`. An empty
/// result means the mask has no visible Gaussian (or does not exist); the
/// caller decides what that means.
pub fn corresponding_gaussians(
    mask_label: u32,
    label_map: &LabelMap,
    proj: &ProjectedGaussians,
    grid: PatchGrid,
    front_pct: f64,
) -> CorrespondingSet {
    if mask_label == 0 {
        return CorrespondingSet::default();
    }
    let cell_size = grid.cell_size(label_map.width, label_map.height);
    let mut cells: BTreeMap<usize, Vec<(f64, u32)>> = BTreeMap::new();
    for i in 0..proj.len() {
        if let Some((x, y)) = proj.pixel(i) {
            if label_map.get(x, y) == mask_label {
                cells
                    .entry(grid.cell_of(x, y, cell_size))
                    .or_default()
                    .push((proj.depth[i], i as u32));
            }
        }
    }
    let mut out = Vec::new();
    for (_, cell) in cells {
        select_front(cell, front_pct, &mut out);
    }
    CorrespondingSet::from_unsorted(out)
}

/// Corresponding sets of every mask in a view, computed in one pass.
/// Masks without any visible Gaussian are absent from the result.
pub fn corresponding_sets(
    label_map: &LabelMap,
    proj: &ProjectedGaussians,
    grid: PatchGrid,
    front_pct: f64,
) -> BTreeMap<u32, CorrespondingSet> {
    let cell_size = grid.cell_size(label_map.width, label_map.height);
    let mut buckets: HashMap<(u32, usize), Vec<(f64, u32)>> = HashMap::new();
    for i in 0..proj.len() {
        if let Some((x, y)) = proj.pixel(i) {
            let label = label_map.get(x, y);
            if label != 0 {
                buckets
                    .entry((label, grid.cell_of(x, y, cell_size)))
                    .or_default()
                    .push((proj.depth[i], i as u32));
            }
        }
    }
    let mut per_label: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for ((label, _), cell) in buckets {
        select_front(cell, front_pct, per_label.entry(label).or_default());
    }
    per_label
        .into_iter()
        .map(|(label, v)| (label, CorrespondingSet::from_unsorted(v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::Gaussian;

    fn axis_camera() -> Camera {
        Camera {
            id: 0,
            width: 100,
            height: 100,
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }

    fn scene_of(points: &[[f64; 3]]) -> GaussianScene {
        let mut s = GaussianScene::new();
        for &p in points {
            s.push(Gaussian::isotropic(p, 0.01, 0.9, [0.5; 3]));
        }
        s
    }

    #[test]
    fn on_axis_gaussian_projects_to_principal_point() {
        let p = project(&scene_of(&[[0.0, 0.0, 2.0]]), &axis_camera(), 0.01, 0.1);
        assert_eq!(p.pixel_xy[0], [50.0, 50.0]);
        assert_eq!(p.depth[0], 2.0);
        assert!(p.visible[0]);
    }

    #[test]
    fn behind_camera_and_transparent_are_invisible() {
        let mut s = scene_of(&[[0.0, 0.0, -1.0], [0.0, 0.0, 3.0]]);
        s.opacities[1] = 0.05;
        let p = project(&s, &axis_camera(), 0.01, 0.1);
        assert!(!p.visible[0]);
        assert!(!p.visible[1]);
        let p = project(&s, &axis_camera(), 0.01, 0.0);
        assert!(p.visible[1]);
    }

    #[test]
    fn front_twenty_percent_of_ten() {
        // ten Gaussians straight ahead at depths 1..=10, stored shuffled
        let depths = [5.0, 3.0, 9.0, 1.0, 7.0, 2.0, 10.0, 4.0, 8.0, 6.0];
        let pts: Vec<_> = depths.iter().map(|&d| [0.0, 0.0, d]).collect();
        let s = scene_of(&pts);
        let p = project(&s, &axis_camera(), 0.01, 0.0);
        let mut map = LabelMap::new(100, 100);
        map.set(50, 50, 4);
        let set = corresponding_gaussians(4, &map, &p, PatchGrid::square(1), 20.0);
        // depths 1 and 2 sit at indices 3 and 5
        assert_eq!(set.indices(), &[3, 5]);
        let all = corresponding_gaussians(4, &map, &p, PatchGrid::square(1), 100.0);
        assert_eq!(all.len(), 10);
        assert!(corresponding_gaussians(9, &map, &p, PatchGrid::square(1), 20.0).is_empty());
    }

    #[test]
    fn depth_ties_break_by_index() {
        let s = scene_of(&[[0.0, 0.0, 2.0], [0.0, 0.0, 2.0], [0.0, 0.0, 2.0]]);
        let p = project(&s, &axis_camera(), 0.01, 0.0);
        let mut map = LabelMap::new(100, 100);
        map.set(50, 50, 1);
        let set = corresponding_gaussians(1, &map, &p, PatchGrid::square(1), 34.0);
        assert_eq!(set.indices(), &[0, 1]);
    }

    #[test]
    fn ceil_keeps_one_per_nonempty_cell() {
        assert_eq!(front_count(1, 20.0), 1);
        assert_eq!(front_count(10, 20.0), 2);
        assert_eq!(front_count(11, 20.0), 3);
        assert_eq!(front_count(0, 20.0), 0);
        assert_eq!(front_count(7, 100.0), 7);
    }

    #[test]
    fn grid_cells_tile_the_image() {
        for &(w, h, rows, cols) in &[(100, 100, 32, 32), (7, 5, 2, 3), (3, 3, 8, 8), (128, 96, 1, 1)] {
            let grid = PatchGrid::new(rows, cols);
            let mut covered = vec![0u32; (w * h) as usize];
            for cell in 0..(rows * cols) as usize {
                let ([x0, x1], [y0, y1]) = grid.cell_bounds(cell, w, h);
                for y in y0..y1 {
                    for x in x0..x1 {
                        covered[(y * w + x) as usize] += 1;
                        assert_eq!(grid.cell_of(x, y, grid.cell_size(w, h)), cell);
                    }
                }
            }
            assert!(covered.iter().all(|&c| c == 1), "{w}x{h} {rows}x{cols}");
        }
    }

    #[test]
    fn one_pass_matches_per_mask() {
        let mut pts = Vec::new();
        for i in 0..200 {
            let t = i as f64;
            pts.push([(t * 0.37).sin() * 0.4, (t * 0.91).cos() * 0.4, 1.0 + (t * 0.13) % 3.0]);
        }
        let s = scene_of(&pts);
        let p = project(&s, &axis_camera(), 0.01, 0.0);
        let mut map = LabelMap::new(100, 100);
        for y in 0..100 {
            for x in 0..100 {
                map.set(x, y, 1 + (x / 40) + 3 * (y / 40));
            }
        }
        let grid = PatchGrid::new(5, 4);
        let all = corresponding_sets(&map, &p, grid, 30.0);
        for label in map.mask_labels() {
            let single = corresponding_gaussians(label, &map, &p, grid, 30.0);
            assert_eq!(all.get(&label).cloned().unwrap_or_default(), single);
        }
    }
}
