use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::camera::Camera;
use crate::error::{Error, Result};

/// Per-pixel instance labels for one view, row-major. Label 0 means
/// "no mask"; every other value names one mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::Dimension(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, label: u32) {
        self.labels[y as usize * self.width as usize + x as usize] = label;
    }

    /// Pixel area of every nonzero label, keyed by label.
    pub fn mask_areas(&self) -> BTreeMap<u32, usize> {
        let mut areas = BTreeMap::new();
        for &l in &self.labels {
            if l != 0 {
                *areas.entry(l).or_insert(0) += 1;
            }
        }
        areas
    }

    /// Sorted nonzero labels present in the map.
    pub fn mask_labels(&self) -> Vec<u32> {
        self.mask_areas().into_keys().collect()
    }

    /// Binary mask of one label.
    pub fn mask(&self, label: u32) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Applies `f` to every nonzero label; 0 stays 0.
    pub fn relabel(&self, mut f: impl FnMut(u32) -> u32) -> LabelMap {
        LabelMap {
            width: self.width,
            height: self.height,
            labels: self
                .labels
                .iter()
                .map(|&l| if l == 0 { 0 } else { f(l) })
                .collect(),
        }
    }
}

/// Reads one label PNG. Gray 16-bit is the canonical format; gray 8-bit is
/// accepted as well.
pub fn load_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (width, height) = (img.width(), img.height());
    let labels = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: label maps must be single-channel, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    LabelMap::from_labels(width, height, labels)
}

pub fn label_path(dir: &Path, camera_id: u32) -> PathBuf {
    dir.join(format!("{camera_id}.png"))
}

/// Loads `<dir>/<camera_id>.png` for every camera, in camera order.
pub fn load_label_maps(dir: impl AsRef<Path>, cameras: &[Camera]) -> Result<Vec<LabelMap>> {
    let dir = dir.as_ref();
    cameras
        .iter()
        .map(|cam| {
            let path = label_path(dir, cam.id);
            if !path.exists() {
                return Err(Error::Data(format!(
                    "missing label map for camera {}: {}",
                    cam.id,
                    path.display()
                )));
            }
            let map = load_label_map(&path)?;
            if map.width != cam.width || map.height != cam.height {
                return Err(Error::Dimension(format!(
                    "label map {} is {}x{}, camera {} is {}x{}",
                    path.display(),
                    map.width,
                    map.height,
                    cam.id,
                    cam.width,
                    cam.height
                )));
            }
            Ok(map)
        })
        .collect()
}

pub fn save_label_map(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut raw = Vec::with_capacity(map.labels.len());
    for &l in &map.labels {
        let v = u16::try_from(l)
            .map_err(|_| Error::Data(format!("label {l} does not fit in a 16-bit PNG")))?;
        raw.push(v);
    }
    let buf: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(map.width, map.height, raw)
        .ok_or_else(|| Error::Dimension("label buffer size".into()))?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `<dir>/<camera_id>.png` for each `(camera_id, map)`.
pub fn save_label_maps<'a>(
    maps: impl IntoIterator<Item = (u32, &'a LabelMap)>,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    for (id, map) in maps {
        save_label_map(map, label_path(dir, id))?;
    }
    Ok(())
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic display color for a label. Label 0 is black; other labels
/// get channels in `[48, 255]` so they never read as background.
pub fn label_color(label: u32, palette_seed: u64) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    let h = splitmix64(splitmix64(palette_seed) ^ u64::from(label));
    let ch = |shift: u32| 48 + ((h >> shift) & 0xFF) as u8 % 208;
    [ch(0), ch(8), ch(16)]
}

pub fn colorize(map: &LabelMap, palette_seed: u64) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let mut raw = Vec::with_capacity(map.labels.len() * 3);
    for &l in &map.labels {
        raw.extend_from_slice(&label_color(l, palette_seed));
    }
    ImageBuffer::from_raw(map.width, map.height, raw).expect("buffer matches dimensions")
}

/// Writes 8-bit RGB previews, one per map, colored by [`label_color`].
pub fn save_colorized<'a>(
    maps: impl IntoIterator<Item = (u32, &'a LabelMap)>,
    dir: impl AsRef<Path>,
    palette_seed: u64,
) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    for (id, map) in maps {
        let path = label_path(dir, id);
        colorize(map, palette_seed)
            .save(&path)
            .map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(id: u32, w: u32, h: u32) -> Camera {
        Camera::look_at(id, w, h, 10.0, [0.0, -5.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0])
    }

    #[test]
    fn zero_map_has_no_masks() {
        assert!(LabelMap::new(4, 3).mask_labels().is_empty());
    }

    #[test]
    fn label_values_kept_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let map = LabelMap::from_labels(3, 2, vec![0, 1, 2, 2, 1, 0]).unwrap();
        save_label_maps([(5, &map)], dir.path()).unwrap();
        let back = load_label_maps(dir.path(), &[cam(5, 3, 2)]).unwrap();
        assert_eq!(back[0], map);
        assert_eq!(back[0].mask_labels(), vec![1, 2]);
    }

    #[test]
    fn missing_file_and_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_label_maps(dir.path(), &[cam(1, 3, 2)]).unwrap_err();
        assert!(err.to_string().contains("camera 1"));
        save_label_maps([(1, &LabelMap::new(3, 2))], dir.path()).unwrap();
        let err = load_label_maps(dir.path(), &[cam(1, 4, 2)]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn too_large_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let map = LabelMap::from_labels(1, 1, vec![70_000]).unwrap();
        assert!(save_label_map(&map, dir.path().join("x.png")).is_err());
    }

    #[test]
    fn colors_consistent_across_views() {
        let dir = tempfile::tempdir().unwrap();
        let a = LabelMap::from_labels(2, 1, vec![0, 9]).unwrap();
        let b = LabelMap::from_labels(2, 1, vec![9, 0]).unwrap();
        save_colorized([(0, &a), (1, &b)], dir.path(), 3).unwrap();
        let ia = image::open(dir.path().join("0.png")).unwrap().to_rgb8();
        let ib = image::open(dir.path().join("1.png")).unwrap().to_rgb8();
        assert_eq!(ia.get_pixel(1, 0), ib.get_pixel(0, 0));
        assert_eq!(ia.get_pixel(0, 0).0, [0, 0, 0]);
    }

    #[test]
    fn palette_seed_changes_colors_not_partition() {
        let map = LabelMap::from_labels(4, 1, vec![1, 2, 1, 3]).unwrap();
        let a = colorize(&map, 1);
        let b = colorize(&map, 2);
        assert_ne!(a.as_raw(), b.as_raw());
        for i in 0..4 {
            for j in 0..4 {
                let same_a = a.get_pixel(i, 0) == a.get_pixel(j, 0);
                let same_b = b.get_pixel(i, 0) == b.get_pixel(j, 0);
                let same_label = map.labels[i as usize] == map.labels[j as usize];
                assert_eq!(same_a, same_label);
                assert_eq!(same_b, same_label);
            }
        }
    }
}
