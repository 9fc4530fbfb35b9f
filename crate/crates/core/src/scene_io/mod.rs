//! Scenes, cameras and label maps, plus their on-disk formats.
//!
//! * Gaussian scenes use the usual binary little-endian splat PLY layout
//!   (`x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity scale_0..2 rot_0..3`).
//!   Opacity is stored as a logit and scales as natural logs; both are
//!   activated on load and inverted on save.
//! * Cameras are a JSON array of pinhole cameras with a world-to-camera
//!   rotation and translation.
//! * Label maps are 16-bit grayscale PNGs named `<camera_id>.png`.

mod camera;
mod labels;
mod ply;
mod scene;

pub use camera::{load_cameras, parse_cameras, save_cameras, Camera};
pub use labels::{
    colorize, label_color, label_path, load_label_map, load_label_maps, save_colorized, save_label_map,
    save_label_maps, LabelMap,
};
pub use ply::{load_gaussian_ply, save_gaussian_ply, OPACITY_LOGIT_LIMIT};
pub use scene::{Gaussian, GaussianScene, SH_C0, SH_REST_LEN};
