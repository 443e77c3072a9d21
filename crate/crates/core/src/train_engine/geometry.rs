use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{warp_affine, Affine2, Image, Intrinsics};

/// Side length of network input crops.
pub const CROP_SIZE: usize = 192;
/// Crop side relative to the longer side of the joints' bounding rectangle.
pub const CROP_EXPANSION: f64 = 1.6;
/// Smallest crop side in source pixels.
pub const MIN_CROP_SIDE: f64 = 32.0;

/// A square crop resampled to `size × size`.
#[derive(Debug, Clone)]
pub struct Crop {
    pub image: Image,
    /// Source pixel → crop pixel.
    pub transform: Affine2,
    /// Intrinsics of the cropped view.
    pub intrinsics: Intrinsics,
}

pub fn project_joints(joints3d: ArrayView2<f64>, k: &Intrinsics) -> Vec<Option<[f64; 2]>> {
    joints3d.rows().into_iter().map(|r| k.project([r[0], r[1], r[2]])).collect()
}

/// Centre and side of the square box around the projected points.
pub fn crop_box(points: &[[f64; 2]]) -> Result<([f64; 2], f64)> {
    if points.is_empty() {
        return Err(Error::invalid("no projected joints to crop around"));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let center = [(x0 + x1) / 2.0, (y0 + y1) / 2.0];
    let mut side = CROP_EXPANSION * (x1 - x0).max(y1 - y0);
    if side < MIN_CROP_SIDE {
        log::warn!("degenerate joint box of side {side:.3} px, using {MIN_CROP_SIDE} px");
        side = MIN_CROP_SIDE;
    }
    Ok((center, side))
}

/// Maps the square box onto a `size × size` crop, box edges onto the outer
/// pixel edges.
pub fn crop_transform(center: [f64; 2], side: f64, size: usize) -> Affine2 {
    let k = size as f64 / side;
    let corner = [center[0] - side / 2.0, center[1] - side / 2.0];
    Affine2 {
        matrix: [[k, 0.0], [0.0, k]],
        offset: [-corner[0] * k - 0.5, -corner[1] * k - 0.5],
    }
}

/// Crops `frame` around the projection of `joints3d` (camera frame, mm).
pub fn crop_hand(frame: &Image, joints3d: ArrayView2<f64>, intrinsics: &Intrinsics) -> Result<Crop> {
    let (_, h, w) = frame.dim();
    let projected: Vec<[f64; 2]> = project_joints(joints3d, intrinsics).into_iter().flatten().collect();
    let inside = projected
        .iter()
        .any(|p| p[0] >= -0.5 && p[1] >= -0.5 && p[0] < w as f64 - 0.5 && p[1] < h as f64 - 0.5);
    if !inside {
        return Err(Error::data("no joint projects inside the frame"));
    }
    let (center, side) = crop_box(&projected)?;
    let transform = crop_transform(center, side, CROP_SIZE);
    Ok(Crop {
        image: warp_affine(frame, &transform, CROP_SIZE, CROP_SIZE),
        transform,
        intrinsics: intrinsics.transformed(&transform),
    })
}

/// Linear interpolation of a timestamped track; `t` must lie within it.
pub fn interpolate_track<T>(track: &[(u64, T)], t: u64, lerp: impl Fn(&T, &T, f64) -> T) -> Result<T>
where
    T: Clone,
{
    let (first, last) = match (track.first(), track.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(Error::invalid("empty track")),
    };
    if t < first || t > last {
        return Err(Error::invalid(format!("time {t} outside track span [{first}, {last}]")));
    }
    let i = track.partition_point(|(ti, _)| *ti <= t) - 1;
    if track[i].0 == t || i + 1 == track.len() {
        return Ok(track[i].1.clone());
    }
    let (t0, t1) = (track[i].0, track[i + 1].0);
    let alpha = (t - t0) as f64 / (t1 - t0) as f64;
    Ok(lerp(&track[i].1, &track[i + 1].1, alpha))
}

pub fn interpolate_joints(track: &[(u64, Array2<f64>)], t: u64) -> Result<Array2<f64>> {
    interpolate_track(track, t, |a, b, alpha| a * (1.0 - alpha) + b * alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub scale: f64,
    /// Radians, counter-clockwise in the image (x right, y down).
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            scale: 1.0,
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub max_rotation_deg: f64,
    pub max_translation_px: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_lo: 0.9,
            scale_hi: 1.1,
            max_rotation_deg: 30.0,
            max_translation_px: 8.0,
        }
    }
}

impl AugmentConfig {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        let r = self.max_rotation_deg.to_radians();
        let t = self.max_translation_px;
        AugmentParams {
            scale: rng.random_range(self.scale_lo..=self.scale_hi),
            rotation: rng.random_range(-r..=r),
            translation: [rng.random_range(-t..=t), rng.random_range(-t..=t)],
        }
    }
}

fn rotation_z(angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Rotates `N × 3` camera-frame points about the optical axis.
pub fn rotate_points_z(points: &Array2<f64>, angle: f64) -> Array2<f64> {
    let r = rotation_z(angle);
    let mut out = points.clone();
    for mut row in out.rows_mut() {
        let (x, y) = (row[0], row[1]);
        row[0] = r[0][0] * x + r[0][1] * y;
        row[1] = r[1][0] * x + r[1][1] * y;
    }
    out
}

/// Result of [`geometric_augment`].
#[derive(Debug, Clone)]
pub struct Augmented {
    pub images: Vec<Image>,
    pub transform: Affine2,
    pub intrinsics: Intrinsics,
    pub rotation: f64,
}

/// Applies one similarity about the crop centre to every view. 3-D labels
/// must be rotated with [`rotate_points_z`] by `rotation`; the returned
/// intrinsics then project them onto the transformed pixels.
pub fn geometric_augment(images: &[&Image], intrinsics: &Intrinsics, params: AugmentParams) -> Augmented {
    let (h, w) = images.first().map(|i| (i.dim().1, i.dim().2)).unwrap_or((CROP_SIZE, CROP_SIZE));
    let center = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
    let transform = Affine2::similarity(params.scale, params.rotation, params.translation, center);
    let identity = params == AugmentParams::identity();
    let images = images
        .iter()
        .map(|img| if identity { (*img).clone() } else { warp_affine(img, &transform, h, w) })
        .collect();
    let ak = intrinsics.transformed(&transform).0;
    let r = rotation_z(params.rotation);
    let mut k = [[0.0; 3]; 3];
    for (i, row) in k.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            // Right-multiplying by R^T undoes the 3-D rotation of the labels.
            *cell = (0..3).map(|m| ak[i][m] * r[j][m]).sum();
        }
    }
    Augmented {
        images,
        transform,
        intrinsics: Intrinsics(k),
        rotation: params.rotation,
    }
}
