use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Channel-first image `[C, H, W]` with values in `[0, 1]`.
pub type Image = Array3<f32>;

/// Pinhole camera matrix; pixel centres sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics(pub [[f64; 3]; 3]);

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Intrinsics([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let k = &self.0;
        let u = k[0][0] * p[0] + k[0][1] * p[1] + k[0][2] * p[2];
        let v = k[1][0] * p[0] + k[1][1] * p[1] + k[1][2] * p[2];
        let w = k[2][0] * p[0] + k[2][1] * p[1] + k[2][2] * p[2];
        if w <= 1e-9 {
            return None;
        }
        Some([u / w, v / w])
    }

    /// Intrinsics of the image obtained by applying `affine` to this camera's pixels.
    pub fn transformed(&self, affine: &Affine2) -> Intrinsics {
        let a = affine.matrix;
        let t = affine.offset;
        let m = [
            [a[0][0], a[0][1], t[0]],
            [a[1][0], a[1][1], t[1]],
            [0.0, 0.0, 1.0],
        ];
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| m[i][k] * self.0[k][j]).sum();
            }
        }
        Intrinsics(out)
    }
}

/// 2-D affine map `p -> matrix * p + offset` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2 {
    pub matrix: [[f64; 2]; 2],
    pub offset: [f64; 2],
}

impl Affine2 {
    pub fn identity() -> Self {
        Affine2 {
            matrix: [[1.0, 0.0], [0.0, 1.0]],
            offset: [0.0, 0.0],
        }
    }

    /// Similarity about `center`: scale and rotation, then translation.
    pub fn similarity(scale: f64, rotation: f64, translation: [f64; 2], center: [f64; 2]) -> Self {
        let (s, c) = rotation.sin_cos();
        let m = [[scale * c, -scale * s], [scale * s, scale * c]];
        let offset = [
            center[0] + translation[0] - (m[0][0] * center[0] + m[0][1] * center[1]),
            center[1] + translation[1] - (m[1][0] * center[0] + m[1][1] * center[1]),
        ];
        Affine2 { matrix: m, offset }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + self.offset[0],
            m[1][0] * p[0] + m[1][1] * p[1] + self.offset[1],
        ]
    }

    pub fn inverse(&self) -> Affine2 {
        let m = &self.matrix;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let inv = [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ];
        let offset = [
            -(inv[0][0] * self.offset[0] + inv[0][1] * self.offset[1]),
            -(inv[1][0] * self.offset[0] + inv[1][1] * self.offset[1]),
        ];
        Affine2 {
            matrix: inv,
            offset,
        }
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn after(&self, first: &Affine2) -> Affine2 {
        let a = &self.matrix;
        let b = &first.matrix;
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        let t = self.apply(first.offset);
        Affine2 { matrix: m, offset: t }
    }
}

/// Bilinear read; samples outside the image contribute zero.
pub(crate) fn sample_bilinear(img: ArrayView2<f32>, x: f64, y: f64) -> f32 {
    let (h, w) = img.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as i64;
    let y0 = y0 as i64;
    let mut acc = 0.0f64;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            let weight = wy * wx;
            if weight == 0.0 || yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                continue;
            }
            acc += weight * img[[yy as usize, xx as usize]] as f64;
        }
    }
    acc as f32
}

/// Resamples `img` into an `out_h × out_w` canvas where `dst_from_src` maps
/// source pixels to destination pixels.
pub fn warp_affine(img: &Image, dst_from_src: &Affine2, out_h: usize, out_w: usize) -> Image {
    let src_from_dst = dst_from_src.inverse();
    let channels = img.dim().0;
    let mut out = Image::zeros((channels, out_h, out_w));
    for r in 0..out_h {
        for c in 0..out_w {
            let [sx, sy] = src_from_dst.apply([c as f64, r as f64]);
            for ch in 0..channels {
                out[[ch, r, c]] = sample_bilinear(img.index_axis(Axis(0), ch), sx, sy);
            }
        }
    }
    out
}

/// Luma of an RGB image, or the single channel of a gray one.
pub fn to_gray(img: &Image) -> Array2<f32> {
    match img.dim().0 {
        1 => img.index_axis(Axis(0), 0).to_owned(),
        3 => {
            let r = img.index_axis(Axis(0), 0);
            let g = img.index_axis(Axis(0), 1);
            let b = img.index_axis(Axis(0), 2);
            let mut out = Array2::zeros(r.dim());
            ndarray::Zip::from(&mut out)
                .and(&r)
                .and(&g)
                .and(&b)
                .for_each(|o, &r, &g, &b| *o = 0.299 * r + 0.587 * g + 0.114 * b);
            out
        }
        n => panic!("to_gray: unsupported channel count {n}"),
    }
}
