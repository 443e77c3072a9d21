use candle_core::{Tensor, D};

use super::layers::{sigmoid, Conv2d, Linear};
use super::params::Builder;
use crate::error::{Error, Result};

/// Attention-gated convex combination of aligned event features and image
/// features, followed by a stride-3 downsampling convolution.
///
/// The gate is the product of a channel attention (shared MLP over average
/// and max pooled descriptors) and a spatial attention (7×7 convolution over
/// channel-wise mean and max), both computed from the concatenated pair.
#[derive(Debug, Clone)]
pub struct ComplementaryFusion {
    mlp_in: Linear,
    mlp_out: Linear,
    spatial: Conv2d,
    down: Conv2d,
}

impl ComplementaryFusion {
    pub(crate) fn new(b: &mut Builder, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.sub(name);
        let reduced = (dim / 4).max(1);
        Ok(ComplementaryFusion {
            mlp_in: Linear::new(&mut s, "channel_in", 2 * dim, reduced)?,
            mlp_out: Linear::new(&mut s, "channel_out", reduced, dim)?,
            spatial: Conv2d::new(&mut s, "spatial", 2, 1, 7, 1, 3)?,
            down: Conv2d::new(&mut s, "down", dim, dim, 3, 3, 0)?,
        })
    }

    /// Gate `w ∈ (0, 1)`, shaped like either input.
    pub fn gate(&self, f_ev: &Tensor, f_im: &Tensor) -> Result<Tensor> {
        if f_ev.dims() != f_im.dims() {
            return Err(Error::shape(format!("fusion inputs differ: {:?} vs {:?}", f_ev.dims(), f_im.dims())));
        }
        let (b, _, h, w) = f_ev.dims4()?;
        let pair = Tensor::cat(&[f_ev, f_im], 1)?;
        let avg = pair.mean(D::Minus1)?.mean(D::Minus1)?;
        let max = pair.max(D::Minus1)?.max(D::Minus1)?;
        let mlp = |x: &Tensor| -> Result<Tensor> { self.mlp_out.forward(&self.mlp_in.forward(x)?.relu()?) };
        let channel = sigmoid(&(mlp(&avg)? + mlp(&max)?)?)?;
        let pooled = Tensor::cat(&[pair.mean_keepdim(1)?, pair.max_keepdim(1)?], 1)?;
        let spatial = sigmoid(&self.spatial.forward(&pooled)?)?;
        let c = channel.dim(1)?;
        Ok(channel.reshape((b, c, 1, 1))?.broadcast_mul(&spatial.reshape((b, 1, h, w))?)?)
    }

    /// `w ⊙ f_ev + (1 − w) ⊙ f_im`.
    pub fn blend(&self, f_ev: &Tensor, f_im: &Tensor, gate: &Tensor) -> Result<Tensor> {
        Ok(((gate * f_ev)? + ((1.0 - gate)? * f_im)?)?)
    }

    pub fn downsample(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        if h % 3 != 0 || w % 3 != 0 {
            return Err(Error::shape(format!("fusion grid {h}x{w} is not divisible by 3")));
        }
        self.down.forward(x)
    }

    pub fn forward(&self, f_ev: &Tensor, f_im: &Tensor) -> Result<Tensor> {
        let gate = self.gate(f_ev, f_im)?;
        self.downsample(&self.blend(f_ev, f_im, &gate)?)
    }
}
