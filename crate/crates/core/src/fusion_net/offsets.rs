use candle_core::Tensor;

use super::layers::{sigmoid, Conv2d};
use super::params::{Builder, Init};
use crate::error::{Error, Result};

/// Number of deformable taps (a 3×3 kernel).
pub const DEFORM_TAPS: usize = 9;

/// Hidden and cell maps of the convolutional LSTM, `[B, C_h, G, G]` each.
#[derive(Debug, Clone)]
pub struct RecurrentState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

/// Convolutional LSTM over the concatenated image/event features, with a
/// zero-initialised head projecting the hidden map to per-tap offsets.
#[derive(Debug, Clone)]
pub struct OffsetEstimator {
    hidden: usize,
    gates: Conv2d,
    head: Conv2d,
}

impl OffsetEstimator {
    pub(crate) fn new(b: &mut Builder, name: &str, feature_dim: usize, hidden: usize) -> Result<Self> {
        let mut s = b.sub(name);
        let c_in = 2 * feature_dim + hidden;
        let std = (1.0 / (c_in * 9) as f64).sqrt();
        // Gate order is input, forget, output, candidate; forget starts open.
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let gates = Conv2d::with_init(&mut s, "gates", [c_in, 4 * hidden, 3], 1, 1, Init::Normal(std), Init::Values(bias))?;
        let head = Conv2d::with_init(&mut s, "offset_head", [hidden, 2 * DEFORM_TAPS, 3], 1, 1, Init::Zeros, Init::Zeros)?;
        Ok(OffsetEstimator { hidden, gates, head })
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden
    }

    pub fn zero_state(&self, like: &Tensor) -> Result<RecurrentState> {
        let (b, _, h, w) = like.dims4()?;
        let z = Tensor::zeros((b, self.hidden, h, w), like.dtype(), like.device())?;
        Ok(RecurrentState { hidden: z.clone(), cell: z })
    }

    /// Advances the recurrence one step and returns `[B, 2·K, G, G]` offsets,
    /// `(dy, dx)` per tap in row-major tap order.
    pub fn forward(&self, f_im: &Tensor, f_ev: &Tensor, state: &RecurrentState) -> Result<(Tensor, RecurrentState)> {
        if f_im.dims() != f_ev.dims() {
            return Err(Error::shape(format!("image {:?} and event {:?} features differ", f_im.dims(), f_ev.dims())));
        }
        let (b, _, h, w) = f_im.dims4()?;
        if state.hidden.dims() != [b, self.hidden, h, w] || state.cell.dims() != state.hidden.dims() {
            return Err(Error::shape(format!(
                "recurrent state {:?} does not fit features {:?}",
                state.hidden.dims(),
                f_im.dims()
            )));
        }
        let x = Tensor::cat(&[f_im, f_ev, &state.hidden], 1)?;
        let g = self.gates.forward(&x)?;
        let n = self.hidden;
        let i = sigmoid(&g.narrow(1, 0, n)?)?;
        let f = sigmoid(&g.narrow(1, n, n)?)?;
        let o = sigmoid(&g.narrow(1, 2 * n, n)?)?;
        let c_hat = g.narrow(1, 3 * n, n)?.tanh()?;
        let cell = ((f * &state.cell)? + (i * c_hat)?)?;
        let hidden = (o * cell.tanh()?)?;
        let offsets = self.head.forward(&hidden)?;
        Ok((offsets, RecurrentState { hidden, cell }))
    }
}
