use std::collections::VecDeque;

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use super::deform::DeformableConv;
use super::fusion::ComplementaryFusion;
use super::offsets::{OffsetEstimator, RecurrentState};
use super::params::{Builder, ParamStore};
use super::transformer::{Encoder, MeshDecoder, MeshPrediction, TemporalAttention};
use crate::error::{Error, Result};
use crate::eval_metrics::Parameterized;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Side length of the square input crops.
    pub input_size: usize,
    pub token_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub temporal_window: usize,
    pub backbone_width: usize,
    pub backbone_blocks: [usize; 2],
    pub lstm_hidden: usize,
    pub ffn_ratio: usize,
    /// Millimetres per unit of the regression heads.
    pub coord_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 192,
            token_dim: 256,
            num_blocks: 3,
            num_heads: 8,
            temporal_window: 4,
            backbone_width: 64,
            backbone_blocks: [3, 4],
            lstm_hidden: 128,
            ffn_ratio: 4,
            coord_scale: 100.0,
        }
    }
}

impl NetworkConfig {
    /// Reduced widths for CPU experiments and tests.
    pub fn desk() -> Self {
        NetworkConfig {
            token_dim: 32,
            num_blocks: 2,
            num_heads: 4,
            temporal_window: 2,
            backbone_width: 8,
            backbone_blocks: [1, 1],
            lstm_hidden: 16,
            ffn_ratio: 2,
            ..Default::default()
        }
    }

    pub fn feature_grid(&self) -> usize {
        self.input_size / 8
    }

    pub fn fused_grid(&self) -> usize {
        self.feature_grid() / 3
    }

    pub fn num_tokens(&self) -> usize {
        self.fused_grid() * self.fused_grid()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(24) {
            return Err(Error::invalid(format!("input_size must be a positive multiple of 24, got {}", self.input_size)));
        }
        if self.num_heads == 0 || !self.token_dim.is_multiple_of(self.num_heads) {
            return Err(Error::invalid(format!(
                "token_dim {} must be divisible by num_heads {}",
                self.token_dim, self.num_heads
            )));
        }
        if self.num_blocks == 0 || self.backbone_width == 0 || self.lstm_hidden == 0 || self.ffn_ratio == 0 {
            return Err(Error::invalid("network widths and depths must be positive"));
        }
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return Err(Error::invalid("coord_scale must be positive"));
        }
        Ok(())
    }
}

/// One step of input: a `[B, 3, H, W]` image and a `[B, 2, H, W]` event frame.
#[derive(Debug, Clone)]
pub struct StepInput {
    pub image: Tensor,
    pub events: Tensor,
}

/// Per-stream mutable state: the recurrence, the latent history and a cache
/// of the most recent image features.
#[derive(Debug, Clone, Default)]
pub struct StreamState {
    recurrent: Option<RecurrentState>,
    history: VecDeque<Vec<Tensor>>,
    image_cache: Option<(candle_core::TensorId, Tensor)>,
}

impl StreamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn recurrent(&self) -> Option<&RecurrentState> {
        self.recurrent.as_ref()
    }
}

#[derive(Debug, Clone)]
pub struct FusionNet {
    config: NetworkConfig,
    params: ParamStore,
    image_backbone: Backbone,
    event_backbone: Backbone,
    offsets: OffsetEstimator,
    align: DeformableConv,
    fusion: ComplementaryFusion,
    encoder: Encoder,
    temporal: Vec<TemporalAttention>,
    decoder: MeshDecoder,
}

impl FusionNet {
    /// Builds a network with seeded initial weights; `upsample_init` seeds the
    /// learned 778 × 195 coarse-to-fine map.
    pub fn new(config: NetworkConfig, upsample_init: &Array2<f64>, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(dtype, device.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut params, &mut rng);
        let d = config.token_dim;
        let hidden = d * config.ffn_ratio;
        let image_backbone = Backbone::new(&mut b, "image_backbone", 3, config.backbone_width, config.backbone_blocks, d)?;
        let event_backbone = Backbone::new(&mut b, "event_backbone", 2, config.backbone_width, config.backbone_blocks, d)?;
        let offsets = OffsetEstimator::new(&mut b, "offsets", d, config.lstm_hidden)?;
        let align = DeformableConv::new(&mut b, "align", d)?;
        let fusion = ComplementaryFusion::new(&mut b, "fusion", d)?;
        let tokens = config.num_tokens();
        let encoder = Encoder::new(&mut b, "encoder", tokens, d, config.num_heads, hidden, config.num_blocks)?;
        let temporal = (0..config.num_blocks)
            .map(|l| TemporalAttention::new(&mut b, &format!("temporal{l}"), d, config.num_heads, config.temporal_window))
            .collect::<Result<Vec<_>>>()?;
        let decoder = MeshDecoder::new(
            &mut b,
            "decoder",
            tokens,
            d,
            config.num_heads,
            hidden,
            config.num_blocks,
            upsample_init,
            config.coord_scale,
        )?;
        Ok(FusionNet {
            config,
            params,
            image_backbone,
            event_backbone,
            offsets,
            align,
            fusion,
            encoder,
            temporal,
            decoder,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn image_backbone(&self) -> &Backbone {
        &self.image_backbone
    }

    pub fn event_backbone(&self) -> &Backbone {
        &self.event_backbone
    }

    pub fn offset_estimator(&self) -> &OffsetEstimator {
        &self.offsets
    }

    pub fn aligner(&self) -> &DeformableConv {
        &self.align
    }

    pub fn fusion(&self) -> &ComplementaryFusion {
        &self.fusion
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn temporal(&self) -> &[TemporalAttention] {
        &self.temporal
    }

    pub fn decoder(&self) -> &MeshDecoder {
        &self.decoder
    }

    fn check_input(&self, x: &Tensor, channels: usize) -> Result<Tensor> {
        let s = self.config.input_size;
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != channels || dims[2] != s || dims[3] != s {
            return Err(Error::shape(format!("expected [B, {channels}, {s}, {s}] input, got {dims:?}")));
        }
        Ok(x.to_dtype(self.dtype())?)
    }

    /// Image → fused latent token sets for one step (no temporal mixing).
    pub fn encode_step(&self, input: &StepInput, state: &mut StreamState) -> Result<Vec<Tensor>> {
        let f_im = match &state.image_cache {
            Some((id, f)) if *id == input.image.id() => f.clone(),
            _ => {
                let f = self.image_backbone.forward(&self.check_input(&input.image, 3)?)?;
                state.image_cache = Some((input.image.id(), f.clone()));
                f
            }
        };
        let f_ev = self.event_backbone.forward(&self.check_input(&input.events, 2)?)?;
        if f_im.dim(0)? != f_ev.dim(0)? {
            return Err(Error::shape("image and event batches differ"));
        }
        let recurrent = match state.recurrent.take() {
            Some(r) if r.hidden.dim(0)? == f_im.dim(0)? => r,
            _ => self.offsets.zero_state(&f_im)?,
        };
        let (offsets, recurrent) = self.offsets.forward(&f_im, &f_ev, &recurrent)?;
        state.recurrent = Some(recurrent);
        let aligned = self.align.forward(&f_ev, &offsets)?;
        let fused = self.fusion.forward(&aligned, &f_im)?;
        self.encoder.forward(&fused)
    }

    /// Advances the stream by one step and returns its mesh prediction.
    pub fn step(&self, input: &StepInput, state: &mut StreamState) -> Result<MeshPrediction> {
        let latent = self.encode_step(input, state)?;
        state.history.push_back(latent);
        while state.history.len() > self.config.temporal_window + 1 {
            state.history.pop_front();
        }
        let mixed = (0..self.config.num_blocks)
            .map(|l| {
                let hist: Vec<Tensor> = state.history.iter().map(|h| h[l].clone()).collect();
                self.temporal[l].forward(&hist)
            })
            .collect::<Result<Vec<_>>>()?;
        self.decoder.forward(&mixed)
    }

    /// Runs a sequence from a fresh state.
    pub fn forward_sequence(&self, steps: &[StepInput]) -> Result<(Vec<MeshPrediction>, StreamState)> {
        if steps.is_empty() {
            return Err(Error::invalid("sequence must contain at least one step"));
        }
        let mut state = StreamState::new();
        let out = steps.iter().map(|s| self.step(s, &mut state)).collect::<Result<Vec<_>>>()?;
        Ok((out, state))
    }
}

impl Parameterized for FusionNet {
    fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.params.iter().map(|(k, v)| (k.clone(), v.dims().to_vec())).collect()
    }
}
