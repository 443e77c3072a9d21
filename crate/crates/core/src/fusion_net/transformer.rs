use candle_core::Tensor;

use super::layers::{Attention, FeedForward, LayerNorm, Linear};
use super::params::{Builder, Init};
use crate::error::{Error, Result};
use crate::hand_model::{NUM_COARSE_VERTICES, NUM_JOINTS};

#[derive(Debug, Clone)]
struct EncoderBlock {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    ffn: FeedForward,
}

impl EncoderBlock {
    fn new(b: &mut Builder, name: &str, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(EncoderBlock {
            norm1: LayerNorm::new(&mut s, "norm1", dim)?,
            attn: Attention::new(&mut s, "attn", dim, heads)?,
            norm2: LayerNorm::new(&mut s, "norm2", dim)?,
            ffn: FeedForward::new(&mut s, "ffn", dim, hidden)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, None)?)?;
        Ok((&x + self.ffn.forward(&self.norm2.forward(&x)?)?)?)
    }
}

/// Pre-norm self-attention stack over the flattened fused grid.
#[derive(Debug, Clone)]
pub struct Encoder {
    pos: Tensor,
    blocks: Vec<EncoderBlock>,
}

impl Encoder {
    pub(crate) fn new(b: &mut Builder, name: &str, tokens: usize, dim: usize, heads: usize, hidden: usize, depth: usize) -> Result<Self> {
        let mut s = b.sub(name);
        let pos = s.param("pos", &[tokens, dim], Init::Normal(0.02))?;
        let blocks = (0..depth)
            .map(|i| EncoderBlock::new(&mut s, &format!("block{i}"), dim, heads, hidden))
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder { pos, blocks })
    }

    /// `[B, D, G, G]` → `[B, G·G, D]` in row-major grid order.
    pub fn tokens(fused: &Tensor) -> Result<Tensor> {
        let (b, d, h, w) = fused.dims4()?;
        Ok(fused.reshape((b, d, h * w))?.transpose(1, 2)?.contiguous()?)
    }

    /// Runs every block and returns each block's output, `[B, N, D]`.
    pub fn forward_tokens(&self, tokens: &Tensor, use_pos: bool) -> Result<Vec<Tensor>> {
        let (_, n, d) = tokens.dims3()?;
        if [n, d] != self.pos.dims() {
            return Err(Error::shape(format!("encoder expects {:?} tokens, got {:?}", self.pos.dims(), tokens.dims())));
        }
        let mut x = if use_pos { tokens.broadcast_add(&self.pos)? } else { tokens.clone() };
        let mut out = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = block.forward(&x)?;
            out.push(x.clone());
        }
        Ok(out)
    }

    pub fn forward(&self, fused: &Tensor) -> Result<Vec<Tensor>> {
        self.forward_tokens(&Self::tokens(fused)?, true)
    }
}

/// Per-token causal attention of the current step over the last `S + 1`
/// steps, with a learned bias per head and lag.
#[derive(Debug, Clone)]
pub struct TemporalAttention {
    norm: LayerNorm,
    attn: Attention,
    lag_bias: Tensor,
    heads: usize,
    window: usize,
}

impl TemporalAttention {
    pub(crate) fn new(b: &mut Builder, name: &str, dim: usize, heads: usize, window: usize) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(TemporalAttention {
            norm: LayerNorm::new(&mut s, "norm", dim)?,
            attn: Attention::new(&mut s, "attn", dim, heads)?,
            lag_bias: s.param("lag_bias", &[heads, window + 1], Init::Zeros)?,
            heads,
            window,
        })
    }

    /// Bias table `[heads, S + 1]`; column `S + s` holds lag `s ∈ [−S, 0]`.
    pub fn lag_bias(&self) -> &Tensor {
        &self.lag_bias
    }

    /// `history` is oldest first and ends with the current step; every entry
    /// is `[B, N, D]`.
    pub fn forward(&self, history: &[Tensor]) -> Result<Tensor> {
        self.forward_with_bias(history, &self.lag_bias)
    }

    pub fn forward_with_bias(&self, history: &[Tensor], lag_bias: &Tensor) -> Result<Tensor> {
        let t = history.len();
        if t == 0 || t > self.window + 1 {
            return Err(Error::invalid(format!(
                "temporal history must hold 1..={} steps, got {t}",
                self.window + 1
            )));
        }
        let current = &history[t - 1];
        let (b, n, d) = current.dims3()?;
        let stacked = Tensor::stack(history, 2)?.reshape((b * n, t, d))?;
        let kv = self.norm.forward(&stacked)?;
        let q = self.norm.forward(&current.reshape((b * n, 1, d))?)?;
        let bias = lag_bias.narrow(1, self.window + 1 - t, t)?.reshape((1, self.heads, 1, t))?;
        let out = self.attn.forward(&q, &kv, Some(&bias))?.reshape((b, n, d))?;
        Ok((current + out)?)
    }
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    norm1: LayerNorm,
    self_attn: Attention,
    norm2: LayerNorm,
    cross_attn: Attention,
    norm3: LayerNorm,
    ffn: FeedForward,
}

impl DecoderBlock {
    fn new(b: &mut Builder, name: &str, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(DecoderBlock {
            norm1: LayerNorm::new(&mut s, "norm1", dim)?,
            self_attn: Attention::new(&mut s, "self_attn", dim, heads)?,
            norm2: LayerNorm::new(&mut s, "norm2", dim)?,
            cross_attn: Attention::new(&mut s, "cross_attn", dim, heads)?,
            norm3: LayerNorm::new(&mut s, "norm3", dim)?,
            ffn: FeedForward::new(&mut s, "ffn", dim, hidden)?,
        })
    }

    fn forward(&self, q: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(q)?;
        let q = (q + self.self_attn.forward(&h, &h, None)?)?;
        let q = (&q + self.cross_attn.forward(&self.norm2.forward(&q)?, memory, None)?)?;
        Ok((&q + self.ffn.forward(&self.norm3.forward(&q)?)?)?)
    }
}

/// Mesh prediction for one step, batched: joints `[B, 21, 3]`, coarse
/// vertices `[B, 195, 3]`, fine vertices `[B, 778, 3]`, in millimetres.
#[derive(Debug, Clone)]
pub struct MeshPrediction {
    pub joints: Tensor,
    pub coarse: Tensor,
    pub fine: Tensor,
}

/// Learned joint and coarse-vertex query tokens decoded against the latent
/// token sets, block `l` attending to latent set `l`.
#[derive(Debug, Clone)]
pub struct MeshDecoder {
    queries: Tensor,
    memory_pos: Tensor,
    blocks: Vec<DecoderBlock>,
    norm: LayerNorm,
    joint_head: Linear,
    vertex_head: Linear,
    upsample: Tensor,
    coord_scale: f64,
}

impl MeshDecoder {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        b: &mut Builder,
        name: &str,
        memory_tokens: usize,
        dim: usize,
        heads: usize,
        hidden: usize,
        depth: usize,
        upsample_init: &ndarray::Array2<f64>,
        coord_scale: f64,
    ) -> Result<Self> {
        if upsample_init.dim() != (crate::hand_model::NUM_VERTICES, NUM_COARSE_VERTICES) {
            return Err(Error::shape(format!("upsample matrix must be 778 x 195, got {:?}", upsample_init.dim())));
        }
        let mut s = b.sub(name);
        let queries = s.param("queries", &[NUM_JOINTS + NUM_COARSE_VERTICES, dim], Init::Normal(1.0))?;
        let memory_pos = s.param("memory_pos", &[memory_tokens, dim], Init::Normal(0.02))?;
        let blocks = (0..depth)
            .map(|i| DecoderBlock::new(&mut s, &format!("block{i}"), dim, heads, hidden))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(&mut s, "norm", dim)?;
        let joint_head = Linear::new(&mut s, "joint_head", dim, 3)?;
        let vertex_head = Linear::new(&mut s, "vertex_head", dim, 3)?;
        let upsample = s.param("upsample", &[upsample_init.nrows(), NUM_COARSE_VERTICES], Init::Values(upsample_init.iter().copied().collect()))?;
        Ok(MeshDecoder {
            queries,
            memory_pos,
            blocks,
            norm,
            joint_head,
            vertex_head,
            upsample,
            coord_scale,
        })
    }

    pub fn forward(&self, latent: &[Tensor]) -> Result<MeshPrediction> {
        if latent.len() != self.blocks.len() {
            return Err(Error::shape(format!("decoder expects {} latent sets, got {}", self.blocks.len(), latent.len())));
        }
        let (b, _, d) = latent[0].dims3()?;
        let mut q = self.queries.unsqueeze(0)?.broadcast_as((b, NUM_JOINTS + NUM_COARSE_VERTICES, d))?.contiguous()?;
        for (block, mem) in self.blocks.iter().zip(latent) {
            q = block.forward(&q, &mem.broadcast_add(&self.memory_pos)?)?;
        }
        let q = self.norm.forward(&q)?;
        let joints = (self.joint_head.forward(&q.narrow(1, 0, NUM_JOINTS)?)? * self.coord_scale)?;
        let coarse = (self.vertex_head.forward(&q.narrow(1, NUM_JOINTS, NUM_COARSE_VERTICES)?)? * self.coord_scale)?;
        let fine = self.upsample.broadcast_matmul(&coarse)?;
        Ok(MeshPrediction { joints, coarse, fine })
    }
}
