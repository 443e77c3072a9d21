use candle_core::Tensor;

use super::layers::{max_pool2x2, Conv2d};
use super::params::{Builder, Init};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl BasicBlock {
    fn new(b: &mut Builder, name: &str, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let mut s = b.sub(name);
        let conv1 = Conv2d::new(&mut s, "conv1", c_in, c_out, 3, stride, 1)?;
        // The residual branch starts damped; there is no normalisation to do it.
        let std = 0.25 * (2.0 / (c_out * 9) as f64).sqrt();
        let conv2 = Conv2d::with_init(&mut s, "conv2", [c_out, c_out, 3], 1, 1, Init::Normal(std), Init::Zeros)?;
        let shortcut = if stride != 1 || c_in != c_out {
            Some(Conv2d::new(&mut s, "shortcut", c_in, c_out, 1, stride, 0)?)
        } else {
            None
        };
        Ok(BasicBlock { conv1, conv2, shortcut })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv2.forward(&self.conv1.forward(x)?.relu()?)?;
        let skip = match &self.shortcut {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

/// Residual convolutional feature extractor with overall stride 8.
///
/// A 7×7 stride-2 stem and 2×2 max pool give stride 4; a stage of basic
/// blocks at `width` channels is followed by a stride-2 stage at `2·width`,
/// and a 1×1 convolution projects to the token dimension.
#[derive(Debug, Clone)]
pub struct Backbone {
    in_channels: usize,
    stem: Conv2d,
    stage1: Vec<BasicBlock>,
    stage2: Vec<BasicBlock>,
    proj: Conv2d,
}

impl Backbone {
    pub(crate) fn new(
        b: &mut Builder,
        name: &str,
        in_channels: usize,
        width: usize,
        blocks: [usize; 2],
        out_dim: usize,
    ) -> Result<Self> {
        let mut s = b.sub(name);
        let stem = Conv2d::new(&mut s, "stem", in_channels, width, 7, 2, 3)?;
        let stage1 = (0..blocks[0])
            .map(|i| BasicBlock::new(&mut s, &format!("stage1.{i}"), width, width, 1))
            .collect::<Result<Vec<_>>>()?;
        let stage2 = (0..blocks[1])
            .map(|i| {
                let (c_in, stride) = if i == 0 { (width, 2) } else { (2 * width, 1) };
                BasicBlock::new(&mut s, &format!("stage2.{i}"), c_in, 2 * width, stride)
            })
            .collect::<Result<Vec<_>>>()?;
        let proj = Conv2d::new(&mut s, "proj", 2 * width, out_dim, 1, 1, 0)?;
        Ok(Backbone { in_channels, stem, stage1, stage2, proj })
    }

    /// `[B, C_in, H, W]` → `[B, D, H/8, W/8]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.in_channels || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::shape(format!(
                "backbone expects [B, {}, H, W] with H, W divisible by 8, got {:?}",
                self.in_channels,
                x.dims()
            )));
        }
        let mut y = max_pool2x2(&self.stem.forward(x)?.relu()?)?;
        for block in self.stage1.iter().chain(&self.stage2) {
            y = block.forward(&y)?;
        }
        self.proj.forward(&y)
    }
}
