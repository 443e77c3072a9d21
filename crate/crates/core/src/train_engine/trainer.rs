use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{PreparedSample, SampleSource};
use super::loss::{total_loss_tensor, LossBreakdown, LossWeights, StepTargets};
use crate::degrader::DegradationRecord;
use crate::error::{Error, Result};
use crate::fusion_net::{save_checkpoint, FusionNet, MeshPrediction, StepInput};
use crate::hand_model::HandModelData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Only `cosine` is supported.
    pub schedule: String,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub lambda_v: f64,
    pub lambda_j: f64,
    pub n_events_lo: usize,
    pub n_events_hi: usize,
    pub eval_events: usize,
    /// Spacing of the event steps after the image step, microseconds.
    pub event_step_us: u64,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub coarse_supervision: bool,
    pub degrade: bool,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            schedule: "cosine".into(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 4,
            iterations: 2000,
            lambda_v: 100.0,
            lambda_j: 2000.0,
            n_events_lo: 5000,
            n_events_hi: 9000,
            eval_events: 7000,
            event_step_us: 16_667,
            seed: 0,
            checkpoint_every: 500,
            coarse_supervision: false,
            degrade: true,
            augment: true,
        }
    }
}

impl TrainConfig {
    /// The full-scale schedule: batch 32 for 50,000 iterations.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 32,
            iterations: 50_000,
            checkpoint_every: 5_000,
            ..Default::default()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_v: self.lambda_v,
            lambda_j: self.lambda_j,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("train.lr must be positive, got {}", self.lr)));
        }
        if self.schedule != "cosine" {
            return Err(Error::invalid(format!("train.schedule `{}` is not supported (cosine)", self.schedule)));
        }
        if !(self.lambda_v > 0.0 && self.lambda_j > 0.0) {
            return Err(Error::invalid("train.lambda_v and train.lambda_j must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("adam betas must be in [0, 1)"));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::invalid("train.batch_size and train.iterations must be positive"));
        }
        if self.n_events_lo == 0 || self.n_events_lo > self.n_events_hi || self.eval_events == 0 {
            return Err(Error::invalid("event counts must satisfy 0 < n_events_lo <= n_events_hi"));
        }
        Ok(())
    }
}

/// Loss terms after one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Writes `iteration,lr,total,image_vertex,image_joint,event_vertex_s,…,event_joint_s,…,coarse_vertex`.
pub fn write_loss_history<W: Write>(history: &[LossRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::data(format!("loss history: {e}"));
    let steps = history.first().map(|r| r.loss.event_vertex.len()).unwrap_or(0);
    let mut header = vec!["iteration".to_string(), "lr".into(), "total".into(), "image_vertex".into(), "image_joint".into()];
    header.extend((1..=steps).map(|s| format!("event_vertex_{s}")));
    header.extend((1..=steps).map(|s| format!("event_joint_{s}")));
    header.push("coarse_vertex".into());
    wr.write_record(&header).map_err(err)?;
    for r in history {
        let mut row = vec![r.iteration.to_string(), r.lr.to_string(), r.loss.total.to_string()];
        row.push(r.loss.image_vertex.to_string());
        row.push(r.loss.image_joint.to_string());
        row.extend(r.loss.event_vertex.iter().map(f64::to_string));
        row.extend(r.loss.event_joint.iter().map(f64::to_string));
        row.push(r.loss.coarse_vertex.to_string());
        wr.write_record(&row).map_err(err)?;
    }
    wr.flush().map_err(|e| Error::data(format!("loss history: {e}")))
}

/// Where and what the training loop writes besides its return value.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
    pub log_degradations: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Stacks per-sample arrays into one batch tensor.
fn stack(arrays: &[&ndarray::Array3<f32>], net: &FusionNet) -> Result<Tensor> {
    let (c, h, w) = arrays[0].dim();
    let mut data = Vec::with_capacity(arrays.len() * c * h * w);
    for a in arrays {
        data.extend(a.iter().copied());
    }
    Ok(Tensor::from_vec(data, (arrays.len(), c, h, w), net.device())?.to_dtype(net.dtype())?)
}

fn stack_points(points: &[&Array2<f64>], net: &FusionNet) -> Result<Tensor> {
    let n = points[0].nrows();
    let data: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (points.len(), n, 3), net.device())?.to_dtype(net.dtype())?)
}

/// Network inputs and targets for a batch of samples with equal step counts.
pub fn batch_tensors(
    samples: &[PreparedSample],
    net: &FusionNet,
    coarse_model: Option<&HandModelData>,
) -> Result<(Vec<StepInput>, Vec<StepTargets>)> {
    let steps = samples[0].events.len();
    if samples.iter().any(|s| s.events.len() != steps || s.targets.len() != steps) {
        return Err(Error::shape("samples in a batch must have equal step counts"));
    }
    let image = stack(&samples.iter().map(|s| &s.image).collect::<Vec<_>>(), net)?;
    let mut inputs = Vec::with_capacity(steps);
    let mut targets = Vec::with_capacity(steps);
    for s in 0..steps {
        inputs.push(StepInput {
            image: image.clone(),
            events: stack(&samples.iter().map(|x| &x.events[s]).collect::<Vec<_>>(), net)?,
        });
        let coarse = match coarse_model {
            Some(m) => {
                let c: Vec<Array2<f64>> = samples.iter().map(|x| crate::hand_model::to_coarse(&x.targets[s].vertices, m)).collect();
                Some(stack_points(&c.iter().collect::<Vec<_>>(), net)?)
            }
            None => None,
        };
        targets.push(StepTargets {
            vertices: stack_points(&samples.iter().map(|x| &x.targets[s].vertices).collect::<Vec<_>>(), net)?,
            joints: stack_points(&samples.iter().map(|x| &x.targets[s].joints).collect::<Vec<_>>(), net)?,
            coarse,
        });
    }
    Ok((inputs, targets))
}

#[derive(Serialize)]
struct NanDump<'a> {
    iteration: usize,
    samples: Vec<String>,
    loss: &'a LossBreakdown,
    degradations: Vec<&'a DegradationRecord>,
}

#[derive(Serialize)]
struct DegradationLogLine<'a> {
    iteration: usize,
    sample: String,
    #[serde(flatten)]
    record: &'a DegradationRecord,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs the optimisation loop. `coarse_model` enables coarse-vertex
/// supervision and must be given when `cfg.coarse_supervision` is set.
pub fn train(
    net: &FusionNet,
    source: &dyn SampleSource,
    cfg: &TrainConfig,
    coarse_model: Option<&HandModelData>,
    outputs: &TrainOutputs,
) -> Result<TrainReport> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    if cfg.coarse_supervision && coarse_model.is_none() {
        return Err(Error::invalid("coarse supervision needs the hand model"));
    }
    let coarse_model = if cfg.coarse_supervision { coarse_model } else { None };
    if let Some(dir) = &outputs.dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut degradation_log = match (&outputs.dir, outputs.log_degradations) {
        (Some(dir), true) => {
            let path = dir.join("degradations.jsonl");
            Some((std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        _ => None,
    };

    let mut opt = AdamW::new(
        net.params().all_vars(),
        ParamsAdamW {
            lr: cfg.lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut checkpoints = Vec::new();

    for it in 0..cfg.iterations {
        let mut indices = Vec::with_capacity(cfg.batch_size);
        while indices.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..source.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            indices.push(order.pop().expect("refilled"));
        }
        let samples = indices
            .iter()
            .map(|&i| {
                let mut sample_rng = ChaCha8Rng::seed_from_u64(rng.random());
                source.prepare(i, &mut sample_rng)
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some((file, path)) = degradation_log.as_mut() {
            for (i, s) in indices.iter().zip(&samples) {
                let line = DegradationLogLine { iteration: it, sample: source.describe(*i), record: &s.degradation };
                let text = serde_json::to_string(&line).map_err(|e| Error::data(e.to_string()))?;
                writeln!(file, "{text}").map_err(|e| Error::io(path.as_path(), e))?;
            }
        }

        let (inputs, targets) = batch_tensors(&samples, net, coarse_model)?;
        let (preds, _): (Vec<MeshPrediction>, _) = net.forward_sequence(&inputs)?;
        let (loss, breakdown) = total_loss_tensor(&preds, &targets, cfg.weights())?;
        if !breakdown.total.is_finite() {
            let dump = NanDump {
                iteration: it,
                samples: indices.iter().map(|&i| source.describe(i)).collect(),
                loss: &breakdown,
                degradations: samples.iter().map(|s| &s.degradation).collect(),
            };
            let text = serde_json::to_string_pretty(&dump).map_err(|e| Error::data(e.to_string()))?;
            let mut msg = format!("non-finite loss at iteration {it}");
            if let Some(dir) = &outputs.dir {
                let path = dir.join("nan_dump.json");
                write_file(&path, text.as_bytes())?;
                msg.push_str(&format!(", batch dumped to {}", path.display()));
            } else {
                msg.push_str(&format!(": {text}"));
            }
            return Err(Error::Numerical(msg));
        }
        let lr = super::schedule::cosine_lr(cfg.lr, it, cfg.iterations);
        opt.set_learning_rate(lr);
        opt.backward_step(&loss)?;
        log::debug!("iteration {it}: loss {:.4} lr {lr:.3e}", breakdown.total);
        history.push(LossRecord { iteration: it, lr, loss: breakdown });

        if let Some(dir) = &outputs.dir {
            if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iterations {
                let path = dir.join(format!("checkpoint_{:06}.safetensors", it + 1));
                save_checkpoint(net, &path)?;
                checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = &outputs.dir {
        let path = dir.join("checkpoint.safetensors");
        save_checkpoint(net, &path)?;
        checkpoints.push(path);
        let mut buf = Vec::new();
        write_loss_history(&history, &mut buf)?;
        write_file(&dir.join("loss_history.csv"), &buf)?;
    }
    Ok(TrainReport { history, checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrader::DegradationRecord;
    use crate::fusion_net::NetworkConfig;
    use crate::hand_model::{make_desk_model, HandMesh};
    use crate::train_engine::{AugmentParams, FixedSamples, SceneTag};
    use candle_core::{DType, Device};
    use ndarray::Array3;
    use rand_distr::{Distribution, Normal};

    fn samples(n: usize, steps: usize, seed: u64) -> Vec<PreparedSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 20.0).unwrap();
        let mut img = |c: usize| Array3::from_shape_fn((c, 48, 48), |_| rng.random_range(0.0..1.0f32));
        let mut out = Vec::new();
        for _ in 0..n {
            let image = img(3);
            let events = (0..steps).map(|_| img(2)).collect();
            out.push(PreparedSample {
                image,
                events,
                targets: vec![],
                times: (0..steps as u64).collect(),
                scene: SceneTag::Normal,
                degradation: DegradationRecord::default(),
                augmentation: AugmentParams::identity(),
            });
        }
        for s in &mut out {
            s.targets = (0..steps)
                .map(|_| {
                    let v = Array2::from_shape_fn((778, 3), |_| noise.sample(&mut rng));
                    let j = Array2::from_shape_fn((21, 3), |_| noise.sample(&mut rng));
                    HandMesh::new(v, j).unwrap()
                })
                .collect();
        }
        out
    }

    fn net() -> FusionNet {
        let model = make_desk_model(&mut ChaCha8Rng::seed_from_u64(0));
        let cfg = NetworkConfig { input_size: 48, ..NetworkConfig::desk() };
        FusionNet::new(cfg, &model.upsample_matrix, 3, DType::F32, &Device::Cpu).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig { batch_size: 2, iterations: 3, lr: 1e-3, ..Default::default() }
    }

    #[test]
    fn equal_seeds_give_equal_histories() {
        let source = FixedSamples(samples(3, 2, 1));
        let a = train(&net(), &source, &cfg(), None, &TrainOutputs::default()).unwrap();
        let b = train(&net(), &source, &cfg(), None, &TrainOutputs::default()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 3);
        for r in &a.history {
            assert!((r.loss.term_sum() - r.loss.total).abs() < 1e-9 * r.loss.total.max(1.0));
        }
        assert!(a.history[2].lr < a.history[0].lr);
        assert!(train(&net(), &FixedSamples(vec![]), &cfg(), None, &TrainOutputs::default()).is_err());
        assert!(train(&net(), &source, &TrainConfig { lr: 0.0, ..cfg() }, None, &TrainOutputs::default()).is_err());
    }

    #[test]
    fn outputs_history_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let out = TrainOutputs { dir: Some(dir.path().to_path_buf()), log_degradations: true };
        let report = train(&net(), &FixedSamples(samples(2, 2, 2)), &TrainConfig { checkpoint_every: 1, ..cfg() }, None, &out).unwrap();
        assert_eq!(report.checkpoints.len(), 3);
        assert!(report.checkpoints.iter().all(|p| p.exists()));
        let text = std::fs::read_to_string(dir.path().join("loss_history.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,lr,total,image_vertex,image_joint,event_vertex_1,event_joint_1,coarse_vertex"
        );
        assert_eq!(lines.count(), 3);
        let log = std::fs::read_to_string(dir.path().join("degradations.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 6);
    }

    #[test]
    fn non_finite_loss_aborts_with_dump() {
        let mut bad = samples(2, 2, 3);
        bad[1].targets[1].joints[[4, 2]] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let out = TrainOutputs { dir: Some(dir.path().to_path_buf()), log_degradations: false };
        let err = train(&net(), &FixedSamples(bad), &cfg(), None, &out).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
        let dump: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("nan_dump.json")).unwrap()).unwrap();
        assert_eq!(dump["iteration"], 0);
        assert_eq!(dump["samples"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn coarse_supervision_adds_term() {
        let model = make_desk_model(&mut ChaCha8Rng::seed_from_u64(0));
        let source = FixedSamples(samples(2, 2, 4));
        let c = TrainConfig { coarse_supervision: true, iterations: 1, ..cfg() };
        assert!(train(&net(), &source, &c, None, &TrainOutputs::default()).is_err());
        let r = train(&net(), &source, &c, Some(&model), &TrainOutputs::default()).unwrap();
        assert!(r.history[0].loss.coarse_vertex > 0.0);
    }
}
