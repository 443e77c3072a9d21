use std::ffi::OsString;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::PipelineConfig;
use super::dataset::{load_dataset, read_frames, read_png, write_json, write_png, Split, HAND_MODEL_FILE};
use super::pipeline::{collect_eval_samples, eval_spec, run_async_inference};
use super::synth::write_synthetic_dataset;
use crate::degrader::{apply_degrader, compute_descriptor, BlockMatchingInterpolator, DegradationRecord, DegradeInput, PairDescriptor};
use crate::error::{Error, Result};
use crate::eval_metrics::{write_pck_csv, MetricReport};
use crate::event_core::{read_evb, simulate_events, slice_window, stack_events, write_evb, SensorSize, StackedEventFrame};
use crate::fusion_net::{load_checkpoint, FusionNet};
use crate::hand_model::{make_desk_model, HandModelData};
use crate::imaging::to_gray;
use crate::train_engine::{train, SampleSource, SampleSpec, SequenceSource, TrainOutputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "evrgbhand", version, about = "Event + RGB hand mesh reconstruction pipeline")]
pub struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Converts a frame directory to events, or generates a synthetic dataset.
    Simulate(SimulateArgs),
    /// Applies the training-time degradations to one frame and its events.
    Degrade(DegradeArgs),
    Train(TrainArgs),
    /// Writes metrics.json and pck.csv.
    Eval(EvalArgs),
    /// Runs high-rate asynchronous inference over one sequence.
    Infer(InferArgs),
    /// Extracts a PCK curve from metrics.json as CSV.
    PlotPck(PlotPckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory of `<t_us>.png` frames; when absent a synthetic dataset is written.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub train_sequences: usize,
    #[arg(long, default_value_t = 2)]
    pub eval_sequences: usize,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Previous and next frames, enabling motion blur.
    #[arg(long, requires = "next")]
    pub prev: Option<PathBuf>,
    #[arg(long, requires = "prev")]
    pub next: Option<PathBuf>,
    /// EVB1 event file stacked at `--time`.
    #[arg(long, requires = "time")]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub time: Option<u64>,
    #[arg(long, default_value_t = 7000)]
    pub event_count: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Write one JSON line per sample with its degradation record.
    #[arg(long)]
    pub log_degradations: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Scores the ground truth as predictions.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    /// Evaluates the training split instead of the evaluation split.
    #[arg(long)]
    pub on_train: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the first evaluation sequence.
    #[arg(long)]
    pub sequence: Option<String>,
    #[arg(long, default_value_t = 60.0)]
    pub bin_rate: f64,
}

#[derive(Debug, Args)]
pub struct PlotPckArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    /// Per-scene curve instead of the overall one.
    #[arg(long)]
    pub scene: Option<String>,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Numerical(_) | Error::Tensor(_) => EXIT_NUMERICAL,
        Error::Shape(_) | Error::Data(_) | Error::Io { .. } => EXIT_DATA,
    }
}

/// Parses `argv` (program name first), runs the command and maps the outcome
/// to an exit code, printing diagnostics to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn hand_model(root: &Path, seed: u64) -> Result<HandModelData> {
    let path = root.join(HAND_MODEL_FILE);
    if path.exists() {
        HandModelData::load(&path)
    } else {
        log::warn!("{} not found, using the generated desk hand model", path.display());
        Ok(make_desk_model(&mut ChaCha8Rng::seed_from_u64(seed)))
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let seed = cfg.train.seed;
    match &cli.command {
        Command::Simulate(a) => simulate(a, &cfg, &cli.out, seed),
        Command::Degrade(a) => degrade(a, &cfg, &cli.out, seed),
        Command::Train(a) => train_cmd(a, &cfg, &cli.out, seed),
        Command::Eval(a) => eval_cmd(a, &cfg, &cli.out, seed),
        Command::Infer(a) => infer_cmd(a, &cli.out, seed),
        Command::PlotPck(a) => plot_pck(a, &cli.out),
    }
}

fn simulate(a: &SimulateArgs, cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<()> {
    create_dir(out)?;
    match &a.frames {
        Some(dir) => {
            let frames = read_frames(dir)?;
            let Some((_, first)) = frames.first() else {
                return Err(Error::data(format!("{}: no frames", dir.display())));
            };
            let sensor = SensorSize::new(first.dim().2 as u16, first.dim().1 as u16);
            let luma: Vec<_> = frames.iter().map(|(t, f)| (*t, to_gray(f))).collect();
            let mut stream = simulate_events(&luma, &cfg.synthetic.simulator)?;
            if stream.sensor() != sensor {
                stream = crate::event_core::EventStream::new(stream.events().to_vec(), sensor)?;
            }
            let path = out.join(super::dataset::EVENTS_FILE);
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = std::io::BufWriter::new(file);
            write_evb(&stream, &mut w)?;
            std::io::Write::flush(&mut w).map_err(|e| Error::io(&path, e))?;
            println!("{} events from {} frames -> {}", stream.len(), frames.len(), path.display());
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = make_desk_model(&mut rng);
            let seqs = write_synthetic_dataset(out, &model, &cfg.synthetic, a.train_sequences, a.eval_sequences, &mut rng)?;
            let events: usize = seqs.iter().map(|s| s.events.len()).sum();
            println!("{} sequences, {events} events -> {}", seqs.len(), out.display());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DegradeReport {
    record: DegradationRecord,
    before: PairDescriptor,
    after: PairDescriptor,
}

fn degrade(a: &DegradeArgs, cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<()> {
    create_dir(out)?;
    let image = read_png(&a.image)?;
    let (_, h, w) = image.dim();
    let neighbours = match (&a.prev, &a.next) {
        (Some(p), Some(n)) => Some([read_png(p)?, read_png(n)?]),
        _ => None,
    };
    let sensor = SensorSize::new(w as u16, h as u16);
    let events = match (&a.events, a.time) {
        (Some(path), Some(t)) => {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let stream = read_evb(std::io::BufReader::new(file))?;
            if stream.sensor() != sensor {
                return Err(Error::data("event sensor size differs from the image size"));
            }
            let window = slice_window(&stream, t, a.event_count)?;
            vec![if window.events.is_empty() { StackedEventFrame::zeros(sensor, t) } else { stack_events(&window.events, t)? }]
        }
        _ => vec![StackedEventFrame::zeros(sensor, a.time.unwrap_or(0))],
    };
    let input = DegradeInput {
        image: &image,
        neighbours: neighbours.as_ref().map(|[p, n]| [p, n]),
        events: &events,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (img, evs, record) = apply_degrader(&input, &cfg.degrader, &BlockMatchingInterpolator::default(), &mut rng)?;
    write_png(&out.join("degraded.png"), &img)?;
    write_png(&out.join("degraded_events.png"), &evs[0].data)?;
    let report = DegradeReport {
        before: compute_descriptor(&image, &events[0]),
        after: compute_descriptor(&img, &evs[0]),
        record,
    };
    write_json(&out.join("degradation.json"), &report)?;
    println!("{}", serde_json::to_string(&report).map_err(|e| Error::data(e.to_string()))?);
    Ok(())
}

fn new_net(cfg: &PipelineConfig, model: &HandModelData, seed: u64) -> Result<FusionNet> {
    FusionNet::new(cfg.network.clone(), &model.upsample_matrix, seed, DType::F32, &Device::Cpu)
}

fn train_cmd(a: &TrainArgs, cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<()> {
    let mut tc = cfg.train.clone();
    if let Some(n) = a.iterations {
        tc.iterations = n;
    }
    let index = load_dataset(&a.data)?;
    let sequences = index.split(Split::Train);
    let model = hand_model(&a.data, seed)?;
    let net = new_net(cfg, &model, seed)?;
    let spec = SampleSpec {
        window: cfg.network.temporal_window,
        event_step_us: tc.event_step_us,
        event_count: crate::train_engine::EventCount::Uniform(tc.n_events_lo, tc.n_events_hi),
        degrade: tc.degrade.then(|| cfg.degrader.clone()),
        augment: tc.augment.then_some(cfg.augment),
    };
    let source = SequenceSource::new(&sequences, &model, spec);
    create_dir(out)?;
    let used = PipelineConfig { train: tc.clone(), ..cfg.clone() };
    let path = out.join("config.toml");
    std::fs::write(&path, used.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
    let report = train(
        &net,
        &source,
        &tc,
        Some(&model),
        &TrainOutputs { dir: Some(out.to_path_buf()), log_degradations: a.log_degradations },
    )?;
    let (first, last) = (report.history.first(), report.history.last());
    if let (Some(f), Some(l)) = (first, last) {
        println!("{} samples, loss {:.3} -> {:.3}, checkpoint {}", source.len(), f.loss.total, l.loss.total, out.join("checkpoint.safetensors").display());
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs, cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<()> {
    let index = load_dataset(&a.data)?;
    let sequences = index.split(if a.on_train { Split::Train } else { Split::Eval });
    let model = hand_model(&a.data, seed)?;
    let net = match &a.checkpoint {
        Some(p) if !a.oracle => Some(load_checkpoint(p, DType::F32, &Device::Cpu)?),
        _ => None,
    };
    let window = net.as_ref().map_or(cfg.network.temporal_window, |n| n.config().temporal_window);
    let spec = eval_spec(window, cfg.train.event_step_us, cfg.train.eval_events);
    let samples = collect_eval_samples(net.as_ref(), &sequences, &model, spec)?;
    if samples.is_empty() {
        return Err(Error::data("no evaluation samples"));
    }
    let report = MetricReport::from_samples(&samples)?;
    create_dir(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    let path = out.join("pck.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    report.write_pck_csv(file)?;
    println!(
        "{} samples: MPJPE {:.3} mm, MPVPE {:.3} mm, PA-MPJPE {:.3} mm, AUC {:.4}",
        report.overall.samples, report.overall.mpjpe, report.overall.mpvpe, report.overall.pa_mpjpe, report.overall.auc
    );
    Ok(())
}

fn infer_cmd(a: &InferArgs, out: &Path, _seed: u64) -> Result<()> {
    let index = load_dataset(&a.data)?;
    let seq = match &a.sequence {
        Some(id) => index.sequence(id).ok_or_else(|| Error::invalid(format!("no sequence `{id}`")))?.clone(),
        None => index
            .split(Split::Eval)
            .into_iter()
            .next()
            .or_else(|| index.sequences.first().cloned())
            .ok_or_else(|| Error::data("dataset has no sequences"))?,
    };
    let net = load_checkpoint(&a.checkpoint, DType::F32, &Device::Cpu)?;
    let track = run_async_inference(&net, &seq, a.bin_rate, None)?;
    create_dir(out)?;
    write_json(&out.join("track.json"), &track)?;
    println!("{} meshes at {} Hz, {} bins skipped", track.meshes.len(), a.bin_rate, track.skipped);
    Ok(())
}

fn plot_pck(a: &PlotPckArgs, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(&a.metrics).map_err(|e| Error::io(&a.metrics, e))?;
    let report: MetricReport = serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", a.metrics.display())))?;
    let (name, curve) = match &a.scene {
        Some(s) => (
            s.as_str(),
            &report.per_scene.get(s).ok_or_else(|| Error::invalid(format!("no scene `{s}` in report")))?.pck_curve,
        ),
        None => ("overall", &report.overall.pck_curve),
    };
    create_dir(out)?;
    let path = out.join(format!("pck_{name}.csv"));
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_pck_csv(curve, file)?;
    println!("{}", path.display());
    Ok(())
}
