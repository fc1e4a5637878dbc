//! Command implementations behind the `qforge` binary.
//!
//! Each `run_*` function does the work of one subcommand and returns plain
//! data, so tests can drive them without spawning a process.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use serde::Serialize;

use qforge::agent::{evaluate, train, MetricsRow, MetricsSink, TrainState};
use qforge::agent::SwitchEvent;
use qforge::gradcheck::{check_network, GradCheckOptions, GradCheckReport};
use qforge::models::checkpoint::Checkpoint;
use qforge::models::ConvSpec;
use qforge::nn::{ForwardCtx, Module};
use qforge::{EnvKind, Error, ModelConfig, QNetwork, RunConfig, Tensor, Variant};

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 9] = [
    "episode",
    "total_reward",
    "mean_loss",
    "epsilon",
    "steps",
    "env_time_s",
    "step_time_ms",
    "eval_avg_reward",
    "loss_mode",
];

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit status for an error: 2 for configuration problems, 3 for
/// unreadable checkpoints, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::UnknownPreset { .. }) => 2,
        Some(Error::BadMagic { .. } | Error::Checkpoint(_)) => 3,
        _ => 1,
    }
}

/// Where a run configuration comes from.
#[derive(Clone, Debug, Default)]
pub struct ConfigSource {
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
}

impl ConfigSource {
    pub fn preset(name: &str) -> Self {
        ConfigSource { preset: Some(name.to_string()), ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.preset.is_none() && self.config.is_none()
    }

    /// Loads, applies overrides and the seed, then resolves.
    pub fn load(&self) -> qforge::Result<RunConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("--preset and --config are mutually exclusive".into()))
            }
            (Some(name), None) => RunConfig::preset(name)?,
            (None, Some(path)) => RunConfig::from_file(path)?,
            (None, None) => return Err(Error::Config("one of --preset or --config is required".into())),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.resolve()
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    name: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a RunConfig,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `metrics.csv`, `timing.csv`, `loss_switches.csv` and checkpoints.
struct FileSink {
    dir: PathBuf,
    env: EnvKind,
    wall_clock: bool,
    checkpoints: bool,
    metrics: csv::Writer<File>,
    timing: csv::Writer<File>,
    switches: csv::Writer<File>,
    saved: Vec<PathBuf>,
    quiet: bool,
}

impl FileSink {
    fn create(dir: &Path, cfg: &RunConfig, quiet: bool) -> anyhow::Result<Self> {
        let open = |name: &str| -> anyhow::Result<csv::Writer<File>> {
            let path = dir.join(name);
            Ok(csv::Writer::from_path(&path).with_context(|| format!("cannot create {}", path.display()))?)
        };
        let mut metrics = open("metrics.csv")?;
        metrics.write_record(METRICS_HEADER)?;
        let mut timing = open("timing.csv")?;
        timing.write_record(["episode", "env_time_s", "step_time_ms"])?;
        let mut switches = open("loss_switches.csv")?;
        switches.write_record(["observation", "from", "to", "rule", "statistic"])?;
        Ok(FileSink {
            dir: dir.to_path_buf(),
            env: cfg.env.kind,
            wall_clock: cfg.log.wall_clock_in_metrics,
            checkpoints: cfg.log.checkpoints,
            metrics,
            timing,
            switches,
            saved: Vec::new(),
            quiet,
        })
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.metrics.flush()?;
        self.timing.flush()?;
        self.switches.flush()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

impl MetricsSink for FileSink {
    fn record(&mut self, row: &MetricsRow) -> qforge::Result<()> {
        let (env_time, step_time) = if self.wall_clock {
            (row.env_time_s.to_string(), opt(row.step_time_ms))
        } else {
            (String::new(), String::new())
        };
        self.metrics
            .write_record([
                row.episode.to_string(),
                row.total_reward.to_string(),
                opt(row.mean_loss),
                row.epsilon.to_string(),
                row.steps.to_string(),
                env_time,
                step_time,
                opt(row.eval_avg_reward),
                row.loss_mode.to_string(),
            ])
            .map_err(csv_err)?;
        self.timing
            .write_record([row.episode.to_string(), row.env_time_s.to_string(), opt(row.step_time_ms)])
            .map_err(csv_err)?;
        if let (Some(avg), false) = (row.eval_avg_reward, self.quiet) {
            eprintln!("episode {:>6}  eval {avg:+.3}  epsilon {:.3}  loss {}", row.episode, row.epsilon, opt(row.mean_loss));
        }
        self.flush()?;
        Ok(())
    }

    fn loss_switch(&mut self, ev: &SwitchEvent) -> qforge::Result<()> {
        let rule = serde_json::to_value(ev.rule)?;
        self.switches
            .write_record([
                ev.observation.to_string(),
                ev.from.to_string(),
                ev.to.to_string(),
                rule.as_str().unwrap_or_default().to_string(),
                ev.statistic.to_string(),
            ])
            .map_err(csv_err)?;
        Ok(())
    }

    fn checkpoint(&mut self, state: &TrainState, episode: usize, last: bool) -> qforge::Result<()> {
        if !self.checkpoints {
            return Ok(());
        }
        let mut ck = state.checkpoint();
        if let serde_json::Value::Object(map) = &mut ck.manifest.extra {
            map.insert("env".into(), self.env.name().into());
        }
        let dir = self.dir.join("checkpoints");
        fs::create_dir_all(&dir)?;
        let path = if last { dir.join("final.qfc") } else { dir.join(format!("episode-{episode:06}.qfc")) };
        ck.save(&path)?;
        self.saved.push(path);
        Ok(())
    }
}

/// Outcome of [`run_train`].
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    pub episodes_run: usize,
    pub evaluations: Vec<(usize, f64)>,
    pub stopped_early: bool,
    pub checkpoints: Vec<PathBuf>,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn best_eval(&self) -> Option<f64> {
        self.evaluations.iter().map(|&(_, r)| r).reduce(f64::max)
    }

    pub fn final_checkpoint(&self) -> Option<&Path> {
        self.checkpoints.last().map(PathBuf::as_path)
    }
}

/// Trains with `cfg` and writes all artifacts under `out`.
pub fn run_train(cfg: &RunConfig, out: &Path, quiet: bool) -> anyhow::Result<TrainReport> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let manifest = RunManifest { name: "qforge", version: VERSION, seed: cfg.seed, config: cfg };
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;

    let mut sink = FileSink::create(out, cfg, quiet)?;
    let start = Instant::now();
    let summary = train(&cfg.agent, &cfg.model, cfg.env.kind, cfg.seed, &mut sink)?;
    sink.flush()?;
    Ok(TrainReport {
        out_dir: out.to_path_buf(),
        episodes_run: summary.episodes_run,
        evaluations: summary.evaluations,
        stopped_early: summary.stopped_early,
        checkpoints: sink.saved,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Average greedy reward of a checkpoint.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub env: EnvKind,
    pub episodes: usize,
    pub seed: u64,
    pub average_reward: f64,
}

fn env_from_name(name: &str) -> Option<EnvKind> {
    [EnvKind::Catch, EnvKind::Gauntlet].into_iter().find(|k| k.name() == name)
}

/// Loads a checkpoint and evaluates it greedily. When `expected` is given,
/// the checkpoint must match its model section, and its environment is used;
/// otherwise the environment recorded in the checkpoint is.
pub fn run_eval(
    checkpoint: &Path,
    expected: Option<&RunConfig>,
    episodes: usize,
    seed: u64,
) -> anyhow::Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("--episodes must be at least 1".into()).into());
    }
    let ck = Checkpoint::load(checkpoint)?;
    let (net, env) = match expected {
        Some(cfg) => {
            let net = QNetwork::new(&cfg.model)?;
            ck.restore_into(&net)?;
            (net, cfg.env.kind)
        }
        None => {
            let env = ck.manifest.extra.get("env").and_then(|v| v.as_str()).and_then(env_from_name);
            let Some(env) = env else {
                bail!(Error::Config(
                    "checkpoint does not record its environment; pass --preset or --config".into()
                ));
            };
            (ck.to_network()?, env)
        }
    };
    let average_reward = evaluate(&net, env, episodes, seed)?;
    let log = checkpoint.parent().unwrap_or(Path::new(".")).join("evals.csv");
    let fresh = !log.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(&log)?;
    if fresh {
        writeln!(f, "checkpoint,env,episodes,seed,average_reward")?;
    }
    let mut w = csv::Writer::from_writer(f);
    w.write_record([
        checkpoint.display().to_string(),
        env.name().to_string(),
        episodes.to_string(),
        seed.to_string(),
        average_reward.to_string(),
    ])?;
    w.flush()?;
    Ok(EvalReport { env, episodes, seed, average_reward })
}

/// Timing of one architecture.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub variant: Variant,
    pub params: usize,
    pub output_shape: Vec<usize>,
    pub forward_ms_mean: f64,
    pub forward_ms_std: f64,
    pub backward_ms_mean: f64,
    pub backward_ms_std: f64,
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub batch: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub actions: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { batch: 8, warmup: 5, iterations: 100, actions: 4 }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Times forward and forward+backward for each variant at its default
/// configuration. Warmup iterations are run but not recorded.
pub fn run_benchmark(opts: &BenchOptions) -> anyhow::Result<Vec<BenchRow>> {
    if opts.iterations == 0 {
        bail!(Error::Config("benchmark needs at least one iteration".into()));
    }
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let cfg = ModelConfig::new(variant, opts.actions);
        let net = QNetwork::new(&cfg)?;
        let s = cfg.frame_size;
        let n = opts.batch * cfg.frames * s * s;
        let input = Tensor::new(&[opts.batch, cfg.frames, s, s], (0..n).map(|i| (i % 251) as f64 / 251.0).collect())?;
        let mut output_shape = Vec::new();
        let (mut fwd, mut bwd) = (Vec::new(), Vec::new());
        for i in 0..opts.warmup + opts.iterations {
            let t0 = Instant::now();
            let q = qforge::tensor::no_grad(|| net.forward(&input, &mut ForwardCtx::eval()))?;
            let f = t0.elapsed().as_secs_f64() * 1e3;
            output_shape = q.dims().to_vec();
            let t1 = Instant::now();
            net.zero_grad();
            net.forward(&input, &mut ForwardCtx::train(i as u64))?.sum().backward()?;
            let b = t1.elapsed().as_secs_f64() * 1e3;
            if i >= opts.warmup {
                fwd.push(f);
                bwd.push(b);
            }
        }
        let (forward_ms_mean, forward_ms_std) = mean_std(&fwd);
        let (backward_ms_mean, backward_ms_std) = mean_std(&bwd);
        rows.push(BenchRow {
            variant,
            params: net.param_count(),
            output_shape,
            forward_ms_mean,
            forward_ms_std,
            backward_ms_mean,
            backward_ms_std,
        });
    }
    Ok(rows)
}

pub fn format_bench_table(rows: &[BenchRow], opts: &BenchOptions) -> String {
    let mut s = format!(
        "batch {}, {} iterations after {} warmup\n{:<18} {:>10} {:>10} {:>22} {:>22}\n",
        opts.batch, opts.iterations, opts.warmup, "variant", "params", "output", "forward ms", "forward+backward ms"
    );
    for r in rows {
        let shape = format!("{:?}", r.output_shape);
        let fwd = format!("{:.3} ± {:.3}", r.forward_ms_mean, r.forward_ms_std);
        let bwd = format!("{:.3} ± {:.3}", r.backward_ms_mean, r.backward_ms_std);
        s += &format!("{:<18} {:>10} {:>10} {fwd:>22} {bwd:>22}\n", r.variant.name(), r.params, shape);
    }
    s
}

/// Tiny configuration of each variant, small enough for exhaustive
/// finite-difference checks.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    let mut cfg = ModelConfig::new(variant, 3);
    cfg.frames = 2;
    cfg.frame_size = 12;
    cfg.embed = 8;
    cfg.heads = 2;
    cfg.depth = 2;
    cfg.ff_dim = 12;
    cfg.patch = 4;
    cfg.init_seed = 11;
    cfg.conv = vec![ConvSpec::new(3, 4, 2), ConvSpec::new(4, 3, 1)];
    cfg.fc = match variant {
        Variant::Dcqn => vec![6, 5],
        Variant::DtqnVit => vec![6, 5, 4],
        _ => vec![],
    };
    cfg
}

/// Gradient checks of every architecture on tiny configurations.
pub fn run_grad_check(seed: u64) -> anyhow::Result<Vec<(Variant, GradCheckReport)>> {
    let opts = GradCheckOptions { coords_per_tensor: Some(24), seed, ..Default::default() };
    Variant::ALL
        .into_iter()
        .map(|v| Ok((v, check_network(&tiny_config(v), 3, &opts)?)))
        .collect()
}
