//! The `hgtraj` command line.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hgtraj_core::eval::MissRule;
use hgtraj_core::graph::{dump_edges, graph_stats};
use hgtraj_core::gradsuite;
use hgtraj_core::lane::{rasterize, Pose};
use hgtraj_core::model::Prediction;
use hgtraj_core::pipeline::Sample;
use hgtraj_core::scene::AgentType;
use hgtraj_core::ssg;
use hgtraj_core::synth::{generate_synthetic_scenes, template_lane_graph};
use hgtraj_core::error::ErrorClass;
use hgtraj_core::Error;

use crate::config::RunConfig;
use crate::dataset::{self, SceneEntry};
use crate::formats::{load_prediction, save_prediction, write_json};
use crate::raster_io::export_patch;
use crate::report::write_metrics_csv;
use crate::workflow;

pub const PREDICTION_SUFFIX: &str = ".pred.json";

#[derive(Debug, Parser)]
#[command(name = "hgtraj", version, about = "Heterogeneous-graph trajectory prediction")]
pub struct Cli {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads; 1 gives bit-identical output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Scene file.
    #[arg(long)]
    pub scene: PathBuf,
    /// Lane-graph file; defaults to the one the scene names, next to it.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenes and their lane graph.
    GenScenes {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the heterogeneous graph of one scene and dump it.
    BuildGraph {
        #[command(flatten)]
        input: SceneArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the semantic scene graph of every history step.
    Ssg {
        #[command(flatten)]
        input: SceneArgs,
    },
    /// List the anchor paths of every road-bound agent.
    Anchors {
        #[command(flatten)]
        input: SceneArgs,
    },
    /// Rasterize the map around one agent.
    Rasterize {
        #[command(flatten)]
        input: SceneArgs,
        /// Agent id; defaults to the first agent.
        #[arg(long)]
        agent: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the map autoencoder on patches from a scene directory.
    PretrainAutoencoder {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Extra patches scored after training.
        #[arg(long, default_value_t = 50)]
        held_out: usize,
    },
    /// Train the network on a scene directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one prediction file per scene.
    Predict {
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `paths.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction files against the scenes' ground truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Comma-separated k values; defaults to `eval.ks`.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// Metric CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// A check that ran to completion but did not meet its tolerance.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

/// 2 for invalid input, 3 for numeric failures, 1 for anything else (IO).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Numeric => 3,
            };
        }
        if cause.is::<NumericFailure>() {
            return 3;
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Reports go to `out`, errors to stderr.
pub fn main_with(args: impl IntoIterator<Item = OsString>, out: &mut (dyn Write + Send)) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(Error::InvalidArgument("--threads must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    pool.install(|| dispatch(&cfg, cli.command, out))
}

fn dispatch(cfg: &RunConfig, cmd: Command, out: &mut (dyn Write + Send)) -> Result<()> {
    match cmd {
        Command::GenScenes { out: dir } => gen_scenes(cfg, &dir, out),
        Command::BuildGraph { input, out: dir } => build_graph(cfg, &input, &dir, out),
        Command::Ssg { input } => print_ssg(cfg, &input, out),
        Command::Anchors { input } => print_anchors(cfg, &input, out),
        Command::Rasterize { input, agent, out: dir } => raster(&input, agent.as_deref(), &dir, out),
        Command::PretrainAutoencoder { data, out: dir, held_out } => pretrain(cfg, &data, &dir, held_out, out),
        Command::Train { data, out: dir } => train_cmd(cfg, &data, &dir, out),
        Command::Predict { data, checkpoint, out: dir } => predict_cmd(cfg, &data, checkpoint.as_deref(), &dir, out),
        Command::Eval { data, predictions, k, out: csv } => eval_cmd(cfg, &data, &predictions, &k, csv.as_deref(), out),
        Command::Gradcheck { seed } => gradcheck(seed, out),
    }
}

fn gen_scenes(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let spec = cfg.generator_spec()?;
    let scenes = generate_synthetic_scenes(&spec, cfg.seed)?;
    let name = spec.template.name();
    dataset::write_dir(dir, &scenes, &template_lane_graph(spec.template), name)?;
    writeln!(out, "wrote {} scenes on `{name}` to {}", scenes.len(), dir.display())?;
    Ok(())
}

fn one_sample(cfg: &RunConfig, input: &SceneArgs) -> Result<Sample> {
    let e = dataset::load_entry(&input.scene, input.map.as_deref())?;
    Ok(hgtraj_core::pipeline::build_sample(&e.scene, &e.lanes, &cfg.sample_config())?)
}

fn build_graph(cfg: &RunConfig, input: &SceneArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let s = one_sample(cfg, input)?;
    let stats = graph_stats(&s.graph).to_string();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("stats.txt"), &stats)?;
    fs::write(dir.join("edges.txt"), dump_edges(&s.graph))?;
    write!(out, "{stats}")?;
    Ok(())
}

fn print_ssg(cfg: &RunConfig, input: &SceneArgs, out: &mut dyn Write) -> Result<()> {
    let s = one_sample(cfg, input)?;
    let names: Vec<String> = s.tracks.iter().map(|t| t.agent_id.clone()).collect();
    let slots = s.ssg.len() as i32;
    for (slot, edges) in s.ssg.iter().enumerate() {
        let t = slot as i32 - (slots - 1);
        let present = s.tracks.iter().filter(|tr| tr.state_at(t).is_some()).count();
        write!(out, "t={t} agents={present} edges={}", edges.len())?;
        match ssg::reduction_ratio(present, edges.len()) {
            Ok(r) => writeln!(out, " reduction={r:.4}")?,
            Err(_) => writeln!(out)?,
        }
        write!(out, "{}", ssg::dump_edges(edges, &names))?;
    }
    Ok(())
}

fn print_anchors(cfg: &RunConfig, input: &SceneArgs, out: &mut dyn Write) -> Result<()> {
    let s = one_sample(cfg, input)?;
    writeln!(out, "agent anchor length_m lanes")?;
    for (_, a) in s.graph.agents_of(AgentType::RoadBound) {
        for p in &a.anchors {
            let lanes: Vec<String> = p.lane_ids.iter().map(|l| l.to_string()).collect();
            writeln!(out, "{} {} {:.3} {}", a.agent_id, p.anchor_id, p.length(), lanes.join(">"))?;
        }
    }
    Ok(())
}

fn raster(input: &SceneArgs, agent: Option<&str>, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let e = dataset::load_entry(&input.scene, input.map.as_deref())?;
    let track = match agent {
        Some(id) => e
            .scene
            .tracks
            .iter()
            .find(|t| t.agent_id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("no agent `{id}` in scene")))?,
        None => e.scene.tracks.first().ok_or_else(|| Error::InvalidScene("scene has no agents".into()))?,
    };
    let s = track.current();
    let patch = rasterize(
        &e.lanes,
        Pose {
            center: s.position,
            heading: s.yaw,
        },
    );
    export_patch(&patch, dir)?;
    writeln!(out, "wrote raster of {} to {}", track.agent_id, dir.display())?;
    Ok(())
}

/// Samples of a scene directory, with map latents attached when the config
/// asks for them.
pub fn load_samples(cfg: &RunConfig, data: &Path) -> Result<(Vec<SceneEntry>, Vec<Sample>)> {
    let entries = dataset::load_dir(data, None)?;
    let mut samples = dataset::build_samples(&entries, &cfg.sample_config())?;
    if cfg.train.use_map_latents {
        let Some(p) = cfg.paths.autoencoder.as_deref() else {
            bail!(Error::InvalidArgument("train.use_map_latents needs paths.autoencoder".into()));
        };
        let (ae, store) = workflow::autoencoder(cfg, Some(p))?;
        dataset::attach_latents(&mut samples, &ae, &store)?;
    }
    Ok((entries, samples))
}

fn pretrain(cfg: &RunConfig, data: &Path, dir: &Path, held_out: usize, out: &mut dyn Write) -> Result<()> {
    let entries = dataset::load_dir(data, None)?;
    let samples = dataset::build_samples(&entries, &cfg.sample_config())?;
    let n = cfg.autoencoder.num_patches;
    let mut patches = dataset::sample_patches(&samples, n + held_out, cfg.seed);
    if patches.len() < n + held_out.max(1) {
        bail!(Error::InvalidArgument(format!(
            "{} agent nodes available, need {} training and {} held-out patches",
            patches.len(),
            n,
            held_out.max(1)
        )));
    }
    let test = patches.split_off(n);
    let (ae, mut store) = workflow::autoencoder(cfg, None)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut curve = csv::Writer::from_path(dir.join("ae_curve.csv"))?;
    curve.write_record(["epoch", "mse"])?;
    let mut failure = None;
    let run = workflow::pretrain_autoencoder(cfg, &ae, &mut store, &patches, &test, |epoch, mse| {
        if failure.is_none() {
            if let Err(e) = curve.write_record([epoch.to_string(), mse.to_string()]) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    curve.flush()?;
    workflow::save_checkpoint(&store, &dir.join("autoencoder.ckpt"))?;
    writeln!(
        out,
        "final train mse {:.6}\nheld-out mse {:.6}\nchannel-mean baseline {:.6}",
        run.curve.last().copied().unwrap_or(f64::NAN),
        run.held_out_mse,
        run.baseline_mse
    )?;
    Ok(())
}

fn train_cmd(cfg: &RunConfig, data: &Path, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let (_, samples) = load_samples(cfg, data)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), cfg)?;
    let mut last = None;
    workflow::train_model(cfg, &samples, Some(dir), |r| last = Some(r.clone()))?;
    if let Some(r) = last {
        writeln!(out, "epoch {} loss {:.6}", r.epoch, r.loss)?;
        if let Some(ade) = r.min_ade {
            writeln!(out, "train minADE {ade:.4}")?;
        }
    }
    writeln!(out, "checkpoint {}", dir.join("model.ckpt").display())?;
    Ok(())
}

fn predict_cmd(cfg: &RunConfig, data: &Path, checkpoint: Option<&Path>, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let Some(ckpt) = checkpoint.or(cfg.paths.checkpoint.as_deref()) else {
        bail!(Error::InvalidArgument("no checkpoint given (--checkpoint or paths.checkpoint)".into()));
    };
    let (_, samples) = load_samples(cfg, data)?;
    let (net, store) = workflow::network(cfg, Some(ckpt))?;
    let graphs: Vec<_> = samples.iter().map(|s| s.graph.clone()).collect();
    let preds = workflow::predict_graphs(&net, &store, &graphs)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (s, p) in samples.iter().zip(&preds) {
        save_prediction(&s.scene_id, p, &dir.join(format!("{}{PREDICTION_SUFFIX}", s.scene_id)))?;
    }
    writeln!(out, "wrote {} prediction files to {}", preds.len(), dir.display())?;
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, data: &Path, pred_dir: &Path, ks: &[usize], csv_out: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let ks = if ks.is_empty() { cfg.eval.ks.as_slice() } else { ks };
    let rule: MissRule = cfg.miss_rule()?;
    let (_, samples) = load_samples(cfg, data)?;
    let mut preds: Vec<Prediction> = Vec::with_capacity(samples.len());
    for s in &samples {
        let path = pred_dir.join(format!("{}{PREDICTION_SUFFIX}", s.scene_id));
        let (id, p) = load_prediction(&path)?;
        if id != s.scene_id {
            bail!(Error::InvalidArgument(format!("{} holds scene `{id}`", path.display())));
        }
        preds.push(p);
    }
    let report = workflow::evaluate_samples(&samples, &preds, ks, rule)?;
    if let Some(p) = csv_out {
        write_metrics_csv(&report, fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)?;
    }
    writeln!(out, "{report}")?;
    Ok(())
}

fn gradcheck(seed: u64, out: &mut dyn Write) -> Result<()> {
    let start = std::time::Instant::now();
    let checks = gradsuite::run_suite(seed)?;
    for c in &checks {
        writeln!(out, "{c}")?;
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    writeln!(out, "{} checks, {failed} failed, {:.1} s", checks.len(), start.elapsed().as_secs_f64())?;
    if failed > 0 {
        return Err(NumericFailure(format!("{failed} gradient checks failed")).into());
    }
    Ok(())
}
