//! Command-line surface. Human-readable progress goes to stderr; CSV, JSON
//! and TSV go to files or stdout.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::data::{self, Delimiter, SplitDataset};
use crate::error::Error;
use crate::graph::InteractionGraph;
use crate::sampler::{DEFAULT_MAX_SWEEPS, DEFAULT_RHO_TOL};
use crate::trainer::{self, Drawer, PopularitySampler, SamplerKind, TrainConfig, TrainedModel};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "cosam", version, about = "Collaborative sampling for implicit-feedback recommenders")]
pub struct Cli {
    /// Worker threads; 1 makes every command bit-reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Binarize, filter and split a raw interaction log.
    Prepare(PrepareArgs),
    /// Train a recommender with the chosen sampler.
    Train(TrainArgs),
    /// Rank held-out items and report Pre@K, Rec@K and NDCG.
    Evaluate(EvaluateArgs),
    /// Gradient variance and sampled loss over repeated mini-batches.
    Probe(ProbeArgs),
    /// Show a user's highest-probability items under the trained sampler.
    InspectSampler(InspectArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Field separator: tab or comma.
    #[arg(long, default_value = "tab")]
    pub format: Delimiter,
    #[arg(long, default_value_t = 3)]
    pub min_item_degree: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Use a k-fold split instead of the holdout (needs --fold).
    #[arg(long, requires = "fold")]
    pub folds: Option<usize>,
    #[arg(long, requires = "folds")]
    pub fold: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// `key = value` config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sampler: Option<SamplerKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write NA instead of wall time in the log.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    pub k: Vec<usize>,
    /// Metrics CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a JSON report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Include per-user arrays in the JSON report.
    #[arg(long, requires = "json")]
    pub per_user: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub repeats: usize,
    /// Users per probed mini-batch; defaults to the training batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Draw with this sampler instead of the checkpoint's own.
    #[arg(long)]
    pub sampler: Option<SamplerKind>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// User token as it appears in the raw log.
    #[arg(long)]
    pub user: String,
    #[arg(long, default_value_t = 20)]
    pub top: usize,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .try_init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return 2;
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Probe(a) => probe(a),
        Command::InspectSampler(a) => inspect(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `cosam --help` for usage.");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn write_output(path: Option<&Path>, body: &str) -> crate::Result<()> {
    match path {
        Some(p) => std::fs::write(p, body).map_err(|e| Error::io(p, e)),
        None => std::io::stdout().write_all(body.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn prepare(a: PrepareArgs) -> CmdResult {
    if !a.input.is_file() {
        return Err(Failure::Usage(format!("input file {} does not exist", a.input.display())));
    }
    log::info!("seed {}", a.seed);
    let raw = data::load_interactions(&a.input, a.format)?;
    if raw.malformed > 0 {
        log::warn!("{} malformed lines skipped", raw.malformed);
    }
    let ds = data::binarize_and_filter(&raw, a.min_item_degree)?;
    let split = match (a.folds, a.fold) {
        (Some(k), Some(f)) => data::split_kfold(&ds, k, f, a.seed)?,
        _ => data::split_holdout(&ds, a.test_fraction, a.seed)?,
    };
    data::save_prepared(&split, &a.out_dir)?;
    eprintln!("{}", ds.stats());
    eprintln!("train {} / test {} pairs -> {}", split.train.len(), split.test.len(), a.out_dir.display());
    Ok(())
}

fn train(a: TrainArgs) -> CmdResult {
    let split = data::load_prepared(&a.data_dir)?;
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.sampler {
        config.sampler = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if a.no_timing {
        config.timing = false;
    }
    log::info!(
        "sampler {}  epochs {}  seed {}  threads {}",
        config.sampler,
        config.epochs,
        config.seed,
        rayon::current_num_threads()
    );
    let model = trainer::train(&split, &config)?;
    Checkpoint::from_model(&model, &split.fingerprint()).save(&a.out)?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    write_output(Some(&log_path), &model.log_csv())?;
    eprintln!("checkpoint {}  log {}", a.out.display(), log_path.display());
    Ok(())
}

fn load_model(data_dir: &Path, checkpoint: &Path) -> Result<(SplitDataset, InteractionGraph, TrainedModel), Failure> {
    let split = data::load_prepared(data_dir)?;
    let graph = InteractionGraph::from_pairs(split.n, split.m, &split.train)?;
    let model = Checkpoint::load(checkpoint)?.into_model(&graph, &split.fingerprint())?;
    Ok((split, graph, model))
}

fn evaluate(a: EvaluateArgs) -> CmdResult {
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(Failure::Usage("--k needs positive cutoffs".into()));
    }
    let (split, graph, model) = load_model(&a.data_dir, &a.checkpoint)?;
    let report = model.evaluate(&graph, &split.test_by_user(), &a.k, a.per_user);
    write_output(a.out.as_deref(), &report.to_csv())?;
    if let Some(p) = &a.json {
        write_output(Some(p), &report.to_json())?;
    }
    eprintln!(
        "{} users evaluated, {} without test items, {:.2}s",
        report.users_evaluated, report.users_skipped, report.seconds
    );
    Ok(())
}

fn probe(a: ProbeArgs) -> CmdResult {
    let (_, graph, model) = load_model(&a.data_dir, &a.checkpoint)?;
    let kind = a.sampler.unwrap_or(model.config.sampler);
    let batch_size = a.batch_size.unwrap_or(model.config.batch_size);
    log::info!("seed {}  sampler {kind}  repeats {}", a.seed, a.repeats);
    let pop;
    let drawer = match (kind, model.drawer()) {
        (SamplerKind::CoSam, d @ Drawer::CoSam(_)) => d,
        (SamplerKind::CoSam, _) => {
            return Err(Failure::Runtime(Error::InvalidParameter(
                "checkpoint has no trained sampler to probe with".into(),
            )))
        }
        (SamplerKind::Uniform, _) => Drawer::Uniform,
        (SamplerKind::Popularity, _) => {
            pop = PopularitySampler::new(&graph, model.config.alpha)?;
            Drawer::Popularity(&pop)
        }
    };
    let r = trainer::variance_probe(
        drawer,
        &model.recommender,
        &graph,
        model.config.sampler_config.candidate_multiplier,
        a.repeats,
        batch_size,
        a.seed,
    )?;
    let csv = format!(
        "sampler,repeats,batch_size,gradient_variance,mean_sampled_loss\n{kind},{},{},{},{}\n",
        r.repeats, r.batch_size, r.gradient_variance, r.mean_sampled_loss
    );
    write_output(a.out.as_deref(), &csv)?;
    Ok(())
}

fn inspect(a: InspectArgs) -> CmdResult {
    let (split, graph, model) = load_model(&a.data_dir, &a.checkpoint)?;
    let u = split.user_vocab.get(&a.user).ok_or_else(|| Error::UnknownUser(a.user.clone()))?;
    let sampler = model
        .sampler
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter(format!("checkpoint was trained with the {} sampler", model.config.sampler)))?;
    let dist = sampler.exact_rho(&graph, u, DEFAULT_RHO_TOL, DEFAULT_MAX_SWEEPS)?;
    let mut order: Vec<u32> = (0..graph.n_items() as u32).collect();
    order.sort_by(|&x, &y| dist.rho[y as usize].total_cmp(&dist.rho[x as usize]).then(x.cmp(&y)));
    let c = sampler.config();
    eprintln!(
        "user {}  p0 {:.6e}  walk tail mass {:.3e}  sweeps {}  converged {}",
        a.user,
        c.uniform_component_p0(graph.n_items()),
        c.tail_mass(),
        dist.sweeps,
        dist.converged
    );
    let mut out = String::from("rank\titem\trho\ttrain_positive\n");
    for (r, &i) in order.iter().take(a.top).enumerate() {
        let token = split.item_vocab.token(i).unwrap_or("?");
        out.push_str(&format!("{}\t{token}\t{}\t{}\n", r + 1, dist.rho[i as usize], graph.contains(u, i)));
    }
    write_output(None, &out)?;
    Ok(())
}
