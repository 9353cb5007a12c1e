use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use autogan::data_io::{load_config, parse_config, tile_grid, write_ppm, JsonlWriter};
use autogan::metrics::RewardMetric;
use autogan::run::{self, RunContext, METRICS_FILE};
use autogan::search::{
    derive_final, random_search_baseline, retrain_child, run_iterations, BaselineMode, Budget, Evaluator, SearchConfig,
    SearchData, SurrogateEvaluator,
};
use autogan::{Error, Result};

const THREADS_VAR: &str = "AUTOGAN_THREADS";

#[derive(Parser)]
#[command(name = "autogan", version, about = "Architecture search for GAN generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the staged search and write a run directory.
    Search {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the run directory's last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Sample, rank and retrain final candidates of a finished run.
    Derive {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one genotype from scratch.
    Retrain {
        #[arg(long)]
        genotype: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "retrained")]
        out: PathBuf,
    },
    /// Score a saved generator.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "is")]
        metric: String,
    },
    /// Random-search baseline.
    Baseline {
        #[arg(long)]
        mode: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        candidates: usize,
        /// Training steps; defaults to the config's retraining budget.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        wall_clock_secs: Option<u64>,
    },
}

fn config_from(path: Option<&Path>) -> Result<SearchConfig> {
    match path {
        Some(p) => load_config(p),
        None => parse_config(""),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?);
    Ok(())
}

fn search(config: Option<&Path>, seed: u64, out: &Path, resume: bool) -> Result<()> {
    let (ctx, mut state) = if resume {
        let ctx = RunContext::open(out)?;
        let state = if ctx.has_checkpoint() { ctx.load_state()? } else { ctx.fresh_state()? };
        (ctx, state)
    } else {
        let ctx = RunContext::create(out, config_from(config)?, seed)?;
        let state = ctx.fresh_state()?;
        (ctx, state)
    };
    let mut observer = ctx.observer(resume.then_some(&state))?;
    eprintln!("search: {} iterations, starting at {}", ctx.config.total_iters, state.iter);
    if let Err(e) = run_iterations(&mut state, &ctx.data, &ctx.evaluator, &mut observer, None) {
        if let Ok(dir) = ctx.dump_abort_state(&state) {
            eprintln!("state at failure written to {}", dir.display());
        }
        return Err(e);
    }
    eprintln!("search finished after {} shared steps; beam archive in {}", state.total_shared_steps, out.join(run::BEAM_FILE).display());
    print!("{}", state.beam.to_text());
    Ok(())
}

fn derive(run_dir: &Path, seed: u64) -> Result<()> {
    let ctx = RunContext::open(run_dir)?;
    let state = ctx.load_state()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (best, report) = derive_final(&state, &ctx.data, &ctx.evaluator, &mut rng)?;
    let mut metrics = JsonlWriter::open(&run_dir.join(METRICS_FILE), false)?;
    metrics.write(&serde_json::json!({ "kind": "derive", "report": &report }))?;
    run::save_genotype(&best, &run_dir.join("derived_genotype.json"))?;
    let entry = report.best_entry();
    let (child, _) = retrain_child(&best, &ctx.config, &ctx.data, ctx.config.retrain_generator_steps, entry.seed)?;
    run::save_child(&child, ctx.evaluator.scorer(), &ctx.config, ctx.seed, &run_dir.join("derived_child"))?;
    print_json(&report)
}

fn retrain(genotype: &Path, config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let config = config_from(config)?;
    let genotype = run::load_genotype(genotype)?;
    let data = SearchData::load(&config, seed)?;
    let evaluator = SurrogateEvaluator::train(&config, &data, seed)?;
    let (child, losses) = retrain_child(&genotype, &config, &data, config.retrain_generator_steps, seed)?;
    let report = evaluator.score_child(&child)?;
    run::save_child(&child, evaluator.scorer(), &config, seed, out)?;
    let z = autogan::networks::sample_latent(16, config.z_dim, &mut ChaCha8Rng::seed_from_u64(seed));
    write_ppm(&tile_grid(&child.forward(&z)?, 4)?, &out.join("samples.ppm"))?;
    print_json(&serde_json::json!({ "report": report, "final_losses": losses }))
}

fn eval(checkpoint: &Path, metric: &str) -> Result<()> {
    let metric: RewardMetric = metric.parse()?;
    let saved = run::load_child(checkpoint)?;
    let config = SearchConfig { metric, ..saved.config.clone() };
    let data = SearchData::load(&config, saved.seed)?;
    let evaluator = SurrogateEvaluator::from_scorer(saved.scorer, &config, &data, saved.seed)?;
    print_json(&evaluator.score_child(&saved.child)?)
}

fn baseline(mode: &str, config: Option<&Path>, seed: u64, candidates: usize, steps: Option<usize>, wall: Option<u64>) -> Result<()> {
    let mode: BaselineMode = mode.parse()?;
    let config = config_from(config)?;
    let data = SearchData::load(&config, seed)?;
    let evaluator = SurrogateEvaluator::train(&config, &data, seed)?;
    let budget = Budget {
        candidates,
        train_steps: steps.unwrap_or(config.retrain_generator_steps),
        wall_clock: wall.map(Duration::from_secs),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, report) = random_search_baseline(mode, &budget, &config, &data, &evaluator, &mut rng)?;
    print_json(&report)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Search { config, seed, out, resume } => search(config.as_deref(), seed, &out, resume),
        Command::Derive { run, seed } => derive(&run, seed),
        Command::Retrain { genotype, config, seed, out } => retrain(&genotype, config.as_deref(), seed, &out),
        Command::Eval { checkpoint, metric } => eval(&checkpoint, &metric),
        Command::Baseline { mode, config, seed, candidates, steps, wall_clock_secs } => {
            baseline(&mode, config.as_deref(), seed, candidates, steps, wall_clock_secs)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
