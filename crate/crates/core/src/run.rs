//! Run directories: what a search writes to disk and how the CLI reads it
//! back.
//!
//! ```text
//! <run>/config.txt      effective configuration, one key=value per line
//! <run>/seed.txt
//! <run>/scorer/         trained surrogate scorer
//! <run>/checkpoint/     search state after the last finished iteration
//! <run>/events.jsonl    loop events
//! <run>/rl.jsonl        one row per controller update
//! <run>/curves.csv      per-step shared-GAN losses
//! <run>/metrics.jsonl   scorer calibration and derivation results
//! <run>/beam.txt        beam archive
//! <run>/samples/*.ppm   sample grids
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data_io::{
    load_checkpoint, load_config, save_checkpoint, tile_grid, write_ppm, Checkpoint, CsvWriter, JsonlWriter,
};
use crate::error::{Error, Result};
use crate::genotype::Genotype;
use crate::metrics::SurrogateScorer;
use crate::networks::{forward_child, generator_param_names, sample_latent, ChildModel};
use crate::search::{
    sample_genotype_from, ControllerStepLog, Event, SearchConfig, SearchData, SearchObserver, SearchState, SharedStepLog,
    SurrogateEvaluator,
};

pub const CONFIG_FILE: &str = "config.txt";
pub const SEED_FILE: &str = "seed.txt";
pub const SCORER_DIR: &str = "scorer";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const ABORT_DIR: &str = "abort";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const RL_FILE: &str = "rl.jsonl";
pub const CURVES_FILE: &str = "curves.csv";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEAM_FILE: &str = "beam.txt";
pub const SAMPLES_DIR: &str = "samples";
const CURVES_HEADER: [&str; 5] = ["iter", "stage", "step", "d_loss", "g_loss"];
const SAMPLE_GRID: usize = 16;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Input(e.to_string()))
}

fn meta_json<T: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<T> {
    serde_json::from_str(ck.meta(key)?).map_err(|e| Error::Corruption(format!("metadata `{key}`: {e}")))
}

fn put_scorer(ck: &mut Checkpoint, scorer: &SurrogateScorer) {
    ck.put_store("scorer/", scorer.params());
    for (k, v) in [
        ("scorer_resolution", scorer.resolution().to_string()),
        ("scorer_classes", scorer.num_classes().to_string()),
        ("scorer_features", scorer.feature_dim().to_string()),
        ("scorer_accuracy", scorer.heldout_accuracy().to_string()),
    ] {
        ck.meta.insert(k.into(), v);
    }
}

fn take_scorer(ck: &Checkpoint) -> Result<SurrogateScorer> {
    Ok(SurrogateScorer::from_parts(
        ck.meta_parse("scorer_resolution")?,
        ck.meta_parse("scorer_classes")?,
        ck.meta_parse("scorer_features")?,
        ck.take_store("scorer/")?,
        ck.meta_parse("scorer_accuracy")?,
    ))
}

/// A standalone generator together with the scorer and settings needed to
/// evaluate it later.
pub fn save_child(child: &ChildModel, scorer: &SurrogateScorer, config: &SearchConfig, seed: u64, dir: &Path) -> Result<()> {
    let mut ck = Checkpoint::new(config.hash());
    ck.put_store("child/", &child.params);
    put_scorer(&mut ck, scorer);
    ck.meta.insert("genotype".into(), to_json(&child.genotype)?);
    ck.meta.insert("config".into(), to_json(config)?);
    ck.meta.insert("seed".into(), seed.to_string());
    save_checkpoint(&ck, dir)?;
    Ok(())
}

pub struct SavedChild {
    pub child: ChildModel,
    pub scorer: SurrogateScorer,
    pub config: SearchConfig,
    pub seed: u64,
}

pub fn load_child(dir: &Path) -> Result<SavedChild> {
    let ck = load_checkpoint(dir)?;
    let config: SearchConfig = meta_json(&ck, "config")?;
    if config.hash() != ck.config_hash {
        return Err(Error::Corruption("stored config does not match its hash".into()));
    }
    let genotype: Genotype = meta_json(&ck, "genotype")?;
    let params = ck.take_store("child/")?;
    let wanted = generator_param_names(&genotype)?;
    if params.len() != wanted.len() || !wanted.iter().all(|n| params.contains(n)) {
        return Err(Error::Corruption("child parameters do not match its genotype".into()));
    }
    let child = ChildModel { genotype, config: config.net_config(), params };
    Ok(SavedChild { child, scorer: take_scorer(&ck)?, config, seed: ck.meta_parse("seed")? })
}

pub fn load_genotype(path: &Path) -> Result<Genotype> {
    let text = read_text(path)?;
    let g: Genotype = serde_json::from_str(&text)
        .map_err(|e| Error::Format { path: path.to_path_buf(), pos: e.column() as u64, msg: e.to_string() })?;
    let violations = g.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidGenotype(violations.iter().map(ToString::to_string).collect()));
    }
    Ok(g)
}

pub fn save_genotype(genotype: &Genotype, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(genotype).map_err(|e| Error::Input(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

/// Everything loaded for one run directory.
pub struct RunContext {
    pub dir: PathBuf,
    pub config: SearchConfig,
    pub seed: u64,
    pub data: SearchData,
    pub evaluator: SurrogateEvaluator,
}

impl RunContext {
    /// Start a new run: write the config and seed, build the data and train
    /// the scorer.
    pub fn create(dir: &Path, config: SearchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(dir.join(SAMPLES_DIR)).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join(CONFIG_FILE), &config.to_text())?;
        write_text(&dir.join(SEED_FILE), &format!("{seed}\n"))?;
        let data = SearchData::load(&config, seed)?;
        let evaluator = SurrogateEvaluator::train(&config, &data, seed)?;
        let mut ck = Checkpoint::new(config.hash());
        put_scorer(&mut ck, evaluator.scorer());
        save_checkpoint(&ck, &dir.join(SCORER_DIR))?;
        let mut metrics = JsonlWriter::open(&dir.join(METRICS_FILE), true)?;
        metrics.write(&serde_json::json!({
            "kind": "scorer",
            "heldout_accuracy": evaluator.scorer().heldout_accuracy(),
            "resolution": evaluator.scorer().resolution(),
        }))?;
        Ok(RunContext { dir: dir.to_path_buf(), config, seed, data, evaluator })
    }

    /// Reopen an existing run directory.
    pub fn open(dir: &Path) -> Result<Self> {
        let config = load_config(&dir.join(CONFIG_FILE))?;
        let seed_path = dir.join(SEED_FILE);
        let seed = read_text(&seed_path)?
            .trim()
            .parse()
            .map_err(|_| Error::Format { path: seed_path.clone(), pos: 0, msg: "seed is not an integer".into() })?;
        let data = SearchData::load(&config, seed)?;
        let ck = load_checkpoint(&dir.join(SCORER_DIR))?;
        if ck.config_hash != config.hash() {
            return Err(Error::Corruption("scorer was trained under a different config".into()));
        }
        let evaluator = SurrogateEvaluator::from_scorer(take_scorer(&ck)?, &config, &data, seed)?;
        Ok(RunContext { dir: dir.to_path_buf(), config, seed, data, evaluator })
    }

    pub fn fresh_state(&self) -> Result<SearchState> {
        SearchState::new(self.config.clone(), ChaCha8Rng::seed_from_u64(self.seed))
    }

    pub fn has_checkpoint(&self) -> bool {
        self.dir.join(CHECKPOINT_DIR).join(crate::data_io::MANIFEST_FILE).exists()
    }

    pub fn load_state(&self) -> Result<SearchState> {
        SearchState::from_checkpoint(self.config.clone(), &load_checkpoint(&self.dir.join(CHECKPOINT_DIR))?)
    }

    /// Observer writing the run's logs. When resuming from `state`, log rows
    /// past its iteration are dropped first.
    pub fn observer(&self, resume_from: Option<&SearchState>) -> Result<RunObserver> {
        let events_path = self.dir.join(EVENTS_FILE);
        let rl_path = self.dir.join(RL_FILE);
        let curves_path = self.dir.join(CURVES_FILE);
        match resume_from {
            None => Ok(RunObserver {
                dir: self.dir.clone(),
                events: JsonlWriter::open(&events_path, true)?,
                rl: JsonlWriter::open(&rl_path, true)?,
                curves: CsvWriter::create(&curves_path, &CURVES_HEADER)?,
            }),
            Some(state) => {
                let mut events = JsonlWriter::open(&events_path, true)?;
                for e in &state.events {
                    events.write(e)?;
                }
                truncate_rows(&rl_path, state.iter, |line| {
                    serde_json::from_str::<serde_json::Value>(line).ok().and_then(|v| v["iter"].as_u64())
                })?;
                truncate_rows(&curves_path, state.iter, |line| line.split(',').next().and_then(|f| f.parse().ok()))?;
                Ok(RunObserver {
                    dir: self.dir.clone(),
                    events,
                    rl: JsonlWriter::open(&rl_path, false)?,
                    curves: CsvWriter::append(&curves_path, &CURVES_HEADER)?,
                })
            }
        }
    }

    /// Write the current state to `<run>/abort` after a failed iteration.
    pub fn dump_abort_state(&self, state: &SearchState) -> Result<PathBuf> {
        let dir = self.dir.join(ABORT_DIR);
        save_checkpoint(&state.to_checkpoint()?, &dir)?;
        Ok(dir)
    }
}

/// Keep only lines whose iteration (as parsed by `iter_of`) is below `iter`;
/// lines without one (headers) are kept.
fn truncate_rows(path: &Path, iter: usize, iter_of: impl Fn(&str) -> Option<u64>) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: String = read_text(path)?
        .lines()
        .filter(|l| iter_of(l).is_none_or(|i| (i as usize) < iter))
        .map(|l| format!("{l}\n"))
        .collect();
    write_text(path, &kept)
}

pub struct RunObserver {
    dir: PathBuf,
    events: JsonlWriter,
    rl: JsonlWriter,
    curves: CsvWriter,
}

impl RunObserver {
    fn write_samples(&self, state: &SearchState) -> Result<()> {
        let done = state.iter - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(done as u64);
        let parents = if state.stage == 0 { None } else { state.beam.stage(state.stage - 1) };
        let (genotype, _) = sample_genotype_from(&state.controller, parents, &state.config, &mut rng)?;
        let z = sample_latent(SAMPLE_GRID, state.config.z_dim, &mut rng);
        let images = forward_child(&state.supernet, &genotype, &z)?;
        let grid = tile_grid(&images, 4)?;
        write_ppm(&grid, &self.dir.join(SAMPLES_DIR).join(format!("iter_{done:03}.ppm")))
    }
}

impl SearchObserver for RunObserver {
    fn shared_step(&mut self, log: &SharedStepLog) -> Result<()> {
        self.curves.row(&[
            log.iter.to_string(),
            log.stage.to_string(),
            log.step.to_string(),
            log.d_loss.to_string(),
            log.g_loss.to_string(),
        ])
    }

    fn controller_step(&mut self, log: &ControllerStepLog) -> Result<()> {
        self.rl.write(log)
    }

    fn event(&mut self, event: &Event) -> Result<()> {
        self.events.write(event)
    }

    fn iteration_done(&mut self, state: &SearchState) -> Result<()> {
        save_checkpoint(&state.to_checkpoint()?, &self.dir.join(CHECKPOINT_DIR))?;
        write_text(&self.dir.join(BEAM_FILE), &state.beam.to_text())?;
        fs::create_dir_all(self.dir.join(SAMPLES_DIR)).map_err(|e| Error::io(&self.dir, e))?;
        self.write_samples(state)
    }
}
