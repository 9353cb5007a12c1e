//! The search loop: shared-GAN and controller phases, dynamic resetting,
//! staged growth with beam hand-off, derivation and random baselines.

mod beam;
mod config;
mod derive;
mod engine;
mod evaluate;
mod events;
mod window;

pub use beam::{genotype_tokens, select_top_k, top_k_indices, BeamArchive, BeamEntry, Candidate};
pub use config::{DatasetSource, SearchConfig};
pub use derive::{
    derive_final, proxy_vs_real_study, random_search_baseline, retrain_child, BaselineMode, BaselineReport, BaselineRow,
    Budget, DeriveReport, RetrainEntry, StudyReport, StudyRow,
};
pub use engine::{
    controller_phase, run_iteration, run_iterations, run_search, sample_genotype_from, save_top_k, shared_gan_phase,
    CollapseFreeze, ControllerStepLog, NoObserver, SearchObserver, SearchState, SharedStepLog,
};
pub use evaluate::{Evaluator, SearchData, SurrogateEvaluator};
pub use events::{Event, EventKind};
pub use window::{dynamic_reset_check, LossWindow};
