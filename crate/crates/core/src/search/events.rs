use serde::{Deserialize, Serialize};

/// One step of the search loop as it appears in the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TrainShared {
        iter: usize,
        stage: usize,
        steps: usize,
        /// Whether the reset check fired during this phase.
        reset_flag: bool,
        mean_g_loss: f64,
        mean_d_loss: f64,
    },
    TrainController {
        iter: usize,
        stage: usize,
        steps: usize,
        mean_reward: f64,
        baseline: f64,
    },
    SaveTopK {
        iter: usize,
        stage: usize,
        rewards: Vec<f64>,
    },
    Grow {
        iter: usize,
        /// Stage after growing.
        stage: usize,
    },
    NewController {
        iter: usize,
        stage: usize,
    },
    Reset {
        iter: usize,
        stage: usize,
    },
}

/// The control-flow skeleton of an event, without measured quantities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    TrainShared { iter: usize, stage: usize, reset_flag: bool },
    TrainController { iter: usize, stage: usize, steps: usize },
    SaveTopK { iter: usize, stage: usize },
    Grow { iter: usize, stage: usize },
    NewController { iter: usize, stage: usize },
    Reset { iter: usize, stage: usize },
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match *self {
            Event::TrainShared { iter, stage, reset_flag, .. } => EventKind::TrainShared { iter, stage, reset_flag },
            Event::TrainController { iter, stage, steps, .. } => EventKind::TrainController { iter, stage, steps },
            Event::SaveTopK { iter, stage, .. } => EventKind::SaveTopK { iter, stage },
            Event::Grow { iter, stage } => EventKind::Grow { iter, stage },
            Event::NewController { iter, stage } => EventKind::NewController { iter, stage },
            Event::Reset { iter, stage } => EventKind::Reset { iter, stage },
        }
    }

    pub fn iter(&self) -> usize {
        match *self {
            Event::TrainShared { iter, .. }
            | Event::TrainController { iter, .. }
            | Event::SaveTopK { iter, .. }
            | Event::Grow { iter, .. }
            | Event::NewController { iter, .. }
            | Event::Reset { iter, .. } => iter,
        }
    }
}
