//! A standalone reading of the search-loop pseudocode, driven by recorded
//! shared-step losses instead of real training.

use std::collections::VecDeque;

use autogan::search::{EventKind, SearchConfig};

struct Window {
    cap: usize,
    v: VecDeque<f64>,
}

impl Window {
    fn new(cap: usize) -> Self {
        Window { cap, v: VecDeque::new() }
    }

    fn push(&mut self, x: f32) {
        if self.v.len() == self.cap {
            self.v.pop_front();
        }
        self.v.push_back(f64::from(x));
    }

    fn collapsed(&self, threshold: f64) -> bool {
        let n = self.v.len() as f64;
        let mean = self.v.iter().sum::<f64>() / n;
        let var = self.v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        var.sqrt() < threshold
    }
}

pub struct Trace {
    pub events: Vec<EventKind>,
    /// Shared steps per iteration as the pseudocode dictates.
    pub steps: Vec<usize>,
}

/// `losses[it]` holds the `(g, d)` losses the engine produced in iteration
/// `it`. The interpreter decides on its own where each shared phase stops.
pub fn interpret(cfg: &SearchConfig, losses: &[Vec<(f32, f32)>]) -> Trace {
    let per_epoch = cfg.train_size / cfg.d_batch;
    let budget = per_epoch * cfg.shared_epochs_per_iter;
    let mut stage = 0;
    let mut wg = Window::new(cfg.window_len);
    let mut wd = Window::new(cfg.window_len);
    let mut events = Vec::new();
    let mut steps = Vec::new();
    for it in 0..cfg.total_iters {
        let mut flag = false;
        let mut taken = 0;
        for &(g, d) in losses[it].iter().take(budget) {
            wg.push(g);
            wd.push(d);
            taken += 1;
            let full = wg.v.len() == cfg.window_len && wd.v.len() == cfg.window_len;
            if cfg.reset_enabled && full && (wg.collapsed(cfg.reset_threshold) || wd.collapsed(cfg.reset_threshold)) {
                flag = true;
                break;
            }
        }
        steps.push(if flag { taken } else { budget });
        events.push(EventKind::TrainShared { iter: it, stage, reset_flag: flag });
        events.push(EventKind::TrainController { iter: it, stage, steps: cfg.ctrl_steps_per_iter });
        if it > 0 && it % cfg.u_stage == 0 {
            events.push(EventKind::SaveTopK { iter: it, stage });
            stage += 1;
            wg.v.clear();
            wd.v.clear();
            events.push(EventKind::Grow { iter: it, stage });
            events.push(EventKind::NewController { iter: it, stage });
        }
        if flag {
            wg.v.clear();
            wd.v.clear();
            events.push(EventKind::Reset { iter: it, stage });
        }
        if it + 1 == cfg.total_iters {
            events.push(EventKind::SaveTopK { iter: it, stage });
        }
    }
    Trace { events, steps }
}
