use std::collections::VecDeque;

/// The most recent `capacity` training losses.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWindow {
    capacity: usize,
    values: VecDeque<f32>,
}

impl LossWindow {
    pub fn new(capacity: usize) -> Self {
        LossWindow { capacity, values: VecDeque::with_capacity(capacity) }
    }

    pub fn from_values(capacity: usize, values: &[f32]) -> Self {
        let mut w = LossWindow::new(capacity);
        values.iter().for_each(|&v| w.push(v));
        w
    }

    pub fn push(&mut self, value: f32) {
        if self.capacity == 0 {
            return;
        }
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(value);
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.capacity > 0 && self.values.len() == self.capacity
    }

    pub fn values(&self) -> Vec<f32> {
        self.values.iter().copied().collect()
    }

    /// Population standard deviation, defined only once the window is full.
    pub fn std(&self) -> Option<f64> {
        if !self.is_full() {
            return None;
        }
        let n = self.values.len() as f64;
        let mean = self.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        Some(var.sqrt())
    }
}

/// True iff both windows are full and either standard deviation is strictly
/// below `threshold`.
pub fn dynamic_reset_check(window_g: &LossWindow, window_d: &LossWindow, threshold: f64) -> bool {
    match (window_g.std(), window_d.std()) {
        (Some(sg), Some(sd)) => sg < threshold || sd < threshold,
        _ => false,
    }
}
