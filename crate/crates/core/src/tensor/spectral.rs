use super::Tensor;
use crate::error::{Error, Result};

/// Floor for the singular-value estimate and for vector norms.
pub const SPECTRAL_EPS: f32 = 1e-12;

#[derive(Clone, Debug)]
pub struct SpectralEstimate {
    pub sigma: f32,
    /// Left singular vector estimate (length = rows), to be persisted.
    pub u: Vec<f32>,
    /// Right singular vector estimate (length = cols).
    pub v: Vec<f32>,
    pub normalized: Tensor,
}

fn unit(mut x: Vec<f32>) -> Option<Vec<f32>> {
    let norm = x.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm <= SPECTRAL_EPS {
        return None;
    }
    x.iter_mut().for_each(|v| *v /= norm);
    Some(x)
}

pub(crate) fn mat_vec(w: &[f32], rows: usize, cols: usize, v: &[f32]) -> Vec<f32> {
    w.chunks_exact(cols).take(rows).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub(crate) fn mat_t_vec(w: &[f32], cols: usize, u: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; cols];
    for (row, &ui) in w.chunks_exact(cols).zip(u) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * ui;
        }
    }
    out
}

/// Power iteration on `weight` viewed as a `shape[0] × rest` matrix.
///
/// Starts from the unit vector `u`, runs `iters` rounds and returns the
/// singular-value estimate `uᵀWv`, the refreshed vectors and `W / σ`.
/// A zero matrix yields `σ = SPECTRAL_EPS` and leaves `u` unchanged.
pub fn spectral_power_iteration(weight: &Tensor, u: &[f32], iters: usize) -> Result<SpectralEstimate> {
    let rows = weight.dim(0);
    let cols = weight.numel() / rows.max(1);
    if u.len() != rows {
        return Err(Error::shape("spectral_power_iteration", format!("u has length {} but weight has {rows} rows", u.len())));
    }
    let w = weight.data();
    let mut u = u.to_vec();
    let mut v = unit(mat_t_vec(w, cols, &u)).unwrap_or_else(|| vec![0.0; cols]);
    for _ in 0..iters {
        match unit(mat_t_vec(w, cols, &u)) {
            Some(nv) => v = nv,
            None => break,
        }
        match unit(mat_vec(w, rows, cols, &v)) {
            Some(nu) => u = nu,
            None => break,
        }
    }
    let wv = mat_vec(w, rows, cols, &v);
    let sigma = u.iter().zip(&wv).map(|(a, b)| a * b).sum::<f32>().max(SPECTRAL_EPS);
    let normalized = weight.scale(1.0 / sigma);
    Ok(SpectralEstimate { sigma, u, v, normalized })
}
