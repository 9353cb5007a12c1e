use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 100;
const ASYMMETRY_TOL: f64 = 1e-6;
const NEGATIVE_EIG_TOL: f64 = 1e-6;

/// Square `n×n` matrix of `f64`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("matrix", format!("{} values for a {n}×{n} matrix", data.len())));
        }
        Ok(Matrix { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = v;
        }
        m
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.n;
        Matrix { n, data: (0..n * n).map(|idx| self.at(idx % n, idx / n)).collect() }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                m = m.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        m
    }

    pub fn symmetrized(&self) -> Matrix {
        let t = self.transpose();
        Matrix { n: self.n, data: self.data.iter().zip(&t.data).map(|(a, b)| 0.5 * (a + b)).collect() }
    }
}

/// Eigenvalues and eigenvectors (columns of `vectors`) of a symmetric matrix
/// by cyclic Jacobi rotations.
pub fn symmetric_eigen(m: &Matrix) -> (Vec<f64>, Matrix) {
    let n = m.n;
    let mut a = m.data.clone();
    let mut v = Matrix::identity(n).data;
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off.sqrt() <= 1e-15 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), Matrix { n, data: v })
}

fn check_symmetric(m: &Matrix) -> Result<Matrix> {
    let tol = ASYMMETRY_TOL * m.max_abs().max(1.0);
    if m.max_asymmetry() > tol {
        return Err(Error::Input(format!("matrix asymmetry {:e} exceeds {tol:e}", m.max_asymmetry())));
    }
    Ok(m.symmetrized())
}

/// Eigenvalues of a symmetric PSD matrix, tiny negatives clamped to zero.
pub(crate) fn psd_eigenvalues(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let sym = check_symmetric(m)?;
    let (vals, vecs) = symmetric_eigen(&sym);
    let tol = NEGATIVE_EIG_TOL * sym.max_abs().max(1.0);
    let mut out = Vec::with_capacity(vals.len());
    for v in vals {
        if v < -tol {
            return Err(Error::NotPsd(v));
        }
        out.push(v.max(0.0));
    }
    Ok((out, vecs))
}

/// Symmetric square root `S` with `S·S ≈ M`.
pub fn matrix_sqrt_psd(m: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = psd_eigenvalues(m)?;
    let n = m.n;
    let mut out = Matrix::zeros(n);
    for (k, lam) in vals.iter().enumerate() {
        let s = lam.sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = vecs.at(i, k) * s;
            for j in 0..n {
                out.data[i * n + j] += vik * vecs.at(j, k);
            }
        }
    }
    Ok(out.symmetrized())
}
