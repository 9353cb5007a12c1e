//! Reverse-mode automatic differentiation over a recorded operation list.

use super::kernels::{self, NormMode, UpsampleMode};
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Result<Vec<Option<Tensor>>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A forward pass recorded for differentiation. One graph per pass; it is
/// consumed by [`Graph::backward`] and then dropped.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(usize, String)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        let backward = if requires_grad { Some(backward) } else { None };
        self.nodes.push(Node { value, parents, backward, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn leaf_node(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), backward: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf_node(value, false)
    }

    /// Differentiable leaf not tied to a parameter store.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.leaf_node(value, true)
    }

    /// Trainable parameter; its gradient is routed back to `name`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        let var = self.leaf_node(value, true);
        self.params.push((var.0, name.to_string()));
        Ok(var)
    }

    /// Parameter value used as a constant (frozen for this pass).
    pub fn frozen(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        Ok(self.input(store.value(name)?.clone()))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of parameters registered with [`Graph::param`], in order of use.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(_, n)| n.as_str())
    }

    fn binary_same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, vec![a.0, b.0], Box::new(|g, _, _| Ok(vec![Some(g.clone()), Some(g.clone())]))))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let mut out = self.value(b).scale(-1.0);
        out.add_assign(self.value(a));
        Ok(self.push(out, vec![a.0, b.0], Box::new(|g, _, _| Ok(vec![Some(g.clone()), Some(g.scale(-1.0))]))))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::from_fn(va.shape(), |i| va.data()[i] * vb.data()[i]);
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Box::new(|g, p, _| {
                let ga = Tensor::from_fn(g.shape(), |i| g.data()[i] * p[1].data()[i]);
                let gb = Tensor::from_fn(g.shape(), |i| g.data()[i] * p[0].data()[i]);
                Ok(vec![Some(ga), Some(gb)])
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, vec![a.0], Box::new(move |g, _, _| Ok(vec![Some(g.scale(c))])))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, vec![a.0], Box::new(|g, _, _| Ok(vec![Some(g.clone())])))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(
            out,
            vec![a.0],
            Box::new(|g, p, _| Ok(vec![Some(Tensor::from_fn(g.shape(), |i| if p[0].data()[i] > 0.0 { g.data()[i] } else { 0.0 }))])),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f32::tanh);
        self.push(
            out,
            vec![a.0],
            Box::new(|g, _, y| Ok(vec![Some(Tensor::from_fn(g.shape(), |i| g.data()[i] * (1.0 - y.data()[i] * y.data()[i])))])),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(
            out,
            vec![a.0],
            Box::new(|g, _, y| Ok(vec![Some(Tensor::from_fn(g.shape(), |i| g.data()[i] * y.data()[i] * (1.0 - y.data()[i])))])),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f32::exp);
        self.push(out, vec![a.0], Box::new(|g, _, y| Ok(vec![Some(Tensor::from_fn(g.shape(), |i| g.data()[i] * y.data()[i]))])))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, vec![a.0], Box::new(|g, p, _| Ok(vec![Some(g.reshape(p[0].shape())?)]))))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, vec![a.0], Box::new(|g, p, _| Ok(vec![Some(Tensor::full(p[0].shape(), g.item()))])))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f32;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// `N×C×H×W → N×C`, summing over the spatial axes.
    pub fn sum_spatial(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = kernels::dims4(self.value(a), "sum_spatial")?;
        let out = Tensor::new(vec![n, c], self.value(a).data().chunks_exact(h * w).map(|p| p.iter().sum()).collect())?;
        Ok(self.push(
            out,
            vec![a.0],
            Box::new(move |g, _, _| {
                Ok(vec![Some(Tensor::from_fn(&[n, c, h, w], |i| g.data()[i / (h * w)]))])
            }),
        ))
    }

    /// Columns `start..end` of an `N×D` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let [n, d] = *self.value(a).shape() else {
            return Err(Error::shape("slice_cols", format!("expected 2-D input, got {:?}", self.value(a).shape())));
        };
        if start > end || end > d {
            return Err(Error::shape("slice_cols", format!("range {start}..{end} outside {d} columns")));
        }
        let width = end - start;
        let src = self.value(a).data();
        let out = Tensor::from_fn(&[n, width], |i| src[(i / width) * d + start + i % width]);
        Ok(self.push(
            out,
            vec![a.0],
            Box::new(move |g, _, _| {
                let mut full = Tensor::zeros(&[n, d]);
                for r in 0..n {
                    full.data_mut()[r * d + start..r * d + end].copy_from_slice(&g.data()[r * width..(r + 1) * width]);
                }
                Ok(vec![Some(full)])
            }),
        ))
    }

    /// Row-wise log-softmax of an `N×V` matrix.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let [_, v] = *self.value(a).shape() else {
            return Err(Error::shape("log_softmax", format!("expected 2-D input, got {:?}", self.value(a).shape())));
        };
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_exact_mut(v) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f32>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        Ok(self.push(
            out,
            vec![a.0],
            Box::new(move |g, _, y| {
                let mut dx = g.clone();
                for (drow, (grow, yrow)) in dx.data_mut().chunks_exact_mut(v).zip(g.data().chunks_exact(v).zip(y.data().chunks_exact(v))) {
                    let gs: f32 = grow.iter().sum();
                    for (d, yv) in drow.iter_mut().zip(yrow) {
                        *d -= yv.exp() * gs;
                    }
                }
                Ok(vec![Some(dx)])
            }),
        ))
    }

    /// `out[r] = a[r, index[r]]`, shape `N×1`.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let [n, v] = *self.value(a).shape() else {
            return Err(Error::shape("pick", format!("expected 2-D input, got {:?}", self.value(a).shape())));
        };
        if index.len() != n || index.iter().any(|&i| i >= v) {
            return Err(Error::shape("pick", format!("indices {index:?} invalid for {n}×{v}")));
        }
        let index = index.to_vec();
        let src = self.value(a).data();
        let out = Tensor::from_fn(&[n, 1], |r| src[r * v + index[r]]);
        Ok(self.push(
            out,
            vec![a.0],
            Box::new(move |g, _, _| {
                let mut full = Tensor::zeros(&[n, v]);
                for (r, &i) in index.iter().enumerate() {
                    full.data_mut()[r * v + i] = g.data()[r];
                }
                Ok(vec![Some(full)])
            }),
        ))
    }

    /// Row gather from an `R×D` table.
    pub fn embedding(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let [r, d] = *self.value(table).shape() else {
            return Err(Error::shape("embedding", "table must be 2-D"));
        };
        if rows.iter().any(|&i| i >= r) {
            return Err(Error::shape("embedding", format!("row index out of range for {r} rows")));
        }
        let rows = rows.to_vec();
        let out = self.value(table).select_rows(&rows);
        Ok(self.push(
            out,
            vec![table.0],
            Box::new(move |g, _, _| {
                let mut full = Tensor::zeros(&[r, d]);
                for (k, &i) in rows.iter().enumerate() {
                    for j in 0..d {
                        full.data_mut()[i * d + j] += g.data()[k * d + j];
                    }
                }
                Ok(vec![Some(full)])
            }),
        ))
    }

    /// `x · Wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = kernels::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut parents = vec![x.0, w.0];
        parents.extend(b.map(|b| b.0));
        Ok(self.push(
            out,
            parents,
            Box::new(|g, p, _| {
                let (dx, dw, db) = kernels::linear_backward(p[0], p[1], g)?;
                let mut grads = vec![Some(dx), Some(dw)];
                if p.len() == 3 {
                    grads.push(Some(db));
                }
                Ok(grads)
            }),
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let out = kernels::conv2d_opt(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, padding)?;
        let mut parents = vec![x.0, w.0];
        parents.extend(b.map(|b| b.0));
        Ok(self.push(
            out,
            parents,
            Box::new(move |g, p, _| {
                let (dx, dw, db) = kernels::conv2d_backward(p[0], p[1], g, stride, padding)?;
                let mut grads = vec![Some(dx), Some(dw)];
                if p.len() == 3 {
                    grads.push(Some(db));
                }
                Ok(grads)
            }),
        ))
    }

    pub fn transposed_conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = kernels::transposed_conv2d(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(
            out,
            vec![x.0, w.0, b.0],
            Box::new(|g, p, _| {
                let (dx, dw, db) = kernels::transposed_conv2d_backward(p[0], p[1], g)?;
                Ok(vec![Some(dx), Some(dw), Some(db)])
            }),
        ))
    }

    pub fn upsample(&mut self, x: Var, mode: UpsampleMode) -> Result<Var> {
        let out = kernels::upsample(self.value(x), mode)?;
        Ok(self.push(out, vec![x.0], Box::new(move |g, p, _| Ok(vec![Some(kernels::upsample_backward(p[0].shape(), g, mode)?)]))))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = kernels::avg_pool2(self.value(x))?;
        Ok(self.push(out, vec![x.0], Box::new(|g, p, _| Ok(vec![Some(kernels::avg_pool2_backward(p[0].shape(), g)?)]))))
    }

    /// Normalization with affine parameters; `NormMode::None` returns `x` itself.
    pub fn normalize(&mut self, x: Var, mode: NormMode, gamma: Var, beta: Var, training: bool) -> Result<Var> {
        if mode == NormMode::None {
            return Ok(x);
        }
        let (out, cache) = kernels::normalize_forward(self.value(x), mode, self.value(gamma), self.value(beta), training)?;
        let cache = cache.expect("normalization cache");
        Ok(self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Box::new(move |g, p, _| {
                let (dx, dg, db) = kernels::normalize_backward(p[0].shape(), mode, p[1], &cache, g)?;
                Ok(vec![Some(dx), Some(dg), Some(db)])
            }),
        ))
    }

    /// `W / σ` with `σ = uᵀWv` for fixed power-iteration vectors `u`, `v`.
    /// The gradient flows through `σ` as well as through the numerator.
    pub fn spectral_normalize(&mut self, w: Var, u: &[f32], v: &[f32]) -> Result<Var> {
        let weight = self.value(w);
        let rows = weight.dim(0);
        let cols = weight.numel() / rows;
        if u.len() != rows || v.len() != cols {
            return Err(Error::shape("spectral_normalize", format!("u/v lengths {}/{} vs matrix {rows}×{cols}", u.len(), v.len())));
        }
        let wv = super::spectral::mat_vec(weight.data(), rows, cols, v);
        let sigma = u.iter().zip(&wv).map(|(a, b)| a * b).sum::<f32>().max(super::SPECTRAL_EPS);
        let out = weight.scale(1.0 / sigma);
        let (u, v) = (u.to_vec(), v.to_vec());
        Ok(self.push(
            out,
            vec![w.0],
            Box::new(move |g, _, y| {
                let inner: f32 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                let mut dw = g.clone();
                for (i, row) in dw.data_mut().chunks_exact_mut(cols).enumerate() {
                    for (j, d) in row.iter_mut().enumerate() {
                        *d = (*d - inner * u[i] * v[j]) / sigma;
                    }
                }
                Ok(vec![Some(dw)])
            }),
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let parents: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let parent_grads = backward(&g, &parents, &node.value)?;
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[p].requires_grad {
                    continue;
                }
                if let Some(pg) = pg {
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, String)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Add every parameter gradient into the matching `Parameter::grad`.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (node, name) in &self.params {
            if let Some(g) = &self.grads[*node] {
                store.get_mut(name)?.grad.add_assign(g);
            }
        }
        Ok(())
    }
}
