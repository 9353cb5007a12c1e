//! Central finite differences against the tape's reverse pass.

use autogan::controller::Controller;
use autogan::tensor::{lstm_step, Graph, NormMode, Tensor, UpsampleMode, Var};
use autogan::Result;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f32 = 1e-2;
const PROBES: usize = 48;

type Op<'a> = &'a dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

fn projected(inputs: &[Tensor], r: &Tensor, f: Op) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let y = f(&mut g, &vars).expect("forward");
    g.value(y).data().iter().zip(r.data()).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and numeric
/// gradients of `Σ r·f(inputs)` over a sample of input coordinates.
pub fn check(inputs: &[Tensor], f: Op, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let y = f(&mut g, &vars).expect("forward");
    let r = Tensor::randn(g.value(y).shape(), 1.0, &mut rng);
    let rv = g.input(r.clone());
    let prod = g.mul(y, rv).expect("mul");
    let loss = g.sum_all(prod);
    let grads = g.backward(loss).expect("backward");
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let len = inputs[k].numel();
        for i in sample(&mut rng, len, PROBES.min(len)) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= EPS;
            let numeric = (projected(&plus, &r, f) - projected(&minus, &r, f)) / (2.0 * f64::from(EPS));
            let a = f64::from(analytic.data()[i]);
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn uniform(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    Tensor::uniform(shape, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Surrogate policy-gradient loss `−[A·Σ log π + λ·Σ H]` differentiated
/// with respect to every controller parameter.
fn controller_surrogate(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctrl = Controller::new(1, 8, &mut rng).unwrap();
    let beam_seed: Vec<f32> = (0..8).map(|i| 0.2 * (i as f32 - 3.5)).collect();
    let tokens = ctrl.sample(Some(&beam_seed), &mut rng).unwrap().tokens;
    let (advantage, lambda) = (0.7f32, 0.4f32);
    let loss_of = |c: &Controller| -> f64 {
        let s = c.log_prob_and_entropy(&tokens, Some(&beam_seed)).unwrap();
        -(f64::from(advantage) * f64::from(s.total_log_prob) + f64::from(lambda) * f64::from(s.total_entropy))
    };
    let mut g = Graph::new();
    let vars = ctrl.score_graph(&mut g, &tokens, Some(&beam_seed)).unwrap();
    let a = g.scale(vars.total_log_prob, advantage);
    let h = g.scale(vars.total_entropy, lambda);
    let sum = g.add(a, h).unwrap();
    let loss = g.scale(sum, -1.0);
    let grads = g.backward(loss).unwrap();
    let mut store = ctrl.params().clone();
    store.zero_grad();
    grads.accumulate_into(&mut store).unwrap();
    let names: Vec<String> = store.names().map(String::from).collect();
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for name in &names {
        let len = store.value(name).unwrap().numel();
        for i in sample(&mut rng, len, 16.min(len)) {
            let mut plus = ctrl.clone();
            plus.params_mut().get_mut(name).unwrap().value.data_mut()[i] += EPS;
            let mut minus = ctrl.clone();
            minus.params_mut().get_mut(name).unwrap().value.data_mut()[i] -= EPS;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * f64::from(EPS));
            let a = f64::from(store.get(name).unwrap().grad.data()[i]);
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
}

/// Every differentiable op on small random instances, as `(name, error)`.
pub fn suite(seed: u64) -> Vec<(&'static str, f64)> {
    let s = |k: u64| seed.wrapping_mul(1000).wrapping_add(k);
    let mut out = Vec::new();
    out.push((
        "conv2d 3x3 stride 1",
        check(
            &[randn(&[2, 3, 5, 5], s(1)), randn(&[4, 3, 3, 3], s(2)), randn(&[4], s(3))],
            &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
            s(4),
        ),
    ));
    out.push((
        "conv2d 3x3 stride 2",
        check(&[randn(&[2, 2, 6, 6], s(5)), randn(&[3, 2, 3, 3], s(6))], &|g, v| g.conv2d(v[0], v[1], None, 2, 1), s(7)),
    ));
    out.push((
        "conv2d 1x1",
        check(&[randn(&[2, 3, 4, 4], s(8)), randn(&[2, 3, 1, 1], s(9))], &|g, v| g.conv2d(v[0], v[1], None, 1, 0), s(10)),
    ));
    out.push((
        "transposed conv2d",
        check(
            &[randn(&[2, 3, 3, 3], s(11)), randn(&[3, 2, 4, 4], s(12)), randn(&[2], s(13))],
            &|g, v| g.transposed_conv2d(v[0], v[1], v[2]),
            s(14),
        ),
    ));
    out.push((
        "upsample bilinear",
        check(&[randn(&[2, 2, 3, 3], s(15))], &|g, v| g.upsample(v[0], UpsampleMode::Bilinear), s(16)),
    ));
    out.push((
        "upsample nearest",
        check(&[randn(&[1, 2, 3, 3], s(17))], &|g, v| g.upsample(v[0], UpsampleMode::Nearest), s(18)),
    ));
    for (name, mode) in [("batch norm", NormMode::Batch), ("instance norm", NormMode::Instance)] {
        out.push((
            name,
            check(
                &[randn(&[3, 2, 3, 3], s(19)), uniform(&[2], 0.5, 1.5, s(20)), randn(&[2], s(21))],
                &|g, v| g.normalize(v[0], mode, v[1], v[2], true),
                s(22),
            ),
        ));
    }
    out.push((
        "lstm step",
        check(
            &[
                randn(&[2, 3], s(23)),
                randn(&[2, 4], s(24)),
                randn(&[2, 4], s(25)),
                uniform(&[16, 3], -0.5, 0.5, s(26)),
                uniform(&[16, 4], -0.5, 0.5, s(27)),
                uniform(&[16], -0.5, 0.5, s(28)),
            ],
            &|g, v| {
                let (h, c) = lstm_step(g, v[0], v[1], v[2], v[3], v[4], v[5])?;
                let hc = g.add(h, c)?;
                g.mul(hc, h)
            },
            s(29),
        ),
    ));
    out.push((
        "linear + log_softmax",
        check(
            &[randn(&[3, 4], s(30)), randn(&[5, 4], s(31)), randn(&[5], s(32))],
            &|g, v| {
                let l = g.linear(v[0], v[1], Some(v[2]))?;
                g.log_softmax(l)
            },
            s(33),
        ),
    ));
    out.push(("controller surrogate loss", controller_surrogate(s(34))));
    out
}
