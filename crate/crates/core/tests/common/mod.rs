//! Independent reference implementations shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use hotcold::featurize::{FeatureVector, N_CATEGORICAL};
use hotcold::gbdt::{strictly_better, GbdtParams, Node};
use hotcold::nn::{sigmoid, CategoricalMode, EmbeddingNet, NetShape, P_CLAMP};
use hotcold::optim::{Ftrl, FtrlParams, Optimizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Minimizes a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..400 {
        if hi - lo < 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    // the kink at zero is the minimizer of every L1-dominated coordinate
    let mid = 0.5 * (lo + hi);
    if lo <= 0.0 && hi >= 0.0 && f(0.0) <= f(mid) {
        0.0
    } else {
        mid
    }
}

/// One coordinate's FTRL objective after a history of steps:
/// `sum_s g_s w + 1/2 sum_s sigma_s (w - w_s)^2 + (beta/(2 alpha) + lambda2/2) w^2 + lambda1 |w|`,
/// where `w_s` is the iterate before step `s` and
/// `sigma_s = (sqrt(n_s) - sqrt(n_{s-1})) / alpha`.
pub struct FtrlObjective {
    pub params: FtrlParams,
    pub g_sum: f64,
    pub n: f64,
    /// `(sigma_s, w_s)` per step.
    pub prox: Vec<(f64, f64)>,
}

impl FtrlObjective {
    pub fn new(params: FtrlParams) -> Self {
        FtrlObjective {
            params,
            g_sum: 0.0,
            n: 0.0,
            prox: Vec::new(),
        }
    }

    pub fn push(&mut self, g: f64, w_before: f64) {
        let n_new = self.n + g * g;
        let sigma = (n_new.sqrt() - self.n.sqrt()) / self.params.alpha;
        self.prox.push((sigma, w_before));
        self.n = n_new;
        self.g_sum += g;
    }

    pub fn value(&self, w: f64) -> f64 {
        let p = &self.params;
        let prox: f64 = self.prox.iter().map(|&(s, ws)| 0.5 * s * (w - ws).powi(2)).sum();
        self.g_sum * w + prox + (p.beta / (2.0 * p.alpha) + p.lambda2 / 2.0) * w * w + p.lambda1 * w.abs()
    }

    pub fn argmin(&self) -> f64 {
        let p = &self.params;
        let curvature = self.n.sqrt() / p.alpha + p.beta / p.alpha + p.lambda2;
        let linear = self.g_sum.abs() + self.prox.iter().map(|&(s, ws)| (s * ws).abs()).sum::<f64>();
        let bound = (linear + p.lambda1) / curvature + 1.0;
        golden_section(|w| self.value(w), -bound, bound)
    }
}

/// Outcome of replaying random gradient sequences through [`Ftrl`] and the
/// direct minimizer.
#[derive(Debug, Default)]
pub struct FtrlCheck {
    pub max_abs_err: f64,
    pub steps: usize,
    /// Coordinates with `|z| <= lambda1` whose weight was not exactly 0.
    pub sparsity_violations: usize,
    /// Coordinates checked against the sparsity law.
    pub sparse_checked: usize,
}

pub fn ftrl_oracle_run(n_sequences: usize, dim: usize, steps: usize, seed: u64) -> FtrlCheck {
    let mut r = rng(seed);
    let mut out = FtrlCheck::default();
    for _ in 0..n_sequences {
        let params = FtrlParams {
            alpha: r.random_range(0.01..1.0),
            beta: r.random_range(0.0..2.0),
            lambda1: r.random_range(0.001..0.5),
            lambda2: if r.random_bool(0.5) { r.random_range(0.0..1.0) } else { 0.0 },
        };
        let mut ftrl = Ftrl::new(dim, params).unwrap();
        let mut w = vec![0.0; dim];
        let mut objectives: Vec<FtrlObjective> = (0..dim).map(|_| FtrlObjective::new(params)).collect();
        let scale = r.random_range(0.1..3.0);
        for _ in 0..steps {
            let g: Vec<f64> = (0..dim)
                .map(|_| if r.random_bool(0.1) { 0.0 } else { r.random_range(-scale..scale) })
                .collect();
            for i in 0..dim {
                objectives[i].push(g[i], w[i]);
            }
            ftrl.step(&g, &mut w).unwrap();
            out.steps += 1;
            for i in 0..dim {
                let err = (w[i] - objectives[i].argmin()).abs();
                out.max_abs_err = out.max_abs_err.max(err);
                if ftrl.z[i].abs() <= params.lambda1 {
                    out.sparse_checked += 1;
                    if w[i] != 0.0 {
                        out.sparsity_violations += 1;
                    }
                }
            }
        }
    }
    out
}

/// Random small network shape.
pub fn random_shape(r: &mut impl Rng) -> NetShape {
    let mut cardinalities = [0; N_CATEGORICAL];
    for c in &mut cardinalities {
        *c = r.random_range(1..5);
    }
    let n_hidden = r.random_range(1..3);
    NetShape {
        cardinalities,
        embed_dim: r.random_range(1..4),
        text_dim: r.random_range(1..4),
        text_buckets: r.random_range(2..12),
        hidden: (0..n_hidden).map(|_| r.random_range(1..6)).collect(),
        mode: if r.random_bool(0.25) {
            CategoricalMode::OneHot
        } else {
            CategoricalMode::Embedding
        },
    }
}

pub fn random_features(shape: &NetShape, r: &mut impl Rng) -> FeatureVector {
    let mut cat_indices = [0; N_CATEGORICAL];
    for (i, c) in cat_indices.iter_mut().enumerate() {
        *c = r.random_range(0..shape.cardinalities[i]);
    }
    let mut text: Vec<(u32, u32)> = Vec::new();
    for b in 0..shape.text_buckets as u32 {
        if r.random_bool(0.4) {
            text.push((b, r.random_range(1..4)));
        }
    }
    FeatureVector {
        cat_indices,
        numeric: [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)],
        text,
        is_type_a: r.random_bool(0.5),
    }
}

/// Which linear piece of the hard-sigmoid each hidden unit sits on, and
/// whether the output probability is clamped.
fn regime(net: &EmbeddingNet, fv: &FeatureVector) -> (Vec<i8>, bool) {
    let act = net.forward(fv).unwrap();
    let pre = act.pre_activations();
    let pieces = pre[..pre.len() - 1]
        .iter()
        .flatten()
        .map(|&z| {
            if z < -2.5 {
                -1
            } else if z > 2.5 {
                1
            } else {
                0
            }
        })
        .collect();
    let raw = sigmoid(act.logit);
    (pieces, raw <= P_CLAMP || raw >= 1.0 - P_CLAMP)
}

/// Largest relative error between `backward` and central differences over
/// every parameter whose +-h perturbation stays on one linear piece.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

pub const FD_STEP: f64 = 1e-4;
/// Gradients below this magnitude are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

pub fn grad_check(net: &EmbeddingNet, fv: &FeatureVector, y: f64, out: &mut GradCheck) {
    let analytic = net.backward(fv, y).unwrap();
    let mut probe = net.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let w = net.params()[i];
        probe.params_mut()[i] = w + FD_STEP;
        let plus_regime = regime(&probe, fv);
        let lp = probe.mean_loss(&[(fv.clone(), y)]).unwrap();
        probe.params_mut()[i] = w - FD_STEP;
        let minus_regime = regime(&probe, fv);
        let lm = probe.mean_loss(&[(fv.clone(), y)]).unwrap();
        probe.params_mut()[i] = w;
        if plus_regime != minus_regime || plus_regime.1 {
            out.skipped_kinks += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        out.max_rel_err = out.max_rel_err.max(rel);
        out.checked += 1;
    }
}

/// Fills every parameter with `U(-spread, spread)`.
pub fn randomize(net: &mut EmbeddingNet, spread: f64, r: &mut impl Rng) {
    for p in net.params_mut() {
        *p = r.random_range(-spread..spread);
    }
}

/// Greedy tree built by enumerating every candidate threshold and summing
/// gradients directly. Rows must have no missing values.
pub fn brute_force_tree(rows: &[Vec<f64>], grad: &[f64], hess: &[f64], params: &GbdtParams) -> Node {
    let all: Vec<usize> = (0..rows.len()).collect();
    brute_grow(rows, grad, hess, &all, 0, params)
}

fn brute_grow(rows: &[Vec<f64>], grad: &[f64], hess: &[f64], members: &[usize], depth: usize, params: &GbdtParams) -> Node {
    let sum = |idx: &[usize]| -> (f64, f64) {
        idx.iter().fold((0.0, 0.0), |(g, h), &i| (g + grad[i], h + hess[i]))
    };
    let (g, h) = sum(members);
    let leaf = Node::Leaf {
        weight: -g / (h + params.lambda),
    };
    if depth >= params.max_depth {
        return leaf;
    }
    let obj = |g: f64, h: f64| g * g / (h + params.lambda);
    let mut best: Option<(usize, f64, f64)> = None;
    let n_features = rows.first().map_or(0, Vec::len);
    #[allow(clippy::needless_range_loop)]
    for f in 0..n_features {
        let mut values: Vec<f64> = members.iter().map(|&i| rows[i][f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let threshold = pair[0] + (pair[1] - pair[0]) / 2.0;
            let left: Vec<usize> = members.iter().copied().filter(|&i| rows[i][f] < threshold).collect();
            let (gl, hl) = sum(&left);
            let gain = 0.5 * (obj(gl, hl) + obj(g - gl, h - hl) - obj(g, h)) - params.gamma;
            if best.is_none_or(|(_, _, b)| strictly_better(gain, b)) {
                best = Some((f, threshold, gain));
            }
        }
    }
    match best {
        Some((feature, threshold, gain)) if gain > 0.0 => {
            let (l, r): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| rows[i][feature] < threshold);
            Node::Split {
                feature,
                threshold,
                default_left: true,
                left: Box::new(brute_grow(rows, grad, hess, &l, depth + 1, params)),
                right: Box::new(brute_grow(rows, grad, hess, &r, depth + 1, params)),
            }
        }
        _ => leaf,
    }
}

/// Structure equal and every threshold and leaf weight within `tol`.
pub fn trees_match(a: &Node, b: &Node, tol: f64) -> bool {
    match (a, b) {
        (Node::Leaf { weight: x }, Node::Leaf { weight: y }) => (x - y).abs() <= tol,
        (
            Node::Split {
                feature: fa,
                threshold: ta,
                left: la,
                right: ra,
                ..
            },
            Node::Split {
                feature: fb,
                threshold: tb,
                left: lb,
                right: rb,
                ..
            },
        ) => fa == fb && (ta - tb).abs() <= tol && trees_match(la, lb, tol) && trees_match(ra, rb, tol),
        _ => false,
    }
}

/// Random dataset with a mix of continuous and small-integer columns plus
/// logistic gradients at random base scores.
pub fn random_tree_data(r: &mut impl Rng) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = r.random_range(2..=200);
    let d = r.random_range(1..6);
    let discrete: Vec<bool> = (0..d).map(|_| r.random_bool(0.3)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            discrete
                .iter()
                .map(|&disc| if disc { r.random_range(0..4) as f64 } else { r.random_range(-5.0..5.0) })
                .collect()
        })
        .collect();
    let (mut grad, mut hess) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for row in &rows {
        let signal = row[0] * 0.8;
        let y = if r.random_bool(sigmoid(signal)) { 1.0 } else { 0.0 };
        let p: f64 = r.random_range(0.05..0.95);
        grad.push(p - y);
        hess.push(p * (1.0 - p));
    }
    (rows, grad, hess)
}

pub fn random_gbdt_params(r: &mut impl Rng) -> GbdtParams {
    GbdtParams {
        lambda: r.random_range(0.0..2.0),
        gamma: if r.random_bool(0.5) { 0.0 } else { r.random_range(0.0..0.5) },
        max_depth: r.random_range(1..=2),
        ..GbdtParams::default()
    }
}
