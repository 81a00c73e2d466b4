//! Second-order gradient-boosted regression trees with logistic loss.
//!
//! Exact greedy split search over presorted feature values. Missing values
//! (`NaN`) are routed by a learned default direction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::{FeatureVector, N_CATEGORICAL, N_NUMERIC};
use crate::nn::sigmoid;

/// Relative tolerance under which two split gains count as tied.
pub const GAIN_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GbdtError {
    #[error("training data is empty")]
    EmptyData,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("invalid gbdt parameter {name}: {reason}")]
    InvalidParams { name: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum gain required to split.
    pub gamma: f64,
    pub max_depth: usize,
    pub n_trees: usize,
    /// Shrinkage applied to every tree.
    pub eta: f64,
    /// Rounds without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Trailing fraction of rows held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            lambda: 1.0,
            gamma: 0.0,
            max_depth: 4,
            n_trees: 200,
            eta: 0.1,
            patience: 20,
            validation_fraction: 0.2,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |name, reason: &str| {
            Err(GbdtError::InvalidParams {
                name,
                reason: reason.into(),
            })
        };
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be finite and non-negative");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be finite and non-negative");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", "must be finite and positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction", "must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x < threshold` go left.
        threshold: f64,
        /// Direction taken by a missing value.
        default_left: bool,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    let v = x[*feature];
                    let go_left = if v.is_nan() {
                        *default_left
                    } else {
                        v < *threshold
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<f64> {
        match self {
            Node::Leaf { weight } => vec![*weight],
            Node::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }
}

/// `-G / (H + lambda)`
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Gain of splitting a node with totals `(g, h)` into `(gl, hl)` and the rest.
pub fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64, gamma: f64) -> f64 {
    let (gr, hr) = (g - gl, h - hl);
    0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(g, h, lambda)) - gamma
}

/// True when `candidate` beats `best` by more than the tie tolerance.
pub fn strictly_better(candidate: f64, best: f64) -> bool {
    candidate > best + GAIN_TIE_TOL * best.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub default_left: bool,
    pub gain: f64,
}

/// Column-major view with per-feature row orderings of the non-missing
/// values.
pub struct Presorted<'a> {
    rows: &'a [Vec<f64>],
    n_features: usize,
    sorted: Vec<Vec<usize>>,
}

impl<'a> Presorted<'a> {
    pub fn new(rows: &'a [Vec<f64>]) -> Result<Self, GbdtError> {
        let n_features = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != n_features) {
            return Err(GbdtError::DimensionMismatch {
                expected: n_features,
                found: r.len(),
            });
        }
        let sorted = (0..n_features)
            .map(|f| {
                let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| !rows[i][f].is_nan()).collect();
                idx.sort_by(|&a, &b| rows[a][f].total_cmp(&rows[b][f]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Ok(Presorted {
            rows,
            n_features,
            sorted,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

/// Best split of the rows flagged in `member`, scanning features in id order
/// and thresholds ascending; ties keep the earlier candidate.
fn best_split(
    data: &Presorted,
    grad: &[f64],
    hess: &[f64],
    member: &[bool],
    totals: (f64, f64),
    params: &GbdtParams,
) -> Option<SplitChoice> {
    let (g_tot, h_tot) = totals;
    let mut best: Option<SplitChoice> = None;
    for f in 0..data.n_features {
        let order: Vec<usize> = data.sorted[f].iter().copied().filter(|&i| member[i]).collect();
        if order.len() < 2 {
            continue;
        }
        let (g_present, h_present) = order
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + grad[i], h + hess[i]));
        let (g_miss, h_miss) = (g_tot - g_present, h_tot - h_present);
        let has_missing = order.len() < member.iter().filter(|&&m| m).count();
        let (mut gl, mut hl) = (0.0, 0.0);
        for k in 0..order.len() - 1 {
            let i = order[k];
            gl += grad[i];
            hl += hess[i];
            let a = data.rows[i][f];
            let b = data.rows[order[k + 1]][f];
            if a == b {
                continue;
            }
            let threshold = a + (b - a) / 2.0;
            let mut candidates = vec![(true, split_gain(gl + g_miss, hl + h_miss, g_tot, h_tot, params.lambda, params.gamma))];
            if has_missing {
                candidates.push((false, split_gain(gl, hl, g_tot, h_tot, params.lambda, params.gamma)));
            }
            for (default_left, gain) in candidates {
                let better = match &best {
                    None => true,
                    Some(b) => strictly_better(gain, b.gain),
                };
                if better {
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        default_left,
                        gain,
                    });
                }
            }
        }
    }
    best.filter(|b| b.gain > 0.0)
}

fn grow(
    data: &Presorted,
    grad: &[f64],
    hess: &[f64],
    member: Vec<bool>,
    depth: usize,
    params: &GbdtParams,
) -> Node {
    let (g, h) = member
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .fold((0.0, 0.0), |(g, h), (i, _)| (g + grad[i], h + hess[i]));
    let leaf = Node::Leaf {
        weight: leaf_weight(g, h, params.lambda),
    };
    if depth >= params.max_depth {
        return leaf;
    }
    let Some(split) = best_split(data, grad, hess, &member, (g, h), params) else {
        return leaf;
    };
    let mut left = vec![false; member.len()];
    let mut right = vec![false; member.len()];
    for (i, &m) in member.iter().enumerate() {
        if !m {
            continue;
        }
        let v = data.rows[i][split.feature];
        let go_left = if v.is_nan() {
            split.default_left
        } else {
            v < split.threshold
        };
        if go_left {
            left[i] = true;
        } else {
            right[i] = true;
        }
    }
    Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        default_left: split.default_left,
        left: Box::new(grow(data, grad, hess, left, depth + 1, params)),
        right: Box::new(grow(data, grad, hess, right, depth + 1, params)),
    }
}

/// Fits one tree to per-row gradients and hessians over all rows.
pub fn fit_tree(data: &Presorted, grad: &[f64], hess: &[f64], params: &GbdtParams) -> Node {
    grow(data, grad, hess, vec![true; grad.len()], 0, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub n_features: usize,
    pub base_score: f64,
    pub eta: f64,
    pub trees: Vec<Node>,
}

impl BoostedEnsemble {
    pub fn raw_score(&self, x: &[f64]) -> Result<f64, GbdtError> {
        if x.len() != self.n_features {
            return Err(GbdtError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(self.base_score + self.eta * sum)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, GbdtError> {
        Ok(sigmoid(self.raw_score(x)?))
    }
}

fn log_loss(p: f64, y: f64) -> f64 {
    crate::nn::loss(p, y)
}

fn check_labels(rows: &[Vec<f64>], labels: &[f64]) -> Result<(), GbdtError> {
    if rows.is_empty() {
        return Err(GbdtError::EmptyData);
    }
    if rows.len() != labels.len() {
        return Err(GbdtError::LengthMismatch {
            rows: rows.len(),
            labels: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&y| y > 0.5).count();
    if pos == 0 || pos == labels.len() {
        return Err(GbdtError::SingleClass);
    }
    Ok(())
}

/// Boosts exactly `rounds` trees; `monitor` receives the ensemble after each
/// round and returns `false` to stop.
fn boost(
    rows: &[Vec<f64>],
    labels: &[f64],
    rounds: usize,
    params: &GbdtParams,
    mut monitor: impl FnMut(&BoostedEnsemble) -> bool,
) -> Result<BoostedEnsemble, GbdtError> {
    let data = Presorted::new(rows)?;
    let rate = labels.iter().sum::<f64>() / labels.len() as f64;
    let mut model = BoostedEnsemble {
        n_features: data.n_features(),
        base_score: (rate / (1.0 - rate)).ln(),
        eta: params.eta,
        trees: Vec::new(),
    };
    let mut scores = vec![model.base_score; rows.len()];
    let mut grad = vec![0.0; rows.len()];
    let mut hess = vec![0.0; rows.len()];
    for _ in 0..rounds {
        for i in 0..rows.len() {
            let p = sigmoid(scores[i]);
            grad[i] = p - labels[i];
            hess[i] = p * (1.0 - p);
        }
        let tree = fit_tree(&data, &grad, &hess, params);
        for (s, x) in scores.iter_mut().zip(rows) {
            *s += params.eta * tree.predict(x);
        }
        model.trees.push(tree);
        if !monitor(&model) {
            break;
        }
    }
    Ok(model)
}

/// Training-set log loss after each round, for diagnostics and tests.
pub fn training_losses(
    rows: &[Vec<f64>],
    labels: &[f64],
    params: &GbdtParams,
) -> Result<Vec<f64>, GbdtError> {
    params.validate()?;
    check_labels(rows, labels)?;
    let mean_loss = |m: &BoostedEnsemble| {
        rows.iter()
            .zip(labels)
            .map(|(x, &y)| log_loss(m.predict(x).expect("checked width"), y))
            .sum::<f64>()
            / rows.len() as f64
    };
    let mut losses = Vec::new();
    let model = boost(rows, labels, params.n_trees, params, |m| {
        losses.push(mean_loss(m));
        true
    })?;
    let mut base = model;
    base.trees.clear();
    losses.insert(0, mean_loss(&base));
    Ok(losses)
}

/// Fits an ensemble. Rows must be in chronological order: the trailing
/// `validation_fraction` picks the number of rounds (patience on validation
/// log loss), then the ensemble is refit on all rows with that many rounds.
pub fn fit_gbdt(
    rows: &[Vec<f64>],
    labels: &[f64],
    params: &GbdtParams,
) -> Result<BoostedEnsemble, GbdtError> {
    params.validate()?;
    check_labels(rows, labels)?;
    let n_val = (rows.len() as f64 * params.validation_fraction).floor() as usize;
    let split = rows.len() - n_val;
    let rounds = if params.patience > 0
        && n_val > 0
        && check_labels(&rows[..split], &labels[..split]).is_ok()
    {
        let (val_x, val_y) = (&rows[split..], &labels[split..]);
        let mut best = f64::INFINITY;
        let mut best_rounds = 0;
        let mut stale = 0;
        boost(&rows[..split], &labels[..split], params.n_trees, params, |m| {
            let loss = val_x
                .iter()
                .zip(val_y)
                .map(|(x, &y)| log_loss(m.predict(x).expect("checked width"), y))
                .sum::<f64>()
                / n_val as f64;
            if loss < best {
                best = loss;
                best_rounds = m.trees.len();
                stale = 0;
            } else {
                stale += 1;
            }
            stale < params.patience
        })?;
        best_rounds
    } else {
        params.n_trees
    };
    boost(rows, labels, rounds, params, |_| true)
}

/// Tree inputs: one indicator column per categorical level (OOV included)
/// followed by the numerics.
pub fn tree_row(fv: &FeatureVector, cardinalities: &[usize; N_CATEGORICAL]) -> Vec<f64> {
    let width: usize = cardinalities.iter().sum::<usize>() + N_NUMERIC;
    let mut row = vec![0.0; width];
    let mut at = 0;
    for (&idx, &m) in fv.cat_indices.iter().zip(cardinalities) {
        if idx < m {
            row[at + idx] = 1.0;
        }
        at += m;
    }
    row[at..].copy_from_slice(&fv.numeric);
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stump_params() -> GbdtParams {
        GbdtParams {
            max_depth: 1,
            ..GbdtParams::default()
        }
    }

    #[test]
    fn pure_node_leaf_weight() {
        let g: f64 = 5.0 * (0.4 - 1.0);
        let h: f64 = 5.0 * 0.4 * 0.6;
        assert!((g - -3.0).abs() < 1e-12);
        assert!((h - 1.2).abs() < 1e-12);
        assert!((leaf_weight(g, h, 1.0) - 3.0 / 2.2).abs() < 1e-12);
    }

    #[test]
    fn perfect_binary_feature_is_chosen_at_root() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 3) as f64, (i % 2) as f64, (i % 5) as f64])
            .collect();
        let labels: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let params = GbdtParams {
            n_trees: 1,
            patience: 0,
            ..GbdtParams::default()
        };
        let m = fit_gbdt(&rows, &labels, &params).unwrap();
        match &m.trees[0] {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 1);
                assert_eq!(*threshold, 0.5);
            }
            leaf => panic!("expected split, got {leaf:?}"),
        }
        let losses = training_losses(&rows, &labels, &params).unwrap();
        assert!(losses[1] < losses[0]);
    }

    #[test]
    fn large_gamma_suppresses_splits() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 2) as f64]).collect();
        let labels: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let params = GbdtParams {
            gamma: 1e6,
            n_trees: 3,
            patience: 0,
            ..GbdtParams::default()
        };
        let m = fit_gbdt(&rows, &labels, &params).unwrap();
        assert!(m.trees.iter().all(|t| matches!(t, Node::Leaf { .. })));
    }

    #[test]
    fn zero_trees_predict_positive_rate() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let labels: Vec<f64> = (0..10).map(|i| if i < 3 { 1.0 } else { 0.0 }).collect();
        let params = GbdtParams {
            n_trees: 0,
            patience: 0,
            ..GbdtParams::default()
        };
        let m = fit_gbdt(&rows, &labels, &params).unwrap();
        assert!((m.predict(&[4.0]).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(
            m.predict(&[1.0, 2.0]),
            Err(GbdtError::DimensionMismatch {
                expected: 1,
                found: 2
            })
        );
    }

    #[test]
    fn constant_leaf_copies_sum() {
        let m = BoostedEnsemble {
            n_features: 1,
            base_score: -0.5,
            eta: 0.1,
            trees: vec![Node::Leaf { weight: 0.7 }; 4],
        };
        assert!((m.raw_score(&[0.0]).unwrap() - (-0.5 + 0.1 * 4.0 * 0.7)).abs() < 1e-15);
    }

    #[test]
    fn duplicated_column_prefers_lower_feature() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 7) as f64, (i % 7) as f64]).collect();
        let labels: Vec<f64> = (0..30).map(|i| if i % 7 > 3 { 1.0 } else { 0.0 }).collect();
        let params = GbdtParams {
            n_trees: 1,
            patience: 0,
            ..stump_params()
        };
        let m = fit_gbdt(&rows, &labels, &params).unwrap();
        assert!(matches!(m.trees[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn missing_values_follow_learned_direction() {
        // missing rows are all positive, like the high values
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![if i % 3 == 0 { f64::NAN } else { (i % 3) as f64 }])
            .collect();
        let labels: Vec<f64> = (0..30).map(|i| if i % 3 == 1 { 0.0 } else { 1.0 }).collect();
        let params = GbdtParams {
            n_trees: 1,
            patience: 0,
            ..stump_params()
        };
        let m = fit_gbdt(&rows, &labels, &params).unwrap();
        match &m.trees[0] {
            Node::Split { default_left, threshold, .. } => {
                assert_eq!(*threshold, 1.5);
                assert!(!default_left);
            }
            leaf => panic!("{leaf:?}"),
        }
        assert!(m.predict(&[f64::NAN]).unwrap() > 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        let rows = vec![vec![1.0], vec![2.0]];
        assert_eq!(
            fit_gbdt(&rows, &[1.0, 1.0], &GbdtParams::default()),
            Err(GbdtError::SingleClass)
        );
    }

    #[test]
    fn serde_round_trip_preserves_predictions() {
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i * 7 % 11) as f64, (i % 4) as f64 * 0.3])
            .collect();
        let labels: Vec<f64> = (0..60).map(|i| ((i * 7 % 11) > 5) as u8 as f64).collect();
        let m = fit_gbdt(&rows, &labels, &GbdtParams::default()).unwrap();
        let back: BoostedEnsemble = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        for x in &rows {
            assert_eq!(m.predict(x).unwrap().to_bits(), back.predict(x).unwrap().to_bits());
        }
    }

    #[test]
    fn tree_row_layout() {
        let fv = FeatureVector {
            cat_indices: [1, 0, 2, 0, 0, 0, 1],
            numeric: [0.5, -1.0, 2.0],
            text: vec![],
            is_type_a: true,
        };
        let row = tree_row(&fv, &[2, 1, 3, 1, 1, 1, 2]);
        assert_eq!(
            row,
            vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.5, -1.0, 2.0]
        );
    }

    fn dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (5usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::collection::vec(0u8..6, 3), n),
                proptest::collection::vec(proptest::bool::ANY, n),
            )
                .prop_map(|(x, y)| {
                    let mut y: Vec<f64> = y.into_iter().map(|b| b as u8 as f64).collect();
                    y[0] = 0.0;
                    y[1] = 1.0;
                    (
                        x.into_iter()
                            .map(|r| r.into_iter().map(f64::from).collect())
                            .collect(),
                        y,
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn training_loss_never_increases((x, y) in dataset()) {
            let params = GbdtParams { n_trees: 15, patience: 0, ..GbdtParams::default() };
            let losses = training_losses(&x, &y, &params).unwrap();
            for w in losses.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", losses);
            }
        }

        #[test]
        fn split_gain_ignores_row_order((x, y) in dataset(), rot in 0usize..60) {
            let params = GbdtParams { n_trees: 1, patience: 0, max_depth: 1, ..GbdtParams::default() };
            let k = rot % x.len();
            let mut xr = x.clone();
            let mut yr = y.clone();
            xr.rotate_left(k);
            yr.rotate_left(k);
            let a = fit_gbdt(&x, &y, &params).unwrap();
            let b = fit_gbdt(&xr, &yr, &params).unwrap();
            match (&a.trees[0], &b.trees[0]) {
                (Node::Split { feature: fa, threshold: ta, .. }, Node::Split { feature: fb, threshold: tb, .. }) => {
                    prop_assert_eq!(fa, fb);
                    prop_assert_eq!(ta, tb);
                }
                (Node::Leaf { .. }, Node::Leaf { .. }) => {}
                (l, r) => prop_assert!(false, "{:?} vs {:?}", l, r),
            }
        }
    }
}
