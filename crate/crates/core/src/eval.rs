//! Rolling-origin evaluation and the comparison experiments.

use std::collections::HashMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dataset::{Catalog, ContentType, DataError};
use crate::featurize::{split_periods, FeatureError, PeriodSplit, WindowSpec};
use crate::hybrid::{net_seed, train_model, HybridError, Prediction, Routing, TrainingSet};
use crate::nn::{train_nn, CategoricalMode, EmbeddingNet, NetError};
use crate::optim::{OptimError, OptimizerKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("every evaluation period was skipped")]
    AllPeriodsSkipped,
    #[error("catalog has no contents")]
    EmptyCatalog,
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted_hot: bool, actual_hot: bool) {
        match (predicted_hot, actual_hot) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Precision, recall and F1; `None` marks a 0/0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        precision,
        recall,
        f1,
    }
}

/// Fully defined metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodResult {
    pub index: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub n_evaluated: usize,
    pub counts: ConfusionCounts,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPeriod {
    pub index: usize,
    pub start: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub seed: u64,
    pub config_hash: String,
    /// Restricts scoring to contents of one route when present.
    pub route: Option<ContentType>,
    pub periods: Vec<PeriodResult>,
    pub skipped: Vec<SkippedPeriod>,
    /// Arithmetic mean over `periods`.
    pub macro_average: Scores,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Something that can be trained on the past of a fold and predict the
/// fold's new releases.
pub trait PeriodModel {
    fn name(&self) -> String;

    /// Predictions for the test contents of `split` this model scores.
    /// `origin` anchors the release periods.
    fn predict_fold(
        &self,
        catalog: &Catalog,
        origin: NaiveDate,
        split: &PeriodSplit,
        config: &RunConfig,
    ) -> Result<Vec<Prediction>, String>;
}

/// A model trained from scratch per fold with the given routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainedModel(pub Routing);

impl PeriodModel for TrainedModel {
    fn name(&self) -> String {
        self.0.name().to_string()
    }

    fn predict_fold(
        &self,
        catalog: &Catalog,
        origin: NaiveDate,
        split: &PeriodSplit,
        config: &RunConfig,
    ) -> Result<Vec<Prediction>, String> {
        let (model, _) = train_model(catalog, origin, split.cutoff, self.0, config)
            .map_err(|e| format!("training failed: {e}"))?;
        let mut out = Vec::new();
        for id in &split.test_ids {
            let content = catalog.get(id).expect("test id from catalog");
            let t = model.decision_time(content.release_date);
            let obs_type = catalog.classify(content, t);
            if !model.covers(obs_type) {
                continue;
            }
            out.push(
                model
                    .predict(catalog, content, t)
                    .map_err(|e| format!("prediction failed for {id}: {e}"))?,
            );
        }
        Ok(out)
    }
}

/// Per-period train-on-past / test-on-new-releases evaluation.
///
/// Test contents are labeled by their first `label_days` views, ranked
/// jointly within the period. With `route` set, only predictions for
/// contents of that type are scored.
pub fn evaluate_rolling(
    catalog: &Catalog,
    config: &RunConfig,
    model: &dyn PeriodModel,
    route: Option<ContentType>,
) -> Result<EvalReport, EvalError> {
    let timeline = catalog.timeline().ok_or(EvalError::EmptyCatalog)?;
    let (grid, splits) = split_periods(catalog, config.period_days)?;
    let mut periods = Vec::new();
    let mut skipped = Vec::new();
    for split in &splits {
        let skip = |reason: String| SkippedPeriod {
            index: split.index,
            start: split.test.start,
            reason,
        };
        if split.test_ids.is_empty() {
            skipped.push(skip("no releases".into()));
            continue;
        }
        let last_release = split.test.end.pred_opt().expect("date in range");
        if last_release + chrono::Days::new(u64::from(config.label_days)) > timeline.end {
            skipped.push(skip("label window extends past the data".into()));
            continue;
        }
        let ids: Vec<&str> = split.test_ids.iter().map(String::as_str).collect();
        let truth: HashMap<String, bool> = catalog
            .label_release_window(&ids, config.label_days, config.label_quantile)?
            .into_iter()
            .map(|l| (l.content_id, l.label.is_hot()))
            .collect();
        let predictions = match model.predict_fold(catalog, grid.origin, split, config) {
            Ok(p) => p,
            Err(reason) => {
                skipped.push(skip(reason));
                continue;
            }
        };
        let mut counts = ConfusionCounts::default();
        for p in predictions.iter().filter(|p| route.is_none_or(|r| p.route == r)) {
            counts.record(p.label.is_hot(), truth[&p.content_id]);
        }
        if counts.total() == 0 {
            skipped.push(skip("no scored contents".into()));
            continue;
        }
        let m = metrics(&counts);
        let scores = match (m.precision, m.recall, m.f1) {
            (Some(precision), Some(recall), Some(f1)) => Scores {
                precision,
                recall,
                f1,
            },
            _ if config.undefined_metric_as_zero => Scores {
                precision: m.precision.unwrap_or(0.0),
                recall: m.recall.unwrap_or(0.0),
                f1: m.f1.unwrap_or(0.0),
            },
            _ => {
                skipped.push(skip(format!("undefined metric (0/0): {m:?}")));
                continue;
            }
        };
        periods.push(PeriodResult {
            index: split.index,
            start: split.test.start,
            end: split.test.end,
            n_evaluated: counts.total() as usize,
            counts,
            scores,
        });
    }
    if periods.is_empty() {
        return Err(EvalError::AllPeriodsSkipped);
    }
    let n = periods.len() as f64;
    let mean = |f: fn(&Scores) -> f64| periods.iter().map(|p| f(&p.scores)).sum::<f64>() / n;
    let macro_average = Scores {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
    };
    Ok(EvalReport {
        model: model.name(),
        seed: config.seed,
        config_hash: config.hash(),
        route,
        periods,
        skipped,
        macro_average,
    })
}

/// The two-route model against its single-model ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub hybrid: EvalReport,
    pub gbdt_only: EvalReport,
    pub net_only: EvalReport,
}

pub fn run_ablation(catalog: &Catalog, config: &RunConfig) -> Result<AblationReport, EvalError> {
    Ok(AblationReport {
        hybrid: evaluate_rolling(catalog, config, &TrainedModel(Routing::Hybrid), None)?,
        gbdt_only: evaluate_rolling(catalog, config, &TrainedModel(Routing::GbdtOnly), None)?,
        net_only: evaluate_rolling(catalog, config, &TrainedModel(Routing::NetOnly), None)?,
    })
}

/// The hybrid with learned embeddings against one-hot inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingAblation {
    pub embedding: EvalReport,
    pub one_hot: EvalReport,
}

pub fn run_embedding_ablation(
    catalog: &Catalog,
    config: &RunConfig,
) -> Result<EmbeddingAblation, EvalError> {
    let with_mode = |mode| {
        let mut c = config.clone();
        c.net.categorical_mode = mode;
        c
    };
    let model = TrainedModel(Routing::Hybrid);
    Ok(EmbeddingAblation {
        embedding: evaluate_rolling(catalog, &with_mode(CategoricalMode::Embedding), &model, None)?,
        one_hot: evaluate_rolling(catalog, &with_mode(CategoricalMode::OneHot), &model, None)?,
    })
}

/// Training-loss traces of the type-B net under each optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerComparison {
    pub n_rows: usize,
    pub traces: Vec<(OptimizerKind, Vec<f64>)>,
}

impl OptimizerComparison {
    pub fn final_loss(&self, kind: OptimizerKind) -> Option<f64> {
        self.traces
            .iter()
            .find(|(k, _)| *k == kind)
            .and_then(|(_, t)| t.last().copied())
    }

    /// `epoch,<optimizer>...`; epoch 0 is the untrained loss.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch");
        for (k, _) in &self.traces {
            out.push(',');
            out.push_str(k.name());
        }
        out.push('\n');
        let epochs = self.traces.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
        for e in 0..epochs {
            write!(out, "{e}").expect("write to string");
            for (_, t) in &self.traces {
                match t.get(e) {
                    Some(v) => write!(out, ",{v}").expect("write to string"),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Trains the type-B net on every labeled type-B row of the catalog once
/// per optimizer, from the same initialization and with the same batch
/// order, for the full epoch budget.
pub fn run_optimizer_comparison(
    catalog: &Catalog,
    config: &RunConfig,
) -> Result<OptimizerComparison, EvalError> {
    let timeline = catalog.timeline().ok_or(EvalError::EmptyCatalog)?;
    let set = TrainingSet::build(catalog, timeline.start, timeline.end, config)?;
    let data = set.route_data(ContentType::TypeB);
    if data.is_empty() {
        return Err(HybridError::EmptyPartition("U_B").into());
    }
    let mut net_config = config.net.clone();
    net_config.patience = 0;
    let init = EmbeddingNet::new(net_config.shape(set.vocab.cardinalities()), config.seed)?;
    let mut traces = Vec::new();
    for kind in OptimizerKind::ALL {
        let mut net = init.clone();
        let mut opt = config.optimizer.with_kind(kind).build(net.params())?;
        let report = train_nn(&mut net, &data, opt.as_mut(), &net_config, net_seed(config.seed))?;
        traces.push((kind, report.loss_trace));
    }
    Ok(OptimizerComparison {
        n_rows: data.len(),
        traces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub route: ContentType,
    pub r: u32,
    /// Zero when `r = 0` or every period was skipped.
    pub scores: Scores,
    pub n_periods: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSweep {
    pub points: Vec<SweepPoint>,
}

impl WindowSweep {
    pub fn f1(&self, route: ContentType, r: u32) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.route == route && p.r == r)
            .map(|p| p.scores.f1)
    }

    /// `route,r,precision,recall,f1,n_periods`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("route,r,precision,recall,f1,n_periods\n");
        for p in &self.points {
            let route = match p.route {
                ContentType::TypeA => "A",
                ContentType::TypeB => "B",
            };
            writeln!(
                out,
                "{route},{},{},{},{},{}",
                p.r, p.scores.precision, p.scores.recall, p.scores.f1, p.n_periods
            )
            .expect("write to string");
        }
        out
    }
}

/// Re-trains and evaluates one route's sub-model at each window length,
/// scoring only that route's contents. Averages are taken over the periods
/// scored at every positive `r`, so all points of a curve share their
/// periods. `r = 0` leaves nothing to observe and is recorded as zero.
pub fn run_window_sweep(
    catalog: &Catalog,
    config: &RunConfig,
    r_values: &[u32],
    routes: &[ContentType],
) -> Result<WindowSweep, EvalError> {
    let zero = Scores {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    let mut points = Vec::new();
    for &route in routes {
        let model = TrainedModel(match route {
            ContentType::TypeA => Routing::TypeAOnly,
            ContentType::TypeB => Routing::TypeBOnly,
        });
        let mut reports: Vec<(u32, Option<EvalReport>)> = Vec::new();
        for &r in r_values {
            if r == 0 {
                reports.push((r, None));
                continue;
            }
            let mut c = config.clone();
            c.windows = match route {
                ContentType::TypeA => WindowSpec { r_a: r, ..c.windows },
                ContentType::TypeB => WindowSpec { r_b: r, ..c.windows },
            };
            match evaluate_rolling(catalog, &c, &model, Some(route)) {
                Ok(rep) => reports.push((r, Some(rep))),
                Err(EvalError::AllPeriodsSkipped) => reports.push((r, None)),
                Err(e) => return Err(e),
            }
        }
        let mut common: Option<Vec<usize>> = None;
        for (r, rep) in &reports {
            if *r == 0 {
                continue;
            }
            let idx: Vec<usize> = rep
                .as_ref()
                .map(|rep| rep.periods.iter().map(|p| p.index).collect())
                .unwrap_or_default();
            common = Some(match common {
                None => idx,
                Some(c) => c.into_iter().filter(|i| idx.contains(i)).collect(),
            });
        }
        let common = common.unwrap_or_default();
        for (r, rep) in reports {
            let shared: Vec<&PeriodResult> = rep
                .iter()
                .flat_map(|rep| rep.periods.iter())
                .filter(|p| common.contains(&p.index))
                .collect();
            let scores = if shared.is_empty() {
                zero
            } else {
                let n = shared.len() as f64;
                Scores {
                    precision: shared.iter().map(|p| p.scores.precision).sum::<f64>() / n,
                    recall: shared.iter().map(|p| p.scores.recall).sum::<f64>() / n,
                    f1: shared.iter().map(|p| p.scores.f1).sum::<f64>() / n,
                }
            };
            points.push(SweepPoint {
                route,
                r,
                scores,
                n_periods: shared.len(),
            });
        }
    }
    Ok(WindowSweep { points })
}
