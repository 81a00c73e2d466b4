//! The two-route predictor: boosted trees for contents with released prior
//! works, the embedding net for everything else.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{RunConfig, ThresholdMode};
use crate::dataset::{hot_count, Catalog, ContentRecord, ContentType, DataError, Popularity};
use crate::featurize::{
    build_vocab, encode, observe, raw_numeric, FeatureError, FeatureVector, Observation,
    PeriodGrid, Scaler, VocabularySet, WindowSpec,
};
use crate::gbdt::{fit_gbdt, tree_row, BoostedEnsemble, GbdtError};
use crate::nn::{train_nn, EmbeddingNet, NetError, TrainReport};
use crate::optim::OptimError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("{0} empty")]
    EmptyPartition(&'static str),
    #[error("no labelable training contents before {0}")]
    NoTrainingData(NaiveDate),
    #[error("model has no {0} sub-model")]
    MissingSubModel(&'static str),
    #[error("all {0} validation scores are equal; use a fixed threshold (default 0.5) instead")]
    DegenerateScores(usize),
    #[error("threshold calibration needs at least one score")]
    EmptyScores,
    #[error("target hot fraction {0} outside (0, 1]")]
    InvalidTarget(f64),
    #[error("unsupported model format_version {0}")]
    UnsupportedVersion(u32),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("gradient boosting: {0}")]
    Gbdt(#[from] GbdtError),
    #[error("embedding net: {0}")]
    Net(#[from] NetError),
    #[error("optimizer: {0}")]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which sub-models exist and how contents are routed to them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// Trees for type A, net for type B.
    Hybrid,
    /// One tree ensemble for every content.
    GbdtOnly,
    /// One net for every content.
    NetOnly,
    /// Trees for type A; type-B contents are not scored.
    TypeAOnly,
    /// Net for type B; type-A contents are not scored.
    TypeBOnly,
}

impl Routing {
    pub fn name(self) -> &'static str {
        match self {
            Routing::Hybrid => "hybrid",
            Routing::GbdtOnly => "gbdt_only",
            Routing::NetOnly => "net_only",
            Routing::TypeAOnly => "type_a_only",
            Routing::TypeBOnly => "type_b_only",
        }
    }

    /// Sub-model used for a content of type `ty`, if any.
    pub fn sub_model(self, ty: ContentType) -> Option<SubModel> {
        match (self, ty) {
            (Routing::Hybrid | Routing::TypeAOnly, ContentType::TypeA) => Some(SubModel::Gbdt),
            (Routing::Hybrid | Routing::TypeBOnly, ContentType::TypeB) => Some(SubModel::Net),
            (Routing::GbdtOnly, _) => Some(SubModel::Gbdt),
            (Routing::NetOnly, _) => Some(SubModel::Net),
            _ => None,
        }
    }

    fn scores(self, ty: ContentType) -> bool {
        self.sub_model(ty).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubModel {
    Gbdt,
    Net,
}

/// A labeled training content with its pre-release observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub content_id: String,
    pub decision_time: NaiveDate,
    pub observation: Observation,
    pub hot: bool,
}

/// Labeled rows available at `as_of`.
///
/// For each route with window `r`, a release period is usable once every
/// content released in it has `r` days of post-release logs before `as_of`.
/// All contents of a usable period are ranked jointly by their first-`r`-day
/// views and the top `q` fraction is hot; the period's contents of that route
/// become rows, observed at the period start. Rows are returned in release
/// order.
pub fn training_rows(
    catalog: &Catalog,
    grid: &PeriodGrid,
    as_of: NaiveDate,
    windows: &WindowSpec,
    q: f64,
) -> Result<Vec<TrainingRow>, HybridError> {
    windows.validate()?;
    let mut by_period: Vec<(i64, Vec<&ContentRecord>)> = Vec::new();
    for c in catalog.contents().iter().filter(|c| c.release_date < as_of) {
        let p = grid.index_of(c.release_date);
        match by_period.last_mut() {
            Some((last, members)) if *last == p => members.push(c),
            _ => by_period.push((p, vec![c])),
        }
    }
    let mut rows = Vec::new();
    for (p, members) in &by_period {
        let start = grid.start_of(*p);
        let last_release = grid.start_of(p + 1).pred_opt().expect("date in range");
        for route in [ContentType::TypeA, ContentType::TypeB] {
            let r = windows.for_type(route);
            if last_release + chrono::Days::new(u64::from(r)) > as_of {
                continue;
            }
            let ids: Vec<&str> = members.iter().map(|c| c.content_id.as_str()).collect();
            let labels = catalog.label_release_window(&ids, r, q)?;
            for (c, label) in members.iter().zip(ordered_labels(&ids, labels)) {
                let obs = observe(catalog, c, start, windows)?;
                if obs.content_type == route {
                    rows.push(TrainingRow {
                        content_id: c.content_id.clone(),
                        decision_time: start,
                        observation: obs,
                        hot: label.is_hot(),
                    });
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        let ra = catalog.get(&a.content_id).map(|c| c.release_date);
        let rb = catalog.get(&b.content_id).map(|c| c.release_date);
        ra.cmp(&rb).then_with(|| a.content_id.cmp(&b.content_id))
    });
    Ok(rows)
}

/// Labels aligned with `ids`.
fn ordered_labels(
    ids: &[&str],
    labels: Vec<crate::dataset::PopularityLabel>,
) -> Vec<Popularity> {
    let map: std::collections::HashMap<String, Popularity> =
        labels.into_iter().map(|l| (l.content_id, l.label)).collect();
    ids.iter().map(|id| map[*id]).collect()
}

/// `tau` such that `ceil(target * n)` scores are `>= tau`; when the boundary
/// score is tied, `tau` moves up past the tie so fewer contents are hot.
pub fn calibrate_threshold(scores: &[f64], target: f64) -> Result<f64, HybridError> {
    if scores.is_empty() {
        return Err(HybridError::EmptyScores);
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(HybridError::InvalidTarget(target));
    }
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    if s[0] == s[s.len() - 1] {
        return Err(HybridError::DegenerateScores(s.len()));
    }
    let k = hot_count(s.len(), target).clamp(1, s.len());
    let boundary = s[k - 1];
    if k == s.len() || s[k] < boundary {
        return Ok(boundary);
    }
    Ok(match s[..k].iter().rev().find(|&&v| v > boundary) {
        Some(&above) => above,
        None => s[0].next_up(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub content_id: String,
    pub probability: f64,
    pub label: Popularity,
    pub route: ContentType,
}

/// Records what a prediction looked at.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictTrace {
    /// `(content_id, route, window)` per feature extraction.
    pub windows: Vec<(String, ContentType, u32)>,
    pub gbdt_calls: usize,
    pub net_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridModel {
    pub format_version: u32,
    pub config: RunConfig,
    pub routing: Routing,
    pub trained_as_of: NaiveDate,
    pub period_grid: PeriodGrid,
    pub vocab: VocabularySet,
    pub scaler: Scaler,
    pub windows: WindowSpec,
    pub threshold: f64,
    pub gbdt: Option<BoostedEnsemble>,
    pub net: Option<EmbeddingNet>,
}

/// What training produced besides the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub n_type_a: usize,
    pub n_type_b: usize,
    pub net_report: Option<TrainReport>,
}

/// Labeled rows at `as_of` with the featurization fitted on them.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub grid: PeriodGrid,
    pub rows: Vec<TrainingRow>,
    pub vocab: VocabularySet,
    pub scaler: Scaler,
    /// Encoded rows, aligned with `rows`.
    pub features: Vec<FeatureVector>,
}

impl TrainingSet {
    pub fn build(
        catalog: &Catalog,
        origin: NaiveDate,
        as_of: NaiveDate,
        config: &RunConfig,
    ) -> Result<Self, HybridError> {
        let grid = PeriodGrid {
            origin,
            length: config.period_days,
        };
        let rows = training_rows(catalog, &grid, as_of, &config.windows, config.label_quantile)?;
        if rows.is_empty() {
            return Err(HybridError::NoTrainingData(as_of));
        }
        let contents: Vec<&ContentRecord> = rows
            .iter()
            .map(|r| catalog.get(&r.content_id).expect("row from catalog"))
            .collect();
        let owned: Vec<ContentRecord> = contents.iter().map(|&c| c.clone()).collect();
        let vocab = build_vocab(&owned)?;
        let raw: Vec<_> = rows
            .iter()
            .zip(&contents)
            .map(|(r, c)| raw_numeric(c, r.observation.related_view))
            .collect();
        let scaler = Scaler::fit(&raw)?;
        let features = rows
            .iter()
            .zip(&contents)
            .map(|(r, c)| encode(c, &vocab, &scaler, r.observation.related_view))
            .collect();
        Ok(TrainingSet {
            grid,
            rows,
            vocab,
            scaler,
            features,
        })
    }

    /// `(features, target)` pairs of the rows of one route.
    pub fn route_data(&self, route: ContentType) -> Vec<(FeatureVector, f64)> {
        self.rows
            .iter()
            .zip(&self.features)
            .filter(|(r, _)| r.observation.content_type == route)
            .map(|(r, fv)| (fv.clone(), f64::from(u8::from(r.hot))))
            .collect()
    }
}

/// Batch-order seed of net training, derived from the run seed.
pub fn net_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Trains the sub-models of `routing` on everything observable before
/// `as_of`. Release periods are anchored at `origin`.
pub fn train_model(
    catalog: &Catalog,
    origin: NaiveDate,
    as_of: NaiveDate,
    routing: Routing,
    config: &RunConfig,
) -> Result<(HybridModel, TrainSummary), HybridError> {
    config
        .validate()
        .map_err(|e| HybridError::Artifact(e.to_string()))?;
    let TrainingSet {
        grid,
        rows,
        vocab,
        scaler,
        features,
    } = TrainingSet::build(catalog, origin, as_of, config)?;
    let n_type_a = rows
        .iter()
        .filter(|r| r.observation.content_type == ContentType::TypeA)
        .count();
    let n_type_b = rows.len() - n_type_a;
    match routing {
        Routing::Hybrid | Routing::TypeAOnly if n_type_a == 0 => {
            return Err(HybridError::EmptyPartition("U_A"))
        }
        _ => {}
    }
    match routing {
        Routing::Hybrid | Routing::TypeBOnly if n_type_b == 0 => {
            return Err(HybridError::EmptyPartition("U_B"))
        }
        _ => {}
    }

    // calibrating on held-out rows: each sub-model keeps its trailing rows
    // out of training and scores them for the threshold
    let holdout = match config.threshold.mode {
        ThresholdMode::Calibrated => config.threshold.holdout_fraction,
        ThresholdMode::Fixed => 0.0,
    };
    let mut held_out: Vec<usize> = Vec::new();
    let mut select = |model: SubModel| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..rows.len())
            .filter(|&i| routing.sub_model(rows[i].observation.content_type) == Some(model))
            .collect();
        let n_hold = (idx.len() as f64 * holdout).floor() as usize;
        held_out.extend(idx.split_off(idx.len() - n_hold));
        idx
    };
    let cards = vocab.cardinalities();
    let gbdt_rows = select(SubModel::Gbdt);
    let net_rows = select(SubModel::Net);
    let gbdt = if gbdt_rows.is_empty() {
        None
    } else {
        let x: Vec<Vec<f64>> = gbdt_rows.iter().map(|&i| tree_row(&features[i], &cards)).collect();
        let y: Vec<f64> = gbdt_rows.iter().map(|&i| f64::from(u8::from(rows[i].hot))).collect();
        Some(fit_gbdt(&x, &y, &config.gbdt)?)
    };
    let (net, net_report) = if net_rows.is_empty() {
        (None, None)
    } else {
        let data: Vec<(FeatureVector, f64)> = net_rows
            .iter()
            .map(|&i| (features[i].clone(), f64::from(u8::from(rows[i].hot))))
            .collect();
        let mut net = EmbeddingNet::new(config.net.shape(cards), config.seed)?;
        let mut opt = config.optimizer.build(net.params())?;
        let report = train_nn(&mut net, &data, opt.as_mut(), &config.net, net_seed(config.seed))?;
        (Some(net), Some(report))
    };

    let mut model = HybridModel {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        routing,
        trained_as_of: as_of,
        period_grid: grid,
        vocab,
        scaler,
        windows: config.windows,
        threshold: config.threshold.tau,
        gbdt,
        net,
    };
    if config.threshold.mode == ThresholdMode::Calibrated {
        let calibration: Vec<usize> = if held_out.is_empty() {
            (0..rows.len())
                .filter(|&i| routing.scores(rows[i].observation.content_type))
                .collect()
        } else {
            held_out
        };
        let mut scores = Vec::with_capacity(calibration.len());
        for &i in &calibration {
            let sub = routing
                .sub_model(rows[i].observation.content_type)
                .expect("selected rows are routed");
            scores.push(model.score(sub, &features[i])?);
        }
        // a single-route model is calibrated to that route's own hot rate
        let target = match routing {
            Routing::TypeAOnly | Routing::TypeBOnly => {
                let hot = calibration.iter().filter(|&&i| rows[i].hot).count();
                hot.max(1) as f64 / calibration.len().max(1) as f64
            }
            _ => config.threshold.target_hot_fraction,
        };
        model.threshold = calibrate_threshold(&scores, target)?;
    }
    Ok((
        model,
        TrainSummary {
            n_type_a,
            n_type_b,
            net_report,
        },
    ))
}

/// Trains the two-route model on the whole catalog history before `as_of`.
pub fn train_hybrid(
    catalog: &Catalog,
    as_of: NaiveDate,
    config: &RunConfig,
) -> Result<HybridModel, HybridError> {
    let origin = catalog
        .timeline()
        .ok_or(HybridError::NoTrainingData(as_of))?
        .start;
    Ok(train_model(catalog, origin, as_of, Routing::Hybrid, config)?.0)
}

impl HybridModel {
    fn score(&self, sub: SubModel, fv: &FeatureVector) -> Result<f64, HybridError> {
        match sub {
            SubModel::Gbdt => {
                let g = self.gbdt.as_ref().ok_or(HybridError::MissingSubModel("gbdt"))?;
                Ok(g.predict(&tree_row(fv, &self.vocab.cardinalities()))?)
            }
            SubModel::Net => {
                let n = self.net.as_ref().ok_or(HybridError::MissingSubModel("net"))?;
                Ok(n.predict(fv)?)
            }
        }
    }

    /// Observation and encoded features of `content` as of `t`.
    pub fn features(
        &self,
        catalog: &Catalog,
        content: &ContentRecord,
        t: NaiveDate,
    ) -> Result<(Observation, FeatureVector), HybridError> {
        let obs = observe(catalog, content, t, &self.windows)?;
        Ok((obs, encode(content, &self.vocab, &self.scaler, obs.related_view)))
    }

    /// Whether this model scores contents of type `ty`.
    pub fn covers(&self, ty: ContentType) -> bool {
        self.routing.scores(ty)
    }

    pub fn predict(
        &self,
        catalog: &Catalog,
        content: &ContentRecord,
        t: NaiveDate,
    ) -> Result<Prediction, HybridError> {
        self.predict_traced(catalog, content, t, &mut PredictTrace::default())
    }

    pub fn predict_traced(
        &self,
        catalog: &Catalog,
        content: &ContentRecord,
        t: NaiveDate,
        trace: &mut PredictTrace,
    ) -> Result<Prediction, HybridError> {
        let (obs, fv) = self.features(catalog, content, t)?;
        trace
            .windows
            .push((content.content_id.clone(), obs.content_type, obs.window));
        let sub = self.routing.sub_model(obs.content_type).ok_or(
            HybridError::MissingSubModel(match obs.content_type {
                ContentType::TypeA => "type-A",
                ContentType::TypeB => "type-B",
            }),
        )?;
        match sub {
            SubModel::Gbdt => trace.gbdt_calls += 1,
            SubModel::Net => trace.net_calls += 1,
        }
        let probability = self.score(sub, &fv)?;
        Ok(Prediction {
            content_id: content.content_id.clone(),
            probability,
            label: if probability >= self.threshold {
                Popularity::Hot
            } else {
                Popularity::Cold
            },
            route: obs.content_type,
        })
    }

    /// Decision time of a content released on `release`: the start of its
    /// release period.
    pub fn decision_time(&self, release: NaiveDate) -> NaiveDate {
        self.period_grid.decision_time(release)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HybridError> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version =
            serde_json::from_str(text).map_err(|e| HybridError::Artifact(e.to_string()))?;
        if v.format_version != FORMAT_VERSION {
            return Err(HybridError::UnsupportedVersion(v.format_version));
        }
        let model: HybridModel =
            serde_json::from_str(text).map_err(|e| HybridError::Artifact(e.to_string()))?;
        for (sub, present) in [
            ("gbdt", model.gbdt.is_some()),
            ("net", model.net.is_some()),
        ] {
            let needed = [ContentType::TypeA, ContentType::TypeB].iter().any(|&ty| {
                model.routing.sub_model(ty)
                    == Some(if sub == "gbdt" { SubModel::Gbdt } else { SubModel::Net })
            });
            if needed && !present {
                return Err(HybridError::MissingSubModel(sub));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), HybridError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HybridError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
