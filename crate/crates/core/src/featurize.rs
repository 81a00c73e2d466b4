//! Feature extraction: categorical vocabularies, numeric standardization,
//! hashed bag-of-words text and the windowed related-view feature.

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Catalog, ContentRecord, ContentType, DateRange};

pub const N_CATEGORICAL: usize = 7;
pub const N_NUMERIC: usize = 3;
/// Hash buckets for the text bag-of-words.
pub const TEXT_BUCKETS: usize = 16384;
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot build vocabularies from an empty training set")]
    EmptyTrainingSet,
    #[error("related_view is undefined for type-B content `{0}`")]
    NotTypeA(String),
    #[error("window lengths must be at least 1 day (r_a = {r_a}, r_b = {r_b})")]
    InvalidWindow { r_a: u32, r_b: u32 },
    #[error("period length must be at least 1 day")]
    InvalidPeriodLength,
    #[error("timeline of {days} days covers fewer than 2 periods of {period} days")]
    InsufficientTimeline { days: i64, period: u32 },
    #[error("features of `{id}` requested at {at}, after its release on {release}")]
    Leakage {
        id: String,
        at: NaiveDate,
        release: NaiveDate,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalVar {
    Payment,
    ProgramType,
    Genre,
    AgeLimit,
    Channel,
    ReleaseWeekday,
    ReleaseMonth,
}

impl CategoricalVar {
    pub const ALL: [CategoricalVar; N_CATEGORICAL] = [
        CategoricalVar::Payment,
        CategoricalVar::ProgramType,
        CategoricalVar::Genre,
        CategoricalVar::AgeLimit,
        CategoricalVar::Channel,
        CategoricalVar::ReleaseWeekday,
        CategoricalVar::ReleaseMonth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CategoricalVar::Payment => "payment",
            CategoricalVar::ProgramType => "program_type",
            CategoricalVar::Genre => "genre",
            CategoricalVar::AgeLimit => "age_limit",
            CategoricalVar::Channel => "channel",
            CategoricalVar::ReleaseWeekday => "release_weekday",
            CategoricalVar::ReleaseMonth => "release_month",
        }
    }

    pub fn level(self, c: &ContentRecord) -> String {
        match self {
            CategoricalVar::Payment => c.payment.clone(),
            CategoricalVar::ProgramType => c.program_type.clone(),
            CategoricalVar::Genre => c.genre.clone(),
            CategoricalVar::AgeLimit => c.age_limit.clone(),
            CategoricalVar::Channel => c.channel.clone(),
            CategoricalVar::ReleaseWeekday => {
                c.release_date.weekday().num_days_from_monday().to_string()
            }
            CategoricalVar::ReleaseMonth => format!("{:02}", c.release_date.month()),
        }
    }
}

/// Sorted levels of one categorical variable; index 0 is reserved for
/// out-of-vocabulary levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub variable: CategoricalVar,
    pub levels: Vec<String>,
}

impl Vocabulary {
    pub fn fit<I: IntoIterator<Item = String>>(variable: CategoricalVar, levels: I) -> Self {
        let mut levels: Vec<String> = levels.into_iter().collect();
        levels.sort_unstable();
        levels.dedup();
        Vocabulary { variable, levels }
    }

    /// `m_i`: level count plus the OOV slot.
    pub fn cardinality(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn index(&self, level: &str) -> usize {
        self.levels
            .binary_search_by(|l| l.as_str().cmp(level))
            .map_or(0, |i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularySet {
    pub vocabs: Vec<Vocabulary>,
}

impl VocabularySet {
    pub fn cardinalities(&self) -> [usize; N_CATEGORICAL] {
        let mut out = [0; N_CATEGORICAL];
        for (o, v) in out.iter_mut().zip(&self.vocabs) {
            *o = v.cardinality();
        }
        out
    }

    pub fn indices(&self, c: &ContentRecord) -> [usize; N_CATEGORICAL] {
        let mut out = [0; N_CATEGORICAL];
        for (o, v) in out.iter_mut().zip(&self.vocabs) {
            *o = v.index(&v.variable.level(c));
        }
        out
    }
}

pub fn build_vocab(contents: &[ContentRecord]) -> Result<VocabularySet, FeatureError> {
    if contents.is_empty() {
        return Err(FeatureError::EmptyTrainingSet);
    }
    Ok(VocabularySet {
        vocabs: CategoricalVar::ALL
            .iter()
            .map(|&var| Vocabulary::fit(var, contents.iter().map(|c| var.level(c))))
            .collect(),
    })
}

/// Per-feature mean and (floored) population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: [f64; N_NUMERIC],
    pub std: [f64; N_NUMERIC],
}

impl Scaler {
    pub fn identity() -> Self {
        Scaler {
            mean: [0.0; N_NUMERIC],
            std: [1.0; N_NUMERIC],
        }
    }

    pub fn fit(rows: &[[f64; N_NUMERIC]]) -> Result<Self, FeatureError> {
        if rows.is_empty() {
            return Err(FeatureError::EmptyTrainingSet);
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; N_NUMERIC];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = [0.0; N_NUMERIC];
        for r in rows {
            for j in 0..N_NUMERIC {
                std[j] += (r[j] - mean[j]).powi(2);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / n).sqrt().max(STD_FLOOR));
        Ok(Scaler { mean, std })
    }

    pub fn transform(&self, raw: &[f64; N_NUMERIC]) -> [f64; N_NUMERIC] {
        let mut out = [0.0; N_NUMERIC];
        for j in 0..N_NUMERIC {
            out[j] = (raw[j] - self.mean[j]) / self.std[j].max(STD_FLOOR);
        }
        out
    }
}

/// Observation windows in days for type-A and type-B content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub r_a: u32,
    pub r_b: u32,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { r_a: 10, r_b: 20 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.r_a == 0 || self.r_b == 0 {
            return Err(FeatureError::InvalidWindow {
                r_a: self.r_a,
                r_b: self.r_b,
            });
        }
        Ok(())
    }

    pub fn for_type(&self, ty: ContentType) -> u32 {
        match ty {
            ContentType::TypeA => self.r_a,
            ContentType::TypeB => self.r_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub cat_indices: [usize; N_CATEGORICAL],
    /// Standardized playtime, episode_count, related_view (0 when absent).
    pub numeric: [f64; N_NUMERIC],
    /// `(bucket, count)` pairs sorted by bucket.
    pub text: Vec<(u32, u32)>,
    pub is_type_a: bool,
}

/// FNV-1a, 64 bit.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn token_bucket(token: &str) -> u32 {
    (fnv1a(token.as_bytes()) % TEXT_BUCKETS as u64) as u32
}

/// Lowercased whitespace tokens of actors, title and keywords, hashed and
/// counted.
pub fn text_buckets(c: &ContentRecord) -> Vec<(u32, u32)> {
    let mut buckets: Vec<u32> = c
        .actors
        .iter()
        .chain(std::iter::once(&c.title))
        .chain(&c.keywords)
        .flat_map(|s| s.split_whitespace())
        .map(|tok| token_bucket(&tok.to_lowercase()))
        .collect();
    buckets.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::new();
    for b in buckets {
        match out.last_mut() {
            Some((last, n)) if *last == b => *n += 1,
            _ => out.push((b, 1)),
        }
    }
    out
}

pub fn raw_numeric(c: &ContentRecord, related_view: Option<u64>) -> [f64; N_NUMERIC] {
    [
        f64::from(c.playtime),
        f64::from(c.episode_count),
        related_view.unwrap_or(0) as f64,
    ]
}

/// Encodes a content; `window_feature` is its related-view value when the
/// content is type A.
pub fn encode(
    content: &ContentRecord,
    vocab: &VocabularySet,
    scaler: &Scaler,
    window_feature: Option<u64>,
) -> FeatureVector {
    FeatureVector {
        cat_indices: vocab.indices(content),
        numeric: scaler.transform(&raw_numeric(content, window_feature)),
        text: text_buckets(content),
        is_type_a: window_feature.is_some(),
    }
}

/// Sum of prior same-series views over `[t - window, t)`.
pub fn related_view_feature(
    catalog: &Catalog,
    content: &ContentRecord,
    t: NaiveDate,
    window: u32,
) -> Result<u64, FeatureError> {
    match catalog.classify(content, t) {
        ContentType::TypeA => Ok(catalog.related_views(content, t, window)),
        ContentType::TypeB => Err(FeatureError::NotTypeA(content.content_id.clone())),
    }
}

/// The pre-release facts about a content as of decision time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub content_type: ContentType,
    /// Present iff type A.
    pub related_view: Option<u64>,
    pub window: u32,
}

/// Routes a content and computes its window feature using only logs dated
/// before `t`, which must not be later than the content's release.
pub fn observe(
    catalog: &Catalog,
    content: &ContentRecord,
    t: NaiveDate,
    windows: &WindowSpec,
) -> Result<Observation, FeatureError> {
    if t > content.release_date {
        return Err(FeatureError::Leakage {
            id: content.content_id.clone(),
            at: t,
            release: content.release_date,
        });
    }
    let content_type = catalog.classify(content, t);
    let window = windows.for_type(content_type);
    let related_view = match content_type {
        ContentType::TypeA => Some(catalog.related_views(content, t, window)),
        ContentType::TypeB => None,
    };
    Ok(Observation {
        content_type,
        related_view,
        window,
    })
}

/// Fixed-length periods anchored at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodGrid {
    pub origin: NaiveDate,
    pub length: u32,
}

impl PeriodGrid {
    pub fn index_of(&self, d: NaiveDate) -> i64 {
        (d - self.origin).num_days().div_euclid(i64::from(self.length))
    }

    pub fn start_of(&self, index: i64) -> NaiveDate {
        self.origin + Duration::days(index * i64::from(self.length))
    }

    pub fn period(&self, index: i64) -> DateRange {
        DateRange::starting_at(self.start_of(index), self.length)
    }

    /// Start of the period containing `d`: the decision time for content
    /// released on `d`.
    pub fn decision_time(&self, d: NaiveDate) -> NaiveDate {
        self.start_of(self.index_of(d))
    }
}

/// One rolling-origin fold: train on history before `cutoff`, test on the
/// contents released in `test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSplit {
    pub index: usize,
    pub cutoff: NaiveDate,
    pub test: DateRange,
    pub test_ids: Vec<String>,
}

/// Splits the catalog timeline into `period_length`-day folds. The first
/// period has no history and yields no fold; folds with no releases are
/// kept with empty `test_ids`.
pub fn split_periods(
    catalog: &Catalog,
    period_length: u32,
) -> Result<(PeriodGrid, Vec<PeriodSplit>), FeatureError> {
    if period_length == 0 {
        return Err(FeatureError::InvalidPeriodLength);
    }
    let timeline = catalog.timeline().ok_or(FeatureError::EmptyTrainingSet)?;
    let days = timeline.days();
    let n_periods = (days + i64::from(period_length) - 1) / i64::from(period_length);
    if n_periods < 2 {
        return Err(FeatureError::InsufficientTimeline {
            days,
            period: period_length,
        });
    }
    let grid = PeriodGrid {
        origin: timeline.start,
        length: period_length,
    };
    let splits = (1..n_periods)
        .map(|k| {
            let test = grid.period(k);
            PeriodSplit {
                index: k as usize,
                cutoff: test.start,
                test,
                test_ids: catalog
                    .contents()
                    .iter()
                    .filter(|c| test.contains(c.release_date))
                    .map(|c| c.content_id.clone())
                    .collect(),
            }
        })
        .collect();
    Ok((grid, splits))
}
