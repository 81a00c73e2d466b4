//! Content metadata, view logs, hot/cold labeling and A/B typing.
//!
//! A [`Catalog`] indexes contents and their view logs so that per-content
//! and per-series queries ("how many views did the prior episodes of this
//! series collect in the ten days before `t`?") are cheap.

mod io;
mod synthetic;

pub use io::{
    ingest, ingest_contents, ingest_views, write_contents_jsonl, write_views_jsonl, DataFormat,
};
pub use synthetic::{generate_synthetic, SYNTHETIC_EPOCH};

use std::collections::HashMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {reason}")]
    InvalidField {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate content_id `{id}`")]
    DuplicateContent { line: usize, id: String },
    #[error("line {line}: duplicate view log for (`{id}`, {date})")]
    DuplicateView {
        line: usize,
        id: String,
        date: NaiveDate,
    },
    #[error("view log references unknown content `{0}`")]
    UnknownContent(String),
    #[error("label quantile must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("no contents to label")]
    EmptyContents,
    #[error("invalid generator arguments: {0}")]
    InvalidGenerator(String),
}

/// Pre-release metadata of one content item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentRecord {
    pub content_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_id: Option<String>,
    pub payment: String,
    pub program_type: String,
    pub genre: String,
    /// Running time in seconds.
    pub playtime: u32,
    pub episode_count: u32,
    pub age_limit: String,
    pub channel: String,
    pub actors: Vec<String>,
    pub title: String,
    pub keywords: Vec<String>,
    pub release_date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub related_view: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewLog {
    pub content_id: String,
    pub date: NaiveDate,
    pub view_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Popularity {
    #[serde(rename = "cold")]
    Cold = 0,
    #[serde(rename = "hot")]
    Hot = 1,
}

impl Popularity {
    pub fn is_hot(self) -> bool {
        self == Popularity::Hot
    }

    pub fn as_target(self) -> f64 {
        match self {
            Popularity::Hot => 1.0,
            Popularity::Cold => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityLabel {
    pub content_id: String,
    pub label: Popularity,
    pub window_total_views: u64,
}

/// Whether a content has released prior related works (A) or not (B).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContentType {
    #[serde(rename = "A")]
    TypeA,
    #[serde(rename = "B")]
    TypeB,
}

/// Half-open calendar range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateRange { start, end }
    }

    /// The `days`-long range ending just before `t`.
    pub fn lookback(t: NaiveDate, days: u32) -> Self {
        DateRange {
            start: t - chrono::Duration::days(i64::from(days)),
            end: t,
        }
    }

    /// The `days`-long range starting at `t`.
    pub fn starting_at(t: NaiveDate, days: u32) -> Self {
        DateRange {
            start: t,
            end: t + chrono::Duration::days(i64::from(days)),
        }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d < self.end
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days().max(0)
    }
}

/// Number of hot contents among `n` for top-fraction `q`, i.e. `ceil(q * n)`.
///
/// Products that land within rounding noise of an integer are snapped to it,
/// so `hot_count(35, 0.2)` is 7 even though `0.2 * 35.0 > 7.0` in binary.
pub fn hot_count(n: usize, q: f64) -> usize {
    let x = q * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).min(n)
}

fn check_quantile(q: f64) -> Result<(), DataError> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(DataError::InvalidQuantile(q))
    }
}

/// Ranks `(content_id, total)` pairs and marks the top `ceil(q * N)` hot.
///
/// Ordering is total views descending, then content id ascending. The output
/// follows that ranking.
pub fn rank_top_fraction(
    mut totals: Vec<(String, u64)>,
    q: f64,
) -> Result<Vec<PopularityLabel>, DataError> {
    check_quantile(q)?;
    if totals.is_empty() {
        return Err(DataError::EmptyContents);
    }
    totals.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let k = hot_count(totals.len(), q);
    Ok(totals
        .into_iter()
        .enumerate()
        .map(|(rank, (content_id, total))| PopularityLabel {
            content_id,
            label: if rank < k {
                Popularity::Hot
            } else {
                Popularity::Cold
            },
            window_total_views: total,
        })
        .collect())
}

/// Labels every content released within `period` by its total views inside
/// `period`.
pub fn label_hot_cold(
    view_logs: &[ViewLog],
    contents: &[ContentRecord],
    period: DateRange,
    q: f64,
) -> Result<Vec<PopularityLabel>, DataError> {
    check_quantile(q)?;
    let mut totals: HashMap<&str, u64> = contents
        .iter()
        .filter(|c| period.contains(c.release_date))
        .map(|c| (c.content_id.as_str(), 0))
        .collect();
    if totals.is_empty() {
        return Err(DataError::EmptyContents);
    }
    for log in view_logs {
        if period.contains(log.date) {
            if let Some(total) = totals.get_mut(log.content_id.as_str()) {
                *total += log.view_count;
            }
        }
    }
    rank_top_fraction(
        totals
            .into_iter()
            .map(|(id, total)| (id.to_string(), total))
            .collect(),
        q,
    )
}

/// Catalog-scan form of [`Catalog::classify`].
pub fn classify_type(
    content: &ContentRecord,
    catalog: &[ContentRecord],
    view_logs: &[ViewLog],
    t: NaiveDate,
) -> ContentType {
    let Some(series) = content.series_id.as_deref() else {
        return ContentType::TypeB;
    };
    let has_prior = catalog.iter().any(|prior| {
        prior.content_id != content.content_id
            && prior.series_id.as_deref() == Some(series)
            && prior.release_date < t
            && view_logs
                .iter()
                .any(|log| log.content_id == prior.content_id && log.date < t)
    });
    if has_prior {
        ContentType::TypeA
    } else {
        ContentType::TypeB
    }
}

/// Indexed, immutable view over contents and their view logs.
#[derive(Debug, Clone)]
pub struct Catalog {
    contents: Vec<ContentRecord>,
    by_id: HashMap<String, usize>,
    by_series: HashMap<String, Vec<usize>>,
    // per content: (date, count) sorted by date, plus running prefix sums
    logs: Vec<Vec<(NaiveDate, u64)>>,
    prefix: Vec<Vec<u64>>,
}

impl Catalog {
    /// Builds the index. Contents are reordered by (release date, id).
    pub fn new(mut contents: Vec<ContentRecord>, view_logs: &[ViewLog]) -> Result<Self, DataError> {
        contents.sort_by(|a, b| {
            a.release_date
                .cmp(&b.release_date)
                .then_with(|| a.content_id.cmp(&b.content_id))
        });
        let mut by_id = HashMap::with_capacity(contents.len());
        let mut by_series: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, c) in contents.iter().enumerate() {
            if by_id.insert(c.content_id.clone(), i).is_some() {
                return Err(DataError::DuplicateContent {
                    line: i + 1,
                    id: c.content_id.clone(),
                });
            }
            if let Some(s) = &c.series_id {
                by_series.entry(s.clone()).or_default().push(i);
            }
        }
        let mut logs: Vec<Vec<(NaiveDate, u64)>> = vec![Vec::new(); contents.len()];
        for log in view_logs {
            let &i = by_id
                .get(&log.content_id)
                .ok_or_else(|| DataError::UnknownContent(log.content_id.clone()))?;
            logs[i].push((log.date, log.view_count));
        }
        let mut prefix = Vec::with_capacity(logs.len());
        for (i, entries) in logs.iter_mut().enumerate() {
            entries.sort_by_key(|e| e.0);
            if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(DataError::DuplicateView {
                    line: 0,
                    id: contents[i].content_id.clone(),
                    date: w[0].0,
                });
            }
            let mut acc = 0u64;
            let mut p = Vec::with_capacity(entries.len() + 1);
            p.push(0);
            for &(_, v) in entries.iter() {
                acc += v;
                p.push(acc);
            }
            prefix.push(p);
        }
        Ok(Catalog {
            contents,
            by_id,
            by_series,
            logs,
            prefix,
        })
    }

    pub fn contents(&self) -> &[ContentRecord] {
        &self.contents
    }

    pub fn len(&self) -> usize {
        self.contents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contents.is_empty()
    }

    pub fn get(&self, content_id: &str) -> Option<&ContentRecord> {
        self.by_id.get(content_id).map(|&i| &self.contents[i])
    }

    /// All view logs, ordered by (content order, date).
    pub fn view_logs(&self) -> Vec<ViewLog> {
        self.contents
            .iter()
            .zip(&self.logs)
            .flat_map(|(c, entries)| {
                entries.iter().map(move |&(date, view_count)| ViewLog {
                    content_id: c.content_id.clone(),
                    date,
                    view_count,
                })
            })
            .collect()
    }

    /// `[first release, last observation]` as a half-open range.
    pub fn timeline(&self) -> Option<DateRange> {
        let start = self.contents.iter().map(|c| c.release_date).min()?;
        let last_release = self.contents.iter().map(|c| c.release_date).max()?;
        let last_log = self
            .logs
            .iter()
            .filter_map(|entries| entries.last().map(|e| e.0))
            .max()
            .unwrap_or(last_release);
        let end = last_release.max(last_log) + chrono::Duration::days(1);
        Some(DateRange { start, end })
    }

    /// Views of one content within `range`; 0 for unknown ids.
    pub fn views_in(&self, content_id: &str, range: DateRange) -> u64 {
        self.by_id
            .get(content_id)
            .map_or(0, |&i| self.views_in_idx(i, range))
    }

    fn views_in_idx(&self, i: usize, range: DateRange) -> u64 {
        let entries = &self.logs[i];
        let lo = entries.partition_point(|e| e.0 < range.start);
        let hi = entries.partition_point(|e| e.0 < range.end);
        if hi <= lo {
            0
        } else {
            self.prefix[i][hi] - self.prefix[i][lo]
        }
    }

    /// True if the content has any view log dated before `t`.
    pub fn has_logs_before(&self, content_id: &str, t: NaiveDate) -> bool {
        self.by_id
            .get(content_id)
            .is_some_and(|&i| self.logs[i].first().is_some_and(|e| e.0 < t))
    }

    /// Contents of the same series as `content`, released strictly before
    /// `t`, excluding `content` itself.
    pub fn prior_works<'a>(
        &'a self,
        content: &'a ContentRecord,
        t: NaiveDate,
    ) -> impl Iterator<Item = &'a ContentRecord> + 'a {
        content
            .series_id
            .as_ref()
            .and_then(|s| self.by_series.get(s))
            .into_iter()
            .flatten()
            .map(|&i| &self.contents[i])
            .filter(move |p| p.release_date < t && p.content_id != content.content_id)
    }

    /// Type A iff some prior same-series work was released before `t` and has
    /// a view log before `t`.
    pub fn classify(&self, content: &ContentRecord, t: NaiveDate) -> ContentType {
        if self
            .prior_works(content, t)
            .any(|p| self.has_logs_before(&p.content_id, t))
        {
            ContentType::TypeA
        } else {
            ContentType::TypeB
        }
    }

    /// Sum of prior same-series views over `[t - window, t)`.
    pub fn related_views(&self, content: &ContentRecord, t: NaiveDate, window: u32) -> u64 {
        let range = DateRange::lookback(t, window);
        self.prior_works(content, t)
            .map(|p| self.views_in(&p.content_id, range))
            .sum()
    }

    /// Views collected in the first `days` days after release.
    pub fn first_window_views(&self, content_id: &str, days: u32) -> u64 {
        match self.by_id.get(content_id) {
            Some(&i) => {
                let range = DateRange::starting_at(self.contents[i].release_date, days);
                self.views_in_idx(i, range)
            }
            None => 0,
        }
    }

    /// Labels `ids` by their first-`days` views, ranked jointly.
    pub fn label_release_window(
        &self,
        ids: &[&str],
        days: u32,
        q: f64,
    ) -> Result<Vec<PopularityLabel>, DataError> {
        rank_top_fraction(
            ids.iter()
                .map(|id| (id.to_string(), self.first_window_views(id, days)))
                .collect(),
            q,
        )
    }

    /// Copy of the catalog with every view log dated on or after `t` removed.
    pub fn truncated_before(&self, t: NaiveDate) -> Catalog {
        let logs: Vec<ViewLog> = self.view_logs().into_iter().filter(|l| l.date < t).collect();
        Catalog::new(self.contents.clone(), &logs).expect("subset of a valid catalog")
    }
}
