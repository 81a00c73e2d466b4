use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde_json::{Map, Value};

use super::{ContentRecord, DataError, ViewLog};

/// On-disk row format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Jsonl,
    /// Header row required; list cells are `|`-delimited.
    Csv,
}

impl DataFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DataFormat::Jsonl => "jsonl",
            DataFormat::Csv => "csv",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(DataFormat::Jsonl),
            "csv" => Some(DataFormat::Csv),
            _ => None,
        }
    }
}

const CONTENT_FIELDS: [&str; 14] = [
    "content_id",
    "series_id",
    "payment",
    "program_type",
    "genre",
    "playtime",
    "episode_count",
    "age_limit",
    "channel",
    "actors",
    "title",
    "keywords",
    "release_date",
    "related_view",
];
const LIST_FIELDS: [&str; 2] = ["actors", "keywords"];
const VIEW_FIELDS: [&str; 3] = ["content_id", "date", "view_count"];

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads `contents.<ext>` and `views.<ext>` from `dir`.
pub fn ingest(
    dir: &Path,
    format: DataFormat,
) -> Result<(Vec<ContentRecord>, Vec<ViewLog>), DataError> {
    let ext = format.extension();
    let contents = ingest_contents(&dir.join(format!("contents.{ext}")), format)?;
    let views = ingest_views(&dir.join(format!("views.{ext}")), format)?;
    Ok((contents, views))
}

pub fn ingest_contents(path: &Path, format: DataFormat) -> Result<Vec<ContentRecord>, DataError> {
    let rows = read_rows(path, format, &CONTENT_FIELDS)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let record = content_from_row(line, &row)?;
        if !seen.insert(record.content_id.clone()) {
            return Err(DataError::DuplicateContent {
                line,
                id: record.content_id,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn ingest_views(path: &Path, format: DataFormat) -> Result<Vec<ViewLog>, DataError> {
    let rows = read_rows(path, format, &VIEW_FIELDS)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let log = ViewLog {
            content_id: req_string(line, &row, "content_id")?,
            date: req_date(line, &row, "date")?,
            view_count: req_uint(line, &row, "view_count")?,
        };
        if !seen.insert((log.content_id.clone(), log.date)) {
            return Err(DataError::DuplicateView {
                line,
                id: log.content_id,
                date: log.date,
            });
        }
        out.push(log);
    }
    Ok(out)
}

pub fn write_contents_jsonl<W: Write>(mut w: W, contents: &[ContentRecord]) -> std::io::Result<()> {
    for c in contents {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_views_jsonl<W: Write>(mut w: W, logs: &[ViewLog]) -> std::io::Result<()> {
    for l in logs {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

type Row = Map<String, Value>;

/// Normalizes both formats to JSON objects keyed by field name, paired with
/// the 1-based source line.
fn read_rows(
    path: &Path,
    format: DataFormat,
    allowed: &[&str],
) -> Result<Vec<(usize, Row)>, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let rows = match format {
        DataFormat::Jsonl => read_jsonl(path, file)?,
        DataFormat::Csv => read_csv(path, file)?,
    };
    for (line, row) in &rows {
        if let Some(key) = row.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(DataError::InvalidField {
                line: *line,
                field: key.clone(),
                reason: "unknown field".into(),
            });
        }
    }
    Ok(rows)
}

fn read_jsonl(path: &Path, file: File) -> Result<Vec<(usize, Row)>, DataError> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(map)) => rows.push((line_no, map)),
            Ok(_) => {
                return Err(DataError::Malformed {
                    line: line_no,
                    reason: "expected a JSON object".into(),
                })
            }
            Err(e) => {
                return Err(DataError::Malformed {
                    line: line_no,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(rows)
}

fn read_csv(path: &Path, file: File) -> Result<Vec<(usize, Row)>, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| csv_err(path, 1, e))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line_no = i + 2;
        let record = record.map_err(|e| csv_err(path, line_no, e))?;
        let mut map = Map::new();
        for (key, cell) in headers.iter().zip(record.iter()) {
            if cell.is_empty() && !LIST_FIELDS.contains(&key.as_str()) {
                continue;
            }
            let value = if LIST_FIELDS.contains(&key.as_str()) {
                Value::Array(
                    cell.split('|')
                        .filter(|s| !s.is_empty())
                        .map(|s| Value::String(s.to_string()))
                        .collect(),
                )
            } else {
                Value::String(cell.to_string())
            };
            map.insert(key.clone(), value);
        }
        rows.push((line_no, map));
    }
    Ok(rows)
}

fn csv_err(path: &Path, line: usize, e: csv::Error) -> DataError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => DataError::Malformed {
            line,
            reason: format!("{other:?}"),
        },
    }
}

fn invalid(line: usize, field: &str, reason: impl Into<String>) -> DataError {
    DataError::InvalidField {
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn opt_string(line: usize, row: &Row, field: &str) -> Result<Option<String>, DataError> {
    match row.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        // age_limit = 19 is a common shorthand for "19"
        Some(Value::Number(n)) => Ok(Some(n.to_string())),
        Some(_) => Err(invalid(line, field, "expected a string")),
    }
}

fn req_string(line: usize, row: &Row, field: &str) -> Result<String, DataError> {
    opt_string(line, row, field)?.ok_or_else(|| invalid(line, field, "missing"))
}

fn opt_int(line: usize, row: &Row, field: &str) -> Result<Option<i64>, DataError> {
    match row.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n
            .as_i64()
            .map(Some)
            .ok_or_else(|| invalid(line, field, format!("expected an integer, got {n}"))),
        Some(Value::String(s)) => s
            .trim()
            .parse::<i64>()
            .map(Some)
            .map_err(|_| invalid(line, field, format!("expected an integer, got {s:?}"))),
        Some(_) => Err(invalid(line, field, "expected an integer")),
    }
}

fn opt_uint(line: usize, row: &Row, field: &str) -> Result<Option<u64>, DataError> {
    match opt_int(line, row, field)? {
        None => Ok(None),
        Some(v) if v < 0 => Err(invalid(line, field, format!("must be non-negative, got {v}"))),
        Some(v) => Ok(Some(v as u64)),
    }
}

fn req_uint(line: usize, row: &Row, field: &str) -> Result<u64, DataError> {
    opt_uint(line, row, field)?.ok_or_else(|| invalid(line, field, "missing"))
}

fn req_u32(line: usize, row: &Row, field: &str) -> Result<u32, DataError> {
    let v = req_uint(line, row, field)?;
    u32::try_from(v).map_err(|_| invalid(line, field, format!("out of range: {v}")))
}

fn req_date(line: usize, row: &Row, field: &str) -> Result<NaiveDate, DataError> {
    let s = req_string(line, row, field)?;
    NaiveDate::parse_from_str(&s, "%Y-%m-%d")
        .map_err(|_| invalid(line, field, format!("expected YYYY-MM-DD, got {s:?}")))
}

fn req_list(line: usize, row: &Row, field: &str) -> Result<Vec<String>, DataError> {
    match row.get(field) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(invalid(line, field, "list items must be strings")),
            })
            .collect(),
        Some(_) => Err(invalid(line, field, "expected a list of strings")),
    }
}

fn content_from_row(line: usize, row: &Row) -> Result<ContentRecord, DataError> {
    let content_id = req_string(line, row, "content_id")?;
    if content_id.is_empty() {
        return Err(invalid(line, "content_id", "must not be empty"));
    }
    let playtime = req_u32(line, row, "playtime")?;
    if playtime == 0 {
        return Err(invalid(line, "playtime", "must be positive"));
    }
    Ok(ContentRecord {
        content_id,
        series_id: opt_string(line, row, "series_id")?.filter(|s| !s.is_empty()),
        payment: req_string(line, row, "payment")?,
        program_type: req_string(line, row, "program_type")?,
        genre: req_string(line, row, "genre")?,
        playtime,
        episode_count: req_u32(line, row, "episode_count")?,
        age_limit: req_string(line, row, "age_limit")?,
        channel: req_string(line, row, "channel")?,
        actors: req_list(line, row, "actors")?,
        title: opt_string(line, row, "title")?.unwrap_or_default(),
        keywords: req_list(line, row, "keywords")?,
        release_date: req_date(line, row, "release_date")?,
        related_view: opt_uint(line, row, "related_view")?,
    })
}
