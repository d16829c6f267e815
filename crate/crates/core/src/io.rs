//! Dataset ingestion, configuration parsing and output persistence.
//!
//! Observation CSV: a header row with feature columns `x0..x{d-1}`, an
//! optional `y` column and a required integer `sample_id` column in `[0, K)`.
//! Rows may appear in any order; pooled data is sample-major, and the
//! mapping back to input order is kept so exported weights align with the
//! input file.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bias_model::{evaluate_bias_matrix, BiasDef, Observation, PooledData, Target};
use crate::error::{Error, Result};
use crate::scenario::ScenarioSpec;

/// How the optional `y` column is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetColumn {
    Real,
    /// Labels in `{-1, +1}`.
    Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    /// 1-based line in the source file (header is line 1).
    pub line: u64,
    pub sample_id: usize,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    pub dim: usize,
    pub has_target: bool,
    pub rows: Vec<ObservationRow>,
}

impl ObservationTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Group rows into `k` samples. Returns the samples and, for every input
    /// row, its index in sample-major pooled order.
    pub fn group(&self, k: usize) -> Result<(Vec<Vec<Observation>>, Vec<usize>)> {
        let mut samples: Vec<Vec<Observation>> = vec![Vec::new(); k];
        let mut slot = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            if r.sample_id >= k {
                return Err(Error::Schema(format!(
                    "line {}: sample_id {} out of range for {k} biasing functions",
                    r.line, r.sample_id
                )));
            }
            slot.push((r.sample_id, samples[r.sample_id].len()));
            samples[r.sample_id].push(r.observation.clone());
        }
        if let Some(empty) = samples.iter().position(Vec::is_empty) {
            return Err(Error::Schema(format!("sample {empty} has no rows")));
        }
        let mut offsets = vec![0; k];
        for i in 1..k {
            offsets[i] = offsets[i - 1] + samples[i - 1].len();
        }
        let to_pooled = slot.into_iter().map(|(s, i)| offsets[s] + i).collect();
        Ok((samples, to_pooled))
    }

    /// Pooled data under `defs` plus the input-row to pooled-row mapping.
    pub fn to_pooled(&self, defs: &[BiasDef]) -> Result<(PooledData, Vec<usize>)> {
        if defs.is_empty() {
            return Err(Error::Config("no biasing functions declared".into()));
        }
        let (samples, map) = self.group(defs.len())?;
        let pooled = evaluate_bias_matrix(samples, defs.iter().map(BiasDef::build).collect())?;
        Ok((pooled, map))
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.rows.iter().map(|r| r.observation.clone()).collect()
    }
}

/// Reorder pooled-row values into input-row order.
pub fn to_input_order(pooled_values: &[f64], to_pooled: &[usize]) -> Vec<f64> {
    to_pooled.iter().map(|&p| pooled_values[p]).collect()
}

fn parse_err(line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

pub fn read_observation_table(path: &Path, target: TargetColumn) -> Result<ObservationTable> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_observation_csv(file, target)
}

pub fn parse_observation_csv<R: Read>(reader: R, target: TargetColumn) -> Result<ObservationTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, "", e.to_string()))?
        .clone();

    let mut feature_cols: Vec<(usize, usize)> = Vec::new();
    let mut y_col = None;
    let mut id_col = None;
    for (i, h) in headers.iter().enumerate() {
        match h {
            "y" => y_col = Some(i),
            "sample_id" => id_col = Some(i),
            _ => match h.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                Some(j) => feature_cols.push((j, i)),
                None => return Err(Error::Schema(format!("unexpected column '{h}'"))),
            },
        }
    }
    let id_col = id_col.ok_or_else(|| Error::Schema("missing required column 'sample_id'".into()))?;
    feature_cols.sort_unstable();
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns x0..".into()));
    }
    if let Some(pos) = feature_cols.iter().enumerate().position(|(pos, (j, _))| pos != *j) {
        return Err(Error::Schema(format!("feature columns must be x0..x{{d-1}}; missing x{pos}")));
    }
    let dim = feature_cols.len();

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, "", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize, name: &str| -> Result<&str> {
            record
                .get(col)
                .ok_or_else(|| parse_err(line, name, "missing field"))
        };
        let mut features = Vec::with_capacity(dim);
        for &(j, col) in &feature_cols {
            let name = format!("x{j}");
            let raw = field(col, &name)?;
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, &name, format!("'{raw}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, &name, format!("'{raw}' is not finite")));
            }
            features.push(v);
        }
        let raw = field(id_col, "sample_id")?;
        let sample_id: usize = raw
            .parse()
            .map_err(|_| parse_err(line, "sample_id", format!("'{raw}' is not a nonnegative integer")))?;
        let target = match y_col {
            None => None,
            Some(col) => {
                let raw = field(col, "y")?;
                let v: f64 = raw
                    .parse()
                    .map_err(|_| parse_err(line, "y", format!("'{raw}' is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, "y", format!("'{raw}' is not finite")));
                }
                Some(match target {
                    TargetColumn::Real => Target::Real(v),
                    TargetColumn::Label if v == 1.0 => Target::Label(1),
                    TargetColumn::Label if v == -1.0 => Target::Label(-1),
                    TargetColumn::Label => return Err(parse_err(line, "y", format!("label '{raw}' is not -1 or 1"))),
                })
            }
        };
        rows.push(ObservationRow {
            line,
            sample_id,
            observation: Observation { features, target },
        });
    }
    Ok(ObservationTable {
        dim,
        has_target: y_col.is_some(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BiasDocument {
    #[serde(alias = "biasing_defs")]
    biasing: Vec<BiasDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    /// From the file extension; JSON unless the extension is `.toml`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("toml") => ConfigFormat::Toml,
            _ => ConfigFormat::Json,
        }
    }
}

/// Biasing functions in declaration order. TOML uses `[[biasing]]` tables;
/// JSON accepts `{"biasing": [...]}` or a bare array.
pub fn parse_bias_config(text: &str, format: ConfigFormat) -> Result<Vec<BiasDef>> {
    let defs = match format {
        ConfigFormat::Toml => toml::from_str::<BiasDocument>(text)
            .map_err(|e| Error::Config(e.to_string()))?
            .biasing,
        ConfigFormat::Json => match serde_json::from_str::<BiasDocument>(text) {
            Ok(d) => d.biasing,
            Err(first) => serde_json::from_str::<Vec<BiasDef>>(text).map_err(|_| Error::Config(first.to_string()))?,
        },
    };
    if defs.is_empty() {
        return Err(Error::Config("no biasing functions declared".into()));
    }
    Ok(defs)
}

pub fn read_bias_config(path: &Path) -> Result<Vec<BiasDef>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_bias_config(&text, ConfigFormat::from_path(path))
}

pub fn parse_scenario_spec(text: &str, format: ConfigFormat) -> Result<ScenarioSpec> {
    let spec: ScenarioSpec = match format {
        ConfigFormat::Toml => toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
        ConfigFormat::Json => serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn read_scenario_spec(path: &Path) -> Result<ScenarioSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario_spec(&text, ConfigFormat::from_path(path))
}

fn single_column_csv(header: &str, values: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([header]).map_err(err)?;
    for v in values {
        w.write_record([v.to_string()]).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// One `weight` per input row. Values use the shortest representation that
/// round-trips, so parsing back reproduces the weights exactly.
pub fn weights_csv(weights: &[f64]) -> Result<String> {
    single_column_csv("weight", weights)
}

pub fn predictions_csv(predictions: &[f64]) -> Result<String> {
    single_column_csv("y_pred", predictions)
}

/// Parse a single-column CSV written by [`weights_csv`] or [`predictions_csv`].
pub fn parse_single_column(text: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), "", e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let raw = rec.get(0).unwrap_or("");
        out.push(raw.parse().map_err(|_| parse_err(line, "", format!("'{raw}' is not a number")))?);
    }
    Ok(out)
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
