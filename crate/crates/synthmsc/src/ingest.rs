//! Long-format panel CSV ingestion and export.
//!
//! Rows carry `unit, time, outcome, treated` (column names configurable);
//! `treated` is `0` or `1`. The last pre-treatment time comes from the
//! caller or from a JSON sidecar next to the CSV (`panel.csv` ->
//! `panel.json`, key `t0_marker`).

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthmsc_core::panel::Observation;
use synthmsc_core::PanelData;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("row {row}: cannot parse {column} value {value:?}")]
    Parse { row: u64, column: String, value: String },
    #[error("bad sidecar {path}: {source}")]
    Sidecar { path: PathBuf, source: serde_json::Error },
    #[error("no t0 marker: pass --t0-marker or provide {0}")]
    NoMarker(PathBuf),
    #[error(transparent)]
    Panel(#[from] synthmsc_core::Error),
}

/// Names of the four required columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub treated: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            treated: "treated".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub t0_marker: i64,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Reads the sidecar if one exists.
pub fn read_sidecar(csv_path: &Path) -> Result<Option<Sidecar>, IngestError> {
    let path = sidecar_path(csv_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|source| IngestError::Io { path: path.clone(), source })?;
    serde_json::from_str(&text).map(Some).map_err(|source| IngestError::Sidecar { path, source })
}

/// The flag wins over the sidecar.
pub fn resolve_marker(csv_path: &Path, flag: Option<i64>) -> Result<i64, IngestError> {
    if let Some(marker) = flag {
        return Ok(marker);
    }
    match read_sidecar(csv_path)? {
        Some(sidecar) => Ok(sidecar.t0_marker),
        None => Err(IngestError::NoMarker(sidecar_path(csv_path))),
    }
}

pub fn ingest_csv(path: &Path, schema: &Schema, t0_marker: i64) -> Result<PanelData, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    read_panel(file, schema, t0_marker)
}

pub fn read_panel<R: Read>(reader: R, schema: &Schema, t0_marker: i64) -> Result<PanelData, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let (iu, it, io, itr) = (find(&schema.unit)?, find(&schema.time)?, find(&schema.outcome)?, find(&schema.treated)?);

    let mut observations = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let parse_err = |column: &str, value: &str| IngestError::Parse {
            row,
            column: column.to_string(),
            value: value.to_string(),
        };
        let time = field(it).parse::<i64>().map_err(|_| parse_err(&schema.time, field(it)))?;
        let outcome = field(io).parse::<f64>().map_err(|_| parse_err(&schema.outcome, field(io)))?;
        let treated = match field(itr) {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(&schema.treated, other)),
        };
        observations.push(Observation { unit: field(iu).to_string(), time, outcome, treated });
    }
    Ok(PanelData::from_observations(observations, t0_marker)?)
}

/// Writes a panel in the long format `read_panel` accepts, units in
/// canonical order and times ascending within each unit.
pub fn write_panel<W: Write>(writer: W, panel: &PanelData, schema: &Schema) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([&schema.unit, &schema.time, &schema.outcome, &schema.treated])?;
    let outcomes = panel.outcomes();
    for (j, unit) in panel.units().iter().enumerate() {
        let flag = if panel.treated()[j] { "1" } else { "0" };
        for (i, time) in panel.times().iter().enumerate() {
            wtr.write_record([unit.as_str(), &time.to_string(), &outcomes[(i, j)].to_string(), flag])?;
        }
    }
    wtr.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}
