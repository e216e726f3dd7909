//! CSV datasets, the versioned JSON model store and trace export.
//!
//! Dataset files carry a header naming the channels: `t, u1.., d1.., y1..`. The sample
//! period is inferred from `t`, which must be uniform to within 1% of the period.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::ControllerKind;
use crate::narx::{NarxModel, TimeSeriesDataset};
use crate::stability::CertificationReport;

/// Version written by [`ModelStore::to_json`]; other versions are rejected on load.
pub const SCHEMA_VERSION: u32 = 1;

/// Allowed deviation of any time step from the inferred sample period, relative.
const JITTER_TOL: f64 = 0.01;

/// Expected channel counts of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub inputs: usize,
    pub disturbances: usize,
    pub outputs: usize,
}

impl DatasetSchema {
    pub fn of(data: &TimeSeriesDataset) -> Self {
        Self {
            inputs: data.inputs.len(),
            disturbances: data.disturbances.len(),
            outputs: data.outputs.len(),
        }
    }

    fn columns(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=self.inputs).map(|j| format!("u{j}")));
        cols.extend((1..=self.disturbances).map(|j| format!("d{j}")));
        cols.extend((1..=self.outputs).map(|j| format!("y{j}")));
        cols
    }
}

/// Counts the contiguous columns `prefix1, prefix2, ..` present in the header.
fn count_prefixed(header: &[String], prefix: char) -> usize {
    (1..)
        .take_while(|j| header.iter().any(|h| *h == format!("{prefix}{j}")))
        .count()
}

pub fn load_dataset(path: &Path, schema: Option<&DatasetSchema>) -> Result<TimeSeriesDataset> {
    read_dataset(File::open(path)?, schema)
}

/// Parses a dataset; without a schema the channel counts are taken from the header.
pub fn read_dataset<R: Read>(
    reader: R,
    schema: Option<&DatasetSchema>,
) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let schema = match schema {
        Some(s) => *s,
        None => DatasetSchema {
            inputs: count_prefixed(&header, 'u'),
            disturbances: count_prefixed(&header, 'd'),
            outputs: count_prefixed(&header, 'y'),
        },
    };
    let mut wanted = schema.columns();
    if schema.inputs == 0 {
        wanted.insert(1, "u1".into());
    }
    if schema.outputs == 0 {
        wanted.push("y1".into());
    }
    let index: Vec<usize> = wanted
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::Schema(format!("missing column {c}")))
        })
        .collect::<Result<_>>()?;

    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); index.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for ((col, &i), name) in cols.iter_mut().zip(&index).zip(&wanted) {
            let cell = rec.get(i).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                Error::Schema(format!(
                    "row {}: column {name}: cannot parse {cell:?}",
                    row + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Schema(format!(
                    "row {}: column {name}: non-finite value {cell}",
                    row + 1
                )));
            }
            col.push(v);
        }
    }
    let t = &cols[0];
    if t.len() < 2 {
        return Err(Error::Schema(format!(
            "need at least 2 rows to infer the sample period, got {}",
            t.len()
        )));
    }
    let period = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(period > 0.0) {
        return Err(Error::Schema("time column must be increasing".into()));
    }
    if let Some(w) = t
        .windows(2)
        .find(|w| ((w[1] - w[0]) - period).abs() > JITTER_TOL * period)
    {
        return Err(Error::Schema(format!(
            "nonuniform sampling: step {} at t = {} deviates from period {period} by more than 1%",
            w[1] - w[0],
            w[0]
        )));
    }
    let mut rest = cols.into_iter().skip(1);
    let inputs: Vec<_> = rest.by_ref().take(schema.inputs).collect();
    let disturbances: Vec<_> = rest.by_ref().take(schema.disturbances).collect();
    let outputs: Vec<_> = rest.collect();
    TimeSeriesDataset::new(period, inputs, disturbances, outputs)
}

pub fn save_dataset(path: &Path, data: &TimeSeriesDataset) -> Result<()> {
    write_dataset(File::create(path)?, data)
}

pub fn write_dataset<W: Write>(writer: W, data: &TimeSeriesDataset) -> Result<()> {
    let names = DatasetSchema::of(data).columns();
    let series: Vec<&Vec<f64>> = data
        .inputs
        .iter()
        .chain(&data.disturbances)
        .chain(&data.outputs)
        .collect();
    let time: Vec<f64> = (0..data.len())
        .map(|k| k as f64 * data.sample_period)
        .collect();
    write_columns(writer, &names, &time, &series)
}

/// Writes `index` followed by equally long `series` as CSV columns.
pub fn write_columns<W: Write>(
    writer: W,
    names: &[String],
    index: &[f64],
    series: &[&Vec<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(names)?;
    for (k, t) in index.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(series.iter().map(|s| s[k].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Provenance of a trained model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    /// SHA-256 of the canonical JSON of the configuration used.
    pub config_hash: String,
    /// LOLIMOT error per iteration, one list per model.
    #[serde(default)]
    pub error_history: Vec<Vec<f64>>,
}

/// Persisted models of one controller variant.
///
/// For [`ControllerKind::IndependentSiso`] each model is its own single-channel system;
/// otherwise the models jointly describe one system, one model per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStore {
    pub schema_version: u32,
    pub kind: ControllerKind,
    pub models: Vec<NarxModel>,
    pub metadata: TrainingMetadata,
    #[serde(default)]
    pub certificate: Option<CertificationReport>,
}

impl ModelStore {
    pub fn new(kind: ControllerKind, models: Vec<NarxModel>, metadata: TrainingMetadata) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            models,
            metadata,
            certificate: None,
        }
    }

    /// The models grouped into the systems a controller is built from.
    pub fn systems(&self) -> Vec<Vec<NarxModel>> {
        match self.kind {
            ControllerKind::IndependentSiso => {
                self.models.iter().map(|m| vec![m.clone()]).collect()
            }
            _ => vec![self.models.clone()],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Schema("model store has no schema_version".into()))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(Error::Schema(format!(
                "unsupported model store schema version {version} (expected {SCHEMA_VERSION})"
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the stored document.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the compact JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}
