//! CSV loading, unit-ball normalization and the balanced resampling
//! protocols used for the IHDP- and Lalonde-style benchmarks.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Column names for the treatment, the outcome and the covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub treatment_column: String,
    pub outcome_column: String,
    pub covariate_columns: Vec<String>,
    /// Optional column holding a realization index (one dataset per value).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realization_column: Option<String>,
}

impl CsvSchema {
    pub fn new(treatment: &str, outcome: &str, covariates: &[&str]) -> Result<Self> {
        let schema = Self {
            treatment_column: treatment.to_string(),
            outcome_column: outcome.to_string(),
            covariate_columns: covariates.iter().map(|s| s.to_string()).collect(),
            realization_column: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Every header other than treatment, outcome and realization becomes a
    /// covariate, in file order.
    pub fn infer(headers: &[String], treatment: &str, outcome: &str, realization: Option<&str>) -> Result<Self> {
        let covariate_columns = headers
            .iter()
            .filter(|h| *h != treatment && *h != outcome && Some(h.as_str()) != realization)
            .cloned()
            .collect();
        let schema = Self {
            treatment_column: treatment.to_string(),
            outcome_column: outcome.to_string(),
            covariate_columns,
            realization_column: realization.map(str::to_string),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariate_columns.is_empty() {
            return Err(Error::Config("schema needs at least one covariate column".into()));
        }
        let mut names: Vec<&str> = self.all_columns().collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("column '{}' appears twice in the schema", w[0])));
        }
        Ok(())
    }

    fn all_columns(&self) -> impl Iterator<Item = &str> {
        [self.treatment_column.as_str(), self.outcome_column.as_str()]
            .into_iter()
            .chain(self.covariate_columns.iter().map(String::as_str))
            .chain(self.realization_column.as_deref())
    }
}

/// Parsed rows before normalization; covariates are unrestricted here.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedTable {
    pub covariate_names: Vec<String>,
    pub covariates: Array2<f64>,
    pub treatments: Vec<u8>,
    pub outcomes: Vec<f64>,
    pub realizations: Option<Vec<i64>>,
}

impl StagedTable {
    pub fn n_rows(&self) -> usize {
        self.treatments.len()
    }

    /// Splits by realization index (ascending). A table without a
    /// realization column yields itself under index 0.
    pub fn by_realization(&self) -> BTreeMap<i64, StagedTable> {
        let Some(real) = &self.realizations else {
            return BTreeMap::from([(0, self.clone())]);
        };
        let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &r) in real.iter().enumerate() {
            groups.entry(r).or_default().push(i);
        }
        groups
            .into_iter()
            .map(|(r, rows)| {
                let table = StagedTable {
                    covariate_names: self.covariate_names.clone(),
                    covariates: self.covariates.select(ndarray::Axis(0), &rows),
                    treatments: rows.iter().map(|&i| self.treatments[i]).collect(),
                    outcomes: rows.iter().map(|&i| self.outcomes[i]).collect(),
                    realizations: Some(vec![r; rows.len()]),
                };
                (r, table)
            })
            .collect()
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<StagedTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema).map_err(|e| match e {
        Error::Io { message, .. } => Error::io(path, message),
        other => other,
    })
}

/// Parses CSV from any reader. Row numbers in errors count data rows from 1.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<StagedTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::io("<csv>", e))?.clone();
    let position = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 0,
            column: name.to_string(),
            message: "column missing from header".into(),
        })
    };
    let t_col = position(&schema.treatment_column)?;
    let y_col = position(&schema.outcome_column)?;
    let x_cols = schema
        .covariate_columns
        .iter()
        .map(|c| position(c))
        .collect::<Result<Vec<_>>>()?;
    let r_col = schema.realization_column.as_deref().map(position).transpose()?;

    let d = x_cols.len();
    let mut xs = Vec::new();
    let mut treatments = Vec::new();
    let mut outcomes = Vec::new();
    let mut realizations = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: name.to_string(),
                message: format!("'{raw}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("'{raw}' is not finite"),
                });
            }
            Ok(v)
        };
        let t = cell(t_col, &schema.treatment_column)?;
        if t != 0.0 && t != 1.0 {
            return Err(Error::Parse {
                row,
                column: schema.treatment_column.clone(),
                message: format!("treatment {t} is not 0 or 1"),
            });
        }
        treatments.push(t as u8);
        outcomes.push(cell(y_col, &schema.outcome_column)?);
        for (&c, name) in x_cols.iter().zip(&schema.covariate_columns) {
            xs.push(cell(c, name)?);
        }
        if let (Some(c), Some(name)) = (r_col, &schema.realization_column) {
            let v = cell(c, name)?;
            if v.fract() != 0.0 {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: format!("realization index {v} is not an integer"),
                });
            }
            realizations.push(v as i64);
        }
    }
    if treatments.is_empty() {
        return Err(Error::InvalidData("CSV has a header but no data rows".into()));
    }
    let n = treatments.len();
    Ok(StagedTable {
        covariate_names: schema.covariate_columns.clone(),
        covariates: Array2::from_shape_vec((n, d), xs).expect("row-major fill"),
        treatments,
        outcomes,
        realizations: r_col.map(|_| realizations),
    })
}

/// Divides every covariate row by the largest row norm, so the largest row
/// lands exactly on the unit sphere. Returns the factor used (1 when all
/// covariates are zero).
pub fn normalize_unit_ball(table: &StagedTable) -> Result<(Dataset, f64)> {
    if table.n_rows() == 0 {
        return Err(Error::InvalidData("cannot normalize an empty table".into()));
    }
    let max_norm = table
        .covariates
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max);
    let factor = if max_norm > 0.0 { max_norm } else { 1.0 };
    let data = Dataset::new(
        &table.covariates / factor,
        table.treatments.clone(),
        Array1::from(table.outcomes.clone()),
    )?;
    Ok((data, factor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleKind {
    /// D_m from a train pool and D_n from a disjoint test pool, both
    /// balanced per arm and drawn with replacement.
    IhdpBalanced,
    /// D_n drawn per arm without replacement; D_m per arm with replacement
    /// from the units not in D_n.
    LalondeBalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleProtocol {
    pub kind: ResampleKind,
    #[serde(default = "default_fit_per_arm")]
    pub fit_per_arm: usize,
    #[serde(default = "default_estimate_per_arm")]
    pub estimate_per_arm: usize,
    #[serde(default)]
    pub replacement_fit: Option<bool>,
    #[serde(default)]
    pub replacement_estimate: Option<bool>,
    /// Share of each arm held out as the test pool when only one table is
    /// supplied to the IHDP protocol.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_fit_per_arm() -> usize {
    250
}

fn default_estimate_per_arm() -> usize {
    100
}

fn default_test_fraction() -> f64 {
    0.1
}

impl ResampleProtocol {
    pub fn new(kind: ResampleKind) -> Self {
        Self {
            kind,
            fit_per_arm: default_fit_per_arm(),
            estimate_per_arm: default_estimate_per_arm(),
            replacement_fit: None,
            replacement_estimate: None,
            test_fraction: default_test_fraction(),
        }
    }

    pub fn replacement_fit(&self) -> bool {
        self.replacement_fit.unwrap_or(true)
    }

    pub fn replacement_estimate(&self) -> bool {
        self.replacement_estimate
            .unwrap_or(self.kind == ResampleKind::IhdpBalanced)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fit_per_arm == 0 || self.estimate_per_arm == 0 {
            return Err(Error::Config("resample counts must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction = {} must lie in (0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// D_m and D_n with the source row of every drawn unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub fit: Dataset,
    pub estimate: Dataset,
    pub fit_indices: Vec<usize>,
    pub estimate_indices: Vec<usize>,
}

fn draw(pool: &[usize], k: usize, replace: bool, stream: &mut RngStream) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::SampleSize("cannot draw from an empty pool".into()));
    }
    if replace {
        return Ok((0..k).map(|_| pool[stream.index(pool.len())]).collect());
    }
    if k > pool.len() {
        return Err(Error::SampleSize(format!(
            "requested {k} units without replacement from a pool of {}",
            pool.len()
        )));
    }
    let perm = stream.permutation(pool.len());
    Ok(perm[..k].iter().map(|&i| pool[i]).collect())
}

/// Applies the protocol to a single table. For the IHDP protocol each arm
/// is first split into a train pool and a test pool.
pub fn resample(data: &Dataset, protocol: &ResampleProtocol, stream: &mut RngStream) -> Result<Resampled> {
    protocol.validate()?;
    let mut fit_indices = Vec::new();
    let mut estimate_indices = Vec::new();
    for treated in [true, false] {
        let arm = data.arm_indices(treated);
        if arm.is_empty() {
            return Err(Error::SampleSize(format!(
                "no {} units to resample",
                if treated { "treated" } else { "control" }
            )));
        }
        let (fit_pool, est_pool) = match protocol.kind {
            ResampleKind::IhdpBalanced => {
                if arm.len() < 2 {
                    return Err(Error::SampleSize("an arm needs two units to form train and test pools".into()));
                }
                let n_test = ((arm.len() as f64 * protocol.test_fraction).round() as usize).clamp(1, arm.len() - 1);
                let perm = stream.permutation(arm.len());
                let test: Vec<usize> = perm[..n_test].iter().map(|&k| arm[k]).collect();
                let train: Vec<usize> = perm[n_test..].iter().map(|&k| arm[k]).collect();
                (train, test)
            }
            ResampleKind::LalondeBalanced => (Vec::new(), arm),
        };
        let est = draw(&est_pool, protocol.estimate_per_arm, protocol.replacement_estimate(), stream)?;
        let fit_pool = match protocol.kind {
            ResampleKind::IhdpBalanced => fit_pool,
            ResampleKind::LalondeBalanced => {
                let mut used = est.clone();
                used.sort_unstable();
                used.dedup();
                est_pool.into_iter().filter(|i| used.binary_search(i).is_err()).collect()
            }
        };
        let fit = draw(&fit_pool, protocol.fit_per_arm, protocol.replacement_fit(), stream)?;
        estimate_indices.extend(est);
        fit_indices.extend(fit);
    }
    Ok(Resampled {
        fit: data.select(&fit_indices),
        estimate: data.select(&estimate_indices),
        fit_indices,
        estimate_indices,
    })
}

/// IHDP protocol with explicit train and test tables.
pub fn resample_pools(
    train: &Dataset,
    test: &Dataset,
    protocol: &ResampleProtocol,
    stream: &mut RngStream,
) -> Result<(Dataset, Dataset)> {
    protocol.validate()?;
    let mut fit_idx = Vec::new();
    let mut est_idx = Vec::new();
    for treated in [true, false] {
        est_idx.extend(draw(
            &test.arm_indices(treated),
            protocol.estimate_per_arm,
            protocol.replacement_estimate(),
            stream,
        )?);
        fit_idx.extend(draw(
            &train.arm_indices(treated),
            protocol.fit_per_arm,
            protocol.replacement_fit(),
            stream,
        )?);
    }
    Ok((train.select(&fit_idx), test.select(&est_idx)))
}
