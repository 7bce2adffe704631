//! Choice datasets: schema, CSV storage, splitting, standardization, and
//! synthetic generation.
//!
//! A dataset holds one row per choice situation: alternative-specific
//! attributes `x` (each column belongs to exactly one alternative),
//! individual covariates `z` shared across alternatives, and the chosen
//! alternative. The CSV form keeps the chosen alternative as an integer id in
//! a `choice` column, alternative attributes as `alt<k>__<name>` and
//! covariates as `z__<name>`.
//!
//! Synthetic data is calibrated per scenario to the moments of the survey
//! data the model families were built for: a five-mode travel survey for the
//! logit family and two-option lottery / delayed-reward experiments for the
//! prospect-theory and discounting families. Monetary amounts are drawn on a
//! thousand-dong scale so the nonlinear utilities are informative against
//! Gumbel noise; probability columns are drawn from Beta laws that hit the
//! published mean and standard deviation exactly.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dcm::{self, DcmParams, DcmSpec, HdParams, MnlParams, PtParams, Scenario};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::rng::{substream, STREAM_GENERATE, STREAM_SPLIT};

/// One alternative-specific column: owning alternative and attribute name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AltAttr {
    pub alt: usize,
    pub name: String,
}

/// Column layout of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub n_alternatives: usize,
    /// Alternative-specific columns in file order.
    pub alt_attrs: Vec<AltAttr>,
    /// Covariate columns in file order.
    pub indiv_attrs: Vec<String>,
}

impl DatasetSchema {
    pub fn n_x(&self) -> usize {
        self.alt_attrs.len()
    }

    pub fn n_z(&self) -> usize {
        self.indiv_attrs.len()
    }

    /// Column header for alternative-specific column `c`.
    pub fn x_column_name(&self, c: usize) -> String {
        format!("alt{}__{}", self.alt_attrs[c].alt, self.alt_attrs[c].name)
    }

    /// Column header for covariate `m`.
    pub fn z_column_name(&self, m: usize) -> String {
        format!("z__{}", self.indiv_attrs[m])
    }

    /// Index of the alternative-specific column with this header name.
    pub fn x_column_index(&self, header: &str) -> Option<usize> {
        (0..self.n_x()).find(|&c| self.x_column_name(c) == header)
    }

    /// Index of the covariate column with this header name.
    pub fn z_column_index(&self, header: &str) -> Option<usize> {
        (0..self.n_z()).find(|&m| self.z_column_name(m) == header)
    }

    /// Reconstructs a schema from a CSV header. The first column must be
    /// `choice`; the rest must be `alt<k>__<name>` or `z__<name>` columns.
    pub fn from_header(header: &[String]) -> Result<Self> {
        if header.first().map(String::as_str) != Some("choice") {
            return Err(Error::data("first column must be \"choice\""));
        }
        let mut alt_attrs = Vec::new();
        let mut indiv_attrs = Vec::new();
        let mut max_alt = None;
        for col in &header[1..] {
            if let Some(name) = col.strip_prefix("z__") {
                if name.is_empty() {
                    return Err(Error::data(format!("empty covariate name in \"{col}\"")));
                }
                indiv_attrs.push(name.to_string());
            } else if let Some(rest) = col.strip_prefix("alt") {
                let (id, name) = rest.split_once("__").ok_or_else(|| {
                    Error::data(format!("column \"{col}\" is not alt<k>__<name> or z__<name>"))
                })?;
                let alt: usize = id
                    .parse()
                    .map_err(|_| Error::data(format!("bad alternative id in \"{col}\"")))?;
                if name.is_empty() {
                    return Err(Error::data(format!("empty attribute name in \"{col}\"")));
                }
                max_alt = Some(max_alt.map_or(alt, |m: usize| m.max(alt)));
                alt_attrs.push(AltAttr {
                    alt,
                    name: name.to_string(),
                });
            } else {
                return Err(Error::data(format!(
                    "column \"{col}\" is not alt<k>__<name> or z__<name>"
                )));
            }
        }
        let n_alternatives = max_alt.map_or(0, |m| m + 1);
        if n_alternatives < 2 {
            return Err(Error::data("header describes fewer than two alternatives"));
        }
        Ok(DatasetSchema {
            n_alternatives,
            alt_attrs,
            indiv_attrs,
        })
    }
}

/// In-memory dataset. Construction validates shapes, finiteness, and choice
/// range, so every loaded instance satisfies the schema.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceDataset {
    schema: DatasetSchema,
    x: Array2<f64>,
    z: Array2<f64>,
    choices: Vec<usize>,
}

impl ChoiceDataset {
    pub fn from_parts(
        schema: DatasetSchema,
        x: Array2<f64>,
        z: Array2<f64>,
        choices: Vec<usize>,
    ) -> Result<Self> {
        let n = choices.len();
        if schema.n_alternatives < 2 {
            return Err(Error::data("need at least two alternatives"));
        }
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::data(format!(
                "row mismatch: {} choices, {} x rows, {} z rows",
                n,
                x.nrows(),
                z.nrows()
            )));
        }
        if x.ncols() != schema.n_x() || z.ncols() != schema.n_z() {
            return Err(Error::data(format!(
                "column mismatch: schema has {}+{} columns, data has {}+{}",
                schema.n_x(),
                schema.n_z(),
                x.ncols(),
                z.ncols()
            )));
        }
        for (i, &c) in choices.iter().enumerate() {
            if c >= schema.n_alternatives {
                return Err(Error::data(format!(
                    "row {i}: choice {c} out of range for {} alternatives",
                    schema.n_alternatives
                )));
            }
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite attribute value"));
        }
        Ok(ChoiceDataset {
            schema,
            x,
            z,
            choices,
        })
    }

    pub fn n(&self) -> usize {
        self.choices.len()
    }

    pub fn n_alternatives(&self) -> usize {
        self.schema.n_alternatives
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    /// Choice indicators as an N x K one-hot matrix.
    pub fn one_hot(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.n(), self.schema.n_alternatives));
        for (i, &c) in self.choices.iter().enumerate() {
            y[[i, c]] = 1.0;
        }
        y
    }

    /// Share of each alternative among the observed choices.
    pub fn choice_shares(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.schema.n_alternatives];
        for &c in &self.choices {
            counts[c] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / self.n() as f64)
            .collect()
    }

    fn select_rows(&self, idx: &[usize]) -> ChoiceDataset {
        let nx = self.x.ncols();
        let nz = self.z.ncols();
        let mut x = Array2::zeros((idx.len(), nx));
        let mut z = Array2::zeros((idx.len(), nz));
        let mut choices = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            x.row_mut(row).assign(&self.x.row(i));
            z.row_mut(row).assign(&self.z.row(i));
            choices.push(self.choices[i]);
        }
        ChoiceDataset {
            schema: self.schema.clone(),
            x,
            z,
            choices,
        }
    }
}

/// Deterministic random split. The train set gets `floor(n * fraction)`
/// rows; both sides keep the original row order.
pub fn split(
    ds: &ChoiceDataset,
    fraction: f64,
    seed: u64,
) -> Result<(ChoiceDataset, ChoiceDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = ds.n();
    let n_train = (n as f64 * fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::config(format!(
            "split of {n} rows at {fraction} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, STREAM_SPLIT);
    // Fisher-Yates; the first n_train shuffled entries become the train set.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let mut train_idx = idx[..n_train].to_vec();
    let mut test_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.select_rows(&train_idx), ds.select_rows(&test_idx)))
}

// ---------------------------------------------------------------------------
// Standardization

/// Per-column means and standard deviations fitted on a training set.
/// Degenerate columns (zero variance) record std 1 so they standardize to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub z_mean: Vec<f64>,
    pub z_std: Vec<f64>,
}

fn column_moments(m: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows().max(1) as f64;
    let mut means = Vec::with_capacity(m.ncols());
    let mut stds = Vec::with_capacity(m.ncols());
    for col in m.columns() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        means.push(mean);
        stds.push(if std > 1e-12 { std } else { 1.0 });
    }
    (means, stds)
}

impl StandardizationStats {
    pub fn fit(ds: &ChoiceDataset) -> Self {
        let (x_mean, x_std) = column_moments(ds.x());
        let (z_mean, z_std) = column_moments(ds.z());
        StandardizationStats {
            x_mean,
            x_std,
            z_mean,
            z_std,
        }
    }

    /// Stats that leave values untouched; used when a model is built directly
    /// in raw units.
    pub fn identity(n_x: usize, n_z: usize) -> Self {
        StandardizationStats {
            x_mean: vec![0.0; n_x],
            x_std: vec![1.0; n_x],
            z_mean: vec![0.0; n_z],
            z_std: vec![1.0; n_z],
        }
    }

    /// Standardized copies of the attribute and covariate matrices.
    pub fn transform(&self, ds: &ChoiceDataset) -> (Array2<f64>, Array2<f64>) {
        let mut x = ds.x().clone();
        let mut z = ds.z().clone();
        for (c, mut col) in x.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.x_mean[c]) / self.x_std[c]);
        }
        for (m, mut col) in z.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.z_mean[m]) / self.z_std[m]);
        }
        (x, z)
    }

    /// The same dataset with standardized values.
    pub fn apply(&self, ds: &ChoiceDataset) -> Result<ChoiceDataset> {
        if self.x_mean.len() != ds.x().ncols() || self.z_mean.len() != ds.z().ncols() {
            return Err(Error::config("stats do not match dataset columns"));
        }
        let (x, z) = self.transform(ds);
        ChoiceDataset::from_parts(ds.schema().clone(), x, z, ds.choices().to_vec())
    }

    pub fn x_row_std(&self, x_raw: ArrayView1<f64>) -> Vec<f64> {
        x_raw
            .iter()
            .enumerate()
            .map(|(c, v)| (v - self.x_mean[c]) / self.x_std[c])
            .collect()
    }

    pub fn z_row_std(&self, z_raw: ArrayView1<f64>) -> Vec<f64> {
        z_raw
            .iter()
            .enumerate()
            .map(|(m, v)| (v - self.z_mean[m]) / self.z_std[m])
            .collect()
    }

    /// Raw value of standardized attribute column `c`.
    pub fn x_raw_from_std(&self, c: usize, v: f64) -> f64 {
        self.x_mean[c] + self.x_std[c] * v
    }

    /// Raw value of standardized covariate column `m`.
    pub fn z_raw_from_std(&self, m: usize, v: f64) -> f64 {
        self.z_mean[m] + self.z_std[m] * v
    }
}

/// Standardizes a dataset on its own moments and returns the stats for reuse
/// on held-out data.
pub fn standardize(ds: &ChoiceDataset) -> Result<(ChoiceDataset, StandardizationStats)> {
    let stats = StandardizationStats::fit(ds);
    Ok((stats.apply(ds)?, stats))
}

// ---------------------------------------------------------------------------
// CSV

/// Writes the dataset with the canonical header. Floats are written in
/// shortest round-trip form, so save followed by load reproduces values
/// exactly.
pub fn save_csv(ds: &ChoiceDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let schema = ds.schema();
    let mut header = vec!["choice".to_string()];
    header.extend((0..schema.n_x()).map(|c| schema.x_column_name(c)));
    header.extend((0..schema.n_z()).map(|m| schema.z_column_name(m)));
    writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    for i in 0..ds.n() {
        line.clear();
        line.push_str(&ds.choices()[i].to_string());
        for v in ds.x().row(i) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        for v in ds.z().row(i) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a CSV whose header matches `schema` exactly (same columns, same
/// order). Row-level problems report the 1-based line number.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<ChoiceDataset> {
    let (ds, file_schema) = load_csv_any(path)?;
    if &file_schema != schema {
        return Err(Error::data(format!(
            "{}: header does not match the expected schema",
            path.display()
        )));
    }
    Ok(ds)
}

/// Loads a CSV, reconstructing the schema from its header.
pub fn load_csv_infer(path: &Path) -> Result<ChoiceDataset> {
    Ok(load_csv_any(path)?.0)
}

fn load_csv_any(path: &Path) -> Result<(ChoiceDataset, DatasetSchema)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let schema = DatasetSchema::from_header(&header)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let nx = schema.n_x();
    let nz = schema.n_z();
    let ncols = 1 + nx + nz;

    let mut x_data: Vec<f64> = Vec::new();
    let mut z_data: Vec<f64> = Vec::new();
    let mut choices: Vec<usize> = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let line = rec_idx + 2; // header is line 1
        let at = |msg: String| Error::data(format!("{} line {line}: {msg}", path.display()));
        let record = record.map_err(|e| at(e.to_string()))?;
        if record.len() != ncols {
            return Err(at(format!("expected {ncols} fields, got {}", record.len())));
        }
        let choice: usize = record[0]
            .parse()
            .map_err(|_| at(format!("bad choice id \"{}\"", &record[0])))?;
        if choice >= schema.n_alternatives {
            return Err(at(format!(
                "choice {choice} out of range for {} alternatives",
                schema.n_alternatives
            )));
        }
        choices.push(choice);
        for (f, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| at(format!("bad number \"{field}\"")))?;
            if !v.is_finite() {
                return Err(at(format!("non-finite value \"{field}\"")));
            }
            if f < nx {
                x_data.push(v);
            } else {
                z_data.push(v);
            }
        }
    }
    let n = choices.len();
    let x = Array2::from_shape_vec((n, nx), x_data).expect("row-major by construction");
    let z = Array2::from_shape_vec((n, nz), z_data).expect("row-major by construction");
    let ds = ChoiceDataset::from_parts(schema.clone(), x, z, choices)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    Ok((ds, schema))
}

// ---------------------------------------------------------------------------
// Summaries

#[derive(Clone, Debug, Serialize)]
pub struct ColumnSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub columns: Vec<ColumnSummary>,
    pub choice_counts: Vec<usize>,
}

pub fn summarize(ds: &ChoiceDataset) -> DatasetSummary {
    let (xm, xs) = column_moments(ds.x());
    let (zm, zs) = column_moments(ds.z());
    let schema = ds.schema();
    let mut columns = Vec::new();
    for c in 0..schema.n_x() {
        columns.push(ColumnSummary {
            name: schema.x_column_name(c),
            mean: xm[c],
            std: xs[c],
        });
    }
    for m in 0..schema.n_z() {
        columns.push(ColumnSummary {
            name: schema.z_column_name(m),
            mean: zm[m],
            std: zs[m],
        });
    }
    let mut choice_counts = vec![0usize; schema.n_alternatives];
    for &c in ds.choices() {
        choice_counts[c] += 1;
    }
    DatasetSummary {
        n: ds.n(),
        columns,
        choice_counts,
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Choices sampled with additive Gumbel noise, i.e. from the softmax of
    /// the true utilities.
    Gumbel,
    /// Deterministic argmax choices.
    None,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub scenario: Scenario,
    /// Rows to generate; defaults to the calibration sample size.
    pub n: Option<usize>,
    pub noise: NoiseKind,
    /// True parameters; defaults to the calibrated scenario parameters.
    pub true_params: Option<DcmParams>,
    /// Weight of a smooth residual added to the true utilities that the
    /// theory family cannot express (see `residual_utility`). Zero keeps the
    /// truth inside the family.
    pub nonlinearity: f64,
    pub seed: u64,
}

impl GenerateConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        GenerateConfig {
            scenario,
            n: None,
            noise: NoiseKind::Gumbel,
            true_params: None,
            nonlinearity: 0.0,
            seed,
        }
    }
}

/// Calibration sample sizes.
pub fn default_n(scenario: Scenario) -> usize {
    match scenario {
        Scenario::Mnl => 8418,
        Scenario::Pt => 5249,
        Scenario::Hd => 5340,
    }
}

/// Canonical column layout per scenario.
pub fn canonical_schema(scenario: Scenario) -> DatasetSchema {
    let alt = |alt: usize, name: &str| AltAttr {
        alt,
        name: name.to_string(),
    };
    match scenario {
        Scenario::Mnl => DatasetSchema {
            n_alternatives: 5,
            alt_attrs: vec![
                alt(0, "walk_time"),
                alt(1, "cost"),
                alt(1, "walk_time"),
                alt(1, "wait_time"),
                alt(1, "ivt"),
                alt(2, "cost"),
                alt(2, "wait_time"),
                alt(2, "ivt"),
                alt(3, "cost"),
                alt(3, "walk_time"),
                alt(3, "ivt"),
                alt(4, "cost"),
                alt(4, "wait_time"),
                alt(4, "ivt"),
            ],
            indiv_attrs: [
                "male",
                "age_under_35",
                "age_over_60",
                "low_education",
                "high_education",
                "low_income",
                "high_income",
                "full_time_job",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        },
        Scenario::Pt => DatasetSchema {
            n_alternatives: 2,
            alt_attrs: vec![
                alt(0, "reward_1"),
                alt(0, "prob_1"),
                alt(0, "reward_2"),
                alt(0, "prob_2"),
                alt(1, "reward_1"),
                alt(1, "prob_1"),
                alt(1, "reward_2"),
                alt(1, "prob_2"),
            ],
            indiv_attrs: [
                "male",
                "age",
                "school_years",
                "income",
                "chinese",
                "market_distance",
                "south",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        },
        Scenario::Hd => DatasetSchema {
            n_alternatives: 2,
            alt_attrs: vec![
                alt(0, "reward"),
                alt(0, "delay_days"),
                alt(1, "reward"),
                alt(1, "delay_days"),
            ],
            indiv_attrs: [
                "male",
                "age",
                "school_years",
                "income",
                "chinese",
                "market_distance",
                "south",
                "trusted_agent",
                "risk_payment",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        },
    }
}

/// Calibrated true parameters used when a generate call does not supply its
/// own. Covariates enter on their raw scales, so the coefficients are small.
pub fn default_true_params(scenario: Scenario) -> DcmParams {
    match scenario {
        Scenario::Mnl => {
            let mut z_coefs = vec![vec![0.0; 8]; 5];
            // walk: older people walk less, bus: low income rides more,
            // drive: high income and full-time job drive more.
            z_coefs[0][2] = -0.5;
            z_coefs[1][5] = 0.5;
            z_coefs[3][6] = 0.5;
            z_coefs[3][7] = 0.3;
            DcmParams::Mnl(MnlParams {
                constants: vec![0.05, 0.05, -0.22, 0.59, 0.0],
                attr_coefs: vec![
                    -0.045, // walk: walk_time
                    -0.10, -0.045, -0.05, -0.03, // bus
                    -0.10, -0.05, -0.03, // rideshare
                    -0.10, -0.045, -0.03, // drive
                    -0.10, -0.05, -0.03, // av
                ],
                z_coefs,
            })
        }
        Scenario::Pt => DcmParams::Pt(PtParams {
            r0: 0.65,
            alpha0: 0.80,
            lambda0: 2.25,
            r_z: vec![0.0, -0.002, 0.0, 0.0, 0.0, 0.0, 0.0],
            alpha_z: vec![0.0; 7],
            lambda_z: vec![0.15, 0.0, 0.0, 0.0, 0.0, 0.0, 0.10],
        }),
        Scenario::Hd => DcmParams::Hd(HdParams {
            beta0: 0.03,
            r0: 0.012,
            beta_z: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.01, 0.0],
            r_z: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.004, 0.0, 0.0],
        }),
    }
}

struct ColDraw {
    mean: f64,
    std: f64,
}

/// Generation moments for the alternative-specific columns, aligned with the
/// canonical schema. Probability columns are handled separately.
fn x_draws(scenario: Scenario) -> Vec<ColDraw> {
    let d = |mean, std| ColDraw { mean, std };
    match scenario {
        Scenario::Mnl => vec![
            d(60.50, 54.88),
            d(2.070, 1.266),
            d(11.96, 10.78),
            d(7.732, 5.033),
            d(25.06, 18.91),
            d(14.48, 11.64),
            d(7.108, 4.803),
            d(18.28, 13.39),
            d(10.49, 10.57),
            d(3.968, 4.176),
            d(17.43, 14.10),
            d(16.08, 14.60),
            d(7.249, 5.674),
            d(20.11, 16.99),
        ],
        Scenario::Pt => vec![
            d(32.0, 16.0),
            d(0.638, 0.263), // beta draw
            d(16.0, 15.0),
            d(0.0, 0.0), // complement of prob_1
            d(76.0, 38.0),
            d(0.486, 0.252), // beta draw
            d(-0.34, 9.64),  // loss branch, unclipped
            d(0.0, 0.0),     // complement of prob_1
        ],
        Scenario::Hd => vec![
            d(75.0, 78.0),
            d(0.0, 0.0), // immediate: no delay
            d(150.0, 104.0),
            d(35.67, 32.33),
        ],
    }
}

/// (mean, std, bernoulli) for covariates, aligned with the canonical schema.
fn z_draws(scenario: Scenario) -> Vec<(f64, f64, bool)> {
    match scenario {
        Scenario::Mnl => vec![
            (0.383, 0.0, true),
            (0.329, 0.0, true),
            (0.075, 0.0, true),
            (0.331, 0.0, true),
            (0.480, 0.0, true),
            (0.035, 0.0, true),
            (0.606, 0.0, true),
            (0.602, 0.0, true),
        ],
        Scenario::Pt => vec![
            (0.619, 0.0, true),
            (47.46, 12.89, false),
            (6.746, 3.821, false),
            (20.27, 21.15, false),
            (0.055, 0.0, true),
            (1.482, 1.840, false),
            (0.541, 0.0, true),
        ],
        Scenario::Hd => vec![
            (0.618, 0.0, true),
            (47.51, 12.94, false),
            (6.764, 3.843, false),
            (20.71, 21.23, false),
            (0.055, 0.0, true),
            (1.506, 1.846, false),
            (0.534, 0.0, true),
            (0.028, 0.0, true),
            (20.97, 21.17, false),
        ],
    }
}

fn beta_params(mean: f64, std: f64) -> (f64, f64) {
    let var = std * std;
    let nu = mean * (1.0 - mean) / var - 1.0;
    (mean * nu, (1.0 - mean) * nu)
}

/// Smooth per-alternative utility term outside every theory family: for each
/// alternative, the sine of twice the mean of its standardized attributes.
/// Standardization uses the generator's own calibration moments, so the term
/// is a fixed function of the drawn attributes.
fn residual_utility(
    layout_cols: &[Vec<usize>],
    draws: &[ColDraw],
    prob_cols: &[usize],
    x: ArrayView1<f64>,
    out: &mut [f64],
) {
    for (alt, cols) in layout_cols.iter().enumerate() {
        let mut s = 0.0;
        for &c in cols {
            if prob_cols.contains(&c) {
                // Probability columns live on (0, 1); center at one half.
                s += (x[c] - 0.5) * 2.0;
            } else if draws[c].std > 0.0 {
                s += (x[c] - draws[c].mean) / draws[c].std;
            }
        }
        let m = (s / cols.len() as f64) * 2.0;
        out[alt] = m.sin();
    }
}

/// Generates a synthetic dataset. Returns the data and the true parameters
/// that produced it.
pub fn generate_synthetic(cfg: &GenerateConfig) -> Result<(ChoiceDataset, DcmParams)> {
    let schema = canonical_schema(cfg.scenario);
    let n = cfg.n.unwrap_or_else(|| default_n(cfg.scenario));
    if n == 0 {
        return Err(Error::config("cannot generate an empty dataset"));
    }
    let params = match &cfg.true_params {
        Some(p) => {
            if p.scenario() != cfg.scenario {
                return Err(Error::config(format!(
                    "true parameters are for {}, scenario is {}",
                    p.scenario(),
                    cfg.scenario
                )));
            }
            validate_true_params(p)?;
            p.clone()
        }
        None => default_true_params(cfg.scenario),
    };
    let spec = DcmSpec::infer(cfg.scenario, &schema)?;
    let layout = spec.layout()?;
    let draws = x_draws(cfg.scenario);
    let zdraws = z_draws(cfg.scenario);
    let k = schema.n_alternatives;

    // Columns drawn as Beta probabilities, and their complements.
    let (prob_cols, complement_of): (Vec<usize>, Vec<(usize, usize)>) = match cfg.scenario {
        Scenario::Pt => (vec![1, 3, 5, 7], vec![(3, 1), (7, 5)]),
        _ => (vec![], vec![]),
    };
    let beta_dists: Vec<(usize, Beta<f64>)> = prob_cols
        .iter()
        .filter(|c| !complement_of.iter().any(|(comp, _)| comp == *c))
        .map(|&c| {
            let (a, b) = beta_params(draws[c].mean, draws[c].std);
            (c, Beta::new(a, b).expect("calibrated beta parameters"))
        })
        .collect();

    // Per-alternative column lists for the residual term.
    let mut alt_cols = vec![Vec::new(); k];
    for (c, a) in schema.alt_attrs.iter().enumerate() {
        alt_cols[a.alt].push(c);
    }

    let mut rng = substream(cfg.seed, STREAM_GENERATE);
    let mut x = Array2::zeros((n, schema.n_x()));
    let mut z = Array2::zeros((n, schema.n_z()));
    let mut choices = Vec::with_capacity(n);
    let mut residual = vec![0.0; k];

    for i in 0..n {
        // Attribute draws, in column order.
        for (c, d) in draws.iter().enumerate() {
            if let Some((_, prob)) = complement_of.iter().find(|(comp, _)| *comp == c) {
                x[[i, c]] = 1.0 - x[[i, *prob]];
            } else if let Some((_, dist)) = beta_dists.iter().find(|(bc, _)| *bc == c) {
                x[[i, c]] = dist.sample(&mut rng);
            } else if d.std == 0.0 {
                x[[i, c]] = d.mean;
            } else {
                let v = Normal::new(d.mean, d.std).unwrap().sample(&mut rng);
                x[[i, c]] = clip_column(cfg.scenario, c, v);
            }
        }
        for (m, &(mean, std, bernoulli)) in zdraws.iter().enumerate() {
            z[[i, m]] = if bernoulli {
                f64::from(rng.random::<f64>() < mean)
            } else {
                let v = Normal::new(mean, std).unwrap().sample(&mut rng);
                clip_covariate(v, mean)
            };
        }

        let mut eval = dcm::utilities_row(&layout, &params, x.row(i), z.row(i));
        if cfg.nonlinearity != 0.0 {
            residual_utility(&alt_cols, &draws, &prob_cols, x.row(i), &mut residual);
            for (v, r) in eval.utilities.iter_mut().zip(&residual) {
                *v += cfg.nonlinearity * r;
            }
        }
        match cfg.noise {
            NoiseKind::Gumbel => {
                for v in eval.utilities.iter_mut() {
                    *v += gumbel(&mut rng);
                }
            }
            NoiseKind::None => {}
        }
        choices.push(argmax(&eval.utilities));
    }

    let ds = ChoiceDataset::from_parts(schema, x, z, choices)?;
    Ok((ds, params))
}

fn validate_true_params(p: &DcmParams) -> Result<()> {
    match p {
        DcmParams::Mnl(_) => Ok(()),
        DcmParams::Pt(p) => {
            if p.r0 > 0.0 && p.alpha0 > 0.0 && p.lambda0 > 0.0 {
                Ok(())
            } else {
                Err(Error::config("pt truth needs r0, alpha0, lambda0 > 0"))
            }
        }
        DcmParams::Hd(h) => {
            if h.beta0 > 0.0 && h.r0 > 0.0 {
                Ok(())
            } else {
                Err(Error::config("hd truth needs beta0, r0 > 0"))
            }
        }
    }
}

/// Valid-range clips for normal draws; probability columns never go through
/// here.
fn clip_column(scenario: Scenario, c: usize, v: f64) -> f64 {
    match scenario {
        // Times and costs are nonnegative.
        Scenario::Mnl => v.max(0.0),
        Scenario::Pt => {
            if c == 6 {
                v // the loss branch may be negative
            } else {
                v.max(0.5)
            }
        }
        Scenario::Hd => {
            if c == 3 {
                v.clamp(1.0, 365.0)
            } else {
                v.max(1.0)
            }
        }
    }
}

fn clip_covariate(v: f64, mean: f64) -> f64 {
    if mean >= 18.0 && mean <= 50.0 {
        // ages
        v.clamp(18.0, 90.0)
    } else {
        v.max(0.0)
    }
}

/// Standard Gumbel draw by inverse CDF. Adding one of these to each utility
/// and taking the argmax samples a choice from the softmax of the utilities;
/// the generator's `NoiseKind::Gumbel` path relies on exactly this.
pub fn gumbel(rng: &mut impl Rng) -> f64 {
    let mut u: f64 = rng.random();
    if u <= 0.0 {
        u = f64::MIN_POSITIVE;
    }
    -(-u.ln()).ln()
}

/// Two alternatives with one generic attribute each and one covariate; the
/// smallest schema other modules can build hand-checked models on.
#[cfg(test)]
pub(crate) fn tiny_binary_schema() -> DatasetSchema {
    DatasetSchema {
        n_alternatives: 2,
        alt_attrs: vec![
            AltAttr {
                alt: 0,
                name: "a".into(),
            },
            AltAttr {
                alt: 1,
                name: "a".into(),
            },
        ],
        indiv_attrs: vec!["w".into()],
    }
}
