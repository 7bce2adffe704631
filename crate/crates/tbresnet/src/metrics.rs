//! Prediction metrics, aggregate choice-probability elasticities, and a
//! Monte-Carlo empirical Rademacher estimator for finite function classes.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ChoiceDataset;
use crate::error::{Error, Result};
use crate::model::{softmax_row, TbResNet, LOSS_PROB_FLOOR};
use crate::parallel;
use crate::rng::{indexed_substream, STREAM_RADEMACHER};

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub cross_entropy: f64,
    /// F1 weighted by true class shares.
    pub f1: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub class_f1: Vec<f64>,
    /// Counts indexed [true][predicted].
    pub confusion: Vec<Vec<u64>>,
}

impl MetricReport {
    /// Scalar metrics as a two-column CSV.
    pub fn to_csv_string(&self) -> String {
        format!(
            "metric,value\naccuracy,{}\ncross_entropy,{}\nf1,{}\n",
            self.accuracy, self.cross_entropy, self.f1
        )
    }

    /// Per-class precision, recall, and F1 as CSV.
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for k in 0..self.precision.len() {
            let support: u64 = self.confusion[k].iter().sum();
            out.push_str(&format!(
                "{k},{},{},{},{support}\n",
                self.precision[k], self.recall[k], self.class_f1[k]
            ));
        }
        out
    }

    /// Confusion counts as CSV, one row per true class.
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut out = String::from("true");
        for j in 0..k {
            out.push_str(&format!(",pred_{j}"));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&i.to_string());
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_probabilities(probabilities: &Array2<f64>, choices: &[usize], k: usize) -> Result<()> {
    if probabilities.ncols() != k {
        return Err(Error::config(format!(
            "probability matrix has {} columns for {} alternatives",
            probabilities.ncols(),
            k
        )));
    }
    if probabilities.nrows() != choices.len() {
        return Err(Error::config("probability rows and choices differ in length"));
    }
    if choices.is_empty() {
        return Err(Error::data("no observations to score"));
    }
    for (i, row) in probabilities.rows().into_iter().enumerate() {
        let mut sum = 0.0;
        for &p in row {
            if !(p.is_finite() && (-1e-12..=1.0 + 1e-12).contains(&p)) {
                return Err(Error::numerical(format!(
                    "probability out of range at row {i}"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::numerical(format!(
                "probability row {i} sums to {sum}, not 1"
            )));
        }
    }
    if let Some(&c) = choices.iter().find(|&&c| c >= k) {
        return Err(Error::data(format!("choice {c} out of range for K = {k}")));
    }
    Ok(())
}

/// Confusion counts indexed [true][predicted] from row-wise argmax labels.
pub fn confusion_matrix(
    probabilities: &Array2<f64>,
    choices: &[usize],
    k: usize,
) -> Result<Vec<Vec<u64>>> {
    check_probabilities(probabilities, choices, k)?;
    let mut m = vec![vec![0u64; k]; k];
    for (i, &c) in choices.iter().enumerate() {
        let pred = argmax(probabilities.row(i).as_slice().expect("row-major"));
        m[c][pred] += 1;
    }
    Ok(m)
}

/// Accuracy, cross-entropy, weighted F1, and the per-class breakdown for
/// predicted probabilities against observed choices.
pub fn evaluate(probabilities: &Array2<f64>, choices: &[usize], k: usize) -> Result<MetricReport> {
    let confusion = confusion_matrix(probabilities, choices, k)?;
    let n = choices.len() as f64;

    let mut correct = 0u64;
    for (kk, row) in confusion.iter().enumerate() {
        correct += row[kk];
    }
    let accuracy = correct as f64 / n;

    let mut ce = 0.0;
    for (i, &c) in choices.iter().enumerate() {
        ce -= probabilities[[i, c]].max(LOSS_PROB_FLOOR).ln();
    }
    let cross_entropy = ce / n;

    let mut precision = vec![0.0; k];
    let mut recall = vec![0.0; k];
    let mut class_f1 = vec![0.0; k];
    let mut f1 = 0.0;
    for kk in 0..k {
        let tp = confusion[kk][kk] as f64;
        let true_count: u64 = confusion[kk].iter().sum();
        let pred_count: u64 = confusion.iter().map(|row| row[kk]).sum();
        // Zero denominators contribute zero rather than poisoning the
        // weighted sum.
        precision[kk] = if pred_count > 0 {
            tp / pred_count as f64
        } else {
            0.0
        };
        recall[kk] = if true_count > 0 {
            tp / true_count as f64
        } else {
            0.0
        };
        let pr = precision[kk] + recall[kk];
        class_f1[kk] = if pr > 0.0 {
            2.0 * precision[kk] * recall[kk] / pr
        } else {
            0.0
        };
        f1 += (true_count as f64 / n) * class_f1[kk];
    }

    Ok(MetricReport {
        accuracy,
        cross_entropy,
        f1,
        precision,
        recall,
        class_f1,
        confusion,
    })
}

/// Evaluates a model on a raw dataset through its canonical prediction path.
pub fn evaluate_model(model: &TbResNet, ds: &ChoiceDataset) -> Result<MetricReport> {
    let p = model.probabilities(ds)?;
    evaluate(&p, ds.choices(), model.n_alternatives())
}

// ---------------------------------------------------------------------------
// Elasticities

/// Aggregate point elasticity of one alternative's choice probability with
/// respect to one raw attribute column: the sum over observations of
/// (dP/dx) * (x / P), plus its mean over the rows actually used.
///
/// Self-elasticity when the column belongs to `prob_alt`, cross-elasticity
/// otherwise. Rows where the attribute is exactly zero are skipped and
/// counted; their contribution would be identically zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityRow {
    /// Alternative owning the attribute column.
    pub attr_alt: usize,
    pub attr_name: String,
    /// Alternative whose probability is differentiated.
    pub prob_alt: usize,
    pub kind: ElasticityKind,
    pub sum: f64,
    pub mean: Option<f64>,
    pub n_used: usize,
    pub n_skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElasticityKind {
    SelfElasticity,
    CrossElasticity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityTable {
    pub rows: Vec<ElasticityRow>,
}

impl ElasticityTable {
    pub fn to_csv_string(&self) -> String {
        let mut out =
            String::from("attr_alt,attr_name,prob_alt,kind,sum,mean,n_used,n_skipped\n");
        for r in &self.rows {
            let kind = match r.kind {
                ElasticityKind::SelfElasticity => "self",
                ElasticityKind::CrossElasticity => "cross",
            };
            let mean = r.mean.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{kind},{},{mean},{},{}\n",
                r.attr_alt, r.attr_name, r.prob_alt, r.sum, r.n_used, r.n_skipped
            ));
        }
        out
    }
}

/// Per-row elasticity contributions for every (probability alternative,
/// attribute column) pair: sums, used-row counts, and skipped-row counts per
/// column.
fn elasticity_sums(
    model: &TbResNet,
    ds: &ChoiceDataset,
) -> Result<(Array2<f64>, Vec<usize>, Vec<usize>)> {
    let (x_std, z_std) = model.standardized_inputs(ds)?;
    let k = model.n_alternatives();
    let n_x = x_std.ncols();
    let n = ds.n();
    if n == 0 {
        return Err(Error::data("no observations for elasticity"));
    }

    // One gradient pass per row, shared by all (prob_alt, column) pairs.
    let contribs = parallel::map_range(n, |i| -> Result<Array2<f64>> {
        let x_row = x_std.row(i);
        let x_row = x_row.as_slice().expect("row-major");
        let z_row = z_std.row(i);
        let z_row = z_row.as_slice().expect("row-major");
        let g = model.utility_input_gradients_row(x_row, z_row)?;
        let mut p = vec![0.0; k];
        softmax_row(&g.utilities, &mut p);
        let mut e = Array2::zeros((k, n_x));
        for c in 0..n_x {
            let x_raw = ds.x()[[i, c]];
            if x_raw == 0.0 {
                // Marked for the skip count; NaN never reaches a sum.
                e.column_mut(c).fill(f64::NAN);
                continue;
            }
            let sigma = model.stats().x_std[c];
            let weighted: f64 = (0..k).map(|j| p[j] * g.d_x[[j, c]]).sum();
            for k1 in 0..k {
                let dp_std = p[k1] * (g.d_x[[k1, c]] - weighted);
                let dp_raw = dp_std / sigma;
                e[[k1, c]] = dp_raw * x_raw / p[k1];
            }
        }
        Ok(e)
    });

    let mut sums = Array2::zeros((k, n_x));
    let mut used = vec![0usize; n_x];
    let mut skipped = vec![0usize; n_x];
    for contrib in contribs {
        let e = contrib?;
        for c in 0..n_x {
            if e[[0, c]].is_nan() {
                skipped[c] += 1;
            } else {
                used[c] += 1;
                for k1 in 0..k {
                    sums[[k1, c]] += e[[k1, c]];
                }
            }
        }
    }
    Ok((sums, used, skipped))
}

/// Elasticity of `prob_alt`'s probability with respect to attribute column
/// `x_col` of the dataset.
pub fn elasticity(
    model: &TbResNet,
    ds: &ChoiceDataset,
    prob_alt: usize,
    x_col: usize,
) -> Result<ElasticityRow> {
    let k = model.n_alternatives();
    let schema = ds.schema();
    if prob_alt >= k {
        return Err(Error::config(format!(
            "alternative {prob_alt} out of range for K = {k}"
        )));
    }
    if x_col >= schema.n_x() {
        return Err(Error::config(format!(
            "attribute column {x_col} out of range"
        )));
    }
    let (sums, used, skipped) = elasticity_sums(model, ds)?;
    Ok(build_row(
        ds, &sums, &used, &skipped, prob_alt, x_col,
    ))
}

/// The full elasticity table: one row per (attribute column, probability
/// alternative) pair.
pub fn elasticity_table(model: &TbResNet, ds: &ChoiceDataset) -> Result<ElasticityTable> {
    let k = model.n_alternatives();
    let (sums, used, skipped) = elasticity_sums(model, ds)?;
    let mut rows = Vec::with_capacity(ds.schema().n_x() * k);
    for c in 0..ds.schema().n_x() {
        for k1 in 0..k {
            rows.push(build_row(ds, &sums, &used, &skipped, k1, c));
        }
    }
    Ok(ElasticityTable { rows })
}

fn build_row(
    ds: &ChoiceDataset,
    sums: &Array2<f64>,
    used: &[usize],
    skipped: &[usize],
    prob_alt: usize,
    x_col: usize,
) -> ElasticityRow {
    let attr = &ds.schema().alt_attrs[x_col];
    ElasticityRow {
        attr_alt: attr.alt,
        attr_name: attr.name.clone(),
        prob_alt,
        kind: if attr.alt == prob_alt {
            ElasticityKind::SelfElasticity
        } else {
            ElasticityKind::CrossElasticity
        },
        sum: sums[[prob_alt, x_col]],
        mean: if used[x_col] > 0 {
            Some(sums[[prob_alt, x_col]] / used[x_col] as f64)
        } else {
            None
        },
        n_used: used[x_col],
        n_skipped: skipped[x_col],
    }
}

// ---------------------------------------------------------------------------
// Empirical Rademacher complexity

/// Monte-Carlo estimate of the empirical Rademacher complexity of a finite
/// function class, each candidate given by its value vector over the sample:
/// E over random sign vectors of sup_f (1/N) sum_i sign_i * f(x_i).
///
/// Deterministic per seed; draws use independent indexed substreams, so the
/// estimate does not depend on evaluation order.
pub fn empirical_rademacher(
    function_values: &[Vec<f64>],
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    if function_values.is_empty() {
        return Err(Error::config("function class is empty"));
    }
    let n = function_values[0].len();
    if n == 0 {
        return Err(Error::config("sample is empty"));
    }
    if function_values.iter().any(|f| f.len() != n) {
        return Err(Error::config("function value vectors differ in length"));
    }
    if n_draws == 0 {
        return Err(Error::config("n_draws must be positive"));
    }

    let sups = parallel::map_range(n_draws, |d| {
        let mut rng = indexed_substream(seed, STREAM_RADEMACHER, d as u64);
        let signs: Vec<f64> = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut sup = f64::NEG_INFINITY;
        for f in function_values {
            let corr: f64 = signs.iter().zip(f).map(|(s, v)| s * v).sum::<f64>() / n as f64;
            sup = sup.max(corr);
        }
        sup
    });
    Ok(sups.iter().sum::<f64>() / n_draws as f64)
}
