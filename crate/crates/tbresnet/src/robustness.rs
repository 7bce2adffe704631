//! Input-perturbation attacks (gradient-sign and Gaussian) and the
//! accuracy-versus-epsilon curves they produce.
//!
//! All perturbations act on standardized inputs and never touch labels or
//! model parameters. Every attack is an exact identity at epsilon = 0.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::ChoiceDataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::TbResNet;
use crate::parallel;
use crate::rng::{substream, STREAM_ATTACK};

/// Epsilon grid used when the caller does not supply one.
pub const DEFAULT_EPSILON_GRID: [f64; 7] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2];

/// Sign with a flat zero: 0 and NaN map to 0, so gradient-flat coordinates
/// stay untouched. `f64::signum` maps both zeroes to +-1, which is wrong
/// here.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attack {
    Fgsm,
    Tgsm,
    Gaussian,
}

impl std::fmt::Display for Attack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Attack::Fgsm => "fgsm",
            Attack::Tgsm => "tgsm",
            Attack::Gaussian => "gaussian",
        })
    }
}

/// Target-label rule for the targeted attack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TgsmTarget {
    /// Per-row class with the smallest predicted probability (lowest index
    /// on ties).
    LeastLikely,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbOptions {
    /// Whether covariate columns are perturbed along with attributes.
    pub perturb_z: bool,
    pub tgsm_target: TgsmTarget,
    /// Seed for the Gaussian attack's noise; gradient attacks ignore it.
    pub seed: u64,
}

impl PerturbOptions {
    pub fn new(seed: u64) -> Self {
        PerturbOptions {
            perturb_z: true,
            tgsm_target: TgsmTarget::LeastLikely,
            seed,
        }
    }
}

/// Perturbed standardized inputs.
pub struct PerturbedInputs {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
}

fn one_hot_labels(labels: &[usize], k: usize) -> Result<Array2<f64>> {
    let mut y = Array2::zeros((labels.len(), k));
    for (i, &c) in labels.iter().enumerate() {
        if c >= k {
            return Err(Error::data(format!("label {c} out of range for K = {k}")));
        }
        y[[i, c]] = 1.0;
    }
    Ok(y)
}

fn apply_signed_step(
    x_std: &Array2<f64>,
    z_std: &Array2<f64>,
    d_x: &Array2<f64>,
    d_z: &Array2<f64>,
    step: f64,
    perturb_z: bool,
) -> PerturbedInputs {
    let mut x = x_std.clone();
    for (xv, g) in x.iter_mut().zip(d_x.iter()) {
        *xv += step * sign(*g);
    }
    let mut z = z_std.clone();
    if perturb_z {
        for (zv, g) in z.iter_mut().zip(d_z.iter()) {
            *zv += step * sign(*g);
        }
    }
    PerturbedInputs { x, z }
}

/// Fast gradient-sign attack: moves each input coordinate epsilon in the
/// direction that increases the true-label loss.
pub fn fgsm(
    model: &TbResNet,
    x_std: &Array2<f64>,
    z_std: &Array2<f64>,
    choices: &[usize],
    epsilon: f64,
    perturb_z: bool,
) -> Result<PerturbedInputs> {
    check_epsilon(epsilon)?;
    if choices.len() != x_std.nrows() {
        return Err(Error::config("choices and inputs differ in length"));
    }
    if epsilon == 0.0 {
        return Ok(PerturbedInputs {
            x: x_std.clone(),
            z: z_std.clone(),
        });
    }
    let y = one_hot_labels(choices, model.n_alternatives())?;
    let lg = model.loss_and_gradients(x_std, z_std, &y)?;
    Ok(apply_signed_step(
        x_std, z_std, &lg.d_x, &lg.d_z, epsilon, perturb_z,
    ))
}

/// Per-row class with the smallest predicted probability.
pub fn least_likely_targets(
    model: &TbResNet,
    x_std: &Array2<f64>,
    z_std: &Array2<f64>,
) -> Result<Vec<usize>> {
    let p = model.probabilities_std(x_std, z_std)?;
    let mut targets = Vec::with_capacity(p.nrows());
    for row in p.rows() {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v < row[best] {
                best = j;
            }
        }
        targets.push(best);
    }
    Ok(targets)
}

/// Targeted gradient-sign attack: moves each input coordinate epsilon in the
/// direction that decreases the loss toward the target labels.
pub fn tgsm(
    model: &TbResNet,
    x_std: &Array2<f64>,
    z_std: &Array2<f64>,
    epsilon: f64,
    target: TgsmTarget,
    perturb_z: bool,
) -> Result<PerturbedInputs> {
    check_epsilon(epsilon)?;
    if epsilon == 0.0 {
        return Ok(PerturbedInputs {
            x: x_std.clone(),
            z: z_std.clone(),
        });
    }
    let k = model.n_alternatives();
    let targets = match target {
        TgsmTarget::LeastLikely => least_likely_targets(model, x_std, z_std)?,
        TgsmTarget::Fixed(t) => {
            if t >= k {
                return Err(Error::config(format!(
                    "target class {t} out of range for K = {k}"
                )));
            }
            vec![t; x_std.nrows()]
        }
    };
    let y = one_hot_labels(&targets, k)?;
    let lg = model.loss_and_gradients(x_std, z_std, &y)?;
    Ok(apply_signed_step(
        x_std, z_std, &lg.d_x, &lg.d_z, -epsilon, perturb_z,
    ))
}

/// Additive standard-normal noise scaled by epsilon; the draw is a fixed
/// function of the seed, so every epsilon scales the same noise field.
/// Draw order is x row-major, then z row-major when covariates are
/// perturbed.
pub fn gaussian_noise(
    x_std: &Array2<f64>,
    z_std: &Array2<f64>,
    epsilon: f64,
    seed: u64,
    perturb_z: bool,
) -> Result<PerturbedInputs> {
    check_epsilon(epsilon)?;
    if epsilon == 0.0 {
        return Ok(PerturbedInputs {
            x: x_std.clone(),
            z: z_std.clone(),
        });
    }
    let mut rng = substream(seed, STREAM_ATTACK);
    let mut x = x_std.clone();
    for v in x.iter_mut() {
        let d: f64 = StandardNormal.sample(&mut rng);
        *v += epsilon * d;
    }
    let mut z = z_std.clone();
    if perturb_z {
        for v in z.iter_mut() {
            let d: f64 = StandardNormal.sample(&mut rng);
            *v += epsilon * d;
        }
    }
    Ok(PerturbedInputs { x, z })
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::config(format!(
            "epsilon must be a non-negative real, got {epsilon}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub epsilon: f64,
    pub accuracy: f64,
    pub cross_entropy: f64,
    pub f1: f64,
}

/// Metrics of one fixed model over an epsilon grid of one attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub attack: Attack,
    /// Target rule, recorded only for the targeted attack.
    pub tgsm_target: Option<TgsmTarget>,
    pub perturb_z: bool,
    pub seed: u64,
    pub points: Vec<RobustnessPoint>,
}

impl PerturbationReport {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("attack,epsilon,accuracy,cross_entropy,f1\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.attack, p.epsilon, p.accuracy, p.cross_entropy, p.f1
            ));
        }
        out
    }
}

/// Validates an epsilon grid: sorted strictly increasing, non-negative, and
/// containing 0 so every report anchors at the clean metrics.
pub fn validate_epsilon_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config("epsilon grid is empty"));
    }
    for (j, &e) in grid.iter().enumerate() {
        if !(e.is_finite() && e >= 0.0) {
            return Err(Error::config(format!("epsilon {e} is not a non-negative real")));
        }
        if j > 0 && e <= grid[j - 1] {
            return Err(Error::config("epsilon grid must be strictly increasing"));
        }
    }
    if grid[0] != 0.0 {
        return Err(Error::config("epsilon grid must contain 0"));
    }
    Ok(())
}

/// Evaluates a fixed, already-trained model on perturbed copies of the test
/// set, one point per grid epsilon. Never retrains. Points are evaluated in
/// parallel; the report order is the grid order.
pub fn robustness_curve(
    model: &TbResNet,
    test: &ChoiceDataset,
    attack: Attack,
    grid: &[f64],
    opts: &PerturbOptions,
) -> Result<PerturbationReport> {
    validate_epsilon_grid(grid)?;
    let (x_std, z_std) = model.standardized_inputs(test)?;
    let choices = test.choices();
    let k = model.n_alternatives();

    let points = parallel::map_items(grid, |&epsilon| -> Result<RobustnessPoint> {
        let adv = match attack {
            Attack::Fgsm => fgsm(model, &x_std, &z_std, choices, epsilon, opts.perturb_z)?,
            Attack::Tgsm => tgsm(
                model,
                &x_std,
                &z_std,
                epsilon,
                opts.tgsm_target,
                opts.perturb_z,
            )?,
            Attack::Gaussian => {
                gaussian_noise(&x_std, &z_std, epsilon, opts.seed, opts.perturb_z)?
            }
        };
        let p = model.probabilities_std(&adv.x, &adv.z)?;
        let report = metrics::evaluate(&p, choices, k)?;
        Ok(RobustnessPoint {
            epsilon,
            accuracy: report.accuracy,
            cross_entropy: report.cross_entropy,
            f1: report.f1,
        })
    });
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(PerturbationReport {
        attack,
        tgsm_target: match attack {
            Attack::Tgsm => Some(opts.tgsm_target),
            _ => None,
        },
        perturb_z: opts.perturb_z,
        seed: opts.seed,
        points,
    })
}
