//! The combined choice model: per-alternative utilities blended as
//! `(1 - delta) * V_theory + delta * V_net` and fed into a softmax, with
//! sequential and simultaneous maximum-likelihood trainers and a grid sweep
//! over delta.
//!
//! Evaluation has one canonical path. Inputs are standardized once with the
//! training-set stats; the network always consumes `[x_std, z_std]`; the
//! theory component consumes standardized attributes for the logit family
//! and de-standardized (raw currency / probability / day) attributes for the
//! nonlinear families, whose formulas are unit-dependent. Covariates reach
//! the theory component standardized in every family. All derivatives
//! returned by this module are with respect to the standardized inputs.
//!
//! Both endpoints are exact in IEEE arithmetic: at delta = 0 the blend is
//! `1 * v_T + 0 * v_D = v_T`, and at delta = 1 it is `0 * v_T + 1 * v_D =
//! v_D`, bit for bit, because multiplying a finite value by zero and adding
//! a signed zero never changes the other addend.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::{ChoiceDataset, DatasetSchema, StandardizationStats};
use crate::dcm::{self, DcmLayout, DcmParams, DcmSpec, Scenario};
use crate::error::{Error, Result};
use crate::nn::{BatchStream, MlpGrads, MlpParams};
use crate::parallel;
use crate::rng::{substream, STREAM_BATCH, STREAM_DCM_BATCH, STREAM_INIT};

/// Probability floor inside logs, keeping the loss finite when a predicted
/// probability underflows to zero.
pub const LOSS_PROB_FLOOR: f64 = 1e-300;

/// Delta grid used when a sweep does not supply its own, log-spaced near 0
/// where the blend is most sensitive.
pub const DEFAULT_DELTA_GRID: [f64; 27] = [
    1e-10, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 0.001, 0.002, 0.004, 0.005, 0.006, 0.007, 0.008, 0.009,
    0.01, 0.03, 0.05, 0.1, 0.3, 0.5, 0.8, 0.9, 0.95, 0.99, 0.999, 0.9999, 1.0,
];

/// Max-subtracted softmax of one utility row.
pub fn softmax_row(v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), out.len());
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for (o, &vi) in out.iter_mut().zip(v) {
        let e = (vi - m).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax of a utility matrix.
pub fn softmax(utilities: &Array2<f64>) -> Array2<f64> {
    let mut out = utilities.clone();
    let mut buf = vec![0.0; utilities.ncols()];
    for mut row in out.rows_mut() {
        softmax_row(row.as_slice().expect("row-major"), &mut buf);
        for (o, &b) in row.iter_mut().zip(&buf) {
            *o = b;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    /// Theory parameters first by MLE on the scaled theory utilities, then
    /// the network on the frozen theory part.
    Sequential,
    /// Both parameter sets updated in every SGD step.
    Simultaneous,
}

impl std::fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainerKind::Sequential => "sequential",
            TrainerKind::Simultaneous => "simultaneous",
        })
    }
}

/// Stage learning rate for the theory parameters when the caller does not
/// set one. The nonlinear families see raw-unit payoffs, so their gradients
/// are orders of magnitude larger than the logit family's standardized ones.
pub fn default_dcm_learning_rate(scenario: Scenario) -> f64 {
    match scenario {
        Scenario::Mnl => 0.05,
        Scenario::Pt => 5e-4,
        Scenario::Hd => 1e-4,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Blend weight in [0, 1]: 0 is pure theory, 1 is pure network.
    pub delta: f64,
    /// Hidden layer widths of the network component.
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub batch_size: usize,
    /// SGD learning rate for the network (and both components under the
    /// simultaneous trainer unless `dcm_learning_rate` overrides it).
    pub learning_rate: f64,
    /// Learning rate for the theory parameters; None uses the scenario
    /// default.
    pub dcm_learning_rate: Option<f64>,
    /// Theory stage stops early when the mean-gradient norm drops below
    /// this.
    pub grad_tol: f64,
    pub trainer: TrainerKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(delta: f64, seed: u64) -> Self {
        TrainConfig {
            delta,
            hidden: vec![100, 100],
            iterations: 5000,
            batch_size: 100,
            learning_rate: 0.01,
            dcm_learning_rate: None,
            grad_tol: 1e-6,
            trainer: TrainerKind::Sequential,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config(format!(
                "delta must be in [0, 1], got {}",
                self.delta
            )));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::config("iterations and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if let Some(lr) = self.dcm_learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config("dcm_learning_rate must be positive"));
            }
        }
        if self.grad_tol < 0.0 {
            return Err(Error::config("grad_tol must be nonnegative"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

/// Training log kept with a fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config: TrainConfig,
    pub scenario: Scenario,
    /// Mean batch loss per iteration of the theory stage (empty when the
    /// stage was skipped).
    pub stage1_loss: Vec<f64>,
    /// Mean batch loss per iteration of the network stage, or of the joint
    /// loop under the simultaneous trainer.
    pub stage2_loss: Vec<f64>,
    /// Whether the theory stage stopped on the gradient tolerance rather
    /// than the iteration cap.
    pub stage1_converged: bool,
    /// Clamp activations observed during training (parameter maps at their
    /// positivity floor, probabilities outside (0, 1]).
    pub train_clamp_events: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TbResNet {
    spec: DcmSpec,
    delta: f64,
    dcm: DcmParams,
    mlp: MlpParams,
    stats: StandardizationStats,
    meta: Option<TrainMeta>,
}

/// Per-utility derivatives with respect to the standardized inputs of one
/// observation. `d_x` is K x n_x, `d_z` is K x n_z.
pub struct RowInputGradients {
    pub utilities: Vec<f64>,
    pub d_x: Array2<f64>,
    pub d_z: Array2<f64>,
}

/// Cross-entropy loss and its derivatives over a standardized input batch.
///
/// `d_params` is the gradient of the mean loss in `param_vector` order.
/// `d_x` and `d_z` hold per-row gradients of that row's own loss term (not
/// divided by N), which is what gradient-sign attacks consume.
pub struct LossGradients {
    pub loss: f64,
    pub probabilities: Array2<f64>,
    pub d_params: Vec<f64>,
    pub d_x: Array2<f64>,
    pub d_z: Array2<f64>,
}

fn check_schema(spec: &DcmSpec, schema: &DatasetSchema) -> Result<()> {
    if spec.n_alternatives != schema.n_alternatives {
        return Err(Error::config(format!(
            "model has {} alternatives, dataset has {}",
            spec.n_alternatives, schema.n_alternatives
        )));
    }
    if spec.attrs.len() != schema.alt_attrs.len()
        || spec
            .attrs
            .iter()
            .zip(&schema.alt_attrs)
            .any(|(s, a)| s.alt != a.alt || s.name != a.name)
    {
        return Err(Error::config(
            "alternative-specific columns do not match the model spec",
        ));
    }
    if spec.covariates != schema.indiv_attrs {
        return Err(Error::config("covariate columns do not match the model spec"));
    }
    Ok(())
}

fn unstd_matrix(stats: &StandardizationStats, x_std: &Array2<f64>) -> Array2<f64> {
    let mut out = x_std.clone();
    for (c, mut col) in out.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| stats.x_raw_from_std(c, v));
    }
    out
}

impl TbResNet {
    /// Assembles a model from explicit parts; used for hand-built oracles and
    /// by deserialization. Validates the layout and dimension chain.
    pub fn from_parts(
        spec: DcmSpec,
        delta: f64,
        dcm: DcmParams,
        mlp: MlpParams,
        stats: StandardizationStats,
    ) -> Result<Self> {
        let layout = spec.layout()?;
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::config(format!("delta must be in [0, 1], got {delta}")));
        }
        if dcm.scenario() != spec.scenario {
            return Err(Error::config("parameter family does not match the spec"));
        }
        if dcm.n_free() != DcmParams::zeros(&spec).n_free() {
            return Err(Error::config("theory parameter shape does not match the spec"));
        }
        let (n_x, n_z) = (layout.n_x, layout.n_z);
        if mlp.n_inputs() != n_x + n_z {
            return Err(Error::config(format!(
                "network expects {} inputs, spec provides {}",
                mlp.n_inputs(),
                n_x + n_z
            )));
        }
        if mlp.n_outputs() != spec.n_alternatives {
            return Err(Error::config(format!(
                "network emits {} utilities for {} alternatives",
                mlp.n_outputs(),
                spec.n_alternatives
            )));
        }
        if stats.x_mean.len() != n_x || stats.z_mean.len() != n_z {
            return Err(Error::config("standardization stats do not match the spec"));
        }
        if dcm.to_flat().iter().any(|v| !v.is_finite())
            || mlp.to_flat().iter().any(|v| !v.is_finite())
        {
            return Err(Error::config("non-finite model parameter"));
        }
        Ok(TbResNet {
            spec,
            delta,
            dcm,
            mlp,
            stats,
            meta: None,
        })
    }

    pub fn spec(&self) -> &DcmSpec {
        &self.spec
    }

    pub fn scenario(&self) -> Scenario {
        self.spec.scenario
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dcm_params(&self) -> &DcmParams {
        &self.dcm
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.mlp
    }

    pub fn stats(&self) -> &StandardizationStats {
        &self.stats
    }

    pub fn meta(&self) -> Option<&TrainMeta> {
        self.meta.as_ref()
    }

    pub fn n_alternatives(&self) -> usize {
        self.spec.n_alternatives
    }

    /// Scale from standardized input units to the units the theory component
    /// consumes for attribute column `c`.
    fn theory_x_scale(&self, c: usize) -> f64 {
        match self.spec.scenario {
            Scenario::Mnl => 1.0,
            _ => self.stats.x_std[c],
        }
    }

    /// Theory-component view of one standardized attribute row.
    fn theory_x_row(&self, x_std: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        match self.spec.scenario {
            Scenario::Mnl => buf.extend_from_slice(x_std),
            _ => buf.extend(
                x_std
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| self.stats.x_raw_from_std(c, v)),
            ),
        }
    }

    /// Standardized input matrices for a raw dataset, after checking that the
    /// dataset matches the model's schema.
    pub fn standardized_inputs(&self, ds: &ChoiceDataset) -> Result<(Array2<f64>, Array2<f64>)> {
        check_schema(&self.spec, ds.schema())?;
        Ok(self.stats.transform(ds))
    }

    /// Blended utilities for standardized input matrices, N x K.
    pub fn utilities_std(&self, x_std: &Array2<f64>, z_std: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_std_dims(x_std, z_std)?;
        let layout = self.spec.layout()?;
        let n = x_std.nrows();
        let k = self.spec.n_alternatives;
        let rows = parallel::map_range(n, |i| {
            let xr = x_std.row(i);
            let zr = z_std.row(i);
            self.utilities_row_std_inner(
                &layout,
                xr.as_slice().expect("row-major"),
                zr.as_slice().expect("row-major"),
            )
        });
        let mut out = Array2::zeros((n, k));
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::numerical(format!(
                        "non-finite utility at row {i}, alternative {j}"
                    )));
                }
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }

    fn check_std_dims(&self, x_std: &Array2<f64>, z_std: &Array2<f64>) -> Result<()> {
        if x_std.nrows() != z_std.nrows() {
            return Err(Error::config("x and z row counts differ"));
        }
        if x_std.ncols() != self.stats.x_mean.len() || z_std.ncols() != self.stats.z_mean.len() {
            return Err(Error::config("input width does not match the model"));
        }
        Ok(())
    }

    fn utilities_row_std_inner(&self, layout: &DcmLayout, x_std: &[f64], z_std: &[f64]) -> Vec<f64> {
        let k = self.spec.n_alternatives;
        let mut v = vec![0.0; k];
        if self.delta < 1.0 {
            let mut tx = Vec::with_capacity(x_std.len());
            self.theory_x_row(x_std, &mut tx);
            let eval = dcm::utilities_row(
                layout,
                &self.dcm,
                ArrayView1::from(&tx[..]),
                ArrayView1::from(z_std),
            );
            for (vk, tk) in v.iter_mut().zip(&eval.utilities) {
                *vk = (1.0 - self.delta) * tk;
            }
        }
        if self.delta > 0.0 {
            let mut input = Vec::with_capacity(x_std.len() + z_std.len());
            input.extend_from_slice(x_std);
            input.extend_from_slice(z_std);
            let d = self.mlp.forward(&input);
            for (vk, dk) in v.iter_mut().zip(&d) {
                *vk += self.delta * dk;
            }
        }
        v
    }

    /// Blended utilities of one standardized observation.
    pub fn utilities_row_std(&self, x_std: &[f64], z_std: &[f64]) -> Result<Vec<f64>> {
        let layout = self.spec.layout()?;
        if x_std.len() != layout.n_x || z_std.len() != layout.n_z {
            return Err(Error::config("input width does not match the model"));
        }
        Ok(self.utilities_row_std_inner(&layout, x_std, z_std))
    }

    /// Unblended component utilities (theory, network) of one standardized
    /// observation, before the delta weights are applied.
    pub fn component_utilities_row_std(
        &self,
        x_std: &[f64],
        z_std: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let layout = self.spec.layout()?;
        if x_std.len() != layout.n_x || z_std.len() != layout.n_z {
            return Err(Error::config("input width does not match the model"));
        }
        let mut tx = Vec::with_capacity(x_std.len());
        self.theory_x_row(x_std, &mut tx);
        let theory = dcm::utilities_row(
            &layout,
            &self.dcm,
            ArrayView1::from(&tx[..]),
            ArrayView1::from(z_std),
        )
        .utilities;
        let mut input = Vec::with_capacity(x_std.len() + z_std.len());
        input.extend_from_slice(x_std);
        input.extend_from_slice(z_std);
        let net = self.mlp.forward(&input);
        Ok((theory, net))
    }

    /// Choice probabilities for standardized inputs, N x K.
    pub fn probabilities_std(
        &self,
        x_std: &Array2<f64>,
        z_std: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        Ok(softmax(&self.utilities_std(x_std, z_std)?))
    }

    /// Choice probabilities for a raw dataset via the canonical
    /// standardization path.
    pub fn probabilities(&self, ds: &ChoiceDataset) -> Result<Array2<f64>> {
        let (x_std, z_std) = self.standardized_inputs(ds)?;
        self.probabilities_std(&x_std, &z_std)
    }

    /// Mean negative log-probability of the observed choices.
    pub fn nll(&self, ds: &ChoiceDataset) -> Result<f64> {
        let p = self.probabilities(ds)?;
        let mut total = 0.0;
        for (i, &c) in ds.choices().iter().enumerate() {
            total -= p[[i, c]].max(LOSS_PROB_FLOOR).ln();
        }
        Ok(total / ds.n() as f64)
    }

    /// All free parameters as one vector: theory parameters first, then the
    /// network in its flat order.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = self.dcm.to_flat();
        v.extend(self.mlp.to_flat());
        v
    }

    pub fn set_param_vector(&mut self, flat: &[f64]) -> Result<()> {
        let nd = self.dcm.n_free();
        if flat.len() != nd + self.mlp.n_params() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                nd + self.mlp.n_params(),
                flat.len()
            )));
        }
        self.dcm.set_flat(&flat[..nd])?;
        self.mlp.set_flat(&flat[nd..])
    }

    /// Per-utility derivatives with respect to one observation's standardized
    /// inputs.
    pub fn utility_input_gradients_row(
        &self,
        x_std: &[f64],
        z_std: &[f64],
    ) -> Result<RowInputGradients> {
        let layout = self.spec.layout()?;
        if x_std.len() != layout.n_x || z_std.len() != layout.n_z {
            return Err(Error::config("input width does not match the model"));
        }
        let k = self.spec.n_alternatives;
        let (n_x, n_z) = (x_std.len(), z_std.len());
        let mut utilities = vec![0.0; k];
        let mut d_x = Array2::zeros((k, n_x));
        let mut d_z = Array2::zeros((k, n_z));

        if self.delta < 1.0 {
            let w = 1.0 - self.delta;
            let mut tx = Vec::with_capacity(n_x);
            self.theory_x_row(x_std, &mut tx);
            let g = dcm::gradients_row(
                &layout,
                &self.dcm,
                ArrayView1::from(&tx[..]),
                ArrayView1::from(z_std),
            );
            for kk in 0..k {
                utilities[kk] = w * g.utilities[kk];
                for c in 0..n_x {
                    // Chain rule from theory units back to standardized units.
                    d_x[[kk, c]] = w * g.d_x[[kk, c]] * self.theory_x_scale(c);
                }
                for m in 0..n_z {
                    d_z[[kk, m]] = w * g.d_z[[kk, m]];
                }
            }
        }
        if self.delta > 0.0 {
            let mut input = Vec::with_capacity(n_x + n_z);
            input.extend_from_slice(x_std);
            input.extend_from_slice(z_std);
            let cache = self.mlp.forward_cache(&input);
            let out = cache.output().to_vec();
            let mut unit = vec![0.0; k];
            for kk in 0..k {
                utilities[kk] += self.delta * out[kk];
                unit.iter_mut().for_each(|u| *u = 0.0);
                unit[kk] = self.delta;
                let d_in = self.mlp.input_gradient(&cache, &unit);
                for c in 0..n_x {
                    d_x[[kk, c]] += d_in[c];
                }
                for m in 0..n_z {
                    d_z[[kk, m]] += d_in[n_x + m];
                }
            }
        }
        Ok(RowInputGradients {
            utilities,
            d_x,
            d_z,
        })
    }

    /// Mean cross-entropy of the model against per-row target weights
    /// (one-hot rows for the observed or an attack's target labels), with
    /// analytic derivatives. See `LossGradients` for the gradient
    /// conventions.
    pub fn loss_and_gradients(
        &self,
        x_std: &Array2<f64>,
        z_std: &Array2<f64>,
        targets: &Array2<f64>,
    ) -> Result<LossGradients> {
        self.check_std_dims(x_std, z_std)?;
        let n = x_std.nrows();
        let k = self.spec.n_alternatives;
        if targets.nrows() != n || targets.ncols() != k {
            return Err(Error::config("target matrix shape mismatch"));
        }
        let layout = self.spec.layout()?;
        let (n_x, n_z) = (layout.n_x, layout.n_z);
        let nd = self.dcm.n_free();
        let use_theory = self.delta < 1.0;
        let use_net = self.delta > 0.0;

        let mut loss = 0.0;
        let mut probabilities = Array2::zeros((n, k));
        let mut d_dcm = vec![0.0; nd];
        let mut net_grads = MlpGrads::zeros_like(&self.mlp);
        let mut d_x = Array2::zeros((n, n_x));
        let mut d_z = Array2::zeros((n, n_z));

        let mut tx = Vec::new();
        let mut input = Vec::new();
        let mut v = vec![0.0; k];
        let mut p = vec![0.0; k];
        let mut coef = vec![0.0; k];

        for i in 0..n {
            let x_row = x_std.row(i);
            let x_row = x_row.as_slice().expect("row-major");
            let z_row = z_std.row(i);
            let z_row = z_row.as_slice().expect("row-major");
            v.iter_mut().for_each(|vi| *vi = 0.0);

            let theory = if use_theory {
                self.theory_x_row(x_row, &mut tx);
                let g = dcm::gradients_row(
                    &layout,
                    &self.dcm,
                    ArrayView1::from(&tx[..]),
                    ArrayView1::from(z_row),
                );
                for kk in 0..k {
                    v[kk] = (1.0 - self.delta) * g.utilities[kk];
                }
                Some(g)
            } else {
                None
            };
            let cache = if use_net {
                input.clear();
                input.extend_from_slice(x_row);
                input.extend_from_slice(z_row);
                let cache = self.mlp.forward_cache(&input);
                for (vk, ok) in v.iter_mut().zip(cache.output()) {
                    *vk += self.delta * ok;
                }
                Some(cache)
            } else {
                None
            };

            softmax_row(&v, &mut p);
            let mut t_sum = 0.0;
            let mut row_loss = 0.0;
            for kk in 0..k {
                let t = targets[[i, kk]];
                t_sum += t;
                if t != 0.0 {
                    row_loss -= t * p[kk].max(LOSS_PROB_FLOOR).ln();
                }
                probabilities[[i, kk]] = p[kk];
            }
            if !row_loss.is_finite() {
                return Err(Error::numerical(format!("non-finite loss at row {i}")));
            }
            loss += row_loss;
            // d(row_loss)/d(v_k) for cross-entropy through the softmax.
            for kk in 0..k {
                coef[kk] = t_sum * p[kk] - targets[[i, kk]];
            }

            if let Some(g) = &theory {
                let w = 1.0 - self.delta;
                for kk in 0..k {
                    let ck = w * coef[kk];
                    if ck == 0.0 {
                        continue;
                    }
                    for f in 0..nd {
                        d_dcm[f] += ck * g.d_params[[kk, f]];
                    }
                    for c in 0..n_x {
                        d_x[[i, c]] += ck * g.d_x[[kk, c]] * self.theory_x_scale(c);
                    }
                    for m in 0..n_z {
                        d_z[[i, m]] += ck * g.d_z[[kk, m]];
                    }
                }
            }
            if let Some(cache) = &cache {
                let upstream: Vec<f64> = coef.iter().map(|c| self.delta * c).collect();
                let d_in = self.mlp.backward_into(cache, &upstream, &mut net_grads);
                for c in 0..n_x {
                    d_x[[i, c]] += d_in[c];
                }
                for m in 0..n_z {
                    d_z[[i, m]] += d_in[n_x + m];
                }
            }
        }

        let scale = 1.0 / n as f64;
        let mut d_params = d_dcm;
        d_params.extend(net_grads.to_flat());
        for g in d_params.iter_mut() {
            *g *= scale;
        }
        Ok(LossGradients {
            loss: loss * scale,
            probabilities,
            d_params,
            d_x,
            d_z,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: TbResNet = serde_json::from_str(&text)?;
        let mut model = TbResNet::from_parts(raw.spec, raw.delta, raw.dcm, raw.mlp, raw.stats)?;
        model.meta = raw.meta;
        Ok(model)
    }

    /// Fits a model on `train` with the configured trainer.
    pub fn fit(spec: &DcmSpec, train: &ChoiceDataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_schema(spec, train.schema())?;
        let layout = spec.layout()?;
        if train.n() == 0 {
            return Err(Error::data("cannot fit on an empty dataset"));
        }
        let stats = StandardizationStats::fit(train);
        let (x_std, z_std) = stats.transform(train);
        let x_theory = match spec.scenario {
            Scenario::Mnl => x_std.clone(),
            _ => unstd_matrix(&stats, &x_std),
        };
        let y = train.one_hot();
        let k = spec.n_alternatives;
        let d_in = x_std.ncols() + z_std.ncols();
        let mut dims = Vec::with_capacity(cfg.hidden.len() + 2);
        dims.push(d_in);
        dims.extend_from_slice(&cfg.hidden);
        dims.push(k);
        // The init stream is drawn unconditionally so endpoint runs stay
        // comparable with interior ones under the same seed.
        let mut init_rng = substream(cfg.seed, STREAM_INIT);
        let mlp = MlpParams::glorot(&dims, &mut init_rng)?;

        let mut meta = TrainMeta {
            config: cfg.clone(),
            scenario: spec.scenario,
            stage1_loss: Vec::new(),
            stage2_loss: Vec::new(),
            stage1_converged: false,
            train_clamp_events: 0,
        };
        let mut model = TbResNet {
            spec: spec.clone(),
            delta: cfg.delta,
            dcm: if cfg.delta == 1.0 {
                DcmParams::zeros(spec)
            } else {
                DcmParams::init(spec)
            },
            mlp,
            stats,
            meta: None,
        };

        match cfg.trainer {
            TrainerKind::Sequential => {
                if cfg.delta < 1.0 {
                    fit_dcm_mle(
                        &layout,
                        &mut model.dcm,
                        &x_theory,
                        &z_std,
                        &y,
                        1.0 - cfg.delta,
                        cfg,
                        &mut meta,
                    )?;
                }
                if cfg.delta > 0.0 {
                    fit_net_stage(&layout, &mut model, &x_theory, &x_std, &z_std, &y, cfg, &mut meta)?;
                }
            }
            TrainerKind::Simultaneous => {
                fit_simultaneous(&layout, &mut model, &x_theory, &x_std, &z_std, &y, cfg, &mut meta)?;
            }
        }

        if model.param_vector().iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("training produced non-finite parameters"));
        }
        model.meta = Some(meta);
        Ok(model)
    }
}

/// Maximum-likelihood SGD over the theory parameters with utilities scaled
/// by `scale` = 1 - delta; this is the whole model when delta = 0 and stage
/// one of the sequential trainer otherwise.
#[allow(clippy::too_many_arguments)]
fn fit_dcm_mle(
    layout: &DcmLayout,
    params: &mut DcmParams,
    x_theory: &Array2<f64>,
    z_std: &Array2<f64>,
    y: &Array2<f64>,
    scale: f64,
    cfg: &TrainConfig,
    meta: &mut TrainMeta,
) -> Result<()> {
    let n = x_theory.nrows();
    let k = y.ncols();
    let nf = params.n_free();
    let lr = cfg
        .dcm_learning_rate
        .unwrap_or_else(|| default_dcm_learning_rate(params.scenario()));
    let mut stream = BatchStream::new(n, cfg.batch_size, substream(cfg.seed, STREAM_DCM_BATCH))?;
    let mut batch = Vec::new();
    let mut grad = vec![0.0; nf];
    let mut v = vec![0.0; k];
    let mut p = vec![0.0; k];

    for iter in 0..cfg.iterations {
        stream.next_batch(&mut batch);
        let b = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut batch_loss = 0.0;
        for &i in &batch {
            let g = dcm::gradients_row(layout, params, x_theory.row(i), z_std.row(i));
            meta.train_clamp_events += u64::from(g.clamp_events);
            for kk in 0..k {
                v[kk] = scale * g.utilities[kk];
            }
            softmax_row(&v, &mut p);
            for kk in 0..k {
                let c = scale * (p[kk] - y[[i, kk]]);
                if y[[i, kk]] == 1.0 {
                    batch_loss -= p[kk].max(LOSS_PROB_FLOOR).ln();
                }
                if c != 0.0 {
                    for f in 0..nf {
                        grad[f] += c * g.d_params[[kk, f]];
                    }
                }
            }
        }
        if !batch_loss.is_finite() {
            return Err(Error::numerical(format!(
                "theory stage iteration {iter}: non-finite loss"
            )));
        }
        meta.stage1_loss.push(batch_loss / b);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() / b;
        params.add_scaled(&grad, -lr / b)?;
        if grad_norm < cfg.grad_tol {
            meta.stage1_converged = true;
            break;
        }
    }
    Ok(())
}

/// Stage two of the sequential trainer: the theory utilities are frozen and
/// only the network learns, seeing the gradient through the delta-weighted
/// blend.
#[allow(clippy::too_many_arguments)]
fn fit_net_stage(
    layout: &DcmLayout,
    model: &mut TbResNet,
    x_theory: &Array2<f64>,
    x_std: &Array2<f64>,
    z_std: &Array2<f64>,
    y: &Array2<f64>,
    cfg: &TrainConfig,
    meta: &mut TrainMeta,
) -> Result<()> {
    let n = x_std.nrows();
    let k = y.ncols();
    let delta = cfg.delta;
    // Frozen theory utilities; never evaluated when they carry zero weight.
    let vt = if delta < 1.0 {
        let (vt, clamps) = dcm::utilities(layout, &model.dcm, x_theory, z_std);
        meta.train_clamp_events += clamps;
        vt
    } else {
        Array2::zeros((n, k))
    };
    let inputs = concat_inputs(x_std, z_std);
    let mut stream = BatchStream::new(n, cfg.batch_size, substream(cfg.seed, STREAM_BATCH))?;
    let mut batch = Vec::new();
    let mut grads = MlpGrads::zeros_like(&model.mlp);
    let mut v = vec![0.0; k];
    let mut p = vec![0.0; k];
    let mut upstream = vec![0.0; k];

    for iter in 0..cfg.iterations {
        stream.next_batch(&mut batch);
        let b = batch.len() as f64;
        grads.reset();
        let mut batch_loss = 0.0;
        for &i in &batch {
            let row = inputs.row(i);
            let cache = model.mlp.forward_cache(row.as_slice().expect("row-major"));
            for kk in 0..k {
                v[kk] = (1.0 - delta) * vt[[i, kk]] + delta * cache.output()[kk];
            }
            softmax_row(&v, &mut p);
            for kk in 0..k {
                if y[[i, kk]] == 1.0 {
                    batch_loss -= p[kk].max(LOSS_PROB_FLOOR).ln();
                }
                upstream[kk] = delta * (p[kk] - y[[i, kk]]);
            }
            model.mlp.backward_into(&cache, &upstream, &mut grads);
        }
        if !batch_loss.is_finite() {
            return Err(Error::numerical(format!(
                "network stage iteration {iter}: non-finite loss"
            )));
        }
        meta.stage2_loss.push(batch_loss / b);
        model.mlp.apply_step(&grads, -cfg.learning_rate / b);
    }
    Ok(())
}

/// Joint trainer: both parameter sets step on every mini-batch.
#[allow(clippy::too_many_arguments)]
fn fit_simultaneous(
    layout: &DcmLayout,
    model: &mut TbResNet,
    x_theory: &Array2<f64>,
    x_std: &Array2<f64>,
    z_std: &Array2<f64>,
    y: &Array2<f64>,
    cfg: &TrainConfig,
    meta: &mut TrainMeta,
) -> Result<()> {
    let n = x_std.nrows();
    let k = y.ncols();
    let delta = cfg.delta;
    let use_theory = delta < 1.0;
    let use_net = delta > 0.0;
    let nf = model.dcm.n_free();
    let dcm_lr = cfg
        .dcm_learning_rate
        .unwrap_or_else(|| default_dcm_learning_rate(model.dcm.scenario()));
    let inputs = concat_inputs(x_std, z_std);
    let mut stream = BatchStream::new(n, cfg.batch_size, substream(cfg.seed, STREAM_BATCH))?;
    let mut batch = Vec::new();
    let mut dcm_grad = vec![0.0; nf];
    let mut net_grads = MlpGrads::zeros_like(&model.mlp);
    let mut v = vec![0.0; k];
    let mut p = vec![0.0; k];
    let mut upstream = vec![0.0; k];

    for iter in 0..cfg.iterations {
        stream.next_batch(&mut batch);
        let b = batch.len() as f64;
        dcm_grad.iter_mut().for_each(|g| *g = 0.0);
        net_grads.reset();
        let mut batch_loss = 0.0;
        for &i in &batch {
            v.iter_mut().for_each(|vi| *vi = 0.0);
            let theory = if use_theory {
                let g = dcm::gradients_row(layout, &model.dcm, x_theory.row(i), z_std.row(i));
                meta.train_clamp_events += u64::from(g.clamp_events);
                for kk in 0..k {
                    v[kk] = (1.0 - delta) * g.utilities[kk];
                }
                Some(g)
            } else {
                None
            };
            let cache = if use_net {
                let row = inputs.row(i);
                let cache = model.mlp.forward_cache(row.as_slice().expect("row-major"));
                for kk in 0..k {
                    v[kk] += delta * cache.output()[kk];
                }
                Some(cache)
            } else {
                None
            };
            softmax_row(&v, &mut p);
            for kk in 0..k {
                if y[[i, kk]] == 1.0 {
                    batch_loss -= p[kk].max(LOSS_PROB_FLOOR).ln();
                }
                upstream[kk] = p[kk] - y[[i, kk]];
            }
            if let Some(g) = &theory {
                for kk in 0..k {
                    let c = (1.0 - delta) * upstream[kk];
                    if c != 0.0 {
                        for f in 0..nf {
                            dcm_grad[f] += c * g.d_params[[kk, f]];
                        }
                    }
                }
            }
            if let Some(cache) = &cache {
                for u in upstream.iter_mut() {
                    *u *= delta;
                }
                model.mlp.backward_into(cache, &upstream, &mut net_grads);
            }
        }
        if !batch_loss.is_finite() {
            return Err(Error::numerical(format!(
                "joint trainer iteration {iter}: non-finite loss"
            )));
        }
        meta.stage2_loss.push(batch_loss / b);
        if use_theory {
            model.dcm.add_scaled(&dcm_grad, -dcm_lr / b)?;
        }
        if use_net {
            model.mlp.apply_step(&net_grads, -cfg.learning_rate / b);
        }
    }
    Ok(())
}

fn concat_inputs(x_std: &Array2<f64>, z_std: &Array2<f64>) -> Array2<f64> {
    let n = x_std.nrows();
    let (nx, nz) = (x_std.ncols(), z_std.ncols());
    let mut out = Array2::zeros((n, nx + nz));
    for i in 0..n {
        for c in 0..nx {
            out[[i, c]] = x_std[[i, c]];
        }
        for m in 0..nz {
            out[[i, nx + m]] = z_std[[i, m]];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Delta sweep

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub accuracy: Option<f64>,
    pub cross_entropy: Option<f64>,
    pub f1: Option<f64>,
    /// Set when this grid point's fit or evaluation failed.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub trainer: TrainerKind,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    /// Accuracy of always predicting the largest test-set class.
    pub baseline_accuracy: f64,
    /// Grid delta with the best test accuracy (smallest delta on ties).
    pub best_accuracy_delta: Option<f64>,
    /// Grid delta with the best test cross-entropy (smallest delta on ties).
    pub best_cross_entropy_delta: Option<f64>,
}

/// Validates a delta grid: non-empty, strictly increasing, within [0, 1].
pub fn validate_delta_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config("delta grid is empty"));
    }
    for (j, &d) in grid.iter().enumerate() {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::config(format!("grid delta {d} outside [0, 1]")));
        }
        if j > 0 && d <= grid[j - 1] {
            return Err(Error::config("delta grid must be strictly increasing"));
        }
    }
    Ok(())
}

/// Fits one model per grid delta (from scratch, same seed) and evaluates it
/// on the test set. Grid points whose fit fails are recorded and the sweep
/// continues. Fits run in parallel when the parallel feature is on; results
/// are keyed by grid order, so the outcome does not depend on scheduling.
pub fn sweep(
    spec: &DcmSpec,
    train: &ChoiceDataset,
    test: &ChoiceDataset,
    grid: &[f64],
    base_cfg: &TrainConfig,
) -> Result<SweepResult> {
    validate_delta_grid(grid)?;
    base_cfg.validate()?;
    check_schema(spec, test.schema())?;
    let baseline_accuracy = test
        .choice_shares()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);

    let rows: Vec<SweepRow> = parallel::map_items(grid, |&delta| {
        let cfg = TrainConfig {
            delta,
            ..base_cfg.clone()
        };
        let outcome = TbResNet::fit(spec, train, &cfg).and_then(|model| {
            let p = model.probabilities(test)?;
            crate::metrics::evaluate(&p, test.choices(), spec.n_alternatives)
        });
        match outcome {
            Ok(report) => SweepRow {
                delta,
                accuracy: Some(report.accuracy),
                cross_entropy: Some(report.cross_entropy),
                f1: Some(report.f1),
                error: None,
            },
            Err(e) => SweepRow {
                delta,
                accuracy: None,
                cross_entropy: None,
                f1: None,
                error: Some(e.to_string()),
            },
        }
    });

    let mut best_accuracy_delta = None;
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_cross_entropy_delta = None;
    let mut best_ce = f64::INFINITY;
    for row in &rows {
        if let Some(a) = row.accuracy {
            if a > best_acc {
                best_acc = a;
                best_accuracy_delta = Some(row.delta);
            }
        }
        if let Some(ce) = row.cross_entropy {
            if ce < best_ce {
                best_ce = ce;
                best_cross_entropy_delta = Some(row.delta);
            }
        }
    }
    Ok(SweepResult {
        trainer: base_cfg.trainer,
        seed: base_cfg.seed,
        rows,
        baseline_accuracy,
        best_accuracy_delta,
        best_cross_entropy_delta,
    })
}
