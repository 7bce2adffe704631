//! Theory-driven choice models: multinomial logit, prospect theory, and
//! hyperbolic discounting.
//!
//! Each family maps one observation (alternative attributes `x`, individual
//! covariates `z`) to a utility per alternative. The behavioral scalars of
//! the nonlinear families are affine in the covariates:
//!
//! ```text
//! mnl:  v_k = c_k + sum_j w_j x_kj + z' w_zk          (reference alt pinned to 0)
//! pt:   v_k = sum_j value(x_kj; r(z), lambda(z)) * weight(p_kj; alpha(z))
//! hd:   v_k = sum_j x_kj * beta(z) * exp(-r(z) t_kj)
//! ```
//!
//! with `value(x) = x^r` for gains and `-lambda (-x)^r` for losses, and
//! `weight(p) = exp(-(-ln p)^alpha)`. The scalar maps r, alpha, lambda and
//! beta are floored at [`PARAM_FLOOR`]; probabilities are clamped to
//! `[PROB_FLOOR, 1]`. Gradients are 0 with respect to anything hidden behind
//! an active clamp, and clamp activations are counted so callers can surface
//! them as diagnostics.
//!
//! Inputs are taken in whatever space the caller's parameters were defined
//! on. Fitted models pass standardized covariates everywhere, standardized
//! attributes to the logit family, and raw attributes (currency, raw
//! probabilities, days) to the two nonlinear families.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSchema;
use crate::error::{Error, Result};

/// Hard floor for the behavioral scalars r(z), alpha(z), lambda(z), beta(z).
pub const PARAM_FLOOR: f64 = 1e-4;
/// Probabilities entering the weighting function are clamped to [PROB_FLOOR, 1].
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Mnl,
    Pt,
    Hd,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Mnl => "mnl",
            Scenario::Pt => "pt",
            Scenario::Hd => "hd",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Role of one alternative-specific column inside the theory component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum AttrRole {
    Generic,
    Payoff { branch: usize },
    Probability { branch: usize },
    Delay { branch: usize },
}

/// One alternative-specific column: which alternative it belongs to, its
/// name in the dataset, and how the theory component consumes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecAttr {
    pub alt: usize,
    pub name: String,
    #[serde(flatten)]
    pub role: AttrRole,
}

/// Declarative description of the theory component: the scenario family plus
/// the mapping from dataset columns to model inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcmSpec {
    pub scenario: Scenario,
    pub n_alternatives: usize,
    /// One entry per alternative-specific column, in dataset column order.
    pub attrs: Vec<SpecAttr>,
    pub covariates: Vec<String>,
}

/// Column indices per alternative, resolved once so row evaluation does no
/// name or role lookups.
#[derive(Clone, Debug)]
pub struct DcmLayout {
    pub(crate) alts: Vec<AltLayout>,
    pub(crate) n_x: usize,
    pub(crate) n_z: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum AltLayout {
    /// Generic columns of this alternative.
    Mnl(Vec<usize>),
    /// (payoff column, probability column) per branch.
    Pt(Vec<(usize, usize)>),
    /// (payoff column, delay column) per branch.
    Hd(Vec<(usize, usize)>),
}

impl DcmSpec {
    /// Builds a spec with explicit roles; `roles` is aligned with
    /// `schema.alt_attrs`.
    pub fn new(scenario: Scenario, schema: &DatasetSchema, roles: &[AttrRole]) -> Result<Self> {
        if roles.len() != schema.alt_attrs.len() {
            return Err(Error::config(format!(
                "got {} roles for {} alternative-specific columns",
                roles.len(),
                schema.alt_attrs.len()
            )));
        }
        let spec = DcmSpec {
            scenario,
            n_alternatives: schema.n_alternatives,
            attrs: schema
                .alt_attrs
                .iter()
                .zip(roles)
                .map(|(a, &role)| SpecAttr {
                    alt: a.alt,
                    name: a.name.clone(),
                    role,
                })
                .collect(),
            covariates: schema.indiv_attrs.clone(),
        };
        spec.layout()?;
        Ok(spec)
    }

    /// Derives roles from column names: `reward`/`reward_<j>` are payoffs,
    /// `prob`/`prob_<j>` probabilities, `delay`/`delay_<j>`/`delay_days`
    /// delays, everything else generic. `<j>` is 1-based; a bare name means
    /// branch 1.
    pub fn infer(scenario: Scenario, schema: &DatasetSchema) -> Result<Self> {
        let roles: Vec<AttrRole> = schema
            .alt_attrs
            .iter()
            .map(|a| role_from_name(&a.name))
            .collect();
        Self::new(scenario, schema, &roles)
    }

    /// Resolves and validates the column layout for this spec.
    pub fn layout(&self) -> Result<DcmLayout> {
        let k = self.n_alternatives;
        if k < 2 {
            return Err(Error::config("need at least two alternatives"));
        }
        for (c, a) in self.attrs.iter().enumerate() {
            if a.alt >= k {
                return Err(Error::config(format!(
                    "column {c} ({}) assigned to alternative {} of {k}",
                    a.name, a.alt
                )));
            }
        }
        let alts = match self.scenario {
            Scenario::Mnl => self.layout_mnl()?,
            Scenario::Pt => self.layout_paired(
                |role| match role {
                    AttrRole::Payoff { branch } => Some((0, branch)),
                    AttrRole::Probability { branch } => Some((1, branch)),
                    _ => None,
                },
                "probability",
            )?,
            Scenario::Hd => self.layout_paired(
                |role| match role {
                    AttrRole::Payoff { branch } => Some((0, branch)),
                    AttrRole::Delay { branch } => Some((1, branch)),
                    _ => None,
                },
                "delay",
            )?,
        };
        Ok(DcmLayout {
            alts,
            n_x: self.attrs.len(),
            n_z: self.covariates.len(),
        })
    }

    fn layout_mnl(&self) -> Result<Vec<AltLayout>> {
        for a in &self.attrs {
            if a.role != AttrRole::Generic {
                return Err(Error::config(format!(
                    "mnl takes only generic columns, {} has a structural role",
                    a.name
                )));
            }
        }
        let mut cols = vec![Vec::new(); self.n_alternatives];
        for (c, a) in self.attrs.iter().enumerate() {
            cols[a.alt].push(c);
        }
        Ok(cols.into_iter().map(AltLayout::Mnl).collect())
    }

    /// Shared pairing logic for pt (payoff + probability) and hd
    /// (payoff + delay). `classify` maps a role to (side, branch) where side
    /// 0 is the payoff.
    fn layout_paired(
        &self,
        classify: impl Fn(AttrRole) -> Option<(usize, usize)>,
        partner: &str,
    ) -> Result<Vec<AltLayout>> {
        let mut sides: Vec<[std::collections::BTreeMap<usize, usize>; 2]> =
            (0..self.n_alternatives).map(|_| Default::default()).collect();
        for (c, a) in self.attrs.iter().enumerate() {
            let (side, branch) = classify(a.role).ok_or_else(|| {
                Error::config(format!(
                    "column {} has role {:?}, expected payoff or {partner} for {}",
                    a.name, a.role, self.scenario
                ))
            })?;
            if sides[a.alt][side].insert(branch, c).is_some() {
                return Err(Error::config(format!(
                    "alternative {} has two columns for branch {} on the same side",
                    a.alt, branch
                )));
            }
        }
        let mut alts = Vec::with_capacity(self.n_alternatives);
        for (alt, [payoffs, partners]) in sides.into_iter().enumerate() {
            if payoffs.is_empty() {
                return Err(Error::config(format!("alternative {alt} has no branches")));
            }
            let keys: Vec<usize> = payoffs.keys().copied().collect();
            if keys != partners.keys().copied().collect::<Vec<_>>() {
                return Err(Error::config(format!(
                    "alternative {alt}: payoff and {partner} branches do not pair up"
                )));
            }
            let pairs: Vec<(usize, usize)> = keys
                .iter()
                .map(|b| (payoffs[b], partners[b]))
                .collect();
            alts.push(match self.scenario {
                Scenario::Pt => AltLayout::Pt(pairs),
                Scenario::Hd => AltLayout::Hd(pairs),
                Scenario::Mnl => unreachable!(),
            });
        }
        Ok(alts)
    }
}

fn role_from_name(name: &str) -> AttrRole {
    let (base, branch) = match name.rfind('_') {
        Some(pos) if name[pos + 1..].chars().all(|c| c.is_ascii_digit())
            && !name[pos + 1..].is_empty() =>
        {
            let idx: usize = name[pos + 1..].parse().unwrap_or(0);
            (&name[..pos], idx.saturating_sub(1))
        }
        _ => (name, 0),
    };
    match base {
        "reward" => AttrRole::Payoff { branch },
        "prob" => AttrRole::Probability { branch },
        "delay" | "delay_days" => AttrRole::Delay { branch },
        _ if base == name && name == "delay_days" => AttrRole::Delay { branch: 0 },
        _ => AttrRole::Generic,
    }
}

// ---------------------------------------------------------------------------
// Parameters

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum DcmParams {
    Mnl(MnlParams),
    Pt(PtParams),
    Hd(HdParams),
}

/// Linear-in-parameters logit. The last alternative is the reference: its
/// constant and covariate coefficients are pinned to 0 and excluded from the
/// flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnlParams {
    pub constants: Vec<f64>,
    pub attr_coefs: Vec<f64>,
    pub z_coefs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtParams {
    pub r0: f64,
    pub alpha0: f64,
    pub lambda0: f64,
    pub r_z: Vec<f64>,
    pub alpha_z: Vec<f64>,
    pub lambda_z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdParams {
    pub beta0: f64,
    pub r0: f64,
    pub beta_z: Vec<f64>,
    pub r_z: Vec<f64>,
}

impl DcmParams {
    pub fn scenario(&self) -> Scenario {
        match self {
            DcmParams::Mnl(_) => Scenario::Mnl,
            DcmParams::Pt(_) => Scenario::Pt,
            DcmParams::Hd(_) => Scenario::Hd,
        }
    }

    /// All-zero parameters (the delta = 1 convention).
    pub fn zeros(spec: &DcmSpec) -> Self {
        let k = spec.n_alternatives;
        let nx = spec.attrs.len();
        let nz = spec.covariates.len();
        match spec.scenario {
            Scenario::Mnl => DcmParams::Mnl(MnlParams {
                constants: vec![0.0; k],
                attr_coefs: vec![0.0; nx],
                z_coefs: vec![vec![0.0; nz]; k],
            }),
            Scenario::Pt => DcmParams::Pt(PtParams {
                r0: 0.0,
                alpha0: 0.0,
                lambda0: 0.0,
                r_z: vec![0.0; nz],
                alpha_z: vec![0.0; nz],
                lambda_z: vec![0.0; nz],
            }),
            Scenario::Hd => DcmParams::Hd(HdParams {
                beta0: 0.0,
                r0: 0.0,
                beta_z: vec![0.0; nz],
                r_z: vec![0.0; nz],
            }),
        }
    }

    /// Estimation starting point. The nonlinear families start at neutral
    /// behavior (linear value, identity weighting, no loss aversion, mild
    /// discounting) so the first gradient steps are informative and no scalar
    /// starts inside its clamp.
    pub fn init(spec: &DcmSpec) -> Self {
        let mut p = Self::zeros(spec);
        match &mut p {
            DcmParams::Mnl(_) => {}
            DcmParams::Pt(pt) => {
                pt.r0 = 1.0;
                pt.alpha0 = 1.0;
                pt.lambda0 = 1.0;
            }
            DcmParams::Hd(hd) => {
                hd.beta0 = 0.05;
                hd.r0 = 0.03;
            }
        }
        p
    }

    /// Number of free parameters (pinned reference entries excluded).
    pub fn n_free(&self) -> usize {
        match self {
            DcmParams::Mnl(m) => {
                let k = m.constants.len();
                let nz = m.z_coefs.first().map_or(0, Vec::len);
                (k - 1) + m.attr_coefs.len() + (k - 1) * nz
            }
            DcmParams::Pt(p) => 3 + 3 * p.r_z.len(),
            DcmParams::Hd(h) => 2 + 2 * h.beta_z.len(),
        }
    }

    /// Flat view of the free parameters. Order: mnl constants[0..K-1],
    /// attr_coefs, z_coefs row-major over non-reference alternatives;
    /// pt [r0, alpha0, lambda0, r_z, alpha_z, lambda_z]; hd [beta0, r0,
    /// beta_z, r_z].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_free());
        match self {
            DcmParams::Mnl(m) => {
                let k = m.constants.len();
                out.extend_from_slice(&m.constants[..k - 1]);
                out.extend_from_slice(&m.attr_coefs);
                for row in &m.z_coefs[..k - 1] {
                    out.extend_from_slice(row);
                }
            }
            DcmParams::Pt(p) => {
                out.push(p.r0);
                out.push(p.alpha0);
                out.push(p.lambda0);
                out.extend_from_slice(&p.r_z);
                out.extend_from_slice(&p.alpha_z);
                out.extend_from_slice(&p.lambda_z);
            }
            DcmParams::Hd(h) => {
                out.push(h.beta0);
                out.push(h.r0);
                out.extend_from_slice(&h.beta_z);
                out.extend_from_slice(&h.r_z);
            }
        }
        out
    }

    /// Writes a flat vector (same order as `to_flat`) back into the
    /// structured form.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_free() {
            return Err(Error::config(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.n_free()
            )));
        }
        let mut it = flat.iter().copied();
        match self {
            DcmParams::Mnl(m) => {
                let k = m.constants.len();
                for c in &mut m.constants[..k - 1] {
                    *c = it.next().unwrap();
                }
                for w in &mut m.attr_coefs {
                    *w = it.next().unwrap();
                }
                for row in &mut m.z_coefs[..k - 1] {
                    for w in row {
                        *w = it.next().unwrap();
                    }
                }
            }
            DcmParams::Pt(p) => {
                p.r0 = it.next().unwrap();
                p.alpha0 = it.next().unwrap();
                p.lambda0 = it.next().unwrap();
                for w in p.r_z.iter_mut().chain(&mut p.alpha_z).chain(&mut p.lambda_z) {
                    *w = it.next().unwrap();
                }
            }
            DcmParams::Hd(h) => {
                h.beta0 = it.next().unwrap();
                h.r0 = it.next().unwrap();
                for w in h.beta_z.iter_mut().chain(&mut h.r_z) {
                    *w = it.next().unwrap();
                }
            }
        }
        Ok(())
    }

    /// theta += scale * grad over the free parameters.
    pub fn add_scaled(&mut self, grad: &[f64], scale: f64) -> Result<()> {
        let mut flat = self.to_flat();
        if grad.len() != flat.len() {
            return Err(Error::config("gradient length mismatch"));
        }
        for (t, g) in flat.iter_mut().zip(grad) {
            *t += scale * g;
        }
        self.set_flat(&flat)
    }
}

// ---------------------------------------------------------------------------
// Closed-form pieces

/// Prospect-theory value function: `x^r` for gains, `-lambda (-x)^r` for
/// losses.
pub fn pt_value(x: f64, r: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        x.powf(r)
    } else {
        -lambda * (-x).powf(r)
    }
}

/// Probability weighting `exp(-(-ln p)^alpha)`; the input is clamped to
/// `[PROB_FLOOR, 1]`. `pt_weight(1, alpha) == 1` for any alpha > 0.
pub fn pt_weight(p: f64, alpha: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0);
    (-(-p.ln()).powf(alpha)).exp()
}

/// Hyperbolic discount factor `beta * exp(-r t)`.
pub fn hd_discount(beta: f64, r: f64, t: f64) -> f64 {
    beta * (-r * t).exp()
}

/// (value, d/dx, d/dr, d/dlambda). At x == 0 the value function has a kink
/// (and an unbounded slope for r < 1); all partials are taken as 0 there.
fn pt_value_grads(x: f64, r: f64, lambda: f64) -> (f64, f64, f64, f64) {
    if x == 0.0 {
        (0.0, 0.0, 0.0, 0.0)
    } else if x > 0.0 {
        let c = x.powf(r);
        (c, r * x.powf(r - 1.0), c * x.ln(), 0.0)
    } else {
        let m = (-x).powf(r);
        (
            -lambda * m,
            lambda * r * (-x).powf(r - 1.0),
            -lambda * m * (-x).ln(),
            -m,
        )
    }
}

/// (weight, d/dp, d/dalpha, clamped). d/dp is 0 when the probability sits
/// outside `[PROB_FLOOR, 1]` (inside the clamp) and at p == 1 for alpha < 1,
/// where the true slope diverges.
fn pt_weight_grads(p_raw: f64, alpha: f64) -> (f64, f64, f64, bool) {
    let clamped = !(PROB_FLOOR..=1.0).contains(&p_raw);
    let p = p_raw.clamp(PROB_FLOOR, 1.0);
    let t = -p.ln();
    let w = (-t.powf(alpha)).exp();
    if t <= 0.0 {
        let dp = if clamped {
            0.0
        } else if alpha == 1.0 {
            1.0
        } else {
            0.0
        };
        return (w, dp, 0.0, clamped);
    }
    let dp = if clamped {
        0.0
    } else {
        w * alpha * t.powf(alpha - 1.0) / p
    };
    let da = -w * t.powf(alpha) * t.ln();
    (w, dp, da, clamped)
}

/// Affine covariate map `base + z' coefs`, floored at `PARAM_FLOOR`.
/// Returns (value, clamped).
fn scalar_map(base: f64, coefs: &[f64], z: ArrayView1<f64>) -> (f64, bool) {
    let raw = base + z.iter().zip(coefs).map(|(a, b)| a * b).sum::<f64>();
    if raw < PARAM_FLOOR {
        (PARAM_FLOOR, true)
    } else {
        (raw, false)
    }
}

// ---------------------------------------------------------------------------
// Evaluation

/// Utilities of one observation.
#[derive(Clone, Debug)]
pub struct RowEval {
    pub utilities: Vec<f64>,
    pub clamp_events: u32,
}

/// Utilities plus all first-order partials of one observation.
///
/// `d_params` is K x n_free in `to_flat` order; `d_x` and `d_z` are in the
/// same space the inputs were given in.
#[derive(Clone, Debug)]
pub struct RowGradients {
    pub utilities: Vec<f64>,
    pub d_params: Array2<f64>,
    pub d_x: Array2<f64>,
    pub d_z: Array2<f64>,
    pub clamp_events: u32,
}

/// Utilities of one observation under `params`.
pub fn utilities_row(
    layout: &DcmLayout,
    params: &DcmParams,
    x: ArrayView1<f64>,
    z: ArrayView1<f64>,
) -> RowEval {
    debug_assert_eq!(x.len(), layout.n_x);
    debug_assert_eq!(z.len(), layout.n_z);
    let k = layout.alts.len();
    let mut v = vec![0.0; k];
    let mut clamps = 0u32;
    match params {
        DcmParams::Mnl(m) => {
            for (alt, lay) in layout.alts.iter().enumerate() {
                let AltLayout::Mnl(cols) = lay else { unreachable!() };
                let mut u = m.constants[alt];
                for &c in cols {
                    u += m.attr_coefs[c] * x[c];
                }
                u += z.iter().zip(&m.z_coefs[alt]).map(|(a, b)| a * b).sum::<f64>();
                v[alt] = u;
            }
        }
        DcmParams::Pt(p) => {
            let (r, cr) = scalar_map(p.r0, &p.r_z, z);
            let (alpha, ca) = scalar_map(p.alpha0, &p.alpha_z, z);
            let (lambda, cl) = scalar_map(p.lambda0, &p.lambda_z, z);
            clamps += u32::from(cr) + u32::from(ca) + u32::from(cl);
            for (alt, lay) in layout.alts.iter().enumerate() {
                let AltLayout::Pt(branches) = lay else { unreachable!() };
                let mut u = 0.0;
                for &(xc, pc) in branches {
                    let p_raw = x[pc];
                    if !(PROB_FLOOR..=1.0).contains(&p_raw) {
                        clamps += 1;
                    }
                    u += pt_value(x[xc], r, lambda) * pt_weight(p_raw, alpha);
                }
                v[alt] = u;
            }
        }
        DcmParams::Hd(h) => {
            let (beta, cb) = scalar_map(h.beta0, &h.beta_z, z);
            let (r, cr) = scalar_map(h.r0, &h.r_z, z);
            clamps += u32::from(cb) + u32::from(cr);
            for (alt, lay) in layout.alts.iter().enumerate() {
                let AltLayout::Hd(branches) = lay else { unreachable!() };
                let mut u = 0.0;
                for &(xc, tc) in branches {
                    u += x[xc] * hd_discount(beta, r, x[tc]);
                }
                v[alt] = u;
            }
        }
    }
    RowEval {
        utilities: v,
        clamp_events: clamps,
    }
}

/// Utilities for a whole input matrix, N x K.
pub fn utilities(
    layout: &DcmLayout,
    params: &DcmParams,
    x: &Array2<f64>,
    z: &Array2<f64>,
) -> (Array2<f64>, u64) {
    let n = x.nrows();
    let k = layout.alts.len();
    let mut out = Array2::zeros((n, k));
    let mut clamps = 0u64;
    for i in 0..n {
        let eval = utilities_row(layout, params, x.row(i), z.row(i));
        clamps += u64::from(eval.clamp_events);
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&eval.utilities));
    }
    (out, clamps)
}

/// Utilities and all first-order partials of one observation.
pub fn gradients_row(
    layout: &DcmLayout,
    params: &DcmParams,
    x: ArrayView1<f64>,
    z: ArrayView1<f64>,
) -> RowGradients {
    debug_assert_eq!(x.len(), layout.n_x);
    debug_assert_eq!(z.len(), layout.n_z);
    let k = layout.alts.len();
    let nf = params.n_free();
    let mut v = vec![0.0; k];
    let mut dp = Array2::zeros((k, nf));
    let mut dx = Array2::zeros((k, layout.n_x));
    let mut dz = Array2::zeros((k, layout.n_z));
    let mut clamps = 0u32;
    let nz = layout.n_z;

    match params {
        DcmParams::Mnl(m) => {
            let kk = m.constants.len();
            // Flat order: constants[0..K-1], attr_coefs, z rows.
            let const_base = 0;
            let attr_base = kk - 1;
            let z_base = attr_base + m.attr_coefs.len();
            for (alt, lay) in layout.alts.iter().enumerate() {
                let AltLayout::Mnl(cols) = lay else { unreachable!() };
                let mut u = m.constants[alt];
                if alt < kk - 1 {
                    dp[[alt, const_base + alt]] = 1.0;
                }
                for &c in cols {
                    u += m.attr_coefs[c] * x[c];
                    dp[[alt, attr_base + c]] = x[c];
                    dx[[alt, c]] = m.attr_coefs[c];
                }
                for mzi in 0..nz {
                    u += m.z_coefs[alt][mzi] * z[mzi];
                    dz[[alt, mzi]] = m.z_coefs[alt][mzi];
                    if alt < kk - 1 {
                        dp[[alt, z_base + alt * nz + mzi]] = z[mzi];
                    }
                }
                v[alt] = u;
            }
        }
        DcmParams::Pt(p) => {
            let (r, cr) = scalar_map(p.r0, &p.r_z, z);
            let (alpha, ca) = scalar_map(p.alpha0, &p.alpha_z, z);
            let (lambda, cl) = scalar_map(p.lambda0, &p.lambda_z, z);
            clamps += u32::from(cr) + u32::from(ca) + u32::from(cl);
            // Gates zero out everything routed through a clamped scalar.
            let (gr, ga, gl) = (
                if cr { 0.0 } else { 1.0 },
                if ca { 0.0 } else { 1.0 },
                if cl { 0.0 } else { 1.0 },
            );
            for (alt, lay) in layout.alts.iter().enumerate() {
                let AltLayout::Pt(branches) = lay else { unreachable!() };
                let (mut u, mut dv_dr, mut dv_da, mut dv_dl) = (0.0, 0.0, 0.0, 0.0);
                for &(xc, pc) in branches {
                    let (c, c_x, c_r, c_l) = pt_value_grads(x[xc], r, lambda);
                    let (w, w_p, w_a, pclamped) = pt_weight_grads(x[pc], alpha);
                    if pclamped {
                        clamps += 1;
                    }
                    u += c * w;
                    dv_dr += c_r * w;
                    dv_da += c * w_a;
                    dv_dl += c_l * w;
                    dx[[alt, xc]] = c_x * w;
                    dx[[alt, pc]] = c * w_p;
                }
                v[alt] = u;
                // Flat order: r0, alpha0, lambda0, r_z, alpha_z, lambda_z.
                dp[[alt, 0]] = dv_dr * gr;
                dp[[alt, 1]] = dv_da * ga;
                dp[[alt, 2]] = dv_dl * gl;
                for mzi in 0..nz {
                    dp[[alt, 3 + mzi]] = dv_dr * gr * z[mzi];
                    dp[[alt, 3 + nz + mzi]] = dv_da * ga * z[mzi];
                    dp[[alt, 3 + 2 * nz + mzi]] = dv_dl * gl * z[mzi];
                    dz[[alt, mzi]] = dv_dr * gr * p.r_z[mzi]
                        + dv_da * ga * p.alpha_z[mzi]
                        + dv_dl * gl * p.lambda_z[mzi];
                }
            }
        }
        DcmParams::Hd(h) => {
            let (beta, cb) = scalar_map(h.beta0, &h.beta_z, z);
            let (r, cr) = scalar_map(h.r0, &h.r_z, z);
            clamps += u32::from(cb) + u32::from(cr);
            let (gb, gr) = (if cb { 0.0 } else { 1.0 }, if cr { 0.0 } else { 1.0 });
            for (alt, lay) in layout.alts.iter().enumerate() {
                let AltLayout::Hd(branches) = lay else { unreachable!() };
                let (mut u, mut dv_db, mut dv_dr) = (0.0, 0.0, 0.0);
                for &(xc, tc) in branches {
                    let disc = (-r * x[tc]).exp();
                    u += x[xc] * beta * disc;
                    dv_db += x[xc] * disc;
                    dv_dr += -x[xc] * beta * x[tc] * disc;
                    dx[[alt, xc]] = beta * disc;
                    dx[[alt, tc]] = -x[xc] * beta * r * disc;
                }
                v[alt] = u;
                // Flat order: beta0, r0, beta_z, r_z.
                dp[[alt, 0]] = dv_db * gb;
                dp[[alt, 1]] = dv_dr * gr;
                for mzi in 0..nz {
                    dp[[alt, 2 + mzi]] = dv_db * gb * z[mzi];
                    dp[[alt, 2 + nz + mzi]] = dv_dr * gr * z[mzi];
                    dz[[alt, mzi]] = dv_db * gb * h.beta_z[mzi] + dv_dr * gr * h.r_z[mzi];
                }
            }
        }
    }

    RowGradients {
        utilities: v,
        d_params: dp,
        d_x: dx,
        d_z: dz,
        clamp_events: clamps,
    }
}
