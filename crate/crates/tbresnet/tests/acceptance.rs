//! Release checklist for the library: one test per numbered criterion, each
//! printing `ACCEPTANCE C<nn> <name>: PASS` or `: FAIL` before asserting, so
//! `cargo test -p tbresnet --test acceptance -- --nocapture` reads as a
//! checklist. Seeds, grids, and tolerances are pinned; the stochastic
//! criteria (C04, C05, C08) were calibrated on seeds 1-10 and must hold on
//! at least 8 of them. The CLI determinism criterion (C11) lives in the CLI
//! crate's acceptance target.

use ndarray::Array2;
use rand::Rng;

use tbresnet::dataset::{
    generate_synthetic, gumbel, AltAttr, ChoiceDataset, DatasetSchema, GenerateConfig, NoiseKind,
    StandardizationStats,
};
use tbresnet::dcm::{
    hd_discount, pt_value, pt_weight, AttrRole, DcmParams, DcmSpec, MnlParams, PtParams, Scenario,
};
use tbresnet::metrics::{
    elasticity, elasticity_table, empirical_rademacher, evaluate, ElasticityKind,
};
use tbresnet::model::{softmax_row, sweep, DEFAULT_DELTA_GRID};
use tbresnet::nn::{BatchStream, MlpGrads, MlpParams};
use tbresnet::rng::{indexed_substream, substream, STREAM_BATCH, STREAM_INIT};
use tbresnet::robustness::{robustness_curve, Attack, PerturbOptions};
use tbresnet::{TbResNet, TrainConfig};

/// Chi-square critical value, df = 3, upper tail 0.01.
const CHI2_DF3_P99: f64 = 11.344866730144373;

fn verdict(id: &str, name: &str, ok: bool) {
    println!("ACCEPTANCE {id} {name}: {}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{id} {name} failed");
}

fn gen(scenario: Scenario, n: usize, nonlinearity: f64, truth: Option<DcmParams>, seed: u64) -> ChoiceDataset {
    let cfg = GenerateConfig {
        scenario,
        n: Some(n),
        noise: NoiseKind::Gumbel,
        true_params: truth,
        nonlinearity,
        seed,
    };
    generate_synthetic(&cfg).expect("generate").0
}

fn base_cfg(delta: f64, seed: u64) -> TrainConfig {
    TrainConfig::new(delta, seed)
}

// ---------------------------------------------------------------------------
// C01: analytic parameter gradients match central finite differences.

/// Random but floor-safe theory parameters: scalar maps stay far from the
/// positivity floor for standardized covariates, so the FD stencil cannot
/// cross a clamp.
fn random_dcm(spec: &DcmSpec, rng: &mut impl Rng) -> DcmParams {
    match DcmParams::zeros(spec) {
        DcmParams::Mnl(mut p) => {
            let k = p.constants.len();
            for c in p.constants.iter_mut().take(k - 1) {
                *c = rng.random_range(-0.4..0.4);
            }
            for b in p.attr_coefs.iter_mut() {
                *b = rng.random_range(-0.6..0.6);
            }
            for row in p.z_coefs.iter_mut().take(k - 1) {
                for b in row.iter_mut() {
                    *b = rng.random_range(-0.3..0.3);
                }
            }
            DcmParams::Mnl(p)
        }
        DcmParams::Pt(mut p) => {
            p.r0 = rng.random_range(0.6..0.9);
            p.alpha0 = rng.random_range(0.7..1.1);
            p.lambda0 = rng.random_range(1.5..2.5);
            for v in p.r_z.iter_mut().chain(&mut p.alpha_z).chain(&mut p.lambda_z) {
                *v = rng.random_range(-0.02..0.02);
            }
            DcmParams::Pt(p)
        }
        DcmParams::Hd(mut p) => {
            p.beta0 = rng.random_range(0.7..1.1);
            p.r0 = rng.random_range(0.05..0.3);
            for v in p.beta_z.iter_mut().chain(&mut p.r_z) {
                *v = rng.random_range(-0.01..0.01);
            }
            DcmParams::Hd(p)
        }
    }
}

#[test]
fn c01_analytic_gradients_match_fd() {
    let mut failures: Vec<String> = Vec::new();
    let mut checked = 0usize;
    let mut excluded = 0usize;
    let mut instances = 0usize;

    for (s_idx, scenario) in [Scenario::Mnl, Scenario::Pt, Scenario::Hd].into_iter().enumerate() {
        for inst in 0..8u64 {
            let mut rng = indexed_substream(9100 + s_idx as u64, "acceptance-fd", inst);
            let ds = gen(scenario, 12, 0.5, None, 9200 + 10 * s_idx as u64 + inst);
            let spec = DcmSpec::infer(scenario, ds.schema()).expect("spec");
            let dcm = random_dcm(&spec, &mut rng);
            let layout_in = ds.schema().n_x() + ds.schema().n_z();
            let dims = [layout_in, 8, 8, 8, spec.n_alternatives];
            let mlp = MlpParams::glorot(&dims, &mut rng).expect("glorot");
            let stats = StandardizationStats::fit(&ds);
            let delta = rng.random_range(0.2..0.8);
            let mut model =
                TbResNet::from_parts(spec, delta, dcm, mlp, stats).expect("from_parts");
            instances += 1;

            let (x_std, z_std) = model.standardized_inputs(&ds).expect("std");
            let y = ds.one_hot();
            let theta = model.param_vector();
            let report = model.loss_and_gradients(&x_std, &z_std, &y).expect("gradients");
            let l0 = report.loss;
            let analytic = report.d_params;

            let nd = model.dcm_params().n_free();
            let mut coords: Vec<usize> = (0..nd).collect();
            let total = theta.len();
            for _ in 0..40 {
                coords.push(rng.random_range(nd..total));
            }
            coords.sort_unstable();
            coords.dedup();

            let loss_at = |model: &mut TbResNet, t: &[f64]| -> f64 {
                model.set_param_vector(t).expect("set params");
                model
                    .loss_and_gradients(&x_std, &z_std, &y)
                    .expect("loss")
                    .loss
            };
            let probe = |model: &mut TbResNet, j: usize, h: f64| -> (f64, f64) {
                let mut tp = theta.clone();
                tp[j] += h;
                let lp = loss_at(model, &tp);
                tp[j] = theta[j] - h;
                let lm = loss_at(model, &tp);
                (lp, lm)
            };

            for &j in &coords {
                let h = 1e-5 * (1.0 + theta[j].abs());
                let (lp, lm) = probe(&mut model, j, h);
                let fd = (lp - lm) / (2.0 * h);
                let an = analytic[j];
                let err = (fd - an).abs();
                if err <= 1e-4 * an.abs().max(fd.abs()) || err <= 1e-8 {
                    checked += 1;
                    continue;
                }
                // With a ReLU or clamp kink inside the stencil the forward and
                // backward one-sided slopes split by exactly twice the central
                // difference error (a row whose hidden layer goes fully dead
                // pins downstream preactivations to zero, putting theta itself
                // on the kink); on a smooth loss they agree to O(h). The split
                // signature marks a kink, not a wrong gradient, so exclude it.
                let fd_plus = (lp - l0) / h;
                let fd_minus = (l0 - lm) / h;
                let split = (fd_plus - fd_minus).abs();
                if split > 0.5 * err && split > 1e-4 * fd_plus.abs().max(fd_minus.abs()).max(1.0) {
                    excluded += 1;
                    continue;
                }
                failures.push(format!(
                    "{scenario} inst {inst} coord {j}: analytic {an:.3e} fd {fd:.3e}"
                ));
            }
            model.set_param_vector(&theta).expect("restore");
        }
    }

    println!("  C01 detail: {instances} instances, {checked} coordinates, {excluded} excluded");
    for f in &failures {
        println!("  C01 mismatch: {f}");
    }
    let ok = failures.is_empty() && instances >= 20;
    verdict("C01", "analytic-gradients-match-fd", ok);
}

// ---------------------------------------------------------------------------
// C02: Gumbel-noise choice sampling follows the softmax distribution.

#[test]
fn c02_gumbel_sampling_matches_softmax() {
    const N: usize = 10_000;
    let mut passes = 0;
    for draw in 0..40u64 {
        let mut rng = indexed_substream(4242, "acceptance-gof", draw);
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut p = vec![0.0; 4];
        softmax_row(&v, &mut p);

        let mut counts = [0u64; 4];
        for _ in 0..N {
            let mut best = 0;
            let mut best_u = f64::NEG_INFINITY;
            for (k, &vk) in v.iter().enumerate() {
                let u = vk + gumbel(&mut rng);
                if u > best_u {
                    best_u = u;
                    best = k;
                }
            }
            counts[best] += 1;
        }
        let chi2: f64 = (0..4)
            .map(|k| {
                let e = N as f64 * p[k];
                let o = counts[k] as f64;
                (o - e) * (o - e) / e
            })
            .sum();
        if chi2 < CHI2_DF3_P99 {
            passes += 1;
        }
    }
    println!("  C02 detail: {passes}/40 draws below the df=3, p=0.01 critical value");
    verdict("C02", "gumbel-sampling-gof", passes >= 38);
}

// ---------------------------------------------------------------------------
// C03: the blend endpoints degenerate to the pure models.

#[test]
fn c03_blend_endpoints() {
    let train = gen(Scenario::Mnl, 600, 0.3, None, 31);
    let test = gen(Scenario::Mnl, 1200, 0.3, None, 32);
    let spec = DcmSpec::infer(Scenario::Mnl, train.schema()).expect("spec");
    let mut cfg = base_cfg(0.0, 7);
    cfg.hidden = vec![10, 10];
    cfg.iterations = 300;
    cfg.batch_size = 100;
    cfg.learning_rate = 0.02;

    // Near-zero delta reproduces the pure theory model's probabilities.
    let m0 = TbResNet::fit(&spec, &train, &cfg).expect("fit delta 0");
    let mut cfg_eps = cfg.clone();
    cfg_eps.delta = 1e-10;
    let m_eps = TbResNet::fit(&spec, &train, &cfg_eps).expect("fit delta 1e-10");
    let p0 = m0.probabilities(&test).expect("p0");
    let p_eps = m_eps.probabilities(&test).expect("p eps");
    let max_diff = p0
        .iter()
        .zip(p_eps.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let near_zero_ok = max_diff < 1e-6;

    // Delta 1 must be bitwise identical to training the bare network with
    // the same seed: same init stream, same batch stream, same update
    // arithmetic, theory utilities pinned to zero.
    let mut cfg1 = cfg.clone();
    cfg1.delta = 1.0;
    let m1 = TbResNet::fit(&spec, &train, &cfg1).expect("fit delta 1");

    let stats = StandardizationStats::fit(&train);
    let (x_std, z_std) = stats.transform(&train);
    let y = train.one_hot();
    let (n, nx, nz) = (train.n(), x_std.ncols(), z_std.ncols());
    let k = spec.n_alternatives;
    let mut inputs = Array2::zeros((n, nx + nz));
    for i in 0..n {
        for c in 0..nx {
            inputs[[i, c]] = x_std[[i, c]];
        }
        for m in 0..nz {
            inputs[[i, nx + m]] = z_std[[i, m]];
        }
    }
    let dims = [nx + nz, 10, 10, k];
    let mut mlp = MlpParams::glorot(&dims, &mut substream(cfg1.seed, STREAM_INIT)).expect("init");
    let mut stream =
        BatchStream::new(n, cfg1.batch_size, substream(cfg1.seed, STREAM_BATCH)).expect("stream");
    let mut grads = MlpGrads::zeros_like(&mlp);
    let mut batch = Vec::new();
    let delta = 1.0;
    let vt = 0.0;
    let mut v = vec![0.0; k];
    let mut p = vec![0.0; k];
    let mut upstream = vec![0.0; k];
    for _ in 0..cfg1.iterations {
        stream.next_batch(&mut batch);
        let b = batch.len() as f64;
        grads.reset();
        for &i in &batch {
            let row = inputs.row(i);
            let cache = mlp.forward_cache(row.as_slice().expect("row-major"));
            for kk in 0..k {
                v[kk] = (1.0 - delta) * vt + delta * cache.output()[kk];
            }
            softmax_row(&v, &mut p);
            for kk in 0..k {
                upstream[kk] = delta * (p[kk] - y[[i, kk]]);
            }
            mlp.backward_into(&cache, &upstream, &mut grads);
        }
        mlp.apply_step(&grads, -cfg1.learning_rate / b);
    }

    let (xt, zt) = stats.transform(&test);
    let p_model = m1.probabilities(&test).expect("p1");
    let mut exact = true;
    let mut vrow = vec![0.0; k];
    let mut prow = vec![0.0; k];
    for i in 0..test.n() {
        let mut row = Vec::with_capacity(nx + nz);
        row.extend(xt.row(i).iter());
        row.extend(zt.row(i).iter());
        let out = mlp.forward_cache(&row);
        for kk in 0..k {
            vrow[kk] = (1.0 - delta) * vt + delta * out.output()[kk];
        }
        softmax_row(&vrow, &mut prow);
        for kk in 0..k {
            if p_model[[i, kk]] != prow[kk] {
                exact = false;
            }
        }
    }

    println!("  C03 detail: near-zero max prob diff {max_diff:.2e}, delta-1 exact: {exact}");
    verdict("C03", "blend-endpoints", near_zero_ok && exact);
}

// ---------------------------------------------------------------------------
// C04: with a strongly nonlinear truth an interior delta beats both
// endpoints.

/// Heterogeneous risk truth: the parameter-on-covariate structure is exact
/// for the theory family, the added residual is not, so neither endpoint can
/// win on its own.
fn heterogeneous_pt_truth() -> DcmParams {
    DcmParams::Pt(PtParams {
        r0: 0.85,
        alpha0: 1.1,
        lambda0: 2.0,
        r_z: vec![0.0, -0.005, 0.0, 0.0, 0.0, 0.0, 0.0],
        alpha_z: vec![0.0, 0.0, -0.045, 0.0, 0.0, 0.0, 0.0],
        lambda_z: vec![0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.4],
    })
}

#[test]
fn c04_interior_delta_wins_on_nonlinear_truth() {
    let grid = [1e-10, 0.01, 0.05, 0.1, 0.3, 0.5, 0.8, 0.95, 1.0];
    let mut wins = 0;
    for seed in 1..=10u64 {
        let train = gen(Scenario::Pt, 4000, 3.75, Some(heterogeneous_pt_truth()), seed);
        let test = gen(Scenario::Pt, 10_000, 3.75, Some(heterogeneous_pt_truth()), seed + 1000);
        let spec = DcmSpec::infer(Scenario::Pt, train.schema()).expect("spec");
        let mut cfg = base_cfg(0.0, seed);
        cfg.hidden = vec![8];
        cfg.iterations = 600;
        cfg.batch_size = 100;
        cfg.learning_rate = 0.04;
        cfg.dcm_learning_rate = Some(0.0045);
        let result = sweep(&spec, &train, &test, &grid, &cfg).expect("sweep");
        let acc: Vec<f64> = result
            .rows
            .iter()
            .map(|r| r.accuracy.expect("grid point failed"))
            .collect();
        let first = acc[0];
        let last = acc[acc.len() - 1];
        let interior = acc[1..acc.len() - 1].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let won = interior >= first + 0.01 && interior >= last + 0.01;
        println!(
            "  C04 seed {seed}: interior best {interior:.4}, endpoints {first:.4}/{last:.4}, win: {won}"
        );
        if won {
            wins += 1;
        }
    }
    verdict("C04", "interior-delta-wins", wins >= 8);
}

// ---------------------------------------------------------------------------
// C05: with a truth inside the theory family the best delta is near zero.

#[test]
fn c05_linear_truth_prefers_theory() {
    let mut wins = 0;
    for seed in 1..=10u64 {
        let train = gen(Scenario::Mnl, 1000, 0.0, None, seed);
        let test = gen(Scenario::Mnl, 8000, 0.0, None, seed + 1000);
        let spec = DcmSpec::infer(Scenario::Mnl, train.schema()).expect("spec");
        let mut cfg = base_cfg(0.0, seed);
        cfg.hidden = vec![12];
        cfg.iterations = 400;
        cfg.batch_size = 100;
        cfg.learning_rate = 0.01;
        let result = sweep(&spec, &train, &test, &DEFAULT_DELTA_GRID, &cfg).expect("sweep");
        let best = result.best_accuracy_delta.expect("all grid points failed");
        let won = best <= 0.05;
        println!("  C05 seed {seed}: best-accuracy delta {best}, win: {won}");
        if won {
            wins += 1;
        }
    }
    verdict("C05", "linear-truth-prefers-theory", wins >= 8);
}

// ---------------------------------------------------------------------------
// C06: elasticities match the logit closed form, finite differences, and
// the substitution pattern a logit implies.

fn uniform_column(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Hand-built logit over raw units: identity standardization makes the
/// closed form exact in the dataset's own columns.
fn handmade_mnl(
    k: usize,
    constants: Vec<f64>,
    attr_coefs: Vec<f64>,
    z_coefs: Vec<Vec<f64>>,
    delta: f64,
    hidden: &[usize],
    n: usize,
    seed: u64,
) -> (TbResNet, ChoiceDataset) {
    let schema = DatasetSchema {
        n_alternatives: k,
        alt_attrs: (0..k)
            .map(|a| AltAttr {
                alt: a,
                name: "price".into(),
            })
            .collect(),
        indiv_attrs: vec!["inc".into()],
    };
    let mut rng = substream(seed, "acceptance-elasticity");
    let mut x = Array2::zeros((n, k));
    for c in 0..k {
        for (i, v) in uniform_column(&mut rng, n, 0.5, 2.0).into_iter().enumerate() {
            x[[i, c]] = v;
        }
    }
    let mut z = Array2::zeros((n, 1));
    for i in 0..n {
        z[[i, 0]] = rng.random_range(-1.5..1.5);
    }
    let choices: Vec<usize> = (0..n).map(|i| i % k).collect();
    let ds = ChoiceDataset::from_parts(schema.clone(), x, z, choices).expect("dataset");

    let spec = DcmSpec::new(Scenario::Mnl, &schema, &vec![AttrRole::Generic; k]).expect("spec");
    let stats = StandardizationStats {
        x_mean: vec![0.0; k],
        x_std: vec![1.0; k],
        z_mean: vec![0.0],
        z_std: vec![1.0],
    };
    let mut dims = vec![k + 1];
    dims.extend_from_slice(hidden);
    dims.push(k);
    let mlp = MlpParams::glorot(&dims, &mut rng).expect("glorot");
    let dcm = DcmParams::Mnl(MnlParams {
        constants,
        attr_coefs,
        z_coefs,
    });
    let model = TbResNet::from_parts(spec, delta, dcm, mlp, stats).expect("model");
    (model, ds)
}

/// Per-column FD elasticity sums: shift the raw column, re-run the full
/// prediction path, and aggregate (dP/dx) * (x / P) over rows.
fn fd_elasticity_sums(model: &TbResNet, ds: &ChoiceDataset, col: usize) -> Vec<f64> {
    let k = model.n_alternatives();
    let base_p = model.probabilities(ds).expect("base probs");
    let shift = |sign: f64| -> Array2<f64> {
        let mut x = ds.x().clone();
        for i in 0..ds.n() {
            let h = 1e-5 * (1.0 + x[[i, col]].abs());
            x[[i, col]] += sign * h;
        }
        let shifted = ChoiceDataset::from_parts(
            ds.schema().clone(),
            x,
            ds.z().clone(),
            ds.choices().to_vec(),
        )
        .expect("shifted dataset");
        model.probabilities(&shifted).expect("shifted probs")
    };
    let (pp, pm) = (shift(1.0), shift(-1.0));
    let mut sums = vec![0.0; k];
    for i in 0..ds.n() {
        let xi = ds.x()[[i, col]];
        let h = 1e-5 * (1.0 + xi.abs());
        for (kk, s) in sums.iter_mut().enumerate() {
            let dp = (pp[[i, kk]] - pm[[i, kk]]) / (2.0 * h);
            *s += dp * xi / base_p[[i, kk]];
        }
    }
    sums
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn c06_elasticities() {
    // Closed form on a pure binary logit with identity standardization.
    let beta = -1.2;
    let (pure2, ds2) = handmade_mnl(
        2,
        vec![0.3, 0.0],
        vec![beta, beta],
        vec![vec![0.4], vec![0.0]],
        0.0,
        &[4],
        40,
        61,
    );
    let mut self_closed = 0.0;
    let mut cross_closed = 0.0;
    for i in 0..ds2.n() {
        let u0 = 0.3 + beta * ds2.x()[[i, 0]] + 0.4 * ds2.z()[[i, 0]];
        let u1 = beta * ds2.x()[[i, 1]];
        let p0 = 1.0 / (1.0 + (u1 - u0).exp());
        self_closed += beta * ds2.x()[[i, 0]] * (1.0 - p0);
        cross_closed += -beta * ds2.x()[[i, 0]] * p0;
    }
    let self_row = elasticity(&pure2, &ds2, 0, 0).expect("self row");
    let cross_row = elasticity(&pure2, &ds2, 1, 0).expect("cross row");
    let closed_ok = (self_row.sum - self_closed).abs() <= 1e-8
        && (cross_row.sum - cross_closed).abs() <= 1e-8
        && self_row.kind == ElasticityKind::SelfElasticity
        && cross_row.kind == ElasticityKind::CrossElasticity;
    println!(
        "  C06 detail: closed-form self diff {:.2e}, cross diff {:.2e}",
        (self_row.sum - self_closed).abs(),
        (cross_row.sum - cross_closed).abs()
    );

    // FD agreement for a blended model, where the network also shapes dP/dx.
    let (blend2, _) = handmade_mnl(
        2,
        vec![0.3, 0.0],
        vec![beta, beta],
        vec![vec![0.4], vec![0.0]],
        0.35,
        &[6, 6],
        40,
        61,
    );
    let mut fd_ok = true;
    for col in 0..2 {
        let fd = fd_elasticity_sums(&blend2, &ds2, col);
        for (prob_alt, &f) in fd.iter().enumerate() {
            let row = elasticity(&blend2, &ds2, prob_alt, col).expect("row");
            if !rel_close(row.sum, f, 1e-4) {
                println!("  C06 fd mismatch: blended col {col} alt {prob_alt}: {} vs {f}", row.sum);
                fd_ok = false;
            }
        }
    }

    // A pure three-way logit: FD again, plus the logit substitution pattern,
    // namely every other alternative reacts identically to a price change.
    let (pure3, ds3) = handmade_mnl(
        3,
        vec![0.2, -0.1, 0.0],
        vec![-1.0, -1.0, -1.0],
        vec![vec![0.3], vec![-0.2], vec![0.0]],
        0.0,
        &[4],
        40,
        62,
    );
    let table = elasticity_table(&pure3, &ds3).expect("table");
    let mut pattern_ok = true;
    for col in 0..3 {
        let fd = fd_elasticity_sums(&pure3, &ds3, col);
        for (prob_alt, &f) in fd.iter().enumerate() {
            let row = elasticity(&pure3, &ds3, prob_alt, col).expect("row");
            if !rel_close(row.sum, f, 1e-4) {
                println!("  C06 fd mismatch: pure3 col {col} alt {prob_alt}: {} vs {f}", row.sum);
                fd_ok = false;
            }
        }
        // Row order is column-major: rows[col * 3 + prob_alt].
        let owner = ds3.schema().alt_attrs[col].alt;
        let col_rows: Vec<&tbresnet::metrics::ElasticityRow> =
            (0..3).map(|a| &table.rows[col * 3 + a]).collect();
        let self_sum = col_rows[owner].sum;
        let others: Vec<f64> = (0..3).filter(|&a| a != owner).map(|a| col_rows[a].sum).collect();
        if !(self_sum < 0.0 && others.iter().all(|&o| o > 0.0)) {
            println!("  C06 sign violation on column {col}: self {self_sum}, cross {others:?}");
            pattern_ok = false;
        }
        if (others[0] - others[1]).abs() > 1e-10 * others[0].abs().max(1.0) {
            println!("  C06 substitution asymmetry on column {col}: {others:?}");
            pattern_ok = false;
        }
    }

    verdict("C06", "elasticities", closed_ok && fd_ok && pattern_ok);
}

// ---------------------------------------------------------------------------
// C07: prediction metrics match a brute-force reimplementation.

fn brute_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[test]
fn c07_metrics_brute_force() {
    let mut rng = substream(7700, "acceptance-metrics");
    let mut ok = true;
    for case in 0..50 {
        let k = rng.random_range(2..=5usize);
        let n = rng.random_range(1..=40usize);
        let mut probs = Array2::zeros((n, k));
        let mut buf = vec![0.0; k];
        for i in 0..n {
            let u: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            softmax_row(&u, &mut buf);
            for (j, &p) in buf.iter().enumerate() {
                probs[[i, j]] = p;
            }
        }
        let choices: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let report = evaluate(&probs, &choices, k).expect("evaluate");

        let mut conf = vec![vec![0u64; k]; k];
        for (i, &c) in choices.iter().enumerate() {
            let row: Vec<f64> = (0..k).map(|j| probs[[i, j]]).collect();
            conf[c][brute_argmax(&row)] += 1;
        }
        let nf = n as f64;
        let acc = (0..k).map(|j| conf[j][j]).sum::<u64>() as f64 / nf;
        let ce = choices
            .iter()
            .enumerate()
            .map(|(i, &c)| -probs[[i, c]].ln())
            .sum::<f64>()
            / nf;
        let mut f1 = 0.0;
        for j in 0..k {
            let tp = conf[j][j] as f64;
            let support: u64 = conf[j].iter().sum();
            let predicted: u64 = conf.iter().map(|r| r[j]).sum();
            let prec = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let rec = if support > 0 { tp / support as f64 } else { 0.0 };
            let cf1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
            f1 += support as f64 / nf * cf1;
        }

        if report.confusion != conf {
            println!("  C07 case {case}: confusion mismatch");
            ok = false;
        }
        if (report.accuracy - acc).abs() > 1e-12
            || (report.cross_entropy - ce).abs() > 1e-12
            || (report.f1 - f1).abs() > 1e-12
        {
            println!(
                "  C07 case {case}: accuracy/ce/f1 off by {:.2e}/{:.2e}/{:.2e}",
                (report.accuracy - acc).abs(),
                (report.cross_entropy - ce).abs(),
                (report.f1 - f1).abs()
            );
            ok = false;
        }
    }

    // Uniform probabilities score exactly ln K.
    for k in 2..=6usize {
        let n = 17;
        let probs = Array2::from_elem((n, k), 1.0 / k as f64);
        let choices: Vec<usize> = (0..n).map(|i| i % k).collect();
        let report = evaluate(&probs, &choices, k).expect("evaluate uniform");
        if (report.cross_entropy - (k as f64).ln()).abs() > 1e-12 {
            println!("  C07 uniform K={k}: ce {} vs ln K {}", report.cross_entropy, (k as f64).ln());
            ok = false;
        }
    }
    verdict("C07", "metrics-brute-force", ok);
}

// ---------------------------------------------------------------------------
// C08: the pure theory model out-resists gradient-sign attacks; random
// noise of the same size hurts less than the worst-case direction.

#[test]
fn c08_theory_resists_fgsm() {
    let grid = [0.0, 0.1];
    let mut dcm_wins = 0;
    let mut noise_ok = true;
    let mut identity_ok = true;

    for seed in 1..=10u64 {
        let train = gen(Scenario::Mnl, 1000, 0.0, None, seed);
        let test = gen(Scenario::Mnl, 3000, 0.0, None, seed + 1000);
        let spec = DcmSpec::infer(Scenario::Mnl, train.schema()).expect("spec");
        let mut cfg = base_cfg(0.0, seed);
        cfg.hidden = vec![16, 16];
        cfg.iterations = 800;
        cfg.batch_size = 100;
        cfg.learning_rate = 0.02;
        let m_theory = TbResNet::fit(&spec, &train, &cfg).expect("fit theory");
        let mut cfg1 = cfg.clone();
        cfg1.delta = 1.0;
        let m_net = TbResNet::fit(&spec, &train, &cfg1).expect("fit net");

        let opts = PerturbOptions::new(seed);
        let fgsm_at = |m: &TbResNet| robustness_curve(m, &test, Attack::Fgsm, &grid, &opts).expect("fgsm");
        let gauss_at =
            |m: &TbResNet| robustness_curve(m, &test, Attack::Gaussian, &grid, &opts).expect("gaussian");

        let clean_metrics = |m: &TbResNet| {
            let p = m.probabilities(&test).expect("probs");
            evaluate(&p, test.choices(), spec.n_alternatives).expect("metrics")
        };

        let drop_check = |m: &TbResNet| -> (f64, bool, bool) {
            let clean = clean_metrics(m);
            let fg = fgsm_at(m);
            let ga = gauss_at(m);
            // Epsilon 0 must reproduce the unperturbed metrics bit for bit.
            let id = fg.points[0].accuracy == clean.accuracy
                && fg.points[0].cross_entropy == clean.cross_entropy
                && fg.points[0].f1 == clean.f1
                && ga.points[0].accuracy == clean.accuracy;
            let fgsm_acc = fg.points[1].accuracy;
            let gauss_acc = ga.points[1].accuracy;
            let noise_leq = (clean.accuracy - gauss_acc) <= (clean.accuracy - fgsm_acc);
            (fgsm_acc, id, noise_leq)
        };

        let (theory_fgsm, id_t, noise_t) = drop_check(&m_theory);
        let (net_fgsm, id_n, noise_n) = drop_check(&m_net);
        identity_ok &= id_t && id_n;
        noise_ok &= noise_t && noise_n;
        let won = theory_fgsm > net_fgsm;
        println!(
            "  C08 seed {seed}: theory fgsm acc {theory_fgsm:.4}, net fgsm acc {net_fgsm:.4}, win: {won}"
        );
        if won {
            dcm_wins += 1;
        }
    }
    println!("  C08 detail: epsilon-0 identity {identity_ok}, noise <= fgsm drop {noise_ok}");
    verdict("C08", "theory-resists-fgsm", dcm_wins >= 8 && noise_ok && identity_ok);
}

// ---------------------------------------------------------------------------
// C09: Rademacher estimator closed forms.

#[test]
fn c09_rademacher_closed_forms() {
    // A single zero function correlates with nothing: exactly zero.
    let zero = empirical_rademacher(&[vec![0.0; 6]], 500, 99).expect("zero class");
    let zero_ok = zero == 0.0;

    // {f, -f} with f = 1 on N = 4 points: sup is |mean of signs|, whose
    // expectation is 3/8.
    let class = vec![vec![1.0; 4], vec![-1.0; 4]];
    let est = empirical_rademacher(&class, 100_000, 2024).expect("sign class");
    let sign_ok = (est - 0.375).abs() <= 0.02;

    println!("  C09 detail: singleton {zero}, sign-pair estimate {est:.4}");
    verdict("C09", "rademacher-closed-forms", zero_ok && sign_ok);
}

// ---------------------------------------------------------------------------
// C10: theory building-block closed forms.

#[test]
fn c10_theory_closed_forms() {
    let e_inv = (-1.0f64).exp();
    let checks = [
        (pt_weight(1.0, 0.8) - 1.0).abs(),
        (pt_weight(e_inv, 1.0) - e_inv).abs(),
        (pt_value(1.0, 0.65, 2.25) - 1.0).abs(),
        (pt_value(-1.0, 1.0, 2.0) + 2.0).abs(),
        (1.0 * hd_discount(1.0, 2.0f64.ln(), 1.0) - 0.5).abs(),
    ];
    let ok = checks.iter().all(|&d| d <= 1e-12);
    println!("  C10 detail: max deviation {:.2e}", checks.iter().cloned().fold(0.0, f64::max));
    verdict("C10", "theory-closed-forms", ok);
}
