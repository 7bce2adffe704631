//! One function per subcommand. Each loads its inputs, runs the library,
//! writes the output files, and finishes the directory manifest.

use std::path::Path;

use tbresnet::dataset::{save_csv, split, summarize, ChoiceDataset};
use tbresnet::dcm::DcmSpec;
use tbresnet::error::{Error, Result};
use tbresnet::metrics::{elasticity_table, evaluate_model, MetricReport};
use tbresnet::model::{sweep, validate_delta_grid, TbResNet, TrainerKind};
use tbresnet::robustness::{robustness_curve, PerturbOptions};
use tbresnet::surface::{median_reference, utility_grid, utility_slice, ReferenceObservation};

use crate::config::{
    EvalCmd, FitCmd, GenerateCmd, PerturbCmd, SurfaceCmd, SweepCmd,
};
use crate::output::OutputDir;

fn write_metrics(out: &mut OutputDir, prefix: &str, report: &MetricReport) -> Result<()> {
    out.write_json(&format!("{prefix}.json"), report)?;
    out.write_text(&format!("{prefix}.csv"), &report.to_csv_string())
}

fn load_model(path: &Path) -> Result<TbResNet> {
    TbResNet::load(path)
}

pub fn cmd_generate(cfg: &GenerateCmd, out_dir: &Path) -> Result<()> {
    let mut out = OutputDir::create(out_dir)?;
    let (ds, true_params) = tbresnet::dataset::generate_synthetic(&cfg.to_generate_config())?;

    save_csv(&ds, &out.path("dataset.csv"))?;
    out.record("dataset.csv");
    if let Some(fraction) = cfg.split_fraction {
        let (train, test) = split(&ds, fraction, cfg.seed)?;
        save_csv(&train, &out.path("train.csv"))?;
        out.record("train.csv");
        save_csv(&test, &out.path("test.csv"))?;
        out.record("test.csv");
    }

    let summary = summarize(&ds);
    out.write_json("summary.json", &summary)?;
    out.write_json("true_params.json", &true_params)?;

    println!("{} ({} rows)", cfg.scenario, summary.n);
    println!("{:<24} {:>12} {:>12}", "column", "mean", "std");
    for col in &summary.columns {
        println!("{:<24} {:>12.4} {:>12.4}", col.name, col.mean, col.std);
    }
    let n = summary.n as f64;
    for (k, count) in summary.choice_counts.iter().enumerate() {
        println!("choice {k}: {count} ({:.1}%)", 100.0 * *count as f64 / n);
    }

    out.finish("generate", cfg)
}

pub fn cmd_fit(cfg: &FitCmd, out_dir: &Path) -> Result<()> {
    let mut out = OutputDir::create(out_dir)?;
    let (train, test) = cfg.data.require_train(cfg.seed)?;
    let spec = DcmSpec::infer(cfg.scenario, train.schema())?;
    let model = TbResNet::fit(&spec, &train, &cfg.to_train_config())?;

    model.save(&out.path("model.json"))?;
    out.record("model.json");
    if let Some(meta) = model.meta() {
        let mut log = String::from("stage,iteration,loss\n");
        for (i, loss) in meta.stage1_loss.iter().enumerate() {
            log.push_str(&format!("theory,{i},{loss}\n"));
        }
        let stage2 = match cfg.trainer {
            TrainerKind::Sequential => "network",
            TrainerKind::Simultaneous => "joint",
        };
        for (i, loss) in meta.stage2_loss.iter().enumerate() {
            log.push_str(&format!("{stage2},{i},{loss}\n"));
        }
        out.write_text("training_log.csv", &log)?;
    }

    let train_report = evaluate_model(&model, &train)?;
    write_metrics(&mut out, "metrics_train", &train_report)?;
    println!(
        "train: accuracy {:.4}, cross-entropy {:.4}, f1 {:.4}",
        train_report.accuracy, train_report.cross_entropy, train_report.f1
    );
    if let Some(test) = test {
        let test_report = evaluate_model(&model, &test)?;
        write_metrics(&mut out, "metrics_test", &test_report)?;
        println!(
            "test:  accuracy {:.4}, cross-entropy {:.4}, f1 {:.4}",
            test_report.accuracy, test_report.cross_entropy, test_report.f1
        );
    }

    out.finish("fit", cfg)
}

pub fn cmd_sweep(cfg: &SweepCmd, out_dir: &Path) -> Result<()> {
    let mut out = OutputDir::create(out_dir)?;
    let (train, test) = cfg.data.require_both(cfg.seed)?;
    let grid = cfg.grid();
    validate_delta_grid(&grid)?;
    let spec = DcmSpec::infer(cfg.scenario, train.schema())?;
    let base = cfg.to_train_config();
    let result = sweep(&spec, &train, &test, &grid, &base)?;

    let mut csv = String::from("delta,accuracy,cross_entropy,f1,baseline_accuracy,error\n");
    for row in &result.rows {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.delta,
            cell(row.accuracy),
            cell(row.cross_entropy),
            cell(row.f1),
            result.baseline_accuracy,
            row.error.clone().unwrap_or_default()
        ));
    }
    out.write_text("sweep.csv", &csv)?;
    out.write_json("sweep.json", &result)?;

    println!("baseline accuracy {:.4}", result.baseline_accuracy);
    if let Some(d) = result.best_accuracy_delta {
        println!("best accuracy at delta = {d}");
    }
    if let Some(d) = result.best_cross_entropy_delta {
        println!("best cross-entropy at delta = {d}");
    }

    out.finish("sweep", cfg)
}

pub fn cmd_eval(cfg: &EvalCmd, out_dir: &Path) -> Result<()> {
    let mut out = OutputDir::create(out_dir)?;
    let model = load_model(&cfg.model)?;
    let test = cfg.data.require_test(cfg.seed)?;
    let report = evaluate_model(&model, &test)?;

    write_metrics(&mut out, "metrics", &report)?;
    out.write_text("per_class.csv", &report.per_class_csv())?;
    out.write_text("confusion.csv", &report.confusion_csv())?;

    println!(
        "accuracy {:.4}, cross-entropy {:.4}, f1 {:.4} over {} alternatives",
        report.accuracy,
        report.cross_entropy,
        report.f1,
        report.precision.len()
    );

    out.finish("eval", cfg)
}

pub fn cmd_perturb(cfg: &PerturbCmd, out_dir: &Path) -> Result<()> {
    let mut out = OutputDir::create(out_dir)?;
    if cfg.attacks.is_empty() {
        return Err(Error::config("perturb needs at least one attack"));
    }
    let model = load_model(&cfg.model)?;
    let test = cfg.data.require_test(cfg.seed)?;
    let opts = PerturbOptions {
        perturb_z: cfg.perturb_z,
        tgsm_target: cfg.tgsm_target,
        seed: cfg.seed,
    };

    let mut reports = Vec::with_capacity(cfg.attacks.len());
    let mut csv = String::from("attack,epsilon,accuracy,cross_entropy,f1\n");
    for &attack in &cfg.attacks {
        let report = robustness_curve(&model, &test, attack, &cfg.epsilon_grid, &opts)?;
        for p in &report.points {
            csv.push_str(&format!(
                "{attack},{},{},{},{}\n",
                p.epsilon, p.accuracy, p.cross_entropy, p.f1
            ));
        }
        let last = report.points.last().expect("validated grid is non-empty");
        println!(
            "{attack}: accuracy {:.4} -> {:.4} over epsilon [0, {}]",
            report.points[0].accuracy, last.accuracy, last.epsilon
        );
        reports.push(report);
    }
    out.write_text("perturb.csv", &csv)?;
    out.write_json("perturb.json", &reports)?;

    out.finish("perturb", cfg)
}

pub fn cmd_elasticity(cfg: &crate::config::ElasticityCmd, out_dir: &Path) -> Result<()> {
    let mut out = OutputDir::create(out_dir)?;
    let model = load_model(&cfg.model)?;
    let test = cfg.data.require_test(cfg.seed)?;
    let table = elasticity_table(&model, &test)?;

    out.write_text("elasticity.csv", &table.to_csv_string())?;
    out.write_json("elasticity.json", &table)?;

    println!("{} elasticities over {} rows", table.rows.len(), test.n());
    out.finish("elasticity", cfg)
}

fn surface_reference(cfg: &SurfaceCmd) -> Result<ReferenceObservation> {
    if let Some(reference) = &cfg.reference {
        return Ok(reference.clone());
    }
    let source = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::config("surface needs a reference observation or a data source"))?;
    let (train, test) = source.load(cfg.seed)?;
    let ds: ChoiceDataset = train
        .or(test)
        .ok_or_else(|| Error::config("surface data source resolved to no dataset"))?;
    median_reference(&ds)
}

pub fn cmd_surface(cfg: &SurfaceCmd, out_dir: &Path) -> Result<()> {
    let mut out = OutputDir::create(out_dir)?;
    let model = load_model(&cfg.model)?;
    let reference = surface_reference(cfg)?;

    match &cfg.attr_b {
        Some(attr_b) => {
            let range_b = cfg.range_b.ok_or_else(|| {
                Error::config("surface with attr_b needs range_b as well")
            })?;
            let grid = utility_grid(
                &model,
                cfg.alternative,
                &cfg.attr_a,
                attr_b,
                cfg.range_a,
                range_b,
                cfg.resolution_a,
                cfg.resolution_b,
                &reference,
            )?;
            out.write_text("surface.csv", &grid.to_csv_string())?;
            out.write_json("surface.json", &grid)?;
            println!(
                "{} x {} utility grid for alternative {} of {}",
                cfg.resolution_a, cfg.resolution_b, cfg.alternative, grid.scenario
            );
        }
        None => {
            let slice = utility_slice(
                &model,
                cfg.alternative,
                &cfg.attr_a,
                cfg.range_a,
                cfg.resolution_a,
                &reference,
            )?;
            out.write_text("surface.csv", &slice.to_csv_string())?;
            out.write_json("surface.json", &slice)?;
            println!(
                "{}-point utility slice for alternative {} of {}",
                cfg.resolution_a, cfg.alternative, slice.scenario
            );
        }
    }

    out.finish("surface", cfg)
}
