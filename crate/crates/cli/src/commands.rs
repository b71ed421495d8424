//! The train / eval / sweep subcommands.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use nalgebra::DVector;

use svgp_core::data::{load_csv, SplitSpec};
use svgp_core::kernels::KernelSpec;
use svgp_core::likelihoods::{BernoulliProbit, Likelihood};
use svgp_core::metrics::{evaluate, EvalReport};
use svgp_core::model_io::{ModelFile, SplitConfig, TrainMetadata};
use svgp_core::svgp::SvgpModel;
use svgp_core::training::{train, Optimizer, TrainConfig, TrainTrace};
use svgp_core::{Dataset64, Kernel64, Model64};

use crate::{EvalArgs, SweepArgs, TrainArgs};

pub type CmdResult = Result<(), String>;

fn make_kernel(name: &str, lengthscale: f64, signal_variance: f64, white_variance: f64) -> Result<Kernel64, String> {
    let build = |r: svgp_core::kernels::Result<Kernel64>| r.map_err(|e| e.to_string());
    match name {
        "rbf" => build(KernelSpec::rbf(lengthscale, signal_variance)),
        "matern32" => build(KernelSpec::matern32(lengthscale, signal_variance)),
        "matern32+white" => {
            let m = build(KernelSpec::matern32(lengthscale, signal_variance))?;
            let w = build(KernelSpec::white(white_variance))?;
            build(KernelSpec::sum(vec![m, w]))
        }
        other => Err(format!("unknown kernel {other:?}")),
    }
}

fn make_optimizer(name: &str, lr: Option<f64>) -> Result<Optimizer<f64>, String> {
    match name {
        "adam" => Ok(Optimizer::Adam {
            lr: lr.unwrap_or(0.01),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }),
        "sgd" => Ok(Optimizer::Sgd {
            lr: lr.unwrap_or(0.001),
        }),
        other => Err(format!("unknown optimizer {other:?}")),
    }
}

fn load_standardized(data: &Path, label_column: &str) -> Result<Dataset64, String> {
    let mut ds: Dataset64 = load_csv(data, label_column).map_err(|e| e.to_string())?;
    let constant = ds.standardize(None).map_err(|e| e.to_string())?;
    for j in constant {
        eprintln!(
            "warning: column {:?} is constant; standardized to zeros",
            ds.feature_names.get(j).map(String::as_str).unwrap_or("?")
        );
    }
    Ok(ds)
}

/// One full training run on an already-prepared train split.
fn fit_model(
    train_ds: &Dataset64,
    kernel: Kernel64,
    m: usize,
    opt: &crate::OptArgs,
) -> Result<(Model64, TrainTrace<f64>), String> {
    let inverse = train_ds.inverse_dataset(opt.seed).map_err(|e| e.to_string())?;
    let z = inverse.kmeans_init(m, opt.seed, 100).map_err(|e| e.to_string())?;
    let model = SvgpModel::init(
        kernel,
        z,
        Likelihood::Bernoulli(BernoulliProbit::default()),
        opt.freeze_z,
    )
    .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        optimizer: make_optimizer(&opt.optimizer, opt.lr)?,
        batch_size: opt.batch_size.min(train_ds.len()),
        epochs: opt.epochs,
        seed: opt.seed,
        freeze_inducing: opt.freeze_z,
        train_hyperparams: opt.train_hyperparams,
        elbo_eval_every: 0,
    };
    train(&model, &train_ds.x, &train_ds.y, &cfg).map_err(|e| e.to_string())
}

fn predictive_probs(model: &Model64, ds: &Dataset64) -> Result<DVector<f64>, String> {
    let preds = model.predict(&ds.x).map_err(|e| e.to_string())?;
    Ok(DVector::from_iterator(preds.len(), preds.iter().map(|p| p.value)))
}

fn score(
    model: &Model64,
    test: &Dataset64,
    threshold: f64,
    kernel_name: &str,
    m: usize,
    seed: u64,
) -> Result<EvalReport<f64>, String> {
    let probs = predictive_probs(model, test)?;
    let mut report = evaluate(&probs, &test.y, threshold).map_err(|e| e.to_string())?;
    report.metadata.insert("kernel".into(), kernel_name.into());
    report.metadata.insert("m".into(), m.to_string());
    report.metadata.insert("seed".into(), seed.to_string());
    report
        .metadata
        .insert("test_positives".into(), test.positives().to_string());
    report
        .metadata
        .insert("test_size".into(), test.len().to_string());
    Ok(report)
}

/// Writes trace.tsv (deterministic columns) and timings.tsv (wall clock,
/// kept separate so repeated runs produce byte-identical data files).
fn write_trace(trace: &TrainTrace<f64>, out: &Path) -> Result<(), String> {
    let mut data = String::from("step\telbo\tkl\tclamps\n");
    let mut timing = String::from("step\tseconds\n");
    for r in &trace.records {
        let _ = writeln!(data, "{}\t{:.17e}\t{:.17e}\t{}", r.step, r.elbo, r.kl, r.clamps);
        let _ = writeln!(timing, "{}\t{:.6}", r.step, r.seconds);
    }
    std::fs::write(out.join("trace.tsv"), data).map_err(|e| e.to_string())?;
    std::fs::write(out.join("timings.tsv"), timing).map_err(|e| e.to_string())?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult {
    let ds = load_standardized(&args.data.data, &args.data.label_column)?;
    let spec = SplitSpec {
        train_fraction: args.data.train_fraction,
        test_fraud_ratio: Some(args.data.test_fraud_ratio),
        seed: args.opt.seed,
    };
    let (train_ds, test_ds) = ds.split(spec).map_err(|e| e.to_string())?;
    eprintln!(
        "train: {} rows ({} positive), test: {} rows ({} positive)",
        train_ds.len(),
        train_ds.positives(),
        test_ds.len(),
        test_ds.positives()
    );
    let kernel = make_kernel(
        &args.model.kernel,
        args.model.lengthscale,
        args.model.signal_variance,
        args.model.white_variance,
    )?;
    let (model, trace) = fit_model(&train_ds, kernel, args.m, &args.opt)?;

    std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
    let meta = TrainMetadata {
        seed: args.opt.seed,
        epochs: args.opt.epochs,
        batch_size: args.opt.batch_size,
        optimizer: args.opt.optimizer.clone(),
        learning_rate: args
            .opt
            .lr
            .unwrap_or(if args.opt.optimizer == "adam" { 0.01 } else { 0.001 }),
        freeze_inducing: args.opt.freeze_z,
        train_hyperparams: args.opt.train_hyperparams,
        label_column: args.data.label_column.clone(),
        split: Some(SplitConfig {
            train_fraction: args.data.train_fraction,
            test_fraud_ratio: Some(args.data.test_fraud_ratio),
            seed: args.opt.seed,
        }),
    };
    let file = ModelFile::from_model(
        &model,
        ds.feature_names.clone(),
        ds.standardization.clone(),
        meta,
    );
    file.save(args.out.join("model.gpc")).map_err(|e| e.to_string())?;
    write_trace(&trace, &args.out)?;
    if let Some(last) = trace.records.last() {
        eprintln!("final full-batch elbo: {:.6}", last.elbo);
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let file = ModelFile::load(&args.model).map_err(|e| e.to_string())?;
    let model = file.to_model().map_err(|e| e.to_string())?;
    let stored = file
        .train
        .split
        .clone()
        .unwrap_or(SplitConfig {
            train_fraction: 0.8,
            test_fraud_ratio: Some(0.15),
            seed: file.train.seed,
        });

    let label_column = args
        .label_column
        .clone()
        .unwrap_or_else(|| file.train.label_column.clone());
    let requested = SplitConfig {
        train_fraction: args.train_fraction.unwrap_or(stored.train_fraction),
        test_fraud_ratio: match args.test_fraud_ratio {
            Some(r) => Some(r),
            None => stored.test_fraud_ratio,
        },
        seed: args.seed.unwrap_or(stored.seed),
    };
    if requested != stored {
        eprintln!(
            "warning: split mismatch: model was trained with {stored:?}, evaluating with {requested:?}"
        );
    }

    let mut ds: Dataset64 = load_csv(&args.data, &label_column).map_err(|e| e.to_string())?;
    match &file.standardization {
        Some(stats) => ds.apply_standardization(stats),
        None => {
            let _ = ds.standardize(None).map_err(|e| e.to_string())?;
        }
    }
    let (_, test_ds) = ds.split(requested.to_spec()).map_err(|e| e.to_string())?;

    let kernel_name = kernel_label(&file.kernel);
    let report = score(
        &model,
        &test_ds,
        args.threshold,
        &kernel_name,
        model.num_inducing(),
        requested.seed,
    )?;
    std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
    let text = report.to_text();
    std::fs::write(args.out.join("report.tsv"), &text).map_err(|e| e.to_string())?;
    print!("{text}");
    Ok(())
}

fn kernel_label(cfg: &svgp_core::model_io::KernelConfig) -> String {
    use svgp_core::model_io::KernelConfig as K;
    match cfg {
        K::Rbf { .. } => "rbf".to_string(),
        K::Matern32 { .. } => "matern32".to_string(),
        K::White { .. } => "white".to_string(),
        K::Sum { terms } => {
            let parts: Vec<String> = terms.iter().map(kernel_label).collect();
            parts.join("+")
        }
    }
}

/// Shortened error tag for a sweep cell, e.g. `ERROR(MTooLarge)`.
fn error_tag(msg: &str) -> String {
    let kind: String = msg
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .collect();
    if kind.is_empty() {
        "ERROR(unknown)".to_string()
    } else {
        format!("ERROR({kind})")
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> CmdResult {
    let kernels: Vec<String> = args
        .kernel
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let ms: Vec<usize> = args
        .m
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad M value {s:?}")))
        .collect::<Result<_, _>>()?;
    if kernels.is_empty() || ms.is_empty() {
        return Err("kernel and M lists must be non-empty".to_string());
    }

    let ds = load_standardized(&args.data.data, &args.data.label_column)?;
    let spec = SplitSpec {
        train_fraction: args.data.train_fraction,
        test_fraud_ratio: Some(args.data.test_fraud_ratio),
        seed: args.opt.seed,
    };
    let (train_ds, test_ds) = ds.split(spec).map_err(|e| e.to_string())?;

    let cells: Vec<(String, usize)> = kernels
        .iter()
        .flat_map(|k| ms.iter().map(move |&m| (k.clone(), m)))
        .collect();

    let run_cell = |kernel_name: &str, m: usize| -> String {
        let result = make_kernel(
            kernel_name,
            args.lengthscale,
            args.signal_variance,
            args.white_variance,
        )
        .and_then(|kernel| fit_model(&train_ds, kernel, m, &args.opt))
        .and_then(|(model, _)| {
            score(&model, &test_ds, args.threshold, kernel_name, m, args.opt.seed)
        });
        match result {
            Ok(report) => report.to_sweep_row(kernel_name, m),
            Err(e) => {
                let tag = error_tag(&e);
                eprintln!("sweep cell ({kernel_name}, {m}) failed: {e}");
                format!("{kernel_name}\t{m}\t{tag}\t{tag}")
            }
        }
    };

    let jobs = args.jobs.max(1).min(cells.len());
    let mut rows: Vec<Option<String>> = vec![None; cells.len()];
    if jobs == 1 {
        for (i, (k, m)) in cells.iter().enumerate() {
            rows[i] = Some(run_cell(k, *m));
        }
    } else {
        let next = Mutex::new(0usize);
        let results = Mutex::new(vec![None; cells.len()]);
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = {
                        let mut guard = next.lock().unwrap();
                        let i = *guard;
                        *guard += 1;
                        i
                    };
                    if i >= cells.len() {
                        break;
                    }
                    let (k, m) = &cells[i];
                    let row = run_cell(k, *m);
                    results.lock().unwrap()[i] = Some(row);
                });
            }
        });
        rows = results.into_inner().unwrap();
    }

    let mut table = String::from("kernel\tM\ttest_likelihood\ttest_accuracy\n");
    for row in rows.into_iter().flatten() {
        table.push_str(&row);
        table.push('\n');
    }
    std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
    std::fs::write(args.out.join("sweep.tsv"), &table).map_err(|e| e.to_string())?;
    print!("{table}");
    Ok(())
}
