//! Subcommand implementations. All output files are written atomically
//! (temp + rename) and no command mutates its inputs.

use crate::config::{RunConfig, VerifySection};
use polynet::blocks::{load_checkpoint, save_checkpoint, Block, ProductNet};
use polynet::oracle::{fit_dense_with, monomial_count, probe_degree, FitOptions, ProbedDegree};
use polynet::train::{evaluate, train_with, EvalMetrics};
use polynet::verify::{
    run_degree_battery, run_forward_agreement, run_grad_battery, run_oracle_grid, verify_checkpoint,
};
use polynet::{Error, Result};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct SplitSummary {
    samples: usize,
    loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
}

#[derive(Serialize)]
struct TrainSummary {
    final_train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_train_accuracy: Option<f64>,
    epochs: usize,
    param_count: usize,
    total_degree: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<SplitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    val: Option<SplitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<SplitSummary>,
}

/// Train per the config; writes resolved config, metrics CSVs, checkpoints,
/// and a summary.
pub fn cmd_train(mut config: RunConfig) -> Result<()> {
    let dataset_cfg = config
        .dataset
        .clone()
        .ok_or_else(|| Error::InvalidArgument("config key `dataset` is required for train".to_string()))?;
    let train_cfg = config
        .train
        .clone()
        .ok_or_else(|| Error::InvalidArgument("config key `train` is required for train".to_string()))?;
    let seed = config.seed;

    let (train_ds, val_ds, test_ds) = dataset_cfg.load(seed)?;
    if train_ds.is_empty() {
        return Err(Error::InvalidArgument("dataset.split leaves the training set empty".to_string()));
    }
    let model_cfg = config
        .model
        .as_mut()
        .ok_or_else(|| Error::InvalidArgument("config key `model` is required for train".to_string()))?;
    let specs = model_cfg.resolve(train_ds.feature_dim(), train_ds.label_dim())?;
    let init = model_cfg.init;

    let blocks: Result<Vec<Block>> = specs
        .into_iter()
        .enumerate()
        .map(|(i, spec)| Block::init(spec, seed.wrapping_add(i as u64), init))
        .collect();
    let mut net = ProductNet::new(blocks?)?;

    let tcfg = train_cfg.to_train_config(seed);
    tcfg.validate()?;

    ensure_dir(&config.output_dir)?;
    write_atomic(
        &config.output_dir.join("config.resolved.json"),
        config.to_pretty_json()?.as_bytes(),
    )?;

    let out_dir = config.output_dir.clone();
    let every = train_cfg.checkpoint_every;
    let log = train_with(&mut net, &train_ds, &tcfg, |epoch, net| {
        if let Some(k) = every {
            if k > 0 && (epoch + 1) % k == 0 {
                save_checkpoint(net, out_dir.join(format!("checkpoint_epoch{:04}.pnet", epoch + 1)))?;
            }
        }
        Ok(())
    })?;

    save_checkpoint(&net, config.output_dir.join("checkpoint.pnet"))?;
    write_atomic(&config.output_dir.join("metrics.csv"), log.to_csv().as_bytes())?;
    write_atomic(&config.output_dir.join("timings.csv"), log.to_timings_csv().as_bytes())?;

    let eval_split = |ds: &polynet::data::Dataset| -> Result<Option<SplitSummary>> {
        if ds.is_empty() {
            return Ok(None);
        }
        let EvalMetrics { loss, accuracy } = evaluate(&net, ds, tcfg.loss)?;
        Ok(Some(SplitSummary {
            samples: ds.len(),
            loss,
            accuracy,
        }))
    };
    let summary = TrainSummary {
        final_train_loss: log.final_loss().unwrap_or(f64::NAN),
        final_train_accuracy: log.final_accuracy(),
        epochs: log.epochs.len(),
        param_count: net.param_count(),
        total_degree: net.total_degree(),
        train: eval_split(&train_ds)?,
        val: eval_split(&val_ds)?,
        test: eval_split(&test_ds)?,
    };
    write_atomic(
        &config.output_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;

    println!(
        "trained {} epochs: final loss {}{}",
        summary.epochs,
        summary.final_train_loss,
        summary
            .final_train_accuracy
            .map(|a| format!(", train accuracy {a}"))
            .unwrap_or_default()
    );
    if let Some(test) = &summary.test {
        println!(
            "test: loss {}{}",
            test.loss,
            test.accuracy.map(|a| format!(", accuracy {a}")).unwrap_or_default()
        );
    }
    println!("outputs in {}", config.output_dir.display());
    Ok(())
}

/// Run the configured verification batteries; returns overall pass/fail.
pub fn cmd_verify(config: RunConfig, section: VerifySection) -> Result<bool> {
    let mut report = String::new();
    let mut all_passed = true;

    if let Some(grid) = &section.grid {
        let outcome = run_oracle_grid(&grid.to_lib())?;
        let agree = run_forward_agreement(&grid.seeds)?;
        writeln!(
            report,
            "oracle equivalence grid: {} cases, max fit residual {:.3e}, max pointwise {:.3e} (tolerance {:.1e}) ... {}",
            outcome.cases.len(),
            outcome.max_fit_residual,
            outcome.max_pointwise,
            grid.tolerance,
            if outcome.passed { "pass" } else { "FAIL" }
        )
        .unwrap();
        for case in outcome.cases.iter().filter(|c| !c.passed) {
            writeln!(
                report,
                "  FAIL {} d={} k={} o={} w={} N={} seed={}: fit {:.3e}, pointwise {:.3e}",
                case.spec.variant.as_str(),
                case.spec.input_dim,
                case.spec.rank,
                case.spec.output_dim,
                case.spec.bias_dim,
                case.spec.order,
                case.seed,
                case.fit_residual,
                case.max_pointwise
            )
            .unwrap();
        }
        writeln!(
            report,
            "tape/direct forward agreement: {}",
            if agree { "pass" } else { "FAIL" }
        )
        .unwrap();
        all_passed &= outcome.passed && agree;
    }

    if let Some(instances) = section.grad_instances {
        let outcome = run_grad_battery(instances, config.seed)?;
        writeln!(
            report,
            "gradient battery: {} instances, max relative error {:.3e} ... {}",
            outcome.cases.len(),
            outcome.max_rel_err,
            if outcome.passed { "pass" } else { "FAIL" }
        )
        .unwrap();
        for case in outcome.cases.iter().filter(|c| !c.passed) {
            writeln!(
                report,
                "  FAIL {} {:?} seed={}: rel err {:.3e}",
                case.spec.variant.as_str(),
                case.loss,
                case.seed,
                case.max_rel_err
            )
            .unwrap();
        }
        all_passed &= outcome.passed;
    }

    if let Some(degree) = &section.degree {
        let outcome = run_degree_battery(&degree.degrees, degree.max_blocks, degree.max_total, &degree.seeds)?;
        writeln!(
            report,
            "degree product law: {} cases ... {}",
            outcome.cases.len(),
            if outcome.passed { "pass" } else { "FAIL" }
        )
        .unwrap();
        for case in outcome.cases.iter().filter(|c| !c.passed) {
            writeln!(
                report,
                "  FAIL degrees {:?} seed={}: expected {}, probed {}",
                case.block_degrees, case.seed, case.expected, case.probed
            )
            .unwrap();
        }
        all_passed &= outcome.passed;
    }

    if let Some(path) = &section.checkpoint {
        match load_checkpoint(path) {
            Ok(net) => {
                let outcome = verify_checkpoint(&net)?;
                writeln!(
                    report,
                    "checkpoint {}: {} blocks, {} parameters, declared degree {}{}{} ... {}",
                    path.display(),
                    outcome.blocks,
                    outcome.param_count,
                    outcome.declared_degree,
                    outcome
                        .fit_residual
                        .map(|r| format!(", oracle residual {r:.3e}"))
                        .unwrap_or_default(),
                    outcome
                        .probed_degree
                        .map(|d| format!(", probed degree {d}"))
                        .unwrap_or_default(),
                    if outcome.passed { "pass" } else { "FAIL" }
                )
                .unwrap();
                for note in &outcome.notes {
                    writeln!(report, "  note: {note}").unwrap();
                }
                all_passed &= outcome.passed;
            }
            Err(Error::Integrity(msg)) => {
                writeln!(report, "checkpoint {}: INTEGRITY FAILURE: {msg}", path.display()).unwrap();
                all_passed = false;
            }
            Err(Error::Checkpoint(msg)) => {
                writeln!(report, "checkpoint {}: MALFORMED: {msg}", path.display()).unwrap();
                all_passed = false;
            }
            Err(other) => return Err(other),
        }
    }

    if report.is_empty() {
        return Err(Error::InvalidArgument(
            "verify config selects nothing: provide `grid`, `grad_instances`, `degree`, or `checkpoint`".to_string(),
        ));
    }

    writeln!(report, "overall: {}", if all_passed { "pass" } else { "FAIL" }).unwrap();
    print!("{report}");
    ensure_dir(&config.output_dir)?;
    write_atomic(&config.output_dir.join("verify_report.txt"), report.as_bytes())?;
    write_atomic(
        &config.output_dir.join("config.resolved.json"),
        config.to_pretty_json()?.as_bytes(),
    )?;
    Ok(all_passed)
}

pub struct ExpandOptions {
    pub max_order: Option<usize>,
    pub budget: Option<usize>,
    pub min_coeff: f64,
    pub output_dir: Option<PathBuf>,
}

/// Recover and print the dense monomial expansion of a stored net.
pub fn cmd_expand(checkpoint: &Path, opts: ExpandOptions) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    let d = net.input_dim();
    let o = net.output_dim();
    let order = opts.max_order.unwrap_or_else(|| net.total_degree());
    let budget = opts.budget.unwrap_or(polynet::oracle::DEFAULT_BASIS_BUDGET);
    let basis = monomial_count(d, order);
    if basis > budget {
        return Err(Error::BudgetExceeded {
            d,
            n: order,
            basis,
            budget,
        });
    }

    let (poly, fit) = fit_dense_with(
        |z| net.forward_vec(z),
        d,
        o,
        order,
        FitOptions {
            budget,
            ..FitOptions::default()
        },
    )?;

    let mut text = format!(
        "dense expansion of {} (d={d}, o={o}, order<={order})\nbasis size {}, fit residual {:.3e}, condition {:.3e}\n",
        checkpoint.display(),
        fit.basis_size,
        fit.residual,
        fit.condition,
    );
    if fit.residual >= 1e-6 {
        text.push_str("warning: residual is large; the map is not a polynomial of this order\n");
    }
    for j in 0..o {
        writeln!(text, "output {j}:").unwrap();
        for (pos, m) in poly.monomials().iter().enumerate() {
            let c = poly.coeffs().at2(j, pos);
            if c.abs() >= opts.min_coeff {
                writeln!(text, "  {:<12} {}", m.to_string(), c).unwrap();
            }
        }
    }
    writeln!(text, "(coefficients with |c| < {} omitted)", opts.min_coeff).unwrap();

    // Machine-readable key-value variant: every coefficient, unthresholded.
    let mut kv = String::new();
    writeln!(kv, "input_dim = {d}").unwrap();
    writeln!(kv, "output_dim = {o}").unwrap();
    writeln!(kv, "order = {order}").unwrap();
    writeln!(kv, "basis_size = {}", fit.basis_size).unwrap();
    writeln!(kv, "residual = {}", fit.residual).unwrap();
    writeln!(kv, "condition = {}", fit.condition).unwrap();
    for j in 0..o {
        for (pos, m) in poly.monomials().iter().enumerate() {
            writeln!(kv, "coeff.out{j}.{m} = {}", poly.coeffs().at2(j, pos)).unwrap();
        }
    }

    print!("{text}");
    let dir = opts
        .output_dir
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    ensure_dir(&dir)?;
    write_atomic(&dir.join("expand.txt"), text.as_bytes())?;
    write_atomic(&dir.join("expand.kv"), kv.as_bytes())?;
    Ok(())
}

/// Probe realized degree along a seeded ray and compare with the declared
/// product of block degrees.
pub fn cmd_degree(checkpoint: &Path, max_degree: Option<usize>, seed: u64) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    let declared = net.total_degree();
    let max_degree = max_degree.unwrap_or(declared + 2);
    let report = probe_degree(net.as_vec_fn(), net.input_dim(), seed, max_degree)?;
    for (j, deg) in report.per_output.iter().enumerate() {
        println!("output {j}: degree {deg}");
    }
    println!("overall: {}", report.overall);
    match report.overall {
        ProbedDegree::Degree(got) if got == declared => {
            println!("matches declared total degree {declared} (product of block degrees)");
        }
        ProbedDegree::Degree(got) => {
            println!("declared total degree is {declared}; probed {got}");
        }
        ProbedDegree::ExceedsMax => {
            println!(
                "exceeds max degree {max_degree}: not a polynomial (declared {declared}; stabilizer or activation present?)"
            );
        }
    }
    Ok(())
}
