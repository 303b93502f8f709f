//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::Args;
use serde_json::{json, Value};

use lgnet::blocks::{write_checkpoint, ModelSpec, Variant};
use lgnet::data::{read_dataset, synth_generate, write_dataset, SynthConfig};
use lgnet::gradcheck::{full_suite, op_suite};
use lgnet::metrics::{auc_trapezoid, roc_points};
use lgnet::report::{
    ensure_dir, read_scores, write_json, write_loss_trace, write_metrics, write_roc, write_scores,
    ScoreRecord,
};
use lgnet::training::{cross_validate, stratified_kfold, Progress, TrainConfig};
use lgnet::OpKind;

use crate::config::FileValues;
use crate::error::{CliError, CliResult, BAD_FLAGS, VERIFICATION};

const RUN_CONFIG: &str = "run_config.json";
const THREADS_ENV: &str = "LGNET_THREADS";

fn with_path(path: &Path, e: lgnet::Error) -> CliError {
    let mut err = CliError::from(e);
    let shown = path.display().to_string();
    if !err.message.contains(&shown) {
        err.message = format!("{shown}: {}", err.message);
    }
    err
}

fn write_run_config(
    dir: &Path,
    command: &str,
    seed: Option<u64>,
    variant: Option<Variant>,
    options: Value,
) -> CliResult {
    ensure_dir(dir)?;
    let config = json!({
        "command": command,
        "seed": seed,
        "out_dir": dir,
        "variant": variant.map(Variant::name),
        "options": options,
    });
    write_json(dir.join(RUN_CONFIG), &config)?;
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Fraction of positive (malignant) samples, in (0, 1).
    #[arg(long)]
    pos_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standard deviation of the additive pixel noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Output `.lgnd` file; `run_config.json` goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` file supplying any of the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn synth(args: SynthArgs) -> CliResult {
    let file = FileValues::load(
        args.config.as_deref(),
        &["n", "pos-frac", "seed", "noise", "out"],
    )?;
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        n_samples: file.pick(args.n, "n", defaults.n_samples)?,
        positive_fraction: file.pick(args.pos_frac, "pos-frac", defaults.positive_fraction)?,
        seed: file.pick(args.seed, "seed", defaults.seed)?,
        noise_sigma: file.pick(args.noise, "noise", defaults.noise_sigma)?,
        ..defaults
    };
    let out: PathBuf = file.require(args.out, "out")?;
    if cfg.n_samples == 0 {
        return Err(CliError::flag("--n must be at least 1"));
    }
    if !(cfg.positive_fraction > 0.0 && cfg.positive_fraction < 1.0) {
        return Err(CliError::flag(format!(
            "--pos-frac must lie strictly between 0 and 1, got {}",
            cfg.positive_fraction
        )));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(CliError::flag(format!(
            "--noise must be >= 0, got {}",
            cfg.noise_sigma
        )));
    }

    let ds = synth_generate(&cfg)?;
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    write_dataset(&ds, &out).map_err(|e| with_path(&out, e))?;
    write_run_config(
        dir,
        "synth",
        Some(cfg.seed),
        None,
        json!({ "out": out, "synth": cfg }),
    )?;
    let pos = ds.positives();
    println!(
        "wrote {} samples ({} positive, {} negative) to {}",
        ds.len(),
        pos,
        ds.len() - pos,
        out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct CrossvalArgs {
    /// Input `.lgnd` dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// basic-resnet, local-global, all-atn or all-atn-big.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Start from the long schedule (50 epochs, batches of 256)
    /// instead of the desk-scale one (20 epochs, batches of 32).
    #[arg(long)]
    full_schedule: bool,
    /// `key = value` file supplying any of the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Fold/epoch progress lines on stderr.
struct StderrProgress {
    folds: usize,
    epochs: usize,
    start: Instant,
    lock: Mutex<()>,
}

impl Progress for StderrProgress {
    fn epoch(&self, fold: usize, epoch: usize, loss: f64) {
        let _guard = self.lock.lock();
        eprintln!(
            "[{:7.1}s] fold {}/{} epoch {}/{} loss {loss:.5}",
            self.start.elapsed().as_secs_f64(),
            fold + 1,
            self.folds,
            epoch + 1,
            self.epochs
        );
    }

    fn fold_done(&self, fold: usize) {
        let _guard = self.lock.lock();
        eprintln!(
            "[{:7.1}s] fold {}/{} done",
            self.start.elapsed().as_secs_f64(),
            fold + 1,
            self.folds
        );
    }
}

fn thread_count() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::flag(format!(
                "{THREADS_ENV} must be a positive integer, got '{raw}'"
            ))),
        },
    }
}

pub fn crossval(args: CrossvalArgs) -> CliResult {
    let file = FileValues::load(
        args.config.as_deref(),
        &[
            "data",
            "variant",
            "seed",
            "epochs",
            "batch-size",
            "lr",
            "folds",
            "out-dir",
            "full-schedule",
        ],
    )?;
    let full = args.full_schedule || file.get::<bool>("full-schedule")?.unwrap_or(false);
    let base = if full {
        TrainConfig::full()
    } else {
        TrainConfig::desk()
    };
    let train_cfg = TrainConfig {
        epochs: file.pick(args.epochs, "epochs", base.epochs)?,
        batch_size: file.pick(args.batch_size, "batch-size", base.batch_size)?,
        learning_rate: file.pick(args.lr, "lr", base.learning_rate)?,
        seed: file.pick(args.seed, "seed", 1)?,
        ..base
    };
    let data: PathBuf = file.require(args.data, "data")?;
    let out_dir: PathBuf = file.require(args.out_dir, "out-dir")?;
    let variant = file.pick(args.variant, "variant", Variant::LocalGlobal)?;
    let k = file.pick(args.folds, "folds", 10)?;
    if train_cfg.epochs == 0 {
        return Err(CliError::flag("--epochs must be at least 1"));
    }
    if train_cfg.batch_size == 0 {
        return Err(CliError::flag("--batch-size must be at least 1"));
    }
    if !(train_cfg.learning_rate >= 0.0 && train_cfg.learning_rate.is_finite()) {
        return Err(CliError::flag(format!(
            "--lr must be >= 0, got {}",
            train_cfg.learning_rate
        )));
    }
    if k < 2 {
        return Err(CliError::flag(format!(
            "--folds must be at least 2, got {k}"
        )));
    }
    let threads = thread_count()?;

    let ds = read_dataset(&data).map_err(|e| with_path(&data, e))?;
    let splits =
        stratified_kfold(ds.labels(), k, train_cfg.seed).map_err(|e| with_path(&data, e))?;
    let spec = ModelSpec::new(variant);
    let progress = StderrProgress {
        folds: k,
        epochs: train_cfg.epochs,
        start: Instant::now(),
        lock: Mutex::new(()),
    };
    eprintln!(
        "cross-validating {variant} on {} samples: {k} folds, {} epochs, batch {}, {threads} thread(s)",
        ds.len(),
        train_cfg.epochs,
        train_cfg.batch_size
    );
    let cv = cross_validate(&spec, &ds, &train_cfg, k, threads, &progress)?;

    ensure_dir(&out_dir)?;
    write_run_config(
        &out_dir,
        "crossval",
        Some(train_cfg.seed),
        Some(variant),
        json!({
            "data": data,
            "folds": k,
            "full_schedule": full,
            "threads": threads,
            "train": train_cfg,
            "model": spec,
        }),
    )?;
    for (fold, split) in cv.folds.iter().zip(&splits) {
        let dir = out_dir.join(format!("fold_{:02}", fold.fold));
        ensure_dir(&dir)?;
        write_checkpoint(&fold.model, dir.join("model.lgnm"))?;
        write_loss_trace(dir.join("loss.csv"), &fold.loss.epochs)?;
        let ids = |idx: &[usize]| idx.iter().map(|&i| ds.id(i)).collect::<Vec<_>>();
        write_json(
            dir.join("fold.json"),
            &json!({
                "fold_index": split.fold_index,
                "train_ids": ids(&split.train),
                "test_ids": ids(&split.test),
                "counts": fold.counts,
                "auc": fold.auc.map_or(json!("undefined"), |a| json!(a)),
            }),
        )?;
    }
    let rows: Vec<ScoreRecord> = cv
        .pooled
        .iter()
        .map(|p| ScoreRecord {
            sample_id: ds.id(p.index).to_string(),
            label: p.label,
            score: p.score,
            fold: p.fold,
        })
        .collect();
    write_scores(out_dir.join("scores.csv"), &rows)?;
    let scores: Vec<f64> = cv.pooled.iter().map(|p| p.score).collect();
    write_roc(out_dir.join("roc.csv"), &roc_points(&scores, ds.labels())?)?;
    write_metrics(out_dir.join("metrics.json"), &cv.report)?;

    println!(
        "{}",
        serde_json::to_string_pretty(&cv.report.to_json()).expect("metrics serialize")
    );
    eprintln!(
        "finished in {:.1}s; outputs in {}",
        progress.start.elapsed().as_secs_f64(),
        out_dir.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `gradcheck.json` and `run_config.json` [default: .].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Check the individual ops only, skipping the whole-network sweeps.
    #[arg(long)]
    ops_only: bool,
    /// `key = value` file supplying any of the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corrupt the backward rule of one op (test fixture).
    #[arg(long, hide = true)]
    inject_fault: Option<OpKind>,
}

pub fn gradcheck(args: GradcheckArgs) -> CliResult {
    let file = FileValues::load(args.config.as_deref(), &["seed", "out-dir", "ops-only"])?;
    let seed = file.pick(args.seed, "seed", 0)?;
    let out_dir = file.pick(args.out_dir, "out-dir", PathBuf::from("."))?;
    let ops_only = args.ops_only || file.get::<bool>("ops-only")?.unwrap_or(false);
    let start = Instant::now();
    let outcomes = if ops_only {
        op_suite(seed, args.inject_fault)?
    } else {
        full_suite(seed, args.inject_fault)?
    };
    let elapsed = start.elapsed().as_secs_f64();

    println!(
        "{:<24} {:>8} {:>8} {:>14} {:>10}  result",
        "check", "checked", "skipped", "worst rel err", "tolerance"
    );
    for o in &outcomes {
        println!(
            "{:<24} {:>8} {:>8} {:>14.3e} {:>10.0e}  {}",
            o.name,
            o.checked,
            o.skipped,
            o.worst_rel_error,
            o.tolerance,
            if o.passed() { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed())
        .map(|o| o.name.as_str())
        .collect();

    write_run_config(
        &out_dir,
        "gradcheck",
        Some(seed),
        None,
        json!({ "ops_only": ops_only, "inject_fault": args.inject_fault.map(OpKind::name) }),
    )?;
    write_json(
        out_dir.join("gradcheck.json"),
        &json!({ "seconds": elapsed, "passed": failed.is_empty(), "checks": outcomes }),
    )?;
    println!("{} checks in {elapsed:.1}s", outcomes.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            VERIFICATION,
            format!("gradient check failed for: {}", failed.join(", ")),
        ))
    }
}

#[derive(Args)]
pub struct RocArgs {
    /// Score files (`sample_id,label,score,fold`); in a config file, a
    /// comma-separated list.
    #[arg(long, num_args = 1..)]
    scores: Vec<PathBuf>,
    /// A single input writes `roc.csv`; several write `<stem>.roc.csv` each
    /// [default: .].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// `key = value` file supplying any of the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn roc(args: RocArgs) -> CliResult {
    let file = FileValues::load(args.config.as_deref(), &["scores", "out-dir"])?;
    let out_dir = file.pick(args.out_dir, "out-dir", PathBuf::from("."))?;
    let scores: Vec<PathBuf> = if args.scores.is_empty() {
        file.get::<String>("scores")?
            .map(|list| {
                list.split(',')
                    .map(|p| PathBuf::from(p.trim()))
                    .filter(|p| !p.as_os_str().is_empty())
                    .collect()
            })
            .unwrap_or_default()
    } else {
        args.scores
    };
    if scores.is_empty() {
        return Err(CliError::flag("missing required --scores"));
    }
    let names: Vec<String> = if scores.len() == 1 {
        vec!["roc.csv".into()]
    } else {
        scores
            .iter()
            .map(|p| {
                let stem = p
                    .file_stem()
                    .map_or_else(|| "scores".into(), |s| s.to_string_lossy());
                format!("{stem}.roc.csv")
            })
            .collect()
    };
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(CliError::new(
                BAD_FLAGS,
                format!("two score files would both write {name}; rename one of them"),
            ));
        }
    }

    let mut curves = Vec::with_capacity(scores.len());
    for path in &scores {
        let rows = read_scores(path).map_err(|e| with_path(path, e))?;
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
        curves.push(roc_points(&scores, &labels).map_err(|e| with_path(path, e))?);
    }
    ensure_dir(&out_dir)?;
    write_run_config(
        &out_dir,
        "roc",
        None,
        None,
        json!({ "scores": scores, "outputs": names }),
    )?;
    for ((path, curve), name) in scores.iter().zip(&curves).zip(&names) {
        write_roc(out_dir.join(name), curve)?;
        println!("{}\tauc={}", path.display(), auc_trapezoid(curve));
    }
    Ok(())
}
