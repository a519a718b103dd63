use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use tmae::config::Config;
use tmae::data::{generate_synthetic_set, read_tnsr, sample_clip, Dataset, Split};
use tmae::eval::MetricsReport;
use tmae::io::write_atomic;
use tmae::model::{count_params, Checkpoint, ModelParams};
use tmae::train::{self, check_compatible, curve_csv, EpochLog, RunOptions};
use tmae::{Error, Result};

use crate::manifest::RunManifest;
use crate::{Cli, Cmd, GlobalArgs};

pub const PRETRAIN_LAST: &str = "pretrain_last.ckpt";
pub const PRETRAIN_BEST: &str = "pretrain_best.ckpt";
pub const PRETRAIN_CURVE: &str = "pretrain_loss.csv";
pub const FINETUNE_CKPT: &str = "finetune.ckpt";
pub const FINETUNE_CURVE: &str = "finetune_loss.csv";
pub const METRICS: &str = "metrics.csv";

/// Config file (or `base`), then `--set` overrides, then `--seed`.
fn resolve(global: &GlobalArgs, base: Option<Config>) -> Result<Config> {
    let mut cfg = match &global.config {
        Some(p) => Config::load(p)?,
        None => base.unwrap_or_default(),
    };
    for o in &global.overrides {
        cfg.set_override(o)?;
    }
    if let Some(s) = global.seed {
        cfg.set_override(&format!("train.seed={s}"))?;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Runs `body` between manifest start and finish, recording failures.
fn with_manifest<T>(
    out: &Path,
    command: &str,
    global: &GlobalArgs,
    cfg: &Config,
    body: impl FnOnce(&mut RunManifest) -> Result<T>,
) -> Result<T> {
    create_dir(out)?;
    let mut m = RunManifest::start(out, command, global.config.as_deref(), cfg)?;
    match body(&mut m) {
        Ok(v) => {
            m.finish("ok")?;
            Ok(v)
        }
        Err(e) => {
            m.finish(&format!("failed: {e}"))?;
            Err(e)
        }
    }
}

fn print_epoch(phase: &str, row: &EpochLog) {
    eprintln!(
        "{phase} epoch {:>4}  rec {:.6e}  contrast {:.6e}  total {:.6e}  lr {:.3e}  stall {}",
        row.epoch, row.l_rec, row.l_contrast, row.l_total, row.lr, row.early_stop_counter
    );
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let opts = |stop_after| RunOptions {
        workers: g.workers.max(1),
        stop_after,
    };
    match cli.command {
        Cmd::Synth { n_clips } => {
            let cfg = resolve(g, None)?;
            cfg.validate()?;
            cmd_synth(g, &cfg, n_clips)
        }
        Cmd::Pretrain { resume, stop_after } => {
            let resume = resume.map(|p| Checkpoint::<f32>::load(&p)).transpose()?;
            let cfg = resolve(g, resume.as_ref().map(|c| c.config.clone()))?;
            cfg.validate()?;
            with_manifest(&g.out, "pretrain", g, &cfg, |m| {
                run_pretrain(&cfg, &g.out, resume, opts(stop_after), m).map(|_| ())
            })
        }
        Cmd::Finetune {
            pretrained,
            mode,
            oracle,
            stop_after,
        } => {
            let pre = Checkpoint::<f32>::load(&pretrained)?;
            let mut cfg = resolve(g, Some(pre.config.clone()))?;
            if let Some(mode) = mode {
                cfg.set_override(&format!("train.mode={mode}"))?;
            }
            if oracle {
                cfg.set_override("train.oracle=true")?;
            }
            cfg.validate()?;
            with_manifest(&g.out, "finetune", g, &cfg, |m| {
                run_finetune(&cfg, &pre, &g.out, opts(stop_after), m).map(|_| ())
            })
        }
        Cmd::Eval {
            checkpoint,
            split,
            threshold,
        } => {
            let ck = Checkpoint::<f32>::load(&checkpoint)?;
            let mut cfg = resolve(g, Some(ck.config.clone()))?;
            if let Some(s) = split {
                cfg.set_override(&format!("eval.split={s}"))?;
            }
            if let Some(t) = threshold {
                cfg.set_override(&format!("eval.threshold={t}"))?;
            }
            cfg.validate()?;
            with_manifest(&g.out, "eval", g, &cfg, |m| {
                let report = run_eval(&cfg, &ck, &g.out, m)?;
                print!("{}", report.to_pretty());
                Ok(())
            })
        }
        Cmd::Predict {
            checkpoint,
            clip,
            fps,
            start,
        } => {
            let ck = Checkpoint::<f32>::load(&checkpoint)?;
            let cfg = resolve(g, Some(ck.config.clone()))?;
            cfg.validate()?;
            check_compatible(&cfg, &ck)?;
            let video = read_tnsr(&clip)?;
            let d = &cfg.data;
            let c = sample_clip(&video, fps.unwrap_or(d.synth_fps), start, d.frames, d.window_s, d.height, d.width)?;
            let p = train::score(&ck.model, cfg.model.task, &c.frames)?;
            let label = if p >= cfg.eval.threshold { "reduced" } else { "normal" };
            println!("probability = {p:.6}");
            println!("label = {label}");
            Ok(())
        }
        Cmd::Sweep {
            lambda,
            tau_p,
            tau_m,
            ratio,
        } => {
            let cfg = resolve(g, None)?;
            cfg.validate()?;
            cmd_sweep(g, &cfg, lambda, tau_p, tau_m, ratio, opts(None))
        }
    }
}

fn cmd_synth(g: &GlobalArgs, cfg: &Config, n_clips: usize) -> Result<()> {
    with_manifest(&g.out, "synth", g, cfg, |m| {
        let records = generate_synthetic_set(&cfg.synthetic_set(n_clips), &g.out, cfg.train.seed)?;
        let n_pos = records.iter().filter(|r| r.ef_percent <= 50.0).count();
        let manifest = g.out.join("FileList.csv");
        m.output(&manifest);
        println!(
            "wrote {} clips ({} reduced EF, {} normal) and {}",
            records.len(),
            n_pos,
            records.len() - n_pos,
            manifest.display()
        );
        Ok(())
    })
}

/// Returns the checkpoint fine-tuning should start from: the best epoch.
pub fn run_pretrain(
    cfg: &Config,
    out: &Path,
    resume: Option<Checkpoint<f32>>,
    opts: RunOptions,
    m: &mut RunManifest,
) -> Result<Checkpoint<f32>> {
    let data = Dataset::load(&cfg.data.manifest, Some(Split::Train))?;
    let n_params = match &resume {
        Some(ck) => ck.model.count_params(),
        None => count_params(&ModelParams::<f32>::init(&cfg.model_config()?, 0)),
    };
    println!("parameters: {n_params}");
    println!("train clips: {}", data.len());

    let curve_path = out.join(PRETRAIN_CURVE);
    let mut rows: Vec<String> = Vec::new();
    if let Some(ck) = &resume {
        let done = ck.state.epoch;
        if let Ok(text) = fs::read_to_string(&curve_path) {
            rows = text
                .lines()
                .skip(1)
                .filter(|l| l.split(',').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e < done))
                .map(str::to_string)
                .collect();
        }
    }
    let mut write_err = None;
    let outcome = train::pretrain(cfg, &data, resume, opts, &mut |row| {
        print_epoch("pretrain", row);
        rows.push(row.csv_row());
        let text = format!("{}\n{}\n", EpochLog::CSV_HEADER, rows.join("\n"));
        if let Err(e) = write_atomic(&curve_path, text.as_bytes()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if outcome.clipped_steps > 0 {
        eprintln!("gradient norm clipped on {} steps", outcome.clipped_steps);
    }
    if outcome.skipped_steps > 0 {
        eprintln!("{} steps skipped on non-finite gradients", outcome.skipped_steps);
    }
    if rows.is_empty() {
        write_atomic(&curve_path, curve_csv(&[]).as_bytes())?;
    }
    m.output(&curve_path);
    let last_path = out.join(PRETRAIN_LAST);
    outcome.last.save(&last_path)?;
    m.output(&last_path);
    let best_path = out.join(PRETRAIN_BEST);
    let best = match outcome.best {
        Some(b) => {
            b.save(&best_path)?;
            b
        }
        None if best_path.exists() => Checkpoint::load(&best_path)?,
        None => {
            let mut b = outcome.last.clone();
            b.optimizer = None;
            b.save(&best_path)?;
            b
        }
    };
    m.output(&best_path);
    println!(
        "pretrained {} epochs; best monitored loss {:.6e} at epoch {}",
        outcome.last.state.epoch, best.state.best_loss, best.state.best_epoch
    );
    Ok(best)
}

pub fn run_finetune(
    cfg: &Config,
    pre: &Checkpoint<f32>,
    out: &Path,
    opts: RunOptions,
    m: &mut RunManifest,
) -> Result<Checkpoint<f32>> {
    let all = Dataset::load(&cfg.data.manifest, None)?;
    let train_set = all.split(Split::Train);
    let val = all.split(Split::Val);
    println!(
        "fine-tuning ({}, oracle={}) on {} clips, {} validation",
        cfg.train.mode,
        cfg.train.oracle,
        train_set.len(),
        val.len()
    );
    let outcome = train::finetune(cfg, pre, &train_set, (!val.is_empty()).then_some(&val), opts, &mut |row| {
        eprintln!(
            "finetune epoch {:>4}  train {:.6e}  monitored {:.6e}  lr {:.3e}  stall {}",
            row.epoch, row.l_rec, row.l_total, row.lr, row.early_stop_counter
        );
    })?;
    let curve_path = out.join(FINETUNE_CURVE);
    write_atomic(&curve_path, curve_csv(&outcome.curve).as_bytes())?;
    m.output(&curve_path);
    let ck_path = out.join(FINETUNE_CKPT);
    outcome.checkpoint.save(&ck_path)?;
    m.output(&ck_path);
    Ok(outcome.checkpoint)
}

pub fn run_eval(cfg: &Config, ck: &Checkpoint<f32>, out: &Path, m: &mut RunManifest) -> Result<MetricsReport> {
    check_compatible(cfg, ck)?;
    if ck.state.phase != "finetune" {
        eprintln!("warning: evaluating a {} checkpoint; its head is untrained", ck.state.phase);
    }
    let data = Dataset::load(&cfg.data.manifest, Some(cfg.eval.split))?;
    let mut report = train::evaluate(&ck.model, cfg, &data)?;
    let file_name = |p: &Path| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    report.meta.insert(0, ("manifest".into(), file_name(m.path())));
    let path = out.join(METRICS);
    report.save(&path)?;
    m.output(&path);
    m.output(&path.with_extension("txt"));
    Ok(report)
}

fn cmd_sweep(
    g: &GlobalArgs,
    base: &Config,
    lambda: Vec<f64>,
    tau_p: Vec<usize>,
    tau_m: Vec<f64>,
    ratio: Vec<f64>,
    opts: RunOptions,
) -> Result<()> {
    let or = |v: Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v };
    let lambdas = or(lambda, base.loss.lambda);
    let tau_ms = or(tau_m, base.loss.tau_m);
    let ratios = or(ratio, base.mask.ratio);
    let tau_ps = if tau_p.is_empty() { vec![base.loss.tau_p] } else { tau_p };
    let mut seen = BTreeSet::new();
    let mut points = Vec::new();
    for &l in &lambdas {
        for &tp in &tau_ps {
            for &tm in &tau_ms {
                for &r in &ratios {
                    let key = format!("lambda={l} tau_p={tp} tau_m={tm} ratio={r}");
                    if seen.insert(key.clone()) {
                        points.push((l, tp, tm, r));
                    } else {
                        eprintln!("warning: duplicate grid point {key} skipped");
                    }
                }
            }
        }
    }
    with_manifest(&g.out, "sweep", g, base, |m| {
        let mut table = String::from("lambda,tau_p,tau_m,ratio,auroc,accuracy,f1\n");
        for (k, &(l, tp, tm, r)) in points.iter().enumerate() {
            let mut cfg = base.clone();
            cfg.set_override(&format!("loss.lambda={l}"))?;
            cfg.set_override(&format!("loss.tau_p={tp}"))?;
            cfg.set_override(&format!("loss.tau_m={tm}"))?;
            cfg.set_override(&format!("mask.ratio={r}"))?;
            cfg.validate()?;
            let dir = g.out.join(format!("point_{k:03}"));
            println!("grid point {k}: lambda={l} tau_p={tp} tau_m={tm} ratio={r}");
            let report = with_manifest(&dir, "sweep_point", g, &cfg, |pm| {
                let pre = run_pretrain(&cfg, &dir, None, opts, pm)?;
                let ft = run_finetune(&cfg, &pre, &dir, opts, pm)?;
                run_eval(&cfg, &ft, &dir, pm)
            })?;
            table.push_str(&format!(
                "{l},{tp},{tm},{r},{},{},{}\n",
                report.auroc, report.accuracy, report.f1
            ));
        }
        let path = g.out.join("sweep.csv");
        write_atomic(&path, table.as_bytes())?;
        m.output(&path);
        print!("{table}");
        Ok(())
    })
}
