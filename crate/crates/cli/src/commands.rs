use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fedbiad::config::{sweep_seed, Experiment, RunConfig};
use fedbiad::dropout::RowLayout;
use fedbiad::telemetry::{emit_reports, save_ratio, RoundReport};
use fedbiad::wire::row_update_bytes;

use crate::RunArgs;

/// File values, then flags, then `--set` overrides.
pub fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)?;
    }
    let mut set = |k: &str, v: String| cfg.set(k, &v);
    if let Some(v) = args.seed {
        set("seed", v.to_string())?;
    }
    if let Some(v) = &args.strategy {
        set("strategy", v.clone())?;
    }
    if let Some(v) = args.p {
        set("p", v.to_string())?;
    }
    if let Some(v) = &args.out {
        set("out", v.display().to_string())?;
    }
    if let Some(v) = &args.format {
        set("format", v.clone())?;
    }
    for o in &args.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| fedbiad::Error::Config {
            key: o.clone(),
            msg: "expected KEY=VALUE".into(),
        })?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Totals of one finished run.
pub struct Summary {
    pub final_top1: f64,
    pub final_top3: f64,
    pub final_train_loss: f64,
    pub total_up: u64,
    pub total_down: u64,
    pub save_ratio: f64,
}

fn summarize(cfg: &RunConfig, exp: &Experiment, reports: &[RoundReport]) -> Result<Summary> {
    let dense = row_update_bytes(&RowLayout::new(&exp.spec, 0.0)?) as u64;
    let uploads = (reports.len() * cfg.fed.selected_count()) as u64;
    let total_up: u64 = reports.iter().map(|r| r.up_bytes).sum();
    let last = reports.last();
    Ok(Summary {
        final_top1: last.map_or(f64::NAN, |r| r.test_top1),
        final_top3: last.map_or(f64::NAN, |r| r.test_top3),
        final_train_loss: last.map_or(f64::NAN, |r| r.train_loss),
        total_up,
        total_down: reports.iter().map(|r| r.down_bytes).sum(),
        save_ratio: if total_up == 0 {
            f64::NAN
        } else {
            save_ratio(dense * uploads, total_up)?
        },
    })
}

/// Trains, writes `config.txt` and `reports.{csv,json}` under `dir`.
fn run_into(cfg: &RunConfig, dir: &Path) -> Result<Summary> {
    log::info!("effective configuration:\n{}", cfg.render());
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.txt"), cfg.render())
        .with_context(|| format!("writing config to {}", dir.display()))?;
    let exp = cfg.build()?;
    let reports = exp.run(&cfg.fed)?;
    let path = dir.join(format!("reports.{}", cfg.format.extension()));
    emit_reports(&reports, cfg.format, &path)?;
    summarize(cfg, &exp, &reports)
}

pub fn run(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let s = run_into(&cfg, &cfg.out)?;
    println!(
        "final top1 {:.4}  top3 {:.4}  train loss {:.6}  up bytes {}  save ratio vs dense {:.4}x",
        s.final_top1, s.final_top3, s.final_train_loss, s.total_up, s.save_ratio
    );
    Ok(())
}

pub fn sweep(args: &RunArgs, key: &str, values: &[String]) -> Result<()> {
    let base = load_config(args)?;
    let mut rows = vec![
        "value,seed,final_top1,final_top3,final_train_loss,total_up_bytes,total_down_bytes,save_ratio".to_string(),
    ];
    for (i, value) in values.iter().enumerate() {
        if value.trim().parse::<f64>().is_err() {
            return Err(fedbiad::Error::Config {
                key: key.to_string(),
                msg: format!("sweep value {value:?} is not numeric"),
            }
            .into());
        }
        let mut cfg = base.clone();
        cfg.set(key, value)?;
        cfg.fed.seed = sweep_seed(base.fed.seed, i);
        cfg.validate()?;
        let dir = base.out.join(format!("{key}={}", value.trim()));
        let s = run_into(&cfg, &dir)?;
        println!(
            "{key} = {}: top1 {:.4}  up bytes {}",
            value.trim(),
            s.final_top1,
            s.total_up
        );
        rows.push(format!(
            "{},{},{:.16e},{:.16e},{:.16e},{},{},{:.16e}",
            value.trim(),
            cfg.fed.seed,
            s.final_top1,
            s.final_top3,
            s.final_train_loss,
            s.total_up,
            s.total_down,
            s.save_ratio
        ));
    }
    let path = base.out.join("summary.csv");
    fs::create_dir_all(&base.out)?;
    fs::write(&path, rows.join("\n") + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
