use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use trifuse::config::RunConfig;
use trifuse::diffusion::{self, TrainEvent, TrainReport};
use trifuse::imaging::Split;
use trifuse::net::Model;
use trifuse::{Error, Result};

use crate::data::load_pairs;
use crate::{write_text, ConfigArgs};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest; its train split is used.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Final checkpoint path.
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    /// Training iterations [default: config `train.iters`, 500].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Run seed [default: config `seed`, 42].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss log CSV [default: CKPT with extension `loss.csv`].
    #[arg(long, value_name = "CSV")]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// `model.trif` -> `model.iter500.trif`.
pub fn intermediate_path(out: &Path, iter: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.iter{iter}.{ext}"),
        None => format!("{stem}.iter{iter}"),
    };
    out.with_file_name(name)
}

pub(crate) fn resolve(args: &ConfigArgs, iters: Option<usize>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = args.load()?;
    if let Some(s) = seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(i) = iters {
        cfg.train.iters = i;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains a fresh model from `cfg`, printing log lines and passing every
/// checkpoint event to `on_checkpoint`.
pub(crate) fn run_training(
    cfg: &RunConfig,
    manifest: &Path,
    mut on_checkpoint: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<(Model, TrainReport)> {
    let pairs = load_pairs(manifest, Split::Train)?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no train pairs", manifest.display())));
    }
    let data: Vec<_> = pairs.into_iter().map(|p| (p.low, p.high)).collect();
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let report = diffusion::train(&mut model, &data, &cfg.train, |e| match e {
        TrainEvent::Log(r) => {
            println!("iter {:>6}  loss {:.6}  lr {:.3e}", r.iter, r.mean_loss, r.lr);
            Ok(())
        }
        TrainEvent::Checkpoint { iter, model } => on_checkpoint(iter, model),
    })?;
    Ok((model, report))
}

pub fn loss_csv(report: &TrainReport) -> String {
    let mut s = String::from("iter,mean_loss,lr\n");
    for r in &report.log {
        s.push_str(&format!("{},{:.8},{}\n", r.iter, r.mean_loss, r.lr));
    }
    s
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve(&a.config, a.iters, a.seed)?;
    let start = Instant::now();
    let final_iter = cfg.train.iters;
    let (_, report) = run_training(&cfg, &a.manifest, |iter, model| {
        let path = if iter == final_iter { a.out.clone() } else { intermediate_path(&a.out, iter) };
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            crate::create_dir(dir)?;
        }
        model.save(&path)?;
        println!("checkpoint {}", path.display());
        Ok(())
    })?;
    let log = a.log.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_text(&log, &loss_csv(&report))?;
    println!(
        "trained {} iterations in {:.1}s; loss log {}",
        report.losses.len(),
        start.elapsed().as_secs_f64(),
        log.display()
    );
    Ok(())
}
