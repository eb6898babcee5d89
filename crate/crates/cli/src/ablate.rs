use std::path::PathBuf;

use clap::{Args, ValueEnum};
use trifuse::config::RunConfig;
use trifuse::diffusion::{self, EnhanceConfig};
use trifuse::imaging::Split;
use trifuse::iqa::{Metric, MetricReport};
use trifuse::net::Model;
use trifuse::Result;

use crate::data::{load_pairs, Pair};
use crate::eval::{score, Scorers};
use crate::train::{resolve, run_training};
use crate::{create_dir, write_text, ConfigArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Wavelet levels 1, 2 and 3.
    K,
    /// Sampling steps 5, 10 and 15 (one trained model).
    Steps,
    /// Full model, without the ESM, and without the CNM.
    Components,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::K => "k",
            Axis::Steps => "steps",
            Axis::Components => "components",
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset manifest; trains on the train split and scores the val split
    /// (the train split when val is empty).
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Axis to vary.
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Output directory for checkpoints and ablation_<axis>.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Training iterations per variant [default: config `train.iters`, 500].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Run seed shared by every variant [default: config `seed`, 42].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated metrics to report.
    #[arg(long, value_name = "LIST", default_value = "psnr,ssim,ms_ssim,mse,mae")]
    pub metrics: String,
    /// NIQE pristine model, required for niqe and the BRISQUE fallback.
    #[arg(long, value_name = "FILE")]
    pub niqe_model: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// One row of the matrix: a label, the training config, and the sampler
/// steps used at evaluation.
struct Variant {
    label: String,
    cfg: RunConfig,
}

fn variants(axis: Axis, base: &RunConfig) -> Result<Vec<Variant>> {
    let with = |label: String, f: &dyn Fn(&mut RunConfig)| -> Result<Variant> {
        let mut cfg = base.clone();
        f(&mut cfg);
        cfg.validate()?;
        Ok(Variant { label, cfg })
    };
    match axis {
        Axis::K => [1usize, 2, 3].iter().map(|&k| with(format!("k={k}"), &|c| c.model.wavelet_levels = k)).collect(),
        Axis::Steps => [5usize, 10, 15].iter().map(|&s| with(format!("S={s}"), &|c| c.sampler.steps = s)).collect(),
        Axis::Components => vec![
            with("full".into(), &|c| {
                c.model.use_cnm = true;
                c.model.use_esm = true;
            })?,
            with("no-ESM".into(), &|c| {
                c.model.use_cnm = true;
                c.model.use_esm = false;
            })?,
            with("no-CNM".into(), &|c| {
                c.model.use_cnm = false;
                c.model.use_esm = true;
            })?,
        ]
        .into_iter()
        .map(Ok)
        .collect(),
    }
}

fn evaluate(model: &Model, cfg: &RunConfig, pairs: &[Pair], metrics: &[Metric], scorers: &Scorers) -> Result<Vec<f64>> {
    let ecfg = EnhanceConfig { sampler: cfg.sampler, seed: cfg.seed };
    let mut report = MetricReport::new(metrics.to_vec());
    for p in pairs {
        let out = diffusion::enhance(&p.low, model, &ecfg)?;
        report.push(p.name.clone(), score(&out, Some(&p.high), metrics, scorers)?)?;
    }
    Ok(report.means())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let base = resolve(&a.config, a.iters, a.seed)?;
    let metrics = Metric::parse_list(&a.metrics)?;
    let scorers = Scorers::load(&metrics, a.niqe_model.as_ref(), None)?;
    let matrix = variants(a.axis, &base)?;
    let mut eval_pairs = load_pairs(&a.manifest, Split::Val)?;
    if eval_pairs.is_empty() {
        println!("no val pairs; scoring the train split");
        eval_pairs = load_pairs(&a.manifest, Split::Train)?;
    }
    create_dir(&a.out)?;

    let mut csv = String::from("variant");
    for m in &metrics {
        csv.push(',');
        csv.push_str(m.name());
    }
    csv.push('\n');
    let mut shared: Option<Model> = None;
    for v in &matrix {
        let model = match (&shared, a.axis) {
            (Some(m), Axis::Steps) => m.clone(),
            _ => {
                println!("== {} ==", v.label);
                let (model, _) = run_training(&v.cfg, &a.manifest, |_, _| Ok(()))?;
                let slug = if a.axis == Axis::Steps { "model".to_string() } else { v.label.replace('=', "") };
                model.save(a.out.join(format!("{slug}.trif")))?;
                model
            }
        };
        let means = evaluate(&model, &v.cfg, &eval_pairs, &metrics, &scorers)?;
        let mut line = v.label.clone();
        for x in &means {
            line.push_str(&format!(",{x:.6}"));
        }
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
        if a.axis == Axis::Steps {
            shared = Some(model);
        }
    }
    let path = a.out.join(format!("ablation_{}.csv", a.axis.name()));
    write_text(&path, &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}
