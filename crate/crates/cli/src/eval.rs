use std::path::PathBuf;

use clap::Args;
use trifuse::imaging::{list_images, load_image};
use trifuse::iqa::{self, BrisqueRegressor, Metric, MetricReport, NiqeModel};
use trifuse::{Error, ImageTensor, Result};

use crate::data::pair_by_stem;
use crate::{file_stem, write_text};

const FULL_REFERENCE: &str = "psnr,ssim,ms_ssim,mse,mae";
const NO_REFERENCE: &str = "brisque,niqe";

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of images to score.
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    /// Reference directory, paired with --pred by file stem; needed only for full-reference metrics.
    #[arg(long = "ref", value_name = "DIR")]
    pub reference: Option<PathBuf>,
    /// Comma-separated subset of psnr,ssim,ms_ssim,mse,mae,brisque,niqe
    /// [default: the full-reference set with --ref, else brisque,niqe].
    #[arg(long, value_name = "LIST")]
    pub metrics: Option<String>,
    /// NIQE pristine model (from fit-niqe); also the BRISQUE fallback.
    #[arg(long, value_name = "FILE")]
    pub niqe_model: Option<PathBuf>,
    /// BRISQUE regressor file with reg_* entries.
    #[arg(long, value_name = "FILE")]
    pub brisque_model: Option<PathBuf>,
    /// Output CSV; the MEAN row is always printed.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

/// Loaded scorers for the no-reference metrics.
#[derive(Debug, Default)]
pub(crate) struct Scorers {
    pub niqe: Option<NiqeModel>,
    pub brisque: Option<BrisqueRegressor>,
}

impl Scorers {
    pub fn load(metrics: &[Metric], niqe: Option<&PathBuf>, brisque: Option<&PathBuf>) -> Result<Self> {
        let s = Self {
            niqe: niqe.map(NiqeModel::load).transpose()?,
            brisque: brisque.map(BrisqueRegressor::load).transpose()?,
        };
        if metrics.contains(&Metric::Niqe) && s.niqe.is_none() {
            return Err(Error::Config("niqe requested without --niqe-model".into()));
        }
        if metrics.contains(&Metric::Brisque) && s.niqe.is_none() && s.brisque.is_none() {
            return Err(Error::Config(
                "brisque requested without --brisque-model or a --niqe-model for the fallback".into(),
            ));
        }
        Ok(s)
    }
}

pub(crate) fn score(
    pred: &ImageTensor,
    reference: Option<&ImageTensor>,
    metrics: &[Metric],
    s: &Scorers,
) -> Result<Vec<f64>> {
    let need_ref = || reference.ok_or_else(|| Error::Config("full-reference metric without a reference".into()));
    metrics
        .iter()
        .map(|m| match m {
            Metric::Psnr => iqa::psnr(pred, need_ref()?),
            Metric::Ssim => iqa::ssim(pred, need_ref()?),
            Metric::MsSsim => iqa::ms_ssim(pred, need_ref()?),
            Metric::Mse => iqa::mse(pred, need_ref()?),
            Metric::Mae => iqa::mae(pred, need_ref()?),
            Metric::Brisque => iqa::brisque_score(pred, s.brisque.as_ref(), s.niqe.as_ref()),
            Metric::Niqe => iqa::niqe(pred, s.niqe.as_ref().expect("checked at load")),
        })
        .collect()
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let default = if a.reference.is_some() { FULL_REFERENCE } else { NO_REFERENCE };
    let metrics = Metric::parse_list(a.metrics.as_deref().unwrap_or(default))?;
    if a.reference.is_none() && metrics.iter().any(|m| m.needs_reference()) {
        return Err(Error::Config("full-reference metrics need --ref".into()));
    }
    let scorers = Scorers::load(&metrics, a.niqe_model.as_ref(), a.brisque_model.as_ref())?;
    let jobs: Vec<(String, PathBuf, Option<PathBuf>)> = match &a.reference {
        Some(r) => pair_by_stem(&a.pred, r)?.into_iter().map(|(n, p, r)| (n, p, Some(r))).collect(),
        None => list_images(&a.pred)?.into_iter().map(|p| Ok((file_stem(&p)?, p, None))).collect::<Result<_>>()?,
    };
    if jobs.is_empty() {
        return Err(Error::EmptyDataset(format!("no images in {}", a.pred.display())));
    }
    let rows = trifuse::par::map_slice(&jobs, |(name, p, r)| -> Result<(String, Vec<f64>)> {
        let pred = load_image(p)?;
        let reference = r.as_ref().map(load_image).transpose()?;
        Ok((name.clone(), score(&pred, reference.as_ref(), &metrics, &scorers)?))
    });
    let mut report = MetricReport::new(metrics);
    for row in rows {
        let (name, values) = row?;
        report.push(name, values)?;
    }
    let csv = report.to_csv();
    if let Some(out) = &a.out {
        write_text(out, &csv)?;
    }
    println!("{}", csv.lines().next().unwrap_or_default());
    println!("{}", report.mean_line());
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitNiqeArgs {
    /// Directory of pristine (well-exposed, undistorted) images; at least 10.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Output model file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Patch side in pixels (even, >= 16).
    #[arg(long, default_value_t = iqa::NIQE_DEFAULT_PATCH)]
    pub patch: usize,
}

pub fn fit_niqe(a: &FitNiqeArgs) -> Result<()> {
    let files = list_images(&a.input)?;
    let images = trifuse::par::map_slice(&files, |p| load_image(p)).into_iter().collect::<Result<Vec<_>>>()?;
    let model = iqa::fit_niqe_model(&images, a.patch)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::create_dir(dir)?;
    }
    model.save(&a.out)?;
    println!("fitted NIQE model on {} images -> {}", images.len(), a.out.display());
    Ok(())
}
