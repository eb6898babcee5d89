use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use trifuse::diffusion::{self, EnhanceConfig};
use trifuse::imaging::{list_images, load_image, save_image};
use trifuse::net::Model;
use trifuse::{Error, Result};

use crate::{create_dir, file_stem, ConfigArgs};

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    /// Low-light image, or a directory of them.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output file, or output directory when --input is a directory (PNG files named after the inputs).
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
    /// Implicit sampling steps [default: config `sampler.steps`, 5].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Sampling stochasticity in [0, 1] [default: config `sampler.eta`, 0].
    #[arg(long)]
    pub eta: Option<f64>,
    /// Sampling seed [default: config `seed`, 42].
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub(crate) fn enhance_file(input: &Path, output: &Path, model: &Model, cfg: &EnhanceConfig) -> Result<f64> {
    let img = load_image(input)?;
    let start = Instant::now();
    let out = diffusion::enhance(&img, model, cfg)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    save_image(&out, output)?;
    Ok(ms)
}

pub fn enhance(a: &EnhanceArgs) -> Result<()> {
    let mut run = a.config.load()?;
    if let Some(s) = a.steps {
        run.sampler.steps = s;
    }
    if let Some(e) = a.eta {
        run.sampler.eta = e;
    }
    if let Some(s) = a.seed {
        run.seed = s;
    }
    let model = Model::load(&a.ckpt)?;
    run.sampler.validate(model.config.schedule.steps).map_err(|e| Error::Config(e.to_string()))?;
    let cfg = EnhanceConfig { sampler: run.sampler, seed: run.seed };
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        let files = list_images(&a.input)?;
        if files.is_empty() {
            return Err(Error::EmptyDataset(format!("no images in {}", a.input.display())));
        }
        create_dir(&a.output)?;
        files
            .into_iter()
            .map(|f| {
                let name = format!("{}.png", file_stem(&f)?);
                Ok((f, a.output.join(name)))
            })
            .collect::<Result<_>>()?
    } else {
        if let Some(dir) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        vec![(a.input.clone(), a.output.clone())]
    };
    for (input, output) in &jobs {
        let ms = enhance_file(input, output, &model, &cfg)?;
        println!("{} -> {}  {ms:.1} ms", input.display(), output.display());
    }
    Ok(())
}
