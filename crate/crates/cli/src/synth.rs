use std::path::PathBuf;

use clap::{Args, ValueEnum};
use trifuse::imaging::{build_manifest, list_images, load_image, save_image, scenes, synthesize_low_light, Level};
use trifuse::rng::SeedSplitter;
use trifuse::{Error, Result};

use crate::{create_dir, file_name, ConfigArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Light,
    Moderate,
    Dense,
    All,
}

impl LevelArg {
    fn levels(self) -> Vec<Level> {
        match self {
            LevelArg::Light => vec![Level::Light],
            LevelArg::Moderate => vec![Level::Moderate],
            LevelArg::Dense => vec![Level::Dense],
            LevelArg::All => Level::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of well-exposed PNG/PPM images.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Dataset root; receives high/, one directory per level and manifest.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Intensity level to synthesise.
    #[arg(long, value_enum, default_value = "all")]
    pub level: LevelArg,
    /// Run seed [default: config `seed`, 42].
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.seed {
        cfg.set("seed", &s.to_string())?;
    }
    cfg.validate()?;
    if !a.input.is_dir() {
        return Err(Error::Argument(format!("input directory {} does not exist", a.input.display())));
    }
    let inputs = list_images(&a.input)?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset(format!("no PNG or PPM images in {}", a.input.display())));
    }
    let levels = a.level.levels();
    create_dir(&a.out.join("high"))?;
    for l in &levels {
        create_dir(&a.out.join(l.as_str()))?;
    }
    let split = SeedSplitter::new(cfg.seed);
    let results = trifuse::par::map_slice(&inputs, |path| -> Result<usize> {
        let name = file_name(path)?;
        let img = load_image(path)?;
        save_image(&img, a.out.join("high").join(&name))?;
        for &level in &levels {
            let seed = split.derive(&format!("synth/{level}/{name}"));
            let low = synthesize_low_light(&img, &cfg.degradation(level), seed)?;
            save_image(&low, a.out.join(level.as_str()).join(&name))?;
        }
        Ok(levels.len())
    });
    let written: usize = results.into_iter().sum::<Result<usize>>()?;
    let manifest = build_manifest(&a.out, cfg.split)?;
    println!(
        "wrote {written} degraded images and {} manifest entries under {}",
        manifest.entries.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenScenesArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// 1 (gray) or 3 (RGB).
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn gen_scenes(a: &GenScenesArgs) -> Result<()> {
    if a.count == 0 || a.size < 8 || !matches!(a.channels, 1 | 3) {
        return Err(Error::Argument("need count >= 1, size >= 8 and 1 or 3 channels".into()));
    }
    create_dir(&a.out)?;
    let split = SeedSplitter::new(a.seed);
    let ids: Vec<usize> = (0..a.count).collect();
    let res = trifuse::par::map_slice(&ids, |&i| {
        let img = scenes::generate(a.size, a.size, a.channels, split.derive(&format!("scene/{i}")));
        save_image(&img, a.out.join(format!("scene_{i:03}.png")))
    });
    res.into_iter().collect::<Result<Vec<()>>>()?;
    println!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}
