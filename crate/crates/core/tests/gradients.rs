//! End-to-end gradient checks of the full training objective in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trifuse::diffusion::{training_graph, NoiseDraw};
use trifuse::imaging::{scenes, synthesize_low_light, DegradationParams, Level};
use trifuse::net::{AttentionMode, CnmConfig, EsmConfig, Model, ModelConfig};
use trifuse::nn::{check_gradients, ParamStore, Tensor};
use trifuse::ImageTensor;

/// ReLU and L1 kinks sit inside a wider stencil for some of the ~700
/// sampled elements; 1e-7 keeps crossings rare while f64 rounding stays
/// near 1e-9 relative.
const STEP: f64 = 1e-7;

fn toy_config() -> ModelConfig {
    ModelConfig {
        cnm: CnmConfig {
            base_channels: 8,
            num_transformer_blocks: 1,
            num_heads: 2,
            timestep_embed_dim: 8,
            condition_channels: 3,
        },
        esm: EsmConfig { block_channels: 4, num_heads: 2, ..EsmConfig::default() },
        ..ModelConfig::default()
    }
}

/// f64 copy of a fresh model whose zero-initialised tensors are replaced by
/// small random values, so no gradient path is trivially zero.
fn live_store(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    let mut store = Model::new(cfg.clone(), seed).unwrap().params.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    for p in store.iter_mut().filter(|p| p.trainable) {
        if p.value.data().iter().all(|&v| v == 0.0) {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
        }
    }
    store
}

fn pair(size: usize) -> (ImageTensor, ImageTensor) {
    let high = scenes::generate(size, size, 3, 11);
    let low = synthesize_low_light(&high, &DegradationParams::preset(Level::Moderate), 11).unwrap();
    (low, high)
}

fn check(cfg: ModelConfig, size: usize) {
    let mut store = live_store(&cfg, 3);
    let sched = cfg.schedule.build().unwrap();
    let (low, high) = pair(size);
    let side = size >> cfg.wavelet_levels;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps: Vec<f64> = (0..3 * side * side).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let draw = NoiseDraw { timesteps: vec![137], eps: Tensor::from_vec(vec![1, 3, side, side], eps).unwrap() };
    let noise = cfg.use_cnm.then_some(&draw);
    let report = check_gradients(&mut store, true, STEP, Some(6), |g, s| {
        training_graph(g, s, &cfg, &sched, std::slice::from_ref(&low), std::slice::from_ref(&high), noise, 0.1)
    })
    .unwrap();
    assert!(report.checked > 100);
    eprintln!("{report:?}");
    assert!(report.max_rel_err <= 1e-5, "{report:?}");
}

#[test]
fn full_model_matches_finite_differences() {
    check(toy_config(), 16);
}

#[test]
fn two_level_model_matches_finite_differences() {
    check(ModelConfig { wavelet_levels: 2, ..toy_config() }, 16);
}

#[test]
fn esm_only_self_attention_matches_finite_differences() {
    let mut cfg = ModelConfig { use_cnm: false, ..toy_config() };
    cfg.esm.attention = AttentionMode::SelfAttn;
    check(cfg, 16);
}
