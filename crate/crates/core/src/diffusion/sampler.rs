use serde::{Deserialize, Serialize};

use super::schedule::{make_subsequence, mix, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of implicit sampling steps `S`.
    pub steps: usize,
    /// 0 gives deterministic sampling; 1 injects noise with variance equal
    /// to the effective beta of each hop.
    pub eta: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 5, eta: 0.0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self, total_steps: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Argument(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        make_subsequence(total_steps, self.steps).map(|_| ())
    }
}

fn gaussian_like<T: Real>(shape: &[usize], rng: &mut StreamRng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = crate::rng::gaussian_vec(rng, n).into_iter().map(|v| T::lit(v as f64)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape")
}

/// `x0_hat = (x_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t)`.
pub fn predict_x0<T: Real>(x_t: &Tensor<T>, t: usize, pred_eps: &Tensor<T>, sched: &NoiseSchedule) -> Tensor<T> {
    let ab = sched.alpha_bar(t);
    mix(x_t, 1.0 / ab.sqrt(), pred_eps, -(1.0 - ab).sqrt() / ab.sqrt())
}

/// Noise standard deviation of an implicit hop `t -> t_prev`:
/// `eta * sqrt(1 - alpha_bar_t / alpha_bar_prev)`, which is `eta * sqrt(beta_t)`
/// for consecutive steps.
pub fn hop_sigma(t: usize, t_prev: usize, sched: &NoiseSchedule, eta: f64) -> f64 {
    eta * (1.0 - sched.alpha_bar(t) / sched.alpha_bar(t_prev)).max(0.0).sqrt()
}

/// One implicit update from `t` to `t_prev`. `t_prev == 0` returns the
/// clean estimate; `rng` is drawn from only when `eta > 0`.
pub fn implicit_step<T: Real>(
    x_t: &Tensor<T>,
    t: usize,
    t_prev: usize,
    pred_eps: &Tensor<T>,
    sched: &NoiseSchedule,
    eta: f64,
    rng: &mut StreamRng,
) -> Result<Tensor<T>> {
    sched.check_timestep(t)?;
    if t_prev >= t {
        return Err(Error::Argument(format!("t_prev {t_prev} must be below t {t}")));
    }
    if x_t.shape() != pred_eps.shape() {
        return Err(Error::Shape(format!("x_t {:?} vs eps {:?}", x_t.shape(), pred_eps.shape())));
    }
    let x0 = predict_x0(x_t, t, pred_eps, sched);
    if t_prev == 0 {
        return Ok(x0);
    }
    let ab_prev = sched.alpha_bar(t_prev);
    let sigma = hop_sigma(t, t_prev, sched, eta);
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let mut out = mix(&x0, ab_prev.sqrt(), pred_eps, dir);
    if sigma > 0.0 {
        let z = gaussian_like::<T>(x_t.shape(), rng);
        out = mix(&out, 1.0, &z, sigma);
    }
    Ok(out)
}

/// The single-step ancestral update
/// `x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_t) + sigma_t z`.
pub fn ancestral_step<T: Real>(
    x_t: &Tensor<T>,
    t: usize,
    pred_eps: &Tensor<T>,
    z: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    sched.check_timestep(t)?;
    if x_t.shape() != pred_eps.shape() || x_t.shape() != z.shape() {
        return Err(Error::Shape("ancestral step operands differ in shape".into()));
    }
    let a = sched.alpha(t);
    let k = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let mean = mix(x_t, 1.0 / a.sqrt(), pred_eps, -k / a.sqrt());
    Ok(mix(&mean, 1.0, z, sched.sigma(t)))
}

/// Runs the implicit chain from `x_T` over the configured subsequence and
/// finally to 0. `predictor(x, t)` returns the noise estimate at `t`.
pub fn sample_implicit<T: Real>(
    x_start: Tensor<T>,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut StreamRng,
    mut predictor: impl FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    cfg.validate(sched.steps())?;
    let seq = make_subsequence(sched.steps(), cfg.steps)?;
    let mut x = x_start;
    for (i, &t) in seq.iter().enumerate() {
        let t_prev = seq.get(i + 1).copied().unwrap_or(0);
        let eps = predictor(&x, t)?;
        x = implicit_step(&x, t, t_prev, &eps, sched, cfg.eta, rng)?;
    }
    Ok(x)
}

/// Standard-normal tensor from `rng`.
pub fn gaussian_tensor<T: Real>(shape: &[usize], rng: &mut StreamRng) -> Tensor<T> {
    gaussian_like(shape, rng)
}

/// Draws `x_T` and runs [`sample_implicit`]; streams `sample` and `eta` of `seed`.
pub fn sample_from_seed<T: Real>(
    shape: &[usize],
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    seed: u64,
    predictor: impl FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let split = crate::rng::SeedSplitter::new(seed);
    let x = gaussian_like(shape, &mut split.stream("sample"));
    let mut eta_rng = split.stream("eta");
    sample_implicit(x, sched, cfg, &mut eta_rng, predictor)
}
