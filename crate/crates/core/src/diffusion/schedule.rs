use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Linear variance schedule settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 200, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Argument(format!("schedule needs at least 2 steps, got {}", self.steps)));
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return Err(Error::Argument(format!(
                "need 0 < beta_start <= beta_end < 1, got {} and {}",
                self.beta_start, self.beta_end
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Per-step arrays indexed by timestep `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

/// `beta_t = beta_start + (t-1)/(T-1) * (beta_end - beta_start)`,
/// `alpha_t = 1 - beta_t`, `alpha_bar_t = alpha_bar_{t-1} * alpha_t`,
/// `sigma_t = sqrt(beta_t)`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    ScheduleConfig { steps, beta_start, beta_end }.validate()?;
    let beta: Vec<f64> =
        (0..steps).map(|i| beta_start + i as f64 / (steps - 1) as f64 * (beta_end - beta_start)).collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for &a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let sigma = beta.iter().map(|b| b.sqrt()).collect();
    Ok(NoiseSchedule { beta, alpha, alpha_bar, sigma })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn idx(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.steps(), "timestep {t} outside 1..={}", self.steps());
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.idx(t)]
    }

    /// `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[self.idx(t)]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[self.idx(t)]
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Argument(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_sample<T: Real>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    sched.check_timestep(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::Shape(format!("x0 {:?} vs eps {:?}", x0.shape(), eps.shape())));
    }
    let ab = sched.alpha_bar(t);
    Ok(mix(x0, ab.sqrt(), eps, (1.0 - ab).sqrt()))
}

/// `a * x + b * y` elementwise.
pub(crate) fn mix<T: Real>(x: &Tensor<T>, a: f64, y: &Tensor<T>, b: f64) -> Tensor<T> {
    let (a, b) = (T::lit(a), T::lit(b));
    let data = x.data().iter().zip(y.data()).map(|(&p, &q)| a * p + b * q).collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
}

/// Uniform-stride timesteps `{T, T - T/S, ...}`, `S` entries, strictly decreasing.
pub fn make_subsequence(steps: usize, s: usize) -> Result<Vec<usize>> {
    if s == 0 || s > steps {
        return Err(Error::Argument(format!("sampling steps {s} outside 1..={steps}")));
    }
    let stride = steps / s;
    Ok((0..s).map(|i| steps - i * stride).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_endpoints() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.steps(), 200);
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(200) - 0.02).abs() < 1e-18);
    }

    #[test]
    fn alpha_bar_final_value() {
        // Independent product: prod_{i=0}^{199} (1 - (1e-4 + i * (0.02 - 1e-4) / 199)).
        let mut oracle = 1.0f64;
        for i in 0..200 {
            oracle *= 1.0 - (1e-4 + i as f64 * (0.02 - 1e-4) / 199.0);
        }
        let s = make_schedule(200, 1e-4, 0.02).unwrap();
        assert!((s.alpha_bar(200) - oracle).abs() < 1e-15);
        assert!((s.alpha_bar(200) - 0.132_182_754_250_617_8).abs() < 1e-12);
    }

    #[test]
    fn constant_schedule_closed_form() {
        let s = make_schedule(50, 0.01, 0.01).unwrap();
        for t in 1..=50 {
            let expect = 0.99f64.powi(t as i32);
            assert!((s.alpha_bar(t) - expect).abs() < 1e-14 * t as f64);
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(make_schedule(1, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 0.03, 0.02).is_err());
        assert!(make_schedule(10, 0.01, 1.0).is_err());
        let s = make_schedule(10, 0.01, 0.02).unwrap();
        let x = Tensor::<f64>::zeros(&[2]);
        assert!(forward_sample(&x, 0, &x, &s).is_err());
        assert!(forward_sample(&x, 11, &x, &s).is_err());
    }

    #[test]
    fn forward_sample_special_cases() {
        let s = make_schedule(200, 1e-4, 0.02).unwrap();
        let x0 = Tensor::from_vec(vec![3], vec![0.5f64, -1.0, 2.0]).unwrap();
        let eps = Tensor::from_vec(vec![3], vec![0.3f64, 0.1, -0.7]).unwrap();
        let zero = Tensor::<f64>::zeros(&[3]);
        let xt = forward_sample(&zero, 77, &eps, &s).unwrap();
        let k = (1.0 - s.alpha_bar(77)).sqrt();
        for (a, b) in xt.data().iter().zip(eps.data()) {
            assert_eq!(*a, k * b);
        }
        let xt = forward_sample(&x0, 1, &zero, &s).unwrap();
        for (a, b) in xt.data().iter().zip(x0.data()) {
            assert!((a - b * (1.0f64 - 1e-4).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn subsequences() {
        assert_eq!(make_subsequence(200, 5).unwrap(), vec![200, 160, 120, 80, 40]);
        assert_eq!(make_subsequence(200, 1).unwrap(), vec![200]);
        assert_eq!(make_subsequence(7, 7).unwrap(), vec![7, 6, 5, 4, 3, 2, 1]);
        assert!(make_subsequence(10, 0).is_err());
        assert!(make_subsequence(10, 11).is_err());
    }

    proptest! {
        #[test]
        fn schedule_invariants(steps in 2usize..400, start in 1e-5f64..0.05, span in 0.0f64..0.3) {
            let end = (start + span).min(0.999);
            let s = make_schedule(steps, start, end).unwrap();
            for t in 1..=steps {
                prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                prop_assert_eq!(s.alpha(t), 1.0 - s.beta(t));
                prop_assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
                prop_assert_eq!(s.sigma(t), s.beta(t).sqrt());
                if t > 1 {
                    prop_assert!(s.beta(t) >= s.beta(t - 1));
                    prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                }
            }
            prop_assert!(s.alpha_bar(1) < 1.0);
        }

        #[test]
        fn subsequence_shape(steps in 1usize..500, frac in 0.0f64..1.0) {
            let s = 1 + ((steps - 1) as f64 * frac) as usize;
            let seq = make_subsequence(steps, s).unwrap();
            prop_assert_eq!(seq.len(), s);
            prop_assert_eq!(seq[0], steps);
            prop_assert!(seq.windows(2).all(|w| w[0] > w[1]));
            prop_assert!(*seq.last().unwrap() >= 1);
        }
    }
}
