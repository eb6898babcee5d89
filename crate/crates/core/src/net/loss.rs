use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Tensor, Var};

/// Default weight of the pixel L1 term.
pub const DEFAULT_L1_WEIGHT: f64 = 0.1;

/// `mean((pred - true)^2) + lambda * mean|enhanced - reference|`.
pub fn training_loss<T: Real>(
    pred_noise: &Tensor<T>,
    true_noise: &Tensor<T>,
    enhanced: &Tensor<T>,
    reference: &Tensor<T>,
    lambda: f64,
) -> Result<f64> {
    if pred_noise.shape() != true_noise.shape() || enhanced.shape() != reference.shape() {
        return Err(Error::Shape(format!(
            "loss pairs {:?}/{:?} and {:?}/{:?}",
            pred_noise.shape(),
            true_noise.shape(),
            enhanced.shape(),
            reference.shape()
        )));
    }
    let mean = |a: &Tensor<T>, b: &Tensor<T>, f: fn(f64) -> f64| -> f64 {
        let s: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(x.to_f64().unwrap_or(f64::NAN) - y.to_f64().unwrap_or(f64::NAN)))
            .sum();
        s / a.numel().max(1) as f64
    };
    Ok(mean(pred_noise, true_noise, |d| d * d) + lambda * mean(enhanced, reference, f64::abs))
}

/// Graph form of [`training_loss`]; the L1 term is skipped when `lambda` is 0.
pub fn training_loss_graph<T: Real>(
    g: &mut Graph<T>,
    pred_noise: Var,
    true_noise: Var,
    enhanced: Var,
    reference: Var,
    lambda: f64,
) -> Result<Var> {
    let l2 = g.mse(pred_noise, true_noise)?;
    if lambda == 0.0 {
        return Ok(l2);
    }
    let l1 = g.l1(enhanced, reference)?;
    let l1 = g.affine(l1, T::lit(lambda), T::zero());
    g.add(l2, l1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(vec![1, 1, 2, n / 2], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn exact_prediction_gives_zero() {
        let p = random(8, 1);
        let e = random(8, 2);
        assert_eq!(training_loss(&p, &p, &e, &e, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn unit_offset_gives_one() {
        let p = random(8, 1);
        let shifted = p.map(|v| v + 1.0);
        let e = random(8, 2);
        let r = random(8, 3);
        let l = training_loss(&shifted, &p, &e, &r, 0.0).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_loop_and_graph() {
        let (p, t, e, r) = (random(12, 1), random(12, 2), random(12, 3), random(12, 4));
        let mut sq = 0.0;
        let mut ab = 0.0;
        for i in 0..12 {
            sq += (p.data()[i] - t.data()[i]).powi(2);
            ab += (e.data()[i] - r.data()[i]).abs();
        }
        let oracle = sq / 12.0 + 0.1 * ab / 12.0;
        let direct = training_loss(&p, &t, &e, &r, DEFAULT_L1_WEIGHT).unwrap();
        assert!((direct - oracle).abs() < 1e-7);
        let mut g = Graph::<f64>::new(true);
        let vars = [&p, &t, &e, &r].map(|x| g.constant(x.clone()));
        let l = training_loss_graph(&mut g, vars[0], vars[1], vars[2], vars[3], DEFAULT_L1_WEIGHT).unwrap();
        assert!((g.value(l).data()[0] - oracle).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = random(8, 1);
        let b = random(12, 1);
        assert!(training_loss(&a, &b, &a, &a, 0.1).is_err());
    }
}
