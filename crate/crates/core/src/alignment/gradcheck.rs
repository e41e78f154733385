use ndarray::Array2;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::loss::{image_loss, image_loss_grad, text_loss, text_loss_grad};
use crate::embedding::{EmbeddingSet, Temperature};
use crate::{Error, Result};

/// Compares `grad` against central differences of `f` at `x` and returns
/// `max_i |grad_i - numeric_i| / max(1, |numeric_i|)`.
pub fn finite_diff_check<F>(f: F, grad: &[f64], x: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step {step} must be > 0")));
    }
    if grad.len() != x.len() {
        return Err(Error::shape(format!(
            "gradient has {} entries but x has {}",
            grad.len(),
            x.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let hi = f(&probe);
        probe[i] = x[i] - step;
        let lo = f(&probe);
        probe[i] = x[i];
        if !(hi.is_finite() && lo.is_finite()) {
            return Err(Error::invalid(format!(
                "function is not finite near component {i}"
            )));
        }
        let numeric = (hi - lo) / (2.0 * step);
        let err = (grad[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub max_text_error: f64,
    pub max_image_error: f64,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.max_text_error.max(self.max_image_error)
    }
}

const STEP: f64 = 1e-5;
const TAUS: [f64; 4] = [0.0, 1.0, 2.5, Temperature::DEFAULT_TAU];

fn random_row(rng: &mut StdRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() >= 0.25 {
            return v.iter().map(|x| x * 2.0).collect();
        }
    }
}

fn matrix(rows: usize, cols: usize, flat: Vec<f64>) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), flat).expect("shape matches length")
}

/// Checks both analytic gradients on `trials` random instances with up to
/// 8 anchors, 8 classes and 16 dimensions.
pub fn run_gradient_suite(trials: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        trials,
        max_text_error: 0.0,
        max_image_error: 0.0,
    };
    for trial in 0..trials {
        let n = rng.gen_range(1..=8);
        let c = rng.gen_range(2..=8);
        let d = rng.gen_range(2..=16);
        let temp = Temperature::new(TAUS[trial % TAUS.len()])?;

        let refs = EmbeddingSet::from_rows(
            (0..c).map(|k| (format!("class{k}"), random_row(&mut rng, d))),
        )?;
        let flat: Vec<f64> = (0..n).flat_map(|_| random_row(&mut rng, d)).collect();
        let classes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let sem = matrix(n, d, flat.clone());
        let grad = text_loss_grad(sem.view(), &refs, &classes, temp)?;
        let f = |x: &[f64]| {
            text_loss(matrix(n, d, x.to_vec()).view(), &refs, &classes, temp)
                .unwrap_or(f64::NAN)
        };
        let err = finite_diff_check(f, grad.as_slice().expect("standard layout"), &flat, STEP)?;
        report.max_text_error = report.max_text_error.max(err);

        let n_self = rng.gen_range(0..=8);
        let gt_sem: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let self_sem: Vec<f64> = (0..n_self * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // resample targets so no residual sits within 1e-3 of the |.| kink
        let mut away = |x: f64| loop {
            let t: f64 = rng.gen_range(-1.0..1.0);
            if (x - t).abs() >= 1e-3 {
                break t;
            }
        };
        let gt_tgt: Vec<f64> = gt_sem.iter().map(|&x| away(x)).collect();
        let self_tgt: Vec<f64> = self_sem.iter().map(|&x| away(x)).collect();
        let tg = matrix(n, d, gt_tgt);
        let ts = matrix(n_self, d, self_tgt);
        let (gg, gs) = image_loss_grad(
            matrix(n, d, gt_sem.clone()).view(),
            tg.view(),
            matrix(n_self, d, self_sem.clone()).view(),
            ts.view(),
        )?;
        let split = n * d;
        let mut x = gt_sem;
        x.extend(self_sem);
        let mut g: Vec<f64> = gg.iter().copied().collect();
        g.extend(gs.iter().copied());
        let f = |x: &[f64]| {
            image_loss(
                matrix(n, d, x[..split].to_vec()).view(),
                tg.view(),
                matrix(n_self, d, x[split..].to_vec()).view(),
                ts.view(),
            )
            .unwrap_or(f64::NAN)
        };
        let err = finite_diff_check(f, &g, &x, STEP)?;
        report.max_image_error = report.max_image_error.max(err);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = [0.3, -1.2, 2.0, 0.0];
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let f = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        assert!(finite_diff_check(f, &grad, &x, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn doubled_gradient_detected() {
        let x = [0.3, -1.2, 2.0];
        let grad: Vec<f64> = x.iter().map(|v| 4.0 * v).collect();
        let f = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        let err = finite_diff_check(f, &grad, &x, 1e-5).unwrap();
        assert!((0.5..=2.0).contains(&err), "{err}");
    }

    #[test]
    fn constant_function() {
        let err = finite_diff_check(|_| 3.0, &[0.0, 0.0], &[1.0, 2.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(finite_diff_check(|_| 0.0, &[0.0], &[0.0], 0.0).is_err());
        assert!(finite_diff_check(|_| 0.0, &[0.0], &[0.0, 1.0], 1e-5).is_err());
        assert!(finite_diff_check(|_| f64::NAN, &[0.0], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn small_suite_passes() {
        let r = run_gradient_suite(20, 7).unwrap();
        assert!(r.max_error() < 1e-5, "{r:?}");
    }
}
