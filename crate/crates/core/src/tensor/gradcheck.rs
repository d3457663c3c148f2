use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::Tensor;
use crate::scalar::Scalar;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, floor)`
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} at [{}] (analytic {:.6e}, numeric {:.6e}) over {} coords: {}",
            self.max_rel_err,
            self.worst_index,
            self.analytic,
            self.numeric,
            self.checked,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates are sampled without replacement when `x` is larger.
    pub max_coords: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so that coordinates with
    /// a vanishing gradient are judged on absolute error `tol * floor`.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            tol: 1e-3,
            max_coords: 24,
            seed: 0x5eed,
            floor: 1e-2,
        }
    }
}

/// Checks the gradient of the scalar function `f` at `x` with central
/// differences of step `eps`, against a relative tolerance `tol`.
pub fn grad_check<F, E, Func>(f: Func, x: &Tensor<F>, eps: f64, tol: f64) -> Result<GradCheckReport, E>
where
    F: Scalar,
    Func: Fn(&Tensor<F>) -> Result<Tensor<F>, E>,
{
    grad_check_with(
        f,
        x,
        &GradCheckConfig {
            eps,
            tol,
            ..Default::default()
        },
    )
}

pub fn grad_check_with<F, E, Func>(f: Func, x: &Tensor<F>, cfg: &GradCheckConfig) -> Result<GradCheckReport, E>
where
    F: Scalar,
    Func: Fn(&Tensor<F>) -> Result<Tensor<F>, E>,
{
    let leaf = x.leaf(true);
    let out = f(&leaf)?;
    assert_eq!(out.numel(), 1, "grad_check needs a scalar function");
    out.backward().expect("scalar output");
    let analytic = leaf.grad().unwrap_or_else(|| vec![F::zero(); x.numel()]);

    let n = x.numel();
    let coords: Vec<usize> = if n <= cfg.max_coords {
        (0..n).collect()
    } else {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
        let mut v = sample(&mut rng, n, cfg.max_coords).into_vec();
        v.sort_unstable();
        v
    };

    let base = x.to_vec();
    let eval = |i: usize, delta: f64| -> Result<f64, E> {
        let mut d = base.clone();
        d[i] += F::of(delta);
        let probe = Tensor::raw(d, x.shape().to_vec(), false);
        Ok(f(&probe)?.item().as_f64())
    };

    let mut report = GradCheckReport {
        max_rel_err: f64::NEG_INFINITY,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
        passed: true,
    };
    for &i in &coords {
        let numeric = (eval(i, cfg.eps)? - eval(i, -cfg.eps)?) / (2.0 * cfg.eps);
        let a = analytic[i].as_f64();
        let err = if a.is_finite() && numeric.is_finite() {
            (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor)
        } else {
            f64::INFINITY
        };
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.max_rel_err = report.max_rel_err.max(0.0);
    report.passed = report.max_rel_err < cfg.tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorError;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Xoshiro256PlusPlus {
        Xoshiro256PlusPlus::seed_from_u64(seed)
    }

    #[test]
    fn sum_is_exact() {
        let x = Tensor::<f64>::randn(&[3, 4], &mut rng(1));
        let r = grad_check(|t| Ok::<_, TensorError>(t.sum_all()), &x, 1e-3, 1e-3).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_err < 1e-9, "{r}");
    }

    #[test]
    fn nan_gradient_fails() {
        let x = Tensor::<f64>::from_vec(vec![-1.0, 2.0], &[2]).unwrap();
        // log of a negative number
        let r = grad_check(|t| Ok::<_, TensorError>(t.log().sum_all()), &x, 1e-3, 1e-3).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_err.is_infinite());
    }

    #[test]
    fn kink_within_step_is_caught() {
        // |x| at 1e-4: analytic slope 1, central difference across the kink ~0.1
        let x = Tensor::<f64>::from_vec(vec![1e-4], &[1]).unwrap();
        let r = grad_check(|t| Ok::<_, TensorError>(t.abs().sum_all()), &x, 1e-3, 1e-3).unwrap();
        assert!(!r.passed, "{r}");
    }
}
