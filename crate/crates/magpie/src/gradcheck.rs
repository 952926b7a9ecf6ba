//! Finite-difference gradient auditing.
//!
//! Central differences evaluate only the forward pass, so they stay
//! independent of the backward implementation they are used to check. The
//! verification suites run these at `f64` with `h = 1e-5`.

use crate::mat::Mat;
use crate::params::ParamSet;

/// Central difference `(f(x+h) - f(x-h)) / 2h` of a scalar function.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Finite-difference gradient of `eval` with respect to every entry of every
/// parameter in `params`, in parameter-set order.
pub fn fd_param_grads(
    params: &ParamSet<f64>,
    h: f64,
    eval: impl Fn(&ParamSet<f64>) -> f64,
) -> Vec<Mat<f64>> {
    let mut out = Vec::with_capacity(params.len());
    let mut work = params.clone();
    for pi in 0..params.len() {
        let shape = params.entry(pi).1.shape();
        let mut grad = Mat::zeros(shape.0, shape.1);
        for k in 0..grad.len() {
            let orig = params.entry(pi).1.data()[k];
            work.entry_mut(pi).1.data_mut()[k] = orig + h;
            let plus = eval(&work);
            work.entry_mut(pi).1.data_mut()[k] = orig - h;
            let minus = eval(&work);
            work.entry_mut(pi).1.data_mut()[k] = orig;
            grad.data_mut()[k] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps finite-difference noise on near-zero gradients from
/// reading as a large relative error.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Summary of an analytic-vs-finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    pub checked: usize,
    pub worst: f64,
    pub fraction_within: f64,
}

/// Compares flattened analytic gradients against finite-difference ones and
/// reports the worst relative error plus the fraction under `tol`.
pub fn compare_grads(analytic: &[Mat<f64>], fd: &[Mat<f64>], tol: f64) -> GradCheckSummary {
    assert_eq!(analytic.len(), fd.len(), "gradient set size mismatch");
    let mut checked = 0usize;
    let mut within = 0usize;
    let mut worst = 0.0f64;
    for (a, b) in analytic.iter().zip(fd) {
        assert_eq!(a.shape(), b.shape(), "gradient shape mismatch");
        for (&x, &y) in a.data().iter().zip(b.data()) {
            let err = relative_error(x, y);
            checked += 1;
            if err < tol {
                within += 1;
            }
            if err > worst {
                worst = err;
            }
        }
    }
    GradCheckSummary {
        checked,
        worst,
        fraction_within: if checked == 0 {
            1.0
        } else {
            within as f64 / checked as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_of_cubic() {
        let d = central_diff(|x| x * x * x, 2.0, 1e-5);
        assert!((d - 12.0).abs() < 1e-8);
    }

    #[test]
    fn fd_param_grads_quadratic() {
        let mut params = ParamSet::new();
        params.insert("w", Mat::from_vec(1, 2, vec![3.0, -1.0]));
        let grads = fd_param_grads(&params, 1e-5, |p| {
            let w = p.get("w").unwrap();
            w.data()[0] * w.data()[0] + 2.0 * w.data()[1]
        });
        assert!((grads[0].data()[0] - 6.0).abs() < 1e-8);
        assert!((grads[0].data()[1] - 2.0).abs() < 1e-8);
    }
}
