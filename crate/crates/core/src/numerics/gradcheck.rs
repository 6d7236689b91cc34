//! Central finite-difference verification of analytic gradients.

use super::{NumericsError, Rng, Tensor};

/// Settings for a gradient check run.
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Perturbation half-width for the central difference.
    pub step: f64,
    /// Maximum relative error considered a pass.
    pub tolerance: f64,
    /// Coordinates sampled per parameter tensor (all coordinates when the
    /// tensor is smaller).
    pub max_coords_per_param: usize,
    /// Seed for the coordinate sampler.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords_per_param: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub passed: bool,
    /// (parameter index, coordinate) of the worst error, if any coordinate
    /// was checked.
    pub worst: Option<(usize, usize)>,
}

// Floor on the relative-error denominator: coordinates whose analytic and
// numeric gradients are both tiny compare in absolute terms instead of
// blowing up on finite-difference noise. Exactly-zero pairs report 0.
const DENOM_FLOOR: f64 = 1e-3;

/// Compare `f`'s analytic gradients against central finite differences
/// `(f(x+h) - f(x-h)) / 2h` on sampled coordinates of every tensor in
/// `params` that has `requires_grad` set.
///
/// The closure is called as `f(params, want_grad)`: it must return the scalar
/// objective, and when `want_grad` is true it must also store the full
/// analytic gradient in each differentiable parameter's grad buffer.
pub fn grad_check<F>(
    mut f: F,
    params: &mut [Tensor],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&mut [Tensor], bool) -> Result<f64, NumericsError>,
{
    let base = f(params, true)?;
    if !base.is_finite() {
        return Err(NumericsError::NonFinite(format!(
            "objective at the unperturbed point: {base}"
        )));
    }
    let analytic: Vec<Option<Vec<f64>>> = params
        .iter()
        .map(|p| {
            if p.requires_grad() {
                p.grad().map(|g| g.to_vec())
            } else {
                None
            }
        })
        .collect();

    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0usize;

    for idx in 0..params.len() {
        let grads = match &analytic[idx] {
            Some(g) => g.clone(),
            None => continue,
        };
        let len = params[idx].numel();
        let coords: Vec<usize> = if len <= cfg.max_coords_per_param {
            (0..len).collect()
        } else {
            let mut all: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut all);
            all.truncate(cfg.max_coords_per_param);
            all
        };

        for coord in coords {
            let saved = params[idx].data()[coord];
            params[idx].data_mut()[coord] = saved + cfg.step;
            let plus = f(params, false)?;
            params[idx].data_mut()[coord] = saved - cfg.step;
            let minus = f(params, false)?;
            params[idx].data_mut()[coord] = saved;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericsError::NonFinite(format!(
                    "objective under perturbation of parameter {idx}[{coord}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grads[coord];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            let rel = if a == numeric {
                0.0
            } else {
                (a - numeric).abs() / denom
            };
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = Some((idx, coord));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_error: max_rel,
        coords_checked: checked,
        passed: max_rel <= cfg.tolerance,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_sharp() {
        // f = sum(theta^2), analytic gradient 2*theta.
        let mut rng = Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..8)
            .map(|_| {
                let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                sign * rng.uniform_in(0.25, 1.0)
            })
            .collect();
        let mut params = vec![Tensor::from_vec(&[8], data).unwrap()];
        params[0].enable_grad();
        let cfg = GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-8,
            max_coords_per_param: usize::MAX,
            seed: 0,
        };
        let report = grad_check(
            |params, want_grad| {
                let loss = params[0].data().iter().map(|v| v * v).sum();
                if want_grad {
                    let g = params[0].data().iter().map(|v| 2.0 * v).collect();
                    params[0].set_grad(g)?;
                }
                Ok(loss)
            },
            &mut params,
            &cfg,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-8,
            "rel error {}",
            report.max_rel_error
        );
        assert!(report.passed);
    }

    #[test]
    fn zero_function_reports_exactly_zero() {
        let mut params = vec![Tensor::zeros(&[4])];
        params[0].enable_grad();
        let report = grad_check(
            |params, want_grad| {
                if want_grad {
                    params[0].set_grad(vec![0.0; 4])?;
                }
                Ok(0.0)
            },
            &mut params,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut params = vec![Tensor::zeros(&[2])];
        params[0].enable_grad();
        let err = grad_check(
            |params, want_grad| {
                if want_grad {
                    params[0].set_grad(vec![0.0; 2])?;
                }
                Ok(f64::NAN)
            },
            &mut params,
            &GradCheckConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite(_)));
    }

    #[test]
    fn wrong_analytic_gradient_is_caught() {
        let mut params = vec![Tensor::from_vec(&[3], vec![0.5, -0.25, 0.75]).unwrap()];
        params[0].enable_grad();
        let report = grad_check(
            |params, want_grad| {
                let loss = params[0].data().iter().map(|v| v * v).sum();
                if want_grad {
                    // Deliberately missing the factor of 2.
                    params[0].set_grad(params[0].data().to_vec())?;
                }
                Ok(loss)
            },
            &mut params,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed);
        assert!(report.worst.is_some());
    }
}
