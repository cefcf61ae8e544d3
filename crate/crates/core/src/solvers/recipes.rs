//! Parameter recipes: theoretical step sizes, epoch lengths and online
//! refresh-batch sizes.

use crate::error::{config, Result};

/// Which step size a recipe produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepVariant {
    /// `eta` for the plain quasi-Newton variants.
    Eta,
    /// `beta` for the momentum variants.
    Beta,
}

fn check_constants(l: f64, sigma_min: f64, sigma_max: f64) -> Result<()> {
    if !(l > 0.0 && l.is_finite()) {
        return config(format!("L must be positive and finite, got {l}"));
    }
    if !(sigma_min > 0.0 && sigma_min <= sigma_max && sigma_max.is_finite()) {
        return config(format!(
            "need 0 < sigma_min <= sigma_max, got {sigma_min} and {sigma_max}"
        ));
    }
    Ok(())
}

/// `eta = (1 + sqrt 5) s_min / (2 L s_max^2)` or
/// `beta = s_min / ((3 + sqrt 15) L s_max^2)`.
pub fn theoretical_stepsize(
    variant: StepVariant,
    l: f64,
    sigma_min: f64,
    sigma_max: f64,
) -> Result<f64> {
    check_constants(l, sigma_min, sigma_max)?;
    let s2 = sigma_max * sigma_max;
    Ok(match variant {
        StepVariant::Eta => (1.0 + 5f64.sqrt()) * sigma_min / (2.0 * l * s2),
        StepVariant::Beta => sigma_min / ((3.0 + 15f64.sqrt()) * l * s2),
    })
}

/// `q = |batch| = ceil(sqrt n)`.
pub fn theoretical_epoch(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}

/// `q = ceil(2n / batch)`, at least 1.
pub fn practical_epoch(n: usize, batch: usize) -> usize {
    (2 * n).div_ceil(batch.max(1)).max(1)
}

/// The descent constant of the online analysis for the given variant.
pub fn online_descent_constant(
    variant: StepVariant,
    l: f64,
    sigma_min: f64,
    sigma_max: f64,
) -> Result<f64> {
    let step = theoretical_stepsize(variant, l, sigma_min, sigma_max)?;
    Ok(match variant {
        StepVariant::Eta => {
            let e = step;
            0.5 * e * sigma_min
                - 0.5 * l * e * e * sigma_max * sigma_max
                - 0.5 * e.powi(3) * sigma_max.powi(3) * l * l
        }
        StepVariant::Beta => {
            let b = step;
            b * (0.5 * sigma_min - 3.0 * l * b * sigma_max * sigma_max
                - 3.0 * l * l * b * b * sigma_max.powi(3))
        }
    })
}

/// Online refresh batch `|xi_0|` for target accuracy `eps`; the minibatch
/// and epoch length are then `ceil(sqrt |xi_0|)`.
///
/// Fails when the descent constant is not positive, in which case the
/// formula has no meaning and the caller must pick `|xi_0|` directly.
pub fn online_refresh_batch(
    variant: StepVariant,
    l: f64,
    sigma_min: f64,
    sigma_max: f64,
    sigma1: f64,
    eps: f64,
) -> Result<usize> {
    if !(sigma1 > 0.0 && eps > 0.0) {
        return config("sigma1 and eps must be positive");
    }
    let bstar = online_descent_constant(variant, l, sigma_min, sigma_max)?;
    let step = theoretical_stepsize(variant, l, sigma_min, sigma_max)?;
    // at sigma_min == sigma_max the momentum constant is zero up to rounding
    if !(bstar > 1e-12 * step * sigma_min) {
        return config(format!(
            "descent constant is {bstar:.3e} <= 0 for L = {l}, sigma_min = {sigma_min}, \
             sigma_max = {sigma_max}; set the refresh batch explicitly"
        ));
    }
    let ratio = sigma1 * sigma1 / (eps * eps);
    let size = match variant {
        StepVariant::Eta => {
            (step * sigma_max / bstar + 2.0 + l * l * step.powi(3) * sigma_max.powi(3) / bstar)
                * 2.0
                * ratio
        }
        StepVariant::Beta => 4.0 * (1.0 + step / bstar) * ratio,
    };
    if !size.is_finite() || size > 1e15 {
        return config(format!("refresh batch {size:.3e} is too large"));
    }
    Ok((size.ceil() as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stepsize_reference_values() {
        let eta = theoretical_stepsize(StepVariant::Eta, 1.0, 1.0, 1.0).unwrap();
        assert!((eta - 1.618033989).abs() < 1e-9);
        let beta = theoretical_stepsize(StepVariant::Beta, 1.0, 1.0, 1.0).unwrap();
        assert!((beta - 0.145497224).abs() < 1e-9);
        for v in [StepVariant::Eta, StepVariant::Beta] {
            let a = theoretical_stepsize(v, 1.3, 0.4, 2.0).unwrap();
            let b = theoretical_stepsize(v, 2.6, 0.4, 2.0).unwrap();
            assert_eq!(a, 2.0 * b);
        }
    }

    #[test]
    fn stepsize_rejects_bad_constants() {
        for (l, a, b) in [(0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 2.0, 1.0), (-1.0, 1.0, 1.0)] {
            assert!(theoretical_stepsize(StepVariant::Eta, l, a, b).is_err());
        }
    }

    #[test]
    fn epoch_lengths() {
        assert_eq!(theoretical_epoch(1024), 32);
        assert_eq!(theoretical_epoch(1000), 32);
        assert_eq!(theoretical_epoch(1), 1);
        assert_eq!(practical_epoch(2000, 64), 63);
        assert_eq!(practical_epoch(1280, 256), 10);
        assert_eq!(practical_epoch(10, 256), 1);
    }

    #[test]
    fn online_recipe_signs() {
        // the plain variant's constant is negative for every admissible input
        for (l, a, b) in [(1.0, 1.0, 1.0), (2.0, 0.1, 3.0), (0.5, 0.9, 1.0)] {
            assert!(online_descent_constant(StepVariant::Eta, l, a, b).unwrap() < 0.0);
            assert!(online_refresh_batch(StepVariant::Eta, l, a, b, 1.0, 0.1).is_err());
        }
        // the momentum variant's constant is positive only for sigma_min < sigma_max
        assert!(online_refresh_batch(StepVariant::Beta, 1.0, 1.0, 1.0, 1.0, 0.1).is_err());
        let n = online_refresh_batch(StepVariant::Beta, 1.0, 0.5, 1.0, 1.0, 0.5).unwrap();
        let b = theoretical_stepsize(StepVariant::Beta, 1.0, 0.5, 1.0).unwrap();
        let bstar = b * (0.25 - 3.0 * b - 3.0 * b * b);
        assert_eq!(n, (16.0 * (1.0 + b / bstar)).ceil() as usize);
    }
}
