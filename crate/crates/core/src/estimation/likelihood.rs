use super::ForcedStopObservation;
use crate::distributions::MixtureGamma;
use crate::error::{domain, Result};

/// Log-likelihood of forced waits as right-censored patience draws:
/// discharges contribute the log density, waits the patron sat out
/// contribute the log survival. Returns `-inf` when any term vanishes.
pub fn censored_log_likelihood(
    params: &MixtureGamma,
    observations: &[ForcedStopObservation],
) -> Result<f64> {
    if observations.is_empty() {
        return Err(domain("log-likelihood of an empty sample"));
    }
    params.validate()?;
    if observations.iter().any(|o| !(o.wait >= 0.0)) {
        return Err(domain("forced waits must be non-negative"));
    }
    Ok(log_likelihood_unchecked(params, observations))
}

pub(super) fn log_likelihood_unchecked(
    params: &MixtureGamma,
    observations: &[ForcedStopObservation],
) -> f64 {
    let kernel = params.kernel();
    let mut ll = 0.0;
    for o in observations {
        let term = if o.discharged {
            kernel.ln_pdf(o.wait)
        } else {
            let s = kernel.survival(o.wait);
            if s > 0.0 {
                s.ln()
            } else {
                f64::NEG_INFINITY
            }
        };
        if !term.is_finite() {
            return f64::NEG_INFINITY;
        }
        ll += term;
    }
    ll
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(wait: f64, discharged: bool) -> [ForcedStopObservation; 1] {
        [ForcedStopObservation {
            location: 10.0,
            wait,
            discharged,
            instance: 1,
        }]
    }

    #[test]
    fn unit_exponential() {
        let m = MixtureGamma::new(1.0, 1.0, 1.0, 2.0, 2.0).unwrap();
        assert!((censored_log_likelihood(&m, &one(1.0, true)).unwrap() + 1.0).abs() < 1e-12);
        assert!((censored_log_likelihood(&m, &one(1.0, false)).unwrap() + 1.0).abs() < 1e-12);
        assert!(censored_log_likelihood(&m, &[]).is_err());
        assert!(censored_log_likelihood(&m, &one(-1.0, true)).is_err());
    }

    #[test]
    fn sentinel_for_impossible_terms() {
        // k > 1 gives zero density at zero
        let m = MixtureGamma::new(1.0, 3.0, 1.0, 3.0, 1.0).unwrap();
        assert_eq!(censored_log_likelihood(&m, &one(0.0, true)).unwrap(), f64::NEG_INFINITY);
    }
}
