//! Parameter sweeps and Richardson extrapolation.
//!
//! Probe identities hold in the limit of a large spectral parameter. The
//! probes evaluate their pairings on a geometric sweep and extrapolate,
//! assuming the leading correction decays algebraically, `y(p) = a + b p^-r`
//! with `r` estimated from successive increments.

use crate::error::{Error, Result};
use crate::la::C64;

/// Result of extrapolating a sweep to `p -> infinity`.
#[derive(Debug, Clone, Copy)]
pub struct Extrapolated {
    pub limit: C64,
    /// Decay exponent of the leading correction fitted from increments.
    pub fitted_rate: f64,
    /// Conservative error indicator: spread of the last two extrapolants
    /// plus a projection of the next correction.
    pub error_estimate: f64,
    /// Set when increments fail to decrease or the fitted rate is below 0.5.
    pub inconclusive: bool,
}

fn check_geometric(params: &[f64]) -> Result<f64> {
    if params.len() < 3 {
        return Err(Error::Extrapolation(format!(
            "need at least 3 sweep values, got {}",
            params.len()
        )));
    }
    let mut ratio = 0.0;
    for w in params.windows(2) {
        if !(w[1] > w[0] && w[0] > 0.0) {
            return Err(Error::Extrapolation(
                "sweep parameters must be positive and increasing".into(),
            ));
        }
        let r = w[1] / w[0];
        if ratio == 0.0 {
            ratio = r;
        } else if (r / ratio - 1.0).abs() > 0.01 {
            return Err(Error::Extrapolation(format!(
                "sweep is not geometric: ratios {ratio} vs {r}"
            )));
        }
    }
    if ratio < 2.0 - 1e-12 {
        return Err(Error::Extrapolation(format!(
            "sweep ratio {ratio} below required factor 2"
        )));
    }
    Ok(ratio)
}

/// Extrapolates a geometric sweep of complex values to its limit.
///
/// The scale floor `scale` decides when increments count as converged to
/// machine noise rather than as a decaying correction.
pub fn extrapolate(params: &[f64], values: &[C64], scale: f64) -> Result<Extrapolated> {
    if params.len() != values.len() {
        return Err(Error::Extrapolation("params/values length mismatch".into()));
    }
    let ratio = check_geometric(params)?;
    let n = values.len();
    let floor = 1e-13 * scale.max(1e-300);

    let deltas: Vec<C64> = (1..n).map(|k| values[k] - values[k - 1]).collect();
    let dmags: Vec<f64> = deltas.iter().map(|d| d.norm()).collect();

    // Already flat to machine noise: take the last value as the limit.
    if dmags.iter().all(|&m| m <= floor) {
        return Ok(Extrapolated {
            limit: values[n - 1],
            fitted_rate: f64::INFINITY,
            error_estimate: dmags.iter().cloned().fold(0.0, f64::max) + floor,
            inconclusive: false,
        });
    }

    // Rate from the last resolvable pair of increments.
    let mut fitted_rate = f64::NAN;
    for k in (1..dmags.len()).rev() {
        if dmags[k] > floor && dmags[k - 1] > floor {
            fitted_rate = (dmags[k - 1] / dmags[k]).ln() / ratio.ln();
            break;
        }
    }
    if fitted_rate.is_nan() {
        // A single resolvable increment: no rate information.
        let last = *dmags.last().unwrap();
        return Ok(Extrapolated {
            limit: values[n - 1],
            fitted_rate: f64::NAN,
            error_estimate: last,
            inconclusive: true,
        });
    }

    let mut inconclusive = false;
    if fitted_rate < 0.5 {
        inconclusive = true;
    }
    for k in 1..dmags.len() {
        if dmags[k] > dmags[k - 1] + floor && dmags[k] > floor {
            inconclusive = true;
        }
    }

    let denom = ratio.powf(fitted_rate.max(0.0)) - 1.0;
    let richardson = |yk: C64, yk1: C64| -> C64 {
        if denom <= 0.0 {
            yk1
        } else {
            yk1 + (yk1 - yk) / denom
        }
    };
    let a_last = richardson(values[n - 2], values[n - 1]);
    let a_prev = richardson(values[n - 3], values[n - 2]);
    let correction = (a_last - values[n - 1]).norm();
    let next_correction = if fitted_rate.is_finite() && fitted_rate > 0.0 {
        correction * ratio.powf(-fitted_rate)
    } else {
        correction
    };
    Ok(Extrapolated {
        limit: a_last,
        fitted_rate,
        error_estimate: (a_last - a_prev).norm() + next_correction + floor,
        inconclusive,
    })
}

/// Least-squares slope of `ln |y|` against `ln p`. Returns the decay
/// exponent `r` in `|y| ~ C p^-r` (positive for decaying data).
pub fn fit_decay_exponent(params: &[f64], magnitudes: &[f64]) -> Result<f64> {
    if params.len() != magnitudes.len() || params.len() < 2 {
        return Err(Error::Extrapolation("need >= 2 samples for a rate fit".into()));
    }
    if magnitudes.iter().any(|&m| m <= 0.0) {
        return Err(Error::Extrapolation("decay fit needs positive magnitudes".into()));
    }
    let xs: Vec<f64> = params.iter().map(|p| p.ln()).collect();
    let ys: Vec<f64> = magnitudes.iter().map(|m| m.ln()).collect();
    Ok(-ls_slope(&xs, &ys))
}

/// Least-squares slope of `ln |y|` against `p` itself; strongly negative
/// slopes indicate exponential decay in the sweep parameter.
pub fn fit_exponential_rate(params: &[f64], magnitudes: &[f64]) -> Result<f64> {
    if params.len() != magnitudes.len() || params.len() < 2 {
        return Err(Error::Extrapolation("need >= 2 samples for a rate fit".into()));
    }
    if magnitudes.iter().any(|&m| m <= 0.0) {
        return Err(Error::Extrapolation("decay fit needs positive magnitudes".into()));
    }
    let ys: Vec<f64> = magnitudes.iter().map(|m| m.ln()).collect();
    Ok(-ls_slope(params, &ys))
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
