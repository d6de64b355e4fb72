use nalgebra::DVector;

use crate::error::{Error, Result};

/// Default position-MSE threshold for the valid prediction time.
pub const DEFAULT_VPT_THRESHOLD: f64 = 1e-2;

/// Variance floor used when normalizing errors.
pub const VARIANCE_FLOOR: f64 = 1e-8;

fn check_lengths(pred: &[DVector<f64>], target: &[DVector<f64>]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::InputShape { expected: target.len(), got: pred.len() });
    }
    if target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = target[0].len();
    if let Some(bad) = pred.iter().chain(target).find(|v| v.len() != n) {
        return Err(Error::InputShape { expected: n, got: bad.len() });
    }
    Ok(())
}

/// Per-dimension population variance.
pub fn variance(series: &[DVector<f64>]) -> DVector<f64> {
    let n = series.first().map_or(0, |v| v.len());
    let count = series.len().max(1) as f64;
    let mean = series.iter().fold(DVector::zeros(n), |acc, v| acc + v) / count;
    series
        .iter()
        .fold(DVector::zeros(n), |acc, v| acc + (v - &mean).map(|d| d * d))
        / count
}

/// Per-dimension mean squared error.
pub fn mse_per_dim(pred: &[DVector<f64>], target: &[DVector<f64>]) -> Result<DVector<f64>> {
    check_lengths(pred, target)?;
    let n = target[0].len();
    let sum = pred
        .iter()
        .zip(target)
        .fold(DVector::zeros(n), |acc, (p, t)| acc + (p - t).map(|d| d * d));
    Ok(sum / target.len() as f64)
}

/// Mean squared error divided by the per-dimension target variance,
/// averaged over dimensions.
pub fn nmse(pred: &[DVector<f64>], target: &[DVector<f64>]) -> Result<f64> {
    let mse = mse_per_dim(pred, target)?;
    let var = variance(target);
    let n = mse.len() as f64;
    Ok(mse.iter().zip(var.iter()).map(|(m, v)| m / v.max(VARIANCE_FLOOR)).sum::<f64>() / n)
}

/// Time until the mean squared position error first exceeds `threshold`:
/// `k·dt` for the first such index `k ≥ 1`, else the full horizon.
pub fn vpt(pred: &[DVector<f64>], truth: &[DVector<f64>], dt: f64, threshold: f64) -> Result<f64> {
    check_lengths(pred, truth)?;
    for k in 1..truth.len() {
        let e = &pred[k] - &truth[k];
        let mse = e.norm_squared() / e.len() as f64;
        if !(mse <= threshold) {
            return Ok(k as f64 * dt);
        }
    }
    Ok((truth.len() - 1) as f64 * dt)
}

/// [`vpt`] for a prediction that may have stopped early (diverged); the
/// step after the last predicted state counts as a violation.
pub fn vpt_partial(pred: &[DVector<f64>], truth: &[DVector<f64>], dt: f64, threshold: f64) -> Result<f64> {
    if pred.len() >= truth.len() {
        return vpt(&pred[..truth.len()], truth, dt, threshold);
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let full = vpt(pred, &truth[..pred.len()], dt, threshold)?;
    if full < (pred.len() - 1) as f64 * dt {
        Ok(full)
    } else {
        Ok(pred.len() as f64 * dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn identical_trajectories() {
        let t: Vec<_> = (0..20).map(|k| dvector![k as f64, (k as f64).sin()]).collect();
        assert_eq!(vpt(&t, &t, 0.1, 1e-2).unwrap(), 19.0 * 0.1);
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_fails_at_first_step() {
        let t: Vec<_> = (0..20).map(|k| dvector![k as f64, 0.5]).collect();
        let p: Vec<_> = t.iter().map(|v| v.add_scalar(0.2)).collect();
        assert_eq!(vpt(&p, &t, 0.01, 1e-2).unwrap(), 0.01);
    }

    #[test]
    fn length_mismatch() {
        let t = vec![dvector![1.0]; 3];
        assert!(nmse(&t[..2], &t).is_err());
    }

    #[test]
    fn partial_prediction() {
        let t: Vec<_> = (0..10).map(|k| dvector![k as f64]).collect();
        assert_eq!(vpt_partial(&t[..4], &t, 1.0, 1e-2).unwrap(), 4.0);
    }
}
