use crate::error::{Error, Result};

/// Shortest series accepted by [`filtfilt`].
pub const MIN_FILTER_LEN: usize = 10;

/// Default low-pass cutoff as a fraction of the Nyquist frequency.
pub const DEFAULT_CUTOFF: f64 = 0.1;

/// Second-order Butterworth low-pass (bilinear transform), `a₀ = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// `cutoff` is a fraction of Nyquist in `(0, 1)`.
    pub fn butterworth_lowpass(cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < 1.0) {
            return Err(Error::InvalidArgument(format!("cutoff must lie in (0, 1), got {cutoff}")));
        }
        let k = (std::f64::consts::FRAC_PI_2 * cutoff).tan();
        let s2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + s2 * k + k * k);
        let b0 = k * k * norm;
        Ok(Self {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - s2 * k + k * k) * norm],
        })
    }

    /// Direct form II transposed, starting from the steady state of `x[0]`.
    fn run(&self, x: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let x0 = x.first().copied().unwrap_or(0.0);
        let mut z1 = (gain - b0) * x0;
        let mut z2 = (b2 - a2 * gain) * x0;
        x.iter()
            .map(|&xi| {
                let y = b0 * xi + z1;
                z1 = b1 * xi - a1 * y + z2;
                z2 = b2 * xi - a2 * y;
                y
            })
            .collect()
    }
}

/// Zero-phase forward-backward filtering with odd-reflection padding.
pub fn filtfilt(filter: &Biquad, x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < MIN_FILTER_LEN {
        return Err(Error::InvalidArgument(format!(
            "series of length {n} is shorter than the filter warm-up ({MIN_FILTER_LEN})"
        )));
    }
    let pad = 9.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let mut y = filter.run(&ext);
    y.reverse();
    let mut y = filter.run(&y);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// Central differences in the interior, one-sided second-order stencils at
/// the ends.
pub fn central_difference(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    if n < 3 {
        return vec![0.0; n];
    }
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt);
    for i in 1..n - 1 {
        d[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
    }
    d[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * dt);
    d
}

/// Velocity and acceleration of one position channel: central differences,
/// each followed by zero-phase low-pass filtering.
pub fn differentiate_and_filter(positions: &[f64], dt: f64, cutoff: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let filter = Biquad::butterworth_lowpass(cutoff)?;
    let qd = filtfilt(&filter, &central_difference(positions, dt))?;
    let qdd = filtfilt(&filter, &central_difference(&qd, dt))?;
    Ok((qd, qdd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_dc_gain() {
        let f = Biquad::butterworth_lowpass(0.2).unwrap();
        let g = f.b.iter().sum::<f64>() / f.a.iter().sum::<f64>();
        assert!((g - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_series_is_fixed_point() {
        let x = vec![0.7; 50];
        let (qd, qdd) = differentiate_and_filter(&x, 0.01, 0.1).unwrap();
        assert!(qd.iter().chain(&qdd).all(|v| v.abs() < 1e-12));
        let y = filtfilt(&Biquad::butterworth_lowpass(0.1).unwrap(), &x).unwrap();
        assert!(y.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn rejects_short_series() {
        assert!(differentiate_and_filter(&[0.0; 9], 0.01, 0.1).is_err());
    }
}
