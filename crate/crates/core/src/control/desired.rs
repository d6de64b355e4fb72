use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One joint of a cosine trajectory with linear chirp:
/// `q(t) = offset + amplitude·cos(2π(frequency + chirp_rate·t)·t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpJoint {
    pub amplitude: f64,
    pub frequency: f64,
    pub chirp_rate: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub offset: f64,
}

impl ChirpJoint {
    /// `(q, q̇, q̈)` at time `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let psi = 2.0 * PI * (self.frequency * t + self.chirp_rate * t * t) + self.phase;
        let dpsi = 2.0 * PI * (self.frequency + 2.0 * self.chirp_rate * t);
        let ddpsi = 4.0 * PI * self.chirp_rate;
        let (s, c) = psi.sin_cos();
        let q = self.offset + self.amplitude * c;
        let qd = -self.amplitude * s * dpsi;
        let qdd = -self.amplitude * (c * dpsi * dpsi + s * ddpsi);
        (q, qd, qdd)
    }
}

/// Per-joint cosine-chirp reference with an optional time scaling
/// `q_s(t) = q(s·t)`, which scales velocities by `s` and accelerations by
/// `s²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChirpSpec {
    pub joints: Vec<ChirpJoint>,
    #[serde(default = "unit_scale")]
    pub velocity_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl ChirpSpec {
    pub fn new(joints: Vec<ChirpJoint>) -> Self {
        Self { joints, velocity_scale: 1.0 }
    }

    /// A reference whose joints use distinct frequencies.
    pub fn default_for(n: usize) -> Self {
        let joints = (0..n)
            .map(|i| ChirpJoint {
                amplitude: 0.8 / (1.0 + 0.5 * i as f64),
                frequency: 0.25 + 0.17 * i as f64,
                chirp_rate: 0.004,
                phase: 0.0,
                offset: 0.0,
            })
            .collect();
        Self::new(joints)
    }

    pub fn with_velocity_scale(&self, scale: f64) -> Self {
        Self { joints: self.joints.clone(), velocity_scale: scale }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// `(q, q̇, q̈)` at time `t`.
    pub fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let s = self.velocity_scale;
        let n = self.dof();
        let mut q = DVector::zeros(n);
        let mut qd = DVector::zeros(n);
        let mut qdd = DVector::zeros(n);
        for (i, j) in self.joints.iter().enumerate() {
            let (a, b, c) = j.eval(s * t);
            q[i] = a;
            qd[i] = s * b;
            qdd[i] = s * s * c;
        }
        (q, qd, qdd)
    }
}

/// Reference samples on a fixed time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredTrajectory {
    pub dt: f64,
    pub q: Vec<DVector<f64>>,
    pub qd: Vec<DVector<f64>>,
    pub qdd: Vec<DVector<f64>>,
}

impl DesiredTrajectory {
    /// Samples `spec` at `k·dt` for `k = 0..=steps`.
    pub fn sample(spec: &ChirpSpec, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let mut out = Self { dt, q: Vec::new(), qd: Vec::new(), qdd: Vec::new() };
        for k in 0..=steps {
            let (q, qd, qdd) = spec.eval(k as f64 * dt);
            out.q.push(q);
            out.qd.push(qd);
            out.qdd.push(qdd);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Sample index for time `t`, or `None` past the horizon.
    pub fn index(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt).round();
        if k >= 0.0 && (k as usize) < self.len() {
            Some(k as usize)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_differences() {
        let j = ChirpJoint { amplitude: 0.7, frequency: 0.4, chirp_rate: 0.05, phase: 0.3, offset: 0.1 };
        let h = 1e-5;
        for &t in &[0.0, 1.3, 7.9] {
            let (_, qd, qdd) = j.eval(t);
            let (qp, qdp, _) = j.eval(t + h);
            let (qm, qdm, _) = j.eval(t - h);
            assert!(((qp - qm) / (2.0 * h) - qd).abs() < 1e-8);
            assert!(((qdp - qdm) / (2.0 * h) - qdd).abs() < 1e-7);
        }
    }

    #[test]
    fn velocity_scaling() {
        let spec = ChirpSpec::default_for(2);
        let fast = spec.with_velocity_scale(2.0);
        let (q1, qd1, qdd1) = spec.eval(1.0);
        let (q2, qd2, qdd2) = fast.eval(0.5);
        assert!((q1 - q2).amax() < 1e-15);
        assert!((qd1 * 2.0 - qd2).amax() < 1e-12);
        assert!((qdd1 * 4.0 - qdd2).amax() < 1e-12);
    }
}
