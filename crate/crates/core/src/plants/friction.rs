use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrictionKind {
    #[default]
    None,
    Coulomb,
    Viscous,
    Stiction,
    Stribeck,
}

/// Per-joint white-box friction. Constants are non-negative; `nu` is the
/// stiction velocity scale (rad²/s²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FrictionModel {
    pub kind: FrictionKind,
    #[serde(default)]
    pub coulomb: Vec<f64>,
    #[serde(default)]
    pub viscous: Vec<f64>,
    #[serde(default)]
    pub stiction: Vec<f64>,
    #[serde(default)]
    pub nu: Vec<f64>,
    /// viscous part of the Stribeck model
    #[serde(default)]
    pub damping: Vec<f64>,
}

/// `sign` with `sign(0) = 0`.
#[inline]
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl FrictionModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn coulomb(tau_c: Vec<f64>) -> Self {
        Self { kind: FrictionKind::Coulomb, coulomb: tau_c, ..Self::default() }
    }

    pub fn viscous(rho: Vec<f64>) -> Self {
        Self { kind: FrictionKind::Viscous, viscous: rho, ..Self::default() }
    }

    pub fn stiction(tau_s: Vec<f64>, nu: Vec<f64>) -> Self {
        Self { kind: FrictionKind::Stiction, stiction: tau_s, nu, ..Self::default() }
    }

    pub fn stribeck(tau_c: Vec<f64>, tau_s: Vec<f64>, nu: Vec<f64>, d: Vec<f64>) -> Self {
        Self {
            kind: FrictionKind::Stribeck,
            coulomb: tau_c,
            stiction: tau_s,
            nu,
            damping: d,
            ..Self::default()
        }
    }

    /// Stiction makes the map from torque to acceleration non-invertible.
    pub fn breaks_time_reversibility(&self) -> bool {
        matches!(self.kind, FrictionKind::Stiction | FrictionKind::Stribeck)
    }

    pub fn validate(&self, dof: usize) -> Result<()> {
        let required: &[(&str, &Vec<f64>)] = match self.kind {
            FrictionKind::None => &[],
            FrictionKind::Coulomb => &[("coulomb", &self.coulomb)],
            FrictionKind::Viscous => &[("viscous", &self.viscous)],
            FrictionKind::Stiction => &[("stiction", &self.stiction), ("nu", &self.nu)],
            FrictionKind::Stribeck => &[
                ("coulomb", &self.coulomb),
                ("stiction", &self.stiction),
                ("nu", &self.nu),
                ("damping", &self.damping),
            ],
        };
        for (name, values) in required {
            if values.len() != dof {
                return Err(Error::InvalidArgument(format!(
                    "friction '{name}' needs {dof} entries, got {}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidArgument(format!("friction '{name}' must be non-negative")));
            }
        }
        if matches!(self.kind, FrictionKind::Stiction | FrictionKind::Stribeck)
            && self.nu.iter().any(|&v| v <= 0.0)
        {
            return Err(Error::InvalidArgument("stiction width nu must be positive".into()));
        }
        Ok(())
    }

    /// Generalized friction force `τ_f(q̇)`.
    pub fn torque(&self, qd: &DVector<f64>) -> DVector<f64> {
        let n = qd.len();
        DVector::from_fn(n, |i, _| {
            let v = qd[i];
            let s = sign0(v);
            match self.kind {
                FrictionKind::None => 0.0,
                FrictionKind::Coulomb => -self.coulomb[i] * s,
                FrictionKind::Viscous => -self.viscous[i] * v,
                FrictionKind::Stiction => -self.stiction[i] * s * (-v * v / self.nu[i]).exp(),
                FrictionKind::Stribeck => {
                    -(self.coulomb[i] + self.stiction[i] * (-v * v / self.nu[i]).exp()) * s
                        - self.damping[i] * v
                }
            }
        })
    }
}

/// Free-function form of [`FrictionModel::torque`].
pub fn friction_torque(model: &FrictionModel, qd: &DVector<f64>) -> DVector<f64> {
    model.torque(qd)
}
