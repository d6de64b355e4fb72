//! Analytic rigid-body plants used as data generators and ground truth.
//!
//! Every plant has two generalized coordinates. Conventions:
//!
//! * two-link pendulum: `q = (θ₁, θ₂)`, absolute shoulder angle and relative
//!   elbow angle, both zero when hanging straight down.
//! * cartpole: `q = (x, θ)`, cart position and pole angle, `θ = 0` upright,
//!   positive `θ` tilts the pole towards `+x`. Only the cart is actuated.
//! * Furuta pendulum: `q = (φ, θ)`, arm and pendulum angles, `θ = 0`
//!   upright. Only the arm is actuated.
//!
//! Angles are kept unwrapped; periodic features are applied at the model
//! boundary.

pub(crate) mod base;
mod friction;

pub use friction::{friction_torque, sign0, FrictionKind, FrictionModel};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    TwoLinkPendulum,
    Cartpole,
    Furuta,
}

impl PlantKind {
    pub fn name(self) -> &'static str {
        match self {
            PlantKind::TwoLinkPendulum => "two_link_pendulum",
            PlantKind::Cartpole => "cartpole",
            PlantKind::Furuta => "furuta",
        }
    }

    /// Index of the passive pendulum coordinate for underactuated plants.
    pub fn pendulum_index(self) -> Option<usize> {
        match self {
            PlantKind::TwoLinkPendulum => None,
            PlantKind::Cartpole | PlantKind::Furuta => Some(1),
        }
    }

    /// Which coordinates are revolute (periodic) joints.
    pub fn revolute(self) -> [bool; 2] {
        match self {
            PlantKind::TwoLinkPendulum | PlantKind::Furuta => [true, true],
            PlantKind::Cartpole => [false, true],
        }
    }
}

impl fmt::Display for PlantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_link_pendulum" | "two-link" | "two_link" => Ok(PlantKind::TwoLinkPendulum),
            "cartpole" => Ok(PlantKind::Cartpole),
            "furuta" => Ok(PlantKind::Furuta),
            other => Err(Error::UnsupportedPlant(other.to_string())),
        }
    }
}

/// One rigid body. `com` is measured from the body's joint; `inertia` is the
/// rotational inertia about the center of mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub mass: f64,
    pub length: f64,
    pub com: f64,
    pub inertia: f64,
}

impl LinkParams {
    pub fn point_mass(mass: f64, length: f64) -> Self {
        Self { mass, length, com: length, inertia: 0.0 }
    }

    /// Uniform slender rod.
    pub fn rod(mass: f64, length: f64) -> Self {
        Self { mass, length, com: 0.5 * length, inertia: mass * length * length / 12.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub kind: PlantKind,
    pub links: [LinkParams; 2],
    pub gravity: f64,
}

impl PlantParams {
    pub fn default_for(kind: PlantKind) -> Self {
        let links = match kind {
            PlantKind::TwoLinkPendulum => [LinkParams::point_mass(1.0, 1.0), LinkParams::point_mass(1.0, 1.0)],
            PlantKind::Cartpole => [
                LinkParams { mass: 1.0, length: 0.0, com: 0.0, inertia: 0.0 },
                LinkParams::rod(0.1, 0.5),
            ],
            PlantKind::Furuta => [LinkParams::rod(0.024, 0.095), LinkParams::rod(0.128, 0.085)],
        };
        Self { kind, links, gravity: 9.81 }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, link) in self.links.iter().enumerate() {
            if !(link.mass > 0.0) {
                return Err(Error::InvalidArgument(format!("link {i} mass must be positive")));
            }
            if !(link.inertia >= 0.0) || !(link.com >= 0.0) {
                return Err(Error::InvalidArgument(format!("link {i} inertia and com must be non-negative")));
            }
            let needs_length = !(self.kind == PlantKind::Cartpole && i == 0);
            if needs_length && !(link.length > 0.0) {
                return Err(Error::InvalidArgument(format!("link {i} length must be positive")));
            }
        }
        if self.kind != PlantKind::Cartpole && !(self.links[1].com > 0.0) {
            return Err(Error::InvalidArgument("second link needs a positive com offset".into()));
        }
        if self.kind == PlantKind::Cartpole && !(self.links[1].com > 0.0) {
            return Err(Error::InvalidArgument("pole needs a positive com offset".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let params: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plant params serialize")
    }
}

/// Analytic plant: mass matrix, Coriolis, gravity and energy in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub params: PlantParams,
}

impl Plant {
    pub fn new(params: PlantParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn default_for(kind: PlantKind) -> Self {
        Self { params: PlantParams::default_for(kind) }
    }

    pub fn kind(&self) -> PlantKind {
        self.params.kind
    }

    pub fn dof(&self) -> usize {
        2
    }

    /// Base inertial parameters of the linear-in-parameters inverse
    /// dynamics; see [`crate::sysid`].
    ///
    /// * two-link: `(I₁ + m₁r₁² + m₂l₁², I₂ + m₂r₂², m₂l₁r₂, (m₁r₁ + m₂l₁)g, m₂r₂g)`
    /// * cartpole: `(M + m, m r, I + m r², m r g)`
    /// * Furuta: `(I_a + m_a r_a² + m_p l_a², I_p + m_p r_p², m_p l_a r_p, m_p r_p g)`
    pub fn base_parameters(&self) -> Vec<f64> {
        let [a, b] = self.params.links;
        let g = self.params.gravity;
        match self.kind() {
            PlantKind::TwoLinkPendulum => vec![
                a.inertia + a.mass * a.com * a.com + b.mass * a.length * a.length,
                b.inertia + b.mass * b.com * b.com,
                b.mass * a.length * b.com,
                (a.mass * a.com + b.mass * a.length) * g,
                b.mass * b.com * g,
            ],
            PlantKind::Cartpole => vec![
                a.mass + b.mass,
                b.mass * b.com,
                b.inertia + b.mass * b.com * b.com,
                b.mass * b.com * g,
            ],
            PlantKind::Furuta => vec![
                a.inertia + a.mass * a.com * a.com + b.mass * a.length * a.length,
                b.inertia + b.mass * b.com * b.com,
                b.mass * a.length * b.com,
                b.mass * b.com * g,
            ],
        }
    }

    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        base::mass_matrix(self.kind(), &self.base_parameters(), q)
    }

    /// `∂H/∂q_k` for every coordinate `k`.
    pub fn mass_matrix_derivative(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        base::mass_matrix_derivative(self.kind(), &self.base_parameters(), q)
    }

    /// Centripetal and Coriolis forces, written out per plant.
    pub fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        base::coriolis(self.kind(), &self.base_parameters(), q, qd)
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        base::potential(self.kind(), &self.base_parameters(), q)
    }

    /// `g(q) = ∂V/∂q`.
    pub fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        base::gravity(self.kind(), &self.base_parameters(), q)
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        0.5 * qd.dot(&(self.mass_matrix(q) * qd))
    }

    pub fn energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        self.kinetic_energy(q, qd) + self.potential(q)
    }

    /// `q̈ = H⁻¹(τ + τ_f − c − g)`.
    pub fn forward(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        tau: &DVector<f64>,
        friction: &FrictionModel,
    ) -> DVector<f64> {
        let rhs = tau + friction.torque(qd) - self.coriolis(q, qd) - self.gravity(q);
        self.mass_matrix(q)
            .cholesky()
            .expect("analytic mass matrix is positive definite")
            .solve(&rhs)
    }

    /// Control torque that produces `q̈`: `H q̈ + c + g − τ_f`.
    pub fn inverse(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        friction: &FrictionModel,
    ) -> DVector<f64> {
        self.mass_matrix(q) * qdd + self.coriolis(q, qd) + self.gravity(q) - friction.torque(qd)
    }

    /// `Ḣ = Σ_k ∂H/∂q_k q̇_k`.
    pub fn mass_matrix_rate(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        self.mass_matrix_derivative(q)
            .iter()
            .zip(qd.iter())
            .fold(DMatrix::zeros(2, 2), |acc, (d, v)| acc + d * *v)
    }

    /// Momentum `p = H q̇` and its rate `ṗ = Ḣ q̇ + H q̈` under control `tau`.
    pub fn to_hamiltonian_observation(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        tau: &DVector<f64>,
        friction: &FrictionModel,
    ) -> (DVector<f64>, DVector<f64>) {
        let h = self.mass_matrix(q);
        let qdd = self.forward(q, qd, tau, friction);
        let p = &h * qd;
        let pd = self.mass_matrix_rate(q, qd) * qd + h * qdd;
        (p, pd)
    }

    /// Upright rest configuration for underactuated plants, hanging rest
    /// for the two-link pendulum.
    pub fn target_state(&self) -> DVector<f64> {
        DVector::zeros(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn two_link_equilibrium() {
        let plant = Plant::default_for(PlantKind::TwoLinkPendulum);
        let q = dvector![0.0, 0.0];
        assert_eq!(plant.gravity(&q), dvector![0.0, 0.0]);
        assert_eq!(plant.coriolis(&q, &dvector![0.0, 0.0]), dvector![0.0, 0.0]);
    }

    #[test]
    fn cartpole_upright_is_equilibrium() {
        let plant = Plant::default_for(PlantKind::Cartpole);
        let qdd = plant.forward(&dvector![0.3, 0.0], &dvector![0.0, 0.0], &dvector![0.0, 0.0], &FrictionModel::none());
        assert_eq!(qdd, dvector![0.0, 0.0]);
    }

    #[test]
    fn forward_inverse_round_trip() {
        for kind in [PlantKind::TwoLinkPendulum, PlantKind::Cartpole, PlantKind::Furuta] {
            let plant = Plant::default_for(kind);
            let q = dvector![0.4, -1.1];
            let qd = dvector![1.3, -0.6];
            let qdd = dvector![-2.0, 0.7];
            let tau = plant.inverse(&q, &qd, &qdd, &FrictionModel::none());
            let back = plant.forward(&q, &qd, &tau, &FrictionModel::none());
            assert!((back - qdd).amax() < 1e-10);
        }
    }

    #[test]
    fn gravity_is_potential_gradient() {
        for kind in [PlantKind::TwoLinkPendulum, PlantKind::Cartpole, PlantKind::Furuta] {
            let plant = Plant::default_for(kind);
            let q = dvector![0.7, 2.1];
            let g = plant.gravity(&q);
            for k in 0..2 {
                let h = 1e-6;
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[k] += h;
                qm[k] -= h;
                let fd = (plant.potential(&qp) - plant.potential(&qm)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-8 * g[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn params_round_trip_through_toml() {
        let params = PlantParams::default_for(PlantKind::Furuta);
        let back = PlantParams::from_toml(&params.to_toml()).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn rejects_non_positive_mass() {
        let mut params = PlantParams::default_for(PlantKind::Cartpole);
        params.links[1].mass = 0.0;
        assert!(Plant::new(params).is_err());
        assert!("pogo".parse::<PlantKind>().is_err());
    }
}
