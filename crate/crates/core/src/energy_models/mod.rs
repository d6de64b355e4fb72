//! Learnable energy parametrizations: structured and black-box
//! Lagrangians and Hamiltonians.
//!
//! Structured models keep the kinetic energy as an explicit positive
//! definite quadratic form and learn the potential with a separate network.
//! Black-box models learn a single scalar network over `(q, q̇)` or `(q, p)`.

mod features;
mod io;
mod mass;
mod scalar;

pub use features::{FeatureKind, FeatureTransform};
pub use io::{model_from_str, model_to_string, MODEL_HEADER};
pub use mass::{assemble_mass_matrix, default_alpha, raw_dim, MassMatrixHead, DEFAULT_EPSILON};

pub(crate) use mass::MassEval;
pub(crate) use scalar::{PotentialEval, ScalarEval};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Activation, Net, NetSpec, Order};
use crate::error::{Error, Result};
use crate::plants::Plant;

pub const DEFAULT_HESSIAN_DAMPING: f64 = 1e-6;
pub const DEFAULT_CONDITION_BOUND: f64 = 1e8;

/// Scalar potential `V(q)` and its gradient.
pub trait Potential {
    fn dof(&self) -> usize;
    /// `(V, ∂V/∂q)`
    fn potential(&self, q: &DVector<f64>) -> (f64, DVector<f64>);
}

/// Mass matrix `H(q)` and `∂H/∂q_k` for each `k`.
pub trait MassPotential: Potential {
    fn mass_matrix(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>);
}

/// Inverse mass matrix `B(q) = H(q)⁻¹` and `∂B/∂q_k`.
pub trait InverseMassPotential: Potential {
    fn inverse_mass_matrix(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>);
}

impl Potential for Plant {
    fn dof(&self) -> usize {
        Plant::dof(self)
    }
    fn potential(&self, q: &DVector<f64>) -> (f64, DVector<f64>) {
        (Plant::potential(self, q), self.gravity(q))
    }
}

impl MassPotential for Plant {
    fn mass_matrix(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        (Plant::mass_matrix(self, q), self.mass_matrix_derivative(q))
    }
}

/// Hamiltonian view of any mass/potential pair: `B = H⁻¹`,
/// `∂B/∂q_k = −B (∂H/∂q_k) B`.
#[derive(Debug, Clone)]
pub struct Inverted<M>(pub M);

impl<M: Potential> Potential for Inverted<M> {
    fn dof(&self) -> usize {
        self.0.dof()
    }
    fn potential(&self, q: &DVector<f64>) -> (f64, DVector<f64>) {
        self.0.potential(q)
    }
}

impl<M: MassPotential> InverseMassPotential for Inverted<M> {
    fn inverse_mass_matrix(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let (h, dh) = self.0.mass_matrix(q);
        let b = h.cholesky().expect("mass matrix is positive definite").inverse();
        let db = dh.iter().map(|d| -(&b * d * &b)).collect();
        (b, db)
    }
}

/// Flat access to all trainable parameters of a model.
pub trait Parametric {
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, values: &[f64]) -> Result<()>;
}

fn concat(nets: &[&Net]) -> Vec<f64> {
    nets.iter().flat_map(|n| n.params.iter().copied()).collect()
}

fn scatter(nets: &mut [&mut Net], values: &[f64]) -> Result<()> {
    let total: usize = nets.iter().map(|n| n.param_count()).sum();
    if values.len() != total {
        return Err(Error::InputShape { expected: total, got: values.len() });
    }
    let mut offset = 0;
    for net in nets.iter_mut() {
        let len = net.param_count();
        net.params.copy_from_slice(&values[offset..offset + len]);
        offset += len;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "delan-structured")]
    StructuredLagrangian,
    #[serde(rename = "hnn-structured")]
    StructuredHamiltonian,
    #[serde(rename = "delan-blackbox")]
    BlackBoxLagrangian,
    #[serde(rename = "hnn-blackbox")]
    BlackBoxHamiltonian,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::StructuredLagrangian,
        ModelVariant::StructuredHamiltonian,
        ModelVariant::BlackBoxLagrangian,
        ModelVariant::BlackBoxHamiltonian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::StructuredLagrangian => "delan-structured",
            ModelVariant::StructuredHamiltonian => "hnn-structured",
            ModelVariant::BlackBoxLagrangian => "delan-blackbox",
            ModelVariant::BlackBoxHamiltonian => "hnn-blackbox",
        }
    }

    /// Whether the model state is `(q, p)` rather than `(q, q̇)`.
    pub fn is_hamiltonian(self) -> bool {
        matches!(self, ModelVariant::StructuredHamiltonian | ModelVariant::BlackBoxHamiltonian)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model variant '{s}'")))
    }
}

/// Architecture and constants shared by all variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epsilon: f64,
    pub alpha: f64,
    pub hessian_damping: f64,
    pub condition_bound: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Softplus,
            epsilon: DEFAULT_EPSILON,
            alpha: default_alpha(),
            hessian_damping: DEFAULT_HESSIAN_DAMPING,
            condition_bound: DEFAULT_CONDITION_BOUND,
        }
    }
}

fn mass_head<R: Rng + ?Sized>(ft: &FeatureTransform, cfg: &ModelConfig, rng: &mut R) -> Result<MassMatrixHead> {
    let spec = NetSpec::uniform(ft.feature_dim(), &cfg.hidden, raw_dim(ft.dof()), cfg.activation)?;
    MassMatrixHead::from_net(ft.dof(), cfg.epsilon, cfg.alpha, Net::init(spec, rng))
}

fn scalar_net<R: Rng + ?Sized>(input_dim: usize, cfg: &ModelConfig, rng: &mut R) -> Result<Net> {
    Ok(Net::init(NetSpec::uniform(input_dim, &cfg.hidden, 1, cfg.activation)?, rng))
}

fn check_scalar(net: &Net, input_dim: usize) -> Result<()> {
    if net.spec.input_dim != input_dim || net.spec.output_dim != 1 {
        return Err(Error::InputShape { expected: input_dim, got: net.spec.input_dim });
    }
    Ok(())
}

/// `L = ½ q̇ᵀ H(q) q̇ − V(q)` with `H` from a Cholesky head.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredLagrangianModel {
    pub features: FeatureTransform,
    pub mass: MassMatrixHead,
    pub potential: Net,
}

impl StructuredLagrangianModel {
    pub fn new<R: Rng + ?Sized>(features: FeatureTransform, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mass = mass_head(&features, cfg, rng)?;
        let potential = scalar_net(features.feature_dim(), cfg, rng)?;
        Ok(Self { features, mass, potential })
    }

    pub fn from_parts(features: FeatureTransform, mass: MassMatrixHead, potential: Net) -> Result<Self> {
        if mass.n != features.dof() || mass.net.spec.input_dim != features.feature_dim() {
            return Err(Error::InputShape { expected: features.feature_dim(), got: mass.net.spec.input_dim });
        }
        check_scalar(&potential, features.feature_dim())?;
        Ok(Self { features, mass, potential })
    }

    pub fn dof(&self) -> usize {
        self.features.dof()
    }

    pub(crate) fn mass_eval(&self, q: &[f64]) -> MassEval<'_> {
        self.mass.evaluate(&self.features, q)
    }

    pub(crate) fn potential_eval(&self, q: &[f64]) -> PotentialEval<'_> {
        PotentialEval::new(&self.potential, &self.features, q)
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        let (h, _) = self.mass_matrix(q);
        0.5 * qd.dot(&(h * qd))
    }

    pub fn lagrangian_value(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        self.kinetic_energy(q, qd) - self.potential(q).0
    }

    pub fn energy_value(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        self.kinetic_energy(q, qd) + self.potential(q).0
    }

    /// `p = H(q) q̇`
    pub fn generalized_momentum(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        self.mass_matrix(q).0 * qd
    }

    /// Adds `c` to the potential output bias.
    pub fn shift_potential(&mut self, c: f64) {
        let at = self.potential.spec.output_bias_offset();
        self.potential.params[at] += c;
    }
}

impl Potential for StructuredLagrangianModel {
    fn dof(&self) -> usize {
        self.features.dof()
    }
    fn potential(&self, q: &DVector<f64>) -> (f64, DVector<f64>) {
        let e = self.potential_eval(q.as_slice());
        (e.value, e.grad)
    }
}

impl MassPotential for StructuredLagrangianModel {
    fn mass_matrix(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let e = self.mass_eval(q.as_slice());
        (e.h, e.dh)
    }
}

impl Parametric for StructuredLagrangianModel {
    fn param_count(&self) -> usize {
        self.mass.net.param_count() + self.potential.param_count()
    }
    fn params(&self) -> Vec<f64> {
        concat(&[&self.mass.net, &self.potential])
    }
    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        scatter(&mut [&mut self.mass.net, &mut self.potential], values)
    }
}

/// `ℋ = ½ pᵀ B(q) p + V(q)` with the inverse mass `B` from a Cholesky head.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredHamiltonianModel {
    pub features: FeatureTransform,
    pub inv_mass: MassMatrixHead,
    pub potential: Net,
}

impl StructuredHamiltonianModel {
    pub fn new<R: Rng + ?Sized>(features: FeatureTransform, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let inv_mass = mass_head(&features, cfg, rng)?;
        let potential = scalar_net(features.feature_dim(), cfg, rng)?;
        Ok(Self { features, inv_mass, potential })
    }

    pub fn from_parts(features: FeatureTransform, inv_mass: MassMatrixHead, potential: Net) -> Result<Self> {
        if inv_mass.n != features.dof() || inv_mass.net.spec.input_dim != features.feature_dim() {
            return Err(Error::InputShape { expected: features.feature_dim(), got: inv_mass.net.spec.input_dim });
        }
        check_scalar(&potential, features.feature_dim())?;
        Ok(Self { features, inv_mass, potential })
    }

    pub fn dof(&self) -> usize {
        self.features.dof()
    }

    pub(crate) fn mass_eval(&self, q: &[f64]) -> MassEval<'_> {
        self.inv_mass.evaluate(&self.features, q)
    }

    pub(crate) fn potential_eval(&self, q: &[f64]) -> PotentialEval<'_> {
        PotentialEval::new(&self.potential, &self.features, q)
    }

    pub fn energy_value(&self, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        let (b, _) = self.inverse_mass_matrix(q);
        0.5 * p.dot(&(b * p)) + self.potential(q).0
    }

    pub fn shift_potential(&mut self, c: f64) {
        let at = self.potential.spec.output_bias_offset();
        self.potential.params[at] += c;
    }
}

impl Potential for StructuredHamiltonianModel {
    fn dof(&self) -> usize {
        self.features.dof()
    }
    fn potential(&self, q: &DVector<f64>) -> (f64, DVector<f64>) {
        let e = self.potential_eval(q.as_slice());
        (e.value, e.grad)
    }
}

impl InverseMassPotential for StructuredHamiltonianModel {
    fn inverse_mass_matrix(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let e = self.mass_eval(q.as_slice());
        (e.h, e.dh)
    }
}

impl Parametric for StructuredHamiltonianModel {
    fn param_count(&self) -> usize {
        self.inv_mass.net.param_count() + self.potential.param_count()
    }
    fn params(&self) -> Vec<f64> {
        concat(&[&self.inv_mass.net, &self.potential])
    }
    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        scatter(&mut [&mut self.inv_mass.net, &mut self.potential], values)
    }
}

/// Single scalar network `L(q, q̇)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlackBoxLagrangianModel {
    pub features: FeatureTransform,
    pub net: Net,
    /// `δ` added to the velocity Hessian before solving.
    pub hessian_damping: f64,
    /// Largest accepted condition number of the damped velocity Hessian.
    pub condition_bound: f64,
}

impl BlackBoxLagrangianModel {
    pub fn new<R: Rng + ?Sized>(features: FeatureTransform, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let net = scalar_net(features.feature_dim() + features.dof(), cfg, rng)?;
        Self::from_parts(features, net, cfg.hessian_damping, cfg.condition_bound)
    }

    pub fn from_parts(features: FeatureTransform, net: Net, hessian_damping: f64, condition_bound: f64) -> Result<Self> {
        check_scalar(&net, features.feature_dim() + features.dof())?;
        if !(hessian_damping >= 0.0) || !(condition_bound > 1.0) {
            return Err(Error::InvalidArgument("need damping >= 0 and condition bound > 1".into()));
        }
        Ok(Self { features, net, hessian_damping, condition_bound })
    }

    pub fn dof(&self) -> usize {
        self.features.dof()
    }

    pub(crate) fn eval(&self, q: &[f64], qd: &[f64], order: Order) -> ScalarEval<'_> {
        ScalarEval::new(&self.net, &self.features, q, qd, order)
    }

    pub fn lagrangian_value(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        self.eval(q.as_slice(), qd.as_slice(), Order::Value).value
    }

    /// Legendre transform `q̇ᵀ ∂L/∂q̇ − L`.
    pub fn energy_value(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        let e = self.eval(q.as_slice(), qd.as_slice(), Order::Jacobian);
        qd.dot(&e.grad_v) - e.value
    }
}

impl Parametric for BlackBoxLagrangianModel {
    fn param_count(&self) -> usize {
        self.net.param_count()
    }
    fn params(&self) -> Vec<f64> {
        self.net.params.to_vec()
    }
    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        scatter(&mut [&mut self.net], values)
    }
}

/// Single scalar network `ℋ(q, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlackBoxHamiltonianModel {
    pub features: FeatureTransform,
    pub net: Net,
}

impl BlackBoxHamiltonianModel {
    pub fn new<R: Rng + ?Sized>(features: FeatureTransform, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let net = scalar_net(features.feature_dim() + features.dof(), cfg, rng)?;
        Self::from_parts(features, net)
    }

    pub fn from_parts(features: FeatureTransform, net: Net) -> Result<Self> {
        check_scalar(&net, features.feature_dim() + features.dof())?;
        Ok(Self { features, net })
    }

    pub fn dof(&self) -> usize {
        self.features.dof()
    }

    pub(crate) fn eval(&self, q: &[f64], p: &[f64], order: Order) -> ScalarEval<'_> {
        ScalarEval::new(&self.net, &self.features, q, p, order)
    }

    pub fn energy_value(&self, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        self.eval(q.as_slice(), p.as_slice(), Order::Value).value
    }
}

impl Parametric for BlackBoxHamiltonianModel {
    fn param_count(&self) -> usize {
        self.net.param_count()
    }
    fn params(&self) -> Vec<f64> {
        self.net.params.to_vec()
    }
    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        scatter(&mut [&mut self.net], values)
    }
}

/// Any of the four learnable variants.
#[derive(Debug, Clone, PartialEq)]
pub enum EnergyModel {
    StructuredLagrangian(StructuredLagrangianModel),
    StructuredHamiltonian(StructuredHamiltonianModel),
    BlackBoxLagrangian(BlackBoxLagrangianModel),
    BlackBoxHamiltonian(BlackBoxHamiltonianModel),
}

impl EnergyModel {
    pub fn new<R: Rng + ?Sized>(
        variant: ModelVariant,
        features: FeatureTransform,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match variant {
            ModelVariant::StructuredLagrangian => {
                EnergyModel::StructuredLagrangian(StructuredLagrangianModel::new(features, cfg, rng)?)
            }
            ModelVariant::StructuredHamiltonian => {
                EnergyModel::StructuredHamiltonian(StructuredHamiltonianModel::new(features, cfg, rng)?)
            }
            ModelVariant::BlackBoxLagrangian => {
                EnergyModel::BlackBoxLagrangian(BlackBoxLagrangianModel::new(features, cfg, rng)?)
            }
            ModelVariant::BlackBoxHamiltonian => {
                EnergyModel::BlackBoxHamiltonian(BlackBoxHamiltonianModel::new(features, cfg, rng)?)
            }
        })
    }

    pub fn variant(&self) -> ModelVariant {
        match self {
            EnergyModel::StructuredLagrangian(_) => ModelVariant::StructuredLagrangian,
            EnergyModel::StructuredHamiltonian(_) => ModelVariant::StructuredHamiltonian,
            EnergyModel::BlackBoxLagrangian(_) => ModelVariant::BlackBoxLagrangian,
            EnergyModel::BlackBoxHamiltonian(_) => ModelVariant::BlackBoxHamiltonian,
        }
    }

    pub fn features(&self) -> &FeatureTransform {
        match self {
            EnergyModel::StructuredLagrangian(m) => &m.features,
            EnergyModel::StructuredHamiltonian(m) => &m.features,
            EnergyModel::BlackBoxLagrangian(m) => &m.features,
            EnergyModel::BlackBoxHamiltonian(m) => &m.features,
        }
    }

    pub fn dof(&self) -> usize {
        self.features().dof()
    }

    /// Total energy at `(q, v)` where `v` is `q̇` for Lagrangian variants and
    /// `p` for Hamiltonian ones.
    pub fn energy_value(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        check_dim(self.dof(), q)?;
        check_dim(self.dof(), v)?;
        Ok(match self {
            EnergyModel::StructuredLagrangian(m) => m.energy_value(q, v),
            EnergyModel::StructuredHamiltonian(m) => m.energy_value(q, v),
            EnergyModel::BlackBoxLagrangian(m) => m.energy_value(q, v),
            EnergyModel::BlackBoxHamiltonian(m) => m.energy_value(q, v),
        })
    }

    fn parametric(&self) -> &dyn Parametric {
        match self {
            EnergyModel::StructuredLagrangian(m) => m,
            EnergyModel::StructuredHamiltonian(m) => m,
            EnergyModel::BlackBoxLagrangian(m) => m,
            EnergyModel::BlackBoxHamiltonian(m) => m,
        }
    }

    fn parametric_mut(&mut self) -> &mut dyn Parametric {
        match self {
            EnergyModel::StructuredLagrangian(m) => m,
            EnergyModel::StructuredHamiltonian(m) => m,
            EnergyModel::BlackBoxLagrangian(m) => m,
            EnergyModel::BlackBoxHamiltonian(m) => m,
        }
    }
}

impl Parametric for EnergyModel {
    fn param_count(&self) -> usize {
        self.parametric().param_count()
    }
    fn params(&self) -> Vec<f64> {
        self.parametric().params()
    }
    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        self.parametric_mut().set_params(values)
    }
}

pub(crate) fn check_dim(n: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() != n {
        return Err(Error::InputShape { expected: n, got: v.len() });
    }
    Ok(())
}
