use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plants::PlantKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Identity,
    /// `q ↦ (cos q, sin q)`
    SinCos,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Identity => "identity",
            FeatureKind::SinCos => "sin_cos",
        }
    }

    fn width(self) -> usize {
        match self {
            FeatureKind::Identity => 1,
            FeatureKind::SinCos => 2,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(FeatureKind::Identity),
            "sin_cos" | "sincos" => Ok(FeatureKind::SinCos),
            other => Err(Error::Format(format!("unknown feature kind '{other}'"))),
        }
    }
}

/// Per-joint input features `z = g(q)` with closed-form Jacobian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureTransform {
    kinds: Vec<FeatureKind>,
}

impl FeatureTransform {
    pub fn new(kinds: Vec<FeatureKind>) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::InvalidArgument("feature transform needs at least one joint".into()));
        }
        Ok(Self { kinds })
    }

    pub fn identity(n: usize) -> Self {
        Self { kinds: vec![FeatureKind::Identity; n] }
    }

    pub fn sin_cos(n: usize) -> Self {
        Self { kinds: vec![FeatureKind::SinCos; n] }
    }

    /// Sin-cos on revolute joints, identity on prismatic ones.
    pub fn for_plant(kind: PlantKind) -> Self {
        let kinds = kind
            .revolute()
            .iter()
            .map(|&r| if r { FeatureKind::SinCos } else { FeatureKind::Identity })
            .collect();
        Self { kinds }
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn dof(&self) -> usize {
        self.kinds.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.kinds.iter().map(|k| k.width()).sum()
    }

    /// `(z, ∂z/∂q)` with the Jacobian shaped feature_dim × dof.
    ///
    /// Panics if `q` does not have one entry per joint.
    pub fn transform_features(&self, q: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        assert_eq!(q.len(), self.dof(), "coordinate dimension");
        let mut z = Vec::with_capacity(self.feature_dim());
        let mut jac = DMatrix::zeros(self.feature_dim(), self.dof());
        for (i, (&kind, &qi)) in self.kinds.iter().zip(q).enumerate() {
            let row = z.len();
            match kind {
                FeatureKind::Identity => {
                    z.push(qi);
                    jac[(row, i)] = 1.0;
                }
                FeatureKind::SinCos => {
                    let (s, c) = qi.sin_cos();
                    z.push(c);
                    z.push(s);
                    jac[(row, i)] = -s;
                    jac[(row + 1, i)] = c;
                }
            }
        }
        (z, jac)
    }

    /// `∂f/∂q = (∂z/∂q)ᵀ ∂f/∂z`.
    pub fn pullback_gradient(&self, q: &[f64], grad_z: &[f64]) -> DVector<f64> {
        let (_, jac) = self.transform_features(q);
        jac.transpose() * DVector::from_column_slice(grad_z)
    }

    /// Gradient in `q` of `⟨jac_bar, ∂z/∂q⟩`, i.e. the cotangent flowing
    /// through the configuration dependence of the feature Jacobian.
    pub(crate) fn jacobian_adjoint(&self, q: &[f64], jac_bar: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dof());
        let mut row = 0;
        for (i, (&kind, &qi)) in self.kinds.iter().zip(q).enumerate() {
            if kind == FeatureKind::SinCos {
                let (s, c) = qi.sin_cos();
                out[i] = -c * jac_bar[(row, i)] - s * jac_bar[(row + 1, i)];
            }
            row += kind.width();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_noop() {
        let ft = FeatureTransform::identity(3);
        let (z, jac) = ft.transform_features(&[0.1, -2.0, 5.0]);
        assert_eq!(z, vec![0.1, -2.0, 5.0]);
        assert_eq!(jac, DMatrix::identity(3, 3));
        assert_eq!(ft.pullback_gradient(&z, &[1.0, 2.0, 3.0]).as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn sin_cos_at_zero() {
        let ft = FeatureTransform::sin_cos(1);
        let (z, jac) = ft.transform_features(&[0.0]);
        assert_eq!(z, vec![1.0, 0.0]);
        assert_eq!(jac.as_slice(), &[-0.0, 1.0]);
    }

    #[test]
    fn jacobian_adjoint_matches_differences() {
        let ft = FeatureTransform::new(vec![FeatureKind::SinCos, FeatureKind::Identity, FeatureKind::SinCos]).unwrap();
        let q = [0.3, 1.7, -2.2];
        let bar = DMatrix::from_fn(5, 3, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let inner = |q: &[f64]| ft.transform_features(q).1.component_mul(&bar).sum();
        let adj = ft.jacobian_adjoint(&q, &bar);
        for k in 0..3 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += 1e-6;
            qm[k] -= 1e-6;
            let fd = (inner(&qp) - inner(&qm)) / 2e-6;
            assert!((fd - adj[k]).abs() < 1e-8);
        }
    }
}
