use nalgebra::{DMatrix, DVector};

use super::FeatureTransform;
use crate::diffnet::{Net, Order, Tape};

/// Scalar potential network over features of `q`.
pub(crate) struct PotentialEval<'a> {
    tape: Tape<'a>,
    g: DMatrix<f64>,
    jv_z: Vec<f64>,
    pub value: f64,
    /// `∂V/∂q`
    pub grad: DVector<f64>,
}

impl<'a> PotentialEval<'a> {
    pub fn new(net: &'a Net, ft: &FeatureTransform, q: &[f64]) -> Self {
        let (z, g) = ft.transform_features(q);
        let tape = net.record(&z, Order::Jacobian).expect("feature dimension matches potential network");
        let value = tape.output()[0];
        let jv_z = tape.jacobian().to_vec();
        let grad = g.transpose() * DVector::from_column_slice(&jv_z);
        Self { tape, g, jv_z, value, grad }
    }

    /// Cotangents of `V` and `∂V/∂q` to parameters and `q`.
    pub fn backward(
        &self,
        ft: &FeatureTransform,
        q: &[f64],
        value_bar: f64,
        grad_bar: &DVector<f64>,
        grad: &mut [f64],
    ) -> DVector<f64> {
        let jvz_bar = &self.g * grad_bar;
        let z_bar = self.tape.backward(&[value_bar], Some(jvz_bar.as_slice()), None, grad);
        let g_bar = DVector::from_column_slice(&self.jv_z) * grad_bar.transpose();
        self.g.transpose() * DVector::from_vec(z_bar) + ft.jacobian_adjoint(q, &g_bar)
    }
}

/// Scalar network over `(z(q), v)` where `v` is a velocity or momentum.
/// Derivatives are reported in `q` coordinates.
pub(crate) struct ScalarEval<'a> {
    tape: Tape<'a>,
    g: DMatrix<f64>,
    dz: usize,
    n: usize,
    h_z: DVector<f64>,
    h_vz: DMatrix<f64>,
    pub value: f64,
    /// `∂h/∂q`
    pub grad_q: DVector<f64>,
    /// `∂h/∂v`
    pub grad_v: DVector<f64>,
    /// `∂²h/∂v²` (empty unless recorded with Hessians)
    pub hess_vv: DMatrix<f64>,
    /// `∂²h/∂v∂q`, rows index `v`
    pub hess_vq: DMatrix<f64>,
}

impl<'a> ScalarEval<'a> {
    pub fn new(net: &'a Net, ft: &FeatureTransform, q: &[f64], v: &[f64], order: Order) -> Self {
        let (mut x, g) = ft.transform_features(q);
        let dz = x.len();
        let n = v.len();
        x.extend_from_slice(v);
        let tape = net.record(&x, order).expect("input dimension matches scalar network");
        let value = tape.output()[0];
        let jac = tape.jacobian();
        let h_z = DVector::from_column_slice(&jac[..dz]);
        let grad_v = DVector::from_column_slice(&jac[dz..]);
        let grad_q = g.transpose() * &h_z;
        let (hess_vv, h_vz, hess_vq) = if order == Order::Hessian {
            let d = dz + n;
            let hs = tape.hessian();
            let hvv = DMatrix::from_fn(n, n, |i, j| hs[(dz + i) * d + dz + j]);
            let hvz = DMatrix::from_fn(n, dz, |i, a| hs[(dz + i) * d + a]);
            let hvq = &hvz * &g;
            (hvv, hvz, hvq)
        } else {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
        };
        Self { tape, g, dz, n, h_z, h_vz, value, grad_q, grad_v, hess_vv, hess_vq }
    }

    /// Cotangents of the value, gradients and (optionally) velocity Hessian
    /// blocks to parameters; returns `(q̄, v̄)`.
    pub fn backward(
        &self,
        ft: &FeatureTransform,
        q: &[f64],
        value_bar: f64,
        grad_q_bar: &DVector<f64>,
        grad_v_bar: &DVector<f64>,
        hess_bars: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>) {
        let (dz, n) = (self.dz, self.n);
        let d = dz + n;
        let mut jac_bar = Vec::with_capacity(d);
        jac_bar.extend((&self.g * grad_q_bar).iter());
        jac_bar.extend(grad_v_bar.iter());
        let mut g_bar = &self.h_z * grad_q_bar.transpose();

        let hess_bar = hess_bars.map(|(vv_bar, vq_bar)| {
            let mut hb = vec![0.0; d * d];
            for i in 0..n {
                for j in 0..n {
                    hb[(dz + i) * d + dz + j] = vv_bar[(i, j)];
                }
            }
            let vz_bar = vq_bar * self.g.transpose();
            for i in 0..n {
                for a in 0..dz {
                    hb[(dz + i) * d + a] = vz_bar[(i, a)];
                }
            }
            g_bar += self.h_vz.transpose() * vq_bar;
            hb
        });

        let x_bar = self.tape.backward(&[value_bar], Some(&jac_bar), hess_bar.as_deref(), grad);
        let z_bar = DVector::from_column_slice(&x_bar[..dz]);
        let v_bar = DVector::from_column_slice(&x_bar[dz..]);
        let q_bar = self.g.transpose() * z_bar + ft.jacobian_adjoint(q, &g_bar);
        (q_bar, v_bar)
    }
}
