//! Closed-form rigid-body terms as functions of the base parameters
//! returned by [`Plant::base_parameters`](super::Plant::base_parameters).

use nalgebra::{DMatrix, DVector};

use super::PlantKind;

pub(crate) fn param_count(kind: PlantKind) -> usize {
    match kind {
        PlantKind::TwoLinkPendulum => 5,
        PlantKind::Cartpole | PlantKind::Furuta => 4,
    }
}

pub(crate) fn mass_matrix(kind: PlantKind, th: &[f64], q: &DVector<f64>) -> DMatrix<f64> {
    match kind {
        PlantKind::TwoLinkPendulum => {
            let c2 = q[1].cos();
            let h11 = th[0] + th[1] + 2.0 * th[2] * c2;
            let h12 = th[1] + th[2] * c2;
            DMatrix::from_row_slice(2, 2, &[h11, h12, h12, th[1]])
        }
        PlantKind::Cartpole => {
            let h12 = th[1] * q[1].cos();
            DMatrix::from_row_slice(2, 2, &[th[0], h12, h12, th[2]])
        }
        PlantKind::Furuta => {
            let (s, c) = q[1].sin_cos();
            let h11 = th[0] + th[1] * s * s;
            let h12 = th[2] * c;
            DMatrix::from_row_slice(2, 2, &[h11, h12, h12, th[1]])
        }
    }
}

pub(crate) fn mass_matrix_derivative(kind: PlantKind, th: &[f64], q: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let zero = DMatrix::zeros(2, 2);
    let d1 = match kind {
        PlantKind::TwoLinkPendulum => {
            let s2 = q[1].sin();
            DMatrix::from_row_slice(2, 2, &[-2.0 * th[2] * s2, -th[2] * s2, -th[2] * s2, 0.0])
        }
        PlantKind::Cartpole => {
            let d = -th[1] * q[1].sin();
            DMatrix::from_row_slice(2, 2, &[0.0, d, d, 0.0])
        }
        PlantKind::Furuta => {
            let (s, c) = q[1].sin_cos();
            let d = -th[2] * s;
            DMatrix::from_row_slice(2, 2, &[2.0 * th[1] * s * c, d, d, 0.0])
        }
    };
    vec![zero, d1]
}

pub(crate) fn coriolis(kind: PlantKind, th: &[f64], q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
    match kind {
        PlantKind::TwoLinkPendulum => {
            let h = th[2] * q[1].sin();
            DVector::from_vec(vec![-h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), h * qd[0] * qd[0]])
        }
        PlantKind::Cartpole => DVector::from_vec(vec![-th[1] * q[1].sin() * qd[1] * qd[1], 0.0]),
        PlantKind::Furuta => {
            let (s, c) = q[1].sin_cos();
            DVector::from_vec(vec![
                2.0 * th[1] * s * c * qd[0] * qd[1] - th[2] * s * qd[1] * qd[1],
                -th[1] * s * c * qd[0] * qd[0],
            ])
        }
    }
}

pub(crate) fn potential(kind: PlantKind, th: &[f64], q: &DVector<f64>) -> f64 {
    match kind {
        PlantKind::TwoLinkPendulum => -th[3] * q[0].cos() - th[4] * (q[0] + q[1]).cos(),
        PlantKind::Cartpole | PlantKind::Furuta => th[3] * q[1].cos(),
    }
}

pub(crate) fn gravity(kind: PlantKind, th: &[f64], q: &DVector<f64>) -> DVector<f64> {
    match kind {
        PlantKind::TwoLinkPendulum => {
            let s12 = (q[0] + q[1]).sin();
            DVector::from_vec(vec![th[3] * q[0].sin() + th[4] * s12, th[4] * s12])
        }
        PlantKind::Cartpole | PlantKind::Furuta => DVector::from_vec(vec![0.0, -th[3] * q[1].sin()]),
    }
}

/// Rows of `A(q, q̇, q̈)` with `τ = A θ`.
pub(crate) fn regressor(kind: PlantKind, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> DMatrix<f64> {
    match kind {
        PlantKind::TwoLinkPendulum => {
            let (s1, s2, c2) = (q[0].sin(), q[1].sin(), q[1].cos());
            let s12 = (q[0] + q[1]).sin();
            let sum = qdd[0] + qdd[1];
            DMatrix::from_row_slice(
                2,
                5,
                &[
                    qdd[0],
                    sum,
                    c2 * (2.0 * qdd[0] + qdd[1]) - s2 * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]),
                    s1,
                    s12,
                    0.0,
                    sum,
                    c2 * qdd[0] + s2 * qd[0] * qd[0],
                    0.0,
                    s12,
                ],
            )
        }
        PlantKind::Cartpole => {
            let (s, c) = q[1].sin_cos();
            DMatrix::from_row_slice(
                2,
                4,
                &[qdd[0], c * qdd[1] - s * qd[1] * qd[1], 0.0, 0.0, 0.0, c * qdd[0], qdd[1], -s],
            )
        }
        PlantKind::Furuta => {
            let (s, c) = q[1].sin_cos();
            DMatrix::from_row_slice(
                2,
                4,
                &[
                    qdd[0],
                    s * s * qdd[0] + 2.0 * s * c * qd[0] * qd[1],
                    c * qdd[1] - s * qd[1] * qd[1],
                    0.0,
                    0.0,
                    qdd[1] - s * c * qd[0] * qd[0],
                    c * qdd[0],
                    -s,
                ],
            )
        }
    }
}
