use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::FeatureTransform;
use crate::diffnet::{Activation, Net, NetSpec, Order, Tape};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-2;

/// Diagonal shift with `softplus(alpha) = 1`, so a network that outputs
/// zeros predicts a mass matrix close to the identity.
pub fn default_alpha() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

/// Network head predicting a symmetric positive definite matrix through
/// its Cholesky factor. The raw output holds the `n` diagonal entries
/// followed by the strictly lower entries in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MassMatrixHead {
    pub n: usize,
    pub epsilon: f64,
    pub alpha: f64,
    pub net: Net,
}

pub fn raw_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Raw index of the strictly lower entry `(i, j)`, `i > j`.
#[inline]
fn lower_index(n: usize, i: usize, j: usize) -> usize {
    n + i * (i - 1) / 2 + j
}

impl MassMatrixHead {
    pub fn new<R: Rng + ?Sized>(
        n: usize,
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = NetSpec::uniform(input_dim, hidden, raw_dim(n), activation)?;
        Self::from_net(n, epsilon, default_alpha(), Net::init(spec, rng))
    }

    pub fn from_net(n: usize, epsilon: f64, alpha: f64, net: Net) -> Result<Self> {
        if !(epsilon > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument("mass head needs epsilon > 0 and finite alpha".into()));
        }
        if net.spec.output_dim != raw_dim(n) {
            return Err(Error::InputShape { expected: raw_dim(n), got: net.spec.output_dim });
        }
        Ok(Self { n, epsilon, alpha, net })
    }

    pub(crate) fn evaluate(&self, ft: &FeatureTransform, q: &[f64]) -> MassEval<'_> {
        let (z, g) = ft.transform_features(q);
        let tape = self.net.record(&z, Order::Jacobian).expect("feature dimension matches mass network");
        let n = self.n;
        let m = raw_dim(n);
        let raw = tape.output();
        let jr_z = DMatrix::from_row_slice(m, z.len(), tape.jacobian());
        let jr_q = &jr_z * &g;

        let mut l = DMatrix::zeros(n, n);
        let mut sig = vec![0.0; n];
        let mut sig1 = vec![0.0; n];
        for i in 0..n {
            let [sp, s1, s2, _] = Activation::Softplus.eval(raw[i] + self.alpha);
            l[(i, i)] = sp + self.epsilon;
            sig[i] = s1;
            sig1[i] = s2;
        }
        for i in 1..n {
            for j in 0..i {
                l[(i, j)] = raw[lower_index(n, i, j)];
            }
        }
        let dl: Vec<DMatrix<f64>> = (0..n)
            .map(|k| {
                let mut d = DMatrix::zeros(n, n);
                for i in 0..n {
                    d[(i, i)] = sig[i] * jr_q[(i, k)];
                    for j in 0..i {
                        d[(i, j)] = jr_q[(lower_index(n, i, j), k)];
                    }
                }
                d
            })
            .collect();
        let h = gram(&l, self.epsilon);
        let dh = dl
            .iter()
            .map(|d| {
                let a = d * l.transpose();
                &a + a.transpose()
            })
            .collect();
        MassEval { tape, g, jr_z, jr_q, sig, sig1, l, dl, h, dh }
    }
}

fn gram(l: &DMatrix<f64>, epsilon: f64) -> DMatrix<f64> {
    let mut h = l * l.transpose();
    // exact symmetry regardless of summation order
    for i in 0..h.nrows() {
        for j in 0..i {
            h[(j, i)] = h[(i, j)];
        }
        h[(i, i)] += epsilon;
    }
    h
}

/// `(L, H)` with `diag L = softplus(raw_diag + alpha) + epsilon`, raw
/// strictly lower entries and `H = L Lᵀ + epsilon I`.
pub fn assemble_mass_matrix(head: &MassMatrixHead, raw: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = head.n;
    assert_eq!(raw.len(), raw_dim(n), "raw mass output length");
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = crate::diffnet::softplus(raw[i] + head.alpha) + head.epsilon;
        for j in 0..i {
            l[(i, j)] = raw[lower_index(n, i, j)];
        }
    }
    let h = gram(&l, head.epsilon);
    (l, h)
}

/// Mass-head evaluation at one configuration, kept for the reverse pass.
pub(crate) struct MassEval<'a> {
    tape: Tape<'a>,
    g: DMatrix<f64>,
    jr_z: DMatrix<f64>,
    jr_q: DMatrix<f64>,
    sig: Vec<f64>,
    sig1: Vec<f64>,
    pub l: DMatrix<f64>,
    pub dl: Vec<DMatrix<f64>>,
    pub h: DMatrix<f64>,
    pub dh: Vec<DMatrix<f64>>,
}

impl MassEval<'_> {
    /// Pulls cotangents of `H` and `∂H/∂q_k` back to the head parameters
    /// (accumulated into `grad`) and returns the cotangent of `q`.
    pub fn backward(
        &self,
        ft: &FeatureTransform,
        q: &[f64],
        h_bar: &DMatrix<f64>,
        dh_bar: &[DMatrix<f64>],
        grad: &mut [f64],
    ) -> DVector<f64> {
        let n = self.l.nrows();
        let m = raw_dim(n);
        let mut l_bar = (h_bar + h_bar.transpose()) * &self.l;
        let mut dl_bar = Vec::with_capacity(n);
        for (k, db) in dh_bar.iter().enumerate() {
            let s = db + db.transpose();
            l_bar += &s * &self.dl[k];
            dl_bar.push(s * &self.l);
        }

        let mut raw_bar = vec![0.0; m];
        let mut jrq_bar = DMatrix::zeros(m, n);
        for i in 0..n {
            let mut acc = l_bar[(i, i)] * self.sig[i];
            for (k, d) in dl_bar.iter().enumerate() {
                acc += d[(i, i)] * self.sig1[i] * self.jr_q[(i, k)];
                jrq_bar[(i, k)] = d[(i, i)] * self.sig[i];
            }
            raw_bar[i] = acc;
            for j in 0..i {
                let idx = lower_index(n, i, j);
                raw_bar[idx] = l_bar[(i, j)];
                for (k, d) in dl_bar.iter().enumerate() {
                    jrq_bar[(idx, k)] = d[(i, j)];
                }
            }
        }

        let jrz_bar = &jrq_bar * self.g.transpose();
        let jrz_bar_rows: Vec<f64> = jrz_bar.transpose().as_slice().to_vec();
        let z_bar = self.tape.backward(&raw_bar, Some(&jrz_bar_rows), None, grad);
        let g_bar = self.jr_z.transpose() * &jrq_bar;
        self.g.transpose() * DVector::from_vec(z_bar) + ft.jacobian_adjoint(q, &g_bar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(n: usize, seed: u64) -> MassMatrixHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MassMatrixHead::new(n, n, &[6], Activation::Softplus, DEFAULT_EPSILON, &mut rng).unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        let h = head(1, 1);
        let r = 0.37;
        let (_, m) = assemble_mass_matrix(&h, &[r]);
        let d = crate::diffnet::softplus(r + h.alpha) + h.epsilon;
        assert_eq!(m[(0, 0)], d * d + h.epsilon);
    }

    #[test]
    fn zero_raw_gives_scaled_identity() {
        let h = head(3, 2);
        let (_, m) = assemble_mass_matrix(&h, &[0.0; 6]);
        let e = h.epsilon;
        let expected = DMatrix::identity(3, 3) * ((1.0 + e) * (1.0 + e) + e);
        assert!((m - expected).amax() < 1e-15);
    }

    #[test]
    fn evaluate_matches_assembly_and_is_symmetric() {
        let h = head(3, 3);
        let ft = FeatureTransform::identity(3);
        let q = [0.2, -0.4, 1.1];
        let eval = h.evaluate(&ft, &q);
        let raw = h.net.eval(&q).unwrap();
        let (l, m) = assemble_mass_matrix(&h, &raw);
        assert_eq!(eval.l, l);
        assert_eq!(eval.h, m);
        assert_eq!(eval.h, eval.h.transpose());
        for d in &eval.dh {
            assert_eq!(d, &d.transpose());
        }
    }
}
