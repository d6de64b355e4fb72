use std::fmt::Write as _;

use nalgebra::DVector;
use rand::Rng;

use crate::control::ControlModel;
use crate::diffnet::{read_net_block, write_net, Net, NetSpec, Order};
use crate::energy_models::{FeatureKind, FeatureTransform, ModelConfig, Parametric};
use crate::error::{Error, Result};
use crate::evaluation::Sample;
use crate::integrators::VectorField;
use crate::textio::{fmt_f64, parse_list, LineReader};

use super::losses::{LossContext, LossKind};

pub const BASELINE_HEADER: &str = "physnet-baseline v1";

/// Two unrelated networks: forward `(q, q̇, τ) → q̈` and inverse
/// `(q, q̇, q̈) → τ`. Velocities, accelerations and torques enter and leave
/// the networks divided by per-coordinate scales.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardBaseline {
    pub features: FeatureTransform,
    pub forward_net: Net,
    pub inverse_net: Net,
    pub qd_scale: DVector<f64>,
    pub qdd_scale: DVector<f64>,
    pub tau_scale: DVector<f64>,
}

fn std_dev(samples: &[Sample], f: fn(&Sample) -> &DVector<f64>, n: usize) -> DVector<f64> {
    if samples.is_empty() {
        return DVector::from_element(n, 1.0);
    }
    let col: Vec<DVector<f64>> = samples.iter().map(|s| f(s).clone()).collect();
    crate::evaluation::variance(&col).map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 })
}

impl FeedForwardBaseline {
    pub fn new<R: Rng + ?Sized>(features: FeatureTransform, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let n = features.dof();
        let input = features.feature_dim() + 2 * n;
        let forward_net = Net::init(NetSpec::uniform(input, &cfg.hidden, n, cfg.activation)?, rng);
        let inverse_net = Net::init(NetSpec::uniform(input, &cfg.hidden, n, cfg.activation)?, rng);
        let one = DVector::from_element(n, 1.0);
        Ok(Self { features, forward_net, inverse_net, qd_scale: one.clone(), qdd_scale: one.clone(), tau_scale: one })
    }

    /// Sets the input/output scales to the standard deviations of the data.
    pub fn fit_scales(&mut self, samples: &[Sample]) {
        let n = self.dof();
        self.qd_scale = std_dev(samples, |s| &s.qd, n);
        self.qdd_scale = std_dev(samples, |s| &s.qdd, n);
        self.tau_scale = std_dev(samples, |s| &s.tau, n);
    }

    pub fn dof(&self) -> usize {
        self.features.dof()
    }

    fn input(&self, q: &DVector<f64>, qd: &DVector<f64>, third: &DVector<f64>, third_scale: &DVector<f64>) -> Vec<f64> {
        let (mut z, _) = self.features.transform_features(q.as_slice());
        z.extend(qd.component_div(&self.qd_scale).iter());
        z.extend(third.component_div(third_scale).iter());
        z
    }

    fn check(&self, vs: [&DVector<f64>; 3]) -> Result<()> {
        let n = self.dof();
        match vs.iter().find(|v| v.len() != n) {
            Some(v) => Err(Error::InputShape { expected: n, got: v.len() }),
            None => Ok(()),
        }
    }

    pub fn forward(&self, q: &DVector<f64>, qd: &DVector<f64>, tau: &DVector<f64>) -> Result<DVector<f64>> {
        self.check([q, qd, tau])?;
        let out = self.forward_net.eval(&self.input(q, qd, tau, &self.tau_scale))?;
        Ok(DVector::from_vec(out).component_mul(&self.qdd_scale))
    }

    pub fn inverse(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> Result<DVector<f64>> {
        self.check([q, qd, qdd])?;
        let out = self.inverse_net.eval(&self.input(q, qd, qdd, &self.qdd_scale))?;
        Ok(DVector::from_vec(out).component_mul(&self.tau_scale))
    }

    /// Weighted torque residual, plus the weighted acceleration residual
    /// for the combined loss. Gradients land in `[forward | inverse]` order.
    pub(crate) fn sample_loss(&self, s: &Sample, ctx: &LossContext, grad: Option<&mut [f64]>) -> Result<f64> {
        let with_forward = match ctx.kind {
            LossKind::Inverse => false,
            LossKind::Combined => true,
            k => {
                return Err(Error::InvalidArgument(format!("loss '{k}' does not apply to the feed-forward baseline")));
            }
        };
        let w = &ctx.weights;
        let nf = self.forward_net.param_count();
        let (mut g_fwd, mut g_inv) = match grad {
            Some(g) => {
                let (a, b) = g.split_at_mut(nf);
                (Some(a), Some(b))
            }
            None => (None, None),
        };

        let tape = self.inverse_net.record(&self.input(&s.q, &s.qd, &s.qdd, &self.qdd_scale), Order::Value)?;
        let tau = DVector::from_column_slice(tape.output()).component_mul(&self.tau_scale);
        let r = tau - &s.tau;
        let mut loss: f64 = r.iter().zip(w.tau.iter()).map(|(a, b)| b * a * a).sum();
        if let Some(g) = g_inv.as_deref_mut() {
            let bar = (2.0 * r.component_mul(&w.tau)).component_mul(&self.tau_scale);
            tape.backward(bar.as_slice(), None, None, g);
        }

        if with_forward {
            let tape = self.forward_net.record(&self.input(&s.q, &s.qd, &s.tau, &self.tau_scale), Order::Value)?;
            let qdd = DVector::from_column_slice(tape.output()).component_mul(&self.qdd_scale);
            let r = qdd - &s.qdd;
            loss += r.iter().zip(w.qdd.iter()).map(|(a, b)| b * a * a).sum::<f64>();
            if let Some(g) = g_fwd.as_deref_mut() {
                let bar = (2.0 * r.component_mul(&w.qdd)).component_mul(&self.qdd_scale);
                tape.backward(bar.as_slice(), None, None, g);
            }
        }
        Ok(loss)
    }
}

impl Parametric for FeedForwardBaseline {
    fn param_count(&self) -> usize {
        self.forward_net.param_count() + self.inverse_net.param_count()
    }
    fn params(&self) -> Vec<f64> {
        self.forward_net.params.iter().chain(self.inverse_net.params.iter()).copied().collect()
    }
    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::InputShape { expected: self.param_count(), got: values.len() });
        }
        let nf = self.forward_net.param_count();
        self.forward_net.params.copy_from_slice(&values[..nf]);
        self.inverse_net.params.copy_from_slice(&values[nf..]);
        Ok(())
    }
}

impl ControlModel for FeedForwardBaseline {
    fn dof(&self) -> usize {
        FeedForwardBaseline::dof(self)
    }
    fn inverse_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> Result<DVector<f64>> {
        self.inverse(q, qd, qdd)
    }
}

/// `ẋ = (q̇, f(q, q̇, τ))` through the forward network.
impl VectorField for FeedForwardBaseline {
    fn dim(&self) -> usize {
        2 * self.dof()
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> Result<DVector<f64>> {
        let n = self.dof();
        if x.len() != 2 * n {
            return Err(Error::InputShape { expected: 2 * n, got: x.len() });
        }
        let q = x.rows(0, n).into_owned();
        let qd = x.rows(n, n).into_owned();
        let qdd = self.forward(&q, &qd, u)?;
        Ok(crate::dynamics::stack((qd, qdd)))
    }
}

fn write_vector(out: &mut String, key: &str, v: &DVector<f64>) {
    let vals: Vec<String> = v.iter().map(|x| fmt_f64(*x)).collect();
    let _ = writeln!(out, "{key} {}", vals.join(" "));
}

pub fn baseline_to_string(m: &FeedForwardBaseline) -> String {
    let mut out = format!("{BASELINE_HEADER}\n");
    let kinds: Vec<&str> = m.features.kinds().iter().map(|k| k.name()).collect();
    let _ = writeln!(out, "features {}", kinds.join(" "));
    write_vector(&mut out, "qd_scale", &m.qd_scale);
    write_vector(&mut out, "qdd_scale", &m.qdd_scale);
    write_vector(&mut out, "tau_scale", &m.tau_scale);
    write_net(&mut out, "forward", &m.forward_net.spec, &m.forward_net.params);
    write_net(&mut out, "inverse", &m.inverse_net.spec, &m.inverse_net.params);
    out
}

pub fn baseline_from_str(text: &str) -> Result<FeedForwardBaseline> {
    let mut reader = LineReader::new(text);
    let (_, header) = reader.next_line()?;
    if header != BASELINE_HEADER {
        return Err(Error::Format(format!("unsupported baseline file header '{header}'")));
    }
    let kinds: Vec<FeatureKind> = parse_list(reader.expect_key("features")?)?;
    let features = FeatureTransform::new(kinds)?;
    let n = features.dof();
    let mut vector = |key: &str| -> Result<DVector<f64>> {
        let vals: Vec<f64> = parse_list(reader.expect_key(key)?)?;
        if vals.len() != n {
            return Err(Error::Format(format!("'{key}' needs {n} values, found {}", vals.len())));
        }
        Ok(DVector::from_vec(vals))
    };
    let qd_scale = vector("qd_scale")?;
    let qdd_scale = vector("qdd_scale")?;
    let tau_scale = vector("tau_scale")?;
    let mut net = |name: &str| -> Result<Net> {
        let (spec, params) = read_net_block(&mut reader, name)?;
        let input = features.feature_dim() + 2 * n;
        if spec.input_dim != input || spec.output_dim != n {
            return Err(Error::Format(format!("net '{name}' does not fit {n} coordinates")));
        }
        Net::new(spec, params)
    };
    let forward_net = net("forward")?;
    let inverse_net = net("inverse")?;
    Ok(FeedForwardBaseline { features, forward_net, inverse_net, qd_scale, qdd_scale, tau_scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::stream_rng;
    use crate::plants::PlantKind;

    fn small() -> FeedForwardBaseline {
        let cfg = ModelConfig { hidden: vec![6], ..ModelConfig::default() };
        let mut m = FeedForwardBaseline::new(FeatureTransform::for_plant(PlantKind::Cartpole), &cfg, &mut stream_rng(3, 5)).unwrap();
        m.tau_scale = DVector::from_vec(vec![2.0, 0.5]);
        m
    }

    #[test]
    fn file_round_trip() {
        let m = small();
        let back = baseline_from_str(&baseline_to_string(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn forward_and_inverse_are_independent() {
        let m = small();
        let q = DVector::from_vec(vec![0.1, 0.2]);
        let qd = DVector::from_vec(vec![0.3, -0.1]);
        let tau = DVector::from_vec(vec![1.0, 0.0]);
        let qdd = m.forward(&q, &qd, &tau).unwrap();
        let back = m.inverse(&q, &qd, &qdd).unwrap();
        assert!((back - tau).norm() > 1e-6);
    }
}
