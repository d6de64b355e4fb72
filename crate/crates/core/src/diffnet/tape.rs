use super::{Activation, LayerShape, NetSpec};
use crate::error::Result;

/// Highest input-derivative order propagated through a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Jacobian,
    Hessian,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// pre-activation, fan_out
    a: Vec<f64>,
    /// post-activation, fan_out
    h: Vec<f64>,
    /// ∂a/∂x and ∂h/∂x, fan_out × d
    ja: Vec<f64>,
    jh: Vec<f64>,
    /// ∂²a/∂x² and ∂²h/∂x², fan_out × d × d
    ha: Vec<f64>,
    hh: Vec<f64>,
}

/// Recorded forward pass of a network at one input.
///
/// Layer-wise forward accumulation of `(h, ∂h/∂x, ∂²h/∂x²)`; the reverse
/// pass differentiates that whole propagation, so cotangents on the input
/// Jacobian or Hessian flow into parameter and input gradients exactly.
#[derive(Debug, Clone)]
pub struct Tape<'a> {
    spec: &'a NetSpec,
    params: &'a [f64],
    shapes: Vec<LayerShape>,
    order: Order,
    input: Vec<f64>,
    layers: Vec<LayerCache>,
}

impl<'a> Tape<'a> {
    pub fn record(spec: &'a NetSpec, params: &'a [f64], x: &[f64], order: Order) -> Result<Self> {
        spec.check_params(params)?;
        spec.check_input(x)?;
        let d = spec.input_dim;
        let dd = d * d;
        let shapes = spec.layers();
        let mut layers: Vec<LayerCache> = Vec::with_capacity(shapes.len());

        for (l, shape) in shapes.iter().enumerate() {
            let LayerShape {
                fan_in,
                fan_out,
                weight_offset,
                bias_offset,
                activation,
            } = *shape;
            let w = &params[weight_offset..bias_offset];
            let b = &params[bias_offset..bias_offset + fan_out];
            let prev = if l == 0 { None } else { Some(&layers[l - 1]) };
            let h_prev: &[f64] = prev.map(|c| c.h.as_slice()).unwrap_or(x);

            let mut a = b.to_vec();
            for k in 0..fan_out {
                let row = &w[k * fan_in..(k + 1) * fan_in];
                a[k] += dot(row, h_prev);
            }

            let mut ja = Vec::new();
            if order >= Order::Jacobian {
                ja = vec![0.0; fan_out * d];
                match prev {
                    None => ja.copy_from_slice(w),
                    Some(p) => {
                        for k in 0..fan_out {
                            let out = &mut ja[k * d..(k + 1) * d];
                            for j in 0..fan_in {
                                let wkj = w[k * fan_in + j];
                                axpy(wkj, &p.jh[j * d..(j + 1) * d], out);
                            }
                        }
                    }
                }
            }

            let mut ha = Vec::new();
            if order == Order::Hessian {
                ha = vec![0.0; fan_out * dd];
                if let Some(p) = prev {
                    for k in 0..fan_out {
                        let out = &mut ha[k * dd..(k + 1) * dd];
                        for j in 0..fan_in {
                            let wkj = w[k * fan_in + j];
                            axpy(wkj, &p.hh[j * dd..(j + 1) * dd], out);
                        }
                    }
                }
            }

            let (h, jh, hh) = if activation == Activation::Linear {
                (a.clone(), ja.clone(), ha.clone())
            } else {
                let mut h = vec![0.0; fan_out];
                let mut jh = vec![0.0; ja.len()];
                let mut hh = vec![0.0; ha.len()];
                for k in 0..fan_out {
                    let [s0, s1, s2, _] = activation.eval(a[k]);
                    h[k] = s0;
                    if order >= Order::Jacobian {
                        for i in 0..d {
                            jh[k * d + i] = s1 * ja[k * d + i];
                        }
                    }
                    if order == Order::Hessian {
                        let jk = &ja[k * d..(k + 1) * d];
                        for i in 0..d {
                            for j in 0..d {
                                hh[k * dd + i * d + j] =
                                    s2 * (jk[i] * jk[j]) + s1 * ha[k * dd + i * d + j];
                            }
                        }
                    }
                }
                (h, jh, hh)
            };

            layers.push(LayerCache { a, h, ja, jh, ha, hh });
        }

        Ok(Self {
            spec,
            params,
            shapes,
            order,
            input: x.to_vec(),
            layers,
        })
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn spec(&self) -> &NetSpec {
        self.spec
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("at least one layer").h
    }

    /// Row-major output_dim × input_dim.
    pub fn jacobian(&self) -> &[f64] {
        assert!(self.order >= Order::Jacobian, "tape recorded without Jacobian");
        &self.layers.last().expect("at least one layer").jh
    }

    /// output_dim × input_dim × input_dim, row-major per output slice.
    pub fn hessian(&self) -> &[f64] {
        assert!(self.order == Order::Hessian, "tape recorded without Hessian");
        &self.layers.last().expect("at least one layer").hh
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// cotangent `x̄`.
    ///
    /// `output_bar`, `jacobian_bar` and `hessian_bar` are cotangents of the
    /// objective with respect to [`output`](Self::output),
    /// [`jacobian`](Self::jacobian) and [`hessian`](Self::hessian).
    pub fn backward(
        &self,
        output_bar: &[f64],
        jacobian_bar: Option<&[f64]>,
        hessian_bar: Option<&[f64]>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let d = self.spec.input_dim;
        let dd = d * d;
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(output_bar.len(), self.spec.output_dim);
        if jacobian_bar.is_some() {
            assert!(self.order >= Order::Jacobian, "Jacobian cotangent needs a Jacobian tape");
        }
        if hessian_bar.is_some() {
            assert!(self.order == Order::Hessian, "Hessian cotangent needs a Hessian tape");
        }
        let use_j = jacobian_bar.is_some() || hessian_bar.is_some();
        let use_h = hessian_bar.is_some();

        let out_dim = self.spec.output_dim;
        let mut hb = output_bar.to_vec();
        let mut jb = if use_j {
            jacobian_bar
                .map(|j| j.to_vec())
                .unwrap_or_else(|| vec![0.0; out_dim * d])
        } else {
            Vec::new()
        };
        let mut hhb = hessian_bar.map(|h| h.to_vec()).unwrap_or_default();

        for l in (0..self.layers.len()).rev() {
            let shape = self.shapes[l];
            let cache = &self.layers[l];
            let (fan_in, fan_out) = (shape.fan_in, shape.fan_out);

            // activation adjoint
            let (ab, jab, hab) = if shape.activation == Activation::Linear {
                (hb, jb, hhb)
            } else {
                let mut ab = vec![0.0; fan_out];
                let mut jab = vec![0.0; jb.len()];
                let mut hab = vec![0.0; hhb.len()];
                for k in 0..fan_out {
                    let [_, s1, s2, s3] = shape.activation.eval(cache.a[k]);
                    ab[k] = s1 * hb[k];
                    if use_j {
                        let jk = &cache.ja[k * d..(k + 1) * d];
                        let jbk = &jb[k * d..(k + 1) * d];
                        ab[k] += s2 * dot(jbk, jk);
                        for i in 0..d {
                            jab[k * d + i] = s1 * jbk[i];
                        }
                        if use_h {
                            let hbk = &hhb[k * dd..(k + 1) * dd];
                            let hak = &cache.ha[k * dd..(k + 1) * dd];
                            let mut quad = 0.0;
                            for i in 0..d {
                                let mut sym = 0.0;
                                for j in 0..d {
                                    quad += hbk[i * d + j] * jk[i] * jk[j];
                                    sym += (hbk[i * d + j] + hbk[j * d + i]) * jk[j];
                                }
                                jab[k * d + i] += s2 * sym;
                            }
                            ab[k] += s3 * quad + s2 * dot(hbk, hak);
                            for (dst, src) in hab[k * dd..(k + 1) * dd].iter_mut().zip(hbk) {
                                *dst = s1 * src;
                            }
                        }
                    }
                }
                (ab, jab, hab)
            };

            let w = &self.params[shape.weight_offset..shape.bias_offset];
            let (gw, gb) = grad[shape.weight_offset..shape.bias_offset + fan_out].split_at_mut(fan_in * fan_out);
            for k in 0..fan_out {
                gb[k] += ab[k];
            }

            if l == 0 {
                // input layer: h = x, ∂h/∂x = I, ∂²h/∂x² = 0
                for k in 0..fan_out {
                    let row = &mut gw[k * fan_in..(k + 1) * fan_in];
                    axpy(ab[k], &self.input, row);
                    if use_j {
                        for j in 0..fan_in {
                            row[j] += jab[k * d + j];
                        }
                    }
                }
                let mut xb = vec![0.0; fan_in];
                for k in 0..fan_out {
                    axpy(ab[k], &w[k * fan_in..(k + 1) * fan_in], &mut xb);
                }
                return xb;
            }

            let prev = &self.layers[l - 1];
            for k in 0..fan_out {
                let row = &mut gw[k * fan_in..(k + 1) * fan_in];
                axpy(ab[k], &prev.h, row);
                if use_j {
                    let jabk = &jab[k * d..(k + 1) * d];
                    for j in 0..fan_in {
                        row[j] += dot(jabk, &prev.jh[j * d..(j + 1) * d]);
                    }
                }
                if use_h {
                    let habk = &hab[k * dd..(k + 1) * dd];
                    for j in 0..fan_in {
                        row[j] += dot(habk, &prev.hh[j * dd..(j + 1) * dd]);
                    }
                }
            }

            let mut hb_prev = vec![0.0; fan_in];
            let mut jb_prev = if use_j { vec![0.0; fan_in * d] } else { Vec::new() };
            let mut hhb_prev = if use_h { vec![0.0; fan_in * dd] } else { Vec::new() };
            for k in 0..fan_out {
                let row = &w[k * fan_in..(k + 1) * fan_in];
                axpy(ab[k], row, &mut hb_prev);
                if use_j {
                    let jabk = &jab[k * d..(k + 1) * d];
                    for j in 0..fan_in {
                        axpy(row[j], jabk, &mut jb_prev[j * d..(j + 1) * d]);
                    }
                }
                if use_h {
                    let habk = &hab[k * dd..(k + 1) * dd];
                    for j in 0..fan_in {
                        axpy(row[j], habk, &mut hhb_prev[j * dd..(j + 1) * dd]);
                    }
                }
            }
            hb = hb_prev;
            jb = jb_prev;
            hhb = hhb_prev;
        }
        unreachable!("network has at least one layer")
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if alpha == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
