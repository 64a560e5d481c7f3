//! Eager forward kernels and their vector-Jacobian products.
//!
//! These are the only places that touch raw buffers; [`Graph`](super::Graph)
//! records calls to them and replays the backward halves in reverse.

use crate::error::{shape_err, Error, Result};

use super::{Element, Tensor};

/// Same-size 2-D convolution, stride 1.
///
/// `kernel` is `O×C×k×k` with odd `k` and `padding` must be `(k-1)/2`, so the
/// output keeps the input's spatial extent. Zero padding.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    let geom = ConvGeometry::new(input, kernel, bias, padding)?;
    let ConvGeometry { c_in, c_out, h, w, k } = geom;
    let hw = h * w;
    let x = input.data();
    let wt = kernel.data();
    let mut out = vec![T::zero(); c_out * hw];

    for (o, out_o) in out.chunks_exact_mut(hw).enumerate() {
        out_o.iter_mut().for_each(|v| *v = bias.data()[o]);
        for c in 0..c_in {
            let x_c = &x[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((o * c_in + c) * k + ky) * k + kx];
                    let (dy, dx) = geom.offset(ky, kx, padding);
                    for_each_valid_row(h, w, dy, dx, |out_range, in_range| {
                        for (a, &b) in out_o[out_range].iter_mut().zip(&x_c[in_range]) {
                            *a = *a + wv * b;
                        }
                    });
                }
            }
        }
    }
    Tensor::from_vec(&[c_out, h, w], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    padding: usize,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [c_out, c_in, k, _] = kernel.shape()[..] else {
        unreachable!("kernel shape validated in forward")
    };
    let (_, h, w) = input.dims3().expect("input shape validated in forward");
    let hw = h * w;
    let x = input.data();
    let wt = kernel.data();
    let p = padding as isize;

    let mut g_in = vec![T::zero(); c_in * hw];
    let mut g_k = vec![T::zero(); wt.len()];
    let mut g_b = vec![T::zero(); c_out];

    for o in 0..c_out {
        let g_o = &grad_out[o * hw..(o + 1) * hw];
        g_b[o] = g_o.iter().copied().sum();
        for c in 0..c_in {
            let x_c = &x[c * hw..(c + 1) * hw];
            let gi_c = &mut g_in[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let idx = ((o * c_in + c) * k + ky) * k + kx;
                    let wv = wt[idx];
                    let dy = ky as isize - p;
                    let dx = kx as isize - p;
                    let mut acc = T::zero();
                    for_each_valid_row(h, w, dy, dx, |out_range, in_range| {
                        let g_row = &g_o[out_range];
                        for (gi, &g) in gi_c[in_range.clone()].iter_mut().zip(g_row) {
                            *gi = *gi + wv * g;
                        }
                        for (&g, &xv) in g_row.iter().zip(&x_c[in_range]) {
                            acc = acc + g * xv;
                        }
                    });
                    g_k[idx] = acc;
                }
            }
        }
    }
    (g_in, g_k, g_b)
}

#[derive(Clone, Copy)]
struct ConvGeometry {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvGeometry {
    fn new<T: Element>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        bias: &Tensor<T>,
        padding: usize,
    ) -> Result<Self> {
        let (c_in, h, w) = input.dims3()?;
        let [c_out, kc, kh, kw] = kernel.shape()[..] else {
            return Err(shape_err!("kernel must be O×C×k×k, got {:?}", kernel.shape()));
        };
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Config(format!("kernel must be square with odd size, got {kh}×{kw}")));
        }
        if padding != (kh - 1) / 2 {
            return Err(Error::Config(format!(
                "padding {padding} does not preserve extent for a {kh}×{kh} kernel"
            )));
        }
        if kc != c_in {
            return Err(shape_err!("kernel expects {kc} input channels, input has {c_in}"));
        }
        if bias.shape() != [c_out] {
            return Err(shape_err!("bias shape {:?} does not match {c_out} outputs", bias.shape()));
        }
        Ok(Self { c_in, c_out, h, w, k: kh })
    }

    fn offset(&self, ky: usize, kx: usize, padding: usize) -> (isize, isize) {
        (ky as isize - padding as isize, kx as isize - padding as isize)
    }
}

/// Calls `f(out_range, in_range)` for every output row where the input row
/// shifted by `(dy, dx)` overlaps the image. Both ranges index flat `H×W`
/// buffers and have equal length.
#[inline]
fn for_each_valid_row(
    h: usize,
    w: usize,
    dy: isize,
    dx: isize,
    mut f: impl FnMut(std::ops::Range<usize>, std::ops::Range<usize>),
) {
    let (h, w) = (h as isize, w as isize);
    let x0 = (-dx).max(0);
    let x1 = (w - dx).min(w);
    if x0 >= x1 {
        return;
    }
    let y0 = (-dy).max(0);
    let y1 = (h - dy).min(h);
    for y in y0..y1 {
        let o = (y * w + x0) as usize;
        let i = ((y + dy) * w + x0 + dx) as usize;
        let len = (x1 - x0) as usize;
        f(o..o + len, i..i + len);
    }
}

pub fn leaky_relu<T: Element>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    map(x, |v| if v >= T::zero() { v } else { slope * v })
}

/// Backward through leaky ReLU given its *output*; the sign of the output
/// equals the sign of the input for any positive slope.
pub fn leaky_relu_backward<T: Element>(out: &[T], grad_out: &[T], slope: T) -> Vec<T> {
    out.iter()
        .zip(grad_out)
        .map(|(&y, &g)| if y >= T::zero() { g } else { slope * g })
        .collect()
}

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// for the element type.
pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let hi = T::one() - T::epsilon() / T::cast(2.0);
    let lo = T::min_positive_value();
    map(x, |v| {
        let s = if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
        s.max(lo).min(hi)
    })
}

pub fn sigmoid_backward<T: Element>(out: &[T], grad_out: &[T]) -> Vec<T> {
    out.iter().zip(grad_out).map(|(&s, &g)| g * s * (T::one() - s)).collect()
}

/// Channel-axis concatenation of `C_i×H×W` maps.
pub fn concat<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
    let (_, h, w) = first.dims3()?;
    let mut channels = 0;
    for p in parts {
        let (c, ph, pw) = p.dims3()?;
        if (ph, pw) != (h, w) {
            return Err(shape_err!("concat spatial mismatch: {h}×{w} vs {ph}×{pw}"));
        }
        channels += c;
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(&[channels, h, w], data)
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(shape_err!("add shape mismatch: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Weighted binary cross-entropy, split into its positive and negative sums:
/// `(-pos_weight·Σ⁺ log p, -neg_weight·Σ⁻ log(1-p))` with `p` clamped into
/// `[eps, 1-eps]`.
pub fn weighted_bce<T: Element>(
    pred: &[T],
    target: &[bool],
    pos_weight: T,
    neg_weight: T,
    eps: T,
) -> (T, T) {
    let mut pos = T::zero();
    let mut neg = T::zero();
    for (&p, &t) in pred.iter().zip(target) {
        let p = p.max(eps).min(T::one() - eps);
        if t {
            pos = pos - p.ln();
        } else {
            neg = neg - (T::one() - p).ln();
        }
    }
    (pos_weight * pos, neg_weight * neg)
}

/// Derivative of [`weighted_bce`] with respect to each prediction. The clamp
/// is treated as a straight-through: the derivative is evaluated at the
/// clamped value so saturated pixels still receive a signal.
pub fn weighted_bce_backward<T: Element>(
    pred: &[T],
    target: &[bool],
    pos_weight: T,
    neg_weight: T,
    eps: T,
    grad_out: T,
) -> Vec<T> {
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.max(eps).min(T::one() - eps);
            let d = if t { -pos_weight / p } else { neg_weight / (T::one() - p) };
            grad_out * d
        })
        .collect()
}

fn map<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}
