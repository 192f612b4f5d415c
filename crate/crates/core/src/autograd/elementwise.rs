//! Elementwise ops, reductions, gathers, and fused loss heads.

use super::{GradFn, Graph, NodeId};
use crate::tensor::Tensor;
use std::sync::Arc;

// ---------------------------------------------------------------- unary ops

struct UnaryGrad {
    // df/dx given (x, y) where y = f(x)
    dfdx: fn(f64, f64) -> f64,
}

impl GradFn for UnaryGrad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let mut out = Tensor::zeros(x.shape());
        for ((o, g), (xv, yv)) in out
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(x.data().iter().zip(output.data()))
        {
            *o = g * (self.dfdx)(*xv, *yv);
        }
        vec![Some(out)]
    }
}

fn unary(g: &mut Graph, x: NodeId, f: fn(f64) -> f64, dfdx: fn(f64, f64) -> f64) -> NodeId {
    let v = g.value(x);
    let data = v.data().iter().map(|&a| f(a)).collect();
    let out = Tensor::new(v.shape().to_vec(), data);
    g.push_op(out, vec![x], Box::new(UnaryGrad { dfdx }))
}

pub fn sigmoid(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, sigmoid_scalar, |_, y| y * (1.0 - y))
}

pub fn silu(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, |x| x * sigmoid_scalar(x), |x, _| {
        let s = sigmoid_scalar(x);
        s * (1.0 + x * (1.0 - s))
    })
}

pub fn relu(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
}

pub fn square(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, |x| x * x, |x, _| 2.0 * x)
}

pub fn sqrt(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, f64::sqrt, |_, y| 0.5 / y)
}

pub fn atan(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, f64::atan, |x, _| 1.0 / (1.0 + x * x))
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Clamp into `[0, 1]`; gradient passes only strictly inside.
pub fn clamp01(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, |x| x.clamp(0.0, 1.0), |x, _| {
        if x > 0.0 && x < 1.0 {
            1.0
        } else {
            0.0
        }
    })
}

struct AffineGrad {
    a: f64,
}

impl GradFn for AffineGrad {
    fn backward(
        &self,
        grad: &Tensor,
        _inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let mut out = grad.clone();
        out.scale_assign(self.a);
        vec![Some(out)]
    }
}

/// `y = a*x + b` with scalar constants.
pub fn affine(g: &mut Graph, x: NodeId, a: f64, b: f64) -> NodeId {
    let v = g.value(x);
    let data = v.data().iter().map(|&t| a * t + b).collect();
    let out = Tensor::new(v.shape().to_vec(), data);
    g.push_op(out, vec![x], Box::new(AffineGrad { a }))
}

// --------------------------------------------------------------- binary ops

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

struct BinaryGrad {
    kind: BinKind,
}

impl GradFn for BinaryGrad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let mut da = needs[0].then(|| Tensor::zeros(a.shape()));
        let mut db = needs[1].then(|| Tensor::zeros(b.shape()));
        for i in 0..grad.numel() {
            let g = grad.data()[i];
            let (av, bv) = (a.data()[i], b.data()[i]);
            let (ga, gb) = match self.kind {
                BinKind::Add => (g, g),
                BinKind::Sub => (g, -g),
                BinKind::Mul => (g * bv, g * av),
                BinKind::Div => (g / bv, -g * av / (bv * bv)),
                // ties route to the first operand
                BinKind::Min => {
                    if av <= bv {
                        (g, 0.0)
                    } else {
                        (0.0, g)
                    }
                }
                BinKind::Max => {
                    if av >= bv {
                        (g, 0.0)
                    } else {
                        (0.0, g)
                    }
                }
            };
            if let Some(da) = da.as_mut() {
                da.data_mut()[i] = ga;
            }
            if let Some(db) = db.as_mut() {
                db.data_mut()[i] = gb;
            }
        }
        vec![da, db]
    }
}

fn binary(g: &mut Graph, a: NodeId, b: NodeId, kind: BinKind) -> NodeId {
    let (av, bv) = (g.value(a), g.value(b));
    assert_eq!(
        av.shape(),
        bv.shape(),
        "elementwise op on mismatched shapes"
    );
    let f = |x: f64, y: f64| match kind {
        BinKind::Add => x + y,
        BinKind::Sub => x - y,
        BinKind::Mul => x * y,
        BinKind::Div => x / y,
        BinKind::Min => x.min(y),
        BinKind::Max => x.max(y),
    };
    let data = av
        .data()
        .iter()
        .zip(bv.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    let out = Tensor::new(av.shape().to_vec(), data);
    g.push_op(out, vec![a, b], Box::new(BinaryGrad { kind }))
}

pub fn add(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    binary(g, a, b, BinKind::Add)
}
pub fn sub(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    binary(g, a, b, BinKind::Sub)
}
pub fn mul(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    binary(g, a, b, BinKind::Mul)
}
pub fn div(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    binary(g, a, b, BinKind::Div)
}
pub fn binary_min(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    binary(g, a, b, BinKind::Min)
}
pub fn binary_max(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    binary(g, a, b, BinKind::Max)
}

// --------------------------------------------------------------- reductions

struct SumGrad {
    scale: f64,
    shape: Vec<usize>,
}

impl GradFn for SumGrad {
    fn backward(
        &self,
        grad: &Tensor,
        _inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(&self.shape, grad.item() * self.scale))]
    }
}

pub fn sum_all(g: &mut Graph, x: NodeId) -> NodeId {
    let v = g.value(x);
    let s: f64 = v.data().iter().sum();
    let shape = v.shape().to_vec();
    g.push_op(
        Tensor::scalar(s),
        vec![x],
        Box::new(SumGrad { scale: 1.0, shape }),
    )
}

pub fn mean_all(g: &mut Graph, x: NodeId) -> NodeId {
    let v = g.value(x);
    let n = v.numel() as f64;
    let s: f64 = v.data().iter().sum();
    let shape = v.shape().to_vec();
    g.push_op(
        Tensor::scalar(s / n),
        vec![x],
        Box::new(SumGrad {
            scale: 1.0 / n,
            shape,
        }),
    )
}

// ------------------------------------------------------------------ gather

struct GatherGrad {
    indices: Arc<Vec<usize>>,
    in_shape: Vec<usize>,
}

impl GradFn for GatherGrad {
    fn backward(
        &self,
        grad: &Tensor,
        _inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let mut dx = Tensor::zeros(&self.in_shape);
        for (i, &idx) in self.indices.iter().enumerate() {
            dx.data_mut()[idx] += grad.data()[i];
        }
        vec![Some(dx)]
    }
}

/// Pick flat offsets out of `x` into a vector, duplicates allowed.
pub fn gather(g: &mut Graph, x: NodeId, indices: Arc<Vec<usize>>) -> NodeId {
    let v = g.value(x);
    let data: Vec<f64> = indices.iter().map(|&i| v.data()[i]).collect();
    let in_shape = v.shape().to_vec();
    let out = Tensor::from_vec(data);
    g.push_op(out, vec![x], Box::new(GatherGrad { indices, in_shape }))
}

// ----------------------------------------------------------------- scatter

struct ScatterGrad {
    // slot -> index of the source entry that produced it (last writer wins)
    writers: Vec<(usize, usize)>,
    src_len: usize,
}

impl GradFn for ScatterGrad {
    fn backward(
        &self,
        grad: &Tensor,
        _inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let mut dsrc = Tensor::zeros(&[self.src_len]);
        for &(slot, src) in &self.writers {
            dsrc.data_mut()[src] += grad.data()[slot];
        }
        vec![Some(dsrc)]
    }
}

/// Place `src[i]` at `indices[i]` in a zero vector of length `len`.
/// Duplicate indices resolve to the last writer.
pub fn scatter(g: &mut Graph, src: NodeId, indices: &[usize], len: usize) -> NodeId {
    let sv = g.value(src);
    assert_eq!(sv.shape(), &[indices.len()], "scatter source shape");
    let mut out = Tensor::zeros(&[len]);
    let mut writer_of = vec![usize::MAX; len];
    for (i, &idx) in indices.iter().enumerate() {
        out.data_mut()[idx] = sv.data()[i];
        writer_of[idx] = i;
    }
    let writers: Vec<(usize, usize)> = writer_of
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != usize::MAX)
        .map(|(slot, &w)| (slot, w))
        .collect();
    let src_len = indices.len();
    g.push_op(out, vec![src], Box::new(ScatterGrad { writers, src_len }))
}

// ------------------------------------------------------------------ concat

struct ConcatGrad {
    // per parent: (channels, spatial) so the split can be undone
    parts: Vec<usize>,
    n: usize,
    spatial: usize,
    shapes: Vec<Vec<usize>>,
}

impl GradFn for ConcatGrad {
    fn backward(
        &self,
        grad: &Tensor,
        _inputs: &[&Tensor],
        _output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let c_total: usize = self.parts.iter().sum();
        let mut outs: Vec<Option<Tensor>> = Vec::with_capacity(self.parts.len());
        let mut c_off = 0;
        for (pi, &c) in self.parts.iter().enumerate() {
            if !needs[pi] {
                outs.push(None);
                c_off += c;
                continue;
            }
            let mut t = Tensor::zeros(&self.shapes[pi]);
            for n in 0..self.n {
                let src = (n * c_total + c_off) * self.spatial;
                let dst = n * c * self.spatial;
                t.data_mut()[dst..dst + c * self.spatial]
                    .copy_from_slice(&grad.data()[src..src + c * self.spatial]);
            }
            outs.push(Some(t));
            c_off += c;
        }
        outs
    }
}

/// Concatenate `[N, C_i, H, W]` tensors along the channel axis.
pub fn concat_channels(g: &mut Graph, xs: &[NodeId]) -> NodeId {
    assert!(!xs.is_empty());
    let first = g.value(xs[0]).shape().to_vec();
    assert_eq!(first.len(), 4, "concat_channels expects NCHW");
    let (n, h, w) = (first[0], first[2], first[3]);
    let spatial = h * w;
    let mut parts = Vec::with_capacity(xs.len());
    let mut shapes = Vec::with_capacity(xs.len());
    for &x in xs {
        let s = g.value(x).shape();
        assert_eq!(s[0], n);
        assert_eq!(&s[2..], &[h, w], "concat_channels spatial mismatch");
        parts.push(s[1]);
        shapes.push(s.to_vec());
    }
    let c_total: usize = parts.iter().sum();
    let mut out = Tensor::zeros(&[n, c_total, h, w]);
    let mut c_off = 0;
    for (&x, &c) in xs.iter().zip(&parts) {
        let v = g.value(x);
        for ni in 0..n {
            let src = ni * c * spatial;
            let dst = (ni * c_total + c_off) * spatial;
            out.data_mut()[dst..dst + c * spatial].copy_from_slice(&v.data()[src..src + c * spatial]);
        }
        c_off += c;
    }
    g.push_op(
        out,
        xs.to_vec(),
        Box::new(ConcatGrad {
            parts,
            n,
            spatial,
            shapes,
        }),
    )
}

// ------------------------------------------------------------- fused losses

struct L1Grad {
    target: Arc<Tensor>,
}

impl GradFn for L1Grad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let scale = grad.item() / p.numel() as f64;
        let mut dp = Tensor::zeros(p.shape());
        for (d, (pv, tv)) in dp
            .data_mut()
            .iter_mut()
            .zip(p.data().iter().zip(self.target.data()))
        {
            *d = scale * (pv - tv).signum();
        }
        vec![Some(dp)]
    }
}

/// Mean absolute error against a constant target.
pub fn l1_loss(g: &mut Graph, pred: NodeId, target: Arc<Tensor>) -> NodeId {
    let p = g.value(pred);
    assert_eq!(p.shape(), target.shape(), "l1_loss shape mismatch");
    let n = p.numel() as f64;
    let s: f64 = p
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    g.push_op(
        Tensor::scalar(s / n),
        vec![pred],
        Box::new(L1Grad { target }),
    )
}

struct MseGrad {
    target: Arc<Tensor>,
}

impl GradFn for MseGrad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let scale = 2.0 * grad.item() / p.numel() as f64;
        let mut dp = Tensor::zeros(p.shape());
        for (d, (pv, tv)) in dp
            .data_mut()
            .iter_mut()
            .zip(p.data().iter().zip(self.target.data()))
        {
            *d = scale * (pv - tv);
        }
        vec![Some(dp)]
    }
}

/// Mean squared error against a constant target.
pub fn mse_loss(g: &mut Graph, pred: NodeId, target: Arc<Tensor>) -> NodeId {
    let p = g.value(pred);
    assert_eq!(p.shape(), target.shape(), "mse_loss shape mismatch");
    let n = p.numel() as f64;
    let s: f64 = p
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    g.push_op(
        Tensor::scalar(s / n),
        vec![pred],
        Box::new(MseGrad { target }),
    )
}

struct BceGrad {
    target: Arc<Tensor>,
}

impl GradFn for BceGrad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let z = inputs[0];
        let scale = grad.item() / z.numel() as f64;
        let mut dz = Tensor::zeros(z.shape());
        for (d, (zv, tv)) in dz
            .data_mut()
            .iter_mut()
            .zip(z.data().iter().zip(self.target.data()))
        {
            *d = scale * (sigmoid_scalar(*zv) - tv);
        }
        vec![Some(dz)]
    }
}

/// Numerically stable mean binary cross-entropy on logits.
pub fn bce_with_logits(g: &mut Graph, logits: NodeId, target: Arc<Tensor>) -> NodeId {
    let z = g.value(logits);
    assert_eq!(z.shape(), target.shape(), "bce_with_logits shape mismatch");
    let n = z.numel() as f64;
    let s: f64 = z
        .data()
        .iter()
        .zip(target.data())
        .map(|(&zv, &tv)| zv.max(0.0) - zv * tv + (-zv.abs()).exp().ln_1p())
        .sum();
    g.push_op(
        Tensor::scalar(s / n),
        vec![logits],
        Box::new(BceGrad { target }),
    )
}

struct BcePairGrad;

impl GradFn for BcePairGrad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let z = inputs[0];
        let t = inputs[1];
        let scale = grad.item() / z.numel() as f64;
        let dz = needs[0].then(|| {
            let mut dz = Tensor::zeros(z.shape());
            for (d, (zv, tv)) in dz.data_mut().iter_mut().zip(z.data().iter().zip(t.data())) {
                *d = scale * (sigmoid_scalar(*zv) - tv);
            }
            dz
        });
        let dt = needs[1].then(|| {
            let mut dt = Tensor::zeros(t.shape());
            for (d, zv) in dt.data_mut().iter_mut().zip(z.data()) {
                *d = -scale * zv;
            }
            dt
        });
        vec![dz, dt]
    }
}

/// BCE on logits where the target itself is part of the graph (soft
/// prediction-dependent targets); gradients flow to both sides.
pub fn bce_with_logits_pair(g: &mut Graph, logits: NodeId, target: NodeId) -> NodeId {
    let z = g.value(logits);
    let t = g.value(target);
    assert_eq!(z.shape(), t.shape(), "bce_with_logits_pair shape mismatch");
    let n = z.numel() as f64;
    let s: f64 = z
        .data()
        .iter()
        .zip(t.data())
        .map(|(&zv, &tv)| zv.max(0.0) - zv * tv + (-zv.abs()).exp().ln_1p())
        .sum();
    g.push_op(
        Tensor::scalar(s / n),
        vec![logits, target],
        Box::new(BcePairGrad),
    )
}
