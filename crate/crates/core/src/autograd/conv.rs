//! 2-D convolution and transposed convolution.
//!
//! Convolution runs as im2col + GEMM; the GEMM splits over output rows so
//! the parallel and sequential paths produce identical bit patterns.

use super::{GradFn, Graph, NodeId};
use crate::parallel::chunks_mut_indexed;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn from_shapes(x: &[usize], wt: &[usize], stride: usize, pad: usize) -> Self {
        assert_eq!(x.len(), 4, "conv2d input must be NCHW");
        assert_eq!(wt.len(), 4, "conv2d weight must be [Cout, Cin, k, k]");
        assert_eq!(x[1], wt[1], "conv2d channel mismatch");
        assert_eq!(wt[2], wt[3], "conv2d kernels are square");
        let k = wt[2];
        let h_out = (x[2] + 2 * pad - k) / stride + 1;
        let w_out = (x[3] + 2 * pad - k) / stride + 1;
        ConvGeom {
            n: x[0],
            c_in: x[1],
            h: x[2],
            w: x[3],
            c_out: wt[0],
            k,
            stride,
            pad,
            h_out,
            w_out,
        }
    }

    fn k_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn m_len(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfold one image `[Cin, H, W]` into `[Cin*k*k, Hout*Wout]`.
fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let m = g.m_len();
    let (k, s, p) = (g.k, g.stride, g.pad);
    let (h, w) = (g.h, g.w);
    let (h_out, w_out) = (g.h_out, g.w_out);
    chunks_mut_indexed(col, m, |row, out| {
        let ci = row / (k * k);
        let ki = (row / k) % k;
        let kj = row % k;
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for oy in 0..h_out {
            let iy = (oy * s + ki) as isize - p as isize;
            let base = oy * w_out;
            if iy < 0 || iy >= h as isize {
                out[base..base + w_out].fill(0.0);
                continue;
            }
            let src = &plane[iy as usize * w..(iy as usize + 1) * w];
            for ox in 0..w_out {
                let ix = (ox * s + kj) as isize - p as isize;
                out[base + ox] = if ix < 0 || ix >= w as isize {
                    0.0
                } else {
                    src[ix as usize]
                };
            }
        }
    });
}

/// Fold `[Cin*k*k, Hout*Wout]` gradients back onto an image, accumulating.
fn col2im_add(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let m = g.m_len();
    let (k, s, p) = (g.k, g.stride, g.pad);
    let (h, w) = (g.h, g.w);
    let plane = h * w;
    // one task per input channel keeps the scatter race-free
    chunks_mut_mut_planes(dx, plane, |ci, dplane| {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &col[row * m..(row + 1) * m];
                for oy in 0..g.h_out {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..g.w_out {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dplane[iy as usize * w + ix as usize] += src[oy * g.w_out + ox];
                    }
                }
            }
        }
    });
}

fn chunks_mut_mut_planes<F>(data: &mut [f64], plane: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    chunks_mut_indexed(data, plane, f);
}

/// `y[c][m] += w[c][:] . col[:][m]` over rows of `y`.
fn gemm_rows(wt: &[f64], col: &[f64], y: &mut [f64], k_len: usize, m: usize) {
    chunks_mut_indexed(y, m, |c, yrow| {
        let wrow = &wt[c * k_len..(c + 1) * k_len];
        for (kk, &a) in wrow.iter().enumerate() {
            let crow = &col[kk * m..(kk + 1) * m];
            for (yv, cv) in yrow.iter_mut().zip(crow) {
                *yv += a * cv;
            }
        }
    });
}

struct Conv2dGrad {
    geom: ConvGeom,
    has_bias: bool,
}

impl GradFn for Conv2dGrad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let g = self.geom;
        let x = inputs[0];
        let wt = inputs[1];
        let (k_len, m) = (g.k_len(), g.m_len());

        let mut dx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut dw = needs[1].then(|| Tensor::zeros(wt.shape()));
        let db = if self.has_bias && needs[2] {
            let mut db = Tensor::zeros(&[g.c_out]);
            for n in 0..g.n {
                for c in 0..g.c_out {
                    let row = &grad.data()[(n * g.c_out + c) * m..(n * g.c_out + c + 1) * m];
                    db.data_mut()[c] += row.iter().sum::<f64>();
                }
            }
            Some(db)
        } else {
            None
        };

        if dx.is_some() || dw.is_some() {
            let mut col = vec![0.0; k_len * m];
            let mut dcol = vec![0.0; k_len * m];
            for n in 0..g.n {
                let x_n = &x.data()[n * g.c_in * g.h * g.w..(n + 1) * g.c_in * g.h * g.w];
                let dy_n = &grad.data()[n * g.c_out * m..(n + 1) * g.c_out * m];
                if dw.is_some() {
                    im2col(x_n, &g, &mut col);
                    let dwd = dw.as_mut().unwrap().data_mut();
                    chunks_mut_indexed(dwd, k_len, |c, dwrow| {
                        let dyrow = &dy_n[c * m..(c + 1) * m];
                        for (kk, slot) in dwrow.iter_mut().enumerate() {
                            let crow = &col[kk * m..(kk + 1) * m];
                            let mut acc = 0.0;
                            for (a, b) in dyrow.iter().zip(crow) {
                                acc += a * b;
                            }
                            *slot += acc;
                        }
                    });
                }
                if let Some(dx) = dx.as_mut() {
                    dcol.fill(0.0);
                    // dcol = W^T . dy
                    chunks_mut_indexed(&mut dcol, m, |kk, drow| {
                        for c in 0..g.c_out {
                            let a = wt.data()[c * k_len + kk];
                            if a == 0.0 {
                                continue;
                            }
                            let dyrow = &dy_n[c * m..(c + 1) * m];
                            for (dv, yv) in drow.iter_mut().zip(dyrow) {
                                *dv += a * yv;
                            }
                        }
                    });
                    let dx_n = &mut dx.data_mut()[n * g.c_in * g.h * g.w..(n + 1) * g.c_in * g.h * g.w];
                    col2im_add(&dcol, &g, dx_n);
                }
            }
        }

        if self.has_bias {
            vec![dx, dw, db]
        } else {
            vec![dx, dw]
        }
    }
}

/// `conv2d(x, w, b)` with square kernel, zero padding `pad`, square stride.
pub fn conv2d(
    g: &mut Graph,
    x: NodeId,
    weight: NodeId,
    bias: Option<NodeId>,
    stride: usize,
    pad: usize,
) -> NodeId {
    let geom = ConvGeom::from_shapes(g.value(x).shape(), g.value(weight).shape(), stride, pad);
    let (k_len, m) = (geom.k_len(), geom.m_len());
    let mut out = Tensor::zeros(&[geom.n, geom.c_out, geom.h_out, geom.w_out]);
    let mut col = vec![0.0; k_len * m];
    for n in 0..geom.n {
        let x_n = &g.value(x).data()[n * geom.c_in * geom.h * geom.w..(n + 1) * geom.c_in * geom.h * geom.w];
        im2col(x_n, &geom, &mut col);
        let y_n = &mut out.data_mut()[n * geom.c_out * m..(n + 1) * geom.c_out * m];
        gemm_rows(g.value(weight).data(), &col, y_n, k_len, m);
        if let Some(b) = bias {
            let bv = g.value(b);
            for c in 0..geom.c_out {
                let add = bv.data()[c];
                for v in y_n[c * m..(c + 1) * m].iter_mut() {
                    *v += add;
                }
            }
        }
    }
    let mut parents = vec![x, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    g.push_op(
        out,
        parents,
        Box::new(Conv2dGrad {
            geom,
            has_bias: bias.is_some(),
        }),
    )
}

#[derive(Clone, Copy)]
struct ConvTGeom {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    h_out: usize,
    w_out: usize,
}

struct ConvTranspose2dGrad {
    geom: ConvTGeom,
    has_bias: bool,
}

impl GradFn for ConvTranspose2dGrad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let g = self.geom;
        let x = inputs[0];
        let wt = inputs[1];
        let (k, s) = (g.k, g.stride);
        let out_plane = g.h_out * g.w_out;

        let db = if self.has_bias && needs[2] {
            let mut db = Tensor::zeros(&[g.c_out]);
            for n in 0..g.n {
                for c in 0..g.c_out {
                    let row = &grad.data()[(n * g.c_out + c) * out_plane..(n * g.c_out + c + 1) * out_plane];
                    db.data_mut()[c] += row.iter().sum::<f64>();
                }
            }
            Some(db)
        } else {
            None
        };

        let dx = needs[0].then(|| {
            let mut dx = Tensor::zeros(x.shape());
            for n in 0..g.n {
                let base = n * g.c_in * g.h * g.w;
                let dx_n = &mut dx.data_mut()[base..base + g.c_in * g.h * g.w];
                chunks_mut_indexed(dx_n, g.h * g.w, |ci, plane| {
                    for co in 0..g.c_out {
                        let dy_p = &grad.data()
                            [(n * g.c_out + co) * out_plane..(n * g.c_out + co + 1) * out_plane];
                        for iy in 0..g.h {
                            for ix in 0..g.w {
                                let mut acc = 0.0;
                                for ki in 0..k {
                                    for kj in 0..k {
                                        let (oy, ox) = (iy * s + ki, ix * s + kj);
                                        if oy < g.h_out && ox < g.w_out {
                                            acc += wt.data()[((ci * g.c_out + co) * k + ki) * k + kj]
                                                * dy_p[oy * g.w_out + ox];
                                        }
                                    }
                                }
                                plane[iy * g.w + ix] += acc;
                            }
                        }
                    }
                });
            }
            dx
        });

        let dw = needs[1].then(|| {
            let mut dw = Tensor::zeros(wt.shape());
            let row = g.c_out * k * k;
            for n in 0..g.n {
                let x_n = &x.data()[n * g.c_in * g.h * g.w..(n + 1) * g.c_in * g.h * g.w];
                let dwd = dw.data_mut();
                chunks_mut_indexed(dwd, row, |ci, dwrow| {
                    let xp = &x_n[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                    for co in 0..g.c_out {
                        let dy_p = &grad.data()
                            [(n * g.c_out + co) * out_plane..(n * g.c_out + co + 1) * out_plane];
                        for ki in 0..k {
                            for kj in 0..k {
                                let mut acc = 0.0;
                                for iy in 0..g.h {
                                    let oy = iy * s + ki;
                                    if oy >= g.h_out {
                                        continue;
                                    }
                                    for ix in 0..g.w {
                                        let ox = ix * s + kj;
                                        if ox < g.w_out {
                                            acc += xp[iy * g.w + ix] * dy_p[oy * g.w_out + ox];
                                        }
                                    }
                                }
                                dwrow[(co * k + ki) * k + kj] += acc;
                            }
                        }
                    }
                });
            }
            dw
        });

        if self.has_bias {
            vec![dx, dw, db]
        } else {
            vec![dx, dw]
        }
    }
}

/// Transposed convolution with weight `[Cin, Cout, k, k]` and no padding:
/// output side = `(in - 1) * stride + k`.
pub fn conv_transpose2d(
    g: &mut Graph,
    x: NodeId,
    weight: NodeId,
    bias: Option<NodeId>,
    stride: usize,
) -> NodeId {
    let xs = g.value(x).shape().to_vec();
    let ws = g.value(weight).shape().to_vec();
    assert_eq!(xs.len(), 4);
    assert_eq!(ws.len(), 4);
    assert_eq!(xs[1], ws[0], "conv_transpose2d channel mismatch");
    assert_eq!(ws[2], ws[3]);
    let k = ws[2];
    let geom = ConvTGeom {
        n: xs[0],
        c_in: xs[1],
        h: xs[2],
        w: xs[3],
        c_out: ws[1],
        k,
        stride,
        h_out: (xs[2] - 1) * stride + k,
        w_out: (xs[3] - 1) * stride + k,
    };
    let out_plane = geom.h_out * geom.w_out;
    let mut out = Tensor::zeros(&[geom.n, geom.c_out, geom.h_out, geom.w_out]);
    {
        let xd = g.value(x).data();
        let wd = g.value(weight).data();
        let bd = bias.map(|b| g.value(b).data());
        for n in 0..geom.n {
            let base = n * geom.c_out * out_plane;
            let out_n = &mut out.data_mut()[base..base + geom.c_out * out_plane];
            chunks_mut_indexed(out_n, out_plane, |co, plane| {
                for ci in 0..geom.c_in {
                    let xp = &xd[(n * geom.c_in + ci) * geom.h * geom.w
                        ..(n * geom.c_in + ci + 1) * geom.h * geom.w];
                    for iy in 0..geom.h {
                        for ix in 0..geom.w {
                            let v = xp[iy * geom.w + ix];
                            if v == 0.0 {
                                continue;
                            }
                            for ki in 0..k {
                                let oy = iy * stride + ki;
                                for kj in 0..k {
                                    let ox = ix * stride + kj;
                                    plane[oy * geom.w_out + ox] +=
                                        wd[((ci * geom.c_out + co) * k + ki) * k + kj] * v;
                                }
                            }
                        }
                    }
                }
                if let Some(bd) = bd {
                    let add = bd[co];
                    for p in plane.iter_mut() {
                        *p += add;
                    }
                }
            });
        }
    }
    let mut parents = vec![x, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    g.push_op(
        out,
        parents,
        Box::new(ConvTranspose2dGrad {
            geom,
            has_bias: bias.is_some(),
        }),
    )
}
