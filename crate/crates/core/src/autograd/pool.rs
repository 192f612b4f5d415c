//! Pooling, nearest-neighbor upsampling, and the Focus space-to-depth shuffle.

use super::{GradFn, Graph, NodeId};
use crate::parallel::{chunks_mut_indexed, map_indexed};
use crate::tensor::Tensor;

struct MaxPoolGrad {
    argmax: Vec<u32>,
    in_shape: Vec<usize>,
}

impl GradFn for MaxPoolGrad {
    fn backward(
        &self,
        grad: &Tensor,
        _inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let mut dx = Tensor::zeros(&self.in_shape);
        for (g, &idx) in grad.data().iter().zip(&self.argmax) {
            dx.data_mut()[idx as usize] += g;
        }
        vec![Some(dx)]
    }
}

/// Stride-1 same-padded max pooling with an odd square kernel, as used by
/// spatial pyramid pooling. Padding cells never win: they are skipped, not
/// treated as zeros.
pub fn max_pool2d(g: &mut Graph, x: NodeId, k: usize) -> NodeId {
    assert!(k % 2 == 1, "max_pool2d kernel must be odd");
    let v = g.value(x);
    let s = v.shape();
    assert_eq!(s.len(), 4);
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let pad = k / 2;
    let plane = h * w;
    let xd = v.data();

    let results: Vec<(f64, u32)> = map_indexed(n * c * plane, |flat| {
        let (p, rem) = (flat / plane, flat % plane);
        let (oy, ox) = (rem / w, rem % w);
        let base = p * plane;
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = 0usize;
        for ki in 0..k {
            let iy = (oy + ki) as isize - pad as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            for kj in 0..k {
                let ix = (ox + kj) as isize - pad as isize;
                if ix < 0 || ix >= w as isize {
                    continue;
                }
                let idx = base + iy as usize * w + ix as usize;
                if xd[idx] > best {
                    best = xd[idx];
                    best_idx = idx;
                }
            }
        }
        (best, best_idx as u32)
    });

    let mut out = Tensor::zeros(s);
    let mut argmax = vec![0u32; results.len()];
    for (i, (val, idx)) in results.into_iter().enumerate() {
        out.data_mut()[i] = val;
        argmax[i] = idx;
    }
    let in_shape = s.to_vec();
    g.push_op(out, vec![x], Box::new(MaxPoolGrad { argmax, in_shape }))
}

struct GlobalAvgGrad {
    in_shape: Vec<usize>,
}

impl GradFn for GlobalAvgGrad {
    fn backward(
        &self,
        grad: &Tensor,
        _inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (h, w) = (self.in_shape[2], self.in_shape[3]);
        let scale = 1.0 / (h * w) as f64;
        let mut dx = Tensor::zeros(&self.in_shape);
        let plane = h * w;
        for (p, &gv) in grad.data().iter().enumerate() {
            let v = gv * scale;
            for d in dx.data_mut()[p * plane..(p + 1) * plane].iter_mut() {
                *d = v;
            }
        }
        vec![Some(dx)]
    }
}

/// `[N, C, H, W] -> [N, C]` spatial mean (the squeeze step of SE).
pub fn global_avg_pool(g: &mut Graph, x: NodeId) -> NodeId {
    let v = g.value(x);
    let s = v.shape();
    assert_eq!(s.len(), 4);
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, c]);
    for p in 0..n * c {
        let sum: f64 = v.data()[p * plane..(p + 1) * plane].iter().sum();
        out.data_mut()[p] = sum / plane as f64;
    }
    let in_shape = s.to_vec();
    g.push_op(out, vec![x], Box::new(GlobalAvgGrad { in_shape }))
}

struct UpsampleGrad {
    factor: usize,
    in_shape: Vec<usize>,
}

impl GradFn for UpsampleGrad {
    fn backward(
        &self,
        grad: &Tensor,
        _inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let f = self.factor;
        let (n, c, h, w) = (
            self.in_shape[0],
            self.in_shape[1],
            self.in_shape[2],
            self.in_shape[3],
        );
        let (ho, wo) = (h * f, w * f);
        let mut dx = Tensor::zeros(&self.in_shape);
        for p in 0..n * c {
            let gplane = &grad.data()[p * ho * wo..(p + 1) * ho * wo];
            let dplane = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                let iy = oy / f;
                for ox in 0..wo {
                    dplane[iy * w + ox / f] += gplane[oy * wo + ox];
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample_nearest(g: &mut Graph, x: NodeId, factor: usize) -> NodeId {
    assert!(factor >= 1);
    let v = g.value(x);
    let s = v.shape();
    assert_eq!(s.len(), 4);
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    {
        let xd = v.data();
        let out_plane = ho * wo;
        chunks_mut_indexed(out.data_mut(), out_plane, |p, plane| {
            let xplane = &xd[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                let iy = oy / factor;
                for ox in 0..wo {
                    plane[oy * wo + ox] = xplane[iy * w + ox / factor];
                }
            }
        });
    }
    let in_shape = s.to_vec();
    g.push_op(
        out,
        vec![x],
        Box::new(UpsampleGrad {
            factor,
            in_shape,
        }),
    )
}

struct SpaceToDepthGrad {
    in_shape: Vec<usize>,
}

// Sub-grid order matches the conventional Focus slicing:
// (dy, dx) = (0,0), (1,0), (0,1), (1,1).
const S2D_OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

impl GradFn for SpaceToDepthGrad {
    fn backward(
        &self,
        grad: &Tensor,
        _inputs: &[&Tensor],
        _output: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (n, c, h, w) = (
            self.in_shape[0],
            self.in_shape[1],
            self.in_shape[2],
            self.in_shape[3],
        );
        let (ho, wo) = (h / 2, w / 2);
        let mut dx = Tensor::zeros(&self.in_shape);
        for ni in 0..n {
            for (gi, &(dy, dxo)) in S2D_OFFSETS.iter().enumerate() {
                for ci in 0..c {
                    let oc = gi * c + ci;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = grad.data()[((ni * 4 * c + oc) * ho + oy) * wo + ox];
                            dx.data_mut()[((ni * c + ci) * h + 2 * oy + dy) * w + 2 * ox + dxo] = gv;
                        }
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

/// The Focus shuffle: gather the four parity sub-grids of a 2x2 block into
/// channels, halving the spatial size. Requires even H and W.
pub fn space_to_depth2(g: &mut Graph, x: NodeId) -> NodeId {
    let v = g.value(x);
    let s = v.shape();
    assert_eq!(s.len(), 4);
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    assert!(h % 2 == 0 && w % 2 == 0, "space_to_depth2 needs even dims");
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, 4 * c, ho, wo]);
    for ni in 0..n {
        for (gi, &(dy, dxo)) in S2D_OFFSETS.iter().enumerate() {
            for ci in 0..c {
                let oc = gi * c + ci;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let val = v.data()[((ni * c + ci) * h + 2 * oy + dy) * w + 2 * ox + dxo];
                        out.data_mut()[((ni * 4 * c + oc) * ho + oy) * wo + ox] = val;
                    }
                }
            }
        }
    }
    let in_shape = s.to_vec();
    g.push_op(out, vec![x], Box::new(SpaceToDepthGrad { in_shape }))
}
