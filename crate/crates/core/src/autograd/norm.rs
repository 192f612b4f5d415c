//! Batch normalization, fully connected layers, and per-sample channel
//! scaling (the excite step of SE).

use super::{GradFn, Graph, NodeId};
use crate::tensor::Tensor;

pub struct BatchNormOut {
    pub y: NodeId,
    /// Updated running statistics when in training mode.
    pub new_running: Option<(Tensor, Tensor)>,
}

struct BatchNormGrad {
    // saved normalization state; mean/inv_std are batch stats in training
    // mode and running stats in eval mode
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl GradFn for BatchNormGrad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let gamma = inputs[1];
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let m = (n * h * w) as f64;
        let plane = h * w;

        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                for i in 0..plane {
                    let g = grad.data()[base + i];
                    let xhat = (x.data()[base + i] - self.mean[ci]) * self.inv_std[ci];
                    dgamma[ci] += g * xhat;
                    dbeta[ci] += g;
                    sum_g[ci] += g;
                    sum_gx[ci] += g * xhat;
                }
            }
        }

        let dx = needs[0].then(|| {
            let mut dx = Tensor::zeros(s);
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    let gm = gamma.data()[ci];
                    let istd = self.inv_std[ci];
                    for i in 0..plane {
                        let g = grad.data()[base + i];
                        let v = if self.train {
                            let xhat = (x.data()[base + i] - self.mean[ci]) * istd;
                            gm * istd * (g - sum_g[ci] / m - xhat * sum_gx[ci] / m)
                        } else {
                            gm * istd * g
                        };
                        dx.data_mut()[base + i] = v;
                    }
                }
            }
            dx
        });

        vec![
            dx,
            needs[1].then(|| Tensor::from_vec(dgamma)),
            needs[2].then(|| Tensor::from_vec(dbeta)),
        ]
    }
}

/// Batch normalization over `[N, C, H, W]`.
///
/// Training mode normalizes with batch statistics (biased variance) and
/// reports updated running statistics (unbiased variance, PyTorch
/// convention); eval mode normalizes with the provided running statistics.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    g: &mut Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    running_mean: &Tensor,
    running_var: &Tensor,
    train: bool,
    momentum: f64,
    eps: f64,
) -> BatchNormOut {
    let v = g.value(x);
    let s = v.shape().to_vec();
    assert_eq!(s.len(), 4, "batch_norm expects NCHW");
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    assert_eq!(g.value(gamma).shape(), &[c]);
    assert_eq!(g.value(beta).shape(), &[c]);
    let plane = h * w;
    let m = (n * plane) as f64;

    let (mean, var): (Vec<f64>, Vec<f64>) = if train {
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut sum = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                sum += v.data()[base..base + plane].iter().sum::<f64>();
            }
            mean[ci] = sum / m;
            let mut sq = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for i in 0..plane {
                    let d = v.data()[base + i] - mean[ci];
                    sq += d * d;
                }
            }
            var[ci] = sq / m;
        }
        (mean, var)
    } else {
        (running_mean.data().to_vec(), running_var.data().to_vec())
    };

    let inv_std: Vec<f64> = var.iter().map(|&vv| 1.0 / (vv + eps).sqrt()).collect();

    let mut out = Tensor::zeros(&s);
    {
        let gm = g.value(gamma).data();
        let bt = g.value(beta).data();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                let (mu, istd) = (mean[ci], inv_std[ci]);
                let (a, b) = (gm[ci] * istd, bt[ci] - gm[ci] * istd * mu);
                for i in 0..plane {
                    out.data_mut()[base + i] = a * v.data()[base + i] + b;
                }
            }
        }
    }

    let new_running = train.then(|| {
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let mut rm = running_mean.clone();
        let mut rv = running_var.clone();
        for ci in 0..c {
            rm.data_mut()[ci] = (1.0 - momentum) * rm.data()[ci] + momentum * mean[ci];
            rv.data_mut()[ci] = (1.0 - momentum) * rv.data()[ci] + momentum * var[ci] * unbias;
        }
        (rm, rv)
    });

    let y = g.push_op(
        out,
        vec![x, gamma, beta],
        Box::new(BatchNormGrad {
            mean,
            inv_std,
            train,
        }),
    );
    BatchNormOut { y, new_running }
}

struct LinearGrad {
    has_bias: bool,
}

impl GradFn for LinearGrad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let w = inputs[1];
        let (n, k) = (x.shape()[0], x.shape()[1]);
        let o = w.shape()[0];

        let dx = needs[0].then(|| {
            let mut dx = Tensor::zeros(x.shape());
            for ni in 0..n {
                for ki in 0..k {
                    let mut acc = 0.0;
                    for oi in 0..o {
                        acc += grad.data()[ni * o + oi] * w.data()[oi * k + ki];
                    }
                    dx.data_mut()[ni * k + ki] = acc;
                }
            }
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = Tensor::zeros(w.shape());
            for oi in 0..o {
                for ki in 0..k {
                    let mut acc = 0.0;
                    for ni in 0..n {
                        acc += grad.data()[ni * o + oi] * x.data()[ni * k + ki];
                    }
                    dw.data_mut()[oi * k + ki] = acc;
                }
            }
            dw
        });
        let db = (self.has_bias && needs[2]).then(|| {
            let mut db = Tensor::zeros(&[o]);
            for ni in 0..n {
                for oi in 0..o {
                    db.data_mut()[oi] += grad.data()[ni * o + oi];
                }
            }
            db
        });
        if self.has_bias {
            vec![dx, dw, db]
        } else {
            vec![dx, dw]
        }
    }
}

/// `y = x . w^T + b` for `x: [N, K]`, `w: [O, K]`.
pub fn linear(g: &mut Graph, x: NodeId, weight: NodeId, bias: Option<NodeId>) -> NodeId {
    let xs = g.value(x).shape().to_vec();
    let ws = g.value(weight).shape().to_vec();
    assert_eq!(xs.len(), 2);
    assert_eq!(ws.len(), 2);
    assert_eq!(xs[1], ws[1], "linear dimension mismatch");
    let (n, k, o) = (xs[0], xs[1], ws[0]);
    let mut out = Tensor::zeros(&[n, o]);
    {
        let xd = g.value(x).data();
        let wd = g.value(weight).data();
        let bd = bias.map(|b| g.value(b).data());
        for ni in 0..n {
            for oi in 0..o {
                let mut acc = 0.0;
                for ki in 0..k {
                    acc += xd[ni * k + ki] * wd[oi * k + ki];
                }
                if let Some(bd) = bd {
                    acc += bd[oi];
                }
                out.data_mut()[ni * o + oi] = acc;
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
        Box::new(LinearGrad {
            has_bias: bias.is_some(),
        }),
    )
}

struct ScaleChannelsGrad;

impl GradFn for ScaleChannelsGrad {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        _output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let sc = inputs[1];
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;

        let dx = needs[0].then(|| {
            let mut dx = Tensor::zeros(s);
            for p in 0..n * c {
                let a = sc.data()[p];
                for i in 0..plane {
                    dx.data_mut()[p * plane + i] = grad.data()[p * plane + i] * a;
                }
            }
            dx
        });
        let ds = needs[1].then(|| {
            let mut ds = Tensor::zeros(sc.shape());
            for p in 0..n * c {
                let mut acc = 0.0;
                for i in 0..plane {
                    acc += grad.data()[p * plane + i] * x.data()[p * plane + i];
                }
                ds.data_mut()[p] = acc;
            }
            ds
        });
        vec![dx, ds]
    }
}

/// Multiply `[N, C, H, W]` by a per-sample per-channel gate `[N, C]`.
pub fn scale_channels(g: &mut Graph, x: NodeId, scales: NodeId) -> NodeId {
    let xs = g.value(x).shape().to_vec();
    let ss = g.value(scales).shape().to_vec();
    assert_eq!(xs.len(), 4);
    assert_eq!(ss, &[xs[0], xs[1]], "scale_channels gate must be [N, C]");
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let plane = h * w;
    let mut out = Tensor::zeros(&xs);
    for p in 0..n * c {
        let a = g.value(scales).data()[p];
        let xd = &g.value(x).data()[p * plane..(p + 1) * plane];
        for (o, xv) in out.data_mut()[p * plane..(p + 1) * plane]
            .iter_mut()
            .zip(xd)
        {
            *o = a * xv;
        }
    }
    g.push_op(out, vec![x, scales], Box::new(ScaleChannelsGrad))
}
