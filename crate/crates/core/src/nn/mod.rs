//! Network building blocks over the autograd graph.
//!
//! Parameters live in a [`ParamStore`] keyed by hierarchical dotted names
//! (`backbone.m1.conv.weight`); layers hold [`ParamId`] handles. A
//! [`Forward`] ties one store to one graph for a single forward/backward
//! pass and collects batch-norm running-statistic updates for the trainer
//! to apply afterwards.

pub mod init;

use crate::autograd::{self, Graph, NodeId};
use crate::tensor::Tensor;
use indexmap::IndexMap;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    /// Ordinal over the store's insertion order.
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(index: usize) -> Self {
        ParamId(index)
    }
}

/// Optimizer treatment of an entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable, subject to weight decay (conv/linear weights).
    Weight,
    /// Trainable, no weight decay (biases, norm affine terms).
    Gain,
    /// Not trainable (batch-norm running statistics).
    Buffer,
}

pub struct ParamEntry {
    pub tensor: Tensor,
    pub kind: ParamKind,
}

#[derive(Default)]
pub struct ParamStore {
    entries: IndexMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor, kind: ParamKind) -> ParamId {
        let name = name.into();
        let (idx, old) = self.entries.insert_full(name.clone(), ParamEntry { tensor, kind });
        assert!(old.is_none(), "duplicate parameter name {name}");
        ParamId(idx)
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).unwrap().0
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &ParamEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, e))| (ParamId(i), n.as_str(), e))
    }

    /// Count trainable parameter elements, optionally restricted to a
    /// dotted-name prefix.
    pub fn count_trainable(&self, prefix: Option<&str>) -> usize {
        self.entries
            .iter()
            .filter(|(n, e)| {
                e.kind != ParamKind::Buffer
                    && prefix.is_none_or(|p| n.starts_with(p))
            })
            .map(|(_, e)| e.tensor.numel())
            .sum()
    }
}

/// One forward pass: a fresh graph bound to a store.
pub struct Forward<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    nodes: Vec<Option<NodeId>>,
    train: bool,
    track_grads: bool,
    bn_updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Forward<'a> {
    pub fn new(store: &'a ParamStore, train: bool, track_grads: bool) -> Self {
        Forward {
            graph: Graph::new(),
            store,
            nodes: vec![None; store.len()],
            train,
            track_grads,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(&self) -> bool {
        self.train
    }

    /// Insert an input tensor as a constant leaf.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.graph.leaf(t)
    }

    /// Lazily insert a parameter into the graph (once per pass).
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.nodes[id.0] {
            return n;
        }
        let t = self.store.tensor(id).clone();
        let n = if self.track_grads {
            self.graph.param(t)
        } else {
            self.graph.leaf(t)
        };
        self.nodes[id.0] = Some(n);
        n
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor {
        self.store.tensor(id)
    }

    pub fn node_of(&self, id: ParamId) -> Option<NodeId> {
        self.nodes[id.0]
    }

    fn push_bn_update(&mut self, id: ParamId, t: Tensor) {
        self.bn_updates.push((id, t));
    }

    /// Running-statistic updates accumulated during a training pass.
    pub fn take_bn_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Gradients for every parameter that received one.
    pub fn param_grads(
        &self,
        grads: &mut autograd::Gradients,
    ) -> Vec<(ParamId, Tensor)> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(n) = node {
                if let Some(g) = grads.take(*n) {
                    out.push((ParamId(i), g));
                }
            }
        }
        out
    }
}

/// Compute cost of one forward pass. `macs` counts convolution/linear
/// multiply-accumulates once; `pointwise` counts per-element work
/// (bias, normalization, activations, pooling windows, additions).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cost {
    pub macs: u128,
    pub pointwise: u128,
}

impl Cost {
    pub fn add(&mut self, other: Cost) {
        self.macs += other.macs;
        self.pointwise += other.pointwise;
    }

    /// Reported GFLOPs: multiply-accumulates counted once plus pointwise
    /// work, matching the published model-complexity tables.
    pub fn gflops(&self) -> f64 {
        (self.macs + self.pointwise) as f64 / 1e9
    }
}

// ------------------------------------------------------------------ layers

pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        with_bias: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        let weight = store.register(
            format!("{path}.weight"),
            init::kaiming_uniform(&[out_c, in_c, k, k], fan_in, rng),
            ParamKind::Weight,
        );
        let bias = with_bias.then(|| {
            store.register(
                format!("{path}.bias"),
                init::bias_uniform(out_c, fan_in, rng),
                ParamKind::Gain,
            )
        });
        Conv2d {
            weight,
            bias,
            in_c,
            out_c,
            k,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let w = fx.param(self.weight);
        let b = self.bias.map(|b| fx.param(b));
        autograd::conv2d(&mut fx.graph, x, w, b, self.stride, self.pad)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn cost(&self, h: usize, w: usize) -> (Cost, (usize, usize)) {
        let (ho, wo) = self.out_hw(h, w);
        let out_elems = (self.out_c * ho * wo) as u128;
        (
            Cost {
                macs: (self.k * self.k * self.in_c) as u128 * out_elems,
                pointwise: if self.bias.is_some() { out_elems } else { 0 },
            },
            (ho, wo),
        )
    }
}

pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub c: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, path: &str, c: usize) -> Self {
        BatchNorm2d {
            gamma: store.register(format!("{path}.gamma"), Tensor::full(&[c], 1.0), ParamKind::Gain),
            beta: store.register(format!("{path}.beta"), Tensor::zeros(&[c]), ParamKind::Gain),
            running_mean: store.register(
                format!("{path}.running_mean"),
                Tensor::zeros(&[c]),
                ParamKind::Buffer,
            ),
            running_var: store.register(
                format!("{path}.running_var"),
                Tensor::full(&[c], 1.0),
                ParamKind::Buffer,
            ),
            c,
            eps: 1e-3,
            momentum: 0.03,
        }
    }

    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let gamma = fx.param(self.gamma);
        let beta = fx.param(self.beta);
        let rm = fx.buffer(self.running_mean).clone();
        let rv = fx.buffer(self.running_var).clone();
        let train = fx.train();
        let out = autograd::batch_norm(
            &mut fx.graph,
            x,
            gamma,
            beta,
            &rm,
            &rv,
            train,
            self.momentum,
            self.eps,
        );
        if let Some((nrm, nrv)) = out.new_running {
            fx.push_bn_update(self.running_mean, nrm);
            fx.push_bn_update(self.running_var, nrv);
        }
        out.y
    }

    pub fn cost(&self, h: usize, w: usize) -> Cost {
        Cost {
            macs: 0,
            pointwise: (self.c * h * w) as u128,
        }
    }
}

/// CBS unit: convolution, batch normalization, SiLU.
pub struct ConvBnSilu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnSilu {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        ConvBnSilu {
            conv: Conv2d::new(store, &format!("{path}.conv"), in_c, out_c, k, stride, false, rng),
            bn: BatchNorm2d::new(store, &format!("{path}.bn"), out_c),
        }
    }

    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let x = self.conv.forward(fx, x);
        let x = self.bn.forward(fx, x);
        autograd::silu(&mut fx.graph, x)
    }

    pub fn cost(&self, h: usize, w: usize) -> (Cost, (usize, usize)) {
        let (mut c, (ho, wo)) = self.conv.cost(h, w);
        c.add(self.bn.cost(ho, wo));
        c.pointwise += (self.conv.out_c * ho * wo) as u128; // SiLU
        (c, (ho, wo))
    }

    pub fn out_c(&self) -> usize {
        self.conv.out_c
    }
}

/// Residual unit inside a CSP stage.
pub struct Bottleneck {
    cv1: ConvBnSilu,
    cv2: ConvBnSilu,
    shortcut: bool,
}

impl Bottleneck {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_c: usize,
        out_c: usize,
        shortcut: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let hidden = out_c;
        Bottleneck {
            cv1: ConvBnSilu::new(store, &format!("{path}.cv1"), in_c, hidden, 1, 1, rng),
            cv2: ConvBnSilu::new(store, &format!("{path}.cv2"), hidden, out_c, 3, 1, rng),
            shortcut: shortcut && in_c == out_c,
        }
    }

    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let y = self.cv1.forward(fx, x);
        let y = self.cv2.forward(fx, y);
        if self.shortcut {
            autograd::add(&mut fx.graph, x, y)
        } else {
            y
        }
    }

    pub fn cost(&self, h: usize, w: usize) -> (Cost, (usize, usize)) {
        let (mut c, hw) = self.cv1.cost(h, w);
        let (c2, hw) = self.cv2.cost(hw.0, hw.1);
        c.add(c2);
        if self.shortcut {
            c.pointwise += (self.cv2.out_c() * hw.0 * hw.1) as u128;
        }
        (c, hw)
    }
}

/// Cross-stage-partial block: the input is split through two 1x1
/// convolutions into half-width branches, one of which runs the bottleneck
/// stack, and the concatenation is fused by a final 1x1 convolution.
pub struct CspBlock {
    cv1: ConvBnSilu,
    cv2: ConvBnSilu,
    cv3: ConvBnSilu,
    m: Vec<Bottleneck>,
}

impl CspBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_c: usize,
        out_c: usize,
        n: usize,
        shortcut: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let hidden = out_c / 2;
        let m = (0..n)
            .map(|i| Bottleneck::new(store, &format!("{path}.m{i}"), hidden, hidden, shortcut, rng))
            .collect();
        CspBlock {
            cv1: ConvBnSilu::new(store, &format!("{path}.cv1"), in_c, hidden, 1, 1, rng),
            cv2: ConvBnSilu::new(store, &format!("{path}.cv2"), in_c, hidden, 1, 1, rng),
            cv3: ConvBnSilu::new(store, &format!("{path}.cv3"), 2 * hidden, out_c, 1, 1, rng),
            m,
        }
    }

    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let mut a = self.cv1.forward(fx, x);
        for b in &self.m {
            a = b.forward(fx, a);
        }
        let skip = self.cv2.forward(fx, x);
        let cat = autograd::concat_channels(&mut fx.graph, &[a, skip]);
        self.cv3.forward(fx, cat)
    }

    pub fn cost(&self, h: usize, w: usize) -> (Cost, (usize, usize)) {
        let (mut c, hw) = self.cv1.cost(h, w);
        let mut cur = hw;
        for b in &self.m {
            let (cb, hwb) = b.cost(cur.0, cur.1);
            c.add(cb);
            cur = hwb;
        }
        let (c2, _) = self.cv2.cost(h, w);
        c.add(c2);
        let (c3, hw3) = self.cv3.cost(cur.0, cur.1);
        c.add(c3);
        (c, hw3)
    }

    pub fn out_c(&self) -> usize {
        self.cv3.out_c()
    }
}

/// Spatial pyramid pooling: parallel same-padded max pools around a 1x1
/// bottleneck pair.
pub struct Spp {
    cv1: ConvBnSilu,
    cv2: ConvBnSilu,
    pub kernels: Vec<usize>,
}

impl Spp {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_c: usize,
        out_c: usize,
        kernels: &[usize],
        rng: &mut ChaCha12Rng,
    ) -> Self {
        assert!(
            kernels.iter().all(|k| k % 2 == 1),
            "spp kernels must be odd"
        );
        assert!(
            kernels.windows(2).all(|p| p[0] < p[1]),
            "spp kernels must ascend"
        );
        let hidden = in_c / 2;
        Spp {
            cv1: ConvBnSilu::new(store, &format!("{path}.cv1"), in_c, hidden, 1, 1, rng),
            cv2: ConvBnSilu::new(
                store,
                &format!("{path}.cv2"),
                hidden * (kernels.len() + 1),
                out_c,
                1,
                1,
                rng,
            ),
            kernels: kernels.to_vec(),
        }
    }

    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let x = self.cv1.forward(fx, x);
        let mut parts = vec![x];
        for &k in &self.kernels {
            parts.push(autograd::max_pool2d(&mut fx.graph, x, k));
        }
        let cat = autograd::concat_channels(&mut fx.graph, &parts);
        self.cv2.forward(fx, cat)
    }

    pub fn cost(&self, h: usize, w: usize) -> (Cost, (usize, usize)) {
        let (mut c, hw) = self.cv1.cost(h, w);
        let hidden = self.cv1.out_c();
        for &k in &self.kernels {
            c.pointwise += (k * k * hidden * hw.0 * hw.1) as u128;
        }
        let (c2, hw2) = self.cv2.cost(hw.0, hw.1);
        c.add(c2);
        (c, hw2)
    }
}

/// Focus stem: space-to-depth by 2, then CBS. Kept for baseline ablations.
pub struct Focus {
    pub conv: ConvBnSilu,
}

impl Focus {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        Focus {
            conv: ConvBnSilu::new(store, &format!("{path}.conv"), 4 * in_c, out_c, k, 1, rng),
        }
    }

    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let shape = fx.graph.value(x).shape();
        assert!(
            shape[2] % 2 == 0 && shape[3] % 2 == 0,
            "focus input dims must be even"
        );
        let s2d = autograd::space_to_depth2(&mut fx.graph, x);
        self.conv.forward(fx, s2d)
    }

    pub fn cost(&self, h: usize, w: usize) -> (Cost, (usize, usize)) {
        self.conv.cost(h / 2, w / 2)
    }
}

/// Squeeze-and-excitation channel gate.
pub struct SeBlock {
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
    pub c: usize,
    pub hidden: usize,
}

impl SeBlock {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        c: usize,
        reduction: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let hidden = (c / reduction).max(1);
        let fc1_w = store.register(
            format!("{path}.fc1.weight"),
            init::kaiming_uniform(&[hidden, c], c, rng),
            ParamKind::Weight,
        );
        let fc1_b = store.register(
            format!("{path}.fc1.bias"),
            init::bias_uniform(hidden, c, rng),
            ParamKind::Gain,
        );
        let fc2_w = store.register(
            format!("{path}.fc2.weight"),
            init::kaiming_uniform(&[c, hidden], hidden, rng),
            ParamKind::Weight,
        );
        // expand bias starts at zero so the initial gate is exactly 0.5
        let fc2_b = store.register(format!("{path}.fc2.bias"), Tensor::zeros(&[c]), ParamKind::Gain);
        SeBlock {
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            c,
            hidden,
        }
    }

    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let pooled = autograd::global_avg_pool(&mut fx.graph, x);
        let w1 = fx.param(self.fc1_w);
        let b1 = fx.param(self.fc1_b);
        let h = autograd::linear(&mut fx.graph, pooled, w1, Some(b1));
        let h = autograd::relu(&mut fx.graph, h);
        let w2 = fx.param(self.fc2_w);
        let b2 = fx.param(self.fc2_b);
        let s = autograd::linear(&mut fx.graph, h, w2, Some(b2));
        let gate = autograd::sigmoid(&mut fx.graph, s);
        autograd::scale_channels(&mut fx.graph, x, gate)
    }

    pub fn cost(&self, h: usize, w: usize) -> Cost {
        Cost {
            macs: (2 * self.c * self.hidden) as u128,
            pointwise: (self.c * h * w + self.c * h * w + self.c + self.hidden) as u128,
        }
    }
}

/// Transposed-convolution upsampling stage of the SR decoder.
pub struct Deconv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
}

impl Deconv {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let fan_in = in_c * k * k / (stride * stride);
        Deconv {
            weight: store.register(
                format!("{path}.weight"),
                init::kaiming_uniform(&[in_c, out_c, k, k], fan_in.max(1), rng),
                ParamKind::Weight,
            ),
            bias: store.register(
                format!("{path}.bias"),
                init::bias_uniform(out_c, fan_in.max(1), rng),
                ParamKind::Gain,
            ),
            in_c,
            out_c,
            k,
            stride,
        }
    }

    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let w = fx.param(self.weight);
        let b = fx.param(self.bias);
        autograd::conv_transpose2d(&mut fx.graph, x, w, Some(b), self.stride)
    }

    pub fn cost(&self, h: usize, w: usize) -> (Cost, (usize, usize)) {
        let (ho, wo) = ((h - 1) * self.stride + self.k, (w - 1) * self.stride + self.k);
        (
            Cost {
                macs: (self.k * self.k * self.in_c * self.out_c * h * w) as u128,
                pointwise: (self.out_c * ho * wo) as u128,
            },
            (ho, wo),
        )
    }
}

/// CR module: 3x3 convolution + ReLU, same padding.
pub struct ConvRelu {
    pub conv: Conv2d,
}

impl ConvRelu {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        ConvRelu {
            conv: Conv2d::new(store, &format!("{path}.conv"), in_c, out_c, k, 1, true, rng),
        }
    }

    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let y = self.conv.forward(fx, x);
        autograd::relu(&mut fx.graph, y)
    }

    pub fn cost(&self, h: usize, w: usize) -> (Cost, (usize, usize)) {
        let (mut c, hw) = self.conv.cost(h, w);
        c.pointwise += (self.conv.out_c * hw.0 * hw.1) as u128;
        (c, hw)
    }
}
