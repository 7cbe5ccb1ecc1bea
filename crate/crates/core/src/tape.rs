//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every executed operation in forward order together
//! with the data it needs to replay itself backwards. Calling
//! [`Tape::backward`] on a scalar node then fills adjoints for every node
//! the loss depends on, in reverse registration order. Given the same
//! seed and the same op order, forward values and gradients are bitwise
//! reproducible.
//!
//! The op set is the minimum needed to express the contrastive and
//! cooperative losses: dense matmul, elementwise arithmetic, softmax,
//! KL divergence, cosine similarity, inverted dropout, a fused
//! embedding-lookup-plus-mean-pool, log-sum-exp and element picking.

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{matmul_raw, Tensor};
use rand::Rng;

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Log {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Concat {
        parts: Vec<(Var, usize)>,
    },
    Reshape {
        x: Var,
    },
    Softmax {
        x: Var,
        row_len: usize,
    },
    LogSumExp {
        x: Var,
    },
    Pick {
        x: Var,
        index: usize,
    },
    KlDiv {
        p: Var,
        q: Var,
    },
    Cosine {
        a: Var,
        b: Var,
    },
    /// Inverted dropout; `factors[i]` is `0` or `1/keep_prob`.
    Dropout {
        x: Var,
        factors: Vec<f64>,
    },
    /// Mean of the embedding rows selected by `ids` (pre-sorted, PAD
    /// already excluded). Sorting makes pooling exactly permutation
    /// invariant, including at the bit level.
    EmbedMean {
        table: Var,
        ids: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
    adjoint: Option<Vec<f64>>,
}

/// Wengert tape; one per forward/backward cycle.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Times the KL floor clamp fired on a `q_i == 0, p_i > 0` slot.
    /// Softmax outputs are strictly positive, so in normal training this
    /// stays zero; a nonzero count is a diagnostic signal, not an error.
    kl_clamp_events: u64,
}

/// Numerical floor for KL denominators and vector norms.
pub const KL_FLOOR: f64 = 1e-12;
pub const NORM_FLOOR: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kl_clamp_events(&self) -> u64 {
        self.kl_clamp_events
    }

    /// Register a leaf. Data is snapshotted; later mutation of the source
    /// tensor does not affect this tape.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf, requires_grad)
    }

    /// Non-differentiable constant node.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let (shape, data) = (t.shape().to_vec(), t.data().to_vec());
        self.push(data, shape, Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> Var {
        self.push(vec![v], vec![1], Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].data.len()
    }

    /// Value of a scalar node.
    pub fn item(&self, v: Var) -> f64 {
        debug_assert_eq!(self.numel(v), 1, "item() on non-scalar");
        self.nodes[v.0].data[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node is consistent")
    }

    /// Adjoint of `v` after `backward`, if any gradient reached it.
    pub fn adjoint(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].adjoint.as_deref()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`; zeros when the
    /// loss does not depend on `v`.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        match &self.nodes[v.0].adjoint {
            Some(a) => a.clone(),
            None => vec![0.0; self.numel(v)],
        }
    }

    /// Gradient table for a parameter set, in the order given.
    pub fn gradients(&self, params: &[Var]) -> Vec<Vec<f64>> {
        params.iter().map(|&p| self.grad_or_zeros(p)).collect()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite forward value from {op:?}"
        );
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let id = self.nodes.len();
        self.nodes.push(Node {
            data,
            shape,
            op,
            requires_grad,
            adjoint: None,
        });
        Var(id)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ── Forward ops ──────────────────────────────────────────────────

    /// Matrix product `a[m,k] @ b[k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a), self.value(b), m, k, n);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(data, vec![m, n], Op::Matmul { a, b, m, k, n }, rg))
    }

    fn binary_same_shape(&self, context: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                context,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(data, shape, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(data, shape, Op::Sub { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(data, shape, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        self.push(data, shape, Op::Scale { x, c }, rg)
    }

    /// Natural log; the domain is restricted to strictly positive inputs
    /// so forward values stay finite.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        let data: Vec<f64> = self.value(x).iter().map(|v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(data, shape, Op::Log { x }, rg))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.value(x).iter().map(|v| v.exp()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        self.push(data, shape, Op::Exp { x }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        self.push(data, shape, Op::Tanh { x }, rg)
    }

    /// Mean over all elements, as a scalar node.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.numel(x) as f64;
        let s: f64 = self.value(x).iter().sum();
        let rg = self.needs_grad(&[x]);
        self.push(vec![s / n], vec![1], Op::Mean { x }, rg)
    }

    /// Concatenate rank-1 nodes along axis 0.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::ShapeMismatch {
                    context: "concat expects rank-1 parts",
                    lhs: self.shape(p).to_vec(),
                    rhs: vec![],
                });
            }
        }
        let mut data = Vec::new();
        let mut sized = Vec::with_capacity(parts.len());
        for &p in parts {
            data.extend_from_slice(self.value(p));
            sized.push((p, self.numel(p)));
        }
        let total = data.len();
        let rg = self.needs_grad(parts);
        Ok(self.push(data, vec![total], Op::Concat { parts: sized }, rg))
    }

    /// Same data, new shape; `numel` must be preserved.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.numel(x) {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let data = self.value(x).to_vec();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(data, shape, Op::Reshape { x }, rg))
    }

    /// Softmax over the last axis, computed with max-subtraction so large
    /// logits cannot overflow.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let row_len = *shape.last().ok_or_else(|| {
            Error::Domain("softmax of empty-shaped tensor".into())
        })?;
        if row_len == 0 || self.numel(x) == 0 {
            return Err(Error::Domain("softmax of empty input".into()));
        }
        let mut data = self.value(x).to_vec();
        for row in data.chunks_mut(row_len) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push(data, shape, Op::Softmax { x, row_len }, rg))
    }

    /// `log Σ exp(x_i)` of a rank-1 node, max-subtracted.
    pub fn log_sum_exp(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 1 || self.numel(x) == 0 {
            return Err(Error::Domain("log_sum_exp expects a non-empty vector".into()));
        }
        let xs = self.value(x);
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = xs.iter().map(|v| (v - m).exp()).sum();
        let y = m + z.ln();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(vec![y], vec![1], Op::LogSumExp { x }, rg))
    }

    /// Select element `index` of a rank-1 node as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        if self.shape(x).len() != 1 || index >= self.numel(x) {
            return Err(Error::Contract(format!(
                "pick index {index} out of bounds for shape {:?}",
                self.shape(x)
            )));
        }
        let v = self.value(x)[index];
        let rg = self.needs_grad(&[x]);
        Ok(self.push(vec![v], vec![1], Op::Pick { x, index }, rg))
    }

    /// `KL(p ‖ q) = Σ p_i log(p_i / q_i)` with the `0 · log(0/q) = 0`
    /// convention. Zero denominators under positive mass are clamped to
    /// [`KL_FLOOR`] and counted rather than treated as errors.
    /// Gradients propagate into both arguments.
    pub fn kl_div(&mut self, p: Var, q: Var) -> Result<Var> {
        self.binary_same_shape("kl_div", p, q)?;
        if self.shape(p).len() != 1 {
            return Err(Error::Domain("kl_div expects probability vectors".into()));
        }
        for (name, v) in [("p", p), ("q", q)] {
            let xs = self.value(v);
            if xs.iter().any(|&x| x < -1e-12) {
                return Err(Error::Domain(format!("kl_div: negative entry in {name}")));
            }
            let sum: f64 = xs.iter().sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::Domain(format!(
                    "kl_div: {name} sums to {sum}, not a probability vector"
                )));
            }
        }
        let mut clamps = 0;
        let mut acc = 0.0;
        {
            let ps = self.value(p);
            let qs = self.value(q);
            for (&pi, &qi) in ps.iter().zip(qs) {
                if pi > 0.0 {
                    let qc = if qi < KL_FLOOR {
                        clamps += 1;
                        KL_FLOOR
                    } else {
                        qi
                    };
                    acc += pi * (pi.ln() - qc.ln());
                }
            }
        }
        self.kl_clamp_events += clamps;
        let rg = self.needs_grad(&[p, q]);
        Ok(self.push(vec![acc], vec![1], Op::KlDiv { p, q }, rg))
    }

    /// Cosine similarity of two rank-1 nodes; errors when either norm is
    /// below [`NORM_FLOOR`].
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("cosine", a, b)?;
        if self.shape(a).len() != 1 {
            return Err(Error::Domain("cosine expects vectors".into()));
        }
        let (dot, na, nb) = cosine_parts(self.value(a), self.value(b));
        if na < NORM_FLOOR || nb < NORM_FLOOR {
            return Err(Error::Domain(format!(
                "cosine of near-zero-norm vector (norms {na:.3e}, {nb:.3e})"
            )));
        }
        let c = dot / (na * nb);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(vec![c], vec![1], Op::Cosine { a, b }, rg))
    }

    /// Inverted dropout: each element is zeroed with probability
    /// `1 - keep_prob`, survivors are scaled by `1/keep_prob`, and the
    /// mask comes from the seeded stream, so `keep_prob = 1` is the
    /// identity and a repeated seed repeats the mask.
    pub fn dropout(&mut self, x: Var, keep_prob: f64, seed: u64) -> Result<Var> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "dropout keep_prob must be in (0,1], got {keep_prob}"
            )));
        }
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        if keep_prob == 1.0 {
            let data = self.value(x).to_vec();
            let factors = vec![1.0; data.len()];
            return Ok(self.push(data, shape, Op::Dropout { x, factors }, rg));
        }
        let mut rng = seeds::rng(seed);
        let inv = 1.0 / keep_prob;
        let factors: Vec<f64> = (0..self.numel(x))
            .map(|_| if rng.random::<f64>() < keep_prob { inv } else { 0.0 })
            .collect();
        let data: Vec<f64> = self
            .value(x)
            .iter()
            .zip(&factors)
            .map(|(v, f)| v * f)
            .collect();
        Ok(self.push(data, shape, Op::Dropout { x, factors }, rg))
    }

    /// Mean of the rows of `table` selected by the non-PAD ids of a
    /// sentence. Ids are sorted before accumulation, which makes the
    /// pooled vector bitwise invariant under token permutation.
    pub fn embed_mean(&mut self, table: Var, ids: &[u32], pad_id: u32) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                context: "embed_mean table",
                lhs: shape,
                rhs: vec![],
            });
        }
        let (v, d) = (shape[0], shape[1]);
        let mut selected: Vec<usize> = ids
            .iter()
            .filter(|&&id| id != pad_id)
            .map(|&id| id as usize)
            .collect();
        if selected.is_empty() {
            return Err(Error::Domain(
                "embed_mean: sentence has no non-PAD tokens".into(),
            ));
        }
        if let Some(&bad) = selected.iter().find(|&&id| id >= v) {
            return Err(Error::Domain(format!(
                "embed_mean: token id {bad} outside vocabulary of size {v}"
            )));
        }
        selected.sort_unstable();
        let inv = 1.0 / selected.len() as f64;
        let mut out = vec![0.0; d];
        {
            let tdata = self.value(table);
            for &id in &selected {
                let row = &tdata[id * d..(id + 1) * d];
                for (o, r) in out.iter_mut().zip(row) {
                    *o += r;
                }
            }
        }
        for o in out.iter_mut() {
            *o *= inv;
        }
        let rg = self.needs_grad(&[table]);
        Ok(self.push(out, vec![d], Op::EmbedMean { table, ids: selected }, rg))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Adjoints of earlier calls are
    /// cleared first, so each call reports gradients of exactly one loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in self.nodes.iter_mut() {
            node.adjoint = None;
        }
        self.nodes[loss.0].adjoint = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[id].adjoint.clone() else {
                continue;
            };
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b, m, k, n } => {
                    if self.nodes[a.0].requires_grad {
                        // dA = G @ Bᵀ
                        let bt = transpose(self.value(b), k, n);
                        let da = matmul_raw(&g, &bt, m, n, k);
                        self.accumulate(a, &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        // dB = Aᵀ @ G
                        let at = transpose(self.value(a), m, k);
                        let db = matmul_raw(&at, &g, k, m, n);
                        self.accumulate(b, &db);
                    }
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
                Op::Sub { a, b } => {
                    self.accumulate(a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<f64> =
                            g.iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
                        self.accumulate(a, &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db: Vec<f64> =
                            g.iter().zip(self.value(a)).map(|(x, y)| x * y).collect();
                        self.accumulate(b, &db);
                    }
                }
                Op::Scale { x, c } => {
                    let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    self.accumulate(x, &dx);
                }
                Op::Log { x } => {
                    let dx: Vec<f64> =
                        g.iter().zip(self.value(x)).map(|(gi, xi)| gi / xi).collect();
                    self.accumulate(x, &dx);
                }
                Op::Exp { x } => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[id].data)
                        .map(|(gi, yi)| gi * yi)
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Tanh { x } => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[id].data)
                        .map(|(gi, yi)| gi * (1.0 - yi * yi))
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Mean { x } => {
                    let n = self.numel(x) as f64;
                    let dx = vec![g[0] / n; self.numel(x)];
                    self.accumulate(x, &dx);
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for (p, len) in parts {
                        self.accumulate(p, &g[off..off + len]);
                        off += len;
                    }
                }
                Op::Reshape { x } => {
                    self.accumulate(x, &g);
                }
                Op::Softmax { x, row_len } => {
                    let y = &self.nodes[id].data;
                    let mut dx = vec![0.0; y.len()];
                    for (row, (yrow, grow)) in y.chunks(row_len).zip(g.chunks(row_len)).enumerate()
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        let drow = &mut dx[row * row_len..(row + 1) * row_len];
                        for ((d, &yi), &gi) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d = yi * (gi - dot);
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::LogSumExp { x } => {
                    let y = self.nodes[id].data[0];
                    let dx: Vec<f64> = self
                        .value(x)
                        .iter()
                        .map(|&xi| g[0] * (xi - y).exp())
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Pick { x, index } => {
                    let mut dx = vec![0.0; self.numel(x)];
                    dx[index] = g[0];
                    self.accumulate(x, &dx);
                }
                Op::KlDiv { p, q } => {
                    let ps = self.value(p).to_vec();
                    let qs = self.value(q).to_vec();
                    if self.nodes[p.0].requires_grad {
                        let dp: Vec<f64> = ps
                            .iter()
                            .zip(&qs)
                            .map(|(&pi, &qi)| {
                                if pi > 0.0 {
                                    g[0] * (pi.ln() - qi.max(KL_FLOOR).ln() + 1.0)
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        self.accumulate(p, &dp);
                    }
                    if self.nodes[q.0].requires_grad {
                        let dq: Vec<f64> = ps
                            .iter()
                            .zip(&qs)
                            .map(|(&pi, &qi)| {
                                if pi > 0.0 {
                                    -g[0] * pi / qi.max(KL_FLOOR)
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        self.accumulate(q, &dq);
                    }
                }
                Op::Cosine { a, b } => {
                    let (dot, na, nb) = cosine_parts(self.value(a), self.value(b));
                    let c = dot / (na * nb);
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<f64> = self
                            .value(a)
                            .iter()
                            .zip(self.value(b))
                            .map(|(&ai, &bi)| g[0] * (bi / (na * nb) - c * ai / (na * na)))
                            .collect();
                        self.accumulate(a, &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db: Vec<f64> = self
                            .value(a)
                            .iter()
                            .zip(self.value(b))
                            .map(|(&ai, &bi)| g[0] * (ai / (na * nb) - c * bi / (nb * nb)))
                            .collect();
                        self.accumulate(b, &db);
                    }
                }
                Op::Dropout { x, factors } => {
                    let dx: Vec<f64> = g.iter().zip(&factors).map(|(gi, f)| gi * f).collect();
                    self.accumulate(x, &dx);
                }
                Op::EmbedMean { table, ids } => {
                    let d = g.len();
                    let inv = 1.0 / ids.len() as f64;
                    let mut dt = vec![0.0; self.numel(table)];
                    for &id in &ids {
                        let row = &mut dt[id * d..(id + 1) * d];
                        for (r, gi) in row.iter_mut().zip(&g) {
                            *r += gi * inv;
                        }
                    }
                    self.accumulate(table, &dt);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        debug_assert_eq!(node.data.len(), contrib.len());
        match &mut node.adjoint {
            Some(a) => {
                for (ai, ci) in a.iter_mut().zip(contrib) {
                    *ai += ci;
                }
            }
            None => node.adjoint = Some(contrib.to_vec()),
        }
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na.sqrt(), nb.sqrt())
}
