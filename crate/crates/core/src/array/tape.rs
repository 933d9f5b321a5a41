//! Dynamic computation tape: record primitives on forward, replay adjoints
//! in reverse.
//!
//! The tape borrows a [`ParamStore`] so parameter values are never copied
//! into the graph; every non-leaf node owns its output buffer. Gradients
//! come back as a [`GradSet`] keyed by parameter id, which the caller
//! merges into the store with [`ParamStore::absorb`]. A node only takes
//! part in the backward sweep if some input transitively requires a
//! gradient, so frozen subgraphs cost nothing on the way back.

use super::kernels;
use super::{ArrayError, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Payload {
    /// Values live in the parameter store.
    Param(ParamId),
    /// Values owned by the tape (constants and op outputs).
    Owned(Vec<f64>),
}

enum Op {
    Leaf,
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    /// c = a @ b^T with a: [m,k], b: [n,k]
    MatmulNT {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// [r,c] + row vector [c] (or [1,c]) broadcast down the rows
    AddBias {
        a: NodeId,
        bias: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    /// [r,c] scaled per row by column vector [r,1]
    ScaleRows {
        a: NodeId,
        s: NodeId,
    },
    Scale {
        a: NodeId,
        c: f64,
    },
    AddScalar {
        a: NodeId,
    },
    Exp {
        a: NodeId,
    },
    Ln {
        a: NodeId,
    },
    Tanh {
        a: NodeId,
    },
    Sigmoid {
        a: NodeId,
    },
    SoftmaxRows {
        a: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        cache: Vec<f64>,
    },
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    CausalAttention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: Vec<f64>,
    },
    CrossEntropyRows {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    MeanAll {
        a: NodeId,
    },
    SumAll {
        a: NodeId,
    },
    ConcatCols {
        parts: Vec<NodeId>,
    },
    ConcatRows {
        a: NodeId,
        b: NodeId,
    },
    SliceRows {
        a: NodeId,
        start: usize,
    },
    BroadcastRows {
        a: NodeId,
    },
    Reshape {
        a: NodeId,
    },
}

struct Node {
    shape: Vec<usize>,
    payload: Payload,
    op: Op,
    requires: bool,
}

/// Gradients produced by one backward pass, one entry per reachable
/// parameter that requires a gradient.
pub struct GradSet {
    entries: Vec<(ParamId, Vec<f64>)>,
}

impl GradSet {
    pub fn into_entries(self) -> Vec<(ParamId, Vec<f64>)> {
        self.entries
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => {
            let cols = *shape.last().unwrap();
            (shape.iter().product::<usize>() / cols, cols)
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    /// Bring a parameter onto the tape as a leaf.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let arr = self.store.get(id);
        self.push(
            arr.shape.clone(),
            Payload::Param(id),
            Op::Leaf,
            arr.requires_grad,
        )
    }

    /// A constant input that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> NodeId {
        assert_eq!(values.len(), shape.iter().product::<usize>());
        self.push(shape, Payload::Owned(values), Op::Leaf, false)
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        match &self.nodes[id.0].payload {
            Payload::Param(p) => &self.store.get(*p).values,
            Payload::Owned(v) => v,
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires
    }

    fn push(&mut self, shape: Vec<usize>, payload: Payload, op: Op, requires: bool) -> NodeId {
        self.nodes.push(Node {
            shape,
            payload,
            op,
            requires,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn mismatch(op: &'static str, detail: String) -> ArrayError {
        ArrayError::ShapeMismatch { op, detail }
    }

    // ── primitives ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ArrayError> {
        let (m, ka) = rows_cols(self.shape(a));
        let (kb, n) = rows_cols(self.shape(b));
        if ka != kb {
            return Err(Self::mismatch(
                "matmul",
                format!("{:?} @ {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(self.values(a), self.values(b), m, ka, n, 0.0, &mut out);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(vec![m, n], Payload::Owned(out), Op::Matmul { a, b }, req))
    }

    /// a[m,k] @ b[n,k]^T -> [m,n]
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ArrayError> {
        let (m, ka) = rows_cols(self.shape(a));
        let (n, kb) = rows_cols(self.shape(b));
        if ka != kb {
            return Err(Self::mismatch(
                "matmul_nt",
                format!("{:?} @ {:?}^T", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nt(self.values(a), self.values(b), m, ka, n, 0.0, &mut out);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(vec![m, n], Payload::Owned(out), Op::MatmulNT { a, b }, req))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ArrayError> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::mismatch(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        let req = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Payload::Owned(out), Op::Add { a, b }, req))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, ArrayError> {
        let (r, c) = rows_cols(self.shape(a));
        let bn = self.values(bias).len();
        if bn != c {
            return Err(Self::mismatch(
                "add_bias",
                format!("{:?} + bias {:?}", self.shape(a), self.shape(bias)),
            ));
        }
        let mut out = self.values(a).to_vec();
        let bv = self.values(bias);
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += bv[j];
            }
        }
        let req = self.requires(a) || self.requires(bias);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Payload::Owned(out), Op::AddBias { a, bias }, req))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ArrayError> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::mismatch(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        let req = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Payload::Owned(out), Op::Mul { a, b }, req))
    }

    /// a[r,c] * s[r,1], each row scaled by its scalar.
    pub fn scale_rows(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, ArrayError> {
        let (r, c) = rows_cols(self.shape(a));
        let (sr, sc) = rows_cols(self.shape(s));
        if sr != r || sc != 1 {
            return Err(Self::mismatch(
                "scale_rows",
                format!("{:?} * {:?}", self.shape(a), self.shape(s)),
            ));
        }
        let sv = self.values(s);
        let mut out = self.values(a).to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] *= sv[i];
            }
        }
        let req = self.requires(a) || self.requires(s);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Payload::Owned(out), Op::ScaleRows { a, s }, req))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.values(a).iter().map(|x| x * c).collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Payload::Owned(out), Op::Scale { a, c }, req)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.values(a).iter().map(|x| x + c).collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Payload::Owned(out), Op::AddScalar { a }, req)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.values(a).iter().map(|x| x.exp()).collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Payload::Owned(out), Op::Exp { a }, req)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.values(a).iter().map(|x| x.ln()).collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Payload::Owned(out), Op::Ln { a }, req)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.values(a).iter().map(|x| x.tanh()).collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Payload::Owned(out), Op::Tanh { a }, req)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Payload::Owned(out), Op::Sigmoid { a }, req)
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = rows_cols(self.shape(a));
        let mut out = self.values(a).to_vec();
        kernels::softmax_rows(&mut out, r, c);
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Payload::Owned(out), Op::SoftmaxRows { a }, req)
    }

    /// Layer normalization over the last axis with learned gain and shift.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId, ArrayError> {
        let (r, c) = rows_cols(self.shape(x));
        if self.values(gamma).len() != c || self.values(beta).len() != c {
            return Err(Self::mismatch(
                "layer_norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    self.shape(x),
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let mut out = vec![0.0; r * c];
        let mut cache = vec![0.0; 2 * r];
        kernels::layernorm_forward(
            self.values(x),
            self.values(gamma),
            self.values(beta),
            eps,
            r,
            c,
            &mut out,
            &mut cache,
        );
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            Payload::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
            req,
        ))
    }

    /// Row gather: out[i] = table[ids[i]].
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, ArrayError> {
        let (v, d) = rows_cols(self.shape(table));
        for &i in ids {
            if i >= v {
                return Err(ArrayError::IndexOutOfBounds {
                    op: "gather",
                    index: i,
                    extent: v,
                });
            }
        }
        let tv = self.values(table);
        let mut out = vec![0.0; ids.len() * d];
        for (r, &i) in ids.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let req = self.requires(table);
        Ok(self.push(
            vec![ids.len(), d],
            Payload::Owned(out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            req,
        ))
    }

    /// Multi-head causal scaled dot-product attention over a [t, d] block.
    pub fn causal_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
    ) -> Result<NodeId, ArrayError> {
        let (t, d) = rows_cols(self.shape(q));
        if self.shape(k) != self.shape(q) || self.shape(v) != self.shape(q) {
            return Err(Self::mismatch(
                "causal_attention",
                format!(
                    "q {:?}, k {:?}, v {:?}",
                    self.shape(q),
                    self.shape(k),
                    self.shape(v)
                ),
            ));
        }
        if d % heads != 0 {
            return Err(Self::mismatch(
                "causal_attention",
                format!("width {d} not divisible by {heads} heads"),
            ));
        }
        let mut out = vec![0.0; t * d];
        let mut probs = vec![0.0; heads * t * t];
        kernels::causal_attention_forward(
            self.values(q),
            self.values(k),
            self.values(v),
            heads,
            t,
            d,
            &mut out,
            &mut probs,
        );
        let req = self.requires(q) || self.requires(k) || self.requires(v);
        Ok(self.push(
            vec![t, d],
            Payload::Owned(out),
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                probs,
            },
            req,
        ))
    }

    /// Cross entropy with logits, one loss per row.
    pub fn cross_entropy_rows(
        &mut self,
        logits: NodeId,
        targets: &[usize],
    ) -> Result<NodeId, ArrayError> {
        let (r, c) = rows_cols(self.shape(logits));
        if targets.len() != r {
            return Err(Self::mismatch(
                "cross_entropy_rows",
                format!("logits {:?} vs {} targets", self.shape(logits), targets.len()),
            ));
        }
        for &t in targets {
            if t >= c {
                return Err(ArrayError::IndexOutOfBounds {
                    op: "cross_entropy_rows",
                    index: t,
                    extent: c,
                });
            }
        }
        let mut losses = vec![0.0; r];
        let mut probs = vec![0.0; r * c];
        kernels::cross_entropy_rows_forward(
            self.values(logits),
            targets,
            r,
            c,
            &mut losses,
            &mut probs,
        );
        let req = self.requires(logits);
        Ok(self.push(
            vec![r],
            Payload::Owned(losses),
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            req,
        ))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.values(a).len() as f64;
        let s: f64 = self.values(a).iter().sum();
        let req = self.requires(a);
        self.push(
            vec![1],
            Payload::Owned(vec![s / n]),
            Op::MeanAll { a },
            req,
        )
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.values(a).iter().sum();
        let req = self.requires(a);
        self.push(vec![1], Payload::Owned(vec![s]), Op::SumAll { a }, req)
    }

    /// Concatenate along the last axis; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, ArrayError> {
        assert!(!parts.is_empty());
        let (r0, _) = rows_cols(self.shape(parts[0]));
        let mut total = 0;
        for &p in parts {
            let (r, c) = rows_cols(self.shape(p));
            if r != r0 {
                return Err(Self::mismatch(
                    "concat_cols",
                    format!("row counts differ: {:?}",
                        parts.iter().map(|&q| self.shape(q).to_vec()).collect::<Vec<_>>()),
                ));
            }
            total += c;
        }
        let mut out = vec![0.0; r0 * total];
        let mut off = 0;
        for &p in parts {
            let (_, c) = rows_cols(self.shape(p));
            let pv = self.values(p);
            for i in 0..r0 {
                out[i * total + off..i * total + off + c]
                    .copy_from_slice(&pv[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            vec![r0, total],
            Payload::Owned(out),
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            req,
        ))
    }

    /// Concatenate along the first axis.
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ArrayError> {
        let (ra, ca) = rows_cols(self.shape(a));
        let (rb, cb) = rows_cols(self.shape(b));
        if ca != cb {
            return Err(Self::mismatch(
                "concat_rows",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = Vec::with_capacity((ra + rb) * ca);
        out.extend_from_slice(self.values(a));
        out.extend_from_slice(self.values(b));
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(
            vec![ra + rb, ca],
            Payload::Owned(out),
            Op::ConcatRows { a, b },
            req,
        ))
    }

    /// Copy of rows start..end.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, ArrayError> {
        let (r, c) = rows_cols(self.shape(a));
        if start > end || end > r {
            return Err(ArrayError::IndexOutOfBounds {
                op: "slice_rows",
                index: end,
                extent: r,
            });
        }
        let out = self.values(a)[start * c..end * c].to_vec();
        let req = self.requires(a);
        Ok(self.push(
            vec![end - start, c],
            Payload::Owned(out),
            Op::SliceRows { a, start },
            req,
        ))
    }

    /// Reinterpret the row-major buffer under a new shape of equal size.
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, ArrayError> {
        let n: usize = shape.iter().product();
        if n != self.values(a).len() {
            return Err(Self::mismatch(
                "reshape",
                format!("{:?} -> {:?}", self.shape(a), shape),
            ));
        }
        let out = self.values(a).to_vec();
        let req = self.requires(a);
        Ok(self.push(shape, Payload::Owned(out), Op::Reshape { a }, req))
    }

    /// Repeat a [1,c] row n times into [n,c].
    pub fn broadcast_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId, ArrayError> {
        let (r, c) = rows_cols(self.shape(a));
        if r != 1 {
            return Err(Self::mismatch(
                "broadcast_rows",
                format!("expected a single row, got {:?}", self.shape(a)),
            ));
        }
        let av = self.values(a);
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(av);
        }
        let req = self.requires(a);
        Ok(self.push(
            vec![n, c],
            Payload::Owned(out),
            Op::BroadcastRows { a },
            req,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Replay adjoints in reverse from a scalar loss. Returns one gradient
    /// per reachable parameter that requires one; each appears exactly once.
    pub fn backward(&self, loss: NodeId) -> Result<GradSet, ArrayError> {
        if self.values(loss).len() != 1 {
            return Err(ArrayError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires {
                continue;
            }
            let dy = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.replay_adjoint(idx, &dy, &mut grads);
            // leaves keep their gradient for extraction
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(dy);
            }
        }

        let mut entries = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Payload::Param(p), Some(g)) = (&node.payload, grads[idx].take()) {
                if node.requires {
                    entries.push((*p, g));
                }
            }
        }
        Ok(GradSet { entries })
    }

    fn grad_buf<'a>(
        grads: &'a mut [Option<Vec<f64>>],
        id: NodeId,
        len: usize,
    ) -> &'a mut Vec<f64> {
        grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn replay_adjoint(&self, idx: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = rows_cols(self.shape(*a));
                let (_, n) = rows_cols(self.shape(*b));
                if self.requires(*a) {
                    let bv = self.values(*b).to_vec();
                    let da = Self::grad_buf(grads, *a, m * k);
                    kernels::gemm_nt(dy, &bv, m, n, k, 1.0, da);
                }
                if self.requires(*b) {
                    let av = self.values(*a).to_vec();
                    let db = Self::grad_buf(grads, *b, k * n);
                    kernels::gemm_tn(&av, dy, k, m, n, 1.0, db);
                }
            }
            Op::MatmulNT { a, b } => {
                let (m, k) = rows_cols(self.shape(*a));
                let (n, _) = rows_cols(self.shape(*b));
                if self.requires(*a) {
                    let bv = self.values(*b).to_vec();
                    let da = Self::grad_buf(grads, *a, m * k);
                    kernels::gemm_nn(dy, &bv, m, n, k, 1.0, da);
                }
                if self.requires(*b) {
                    let av = self.values(*a).to_vec();
                    let db = Self::grad_buf(grads, *b, n * k);
                    kernels::gemm_tn(dy, &av, n, m, k, 1.0, db);
                }
            }
            Op::Add { a, b } => {
                for &t in &[*a, *b] {
                    if self.requires(t) {
                        let g = Self::grad_buf(grads, t, dy.len());
                        for (x, y) in g.iter_mut().zip(dy) {
                            *x += y;
                        }
                    }
                }
            }
            Op::AddBias { a, bias } => {
                let (r, c) = rows_cols(self.shape(*a));
                if self.requires(*a) {
                    let g = Self::grad_buf(grads, *a, r * c);
                    for (x, y) in g.iter_mut().zip(dy) {
                        *x += y;
                    }
                }
                if self.requires(*bias) {
                    let g = Self::grad_buf(grads, *bias, c);
                    for i in 0..r {
                        for j in 0..c {
                            g[j] += dy[i * c + j];
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.requires(*a) {
                    let bv = self.values(*b).to_vec();
                    let g = Self::grad_buf(grads, *a, dy.len());
                    for i in 0..dy.len() {
                        g[i] += dy[i] * bv[i];
                    }
                }
                if self.requires(*b) {
                    let av = self.values(*a).to_vec();
                    let g = Self::grad_buf(grads, *b, dy.len());
                    for i in 0..dy.len() {
                        g[i] += dy[i] * av[i];
                    }
                }
            }
            Op::ScaleRows { a, s } => {
                let (r, c) = rows_cols(self.shape(*a));
                if self.requires(*a) {
                    let sv = self.values(*s).to_vec();
                    let g = Self::grad_buf(grads, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += dy[i * c + j] * sv[i];
                        }
                    }
                }
                if self.requires(*s) {
                    let av = self.values(*a).to_vec();
                    let g = Self::grad_buf(grads, *s, r);
                    for i in 0..r {
                        let mut acc = 0.0;
                        for j in 0..c {
                            acc += dy[i * c + j] * av[i * c + j];
                        }
                        g[i] += acc;
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.requires(*a) {
                    let g = Self::grad_buf(grads, *a, dy.len());
                    for i in 0..dy.len() {
                        g[i] += dy[i] * c;
                    }
                }
            }
            Op::AddScalar { a } => {
                if self.requires(*a) {
                    let g = Self::grad_buf(grads, *a, dy.len());
                    for (x, y) in g.iter_mut().zip(dy) {
                        *x += y;
                    }
                }
            }
            Op::Exp { a } => {
                if self.requires(*a) {
                    let out = match &node.payload {
                        Payload::Owned(v) => v.clone(),
                        _ => unreachable!(),
                    };
                    let g = Self::grad_buf(grads, *a, dy.len());
                    for i in 0..dy.len() {
                        g[i] += dy[i] * out[i];
                    }
                }
            }
            Op::Ln { a } => {
                if self.requires(*a) {
                    let av = self.values(*a).to_vec();
                    let g = Self::grad_buf(grads, *a, dy.len());
                    for i in 0..dy.len() {
                        g[i] += dy[i] / av[i];
                    }
                }
            }
            Op::Tanh { a } => {
                if self.requires(*a) {
                    let out = match &node.payload {
                        Payload::Owned(v) => v.clone(),
                        _ => unreachable!(),
                    };
                    let g = Self::grad_buf(grads, *a, dy.len());
                    for i in 0..dy.len() {
                        g[i] += dy[i] * (1.0 - out[i] * out[i]);
                    }
                }
            }
            Op::Sigmoid { a } => {
                if self.requires(*a) {
                    let out = match &node.payload {
                        Payload::Owned(v) => v.clone(),
                        _ => unreachable!(),
                    };
                    let g = Self::grad_buf(grads, *a, dy.len());
                    for i in 0..dy.len() {
                        g[i] += dy[i] * out[i] * (1.0 - out[i]);
                    }
                }
            }
            Op::SoftmaxRows { a } => {
                if self.requires(*a) {
                    let (r, c) = rows_cols(&node.shape);
                    let p = match &node.payload {
                        Payload::Owned(v) => v.clone(),
                        _ => unreachable!(),
                    };
                    let g = Self::grad_buf(grads, *a, r * c);
                    kernels::softmax_rows_backward(&p, dy, r, c, g);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (r, c) = rows_cols(&node.shape);
                let xv = self.values(*x).to_vec();
                let gv = self.values(*gamma).to_vec();
                let mut dx = vec![0.0; r * c];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                kernels::layernorm_backward(
                    &xv, &gv, cache, dy, r, c, &mut dx, &mut dgamma, &mut dbeta,
                );
                if self.requires(*x) {
                    let g = Self::grad_buf(grads, *x, r * c);
                    for (a, b) in g.iter_mut().zip(&dx) {
                        *a += b;
                    }
                }
                if self.requires(*gamma) {
                    let g = Self::grad_buf(grads, *gamma, c);
                    for (a, b) in g.iter_mut().zip(&dgamma) {
                        *a += b;
                    }
                }
                if self.requires(*beta) {
                    let g = Self::grad_buf(grads, *beta, c);
                    for (a, b) in g.iter_mut().zip(&dbeta) {
                        *a += b;
                    }
                }
            }
            Op::Gather { table, ids } => {
                if self.requires(*table) {
                    let (v, d) = rows_cols(self.shape(*table));
                    let g = Self::grad_buf(grads, *table, v * d);
                    for (r, &i) in ids.iter().enumerate() {
                        for j in 0..d {
                            g[i * d + j] += dy[r * d + j];
                        }
                    }
                }
            }
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (t, d) = rows_cols(&node.shape);
                let qv = self.values(*q).to_vec();
                let kv = self.values(*k).to_vec();
                let vv = self.values(*v).to_vec();
                let mut dq = vec![0.0; t * d];
                let mut dk = vec![0.0; t * d];
                let mut dv = vec![0.0; t * d];
                kernels::causal_attention_backward(
                    &qv, &kv, &vv, probs, dy, *heads, t, d, &mut dq, &mut dk, &mut dv,
                );
                for (src, dg) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.requires(src) {
                        let g = Self::grad_buf(grads, src, t * d);
                        for (a, b) in g.iter_mut().zip(&dg) {
                            *a += b;
                        }
                    }
                }
            }
            Op::CrossEntropyRows {
                logits,
                targets,
                probs,
            } => {
                if self.requires(*logits) {
                    let (r, c) = rows_cols(self.shape(*logits));
                    let g = Self::grad_buf(grads, *logits, r * c);
                    kernels::cross_entropy_rows_backward(probs, targets, dy, r, c, g);
                }
            }
            Op::MeanAll { a } => {
                if self.requires(*a) {
                    let n = self.values(*a).len();
                    let g = Self::grad_buf(grads, *a, n);
                    let d = dy[0] / n as f64;
                    for x in g.iter_mut() {
                        *x += d;
                    }
                }
            }
            Op::SumAll { a } => {
                if self.requires(*a) {
                    let n = self.values(*a).len();
                    let g = Self::grad_buf(grads, *a, n);
                    for x in g.iter_mut() {
                        *x += dy[0];
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let (r, total) = rows_cols(&node.shape);
                let mut off = 0;
                for &p in parts {
                    let (_, c) = rows_cols(self.shape(p));
                    if self.requires(p) {
                        let g = Self::grad_buf(grads, p, r * c);
                        for i in 0..r {
                            for j in 0..c {
                                g[i * c + j] += dy[i * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::ConcatRows { a, b } => {
                let (ra, c) = rows_cols(self.shape(*a));
                if self.requires(*a) {
                    let g = Self::grad_buf(grads, *a, ra * c);
                    for (x, y) in g.iter_mut().zip(&dy[..ra * c]) {
                        *x += y;
                    }
                }
                if self.requires(*b) {
                    let (rb, _) = rows_cols(self.shape(*b));
                    let g = Self::grad_buf(grads, *b, rb * c);
                    for (x, y) in g.iter_mut().zip(&dy[ra * c..]) {
                        *x += y;
                    }
                }
            }
            Op::SliceRows { a, start } => {
                if self.requires(*a) {
                    let (r, c) = rows_cols(self.shape(*a));
                    let g = Self::grad_buf(grads, *a, r * c);
                    for (i, y) in dy.iter().enumerate() {
                        g[start * c + i] += y;
                    }
                }
            }
            Op::BroadcastRows { a } => {
                if self.requires(*a) {
                    let (_, c) = rows_cols(self.shape(*a));
                    let (n, _) = rows_cols(&node.shape);
                    let g = Self::grad_buf(grads, *a, c);
                    for i in 0..n {
                        for j in 0..c {
                            g[j] += dy[i * c + j];
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if self.requires(*a) {
                    let g = Self::grad_buf(grads, *a, dy.len());
                    for (x, y) in g.iter_mut().zip(dy) {
                        *x += y;
                    }
                }
            }
        }
    }
}
