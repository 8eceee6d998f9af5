//! Reverse-mode autodiff tape over dense row-major matrices.

use std::fmt;

use num_traits::Float;

/// Scalar element type for a tape. `f32` is the production type;
/// `f64` is used by the gradient verification suite.
pub trait Scalar: Float + fmt::Debug + fmt::Display + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// exp with a vectorizable polynomial in f32; exact libm in f64.
    fn exp_fast(self) -> Self;
    fn tanh_fast(self) -> Self;
}

/// Cephes-style expf: x = n*ln2 + r with |r| <= ln2/2, degree-5
/// polynomial for exp(r), exponent assembled by bit manipulation.
/// Relative error ~1e-7; every step auto-vectorizes.
#[inline]
pub fn fast_exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = 1.442_695_04;
    const C1: f32 = 0.693_359_375;
    const C2: f32 = -2.121_944_4e-4;
    let x = x.clamp(-87.0, 88.0);
    let n = (x * LOG2E + 0.5).floor();
    let r = x - n * C1 - n * C2;
    let mut y = 1.987_569_1e-4f32;
    y = y * r + 1.398_199_9e-3;
    y = y * r + 8.333_452e-3;
    y = y * r + 4.166_579_6e-2;
    y = y * r + 1.666_666_5e-1;
    y = y * r + 0.5;
    y = y * r * r + r + 1.0;
    let bits = (((n as i32) + 127) << 23) as u32;
    y * f32::from_bits(bits)
}

#[inline]
pub fn fast_tanh_f32(x: f32) -> f32 {
    // tanh(x) = 1 - 2/(exp(2x) + 1)
    1.0 - 2.0 / (fast_exp_f32(2.0 * x) + 1.0)
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn exp_fast(self) -> Self {
        fast_exp_f32(self)
    }
    #[inline]
    fn tanh_fast(self) -> Self {
        fast_tanh_f32(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn exp_fast(self) -> Self {
        self.exp()
    }
    #[inline]
    fn tanh_fast(self) -> Self {
        self.tanh()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible with the requested operation.
    Dimension(String),
    /// A row/column/vocab index is out of range.
    Index(String),
    /// A value that must be finite is NaN or infinite.
    NonFinite(String),
    /// An argument is outside its legal range.
    Parameter(String),
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::Dimension(m) => write!(f, "dimension error: {m}"),
            TensorError::Index(m) => write!(f, "index error: {m}"),
            TensorError::NonFinite(m) => write!(f, "finite-check error: {m}"),
            TensorError::Parameter(m) => write!(f, "parameter error: {m}"),
        }
    }
}

impl std::error::Error for TensorError {}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    /// C[m,n] = A[m,k] * B[k,n]
    MatMul { a: usize, b: usize },
    /// C[m,n] = A[m,k] * B[n,k]^T  (dot products of rows)
    MatMulNt { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// Broadcast a [1,n] bias over the rows of a [m,n] matrix.
    AddBias { a: usize, bias: usize },
    Scale { a: usize, c: S },
    Gelu { a: usize },
    /// Row-wise softmax.
    Softmax { a: usize },
    /// Fused multi-head self-attention over [T,d] query/key/value
    /// projections. Causal mode restricts row i to keys j <= i. The
    /// softmax probabilities are kept for the backward sweep.
    Mha { q: usize, k: usize, v: usize, heads: usize, causal: bool, probs: Vec<S> },
    /// Row-wise layer normalization with affine parameters.
    LayerNorm { a: usize, gamma: usize, beta: usize, eps: S },
    /// Select rows of `a` by index (embedding lookup / answer extraction).
    GatherRows { a: usize, idx: Vec<usize> },
    SliceRows { a: usize, start: usize },
    SliceCols { a: usize, start: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    /// Per-row cross entropy: -log softmax(row)[target].
    CeRows { a: usize, targets: Vec<usize> },
    /// Scalar: sum_i w_i * x_i over all elements, weights constant.
    WeightedSum { a: usize, w: Vec<S> },
    /// Scalar: c * sum(x).
    ScaledSum { a: usize, c: S },
    /// Scalar: mean((x - t)^2), target constant.
    MseLoss { a: usize, target: Vec<S> },
    /// Scalar: mean(|x - t|), target constant.
    L1Loss { a: usize, target: Vec<S> },
}

struct Node<S> {
    data: Vec<S>,
    shape: Vec<usize>,
    grad: Vec<S>,
    requires_grad: bool,
    op: Op<S>,
}

/// Computation tape. Nodes are appended during the forward pass and
/// [`Tape::backward`] walks them in reverse.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

// ── raw matmul kernels ──────────────────────────────────────────────
// All kernels accumulate into `c`; forward callers zero-fill first.
// The i-k-j ordering keeps the inner loop contiguous for vectorization.

fn mm_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    // k unrolled by 4: one pass over the output row per four inputs.
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        let mut p = 0;
        while p + 4 <= k {
            let a0 = arow[p];
            let a1 = arow[p + 1];
            let a2 = arow[p + 2];
            let a3 = arow[p + 3];
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for j in 0..n {
                crow[j] = crow[j] + a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            p += 4;
        }
        while p < k {
            let av = arow[p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
            p += 1;
        }
    }
}

fn mm_nt_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    // C[i,j] += dot(A row i, B row j); A is [m,k], B is [n,k].
    // Four output dots at once for instruction-level parallelism.
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        let mut j = 0;
        while j + 4 <= n {
            let b0 = &b[j * k..(j + 1) * k];
            let b1 = &b[(j + 1) * k..(j + 2) * k];
            let b2 = &b[(j + 2) * k..(j + 3) * k];
            let b3 = &b[(j + 3) * k..(j + 4) * k];
            let mut s0 = S::zero();
            let mut s1 = S::zero();
            let mut s2 = S::zero();
            let mut s3 = S::zero();
            for p in 0..k {
                let av = arow[p];
                s0 = s0 + av * b0[p];
                s1 = s1 + av * b1[p];
                s2 = s2 + av * b2[p];
                s3 = s3 + av * b3[p];
            }
            crow[j] = crow[j] + s0;
            crow[j + 1] = crow[j + 1] + s1;
            crow[j + 2] = crow[j + 2] + s2;
            crow[j + 3] = crow[j + 3] + s3;
            j += 4;
        }
        while j < n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = S::zero();
            for p in 0..k {
                s = s + arow[p] * brow[p];
            }
            crow[j] = crow[j] + s;
            j += 1;
        }
    }
}

fn mm_tn_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    // C[k,n] += A[m,k]^T * B[m,n].
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
}

/// Max over a slice with four independent accumulators so the scan
/// vectorizes. NaN entries surface through the later sum check because
/// exp_fast propagates them.
fn fast_max<S: Scalar>(s: &[S]) -> S {
    let mut m0 = S::neg_infinity();
    let mut m1 = S::neg_infinity();
    let mut m2 = S::neg_infinity();
    let mut m3 = S::neg_infinity();
    let mut i = 0;
    while i + 4 <= s.len() {
        m0 = m0.max(s[i]);
        m1 = m1.max(s[i + 1]);
        m2 = m2.max(s[i + 2]);
        m3 = m3.max(s[i + 3]);
        i += 4;
    }
    while i < s.len() {
        m0 = m0.max(s[i]);
        i += 1;
    }
    m0.max(m1).max(m2.max(m3))
}

/// Sum with four independent accumulators; fixed order, so results are
/// reproducible bit for bit.
fn fast_sum<S: Scalar>(s: &[S]) -> S {
    let mut a0 = S::zero();
    let mut a1 = S::zero();
    let mut a2 = S::zero();
    let mut a3 = S::zero();
    let mut i = 0;
    while i + 4 <= s.len() {
        a0 = a0 + s[i];
        a1 = a1 + s[i + 1];
        a2 = a2 + s[i + 2];
        a3 = a3 + s[i + 3];
        i += 4;
    }
    while i < s.len() {
        a0 = a0 + s[i];
        i += 1;
    }
    (a0 + a1) + (a2 + a3)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (S::one() + inner.tanh_fast())
}

fn gelu_bwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh_fast();
    let sech2 = S::one() - t * t;
    let dinner = c * (S::one() + three * a * x * x);
    half * (S::one() + t) + half * x * sech2 * dinner
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256) }
    }

    /// Drop all nodes but keep the tape allocation for reuse.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<S>, shape: Vec<usize>, requires_grad: bool, op: Op<S>) -> NodeId {
        debug_assert_eq!(data.len(), numel(&shape));
        let id = self.nodes.len();
        self.nodes.push(Node { data, shape, grad: Vec::new(), requires_grad, op });
        NodeId(id)
    }

    /// Add an input node. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, data: Vec<S>, shape: Vec<usize>, requires_grad: bool) -> Result<NodeId> {
        if data.len() != numel(&shape) || shape.iter().any(|&e| e == 0) {
            return Err(TensorError::Dimension(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    pub fn data(&self, id: NodeId) -> &[S] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: NodeId) -> &[S] {
        &self.nodes[id.0].grad
    }

    /// Scalar value of a [1,1] node.
    pub fn scalar(&self, id: NodeId) -> S {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    /// True when every element of the node is finite.
    pub fn all_finite(&self, id: NodeId) -> bool {
        self.nodes[id.0].data.iter().all(|v| v.is_finite())
    }

    fn rc(&self, id: NodeId) -> Result<(usize, usize)> {
        let s = &self.nodes[id.0].shape;
        if s.len() != 2 {
            return Err(TensorError::Dimension(format!("expected rank-2 tensor, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn req(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    // ── forward ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.rc(a)?;
        let (k2, n) = self.rc(b)?;
        if k != k2 {
            return Err(TensorError::Dimension(format!(
                "matmul inner dimensions disagree: {m}x{k} vs {k2}x{n}"
            )));
        }
        let mut data = vec![S::zero(); m * n];
        mm_acc(&self.nodes[a.0].data, &self.nodes[b.0].data, &mut data, m, k, n);
        let rg = self.req(&[a.0, b.0]);
        Ok(self.push(data, vec![m, n], rg, Op::MatMul { a: a.0, b: b.0 }))
    }

    /// `a [m,k] * b[n,k]^T -> [m,n]`. Used for attention scores and tied logits.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.rc(a)?;
        let (n, k2) = self.rc(b)?;
        if k != k2 {
            return Err(TensorError::Dimension(format!(
                "matmul_nt inner dimensions disagree: {m}x{k} vs {n}x{k2}"
            )));
        }
        let mut data = vec![S::zero(); m * n];
        mm_nt_acc(&self.nodes[a.0].data, &self.nodes[b.0].data, &mut data, m, k, n);
        let rg = self.req(&[a.0, b.0]);
        Ok(self.push(data, vec![m, n], rg, Op::MatMulNt { a: a.0, b: b.0 }))
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::Dimension(format!(
                "{name} operand shapes disagree: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "add")?;
        let data: Vec<S> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.req(&[a.0, b.0]);
        Ok(self.push(data, shape, rg, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "sub")?;
        let data: Vec<S> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.req(&[a.0, b.0]);
        Ok(self.push(data, shape, rg, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "mul")?;
        let data: Vec<S> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.req(&[a.0, b.0]);
        Ok(self.push(data, shape, rg, Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.rc(a)?;
        let (bm, bn) = self.rc(bias)?;
        if bm != 1 || bn != n {
            return Err(TensorError::Dimension(format!(
                "add_bias expects [1,{n}] bias, got [{bm},{bn}]"
            )));
        }
        let mut data = self.nodes[a.0].data.clone();
        let b = &self.nodes[bias.0].data;
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] = row[j] + b[j];
            }
        }
        let rg = self.req(&[a.0, bias.0]);
        Ok(self.push(data, vec![m, n], rg, Op::AddBias { a: a.0, bias: bias.0 }))
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        let data: Vec<S> = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Scale { a: a.0, c })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<S> = self.nodes[a.0].data.iter().map(|&x| gelu_fwd(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Gelu { a: a.0 })
    }

    /// Row-wise softmax, stabilized by max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.rc(a)?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = fast_max(row);
            let out = &mut data[i * n..(i + 1) * n];
            for j in 0..n {
                out[j] = (row[j] - mx).exp_fast();
            }
            let sum = fast_sum(out);
            if !sum.is_finite() || sum <= S::zero() {
                return Err(TensorError::NonFinite("softmax input not finite".into()));
            }
            let inv = S::one() / sum;
            for v in out.iter_mut() {
                *v = *v * inv;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![m, n], rg, Op::Softmax { a: a.0 }))
    }

    /// Fused multi-head scaled-dot-product self-attention.
    ///
    /// q/k/v are [T,d] with d divisible by `heads`; scores are scaled by
    /// 1/sqrt(d/heads). Causal attention computes only keys j <= i for
    /// query i, which leaves earlier rows bitwise independent of later
    /// inputs. Output is [T,d] with heads concatenated.
    pub fn mha(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, causal: bool) -> Result<NodeId> {
        let (t, d) = self.rc(q)?;
        if self.rc(k)? != (t, d) || self.rc(v)? != (t, d) {
            return Err(TensorError::Dimension("mha q/k/v shapes disagree".into()));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Dimension(format!(
                "mha: width {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = S::from_f64(1.0 / (dh as f64).sqrt());
        let qd = &self.nodes[q.0].data;
        let kd = &self.nodes[k.0].data;
        let vd = &self.nodes[v.0].data;
        let mut probs = vec![S::zero(); heads * t * t];
        let mut out = vec![S::zero(); t * d];
        let mut kt = vec![S::zero(); dh * t];
        let mut srow = vec![S::zero(); t];
        for h in 0..heads {
            let off = h * dh;
            for j in 0..t {
                for p in 0..dh {
                    kt[p * t + j] = kd[j * d + off + p];
                }
            }
            let hp = &mut probs[h * t * t..(h + 1) * t * t];
            for i in 0..t {
                let jmax = if causal { i + 1 } else { t };
                let s = &mut srow[..jmax];
                s.iter_mut().for_each(|x| *x = S::zero());
                let qrow = &qd[i * d + off..i * d + off + dh];
                // scores: kt rows are contiguous, unroll the dh loop by 4
                let mut p = 0;
                while p + 4 <= dh {
                    let q0 = qrow[p];
                    let q1 = qrow[p + 1];
                    let q2 = qrow[p + 2];
                    let q3 = qrow[p + 3];
                    let k0 = &kt[p * t..p * t + jmax];
                    let k1 = &kt[(p + 1) * t..(p + 1) * t + jmax];
                    let k2 = &kt[(p + 2) * t..(p + 2) * t + jmax];
                    let k3 = &kt[(p + 3) * t..(p + 3) * t + jmax];
                    for j in 0..jmax {
                        s[j] = s[j] + q0 * k0[j] + q1 * k1[j] + q2 * k2[j] + q3 * k3[j];
                    }
                    p += 4;
                }
                while p < dh {
                    let qv = qrow[p];
                    let krow = &kt[p * t..p * t + jmax];
                    for j in 0..jmax {
                        s[j] = s[j] + qv * krow[j];
                    }
                    p += 1;
                }
                let mx = fast_max(s) * scale;
                let prow = &mut hp[i * t..i * t + jmax];
                for j in 0..jmax {
                    prow[j] = (s[j] * scale - mx).exp_fast();
                }
                let sum = fast_sum(prow);
                if !sum.is_finite() || sum <= S::zero() {
                    return Err(TensorError::NonFinite("attention softmax not finite".into()));
                }
                let inv = S::one() / sum;
                for x in prow.iter_mut() {
                    *x = *x * inv;
                }
                // mix: out_row += sum_j prow[j] * v[j, off..off+dh], with the
                // j loop unrolled by 4 and the accumulator row kept local
                let orow = &mut out[i * d + off..i * d + off + dh];
                let mut j = 0;
                while j + 4 <= jmax {
                    let p0 = prow[j];
                    let p1 = prow[j + 1];
                    let p2 = prow[j + 2];
                    let p3 = prow[j + 3];
                    let v0 = &vd[j * d + off..j * d + off + dh];
                    let v1 = &vd[(j + 1) * d + off..(j + 1) * d + off + dh];
                    let v2 = &vd[(j + 2) * d + off..(j + 2) * d + off + dh];
                    let v3 = &vd[(j + 3) * d + off..(j + 3) * d + off + dh];
                    for p in 0..dh {
                        orow[p] = orow[p] + p0 * v0[p] + p1 * v1[p] + p2 * v2[p] + p3 * v3[p];
                    }
                    j += 4;
                }
                while j < jmax {
                    let pw = prow[j];
                    let vrow = &vd[j * d + off..j * d + off + dh];
                    for p in 0..dh {
                        orow[p] = orow[p] + pw * vrow[p];
                    }
                    j += 1;
                }
            }
        }
        let rg = self.req(&[q.0, k.0, v.0]);
        Ok(self.push(out, vec![t, d], rg, Op::Mha { q: q.0, k: k.0, v: v.0, heads, causal, probs }))
    }

    /// Row-wise layer norm with affine `gamma`/`beta` of shape [1,n].
    /// A constant row normalizes to zeros before the affine map.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId, eps: S) -> Result<NodeId> {
        let (m, n) = self.rc(a)?;
        let (gm, gn) = self.rc(gamma)?;
        let (bm, bn) = self.rc(beta)?;
        if gm != 1 || gn != n || bm != 1 || bn != n {
            return Err(TensorError::Dimension(format!(
                "layer_norm affine params must be [1,{n}], got [{gm},{gn}] and [{bm},{bn}]"
            )));
        }
        let src = &self.nodes[a.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut data = vec![S::zero(); m * n];
        let nf = S::from_f64(n as f64);
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mut mean = S::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean / nf;
            let mut var = S::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var / nf;
            let inv_std = S::one() / (var + eps).sqrt();
            let out = &mut data[i * n..(i + 1) * n];
            for j in 0..n {
                out[j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let rg = self.req(&[a.0, gamma.0, beta.0]);
        Ok(self.push(data, vec![m, n], rg, Op::LayerNorm { a: a.0, gamma: gamma.0, beta: beta.0, eps }))
    }

    /// Select rows of `a` by index. Serves as the embedding lookup.
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (m, n) = self.rc(a)?;
        for &i in idx {
            if i >= m {
                return Err(TensorError::Index(format!("gather_rows index {i} out of range for {m} rows")));
            }
        }
        let src = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![idx.len(), n], rg, Op::GatherRows { a: a.0, idx: idx.to_vec() }))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.rc(a)?;
        if start + len > m || len == 0 {
            return Err(TensorError::Index(format!(
                "slice_rows {start}..{} out of range for {m} rows",
                start + len
            )));
        }
        let data = self.nodes[a.0].data[start * n..(start + len) * n].to_vec();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![len, n], rg, Op::SliceRows { a: a.0, start }))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.rc(a)?;
        if start + len > n || len == 0 {
            return Err(TensorError::Index(format!(
                "slice_cols {start}..{} out of range for {n} cols",
                start + len
            )));
        }
        let src = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![m, len], rg, Op::SliceCols { a: a.0, start }))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Parameter("concat_rows needs at least one part".into()));
        }
        let (_, n) = self.rc(parts[0])?;
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.rc(p)?;
            if pn != n {
                return Err(TensorError::Dimension(format!(
                    "concat_rows column mismatch: {pn} vs {n}"
                )));
            }
            rows += pm;
        }
        let mut data = Vec::with_capacity(rows * n);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.req(&ids);
        Ok(self.push(data, vec![rows, n], rg, Op::ConcatRows { parts: ids }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Parameter("concat_cols needs at least one part".into()));
        }
        let (m, _) = self.rc(parts[0])?;
        let mut cols = 0;
        for &p in parts {
            let (pm, pn) = self.rc(p)?;
            if pm != m {
                return Err(TensorError::Dimension(format!("concat_cols row mismatch: {pm} vs {m}")));
            }
            cols += pn;
        }
        let mut data = vec![S::zero(); m * cols];
        let mut off = 0;
        for &p in parts {
            let (_, pn) = self.rc(p)?;
            let src = &self.nodes[p.0].data;
            for i in 0..m {
                data[i * cols + off..i * cols + off + pn].copy_from_slice(&src[i * pn..(i + 1) * pn]);
            }
            off += pn;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.req(&ids);
        Ok(self.push(data, vec![m, cols], rg, Op::ConcatCols { parts: ids }))
    }

    /// Per-row cross entropy against integer targets: out[i] = -log softmax(row_i)[t_i].
    pub fn ce_rows(&mut self, a: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (m, n) = self.rc(a)?;
        if targets.len() != m {
            return Err(TensorError::Dimension(format!(
                "ce_rows expects {m} targets, got {}",
                targets.len()
            )));
        }
        for &t in targets {
            if t >= n {
                return Err(TensorError::Index(format!("ce_rows target {t} out of vocab range {n}")));
            }
        }
        let src = &self.nodes[a.0].data;
        let mut data = vec![S::zero(); m];
        let mut scratch = vec![S::zero(); n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = fast_max(row);
            for j in 0..n {
                scratch[j] = (row[j] - mx).exp_fast();
            }
            let sum = fast_sum(&scratch);
            if !sum.is_finite() || sum <= S::zero() {
                return Err(TensorError::NonFinite("ce_rows logits not finite".into()));
            }
            data[i] = sum.ln() + mx - row[targets[i]];
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![m, 1], rg, Op::CeRows { a: a.0, targets: targets.to_vec() }))
    }

    /// Scalar dot product with a constant weight vector over all elements.
    pub fn weighted_sum(&mut self, a: NodeId, w: &[S]) -> Result<NodeId> {
        if w.len() != self.nodes[a.0].data.len() {
            return Err(TensorError::Dimension(format!(
                "weighted_sum weight length {} vs data length {}",
                w.len(),
                self.nodes[a.0].data.len()
            )));
        }
        let mut s = S::zero();
        for (x, &wi) in self.nodes[a.0].data.iter().zip(w) {
            s = s + *x * wi;
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![s], vec![1, 1], rg, Op::WeightedSum { a: a.0, w: w.to_vec() }))
    }

    /// Scalar c * sum(x).
    pub fn scaled_sum(&mut self, a: NodeId, c: S) -> NodeId {
        let mut s = S::zero();
        for &x in &self.nodes[a.0].data {
            s = s + x;
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![s * c], vec![1, 1], rg, Op::ScaledSum { a: a.0, c })
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].data.len();
        self.scaled_sum(a, S::one() / S::from_f64(n as f64))
    }

    /// Scalar mean squared error against a constant target.
    pub fn mse_loss(&mut self, a: NodeId, target: &[S]) -> Result<NodeId> {
        if target.len() != self.nodes[a.0].data.len() {
            return Err(TensorError::Dimension("mse_loss target length mismatch".into()));
        }
        let n = S::from_f64(target.len() as f64);
        let mut s = S::zero();
        for (&x, &t) in self.nodes[a.0].data.iter().zip(target) {
            let d = x - t;
            s = s + d * d;
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![s / n], vec![1, 1], rg, Op::MseLoss { a: a.0, target: target.to_vec() }))
    }

    /// Scalar mean absolute error against a constant target.
    pub fn l1_loss(&mut self, a: NodeId, target: &[S]) -> Result<NodeId> {
        if target.len() != self.nodes[a.0].data.len() {
            return Err(TensorError::Dimension("l1_loss target length mismatch".into()));
        }
        let n = S::from_f64(target.len() as f64);
        let mut s = S::zero();
        for (&x, &t) in self.nodes[a.0].data.iter().zip(target) {
            s = s + (x - t).abs();
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![s / n], vec![1, 1], rg, Op::L1Loss { a: a.0, target: target.to_vec() }))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-mode sweep seeding d(loss)/d(loss) = 1 at `loss`.
    pub fn backward(&mut self, loss: NodeId) {
        let n = self.nodes.len();
        for node in &mut self.nodes {
            if node.requires_grad {
                node.grad.clear();
                node.grad.resize(node.data.len(), S::zero());
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return;
        }
        for g in self.nodes[loss.0].grad.iter_mut() {
            *g = S::one();
        }

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_empty() {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            match &op {
                Op::Leaf => {}
                &Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let nn = self.nodes[b].shape[1];
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        // dA += dC * B^T
                        let mut da = std::mem::take(&mut self.nodes[a].grad);
                        mm_nt_acc(&g, &self.nodes[b].data, &mut da, m, nn, k);
                        self.nodes[a].grad = da;
                    }
                    if self.nodes[b].requires_grad {
                        // dB += A^T * dC
                        let mut db = std::mem::take(&mut self.nodes[b].grad);
                        mm_tn_acc(&self.nodes[a].data, &g, &mut db, m, k, nn);
                        self.nodes[b].grad = db;
                    }
                    self.nodes[i].grad = g;
                }
                &Op::MatMulNt { a, b } => {
                    let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let nn = self.nodes[b].shape[0];
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        // dA += dC * B
                        let mut da = std::mem::take(&mut self.nodes[a].grad);
                        mm_acc(&g, &self.nodes[b].data, &mut da, m, nn, k);
                        self.nodes[a].grad = da;
                    }
                    if self.nodes[b].requires_grad {
                        // dB += dC^T * A
                        let mut db = std::mem::take(&mut self.nodes[b].grad);
                        mm_tn_acc(&g, &self.nodes[a].data, &mut db, m, nn, k);
                        self.nodes[b].grad = db;
                    }
                    self.nodes[i].grad = g;
                }
                &Op::Add { a, b } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        for (d, &gv) in self.nodes[a].grad.iter_mut().zip(&g) {
                            *d = *d + gv;
                        }
                    }
                    if self.nodes[b].requires_grad {
                        for (d, &gv) in self.nodes[b].grad.iter_mut().zip(&g) {
                            *d = *d + gv;
                        }
                    }
                    self.nodes[i].grad = g;
                }
                &Op::Sub { a, b } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        for (d, &gv) in self.nodes[a].grad.iter_mut().zip(&g) {
                            *d = *d + gv;
                        }
                    }
                    if self.nodes[b].requires_grad {
                        for (d, &gv) in self.nodes[b].grad.iter_mut().zip(&g) {
                            *d = *d - gv;
                        }
                    }
                    self.nodes[i].grad = g;
                }
                &Op::Mul { a, b } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        let bdata = std::mem::take(&mut self.nodes[b].data);
                        for ((d, &gv), &bv) in self.nodes[a].grad.iter_mut().zip(&g).zip(&bdata) {
                            *d = *d + gv * bv;
                        }
                        self.nodes[b].data = bdata;
                    }
                    if self.nodes[b].requires_grad {
                        let adata = std::mem::take(&mut self.nodes[a].data);
                        for ((d, &gv), &av) in self.nodes[b].grad.iter_mut().zip(&g).zip(&adata) {
                            *d = *d + gv * av;
                        }
                        self.nodes[a].data = adata;
                    }
                    self.nodes[i].grad = g;
                }
                &Op::AddBias { a, bias } => {
                    let (m, nn) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        for (d, &gv) in self.nodes[a].grad.iter_mut().zip(&g) {
                            *d = *d + gv;
                        }
                    }
                    if self.nodes[bias].requires_grad {
                        let db = &mut self.nodes[bias].grad;
                        for i2 in 0..m {
                            for j in 0..nn {
                                db[j] = db[j] + g[i2 * nn + j];
                            }
                        }
                    }
                    self.nodes[i].grad = g;
                }
                &Op::Scale { a, c } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        for (d, &gv) in self.nodes[a].grad.iter_mut().zip(&g) {
                            *d = *d + gv * c;
                        }
                    }
                    self.nodes[i].grad = g;
                }
                &Op::Gelu { a } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        let adata = std::mem::take(&mut self.nodes[a].data);
                        for ((d, &gv), &x) in self.nodes[a].grad.iter_mut().zip(&g).zip(&adata) {
                            *d = *d + gv * gelu_bwd(x);
                        }
                        self.nodes[a].data = adata;
                    }
                    self.nodes[i].grad = g;
                }
                &Op::Softmax { a } => {
                    let (m, nn) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        let out = std::mem::take(&mut self.nodes[i].data);
                        let da = &mut self.nodes[a].grad;
                        for r in 0..m {
                            let orow = &out[r * nn..(r + 1) * nn];
                            let grow = &g[r * nn..(r + 1) * nn];
                            let mut dot = S::zero();
                            for j in 0..nn {
                                dot = dot + grow[j] * orow[j];
                            }
                            let darow = &mut da[r * nn..(r + 1) * nn];
                            for j in 0..nn {
                                darow[j] = darow[j] + orow[j] * (grow[j] - dot);
                            }
                        }
                        self.nodes[i].data = out;
                    }
                    self.nodes[i].grad = g;
                }
                Op::Mha { q, k, v, heads, causal, probs } => {
                    let (q, k, v, heads, causal) = (*q, *k, *v, *heads, *causal);
                    let (t, d) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let dh = d / heads;
                    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    // clone rather than take: q/k/v may alias in probes
                    let qd = self.nodes[q].data.clone();
                    let kd = self.nodes[k].data.clone();
                    let vd = self.nodes[v].data.clone();
                    let mut dq = vec![S::zero(); t * d];
                    let mut dk = vec![S::zero(); t * d];
                    let mut dv = vec![S::zero(); t * d];
                    let mut vt = vec![S::zero(); dh * t];
                    let mut dprow = vec![S::zero(); t];
                    for h in 0..heads {
                        let off = h * dh;
                        for j in 0..t {
                            for p in 0..dh {
                                vt[p * t + j] = vd[j * d + off + p];
                            }
                        }
                        let hp = &probs[h * t * t..(h + 1) * t * t];
                        for r in 0..t {
                            let jmax = if causal { r + 1 } else { t };
                            let grow = &g[r * d + off..r * d + off + dh];
                            let prow = &hp[r * t..r * t + jmax];
                            // d probs = g_row . v^T
                            let dp = &mut dprow[..jmax];
                            dp.iter_mut().for_each(|x| *x = S::zero());
                            for (p, &gv) in grow.iter().enumerate() {
                                let vrow = &vt[p * t..p * t + jmax];
                                for j in 0..jmax {
                                    dp[j] = dp[j] + gv * vrow[j];
                                }
                            }
                            // dv += probs^T . g
                            for j in 0..jmax {
                                let pw = prow[j];
                                let dvrow = &mut dv[j * d + off..j * d + off + dh];
                                for p in 0..dh {
                                    dvrow[p] = dvrow[p] + pw * grow[p];
                                }
                            }
                            // softmax backward, then scale
                            let mut dot = S::zero();
                            for j in 0..jmax {
                                dot = dot + dp[j] * prow[j];
                            }
                            for j in 0..jmax {
                                let ds = prow[j] * (dp[j] - dot) * scale;
                                let qrow = &qd[r * d + off..r * d + off + dh];
                                let krow = &kd[j * d + off..j * d + off + dh];
                                let dqrow = &mut dq[r * d + off..r * d + off + dh];
                                for p in 0..dh {
                                    dqrow[p] = dqrow[p] + ds * krow[p];
                                }
                                let dkrow = &mut dk[j * d + off..j * d + off + dh];
                                for p in 0..dh {
                                    dkrow[p] = dkrow[p] + ds * qrow[p];
                                }
                            }
                        }
                    }
                    if self.nodes[q].requires_grad {
                        for (dst, &src) in self.nodes[q].grad.iter_mut().zip(&dq) {
                            *dst = *dst + src;
                        }
                    }
                    if self.nodes[k].requires_grad {
                        for (dst, &src) in self.nodes[k].grad.iter_mut().zip(&dk) {
                            *dst = *dst + src;
                        }
                    }
                    if self.nodes[v].requires_grad {
                        for (dst, &src) in self.nodes[v].grad.iter_mut().zip(&dv) {
                            *dst = *dst + src;
                        }
                    }
                    self.nodes[i].grad = g;
                }
                &Op::LayerNorm { a, gamma, beta, eps } => {
                    let (m, nn) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let nf = S::from_f64(nn as f64);
                    let adata = std::mem::take(&mut self.nodes[a].data);
                    let gdata = std::mem::take(&mut self.nodes[gamma].data);
                    for r in 0..m {
                        let xrow = &adata[r * nn..(r + 1) * nn];
                        let grow = &g[r * nn..(r + 1) * nn];
                        let mut mean = S::zero();
                        for &v in xrow {
                            mean = mean + v;
                        }
                        mean = mean / nf;
                        let mut var = S::zero();
                        for &v in xrow {
                            let d = v - mean;
                            var = var + d * d;
                        }
                        var = var / nf;
                        let inv_std = S::one() / (var + eps).sqrt();

                        if self.nodes[beta].requires_grad {
                            let db = &mut self.nodes[beta].grad;
                            for j in 0..nn {
                                db[j] = db[j] + grow[j];
                            }
                        }
                        if self.nodes[gamma].requires_grad {
                            let dg = &mut self.nodes[gamma].grad;
                            for j in 0..nn {
                                let xhat = (xrow[j] - mean) * inv_std;
                                dg[j] = dg[j] + grow[j] * xhat;
                            }
                        }
                        if self.nodes[a].requires_grad {
                            let mut dxhat_sum = S::zero();
                            let mut dxhat_xhat = S::zero();
                            for j in 0..nn {
                                let xhat = (xrow[j] - mean) * inv_std;
                                let dxhat = grow[j] * gdata[j];
                                dxhat_sum = dxhat_sum + dxhat;
                                dxhat_xhat = dxhat_xhat + dxhat * xhat;
                            }
                            let da = &mut self.nodes[a].grad[r * nn..(r + 1) * nn];
                            for j in 0..nn {
                                let xhat = (xrow[j] - mean) * inv_std;
                                let dxhat = grow[j] * gdata[j];
                                da[j] = da[j] + inv_std / nf * (nf * dxhat - dxhat_sum - xhat * dxhat_xhat);
                            }
                        }
                    }
                    self.nodes[a].data = adata;
                    self.nodes[gamma].data = gdata;
                    self.nodes[i].grad = g;
                }
                Op::GatherRows { a, idx } => {
                    let a = *a;
                    let nn = self.nodes[a].shape[1];
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        let da = &mut self.nodes[a].grad;
                        for (r, &src_row) in idx.iter().enumerate() {
                            let grow = &g[r * nn..(r + 1) * nn];
                            let drow = &mut da[src_row * nn..(src_row + 1) * nn];
                            for j in 0..nn {
                                drow[j] = drow[j] + grow[j];
                            }
                        }
                    }
                    self.nodes[i].grad = g;
                }
                &Op::SliceRows { a, start } => {
                    let nn = self.nodes[a].shape[1];
                    let rows = self.nodes[i].shape[0];
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        let da = &mut self.nodes[a].grad;
                        let dst = &mut da[start * nn..(start + rows) * nn];
                        for (d, &gv) in dst.iter_mut().zip(&g) {
                            *d = *d + gv;
                        }
                    }
                    self.nodes[i].grad = g;
                }
                &Op::SliceCols { a, start } => {
                    let (m, src_n) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let len = self.nodes[i].shape[1];
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        let da = &mut self.nodes[a].grad;
                        for r in 0..m {
                            let grow = &g[r * len..(r + 1) * len];
                            let drow = &mut da[r * src_n + start..r * src_n + start + len];
                            for j in 0..len {
                                drow[j] = drow[j] + grow[j];
                            }
                        }
                    }
                    self.nodes[i].grad = g;
                }
                Op::ConcatRows { parts } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let mut off = 0;
                    for &p in parts.iter() {
                        let rows = self.nodes[p].shape[0];
                        let nn = self.nodes[p].shape[1];
                        if self.nodes[p].requires_grad {
                            let dp = &mut self.nodes[p].grad;
                            let src = &g[off..off + rows * nn];
                            for (d, &gv) in dp.iter_mut().zip(src) {
                                *d = *d + gv;
                            }
                        }
                        off += rows * nn;
                    }
                    self.nodes[i].grad = g;
                }
                Op::ConcatCols { parts } => {
                    let m = self.nodes[i].shape[0];
                    let total = self.nodes[i].shape[1];
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let mut off = 0;
                    for &p in parts.iter() {
                        let pn = self.nodes[p].shape[1];
                        if self.nodes[p].requires_grad {
                            let dp = &mut self.nodes[p].grad;
                            for r in 0..m {
                                let grow = &g[r * total + off..r * total + off + pn];
                                let drow = &mut dp[r * pn..(r + 1) * pn];
                                for j in 0..pn {
                                    drow[j] = drow[j] + grow[j];
                                }
                            }
                        }
                        off += pn;
                    }
                    self.nodes[i].grad = g;
                }
                Op::CeRows { a, targets } => {
                    let a = *a;
                    let (m, nn) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].requires_grad {
                        let adata = std::mem::take(&mut self.nodes[a].data);
                        let da = &mut self.nodes[a].grad;
                        for r in 0..m {
                            let row = &adata[r * nn..(r + 1) * nn];
                            let gv = g[r];
                            let mut mx = S::neg_infinity();
                            for &v in row {
                                if v > mx {
                                    mx = v;
                                }
                            }
                            let mut sum = S::zero();
                            for &v in row {
                                sum = sum + (v - mx).exp_fast();
                            }
                            let inv = S::one() / sum;
                            let darow = &mut da[r * nn..(r + 1) * nn];
                            for j in 0..nn {
                                let p = (row[j] - mx).exp_fast() * inv;
                                let ind = if j == targets[r] { S::one() } else { S::zero() };
                                darow[j] = darow[j] + gv * (p - ind);
                            }
                        }
                        self.nodes[a].data = adata;
                    }
                    self.nodes[i].grad = g;
                }
                Op::WeightedSum { a, w } => {
                    let a = *a;
                    let g = self.nodes[i].grad[0];
                    if self.nodes[a].requires_grad {
                        for (d, &wi) in self.nodes[a].grad.iter_mut().zip(w.iter()) {
                            *d = *d + g * wi;
                        }
                    }
                }
                &Op::ScaledSum { a, c } => {
                    let g = self.nodes[i].grad[0];
                    if self.nodes[a].requires_grad {
                        for d in self.nodes[a].grad.iter_mut() {
                            *d = *d + g * c;
                        }
                    }
                }
                Op::MseLoss { a, target } => {
                    let a = *a;
                    let g = self.nodes[i].grad[0];
                    if self.nodes[a].requires_grad {
                        let nf = S::from_f64(target.len() as f64);
                        let two = S::from_f64(2.0);
                        let adata = std::mem::take(&mut self.nodes[a].data);
                        for ((d, &x), &t) in self.nodes[a].grad.iter_mut().zip(&adata).zip(target.iter()) {
                            *d = *d + g * two * (x - t) / nf;
                        }
                        self.nodes[a].data = adata;
                    }
                }
                Op::L1Loss { a, target } => {
                    let a = *a;
                    let g = self.nodes[i].grad[0];
                    if self.nodes[a].requires_grad {
                        let nf = S::from_f64(target.len() as f64);
                        let adata = std::mem::take(&mut self.nodes[a].data);
                        for ((d, &x), &t) in self.nodes[a].grad.iter_mut().zip(&adata).zip(target.iter()) {
                            let s = if x > t {
                                S::one()
                            } else if x < t {
                                -S::one()
                            } else {
                                S::zero()
                            };
                            *d = *d + g * s / nf;
                        }
                        self.nodes[a].data = adata;
                    }
                }
            }
            self.nodes[i].op = op;
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}
