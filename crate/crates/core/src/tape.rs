//! A small reverse-mode differentiation tape over row-major matrices.
//!
//! Every value is a 2-D array whose rows are tokens and whose columns are
//! channels. The op set is exactly what the denoiser needs; attention and
//! layer normalization are fused ops with hand-written adjoints.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a trainable tensor in a [`Params`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    names: Vec<String>,
    tensors: Vec<Array2<F>>,
}

impl<F: Real> Default for Params<F> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<F: Real> Params<F> {
    pub fn add(&mut self, name: impl Into<String>, value: Array2<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<F>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<F>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn to_f64(&self) -> Params<f64> {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.mapv(F::as_f64)).collect(),
        }
    }

    pub fn from_f64(other: &Params<f64>) -> Self {
        Params {
            names: other.names.clone(),
            tensors: other
                .tensors
                .iter()
                .map(|t| t.mapv(F::from_f64_lossy))
                .collect(),
        }
    }

    /// Copies tensors from `other` by name, requiring identical names and
    /// shapes.
    pub fn load_from(&mut self, other: &Params<F>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::CheckpointMismatch(format!(
                "parameter names differ ({} stored vs {} expected)",
                other.names.len(),
                self.names.len()
            )));
        }
        for (i, (mine, theirs)) in self.tensors.iter_mut().zip(&other.tensors).enumerate() {
            if mine.dim() != theirs.dim() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[i],
                    theirs.dim(),
                    mine.dim()
                )));
            }
            mine.assign(theirs);
        }
        Ok(())
    }
}

/// Gradients aligned with a [`Params`] store; `None` where a tensor did not
/// take part in the computation.
pub type Grads<F> = Vec<Option<Array2<F>>>;

/// Rows of equal-length sequences that attend to each other.
///
/// Group `g` consists of rows `rows[g * len .. (g + 1) * len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Groups {
    pub len: usize,
    pub rows: Vec<usize>,
}

impl Groups {
    pub fn count(&self) -> usize {
        self.rows.len() / self.len
    }

    /// Token rows laid out as `(batch, time, feature)`: one group per
    /// `(batch, feature)` spanning all time steps.
    pub fn over_time(batch: usize, steps: usize, features: usize) -> Self {
        let mut rows = Vec::with_capacity(batch * steps * features);
        for b in 0..batch {
            for c in 0..features {
                for t in 0..steps {
                    rows.push((b * steps + t) * features + c);
                }
            }
        }
        Groups { len: steps, rows }
    }

    /// One group per `(batch, time)` spanning all features.
    pub fn over_features(batch: usize, steps: usize, features: usize) -> Self {
        Groups {
            len: features,
            rows: (0..batch * steps * features).collect(),
        }
    }
}

enum Op<F> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    PassThrough(Var),
    MulConst(Var, Array2<F>),
    ScaleRows(Var, Array1<F>),
    Relu(Var),
    Silu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<F>,
        inv_std: Array1<F>,
    },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    AddBlockRows {
        x: Var,
        rows: Var,
        block: usize,
    },
    GatherAddRows {
        x: Var,
        table: Var,
        index: Vec<usize>,
    },
    BlockMean {
        x: Var,
        block: usize,
    },
    BlockAffine {
        w: Var,
        b: Var,
        x: Var,
    },
    Attention {
        qkv: Var,
        groups: std::sync::Arc<Groups>,
        heads: usize,
        probs: Vec<F>,
    },
}

struct Node<F> {
    value: Array2<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Records a forward computation for one backward pass.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant; no gradient flows into it.
    pub fn input(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A trainable tensor. Repeated calls with the same id reuse one node.
    pub fn param(&mut self, params: &Params<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param(id), true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), needs)
    }

    /// `x + bias` with a `(1, m)` bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let value = self.value(x) + self.value(bias);
        let needs = self.needs(x) || self.needs(bias);
        self.push(value, Op::AddBias(x, bias), needs)
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn add_const(&mut self, x: Var, c: &Array2<F>) -> Var {
        let value = self.value(x) + c;
        let needs = self.needs(x);
        self.push(value, Op::PassThrough(x), needs)
    }

    pub fn mul_const(&mut self, x: Var, c: Array2<F>) -> Var {
        let value = self.value(x) * &c;
        let needs = self.needs(x);
        self.push(value, Op::MulConst(x, c), needs)
    }

    /// Multiplies row `i` by `scale[i]`.
    pub fn scale_rows(&mut self, x: Var, scale: Array1<F>) -> Var {
        let value = self.value(x) * &scale.view().insert_axis(Axis(1));
        let needs = self.needs(x);
        self.push(value, Op::ScaleRows(x, scale), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(F::zero()));
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v * sigmoid(v));
        let needs = self.needs(x);
        self.push(value, Op::Silu(x), needs)
    }

    /// Row-wise layer normalization with `(1, m)` gain and offset.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let m = F::from_usize(xv.ncols()).unwrap();
        let eps = F::from_f64_lossy(LAYER_NORM_EPS);
        let mut xhat = xv.to_owned();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, is) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
            let mean = row.sum() / m;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<F>() / m;
            *is = F::one() / (var + eps).sqrt();
            let s = *is;
            row.mapv_inplace(|v| v * s);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            needs,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), needs)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let value = self
            .value(x)
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((rows, cols))
            .expect("reshape preserves element count");
        let needs = self.needs(x);
        self.push(value, Op::Reshape(x), needs)
    }

    /// Adds `rows[b]` to every row of block `b`, blocks being `block`
    /// consecutive rows of `x`.
    pub fn add_block_rows(&mut self, x: Var, rows: Var, block: usize) -> Var {
        let mut value = self.value(x).clone();
        let r = self.value(rows);
        for (i, mut row) in value.axis_iter_mut(Axis(0)).enumerate() {
            row += &r.row(i / block);
        }
        let needs = self.needs(x) || self.needs(rows);
        self.push(value, Op::AddBlockRows { x, rows, block }, needs)
    }

    /// Adds `table[index[i]]` to row `i`.
    pub fn gather_add_rows(&mut self, x: Var, table: Var, index: Vec<usize>) -> Var {
        let mut value = self.value(x).clone();
        let t = self.value(table);
        for (mut row, &k) in value.axis_iter_mut(Axis(0)).zip(&index) {
            row += &t.row(k);
        }
        let needs = self.needs(x) || self.needs(table);
        self.push(value, Op::GatherAddRows { x, table, index }, needs)
    }

    /// Mean over each block of `block` consecutive rows.
    pub fn block_mean(&mut self, x: Var, block: usize) -> Var {
        let xv = self.value(x);
        let n = xv.nrows() / block;
        let inv = F::one() / F::from_usize(block).unwrap();
        let mut value = Array2::zeros((n, xv.ncols()));
        for (i, row) in xv.axis_iter(Axis(0)).enumerate() {
            let mut out = value.row_mut(i / block);
            out.scaled_add(inv, &row);
        }
        let needs = self.needs(x);
        self.push(value, Op::BlockMean { x, block }, needs)
    }

    /// `w x_b + b` for every block `x_b` of `w.nrows()` consecutive rows,
    /// with the `(n, 1)` bias broadcast across columns.
    pub fn block_affine(&mut self, w: Var, b: Var, x: Var) -> Var {
        let (wv, bv, xv) = (self.value(w), self.value(b), self.value(x));
        let n = wv.nrows();
        assert_eq!(wv.ncols(), n, "block map must be square");
        assert_eq!(xv.nrows() % n, 0, "rows must split into blocks");
        let mut value = Array2::zeros(xv.dim());
        for (src, mut dst) in xv
            .axis_chunks_iter(Axis(0), n)
            .zip(value.axis_chunks_iter_mut(Axis(0), n))
        {
            dst.assign(&wv.dot(&src));
            dst += bv;
        }
        let needs = self.needs(w) || self.needs(b) || self.needs(x);
        self.push(value, Op::BlockAffine { w, b, x }, needs)
    }

    /// Multi-head scaled dot-product self-attention within each group.
    ///
    /// `qkv` holds queries, keys and values side by side, `(n, 3d)`.
    pub fn attention(&mut self, qkv: Var, groups: std::sync::Arc<Groups>, heads: usize) -> Var {
        let qkv_v = self.value(qkv).as_standard_layout().into_owned();
        let (n, three_d) = qkv_v.dim();
        let d = three_d / 3;
        let dh = d / heads;
        let s = groups.len;
        let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
        let src = qkv_v.as_slice().expect("standard layout");
        let mut out = Array2::<F>::zeros((n, d));
        let out_s = out.as_slice_mut().expect("standard layout");
        let mut probs = vec![F::zero(); groups.count() * heads * s * s];
        // keys transposed per group, `kt[c * s + j]`
        let mut kt = vec![F::zero(); d * s];
        let mut scores = vec![F::zero(); heads * s];
        for (g, rows) in groups.rows.chunks(s).enumerate() {
            let base = g * heads * s * s;
            for (j, &rj) in rows.iter().enumerate() {
                let k = &src[rj * three_d + d..rj * three_d + 2 * d];
                for (c, &v) in k.iter().enumerate() {
                    kt[c * s + j] = v;
                }
            }
            for (i, &ri) in rows.iter().enumerate() {
                let q = &src[ri * three_d..ri * three_d + d];
                scores.iter_mut().for_each(|x| *x = F::zero());
                for ((row, qh), kh) in scores
                    .chunks_exact_mut(s)
                    .zip(q.chunks_exact(dh))
                    .zip(kt.chunks_exact(dh * s))
                {
                    for (&qc, kc) in qh.iter().zip(kh.chunks_exact(s)) {
                        axpy(row, qc, kc);
                    }
                }
                for h in 0..heads {
                    let row = &mut scores[h * s..(h + 1) * s];
                    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                    let mut total = F::zero();
                    for x in row.iter_mut() {
                        *x = ((*x - max) * scale).exp();
                        total += *x;
                    }
                    let inv = F::one() / total;
                    let dst = &mut probs[base + (h * s + i) * s..base + (h * s + i + 1) * s];
                    for (pj, &x) in dst.iter_mut().zip(row.iter()) {
                        *pj = x * inv;
                    }
                }
                let o = &mut out_s[ri * d..(ri + 1) * d];
                for (h, oc) in o.chunks_exact_mut(dh).enumerate() {
                    let prow = &probs[base + (h * s + i) * s..base + (h * s + i + 1) * s];
                    for (&p, &rj) in prow.iter().zip(rows) {
                        let off = rj * three_d + 2 * d + h * dh;
                        axpy(oc, p, &src[off..off + dh]);
                    }
                }
            }
        }
        let needs = self.needs(qkv);
        self.push(
            out,
            Op::Attention {
                qkv,
                groups,
                heads,
                probs,
            },
            needs,
        )
    }

    /// Back-propagates the given output adjoints and returns parameter
    /// gradients aligned with a store of `num_params` tensors.
    pub fn backward(&self, seeds: &[(Var, Array2<F>)], num_params: usize) -> Grads<F> {
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(self.value(*v).dim(), g.dim(), "seed shape");
            accumulate(&mut grads[v.0], g.clone());
        }
        let mut out: Grads<F> = (0..num_params).map(|_| None).collect();
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => accumulate(&mut out[id.0], g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads[b.0], gb);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads[x.0], g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::PassThrough(x) => accumulate(&mut grads[x.0], g),
                Op::MulConst(x, c) => accumulate(&mut grads[x.0], g * c),
                Op::ScaleRows(x, scale) => {
                    accumulate(&mut grads[x.0], g * &scale.view().insert_axis(Axis(1)))
                }
                Op::Relu(x) => {
                    let mut g = g;
                    Zip::from(&mut g)
                        .and(self.value(*x))
                        .for_each(|gi, &xi| {
                            if xi <= F::zero() {
                                *gi = F::zero()
                            }
                        });
                    accumulate(&mut grads[x.0], g);
                }
                Op::Silu(x) => {
                    let mut g = g;
                    Zip::from(&mut g).and(self.value(*x)).for_each(|gi, &xi| {
                        let sg = sigmoid(xi);
                        *gi *= sg + xi * sg * (F::one() - sg);
                    });
                    accumulate(&mut grads[x.0], g);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if self.needs(*gamma) {
                        let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads[gamma.0], gg);
                    }
                    if self.needs(*beta) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads[beta.0], gb);
                    }
                    if self.needs(*x) {
                        let m = F::from_usize(xhat.ncols()).unwrap();
                        let mut dxhat = g * self.value(*gamma);
                        for ((mut row, xr), &is) in dxhat
                            .axis_iter_mut(Axis(0))
                            .zip(xhat.axis_iter(Axis(0)))
                            .zip(inv_std)
                        {
                            let mean_d = row.sum() / m;
                            let mean_dx =
                                row.iter().zip(xr).map(|(&a, &b)| a * b).sum::<F>() / m;
                            Zip::from(&mut row)
                                .and(&xr)
                                .for_each(|d, &xh| *d = is * (*d - mean_d - xh * mean_dx));
                        }
                        accumulate(&mut grads[x.0], dxhat);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.needs(*p) {
                            let gp = g.slice(s![.., col..col + w]).to_owned();
                            accumulate(&mut grads[p.0], gp);
                        }
                        col += w;
                    }
                }
                Op::Reshape(x) => {
                    let dim = self.value(*x).dim();
                    let gx = g.as_standard_layout().into_owned().into_shape_with_order(dim).expect("same element count");
                    accumulate(&mut grads[x.0], gx);
                }
                Op::AddBlockRows { x, rows, block } => {
                    if self.needs(*rows) {
                        let r = self.value(*rows);
                        let mut gr = Array2::zeros(r.dim());
                        for (i, row) in g.axis_iter(Axis(0)).enumerate() {
                            let mut dst = gr.row_mut(i / block);
                            dst += &row;
                        }
                        accumulate(&mut grads[rows.0], gr);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads[x.0], g);
                    }
                }
                Op::GatherAddRows { x, table, index } => {
                    if self.needs(*table) {
                        let t = self.value(*table);
                        let mut gt = Array2::zeros(t.dim());
                        for (row, &k) in g.axis_iter(Axis(0)).zip(index) {
                            let mut dst = gt.row_mut(k);
                            dst += &row;
                        }
                        accumulate(&mut grads[table.0], gt);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads[x.0], g);
                    }
                }
                Op::BlockMean { x, block } => {
                    let inv = F::one() / F::from_usize(*block).unwrap();
                    let dim = self.value(*x).dim();
                    let mut gx = Array2::zeros(dim);
                    for (i, mut row) in gx.axis_iter_mut(Axis(0)).enumerate() {
                        row.scaled_add(inv, &g.row(i / block));
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::BlockAffine { w, b, x } => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let n = wv.nrows();
                    if self.needs(*w) {
                        let mut gw = Array2::zeros(wv.dim());
                        for (gb, xb) in g.axis_chunks_iter(Axis(0), n).zip(xv.axis_chunks_iter(Axis(0), n)) {
                            gw += &gb.dot(&xb.t());
                        }
                        accumulate(&mut grads[w.0], gw);
                    }
                    if self.needs(*b) {
                        let mut gbias = Array2::zeros((n, 1));
                        for gb in g.axis_chunks_iter(Axis(0), n) {
                            gbias += &gb.sum_axis(Axis(1)).insert_axis(Axis(1));
                        }
                        accumulate(&mut grads[b.0], gbias);
                    }
                    if self.needs(*x) {
                        let mut gx = Array2::zeros(xv.dim());
                        for (gb, mut dst) in g.axis_chunks_iter(Axis(0), n).zip(gx.axis_chunks_iter_mut(Axis(0), n)) {
                            dst.assign(&wv.t().dot(&gb));
                        }
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::Attention {
                    qkv,
                    groups,
                    heads,
                    probs,
                } => {
                    let gq = attention_backward(
                        self.value(*qkv),
                        &g,
                        groups,
                        *heads,
                        probs,
                    );
                    accumulate(&mut grads[qkv.0], gq);
                }
            }
        }
        out
    }
}

/// `y += a * x` in fixed-width blocks so short rows still vectorize.
#[inline]
fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    debug_assert_eq!(y.len(), x.len());
    let mut yb = y.chunks_exact_mut(8);
    let mut xb = x.chunks_exact(8);
    for (yc, xc) in (&mut yb).zip(&mut xb) {
        let yc: &mut [F; 8] = yc.try_into().expect("block");
        let xc: &[F; 8] = xc.try_into().expect("block");
        for k in 0..8 {
            yc[k] += a * xc[k];
        }
    }
    for (yv, &xv) in yb.into_remainder().iter_mut().zip(xb.remainder()) {
        *yv += a * xv;
    }
}

fn attention_backward<F: Real>(
    qkv: &Array2<F>,
    dout: &Array2<F>,
    groups: &Groups,
    heads: usize,
    probs: &[F],
) -> Array2<F> {
    let qkv = qkv.as_standard_layout();
    let dout = dout.as_standard_layout();
    let (n, three_d) = qkv.dim();
    let d = three_d / 3;
    let dh = d / heads;
    let s = groups.len;
    let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
    let src = qkv.as_slice().expect("standard layout");
    let go = dout.as_slice().expect("standard layout");
    let mut grad = Array2::<F>::zeros((n, three_d));
    let gs = grad.as_slice_mut().expect("standard layout");
    // values transposed per group, `vt[c * s + j]`
    let mut vt = vec![F::zero(); d * s];
    let mut dp = vec![F::zero(); heads * s];
    let mut dq = vec![F::zero(); dh];
    for (g, rows) in groups.rows.chunks(s).enumerate() {
        let base = g * heads * s * s;
        for (j, &rj) in rows.iter().enumerate() {
            let v = &src[rj * three_d + 2 * d..(rj + 1) * three_d];
            for (c, &x) in v.iter().enumerate() {
                vt[c * s + j] = x;
            }
        }
        for (i, &ri) in rows.iter().enumerate() {
            let dyi = &go[ri * d..(ri + 1) * d];
            dp.iter_mut().for_each(|x| *x = F::zero());
            for ((row, dyh), vh) in dp
                .chunks_exact_mut(s)
                .zip(dyi.chunks_exact(dh))
                .zip(vt.chunks_exact(dh * s))
            {
                for (&dy, vc) in dyh.iter().zip(vh.chunks_exact(s)) {
                    axpy(row, dy, vc);
                }
            }
            for h in 0..heads {
                let p = &probs[base + (h * s + i) * s..base + (h * s + i + 1) * s];
                let row = &mut dp[h * s..(h + 1) * s];
                let weighted = p.iter().zip(row.iter()).fold(F::zero(), |a, (&x, &y)| a + x * y);
                for (x, &pj) in row.iter_mut().zip(p) {
                    *x = pj * (*x - weighted) * scale;
                }
            }
            // dp now holds score gradients
            let qi = ri * three_d;
            for h in 0..heads {
                let prow = &probs[base + (h * s + i) * s..base + (h * s + i + 1) * s];
                let dsrow = &dp[h * s..(h + 1) * s];
                let off = h * dh;
                let dyh = &dyi[off..off + dh];
                dq.iter_mut().for_each(|x| *x = F::zero());
                for ((&p, &ds), &rj) in prow.iter().zip(dsrow).zip(rows) {
                    let kj = rj * three_d + d + off;
                    let vj = kj + d;
                    axpy(&mut gs[vj..vj + dh], p, dyh);
                    axpy(&mut dq, ds, &src[kj..kj + dh]);
                    let qh = &src[qi + off..qi + off + dh];
                    axpy(&mut gs[kj..kj + dh], ds, qh);
                }
                for (a, &b) in gs[qi + off..qi + off + dh].iter_mut().zip(&dq) {
                    *a += b;
                }
            }
        }
    }
    grad
}

fn accumulate<F: Real>(slot: &mut Option<Array2<F>>, g: Array2<F>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}
