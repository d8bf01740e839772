//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Graph`] owns one training step's computation: operations execute
//! eagerly, record themselves on a tape, and a single [`Graph::backward`]
//! sweep accumulates gradients into every trainable leaf. Values are
//! rank-2 `f64` only; the only broadcast is scalar.
//!
//! Structure-valued tensors (similarities, incidence weights, attention
//! coefficients) are stored as `nnz x 1` columns over a shared
//! [`Pattern`], with dedicated kernels for per-slot work, so nothing the
//! size of n x n is ever materialized on the hot path.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::pattern::Pattern;

/// Stability guard for logarithms and row normalization.
pub const EPS: f64 = 1e-12;

/// Which way a normalization runs: `Rows` normalizes within each row,
/// `Cols` within each column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Which index of a pattern slot a per-node/per-edge vector attaches to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Row,
    Col,
}

/// Boolean mask for [`Graph::masked_softmax`].
#[derive(Clone, Debug)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Mask::new",
                format!("{} flags for {rows}x{cols}", data.len()),
            ));
        }
        Ok(Mask { rows, cols, data })
    }

    pub fn all(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            data: vec![true; rows * cols],
        }
    }

    #[inline]
    fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Affine { a: TensorId, mul: f64 },
    LeakyRelu { a: TensorId, slope: f64 },
    Elu { a: TensorId },
    Exp { a: TensorId },
    LogGuard { a: TensorId },
    Square { a: TensorId },
    MaskedSoftmax { a: TensorId, mask: Arc<Mask>, axis: Axis },
    Sum { a: TensorId },
    Mean { a: TensorId },
    FrobSq { a: TensorId },
    Trace { a: TensorId },
    RowL2Normalize { a: TensorId },
    ConcatCols { parts: Vec<TensorId> },
    SliceRows { a: TensorId, start: usize },
    PairDot { x: TensorId, pat: Arc<Pattern> },
    RowMinMax { a: TensorId, pat: Arc<Pattern> },
    SetDiag { a: TensorId, pat: Arc<Pattern> },
    Threshold { a: TensorId, delta: f64 },
    Gather { a: TensorId, map: Arc<Vec<u32>> },
    PatternRowSum { a: TensorId, pat: Arc<Pattern> },
    PatternColSum { a: TensorId, pat: Arc<Pattern> },
    ElemPow { a: TensorId, exponent: f64 },
    PairScale { v: TensorId, row: TensorId, col: TensorId, pat: Arc<Pattern> },
    AggCols { w: TensorId, x: TensorId, pat: Arc<Pattern> },
    AggRows { w: TensorId, e: TensorId, pat: Arc<Pattern> },
    PairLogits { row: TensorId, col: TensorId, pat: Arc<Pattern> },
    AddSlotConst { a: TensorId },
    PatternSoftmax { a: TensorId, pat: Arc<Pattern>, axis: Axis },
}

struct Node {
    value: Mat,
    grad: Option<Mat>,
    requires_grad: bool,
    op: Op,
}

/// One training step's tape. Operations execute eagerly and validate their
/// outputs: any non-finite value is an error at the op that produced it.
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&Mat> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        self.nodes[id.0].value.scalar()
    }

    fn push(&mut self, op_name: &'static str, value: Mat, requires_grad: bool, op: Op) -> Result<TensorId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(TensorId(self.nodes.len() - 1))
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Mat) -> Result<TensorId> {
        self.push("constant", value, false, Op::Leaf)
    }

    /// Trainable leaf; `backward` populates its gradient.
    pub fn variable(&mut self, value: Mat) -> Result<TensorId> {
        self.push("variable", value, true, Op::Leaf)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = Mat::matmul(self.value(a), false, self.value(b), false)?;
        let rg = self.needs(a) || self.needs(b);
        self.push("matmul", value, rg, Op::MatMul { a, b })
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(
                name,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data: Vec<f64> = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Mat::from_vec(va.rows(), va.cols(), data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push(name, value, rg, op)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: TensorId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let va = self.value(a);
        let data: Vec<f64> = va.as_slice().iter().map(|&x| f(x)).collect();
        let value = Mat::from_vec(va.rows(), va.cols(), data)?;
        let rg = self.needs(a);
        self.push(name, value, rg, op)
    }

    /// out = mul * a + add (scalar broadcast; covers scaling and shifting).
    pub fn affine(&mut self, a: TensorId, mul: f64, add: f64) -> Result<TensorId> {
        self.unary("affine", a, |x| mul * x + add, Op::Affine { a, mul })
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> Result<TensorId> {
        self.affine(a, factor, 0.0)
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> Result<TensorId> {
        self.unary(
            "leaky_relu",
            a,
            |x| if x >= 0.0 { x } else { slope * x },
            Op::LeakyRelu { a, slope },
        )
    }

    pub fn elu(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary(
            "elu",
            a,
            |x| if x > 0.0 { x } else { x.exp() - 1.0 },
            Op::Elu { a },
        )
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("exp", a, f64::exp, Op::Exp { a })
    }

    /// ln(max(x, EPS)); never errors on small or negative input.
    pub fn log_guard(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("log_guard", a, |x| x.max(EPS).ln(), Op::LogGuard { a })
    }

    pub fn square(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("square", a, |x| x * x, Op::Square { a })
    }

    /// x^p elementwise; the domain must be strictly positive (degree vectors
    /// are, structurally).
    pub fn elem_pow(&mut self, a: TensorId, exponent: f64) -> Result<TensorId> {
        if self.value(a).as_slice().iter().any(|&x| x <= 0.0) {
            return Err(Error::dim(
                "elem_pow",
                "non-positive input".to_string(),
            ));
        }
        self.unary(
            "elem_pow",
            a,
            |x| x.powf(exponent),
            Op::ElemPow { a, exponent },
        )
    }

    /// Exp-normalize the unmasked entries of each row (or column) to sum
    /// to 1; masked entries are exactly 0. A fully masked slice is an error.
    pub fn masked_softmax(&mut self, a: TensorId, mask: &Arc<Mask>, axis: Axis) -> Result<TensorId> {
        let va = self.value(a);
        if (va.rows(), va.cols()) != (mask.rows, mask.cols) {
            return Err(Error::dim(
                "masked_softmax",
                format!("logits {:?} vs mask {}x{}", va.shape(), mask.rows, mask.cols),
            ));
        }
        let (rows, cols) = va.shape();
        let mut out = Mat::zeros(rows, cols);
        let slices: Vec<Vec<(usize, usize)>> = match axis {
            Axis::Rows => (0..rows)
                .map(|r| (0..cols).map(|c| (r, c)).collect())
                .collect(),
            Axis::Cols => (0..cols)
                .map(|c| (0..rows).map(|r| (r, c)).collect())
                .collect(),
        };
        for (s, cells) in slices.iter().enumerate() {
            let live: Vec<&(usize, usize)> =
                cells.iter().filter(|&&(r, c)| mask.get(r, c)).collect();
            if live.is_empty() {
                return Err(Error::DegenerateNeighborhood {
                    what: match axis {
                        Axis::Rows => "row",
                        Axis::Cols => "column",
                    },
                    index: s,
                });
            }
            let max = live
                .iter()
                .map(|&&(r, c)| va.get(r, c))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &&(r, c) in &live {
                let e = (va.get(r, c) - max).exp();
                out.set(r, c, e);
                total += e;
            }
            for &&(r, c) in &live {
                out.set(r, c, out.get(r, c) / total);
            }
        }
        let rg = self.needs(a);
        self.push(
            "masked_softmax",
            out,
            rg,
            Op::MaskedSoftmax {
                a,
                mask: Arc::clone(mask),
                axis,
            },
        )
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let s: f64 = self.value(a).as_slice().iter().sum();
        let rg = self.needs(a);
        self.push("sum", Mat::from_vec(1, 1, vec![s])?, rg, Op::Sum { a })
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let va = self.value(a);
        let s: f64 = va.as_slice().iter().sum::<f64>() / va.numel() as f64;
        let rg = self.needs(a);
        self.push("mean", Mat::from_vec(1, 1, vec![s])?, rg, Op::Mean { a })
    }

    /// Squared Frobenius norm.
    pub fn frobenius_norm_sq(&mut self, a: TensorId) -> Result<TensorId> {
        let s: f64 = self.value(a).as_slice().iter().map(|x| x * x).sum();
        let rg = self.needs(a);
        self.push("frobenius_norm_sq", Mat::from_vec(1, 1, vec![s])?, rg, Op::FrobSq { a })
    }

    pub fn trace(&mut self, a: TensorId) -> Result<TensorId> {
        let va = self.value(a);
        if va.rows() != va.cols() {
            return Err(Error::dim(
                "trace",
                format!("{}x{} is not square", va.rows(), va.cols()),
            ));
        }
        let s: f64 = (0..va.rows()).map(|i| va.get(i, i)).sum();
        let rg = self.needs(a);
        self.push("trace", Mat::from_vec(1, 1, vec![s])?, rg, Op::Trace { a })
    }

    /// Divide each row by its L2 norm; rows with norm below [`EPS`] pass
    /// through unchanged.
    pub fn row_l2_normalize(&mut self, a: TensorId) -> Result<TensorId> {
        let va = self.value(a);
        let mut out = va.clone();
        for r in 0..out.rows() {
            let norm = dot(va.row(r), va.row(r)).sqrt();
            if norm >= EPS {
                for v in out.row_mut(r) {
                    *v /= norm;
                }
            }
        }
        let rg = self.needs(a);
        self.push("row_l2_normalize", out, rg, Op::RowL2Normalize { a })
    }

    /// Concatenate along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols", "no parts".to_string()));
        }
        let rows = self.value(parts[0]).rows();
        let mut total_cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::dim(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", rows, self.value(p).rows()),
                ));
            }
            total_cols += self.value(p).cols();
        }
        let mut out = Mat::zeros(rows, total_cols);
        let mut base = 0;
        for &p in parts {
            let vp = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[base..base + vp.cols()].copy_from_slice(vp.row(r));
            }
            base += vp.cols();
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", out, rg, Op::ConcatCols { parts: parts.to_vec() })
    }

    /// Contiguous row window [start, start+len).
    pub fn slice_rows(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let va = self.value(a);
        if start + len > va.rows() {
            return Err(Error::dim(
                "slice_rows",
                format!("rows {start}..{} of a {}-row tensor", start + len, va.rows()),
            ));
        }
        let cols = va.cols();
        let data = va.as_slice()[start * cols..(start + len) * cols].to_vec();
        let value = Mat::from_vec(len, cols, data)?;
        let rg = self.needs(a);
        self.push("slice_rows", value, rg, Op::SliceRows { a, start })
    }

    // ---- pattern-structured operations -------------------------------

    fn expect_slots(&self, name: &'static str, a: TensorId, pat: &Pattern) -> Result<()> {
        let va = self.value(a);
        if va.rows() != pat.nnz() || va.cols() != 1 {
            return Err(Error::dim(
                name,
                format!("expected {}x1 slot values, got {:?}", pat.nnz(), va.shape()),
            ));
        }
        Ok(())
    }

    /// Per-slot inner products: out_q = <x_i(q), x_k(q)> for each pattern
    /// slot (i, k). Requires a square pattern over the rows of `x`.
    pub fn pair_dot(&mut self, x: TensorId, pat: &Arc<Pattern>) -> Result<TensorId> {
        let vx = self.value(x);
        if vx.rows() != pat.n() || pat.n() != pat.m() {
            return Err(Error::dim(
                "pair_dot",
                format!(
                    "features {:?} vs pattern {}x{}",
                    vx.shape(),
                    pat.n(),
                    pat.m()
                ),
            ));
        }
        let mut data = vec![0.0; pat.nnz()];
        for i in 0..pat.n() {
            let xi = vx.row(i);
            for q in pat.row_range(i) {
                data[q] = dot(xi, vx.row(pat.col_of(q)));
            }
        }
        let rg = self.needs(x);
        self.push(
            "pair_dot",
            Mat::from_vec(pat.nnz(), 1, data)?,
            rg,
            Op::PairDot { x, pat: Arc::clone(pat) },
        )
    }

    /// Rescale each pattern row's slot values to [0,1] by min-max. A row
    /// whose values are all equal maps to zeros.
    pub fn row_minmax_normalize(&mut self, a: TensorId, pat: &Arc<Pattern>) -> Result<TensorId> {
        self.expect_slots("row_minmax_normalize", a, pat)?;
        let va = self.value(a).as_slice();
        let mut data = vec![0.0; pat.nnz()];
        for i in 0..pat.n() {
            let range = pat.row_range(i);
            if range.is_empty() {
                continue;
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for q in range.clone() {
                lo = lo.min(va[q]);
                hi = hi.max(va[q]);
            }
            let span = hi - lo;
            if span > 0.0 {
                for q in range {
                    data[q] = (va[q] - lo) / span;
                }
            }
        }
        let rg = self.needs(a);
        self.push(
            "row_minmax_normalize",
            Mat::from_vec(pat.nnz(), 1, data)?,
            rg,
            Op::RowMinMax { a, pat: Arc::clone(pat) },
        )
    }

    /// Force the diagonal slots (node == hyperedge) to 1. No gradient flows
    /// through the overwritten slots.
    pub fn set_unit_diag(&mut self, a: TensorId, pat: &Arc<Pattern>) -> Result<TensorId> {
        self.expect_slots("set_unit_diag", a, pat)?;
        let mut value = self.value(a).clone();
        for &q in pat.diag_slots() {
            value.as_mut_slice()[q as usize] = 1.0;
        }
        let rg = self.needs(a);
        self.push("set_unit_diag", value, rg, Op::SetDiag { a, pat: Arc::clone(pat) })
    }

    /// Hard threshold: keep x when x >= delta, else 0. Gradient passes
    /// through kept entries only.
    pub fn threshold(&mut self, a: TensorId, delta: f64) -> Result<TensorId> {
        self.unary(
            "threshold",
            a,
            |x| if x >= delta { x } else { 0.0 },
            Op::Threshold { a, delta },
        )
    }

    /// out[j] = a[map[j]] for column tensors; backward scatter-adds.
    pub fn gather(&mut self, a: TensorId, map: &Arc<Vec<u32>>) -> Result<TensorId> {
        let va = self.value(a);
        if va.cols() != 1 {
            return Err(Error::dim("gather", "expected a column tensor".to_string()));
        }
        let src = va.as_slice();
        let data: Vec<f64> = map.iter().map(|&q| src[q as usize]).collect();
        let rg = self.needs(a);
        self.push(
            "gather",
            Mat::from_vec(map.len(), 1, data)?,
            rg,
            Op::Gather { a, map: Arc::clone(map) },
        )
    }

    /// Row sums of slot values: vertex degrees when fed incidence weights.
    pub fn pattern_row_sum(&mut self, a: TensorId, pat: &Arc<Pattern>) -> Result<TensorId> {
        self.expect_slots("pattern_row_sum", a, pat)?;
        let va = self.value(a).as_slice();
        let mut data = vec![0.0; pat.n()];
        for (i, d) in data.iter_mut().enumerate() {
            for q in pat.row_range(i) {
                *d += va[q];
            }
        }
        let rg = self.needs(a);
        self.push(
            "pattern_row_sum",
            Mat::from_vec(pat.n(), 1, data)?,
            rg,
            Op::PatternRowSum { a, pat: Arc::clone(pat) },
        )
    }

    /// Column sums of slot values: hyperedge degrees.
    pub fn pattern_col_sum(&mut self, a: TensorId, pat: &Arc<Pattern>) -> Result<TensorId> {
        self.expect_slots("pattern_col_sum", a, pat)?;
        let va = self.value(a).as_slice();
        let mut data = vec![0.0; pat.m()];
        for (k, d) in data.iter_mut().enumerate() {
            for p in pat.col_range(k) {
                let (_, q) = pat.col_entry(p);
                *d += va[q];
            }
        }
        let rg = self.needs(a);
        self.push(
            "pattern_col_sum",
            Mat::from_vec(pat.m(), 1, data)?,
            rg,
            Op::PatternColSum { a, pat: Arc::clone(pat) },
        )
    }

    /// out_q = v_q * row[i(q)] * col[k(q)]: degree-normalizes incidence
    /// weights without materializing diagonal matrices.
    pub fn pair_scale(
        &mut self,
        v: TensorId,
        row: TensorId,
        col: TensorId,
        pat: &Arc<Pattern>,
    ) -> Result<TensorId> {
        self.expect_slots("pair_scale", v, pat)?;
        let (vr, vc) = (self.value(row), self.value(col));
        if vr.shape() != (pat.n(), 1) || vc.shape() != (pat.m(), 1) {
            return Err(Error::dim(
                "pair_scale",
                format!("factors {:?}/{:?} vs pattern {}x{}", vr.shape(), vc.shape(), pat.n(), pat.m()),
            ));
        }
        let vv = self.value(v).as_slice();
        let r = self.value(row).as_slice();
        let c = self.value(col).as_slice();
        let mut data = vec![0.0; pat.nnz()];
        for i in 0..pat.n() {
            for q in pat.row_range(i) {
                data[q] = vv[q] * r[i] * c[pat.col_of(q)];
            }
        }
        let rg = self.needs(v) || self.needs(row) || self.needs(col);
        self.push(
            "pair_scale",
            Mat::from_vec(pat.nnz(), 1, data)?,
            rg,
            Op::PairScale { v, row, col, pat: Arc::clone(pat) },
        )
    }

    /// Weighted gather of node features into hyperedges:
    /// out_k = sum_{(i,k) in pattern} w_(i,k) * x_i. This is H^T X for slot
    /// weights w.
    pub fn agg_cols(&mut self, w: TensorId, x: TensorId, pat: &Arc<Pattern>) -> Result<TensorId> {
        self.expect_slots("agg_cols", w, pat)?;
        let vx = self.value(x);
        if vx.rows() != pat.n() {
            return Err(Error::dim(
                "agg_cols",
                format!("features {:?} vs pattern n={}", vx.shape(), pat.n()),
            ));
        }
        let vw = self.value(w).as_slice();
        let p = vx.cols();
        let mut out = Mat::zeros(pat.m(), p);
        for k in 0..pat.m() {
            let orow = out.row_mut(k);
            for cp in pat.col_range(k) {
                let (i, q) = pat.col_entry(cp);
                let wq = vw[q];
                for (o, &xv) in orow.iter_mut().zip(vx.row(i)) {
                    *o += wq * xv;
                }
            }
        }
        let rg = self.needs(w) || self.needs(x);
        self.push("agg_cols", out, rg, Op::AggCols { w, x, pat: Arc::clone(pat) })
    }

    /// Weighted gather of hyperedge features into nodes:
    /// out_i = sum_{(i,k) in pattern} w_(i,k) * e_k. This is H E for slot
    /// weights w.
    pub fn agg_rows(&mut self, w: TensorId, e: TensorId, pat: &Arc<Pattern>) -> Result<TensorId> {
        self.expect_slots("agg_rows", w, pat)?;
        let ve = self.value(e);
        if ve.rows() != pat.m() {
            return Err(Error::dim(
                "agg_rows",
                format!("features {:?} vs pattern m={}", ve.shape(), pat.m()),
            ));
        }
        let vw = self.value(w).as_slice();
        let p = ve.cols();
        let mut out = Mat::zeros(pat.n(), p);
        for i in 0..pat.n() {
            let orow = out.row_mut(i);
            for q in pat.row_range(i) {
                let wq = vw[q];
                for (o, &evv) in orow.iter_mut().zip(ve.row(pat.col_of(q))) {
                    *o += wq * evv;
                }
            }
        }
        let rg = self.needs(w) || self.needs(e);
        self.push("agg_rows", out, rg, Op::AggRows { w, e, pat: Arc::clone(pat) })
    }

    /// out_q = row[i(q)] + col[k(q)]: assembles per-pair attention logits
    /// from the two halves of a concatenation-style score.
    pub fn pair_logits(
        &mut self,
        row: TensorId,
        col: TensorId,
        pat: &Arc<Pattern>,
    ) -> Result<TensorId> {
        let (vr, vc) = (self.value(row), self.value(col));
        if vr.shape() != (pat.n(), 1) || vc.shape() != (pat.m(), 1) {
            return Err(Error::dim(
                "pair_logits",
                format!("{:?}/{:?} vs pattern {}x{}", vr.shape(), vc.shape(), pat.n(), pat.m()),
            ));
        }
        let r = vr.as_slice();
        let c = vc.as_slice();
        let mut data = vec![0.0; pat.nnz()];
        for i in 0..pat.n() {
            for q in pat.row_range(i) {
                data[q] = r[i] + c[pat.col_of(q)];
            }
        }
        let rg = self.needs(row) || self.needs(col);
        self.push(
            "pair_logits",
            Mat::from_vec(pat.nnz(), 1, data)?,
            rg,
            Op::PairLogits { row, col, pat: Arc::clone(pat) },
        )
    }

    /// Add a constant per-node (Side::Row) or per-hyperedge (Side::Col)
    /// value to each slot. The added vector is outside the gradient path.
    pub fn add_slot_const(
        &mut self,
        a: TensorId,
        vals: &Arc<Vec<f64>>,
        pat: &Arc<Pattern>,
        side: Side,
    ) -> Result<TensorId> {
        self.expect_slots("add_slot_const", a, pat)?;
        let expected = match side {
            Side::Row => pat.n(),
            Side::Col => pat.m(),
        };
        if vals.len() != expected {
            return Err(Error::dim(
                "add_slot_const",
                format!("{} values for side of size {expected}", vals.len()),
            ));
        }
        let va = self.value(a).as_slice();
        let mut data = vec![0.0; pat.nnz()];
        for i in 0..pat.n() {
            for q in pat.row_range(i) {
                let add = match side {
                    Side::Row => vals[i],
                    Side::Col => vals[pat.col_of(q)],
                };
                data[q] = va[q] + add;
            }
        }
        let rg = self.needs(a);
        self.push(
            "add_slot_const",
            Mat::from_vec(pat.nnz(), 1, data)?,
            rg,
            Op::AddSlotConst { a },
        )
    }

    /// Softmax within each pattern row (Axis::Rows) or column (Axis::Cols).
    /// Empty groups are an error; absent slots are exactly 0 by
    /// representation.
    pub fn pattern_softmax(&mut self, a: TensorId, pat: &Arc<Pattern>, axis: Axis) -> Result<TensorId> {
        self.expect_slots("pattern_softmax", a, pat)?;
        let va = self.value(a).as_slice();
        let mut data = vec![0.0; pat.nnz()];
        let groups = match axis {
            Axis::Rows => pat.n(),
            Axis::Cols => pat.m(),
        };
        for g in 0..groups {
            let slots: Vec<usize> = match axis {
                Axis::Rows => pat.row_range(g).collect(),
                Axis::Cols => pat.col_range(g).map(|p| pat.col_entry(p).1).collect(),
            };
            if slots.is_empty() {
                return Err(Error::DegenerateNeighborhood {
                    what: match axis {
                        Axis::Rows => "node",
                        Axis::Cols => "hyperedge",
                    },
                    index: g,
                });
            }
            let max = slots.iter().map(|&q| va[q]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &q in &slots {
                let e = (va[q] - max).exp();
                data[q] = e;
                total += e;
            }
            for &q in &slots {
                data[q] /= total;
            }
        }
        let rg = self.needs(a);
        self.push(
            "pattern_softmax",
            Mat::from_vec(pat.nnz(), 1, data)?,
            rg,
            Op::PatternSoftmax { a, pat: Arc::clone(pat), axis },
        )
    }

    // ---- backward ------------------------------------------------------

    /// Reverse sweep from a finite scalar loss. Each trainable leaf that the
    /// loss depends on ends up with an accumulated gradient. Calling this a
    /// second time on the same graph is an error.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        if !lv.scalar().is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(Mat::filled(1, 1, 1.0));

        for id in (0..=loss.0).rev() {
            let (head, tail) = self.nodes.split_at_mut(id);
            let node = &tail[0];
            if !node.requires_grad || node.grad.is_none() {
                continue;
            }
            let g = node.grad.as_ref().unwrap();
            let deltas = Self::op_backward(head, &node.op, &node.value, g)?;
            for (pid, delta) in deltas {
                let parent = &mut head[pid];
                match parent.grad.as_mut() {
                    Some(existing) => existing.axpy(1.0, &delta),
                    None => parent.grad = Some(delta),
                }
            }
        }

        // Leaves hold what training consumes; make their finiteness an error
        // here rather than a silent poisoning of the optimizer state.
        for node in &self.nodes {
            if let (Op::Leaf, Some(grad)) = (&node.op, &node.grad) {
                if !grad.all_finite() {
                    return Err(Error::NonFinite { op: "backward/grad" });
                }
            }
        }
        Ok(())
    }

    fn op_backward(
        head: &[Node],
        op: &Op,
        value: &Mat,
        g: &Mat,
    ) -> Result<Vec<(usize, Mat)>> {
        let needs = |id: &TensorId| head[id.0].requires_grad;
        let val = |id: &TensorId| &head[id.0].value;
        let mut out: Vec<(usize, Mat)> = Vec::new();

        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                if needs(a) {
                    out.push((a.0, Mat::matmul(g, false, val(b), true)?));
                }
                if needs(b) {
                    out.push((b.0, Mat::matmul(val(a), true, g, false)?));
                }
            }
            Op::Add { a, b } => {
                if needs(a) {
                    out.push((a.0, g.clone()));
                }
                if needs(b) {
                    out.push((b.0, g.clone()));
                }
            }
            Op::Sub { a, b } => {
                if needs(a) {
                    out.push((a.0, g.clone()));
                }
                if needs(b) {
                    let mut d = g.clone();
                    for v in d.as_mut_slice() {
                        *v = -*v;
                    }
                    out.push((b.0, d));
                }
            }
            Op::Mul { a, b } => {
                if needs(a) {
                    let mut d = g.clone();
                    for (dv, bv) in d.as_mut_slice().iter_mut().zip(val(b).as_slice()) {
                        *dv *= bv;
                    }
                    out.push((a.0, d));
                }
                if needs(b) {
                    let mut d = g.clone();
                    for (dv, av) in d.as_mut_slice().iter_mut().zip(val(a).as_slice()) {
                        *dv *= av;
                    }
                    out.push((b.0, d));
                }
            }
            Op::Affine { a, mul } => {
                if needs(a) {
                    let mut d = g.clone();
                    for v in d.as_mut_slice() {
                        *v *= mul;
                    }
                    out.push((a.0, d));
                }
            }
            Op::LeakyRelu { a, slope } => {
                if needs(a) {
                    let mut d = g.clone();
                    for (dv, &xv) in d.as_mut_slice().iter_mut().zip(val(a).as_slice()) {
                        if xv < 0.0 {
                            *dv *= slope;
                        }
                    }
                    out.push((a.0, d));
                }
            }
            Op::Elu { a } => {
                if needs(a) {
                    let mut d = g.clone();
                    for (dv, &xv) in d.as_mut_slice().iter_mut().zip(val(a).as_slice()) {
                        if xv <= 0.0 {
                            *dv *= xv.exp();
                        }
                    }
                    out.push((a.0, d));
                }
            }
            Op::Exp { a } => {
                if needs(a) {
                    let mut d = g.clone();
                    for (dv, &yv) in d.as_mut_slice().iter_mut().zip(value.as_slice()) {
                        *dv *= yv;
                    }
                    out.push((a.0, d));
                }
            }
            Op::LogGuard { a } => {
                if needs(a) {
                    let mut d = g.clone();
                    for (dv, &xv) in d.as_mut_slice().iter_mut().zip(val(a).as_slice()) {
                        *dv = if xv > EPS { *dv / xv } else { 0.0 };
                    }
                    out.push((a.0, d));
                }
            }
            Op::Square { a } => {
                if needs(a) {
                    let mut d = g.clone();
                    for (dv, &xv) in d.as_mut_slice().iter_mut().zip(val(a).as_slice()) {
                        *dv *= 2.0 * xv;
                    }
                    out.push((a.0, d));
                }
            }
            Op::MaskedSoftmax { a, mask, axis } => {
                if needs(a) {
                    let (rows, cols) = value.shape();
                    let mut d = Mat::zeros(rows, cols);
                    let slice_count = match axis {
                        Axis::Rows => rows,
                        Axis::Cols => cols,
                    };
                    for s in 0..slice_count {
                        let cells: Vec<(usize, usize)> = match axis {
                            Axis::Rows => (0..cols).map(|c| (s, c)).collect(),
                            Axis::Cols => (0..rows).map(|r| (r, s)).collect(),
                        };
                        let mut inner = 0.0;
                        for &(r, c) in &cells {
                            if mask.get(r, c) {
                                inner += g.get(r, c) * value.get(r, c);
                            }
                        }
                        for &(r, c) in &cells {
                            if mask.get(r, c) {
                                let y = value.get(r, c);
                                d.set(r, c, y * (g.get(r, c) - inner));
                            }
                        }
                    }
                    out.push((a.0, d));
                }
            }
            Op::Sum { a } => {
                if needs(a) {
                    let va = val(a);
                    out.push((a.0, Mat::filled(va.rows(), va.cols(), g.scalar())));
                }
            }
            Op::Mean { a } => {
                if needs(a) {
                    let va = val(a);
                    let scale = g.scalar() / va.numel() as f64;
                    out.push((a.0, Mat::filled(va.rows(), va.cols(), scale)));
                }
            }
            Op::FrobSq { a } => {
                if needs(a) {
                    let mut d = val(a).clone();
                    let s = 2.0 * g.scalar();
                    for v in d.as_mut_slice() {
                        *v *= s;
                    }
                    out.push((a.0, d));
                }
            }
            Op::Trace { a } => {
                if needs(a) {
                    let va = val(a);
                    let mut d = Mat::zeros(va.rows(), va.cols());
                    for i in 0..va.rows() {
                        d.set(i, i, g.scalar());
                    }
                    out.push((a.0, d));
                }
            }
            Op::RowL2Normalize { a } => {
                if needs(a) {
                    let va = val(a);
                    let mut d = Mat::zeros(va.rows(), va.cols());
                    for r in 0..va.rows() {
                        let norm = dot(va.row(r), va.row(r)).sqrt();
                        if norm < EPS {
                            d.row_mut(r).copy_from_slice(g.row(r));
                        } else {
                            let y = value.row(r);
                            let gr = g.row(r);
                            let inner = dot(gr, y);
                            for ((dv, &gv), &yv) in
                                d.row_mut(r).iter_mut().zip(gr).zip(y)
                            {
                                *dv = (gv - yv * inner) / norm;
                            }
                        }
                    }
                    out.push((a.0, d));
                }
            }
            Op::ConcatCols { parts } => {
                let mut base = 0;
                for p in parts {
                    let vp = val(p);
                    if needs(p) {
                        let mut d = Mat::zeros(vp.rows(), vp.cols());
                        for r in 0..vp.rows() {
                            d.row_mut(r)
                                .copy_from_slice(&g.row(r)[base..base + vp.cols()]);
                        }
                        out.push((p.0, d));
                    }
                    base += vp.cols();
                }
            }
            Op::SliceRows { a, start } => {
                if needs(a) {
                    let va = val(a);
                    let mut d = Mat::zeros(va.rows(), va.cols());
                    let cols = va.cols();
                    d.as_mut_slice()[start * cols..start * cols + g.numel()]
                        .copy_from_slice(g.as_slice());
                    out.push((a.0, d));
                }
            }
            Op::PairDot { x, pat } => {
                if needs(x) {
                    let vx = val(x);
                    let gs = g.as_slice();
                    let mut d = Mat::zeros(vx.rows(), vx.cols());
                    // d x_i += g_q * x_k for slots in row i; d x_k += g_q * x_i
                    // for slots in column k. Row/column grouping keeps writes
                    // disjoint and ordered.
                    for i in 0..pat.n() {
                        for q in pat.row_range(i) {
                            let k = pat.col_of(q);
                            let gq = gs[q];
                            let xk = vx.row(k);
                            let di = d.row_mut(i);
                            for (dv, &xv) in di.iter_mut().zip(xk) {
                                *dv += gq * xv;
                            }
                        }
                    }
                    for k in 0..pat.m() {
                        for cp in pat.col_range(k) {
                            let (i, q) = pat.col_entry(cp);
                            let gq = gs[q];
                            let xi_copy: Vec<f64> = vx.row(i).to_vec();
                            let dk = d.row_mut(k);
                            for (dv, &xv) in dk.iter_mut().zip(&xi_copy) {
                                *dv += gq * xv;
                            }
                        }
                    }
                    out.push((x.0, d));
                }
            }
            Op::RowMinMax { a, pat } => {
                if needs(a) {
                    let va = val(a).as_slice();
                    let gs = g.as_slice();
                    let ys = value.as_slice();
                    let mut d = Mat::zeros(pat.nnz(), 1);
                    let ds = d.as_mut_slice();
                    for i in 0..pat.n() {
                        let range = pat.row_range(i);
                        if range.is_empty() {
                            continue;
                        }
                        let mut lo = f64::INFINITY;
                        let mut hi = f64::NEG_INFINITY;
                        let mut qmin = range.start;
                        let mut qmax = range.start;
                        for q in range.clone() {
                            if va[q] < lo {
                                lo = va[q];
                                qmin = q;
                            }
                            if va[q] > hi {
                                hi = va[q];
                                qmax = q;
                            }
                        }
                        let span = hi - lo;
                        if span <= 0.0 {
                            continue; // constant row maps to zeros: no gradient
                        }
                        let mut gsum = 0.0;
                        let mut gysum = 0.0;
                        for q in range.clone() {
                            gsum += gs[q];
                            gysum += gs[q] * ys[q];
                        }
                        for q in range {
                            ds[q] += gs[q] / span;
                        }
                        ds[qmin] += (gysum - gsum) / span;
                        ds[qmax] -= gysum / span;
                    }
                    out.push((a.0, d));
                }
            }
            Op::SetDiag { a, pat } => {
                if needs(a) {
                    let mut d = g.clone();
                    for &q in pat.diag_slots() {
                        d.as_mut_slice()[q as usize] = 0.0;
                    }
                    out.push((a.0, d));
                }
            }
            Op::Threshold { a, delta } => {
                if needs(a) {
                    let mut d = g.clone();
                    for (dv, &xv) in d.as_mut_slice().iter_mut().zip(val(a).as_slice()) {
                        if xv < *delta {
                            *dv = 0.0;
                        }
                    }
                    out.push((a.0, d));
                }
            }
            Op::Gather { a, map } => {
                if needs(a) {
                    let va = val(a);
                    let mut d = Mat::zeros(va.rows(), va.cols());
                    let ds = d.as_mut_slice();
                    for (j, &q) in map.iter().enumerate() {
                        ds[q as usize] += g.as_slice()[j];
                    }
                    out.push((a.0, d));
                }
            }
            Op::PatternRowSum { a, pat } => {
                if needs(a) {
                    let gs = g.as_slice();
                    let mut d = Mat::zeros(pat.nnz(), 1);
                    let ds = d.as_mut_slice();
                    for i in 0..pat.n() {
                        for q in pat.row_range(i) {
                            ds[q] = gs[i];
                        }
                    }
                    out.push((a.0, d));
                }
            }
            Op::PatternColSum { a, pat } => {
                if needs(a) {
                    let gs = g.as_slice();
                    let mut d = Mat::zeros(pat.nnz(), 1);
                    let ds = d.as_mut_slice();
                    for k in 0..pat.m() {
                        for cp in pat.col_range(k) {
                            let (_, q) = pat.col_entry(cp);
                            ds[q] = gs[k];
                        }
                    }
                    out.push((a.0, d));
                }
            }
            Op::ElemPow { a, exponent } => {
                if needs(a) {
                    let mut d = g.clone();
                    for (dv, &xv) in d.as_mut_slice().iter_mut().zip(val(a).as_slice()) {
                        *dv *= exponent * xv.powf(exponent - 1.0);
                    }
                    out.push((a.0, d));
                }
            }
            Op::PairScale { v, row, col, pat } => {
                let gs = g.as_slice();
                let vv = val(v).as_slice();
                let r = val(row).as_slice();
                let c = val(col).as_slice();
                if needs(v) {
                    let mut d = Mat::zeros(pat.nnz(), 1);
                    let ds = d.as_mut_slice();
                    for i in 0..pat.n() {
                        for q in pat.row_range(i) {
                            ds[q] = gs[q] * r[i] * c[pat.col_of(q)];
                        }
                    }
                    out.push((v.0, d));
                }
                if needs(row) {
                    let mut d = Mat::zeros(pat.n(), 1);
                    let ds = d.as_mut_slice();
                    for i in 0..pat.n() {
                        for q in pat.row_range(i) {
                            ds[i] += gs[q] * vv[q] * c[pat.col_of(q)];
                        }
                    }
                    out.push((row.0, d));
                }
                if needs(col) {
                    let mut d = Mat::zeros(pat.m(), 1);
                    let ds = d.as_mut_slice();
                    for k in 0..pat.m() {
                        for cp in pat.col_range(k) {
                            let (i, q) = pat.col_entry(cp);
                            ds[k] += gs[q] * vv[q] * r[i];
                        }
                    }
                    out.push((col.0, d));
                }
            }
            Op::AggCols { w, x, pat } => {
                let vw = val(w).as_slice();
                let vx = val(x);
                if needs(w) {
                    let mut d = Mat::zeros(pat.nnz(), 1);
                    let ds = d.as_mut_slice();
                    for k in 0..pat.m() {
                        let gk = g.row(k);
                        for cp in pat.col_range(k) {
                            let (i, q) = pat.col_entry(cp);
                            ds[q] = dot(gk, vx.row(i));
                        }
                    }
                    out.push((w.0, d));
                }
                if needs(x) {
                    let mut d = Mat::zeros(vx.rows(), vx.cols());
                    for i in 0..pat.n() {
                        let di = d.row_mut(i);
                        for q in pat.row_range(i) {
                            let wq = vw[q];
                            for (dv, &gv) in di.iter_mut().zip(g.row(pat.col_of(q))) {
                                *dv += wq * gv;
                            }
                        }
                    }
                    out.push((x.0, d));
                }
            }
            Op::AggRows { w, e, pat } => {
                let vw = val(w).as_slice();
                let ve = val(e);
                if needs(w) {
                    let mut d = Mat::zeros(pat.nnz(), 1);
                    let ds = d.as_mut_slice();
                    for i in 0..pat.n() {
                        let gi = g.row(i);
                        for q in pat.row_range(i) {
                            ds[q] = dot(gi, ve.row(pat.col_of(q)));
                        }
                    }
                    out.push((w.0, d));
                }
                if needs(e) {
                    let mut d = Mat::zeros(ve.rows(), ve.cols());
                    for k in 0..pat.m() {
                        let dk = d.row_mut(k);
                        for cp in pat.col_range(k) {
                            let (i, q) = pat.col_entry(cp);
                            let wq = vw[q];
                            for (dv, &gv) in dk.iter_mut().zip(g.row(i)) {
                                *dv += wq * gv;
                            }
                        }
                    }
                    out.push((e.0, d));
                }
            }
            Op::PairLogits { row, col, pat } => {
                let gs = g.as_slice();
                if needs(row) {
                    let mut d = Mat::zeros(pat.n(), 1);
                    let ds = d.as_mut_slice();
                    for i in 0..pat.n() {
                        for q in pat.row_range(i) {
                            ds[i] += gs[q];
                        }
                    }
                    out.push((row.0, d));
                }
                if needs(col) {
                    let mut d = Mat::zeros(pat.m(), 1);
                    let ds = d.as_mut_slice();
                    for k in 0..pat.m() {
                        for cp in pat.col_range(k) {
                            let (_, q) = pat.col_entry(cp);
                            ds[k] += gs[q];
                        }
                    }
                    out.push((col.0, d));
                }
            }
            Op::AddSlotConst { a, .. } => {
                if needs(a) {
                    out.push((a.0, g.clone()));
                }
            }
            Op::PatternSoftmax { a, pat, axis } => {
                if needs(a) {
                    let gs = g.as_slice();
                    let ys = value.as_slice();
                    let mut d = Mat::zeros(pat.nnz(), 1);
                    let ds = d.as_mut_slice();
                    let groups = match axis {
                        Axis::Rows => pat.n(),
                        Axis::Cols => pat.m(),
                    };
                    for grp in 0..groups {
                        let slots: Vec<usize> = match axis {
                            Axis::Rows => pat.row_range(grp).collect(),
                            Axis::Cols => pat.col_range(grp).map(|p| pat.col_entry(p).1).collect(),
                        };
                        let mut inner = 0.0;
                        for &q in &slots {
                            inner += gs[q] * ys[q];
                        }
                        for &q in &slots {
                            ds[q] = ys[q] * (gs[q] - inner);
                        }
                    }
                    out.push((a.0, d));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(rows)
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let a = g.variable(mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let eye = g.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let c = g.matmul(a, eye).unwrap();
        assert_eq!(g.value(c), &mat(&[&[1.0, 2.0], &[3.0, 4.0]]));

        let u = g.constant(mat(&[&[1.0, 2.0]])).unwrap();
        let v = g.constant(mat(&[&[3.0], &[4.0]])).unwrap();
        let d = g.matmul(u, v).unwrap();
        assert_eq!(g.scalar(d), 11.0);
    }

    #[test]
    fn matmul_gradient_of_sum() {
        let mut g = Graph::new();
        let a = g.variable(mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let b = g.constant(mat(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        let c = g.matmul(a, b).unwrap();
        let loss = g.sum(c).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &mat(&[&[2.0, 2.0], &[2.0, 2.0]]));
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut g = Graph::new();
        let a = g.constant(Mat::zeros(2, 3)).unwrap();
        let b = g.constant(Mat::zeros(2, 3)).unwrap();
        assert!(matches!(
            g.matmul(a, b),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn leaky_relu_and_elu_values() {
        let mut g = Graph::new();
        let x = g.variable(mat(&[&[-1.0, 2.0]])).unwrap();
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(y), &mat(&[&[-0.2, 2.0]]));

        let z = g.variable(mat(&[&[0.0]])).unwrap();
        let e = g.elu(z).unwrap();
        assert_eq!(g.scalar(e), 0.0);
    }

    #[test]
    fn elu_gradient_at_negative_one() {
        let mut g = Graph::new();
        let x = g.variable(mat(&[&[-1.0]])).unwrap();
        let y = g.elu(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let got = g.grad(x).unwrap().scalar();
        assert!((got - (-1.0f64).exp()).abs() < 1e-12, "{got}");
    }

    #[test]
    fn masked_softmax_examples() {
        let mut g = Graph::new();
        let l = g.variable(mat(&[&[0.0, 0.0]])).unwrap();
        let m = Arc::new(Mask::all(1, 2));
        let y = g.masked_softmax(l, &m, Axis::Rows).unwrap();
        assert_eq!(g.value(y), &mat(&[&[0.5, 0.5]]));

        let l2 = g.variable(mat(&[&[1.0, 1000.0]])).unwrap();
        let y2 = g.masked_softmax(l2, &m, Axis::Rows).unwrap();
        let row = g.value(y2);
        assert!(row.get(0, 0) < 1e-300 && (row.get(0, 1) - 1.0).abs() < 1e-12);

        let l3 = g.variable(mat(&[&[1.0, 2.0, 3.0]])).unwrap();
        let m3 = Arc::new(Mask::new(1, 3, vec![true, false, true]).unwrap());
        let y3 = g.masked_softmax(l3, &m3, Axis::Rows).unwrap();
        let e2 = std::f64::consts::E * std::f64::consts::E;
        let want = [1.0 / (1.0 + e2), 0.0, e2 / (1.0 + e2)];
        for (j, w) in want.iter().enumerate() {
            assert!((g.value(y3).get(0, j) - w).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_fully_masked_slice_errors() {
        let mut g = Graph::new();
        let l = g.variable(mat(&[&[1.0, 2.0]])).unwrap();
        let m = Arc::new(Mask::new(1, 2, vec![false, false]).unwrap());
        assert!(matches!(
            g.masked_softmax(l, &m, Axis::Rows),
            Err(Error::DegenerateNeighborhood { .. })
        ));
    }

    #[test]
    fn reduction_examples() {
        let mut g = Graph::new();
        let a = g.variable(mat(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap();
        let f = g.frobenius_norm_sq(a).unwrap();
        assert_eq!(g.scalar(f), 10.0);

        let t = g.variable(mat(&[&[3.0, 9.0], &[7.0, 5.0]])).unwrap();
        let tr = g.trace(t).unwrap();
        assert_eq!(g.scalar(tr), 8.0);

        let r = g.variable(mat(&[&[3.0, 4.0]])).unwrap();
        let n = g.row_l2_normalize(r).unwrap();
        assert_eq!(g.value(n), &mat(&[&[0.6, 0.8]]));

        let rect = g.constant(Mat::zeros(2, 3)).unwrap();
        assert!(g.trace(rect).is_err());
    }

    #[test]
    fn row_l2_normalize_zero_row_unchanged() {
        let mut g = Graph::new();
        let r = g.variable(mat(&[&[0.0, 0.0], &[3.0, 4.0]])).unwrap();
        let n = g.row_l2_normalize(r).unwrap();
        assert_eq!(g.value(n).row(0), &[0.0, 0.0]);
        assert_eq!(g.value(n).row(1), &[0.6, 0.8]);
    }

    #[test]
    fn backward_linear_and_frobenius() {
        let mut g = Graph::new();
        let x = g.variable(mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &Mat::filled(2, 2, 1.0));

        let mut g2 = Graph::new();
        let x2 = g2.variable(mat(&[&[1.0, 2.0]])).unwrap();
        let f = g2.frobenius_norm_sq(x2).unwrap();
        g2.backward(f).unwrap();
        assert_eq!(g2.grad(x2).unwrap(), &mat(&[&[2.0, 4.0]]));
    }

    #[test]
    fn backward_twice_is_error() {
        let mut g = Graph::new();
        let x = g.variable(mat(&[&[1.0]])).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::BackwardTwice)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.variable(mat(&[&[1.0, 2.0]])).unwrap();
        assert!(matches!(
            g.backward(x),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn shared_subexpression_gradients_accumulate() {
        // loss = sum(x*x) with x used twice vs. an algebraic duplicate.
        let mut g = Graph::new();
        let x = g.variable(mat(&[&[2.0, -3.0]])).unwrap();
        let prod = g.mul(x, x).unwrap();
        let loss = g.sum(prod).unwrap();
        g.backward(loss).unwrap();
        // d/dx sum(x^2) = 2x
        assert_eq!(g.grad(x).unwrap(), &mat(&[&[4.0, -6.0]]));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.variable(mat(&[&[800.0]])).unwrap();
        assert!(matches!(g.exp(x), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn threshold_examples() {
        let mut g = Graph::new();
        let s = g
            .variable(mat(&[&[1.0, 0.3], &[0.3, 1.0]]))
            .unwrap();
        let t = g.threshold(s, 0.5).unwrap();
        assert_eq!(g.value(t), &mat(&[&[1.0, 0.0], &[0.0, 1.0]]));

        let mut g2 = Graph::new();
        let s2 = g2.variable(mat(&[&[0.4, 0.9]])).unwrap();
        let t0 = g2.threshold(s2, 0.0).unwrap();
        assert_eq!(g2.value(t0), g2.value(s2));
    }

    #[test]
    fn threshold_gradient_is_straight_through_on_kept() {
        let mut g = Graph::new();
        let s = g.variable(mat(&[&[0.8, 0.2]])).unwrap();
        let t = g.threshold(s, 0.5).unwrap();
        let sq = g.square(t).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(s).unwrap(), &mat(&[&[1.6, 0.0]]));
    }

    #[test]
    fn log_guard_clamps_small_values() {
        let mut g = Graph::new();
        let x = g.variable(mat(&[&[0.0, 1.0]])).unwrap();
        let y = g.log_guard(x).unwrap();
        assert_eq!(g.value(y).get(0, 0), EPS.ln());
        assert_eq!(g.value(y).get(0, 1), 0.0);
    }

    #[test]
    fn pattern_softmax_columns_sum_to_one() {
        let mut g = Graph::new();
        let pat = Pattern::from_pairs(3, 2, vec![(0, 0), (1, 0), (2, 0), (1, 1)]);
        let logits = g
            .variable(Mat::from_vec(4, 1, vec![0.1, -0.4, 2.0, 5.0]).unwrap())
            .unwrap();
        let y = g.pattern_softmax(logits, &pat, Axis::Cols).unwrap();
        // canonical slot order: (0,0) (1,0) (1,1) (2,0)
        let ys = g.value(y).as_slice();
        let col0: f64 = ys[0] + ys[1] + ys[3];
        assert!((col0 - 1.0).abs() < 1e-12);
        assert!((ys[2] - 1.0).abs() < 1e-12); // singleton group
    }

    #[test]
    fn pattern_softmax_empty_group_errors() {
        let mut g = Graph::new();
        let pat = Pattern::from_pairs(2, 2, vec![(0, 0), (1, 0)]);
        let logits = g
            .variable(Mat::from_vec(2, 1, vec![0.0, 0.0]).unwrap())
            .unwrap();
        assert!(matches!(
            g.pattern_softmax(logits, &pat, Axis::Cols),
            Err(Error::DegenerateNeighborhood { .. })
        ));
    }

    #[test]
    fn pair_ops_against_dense() {
        // Small dense cross-check of pair_dot / agg_cols / agg_rows.
        let mut g = Graph::new();
        let pat = Pattern::dense(3);
        let x = g
            .variable(mat(&[&[1.0, 0.0], &[0.5, 0.5], &[0.0, 2.0]]))
            .unwrap();
        let s = g.pair_dot(x, &pat).unwrap();
        // slot (1,2): <[0.5,0.5],[0,2]> = 1.0
        assert_eq!(g.value(s).as_slice()[1 * 3 + 2], 1.0);

        let w = g
            .constant(Mat::from_vec(9, 1, vec![1.0; 9]).unwrap())
            .unwrap();
        let e = g.agg_cols(w, x, &pat).unwrap();
        // each hyperedge sums all rows
        assert_eq!(g.value(e).row(0), &[1.5, 2.5]);
        let back = g.agg_rows(w, e, &pat).unwrap();
        assert_eq!(g.value(back).row(1), &[4.5, 7.5]);
    }

    #[test]
    fn gather_scatter_roundtrip_gradient() {
        let mut g = Graph::new();
        let a = g
            .variable(Mat::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        let map = Arc::new(vec![2u32, 0u32, 2u32]);
        let picked = g.gather(a, &map).unwrap();
        assert_eq!(g.value(picked).as_slice(), &[3.0, 1.0, 3.0]);
        let s = g.sum(picked).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().as_slice(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let pat = Pattern::from_pairs(3, 1, vec![(0, 0), (1, 0), (2, 0)]);
        let mut g = Graph::new();
        let l = g
            .variable(Mat::from_vec(3, 1, vec![0.3, -1.2, 2.0]).unwrap())
            .unwrap();
        let y1 = g.pattern_softmax(l, &pat, Axis::Cols).unwrap();
        let shifted = g.affine(l, 1.0, 7.5).unwrap();
        let y2 = g.pattern_softmax(shifted, &pat, Axis::Cols).unwrap();
        for (a, b) in g.value(y1).as_slice().iter().zip(g.value(y2).as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
