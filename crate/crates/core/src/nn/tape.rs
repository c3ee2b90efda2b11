//! Reverse-mode differentiation over dense matrices.
//!
//! Every value is an `n x m` matrix; vectors are `1 x d` rows unless noted.
//! A [`Tape`] records operations as they are evaluated and
//! [`Tape::backward`] walks them in reverse.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftmaxAxis {
    /// Normalize each column (over rows).
    Rows,
    /// Normalize each row (over columns).
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Mat),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    MeanRows(Var),
    SumAll(Var),
    Softmax(Var, SoftmaxAxis),
    SliceRows(Var, usize, usize),
    ConcatRows(Vec<Var>),
    BlockLeftMul(Mat, Var),
    SegmentSoftmax(Var, usize),
    SegmentWeightedSum(Var, Var, usize),
    SegmentMean(Var, usize),
    SegmentCosine(Var, Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

fn check_shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize), ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { op, lhs, rhs })
    }
}

fn shape(m: &Mat) -> (usize, usize) {
    m.dim()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn dim(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Constant input; receives a gradient but is not a parameter.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf bound to parameter slot `id`.
    pub fn param(&mut self, id: usize, value: Mat) -> Var {
        self.push(value, Op::Param(id))
    }

    /// Index of the first node holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.nodes
            .iter()
            .position(|n| n.value.iter().any(|x| !x.is_finite()))
            .map(Var)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_shape("matmul", shape(va), shape(vb), va.ncols() == vb.nrows())?;
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_shape("matmul_nt", shape(va), shape(vb), va.ncols() == vb.ncols())?;
        let out = va.dot(&vb.t());
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_shape("add", shape(va), shape(vb), va.dim() == vb.dim())?;
        let out = va + vb;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `a + 1·row`, broadcasting a `1 x d` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(row));
        check_shape("add_row", shape(va), shape(vb), vb.nrows() == 1 && va.ncols() == vb.ncols())?;
        let out = va + vb;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_shape("sub", shape(va), shape(vb), va.dim() == vb.dim())?;
        let out = va - vb;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Entry-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_shape("mul", shape(va), shape(vb), va.dim() == vb.dim())?;
        let out = va * vb;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Entry-wise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Result<Var> {
        let va = self.value(a);
        check_shape("mul_const", shape(va), shape(&c), va.dim() == c.dim())?;
        let out = va * &c;
        Ok(self.push(out, Op::MulConst(a, c)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) + k;
        self.push(out, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(super::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(out, Op::Softplus(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::EmptyInput("concat_cols"));
        };
        let rows = self.value(first).nrows();
        for &p in parts {
            let d = self.dim(p);
            check_shape("concat_cols", (rows, 0), d, d.0 == rows)?;
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let d = self.dim(a);
        check_shape("slice_cols", d, (start, end), start < end && end <= d.1)?;
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        Ok(self.push(out, Op::SliceCols(a, start, end)))
    }

    /// Column means, `n x d -> 1 x d`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.nrows() == 0 {
            return Err(Error::EmptyInput("mean_rows"));
        }
        let out = va.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        Ok(self.push(out, Op::MeanRows(a)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    pub fn softmax(&mut self, a: Var, axis: SoftmaxAxis) -> Var {
        let mut out = self.value(a).clone();
        let lanes = match axis {
            SoftmaxAxis::Rows => out.columns_mut().into_iter().collect::<Vec<_>>(),
            SoftmaxAxis::Cols => out.rows_mut().into_iter().collect::<Vec<_>>(),
        };
        for mut lane in lanes {
            let max = lane.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            lane.mapv_inplace(|x| (x - max).exp());
            let total = lane.sum();
            lane.mapv_inplace(|x| x / total);
        }
        self.push(out, Op::Softmax(a, axis))
    }

    /// Cosine similarity of each row of `u` (`n x d`) with the row `v`
    /// (`1 x d`), as an `n x 1` column. Zero-norm pairs give 0.
    pub fn cosine_rows(&mut self, u: Var, v: Var) -> Result<Var> {
        let n = self.dim(u).0;
        self.segment_cosine(u, v, n.max(1))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let d = self.dim(a);
        check_shape("slice_rows", d, (start, end), start < end && end <= d.0)?;
        let out = self.value(a).slice(s![start..end, ..]).to_owned();
        Ok(self.push(out, Op::SliceRows(a, start, end)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::EmptyInput("concat_rows"));
        };
        let cols = self.dim(first).1;
        for &p in parts {
            let d = self.dim(p);
            check_shape("concat_rows", (0, cols), d, d.1 == cols)?;
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Apply the constant `l` (`n x n`) to every consecutive block of `n`
    /// rows of `x`. No gradient flows into `l`.
    pub fn block_left_mul(&mut self, l: Mat, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let n = l.nrows();
        check_shape(
            "block_left_mul",
            l.dim(),
            vx.dim(),
            l.is_square() && n > 0 && vx.nrows() % n == 0,
        )?;
        let mut out = Array2::zeros(vx.dim());
        for (block, mut dst) in vx
            .axis_chunks_iter(Axis(0), n)
            .zip(out.axis_chunks_iter_mut(Axis(0), n))
        {
            ndarray::linalg::general_mat_mul(1.0, &l, &block, 0.0, &mut dst);
        }
        Ok(self.push(out, Op::BlockLeftMul(l, x)))
    }

    fn segments(&self, op: &'static str, a: Var, seg: usize) -> Result<usize> {
        let d = self.dim(a);
        check_shape(op, d, (seg, 0), seg > 0 && d.0 % seg == 0)?;
        Ok(d.0 / seg)
    }

    /// Softmax of a `K*seg x 1` column within each block of `seg` rows.
    pub fn segment_softmax(&mut self, b: Var, seg: usize) -> Result<Var> {
        self.segments("segment_softmax", b, seg)?;
        let mut out = self.value(b).clone();
        check_shape("segment_softmax", out.dim(), (seg, 1), out.ncols() == 1)?;
        for mut block in out.axis_chunks_iter_mut(Axis(0), seg) {
            let max = block.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            block.mapv_inplace(|x| (x - max).exp());
            let total = block.sum();
            block.mapv_inplace(|x| x / total);
        }
        Ok(self.push(out, Op::SegmentSoftmax(b, seg)))
    }

    /// `out[k] = sum_i c[k*seg + i] * u[k*seg + i]`, giving `K x d`.
    pub fn segment_weighted_sum(&mut self, c: Var, u: Var, seg: usize) -> Result<Var> {
        let k = self.segments("segment_weighted_sum", u, seg)?;
        let (vc, vu) = (self.value(c), self.value(u));
        check_shape("segment_weighted_sum", vc.dim(), vu.dim(), vc.dim() == (vu.nrows(), 1))?;
        let mut out = Array2::zeros((k, vu.ncols()));
        for ((cb, ub), mut row) in vc
            .axis_chunks_iter(Axis(0), seg)
            .zip(vu.axis_chunks_iter(Axis(0), seg))
            .zip(out.rows_mut())
        {
            row.assign(&cb.t().dot(&ub).row(0));
        }
        Ok(self.push(out, Op::SegmentWeightedSum(c, u, seg)))
    }

    /// Mean of each block of `seg` rows, giving `K x d`.
    pub fn segment_mean(&mut self, u: Var, seg: usize) -> Result<Var> {
        let k = self.segments("segment_mean", u, seg)?;
        let vu = self.value(u);
        let mut out = Array2::zeros((k, vu.ncols()));
        for (ub, mut row) in vu.axis_chunks_iter(Axis(0), seg).zip(out.rows_mut()) {
            row.assign(&ub.mean_axis(Axis(0)).expect("seg > 0"));
        }
        Ok(self.push(out, Op::SegmentMean(u, seg)))
    }

    /// Cosine of each row of block `k` of `u` with row `k` of `v`, as a
    /// `K*seg x 1` column. Zero-norm pairs give 0.
    pub fn segment_cosine(&mut self, u: Var, v: Var, seg: usize) -> Result<Var> {
        let k = self.segments("segment_cosine", u, seg)?;
        let (vu, vv) = (self.value(u), self.value(v));
        check_shape("segment_cosine", vu.dim(), vv.dim(), vv.dim() == (k, vu.ncols()))?;
        let mut out = Array2::zeros((vu.nrows(), 1));
        for (i, row) in vu.rows().into_iter().enumerate() {
            let v_row = vv.row(i / seg);
            let v_norm = v_row.dot(&v_row).sqrt();
            let u_norm = row.dot(&row).sqrt();
            if u_norm > 0.0 && v_norm > 0.0 {
                out[[i, 0]] = row.dot(&v_row) / (u_norm * v_norm);
            }
        }
        Ok(self.push(out, Op::SegmentCosine(u, v, seg)))
    }

    /// Reverse pass from `output`, seeded with `seed` (same shape as `output`).
    pub fn backward_with(&self, output: Var, seed: Mat) -> Gradients {
        assert_eq!(seed.dim(), self.dim(output), "seed shape must match output");
        let mut grads: Vec<Option<Mat>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        self.backward_with(output, Array2::ones((1, 1)))
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Mat>], v: Var) -> &'g mut Mat {
        let dim = self.dim(v);
        grads[v.0].get_or_insert_with(|| Array2::zeros(dim))
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        fn add_view(grads: &mut [Option<Mat>], v: Var, delta: ArrayView2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta.to_owned()),
            }
        }
        fn add_owned(grads: &mut [Option<Mat>], v: Var, delta: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        }
        fn add_product(grads: &mut [Option<Mat>], v: Var, a: ArrayView2<f64>, b: ArrayView2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => general_mat_mul(1.0, &a, &b, 1.0, existing),
                slot @ None => *slot = Some(a.dot(&b)),
            }
        }
        fn add_map(grads: &mut [Option<Mat>], v: Var, g: &Mat, x: &Mat, f: impl Fn(f64, f64) -> f64) {
            match &mut grads[v.0] {
                Some(existing) => Zip::from(existing).and(g).and(x).for_each(|d, &g, &x| *d += f(g, x)),
                slot @ None => *slot = Some(Zip::from(g).and(x).map_collect(|&g, &x| f(g, x))),
            }
        }
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                add_product(grads, *a, g.view(), vb.t());
                add_product(grads, *b, va.t(), g.view());
            }
            Op::MatMulNt(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                add_product(grads, *a, g.view(), vb.view());
                add_product(grads, *b, g.t(), va.view());
            }
            Op::Transpose(a) => add_view(grads, *a, g.t()),
            Op::Add(a, b) => {
                add_view(grads, *a, g.view());
                add_view(grads, *b, g.view());
            }
            Op::AddRow(a, row) => {
                add_view(grads, *a, g.view());
                add_owned(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                add_view(grads, *a, g.view());
                self.slot(grads, *b).scaled_add(-1.0, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                add_map(grads, *a, g, vb, |g, y| g * y);
                add_map(grads, *b, g, va, |g, x| g * x);
            }
            Op::MulConst(a, c) => {
                add_map(grads, *a, g, c, |g, c| g * c);
            }
            Op::Scale(a, k) => self.slot(grads, *a).scaled_add(*k, g),
            Op::AddScalar(a) => add_view(grads, *a, g.view()),
            Op::Relu(a) => {
                add_map(grads, *a, g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
            }
            Op::Sigmoid(a) => {
                add_map(grads, *a, g, &node.value, |g, y| g * y * (1.0 - y));
            }
            Op::Tanh(a) => {
                add_map(grads, *a, g, &node.value, |g, y| g * (1.0 - y * y));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let width = self.dim(p).1;
                    add_view(grads, p, g.slice(s![.., start..start + width]));
                    start += width;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = self.slot(grads, *a).slice_mut(s![.., *start..*end]);
                d += g;
            }
            Op::MeanRows(a) => {
                let n = self.dim(*a).0;
                let row = g.row(0).mapv(|x| x / n as f64);
                *self.slot(grads, *a) += &row;
            }
            Op::SumAll(a) => {
                let c = g[[0, 0]];
                self.slot(grads, *a).mapv_inplace(|d| d + c);
            }
            Op::Softmax(a, axis) => {
                let y = &node.value;
                let ax = match axis {
                    SoftmaxAxis::Rows => Axis(1),
                    SoftmaxAxis::Cols => Axis(0),
                };
                let d = self.slot(grads, *a);
                // lanes run along the normalized direction
                for ((mut dl, yl), gl) in d
                    .axis_iter_mut(ax)
                    .zip(y.axis_iter(ax))
                    .zip(g.axis_iter(ax))
                {
                    let inner = yl.dot(&gl);
                    Zip::from(&mut dl).and(&yl).and(&gl).for_each(|d, &y, &g| *d += y * (g - inner));
                }
            }
            Op::Softplus(a) => {
                add_map(grads, *a, g, self.value(*a), |g, x| g * super::sigmoid(x));
            }
            Op::SliceRows(a, start, end) => {
                let mut d = self.slot(grads, *a).slice_mut(s![*start..*end, ..]);
                d += g;
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let height = self.dim(p).0;
                    add_view(grads, p, g.slice(s![start..start + height, ..]));
                    start += height;
                }
            }
            Op::BlockLeftMul(l, x) => {
                let n = l.nrows();
                let d = self.slot(grads, *x);
                for (gb, mut db) in g.axis_chunks_iter(Axis(0), n).zip(d.axis_chunks_iter_mut(Axis(0), n)) {
                    general_mat_mul(1.0, &l.t(), &gb, 1.0, &mut db);
                }
            }
            Op::SegmentSoftmax(b, seg) => {
                let y = &node.value;
                let d = self.slot(grads, *b);
                for ((yb, gb), mut db) in y
                    .axis_chunks_iter(Axis(0), *seg)
                    .zip(g.axis_chunks_iter(Axis(0), *seg))
                    .zip(d.axis_chunks_iter_mut(Axis(0), *seg))
                {
                    let inner: f64 = yb.iter().zip(gb.iter()).map(|(a, b)| a * b).sum();
                    Zip::from(&mut db).and(&yb).and(&gb).for_each(|d, &y, &g| *d += y * (g - inner));
                }
            }
            Op::SegmentWeightedSum(c, u, seg) => {
                let (vc, vu) = (self.value(*c), self.value(*u));
                let dc = self.slot(grads, *c);
                for (i, urow) in vu.rows().into_iter().enumerate() {
                    dc[[i, 0]] += urow.dot(&g.row(i / seg));
                }
                let du = self.slot(grads, *u);
                for (i, mut durow) in du.rows_mut().into_iter().enumerate() {
                    durow.scaled_add(vc[[i, 0]], &g.row(i / seg));
                }
            }
            Op::SegmentMean(u, seg) => {
                let inv = 1.0 / *seg as f64;
                let du = self.slot(grads, *u);
                for (i, mut row) in du.rows_mut().into_iter().enumerate() {
                    row.scaled_add(inv, &g.row(i / seg));
                }
            }
            Op::SegmentCosine(u, v, seg) => {
                let (vu, vv) = (self.value(*u), self.value(*v));
                let mut du = Array2::zeros(vu.dim());
                let mut dv = Array2::zeros(vv.dim());
                for (i, row) in vu.rows().into_iter().enumerate() {
                    let k = i / seg;
                    let v_row = vv.row(k);
                    let v_norm = v_row.dot(&v_row).sqrt();
                    let u_norm = row.dot(&row).sqrt();
                    if u_norm == 0.0 || v_norm == 0.0 {
                        continue;
                    }
                    let gi = g[[i, 0]];
                    let sim = node.value[[i, 0]];
                    let inv = 1.0 / (u_norm * v_norm);
                    let mut du_row = du.row_mut(i);
                    Zip::from(&mut du_row).and(&row).and(&v_row).for_each(|d, &ui, &vi| {
                        *d = gi * (vi * inv - sim * ui / (u_norm * u_norm));
                    });
                    let mut dv_row = dv.row_mut(k);
                    Zip::from(&mut dv_row).and(&row).and(&v_row).for_each(|d, &ui, &vi| {
                        *d += gi * (ui * inv - sim * vi / (v_norm * v_norm));
                    });
                }
                add_owned(grads, *u, du);
                add_owned(grads, *v, dv);
            }
        }
    }

    /// Owned version of [`Tape::param_grads`].
    pub fn take_param_grads(&self, grads: Gradients) -> Vec<(usize, Mat)> {
        let mut grads = grads.grads;
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => grads.get_mut(i).and_then(Option::take).map(|g| (id, g)),
                _ => None,
            })
            .collect()
    }

    /// `(param slot, gradient)` for every parameter leaf that received one.
    pub fn param_grads<'a>(&'a self, grads: &'a Gradients) -> impl Iterator<Item = (usize, &'a Mat)> + 'a {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => grads.grads.get(i).and_then(Option::as_ref).map(|g| (id, g)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.input(Array2::zeros((2, 3)));
        let b = t.input(Array2::zeros((2, 3)));
        assert!(matches!(t.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        assert!(t.matmul_nt(a, b).is_ok());
        let r = t.input(Array2::zeros((2, 3)));
        assert!(t.add_row(a, r).is_err());
        assert!(t.slice_cols(a, 2, 4).is_err());
    }

    #[test]
    fn identity_and_scalar_matmul() {
        let mut t = Tape::new();
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let i = t.input(Array2::eye(3));
        let xv = t.input(x.clone());
        let y = t.matmul(i, xv).unwrap();
        assert_eq!(t.value(y), &x);
        let a = t.input(arr2(&[[3.0]]));
        let b = t.input(arr2(&[[-2.5]]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.scalar(c), -7.5);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        use rand::Rng;
        let mut rng = crate::seed::rng(3);
        let a = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));
        let mut naive = Array2::<f64>::zeros((3, 2));
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    naive[[i, j]] += a[[i, k]] * b[[k, j]];
                }
            }
        }
        let mut t = Tape::new();
        let (va, vb) = (t.input(a), t.input(b));
        let c = t.matmul(va, vb).unwrap();
        for (x, y) in t.value(c).iter().zip(naive.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_lanes_sum_to_one() {
        let mut t = Tape::new();
        let a = t.input(arr2(&[[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]));
        let sr = t.softmax(a, SoftmaxAxis::Rows);
        let sc = t.softmax(a, SoftmaxAxis::Cols);
        for col in t.value(sr).columns() {
            assert!((col.sum() - 1.0).abs() < 1e-12);
        }
        for row in t.value(sc).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_zero_norm_is_zero() {
        let mut t = Tape::new();
        let u = t.input(arr2(&[[0.0, 0.0], [1.0, 1.0]]));
        let v = t.input(arr2(&[[2.0, 2.0]]));
        let c = t.cosine_rows(u, v).unwrap();
        assert_eq!(t.value(c)[[0, 0]], 0.0);
        assert!((t.value(c)[[1, 0]] - 1.0).abs() < 1e-15);
        let s = t.sum_all(c);
        let g = t.backward(s);
        assert!(g.get(u).unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn non_finite_detection() {
        let mut t = Tape::new();
        let a = t.input(arr2(&[[1.0]]));
        assert!(t.first_non_finite().is_none());
        let b = t.input(arr2(&[[f64::NAN]]));
        assert_eq!(t.first_non_finite(), Some(b));
        let _ = a;
    }
}
