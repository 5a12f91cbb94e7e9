//! Reverse-mode differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes once in reverse creation order and
//! accumulates gradients additively, so a node used twice receives the sum of
//! both contributions.

use std::collections::BTreeMap;

use super::tensor::dot;
use super::{NumericError, ParamSet, Scalar, Tensor};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    RowScale(Var, Var),
    AddScalar(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Sigmoid(Var),
    Log(Var),
    Recip(Var),
    ClampMin(Var, T),
    RowNormalize { x: Var, norms: Vec<T> },
    SumCols(Var),
    MeanRows(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    GatherMean(Var, Vec<Vec<usize>>),
    ScatterCols(Var, Vec<usize>),
    PickEach(Var, Vec<usize>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded computation graph bound to a parameter set.
pub struct Tape<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    bound: BTreeMap<String, Var>,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient per bound parameter. Parameters that were bound but never
    /// reached by the loss get an explicit zero tensor.
    pub fn params(&self, tape: &Tape<'_, T>) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = self.grads[v.0].clone().unwrap_or_else(|| {
                    let [r, c] = tape.value(v).shape();
                    Tensor::zeros(r, c)
                });
                (name.clone(), g)
            })
            .collect()
    }
}

fn shape_err(msg: String) -> NumericError {
    NumericError::Shape(msg)
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self { params, nodes: Vec::new(), bound: BTreeMap::new() }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf node. Leaves receive gradients like any other node.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Binds a named parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var, NumericError> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| NumericError::MissingParam(name.to_string()))?
            .clone();
        let v = self.push(t, Op::Leaf);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = &String> {
        self.bound.keys()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NumericError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape(a, b, "add")?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape(a, b, "sub")?;
        let bv = self.value(b);
        let v = Tensor::from_vec(
            bv.rows(),
            bv.cols(),
            self.value(a).data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect(),
        )?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// `[m, n] + [1, n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericError> {
        let [_, n] = self.shape(a);
        if self.shape(row) != [1, n] {
            return Err(shape_err(format!("add_row: {:?} + {:?}", self.shape(a), self.shape(row))));
        }
        let mut v = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..v.rows() {
            for (x, &b) in v.row_mut(i).iter_mut().zip(&r) {
                *x = *x + b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape(a, b, "mul")?;
        let bv = self.value(b);
        let v = Tensor::from_vec(
            bv.rows(),
            bv.cols(),
            self.value(a).data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect(),
        )?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    /// Multiplies every entry of `a` by the `[1, 1]` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, NumericError> {
        if self.shape(s) != [1, 1] {
            return Err(shape_err(format!("scale_by expects [1,1], got {:?}", self.shape(s))));
        }
        let k = self.value(s).data()[0];
        let v = self.value(a).map(|x| x * k);
        Ok(self.push(v, Op::ScaleBy(a, s)))
    }

    /// Scales row `i` of `[m, n]` by entry `i` of `[m, 1]`.
    pub fn row_scale(&mut self, a: Var, col: Var) -> Result<Var, NumericError> {
        let [m, _] = self.shape(a);
        if self.shape(col) != [m, 1] {
            return Err(shape_err(format!("row_scale: {:?} by {:?}", self.shape(a), self.shape(col))));
        }
        let mut v = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (i, &k) in c.iter().enumerate() {
            for x in v.row_mut(i) {
                *x = *x * k;
            }
        }
        Ok(self.push(v, Op::RowScale(a, col)))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        self.add_scalar(n, 1.0)
    }

    /// Row-wise softmax. `keep`, when given, is a row-major mask of the same
    /// shape; `false` entries get probability exactly zero.
    pub fn softmax(&mut self, a: Var, keep: Option<&[bool]>) -> Result<Var, NumericError> {
        let x = self.value(a);
        let [m, n] = x.shape();
        if let Some(k) = keep {
            if k.len() != m * n {
                return Err(shape_err(format!("softmax mask has {} entries for {m}x{n}", k.len())));
            }
        }
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let row = x.row(i);
            let kept = |j: usize| keep.is_none_or(|k| k[i * n + j]);
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if kept(j) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                return Err(NumericError::AllMasked { row: i });
            }
            let orow = out.row_mut(i);
            let mut total = T::zero();
            for j in 0..n {
                if kept(j) {
                    let e = (row[j] - max).exp();
                    orow[j] = e;
                    total = total + e;
                }
            }
            for o in orow.iter_mut() {
                *o = *o / total;
            }
        }
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Row-wise layer normalisation followed by the affine `gain`, `bias`
    /// (both `[1, n]`).
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var, NumericError> {
        let [m, n] = self.shape(a);
        if self.shape(gain) != [1, n] || self.shape(bias) != [1, n] {
            return Err(shape_err(format!("layer_norm affine must be [1,{n}]")));
        }
        let eps = T::of(LAYER_NORM_EPS);
        let nn = T::of(n as f64);
        let x = self.value(a);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let row = x.row(i);
            let mean = row.iter().copied().sum::<T>() / nn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            let orow = out.row_mut(i);
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat.push(h);
                orow[j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(out, Op::LayerNorm { x: a, gain, bias, xhat, inv_std }))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        self.push(v, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, Op::Log(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| T::one() / x);
        self.push(v, Op::Recip(a))
    }

    /// `max(a, floor)`; the gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let f = T::of(floor);
        let v = self.value(a).map(|x| if x > f { x } else { f });
        self.push(v, Op::ClampMin(a, f))
    }

    /// Divides each row by its L2 norm (zero rows stay zero).
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let r = x.row(i);
            let norm = dot(r, r).sqrt();
            norms.push(norm);
            if norm > T::zero() {
                for v in out.row_mut(i) {
                    *v = *v / norm;
                }
            }
        }
        self.push(out, Op::RowNormalize { x: a, norms })
    }

    /// `[m, n] -> [m, 1]` row sums.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows()).map(|i| x.row(i).iter().copied().sum()).collect();
        let v = Tensor::from_vec(x.rows(), 1, data).expect("sized");
        self.push(v, Op::SumCols(a))
    }

    /// `[m, n] -> [1, n]` column means.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let [m, n] = x.shape();
        if m == 0 {
            return Err(shape_err("mean_rows of an empty matrix".into()));
        }
        let mut out = Tensor::zeros(1, n);
        for i in 0..m {
            out.add_assign(&Tensor::row_vector(x.row(i).to_vec()));
        }
        let inv = T::one() / T::of(m as f64);
        let out = out.map(|v| v * inv);
        Ok(self.push(out, Op::MeanRows(a)))
    }

    /// Sum of all entries, as `[1, 1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::row_vector(vec![s]), Op::Sum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let m = parts.first().map_or(0, |&p| self.shape(p)[0]);
        if parts.iter().any(|&p| self.shape(p)[0] != m) {
            return Err(shape_err("concat_cols: row counts differ".into()));
        }
        let n: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let mut off = 0;
            for &p in parts {
                let r = self.value(p).row(i);
                out.row_mut(i)[off..off + r.len()].copy_from_slice(r);
                off += r.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let n = parts.first().map_or(0, |&p| self.shape(p)[1]);
        if parts.iter().any(|&p| self.shape(p)[1] != n) {
            return Err(shape_err("concat_rows: column counts differ".into()));
        }
        let m: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let mut data = Vec::with_capacity(m * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(m, n, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericError> {
        let [m, n] = self.shape(a);
        if start > end || end > n {
            return Err(shape_err(format!("slice_cols {start}..{end} of width {n}")));
        }
        let x = self.value(a);
        let mut out = Tensor::zeros(m, end - start);
        for i in 0..m {
            out.row_mut(i).copy_from_slice(&x.row(i)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumericError> {
        let [m, n] = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(shape_err(format!("gather_rows index {bad} out of {m}")));
        }
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::from_vec(idx.len(), n, data)?;
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec())))
    }

    /// Output row `g` is the mean of input rows `groups[g]` (empty group gives
    /// a zero row).
    pub fn gather_mean(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var, NumericError> {
        let [m, n] = self.shape(a);
        let x = self.value(a);
        let mut out = Tensor::zeros(groups.len(), n);
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let inv = T::one() / T::of(members.len() as f64);
            for &i in members {
                if i >= m {
                    return Err(shape_err(format!("gather_mean index {i} out of {m}")));
                }
                for (o, &v) in out.row_mut(g).iter_mut().zip(x.row(i)) {
                    *o = *o + v * inv;
                }
            }
        }
        Ok(self.push(out, Op::GatherMean(a, groups.to_vec())))
    }

    /// `out[:, idx[j]] += a[:, j]` into `width` columns.
    pub fn scatter_cols(&mut self, a: Var, idx: &[usize], width: usize) -> Result<Var, NumericError> {
        let [m, n] = self.shape(a);
        if idx.len() != n {
            return Err(shape_err(format!("scatter_cols: {} indices for {n} columns", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= width) {
            return Err(shape_err(format!("scatter_cols index {bad} out of {width}")));
        }
        let x = self.value(a);
        let mut out = Tensor::zeros(m, width);
        for i in 0..m {
            let src = x.row(i);
            let dst = out.row_mut(i);
            for (j, &t) in idx.iter().enumerate() {
                dst[t] = dst[t] + src[j];
            }
        }
        Ok(self.push(out, Op::ScatterCols(a, idx.to_vec())))
    }

    /// `[m, n] -> [m, 1]` with `out[i] = a[i, idx[i]]`.
    pub fn pick_each(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumericError> {
        let [m, n] = self.shape(a);
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(shape_err(format!("pick_each: bad indices for {m}x{n}")));
        }
        let x = self.value(a);
        let data = idx.iter().enumerate().map(|(i, &j)| x.get(i, j)).collect();
        let out = Tensor::from_vec(m, 1, data)?;
        Ok(self.push(out, Op::PickEach(a, idx.to_vec())))
    }

    /// Reverse pass from the `[1, 1]` node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let [r, c] = self.shape(loss);
        grads[loss.0] = Some(Tensor::filled(r, c, T::one()));

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b)).expect("shapes recorded");
                    let gb = self.value(*a).t_matmul(&g).expect("shapes recorded");
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let ga = g.matmul(self.value(*b)).expect("shapes recorded");
                    let gb = g.t_matmul(self.value(*a)).expect("shapes recorded");
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *o = *o + v;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let [m, n] = g.shape();
                    let ga = g.data().iter().zip(bv).map(|(&x, &y)| x * y).collect();
                    let gb = g.data().iter().zip(av).map(|(&x, &y)| x * y).collect();
                    acc(&mut grads, *a, Tensor::from_vec(m, n, ga).expect("sized"));
                    acc(&mut grads, *b, Tensor::from_vec(m, n, gb).expect("sized"));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|v| v * *s)),
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s).data()[0];
                    let gs = dot(g.data(), self.value(*a).data());
                    acc(&mut grads, *s, Tensor::row_vector(vec![gs]));
                    acc(&mut grads, *a, g.map(|v| v * k));
                }
                Op::RowScale(a, col) => {
                    let av = self.value(*a);
                    let cv = self.value(*col).data();
                    let mut ga = g.clone();
                    let mut gc = Vec::with_capacity(cv.len());
                    for (i, &k) in cv.iter().enumerate() {
                        gc.push(dot(g.row(i), av.row(i)));
                        for v in ga.row_mut(i) {
                            *v = *v * k;
                        }
                    }
                    acc(&mut grads, *col, Tensor::from_vec(cv.len(), 1, gc).expect("sized"));
                    acc(&mut grads, *a, ga);
                }
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::Softmax(a) => {
                    let [m, n] = y.shape();
                    let mut gx = Tensor::zeros(m, n);
                    for i in 0..m {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let s = dot(yr, gr);
                        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                            *o = yr[j] * (gr[j] - s);
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let [m, n] = y.shape();
                    let gv = self.value(*gain).data();
                    let nn = T::of(n as f64);
                    let mut ggain = vec![T::zero(); n];
                    let mut gbias = vec![T::zero(); n];
                    let mut gx = Tensor::zeros(m, n);
                    for i in 0..m {
                        let gr = g.row(i);
                        let xh = &xhat[i * n..(i + 1) * n];
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..n {
                            ggain[j] = ggain[j] + gr[j] * xh[j];
                            gbias[j] = gbias[j] + gr[j];
                            let d = gr[j] * gv[j];
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * xh[j];
                        }
                        let k = inv_std[i] / nn;
                        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                            let d = gr[j] * gv[j];
                            *o = k * (nn * d - sum_d - xh[j] * sum_dx);
                        }
                    }
                    acc(&mut grads, *gain, Tensor::row_vector(ggain));
                    acc(&mut grads, *bias, Tensor::row_vector(gbias));
                    acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(a) => {
                    let gx = zip_map(&g, y, |gv, yv| gv * yv * (T::one() - yv));
                    acc(&mut grads, *a, gx);
                }
                Op::Log(a) => {
                    let gx = zip_map(&g, self.value(*a), |gv, xv| gv / xv);
                    acc(&mut grads, *a, gx);
                }
                Op::Recip(a) => {
                    let gx = zip_map(&g, y, |gv, yv| -gv * yv * yv);
                    acc(&mut grads, *a, gx);
                }
                Op::ClampMin(a, f) => {
                    let gx = zip_map(&g, self.value(*a), |gv, xv| if xv > *f { gv } else { T::zero() });
                    acc(&mut grads, *a, gx);
                }
                Op::RowNormalize { x, norms } => {
                    let [m, n] = y.shape();
                    let mut gx = Tensor::zeros(m, n);
                    for (i, &norm) in norms.iter().enumerate().take(m) {
                        if norm == T::zero() {
                            continue;
                        }
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let s = dot(yr, gr);
                        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                            *o = (gr[j] - yr[j] * s) / norm;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SumCols(a) => {
                    let [m, n] = self.shape(*a);
                    let mut gx = Tensor::zeros(m, n);
                    for i in 0..m {
                        let gi = g.data()[i];
                        gx.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::MeanRows(a) => {
                    let [m, n] = self.shape(*a);
                    let inv = T::one() / T::of(m as f64);
                    let mut gx = Tensor::zeros(m, n);
                    for i in 0..m {
                        for (o, &v) in gx.row_mut(i).iter_mut().zip(g.data()) {
                            *o = v * inv;
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::Sum(a) => {
                    let [m, n] = self.shape(*a);
                    acc(&mut grads, *a, Tensor::filled(m, n, g.data()[0]));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let [m, w] = self.shape(p);
                        let mut gp = Tensor::zeros(m, w);
                        for i in 0..m {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        off += w;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    let n = g.cols();
                    for &p in parts {
                        let [h, w] = self.shape(p);
                        let gp = Tensor::from_vec(h, w, g.data()[off * n..(off + h) * n].to_vec()).expect("sized");
                        off += h;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let [m, n] = self.shape(*a);
                    let w = g.cols();
                    let mut gx = Tensor::zeros(m, n);
                    for i in 0..m {
                        gx.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::GatherRows(a, idx) => {
                    let [m, n] = self.shape(*a);
                    let mut gx = Tensor::zeros(m, n);
                    for (o, &i) in idx.iter().enumerate() {
                        for (d, &v) in gx.row_mut(i).iter_mut().zip(g.row(o)) {
                            *d = *d + v;
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::GatherMean(a, groups) => {
                    let [m, n] = self.shape(*a);
                    let mut gx = Tensor::zeros(m, n);
                    for (o, members) in groups.iter().enumerate() {
                        if members.is_empty() {
                            continue;
                        }
                        let inv = T::one() / T::of(members.len() as f64);
                        for &i in members {
                            for (d, &v) in gx.row_mut(i).iter_mut().zip(g.row(o)) {
                                *d = *d + v * inv;
                            }
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::ScatterCols(a, idx) => {
                    let [m, n] = self.shape(*a);
                    let mut gx = Tensor::zeros(m, n);
                    for i in 0..m {
                        let gr = g.row(i);
                        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                            *o = gr[idx[j]];
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::PickEach(a, idx) => {
                    let [m, n] = self.shape(*a);
                    let mut gx = Tensor::zeros(m, n);
                    for (i, &j) in idx.iter().enumerate() {
                        gx.set(i, j, g.data()[i]);
                    }
                    acc(&mut grads, *a, gx);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads, params: self.bound.clone() }
    }
}

fn zip_map<T: Scalar>(g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::from_vec(g.rows(), g.cols(), data).expect("same shape")
}
