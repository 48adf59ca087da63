use super::{Real, Tensor};

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    RepeatRows(Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Selu(Var),
    Relu(Var),
    Abs(Var),
    Exp(Var),
    SumAll(Var),
    SumCols(Var),
    MeanRows(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    LayerNorm(Var, Vec<T>),
    DepthwiseConv(Var, Var, usize),
    PadWindows(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape over dense matrices.
///
/// Every operation appends a node; [`Tape::backward`] walks the nodes in
/// reverse. The backward pass is computed in `T` arithmetic, so running it
/// with `T = Dual` differentiates the gradient itself.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of the given shape when `v` did not
    /// influence the root.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(1024) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        debug_assert_eq!(t.shape(), (1, 1));
        t.data[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_f64(&mut self, value: &Tensor<f64>) -> Var {
        self.constant(Tensor::from_f64(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        Tensor::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p + q);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p - q);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p * q);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// Adds the `1 x c` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (x, row) = (self.value(a), self.value(r));
        assert_eq!((1, x.cols), row.shape(), "add_row shape mismatch");
        let mut out = x.clone();
        for chunk in out.data.chunks_mut(x.cols) {
            for (o, &b) in chunk.iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, r), &[a, r])
    }

    /// Multiplies every row of `a` element-wise by the `1 x c` row `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (x, row) = (self.value(a), self.value(r));
        assert_eq!((1, x.cols), row.shape(), "mul_row shape mismatch");
        let mut out = x.clone();
        for chunk in out.data.chunks_mut(x.cols) {
            for (o, &b) in chunk.iter_mut().zip(&row.data) {
                *o = *o * b;
            }
        }
        self.push(out, Op::MulRow(a, r), &[a, r])
    }

    pub fn repeat_rows(&mut self, r: Var, n: usize) -> Var {
        let row = self.value(r);
        assert_eq!(row.rows, 1);
        let mut data = Vec::with_capacity(n * row.cols);
        for _ in 0..n {
            data.extend_from_slice(&row.data);
        }
        let v = Tensor::from_vec(n, row.cols, data);
        self.push(v, Op::RepeatRows(r), &[r])
    }

    /// `k * a + c` element-wise.
    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        let (kk, cc) = (T::from_f64(k), T::from_f64(c));
        let v = self.value(a).map(|x| kk * x + cc);
        self.push(v, Op::Affine(a, k), &[a])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.sigmoid());
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn selu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(selu);
        self.push(v, Op::Selu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x.value() > 0.0 { x } else { T::zero() });
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x.value() < 0.0 { -x } else { x });
        self.push(v, Op::Abs(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for &x in &self.value(a).data {
            acc += x;
        }
        self.push(Tensor::from_vec(1, 1, vec![acc]), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `n x c -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows)
            .map(|r| {
                let mut acc = T::zero();
                for &v in x.row(r) {
                    acc += v;
                }
                acc
            })
            .collect();
        let v = Tensor::from_vec(x.rows, 1, data);
        self.push(v, Op::SumCols(a), &[a])
    }

    /// Column means: `n x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let inv = T::from_f64(1.0 / x.rows as f64);
        let mut out = Tensor::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, &v) in out.data.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        for o in &mut out.data {
            *o = *o * inv;
        }
        self.push(out, Op::MeanRows(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let row = x.row(r);
            let max = row.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
            let m = T::from_f64(max);
            let mut sum = T::zero();
            for (c, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                out.data[r * x.cols + c] = e;
                sum += e;
            }
            for c in 0..x.cols {
                let i = r * x.cols + c;
                out.data[i] = out.data[i] / sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, rows, "concat_cols row mismatch");
                data.extend_from_slice(t.row(r));
            }
        }
        let v = Tensor::from_vec(rows, cols, data);
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        let v = Tensor::from_vec(rows, cols, data);
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let x = self.value(a);
        assert!(start + width <= x.cols);
        let mut data = Vec::with_capacity(x.rows * width);
        for r in 0..x.rows {
            data.extend_from_slice(&x.row(r)[start..start + width]);
        }
        let v = Tensor::from_vec(x.rows, width, data);
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Var {
        let x = self.value(a);
        assert!(start + count <= x.rows);
        let v = Tensor::from_vec(count, x.cols, x.data[start * x.cols..(start + count) * x.cols].to_vec());
        self.push(v, Op::SliceRows(a, start), &[a])
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        self.slice_rows(a, r, 1)
    }

    /// Table lookup: selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut data = Vec::with_capacity(idx.len() * t.cols);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::from_vec(idx.len(), t.cols, data);
        self.push(v, Op::Gather(table, idx.to_vec()), &[table])
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = T::from_f64(x.cols as f64);
        let mut out = Tensor::zeros(x.rows, x.cols);
        let mut inv_std = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean = mean / n;
            let mut var = T::zero();
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            let is = T::one() / (var / n + T::from_f64(LN_EPS)).sqrt();
            for (c, &v) in row.iter().enumerate() {
                out.data[r * x.cols + c] = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm(a, inv_std), &[a])
    }

    /// Stride-`q` depthwise convolution: `x` (m x d) is zero-padded to a
    /// multiple of `q` rows and output row `i` is
    /// `sum_r x[i*q + r] * filter[r]` (element-wise over the d channels).
    pub fn depthwise_conv(&mut self, x: Var, filter: Var, q: usize) -> Var {
        let (xv, fv) = (self.value(x), self.value(filter));
        assert_eq!(fv.shape(), (q, xv.cols), "filter must be q x d");
        let d = xv.cols;
        let l = xv.rows.div_ceil(q);
        let mut out = Tensor::zeros(l, d);
        for i in 0..l {
            for r in 0..q {
                let src = i * q + r;
                if src >= xv.rows {
                    break;
                }
                let (xr, fr) = (xv.row(src), fv.row(r));
                for c in 0..d {
                    out.data[i * d + c] += xr[c] * fr[c];
                }
            }
        }
        self.push(out, Op::DepthwiseConv(x, filter, q), &[x, filter])
    }

    /// Zero-pads `x` (m x d) to a multiple of `q` rows and reshapes it to
    /// `ceil(m/q) x (q*d)` so that each output row is one window.
    pub fn pad_windows(&mut self, x: Var, q: usize) -> Var {
        let xv = self.value(x);
        let d = xv.cols;
        let l = xv.rows.div_ceil(q);
        let mut data = xv.data.clone();
        data.resize(l * q * d, T::zero());
        let v = Tensor::from_vec(l, q * d, data);
        self.push(v, Op::PadWindows(x), &[x])
    }

    /// Gradients of the scalar node `root` with respect to every node that
    /// requires grad.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.shape(root), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::from_vec(1, 1, vec![T::one()]));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, hadamard(g, self.value(*b)));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, hadamard(g, self.value(*a)));
                }
            }
            Op::AddRow(a, r) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*r) {
                    accumulate(grads, *r, column_sums(g));
                }
            }
            Op::MulRow(a, r) => {
                let (x, row) = (self.value(*a), self.value(*r));
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for chunk in ga.data.chunks_mut(g.cols) {
                        for (o, &b) in chunk.iter_mut().zip(&row.data) {
                            *o = *o * b;
                        }
                    }
                    accumulate(grads, *a, ga);
                }
                if self.needs(*r) {
                    accumulate(grads, *r, column_sums(&hadamard(g, x)));
                }
            }
            Op::RepeatRows(r) => accumulate(grads, *r, column_sums(g)),
            Op::Affine(a, k) => {
                let kk = T::from_f64(*k);
                accumulate(grads, *a, g.map(|x| x * kk));
            }
            Op::Sigmoid(a) => {
                let ga = zip_map(g, out, |gi, y| gi * y * (T::one() - y));
                accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = zip_map(g, out, |gi, y| gi * (T::one() - y * y));
                accumulate(grads, *a, ga);
            }
            Op::Selu(a) => {
                let x = self.value(*a);
                let la = T::from_f64(SELU_LAMBDA * SELU_ALPHA);
                let l = T::from_f64(SELU_LAMBDA);
                let data = g
                    .data
                    .iter()
                    .zip(&x.data)
                    .zip(&out.data)
                    .map(|((&gi, &xi), &yi)| if xi.value() > 0.0 { gi * l } else { gi * (yi + la) })
                    .collect();
                accumulate(grads, *a, Tensor::from_vec(g.rows, g.cols, data));
            }
            Op::Relu(a) => {
                let ga = zip_map(g, self.value(*a), |gi, x| if x.value() > 0.0 { gi } else { T::zero() });
                accumulate(grads, *a, ga);
            }
            Op::Abs(a) => {
                let ga = zip_map(g, self.value(*a), |gi, x| {
                    let v = x.value();
                    if v > 0.0 {
                        gi
                    } else if v < 0.0 {
                        -gi
                    } else {
                        T::zero()
                    }
                });
                accumulate(grads, *a, ga);
            }
            Op::Exp(a) => accumulate(grads, *a, hadamard(g, out)),
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                accumulate(grads, *a, Tensor::from_vec(r, c, vec![g.data[0]; r * c]));
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        ga.data[i * c + j] = g.data[i];
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let (r, c) = self.shape(*a);
                let inv = T::from_f64(1.0 / r as f64);
                let row: Vec<T> = g.data.iter().map(|&x| x * inv).collect();
                let mut data = Vec::with_capacity(r * c);
                for _ in 0..r {
                    data.extend_from_slice(&row);
                }
                accumulate(grads, *a, Tensor::from_vec(r, c, data));
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Tensor::zeros(out.rows, out.cols);
                for r in 0..out.rows {
                    let (yr, gr) = (out.row(r), g.row(r));
                    let mut dot = T::zero();
                    for (&y, &gi) in yr.iter().zip(gr) {
                        dot += y * gi;
                    }
                    for c in 0..out.cols {
                        ga.data[r * out.cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    if self.needs(p) {
                        let mut data = Vec::with_capacity(g.rows * w);
                        for r in 0..g.rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        accumulate(grads, p, Tensor::from_vec(g.rows, w, data));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.needs(p) {
                        let data = g.data[offset * c..(offset + r) * c].to_vec();
                        accumulate(grads, p, Tensor::from_vec(r, c, data));
                    }
                    offset += r;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..g.cols {
                        ga.data[i * c + start + j] = g.data[i * g.cols + j];
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                ga.data[start * c..start * c + g.len()].copy_from_slice(&g.data);
                accumulate(grads, *a, ga);
            }
            Op::Gather(table, idx) => {
                let (r, c) = self.shape(*table);
                let mut ga = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga.data[i * c + j] += g.data[k * c + j];
                    }
                }
                accumulate(grads, *table, ga);
            }
            Op::LayerNorm(a, inv_std) => {
                let c = out.cols;
                let n = T::from_f64(c as f64);
                let mut ga = Tensor::zeros(out.rows, c);
                for r in 0..out.rows {
                    let (yr, gr) = (out.row(r), g.row(r));
                    let mut mean_g = T::zero();
                    let mut mean_gy = T::zero();
                    for (&y, &gi) in yr.iter().zip(gr) {
                        mean_g += gi;
                        mean_gy += gi * y;
                    }
                    mean_g = mean_g / n;
                    mean_gy = mean_gy / n;
                    for j in 0..c {
                        ga.data[r * c + j] = inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::DepthwiseConv(x, filter, q) => {
                let (xv, fv) = (self.value(*x), self.value(*filter));
                let d = xv.cols;
                let mut gx = Tensor::zeros(xv.rows, d);
                let mut gf = Tensor::zeros(*q, d);
                for i in 0..g.rows {
                    for r in 0..*q {
                        let src = i * q + r;
                        if src >= xv.rows {
                            break;
                        }
                        for c in 0..d {
                            let gi = g.data[i * d + c];
                            gx.data[src * d + c] += gi * fv.data[r * d + c];
                            gf.data[r * d + c] += gi * xv.data[src * d + c];
                        }
                    }
                }
                if self.needs(*x) {
                    accumulate(grads, *x, gx);
                }
                if self.needs(*filter) {
                    accumulate(grads, *filter, gf);
                }
            }
            Op::PadWindows(x) => {
                let (r, c) = self.shape(*x);
                accumulate(grads, *x, Tensor::from_vec(r, c, g.data[..r * c].to_vec()));
            }
        }
    }
}

fn selu<T: Real>(x: T) -> T {
    if x.value() > 0.0 {
        x.scale(SELU_LAMBDA)
    } else {
        (x.exp() - T::one()).scale(SELU_LAMBDA * SELU_ALPHA)
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

fn column_sums<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, g.cols);
    for r in 0..g.rows {
        for (o, &v) in out.data.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}
