use super::loss::{loss_and_grad, LossKind};
use super::real::{gemm, Real};
use super::tensor::{ParamGrads, ParamId, ParamStore, Tensor};

/// Guard added to the weight sum of [`Graph::weighted_time_mean`].
pub const MASK_DENOM_EPS: f64 = 1e-8;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    o: usize,
}

impl ConvDims {
    fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }
    fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }
    fn rows(&self) -> usize {
        self.b * self.out_h() * self.out_w()
    }
    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
        cols: Vec<T>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    TimeMean(Var),
    WeightedTimeMean {
        w: Var,
        z: Var,
        den: Vec<T>,
    },
    Softmax(Var),
    Lstm {
        x: Var,
        w: Var,
        reverse: bool,
        gates: Vec<T>,
        cells: Vec<T>,
    },
    Loss {
        p: Var,
        grad: Vec<T>,
    },
    Add(Var, Var),
    Scale(Var, T),
}

struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    value: Vec<T>,
}

/// Reverse-mode tape. Parameters are read from a borrowed store; the
/// gradients come back aligned with it.
pub struct Graph<'a, T: Real> {
    params: &'a ParamStore<T>,
    nodes: Vec<Node<T>>,
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, value: Vec<T>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len());
        self.nodes.push(Node { op, shape, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.params.get(id).data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor {
            shape: self.shape(v).to_vec(),
            data: self.value(v).to_vec(),
        }
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t.shape, t.data)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let shape = self.params.get(id).shape.clone();
        self.push(Op::Param(id), shape, Vec::new())
    }

    fn matrix_dims(&self, v: Var) -> (usize, usize) {
        let s = self.shape(v);
        assert_eq!(s.len(), 2, "expected a matrix, got shape {s:?}");
        (s[0], s[1])
    }

    /// `x·w + b` for `x: [R, K]`, `w: [K, J]`, `b: [J]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (r, k) = self.matrix_dims(x);
        let (k2, j) = self.matrix_dims(w);
        assert_eq!(k, k2, "linear: inner dimensions {k} vs {k2}");
        let mut out = vec![T::zero(); r * j];
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.len(), j, "linear: bias length");
            for row in out.chunks_mut(j) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            false,
            false,
            r,
            k,
            j,
            self.value(x),
            self.value(w),
            &mut out,
            b.is_some(),
        );
        self.push(Op::Linear { x, w, b }, vec![r, j], out)
    }

    /// Valid, stride-1 convolution on channels-last `x: [B, H, W, C]` with
    /// `w: [KH, KW, C, O]` and `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d: input must be [B, H, W, C]");
        assert_eq!(ws.len(), 4, "conv2d: kernel must be [KH, KW, C, O]");
        assert_eq!(xs[3], ws[2], "conv2d: channel mismatch");
        assert!(
            xs[1] >= ws[0] && xs[2] >= ws[1],
            "conv2d: kernel larger than input"
        );
        let d = ConvDims {
            b: xs[0],
            h: xs[1],
            w: xs[2],
            c: xs[3],
            kh: ws[0],
            kw: ws[1],
            o: ws[3],
        };
        let (oh, ow, patch) = (d.out_h(), d.out_w(), d.patch());
        let xv = self.value(x);
        let mut cols = vec![T::zero(); d.rows() * patch];
        let mut r = 0;
        for bi in 0..d.b {
            for i in 0..oh {
                for j in 0..ow {
                    let dst = &mut cols[r * patch..(r + 1) * patch];
                    for p in 0..d.kh {
                        let src = ((bi * d.h + i + p) * d.w + j) * d.c;
                        let n = d.kw * d.c;
                        dst[p * n..(p + 1) * n].copy_from_slice(&xv[src..src + n]);
                    }
                    r += 1;
                }
            }
        }
        let mut out = vec![T::zero(); d.rows() * d.o];
        let bv = self.value(b);
        assert_eq!(bv.len(), d.o, "conv2d: bias length");
        for row in out.chunks_mut(d.o) {
            row.copy_from_slice(bv);
        }
        gemm(
            false,
            false,
            d.rows(),
            patch,
            d.o,
            &cols,
            self.value(w),
            &mut out,
            true,
        );
        self.push(
            Op::Conv2d {
                x,
                w,
                b,
                dims: d,
                cols,
            },
            vec![d.b, oh, ow, d.o],
            out,
        )
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(op, shape, out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.value(x).len(),
            "reshape: element count"
        );
        let v = self.value(x).to_vec();
        self.push(Op::Reshape(x), shape, v)
    }

    /// `[R, A] ++ [R, B] → [R, A+B]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (r, ca) = self.matrix_dims(a);
        let (r2, cb) = self.matrix_dims(b);
        assert_eq!(r, r2, "concat_cols: row mismatch");
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(&self.value(a)[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&self.value(b)[i * cb..(i + 1) * cb]);
        }
        self.push(Op::ConcatCols(a, b), vec![r, ca + cb], out)
    }

    /// Mean over rows: `[T, Q] → [1, Q]`.
    pub fn time_mean(&mut self, x: Var) -> Var {
        let (t, q) = self.matrix_dims(x);
        assert!(t > 0, "time_mean: no frames");
        let mut out = vec![T::zero(); q];
        for row in self.value(x).chunks(q) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::of(t as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(Op::TimeMean(x), vec![1, q], out)
    }

    /// `Σ_t w·z / (Σ_t w + ε)` per column.
    pub fn weighted_time_mean(&mut self, w: Var, z: Var) -> Var {
        let (t, q) = self.matrix_dims(w);
        assert_eq!(self.shape(z), [t, q], "weighted_time_mean: shape mismatch");
        let eps = T::of(MASK_DENOM_EPS);
        let mut num = vec![T::zero(); q];
        let mut den = vec![eps; q];
        for (wr, zr) in self.value(w).chunks(q).zip(self.value(z).chunks(q)) {
            for i in 0..q {
                num[i] += wr[i] * zr[i];
                den[i] += wr[i];
            }
        }
        let out = num.iter().zip(&den).map(|(&n, &d)| n / d).collect();
        self.push(Op::WeightedTimeMean { w, z, den }, vec![1, q], out)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, k) = self.matrix_dims(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::Softmax(x), shape, out)
    }

    /// One LSTM direction. `xg: [T, 4H]` holds the input contributions to
    /// the gates (bias included) in the order input, forget, cell, output;
    /// `w: [H, 4H]` is the recurrent matrix. Returns `[T, H]`.
    pub fn lstm(&mut self, xg: Var, w: Var, reverse: bool) -> Var {
        let (t, h4) = self.matrix_dims(xg);
        let (h, h4w) = self.matrix_dims(w);
        assert_eq!(h4, 4 * h, "lstm: gate width");
        assert_eq!(h4w, 4 * h, "lstm: recurrent width");
        let xv = self.value(xg);
        let wv = self.value(w);
        let mut gates = vec![T::zero(); t * h4];
        let mut cells = vec![T::zero(); t * h];
        let mut out = vec![T::zero(); t * h];
        let mut h_prev = vec![T::zero(); h];
        let mut c_prev = vec![T::zero(); h];
        let mut pre = vec![T::zero(); h4];
        for s in 0..t {
            let ti = if reverse { t - 1 - s } else { s };
            pre.copy_from_slice(&xv[ti * h4..(ti + 1) * h4]);
            gemm(false, false, 1, h, h4, &h_prev, wv, &mut pre, true);
            let g = &mut gates[ti * h4..(ti + 1) * h4];
            for j in 0..h {
                let i_g = sigmoid(pre[j]);
                let f_g = sigmoid(pre[h + j]);
                let c_g = pre[2 * h + j].tanh();
                let o_g = sigmoid(pre[3 * h + j]);
                g[j] = i_g;
                g[h + j] = f_g;
                g[2 * h + j] = c_g;
                g[3 * h + j] = o_g;
                let c = f_g * c_prev[j] + i_g * c_g;
                cells[ti * h + j] = c;
                let hv = o_g * c.tanh();
                out[ti * h + j] = hv;
                c_prev[j] = c;
                h_prev[j] = hv;
            }
        }
        self.push(
            Op::Lstm {
                x: xg,
                w,
                reverse,
                gates,
                cells,
            },
            vec![t, h],
            out,
        )
    }

    /// Scalar loss of a probability row against a fixed target.
    pub fn loss(&mut self, p: Var, target: &[f64], kind: LossKind) -> Var {
        let t: Vec<T> = target.iter().map(|&x| T::of(x)).collect();
        let (value, grad) = loss_and_grad(kind, self.value(p), &t);
        self.push(Op::Loss { p, grad }, vec![1], vec![value])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).len(),
            self.value(b).len(),
            "add: length mismatch"
        );
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Add(a, b), shape, out)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    /// Gradients of the scalar `root` with respect to every parameter.
    pub fn backward(&self, root: Var) -> ParamGrads<T> {
        assert_eq!(self.value(root).len(), 1, "backward: root must be a scalar");
        let mut pg = ParamGrads::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (a, &d) in pg.grads[id.0].iter_mut().zip(&dy) {
                        *a += d;
                    }
                }
                Op::Linear { x, w, b } => {
                    let (r, k) = self.matrix_dims(*x);
                    let j = node.shape[1];
                    let dx = self.slot(&mut grads, *x);
                    gemm(false, true, r, j, k, &dy, self.value(*w), dx, true);
                    let dw = self.slot(&mut grads, *w);
                    gemm(true, false, k, r, j, self.value(*x), &dy, dw, true);
                    if let Some(b) = b {
                        let db = self.slot(&mut grads, *b);
                        for row in dy.chunks(j) {
                            for (a, &d) in db.iter_mut().zip(row) {
                                *a += d;
                            }
                        }
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    dims,
                    cols,
                } => {
                    let d = *dims;
                    let (rows, patch) = (d.rows(), d.patch());
                    let dw = self.slot(&mut grads, *w);
                    gemm(true, false, patch, rows, d.o, cols, &dy, dw, true);
                    let db = self.slot(&mut grads, *b);
                    for row in dy.chunks(d.o) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    let mut dcols = vec![T::zero(); rows * patch];
                    gemm(
                        false,
                        true,
                        rows,
                        d.o,
                        patch,
                        &dy,
                        self.value(*w),
                        &mut dcols,
                        false,
                    );
                    let dx = self.slot(&mut grads, *x);
                    let n = d.kw * d.c;
                    let mut r = 0;
                    for bi in 0..d.b {
                        for i in 0..d.out_h() {
                            for j in 0..d.out_w() {
                                let src = &dcols[r * patch..(r + 1) * patch];
                                for p in 0..d.kh {
                                    let dst = ((bi * d.h + i + p) * d.w + j) * d.c;
                                    for (a, &v) in
                                        dx[dst..dst + n].iter_mut().zip(&src[p * n..(p + 1) * n])
                                    {
                                        *a += v;
                                    }
                                }
                                r += 1;
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let dx = self.slot(&mut grads, *x);
                    for ((a, &d), &y) in dx.iter_mut().zip(&dy).zip(&node.value) {
                        if y > T::zero() {
                            *a += d;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let dx = self.slot(&mut grads, *x);
                    for ((a, &d), &y) in dx.iter_mut().zip(&dy).zip(&node.value) {
                        *a += d * y * (T::one() - y);
                    }
                }
                Op::Tanh(x) => {
                    let dx = self.slot(&mut grads, *x);
                    for ((a, &d), &y) in dx.iter_mut().zip(&dy).zip(&node.value) {
                        *a += d * (T::one() - y * y);
                    }
                }
                Op::Reshape(x) => {
                    let dx = self.slot(&mut grads, *x);
                    for (a, &d) in dx.iter_mut().zip(&dy) {
                        *a += d;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a)[1];
                    let cb = self.shape(*b)[1];
                    {
                        let da = self.slot(&mut grads, *a);
                        for (row, src) in da.chunks_mut(ca).zip(dy.chunks(ca + cb)) {
                            for (x, &d) in row.iter_mut().zip(&src[..ca]) {
                                *x += d;
                            }
                        }
                    }
                    let db = self.slot(&mut grads, *b);
                    for (row, src) in db.chunks_mut(cb).zip(dy.chunks(ca + cb)) {
                        for (x, &d) in row.iter_mut().zip(&src[ca..]) {
                            *x += d;
                        }
                    }
                }
                Op::TimeMean(x) => {
                    let (t, q) = self.matrix_dims(*x);
                    let inv = T::one() / T::of(t as f64);
                    let dx = self.slot(&mut grads, *x);
                    for row in dx.chunks_mut(q) {
                        for (a, &d) in row.iter_mut().zip(&dy) {
                            *a += d * inv;
                        }
                    }
                }
                Op::WeightedTimeMean { w, z, den } => {
                    let q = den.len();
                    let xi = &node.value;
                    {
                        let wv = self.value(*w);
                        let dz = self.slot(&mut grads, *z);
                        for (row, wr) in dz.chunks_mut(q).zip(wv.chunks(q)) {
                            for c in 0..q {
                                row[c] += dy[c] * wr[c] / den[c];
                            }
                        }
                    }
                    let zv = self.value(*z);
                    let dw = self.slot(&mut grads, *w);
                    for (row, zr) in dw.chunks_mut(q).zip(zv.chunks(q)) {
                        for c in 0..q {
                            row[c] += dy[c] * (zr[c] - xi[c]) / den[c];
                        }
                    }
                }
                Op::Softmax(x) => {
                    let k = node.shape[1];
                    let dx = self.slot(&mut grads, *x);
                    for ((a, d), y) in dx.chunks_mut(k).zip(dy.chunks(k)).zip(node.value.chunks(k))
                    {
                        let dot: T = d.iter().zip(y).map(|(&u, &v)| u * v).sum();
                        for c in 0..k {
                            a[c] += y[c] * (d[c] - dot);
                        }
                    }
                }
                Op::Lstm {
                    x,
                    w,
                    reverse,
                    gates,
                    cells,
                } => {
                    let (t, h) = (node.shape[0], node.shape[1]);
                    let h4 = 4 * h;
                    let wv = self.value(*w);
                    let out = &node.value;
                    let mut dxg = vec![T::zero(); t * h4];
                    let mut dw = vec![T::zero(); h * h4];
                    let mut dh_next = vec![T::zero(); h];
                    let mut dc_next = vec![T::zero(); h];
                    let zeros = vec![T::zero(); h];
                    for s in (0..t).rev() {
                        let ti = if *reverse { t - 1 - s } else { s };
                        let prev = if s == 0 {
                            None
                        } else if *reverse {
                            Some(ti + 1)
                        } else {
                            Some(ti - 1)
                        };
                        let g = &gates[ti * h4..(ti + 1) * h4];
                        let c_prev = prev.map_or(&zeros[..], |p| &cells[p * h..(p + 1) * h]);
                        let h_prev = prev.map_or(&zeros[..], |p| &out[p * h..(p + 1) * h]);
                        let dg = &mut dxg[ti * h4..(ti + 1) * h4];
                        for j in 0..h {
                            let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                            let tc = cells[ti * h + j].tanh();
                            let dh = dy[ti * h + j] + dh_next[j];
                            let dc = dh * o_g * (T::one() - tc * tc) + dc_next[j];
                            dg[j] = dc * c_g * i_g * (T::one() - i_g);
                            dg[h + j] = dc * c_prev[j] * f_g * (T::one() - f_g);
                            dg[2 * h + j] = dc * i_g * (T::one() - c_g * c_g);
                            dg[3 * h + j] = dh * tc * o_g * (T::one() - o_g);
                            dc_next[j] = dc * f_g;
                        }
                        gemm(true, false, h, 1, h4, h_prev, dg, &mut dw, true);
                        gemm(false, true, 1, h4, h, dg, wv, &mut dh_next, false);
                    }
                    let dx = self.slot(&mut grads, *x);
                    for (a, &d) in dx.iter_mut().zip(&dxg) {
                        *a += d;
                    }
                    let dwv = self.slot(&mut grads, *w);
                    for (a, &d) in dwv.iter_mut().zip(&dw) {
                        *a += d;
                    }
                }
                Op::Loss { p, grad } => {
                    let dp = self.slot(&mut grads, *p);
                    for (a, &g) in dp.iter_mut().zip(grad) {
                        *a += dy[0] * g;
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let dv = self.slot(&mut grads, v);
                        for (x, &d) in dv.iter_mut().zip(&dy) {
                            *x += d;
                        }
                    }
                }
                Op::Scale(x, s) => {
                    let dx = self.slot(&mut grads, *x);
                    for (a, &d) in dx.iter_mut().zip(&dy) {
                        *a += d * *s;
                    }
                }
            }
        }
        pg
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut [T] {
        let n = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }
}
