//! Reverse-mode tape. Every operation appends a node whose inputs already
//! exist on the tape, so node order is a topological order and the backward
//! pass is a single reverse sweep.

use rand::Rng;

use super::tensor::{matmul_into, softmax_in_place, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a self-attention block: the input row is `positions`
/// feature locations of `channels` values each, projected to `reduced`
/// channels for keys, queries and values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub positions: usize,
    pub channels: usize,
    pub reduced: usize,
}

impl AttentionShape {
    pub fn width(&self) -> usize {
        self.positions * self.channels
    }
}

/// Parameters of one self-attention block as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_f: Var,
    pub w_g: Var,
    pub w_h: Var,
    pub w_v: Var,
    pub gate: Var,
}

#[derive(Debug)]
struct AttentionCache {
    x: Var,
    params: AttentionParams,
    shape: AttentionShape,
    // Per-sample buffers laid out as [batch][position][...].
    f: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    beta: Vec<f64>,
    o: Vec<f64>,
    a: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, k: f64 },
    Sum { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    Dropout { x: Var, mask: Vec<f64> },
    SelfAttention(Box<AttentionCache>),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        let n = value.len();
        self.nodes.push(Node {
            shape,
            value,
            grad: vec![0.0; n],
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor as a leaf. Gradients for leaves accumulate across
    /// repeated backward passes.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    pub fn input(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(shape.to_vec(), t.data().to_vec(), Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("tape nodes hold valid shapes")
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension {
                op,
                left: other.to_vec(),
                right: vec![],
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }))
    }

    /// `x[B×in] · wᵀ + b` with `w` shaped `[out×in]` and `b` shaped `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, inp) = self.dims2(x, "linear")?;
        let (out, win) = self.dims2(w, "linear")?;
        if inp != win || self.value(b).len() != out {
            return Err(Error::Dimension {
                op: "linear",
                left: vec![batch, inp],
                right: vec![out, win],
            });
        }
        let y = linear_rows(self.value(x), self.value(w), self.value(b), batch, inp, out);
        Ok(self.push(vec![batch, out], y, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).iter().map(|v| v * k).collect();
        self.push(self.shape(x).to_vec(), v, Op::Scale { x, k })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self
            .value(x)
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        self.push(self.shape(x).to_vec(), v, Op::LeakyRelu { x, slope })
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let v = zip_map(self.value(x), &mask, |a, m| a * m);
        self.push(self.shape(x).to_vec(), v, Op::Dropout { x, mask })
    }

    /// Self-attention over the feature locations of each row of `x`.
    ///
    /// Per row: `f = W_f x_i`, `g = W_g x_j`, `h = W_h x_i`,
    /// `s_ij = f_i · g_j`, `β_j = softmax_i(s_·j)`,
    /// `a_j = W_v Σ_i β_ji h_i`, output `x_j + gate · a_j`.
    pub fn self_attention(
        &mut self,
        x: Var,
        params: AttentionParams,
        shape: AttentionShape,
    ) -> Result<Var> {
        let (batch, width) = self.dims2(x, "self_attention")?;
        let AttentionShape {
            positions: n,
            channels: c,
            reduced: r,
        } = shape;
        if width != shape.width() {
            return Err(Error::Dimension {
                op: "self_attention",
                left: vec![batch, width],
                right: vec![n, c],
            });
        }
        for (w, want) in [
            (params.w_f, [r, c]),
            (params.w_g, [r, c]),
            (params.w_h, [r, c]),
            (params.w_v, [c, r]),
        ] {
            if self.shape(w) != want {
                return Err(Error::Dimension {
                    op: "self_attention weight",
                    left: self.shape(w).to_vec(),
                    right: want.to_vec(),
                });
            }
        }
        let gate = self.value(params.gate)[0];
        let xv = self.value(x);
        let (wf, wg, wh, wv) = (
            self.value(params.w_f),
            self.value(params.w_g),
            self.value(params.w_h),
            self.value(params.w_v),
        );

        let mut f = vec![0.0; batch * n * r];
        let mut g = vec![0.0; batch * n * r];
        let mut h = vec![0.0; batch * n * r];
        let mut beta = vec![0.0; batch * n * n];
        let mut o = vec![0.0; batch * n * r];
        let mut a = vec![0.0; batch * n * c];
        let mut out = xv.to_vec();

        for b in 0..batch {
            let xb = &xv[b * n * c..(b + 1) * n * c];
            let fb = &mut f[b * n * r..(b + 1) * n * r];
            project(xb, wf, fb, n, c, r);
            let gb = &mut g[b * n * r..(b + 1) * n * r];
            project(xb, wg, gb, n, c, r);
            let hb = &mut h[b * n * r..(b + 1) * n * r];
            project(xb, wh, hb, n, c, r);
            let (fb, gb, hb) = (
                &f[b * n * r..(b + 1) * n * r],
                &g[b * n * r..(b + 1) * n * r],
                &h[b * n * r..(b + 1) * n * r],
            );
            let betab = &mut beta[b * n * n..(b + 1) * n * n];
            let ob = &mut o[b * n * r..(b + 1) * n * r];
            for j in 0..n {
                let row = &mut betab[j * n..(j + 1) * n];
                let gj = &gb[j * r..(j + 1) * r];
                for (i, s) in row.iter_mut().enumerate() {
                    *s = dot(&fb[i * r..(i + 1) * r], gj);
                }
                softmax_in_place(row);
                let oj = &mut ob[j * r..(j + 1) * r];
                for (i, &bji) in row.iter().enumerate() {
                    for (ov, hv) in oj.iter_mut().zip(&hb[i * r..(i + 1) * r]) {
                        *ov += bji * hv;
                    }
                }
            }
            let ab = &mut a[b * n * c..(b + 1) * n * c];
            project(ob, wv, ab, n, r, c);
            let outb = &mut out[b * n * c..(b + 1) * n * c];
            for (y, av) in outb.iter_mut().zip(ab.iter()) {
                *y += gate * av;
            }
        }

        let cache = AttentionCache {
            x,
            params,
            shape,
            f,
            g,
            h,
            beta,
            o,
            a,
        };
        Ok(self.push(vec![batch, width], out, Op::SelfAttention(Box::new(cache))))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, k) = self.dims2(logits, "cross_entropy")?;
        if labels.len() != batch {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: vec![batch, k],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index {
                what: "classes",
                index: bad,
                len: k,
            });
        }
        let lv = self.value(logits);
        let mut probs = lv.to_vec();
        let mut loss = 0.0;
        for (row, &label) in labels.iter().enumerate() {
            let z = &lv[row * k..(row + 1) * k];
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - z[label];
            softmax_in_place(&mut probs[row * k..(row + 1) * k]);
        }
        let loss = loss / batch as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Propagates `d loss / d node` to every node recorded before `loss`.
    ///
    /// Intermediate gradients are recomputed on each call; leaf gradients
    /// accumulate, so calling twice doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for node in &mut self.nodes[..=loss.0] {
            if !matches!(node.op, Op::Leaf) {
                node.grad.iter_mut().for_each(|g| *g = 0.0);
            }
        }
        if matches!(self.nodes[loss.0].op, Op::Leaf) {
            self.nodes[loss.0].grad[0] += 1.0;
            return Ok(());
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            let grad = std::mem::take(&mut self.nodes[idx].grad);
            self.backprop_node(idx, &op, &grad);
            self.nodes[idx].op = op;
            self.nodes[idx].grad = grad;
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, op: &Op, dy: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).to_vec();
                let bv = self.value(*b).to_vec();
                // dA = dY · Bᵀ
                let ga = &mut self.nodes[a.0].grad;
                for i in 0..m {
                    for p in 0..k {
                        ga[i * k + p] += dot(&dy[i * n..(i + 1) * n], &bv[p * n..(p + 1) * n]);
                    }
                }
                // dB = Aᵀ · dY
                let gb = &mut self.nodes[b.0].grad;
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        for (g, d) in gb[p * n..(p + 1) * n].iter_mut().zip(&dy[i * n..(i + 1) * n]) {
                            *g += aip * d;
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (batch, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let out = self.shape(*w)[0];
                let xv = self.value(*x).to_vec();
                let wv = self.value(*w).to_vec();
                {
                    let gx = &mut self.nodes[x.0].grad;
                    for r in 0..batch {
                        let gxr = &mut gx[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let d = dy[r * out + o];
                            for (g, wv) in gxr.iter_mut().zip(&wv[o * inp..(o + 1) * inp]) {
                                *g += d * wv;
                            }
                        }
                    }
                }
                {
                    let gw = &mut self.nodes[w.0].grad;
                    for r in 0..batch {
                        let xr = &xv[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let d = dy[r * out + o];
                            for (g, xv) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                                *g += d * xv;
                            }
                        }
                    }
                }
                let gb = &mut self.nodes[b.0].grad;
                for r in 0..batch {
                    for o in 0..out {
                        gb[o] += dy[r * out + o];
                    }
                }
            }
            Op::Add { a, b } => {
                add_into(&mut self.nodes[a.0].grad, dy);
                add_into(&mut self.nodes[b.0].grad, dy);
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).to_vec();
                let bv = self.value(*b).to_vec();
                for (i, d) in dy.iter().enumerate() {
                    self.nodes[a.0].grad[i] += d * bv[i];
                    self.nodes[b.0].grad[i] += d * av[i];
                }
            }
            Op::Scale { x, k } => {
                for (g, d) in self.nodes[x.0].grad.iter_mut().zip(dy) {
                    *g += k * d;
                }
            }
            Op::Sum { x } => {
                let d = dy[0];
                self.nodes[x.0].grad.iter_mut().for_each(|g| *g += d);
            }
            Op::LeakyRelu { x, slope } => {
                let node = &mut self.nodes[x.0];
                for ((g, v), d) in node.grad.iter_mut().zip(&node.value).zip(dy) {
                    *g += if *v > 0.0 { *d } else { slope * d };
                }
            }
            Op::Dropout { x, mask } => {
                for ((g, m), d) in self.nodes[x.0].grad.iter_mut().zip(mask).zip(dy) {
                    *g += m * d;
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let scale = dy[0] / labels.len() as f64;
                let g = &mut self.nodes[logits.0].grad;
                for (row, &label) in labels.iter().enumerate() {
                    for j in 0..k {
                        let target = if j == label { 1.0 } else { 0.0 };
                        g[row * k + j] += scale * (probs[row * k + j] - target);
                    }
                }
            }
            Op::SelfAttention(cache) => self.backprop_attention(idx, cache, dy),
        }
    }

    fn backprop_attention(&mut self, idx: usize, cache: &AttentionCache, dy: &[f64]) {
        let AttentionShape {
            positions: n,
            channels: c,
            reduced: r,
        } = cache.shape;
        let p = cache.params;
        let batch = self.nodes[idx].shape[0];
        let xv = self.value(cache.x).to_vec();
        let wf = self.value(p.w_f).to_vec();
        let wg = self.value(p.w_g).to_vec();
        let wh = self.value(p.w_h).to_vec();
        let wv = self.value(p.w_v).to_vec();
        let gate = self.value(p.gate)[0];

        let mut dx = dy.to_vec();
        let mut dwf = vec![0.0; r * c];
        let mut dwg = vec![0.0; r * c];
        let mut dwh = vec![0.0; r * c];
        let mut dwv = vec![0.0; c * r];
        let mut dgate = 0.0;

        let mut da = vec![0.0; n * c];
        let mut d_o = vec![0.0; n * r];
        let mut df = vec![0.0; n * r];
        let mut dg = vec![0.0; n * r];
        let mut dh = vec![0.0; n * r];
        let mut dbeta = vec![0.0; n];

        for b in 0..batch {
            let xb = &xv[b * n * c..(b + 1) * n * c];
            let dyb = &dy[b * n * c..(b + 1) * n * c];
            let fb = &cache.f[b * n * r..(b + 1) * n * r];
            let gb = &cache.g[b * n * r..(b + 1) * n * r];
            let hb = &cache.h[b * n * r..(b + 1) * n * r];
            let betab = &cache.beta[b * n * n..(b + 1) * n * n];
            let ob = &cache.o[b * n * r..(b + 1) * n * r];
            let ab = &cache.a[b * n * c..(b + 1) * n * c];

            dgate += dot(dyb, ab);
            for (d, y) in da.iter_mut().zip(dyb) {
                *d = gate * y;
            }
            // a_j = W_v o_j
            d_o.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..n {
                for ch in 0..c {
                    let d = da[j * c + ch];
                    for q in 0..r {
                        dwv[ch * r + q] += d * ob[j * r + q];
                        d_o[j * r + q] += d * wv[ch * r + q];
                    }
                }
            }
            df.iter_mut().for_each(|v| *v = 0.0);
            dg.iter_mut().for_each(|v| *v = 0.0);
            dh.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..n {
                let bj = &betab[j * n..(j + 1) * n];
                let doj = &d_o[j * r..(j + 1) * r];
                // o_j = Σ_i β_ji h_i
                for i in 0..n {
                    dbeta[i] = dot(doj, &hb[i * r..(i + 1) * r]);
                    for (dhv, dov) in dh[i * r..(i + 1) * r].iter_mut().zip(doj) {
                        *dhv += bj[i] * dov;
                    }
                }
                // softmax over i
                let mean = dot(bj, &dbeta);
                let gj = &gb[j * r..(j + 1) * r];
                for i in 0..n {
                    let ds = bj[i] * (dbeta[i] - mean);
                    if ds == 0.0 {
                        continue;
                    }
                    for q in 0..r {
                        df[i * r + q] += ds * gj[q];
                        dg[j * r + q] += ds * fb[i * r + q];
                    }
                }
            }
            let dxb = &mut dx[b * n * c..(b + 1) * n * c];
            for (dproj, w, dw) in [
                (&df, &wf, &mut dwf),
                (&dg, &wg, &mut dwg),
                (&dh, &wh, &mut dwh),
            ] {
                for i in 0..n {
                    for q in 0..r {
                        let d = dproj[i * r + q];
                        if d == 0.0 {
                            continue;
                        }
                        for ch in 0..c {
                            dw[q * c + ch] += d * xb[i * c + ch];
                            dxb[i * c + ch] += d * w[q * c + ch];
                        }
                    }
                }
            }
        }

        add_into(&mut self.nodes[cache.x.0].grad, &dx);
        add_into(&mut self.nodes[p.w_f.0].grad, &dwf);
        add_into(&mut self.nodes[p.w_g.0].grad, &dwg);
        add_into(&mut self.nodes[p.w_h.0].grad, &dwh);
        add_into(&mut self.nodes[p.w_v.0].grad, &dwv);
        self.nodes[p.gate.0].grad[0] += dgate;
    }
}

/// `out[i] = W · x[i]` for each of `n` positions, `W` shaped `[rows×cols]`.
pub(crate) fn project(x: &[f64], w: &[f64], out: &mut [f64], n: usize, cols: usize, rows: usize) {
    for i in 0..n {
        let xi = &x[i * cols..(i + 1) * cols];
        for q in 0..rows {
            out[i * rows + q] = dot(&w[q * cols..(q + 1) * cols], xi);
        }
    }
}

#[inline]
/// Four independent partial sums, so the loop is not bound by the latency
/// of a single accumulator.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `x[batch×inp] · wᵀ + b` for `w` shaped `[out×inp]`, shared by the tape
/// and the inference path so both give bit-identical results.
pub(crate) fn linear_rows(x: &[f64], w: &[f64], b: &[f64], batch: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut wt = vec![0.0; inp * out];
    for o in 0..out {
        for p in 0..inp {
            wt[p * out + o] = w[o * inp + p];
        }
    }
    let mut y = Vec::with_capacity(batch * out);
    for r in 0..batch {
        y.extend_from_slice(b);
        let yr = &mut y[r * out..];
        for (p, &xv) in x[r * inp..(r + 1) * inp].iter().enumerate() {
            if xv != 0.0 {
                for (o, wv) in yr.iter_mut().zip(&wt[p * out..(p + 1) * out]) {
                    *o += xv * wv;
                }
            }
        }
    }
    y
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
