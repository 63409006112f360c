//! A minimal reverse-mode tape over 2-D matrices.
//!
//! Only the operations the encoder-decoder needs are provided; batched
//! sequences are laid out as `batch * len` rows. Parameter leaves borrow the
//! parameter storage instead of copying it.

use super::tensor::{matmul_acc, matmul_at_acc, Mat, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Shape of a batched attention call.
#[derive(Debug, Clone)]
pub struct AttnLayout {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    /// `batch * k_len` flags; padded keys are never attended to.
    pub key_valid: Vec<bool>,
    /// Query `i` may only see keys `j <= i`.
    pub causal: bool,
}

/// One weighted cross-entropy term: `weight * -log softmax(logits[row])[class]`.
#[derive(Debug, Clone, Copy)]
pub struct CeTarget<F> {
    pub row: usize,
    pub class: usize,
    pub weight: F,
}

enum Op<F> {
    Const,
    Param(usize),
    Gather { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    MatMul { a: Var, b: Var, trans_b: bool },
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<F> },
    Gelu(Var),
    Dropout { x: Var, mask: Vec<F> },
    Attention { q: Var, k: Var, v: Var, layout: AttnLayout, probs: Vec<F> },
    SelectRows { x: Var, rows: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<CeTarget<F>>, lse: Vec<F> },
    WeightedSum(Vec<(Var, F)>),
}

struct Node<F> {
    value: Option<Mat<F>>,
    op: Op<F>,
}

pub struct Tape<'p, F> {
    params: &'p [Mat<F>],
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
}

pub const RMS_EPS: f64 = 1e-6;

impl<'p, F: Scalar> Tape<'p, F> {
    pub fn new(params: &'p [Mat<F>]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    fn push(&mut self, value: Mat<F>, op: Op<F>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat<F> {
        match &self.nodes[v.0] {
            Node {
                op: Op::Param(i), ..
            } => &self.params[*i],
            Node { value, .. } => value.as_ref().expect("non-param node has a value"),
        }
    }

    pub fn constant(&mut self, m: Mat<F>) -> Var {
        self.push(m, Op::Const)
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(index),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let t = self.value(table);
        let d = t.cols;
        let mut out = Mat::zeros(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Gather { table, ids })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// `a · b` (or `a · bᵀ` when `trans_b`).
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        let (k, n) = if trans_b { (bm.cols, bm.rows) } else { (bm.rows, bm.cols) };
        assert_eq!(am.cols, k, "matmul inner dimension");
        let mut out = Mat::zeros(am.rows, n);
        matmul_acc(&am.data, am.rows, am.cols, &bm.data, bm.rows, bm.cols, trans_b, &mut out.data);
        self.push(out, Op::MatMul { a, b, trans_b })
    }

    /// Row-wise `x / rms(x) * gain` with `gain` of shape `1 × d`.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Var {
        let (xm, g) = (self.value(x), self.value(gain));
        let d = xm.cols;
        let eps = F::from_f64(RMS_EPS);
        let mut out = Mat::zeros(xm.rows, d);
        let mut inv_rms = Vec::with_capacity(xm.rows);
        for r in 0..xm.rows {
            let row = xm.row(r);
            let ms = row.iter().map(|&v| v * v).sum::<F>() / F::from_f64(d as f64);
            let inv = (ms + eps).sqrt().recip();
            inv_rms.push(inv);
            for ((o, &v), &gv) in out.row_mut(r).iter_mut().zip(row).zip(&g.data) {
                *o = v * inv * gv;
            }
        }
        self.push(out, Op::RmsNorm { x, gain, inv_rms })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let data = xm.data.iter().map(|&v| gelu(v)).collect();
        let out = Mat::from_vec(xm.rows, xm.cols, data);
        self.push(out, Op::Gelu(x))
    }

    /// Multiplies elementwise by a fixed mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, mask: Vec<F>) -> Var {
        let xm = self.value(x);
        assert_eq!(mask.len(), xm.data.len());
        let data = xm.data.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Mat::from_vec(xm.rows, xm.cols, data);
        self.push(out, Op::Dropout { x, mask })
    }

    /// Scaled dot-product attention over `layout.heads` heads.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttnLayout) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.cols;
        let h = layout.heads;
        assert_eq!(d % h, 0);
        assert_eq!(qm.rows, layout.batch * layout.q_len);
        assert_eq!(km.rows, layout.batch * layout.k_len);
        let dh = d / h;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let (lq, lk) = (layout.q_len, layout.k_len);
        let mut probs = vec![F::zero(); layout.batch * h * lq * lk];
        let mut out = Mat::zeros(qm.rows, d);
        let mut scores = vec![F::zero(); lk];
        for m in 0..layout.batch {
            for head in 0..h {
                let off = head * dh;
                for i in 0..lq {
                    let qrow = &qm.row(m * lq + i)[off..off + dh];
                    let mut max = F::neg_infinity();
                    for (j, s) in scores.iter_mut().enumerate() {
                        if layout.key_valid[m * lk + j] && !(layout.causal && j > i) {
                            let krow = &km.row(m * lk + j)[off..off + dh];
                            let dot: F = qrow.iter().zip(krow).map(|(&a, &b)| a * b).sum();
                            *s = dot * scale;
                            if *s > max {
                                max = *s;
                            }
                        } else {
                            *s = F::neg_infinity();
                        }
                    }
                    if max == F::neg_infinity() {
                        continue;
                    }
                    let p = &mut probs[((m * h + head) * lq + i) * lk..][..lk];
                    let mut z = F::zero();
                    for (pj, &s) in p.iter_mut().zip(&scores) {
                        *pj = if s == F::neg_infinity() { F::zero() } else { (s - max).exp() };
                        z += *pj;
                    }
                    for pj in p.iter_mut() {
                        *pj = *pj / z;
                    }
                    let orow = &mut out.data[(m * lq + i) * d + off..][..dh];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj != F::zero() {
                            let vrow = &vm.row(m * lk + j)[off..off + dh];
                            for (o, &vv) in orow.iter_mut().zip(vrow) {
                                *o += pj * vv;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
        )
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let xm = self.value(x);
        let mut out = Mat::zeros(rows.len(), xm.cols);
        for (r, &src) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xm.row(src));
        }
        self.push(out, Op::SelectRows { x, rows })
    }

    /// `Σ weight * -log softmax(logits[row])[class]` as a `1 × 1` value.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<CeTarget<F>>) -> Var {
        let lm = self.value(logits);
        let mut total = F::zero();
        let mut lse = Vec::with_capacity(targets.len());
        for t in &targets {
            let row = lm.row(t.row);
            let l = log_sum_exp(row);
            lse.push(l);
            total += t.weight * (l - row[t.class]);
        }
        self.push(Mat::from_vec(1, 1, vec![total]), Op::CrossEntropy { logits, targets, lse })
    }

    /// `Σ w_i * x_i` over `1 × 1` values.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, F)>) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.value(v).data[0]).sum();
        self.push(Mat::from_vec(1, 1, vec![total]), Op::WeightedSum(terms))
    }

    /// Back-propagates from the scalar `root`; returns one gradient slot per
    /// parameter (None when the parameter did not take part).
    pub fn backward(&self, root: Var) -> Vec<Option<Mat<F>>> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat<F>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Mat::from_vec(1, 1, vec![F::one()]));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Const => {}
                Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Gather { table, ids } => {
                    let gt = self.grad_slot(&mut grads, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, &b) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.grad_slot(&mut grads, *a).add_assign(&g);
                    self.grad_slot(&mut grads, *b).add_assign(&g);
                }
                Op::MatMul { a, b, trans_b } => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    {
                        // dA = G · op(B)ᵀ
                        let ga = self.grad_slot(&mut grads, *a);
                        matmul_acc(&g.data, g.rows, g.cols, &bm.data, bm.rows, bm.cols, !*trans_b, &mut ga.data);
                    }
                    let gb = self.grad_slot(&mut grads, *b);
                    if *trans_b {
                        // dB = Gᵀ · A
                        matmul_at_acc(&g.data, g.rows, g.cols, &am.data, am.cols, &mut gb.data);
                    } else {
                        // dB = Aᵀ · G
                        matmul_at_acc(&am.data, am.rows, am.cols, &g.data, g.cols, &mut gb.data);
                    }
                }
                Op::RmsNorm { x, gain, inv_rms } => {
                    let (xm, gm) = (self.value(*x), self.value(*gain));
                    let d = xm.cols;
                    let inv_d = F::from_f64(1.0 / d as f64);
                    {
                        let ggain = self.grad_slot(&mut grads, *gain);
                        for r in 0..xm.rows {
                            for ((gg, &gy), &xv) in ggain.data.iter_mut().zip(g.row(r)).zip(xm.row(r)) {
                                *gg += gy * xv * inv_rms[r];
                            }
                        }
                    }
                    let gx = self.grad_slot(&mut grads, *x);
                    for r in 0..xm.rows {
                        let inv = inv_rms[r];
                        let xr = xm.row(r);
                        let gr = g.row(r);
                        let dot: F = gr.iter().zip(&gm.data).zip(xr).map(|((&gy, &gv), &xv)| gy * gv * xv).sum();
                        let coeff = inv * inv * inv * dot * inv_d;
                        for (((o, &gy), &gv), &xv) in gx.row_mut(r).iter_mut().zip(gr).zip(&gm.data).zip(xr) {
                            *o += inv * gy * gv - xv * coeff;
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xm = self.value(*x);
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((o, &gy), &xv) in gx.data.iter_mut().zip(&g.data).zip(&xm.data) {
                        *o += gy * gelu_grad(xv);
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((o, &gy), &mv) in gx.data.iter_mut().zip(&g.data).zip(mask) {
                        *o += gy * mv;
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    layout,
                    probs,
                } => self.attention_backward(&mut grads, &g, *q, *k, *v, layout, probs),
                Op::SelectRows { x, rows } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for (r, &src) in rows.iter().enumerate() {
                        for (a, &b) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, lse } => {
                    let lm = self.value(*logits);
                    let up = g.data[0];
                    let gl = self.grad_slot(&mut grads, *logits);
                    for (t, &l) in targets.iter().zip(lse) {
                        if t.weight == F::zero() {
                            continue;
                        }
                        let w = t.weight * up;
                        for (o, &z) in gl.row_mut(t.row).iter_mut().zip(lm.row(t.row)) {
                            *o += w * (z - l).exp();
                        }
                        gl.data[t.row * gl.cols + t.class] -= w;
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        let gv = self.grad_slot(&mut grads, v);
                        gv.data[0] += w * g.data[0];
                    }
                }
            }
        }
        self.param_vars
            .iter()
            .map(|pv| pv.and_then(|v| grads[v.0].take()))
            .collect()
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Mat<F>>], v: Var) -> &'g mut Mat<F> {
        let shape = {
            let m = self.value(v);
            (m.rows, m.cols)
        };
        grads[v.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1))
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        grads: &mut [Option<Mat<F>>],
        g: &Mat<F>,
        q: Var,
        k: Var,
        v: Var,
        layout: &AttnLayout,
        probs: &[F],
    ) {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.cols;
        let h = layout.heads;
        let dh = d / h;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let (lq, lk) = (layout.q_len, layout.k_len);
        let mut gq = Mat::zeros(qm.rows, d);
        let mut gk = Mat::zeros(km.rows, d);
        let mut gv = Mat::zeros(vm.rows, d);
        let mut dp = vec![F::zero(); lk];
        for m in 0..layout.batch {
            for head in 0..h {
                let off = head * dh;
                for i in 0..lq {
                    let p = &probs[((m * h + head) * lq + i) * lk..][..lk];
                    let go = &g.row(m * lq + i)[off..off + dh];
                    let mut sum = F::zero();
                    for (j, (dpj, &pj)) in dp.iter_mut().zip(p).enumerate() {
                        if pj == F::zero() {
                            *dpj = F::zero();
                            continue;
                        }
                        let vrow = &vm.row(m * lk + j)[off..off + dh];
                        *dpj = go.iter().zip(vrow).map(|(&a, &b)| a * b).sum();
                        sum += pj * *dpj;
                        let gvrow = &mut gv.data[(m * lk + j) * d + off..][..dh];
                        for (o, &a) in gvrow.iter_mut().zip(go) {
                            *o += pj * a;
                        }
                    }
                    let qrow = &qm.row(m * lq + i)[off..off + dh];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj == F::zero() {
                            continue;
                        }
                        let ds = pj * (dp[j] - sum) * scale;
                        let krow = &km.row(m * lk + j)[off..off + dh];
                        let gqrow = &mut gq.data[(m * lq + i) * d + off..][..dh];
                        for (o, &kv) in gqrow.iter_mut().zip(krow) {
                            *o += ds * kv;
                        }
                        let gkrow = &mut gk.data[(m * lk + j) * d + off..][..dh];
                        for (o, &qv) in gkrow.iter_mut().zip(qrow) {
                            *o += ds * qv;
                        }
                    }
                }
            }
        }
        self.grad_slot(grads, q).add_assign(&gq);
        self.grad_slot(grads, k).add_assign(&gk);
        self.grad_slot(grads, v).add_assign(&gv);
    }
}

fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    max + row.iter().map(|&z| (z - max).exp()).sum::<F>().ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (F::one() + F::from_f64(3.0) * a * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * dinner
}
