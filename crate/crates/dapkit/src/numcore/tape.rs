use crate::error::{DapError, Result};
use crate::numcore::tensor::Tensor;

/// Handle to a value recorded on a [`DiffContext`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type Vjp = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    vjp: Option<Vjp>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Grads {
    inner: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.inner.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Records primitive applications as a DAG from leaves to a scalar output,
/// then replays the chain rule in reverse. One context per forward/backward
/// pass; confined to a single logical thread.
pub struct DiffContext {
    nodes: Vec<Node>,
}

impl Default for DiffContext {
    fn default() -> Self {
        Self::new()
    }
}

// ---- raw matmul kernels (row-major slices) ----

pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,k2] = a[m,n] * b[k2,n]^T
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k2: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k2 {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            out[i * k2 + j] = s;
        }
    }
}

/// out[k,n] = a[m,k]^T * b[m,n]
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn softmax_last(x: &[f64], n: usize, out: &mut [f64]) {
    for (xr, or) in x.chunks(n).zip(out.chunks_mut(n)) {
        let mx = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - mx).exp();
            z += *o;
        }
        for o in or.iter_mut() {
            *o /= z;
        }
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln()
}

// GELU, tanh approximation (BERT-style):
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_val(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl DiffContext {
    pub fn new() -> Self {
        DiffContext { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, vjp: Option<Vjp>) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            vjp,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (parameter or intermediate seed).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None)
    }

    /// Non-differentiable input; identical to `leaf`, named for intent.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None)
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(DapError::Shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.clone()])),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|x| x * c).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let d: Vec<f64> = g.data().iter().map(|x| x * c).collect();
                vec![Tensor::new(g.shape().to_vec(), d).unwrap()]
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        if ta.shape() != tb.shape() {
            return Err(DapError::Shape(format!(
                "mul: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                let da: Vec<f64> = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                vec![
                    Tensor::new(g.shape().to_vec(), da).unwrap(),
                    Tensor::new(g.shape().to_vec(), db).unwrap(),
                ]
            })),
        ))
    }

    /// Elementwise add of a fixed tensor (no gradient through `t`).
    pub fn add_const(&mut self, a: Var, t: &Tensor) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape() != t.shape() {
            return Err(DapError::Shape(format!(
                "add_const: {:?} vs {:?}",
                ta.shape(),
                t.shape()
            )));
        }
        let data: Vec<f64> = ta.data().iter().zip(t.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(|g: &Tensor| vec![g.clone()])),
        ))
    }

    /// Elementwise multiply by a fixed tensor (no gradient through `t`).
    pub fn mul_const(&mut self, a: Var, t: &Tensor) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape() != t.shape() {
            return Err(DapError::Shape(format!(
                "mul_const: {:?} vs {:?}",
                ta.shape(),
                t.shape()
            )));
        }
        let data: Vec<f64> = ta.data().iter().zip(t.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let tc = t.clone();
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let d: Vec<f64> = g.data().iter().zip(tc.data()).map(|(x, y)| x * y).collect();
                vec![Tensor::new(g.shape().to_vec(), d).unwrap()]
            })),
        ))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a).clone();
        let data: Vec<f64> = ta.data().iter().map(|&x| gelu_val(x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(&gv, &xv)| gv * gelu_grad(xv))
                    .collect();
                vec![Tensor::new(g.shape().to_vec(), d).unwrap()]
            })),
        )
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let orig = self.value(a).shape().to_vec();
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g.reshape(orig.clone()).unwrap()]
            })),
        ))
    }

    /// Transpose the last two axes (rank 2 or 3).
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let r = ta.rank();
        if r != 2 && r != 3 {
            return Err(DapError::Shape(format!(
                "transpose: rank {} unsupported",
                r
            )));
        }
        let (bsz, m, n) = if r == 2 {
            (1, ta.shape()[0], ta.shape()[1])
        } else {
            (ta.shape()[0], ta.shape()[1], ta.shape()[2])
        };
        let mut data = vec![0.0; ta.len()];
        for b in 0..bsz {
            let src = &ta.data()[b * m * n..(b + 1) * m * n];
            let dst = &mut data[b * m * n..(b + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        let shape = if r == 2 {
            vec![n, m]
        } else {
            vec![bsz, n, m]
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                // gradient of transpose is transpose
                let mut d = vec![0.0; g.len()];
                for b in 0..bsz {
                    let src = &g.data()[b * m * n..(b + 1) * m * n];
                    let dst = &mut d[b * m * n..(b + 1) * m * n];
                    for j in 0..n {
                        for i in 0..m {
                            dst[i * n + j] = src[j * m + i];
                        }
                    }
                }
                let shape = if r == 2 {
                    vec![m, n]
                } else {
                    vec![bsz, m, n]
                };
                vec![Tensor::new(shape, d).unwrap()]
            })),
        ))
    }

    /// Slice `len` entries of the last axis starting at `off` (rank 2 or 3).
    pub fn slice_cols(&mut self, a: Var, off: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let r = ta.rank();
        let d = ta.shape()[r - 1];
        if off + len > d {
            return Err(DapError::Shape(format!(
                "slice_cols: {}+{} > {}",
                off, len, d
            )));
        }
        let rows = ta.len() / d;
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&ta.data()[i * d + off..i * d + off + len]);
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let full = ta.shape().to_vec();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut dd = vec![0.0; rows * d];
                for i in 0..rows {
                    dd[i * d + off..i * d + off + len]
                        .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                vec![Tensor::new(full.clone(), dd).unwrap()]
            })),
        ))
    }

    /// Concatenate along the last axis (all inputs same leading shape).
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(DapError::Contract("concat_cols: empty input".into()));
        }
        let lead: Vec<usize> = {
            let s = self.value(parts[0]).shape();
            s[..s.len() - 1].to_vec()
        };
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(DapError::Shape("concat_cols: leading dims differ".into()));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..rows {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead.clone();
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        let widths2 = widths.clone();
        Ok(self.push(
            out,
            parts.to_vec(),
            Some(Box::new(move |g: &Tensor| {
                let mut grads = Vec::with_capacity(widths2.len());
                let mut off = 0;
                for &w in &widths2 {
                    let mut d = vec![0.0; rows * w];
                    for i in 0..rows {
                        d[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * total + off..i * total + off + w]);
                    }
                    let mut shape = lead.clone();
                    shape.push(w);
                    grads.push(Tensor::new(shape, d).unwrap());
                    off += w;
                }
                grads
            })),
        ))
    }

    /// Stack rank-2 tensors along axis 0 (row concatenation).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(DapError::Contract("concat_rows: empty input".into()));
        }
        let n = self.value(parts[0]).shape()[1];
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.shape()[1] != n {
                return Err(DapError::Shape(format!(
                    "concat_rows: incompatible shape {:?}",
                    t.shape()
                )));
            }
            row_counts.push(t.shape()[0]);
            data.extend_from_slice(t.data());
        }
        let m: usize = row_counts.iter().sum();
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            out,
            parts.to_vec(),
            Some(Box::new(move |g: &Tensor| {
                let mut grads = Vec::with_capacity(row_counts.len());
                let mut off = 0;
                for &rc in &row_counts {
                    let d = g.data()[off * n..(off + rc) * n].to_vec();
                    grads.push(Tensor::new(vec![rc, n], d).unwrap());
                    off += rc;
                }
                grads
            })),
        ))
    }

    /// Concatenate two rank-3 tensors along axis 1.
    pub fn concat_axis1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 3 || tb.rank() != 3 {
            return Err(DapError::Shape("concat_axis1: rank-3 required".into()));
        }
        let (bsz, m, d) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let (bsz2, n, d2) = (tb.shape()[0], tb.shape()[1], tb.shape()[2]);
        if bsz != bsz2 || d != d2 {
            return Err(DapError::Shape(format!(
                "concat_axis1: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut data = Vec::with_capacity(bsz * (m + n) * d);
        for i in 0..bsz {
            data.extend_from_slice(&ta.data()[i * m * d..(i + 1) * m * d]);
            data.extend_from_slice(&tb.data()[i * n * d..(i + 1) * n * d]);
        }
        let out = Tensor::new(vec![bsz, m + n, d], data)?;
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                let mut da = vec![0.0; bsz * m * d];
                let mut db = vec![0.0; bsz * n * d];
                let stride = (m + n) * d;
                for i in 0..bsz {
                    da[i * m * d..(i + 1) * m * d]
                        .copy_from_slice(&g.data()[i * stride..i * stride + m * d]);
                    db[i * n * d..(i + 1) * n * d]
                        .copy_from_slice(&g.data()[i * stride + m * d..(i + 1) * stride]);
                }
                vec![
                    Tensor::new(vec![bsz, m, d], da).unwrap(),
                    Tensor::new(vec![bsz, n, d], db).unwrap(),
                ]
            })),
        ))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(DapError::Shape(format!(
                "matmul: rank-2 required, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(DapError::Shape(format!(
                "matmul: inner dims disagree: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut data = vec![0.0; m * n];
        mm_nn(ta.data(), tb.data(), m, k, n, &mut data);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                let mut da = vec![0.0; m * k];
                mm_nt(g.data(), tb.data(), m, n, k, &mut da);
                let mut db = vec![0.0; k * n];
                mm_tn(ta.data(), g.data(), m, k, n, &mut db);
                vec![
                    Tensor::new(vec![m, k], da).unwrap(),
                    Tensor::new(vec![k, n], db).unwrap(),
                ]
            })),
        ))
    }

    /// Batched matmul over rank-3 tensors: [B,m,k] x [B,k,n] -> [B,m,n].
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        if ta.rank() != 3 || tb.rank() != 3 {
            return Err(DapError::Shape("bmm: rank-3 required".into()));
        }
        let (bsz, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let (bsz2, k2, n) = (tb.shape()[0], tb.shape()[1], tb.shape()[2]);
        if bsz != bsz2 || k != k2 {
            return Err(DapError::Shape(format!(
                "bmm: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut data = vec![0.0; bsz * m * n];
        for i in 0..bsz {
            mm_nn(
                &ta.data()[i * m * k..(i + 1) * m * k],
                &tb.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut data[i * m * n..(i + 1) * m * n],
            );
        }
        let out = Tensor::new(vec![bsz, m, n], data)?;
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                let mut da = vec![0.0; bsz * m * k];
                let mut db = vec![0.0; bsz * k * n];
                for i in 0..bsz {
                    let gi = &g.data()[i * m * n..(i + 1) * m * n];
                    mm_nt(
                        gi,
                        &tb.data()[i * k * n..(i + 1) * k * n],
                        m,
                        n,
                        k,
                        &mut da[i * m * k..(i + 1) * m * k],
                    );
                    mm_tn(
                        &ta.data()[i * m * k..(i + 1) * m * k],
                        gi,
                        m,
                        k,
                        n,
                        &mut db[i * k * n..(i + 1) * k * n],
                    );
                }
                vec![
                    Tensor::new(vec![bsz, m, k], da).unwrap(),
                    Tensor::new(vec![bsz, k, n], db).unwrap(),
                ]
            })),
        ))
    }

    // ---- broadcast adds ----

    /// a[..., d] + bias[d].
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let d = *ta.shape().last().unwrap();
        if tb.shape() != [d] {
            return Err(DapError::Shape(format!(
                "add_bias: bias {:?} vs last dim {}",
                tb.shape(),
                d
            )));
        }
        let rows = ta.len() / d;
        let mut data = Vec::with_capacity(ta.len());
        for i in 0..rows {
            for j in 0..d {
                data.push(ta.data()[i * d + j] + tb.data()[j]);
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            vec![a, bias],
            Some(Box::new(move |g: &Tensor| {
                let mut db = vec![0.0; d];
                for i in 0..rows {
                    for j in 0..d {
                        db[j] += g.data()[i * d + j];
                    }
                }
                vec![g.clone(), Tensor::new(vec![d], db).unwrap()]
            })),
        ))
    }

    /// a[B, ...] + p[...] broadcast over axis 0.
    pub fn add_bcast0(&mut self, a: Var, p: Var) -> Result<Var> {
        let (ta, tp) = (self.value(a), self.value(p));
        if ta.shape()[1..] != *tp.shape() {
            return Err(DapError::Shape(format!(
                "add_bcast0: {:?} vs {:?}",
                ta.shape(),
                tp.shape()
            )));
        }
        let bsz = ta.shape()[0];
        let inner = tp.len();
        let mut data = Vec::with_capacity(ta.len());
        for i in 0..bsz {
            for j in 0..inner {
                data.push(ta.data()[i * inner + j] + tp.data()[j]);
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let pshape = tp.shape().to_vec();
        Ok(self.push(
            out,
            vec![a, p],
            Some(Box::new(move |g: &Tensor| {
                let mut dp = vec![0.0; inner];
                for i in 0..bsz {
                    for j in 0..inner {
                        dp[j] += g.data()[i * inner + j];
                    }
                }
                vec![g.clone(), Tensor::new(pshape.clone(), dp).unwrap()]
            })),
        ))
    }

    // ---- lookup / selection ----

    /// Gather rows of a rank-2 table; differentiable into the table
    /// (scatter-add on the way back). Serves embedding lookup.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(DapError::Shape("gather_rows: rank-2 table required".into()));
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(DapError::Index(format!(
                "gather_rows: index {} out of range 0..{}",
                bad, v
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&tt.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(vec![indices.len(), d], data)?;
        let idx = indices.to_vec();
        Ok(self.push(
            out,
            vec![table],
            Some(Box::new(move |g: &Tensor| {
                let mut dt = vec![0.0; v * d];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] += g.data()[r * d + j];
                    }
                }
                vec![Tensor::new(vec![v, d], dt).unwrap()]
            })),
        ))
    }

    // ---- normalization / activations over the last axis ----

    /// Row softmax over the last axis with max-subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() < 1 {
            return Err(DapError::Shape("softmax_rows: rank >= 1 required".into()));
        }
        let n = *ta.shape().last().unwrap();
        let mut data = vec![0.0; ta.len()];
        softmax_last(ta.data(), n, &mut data);
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let y = out.clone();
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut d = vec![0.0; g.len()];
                for ((grow, yrow), drow) in g
                    .data()
                    .chunks(n)
                    .zip(y.data().chunks(n))
                    .zip(d.chunks_mut(n))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(&gv, &yv)| gv * yv).sum();
                    for ((dv, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *dv = yv * (gv - dot);
                    }
                }
                vec![Tensor::new(g.shape().to_vec(), d).unwrap()]
            })),
        ))
    }

    /// Scale each row (last axis) to unit L2 norm. Errors on a zero row.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() < 1 {
            return Err(DapError::Shape("normalize_rows: rank >= 1 required".into()));
        }
        let n = *ta.shape().last().unwrap();
        let mut data = vec![0.0; ta.len()];
        let mut norms = Vec::with_capacity(ta.len() / n);
        for (row, out) in ta.data().chunks(n).zip(data.chunks_mut(n)) {
            let r = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
            if r == 0.0 {
                return Err(DapError::Numeric(format!(
                    "normalize_rows: zero-norm row {}",
                    norms.len()
                )));
            }
            for (o, &v) in out.iter_mut().zip(row) {
                *o = v / r;
            }
            norms.push(r);
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let y = out.clone();
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let mut d = vec![0.0; g.len()];
                for (i, ((grow, yrow), drow)) in g
                    .data()
                    .chunks(n)
                    .zip(y.data().chunks(n))
                    .zip(d.chunks_mut(n))
                    .enumerate()
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(&gv, &yv)| gv * yv).sum();
                    let r = norms[i];
                    for ((dv, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *dv = (gv - yv * dot) / r;
                    }
                }
                vec![Tensor::new(g.shape().to_vec(), d).unwrap()]
            })),
        ))
    }

    /// Layer normalization over the last axis with affine gain/bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x).clone(), self.value(gain).clone(), self.value(bias));
        let d = *tx.shape().last().unwrap();
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(DapError::Shape(format!(
                "layer_norm: gain/bias must be [{}], got {:?}/{:?}",
                d,
                tg.shape(),
                tb.shape()
            )));
        }
        if eps <= 0.0 {
            return Err(DapError::Contract("layer_norm: eps must be > 0".into()));
        }
        let rows = tx.len() / d;
        let mut data = vec![0.0; tx.len()];
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_sigma = vec![0.0; rows];
        for i in 0..rows {
            let xr = &tx.data()[i * d..(i + 1) * d];
            let mu: f64 = xr.iter().sum::<f64>() / d as f64;
            let var: f64 = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_sigma[i] = is;
            for j in 0..d {
                let h = (xr[j] - mu) * is;
                xhat[i * d + j] = h;
                data[i * d + j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let xshape = tx.shape().to_vec();
        Ok(self.push(
            out,
            vec![x, gain, bias],
            Some(Box::new(move |g: &Tensor| {
                let mut dx = vec![0.0; g.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for i in 0..rows {
                    let gr = &g.data()[i * d..(i + 1) * d];
                    let hr = &xhat[i * d..(i + 1) * d];
                    let mut m1 = 0.0; // mean of gain*g
                    let mut m2 = 0.0; // mean of gain*g*xhat
                    for j in 0..d {
                        let gg = tg.data()[j] * gr[j];
                        m1 += gg;
                        m2 += gg * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        let gg = tg.data()[j] * gr[j];
                        dx[i * d + j] = (gg - m1 - hr[j] * m2) * inv_sigma[i];
                    }
                }
                vec![
                    Tensor::new(xshape.clone(), dx).unwrap(),
                    Tensor::new(vec![d], dgain).unwrap(),
                    Tensor::new(vec![d], dbias).unwrap(),
                ]
            })),
        ))
    }

    // ---- reductions / losses ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let s: f64 = ta.data().iter().sum();
        let shape = ta.shape().to_vec();
        self.push(
            Tensor::scalar(s),
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let gv = g.data()[0];
                vec![Tensor::filled(shape.clone(), gv)]
            })),
        )
    }

    /// Mean over rows of -log softmax(logits_i)[target_i]; log-sum-exp stable.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let n = targets.len();
        let w = vec![1.0 / n as f64; n];
        self.cross_entropy_weighted(logits, targets, &w)
    }

    /// Weighted sum of per-row negative log likelihoods.
    pub fn cross_entropy_weighted(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let tl = self.value(logits).clone();
        if tl.rank() != 2 {
            return Err(DapError::Shape("cross_entropy: rank-2 logits required".into()));
        }
        let (n, v) = (tl.shape()[0], tl.shape()[1]);
        if targets.len() != n || weights.len() != n {
            return Err(DapError::Shape(format!(
                "cross_entropy: {} rows, {} targets, {} weights",
                n,
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(DapError::Index(format!(
                "cross_entropy: target {} out of range 0..{}",
                bad, v
            )));
        }
        let mut loss = 0.0;
        for i in 0..n {
            let row = tl.row(i);
            loss += weights[i] * (log_sum_exp(row) - row[targets[i]]);
        }
        let tgt = targets.to_vec();
        let w = weights.to_vec();
        Ok(self.push(
            Tensor::scalar(loss),
            vec![logits],
            Some(Box::new(move |g: &Tensor| {
                let gv = g.data()[0];
                let mut d = vec![0.0; n * v];
                let mut sm = vec![0.0; n * v];
                softmax_last(tl.data(), v, &mut sm);
                for i in 0..n {
                    let wi = w[i] * gv;
                    for j in 0..v {
                        d[i * v + j] = wi * sm[i * v + j];
                    }
                    d[i * v + tgt[i]] -= wi;
                }
                vec![Tensor::new(vec![n, v], d).unwrap()]
            })),
        ))
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar output. Visits each recorded node
    /// at most once; returns per-Var gradients.
    pub fn backward(&self, out: Var) -> Result<Grads> {
        if !self.value(out).is_scalar() {
            return Err(DapError::Contract(format!(
                "backward: output must be scalar, got shape {:?}",
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            if let Some(vjp) = &node.vjp {
                let gt = Tensor::new(node.value.shape().to_vec(), g.clone())?;
                let pgrads = vjp(&gt);
                debug_assert_eq!(pgrads.len(), node.parents.len());
                for (pv, pg) in node.parents.iter().zip(pgrads) {
                    match &mut grads[pv.0] {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(pg.data()) {
                                *a += b;
                            }
                        }
                        slot => *slot = Some(pg.data().to_vec()),
                    }
                }
            }
            grads[i] = Some(g);
        }
        let inner = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g).unwrap())
            })
            .collect();
        Ok(Grads { inner })
    }
}
