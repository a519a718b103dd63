//! Transformer building blocks with explicit forward caches and backward
//! passes. Gradients accumulate into a parameter struct of the same type.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;
use crate::tensor::{gemm, Mat, Tensor};

pub const LN_EPS: f64 = 1e-6;
pub const INIT_STD: f64 = 0.02;

/// Normal(0, σ) truncated to ±2σ by resampling.
pub fn trunc_normal<F: Real, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<F> {
    let normal = Normal::new(0.0, std).expect("valid std");
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * std {
                break F::lit(x);
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Visits every named parameter tensor in a stable order.
pub trait Params<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>));
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    #[inline]
    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Gelu => F::lit(0.5) * x * (F::one() + (x * F::lit(INV_SQRT_2)).erf()),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative<F: Real>(self, x: F) -> F {
        match self {
            Activation::Gelu => {
                let cdf = F::lit(0.5) * (F::one() + (x * F::lit(INV_SQRT_2)).erf());
                let pdf = F::lit(INV_SQRT_2PI) * (-F::lit(0.5) * x * x).exp();
                cdf + x * pdf
            }
            Activation::Identity => F::one(),
        }
    }
}

/// `y = x·W + b` with `W: in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Real> Linear<F> {
    pub fn init<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Linear {
            weight: trunc_normal(rng, &[input, output], INIT_STD),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn forward(&self, x: &Mat<F>) -> Mat<F> {
        let n = self.output_dim();
        let mut y = Mat::zeros(x.rows, n);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias.data);
        }
        gemm(x.rows, n, x.cols, F::one(), &x.data, x.cols, false, &self.weight.data, n, false, F::one(), &mut y.data, n);
        y
    }

    /// Accumulates weight/bias gradients; returns `∂L/∂x` when asked.
    pub fn backward(&self, x: &Mat<F>, dy: &Mat<F>, grad: &mut Linear<F>, need_dx: bool) -> Option<Mat<F>> {
        let (i, o) = (self.input_dim(), self.output_dim());
        gemm(i, o, x.rows, F::one(), &x.data, i, true, &dy.data, o, false, F::one(), &mut grad.weight.data, o);
        for r in 0..dy.rows {
            for (g, &d) in grad.bias.data.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        need_dx.then(|| {
            let mut dx = Mat::zeros(dy.rows, i);
            gemm(dy.rows, i, o, F::one(), &dy.data, o, false, &self.weight.data, o, true, F::zero(), &mut dx.data, i);
            dx
        })
    }
}

impl<F> Params<F> for Linear<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    xhat: Mat<F>,
    rstd: Vec<F>,
}

impl<F: Real> LayerNorm<F> {
    pub fn init(dim: usize) -> Self {
        LayerNorm {
            weight: Tensor::filled(&[dim], F::one()),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        LayerNorm {
            weight: Tensor::zeros(&[dim]),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn forward(&self, x: &Mat<F>) -> (Mat<F>, LayerNormCache<F>) {
        let d = x.cols;
        let inv_d = F::one() / F::lit(d as f64);
        let eps = F::lit(LN_EPS);
        let mut xhat = Mat::zeros(x.rows, d);
        let mut y = Mat::zeros(x.rows, d);
        let mut rstd = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
            let rs = F::one() / (var + eps).sqrt();
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for (o, &v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
            let yr = &mut y.data[r * d..(r + 1) * d];
            for j in 0..d {
                yr[j] = xhat.data[r * d + j] * self.weight.data[j] + self.bias.data[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LayerNormCache<F>, dy: &Mat<F>, grad: &mut LayerNorm<F>) -> Mat<F> {
        let d = dy.cols;
        let inv_d = F::one() / F::lit(d as f64);
        let mut dx = Mat::zeros(dy.rows, d);
        let mut dxhat = vec![F::zero(); d];
        for r in 0..dy.rows {
            let g = dy.row(r);
            let xh = cache.xhat.row(r);
            let mut mean_dxhat = F::zero();
            let mut mean_dxhat_xhat = F::zero();
            for j in 0..d {
                grad.weight.data[j] += g[j] * xh[j];
                grad.bias.data[j] += g[j];
                dxhat[j] = g[j] * self.weight.data[j];
                mean_dxhat += dxhat[j];
                mean_dxhat_xhat += dxhat[j] * xh[j];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            let rs = cache.rstd[r];
            for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                *o = rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
        }
        dx
    }
}

impl<F> Params<F> for LayerNorm<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<F> {
    pub q: Linear<F>,
    pub k: Linear<F>,
    pub v: Linear<F>,
    pub out: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    q: Mat<F>,
    k: Mat<F>,
    v: Mat<F>,
    /// Softmax probabilities per head, `L×L` each.
    probs: Vec<Mat<F>>,
    concat: Mat<F>,
}

impl<F: Real> Attention<F> {
    pub fn init<R: Rng>(rng: &mut R, dim: usize) -> Self {
        Attention {
            q: Linear::init(rng, dim, dim),
            k: Linear::init(rng, dim, dim),
            v: Linear::init(rng, dim, dim),
            out: Linear::init(rng, dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Attention {
            q: Linear::zeros(dim, dim),
            k: Linear::zeros(dim, dim),
            v: Linear::zeros(dim, dim),
            out: Linear::zeros(dim, dim),
        }
    }

    pub fn forward(&self, x: &Mat<F>, heads: usize) -> (Mat<F>, AttentionCache<F>) {
        let (l, d) = (x.rows, x.cols);
        let dh = d / heads;
        let scale = F::one() / F::lit(dh as f64).sqrt();
        let q = self.q.forward(x);
        let k = self.k.forward(x);
        let v = self.v.forward(x);
        let mut concat = Mat::zeros(l, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let o = h * dh;
            let mut s = Mat::zeros(l, l);
            gemm(l, l, dh, scale, &q.data[o..], d, false, &k.data[o..], d, true, F::zero(), &mut s.data, l);
            for r in 0..l {
                softmax_in_place(s.row_mut(r));
            }
            gemm(l, dh, l, F::one(), &s.data, l, false, &v.data[o..], d, false, F::zero(), &mut concat.data[o..], d);
            probs.push(s);
        }
        let y = self.out.forward(&concat);
        (
            y,
            AttentionCache {
                q,
                k,
                v,
                probs,
                concat,
            },
        )
    }

    pub fn backward(&self, x: &Mat<F>, cache: &AttentionCache<F>, dy: &Mat<F>, heads: usize, grad: &mut Attention<F>) -> Mat<F> {
        let (l, d) = (x.rows, x.cols);
        let dh = d / heads;
        let scale = F::one() / F::lit(dh as f64).sqrt();
        let dconcat = self.out.backward(&cache.concat, dy, &mut grad.out, true).expect("dx");
        let mut dq = Mat::zeros(l, d);
        let mut dk = Mat::zeros(l, d);
        let mut dv = Mat::zeros(l, d);
        let mut dp = Mat::zeros(l, l);
        for h in 0..heads {
            let o = h * dh;
            let p = &cache.probs[h];
            gemm(l, l, dh, F::one(), &dconcat.data[o..], d, false, &cache.v.data[o..], d, true, F::zero(), &mut dp.data, l);
            gemm(l, dh, l, F::one(), &p.data, l, true, &dconcat.data[o..], d, false, F::zero(), &mut dv.data[o..], d);
            // softmax backward, in place: dS = P ⊙ (dP − Σ dP⊙P)
            for r in 0..l {
                let pr = p.row(r);
                let dpr = dp.row_mut(r);
                let inner = pr.iter().zip(dpr.iter()).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
                for (g, &pv) in dpr.iter_mut().zip(pr) {
                    *g = pv * (*g - inner);
                }
            }
            gemm(l, dh, l, scale, &dp.data, l, false, &cache.k.data[o..], d, false, F::zero(), &mut dq.data[o..], d);
            gemm(l, dh, l, scale, &dp.data, l, true, &cache.q.data[o..], d, false, F::zero(), &mut dk.data[o..], d);
        }
        let mut dx = self.q.backward(x, &dq, &mut grad.q, true).expect("dx");
        dx.add_assign(&self.k.backward(x, &dk, &mut grad.k, true).expect("dx"));
        dx.add_assign(&self.v.backward(x, &dv, &mut grad.v, true).expect("dx"));
        dx
    }
}

impl<F> Params<F> for Attention<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        self.q.visit(&join(prefix, "q"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

pub fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = F::one() / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// Pre-norm transformer block: `a = x + Attn(LN₁(x))`, `y = a + MLP(LN₂(a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub norm1: LayerNorm<F>,
    pub attn: Attention<F>,
    pub norm2: LayerNorm<F>,
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    ln1: LayerNormCache<F>,
    h1: Mat<F>,
    attn: AttentionCache<F>,
    ln2: LayerNormCache<F>,
    h2: Mat<F>,
    pre: Mat<F>,
    act: Mat<F>,
}

impl<F: Real> Block<F> {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, hidden: usize) -> Self {
        Block {
            norm1: LayerNorm::init(dim),
            attn: Attention::init(rng, dim),
            norm2: LayerNorm::init(dim),
            fc1: Linear::init(rng, dim, hidden),
            fc2: Linear::init(rng, hidden, dim),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Block {
            norm1: LayerNorm::zeros(dim),
            attn: Attention::zeros(dim),
            norm2: LayerNorm::zeros(dim),
            fc1: Linear::zeros(dim, hidden),
            fc2: Linear::zeros(hidden, dim),
        }
    }

    pub fn forward(&self, x: &Mat<F>, heads: usize) -> (Mat<F>, BlockCache<F>) {
        let (h1, ln1) = self.norm1.forward(x);
        let (mut a, attn) = self.attn.forward(&h1, heads);
        a.add_assign(x);
        let (h2, ln2) = self.norm2.forward(&a);
        let pre = self.fc1.forward(&h2);
        let act = Mat::from_vec(pre.rows, pre.cols, pre.data.iter().map(|&v| Activation::Gelu.apply(v)).collect());
        let mut y = self.fc2.forward(&act);
        y.add_assign(&a);
        (
            y,
            BlockCache {
                ln1,
                h1,
                attn,
                ln2,
                h2,
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &BlockCache<F>, dy: &Mat<F>, heads: usize, grad: &mut Block<F>) -> Mat<F> {
        let mut dact = self.fc2.backward(&cache.act, dy, &mut grad.fc2, true).expect("dx");
        for (g, &p) in dact.data.iter_mut().zip(&cache.pre.data) {
            *g *= Activation::Gelu.derivative(p);
        }
        let dh2 = self.fc1.backward(&cache.h2, &dact, &mut grad.fc1, true).expect("dx");
        let mut da = self.norm2.backward(&cache.ln2, &dh2, &mut grad.norm2);
        da.add_assign(dy);
        let dh1 = self.attn.backward(&cache.h1, &cache.attn, &da, heads, &mut grad.attn);
        let mut dx = self.norm1.backward(&cache.ln1, &dh1, &mut grad.norm1);
        dx.add_assign(&da);
        dx
    }
}

impl<F> Params<F> for Block<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.fc1.visit(&join(prefix, "mlp.fc1"), f);
        self.fc2.visit(&join(prefix, "mlp.fc2"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.fc1.visit_mut(&join(prefix, "mlp.fc1"), f);
        self.fc2.visit_mut(&join(prefix, "mlp.fc2"), f);
    }
}

/// A stack of blocks sharing one head count.
pub fn stack_forward<F: Real>(blocks: &[Block<F>], x: Mat<F>, heads: usize) -> (Mat<F>, Vec<BlockCache<F>>) {
    let mut caches = Vec::with_capacity(blocks.len());
    let mut h = x;
    for b in blocks {
        let (y, c) = b.forward(&h, heads);
        caches.push(c);
        h = y;
    }
    (h, caches)
}

pub fn stack_backward<F: Real>(
    blocks: &[Block<F>],
    caches: &[BlockCache<F>],
    dy: Mat<F>,
    heads: usize,
    grads: &mut [Block<F>],
) -> Mat<F> {
    let mut d = dy;
    for i in (0..blocks.len()).rev() {
        d = blocks[i].backward(&caches[i], &d, heads, &mut grads[i]);
    }
    d
}
