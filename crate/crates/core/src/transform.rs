//! Query-conditioned set transformation: stacked blocks of multi-head
//! self-attention and a node-wise feed-forward network, each wrapped in
//! dropout, a residual connection and layer normalization.
//!
//! The set fed to one call is `{query} ∪ supports`, with the query in row 0.
//! Every element is treated identically; only the caller decides which
//! output rows are the query and which are supports.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Mat};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformConfig {
    /// Embedding dimension (input and output of every block).
    pub d: usize,
    /// Total attention width across heads.
    pub d_prime: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub blocks: usize,
    pub p_drop: f64,
    pub ln_epsilon: f64,
    pub activation: Activation,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            d: 128,
            d_prime: 128,
            heads: 2,
            d_ff: 256,
            blocks: 1,
            p_drop: 0.1,
            ln_epsilon: 1e-5,
            activation: Activation::Relu,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if [self.d, self.d_prime, self.heads, self.d_ff, self.blocks].contains(&0) {
            return err("transform dimensions must be at least 1".into());
        }
        if !self.d_prime.is_multiple_of(self.heads) {
            return err(format!(
                "d_prime {} is not divisible by heads {}",
                self.d_prime, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return err(format!("p_drop {} outside [0, 1)", self.p_drop));
        }
        if !(self.ln_epsilon > 0.0) {
            return err("ln_epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_prime / self.heads
    }

    /// Number of trainable scalars across all blocks.
    pub fn parameter_count(&self) -> usize {
        let (d, dp, dff, h) = (self.d, self.d_prime, self.d_ff, self.heads);
        self.blocks * (3 * h * (dp / h) * d + d * dp + dff * d + dff + d * dff + d + 4 * d)
    }
}

/// Parameters of one computation block. `wq`, `wk`, `wv` stack the heads
/// row-wise: head `h` owns rows `h·d_head .. (h+1)·d_head`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
}

impl AttentionBlock {
    fn zeros(c: &TransformConfig) -> Self {
        AttentionBlock {
            wq: Mat::zeros(c.d_prime, c.d),
            wk: Mat::zeros(c.d_prime, c.d),
            wv: Mat::zeros(c.d_prime, c.d),
            wo: Mat::zeros(c.d, c.d_prime),
            w1: Mat::zeros(c.d_ff, c.d),
            b1: vec![0.0; c.d_ff],
            w2: Mat::zeros(c.d, c.d_ff),
            b2: vec![0.0; c.d],
            ln1_gain: vec![0.0; c.d],
            ln1_bias: vec![0.0; c.d],
            ln2_gain: vec![0.0; c.d],
            ln2_bias: vec![0.0; c.d],
        }
    }

    fn tensors(&self) -> [&[f64]; 12] {
        [
            self.wq.as_slice(),
            self.wk.as_slice(),
            self.wv.as_slice(),
            self.wo.as_slice(),
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        [
            self.wq.as_mut_slice(),
            self.wk.as_mut_slice(),
            self.wv.as_mut_slice(),
            self.wo.as_mut_slice(),
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

/// Names of the per-block tensors, in [`TransformParams::tensors`] order.
pub const BLOCK_TENSOR_NAMES: [&str; 12] = [
    "wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2", "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
];

/// All trainable tensors of the transformation. Also used to hold
/// gradients of the same shape.
#[derive(Debug, Clone)]
pub struct TransformParams {
    config: TransformConfig,
    blocks: Vec<AttentionBlock>,
    version: u64,
}

impl PartialEq for TransformParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.blocks == other.blocks
    }
}

impl TransformParams {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(config: TransformConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let dh = config.d_head();
        let mut glorot = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
        };
        let (d, dp, dff) = (config.d, config.d_prime, config.d_ff);
        let blocks = (0..config.blocks)
            .map(|_| AttentionBlock {
                wq: glorot(dp, d, d, dh),
                wk: glorot(dp, d, d, dh),
                wv: glorot(dp, d, d, dh),
                wo: glorot(d, dp, dp, d),
                w1: glorot(dff, d, d, dff),
                b1: vec![0.0; dff],
                w2: glorot(d, dff, dff, d),
                b2: vec![0.0; d],
                ln1_gain: vec![1.0; d],
                ln1_bias: vec![0.0; d],
                ln2_gain: vec![1.0; d],
                ln2_bias: vec![0.0; d],
            })
            .collect();
        Ok(TransformParams {
            config,
            blocks,
            version: 0,
        })
    }

    pub fn zeros(config: TransformConfig) -> Self {
        TransformParams {
            config,
            blocks: (0..config.blocks).map(|_| AttentionBlock::zeros(&config)).collect(),
            version: 0,
        }
    }

    pub fn from_blocks(config: TransformConfig, blocks: Vec<AttentionBlock>) -> Result<Self> {
        config.validate()?;
        if blocks.len() != config.blocks {
            return Err(Error::Shape {
                field: "blocks".into(),
                expected: config.blocks,
                found: blocks.len(),
            });
        }
        let reference = AttentionBlock::zeros(&config);
        for b in &blocks {
            for ((t, r), name) in b.tensors().iter().zip(reference.tensors()).zip(BLOCK_TENSOR_NAMES) {
                if t.len() != r.len() {
                    return Err(Error::Shape {
                        field: name.into(),
                        expected: r.len(),
                        found: t.len(),
                    });
                }
            }
        }
        Ok(TransformParams {
            config,
            blocks,
            version: 0,
        })
    }

    pub fn config(&self) -> &TransformConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[AttentionBlock] {
        &self.blocks
    }

    /// Mutable block access. Invalidates forward caches taken earlier.
    pub fn blocks_mut(&mut self) -> &mut [AttentionBlock] {
        self.version += 1;
        &mut self.blocks
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.blocks.iter().flat_map(|b| b.tensors()).collect()
    }

    /// Mutable flat views in declaration order. Invalidates forward caches
    /// taken earlier.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        self.blocks.iter_mut().flat_map(|b| b.tensors_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn add_assign(&mut self, other: &TransformParams) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            axpy(1.0, src, dst);
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &TransformParams) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            axpy(alpha, src, dst);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Applies the transformation to `{query} ∪ supports` and returns the
    /// adapted query vector and the adapted support rows.
    pub fn transform_set(&self, query: &[f64], supports: &Mat, mode: Mode<'_>) -> Result<(Vec<f64>, Mat)> {
        let out = self.forward(&stack_set(query, supports)?, mode)?;
        Ok(split_set(out))
    }

    pub fn forward(&self, input: &Mat, mode: Mode<'_>) -> Result<Mat> {
        self.run(input, mode, false).map(|(out, _)| out)
    }

    /// Forward pass that records everything [`TransformParams::backward`]
    /// needs, including the dropout masks.
    pub fn forward_cached(&self, input: &Mat, mode: Mode<'_>) -> Result<(Mat, ForwardCache)> {
        let (out, blocks) = self.run(input, mode, true)?;
        Ok((
            out,
            ForwardCache {
                version: self.version,
                rows: input.rows(),
                blocks,
            },
        ))
    }

    fn run(&self, input: &Mat, mut mode: Mode<'_>, keep: bool) -> Result<(Mat, Vec<BlockCache>)> {
        let c = &self.config;
        if input.rows() == 0 {
            return Err(Error::Config("transformation needs a non-empty set".into()));
        }
        if input.cols() != c.d {
            return Err(Error::Shape {
                field: "input embedding dimension".into(),
                expected: c.d,
                found: input.cols(),
            });
        }
        let mut x = input.clone();
        let mut caches = Vec::new();
        for block in &self.blocks {
            let (y, cache) = block_forward(c, block, x, &mut mode)?;
            if keep {
                caches.push(cache);
            }
            x = y;
        }
        if !x.is_finite() {
            return Err(Error::numerical("non-finite transformation output"));
        }
        Ok((x, caches))
    }

    /// Gradients of a scalar loss with respect to every parameter and every
    /// input row, given the loss gradient `d_out` on the forward output.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Mat) -> Result<(TransformParams, Mat)> {
        let mut grads = TransformParams::zeros(self.config);
        let d = self.backward_into(cache, d_out, &mut grads)?;
        Ok((grads, d))
    }

    /// Like [`backward`](Self::backward) but adds the parameter gradients
    /// into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache, d_out: &Mat, grads: &mut TransformParams) -> Result<Mat> {
        if cache.version != self.version || cache.blocks.len() != self.blocks.len() {
            return Err(Error::Usage("forward cache is stale or was taken without caching".into()));
        }
        if d_out.shape() != (cache.rows, self.config.d) {
            return Err(Error::Shape {
                field: "output gradient rows".into(),
                expected: cache.rows,
                found: d_out.rows(),
            });
        }
        if grads.config != self.config {
            return Err(Error::Usage("gradient buffer has a different configuration".into()));
        }
        let mut d = d_out.clone();
        for ((block, bc), g) in self
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(grads.blocks.iter_mut())
            .rev()
        {
            d = block_backward(&self.config, block, bc, &d, g);
        }
        Ok(d)
    }
}

/// Stacks the query on top of the supports.
pub fn stack_set(query: &[f64], supports: &Mat) -> Result<Mat> {
    if supports.rows() == 0 {
        return Err(Error::Config("support set is empty".into()));
    }
    if query.len() != supports.cols() {
        return Err(Error::Shape {
            field: "query dimension".into(),
            expected: supports.cols(),
            found: query.len(),
        });
    }
    let mut data = Vec::with_capacity((supports.rows() + 1) * query.len());
    data.extend_from_slice(query);
    data.extend_from_slice(supports.as_slice());
    Ok(Mat::from_vec(supports.rows() + 1, query.len(), data))
}

/// Inverse of [`stack_set`].
pub fn split_set(out: Mat) -> (Vec<f64>, Mat) {
    let rows = out.rows();
    let q = out.row(0).to_vec();
    (q, out.row_block(1, rows - 1))
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    rows: usize,
    blocks: Vec<BlockCache>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Mat,
    q: Vec<Mat>,
    k: Vec<Mat>,
    v: Vec<Mat>,
    attn: Vec<Mat>,
    concat: Mat,
    mask1: Option<Vec<f64>>,
    ln1: LayerNormCache,
    y1: Mat,
    hidden_pre: Mat,
    hidden: Mat,
    mask2: Option<Vec<f64>>,
    ln2: LayerNormCache,
}

#[derive(Debug, Clone)]
struct LayerNormCache {
    normalized: Mat,
    inv_std: Vec<f64>,
}

/// Lexicographic order of the set rows; set-dimension sums run in this order
/// so that permuting the input permutes the output bit for bit.
fn canonical_order(x: &Mat) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Row-wise softmax of `(Q Kᵀ)/sqrt(d_head)` for one head.
pub fn attention_weights(inputs: &Mat, wq_head: &Mat, wk_head: &Mat) -> Result<Mat> {
    let q = inputs.matmul_t(wq_head);
    let k = inputs.matmul_t(wk_head);
    scaled_softmax(&q, &k, &canonical_order(inputs))
}

fn scaled_softmax(q: &Mat, k: &Mat, order: &[usize]) -> Result<Mat> {
    let n = q.rows();
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut a = q.matmul_t(k);
    a.scale(scale);
    if !a.is_finite() {
        return Err(Error::numerical("non-finite attention logits"));
    }
    for i in 0..n {
        let row = a.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|x| *x = (*x - max).exp());
        let total: f64 = order.iter().map(|&j| row[j]).sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    Ok(a)
}

fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64], eps: f64) -> (Mat, LayerNormCache) {
    let (n, d) = x.shape();
    let mut normalized = Mat::zeros(n, d);
    let mut out = Mat::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let z = (row[j] - mean) * is;
            normalized[(i, j)] = z;
            out[(i, j)] = gain[j] * z + bias[j];
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns the input gradient and accumulates gain/bias gradients.
fn layer_norm_backward(cache: &LayerNormCache, gain: &[f64], d_out: &Mat, d_gain: &mut [f64], d_bias: &mut [f64]) -> Mat {
    let (n, d) = d_out.shape();
    let mut dx = Mat::zeros(n, d);
    let mut dz = vec![0.0; d];
    for i in 0..n {
        let z = cache.normalized.row(i);
        let g = d_out.row(i);
        for j in 0..d {
            d_gain[j] += g[j] * z[j];
            d_bias[j] += g[j];
            dz[j] = g[j] * gain[j];
        }
        let sum_dz: f64 = dz.iter().sum();
        let sum_dz_z = dot(&dz, z);
        let scale = cache.inv_std[i] / d as f64;
        let row = dx.row_mut(i);
        for j in 0..d {
            row[j] = scale * (d as f64 * dz[j] - sum_dz - z[j] * sum_dz_z);
        }
    }
    dx
}

fn dropout_mask(len: usize, p: f64, mode: &mut Mode<'_>) -> Option<Vec<f64>> {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            Some(
                (0..len)
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                    .collect(),
            )
        }
        _ => None,
    }
}

fn apply_mask(x: &mut Mat, mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.as_mut_slice().iter_mut().zip(m) {
            *v *= k;
        }
    }
}

fn block_forward(c: &TransformConfig, b: &AttentionBlock, x: Mat, mode: &mut Mode<'_>) -> Result<(Mat, BlockCache)> {
    let n = x.rows();
    let dh = c.d_head();
    let order = canonical_order(&x);
    let mut concat = Mat::zeros(n, c.d_prime);
    let (mut qs, mut ks, mut vs, mut attns) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (q_all, k_all, v_all) = (x.matmul_t(&b.wq), x.matmul_t(&b.wk), x.matmul_t(&b.wv));
    for h in 0..c.heads {
        let q = q_all.col_block(h * dh, dh);
        let k = k_all.col_block(h * dh, dh);
        let v = v_all.col_block(h * dh, dh);
        let a = scaled_softmax(&q, &k, &order)?;
        for i in 0..n {
            let out = &mut concat.row_mut(i)[h * dh..(h + 1) * dh];
            for &j in &order {
                axpy(a[(i, j)], v.row(j), out);
            }
        }
        qs.push(q);
        ks.push(k);
        vs.push(v);
        attns.push(a);
    }
    let mut attended = concat.matmul_t(&b.wo);
    let mask1 = dropout_mask(attended.as_slice().len(), c.p_drop, mode);
    apply_mask(&mut attended, &mask1);
    attended.add_assign(&x);
    let (y1, ln1) = layer_norm(&attended, &b.ln1_gain, &b.ln1_bias, c.ln_epsilon);

    let mut hidden_pre = y1.matmul_t(&b.w1);
    for i in 0..n {
        axpy(1.0, &b.b1, hidden_pre.row_mut(i));
    }
    let mut hidden = hidden_pre.clone();
    hidden
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = c.activation.apply(*v));
    let mut ff = hidden.matmul_t(&b.w2);
    for i in 0..n {
        axpy(1.0, &b.b2, ff.row_mut(i));
    }
    let mask2 = dropout_mask(ff.as_slice().len(), c.p_drop, mode);
    apply_mask(&mut ff, &mask2);
    ff.add_assign(&y1);
    let (out, ln2) = layer_norm(&ff, &b.ln2_gain, &b.ln2_bias, c.ln_epsilon);

    Ok((
        out,
        BlockCache {
            input: x,
            q: qs,
            k: ks,
            v: vs,
            attn: attns,
            concat,
            mask1,
            ln1,
            y1,
            hidden_pre,
            hidden,
            mask2,
            ln2,
        },
    ))
}

fn col_sums_into(m: &Mat, out: &mut [f64]) {
    for i in 0..m.rows() {
        axpy(1.0, m.row(i), out);
    }
}

fn block_backward(c: &TransformConfig, b: &AttentionBlock, bc: &BlockCache, d_out: &Mat, g: &mut AttentionBlock) -> Mat {
    let n = d_out.rows();
    let dh = c.d_head();
    let scale = 1.0 / (dh as f64).sqrt();

    // second residual + layer norm
    let d_res2 = layer_norm_backward(&bc.ln2, &b.ln2_gain, d_out, &mut g.ln2_gain, &mut g.ln2_bias);
    let mut d_y1 = d_res2.clone();
    let mut d_ff = d_res2;
    apply_mask(&mut d_ff, &bc.mask2);

    // feed-forward
    g.w2.add_t_matmul(&d_ff, &bc.hidden);
    col_sums_into(&d_ff, &mut g.b2);
    let mut d_hidden = d_ff.matmul(&b.w2);
    for (dv, &pre) in d_hidden.as_mut_slice().iter_mut().zip(bc.hidden_pre.as_slice()) {
        *dv *= c.activation.derivative(pre);
    }
    g.w1.add_t_matmul(&d_hidden, &bc.y1);
    col_sums_into(&d_hidden, &mut g.b1);
    d_y1.add_assign(&d_hidden.matmul(&b.w1));

    // first residual + layer norm
    let d_res1 = layer_norm_backward(&bc.ln1, &b.ln1_gain, &d_y1, &mut g.ln1_gain, &mut g.ln1_bias);
    let mut d_x = d_res1.clone();
    let mut d_att = d_res1;
    apply_mask(&mut d_att, &bc.mask1);

    // output projection
    g.wo.add_t_matmul(&d_att, &bc.concat);
    let d_concat = d_att.matmul(&b.wo);

    let (mut d_q_all, mut d_k_all, mut d_v_all) = (Mat::zeros(n, c.d_prime), Mat::zeros(n, c.d_prime), Mat::zeros(n, c.d_prime));
    for h in 0..c.heads {
        let d_o = d_concat.col_block(h * dh, dh);
        let a = &bc.attn[h];
        let d_a = d_o.matmul_t(&bc.v[h]);
        let d_v = a.t_matmul(&d_o);
        let mut d_logits = Mat::zeros(n, n);
        for i in 0..n {
            let s = dot(a.row(i), d_a.row(i));
            for j in 0..n {
                d_logits[(i, j)] = a[(i, j)] * (d_a[(i, j)] - s) * scale;
            }
        }
        let d_q = d_logits.matmul(&bc.k[h]);
        let d_k = d_logits.t_matmul(&bc.q[h]);
        for (part, all) in [(&d_q, &mut d_q_all), (&d_k, &mut d_k_all), (&d_v, &mut d_v_all)] {
            for i in 0..n {
                all.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(part.row(i));
            }
        }
    }
    for (d_proj, w, gw) in [(&d_q_all, &b.wq, &mut g.wq), (&d_k_all, &b.wk, &mut g.wk), (&d_v_all, &b.wv, &mut g.wv)] {
        gw.add_t_matmul(d_proj, &bc.input);
        d_x.add_assign(&d_proj.matmul(w));
    }
    d_x
}
