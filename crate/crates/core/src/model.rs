//! A minimal causal transformer with an explicit KV-cache interface.
//!
//! Each block is `h + o_proj(attn(qkv(h)))` followed by a residual two-layer
//! ReLU feed-forward. Normalization is off unless [`ModelConfig::rms_norm`]
//! is set. The forward pass is split into [`project_layer`],
//! [`causal_attention`] and [`post_attention`] so that parallel workers can
//! splice received KV rows between the projection and the attention step.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type of the model.
pub trait Scalar: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {
    /// Additive mask value for causally hidden scores.
    const MASK_FILL: Self;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }
}

impl Scalar for f32 {
    const MASK_FILL: f32 = -1e9;
}

impl Scalar for f64 {
    const MASK_FILL: f64 = -1e18;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Shape of the toy transformer plus the seed its weights derive from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// `n_heads` for MHA, 1 for MQA, any divisor of `n_heads` for GQA.
    pub n_kv_heads: usize,
    pub n_layers: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Feed-forward hidden width as a multiple of `d_model`.
    pub ffn_mult: usize,
    pub rms_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            n_kv_heads: 4,
            n_layers: 4,
            seed: 0,
            precision: Precision::F64,
            ffn_mult: 2,
            rms_norm: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("n_layers", self.n_layers),
            ("ffn_mult", self.ffn_mult),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads {} is not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of one K (or V) row.
    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn ffn_width(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    pub fn layout(&self) -> HeadLayout {
        HeadLayout {
            n_heads: self.n_heads,
            n_kv_heads: self.n_kv_heads,
            head_dim: self.head_dim(),
        }
    }
}

/// How query heads map onto (possibly shared) KV heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadLayout {
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
}

impl HeadLayout {
    fn kv_head_of(&self, head: usize) -> usize {
        head / (self.n_heads / self.n_kv_heads)
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("matrix values must be finite".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows {
            return Err(Error::Dimension(format!(
                "row range {start}..{end} out of bounds for {} rows",
                self.rows
            )));
        }
        Ok(Self {
            rows: end - start,
            cols: self.cols,
            values: self.values[start * self.cols..end * self.cols].to_vec(),
        })
    }

    /// Concatenates blocks top to bottom.
    pub fn vstack(blocks: &[&Matrix<T>]) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::Dimension("cannot stack zero blocks".into()));
        };
        let cols = first.cols;
        let mut values = Vec::with_capacity(blocks.iter().map(|b| b.values.len()).sum());
        let mut rows = 0;
        for block in blocks {
            if block.cols != cols {
                return Err(Error::Dimension(format!(
                    "cannot stack a {}-column block under {cols} columns",
                    block.cols
                )));
            }
            values.extend_from_slice(&block.values);
            rows += block.rows;
        }
        Ok(Self { rows, cols, values })
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let dst = &mut out.values[r * rhs.cols..(r + 1) * rhs.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                for (d, &b) in dst.iter_mut().zip(rhs.row(k)) {
                    *d = *d + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| *a + *b).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Matrix<f64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
        }
    }

    pub fn from_f64(m: &Matrix<f64>) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            values: m.values.iter().map(|v| T::lit(*v)).collect(),
        }
    }

    /// Largest element-wise `|a - b| / max(1, |b|)`; `other` is the reference.
    pub fn max_rel_deviation(&self, other: &Matrix<T>) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let (a, b) = (a.to_f64().unwrap_or(f64::NAN), b.to_f64().unwrap_or(f64::NAN));
                (a - b).abs() / b.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Projection weights for one block. Matrices are stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T = f64> {
    pub q_proj: Matrix<T>,
    pub k_proj: Matrix<T>,
    pub v_proj: Matrix<T>,
    pub o_proj: Matrix<T>,
    pub ff_in: Matrix<T>,
    pub ff_out: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet<T = f64> {
    pub config: ModelConfig,
    pub layers: Vec<LayerWeights<T>>,
}

fn seeded_matrix<T: Scalar>(seed: u64, stream: u64, rows: usize, cols: usize, scale: f64) -> Matrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Matrix::from_fn(rows, cols, |_, _| T::lit(rng.gen_range(-1.0..1.0) * scale))
}

/// Deterministic weights: ChaCha8 seeded with `config.seed`, one stream per
/// (layer, matrix), values uniform in `[-1, 1) / sqrt(d_model)`.
///
/// Values are drawn in f64 and rounded, so f32 and f64 weight sets agree to
/// f32 precision.
pub fn init_weights<T: Scalar>(config: &ModelConfig) -> Result<WeightSet<T>> {
    config.validate()?;
    let d = config.d_model;
    let scale = 1.0 / (d as f64).sqrt();
    let shapes = [
        (d, d),
        (d, config.kv_width()),
        (d, config.kv_width()),
        (d, d),
        (d, config.ffn_width()),
        (config.ffn_width(), d),
    ];
    let layers = (0..config.n_layers)
        .map(|layer| {
            let mut mats = shapes.iter().enumerate().map(|(i, &(r, c))| {
                seeded_matrix::<T>(config.seed, (layer * shapes.len() + i) as u64, r, c, scale)
            });
            let mut next = || mats.next().expect("six projections");
            LayerWeights {
                q_proj: next(),
                k_proj: next(),
                v_proj: next(),
                o_proj: next(),
                ff_in: next(),
                ff_out: next(),
            }
        })
        .collect();
    Ok(WeightSet {
        config: config.clone(),
        layers,
    })
}

const CONTEXT_STREAM: u64 = 1 << 40;

/// A seeded stand-in for an embedded prompt: `tokens x d_model`, values uniform in `[-1, 1)`.
pub fn synthetic_context<T: Scalar>(tokens: usize, d_model: usize, seed: u64) -> Matrix<T> {
    seeded_matrix(seed, CONTEXT_STREAM, tokens, d_model, 1.0)
}

/// K and V rows of one layer for token positions `start_pos..end_pos`.
#[derive(Clone, Debug, PartialEq)]
pub struct KVCacheSegment<T = f64> {
    pub layer: usize,
    pub start_pos: usize,
    pub end_pos: usize,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> KVCacheSegment<T> {
    pub fn new(layer: usize, start_pos: usize, k: Matrix<T>, v: Matrix<T>) -> Result<Self> {
        if k.shape() != v.shape() {
            return Err(Error::Dimension(format!(
                "K {:?} and V {:?} differ in shape",
                k.shape(),
                v.shape()
            )));
        }
        if k.rows() == 0 {
            return Err(Error::CacheAlignment("empty KV segment".into()));
        }
        Ok(Self {
            layer,
            start_pos,
            end_pos: start_pos + k.rows(),
            k,
            v,
        })
    }

    pub fn len(&self) -> usize {
        self.end_pos - self.start_pos
    }

    pub fn is_empty(&self) -> bool {
        self.start_pos == self.end_pos
    }

    /// Appends `next`, which must start where `self` ends.
    pub fn concat(&self, next: &KVCacheSegment<T>) -> Result<Self> {
        if self.layer != next.layer {
            return Err(Error::CacheAlignment(format!(
                "cannot join layer {} with layer {}",
                self.layer, next.layer
            )));
        }
        if self.end_pos != next.start_pos {
            return Err(Error::CacheAlignment(format!(
                "gap between positions {} and {}",
                self.end_pos, next.start_pos
            )));
        }
        Ok(Self {
            layer: self.layer,
            start_pos: self.start_pos,
            end_pos: next.end_pos,
            k: Matrix::vstack(&[&self.k, &next.k])?,
            v: Matrix::vstack(&[&self.v, &next.v])?,
        })
    }
}

/// Query row `i` may see key columns `0..=offset + i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CausalMask {
    /// Cached prefix tokens preceding the local queries.
    pub offset: usize,
    pub rows: usize,
}

impl CausalMask {
    pub fn allows(&self, query: usize, key: usize) -> bool {
        key <= self.offset + query
    }
}

pub fn qkv_project<T: Scalar>(
    hidden: &Matrix<T>,
    weights: &WeightSet<T>,
    layer: usize,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    let w = layer_weights(weights, layer)?;
    if hidden.cols() != weights.config.d_model {
        return Err(Error::Dimension(format!(
            "hidden has {} columns, model width is {}",
            hidden.cols(),
            weights.config.d_model
        )));
    }
    Ok((
        hidden.matmul(&w.q_proj)?,
        hidden.matmul(&w.k_proj)?,
        hidden.matmul(&w.v_proj)?,
    ))
}

fn layer_weights<T>(weights: &WeightSet<T>, layer: usize) -> Result<&LayerWeights<T>> {
    weights.layers.get(layer).ok_or_else(|| {
        Error::Input(format!(
            "layer {layer} out of range for {} layers",
            weights.layers.len()
        ))
    })
}

fn rms_normalize<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let eps = T::lit(1e-6);
    let width = T::from_usize(m.cols()).expect("width");
    let mut values = Vec::with_capacity(m.as_slice().len());
    for r in 0..m.rows() {
        let row = m.row(r);
        let mean_sq = row.iter().fold(T::zero(), |acc, x| acc + *x * *x) / width;
        let inv = T::one() / (mean_sq + eps).sqrt();
        values.extend(row.iter().map(|x| *x * inv));
    }
    Matrix {
        rows: m.rows(),
        cols: m.cols(),
        values,
    }
}

/// Block input normalization (if enabled) followed by the Q/K/V projection.
pub fn project_layer<T: Scalar>(
    hidden: &Matrix<T>,
    weights: &WeightSet<T>,
    layer: usize,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    if weights.config.rms_norm {
        qkv_project(&rms_normalize(hidden), weights, layer)
    } else {
        qkv_project(hidden, weights, layer)
    }
}

/// Output projection, residual, feed-forward and second residual.
pub fn post_attention<T: Scalar>(
    hidden: &Matrix<T>,
    attn: &Matrix<T>,
    weights: &WeightSet<T>,
    layer: usize,
) -> Result<Matrix<T>> {
    let w = layer_weights(weights, layer)?;
    let h1 = hidden.add(&attn.matmul(&w.o_proj)?)?;
    let ff_input = if weights.config.rms_norm {
        rms_normalize(&h1)
    } else {
        h1.clone()
    };
    let inner = ff_input.matmul(&w.ff_in)?.map(|x| x.max(T::zero()));
    h1.add(&inner.matmul(&w.ff_out)?)
}

/// Attention output plus the number of (query row, key row) score products computed.
#[derive(Clone, Debug)]
pub struct AttentionOutput<T = f64> {
    pub attn: Matrix<T>,
    pub dot_products: u64,
}

fn check_attention_shapes<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: Option<&Matrix<T>>,
    mask: &CausalMask,
    layout: &HeadLayout,
) -> Result<()> {
    if q.cols() != layout.n_heads * layout.head_dim {
        return Err(Error::Dimension(format!(
            "Q has {} columns, expected {}",
            q.cols(),
            layout.n_heads * layout.head_dim
        )));
    }
    let kv_cols = layout.n_kv_heads * layout.head_dim;
    if k.cols() != kv_cols {
        return Err(Error::Dimension(format!("K has {} columns, expected {kv_cols}", k.cols())));
    }
    if let Some(v) = v {
        if v.shape() != k.shape() {
            return Err(Error::Dimension(format!(
                "V {:?} does not match K {:?}",
                v.shape(),
                k.shape()
            )));
        }
    }
    if q.rows() != mask.rows {
        return Err(Error::Dimension(format!(
            "Q has {} rows but the mask covers {}",
            q.rows(),
            mask.rows
        )));
    }
    if k.rows() < mask.offset + q.rows() {
        return Err(Error::CacheAlignment(format!(
            "{} key rows cannot cover a prefix of {} plus {} local queries",
            k.rows(),
            mask.offset,
            q.rows()
        )));
    }
    Ok(())
}

/// Masked, max-shifted softmax of the scaled scores of one (query row, head).
fn score_row<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    mask: &CausalMask,
    layout: &HeadLayout,
    row: usize,
    head: usize,
    probs: &mut Vec<T>,
) {
    let hd = layout.head_dim;
    let scale = T::one() / T::from_usize(hd).expect("head dim").sqrt();
    let kv = layout.kv_head_of(head);
    let qh = &q.row(row)[head * hd..(head + 1) * hd];
    probs.clear();
    for j in 0..k.rows() {
        let kh = &k.row(j)[kv * hd..(kv + 1) * hd];
        let mut s = qh.iter().zip(kh).fold(T::zero(), |acc, (a, b)| acc + *a * *b) * scale;
        if !mask.allows(row, j) {
            s = s + T::MASK_FILL;
        }
        probs.push(s);
    }
    let max = probs.iter().fold(T::neg_infinity(), |m, s| m.max(*s));
    let mut sum = T::zero();
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        sum = sum + *p;
    }
    for p in probs.iter_mut() {
        *p = *p / sum;
    }
}

/// Softmax attention probabilities per query head, each `q.rows() x k.rows()`.
pub fn attention_weights<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    mask: &CausalMask,
    layout: &HeadLayout,
) -> Result<Vec<Matrix<T>>> {
    check_attention_shapes(q, k, None, mask, layout)?;
    let mut probs = Vec::with_capacity(k.rows());
    Ok((0..layout.n_heads)
        .map(|h| {
            let mut values = Vec::with_capacity(q.rows() * k.rows());
            for i in 0..q.rows() {
                score_row(q, k, mask, layout, i, h, &mut probs);
                values.extend_from_slice(&probs);
            }
            Matrix {
                rows: q.rows(),
                cols: k.rows(),
                values,
            }
        })
        .collect())
}

/// Causal attention of local queries against `k`/`v`, which hold at least
/// the cached prefix plus the local rows. The output has the shape of `q`.
pub fn causal_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    mask: &CausalMask,
    layout: &HeadLayout,
) -> Result<Matrix<T>> {
    causal_attention_counted(q, k, v, mask, layout).map(|out| out.attn)
}

/// [`causal_attention`] that also reports how many QKᵀ row products it formed.
///
/// Like a dense BLAS kernel it scores the full `q.rows() x k.rows()`
/// rectangle and masks afterwards, so masked products are counted too.
pub fn causal_attention_counted<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    mask: &CausalMask,
    layout: &HeadLayout,
) -> Result<AttentionOutput<T>> {
    check_attention_shapes(q, k, Some(v), mask, layout)?;
    let hd = layout.head_dim;
    let mut out = Matrix::zeros(q.rows(), q.cols());
    let mut probs = Vec::with_capacity(k.rows());
    for i in 0..q.rows() {
        for h in 0..layout.n_heads {
            score_row(q, k, mask, layout, i, h, &mut probs);
            let kv = layout.kv_head_of(h);
            let dst = &mut out.values[i * q.cols() + h * hd..i * q.cols() + (h + 1) * hd];
            for (j, p) in probs.iter().enumerate() {
                let vh = &v.row(j)[kv * hd..(kv + 1) * hd];
                for (d, x) in dst.iter_mut().zip(vh) {
                    *d = *d + *p * *x;
                }
            }
        }
    }
    Ok(AttentionOutput {
        attn: out,
        dot_products: (q.rows() * k.rows()) as u64,
    })
}

/// Runs every layer on one worker. Returns the final hidden states and one
/// cache segment per layer covering positions `0..C`.
pub fn forward_serial<T: Scalar>(
    context: &Matrix<T>,
    weights: &WeightSet<T>,
) -> Result<(Matrix<T>, Vec<KVCacheSegment<T>>)> {
    if context.rows() == 0 {
        return Err(Error::Input("context must hold at least one token".into()));
    }
    let layout = weights.config.layout();
    let mask = CausalMask {
        offset: 0,
        rows: context.rows(),
    };
    let mut hidden = context.clone();
    let mut cache = Vec::with_capacity(weights.layers.len());
    for layer in 0..weights.layers.len() {
        let (q, k, v) = project_layer(&hidden, weights, layer)?;
        let attn = causal_attention(&q, &k, &v, &mask, &layout)?;
        cache.push(KVCacheSegment::new(layer, 0, k, v)?);
        hidden = post_attention(&hidden, &attn, weights, layer)?;
    }
    Ok((hidden, cache))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_kv_heads: 2,
            n_layers: 2,
            seed: 7,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn weights_are_deterministic_and_seed_sensitive() {
        let a = init_weights::<f64>(&small()).unwrap();
        let b = init_weights::<f64>(&small()).unwrap();
        assert_eq!(a, b);
        let c = init_weights::<f64>(&ModelConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.layers[0].q_proj, c.layers[0].q_proj);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            n_heads: 4,
            n_kv_heads: 3,
            ..small()
        };
        assert!(matches!(init_weights::<f64>(&cfg), Err(Error::Config(_))));
        let cfg = ModelConfig {
            d_model: 10,
            n_heads: 4,
            n_kv_heads: 4,
            ..small()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn projection_preserves_rows_and_maps_zero_to_zero() {
        let cfg = ModelConfig {
            n_heads: 4,
            n_kv_heads: 1,
            ..small()
        };
        let w = init_weights::<f64>(&cfg).unwrap();
        let (q, k, v) = qkv_project(&Matrix::zeros(3, 8), &w, 0).unwrap();
        assert_eq!(q.shape(), (3, 8));
        assert_eq!(k.shape(), (3, 2));
        assert_eq!(v.shape(), (3, 2));
        assert!(q.as_slice().iter().chain(k.as_slice()).chain(v.as_slice()).all(|x| *x == 0.0));
        assert!(matches!(
            qkv_project(&Matrix::<f64>::zeros(3, 7), &w, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn k_projection_matches_naive_product() {
        let w = init_weights::<f64>(&small()).unwrap();
        let x = synthetic_context::<f64>(5, 8, 3);
        let (_, k, _) = qkv_project(&x, &w, 1).unwrap();
        let kp = &w.layers[1].k_proj;
        for r in 0..5 {
            for c in 0..kp.cols() {
                let mut acc = 0.0;
                for i in 0..8 {
                    acc += x.get(r, i) * kp.get(i, c);
                }
                assert!((k.get(r, c) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_query_copies_first_value_row() {
        let layout = HeadLayout {
            n_heads: 2,
            n_kv_heads: 1,
            head_dim: 2,
        };
        let q = Matrix::new(1, 4, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let k = Matrix::new(1, 2, vec![1.0, 4.0]).unwrap();
        let v = Matrix::new(1, 2, vec![-0.25, 9.0]).unwrap();
        let mask = CausalMask { offset: 0, rows: 1 };
        let a = causal_attention(&q, &k, &v, &mask, &layout).unwrap();
        assert_eq!(a.as_slice(), &[-0.25, 9.0, -0.25, 9.0]);
    }

    #[test]
    fn masked_weights_are_exactly_zero_and_rows_normalize() {
        let cfg = small();
        let w = init_weights::<f64>(&cfg).unwrap();
        let x = synthetic_context::<f64>(6, 8, 1);
        let (q, k, _) = qkv_project(&x, &w, 0).unwrap();
        let mask = CausalMask { offset: 0, rows: 6 };
        for probs in attention_weights(&q, &k, &mask, &cfg.layout()).unwrap() {
            assert_eq!(probs.get(0, 1), 0.0);
            for i in 0..6 {
                for j in i + 1..6 {
                    assert_eq!(probs.get(i, j), 0.0);
                }
                let s: f64 = probs.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f32_rows_normalize() {
        let cfg = small();
        let w = init_weights::<f32>(&cfg).unwrap();
        let x = synthetic_context::<f32>(7, 8, 1);
        let (q, k, _) = qkv_project(&x, &w, 0).unwrap();
        let mask = CausalMask { offset: 0, rows: 7 };
        for probs in attention_weights(&q, &k, &mask, &cfg.layout()).unwrap() {
            for i in 0..7 {
                let s: f32 = probs.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn short_cache_is_an_alignment_error() {
        let layout = HeadLayout {
            n_heads: 1,
            n_kv_heads: 1,
            head_dim: 2,
        };
        let q = Matrix::<f64>::zeros(2, 2);
        let kv = Matrix::<f64>::zeros(3, 2);
        let mask = CausalMask { offset: 2, rows: 2 };
        assert!(matches!(
            causal_attention(&q, &kv, &kv, &mask, &layout),
            Err(Error::CacheAlignment(_))
        ));
    }

    #[test]
    fn serial_forward_is_deterministic_and_caches_every_position() {
        let w = init_weights::<f64>(&small()).unwrap();
        let x = synthetic_context::<f64>(1, 8, 2);
        let (h, cache) = forward_serial(&x, &w).unwrap();
        assert_eq!(h.rows(), 1);
        assert!(cache.iter().all(|s| s.start_pos == 0 && s.end_pos == 1));

        let x = synthetic_context::<f64>(9, 8, 2);
        let (a, ca) = forward_serial(&x, &w).unwrap();
        let (b, cb) = forward_serial(&x, &w).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_eq!(ca.len(), 2);
        assert!(ca.iter().enumerate().all(|(l, s)| s.layer == l && s.k.rows() == 9));

        assert!(matches!(
            forward_serial(&Matrix::<f64>::zeros(0, 8), &w),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn rms_norm_variant_runs() {
        let cfg = ModelConfig {
            rms_norm: true,
            ..small()
        };
        let w = init_weights::<f64>(&cfg).unwrap();
        let x = synthetic_context::<f64>(4, 8, 2);
        let (h, _) = forward_serial(&x, &w).unwrap();
        assert!(h.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn segments_join_only_when_contiguous() {
        let m = Matrix::<f64>::zeros(2, 2);
        let a = KVCacheSegment::new(0, 0, m.clone(), m.clone()).unwrap();
        let b = KVCacheSegment::new(0, 2, m.clone(), m.clone()).unwrap();
        let joined = a.concat(&b).unwrap();
        assert_eq!((joined.start_pos, joined.end_pos, joined.k.rows()), (0, 4, 4));
        let gap = KVCacheSegment::new(0, 3, m.clone(), m).unwrap();
        assert!(matches!(a.concat(&gap), Err(Error::CacheAlignment(_))));
    }
}
