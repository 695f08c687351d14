//! Attention-derived guidance: text-region enhancement, text-to-image slicing,
//! aggregation over text queries, spatial pooling and min-max normalization.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::latent::{Layout, LatentTensor};

const NORM_EPS: f64 = 1e-8;

/// Raw `[B, H, L, S]` attention weights with the joint-sequence layout:
/// the first `n_text` keys are text tokens, `image_keys` addresses the
/// latent being denoised.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    data: Vec<f64>,
    shape: [usize; 4],
    n_text: usize,
    image_keys: Range<usize>,
}

impl AttentionTensor {
    /// Image keys default to `[n_text, S)`.
    pub fn new(data: Vec<f64>, shape: [usize; 4], n_text: usize) -> Result<Self> {
        Self::with_image_keys(data, shape, n_text, n_text..shape[3])
    }

    pub fn with_image_keys(data: Vec<f64>, shape: [usize; 4], n_text: usize, image_keys: Range<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!("attention shape {shape:?} vs {} values", data.len())));
        }
        if n_text > shape[3] {
            return Err(Error::invalid(format!("n_text {n_text} exceeds {} keys", shape[3])));
        }
        if image_keys.start < n_text || image_keys.start > image_keys.end || image_keys.end > shape[3] {
            return Err(Error::invalid(format!("image keys {image_keys:?} invalid for S={}", shape[3])));
        }
        if data.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid("attention weights must be finite and nonnegative"));
        }
        Ok(Self {
            data,
            shape,
            n_text,
            image_keys,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n_text(&self) -> usize {
        self.n_text
    }

    pub fn image_keys(&self) -> Range<usize> {
        self.image_keys.clone()
    }

    /// All text query rows, as an inclusive span.
    pub fn text_rows(&self) -> Option<(usize, usize)> {
        (self.n_text > 0).then(|| (0, self.n_text - 1))
    }

    fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        let (l, s) = (self.shape[2], self.shape[3]);
        self.data.chunks_exact(s.max(1)).enumerate().map(move |(r, row)| (r % l, row))
    }
}

/// Scales text-query attention to image keys by `gamma` and renormalizes
/// those rows; every other row is returned untouched.
pub fn enhance_text_region(a: &AttentionTensor, span: (usize, usize), gamma: f64) -> Result<AttentionTensor> {
    let l = a.shape[2];
    if span.0 > span.1 || span.1 >= l {
        return Err(Error::invalid(format!("span {span:?} outside {l} query rows")));
    }
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be >= 1, got {gamma}")));
    }
    if gamma == 1.0 {
        return Ok(a.clone());
    }
    let s = a.shape[3];
    let mut data = a.data.clone();
    for (row_idx, row) in data.chunks_exact_mut(s).enumerate() {
        let q = row_idx % l;
        if q < span.0 || q > span.1 {
            continue;
        }
        for w in &mut row[a.image_keys.clone()] {
            *w *= gamma;
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            for w in row.iter_mut() {
                *w /= total;
            }
        }
    }
    Ok(AttentionTensor { data, ..a.clone() })
}

/// `[B, H, |span|, |image keys|]` slice of text queries against image keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TextToImage {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

pub fn extract_t2i(a: &AttentionTensor, span: (usize, usize)) -> Result<TextToImage> {
    if a.n_text == 0 {
        return Err(Error::invalid("attention has no text tokens"));
    }
    if span.0 > span.1 || span.1 >= a.n_text {
        return Err(Error::invalid(format!(
            "span {span:?} must index text rows [0, {})",
            a.n_text
        )));
    }
    if a.image_keys.is_empty() {
        return Err(Error::invalid("empty image key range"));
    }
    let [b, h, _, _] = a.shape;
    let nq = span.1 - span.0 + 1;
    let nk = a.image_keys.len();
    let mut data = Vec::with_capacity(b * h * nq * nk);
    for (q, row) in a.rows() {
        if q >= span.0 && q <= span.1 {
            data.extend_from_slice(&row[a.image_keys.clone()]);
        }
    }
    Ok(TextToImage {
        shape: [b, h, nq, nk],
        data,
    })
}

/// `[B, H, S_image]` sums over the text-query axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

pub fn aggregate(t2i: &TextToImage) -> Result<Aggregated> {
    let [b, h, nq, nk] = t2i.shape;
    if nq == 0 {
        return Err(Error::invalid("no text queries to aggregate"));
    }
    let mut data = vec![0.0; b * h * nk];
    for (bh, out) in data.chunks_exact_mut(nk).enumerate() {
        for q in 0..nq {
            let row = &t2i.data[(bh * nq + q) * nk..(bh * nq + q + 1) * nk];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w;
            }
        }
    }
    Ok(Aggregated { shape: [b, h, nk], data })
}

/// Batch/head-averaged map laid out on the `[h, w]` latent grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMap {
    pub grid: (usize, usize),
    pub values: Vec<f64>,
}

pub fn spatial_pool(agg: &Aggregated, grid: (usize, usize)) -> Result<PooledMap> {
    let [b, h, nk] = agg.shape;
    if grid.0 * grid.1 != nk {
        return Err(Error::invalid(format!("grid {grid:?} does not hold {nk} image tokens")));
    }
    let count = (b * h) as f64;
    let mut values = vec![0.0; nk];
    for chunk in agg.data.chunks_exact(nk) {
        for (v, &a) in values.iter_mut().zip(chunk) {
            *v += a;
        }
    }
    for v in &mut values {
        *v /= count;
    }
    Ok(PooledMap { grid, values })
}

/// Normalized guidance `Â` in `[0, 1]` on the latent grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GuidanceMap {
    grid: (usize, usize),
    values: Vec<f64>,
}

impl GuidanceMap {
    pub fn new(grid: (usize, usize), values: Vec<f64>) -> Result<Self> {
        if grid.0 * grid.1 != values.len() {
            return Err(Error::shape(format!("grid {grid:?} vs {} values", values.len())));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("guidance values must lie in [0, 1]"));
        }
        Ok(Self { grid, values })
    }

    pub fn uniform(grid: (usize, usize), value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.0 * grid.1])
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_tensor(&self) -> Result<LatentTensor> {
        LatentTensor::new(self.values.clone(), vec![1, self.grid.0, self.grid.1], Layout::Grid)
    }
}

pub fn normalize(pooled: &PooledMap) -> Result<GuidanceMap> {
    if pooled.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("normalize"));
    }
    let min = pooled.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = pooled.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom = max - min + NORM_EPS;
    let values = pooled.values.iter().map(|&v| (v - min) / denom).collect();
    GuidanceMap::new(pooled.grid, values)
}

pub fn compute_guidance(a: &AttentionTensor, span: (usize, usize), gamma: f64, grid: (usize, usize)) -> Result<GuidanceMap> {
    let enhanced = enhance_text_region(a, span, gamma)?;
    let t2i = extract_t2i(&enhanced, span)?;
    let agg = aggregate(&t2i)?;
    normalize(&spatial_pool(&agg, grid)?)
}
