//! A single seeded joint-attention block standing in for a double-stream DiT.
//!
//! The joint sequence is `[scene-text tokens ‖ noisy image tokens ‖ context
//! image tokens]`. Only the quoted scene-text span of the prompt enters the
//! text stream; template words carry no content for a hash embedder. Both
//! image halves share positional and timestep embeddings and there is no
//! stream embedding, so a noisy token identical to its context token produces
//! an identical feature.
//!
//! The head predicts a clean latent `x0 = context + gain * W_out (f_noisy − f_context)`
//! and returns the data-direction velocity `(x0 − z_noisy) / t`.

use super::{check_time, split_cat, VelocityModel, VelocityOutput};
use crate::attnboost::AttentionTensor;
use crate::codec::{PromptEmbedding, EMBED_DIM};
use crate::error::{Error, Result};
use crate::latent::{LatentTensor, SeededRng};

pub const MODEL_DIM: usize = EMBED_DIM;
pub const NUM_HEADS: usize = 4;
const HEAD_DIM: usize = MODEL_DIM / NUM_HEADS;
const TIME_FEATURES: usize = 16;
const T_FLOOR: f64 = 1e-3;
/// Output scale of the clean-latent correction.
pub const DEFAULT_GAIN: f64 = 0.02;

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn seeded(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> Self {
        let data = rng.normals(rows * cols).into_iter().map(|x| x * std).collect();
        Self { rows, cols, data }
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.apply_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub struct ToyDoubleStream {
    seed: u64,
    token_dim: usize,
    gain: f64,
    w_in: Matrix,
    w_time: Matrix,
    w_q: Matrix,
    w_k: Matrix,
    w_v: Matrix,
    w_proj: Matrix,
    w_out: Matrix,
}

impl ToyDoubleStream {
    pub fn new(seed: u64, token_dim: usize) -> Result<Self> {
        Self::with_gain(seed, token_dim, DEFAULT_GAIN)
    }

    pub fn with_gain(seed: u64, token_dim: usize, gain: f64) -> Result<Self> {
        if token_dim == 0 || !gain.is_finite() {
            return Err(Error::invalid("token_dim must be positive and gain finite"));
        }
        let mut stream = 0u64;
        let mut next = |rows: usize, cols: usize| {
            stream += 1;
            let mut rng = SeededRng::with_stream(seed, stream);
            Matrix::seeded(&mut rng, rows, cols, 1.0 / (cols as f64).sqrt())
        };
        let w_in = next(MODEL_DIM, token_dim);
        let w_time = next(MODEL_DIM, TIME_FEATURES);
        let w_q = next(MODEL_DIM, MODEL_DIM);
        let w_k = next(MODEL_DIM, MODEL_DIM);
        let w_v = next(MODEL_DIM, MODEL_DIM);
        let w_proj = next(MODEL_DIM, MODEL_DIM);
        let w_out = next(token_dim, MODEL_DIM);
        Ok(Self {
            seed,
            token_dim,
            gain,
            w_in,
            w_time,
            w_q,
            w_k,
            w_v,
            w_proj,
            w_out,
        })
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    fn time_embedding(&self, t: f64) -> Vec<f64> {
        let feats: Vec<f64> = (0..TIME_FEATURES / 2)
            .flat_map(|k| {
                let w = std::f64::consts::PI * (1u64 << k) as f64;
                [(w * t).sin(), (w * t).cos()]
            })
            .collect();
        self.w_time.apply(&feats)
    }

    fn positional(&self, i: usize) -> Vec<f64> {
        let mut rng = SeededRng::with_stream(self.seed, 1_000 + i as u64);
        rng.normals(MODEL_DIM).into_iter().map(|x| 0.5 * x).collect()
    }

    fn embed_image(&self, tokens: &LatentTensor, temb: &[f64], pos: &[Vec<f64>], out: &mut Vec<Vec<f64>>) {
        let mut h = vec![0.0; MODEL_DIM];
        for (i, p) in pos.iter().enumerate() {
            self.w_in.apply_into(tokens.token(i), &mut h);
            out.push(h.iter().zip(temb).zip(p).map(|((a, b), c)| a + b + c).collect());
        }
    }

    /// Joint attention over `x`; returns updated features and `[1, H, L, L]` weights.
    fn attend(&self, x: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let l = x.len();
        let q: Vec<Vec<f64>> = x.iter().map(|r| self.w_q.apply(r)).collect();
        let k: Vec<Vec<f64>> = x.iter().map(|r| self.w_k.apply(r)).collect();
        let v: Vec<Vec<f64>> = x.iter().map(|r| self.w_v.apply(r)).collect();
        let mut weights = vec![0.0; NUM_HEADS * l * l];
        let mut merged = vec![vec![0.0; MODEL_DIM]; l];
        let mut qh = vec![0.0; l * HEAD_DIM];
        let mut kh = vec![0.0; l * HEAD_DIM];
        for h in 0..NUM_HEADS {
            let cols = h * HEAD_DIM..(h + 1) * HEAD_DIM;
            for i in 0..l {
                qh[i * HEAD_DIM..(i + 1) * HEAD_DIM].copy_from_slice(&q[i][cols.clone()]);
                kh[i * HEAD_DIM..(i + 1) * HEAD_DIM].copy_from_slice(&k[i][cols.clone()]);
            }
            let a = attention_weights(&qh, &kh, l, l, HEAD_DIM);
            for i in 0..l {
                let row = &a[i * l..(i + 1) * l];
                let out = &mut merged[i][cols.clone()];
                for (j, &w) in row.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&v[j][cols.clone()]) {
                        *o += w * vv;
                    }
                }
            }
            weights[h * l * l..(h + 1) * l * l].copy_from_slice(&a);
        }
        let features = x
            .iter()
            .zip(&merged)
            .map(|(xi, mi)| {
                let p = self.w_proj.apply(mi);
                xi.iter().zip(p).map(|(a, b)| a + b).collect()
            })
            .collect();
        (features, weights)
    }
}

/// Row-wise `softmax(Q K^T / sqrt(d_k))` for row-major `Q` (`n_q x d_k`) and `K` (`n_k x d_k`).
pub fn attention_weights(q: &[f64], k: &[f64], n_q: usize, n_k: usize, d_k: usize) -> Vec<f64> {
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut out = vec![0.0; n_q * n_k];
    for i in 0..n_q {
        let qi = &q[i * d_k..(i + 1) * d_k];
        let row = &mut out[i * n_k..(i + 1) * n_k];
        for (j, r) in row.iter_mut().enumerate() {
            let kj = &k[j * d_k..(j + 1) * d_k];
            *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            total += *r;
        }
        for r in row.iter_mut() {
            *r /= total;
        }
    }
    out
}

impl VelocityModel for ToyDoubleStream {
    fn evaluate(&self, z_cat: &LatentTensor, e_p: &PromptEmbedding, t: f64) -> Result<VelocityOutput> {
        check_time(t)?;
        let (noisy, context) = split_cat(z_cat)?;
        let dim = noisy.token_dim()?;
        if dim != self.token_dim {
            return Err(Error::invalid(format!(
                "model expects token dim {}, latent has {dim}",
                self.token_dim
            )));
        }
        let text = e_p.span_tokens();
        if let Some(bad) = text.iter().find(|tok| tok.len() != MODEL_DIM) {
            return Err(Error::invalid(format!(
                "text token dim {} does not match model dim {MODEL_DIM}",
                bad.len()
            )));
        }

        let n = noisy.n_positions();
        let n_text = text.len();
        let temb = self.time_embedding(t);
        let pos: Vec<Vec<f64>> = (0..n).map(|i| self.positional(i)).collect();

        let mut seq: Vec<Vec<f64>> = Vec::with_capacity(n_text + 2 * n);
        seq.extend(text.iter().cloned());
        self.embed_image(&noisy, &temb, &pos, &mut seq);
        self.embed_image(&context, &temb, &pos, &mut seq);

        let (features, weights) = self.attend(&seq);
        let l = seq.len();

        let denom = t.max(T_FLOOR);
        let mut v = Vec::with_capacity(noisy.len());
        let mut diff = vec![0.0; MODEL_DIM];
        let mut resid = vec![0.0; dim];
        for i in 0..n {
            let f_noisy = &features[n_text + i];
            let f_ctx = &features[n_text + n + i];
            for ((d, a), b) in diff.iter_mut().zip(f_noisy).zip(f_ctx) {
                *d = a - b;
            }
            self.w_out.apply_into(&diff, &mut resid);
            for ((&c, &r), &z) in context.token(i).iter().zip(&resid).zip(noisy.token(i)) {
                let x0 = c + self.gain * r;
                v.push((x0 - z) / denom);
            }
        }
        let v = noisy.with_data(v, "ToyDoubleStream::evaluate")?;
        let attention = AttentionTensor::with_image_keys(weights, [1, NUM_HEADS, l, l], n_text, n_text..n_text + n)?;
        Ok(VelocityOutput {
            v,
            attention: Some(attention),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::embed_prompt;

    fn setup(n: usize) -> (ToyDoubleStream, LatentTensor, PromptEmbedding) {
        let model = ToyDoubleStream::new(3, 4).unwrap();
        let mut rng = SeededRng::new(8);
        let z = LatentTensor::tokens(2 * n, 4, rng.normals(2 * n * 4)).unwrap();
        let e = embed_prompt("write the word HELLO WORLD", "HELLO WORLD", 1).unwrap();
        (model, z, e)
    }

    #[test]
    fn hand_sized_softmax() {
        let ln2 = std::f64::consts::LN_2;
        let a = attention_weights(&[0.0, ln2], &[0.0, 0.0], 2, 2, 1);
        assert_eq!(a, vec![0.5, 0.5, 0.5, 0.5]);
        // logits [0, ln2] -> [1/3, 2/3]
        let b = attention_weights(&[1.0], &[0.0, ln2], 1, 2, 1);
        assert!((b[0] - 1.0 / 3.0).abs() < 1e-15 && (b[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn attention_shape_and_rows() {
        let (model, z, e) = setup(2);
        let out = model.evaluate(&z, &e, 0.5).unwrap();
        let att = out.attention.unwrap();
        // 2 text + 2 noisy + 2 context tokens
        assert_eq!(att.shape(), [1, NUM_HEADS, 6, 6]);
        for row in att.data().chunks(6) {
            assert!(row.iter().all(|&a| a >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(out.v.shape(), &[2, 4]);
        assert_eq!(att.image_keys(), 2..4);
    }

    #[test]
    fn pure_evaluation() {
        let (model, z, e) = setup(3);
        let a = model.evaluate(&z, &e, 0.3).unwrap();
        let b = model.evaluate(&z, &e, 0.3).unwrap();
        assert!(a.v.data().iter().zip(b.v.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.attention.unwrap().data(), b.attention.unwrap().data());
    }

    #[test]
    fn identical_halves_predict_the_context() {
        let (model, z, e) = setup(3);
        let half = z.slice_tokens(0..3).unwrap();
        let cat = half.concat_tokens(&half).unwrap();
        let out = model.evaluate(&cat, &e, 0.4).unwrap();
        assert!(out.v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dimension_checks() {
        let (model, z, e) = setup(2);
        let wrong = LatentTensor::tokens(4, 3, vec![0.0; 12]).unwrap();
        assert!(model.evaluate(&wrong, &e, 0.5).is_err());
        let odd = z.slice_tokens(0..3).unwrap();
        assert!(model.evaluate(&odd, &e, 0.5).is_err());
        assert!(model.evaluate(&z, &e, 1.5).is_err());
    }
}
