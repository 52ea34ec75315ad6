//! Instruction embeddings and PCA projection.
//!
//! The default embedder is feature hashing: text is lowercased and split on
//! non-alphanumeric characters, each token is hashed with 64-bit FNV-1a into a
//! bucket (`hash(BUCKET_SEED ++ token) mod d`) and a sign (top bit of
//! `hash(SIGN_SEED ++ token)`), the signed one-hot token vectors are summed
//! and the sum is L2-normalized. Text with no tokens (or whose tokens cancel
//! exactly) maps to the first basis vector.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DIM: usize = 64;
pub const BUCKET_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
pub const SIGN_SEED: u64 = 0xc2b2_ae3d_27d4_eb4f;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("remote embedder: {0}")]
    Remote(String),
}

/// Unit-norm embedding of an instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values`; a zero vector becomes the first basis vector.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "embedding dimension must be positive");
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            values.iter_mut().for_each(|v| *v = 0.0);
            values[0] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self(values)
    }

    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Neg for &EmbeddingVector {
    type Output = EmbeddingVector;

    fn neg(self) -> EmbeddingVector {
        EmbeddingVector(self.0.iter().map(|v| -v).collect())
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

pub(crate) fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Coordinate bucket and sign of one token.
pub fn token_slot(token: &str, dim: usize) -> (usize, f64) {
    let bucket = (fnv1a(BUCKET_SEED, token.as_bytes()) % dim as u64) as usize;
    let sign = if fnv1a(SIGN_SEED, token.as_bytes()) >> 63 == 0 {
        1.0
    } else {
        -1.0
    };
    (bucket, sign)
}

pub fn embed_instruction(text: &str, dim: usize) -> EmbeddingVector {
    let mut v = vec![0.0; dim];
    for token in tokenize(text) {
        let (bucket, sign) = token_slot(&token, dim);
        v[bucket] += sign;
    }
    EmbeddingVector::normalized(v)
}

#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(embed_instruction(text, self.dim))
    }
}

/// Dot product of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Embeddings from an OpenAI-compatible `/embeddings` endpoint.
///
/// Vectors are re-normalized; `dim` is whatever the model returns and is
/// checked on every call against the first response.
pub struct RemoteEmbedder {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub dim: usize,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key_env: Option<&str>,
        dim: usize,
        timeout: Duration,
    ) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key_env.and_then(|k| std::env::var(k).ok()),
            dim,
            client,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let url = format!("{}/embeddings", self.endpoint.trim_end_matches('/'));
        let mut req = self
            .client
            .post(url)
            .json(&serde_json::json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp: EmbeddingResponse = req
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        let values = resp
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::Remote("empty embedding response".into()))?
            .embedding;
        if values.len() != self.dim {
            return Err(EmbedError::DimensionMismatch(values.len(), self.dim));
        }
        Ok(EmbeddingVector::normalized(values))
    }
}

pub const PCA_TOLERANCE: f64 = 1e-8;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PcaError {
    #[error("need at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("k = {k} exceeds dimension {dim}")]
    TooManyComponents { k: usize, dim: usize },
    #[error("vectors have differing dimensions")]
    DimensionMismatch,
    #[error("power iteration for component {component} did not converge in {iterations} iterations")]
    ConvergenceFailure { component: usize, iterations: usize },
}

#[derive(Debug, Clone)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Unit principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each direction (covariance eigenvalue, `n - 1` normalization).
    pub explained_variance: Vec<f64>,
    /// One row of `k` coordinates per input vector.
    pub coords: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for c in against {
        let p = dot(v, c);
        v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
    }
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Top-`k` principal directions by power iteration with deflation.
pub fn pca_project(vectors: &[EmbeddingVector], k: usize) -> Result<PcaProjection, PcaError> {
    let rows: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
    pca_rows(&rows, k)
}

pub fn pca_rows(rows: &[&[f64]], k: usize) -> Result<PcaProjection, PcaError> {
    let n = rows.len();
    if n < 2 {
        return Err(PcaError::TooFewVectors(n));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(PcaError::DimensionMismatch);
    }
    if k > d {
        return Err(PcaError::TooManyComponents { k, dim: d });
    }

    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(*r).for_each(|(m, x)| *m += x / n as f64);
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut cov = vec![vec![0.0; d]; d];
    for r in &centered {
        for i in 0..d {
            if r[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i][j] += r[i] * r[j];
            }
        }
    }
    let scale = 1.0 / (n as f64 - 1.0);
    cov.iter_mut().flatten().for_each(|c| *c *= scale);
    let original = cov.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_9ca);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for component in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, &components);
        normalize(&mut v);
        let mut converged = false;
        for _ in 0..PCA_MAX_ITERATIONS {
            let mut w = mat_vec(&cov, &v);
            orthogonalize(&mut w, &components);
            let norm = normalize(&mut w);
            if norm <= f64::EPSILON * 1e3 {
                // Remaining spectrum is numerically zero: any orthogonal unit
                // vector is a valid direction.
                converged = true;
                break;
            }
            let delta = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            v = w;
            if delta < PCA_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(PcaError::ConvergenceFailure {
                component,
                iterations: PCA_MAX_ITERATIONS,
            });
        }
        let (max_idx, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) });
        if v[max_idx] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let lambda = dot(&v, &mat_vec(&original, &v));
        for i in 0..d {
            for j in 0..d {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        variances.push(lambda);
        components.push(v);
    }

    let coords = centered
        .iter()
        .map(|r| components.iter().map(|c| dot(r, c)).collect())
        .collect();
    Ok(PcaProjection {
        mean,
        components,
        explained_variance: variances,
        coords,
    })
}

/// `state_id,instruction,coord_1..coord_k` CSV for embedding-space plots.
pub fn pca_csv(labels: &[(String, String)], projection: &PcaProjection) -> String {
    let k = projection.components.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["state_id".to_string(), "instruction".to_string()];
    header.extend((1..=k).map(|i| format!("coord_{i}")));
    w.write_record(&header).expect("in-memory write");
    for ((id, text), coords) in labels.iter().zip(&projection.coords) {
        let mut rec = vec![id.clone(), text.clone()];
        rec.extend(coords.iter().map(|c| c.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism_and_unit_norm() {
        let a = embed_instruction("pick up the blue key", DEFAULT_DIM);
        let b = embed_instruction("pick up the blue key", DEFAULT_DIM);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_tokens_rank_higher() {
        let blue = embed_instruction("pick up the blue key", DEFAULT_DIM);
        let red = embed_instruction("pick up the red key", DEFAULT_DIM);
        let door = embed_instruction("open the yellow door", DEFAULT_DIM);
        assert!(cosine(&blue, &red).unwrap() > cosine(&blue, &door).unwrap());
    }

    #[test]
    fn tokenization_ignores_case_and_punctuation() {
        assert_eq!(tokenize("Pick up, the KEY!"), vec!["pick", "up", "the", "key"]);
        assert_eq!(
            embed_instruction("Pick up, the KEY!", 64),
            embed_instruction("pick up the key", 64)
        );
    }

    #[test]
    fn empty_text_is_first_basis_vector() {
        assert_eq!(embed_instruction("", 64), EmbeddingVector::basis(64, 0));
        assert_eq!(embed_instruction("  ,;  ", 64), EmbeddingVector::basis(64, 0));
    }

    #[test]
    fn cosine_edge_cases() {
        let v = embed_instruction("go to the goal", 64);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&v, &-&v).unwrap() + 1.0).abs() < 1e-12);
        let e0 = EmbeddingVector::basis(8, 0);
        let e1 = EmbeddingVector::basis(8, 1);
        assert_eq!(cosine(&e0, &e1).unwrap(), 0.0);
        assert!(matches!(
            cosine(&e0, &EmbeddingVector::basis(4, 0)),
            Err(EmbedError::DimensionMismatch(8, 4))
        ));
    }

    #[test]
    fn antipodal_pair() {
        let v = embed_instruction("open the door", 16);
        let p = pca_project(&[v.clone(), -&v], 1).unwrap();
        let c = &p.coords;
        assert!((c[0][0] + c[1][0]).abs() < 1e-12);
        assert!((c[0][0].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pca_errors() {
        let v = EmbeddingVector::basis(4, 0);
        assert_eq!(
            pca_project(&[v.clone()], 1).unwrap_err(),
            PcaError::TooFewVectors(1)
        );
        assert_eq!(
            pca_project(&[v.clone(), v.clone()], 5).unwrap_err(),
            PcaError::TooManyComponents { k: 5, dim: 4 }
        );
    }

    #[test]
    fn csv_layout() {
        let vs = [
            embed_instruction("a b", 8),
            embed_instruction("c d", 8),
            embed_instruction("e, f", 8),
        ];
        let p = pca_project(&vs, 2).unwrap();
        let labels = vec![
            ("u0".to_string(), "a b".to_string()),
            ("u1".to_string(), "c d".to_string()),
            ("u2".to_string(), "e, f".to_string()),
        ];
        let csv = pca_csv(&labels, &p);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "state_id,instruction,coord_1,coord_2");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("u2,\"e, f\","));
    }
}
