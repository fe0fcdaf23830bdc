//! Deterministic signed feature hashing of token unigrams and bigrams.

use sha2::{Digest, Sha256};

use super::KbError;

/// Default embedding dimension.
pub const DEFAULT_EMBEDDING_DIM: usize = 256;
/// Smallest accepted embedding dimension.
pub const MIN_EMBEDDING_DIM: usize = 8;

fn hash_feature(feature: &str) -> u64 {
    let digest = Sha256::digest(feature.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Hash tokens into a unit-norm vector of length `dim`.
///
/// Every unigram and every adjacent bigram is hashed with SHA-256; the low
/// bits pick a bucket and the top bit picks the sign.
pub fn embed<S: AsRef<str>>(tokens: &[S], dim: usize) -> Result<Vec<f64>, KbError> {
    if dim < MIN_EMBEDDING_DIM {
        return Err(KbError::DimensionTooSmall(dim));
    }
    if tokens.is_empty() {
        return Err(KbError::EmptyInput);
    }
    let mut v = vec![0.0; dim];
    let mut add = |feature: &str| {
        let h = hash_feature(feature);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    };
    for t in tokens {
        add(&format!("u:{}", t.as_ref()));
    }
    for pair in tokens.windows(2) {
        add(&format!("b:{} {}", pair[0].as_ref(), pair[1].as_ref()));
    }
    let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Signed collisions cancelled out completely.
        let bucket = (hash_feature(&format!("u:{}", tokens[0].as_ref())) % dim as u64) as usize;
        v[bucket] = 1.0;
        norm = 1.0;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Cosine similarity; 0 when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
