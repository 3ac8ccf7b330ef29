//! Embedding seam.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding request failed: {0}")]
    Transport(String),
    #[error("embedding service returned a malformed reply: {0}")]
    Malformed(String),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Maps text to a fixed-dimension vector. Identical text must map to an
/// identical vector for the lifetime of the process.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SEED: u64 = 0x6d65_6d72_6f75_7465;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ SEED;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    // final avalanche so low bits are usable as a bucket index
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Deterministic feature-hashing embedder over character n-grams.
///
/// Text is lowercased, whitespace-collapsed and padded with one space on each
/// side; every character 3-gram and 4-gram is hashed into one of `dim` buckets
/// with a hash-derived sign. The result is L2-normalized. Stable across runs
/// and platforms, so it is usable in golden tests.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let normalized: String = text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let chars: Vec<char> = format!(" {normalized} ").chars().collect();
        let mut v = vec![0.0f64; self.dim];
        let mut buf = String::new();
        for n in [3usize, 4] {
            for w in chars.windows(n) {
                buf.clear();
                buf.extend(w);
                let h = fnv1a(buf.as_bytes());
                let idx = (h % self.dim as u64) as usize;
                let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
                v[idx] += sign;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // too short for any n-gram (or all features cancelled)
            let idx = (fnv1a(normalized.as_bytes()) % self.dim as u64) as usize;
            v[idx] = 1.0;
            return v;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.embed_text(text))
    }
}
