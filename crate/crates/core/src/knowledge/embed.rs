use sha2::{Digest, Sha256};

use super::KnowledgeError;

/// Maps text to a fixed-dimension vector.
pub trait Embedder: Send + Sync {
    /// Identifier persisted with an index so queries use a matching embedder.
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, KnowledgeError>;
}

/// Deterministic feature-hashing embedder: lowercase alphanumeric tokens are
/// hashed into signed buckets and the result is L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn name(&self) -> String {
        format!("hash-sha256-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, KnowledgeError> {
        let mut v = vec![0f32; self.dim];
        let lowered = text.to_lowercase();
        for token in lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let h = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % self.dim as u64;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_texts_have_unit_similarity() {
        let e = HashEmbedder::default();
        let a = e.embed("gradient boosting with target encoding").unwrap();
        let b = e.embed("Gradient boosting, with target encoding!").unwrap();
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-6);
        assert_eq!(a.len(), 256);
    }

    #[test]
    fn vectors_are_normalized_and_deterministic() {
        let e = HashEmbedder::new(32);
        let a = e.embed("image augmentation mixup").unwrap();
        let norm: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(a, e.embed("image augmentation mixup").unwrap());
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let e = HashEmbedder::new(8);
        let z = e.embed("  ,,  ").unwrap();
        assert!(z.iter().all(|x| *x == 0.0));
        assert_eq!(cosine(&z, &e.embed("x").unwrap()), 0.0);
    }

    #[test]
    fn related_texts_score_higher_than_unrelated() {
        let e = HashEmbedder::default();
        let q = e
            .embed("time series forecasting with lag features")
            .unwrap();
        let near = e
            .embed("lag features for forecasting sales time series")
            .unwrap();
        let far = e.embed("protein folding contact maps").unwrap();
        assert!(cosine(&q, &near) > cosine(&q, &far));
    }
}
