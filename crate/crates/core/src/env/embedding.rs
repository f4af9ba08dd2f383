use crate::error::{ensure_len, Error, Result};

/// A real vector on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `raw` to unit L2 norm.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::shape("embedding must have at least one dimension"));
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Argument(format!("cannot normalize vector with norm {norm}")));
        }
        Ok(EmbeddingVector(raw.into_iter().map(|x| x / norm).collect()))
    }

    /// Accepts an already unit-norm vector (within 1e−6).
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if values.is_empty() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!("embedding norm {norm} is not 1")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Inner product of two unit vectors, in `[-1, 1]`.
pub fn relevance(user: &EmbeddingVector, item: &EmbeddingVector) -> Result<f64> {
    ensure_len("relevance operands", item.dim(), user.dim())?;
    let dot: f64 = user.0.iter().zip(&item.0).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Euclidean distance between two unit vectors, in `[0, 2]`.
pub fn item_novelty(item: &EmbeddingVector, prev: &EmbeddingVector) -> Result<f64> {
    ensure_len("novelty operands", prev.dim(), item.dim())?;
    Ok(euclidean(&item.0, &prev.0))
}
