use crate::error::{Error, Result};

/// Tolerance on the sum-to-one constraint.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// A nonnegative vector over the alphabet summing to 1.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexPoint {
    weights: Vec<f64>,
}

impl SimplexPoint {
    /// Validates nonnegativity and the sum-to-one constraint (within 1e-10).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidInput("simplex point needs length >= 2".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("simplex weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!("simplex weights sum to {sum}, not 1")));
        }
        Ok(Self { weights })
    }

    /// Normalizes arbitrary nonnegative weights.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(Error::InvalidInput("weights must have a positive finite sum".into()));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(b: usize) -> Self {
        Self { weights: vec![1.0 / b as f64; b] }
    }

    /// Indicator vector of a token.
    pub fn delta(b: usize, token: usize) -> Self {
        let mut w = vec![0.0; b];
        w[token] = 1.0;
        Self { weights: w }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn min_component(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.min_component() > 0.0
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for SimplexPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexPoint::new(v)
    }
}

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Vec<f64> {
        p.weights
    }
}
