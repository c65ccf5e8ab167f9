//! Scoring kernels.
//!
//! Cosine similarity, three scale-invariant sparsity measures of an embedding
//! difference, and the combined contradiction score
//! `cos(E(p1), E(p2)) + alpha * sparsity(E_s(p1), E_s(p2))`.
//!
//! Every kernel accepts `f32` or `f64` slices and accumulates in `f64` with a
//! fixed left-to-right order, so results do not depend on the caller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const NORM_EPSILON: f64 = 1e-12;

/// A finite, fixed-dimension embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidEmbedding(format!(
                "dimension must be at least 2, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!("non-finite value at index {pos}")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Which sparsity function scores the sparse-space difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparsityKind {
    #[default]
    Hoyer,
    L2OverL1,
    Kappa4,
    /// `‖δ‖₄⁴ / ‖δ‖₂²` exactly as sometimes printed. Not scale invariant;
    /// only selected explicitly.
    Kappa4Printed,
}

impl SparsityKind {
    pub fn score<T: Copy + Into<f64>>(self, a: &[T], b: &[T]) -> Result<f64> {
        match self {
            SparsityKind::Hoyer => hoyer(a, b),
            SparsityKind::L2OverL1 => l2_over_l1(a, b),
            SparsityKind::Kappa4 => kappa4(a, b),
            SparsityKind::Kappa4Printed => kappa4_printed(a, b),
        }
    }
}

impl std::fmt::Display for SparsityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SparsityKind::Hoyer => "hoyer",
            SparsityKind::L2OverL1 => "l2-over-l1",
            SparsityKind::Kappa4 => "kappa4",
            SparsityKind::Kappa4Printed => "kappa4-printed",
        })
    }
}

impl std::str::FromStr for SparsityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hoyer" => Ok(SparsityKind::Hoyer),
            "l2-over-l1" => Ok(SparsityKind::L2OverL1),
            "kappa4" => Ok(SparsityKind::Kappa4),
            "kappa4-printed" => Ok(SparsityKind::Kappa4Printed),
            other => Err(Error::Config(format!("unknown sparsity function {other:?}"))),
        }
    }
}

/// Weight of the sparsity term and which sparsity function to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub alpha: f64,
    #[serde(default)]
    pub kind: SparsityKind,
}

impl ScoreWeights {
    pub fn new(alpha: f64, kind: SparsityKind) -> Result<Self> {
        let w = Self { alpha, kind };
        w.validate()?;
        Ok(w)
    }

    pub fn cosine_only() -> Self {
        Self { alpha: 0.0, kind: SparsityKind::Hoyer }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self::cosine_only()
    }
}

fn check_dims<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

fn check_sparsity_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidEmbedding(format!("sparsity needs dimension >= 2, got {d}")));
    }
    Ok(())
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    check_dims(a, b)?;
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < NORM_EPSILON || nb < NORM_EPSILON {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// L1 norm, squared L2 norm and fourth power of the L4 norm of `a - b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffNorms {
    pub l1: f64,
    pub l2_sq: f64,
    pub l4_pow4: f64,
    pub min_abs: f64,
    pub max_abs: f64,
}

impl DiffNorms {
    pub fn of<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<Self> {
        check_dims(a, b)?;
        let mut n = DiffNorms { l1: 0.0, l2_sq: 0.0, l4_pow4: 0.0, min_abs: f64::INFINITY, max_abs: 0.0 };
        for (&x, &y) in a.iter().zip(b) {
            let d = x.into() - y.into();
            let sq = d * d;
            n.min_abs = n.min_abs.min(d.abs());
            n.max_abs = n.max_abs.max(d.abs());
            n.l1 += d.abs();
            n.l2_sq += sq;
            n.l4_pow4 += sq * sq;
        }
        Ok(n)
    }

    pub fn l2(&self) -> f64 {
        self.l2_sq.sqrt()
    }

    pub fn is_degenerate(&self) -> bool {
        self.l2() < NORM_EPSILON
    }
}

/// Hoyer sparsity of the difference:
/// `(sqrt(d) - ‖δ‖₁/‖δ‖₂) / (sqrt(d) - 1)`, in `[0, 1]`.
///
/// Identical inputs score 0: a duplicate carries no contradiction signal.
pub fn hoyer<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    let n = DiffNorms::of(a, b)?;
    check_sparsity_dim(a.len())?;
    // equal magnitudes everywhere: exactly 0 rather than rounding residue
    if n.is_degenerate() || n.min_abs == n.max_abs {
        return Ok(0.0);
    }
    Ok(hoyer_from_ratio(a.len(), n.l1 / n.l2()))
}

pub(crate) fn hoyer_from_ratio(d: usize, l1_over_l2: f64) -> f64 {
    let sqrt_d = (d as f64).sqrt();
    ((sqrt_d - l1_over_l2) / (sqrt_d - 1.0)).clamp(0.0, 1.0)
}

/// `‖δ‖₂ / ‖δ‖₁`, in `[1/sqrt(d), 1]`; 0 for identical inputs.
pub fn l2_over_l1<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    let n = DiffNorms::of(a, b)?;
    check_sparsity_dim(a.len())?;
    if n.is_degenerate() {
        return Ok(0.0);
    }
    Ok(n.l2() / n.l1)
}

/// Scale-invariant kurtosis-style measure `‖δ‖₄⁴ / ‖δ‖₂⁴`, in `[1/d, 1]`;
/// 0 for identical inputs.
pub fn kappa4<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    let n = DiffNorms::of(a, b)?;
    check_sparsity_dim(a.len())?;
    if n.is_degenerate() {
        return Ok(0.0);
    }
    Ok(n.l4_pow4 / (n.l2_sq * n.l2_sq))
}

/// `‖δ‖₄⁴ / ‖δ‖₂²`. Scales with `‖δ‖₂²`, so not comparable across pairs of
/// different magnitude.
pub fn kappa4_printed<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    let n = DiffNorms::of(a, b)?;
    check_sparsity_dim(a.len())?;
    if n.is_degenerate() {
        return Ok(0.0);
    }
    Ok(n.l4_pow4 / n.l2_sq)
}

/// `cosine(cos_a, cos_b) + w.alpha * sparsity(sp_a, sp_b)`.
///
/// The cosine space and the sparse space may have different dimensions.
pub fn combined_score<T: Copy + Into<f64>>(
    cos_a: &[T],
    cos_b: &[T],
    sp_a: &[T],
    sp_b: &[T],
    w: ScoreWeights,
) -> Result<f64> {
    let c = cosine(cos_a, cos_b)?;
    let s = w.kind.score(sp_a, sp_b)?;
    Ok(c + w.alpha * s)
}
