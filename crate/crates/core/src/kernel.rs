//! Nadaraya-Watson conditional-mean estimation with reference-rule
//! bandwidth selection.
//!
//! The estimator at a query point s is the kernel-weighted average of the
//! training outcomes, sum_i K_h(s_i - s) y_i / sum_i K_h(s_i - s), with
//! K_h(u) = K(u/h)/h. Queries whose weight mass falls below the denominator
//! guard are rejected rather than extrapolated.

use serde::{Deserialize, Serialize};

use crate::data::{Arm, StudyADataset};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    Epanechnikov,
}

impl KernelKind {
    /// K(u): standard normal density, or 0.75 (1 - u^2) on [-1, 1].
    #[inline]
    pub fn weight(self, u: f64) -> f64 {
        match self {
            KernelKind::Gaussian => {
                const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
                INV_SQRT_2PI * (-0.5 * u * u).exp()
            }
            KernelKind::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            kind: KernelKind::Gaussian,
            bandwidth: Bandwidth::Auto,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Reference-rule bandwidth with undersmoothing:
/// h = 1.06 min(sd, IQR/1.34) n^(-1/5) n^(-0.11).
///
/// `column` only labels the error when the values are degenerate. When the
/// IQR is zero but the standard deviation is not (heavy ties in the middle
/// of the distribution), the rule falls back to the standard deviation so
/// the bandwidth stays positive.
pub fn auto_bandwidth(values: &[f64], column: usize) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::DegenerateSurrogate { column });
    }
    let sd = stats::sample_sd(values);
    if !(sd > 0.0) {
        return Err(Error::DegenerateSurrogate { column });
    }
    let iqr = stats::interquartile_range(values);
    let scale = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let nf = n as f64;
    Ok(1.06 * scale * nf.powf(-0.2) * nf.powf(-0.11))
}

/// Conditional-mean estimate fitted on one arm and surrogate column of the
/// reference study. Immutable after fit; evaluation is a pure function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedConditionalMean {
    surrogates: Vec<f64>,
    outcomes: Vec<f64>,
    pub bandwidth: f64,
    pub kind: KernelKind,
    pub support: (f64, f64),
    pub column: usize,
    pub y_range: (f64, f64),
}

/// Relative denominator guard: the weight sum must reach eps * n.
const DENOMINATOR_GUARD: f64 = 1e-10;

impl FittedConditionalMean {
    pub fn from_pairs(
        pairs: Vec<(f64, f64)>,
        spec: KernelSpec,
        column: usize,
    ) -> Result<Self> {
        spec.validate()?;
        if pairs.len() < 2 {
            return Err(Error::DegenerateSurrogate { column });
        }
        let surrogates: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let outcomes: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let h = match spec.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Auto => auto_bandwidth(&surrogates, column)?,
        };
        let s_min = surrogates.iter().cloned().fold(f64::INFINITY, f64::min);
        let s_max = surrogates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let y_min = outcomes.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = outcomes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(FittedConditionalMean {
            surrogates,
            outcomes,
            bandwidth: h,
            kind: spec.kind,
            support: (s_min, s_max),
            column,
            y_range: (y_min, y_max),
        })
    }

    pub fn n_training(&self) -> usize {
        self.surrogates.len()
    }

    /// Evaluate the conditional mean at a query point. Errors when the
    /// kernel weight mass at the query is numerically empty, which signals
    /// a support violation or an overly small bandwidth.
    pub fn evaluate(&self, s_query: f64) -> Result<f64> {
        let h = self.bandwidth;
        let mut num = 0.0;
        let mut den = 0.0;
        for (&s, &y) in self.surrogates.iter().zip(self.outcomes.iter()) {
            let w = self.kind.weight((s - s_query) / h) / h;
            num += w * y;
            den += w;
        }
        let guard = DENOMINATOR_GUARD * self.surrogates.len() as f64;
        if !(den >= guard) {
            return Err(Error::NoEffectiveNeighbors {
                query: s_query,
                analysis: self.column,
                subject: None,
            });
        }
        Ok(num / den)
    }
}

/// Fit the conditional mean for one arm and 1-based surrogate column of the
/// reference study.
pub fn fit_mu(
    a: &StudyADataset,
    arm: Arm,
    column: usize,
    spec: KernelSpec,
) -> Result<FittedConditionalMean> {
    if column == 0 || column > a.n_columns() {
        return Err(Error::Config(format!(
            "surrogate column {column} outside 1..={}",
            a.n_columns()
        )));
    }
    FittedConditionalMean::from_pairs(a.arm_pairs(arm, column), spec, column)
}
