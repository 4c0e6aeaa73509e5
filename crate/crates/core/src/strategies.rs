//! Baseline pattern providers and the top-k sparsifier with residual
//! accumulation that can be stacked on any of them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dropout::{rank_select, sample_pattern, DroppingPattern, RowLayout};
use crate::error::{Error, Result};
use crate::nn::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StrategyKind {
    /// Adaptive dropout with loss-trend control and score-ranked stage two.
    #[default]
    FedBiad,
    /// Dense training; the dropout rate is ignored.
    FedAvg,
    /// A fresh uniform pattern per round, never adapted.
    RandomDrop,
    /// Keeps the leading rows of every layer.
    OrderedDrop,
    /// Keeps the rows of largest L2 norm in the received global means.
    MagnitudePrune,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::FedBiad,
        StrategyKind::FedAvg,
        StrategyKind::RandomDrop,
        StrategyKind::OrderedDrop,
        StrategyKind::MagnitudePrune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::FedBiad => "fedbiad",
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::RandomDrop => "random_drop",
            StrategyKind::OrderedDrop => "ordered_drop",
            StrategyKind::MagnitudePrune => "magnitude_prune",
        }
    }

    /// Dropout rate the strategy actually trains with.
    pub fn effective_p(self, p: f64) -> f64 {
        match self {
            StrategyKind::FedAvg => 0.0,
            _ => p,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "strategy",
                    format!(
                        "unknown strategy {s:?}; expected one of {}",
                        StrategyKind::ALL.map(|k| k.name()).join(", ")
                    ),
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopKConfig {
    pub enabled: bool,
    pub k_fraction: f64,
}

impl Default for TopKConfig {
    fn default() -> Self {
        TopKConfig {
            enabled: false,
            k_fraction: 0.1,
        }
    }
}

impl TopKConfig {
    pub fn new(k_fraction: f64) -> Result<Self> {
        let cfg = TopKConfig {
            enabled: true,
            k_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(Error::config(
                "topk_fraction",
                format!("{} outside (0, 1]", self.k_fraction),
            ));
        }
        Ok(())
    }

    /// Entries sent out of `n`.
    pub fn k_of(&self, n: usize) -> usize {
        ((self.k_fraction * n as f64).ceil() as usize).min(n)
    }
}

/// Uniform random pattern, drawn once per round.
pub fn random_drop_pattern<R: Rng + ?Sized>(layout: &RowLayout, rng: &mut R) -> DroppingPattern {
    sample_pattern(layout, rng)
}

/// Keeps the first `quota_l` rows of every layer.
pub fn ordered_drop_pattern(layout: &RowLayout) -> DroppingPattern {
    let mut bits = Vec::with_capacity(layout.total_rows());
    for (rows, _, quota) in layout.layers() {
        bits.extend((0..rows).map(|i| i < quota));
    }
    DroppingPattern::from_bits(bits)
}

/// Keeps the `quota_l` rows with the largest L2 norm per layer, ties to the
/// lower index.
pub fn magnitude_prune_pattern(means: &ModelParams, layout: &RowLayout) -> Result<DroppingPattern> {
    let shapes = layout.matrices();
    if means.matrices.len() != shapes.len()
        || means
            .matrices
            .iter()
            .zip(shapes)
            .any(|(m, s)| m.shape() != (s.rows, s.cols))
    {
        return Err(Error::shape("means are not congruent with the row layout"));
    }
    let norms: Vec<f64> = means
        .matrices
        .iter()
        .zip(shapes)
        .filter(|(_, s)| s.droppable)
        .flat_map(|(m, s)| (0..s.rows).map(move |i| m.row(i).iter().map(|v| v * v).sum::<f64>()))
        .collect();
    Ok(rank_select(layout, |j| norms[j]))
}

/// Adds `delta` into `residual`, sends the `k` entries of largest magnitude
/// (ties to the lower index) and keeps the rest accumulated.
///
/// Returns `(index, value)` pairs in ascending index order. Sent positions of
/// `residual` are zeroed, so `sent + residual_after == residual_before + delta`
/// holds exactly, entry by entry.
pub fn topk_sparsify(
    delta: &[f64],
    residual: &mut [f64],
    cfg: &TopKConfig,
) -> Result<Vec<(u32, f64)>> {
    cfg.validate()?;
    if delta.len() != residual.len() {
        return Err(Error::shape(format!(
            "delta has {} entries, residual {}",
            delta.len(),
            residual.len()
        )));
    }
    if u32::try_from(delta.len()).is_err() {
        return Err(Error::shape("more than u32::MAX entries"));
    }
    for (r, d) in residual.iter_mut().zip(delta) {
        *r += d;
    }
    let k = cfg.k_of(delta.len());
    let mut order: Vec<usize> = (0..delta.len()).collect();
    let by_mag = |&a: &usize, &b: &usize| {
        residual[b]
            .abs()
            .total_cmp(&residual[a].abs())
            .then(a.cmp(&b))
    };
    if k < order.len() && k > 0 {
        order.select_nth_unstable_by(k - 1, by_mag);
    }
    order.truncate(k);
    order.sort_unstable();
    Ok(order
        .into_iter()
        .map(|i| {
            let v = std::mem::take(&mut residual[i]);
            (i as u32, v)
        })
        .collect())
}
