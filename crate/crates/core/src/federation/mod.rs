//! The round engine: client selection, local variational training with
//! pattern control, server reconstruction and aggregation.

mod aggregate;
mod client;
mod mc;
mod sim;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

pub use aggregate::{aggregate, AggMode};
pub use client::{client_update, ClientContext, ClientOutcome};
pub use mc::{mc_generalization_error, mc_generalization_estimate, McEstimate};
pub use sim::{evaluate, run_training, Evaluation, Simulation};

use crate::dropout::WeightScores;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::strategies::{StrategyKind, TopKConfig};

/// Posterior variance used for the reparameterized draws.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PosteriorVariance {
    /// Closed form from `S`, `m_r`, `d`, `D`, `B = 2` and `L`, recomputed every round.
    #[default]
    Auto,
    Fixed(f64),
}

impl fmt::Display for PosteriorVariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PosteriorVariance::Auto => f.write_str("auto"),
            PosteriorVariance::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for PosteriorVariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(PosteriorVariance::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(PosteriorVariance::Fixed(v)),
            _ => Err(Error::config(
                "s2",
                format!("{s:?} is neither \"auto\" nor a variance >= 0"),
            )),
        }
    }
}

/// How the local training time of a round is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timing {
    /// `6 * active scalars * steps` flops per example at a fixed client speed.
    /// Deterministic, so reports are reproducible.
    Modeled { client_gflops: f64 },
    /// Measured wall time of the slowest client.
    Wall,
}

impl Default for Timing {
    fn default() -> Self {
        Timing::Modeled { client_gflops: 1.0 }
    }
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    /// `K`
    pub clients: usize,
    pub kappa: f64,
    /// Local iterations per round, `V`.
    pub local_iters: usize,
    /// `R`
    pub rounds: usize,
    /// Last round of stage one, `R_b`.
    pub stage_boundary: usize,
    pub tau: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub strategy: StrategyKind,
    pub agg_mode: AggMode,
    pub p: f64,
    pub alpha: f64,
    pub sigma2: f64,
    pub prior_var: f64,
    pub s2: PosteriorVariance,
    pub topk: TopKConfig,
    pub timing: Timing,
    pub exec: ExecMode,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            clients: 20,
            kappa: 0.1,
            local_iters: 10,
            rounds: 60,
            stage_boundary: 55,
            tau: 3,
            eta: 0.5,
            batch_size: 32,
            seed: 0,
            strategy: StrategyKind::FedBiad,
            agg_mode: AggMode::Literal,
            p: 0.5,
            alpha: 0.5,
            sigma2: 1.0,
            prior_var: 1.0,
            s2: PosteriorVariance::Auto,
            topk: TopKConfig::default(),
            timing: Timing::default(),
            exec: ExecMode::default(),
        }
    }
}

impl FedConfig {
    /// Checks single-field ranges and cross-field constraints; errors name
    /// the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.clients == 0 {
            return bad("clients", "need at least one client".into());
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad("kappa", format!("{} outside (0, 1]", self.kappa));
        }
        if self.tau == 0 {
            return bad("tau", "must be at least 1".into());
        }
        if self.local_iters < 2 * self.tau {
            return bad(
                "local_iters",
                format!(
                    "V = {} is below 2 * tau = {}",
                    self.local_iters,
                    2 * self.tau
                ),
            );
        }
        if self.rounds > 0 && !(1..=self.rounds).contains(&self.stage_boundary) {
            return bad(
                "stage_boundary",
                format!(
                    "R_b = {} outside 1..=R (R = {})",
                    self.stage_boundary, self.rounds
                ),
            );
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("{} must be positive", self.eta));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.p) {
            return bad("p", format!("{} outside [0, 1)", self.p));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", format!("{} outside (0, 1)", self.alpha));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad("sigma2", format!("{} must be positive", self.sigma2));
        }
        if !(self.prior_var > 0.0 && self.prior_var.is_finite()) {
            return bad("prior_var", format!("{} must be positive", self.prior_var));
        }
        if self.topk.enabled {
            self.topk.validate()?;
        }
        if let Timing::Modeled { client_gflops } = self.timing {
            if !(client_gflops > 0.0 && client_gflops.is_finite()) {
                return bad("client_gflops", format!("{client_gflops} must be positive"));
            }
        }
        Ok(())
    }

    /// `c = max(floor(kappa K), 1)`
    pub fn selected_count(&self) -> usize {
        selected_count(self.clients, self.kappa)
    }
}

/// `max(floor(kappa K), 1)`, tolerant of `kappa K` landing a hair below an
/// integer in floating point.
pub fn selected_count(k: usize, kappa: f64) -> usize {
    ((kappa * k as f64 + 1e-9).floor() as usize).clamp(1, k.max(1))
}

/// Uniform `c`-subset of `0..k`, ascending.
pub fn select_clients<R: Rng + ?Sized>(k: usize, kappa: f64, rng: &mut R) -> Vec<usize> {
    let mut ids = index::sample(rng, k, selected_count(k, kappa)).into_vec();
    ids.sort_unstable();
    ids
}

/// Per-client state that survives between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    /// Indices of this client's examples in the training set.
    pub shard: Vec<usize>,
    pub scores: WeightScores,
    /// Top-k residual in flattened parameter order; empty when top-k is off.
    pub residual: Vec<f64>,
}

impl ClientState {
    pub fn data_size(&self) -> usize {
        self.shard.len()
    }
}
