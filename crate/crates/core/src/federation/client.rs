use std::time::Instant;

use rand::Rng;

use super::{ClientState, FedConfig};
use crate::data::Dataset;
use crate::dropout::{
    adapt_pattern, loss_gap, sample_pattern, stage_two_pattern, update_scores, DroppingPattern,
    LossWindow, RowLayout,
};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::rng::sample_batch;
use crate::strategies::{
    magnitude_prune_pattern, ordered_drop_pattern, random_drop_pattern, topk_sparsify, StrategyKind,
};
use crate::variational::{tempered_loss, Example, VariationalParams};
use crate::wire::{kept_flat_indices, row_update_bytes, upload_bytes, Payload, SparseUpdate};

/// Read-only inputs shared by every client in a round.
#[derive(Debug, Clone, Copy)]
pub struct ClientContext<'a> {
    pub config: &'a FedConfig,
    pub layout: &'a RowLayout,
    pub data: &'a Dataset,
    /// Posterior variance for this round's draws.
    pub s2: f64,
}

/// What a client hands back; state changes are applied after the barrier.
#[derive(Debug, Clone)]
pub struct ClientOutcome {
    pub update: SparseUpdate,
    pub scores: crate::dropout::WeightScores,
    pub residual: Vec<f64>,
    /// Per-iteration objective values.
    pub losses: Vec<f64>,
    /// Pattern-control boundaries reached, and how many of them resampled.
    pub boundaries: usize,
    pub resamples: usize,
    pub wall_seconds: f64,
}

fn initial_pattern<R: Rng + ?Sized>(
    ctx: &ClientContext<'_>,
    global: &ModelParams,
    round: usize,
    client: &ClientState,
    rng: &mut R,
) -> Result<DroppingPattern> {
    let layout = ctx.layout;
    Ok(match ctx.config.strategy {
        StrategyKind::FedBiad if round <= ctx.config.stage_boundary => sample_pattern(layout, rng),
        StrategyKind::FedBiad => stage_two_pattern(&client.scores, layout)?,
        StrategyKind::FedAvg => DroppingPattern::ones(layout.total_rows()),
        StrategyKind::RandomDrop => random_drop_pattern(layout, rng),
        StrategyKind::OrderedDrop => ordered_drop_pattern(layout),
        StrategyKind::MagnitudePrune => magnitude_prune_pattern(global, layout)?,
    })
}

/// One client's round: `V` masked variational SGD steps from the global
/// means, with loss-trend pattern control during stage one.
pub fn client_update<R: Rng + ?Sized>(
    ctx: &ClientContext<'_>,
    global: &ModelParams,
    round: usize,
    client: &ClientState,
    rng: &mut R,
) -> Result<ClientOutcome> {
    let start = Instant::now();
    let cfg = ctx.config;
    if round == 0 {
        return Err(Error::Precondition("rounds are numbered from 1".into()));
    }
    let n = client.data_size();
    if n == 0 {
        return Err(Error::input(format!("client {} holds no data", client.id)));
    }
    let mut scores = client.scores.clone();
    if scores.len() != ctx.layout.total_rows() {
        return Err(Error::shape("client scores do not match the layout"));
    }
    let mut pattern = initial_pattern(ctx, global, round, client, rng)?;
    let adaptive = cfg.strategy == StrategyKind::FedBiad && round <= cfg.stage_boundary;
    let mut vp =
        VariationalParams::new(global.clone(), ctx.s2, cfg.alpha, cfg.sigma2, cfg.prior_var)?;
    let mut window = LossWindow::new(cfg.tau)?;
    let (mut boundaries, mut resamples) = (0, 0);
    for v in 1..=cfg.local_iters {
        let picks = sample_batch(rng, n, cfg.batch_size);
        let batch: Vec<Example<'_>> = picks
            .iter()
            .map(|&i| {
                let j = client.shard[i];
                (&ctx.data.inputs[j], &ctx.data.targets[j])
            })
            .collect();
        let (loss, grad) = tempered_loss(&vp, &pattern, &batch, n, rng)?;
        vp.means.axpy(-cfg.eta, &grad);
        window.push(loss);
        if adaptive && window.is_boundary(v) {
            let delta = loss_gap(&window, v)?;
            let next = adapt_pattern(&pattern, delta, ctx.layout, rng);
            update_scores(&mut scores, delta, &next, &pattern)?;
            boundaries += 1;
            resamples += usize::from(delta > 0.0);
            pattern = next;
        }
    }
    let mut residual = client.residual.clone();
    let update = if cfg.topk.enabled {
        sparse_upload(ctx, global, &vp.means, pattern, n as u64, &mut residual)?
    } else {
        SparseUpdate::from_means(ctx.layout, pattern, &vp.means, n as u64)?
    };
    Ok(ClientOutcome {
        update,
        scores,
        residual,
        losses: window.history().to_vec(),
        boundaries,
        resamples,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Top-k over the kept entries of `local - global` plus the residual. Falls
/// back to the row payload (everything accumulated is sent) whenever the
/// sparse message would not be smaller.
fn sparse_upload(
    ctx: &ClientContext<'_>,
    global: &ModelParams,
    local: &ModelParams,
    pattern: DroppingPattern,
    data_size: u64,
    residual: &mut Vec<f64>,
) -> Result<SparseUpdate> {
    let layout = ctx.layout;
    let (g, l) = (global.flatten(), local.flatten());
    if residual.is_empty() {
        residual.resize(g.len(), 0.0);
    }
    if residual.len() != g.len() {
        return Err(Error::shape("top-k residual does not match the parameters"));
    }
    let idx = kept_flat_indices(layout, &pattern)?;
    let delta: Vec<f64> = idx.iter().map(|&i| l[i] - g[i]).collect();
    let mut res: Vec<f64> = idx.iter().map(|&i| residual[i]).collect();
    let sent = topk_sparsify(&delta, &mut res, &ctx.config.topk)?;
    let update = SparseUpdate::from_topk(layout, pattern, &sent, data_size)?;
    if upload_bytes(&update) < row_update_bytes(layout) {
        for (&i, &r) in idx.iter().zip(&res) {
            residual[i] = r;
        }
        return Ok(update);
    }
    for &(j, v) in &sent {
        res[j as usize] = v;
    }
    let rows = idx
        .iter()
        .zip(&res)
        .map(|(&i, &acc)| {
            residual[i] = 0.0;
            (g[i] + acc) as f32
        })
        .collect();
    Ok(SparseUpdate {
        payload: Payload::Rows(rows),
        ..update
    })
}
