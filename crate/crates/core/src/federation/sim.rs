use super::{
    aggregate, client_update, select_clients, ClientContext, ClientState, FedConfig,
    PosteriorVariance, Timing,
};
use crate::data::{Dataset, Partition};
use crate::dropout::{RowLayout, WeightScores};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::nn::{loss::in_top_k, predict, ModelKind, ModelParams, ModelSpec, Target};
use crate::rng::{stream_rng, Stream};
use crate::telemetry::{epsilon_bound, RoundReport};
use crate::variational::posterior_variance;
use crate::wire::{deserialize, serialize, CommLedger};

/// Mean-network test metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// NaN for regression data.
    pub top1: f64,
    pub top3: f64,
    /// Mean squared error for regression data, NaN otherwise.
    pub mse: f64,
}

pub fn evaluate(params: &ModelParams, data: &Dataset, exec: ExecMode) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::input("empty evaluation set"));
    }
    let scored = exec.map_range(data.len(), |i| -> Result<(bool, bool, f64)> {
        let out = predict(params, &data.inputs[i])?;
        Ok(match &data.targets[i] {
            Target::Class(c) => (in_top_k(&out, *c, 1), in_top_k(&out, *c, 3), 0.0),
            Target::Values(y) => {
                let se = out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (false, false, se)
            }
        })
    });
    let n = data.len() as f64;
    let (mut t1, mut t3, mut se) = (0usize, 0usize, 0.0);
    for s in scored {
        let (a, b, e) = s?;
        t1 += usize::from(a);
        t3 += usize::from(b);
        se += e;
    }
    Ok(if data.labels().is_some() {
        Evaluation {
            top1: t1 as f64 / n,
            top3: t3 as f64 / n,
            mse: f64::NAN,
        }
    } else {
        Evaluation {
            top1: f64::NAN,
            top3: f64::NAN,
            mse: se / n,
        }
    })
}

/// Server state plus the client population, advanced one round at a time.
#[derive(Debug)]
pub struct Simulation<'a> {
    config: FedConfig,
    layout: RowLayout,
    train: &'a Dataset,
    test: &'a Dataset,
    clients: Vec<ClientState>,
    global: ModelParams,
    round: usize,
    reports: Vec<RoundReport>,
    ledger: CommLedger,
}

impl<'a> Simulation<'a> {
    pub fn new(
        config: FedConfig,
        spec: &ModelSpec,
        train: &'a Dataset,
        test: &'a Dataset,
        partition: &Partition,
    ) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        for (name, d) in [("training", train), ("test", test)] {
            if d.input_dim != spec.input_dim || d.out_dim != spec.output_dim {
                return Err(Error::shape(format!(
                    "{name} data is {}-in/{}-out, model is {}-in/{}-out",
                    d.input_dim, d.out_dim, spec.input_dim, spec.output_dim
                )));
            }
        }
        if partition.clients() != config.clients {
            return Err(Error::config(
                "clients",
                format!(
                    "partition has {} shards for K = {}",
                    partition.clients(),
                    config.clients
                ),
            ));
        }
        if !partition.is_valid(train.len()) || partition.shards.iter().any(Vec::is_empty) {
            return Err(Error::input(
                "partition shards must be disjoint, in range and non-empty",
            ));
        }
        let layout = RowLayout::new(spec, config.strategy.effective_p(config.p))?;
        let clients = partition
            .shards
            .iter()
            .enumerate()
            .map(|(id, shard)| ClientState {
                id,
                shard: shard.clone(),
                scores: WeightScores::zeros(layout.total_rows()),
                residual: Vec::new(),
            })
            .collect();
        let global = ModelParams::init(spec, &mut stream_rng(config.seed, Stream::Init, 0, 0));
        Ok(Simulation {
            config,
            layout,
            train,
            test,
            clients,
            global,
            round: 0,
            reports: Vec::new(),
            ledger: CommLedger::new(),
        })
    }

    /// Replaces the initial global means (before any round has run).
    pub fn with_initial_means(mut self, means: ModelParams) -> Result<Self> {
        if self.round != 0 {
            return Err(Error::Precondition("training already started".into()));
        }
        if !means.congruent(&self.global) || means.spec != self.global.spec {
            return Err(Error::shape("initial means do not match the model"));
        }
        self.global = means;
        Ok(self)
    }

    pub fn config(&self) -> &FedConfig {
        &self.config
    }

    pub fn layout(&self) -> &RowLayout {
        &self.layout
    }

    pub fn global_means(&self) -> &ModelParams {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn reports(&self) -> &[RoundReport] {
        &self.reports
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.config.rounds
    }

    /// `r V min_k |D^k|`
    pub fn m_r(&self, round: usize) -> u64 {
        let min = self
            .clients
            .iter()
            .map(ClientState::data_size)
            .min()
            .unwrap_or(0);
        (round * self.config.local_iters * min) as u64
    }

    fn spec(&self) -> &ModelSpec {
        &self.global.spec
    }

    /// Posterior variance used by the clients in `round`.
    pub fn s2_for_round(&self, round: usize) -> Result<f64> {
        match self.config.s2 {
            PosteriorVariance::Fixed(v) => Ok(v),
            PosteriorVariance::Auto => {
                let spec = self.spec();
                posterior_variance(
                    self.layout.unsparse() as f64,
                    self.m_r(round) as f64,
                    spec.input_dim as f64,
                    spec.hidden_dim as f64,
                    2.0,
                    spec.layers as f64,
                )
            }
        }
    }

    fn modeled_lttr(&self, selected: &[usize], gflops: f64) -> f64 {
        let steps = match self.spec().kind {
            ModelKind::Mlp => 1,
            ModelKind::Rnn => self.spec().layers,
        };
        let per_example = 6.0 * self.layout.payload_scalars() as f64 * steps as f64;
        selected
            .iter()
            .map(|&k| {
                let batch = self.config.batch_size.min(self.clients[k].data_size());
                self.config.local_iters as f64 * batch as f64 * per_example / (gflops * 1e9)
            })
            .fold(0.0, f64::max)
    }

    /// Runs one round and returns its report.
    pub fn step(&mut self) -> Result<&RoundReport> {
        let round = self.round + 1;
        let cfg = &self.config;
        let selected = select_clients(
            cfg.clients,
            cfg.kappa,
            &mut stream_rng(cfg.seed, Stream::Selection, round as u64, 0),
        );
        let ctx = ClientContext {
            config: cfg,
            layout: &self.layout,
            data: self.train,
            s2: self.s2_for_round(round)?,
        };
        let (global, clients) = (&self.global, &self.clients);
        let outcomes = cfg.exec.map(selected.clone(), |k| {
            let mut rng = stream_rng(cfg.seed, Stream::Client, k as u64, round as u64);
            client_update(&ctx, global, round, &clients[k], &mut rng)
        });
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

        let mut up_bytes = 0u64;
        let mut received = Vec::with_capacity(outcomes.len());
        for o in &outcomes {
            let bytes = serialize(&o.update, &self.layout)?;
            up_bytes += bytes.len() as u64;
            received.push(deserialize(&bytes, &self.layout)?);
        }
        let down_bytes = (selected.len() * 4 * self.global.param_count()) as u64;
        let next = aggregate(&received, &self.layout, &self.global, cfg.agg_mode)?;
        if !next.is_finite() {
            return Err(Error::Precondition(format!(
                "global means diverged in round {round}; lower eta"
            )));
        }

        let (mut loss_num, mut loss_den) = (0.0, 0.0);
        for o in &outcomes {
            let n = o.update.data_size as f64;
            loss_num += n * o.losses.iter().sum::<f64>() / o.losses.len() as f64;
            loss_den += n;
        }
        let lttr_s = match cfg.timing {
            Timing::Modeled { client_gflops } => self.modeled_lttr(&selected, client_gflops),
            Timing::Wall => outcomes.iter().map(|o| o.wall_seconds).fold(0.0, f64::max),
        };
        for (o, &k) in outcomes.into_iter().zip(&selected) {
            self.clients[k].scores = o.scores;
            self.clients[k].residual = o.residual;
        }
        self.global = next;
        self.round = round;
        self.ledger.record(up_bytes, down_bytes);

        let eval = evaluate(&self.global, self.test, self.config.exec)?;
        let spec = self.spec();
        let m_r = self.m_r(round);
        let epsilon = epsilon_bound(
            self.layout.unsparse() as f64,
            spec.layers as f64,
            spec.hidden_dim as f64,
            2.0,
            spec.input_dim as f64,
            m_r as f64,
        )?;
        self.reports.push(RoundReport {
            round: round as u64,
            train_loss: loss_num / loss_den,
            test_top1: eval.top1,
            test_top3: eval.top3,
            up_bytes,
            down_bytes,
            lttr_s,
            m_r,
            epsilon_bound: epsilon,
        });
        log::debug!("round {round}: top1 {:.4} up {up_bytes}", eval.top1);
        Ok(self.reports.last().unwrap())
    }

    /// Runs the remaining rounds.
    pub fn run(mut self) -> Result<Vec<RoundReport>> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.reports)
    }
}

/// Builds a [`Simulation`] and runs all `R` rounds.
pub fn run_training(
    config: &FedConfig,
    spec: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    partition: &Partition,
) -> Result<Vec<RoundReport>> {
    Simulation::new(config.clone(), spec, train, test, partition)?.run()
}
