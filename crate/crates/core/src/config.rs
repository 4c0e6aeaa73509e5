//! Line-oriented `key = value` run configuration and the experiment it
//! describes.
//!
//! Blank lines and `#` comments are ignored. Later assignments override
//! earlier ones, which is how command-line flags are layered over a file.
//! [`RunConfig::render`] writes every key back out, and parsing that text
//! reproduces the configuration exactly.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{
    bundled_mnist_dir, load_mnist_dir, partition_iid, partition_noniid, synth_sequences,
    synth_teacher, Dataset, Partition,
};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::federation::{run_training, FedConfig, PosteriorVariance, Simulation, Timing};
use crate::nn::{ModelParams, ModelSpec, Readout};
use crate::rng::{stream_rng, Stream};
use crate::strategies::StrategyKind;
use crate::telemetry::{LinkModel, ReportFormat, RoundReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetChoice {
    Mnist,
    Teacher,
    Sequence,
}

impl DatasetChoice {
    fn name(self) -> &'static str {
        match self {
            DatasetChoice::Mnist => "mnist",
            DatasetChoice::Teacher => "teacher",
            DatasetChoice::Sequence => "sequence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionChoice {
    Iid,
    NonIid,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fed: FedConfig,
    pub dataset: DatasetChoice,
    pub data_dir: PathBuf,
    /// Leading items kept from the MNIST files; 0 keeps all.
    pub train_limit: usize,
    pub test_limit: usize,
    pub partition: PartitionChoice,
    pub classes_per_client: usize,
    /// Hidden width `D` and depth `L` (unroll length comes from `seq_len`).
    pub hidden: usize,
    pub layers: usize,
    pub vocab: usize,
    pub seq_len: usize,
    /// Synthetic train/test sizes for the sequence and teacher tasks.
    pub synth_train: usize,
    pub synth_test: usize,
    pub teacher_dim: usize,
    pub teacher_out: usize,
    pub noise_sd: f64,
    pub link: LinkModel,
    pub out: PathBuf,
    pub format: ReportFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fed: FedConfig::default(),
            dataset: DatasetChoice::Mnist,
            data_dir: bundled_mnist_dir(),
            train_limit: 0,
            test_limit: 0,
            partition: PartitionChoice::Iid,
            classes_per_client: 2,
            hidden: 64,
            layers: 2,
            vocab: 50,
            seq_len: 8,
            synth_train: 2000,
            synth_test: 500,
            teacher_dim: 8,
            teacher_out: 1,
            noise_sd: 0.0,
            link: LinkModel::default(),
            out: PathBuf::from("out"),
            format: ReportFormat::Csv,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("invalid value {value:?}: {e}")))
}

/// Re-keys errors from `FromStr` impls that already produce config errors.
fn parse_keyed<T: FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e| match e {
        Error::Config { msg, .. } => Error::config(key, msg),
        e => Error::config(key, e.to_string()),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("{value:?} is not a boolean"))),
    }
}

impl RunConfig {
    /// Names accepted by [`RunConfig::set`], in rendering order.
    pub fn keys() -> Vec<&'static str> {
        RunConfig::default()
            .entries()
            .into_iter()
            .map(|(k, _)| k)
            .collect()
    }

    /// Assigns one key without cross-field validation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let f = &mut self.fed;
        match key {
            "seed" => f.seed = parse(key, value)?,
            "clients" => f.clients = parse(key, value)?,
            "kappa" => f.kappa = parse(key, value)?,
            "local_iters" => f.local_iters = parse(key, value)?,
            "rounds" => f.rounds = parse(key, value)?,
            "stage_boundary" => f.stage_boundary = parse(key, value)?,
            "tau" => f.tau = parse(key, value)?,
            "eta" => f.eta = parse(key, value)?,
            "batch_size" => f.batch_size = parse(key, value)?,
            "strategy" => f.strategy = parse_keyed(key, value)?,
            "agg_mode" => f.agg_mode = parse_keyed(key, value)?,
            "p" => f.p = parse(key, value)?,
            "alpha" => f.alpha = parse(key, value)?,
            "sigma2" => f.sigma2 = parse(key, value)?,
            "prior_var" => f.prior_var = parse(key, value)?,
            "s2" => f.s2 = parse_keyed(key, value)?,
            "topk" => f.topk.enabled = parse_bool(key, value)?,
            "topk_fraction" => f.topk.k_fraction = parse(key, value)?,
            "timing" => {
                f.timing = match value {
                    "wall" => Timing::Wall,
                    "modeled" => Timing::Modeled {
                        client_gflops: match f.timing {
                            Timing::Modeled { client_gflops } => client_gflops,
                            Timing::Wall => 1.0,
                        },
                    },
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("{value:?} is not modeled or wall"),
                        ))
                    }
                }
            }
            "client_gflops" => {
                let g = parse(key, value)?;
                if let Timing::Modeled { client_gflops } = &mut f.timing {
                    *client_gflops = g;
                } else {
                    return Err(Error::config(key, "only meaningful with timing = modeled"));
                }
            }
            "exec" => {
                f.exec = match value {
                    "parallel" => ExecMode::Parallel,
                    "sequential" => ExecMode::Sequential,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("{value:?} is not parallel or sequential"),
                        ))
                    }
                }
            }
            "dataset" => {
                self.dataset = match value {
                    "mnist" => DatasetChoice::Mnist,
                    "teacher" => DatasetChoice::Teacher,
                    "sequence" => DatasetChoice::Sequence,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("{value:?} is not mnist, teacher or sequence"),
                        ))
                    }
                }
            }
            "data_dir" => self.data_dir = PathBuf::from(value),
            "train_limit" => self.train_limit = parse(key, value)?,
            "test_limit" => self.test_limit = parse(key, value)?,
            "partition" => {
                self.partition = match value {
                    "iid" => PartitionChoice::Iid,
                    "noniid" => PartitionChoice::NonIid,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("{value:?} is not iid or noniid"),
                        ))
                    }
                }
            }
            "classes_per_client" => self.classes_per_client = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "vocab" => self.vocab = parse(key, value)?,
            "seq_len" => self.seq_len = parse(key, value)?,
            "synth_train" => self.synth_train = parse(key, value)?,
            "synth_test" => self.synth_test = parse(key, value)?,
            "teacher_dim" => self.teacher_dim = parse(key, value)?,
            "teacher_out" => self.teacher_out = parse(key, value)?,
            "noise_sd" => self.noise_sd = parse(key, value)?,
            "downlink_mbps" => self.link.downlink_mbps = parse(key, value)?,
            "uplink_mbps" => self.link.uplink_mbps = parse(key, value)?,
            "agg_seconds" => self.link.agg_seconds = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "format" => self.format = parse_keyed(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its current value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = &self.fed;
        let mut e: Vec<(&'static str, String)> = vec![
            ("seed", f.seed.to_string()),
            ("clients", f.clients.to_string()),
            ("kappa", f.kappa.to_string()),
            ("local_iters", f.local_iters.to_string()),
            ("rounds", f.rounds.to_string()),
            ("stage_boundary", f.stage_boundary.to_string()),
            ("tau", f.tau.to_string()),
            ("eta", f.eta.to_string()),
            ("batch_size", f.batch_size.to_string()),
            ("strategy", f.strategy.to_string()),
            ("agg_mode", f.agg_mode.to_string()),
            ("p", f.p.to_string()),
            ("alpha", f.alpha.to_string()),
            ("sigma2", f.sigma2.to_string()),
            ("prior_var", f.prior_var.to_string()),
            ("s2", f.s2.to_string()),
            ("topk", f.topk.enabled.to_string()),
            ("topk_fraction", f.topk.k_fraction.to_string()),
        ];
        match f.timing {
            Timing::Wall => e.push(("timing", "wall".into())),
            Timing::Modeled { client_gflops } => {
                e.push(("timing", "modeled".into()));
                e.push(("client_gflops", client_gflops.to_string()));
            }
        }
        let exec = match f.exec {
            ExecMode::Parallel => "parallel",
            ExecMode::Sequential => "sequential",
        };
        e.extend([
            ("exec", exec.to_string()),
            ("dataset", self.dataset.name().to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("train_limit", self.train_limit.to_string()),
            ("test_limit", self.test_limit.to_string()),
            (
                "partition",
                match self.partition {
                    PartitionChoice::Iid => "iid",
                    PartitionChoice::NonIid => "noniid",
                }
                .to_string(),
            ),
            ("classes_per_client", self.classes_per_client.to_string()),
            ("hidden", self.hidden.to_string()),
            ("layers", self.layers.to_string()),
            ("vocab", self.vocab.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("synth_train", self.synth_train.to_string()),
            ("synth_test", self.synth_test.to_string()),
            ("teacher_dim", self.teacher_dim.to_string()),
            ("teacher_out", self.teacher_out.to_string()),
            ("noise_sd", self.noise_sd.to_string()),
            ("downlink_mbps", self.link.downlink_mbps.to_string()),
            ("uplink_mbps", self.link.uplink_mbps.to_string()),
            ("agg_seconds", self.link.agg_seconds.to_string()),
            ("out", self.out.display().to_string()),
            ("format", self.format.extension().to_string()),
        ]);
        e
    }

    pub fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    line,
                    format!("line {} is not of the form key = value", n + 1),
                )
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Defaults overridden by `text`, then validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.fed.validate()?;
        self.link.validate()?;
        let positive = [
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("synth_train", self.synth_train),
            ("synth_test", self.synth_test),
            ("teacher_dim", self.teacher_dim),
            ("teacher_out", self.teacher_out),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(*k, "must be at least 1"));
        }
        if self.vocab < 2 {
            return Err(Error::config("vocab", "must be at least 2"));
        }
        if self.seq_len < 2 {
            return Err(Error::config("seq_len", "must be at least 2"));
        }
        if self.hidden < 2 && self.fed.s2 == PosteriorVariance::Auto {
            return Err(Error::config("hidden", "automatic s2 needs hidden >= 2"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config("noise_sd", "must be >= 0"));
        }
        if self.partition == PartitionChoice::NonIid {
            if self.dataset == DatasetChoice::Teacher {
                return Err(Error::config("partition", "noniid needs class labels"));
            }
            if self.classes_per_client == 0 {
                return Err(Error::config("classes_per_client", "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Loads or generates the data and builds the model spec and partition.
    pub fn build(&self) -> Result<Experiment> {
        self.validate()?;
        let seed = self.fed.seed;
        let mut data_rng = stream_rng(seed, Stream::Data, 0, 0);
        let limit = |d: Dataset, n: usize| if n == 0 { d } else { d.take(n) };
        let (spec, train, test, teacher) = match self.dataset {
            DatasetChoice::Mnist => {
                let (train, test) = load_mnist_dir(&self.data_dir)?;
                let (train, test) = (limit(train, self.train_limit), limit(test, self.test_limit));
                let spec = ModelSpec::mlp(train.input_dim, self.hidden, self.layers, train.out_dim);
                (spec, train, test, None)
            }
            DatasetChoice::Teacher => {
                let spec =
                    ModelSpec::mlp(self.teacher_dim, self.hidden, self.layers, self.teacher_out)
                        .with_readout(Readout::Identity);
                let n = self.synth_train + self.synth_test;
                let (all, teacher) = synth_teacher(&spec, n, self.noise_sd, &mut data_rng)?;
                let test_idx: Vec<usize> = (self.synth_train..n).collect();
                (
                    spec,
                    all.take(self.synth_train),
                    all.subset(&test_idx)?,
                    Some(teacher),
                )
            }
            DatasetChoice::Sequence => {
                let n = self.synth_train + self.synth_test;
                let (all, _) = synth_sequences(self.vocab, self.seq_len, n, &mut data_rng)?;
                let spec = ModelSpec::rnn(self.vocab, self.hidden, self.seq_len, self.vocab);
                let test_idx: Vec<usize> = (self.synth_train..n).collect();
                (
                    spec,
                    all.take(self.synth_train),
                    all.subset(&test_idx)?,
                    None,
                )
            }
        };
        let mut part_rng = stream_rng(seed, Stream::Partition, 0, 0);
        let partition = match self.partition {
            PartitionChoice::Iid => partition_iid(train.len(), self.fed.clients, &mut part_rng)?,
            PartitionChoice::NonIid => {
                let labels = train
                    .labels()
                    .ok_or_else(|| Error::config("partition", "noniid needs class labels"))?;
                partition_noniid(
                    &labels,
                    self.fed.clients,
                    self.classes_per_client,
                    &mut part_rng,
                )?
            }
        };
        Ok(Experiment {
            spec,
            train,
            test,
            partition,
            teacher,
        })
    }
}

/// Data, model and partition for one run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    /// Ground-truth network for the teacher task.
    pub teacher: Option<ModelParams>,
}

impl Experiment {
    pub fn run(&self, fed: &FedConfig) -> Result<Vec<RoundReport>> {
        run_training(fed, &self.spec, &self.train, &self.test, &self.partition)
    }

    pub fn simulation(&self, fed: &FedConfig) -> Result<Simulation<'_>> {
        Simulation::new(
            fed.clone(),
            &self.spec,
            &self.train,
            &self.test,
            &self.partition,
        )
    }
}

/// Seed for the `i`-th member of a sweep.
pub fn sweep_seed(seed: u64, i: usize) -> u64 {
    if i == 0 {
        seed
    } else {
        crate::rng::derive_seed(seed, Stream::Init, 0xfeed, i as u64)
    }
}

/// Strategies accepted on the command line.
pub fn strategy_names() -> Vec<&'static str> {
    StrategyKind::ALL.iter().map(|k| k.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(
            (c.fed.tau, c.fed.kappa, c.fed.rounds, c.fed.stage_boundary),
            (3, 0.1, 60, 55)
        );
        assert_eq!((c.fed.clients, c.vocab, c.seq_len), (20, 50, 8));
    }

    fn key_of(text: &str) -> String {
        match RunConfig::parse(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of("tau = 0"), "tau");
        assert_eq!(key_of("rounds = 10\nstage_boundary = 11"), "stage_boundary");
        assert_eq!(key_of("bogus = 1"), "bogus");
        assert_eq!(key_of("strategy = dropconnect"), "strategy");
        assert_eq!(key_of("p = 1.0"), "p");
        assert_eq!(key_of("kappa = abc"), "kappa");
        assert_eq!(key_of("format = xml"), "format");
        assert_eq!(key_of("topk = true\ntopk_fraction = 0"), "topk_fraction");
    }

    #[test]
    fn comments_and_overrides() {
        let c = RunConfig::parse("# header\nseed = 3 # inline\n\np=0.25\nseed=4\n").unwrap();
        assert_eq!((c.fed.seed, c.fed.p), (4, 0.25));
    }

    #[test]
    fn render_roundtrips() {
        let mut c = RunConfig::default();
        c.apply_text("eta = 0.123456789\ns2 = 1e-9\ntiming = wall\nstrategy = magnitude_prune\nagg_mode = masked\ndataset = sequence\nformat = json").unwrap();
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.render()).unwrap(), d);
        assert_eq!(RunConfig::keys().len(), d.entries().len());
    }

    #[test]
    fn builds_each_dataset() {
        let c = RunConfig::parse(
            "dataset = teacher\nsynth_train = 40\nsynth_test = 10\nclients = 4\nhidden = 6",
        )
        .unwrap();
        let e = c.build().unwrap();
        assert_eq!(
            (e.train.len(), e.test.len(), e.partition.clients()),
            (40, 10, 4)
        );
        assert!(e.teacher.is_some());

        let c =
            RunConfig::parse("dataset = sequence\nsynth_train = 40\nsynth_test = 10\nclients = 4")
                .unwrap();
        let e = c.build().unwrap();
        assert_eq!(e.spec.input_dim, 50);

        let c = RunConfig::parse(
            "train_limit = 100\ntest_limit = 50\npartition = noniid\nclients = 10",
        )
        .unwrap();
        let e = c.build().unwrap();
        assert_eq!(
            (e.train.len(), e.test.len(), e.spec.input_dim),
            (100, 50, 784)
        );
    }
}
