//! Synthetic tasks: teacher-network regression and Markov next-token
//! prediction.

use rand::distr::weighted::WeightedIndex;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::nn::{predict, Input, Matrix, ModelKind, ModelParams, ModelSpec, Target};

/// Teacher weights are drawn uniformly from `[-TEACHER_BOUND, TEACHER_BOUND]`.
pub const TEACHER_BOUND: f64 = 2.0;

/// Draws a teacher network and `n_points` noisy regression samples from it.
pub fn synth_teacher<R: Rng + ?Sized>(
    spec: &ModelSpec,
    n_points: usize,
    noise_sd: f64,
    rng: &mut R,
) -> Result<(Dataset, ModelParams)> {
    spec.validate()?;
    if n_points == 0 {
        return Err(Error::input("teacher task needs at least one point"));
    }
    if spec.kind != ModelKind::Mlp {
        return Err(Error::input("teacher task is defined for MLPs"));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::input(format!("noise_sd {noise_sd} is negative")));
    }
    let matrices = spec
        .matrix_shapes()
        .into_iter()
        .map(|s| {
            Matrix::from_fn(s.rows, s.cols, |_, _| {
                rng.random_range(-TEACHER_BOUND..=TEACHER_BOUND)
            })
        })
        .collect();
    let teacher = ModelParams::from_matrices(spec, matrices)?;
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::input(e.to_string()))?;
    let mut inputs = Vec::with_capacity(n_points);
    let mut targets = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let x: Vec<f64> = (0..spec.input_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let x = Input::Vector(x);
        let mut y = predict(&teacher, &x)?;
        if noise_sd > 0.0 {
            for v in &mut y {
                *v += noise.sample(rng);
            }
        }
        inputs.push(x);
        targets.push(Target::Values(y));
    }
    let data = Dataset::new(
        inputs,
        targets,
        DatasetKind::TeacherRegression,
        spec.input_dim,
        spec.output_dim,
    )?;
    Ok((data, teacher))
}

/// First-order Markov chain over `0..vocab`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    transitions: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn new(transitions: Vec<Vec<f64>>) -> Result<Self> {
        let v = transitions.len();
        if v < 2 {
            return Err(Error::input("chain needs at least two states"));
        }
        for (i, row) in transitions.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != v || row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::input(format!(
                    "row {i} is not a distribution over {v} states"
                )));
            }
        }
        Ok(MarkovChain { transitions })
    }

    /// A peaked random chain: each state has three favoured successors with
    /// weights 0.6, 0.25 and 0.1; the remaining 0.05 is spread uniformly.
    pub fn random<R: Rng + ?Sized>(vocab: usize, rng: &mut R) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::input(format!("vocab_size {vocab} < 2")));
        }
        let peaks = [0.6, 0.25, 0.1];
        let favoured = peaks.len().min(vocab);
        let spread = (1.0 - peaks[..favoured].iter().sum::<f64>()) / vocab as f64;
        let transitions = (0..vocab)
            .map(|_| {
                let mut row = vec![spread; vocab];
                for (slot, j) in index::sample(rng, vocab, favoured).into_iter().enumerate() {
                    row[j] += peaks[slot];
                }
                row
            })
            .collect();
        Self::new(transitions)
    }

    /// `i -> (i + 1) mod vocab` with probability one.
    pub fn cycle(vocab: usize) -> Result<Self> {
        Self::new(
            (0..vocab)
                .map(|i| {
                    (0..vocab)
                        .map(|j| if j == (i + 1) % vocab { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn vocab(&self) -> usize {
        self.transitions.len()
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }
}

/// Samples `n` sequences from a random chain; see [`synth_sequences_with_chain`].
pub fn synth_sequences<R: Rng + ?Sized>(
    vocab_size: usize,
    seq_len: usize,
    n: usize,
    rng: &mut R,
) -> Result<(Dataset, MarkovChain)> {
    let chain = MarkovChain::random(vocab_size, rng)?;
    let data = synth_sequences_with_chain(&chain, seq_len, n, rng)?;
    Ok((data, chain))
}

/// `seq_len` tokens walked from a uniform start state; the label is the token
/// that follows.
pub fn synth_sequences_with_chain<R: Rng + ?Sized>(
    chain: &MarkovChain,
    seq_len: usize,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if seq_len < 2 {
        return Err(Error::input(format!("seq_len {seq_len} < 2")));
    }
    let vocab = chain.vocab();
    let steps: Vec<WeightedIndex<f64>> = chain
        .transitions
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| Error::input(e.to_string())))
        .collect::<Result<_>>()?;
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let mut tokens = Vec::with_capacity(seq_len);
        let mut t = rng.random_range(0..vocab);
        tokens.push(t);
        for _ in 1..seq_len {
            t = steps[t].sample(rng);
            tokens.push(t);
        }
        let next = steps[t].sample(rng);
        inputs.push(Input::Tokens(tokens));
        targets.push(Target::Class(next));
    }
    Dataset::new(inputs, targets, DatasetKind::SeqNextToken, vocab, vocab)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::Readout;

    #[test]
    fn noiseless_teacher_labels_reproduce() {
        let spec = ModelSpec::mlp(4, 6, 2, 2).with_readout(Readout::Identity);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let (data, teacher) = synth_teacher(&spec, 50, 0.0, &mut r).unwrap();
        for m in &teacher.matrices {
            assert!(m.as_slice().iter().all(|v| v.abs() <= TEACHER_BOUND));
        }
        for (x, y) in data.inputs.iter().zip(&data.targets) {
            assert_eq!(&Target::Values(predict(&teacher, x).unwrap()), y);
        }
        let again = synth_teacher(&spec, 50, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again.0, data);
        assert!(synth_teacher(&spec, 0, 0.0, &mut r).is_err());
    }

    #[test]
    fn cycle_chain_is_deterministic() {
        let chain = MarkovChain::cycle(2).unwrap();
        let d =
            synth_sequences_with_chain(&chain, 5, 20, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (x, y) in d.inputs.iter().zip(&d.targets) {
            let Input::Tokens(t) = x else { panic!() };
            for w in t.windows(2) {
                assert_eq!(w[1], 1 - w[0]);
            }
            assert_eq!(*y, Target::Class(1 - t[t.len() - 1]));
        }
    }

    #[test]
    fn labels_in_range_and_errors() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let (d, _) = synth_sequences(7, 3, 500, &mut r).unwrap();
        assert!(d.labels().unwrap().iter().all(|&l| l < 7));
        assert!(synth_sequences(1, 3, 5, &mut r).is_err());
        assert!(synth_sequences(5, 1, 5, &mut r).is_err());
    }

    #[test]
    fn transition_frequencies_match_chain() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let vocab = 5;
        let (d, chain) = synth_sequences(vocab, 2, 100_000, &mut r).unwrap();
        let mut counts = vec![vec![0usize; vocab]; vocab];
        for (x, y) in d.inputs.iter().zip(&d.targets) {
            let Input::Tokens(t) = x else { panic!() };
            let Target::Class(next) = y else { panic!() };
            counts[t[0]][t[1]] += 1;
            counts[t[1]][*next] += 1;
        }
        for (row, probs) in counts.iter().zip(chain.transitions()) {
            let total: usize = row.iter().sum();
            for (&c, &p) in row.iter().zip(probs) {
                assert!((c as f64 / total as f64 - p).abs() < 0.02);
            }
        }
    }
}
