//! Dropping patterns and the two pattern controllers: the loss-trend
//! adaptation used in stage one and the score-ranked selection of stage two.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{MatrixShape, ModelSpec};

/// Which rows of which matrices can be dropped, and how many each layer keeps
/// at dropout rate `p`.
///
/// Every droppable matrix is one layer; its quota is
/// `max(1, round((1 - p) * rows))`, so no layer is ever dropped entirely.
/// Non-droppable matrices (the readout) are always transmitted in full.
#[derive(Debug, Clone, PartialEq)]
pub struct RowLayout {
    matrices: Vec<MatrixShape>,
    quotas: Vec<usize>,
    p: f64,
}

impl RowLayout {
    pub fn new(spec: &ModelSpec, p: f64) -> Result<Self> {
        spec.validate()?;
        Self::from_shapes(spec.matrix_shapes(), p)
    }

    /// Layout over arbitrary matrix shapes, in transmission order.
    pub fn from_shapes(matrices: Vec<MatrixShape>, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::input(format!("dropout rate {p} outside [0, 1)")));
        }
        if matrices.iter().any(|m| m.rows == 0 || m.cols == 0) {
            return Err(Error::input("empty matrix in layout"));
        }
        let quotas = matrices
            .iter()
            .filter(|m| m.droppable)
            .map(|m| {
                let q = ((1.0 - p) * m.rows as f64).round() as usize;
                q.clamp(1, m.rows)
            })
            .collect();
        Ok(RowLayout {
            matrices,
            quotas,
            p,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn matrices(&self) -> &[MatrixShape] {
        &self.matrices
    }

    /// `(rows, width, quota)` of each droppable layer.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.matrices
            .iter()
            .filter(|m| m.droppable)
            .zip(&self.quotas)
            .map(|(m, &q)| (m.rows, m.cols, q))
    }

    pub fn quotas(&self) -> &[usize] {
        &self.quotas
    }

    /// Total droppable rows `J`.
    pub fn total_rows(&self) -> usize {
        self.layers().map(|(rows, _, _)| rows).sum()
    }

    pub fn kept_rows(&self) -> usize {
        self.quotas.iter().sum()
    }

    /// Unsparse weight count `S = sum_l quota_l * width_l`.
    pub fn unsparse(&self) -> usize {
        self.layers().map(|(_, width, q)| q * width).sum()
    }

    /// Scalars in non-droppable matrices.
    pub fn fixed_scalars(&self) -> usize {
        self.matrices
            .iter()
            .filter(|m| !m.droppable)
            .map(|m| m.rows * m.cols)
            .sum()
    }

    /// Scalars carried by a full row payload: kept rows plus fixed matrices.
    pub fn payload_scalars(&self) -> usize {
        self.unsparse() + self.fixed_scalars()
    }

    /// Same layout at another dropout rate.
    pub fn with_rate(&self, p: f64) -> Result<Self> {
        Self::from_shapes(self.matrices.clone(), p)
    }

    /// 64-bit FNV-1a checksum of the matrix shapes and quotas.
    pub fn digest(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut feed = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        };
        feed(self.matrices.len() as u64);
        let mut quotas = self.quotas.iter();
        for m in &self.matrices {
            feed(m.rows as u64);
            feed(m.cols as u64);
            feed(u64::from(m.droppable));
            feed(if m.droppable {
                *quotas.next().unwrap() as u64
            } else {
                0
            });
        }
        h
    }

    /// Per-matrix row masks for `pattern`; fixed matrices are all-true.
    pub fn row_masks(&self, pattern: &DroppingPattern) -> Result<Vec<Vec<bool>>> {
        self.check(pattern)?;
        let mut bits = pattern.bits.iter().copied();
        Ok(self
            .matrices
            .iter()
            .map(|m| {
                if m.droppable {
                    bits.by_ref().take(m.rows).collect()
                } else {
                    vec![true; m.rows]
                }
            })
            .collect())
    }

    fn check_len(&self, pattern: &DroppingPattern) -> Result<()> {
        if pattern.len() != self.total_rows() {
            return Err(Error::shape(format!(
                "pattern covers {} rows, layout has {}",
                pattern.len(),
                self.total_rows()
            )));
        }
        Ok(())
    }

    /// Validates length and per-layer popcounts.
    pub fn check(&self, pattern: &DroppingPattern) -> Result<()> {
        self.check_len(pattern)?;
        for (layer, (found, expected)) in self
            .popcounts(pattern)
            .into_iter()
            .zip(&self.quotas)
            .enumerate()
        {
            if found != *expected {
                return Err(Error::shape(format!(
                    "layer {layer} keeps {found} rows, quota is {expected}"
                )));
            }
        }
        Ok(())
    }

    /// Kept rows per layer (no quota check).
    pub fn popcounts(&self, pattern: &DroppingPattern) -> Vec<usize> {
        let mut start = 0;
        self.layers()
            .map(|(rows, _, _)| {
                let c = pattern.bits[start..start + rows]
                    .iter()
                    .filter(|&&b| b)
                    .count();
                start += rows;
                c
            })
            .collect()
    }

    fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.layers()
            .map(|(rows, _, _)| {
                let r = start..start + rows;
                start += rows;
                r
            })
            .collect()
    }
}

/// Binary keep-mask over all droppable rows, layer-major and row-ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DroppingPattern {
    bits: Vec<bool>,
}

impl DroppingPattern {
    pub fn ones(len: usize) -> Self {
        DroppingPattern {
            bits: vec![true; len],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        DroppingPattern { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.bits[j]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Per-row experience counters `E`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WeightScores {
    scores: Vec<u64>,
}

impl WeightScores {
    pub fn zeros(len: usize) -> Self {
        WeightScores {
            scores: vec![0; len],
        }
    }

    pub fn from_vec(scores: Vec<u64>) -> Self {
        WeightScores { scores }
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Per-iteration loss history with block length `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWindow {
    history: Vec<f64>,
    tau: usize,
}

impl LossWindow {
    pub fn new(tau: usize) -> Result<Self> {
        if tau == 0 {
            return Err(Error::input("tau must be at least 1"));
        }
        Ok(LossWindow {
            history: Vec::new(),
            tau,
        })
    }

    pub fn with_history(tau: usize, history: Vec<f64>) -> Result<Self> {
        let mut w = Self::new(tau)?;
        w.history = history;
        Ok(w)
    }

    pub fn push(&mut self, loss: f64) {
        self.history.push(loss);
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Iterations recorded so far.
    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// True when iteration `v` (1-based) ends a block and a gap is defined.
    pub fn is_boundary(&self, v: usize) -> bool {
        v >= 2 * self.tau && v.is_multiple_of(self.tau)
    }
}

/// Keeps a uniformly random `quota_l`-subset of every layer's rows.
pub fn sample_pattern<R: Rng + ?Sized>(layout: &RowLayout, rng: &mut R) -> DroppingPattern {
    let mut bits = Vec::with_capacity(layout.total_rows());
    for (rows, _, quota) in layout.layers() {
        let start = bits.len();
        if quota == rows {
            bits.resize(start + rows, true);
            continue;
        }
        bits.resize(start + rows, false);
        for i in index::sample(rng, rows, quota) {
            bits[start + i] = true;
        }
    }
    DroppingPattern { bits }
}

/// Mean loss of iterations `v-tau+1..=v` minus that of `v-2tau+1..=v-tau`.
pub fn loss_gap(window: &LossWindow, v: usize) -> Result<f64> {
    let tau = window.tau;
    if v < 2 * tau {
        return Err(Error::Precondition(format!(
            "loss gap at iteration {v} needs v >= 2*tau = {}",
            2 * tau
        )));
    }
    if window.history.len() < v {
        return Err(Error::Precondition(format!(
            "loss gap at iteration {v} but only {} losses recorded",
            window.history.len()
        )));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let recent = mean(&window.history[v - tau..v]);
    let earlier = mean(&window.history[v - 2 * tau..v - tau]);
    Ok(recent - earlier)
}

/// Keeps `current` when the loss did not rise, otherwise draws a fresh pattern.
pub fn adapt_pattern<R: Rng + ?Sized>(
    current: &DroppingPattern,
    delta: f64,
    layout: &RowLayout,
    rng: &mut R,
) -> DroppingPattern {
    if delta <= 0.0 {
        current.clone()
    } else {
        sample_pattern(layout, rng)
    }
}

/// Experience update for the rows held during the block that just ended:
/// +1 when the loss did not rise, otherwise +1 only for rows kept again.
pub fn update_scores(
    scores: &mut WeightScores,
    delta: f64,
    next: &DroppingPattern,
    current: &DroppingPattern,
) -> Result<()> {
    if next.len() != current.len() || scores.len() != current.len() {
        return Err(Error::shape(format!(
            "score vector {}, current pattern {}, next pattern {}",
            scores.len(),
            current.len(),
            next.len()
        )));
    }
    for ((e, &held), &again) in scores.scores.iter_mut().zip(&current.bits).zip(&next.bits) {
        if held && (delta <= 0.0 || again) {
            *e += 1;
        }
    }
    Ok(())
}

/// Keeps the `quota_l` highest-scoring rows of each layer, ties to the lower
/// row index.
pub fn stage_two_pattern(scores: &WeightScores, layout: &RowLayout) -> Result<DroppingPattern> {
    if scores.len() != layout.total_rows() {
        return Err(Error::shape(format!(
            "{} scores for {} rows",
            scores.len(),
            layout.total_rows()
        )));
    }
    Ok(rank_select(layout, |j| scores.scores[j] as f64))
}

/// Per layer, keeps the `quota` rows with the largest `key`, ties to the lower
/// index.
pub(crate) fn rank_select(layout: &RowLayout, key: impl Fn(usize) -> f64) -> DroppingPattern {
    let mut bits = vec![false; layout.total_rows()];
    for (range, &quota) in layout.layer_ranges().into_iter().zip(&layout.quotas) {
        let mut order: Vec<usize> = range.collect();
        order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        for &j in &order[..quota] {
            bits[j] = true;
        }
    }
    DroppingPattern { bits }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn flat_layout(layers: &[usize], p: f64) -> RowLayout {
        let shapes = layers
            .iter()
            .map(|&rows| MatrixShape {
                rows,
                cols: 3,
                droppable: true,
            })
            .collect();
        RowLayout::from_shapes(shapes, p).unwrap()
    }

    #[test]
    fn quotas_follow_rounding_and_floor_of_one() {
        let l = flat_layout(&[4, 5, 1, 10], 0.5);
        assert_eq!(l.quotas(), &[2, 3, 1, 5]);
        assert_eq!(l.total_rows(), 20);
        assert_eq!(l.unsparse(), 11 * 3);
        assert!(RowLayout::from_shapes(vec![], 1.0).is_err());
    }

    #[test]
    fn unsparse_matches_uniform_width_formula() {
        let spec = ModelSpec::mlp(8, 8, 3, 2);
        let l = RowLayout::new(&spec, 0.25).unwrap();
        assert_eq!(l.total_rows(), 24);
        assert_eq!(l.unsparse(), (0.75 * 24.0 * 8.0) as usize);
        assert_eq!(l.fixed_scalars(), 16);
    }

    #[test]
    fn zero_rate_gives_all_ones_without_randomness() {
        let l = flat_layout(&[4, 3], 0.0);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(sample_pattern(&l, &mut r1), DroppingPattern::ones(7));
        assert_eq!(sample_pattern(&l, &mut r2), DroppingPattern::ones(7));
    }

    #[test]
    fn sampled_patterns_meet_quota() {
        let l = flat_layout(&[4, 4, 4], 0.5);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = sample_pattern(&l, &mut r);
            assert_eq!(l.popcounts(&p), vec![2, 2, 2]);
        }
    }

    #[test]
    fn sampled_marginals_are_uniform() {
        // Exact marginal of a uniform 2-subset of 4 rows is 1/2.
        let l = flat_layout(&[4], 0.5);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            for (c, &b) in counts.iter_mut().zip(sample_pattern(&l, &mut r).bits()) {
                *c += usize::from(b);
            }
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.5).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn loss_gap_examples() {
        let w = LossWindow::with_history(2, vec![1.0; 6]).unwrap();
        assert_eq!(loss_gap(&w, 6).unwrap(), 0.0);
        let w = LossWindow::with_history(1, vec![9.0, 3.0, 5.0]).unwrap();
        assert_eq!(loss_gap(&w, 3).unwrap(), 2.0);
        let w = LossWindow::with_history(3, vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(loss_gap(&w, 6).unwrap(), -3.0);
        assert!(matches!(loss_gap(&w, 5), Err(Error::Precondition(_))));
        let short = LossWindow::with_history(3, vec![1.0; 4]).unwrap();
        assert!(matches!(loss_gap(&short, 6), Err(Error::Precondition(_))));
        assert!(LossWindow::new(0).is_err());
    }

    #[test]
    fn adapt_keeps_pattern_unless_loss_rose() {
        let l = flat_layout(&[6, 6], 0.5);
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let cur = sample_pattern(&l, &mut r);
        assert_eq!(adapt_pattern(&cur, 0.0, &l, &mut r), cur);
        assert_eq!(adapt_pattern(&cur, -1.0, &l, &mut r), cur);
        let next = adapt_pattern(&cur, 1.0, &l, &mut r);
        assert_eq!(l.popcounts(&next), vec![3, 3]);
    }

    #[test]
    fn score_update_branches() {
        let cur = DroppingPattern::from_bits(vec![true, true, false, false]);
        let next = DroppingPattern::from_bits(vec![true, false, true, false]);

        let mut e = WeightScores::from_vec(vec![5, 5, 5, 5]);
        update_scores(&mut e, 0.0, &next, &cur).unwrap();
        assert_eq!(e.as_slice(), &[6, 6, 5, 5]);

        let mut e = WeightScores::from_vec(vec![5, 5, 5, 5]);
        update_scores(&mut e, -0.5, &next, &cur).unwrap();
        assert_eq!(e.as_slice(), &[6, 6, 5, 5]);

        let mut e = WeightScores::from_vec(vec![5, 5, 5, 5]);
        update_scores(&mut e, 1.0, &next, &cur).unwrap();
        assert_eq!(e.as_slice(), &[6, 5, 5, 5]);

        let bad = DroppingPattern::ones(3);
        assert!(update_scores(&mut e, 1.0, &bad, &cur).is_err());
    }

    #[test]
    fn stage_two_rank_rule() {
        let l = flat_layout(&[4], 0.5);
        let e = WeightScores::from_vec(vec![3, 1, 4, 2]);
        let p = stage_two_pattern(&e, &l).unwrap();
        assert_eq!(p.bits(), &[true, false, true, false]);

        let tied = WeightScores::from_vec(vec![7, 7, 7, 7]);
        let p = stage_two_pattern(&tied, &l).unwrap();
        assert_eq!(p.bits(), &[true, true, false, false]);

        assert!(stage_two_pattern(&WeightScores::zeros(3), &l).is_err());
    }

    /// Brute-force `E_j > lambda` where lambda is the p-quantile of the
    /// layer's distinct scores (the largest value with at least a fraction p
    /// of scores at or below it that still leaves exactly `quota` above).
    fn threshold_rule(scores: &[u64], quota: usize) -> Vec<bool> {
        let mut sorted = scores.to_vec();
        sorted.sort_unstable();
        let drop = scores.len() - quota;
        for &lambda in &sorted {
            let above = scores.iter().filter(|&&s| s > lambda).count();
            if above == quota {
                return scores.iter().map(|&s| s > lambda).collect();
            }
        }
        assert_eq!(drop, 0);
        vec![true; scores.len()]
    }

    proptest! {
        #[test]
        fn stage_two_equals_threshold_for_distinct_scores(
            raw in proptest::collection::hash_set(0u64..1000, 2..20),
            p in 0.1f64..0.5,
        ) {
            let scores: Vec<u64> = raw.into_iter().collect();
            let l = flat_layout(&[scores.len()], p);
            let quota = l.quotas()[0];
            let got = stage_two_pattern(&WeightScores::from_vec(scores.clone()), &l).unwrap();
            let want = threshold_rule(&scores, quota);
            prop_assert_eq!(got.bits(), want.as_slice());
        }

        #[test]
        fn stage_two_is_permutation_equivariant(
            scores in proptest::collection::vec(0u64..5, 8),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let l = flat_layout(&[8], 0.5);
            let base = stage_two_pattern(&WeightScores::from_vec(scores.clone()), &l).unwrap();
            let mut perm: Vec<usize> = (0..8).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<u64> = perm.iter().map(|&i| scores[i]).collect();
            let got = stage_two_pattern(&WeightScores::from_vec(permuted), &l).unwrap();
            // Compare as multisets of kept scores; exact row identity is only
            // defined up to ties.
            let kept = |pat: &DroppingPattern, s: &[u64]| {
                let mut v: Vec<u64> = (0..8).filter(|&j| pat.get(j)).map(|j| s[j]).collect();
                v.sort_unstable();
                v
            };
            prop_assert_eq!(kept(&base, &scores), kept(&got, &perm.iter().map(|&i| scores[i]).collect::<Vec<_>>()));
            if scores.iter().collect::<std::collections::HashSet<_>>().len() == 8 {
                for (new_pos, &old) in perm.iter().enumerate() {
                    prop_assert_eq!(got.get(new_pos), base.get(old));
                }
            }
        }

        #[test]
        fn loss_gap_is_translation_equivariant(
            hist in proptest::collection::vec(-100.0f64..100.0, 6..30),
            c in -1e3f64..1e3,
            tau in 1usize..4,
        ) {
            let v = (hist.len() / tau) * tau;
            prop_assume!(v >= 2 * tau);
            let w = LossWindow::with_history(tau, hist.clone()).unwrap();
            let shifted = LossWindow::with_history(tau, hist.iter().map(|h| h + c).collect()).unwrap();
            let a = loss_gap(&w, v).unwrap();
            let b = loss_gap(&shifted, v).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn every_pattern_meets_quota(seed in any::<u64>(), p in 0.0f64..0.9, delta in -1.0f64..1.0) {
            let l = flat_layout(&[7, 3, 12], p);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let cur = sample_pattern(&l, &mut r);
            l.check(&cur).unwrap();
            l.check(&adapt_pattern(&cur, delta, &l, &mut r)).unwrap();
            let e = WeightScores::from_vec((0..22).map(|i| (i * 7 % 5) as u64).collect());
            l.check(&stage_two_pattern(&e, &l).unwrap()).unwrap();
        }
    }
}
