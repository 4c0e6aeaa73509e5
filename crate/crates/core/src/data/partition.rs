//! Client partitions: IID shards and label-sharded non-IID splits.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Per-client index lists into one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn clients(&self) -> usize {
        self.shards.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    /// True when shards are pairwise disjoint and every index is below `n`.
    pub fn is_valid(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.shards.iter().flatten() {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        true
    }
}

/// Splits `len` into `parts` contiguous runs whose sizes differ by at most one.
fn split_even(len: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let (base, extra) = (len / parts, len % parts);
    let mut start = 0;
    (0..parts)
        .map(|k| {
            let size = base + usize::from(k < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

/// Random permutation of `0..n` cut into `k` near-equal shards.
pub fn partition_iid<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Partition> {
    if k == 0 || k > n {
        return Err(Error::input(format!(
            "cannot split {n} items across {k} clients"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(Partition {
        shards: split_even(n, k)
            .into_iter()
            .map(|r| order[r].to_vec())
            .collect(),
    })
}

/// Label-shard split. The classes are put in a random cyclic order and client
/// `k` takes the `classes_per_client` consecutive classes starting at
/// `k * classes_per_client`; each class's items are shuffled and shared out in
/// near-equal shards among the clients holding it.
pub fn partition_noniid<R: Rng + ?Sized>(
    labels: &[usize],
    k: usize,
    classes_per_client: usize,
    rng: &mut R,
) -> Result<Partition> {
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    if k == 0 {
        return Err(Error::input("zero clients"));
    }
    if classes_per_client == 0 || classes_per_client > n_classes {
        return Err(Error::input(format!(
            "classes_per_client {classes_per_client} outside 1..={n_classes}"
        )));
    }
    let mut class_order: Vec<usize> = (0..n_classes).collect();
    class_order.shuffle(rng);
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for client in 0..k {
        for j in 0..classes_per_client {
            let class = class_order[(client * classes_per_client + j) % n_classes];
            holders[class].push(client);
        }
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut shards = vec![Vec::new(); k];
    for (mut items, who) in by_class.into_iter().zip(&holders) {
        if who.is_empty() {
            continue;
        }
        items.shuffle(rng);
        for (range, &client) in split_even(items.len(), who.len()).into_iter().zip(who) {
            shards[client].extend_from_slice(&items[range]);
        }
    }
    if let Some(empty) = shards.iter().position(Vec::is_empty) {
        return Err(Error::input(format!(
            "client {empty} received no items; too many clients for the class budget"
        )));
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(Partition { shards })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn labels(n: usize, classes: usize) -> Vec<usize> {
        (0..n).map(|i| i % classes).collect()
    }

    #[test]
    fn iid_examples() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let p = partition_iid(100, 10, &mut r).unwrap();
        assert_eq!(p.sizes(), vec![10; 10]);
        assert!(p.is_valid(100));
        assert_eq!(p.shards.iter().map(Vec::len).sum::<usize>(), 100);
        let q = partition_iid(103, 10, &mut r).unwrap();
        let s = q.sizes();
        assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        assert_eq!(
            partition_iid(50, 7, &mut ChaCha8Rng::seed_from_u64(3)).unwrap(),
            partition_iid(50, 7, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
        );
        assert!(partition_iid(5, 6, &mut r).is_err());
    }

    #[test]
    fn noniid_class_budget() {
        let ls = labels(2000, 10);
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let p = partition_noniid(&ls, 20, 2, &mut r).unwrap();
            assert!(p.is_valid(ls.len()));
            assert_eq!(p.shards.iter().map(Vec::len).sum::<usize>(), ls.len());
            for s in &p.shards {
                let mut cls: Vec<usize> = s.iter().map(|&i| ls[i]).collect();
                cls.sort_unstable();
                cls.dedup();
                assert!(cls.len() <= 2);
            }
        }
    }

    #[test]
    fn noniid_full_budget_covers_all_labels() {
        let ls = labels(1000, 10);
        let p = partition_noniid(&ls, 10, 10, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for s in &p.shards {
            let mut counts = [0usize; 10];
            for &i in s {
                counts[ls[i]] += 1;
            }
            assert_eq!(counts, [10; 10]);
        }
    }

    #[test]
    fn noniid_errors() {
        let ls = labels(20, 10);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert!(partition_noniid(&ls, 4, 0, &mut r).is_err());
        assert!(partition_noniid(&ls, 4, 11, &mut r).is_err());
        assert!(partition_noniid(&ls, 30, 1, &mut r).is_err());
    }
}
