//! Per-sample data terms. Each returns the value and its gradient with
//! respect to the logits.

use crate::error::{Error, Result};

/// Supervision for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

/// `sum_i (y_i - out_i)^2`
pub fn squared_error(output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if output.len() != target.len() {
        return Err(Error::shape(format!(
            "target has length {}, output {}",
            target.len(),
            output.len()
        )));
    }
    let mut value = 0.0;
    let grad = output
        .iter()
        .zip(target)
        .map(|(&o, &y)| {
            let r = o - y;
            value += r * r;
            2.0 * r
        })
        .collect();
    Ok((value, grad))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[class]`
pub fn softmax_cross_entropy(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    if class >= logits.len() {
        return Err(Error::shape(format!(
            "class {class} out of range for {} outputs",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, &z)| (z - log_z).exp() - if i == class { 1.0 } else { 0.0 })
        .collect();
    Ok((log_z - logits[class], grad))
}

/// Squared error for value targets, cross-entropy for class targets.
pub fn data_term(logits: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
    match target {
        Target::Class(c) => softmax_cross_entropy(logits, *c),
        Target::Values(y) => squared_error(logits, y),
    }
}

/// Whether `class` is among the `k` largest logits (ties favour lower index).
pub fn in_top_k(logits: &[f64], class: usize, k: usize) -> bool {
    let target = logits[class];
    let better = logits
        .iter()
        .enumerate()
        .filter(|&(i, &z)| z > target || (z == target && i < class))
        .count();
    better < k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let (v, g) = softmax_cross_entropy(&[0.0; 4], 2).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-15);
        assert!((g[2] + 0.75).abs() < 1e-15);
        assert!((g.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn top_k_membership() {
        let z = [0.1, 0.5, 0.3, 0.9];
        assert!(in_top_k(&z, 3, 1));
        assert!(!in_top_k(&z, 2, 2));
        assert!(in_top_k(&z, 2, 3));
        assert!(!in_top_k(&z, 0, 3));
    }

    #[test]
    fn squared_error_gradient() {
        let (v, g) = squared_error(&[1.0, 2.0], &[0.0, 4.0]).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(g, vec![2.0, -4.0]);
    }
}
