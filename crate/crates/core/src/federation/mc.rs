use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::nn::{predict, Input, ModelParams};

/// Monte Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// `(1/n) sum_s mean_x |f_{theta_s}(x) - f_teacher(x)|^2` with
/// `theta_s ~ N(means, s2 I)`.
pub fn mc_generalization_error<R: Rng + ?Sized>(
    means: &ModelParams,
    s2: f64,
    teacher: &ModelParams,
    probes: &[Input],
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    mc_generalization_estimate(
        means,
        s2,
        teacher,
        probes,
        n_samples,
        rng,
        ExecMode::default(),
    )
    .map(|e| e.mean)
}

pub fn mc_generalization_estimate<R: Rng + ?Sized>(
    means: &ModelParams,
    s2: f64,
    teacher: &ModelParams,
    probes: &[Input],
    n_samples: usize,
    rng: &mut R,
    exec: ExecMode,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::input("need at least one Monte Carlo sample"));
    }
    if probes.is_empty() {
        return Err(Error::input("need at least one probe input"));
    }
    if !(s2 >= 0.0 && s2.is_finite()) {
        return Err(Error::input(format!(
            "posterior variance {s2} must be >= 0"
        )));
    }
    let (a, b) = (&means.spec, &teacher.spec);
    if a.input_dim != b.input_dim || a.output_dim != b.output_dim || a.kind != b.kind {
        return Err(Error::shape(format!(
            "student {:?} {}->{} vs teacher {:?} {}->{}",
            a.kind, a.input_dim, a.output_dim, b.kind, b.input_dim, b.output_dim
        )));
    }
    let truth = probes
        .iter()
        .map(|x| predict(teacher, x))
        .collect::<Result<Vec<_>>>()?;
    let s = s2.sqrt();
    let draws: Vec<ModelParams> = (0..n_samples)
        .map(|_| {
            let mut theta = means.clone();
            if s > 0.0 {
                for m in &mut theta.matrices {
                    for v in m.as_mut_slice() {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        *v += s * z;
                    }
                }
            }
            theta
        })
        .collect();
    let per_sample = exec.map(draws, |theta| -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in probes.iter().zip(&truth) {
            let out = predict(&theta, x)?;
            total += out
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total / probes.len() as f64)
    });
    let values = per_sample.into_iter().collect::<Result<Vec<_>>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_err = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        f64::NAN
    };
    Ok(McEstimate { mean, std_err })
}
