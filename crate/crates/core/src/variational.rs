//! Row-wise spike-and-slab variational model: sampling, the tempered
//! variational objective and the closed-form constant posterior variance.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dropout::{DroppingPattern, RowLayout};
use crate::error::{Error, Result};
use crate::nn::{self, GradientSet, Input, ModelParams, Target};

/// Variational means `U`, shared posterior variance and likelihood settings.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub means: ModelParams,
    /// Posterior variance `s^2`, shared by every row.
    pub s2: f64,
    /// Temper `alpha` in (0, 1).
    pub alpha: f64,
    /// Likelihood variance `sigma^2`.
    pub sigma2: f64,
    /// Variance of the zero-mean Gaussian prior behind the L2 surrogate.
    pub prior_var: f64,
}

impl VariationalParams {
    pub fn new(
        means: ModelParams,
        s2: f64,
        alpha: f64,
        sigma2: f64,
        prior_var: f64,
    ) -> Result<Self> {
        let vp = VariationalParams {
            means,
            s2,
            alpha,
            sigma2,
            prior_var,
        };
        vp.validate()?;
        Ok(vp)
    }

    /// Defaults: `alpha = 0.5`, `sigma^2 = 1`, `prior_var = 1`.
    pub fn with_defaults(means: ModelParams, s2: f64) -> Result<Self> {
        Self::new(means, s2, 0.5, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        // s2 = 0 is admitted as the deterministic limit.
        if !(self.s2 >= 0.0 && self.s2.is_finite()) {
            return Err(Error::input(format!(
                "posterior variance {} must be >= 0",
                self.s2
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::input(format!(
                "temper {} outside (0, 1)",
                self.alpha
            )));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::input(format!(
                "likelihood variance {} must be > 0",
                self.sigma2
            )));
        }
        if !(self.prior_var > 0.0) {
            return Err(Error::input(format!(
                "prior variance {} must be > 0",
                self.prior_var
            )));
        }
        Ok(())
    }
}

/// A weight draw and the pattern it was drawn under.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWeights {
    pub theta: ModelParams,
    pub pattern_used: DroppingPattern,
}

/// Standard-normal noise for every kept row, zero elsewhere. Skipped
/// entirely (all zeros, no draws) when `s2 == 0`.
fn draw_noise<R: Rng + ?Sized>(
    means: &ModelParams,
    masks: &[Vec<bool>],
    s2: f64,
    rng: &mut R,
) -> Option<ModelParams> {
    if s2 == 0.0 {
        return None;
    }
    let mut noise = ModelParams::zeros(&means.spec);
    for (m, mask) in noise.matrices.iter_mut().zip(masks) {
        for (i, &kept) in mask.iter().enumerate() {
            if kept {
                for v in m.row_mut(i) {
                    *v = StandardNormal.sample(&mut *rng);
                }
            }
        }
    }
    Some(noise)
}

/// `theta = beta o (U + s * eps)`; dropped rows are exactly zero.
fn reparameterize(
    means: &ModelParams,
    masks: &[Vec<bool>],
    s: f64,
    noise: Option<&ModelParams>,
) -> ModelParams {
    let mut theta = means.clone();
    for (k, (m, mask)) in theta.matrices.iter_mut().zip(masks).enumerate() {
        for (i, &kept) in mask.iter().enumerate() {
            let row = m.row_mut(i);
            if !kept {
                row.fill(0.0);
            } else if let Some(eps) = noise {
                for (v, e) in row.iter_mut().zip(eps.matrices[k].row(i)) {
                    *v += s * e;
                }
            }
        }
    }
    theta
}

fn layout_for(vp: &VariationalParams) -> Result<RowLayout> {
    RowLayout::new(&vp.means.spec, 0.0)
}

/// Draws `theta` from the spike-and-slab approximation under `pattern`.
pub fn sample_weights<R: Rng + ?Sized>(
    vp: &VariationalParams,
    pattern: &DroppingPattern,
    rng: &mut R,
) -> Result<SampledWeights> {
    let masks = masks_for(vp, pattern)?;
    let noise = draw_noise(&vp.means, &masks, vp.s2, rng);
    Ok(SampledWeights {
        theta: reparameterize(&vp.means, &masks, vp.s2.sqrt(), noise.as_ref()),
        pattern_used: pattern.clone(),
    })
}

fn masks_for(vp: &VariationalParams, pattern: &DroppingPattern) -> Result<Vec<Vec<bool>>> {
    let layout = layout_for(vp)?;
    if pattern.len() != layout.total_rows() {
        return Err(Error::shape(format!(
            "pattern covers {} rows, model has {}",
            pattern.len(),
            layout.total_rows()
        )));
    }
    // Quotas are not enforced here: any mask is a valid spike-and-slab draw.
    let mut bits = pattern.bits().iter().copied();
    Ok(vp
        .means
        .spec
        .matrix_shapes()
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

/// L2 surrogate of `KL(q || prior)`: `sum over kept rows of |mu_j|^2 / (2 prior_var)`.
/// Non-droppable rows always count as kept.
pub fn kl_regularizer(vp: &VariationalParams, pattern: &DroppingPattern) -> Result<f64> {
    let masks = masks_for(vp, pattern)?;
    Ok(kl_with_masks(vp, &masks))
}

fn kl_with_masks(vp: &VariationalParams, masks: &[Vec<bool>]) -> f64 {
    let mut total = 0.0;
    for (m, mask) in vp.means.matrices.iter().zip(masks) {
        for (i, &kept) in mask.iter().enumerate() {
            if kept {
                total += m.row(i).iter().map(|v| v * v).sum::<f64>();
            }
        }
    }
    total / (2.0 * vp.prior_var)
}

/// One labelled example.
pub type Example<'a> = (&'a Input, &'a Target);

/// Minibatch estimate of a client's per-sample variational objective,
///
/// `alpha / (2 sigma^2) * mean_batch(data term) + KL / data_size`,
///
/// i.e. the tempered loss over `data_size` examples (estimated from the
/// batch) divided by `data_size`. The data term is squared error for value
/// targets and cross-entropy for class targets. One reparameterized draw of
/// `theta` is used; the returned gradient is with respect to the means and is
/// zero on every dropped row.
pub fn tempered_loss<R: Rng + ?Sized>(
    vp: &VariationalParams,
    pattern: &DroppingPattern,
    batch: &[Example<'_>],
    data_size: usize,
    rng: &mut R,
) -> Result<(f64, GradientSet)> {
    let masks = masks_for(vp, pattern)?;
    let noise = draw_noise(&vp.means, &masks, vp.s2, rng);
    loss_with_noise(vp, &masks, batch, data_size, noise.as_ref())
}

/// [`tempered_loss`] with caller-supplied standard-normal noise (frozen noise
/// for gradient checks). `noise = None` means `eps = 0`.
pub fn tempered_loss_with_noise(
    vp: &VariationalParams,
    pattern: &DroppingPattern,
    batch: &[Example<'_>],
    data_size: usize,
    noise: Option<&ModelParams>,
) -> Result<(f64, GradientSet)> {
    let masks = masks_for(vp, pattern)?;
    if let Some(eps) = noise {
        if !eps.congruent(&vp.means) {
            return Err(Error::shape("noise is not congruent with the means"));
        }
    }
    loss_with_noise(vp, &masks, batch, data_size, noise)
}

fn loss_with_noise(
    vp: &VariationalParams,
    masks: &[Vec<bool>],
    batch: &[Example<'_>],
    data_size: usize,
    noise: Option<&ModelParams>,
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if data_size == 0 {
        return Err(Error::input("client data size must be positive"));
    }
    let theta = reparameterize(&vp.means, masks, vp.s2.sqrt(), noise);
    let mut data_sum = 0.0;
    let mut grad = GradientSet::zeros_like(&theta);
    for (input, target) in batch {
        let (out, cache) = nn::forward(&theta, input)?;
        let (value, g) = nn::loss::data_term(&out, target)?;
        data_sum += value;
        nn::backward_into(&theta, &cache, &g, &mut grad)?;
    }
    let scale = vp.alpha / (2.0 * vp.sigma2 * batch.len() as f64);
    let kl_scale = 1.0 / (vp.prior_var * data_size as f64);
    grad.scale(scale);
    // d theta / d mu = 1 on kept rows; the KL term adds mu / (prior_var m).
    for ((g, mu), mask) in grad.matrices.iter_mut().zip(&vp.means.matrices).zip(masks) {
        for (i, &kept) in mask.iter().enumerate() {
            let row = g.row_mut(i);
            if kept {
                for (gv, &m) in row.iter_mut().zip(mu.row(i)) {
                    *gv += kl_scale * m;
                }
            } else {
                row.fill(0.0);
            }
        }
    }
    let loss = scale * data_sum + kl_with_masks(vp, masks) / data_size as f64;
    Ok((loss, grad))
}

/// Closed-form constant posterior variance
///
/// `s^2 = S / (16 m d^2) / log(3D) * (2BD)^(-2L)
///        / ((d + 1 + 1/(BD-1))^2 + 1/((BD)^2-1) + 2/(BD-1)^2)`
///
/// with natural logarithms.
pub fn posterior_variance(s: f64, m: f64, d: f64, width: f64, b: f64, layers: f64) -> Result<f64> {
    for (name, v) in [("S", s), ("m", m), ("d", d), ("L", layers)] {
        if !(v >= 1.0 && v.is_finite()) {
            return Err(Error::input(format!("{name} = {v} must be >= 1")));
        }
    }
    if !(width >= 2.0 && width.is_finite()) {
        return Err(Error::input(format!("D = {width} must be >= 2")));
    }
    if !(b >= 2.0 && b.is_finite()) {
        return Err(Error::input(format!("B = {b} must be >= 2")));
    }
    let bd = b * width;
    let brace =
        (d + 1.0 + 1.0 / (bd - 1.0)).powi(2) + 1.0 / (bd * bd - 1.0) + 2.0 / (bd - 1.0).powi(2);
    Ok(s / (16.0 * m * d * d) / (3.0 * width).ln() * (2.0 * bd).powf(-2.0 * layers) / brace)
}
