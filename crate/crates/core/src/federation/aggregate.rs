use std::fmt;
use std::str::FromStr;

use crate::dropout::RowLayout;
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::wire::SparseUpdate;

/// How rows are averaged across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggMode {
    /// `sum_k |D^k| (beta^k o U^k) / sum_k |D^k|`; a row nobody kept becomes zero.
    #[default]
    Literal,
    /// Per-row denominators over the clients that kept the row; a row nobody
    /// kept keeps its previous value.
    Masked,
}

impl fmt::Display for AggMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggMode::Literal => "literal",
            AggMode::Masked => "masked",
        })
    }
}

impl FromStr for AggMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(AggMode::Literal),
            "masked" => Ok(AggMode::Masked),
            _ => Err(Error::config(
                "agg_mode",
                format!("{s:?} is not literal or masked"),
            )),
        }
    }
}

/// New global means from the round's updates. Clients are summed in the
/// order given. `prev` is the global the clients started from; top-k deltas
/// are applied to it.
pub fn aggregate(
    updates: &[SparseUpdate],
    layout: &RowLayout,
    prev: &ModelParams,
    mode: AggMode,
) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::input("no updates to aggregate"));
    }
    let mut num = ModelParams::zeros(&prev.spec);
    if !num.congruent(prev) || layout.matrices().len() != prev.matrices.len() {
        return Err(Error::shape("previous means do not match the layout"));
    }
    let rows: Vec<usize> = layout.matrices().iter().map(|m| m.rows).collect();
    let mut row_den: Vec<Vec<f64>> = rows.iter().map(|&r| vec![0.0; r]).collect();
    let mut total = 0.0;
    for u in updates {
        if u.layout_digest != layout.digest() {
            return Err(Error::shape("update was produced under a different layout"));
        }
        if u.data_size == 0 {
            return Err(Error::input("update reports zero data size"));
        }
        let w = u.data_size as f64;
        let recon = u.reconstruct(layout, prev)?;
        let masks = layout.row_masks(&u.pattern)?;
        for (k, mask) in masks.iter().enumerate() {
            let (acc, src) = (&mut num.matrices[k], &recon.matrices[k]);
            for (i, &kept) in mask.iter().enumerate() {
                if !kept {
                    continue;
                }
                for (a, &v) in acc.row_mut(i).iter_mut().zip(src.row(i)) {
                    *a += w * v;
                }
                row_den[k][i] += w;
            }
        }
        total += w;
    }
    for (k, m) in num.matrices.iter_mut().enumerate() {
        for i in 0..rows[k] {
            let den = match mode {
                AggMode::Literal => total,
                AggMode::Masked => row_den[k][i],
            };
            let row = m.row_mut(i);
            if den == 0.0 {
                row.copy_from_slice(prev.matrices[k].row(i));
            } else {
                row.iter_mut().for_each(|v| *v /= den);
            }
        }
    }
    Ok(num)
}
