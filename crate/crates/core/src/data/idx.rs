//! IDX (big-endian) image/label files as used by MNIST and Fashion-MNIST.

use std::path::Path;

use super::{Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::nn::{Input, Target};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(offset, "truncated header"))
}

/// Decodes an IDX file: returns the dims and the raw byte payload.
pub fn parse_idx(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(format_err(
            0,
            format!("magic {found:#010x}, expected {magic:#010x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        dims.push(be_u32(bytes, 4 + 4 * i)? as usize);
    }
    let start = 4 + 4 * ndims;
    let len = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| format_err(4, "dimensions overflow"))?;
    let end = start
        .checked_add(len)
        .ok_or_else(|| format_err(4, "dimensions overflow"))?;
    if bytes.len() < end {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated payload: need {end} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    if bytes.len() > end {
        return Err(format_err(
            end,
            format!("{} trailing bytes", bytes.len() - end),
        ));
    }
    Ok((dims, &bytes[start..end]))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Images scaled to `[0, 1]` and flattened row-major, paired with labels.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let with_path = |p: &Path, e: Error| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", p.display()),
        },
        e => e,
    };
    let img_bytes = read(images_path)?;
    let lbl_bytes = read(labels_path)?;
    let (dims, pixels) =
        parse_idx(&img_bytes, IMAGE_MAGIC).map_err(|e| with_path(images_path, e))?;
    let (ldims, labels) =
        parse_idx(&lbl_bytes, LABEL_MAGIC).map_err(|e| with_path(labels_path, e))?;
    if ldims[0] != dims[0] {
        return Err(with_path(
            labels_path,
            format_err(4, format!("{} labels for {} images", ldims[0], dims[0])),
        ));
    }
    let d = dims[1] * dims[2];
    let inputs = if d == 0 {
        vec![Input::Vector(Vec::new()); dims[0]]
    } else {
        pixels
            .chunks_exact(d)
            .map(|c| Input::Vector(c.iter().map(|&b| f64::from(b) / 255.0).collect()))
            .collect()
    };
    let out_dim = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let targets = labels.iter().map(|&l| Target::Class(l as usize)).collect();
    Dataset::new(inputs, targets, DatasetKind::ImageClass, d, out_dim)
}
