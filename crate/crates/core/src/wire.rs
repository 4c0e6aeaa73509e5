//! Sparse update wire format and communication accounting.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | field                                              |
//! |--------------|----------------------------------------------------|
//! | 4            | magic `FBAD`                                       |
//! | 2            | version; high bit set for a top-k payload          |
//! | 8            | layout digest                                      |
//! | 8            | data size `|D^k|`                                  |
//! | 4            | `J`, number of droppable rows                      |
//! | `ceil(J/8)`  | keep-pattern, LSB-first, zero padding              |
//! | ...          | payload                                            |
//!
//! A row payload is every kept row (layer-major, row-ascending) followed by
//! the non-droppable matrices, as `f32`. A top-k payload is a `u32` count
//! followed by `(u32 index, f32 value)` pairs with strictly ascending indices
//! into that same flat row payload; values are deltas against the round's
//! global means.

use std::path::Path;

use crate::dropout::{DroppingPattern, RowLayout};
use crate::error::{DecodeError, Error, Result};
use crate::nn::ModelParams;

pub const MAGIC: [u8; 4] = *b"FBAD";
pub const FORMAT_VERSION: u16 = 1;
pub const TOPK_FLAG: u16 = 0x8000;
pub const HEADER_LEN: usize = 4 + 2 + 8 + 8 + 4;
pub const FILE_EXTENSION: &str = "fbad";

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Rows(Vec<f32>),
    TopK(Vec<(u32, f32)>),
}

impl Payload {
    /// Number of 32-bit scalars on the wire.
    pub fn scalars(&self) -> usize {
        match self {
            Payload::Rows(v) => v.len(),
            Payload::TopK(e) => 1 + 2 * e.len(),
        }
    }
}

/// What one client uploads at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    pub layout_digest: u64,
    pub pattern: DroppingPattern,
    pub data_size: u64,
    pub payload: Payload,
}

impl SparseUpdate {
    /// Gathers the kept rows and the fixed matrices of `means`, narrowed to `f32`.
    pub fn from_means(
        layout: &RowLayout,
        pattern: DroppingPattern,
        means: &ModelParams,
        data_size: u64,
    ) -> Result<Self> {
        let rows = gather_kept(layout, &pattern, means)?;
        Ok(SparseUpdate {
            layout_digest: layout.digest(),
            pattern,
            data_size,
            payload: Payload::Rows(rows.iter().map(|&v| v as f32).collect()),
        })
    }

    /// Top-k update carrying `(index, delta)` pairs into the row payload.
    pub fn from_topk(
        layout: &RowLayout,
        pattern: DroppingPattern,
        entries: &[(u32, f64)],
        data_size: u64,
    ) -> Result<Self> {
        layout.check(&pattern)?;
        let update = SparseUpdate {
            layout_digest: layout.digest(),
            pattern,
            data_size,
            payload: Payload::TopK(entries.iter().map(|&(i, v)| (i, v as f32)).collect()),
        };
        update.validate(layout)?;
        Ok(update)
    }

    pub fn validate(&self, layout: &RowLayout) -> Result<()> {
        if self.layout_digest != layout.digest() {
            return Err(Error::Encode("layout digest does not match".into()));
        }
        layout
            .check(&self.pattern)
            .map_err(|e| Error::Encode(e.to_string()))?;
        let len = layout.payload_scalars();
        match &self.payload {
            Payload::Rows(v) if v.len() != len => Err(Error::Encode(format!(
                "row payload has {} scalars, layout needs {len}",
                v.len()
            ))),
            Payload::TopK(e) => {
                for (pos, w) in e.windows(2).enumerate() {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::Encode(format!(
                            "top-k indices not ascending at {}",
                            pos + 1
                        )));
                    }
                }
                match e.last() {
                    Some(&(i, _)) if i as usize >= len => Err(Error::Encode(format!(
                        "top-k index {i} beyond payload of {len}"
                    ))),
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// Rebuilds full-size means: kept rows from the payload (or `global` plus
    /// the transmitted deltas for top-k), dropped rows zero, i.e. `beta o U^k`.
    pub fn reconstruct(&self, layout: &RowLayout, global: &ModelParams) -> Result<ModelParams> {
        let flat: Vec<f64> = match &self.payload {
            Payload::Rows(v) => v.iter().map(|&x| f64::from(x)).collect(),
            Payload::TopK(entries) => {
                let mut base = gather_kept(layout, &self.pattern, global)?;
                for &(i, d) in entries {
                    base[i as usize] += f64::from(d);
                }
                base
            }
        };
        scatter_kept(layout, &self.pattern, &flat, &global.spec)
    }
}

/// Kept rows then fixed matrices of `params`, in wire order.
pub fn gather_kept(
    layout: &RowLayout,
    pattern: &DroppingPattern,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let masks = layout.row_masks(pattern)?;
    if params.matrices.len() != masks.len() {
        return Err(Error::shape("parameters do not match the layout"));
    }
    let mut out = Vec::with_capacity(layout.payload_scalars());
    for (m, mask) in params.matrices.iter().zip(&masks) {
        for (i, &kept) in mask.iter().enumerate() {
            if kept {
                out.extend_from_slice(m.row(i));
            }
        }
    }
    Ok(out)
}

/// Inverse of [`gather_kept`]; dropped rows become zero.
pub fn scatter_kept(
    layout: &RowLayout,
    pattern: &DroppingPattern,
    flat: &[f64],
    spec: &crate::nn::ModelSpec,
) -> Result<ModelParams> {
    let masks = layout.row_masks(pattern)?;
    if flat.len() != layout.payload_scalars() {
        return Err(Error::shape(format!(
            "{} payload scalars, layout needs {}",
            flat.len(),
            layout.payload_scalars()
        )));
    }
    let mut params = ModelParams::zeros(spec);
    let mut src = flat.iter().copied();
    for (m, mask) in params.matrices.iter_mut().zip(&masks) {
        for (i, &kept) in mask.iter().enumerate() {
            if kept {
                for v in m.row_mut(i) {
                    *v = src.next().unwrap();
                }
            }
        }
    }
    Ok(params)
}

/// Positions, in [`ModelParams::flatten`] order, of the scalars a row
/// payload carries under `pattern`, in wire order.
pub fn kept_flat_indices(layout: &RowLayout, pattern: &DroppingPattern) -> Result<Vec<usize>> {
    let masks = layout.row_masks(pattern)?;
    let mut out = Vec::with_capacity(layout.payload_scalars());
    let mut base = 0;
    for (shape, mask) in layout.matrices().iter().zip(&masks) {
        for (i, &kept) in mask.iter().enumerate() {
            if kept {
                let start = base + i * shape.cols;
                out.extend(start..start + shape.cols);
            }
        }
        base += shape.rows * shape.cols;
    }
    Ok(out)
}

/// Exact serialized size of `update`.
pub fn upload_bytes(update: &SparseUpdate) -> usize {
    HEADER_LEN + update.pattern.len().div_ceil(8) + 4 * update.payload.scalars()
}

/// Serialized size of a row-payload update for `layout`, without building one.
pub fn row_update_bytes(layout: &RowLayout) -> usize {
    HEADER_LEN + layout.total_rows().div_ceil(8) + 4 * layout.payload_scalars()
}

pub fn serialize(update: &SparseUpdate, layout: &RowLayout) -> Result<Vec<u8>> {
    update.validate(layout)?;
    let j = u32::try_from(update.pattern.len())
        .map_err(|_| Error::Encode("more than u32::MAX rows".into()))?;
    let mut out = Vec::with_capacity(upload_bytes(update));
    out.extend_from_slice(&MAGIC);
    let version = match update.payload {
        Payload::Rows(_) => FORMAT_VERSION,
        Payload::TopK(_) => FORMAT_VERSION | TOPK_FLAG,
    };
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&update.layout_digest.to_le_bytes());
    out.extend_from_slice(&update.data_size.to_le_bytes());
    out.extend_from_slice(&j.to_le_bytes());
    let mut packed = vec![0u8; update.pattern.len().div_ceil(8)];
    for (i, &b) in update.pattern.bits().iter().enumerate() {
        if b {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&packed);
    match &update.payload {
        Payload::Rows(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Payload::TopK(entries) => {
            out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
            for (i, x) in entries {
                out.extend_from_slice(&i.to_le_bytes());
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    debug_assert_eq!(out.len(), upload_bytes(update));
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32, DecodeError> {
        Ok(f32::from_le_bytes(self.array()?))
    }
}

/// Parses and fully validates a message against the receiver's layout.
/// Never returns a partially decoded update.
pub fn deserialize(bytes: &[u8], layout: &RowLayout) -> Result<SparseUpdate, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.array()?;
    if magic != MAGIC {
        return Err(DecodeError::Magic(magic));
    }
    let version = r.u16()?;
    if version & !TOPK_FLAG != FORMAT_VERSION {
        return Err(DecodeError::Version(version));
    }
    let digest = r.u64()?;
    if digest != layout.digest() {
        return Err(DecodeError::Digest {
            expected: layout.digest(),
            found: digest,
        });
    }
    let data_size = r.u64()?;
    let j = r.u32()?;
    if j as usize != layout.total_rows() {
        return Err(DecodeError::RowCount {
            expected: layout.total_rows() as u32,
            found: j,
        });
    }
    let packed = r.take((j as usize).div_ceil(8))?;
    let bits: Vec<bool> = (0..j as usize)
        .map(|i| packed[i / 8] & (1 << (i % 8)) != 0)
        .collect();
    if j % 8 != 0 && packed[packed.len() - 1] >> (j % 8) != 0 {
        return Err(DecodeError::Padding);
    }
    let pattern = DroppingPattern::from_bits(bits);
    for (layer, (found, &expected)) in layout
        .popcounts(&pattern)
        .into_iter()
        .zip(layout.quotas())
        .enumerate()
    {
        if found != expected {
            return Err(DecodeError::Popcount {
                layer,
                expected,
                found,
            });
        }
    }
    let len = layout.payload_scalars();
    let payload = if version & TOPK_FLAG == 0 {
        let raw = r.take(4 * len)?;
        Payload::Rows(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    } else {
        let count = r.u32()? as usize;
        let remaining = bytes.len() - r.pos;
        if count.saturating_mul(8) > remaining {
            return Err(DecodeError::Truncated {
                offset: r.pos,
                needed: count.saturating_mul(8),
                available: remaining,
            });
        }
        let mut entries = Vec::with_capacity(count);
        for pos in 0..count {
            let index = r.u32()?;
            let value = r.f32()?;
            if index as usize >= len {
                return Err(DecodeError::TopKIndex { index, len });
            }
            if let Some(&(prev, _)) = entries.last() {
                if index <= prev {
                    return Err(DecodeError::TopKOrder(pos));
                }
            }
            entries.push((index, value));
        }
        Payload::TopK(entries)
    };
    if r.pos != bytes.len() {
        return Err(DecodeError::Trailing(bytes.len() - r.pos));
    }
    Ok(SparseUpdate {
        layout_digest: digest,
        pattern,
        data_size,
        payload,
    })
}

/// Writes a serialized update to `path` (conventionally `*.fbad`).
pub fn write_update_file(path: &Path, update: &SparseUpdate, layout: &RowLayout) -> Result<()> {
    let bytes = serialize(update, layout)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_update_file(path: &Path, layout: &RowLayout) -> Result<SparseUpdate> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(deserialize(&bytes, layout)?)
}

/// Per-round uplink/downlink byte counts with running totals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    rounds: Vec<(u64, u64)>,
    total_up: u64,
    total_down: u64,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, up: u64, down: u64) {
        self.rounds.push((up, down));
        self.total_up += up;
        self.total_down += down;
    }

    pub fn rounds(&self) -> &[(u64, u64)] {
        &self.rounds
    }

    pub fn total_up(&self) -> u64 {
        self.total_up
    }

    pub fn total_down(&self) -> u64 {
        self.total_down
    }

    /// Cumulative `(up, down)` after each round.
    pub fn cumulative(&self) -> Vec<(u64, u64)> {
        let mut acc = (0, 0);
        self.rounds
            .iter()
            .map(|&(u, d)| {
                acc.0 += u;
                acc.1 += d;
                acc
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dropout::sample_pattern;
    use crate::nn::{MatrixShape, ModelSpec};

    fn layout(p: f64) -> RowLayout {
        RowLayout::new(&ModelSpec::mlp(5, 6, 2, 3), p).unwrap()
    }

    fn random_update(layout: &RowLayout, seed: u64, topk: bool) -> SparseUpdate {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let pattern = sample_pattern(layout, &mut r);
        let len = layout.payload_scalars();
        let payload = if topk {
            let mut idx: Vec<u32> = (0..len as u32).filter(|_| r.random_bool(0.2)).collect();
            idx.dedup();
            Payload::TopK(
                idx.into_iter()
                    .map(|i| (i, r.random_range(-5.0..5.0)))
                    .collect(),
            )
        } else {
            Payload::Rows((0..len).map(|_| r.random_range(-5.0..5.0)).collect())
        };
        SparseUpdate {
            layout_digest: layout.digest(),
            pattern,
            data_size: r.random_range(1..10_000),
            payload,
        }
    }

    #[test]
    fn pattern_packs_lsb_first() {
        let shapes = vec![
            MatrixShape {
                rows: 4,
                cols: 1,
                droppable: true,
            },
            MatrixShape {
                rows: 4,
                cols: 1,
                droppable: true,
            },
        ];
        let l = RowLayout::from_shapes(shapes, 0.75).unwrap();
        let pattern =
            DroppingPattern::from_bits(vec![true, false, false, false, false, false, true, false]);
        let u = SparseUpdate {
            layout_digest: l.digest(),
            pattern,
            data_size: 1,
            payload: Payload::Rows(vec![1.0, 2.0]),
        };
        let bytes = serialize(&u, &l).unwrap();
        assert_eq!(bytes[HEADER_LEN], 0x41);

        let shapes = vec![MatrixShape {
            rows: 8,
            cols: 1,
            droppable: true,
        }];
        let l = RowLayout::from_shapes(shapes, 0.75).unwrap();
        let u = SparseUpdate {
            layout_digest: l.digest(),
            pattern: DroppingPattern::from_bits(vec![
                true, false, true, false, false, false, false, false,
            ]),
            data_size: 1,
            payload: Payload::Rows(vec![1.0, 2.0]),
        };
        let bytes = serialize(&u, &l).unwrap();
        assert_eq!(&bytes[..4], b"FBAD");
        assert_eq!(bytes[HEADER_LEN], 0x05);
        assert_eq!(HEADER_LEN, 26);
        assert_eq!(bytes.len(), 26 + 1 + 8);
    }

    #[test]
    fn upload_bytes_example_from_format_arithmetic() {
        let shapes = vec![MatrixShape {
            rows: 1024,
            cols: 256,
            droppable: true,
        }];
        let l = RowLayout::from_shapes(shapes, 0.5).unwrap();
        assert_eq!(row_update_bytes(&l), 524_442);
        let shapes = vec![MatrixShape {
            rows: 2400,
            cols: 4,
            droppable: true,
        }];
        let l = RowLayout::from_shapes(shapes, 0.5).unwrap();
        assert_eq!(l.total_rows().div_ceil(8), 300);
    }

    #[test]
    fn truncation_is_rejected_at_every_length() {
        let l = layout(0.5);
        for topk in [false, true] {
            let bytes = serialize(&random_update(&l, 3, topk), &l).unwrap();
            for cut in 0..bytes.len() {
                assert!(deserialize(&bytes[..cut], &l).is_err(), "cut {cut}");
            }
            let mut long = bytes.clone();
            long.push(0);
            assert_eq!(deserialize(&long, &l), Err(DecodeError::Trailing(1)));
        }
    }

    #[test]
    fn corruption_names_the_failing_check() {
        let l = layout(0.5);
        let bytes = serialize(&random_update(&l, 4, false), &l).unwrap();

        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(deserialize(&b, &l), Err(DecodeError::Magic(_))));

        let mut b = bytes.clone();
        b[4] = 9;
        assert!(matches!(deserialize(&b, &l), Err(DecodeError::Version(9))));

        let mut b = bytes.clone();
        b[7] ^= 0xff;
        assert!(matches!(
            deserialize(&b, &l),
            Err(DecodeError::Digest { .. })
        ));

        // Flip the first pattern bit: layer 0 popcount changes by one.
        let mut b = bytes.clone();
        b[HEADER_LEN] ^= 1;
        assert!(matches!(
            deserialize(&b, &l),
            Err(DecodeError::Popcount { layer: 0, .. })
        ));

        assert!(deserialize(&bytes, &layout(0.25)).is_err());
    }

    #[test]
    fn reconstruct_rows_and_topk() {
        let spec = ModelSpec::mlp(2, 2, 1, 1);
        let l = RowLayout::new(&spec, 0.5).unwrap();
        let mut means = ModelParams::zeros(&spec);
        means.matrices[0].row_mut(0).copy_from_slice(&[1.0, 2.0]);
        means.matrices[0].row_mut(1).copy_from_slice(&[3.0, 4.0]);
        means.matrices[1].row_mut(0).copy_from_slice(&[5.0, 6.0]);
        let pat = DroppingPattern::from_bits(vec![false, true]);
        let u = SparseUpdate::from_means(&l, pat.clone(), &means, 3).unwrap();
        assert_eq!(u.payload, Payload::Rows(vec![3.0, 4.0, 5.0, 6.0]));
        let back = u.reconstruct(&l, &means).unwrap();
        assert_eq!(back.matrices[0].as_slice(), &[0.0, 0.0, 3.0, 4.0]);

        let t = SparseUpdate::from_topk(&l, pat, &[(1, 0.5), (3, -1.0)], 3).unwrap();
        let back = t.reconstruct(&l, &means).unwrap();
        assert_eq!(back.matrices[0].as_slice(), &[0.0, 0.0, 3.0, 4.5]);
        assert_eq!(back.matrices[1].as_slice(), &[5.0, 5.0]);
        assert_eq!(upload_bytes(&t), 26 + 1 + 4 * 5);
    }

    #[test]
    fn kept_indices_match_gather() {
        let spec = ModelSpec::mlp(3, 4, 2, 2);
        let l = RowLayout::new(&spec, 0.5).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let params = ModelParams::init(&spec, &mut r);
        let pat = sample_pattern(&l, &mut r);
        let flat = params.flatten();
        let via_idx: Vec<f64> = kept_flat_indices(&l, &pat)
            .unwrap()
            .iter()
            .map(|&i| flat[i])
            .collect();
        assert_eq!(via_idx, gather_kept(&l, &pat, &params).unwrap());
    }

    #[test]
    fn ledger_totals() {
        let mut l = CommLedger::new();
        l.record(10, 100);
        l.record(5, 100);
        assert_eq!(l.total_up(), 15);
        assert_eq!(l.cumulative(), vec![(10, 100), (15, 200)]);
    }

    #[test]
    fn file_roundtrip() {
        let l = layout(0.5);
        let u = random_update(&l, 8, false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("client-0.{FILE_EXTENSION}"));
        write_update_file(&path, &u, &l).unwrap();
        assert_eq!(read_update_file(&path, &l).unwrap(), u);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn roundtrip_identity_and_exact_length(seed in any::<u64>(), topk in any::<bool>(), p in 0.0f64..0.8) {
            let l = layout(p);
            let u = random_update(&l, seed, topk);
            let bytes = serialize(&u, &l).unwrap();
            prop_assert_eq!(bytes.len(), upload_bytes(&u));
            prop_assert_eq!(deserialize(&bytes, &l).unwrap(), u);
        }
    }
}
