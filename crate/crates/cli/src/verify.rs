//! Property checks runnable from an installed binary, without the test suite.

use anyhow::{bail, Result};
use fedbiad::dropout::{sample_pattern, RowLayout};
use fedbiad::federation::{aggregate, AggMode};
use fedbiad::nn::{
    backward, finite_diff_grad, forward, loss::data_term, max_relative_error, Input, ModelParams,
    ModelSpec, Readout, Target,
};
use fedbiad::rng::{stream_rng, SimRng, Stream};
use fedbiad::strategies::{
    magnitude_prune_pattern, ordered_drop_pattern, topk_sparsify, TopKConfig,
};
use fedbiad::wire::{deserialize, serialize, upload_bytes, SparseUpdate, HEADER_LEN};
use rand::Rng;

type Check = fn(usize, &mut SimRng) -> Result<(), String>;

fn gradients(cases: usize, rng: &mut SimRng) -> Result<(), String> {
    for case in 0..cases.min(20) {
        let (d, h, out) = (
            rng.random_range(1..5),
            rng.random_range(2..6),
            rng.random_range(1..4),
        );
        let (spec, input) = if case % 2 == 0 {
            let x = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            (
                ModelSpec::mlp(d, h, rng.random_range(1..4), out),
                Input::Vector(x),
            )
        } else {
            let steps = rng.random_range(1..5);
            let seq = (0..steps)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            (ModelSpec::rnn(d, h, steps, out), Input::Sequence(seq))
        };
        let spec = spec.with_readout(Readout::Identity);
        let params = ModelParams::init(&spec, rng);
        let target = Target::Values((0..out).map(|_| rng.random_range(-1.0..1.0)).collect());
        let loss = |p: &ModelParams| {
            let (o, _) = forward(p, &input).unwrap();
            data_term(&o, &target).unwrap().0
        };
        let (o, cache) = forward(&params, &input).map_err(|e| e.to_string())?;
        let (_, g) = data_term(&o, &target).map_err(|e| e.to_string())?;
        let analytic = backward(&params, &cache, &g).map_err(|e| e.to_string())?;
        let err = max_relative_error(&analytic, &finite_diff_grad(loss, &params, 1e-6));
        if err >= 1e-4 {
            return Err(format!("case {case}: relative error {err:e}"));
        }
    }
    Ok(())
}

fn random_update(rng: &mut SimRng) -> (RowLayout, SparseUpdate) {
    let spec = ModelSpec::mlp(
        rng.random_range(1..6),
        rng.random_range(2..12),
        rng.random_range(1..3),
        2,
    );
    let layout = RowLayout::new(&spec, rng.random_range(0.0..0.9)).unwrap();
    let means = ModelParams::init(&spec, rng);
    let pattern = sample_pattern(&layout, rng);
    let update =
        SparseUpdate::from_means(&layout, pattern, &means, rng.random_range(1..1000)).unwrap();
    (layout, update)
}

fn wire(cases: usize, rng: &mut SimRng) -> Result<(), String> {
    for case in 0..cases {
        let (layout, u) = random_update(rng);
        let bytes = serialize(&u, &layout).map_err(|e| e.to_string())?;
        if bytes.len() != upload_bytes(&u) {
            return Err(format!(
                "case {case}: length {} vs {}",
                bytes.len(),
                upload_bytes(&u)
            ));
        }
        if deserialize(&bytes, &layout).as_ref() != Ok(&u) {
            return Err(format!("case {case}: roundtrip changed the update"));
        }
        let cut = rng.random_range(0..bytes.len());
        if deserialize(&bytes[..cut], &layout).is_ok() {
            return Err(format!("case {case}: truncation to {cut} bytes accepted"));
        }
        for pos in [0, 4, 6, HEADER_LEN] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x01;
            if deserialize(&bad, &layout).is_ok() {
                return Err(format!("case {case}: corrupted byte {pos} accepted"));
            }
        }
    }
    Ok(())
}

fn quotas(cases: usize, rng: &mut SimRng) -> Result<(), String> {
    for case in 0..cases {
        let spec = ModelSpec::rnn(3, rng.random_range(2..20), 3, 2);
        let layout = RowLayout::new(&spec, rng.random_range(0.0..0.95)).unwrap();
        let means = ModelParams::init(&spec, rng);
        let patterns = [
            sample_pattern(&layout, rng),
            ordered_drop_pattern(&layout),
            magnitude_prune_pattern(&means, &layout).map_err(|e| e.to_string())?,
        ];
        for p in &patterns {
            layout.check(p).map_err(|e| format!("case {case}: {e}"))?;
        }
    }
    Ok(())
}

fn topk_mass(cases: usize, rng: &mut SimRng) -> Result<(), String> {
    for case in 0..cases {
        let n = rng.random_range(1..50);
        let delta: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let before: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = TopKConfig::new(rng.random_range(0.01..=1.0)).map_err(|e| e.to_string())?;
        let mut res = before.clone();
        let sent = topk_sparsify(&delta, &mut res, &cfg).map_err(|e| e.to_string())?;
        for &(i, v) in &sent {
            res[i as usize] += v;
        }
        if (0..n).any(|i| res[i] != before[i] + delta[i]) {
            return Err(format!("case {case}: mass not conserved"));
        }
    }
    Ok(())
}

fn masked_conservation(cases: usize, rng: &mut SimRng) -> Result<(), String> {
    for case in 0..cases.min(200) {
        let spec = ModelSpec::mlp(2, 6, 2, 2);
        let layout = RowLayout::new(&spec, 0.5).unwrap();
        let means = ModelParams::init(&spec, rng);
        let pattern = sample_pattern(&layout, rng);
        let ups: Vec<SparseUpdate> = (0..rng.random_range(1..5))
            .map(|_| {
                SparseUpdate::from_means(&layout, pattern.clone(), &means, rng.random_range(1..100))
                    .unwrap()
            })
            .collect();
        let expect = ups[0]
            .reconstruct(&layout, &means)
            .map_err(|e| e.to_string())?;
        let got = aggregate(&ups, &layout, &means, AggMode::Masked).map_err(|e| e.to_string())?;
        let masks = layout.row_masks(&pattern).map_err(|e| e.to_string())?;
        for (k, mask) in masks.iter().enumerate() {
            for (i, _) in mask.iter().enumerate().filter(|(_, &kept)| kept) {
                if got.matrices[k].row(i) != expect.matrices[k].row(i) {
                    return Err(format!("case {case}: matrix {k} row {i} changed"));
                }
            }
        }
    }
    Ok(())
}

pub fn verify(cases: usize, seed: u64) -> Result<()> {
    let checks: [(&str, Check); 5] = [
        ("gradient exactness", gradients),
        ("wire roundtrip and corruption", wire),
        ("per-layer quotas", quotas),
        ("top-k mass conservation", topk_mass),
        ("masked aggregation conservation", masked_conservation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let mut rng = stream_rng(seed, Stream::Evaluation, 0x7e51, i as u64);
        match check(cases, &mut rng) {
            Ok(()) => println!("PASS  {name}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    Ok(())
}
