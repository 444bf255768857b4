//! Finite-difference checks of the full model graphs on small random instances.

use std::collections::BTreeMap;

use gean_tensor::gradcheck::{grad_check_with_floor, primitive_suite, SUITE_STEP};
use gean_tensor::init::gaussian;
use gean_tensor::rng::{derive_seed, rng, Rng};
use gean_tensor::{GradCheckReport, ParamSet, Tape, Tensor, TensorError, Var};
use rand::Rng as _;

use crate::decoder::{decode_step, Decoder, DecoderConfig, DecoderState, PoolContext};
use crate::error::{Error, Result};
use crate::gaze::{make_training_target, FixationRecord, GazeMap};
use crate::pools::{build_pool, Channel, FeaturePool};
use crate::rgp::{cell_step, project, rgp_loss, Rgp, RgpConfig};

/// Coordinates probed per parameter tensor.
const COORDS: usize = 6;

/// Relative-error floor for the model graphs, per unit of loss magnitude. Some
/// coordinates have gradients that vanish exactly (biases ahead of a softmax
/// shift) or nearly, and central differences at h = 1e-5 carry roundoff that
/// grows with |loss|.
pub const MODEL_FLOOR: f64 = 1e-6;

fn check<F>(params: &mut ParamSet, loss: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> std::result::Result<Var<'t>, TensorError>,
{
    let f0 = {
        let tape = Tape::new();
        loss(&tape, params)?.item()
    };
    Ok(grad_check_with_floor(params, SUITE_STEP, Some(COORDS), MODEL_FLOOR * f0.abs().max(1.0), loss)?)
}

fn small_rgp(r: &mut Rng) -> Result<Rgp> {
    let mut m = Rgp::new(RgpConfig { feature_dim: 4, input_dim: 3, hidden: 3, deconv: [2, 2, 2] }, r)?;
    randomize(m.params_mut(), 0.5, r);
    Ok(m)
}

fn small_decoder(r: &mut Rng) -> Result<Decoder> {
    let cfg = DecoderConfig { vocab: 7, feature_dim: 4, embed: 3, hidden: 4, attention: 3, aggregation: [2, 2, 3] };
    let mut d = Decoder::new(cfg, r)?;
    randomize(d.params_mut(), 0.5, r);
    Ok(d)
}

/// Replace every value, biases included, so no coordinate sits at a special point.
fn randomize(params: &mut ParamSet, std: f64, r: &mut Rng) {
    for p in params.iter_mut() {
        p.value = gaussian(p.value.shape(), std, r);
    }
}

fn small_pools(f: usize, r: &mut Rng) -> Result<[FeaturePool; 3]> {
    let mut out = Vec::with_capacity(3);
    for c in Channel::ALL {
        let vs: Vec<Vec<f64>> = (0..4).map(|_| (0..f).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).collect();
        out.push(build_pool(c, &vs, 4)?);
    }
    Ok([out[0].clone(), out[1].clone(), out[2].clone()])
}

/// A blurred two-subject fixation target, peaked like real training targets.
fn random_target(r: &mut Rng) -> Result<GazeMap> {
    let fix: Vec<FixationRecord> =
        (0..2).map(|s| FixationRecord::new(0, s, r.random_range(0.1..0.9), r.random_range(0.1..0.9))).collect::<Result<_>>()?;
    make_training_target(&fix, 0)
}

/// The checker speaks tensor errors; model errors pass through as contract errors.
fn lower(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Contract(other.to_string()),
    }
}

fn probe_sum<'t>(y: Var<'t>, probe: &Tensor) -> Result<Var<'t>> {
    Ok(y.mul_const(probe.clone())?.sum())
}

/// One convolutional GRU step (with the input projection) from a random state.
pub fn rgp_cell(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut m = small_rgp(&mut r)?;
    let x = gaussian(&[7, 7, 4], 1.0, &mut r);
    let h0 = Tensor::from_fn(&[7, 7, 3], |_| r.random::<f64>() * 1.6 - 0.8);
    let probe = gaussian(&[7, 7, 3], 1.0, &mut r);
    let model = m.clone();
    let rep = check(m.params_mut(), |tape, ps| {
        let vars = model.bind_from(tape, ps, true);
        let x = project(&vars, tape.constant(x.clone())).map_err(lower)?;
        let h = cell_step(&vars, x, tape.constant(h0.clone())).map_err(lower)?;
        probe_sum(h, &probe).map_err(lower)
    })?;
    Ok(rep)
}

/// Frame-averaged cross-entropy through the whole RGP over `frames` frames.
pub fn rgp_full(seed: u64, frames: usize) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut m = small_rgp(&mut r)?;
    let xs: Vec<Tensor> = (0..frames).map(|_| gaussian(&[7, 7, 4], 1.0, &mut r)).collect();
    let targets: Vec<Option<GazeMap>> = (0..frames).map(|_| random_target(&mut r).map(Some)).collect::<Result<_>>()?;
    let model = m.clone();
    let rep = check(m.params_mut(), |tape, ps| {
        let vars = model.bind_from(tape, ps, true);
        let feats: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let logits = model.unroll(&vars, &feats).map_err(lower)?;
        rgp_loss(&logits, &targets).map_err(lower)
    })?;
    Ok(rep)
}

/// Logits of one decoder step from a random non-zero state.
pub fn decoder_step(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut d = small_decoder(&mut r)?;
    let pools = small_pools(4, &mut r)?;
    let h_att = gaussian(&[4], 0.5, &mut r);
    let h_m = gaussian(&[4], 0.5, &mut r);
    let prev = r.random_range(0..7);
    let probe = gaussian(&[7], 1.0, &mut r);
    let model = d.clone();
    let rep = check(d.params_mut(), |tape, ps| {
        let vars = model.bind_from(tape, ps, true);
        let ctx = PoolContext::new(&vars, &pools).map_err(lower)?;
        let state = DecoderState { h_att: tape.constant(h_att.clone()), h_m: tape.constant(h_m.clone()) };
        let out = decode_step(&vars, &ctx, state, prev, None).map_err(lower)?;
        probe_sum(out.logits, &probe).map_err(lower)
    })?;
    Ok(rep)
}

/// Teacher-forced caption loss with ℓ2 penalty, dropout off.
pub fn caption_loss(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut d = small_decoder(&mut r)?;
    let pools = small_pools(4, &mut r)?;
    let tokens: Vec<usize> = (0..4).map(|_| r.random_range(3..7)).collect();
    let model = d.clone();
    let rep = check(d.params_mut(), |tape, ps| {
        model.caption_loss_with(tape, ps, &pools, &tokens, 1e-3, 80, None).map_err(lower)
    })?;
    Ok(rep)
}

pub const MODEL_CHECKS: [&str; 4] = ["rgp_cell", "rgp_full_n3", "decode_step", "caption_loss"];

/// Worst relative error per model graph over `trials` instances.
pub fn model_suite(trials: u64, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (k, name) in MODEL_CHECKS.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for t in 0..trials {
            let s = derive_seed(derive_seed(seed, 0x6763_00 + k as u64), t);
            let e = match k {
                0 => rgp_cell(s)?,
                1 => rgp_full(s, 3)?,
                2 => decoder_step(s)?,
                _ => caption_loss(s)?,
            }
            .max_rel_error;
            worst = worst.max(e);
        }
        out.push((name.to_string(), worst));
    }
    Ok(out)
}

/// Primitive and model checks keyed by name, plus the overall maximum.
pub fn full_suite(trials: u64, seed: u64) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (name, e) in primitive_suite(trials, seed)? {
        out.insert(format!("primitive.{name}"), e);
    }
    for (name, e) in model_suite(trials, seed)? {
        out.insert(format!("model.{name}"), e);
    }
    let worst = out.values().cloned().fold(0.0, f64::max);
    out.insert("max_rel_error".to_string(), worst);
    Ok(out)
}
