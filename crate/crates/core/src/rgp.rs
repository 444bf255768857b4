//! Recurrent gaze prediction: a convolutional GRU over motion features with a
//! transposed-convolution readout to a 49×49 distribution per frame.

use gean_tensor::init::xavier;
use gean_tensor::rng::{derive_seed, rng, Rng};
use gean_tensor::{Adam, AdamConfig, ParamId, ParamSet, Tape, Tensor, Var};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::gaze::{mirror_augment, GazeMap, GAZE_GRID};
use crate::pools::FEATURE_GRID;

const READOUT_POOL: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RgpConfig {
    /// Channels of the incoming motion features.
    pub feature_dim: usize,
    /// Channels after the 1×1 input projection.
    pub input_dim: usize,
    pub hidden: usize,
    /// Output channels of the three transposed convolutions.
    pub deconv: [usize; 3],
}

impl Default for RgpConfig {
    fn default() -> Self {
        RgpConfig { feature_dim: 1024, input_dim: 512, hidden: 128, deconv: [64, 32, 16] }
    }
}

impl RgpConfig {
    /// Small widths for single-core experiments.
    pub fn desk(feature_dim: usize) -> Self {
        RgpConfig { feature_dim, input_dim: 16, hidden: 16, deconv: [16, 8, 8] }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.feature_dim, self.input_dim, self.hidden, self.deconv[0], self.deconv[1], self.deconv[2]];
        if dims.contains(&0) {
            return Err(Error::Config(format!("RGP widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ids {
    p_in_w: ParamId,
    p_in_b: ParamId,
    w_z: ParamId,
    u_z: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    w: ParamId,
    u: ParamId,
    d_w: [ParamId; 3],
    d_b: [ParamId; 3],
    r_w: ParamId,
    r_b: ParamId,
}

impl Ids {
    fn find(params: &ParamSet) -> Result<Self> {
        let get = |name: &str| {
            params.find(name).ok_or_else(|| Error::Format { offset: 0, message: format!("missing RGP parameter {name}") })
        };
        Ok(Ids {
            p_in_w: get("rgp.p_in.w")?,
            p_in_b: get("rgp.p_in.b")?,
            w_z: get("rgp.w_z")?,
            u_z: get("rgp.u_z")?,
            w_r: get("rgp.w_r")?,
            u_r: get("rgp.u_r")?,
            w: get("rgp.w")?,
            u: get("rgp.u")?,
            d_w: [get("rgp.d1.w")?, get("rgp.d2.w")?, get("rgp.d3.w")?],
            d_b: [get("rgp.d1.b")?, get("rgp.d2.b")?, get("rgp.d3.b")?],
            r_w: get("rgp.r.w")?,
            r_b: get("rgp.r.b")?,
        })
    }
}

/// Parameters bound to one tape.
#[derive(Clone, Copy)]
pub struct RgpVars<'t> {
    p_in_w: Var<'t>,
    p_in_b: Var<'t>,
    w_z: Var<'t>,
    u_z: Var<'t>,
    w_r: Var<'t>,
    u_r: Var<'t>,
    w: Var<'t>,
    u: Var<'t>,
    d_w: [Var<'t>; 3],
    d_b: [Var<'t>; 3],
    r_w: Var<'t>,
    r_b: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct Rgp {
    config: RgpConfig,
    params: ParamSet,
    ids: Ids,
}

impl Rgp {
    /// Xavier weights and zero biases.
    pub fn new(config: RgpConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let RgpConfig { feature_dim: f, input_dim: i, hidden: h, deconv: [c1, c2, c3] } = config;
        let mut p = ParamSet::new();
        let mut w = |p: &mut ParamSet, name: &str, shape: &[usize]| {
            p.add(name, xavier(shape, rng), true);
        };
        w(&mut p, "rgp.p_in.w", &[1, 1, f, i]);
        p.add("rgp.p_in.b", Tensor::zeros(&[i]), false);
        for (name, cin) in [("rgp.w_z", i), ("rgp.u_z", h), ("rgp.w_r", i), ("rgp.u_r", h), ("rgp.w", i), ("rgp.u", h)] {
            w(&mut p, name, &[3, 3, cin, h]);
        }
        let chans = [h, c1, c2, c3];
        for k in 0..3 {
            w(&mut p, &format!("rgp.d{}.w", k + 1), &[4, 4, chans[k + 1], chans[k]]);
            p.add(format!("rgp.d{}.b", k + 1), Tensor::zeros(&[chans[k + 1]]), false);
        }
        w(&mut p, "rgp.r.w", &[1, 1, c3, 1]);
        p.add("rgp.r.b", Tensor::zeros(&[1]), false);
        let ids = Ids::find(&p)?;
        Ok(Rgp { config, params: p, ids })
    }

    /// Rebuild from named tensors in any order, inferring widths from their shapes.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let ids = Ids::find(&params)?;
        let shape = |id: ParamId| params.get(id).value.shape().to_vec();
        let p_in = shape(ids.p_in_w);
        let u = shape(ids.u);
        let d: Vec<usize> = ids.d_w.iter().map(|&id| shape(id).get(2).copied().unwrap_or(0)).collect();
        if p_in.len() != 4 || u.len() != 4 {
            return Err(Error::Format { offset: 0, message: "malformed RGP kernels".into() });
        }
        let config = RgpConfig { feature_dim: p_in[2], input_dim: p_in[3], hidden: u[3], deconv: [d[0], d[1], d[2]] };
        let mut fresh = Rgp::new(config, &mut rng(0))?;
        if fresh.params.len() != params.len() {
            return Err(Error::Format { offset: 0, message: "unexpected RGP parameter count".into() });
        }
        for p in params.iter() {
            fresh.params.set_value(&p.name, p.value.clone()).map_err(|e| Error::Format {
                offset: 0,
                message: format!("RGP parameter {}: {e}", p.name),
            })?;
        }
        Ok(fresh)
    }

    pub fn config(&self) -> RgpConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    /// Register parameters on `tape`; `trainable = false` blocks their gradients.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> RgpVars<'t> {
        self.bind_from(tape, &self.params, trainable)
    }

    /// Bind a parameter set laid out like this model's (e.g. a perturbed copy).
    pub fn bind_from<'t>(&self, tape: &'t Tape, params: &ParamSet, trainable: bool) -> RgpVars<'t> {
        let v = |id| if trainable { tape.param(params, id) } else { tape.frozen_param(params, id) };
        let ids = &self.ids;
        RgpVars {
            p_in_w: v(ids.p_in_w),
            p_in_b: v(ids.p_in_b),
            w_z: v(ids.w_z),
            u_z: v(ids.u_z),
            w_r: v(ids.w_r),
            u_r: v(ids.u_r),
            w: v(ids.w),
            u: v(ids.u),
            d_w: ids.d_w.map(v),
            d_b: ids.d_b.map(v),
            r_w: v(ids.r_w),
            r_b: v(ids.r_b),
        }
    }

    pub fn zero_state<'t>(&self, tape: &'t Tape) -> Var<'t> {
        tape.constant(Tensor::zeros(&[FEATURE_GRID, FEATURE_GRID, self.config.hidden]))
    }

    /// Per-frame readout logits (2401 each) for a feature sequence.
    pub fn unroll<'t>(&self, vars: &RgpVars<'t>, features: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if features.is_empty() {
            return Err(Error::Contract("RGP needs at least one frame".into()));
        }
        let tape = features[0].tape();
        let mut h = self.zero_state(tape);
        let mut out = Vec::with_capacity(features.len());
        for &f in features {
            let x = project(vars, f)?;
            h = cell_step(vars, x, h)?;
            out.push(readout_logits(vars, h)?);
        }
        Ok(out)
    }

    /// Gaze maps for a clip of `7×7×F` motion features.
    pub fn predict(&self, features: &[Tensor]) -> Result<Vec<GazeMap>> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let xs: Vec<Var> = features.iter().map(|f| tape.constant(f.clone())).collect();
        self.unroll(&vars, &xs)?
            .into_iter()
            .map(|l| GazeMap::from_probabilities(&l.softmax().value()))
            .collect()
    }

    /// Mean per-clip `rgp_loss` without augmentation.
    pub fn dataset_loss(&self, clips: &[RgpClip]) -> Result<f64> {
        let mut total = 0.0;
        for clip in clips {
            let tape = Tape::new();
            let vars = self.bind(&tape, false);
            let xs: Vec<Var> = clip.features.iter().map(|f| tape.constant(f.clone())).collect();
            total += rgp_loss(&self.unroll(&vars, &xs)?, &clip.targets)?.item();
        }
        Ok(total / clips.len() as f64)
    }
}

/// 1×1 projection of `7×7×F` features to the cell input width.
pub fn project<'t>(vars: &RgpVars<'t>, features: Var<'t>) -> Result<Var<'t>> {
    Ok(features.conv2d(vars.p_in_w, 1, 0)?.add_row(vars.p_in_b)?)
}

/// One convolutional GRU update with 3×3 same-padded kernels.
pub fn cell_step<'t>(vars: &RgpVars<'t>, x: Var<'t>, h_prev: Var<'t>) -> Result<Var<'t>> {
    let conv = |k: Var<'t>, v: Var<'t>| v.conv2d(k, 1, 1);
    let z = conv(vars.w_z, x)?.add(conv(vars.u_z, h_prev)?)?.sigmoid();
    let r = conv(vars.w_r, x)?.add(conv(vars.u_r, h_prev)?)?.sigmoid();
    let cand = conv(vars.w, x)?.add(conv(vars.u, r.mul(h_prev)?)?)?.tanh();
    Ok(h_prev.add(z.mul(cand.sub(h_prev)?)?)?)
}

/// Transposed convolutions 7→14→28→56, 1×1 conv to one channel, 8×8 mean pool to
/// 49×49, flattened. Softmax of the result is the gaze map.
pub fn readout_logits<'t>(vars: &RgpVars<'t>, h: Var<'t>) -> Result<Var<'t>> {
    let mut y = h;
    for k in 0..3 {
        y = y.conv_transpose2d(vars.d_w[k], 2, 1)?.add_row(vars.d_b[k])?;
    }
    let y = y.conv2d(vars.r_w, 1, 0)?.add_row(vars.r_b)?;
    let y = y.avg_pool2d(READOUT_POOL, READOUT_POOL, 1)?;
    debug_assert_eq!(y.shape(), vec![GAZE_GRID, GAZE_GRID, 1]);
    Ok(y.flatten())
}

/// Mean over frames with a target of `−Σ gt·log softmax(logits)`.
pub fn rgp_loss<'t>(logits: &[Var<'t>], targets: &[Option<GazeMap>]) -> Result<Var<'t>> {
    if logits.len() != targets.len() {
        return Err(Error::Contract(format!("{} predictions for {} targets", logits.len(), targets.len())));
    }
    let mut total: Option<Var<'t>> = None;
    let mut count = 0usize;
    for (l, t) in logits.iter().zip(targets) {
        let Some(t) = t else { continue };
        let gt = t.grid().to_tensor().reshape(&[GAZE_GRID * GAZE_GRID])?;
        let ce = l.log_softmax().mul_const(gt)?.sum().scale(-1.0);
        total = Some(match total {
            Some(acc) => acc.add(ce)?,
            None => ce,
        });
        count += 1;
    }
    let total = total.ok_or_else(|| Error::Contract("every frame is masked".into()))?;
    Ok(total.scale(1.0 / count as f64))
}

/// One training sequence: motion features and per-frame targets.
#[derive(Clone, Debug)]
pub struct RgpClip {
    pub features: Vec<Tensor>,
    pub targets: Vec<Option<GazeMap>>,
}

impl RgpClip {
    pub fn new(features: Vec<Tensor>, targets: Vec<Option<GazeMap>>) -> Result<Self> {
        if features.is_empty() || features.len() != targets.len() {
            return Err(Error::Contract(format!("{} frames with {} targets", features.len(), targets.len())));
        }
        if targets.iter().all(Option::is_none) {
            return Err(Error::Contract("clip has no fixation frames".into()));
        }
        Ok(RgpClip { features, targets })
    }

    /// Mean entropy of the unmasked targets; the loss floor for this clip.
    pub fn target_entropy(&self) -> f64 {
        let e: Vec<f64> = self.targets.iter().flatten().map(GazeMap::entropy).collect();
        e.iter().sum::<f64>() / e.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RgpTrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// Probability of mirroring a sequence.
    pub mirror_prob: f64,
}

impl Default for RgpTrainConfig {
    fn default() -> Self {
        RgpTrainConfig { lr: 1e-4, steps: 2000, mirror_prob: 0.5 }
    }
}

/// Adam over one clip per step, clips visited in seeded shuffled epochs.
pub struct RgpTrainer<'a> {
    pub model: Rgp,
    clips: &'a [RgpClip],
    adam: Adam,
    config: RgpTrainConfig,
    rng: Rng,
    order: Vec<usize>,
    losses: Vec<f64>,
}

impl<'a> RgpTrainer<'a> {
    pub fn new(model: Rgp, clips: &'a [RgpClip], config: RgpTrainConfig, seed: u64) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Config("RGP training needs at least one clip".into()));
        }
        if !(0.0..=1.0).contains(&config.mirror_prob) {
            return Err(Error::Config(format!("mirror probability {} outside [0,1]", config.mirror_prob)));
        }
        let adam = Adam::new(AdamConfig::with_lr(config.lr), model.params())?;
        Ok(RgpTrainer { model, clips, adam, config, rng: rng(derive_seed(seed, 0x7267_70)), order: Vec::new(), losses: Vec::new() })
    }

    fn next_clip(&mut self) -> usize {
        if self.order.is_empty() {
            let mut idx: Vec<usize> = (0..self.clips.len()).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, self.rng.random_range(0..=i));
            }
            idx.reverse();
            self.order = idx;
        }
        self.order.pop().expect("refilled above")
    }

    /// One Adam step; returns the loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let clip = &self.clips[self.next_clip()];
        let mirrored;
        let (features, targets) = if self.rng.random::<f64>() < self.config.mirror_prob {
            mirrored = mirror_augment(&clip.features, &clip.targets);
            (&mirrored.0, &mirrored.1)
        } else {
            (&clip.features, &clip.targets)
        };
        let tape = Tape::new();
        let vars = self.model.bind(&tape, true);
        let xs: Vec<Var> = features.iter().map(|f| tape.constant(f.clone())).collect();
        let loss = rgp_loss(&self.model.unroll(&vars, &xs)?, targets)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Contract(format!("RGP loss diverged to {value}")));
        }
        let grads = tape.backward(loss)?;
        grads.accumulate_into(self.model.params_mut())?;
        self.adam.step(self.model.params_mut())?;
        self.losses.push(value);
        Ok(value)
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn run(mut self) -> Result<(Rgp, Vec<f64>)> {
        for _ in 0..self.config.steps {
            self.step()?;
        }
        Ok((self.model, self.losses))
    }
}

pub fn train_rgp(model: Rgp, clips: &[RgpClip], config: RgpTrainConfig, seed: u64) -> Result<(Rgp, Vec<f64>)> {
    RgpTrainer::new(model, clips, config, seed)?.run()
}
