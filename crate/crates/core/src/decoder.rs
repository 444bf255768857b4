//! Caption decoder: per-pool temporal attention, attention GRU, gated
//! aggregation, multimodal GRU and a word softmax.

use gean_tensor::init::{orthogonal, xavier};
use gean_tensor::rng::{derive_seed, rng, Rng};
use gean_tensor::{Adam, AdamConfig, ParamId, ParamSet, Tape, Tensor, Var};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::pools::{Channel, FeaturePool};
use crate::vocab::{BOS_ID, EOS_ID};

pub const DEFAULT_MAX_LEN: usize = 80;
pub const DEFAULT_L2: f64 = 1e-5;
pub const DROPOUT_RATE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    pub vocab: usize,
    pub feature_dim: usize,
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
    /// Output widths of the scene, motion and fovea projections in the aggregation layer.
    pub aggregation: [usize; 3],
}

impl DecoderConfig {
    pub fn paper(vocab: usize) -> Self {
        DecoderConfig { vocab, feature_dim: 1024, embed: 512, hidden: 512, attention: 64, aggregation: [256, 256, 512] }
    }

    /// Small widths for single-core experiments.
    pub fn desk(vocab: usize, feature_dim: usize) -> Self {
        let quarter = (feature_dim / 4).max(1);
        DecoderConfig {
            vocab,
            feature_dim,
            embed: 64,
            hidden: 256,
            attention: 32,
            aggregation: [quarter, quarter, (feature_dim / 2).max(1)],
        }
    }

    /// Width of the aggregation output.
    pub fn fused(&self) -> usize {
        self.aggregation.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.vocab, self.feature_dim, self.embed, self.hidden, self.attention];
        if all.contains(&0) || self.aggregation.contains(&0) {
            return Err(Error::Config(format!("decoder widths must be positive: {self:?}")));
        }
        if self.vocab <= EOS_ID {
            return Err(Error::Config("vocabulary must contain the reserved tokens".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct AttIds {
    w: ParamId,
    w_q: ParamId,
    u_q: ParamId,
    b_q: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct GruIds {
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_h: ParamId,
    u_h: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Ids {
    embed: ParamId,
    att: [AttIds; 3],
    gru_att: GruIds,
    agg_w: [ParamId; 3],
    agg_b: ParamId,
    agg_u: ParamId,
    gru_m: GruIds,
    out_w: ParamId,
    out_b: ParamId,
}

fn lookup(params: &ParamSet, name: &str) -> Result<ParamId> {
    params.find(name).ok_or_else(|| Error::Format { offset: 0, message: format!("missing decoder parameter {name}") })
}

impl GruIds {
    fn find(params: &ParamSet, prefix: &str) -> Result<Self> {
        let g = |n: &str| lookup(params, &format!("{prefix}.{n}"));
        Ok(GruIds {
            w_z: g("w_z")?,
            u_z: g("u_z")?,
            b_z: g("b_z")?,
            w_r: g("w_r")?,
            u_r: g("u_r")?,
            b_r: g("b_r")?,
            w_h: g("w_h")?,
            u_h: g("u_h")?,
        })
    }
}

impl Ids {
    fn find(params: &ParamSet) -> Result<Self> {
        let att = |c: Channel| -> Result<AttIds> {
            let g = |n: &str| lookup(params, &format!("dec.att.{}.{n}", c.name()));
            Ok(AttIds { w: g("w")?, w_q: g("w_q")?, u_q: g("u_q")?, b_q: g("b_q")? })
        };
        Ok(Ids {
            embed: lookup(params, "dec.embed")?,
            att: [att(Channel::Scene)?, att(Channel::Motion)?, att(Channel::Fovea)?],
            gru_att: GruIds::find(params, "dec.gru_att")?,
            agg_w: [lookup(params, "dec.agg.w_s")?, lookup(params, "dec.agg.w_m")?, lookup(params, "dec.agg.w_f")?],
            agg_b: lookup(params, "dec.agg.b_g")?,
            agg_u: lookup(params, "dec.agg.u_g")?,
            gru_m: GruIds::find(params, "dec.gru_m")?,
            out_w: lookup(params, "dec.out.w")?,
            out_b: lookup(params, "dec.out.b")?,
        })
    }
}

#[derive(Clone, Copy)]
pub struct AttVars<'t> {
    pub w: Var<'t>,
    pub w_q: Var<'t>,
    pub u_q: Var<'t>,
    pub b_q: Var<'t>,
}

#[derive(Clone, Copy)]
pub struct GruVars<'t> {
    pub w_z: Var<'t>,
    pub u_z: Var<'t>,
    pub b_z: Var<'t>,
    pub w_r: Var<'t>,
    pub u_r: Var<'t>,
    pub b_r: Var<'t>,
    pub w_h: Var<'t>,
    pub u_h: Var<'t>,
}

/// Decoder parameters bound to one tape.
#[derive(Clone, Copy)]
pub struct DecoderVars<'t> {
    pub embed: Var<'t>,
    pub att: [AttVars<'t>; 3],
    pub gru_att: GruVars<'t>,
    pub agg_w: [Var<'t>; 3],
    pub agg_b: Var<'t>,
    pub agg_u: Var<'t>,
    pub gru_m: GruVars<'t>,
    pub out_w: Var<'t>,
    pub out_b: Var<'t>,
}

fn add_gru(p: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) {
    for g in ["z", "r", "h"] {
        p.add(format!("{prefix}.w_{g}"), orthogonal(hidden, input, rng), true);
        p.add(format!("{prefix}.u_{g}"), orthogonal(hidden, hidden, rng), true);
        if g != "h" {
            p.add(format!("{prefix}.b_{g}"), Tensor::zeros(&[hidden]), false);
        }
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    config: DecoderConfig,
    params: ParamSet,
    ids: Ids,
}

impl Decoder {
    /// Orthogonal GRU matrices, Xavier elsewhere, zero biases.
    pub fn new(config: DecoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let DecoderConfig { vocab, feature_dim: f, embed: e, hidden: h, attention: a, aggregation } = config;
        let q = config.fused();
        let mut p = ParamSet::new();
        p.add("dec.embed", xavier(&[e, vocab], rng), true);
        for c in Channel::ALL {
            let n = c.name();
            p.add(format!("dec.att.{n}.w"), xavier(&[a], rng), true);
            p.add(format!("dec.att.{n}.w_q"), xavier(&[a, f], rng), true);
            p.add(format!("dec.att.{n}.u_q"), xavier(&[a, h], rng), true);
            p.add(format!("dec.att.{n}.b_q"), Tensor::zeros(&[a]), false);
        }
        add_gru(&mut p, "dec.gru_att", e, h, rng);
        for (name, width) in ["dec.agg.w_s", "dec.agg.w_m", "dec.agg.w_f"].iter().zip(aggregation) {
            p.add(*name, xavier(&[width, f], rng), true);
        }
        p.add("dec.agg.b_g", Tensor::zeros(&[q]), false);
        p.add("dec.agg.u_g", xavier(&[q, h], rng), true);
        add_gru(&mut p, "dec.gru_m", q + e, h, rng);
        p.add("dec.out.w", xavier(&[vocab, h], rng), true);
        p.add("dec.out.b", Tensor::zeros(&[vocab]), false);
        let ids = Ids::find(&p)?;
        Ok(Decoder { config, params: p, ids })
    }

    /// Rebuild from named tensors, inferring widths from their shapes.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let ids = Ids::find(&params)?;
        let dims = |id: ParamId, axis: usize| params.get(id).value.shape().get(axis).copied().unwrap_or(0);
        let config = DecoderConfig {
            vocab: dims(ids.out_w, 0),
            feature_dim: dims(ids.att[0].w_q, 1),
            embed: dims(ids.embed, 0),
            hidden: dims(ids.out_w, 1),
            attention: dims(ids.att[0].w, 0),
            aggregation: ids.agg_w.map(|id| dims(id, 0)),
        };
        let mut fresh = Decoder::new(config, &mut rng(0))?;
        if fresh.params.len() != params.len() {
            return Err(Error::Format { offset: 0, message: "unexpected decoder parameter count".into() });
        }
        for p in params.iter() {
            fresh.params.set_value(&p.name, p.value.clone()).map_err(|e| Error::Format {
                offset: 0,
                message: format!("decoder parameter {}: {e}", p.name),
            })?;
        }
        Ok(fresh)
    }

    pub fn config(&self) -> DecoderConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> DecoderVars<'t> {
        self.bind_from(tape, &self.params, trainable)
    }

    pub fn bind_from<'t>(&self, tape: &'t Tape, params: &ParamSet, trainable: bool) -> DecoderVars<'t> {
        let v = |id| if trainable { tape.param(params, id) } else { tape.frozen_param(params, id) };
        let gru = |g: &GruIds| GruVars {
            w_z: v(g.w_z),
            u_z: v(g.u_z),
            b_z: v(g.b_z),
            w_r: v(g.w_r),
            u_r: v(g.u_r),
            b_r: v(g.b_r),
            w_h: v(g.w_h),
            u_h: v(g.u_h),
        };
        let ids = &self.ids;
        DecoderVars {
            embed: v(ids.embed),
            att: ids.att.map(|a| AttVars { w: v(a.w), w_q: v(a.w_q), u_q: v(a.u_q), b_q: v(a.b_q) }),
            gru_att: gru(&ids.gru_att),
            agg_w: ids.agg_w.map(v),
            agg_b: v(ids.agg_b),
            agg_u: v(ids.agg_u),
            gru_m: gru(&ids.gru_m),
            out_w: v(ids.out_w),
            out_b: v(ids.out_b),
        }
    }

    /// Weight matrices subject to ℓ2 decay.
    fn decayed<'t>(&self, tape: &'t Tape, params: &ParamSet) -> Vec<Var<'t>> {
        params.ids().filter(|&id| params.get(id).decay).map(|id| tape.param(params, id)).collect()
    }
}

/// Pools on the tape with their `W_q` projections computed once per sentence.
#[derive(Clone, Copy)]
pub struct PoolContext<'t> {
    pub pools: [Var<'t>; 3],
    pub projected: [Var<'t>; 3],
}

impl<'t> PoolContext<'t> {
    pub fn new(vars: &DecoderVars<'t>, pools: &[FeaturePool; 3]) -> Result<Self> {
        let tape = vars.embed.tape();
        let mut vs = Vec::with_capacity(3);
        let mut proj = Vec::with_capacity(3);
        for (k, pool) in pools.iter().enumerate() {
            if pool.channel != Channel::ALL[k] {
                return Err(Error::Contract(format!("pool {k} is {:?}, expected {:?}", pool.channel, Channel::ALL[k])));
            }
            let v = tape.constant(pool.matrix().clone());
            proj.push(v.matmul(vars.att[k].w_q, false, true)?);
            vs.push(v);
        }
        Ok(PoolContext { pools: [vs[0], vs[1], vs[2]], projected: [proj[0], proj[1], proj[2]] })
    }
}

/// `β = softmax_τ(wᵀ stanh(W_q v_τ + U_q h + b_q))`, `u = Σ β_τ v_τ`. Returns `(u, β)`.
pub fn temporal_attention<'t>(
    att: &AttVars<'t>,
    pool: Var<'t>,
    projected: Var<'t>,
    h_att: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let shift = att.u_q.matvec(h_att)?.add(att.b_q)?;
    let scores = projected.add_row(shift)?.stanh().matvec(att.w)?;
    let beta = scores.softmax();
    let n = beta.shape()[0];
    let u = beta.reshape(&[1, n])?.matmul(pool, false, false)?.flatten();
    Ok((u, beta))
}

/// Standard GRU with biases on the update and reset gates.
pub fn gru_step<'t>(g: &GruVars<'t>, x: Var<'t>, h_prev: Var<'t>) -> Result<Var<'t>> {
    let z = g.w_z.matvec(x)?.add(g.u_z.matvec(h_prev)?)?.add(g.b_z)?.sigmoid();
    let r = g.w_r.matvec(x)?.add(g.u_r.matvec(h_prev)?)?.add(g.b_r)?.sigmoid();
    let cand = g.w_h.matvec(x)?.add(g.u_h.matvec(r.mul(h_prev)?)?)?.tanh();
    Ok(h_prev.add(z.mul(cand.sub(h_prev)?)?)?)
}

fn dropout_mask(n: usize, rng: &mut Rng) -> Tensor {
    let keep = 1.0 / (1.0 - DROPOUT_RATE);
    Tensor::from_fn(&[n], |_| if rng.random::<f64>() < DROPOUT_RATE { 0.0 } else { keep })
}

/// `stanh(([W_s u_s ∥ W_m u_m ∥ W_f u_f] + b_g) ⊙ U_g h_att)`, with inverted dropout when `dropout` is given.
pub fn aggregate<'t>(vars: &DecoderVars<'t>, u: [Var<'t>; 3], h_att: Var<'t>, dropout: Option<&mut Rng>) -> Result<Var<'t>> {
    let tape = h_att.tape();
    let parts = [vars.agg_w[0].matvec(u[0])?, vars.agg_w[1].matvec(u[1])?, vars.agg_w[2].matvec(u[2])?];
    let fused = tape.concat(&parts)?.add(vars.agg_b)?;
    let q = fused.mul(vars.agg_u.matvec(h_att)?)?.stanh();
    Ok(match dropout {
        Some(r) => {
            let n = q.shape()[0];
            q.mul_const(dropout_mask(n, r))?
        }
        None => q,
    })
}

#[derive(Clone, Copy)]
pub struct DecoderState<'t> {
    pub h_att: Var<'t>,
    pub h_m: Var<'t>,
}

impl<'t> DecoderState<'t> {
    pub fn zero(tape: &'t Tape, config: &DecoderConfig) -> Self {
        DecoderState {
            h_att: tape.constant(Tensor::zeros(&[config.hidden])),
            h_m: tape.constant(Tensor::zeros(&[config.hidden])),
        }
    }
}

pub struct StepOutput<'t> {
    pub logits: Var<'t>,
    pub state: DecoderState<'t>,
    /// Temporal attention weights per channel.
    pub betas: [Var<'t>; 3],
}

/// Advance one word: attention GRU first, then attention and aggregation on the fresh state.
pub fn decode_step<'t>(
    vars: &DecoderVars<'t>,
    ctx: &PoolContext<'t>,
    state: DecoderState<'t>,
    prev_word: usize,
    dropout: Option<&mut Rng>,
) -> Result<StepOutput<'t>> {
    let vocab = vars.embed.shape()[1];
    if prev_word >= vocab {
        return Err(Error::Contract(format!("word index {prev_word} outside vocabulary of {vocab}")));
    }
    let tape = vars.embed.tape();
    let emb = vars.embed.column(prev_word)?;
    let h_att = gru_step(&vars.gru_att, emb, state.h_att)?;
    let mut us = Vec::with_capacity(3);
    let mut betas = Vec::with_capacity(3);
    for k in 0..3 {
        let (u, b) = temporal_attention(&vars.att[k], ctx.pools[k], ctx.projected[k], h_att)?;
        us.push(u);
        betas.push(b);
    }
    let q = aggregate(vars, [us[0], us[1], us[2]], h_att, dropout)?;
    let h_m = gru_step(&vars.gru_m, tape.concat(&[q, emb])?, state.h_m)?;
    let logits = vars.out_w.matvec(h_m)?.add(vars.out_b)?;
    Ok(StepOutput { logits, state: DecoderState { h_att, h_m }, betas: [betas[0], betas[1], betas[2]] })
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Decoder {
    /// Greedy decoding from `<BOS>` until `<EOS>` or `max_len` words.
    pub fn decode_greedy(&self, pools: &[FeaturePool; 3], max_len: usize) -> Result<Vec<usize>> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let ctx = PoolContext::new(&vars, pools)?;
        let mut state = DecoderState::zero(&tape, &self.config);
        let mut prev = BOS_ID;
        let mut out = Vec::new();
        while out.len() < max_len {
            let step = decode_step(&vars, &ctx, state, prev, None)?;
            let next = argmax(step.logits.value().data());
            if next == EOS_ID {
                break;
            }
            out.push(next);
            prev = next;
            state = step.state;
        }
        Ok(out)
    }

    /// Teacher-forced loss on `params` (laid out like `self.params`).
    pub fn caption_loss_with<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamSet,
        pools: &[FeaturePool; 3],
        tokens: &[usize],
        l2: f64,
        max_len: usize,
        dropout: Option<&mut Rng>,
    ) -> Result<Var<'t>> {
        if tokens.is_empty() {
            return Err(Error::Contract("empty ground-truth caption".into()));
        }
        let vars = self.bind_from(tape, params, true);
        let ctx = PoolContext::new(&vars, pools)?;
        let ce = teacher_forced_ce(&vars, &ctx, &self.config, tokens, max_len, dropout)?;
        if l2 == 0.0 {
            return Ok(ce);
        }
        let mut reg: Option<Var<'t>> = None;
        for w in self.decayed(tape, params) {
            let s = w.sum_squares();
            reg = Some(match reg {
                Some(acc) => acc.add(s)?,
                None => s,
            });
        }
        Ok(match reg {
            Some(r) => ce.add(r.scale(l2))?,
            None => ce,
        })
    }

    pub fn caption_loss<'t>(
        &self,
        tape: &'t Tape,
        pools: &[FeaturePool; 3],
        tokens: &[usize],
        l2: f64,
        max_len: usize,
        dropout: Option<&mut Rng>,
    ) -> Result<Var<'t>> {
        self.caption_loss_with(tape, &self.params, pools, tokens, l2, max_len, dropout)
    }
}

/// Mean of `−log softmax(logits_t)[target_t]` with inputs `[BOS, w…]` and targets `[w…, EOS]`.
pub fn teacher_forced_ce<'t>(
    vars: &DecoderVars<'t>,
    ctx: &PoolContext<'t>,
    config: &DecoderConfig,
    tokens: &[usize],
    max_len: usize,
    mut dropout: Option<&mut Rng>,
) -> Result<Var<'t>> {
    let words = &tokens[..tokens.len().min(max_len)];
    let tape = vars.embed.tape();
    let mut state = DecoderState::zero(tape, config);
    let mut prev = BOS_ID;
    let mut logits = Vec::with_capacity(words.len() + 1);
    for &w in words.iter().chain(std::iter::once(&EOS_ID)) {
        let step = decode_step(vars, ctx, state, prev, dropout.as_deref_mut())?;
        logits.push((step.logits, w));
        state = step.state;
        prev = w;
    }
    sequence_cross_entropy(&logits)
}

/// Mean over steps of the negative log-probability of each target.
pub fn sequence_cross_entropy<'t>(steps: &[(Var<'t>, usize)]) -> Result<Var<'t>> {
    if steps.is_empty() {
        return Err(Error::Contract("no decoding steps".into()));
    }
    let mut total: Option<Var<'t>> = None;
    for &(l, target) in steps {
        let nll = l.log_softmax().index(target)?.scale(-1.0);
        total = Some(match total {
            Some(acc) => acc.add(nll)?,
            None => nll,
        });
    }
    Ok(total.expect("non-empty").scale(1.0 / steps.len() as f64))
}

/// One training sentence with its clip's pools.
#[derive(Clone, Debug)]
pub struct CaptionExample {
    pub pools: [FeaturePool; 3],
    pub tokens: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaptionTrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub l2: f64,
    pub max_len: usize,
    pub dropout: bool,
}

impl Default for CaptionTrainConfig {
    fn default() -> Self {
        CaptionTrainConfig { lr: 1e-4, steps: 5000, l2: DEFAULT_L2, max_len: DEFAULT_MAX_LEN, dropout: true }
    }
}

/// Adam over one sentence per step, sentences visited in seeded shuffled epochs.
pub struct CaptionTrainer<'a> {
    pub model: Decoder,
    examples: &'a [CaptionExample],
    adam: Adam,
    config: CaptionTrainConfig,
    rng: Rng,
    order: Vec<usize>,
    losses: Vec<f64>,
}

impl<'a> CaptionTrainer<'a> {
    pub fn new(model: Decoder, examples: &'a [CaptionExample], config: CaptionTrainConfig, seed: u64) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Config("caption training needs at least one example".into()));
        }
        if !(config.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 coefficient must be >= 0, got {}", config.l2)));
        }
        if config.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        let adam = Adam::new(AdamConfig::with_lr(config.lr), model.params())?;
        Ok(CaptionTrainer {
            model,
            examples,
            adam,
            config,
            rng: rng(derive_seed(seed, 0x6465_63)),
            order: Vec::new(),
            losses: Vec::new(),
        })
    }

    fn next_example(&mut self) -> usize {
        if self.order.is_empty() {
            let mut idx: Vec<usize> = (0..self.examples.len()).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, self.rng.random_range(0..=i));
            }
            idx.reverse();
            self.order = idx;
        }
        self.order.pop().expect("refilled above")
    }

    pub fn step(&mut self) -> Result<f64> {
        let ex = &self.examples[self.next_example()];
        let tape = Tape::new();
        let dropout = if self.config.dropout { Some(&mut self.rng) } else { None };
        let loss = self.model.caption_loss(&tape, &ex.pools, &ex.tokens, self.config.l2, self.config.max_len, dropout)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Contract(format!("caption loss diverged to {value}")));
        }
        tape.backward(loss)?.accumulate_into(self.model.params_mut())?;
        self.adam.step(self.model.params_mut())?;
        self.losses.push(value);
        Ok(value)
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn run(mut self) -> Result<(Decoder, Vec<f64>)> {
        for _ in 0..self.config.steps {
            self.step()?;
        }
        Ok((self.model, self.losses))
    }
}

pub fn train_captioner(
    model: Decoder,
    examples: &[CaptionExample],
    config: CaptionTrainConfig,
    seed: u64,
) -> Result<(Decoder, Vec<f64>)> {
    CaptionTrainer::new(model, examples, config, seed)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pools::build_pool;

    fn tiny() -> DecoderConfig {
        DecoderConfig { vocab: 7, feature_dim: 5, embed: 4, hidden: 6, attention: 3, aggregation: [2, 2, 3] }
    }

    fn pools(seed: u64, f: usize) -> [FeaturePool; 3] {
        let mut r = rng(seed);
        Channel::ALL.map(|c| {
            let n = c.pool_size() / 5;
            let vs: Vec<Vec<f64>> = (0..n).map(|_| (0..f).map(|_| r.random::<f64>() - 0.5).collect()).collect();
            build_pool(c, &vs, n).unwrap()
        })
    }

    fn zeroed(config: DecoderConfig) -> Decoder {
        let mut d = Decoder::new(config, &mut rng(1)).unwrap();
        d.params_mut().iter_mut().for_each(|p| p.value.fill(0.0));
        d
    }

    #[test]
    fn zero_params_uniform_and_pool_mean() {
        let d = zeroed(tiny());
        let ps = pools(2, 5);
        let tape = Tape::new();
        let vars = d.bind(&tape, false);
        let ctx = PoolContext::new(&vars, &ps).unwrap();
        let h = tape.constant(Tensor::full(&[6], 0.3));
        let (u, beta) = temporal_attention(&vars.att[1], ctx.pools[1], ctx.projected[1], h).unwrap();
        let n = ps[1].len();
        assert!(beta.value().data().iter().all(|&b| (b - 1.0 / n as f64).abs() < 1e-15));
        for k in 0..5 {
            let mean = (0..n).map(|i| ps[1].vector(i)[k]).sum::<f64>() / n as f64;
            assert!((u.value().data()[k] - mean).abs() < 1e-12);
        }
        let c = tape.constant(Tensor::full(&[6], 0.8));
        let x = tape.constant(Tensor::full(&[4], -1.0));
        assert!(gru_step(&vars.gru_att, x, c).unwrap().value().data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
        let z = tape.constant(Tensor::zeros(&[6]));
        assert!(gru_step(&vars.gru_att, x, z).unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gate_aggregation() {
        let d = Decoder::new(tiny(), &mut rng(3)).unwrap();
        let tape = Tape::new();
        let vars = d.bind(&tape, false);
        let u = [0, 1, 2].map(|k| tape.constant(Tensor::full(&[5], k as f64)));
        let q = aggregate(&vars, u, tape.constant(Tensor::zeros(&[6])), None).unwrap();
        assert!(q.value().data().iter().all(|&v| v == 0.0));
        let h = tape.constant(Tensor::full(&[6], 0.9));
        let a = aggregate(&vars, u, h, None).unwrap().value();
        let b = aggregate(&vars, u, h, None).unwrap().value();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 1.7159));
        let mut r = rng(4);
        let dropped = aggregate(&vars, u, h, Some(&mut r)).unwrap().value();
        for (x, y) in dropped.data().iter().zip(a.data()) {
            assert!(*x == 0.0 || (*x - 2.0 * y).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_pool_vectors() {
        let d = Decoder::new(tiny(), &mut rng(5)).unwrap();
        let v = vec![0.3, -0.2, 0.5, 0.0, 1.0];
        let ps = Channel::ALL.map(|c| build_pool(c, &[v.clone()], 4).unwrap());
        let tape = Tape::new();
        let vars = d.bind(&tape, false);
        let ctx = PoolContext::new(&vars, &ps).unwrap();
        let h = tape.constant(Tensor::from_fn(&[6], |i| i as f64 * 0.1));
        let (u, _) = temporal_attention(&vars.att[0], ctx.pools[0], ctx.projected[0], h).unwrap();
        for (a, b) in u.value().data().iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_contracts() {
        let d = Decoder::new(tiny(), &mut rng(6)).unwrap();
        let ps = pools(7, 5);
        let tape = Tape::new();
        let vars = d.bind(&tape, false);
        let ctx = PoolContext::new(&vars, &ps).unwrap();
        let s0 = DecoderState::zero(&tape, &d.config());
        let a = decode_step(&vars, &ctx, s0, BOS_ID, None).unwrap();
        let b = decode_step(&vars, &ctx, s0, BOS_ID, None).unwrap();
        assert_eq!(a.logits.value(), b.logits.value());
        assert!((a.logits.softmax().value().sum() - 1.0).abs() < 1e-9);
        assert!(matches!(decode_step(&vars, &ctx, s0, 7, None), Err(Error::Contract(_))));
    }

    #[test]
    fn forced_eos_gives_empty_caption() {
        let mut d = zeroed(tiny());
        let id = d.params().find("dec.out.b").unwrap();
        d.params_mut().get_mut(id).value.set(&[EOS_ID], 5.0);
        assert!(d.decode_greedy(&pools(8, 5), 80).unwrap().is_empty());
        let fresh = Decoder::new(tiny(), &mut rng(9)).unwrap();
        assert!(fresh.decode_greedy(&pools(8, 5), 80).unwrap().len() <= 80);
        assert!(fresh.decode_greedy(&pools(8, 5), 3).unwrap().len() <= 3);
    }

    #[test]
    fn uniform_logits_loss() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[4]));
        let l = sequence_cross_entropy(&[(z, 1), (z, 3), (z, 0)]).unwrap();
        assert!((l.item() - 4f64.ln()).abs() < 1e-12);
        let d = zeroed(tiny());
        let l = d.caption_loss(&tape, &pools(10, 5), &[3, 4, 5], 0.0, 80, None).unwrap();
        assert!((l.item() - 7f64.ln()).abs() < 1e-12);
        assert!(matches!(d.caption_loss(&tape, &pools(10, 5), &[], 0.0, 80, None), Err(Error::Contract(_))));
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn param_round_trip() {
        let d = Decoder::new(tiny(), &mut rng(11)).unwrap();
        let back = Decoder::from_params(d.params().clone()).unwrap();
        assert_eq!(back.config(), tiny());
        assert_eq!(back.params(), d.params());
    }
}
