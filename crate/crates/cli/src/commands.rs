//! One function per subcommand. Inputs are read and validated before anything is written.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use gean::data::synthetic::{generate, write_synthetic, SyntheticConfig};
use gean::data::{load_params, save_params, write_feature_file, ClipData, DType, Dataset, Split};
use gean::decoder::{train_captioner, CaptionTrainConfig, Decoder};
use gean::gaze::{GazeMap, GAZE_GRID};
use gean::metrics::{
    cider, corpus_bleu, eval_protocol, rouge_l, write_report, CopyGroundTruth, EvalClip, GridPredictions, ProtocolConfig,
    SaliencySource,
};
use gean::metrics::protocol::DEFAULT_SAUC_SPLITS;
use gean::pipeline::{attention_maps, caption_examples, pools_for, rgp_clip, GazeSource};
use gean::pools::{GazeKind, SpatialAttentionMap, FEATURE_GRID};
use gean::rgp::{train_rgp, Rgp, RgpClip, RgpTrainConfig};
use gean::vocab::{tokenize, Vocabulary};
use gean::{Error, Grid};
use gean_tensor::rng::{derive_seed, rng};
use gean_tensor::Tensor;

use crate::config::Settings;

/// Exit status 1 for bad inputs, 2 for failures while running.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;

/// Errors while writing results are runtime failures, whatever their kind.
fn emit<T>(r: gean::Result<T>) -> Outcome<T> {
    r.map_err(|e| Failure::Runtime(e.to_string()))
}

fn prepare_out(dir: &Path) -> Outcome {
    emit(std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)))
}

fn report(s: &Settings, name: &str, metrics: &BTreeMap<String, f64>) -> Outcome<PathBuf> {
    let path = s.out_file(name);
    emit(write_report(&path, metrics))?;
    Ok(path)
}

fn write_text(path: &Path, text: &str) -> Outcome {
    emit(std::fs::write(path, text).map_err(|e| Error::io(path, e)))
}

fn metrics<const N: usize>(pairs: [(&str, f64); N]) -> BTreeMap<String, f64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn keeps(self, s: Split) -> bool {
        match self {
            SplitArg::Train => s == Split::Train,
            SplitArg::Test => s == Split::Test,
            SplitArg::All => true,
        }
    }
}

fn load_split(manifest: &Path, split: SplitArg) -> Outcome<(Dataset, Vec<ClipData>)> {
    let ds = Dataset::load(manifest)?;
    let mut clips = Vec::new();
    for rec in ds.clips().iter().filter(|c| split.keeps(c.split)) {
        clips.push(ds.load_clip(rec)?);
    }
    if clips.is_empty() {
        return Err(Failure::Validation(format!("manifest has no {split:?} clips").to_lowercase()));
    }
    Ok((ds, clips))
}

fn load_rgp(path: &Path) -> Outcome<Rgp> {
    Ok(Rgp::from_params(load_params(path)?)?)
}

fn load_rgp_for(kind: GazeKind, path: &Path) -> Outcome<Option<Rgp>> {
    if kind == GazeKind::Learned {
        load_rgp(path).map(Some)
    } else {
        Ok(None)
    }
}

pub struct TrainRgpArgs {
    pub manifest: PathBuf,
    pub lr: f64,
    pub steps: usize,
    pub preset: crate::config::Preset,
}

pub fn train_rgp_cmd(s: &Settings, a: TrainRgpArgs) -> Outcome {
    let (ds, clips) = load_split(&a.manifest, SplitArg::Train)?;
    let train: Vec<RgpClip> = clips.iter().filter(|c| c.fixations.is_some()).map(rgp_clip).collect::<gean::Result<_>>()?;
    let model = Rgp::new(a.preset.rgp(ds.manifest.feature_dim), &mut rng(derive_seed(s.seed, 1)))?;
    let config = RgpTrainConfig { lr: a.lr, steps: a.steps, ..Default::default() };
    let (model, losses) = train_rgp(model, &train, config, derive_seed(s.seed, 2))?;
    let entropy = train.iter().map(RgpClip::target_entropy).sum::<f64>() / train.len() as f64;
    let loss = model.dataset_loss(&train)?;
    prepare_out(&s.out)?;
    let ckpt = s.out_file("rgp.ckpt");
    emit(save_params(&ckpt, model.params()))?;
    let tail = &losses[losses.len().saturating_sub(100)..];
    let path = report(
        s,
        "train_rgp.json",
        &metrics([
            ("clips", train.len() as f64),
            ("steps", a.steps as f64),
            ("final_loss", losses.last().copied().unwrap_or(loss)),
            ("mean_recent_loss", if tail.is_empty() { loss } else { tail.iter().sum::<f64>() / tail.len() as f64 }),
            ("dataset_loss", loss),
            ("mean_target_entropy", entropy),
            ("gap", loss - entropy),
        ]),
    )?;
    println!("wrote {} and {}", ckpt.display(), path.display());
    Ok(())
}

pub struct GazeArgs {
    pub kind: GazeKind,
    pub lambda: f64,
    pub rgp: PathBuf,
}

pub struct TrainCaptionerArgs {
    pub manifest: PathBuf,
    pub gaze: GazeArgs,
    pub lr: f64,
    pub steps: usize,
    pub l2: f64,
    pub max_len: usize,
    pub dropout: bool,
    pub preset: crate::config::Preset,
}

fn greedy_captions(
    decoder: &Decoder,
    vocab: &Vocabulary,
    clips: &[ClipData],
    source: GazeSource<'_>,
    lambda: f64,
    seed: u64,
    max_len: usize,
) -> Outcome<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for c in clips {
        let pools = pools_for(c, source, lambda, seed)?;
        out.insert(c.id.clone(), vocab.decode(&decoder.decode_greedy(&pools, max_len)?).join(" "));
    }
    Ok(out)
}

fn references(clips: &[ClipData]) -> BTreeMap<String, Vec<Vec<String>>> {
    clips.iter().map(|c| (c.id.clone(), c.captions.iter().map(|r| tokenize(r)).collect())).collect()
}

fn language_scores(captions: &BTreeMap<String, String>, refs: &BTreeMap<String, Vec<Vec<String>>>) -> Outcome<BTreeMap<String, f64>> {
    let mut cands = Vec::new();
    let mut rs = Vec::new();
    for (id, text) in captions {
        let r = refs.get(id).ok_or_else(|| Failure::Validation(format!("clip {id:?} is not in the manifest")))?;
        if r.is_empty() {
            return Err(Failure::Validation(format!("clip {id:?} has no reference captions")));
        }
        cands.push(tokenize(text));
        rs.push(r.clone());
    }
    if cands.is_empty() {
        return Err(Failure::Validation("no captions to evaluate".into()));
    }
    let c = cider(&cands, &rs);
    let rouge = cands.iter().zip(&rs).map(|(c, r)| rouge_l(c, r)).sum::<f64>() / cands.len() as f64;
    let mut m = metrics([("clips", cands.len() as f64), ("rouge_l", rouge), ("cider", c.mean), ("cider_degenerate", c.degenerate as u8 as f64)]);
    for n in 1..=4 {
        m.insert(format!("bleu{n}"), corpus_bleu(&cands, &rs, n));
    }
    Ok(m)
}

pub fn train_captioner_cmd(s: &Settings, a: TrainCaptionerArgs) -> Outcome {
    let (ds, clips) = load_split(&a.manifest, SplitArg::Train)?;
    let rgp = load_rgp_for(a.gaze.kind, &a.gaze.rgp)?;
    let source = GazeSource::new(a.gaze.kind, rgp.as_ref())?;
    let corpus: Vec<&String> = clips.iter().flat_map(|c| &c.captions).collect();
    let vocab = Vocabulary::build(&corpus)?;
    let refs: Vec<&ClipData> = clips.iter().collect();
    let examples = caption_examples(&refs, &vocab, source, a.gaze.lambda, s.seed)?;
    let model = Decoder::new(a.preset.decoder(vocab.len(), ds.manifest.feature_dim), &mut rng(derive_seed(s.seed, 3)))?;
    let config = CaptionTrainConfig { lr: a.lr, steps: a.steps, l2: a.l2, max_len: a.max_len, dropout: a.dropout };
    let (model, losses) = train_captioner(model, &examples, config, derive_seed(s.seed, 4))?;
    let captions = greedy_captions(&model, &vocab, &clips, source, a.gaze.lambda, s.seed, a.max_len)?;
    let scores = language_scores(&captions, &references(&clips))?;

    prepare_out(&s.out)?;
    let ckpt = s.out_file("decoder.ckpt");
    emit(save_params(&ckpt, model.params()))?;
    write_text(&s.out_file("vocab.json"), &vocab.to_json())?;
    let tail = &losses[losses.len().saturating_sub(100)..];
    let mean_tail = if tail.is_empty() { 0.0 } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    let m = metrics([
        ("examples", examples.len() as f64),
        ("steps", a.steps as f64),
        ("vocab_size", vocab.len() as f64),
        ("lambda", a.gaze.lambda),
        ("final_loss", losses.last().copied().unwrap_or(0.0)),
        ("mean_recent_loss", mean_tail),
        ("train_bleu1", scores["bleu1"]),
    ]);
    let path = report(s, "train_captioner.json", &m)?;
    println!("wrote {}, vocab.json and {}", ckpt.display(), path.display());
    Ok(())
}

/// RGP predictions for every clip as `N×49×49` tensors under `<out>/gaze/`.
pub fn predict_gaze_cmd(s: &Settings, manifest: &Path, rgp_path: &Path, split: SplitArg) -> Outcome {
    let (_, clips) = load_split(manifest, split)?;
    let rgp = load_rgp(rgp_path)?;
    let mut maps = Vec::with_capacity(clips.len());
    for c in &clips {
        maps.push(rgp.predict(&c.motion)?);
    }
    let dir = s.out.join("gaze");
    prepare_out(&dir)?;
    let (mut frames, mut entropy) = (0usize, 0.0);
    for (c, seq) in clips.iter().zip(&maps) {
        let data: Vec<f64> = seq.iter().flat_map(|g| g.grid().data().iter().copied()).collect();
        let t = emit(Tensor::new(&[seq.len(), GAZE_GRID, GAZE_GRID], data).map_err(Error::from))?;
        emit(write_feature_file(&dir.join(format!("{}.gfeat", c.id)), &t, DType::F64))?;
        frames += seq.len();
        entropy += seq.iter().map(GazeMap::entropy).sum::<f64>();
    }
    let path = report(
        s,
        "predict_gaze.json",
        &metrics([("clips", clips.len() as f64), ("frames", frames as f64), ("mean_entropy", entropy / frames as f64)]),
    )?;
    println!("wrote {} gaze sequences to {} and {}", clips.len(), dir.display(), path.display());
    Ok(())
}

pub struct CaptionArgs {
    pub manifest: PathBuf,
    pub gaze: GazeArgs,
    pub decoder: PathBuf,
    pub vocab: PathBuf,
    pub max_len: usize,
    pub split: SplitArg,
}

pub fn caption_cmd(s: &Settings, a: CaptionArgs) -> Outcome {
    let (_, clips) = load_split(&a.manifest, a.split)?;
    let rgp = load_rgp_for(a.gaze.kind, &a.gaze.rgp)?;
    let source = GazeSource::new(a.gaze.kind, rgp.as_ref())?;
    let decoder = Decoder::from_params(load_params(&a.decoder)?)?;
    let text = std::fs::read_to_string(&a.vocab).map_err(|e| Error::io(&a.vocab, e))?;
    let vocab = Vocabulary::from_json(&text)?;
    if vocab.len() != decoder.config().vocab {
        return Err(Failure::Validation(format!("vocabulary has {} words, decoder expects {}", vocab.len(), decoder.config().vocab)));
    }
    let captions = greedy_captions(&decoder, &vocab, &clips, source, a.gaze.lambda, s.seed, a.max_len)?;
    prepare_out(&s.out)?;
    let path = s.out_file("captions.json");
    let json = serde_json::to_string_pretty(&captions).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_text(&path, &(json + "\n"))?;
    println!("wrote {} captions to {}", captions.len(), path.display());
    Ok(())
}

pub fn eval_captions_cmd(s: &Settings, manifest: &Path, captions: &Path) -> Outcome {
    let (_, clips) = load_split(manifest, SplitArg::All)?;
    let text = std::fs::read_to_string(captions).map_err(|e| Error::io(captions, e))?;
    let cands: BTreeMap<String, String> =
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", captions.display())))?;
    let m = language_scores(&cands, &references(&clips))?;
    prepare_out(&s.out)?;
    let path = report(s, "eval_captions.json", &m)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// A 7×7 attention map spread evenly over the 49×49 grid.
fn upsample(alpha: &SpatialAttentionMap) -> gean::Result<GazeMap> {
    let k = GAZE_GRID / FEATURE_GRID;
    let cell = (k * k) as f64;
    GazeMap::new(Grid::from_fn(GAZE_GRID, GAZE_GRID, |r, c| alpha.get(r / k, c / k) / cell))
}

pub struct EvalGazeArgs {
    pub manifest: PathBuf,
    pub kind: GazeKind,
    pub rgp: PathBuf,
    pub sets: usize,
    pub frames: usize,
    pub split: SplitArg,
}

pub fn eval_gaze_cmd(s: &Settings, a: EvalGazeArgs) -> Outcome {
    if a.kind == GazeKind::Uniform {
        return Err(Failure::Validation("uniform gaze ranks no pixel above another; evaluate random gaze instead".into()));
    }
    let (ds, clips) = load_split(&a.manifest, a.split)?;
    let [h, w] = ds.manifest.frame_size;
    let with_fix: Vec<&ClipData> = clips.iter().filter(|c| c.fixations.is_some()).collect();
    if with_fix.is_empty() {
        return Err(Failure::Validation("no clips with fixations to evaluate".into()));
    }
    let targets: Vec<EvalClip> =
        with_fix.iter().map(|c| EvalClip::new(c.id.clone(), h, w, c.fixations.as_deref().unwrap_or(&[]))).collect();
    let source: Box<dyn SaliencySource> = match a.kind {
        GazeKind::Human => Box::new(CopyGroundTruth),
        GazeKind::Learned => {
            let rgp = load_rgp(&a.rgp)?;
            Box::new(GridPredictions(with_fix.iter().map(|c| rgp.predict(&c.motion)).collect::<gean::Result<_>>()?))
        }
        kind => {
            let mut seqs = Vec::with_capacity(with_fix.len());
            for c in &with_fix {
                let alphas = attention_maps(c, GazeSource::Fixed(kind), 0.0, s.seed)?;
                seqs.push(alphas.iter().map(upsample).collect::<gean::Result<Vec<_>>>()?);
            }
            Box::new(GridPredictions(seqs))
        }
    };
    let cfg = ProtocolConfig { sets: a.sets, frames_per_set: a.frames, sauc_splits: DEFAULT_SAUC_SPLITS, seed: s.seed };
    let rep = eval_protocol(&targets, source.as_ref(), &cfg)?;
    prepare_out(&s.out)?;
    let path = report(s, "eval_gaze.json", &rep.metrics())?;
    println!("wrote {}", path.display());
    Ok(())
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn gradcheck_cmd(s: &Settings, trials: u64) -> Outcome {
    if trials == 0 {
        return Err(Failure::Validation("--trials must be positive".into()));
    }
    let m = gean::gradcheck::full_suite(trials, s.seed)?;
    prepare_out(&s.out)?;
    let path = report(s, "gradcheck.json", &m)?;
    let worst = m["max_rel_error"];
    println!("max relative error {worst:.3e} over {trials} instances per check; wrote {}", path.display());
    if worst > GRADCHECK_TOLERANCE {
        return Err(Failure::Runtime(format!("gradient check failed: {worst:.3e} > {GRADCHECK_TOLERANCE:e}")));
    }
    Ok(())
}

pub fn make_synthetic_cmd(s: &Settings, cfg: SyntheticConfig) -> Outcome {
    cfg.validate()?;
    let clips = generate(&cfg, s.seed)?;
    let manifest = emit(write_synthetic(&s.out, &cfg, &clips))?;
    println!("wrote {} clips and {}", manifest.clips.len(), s.out.join("manifest.json").display());
    Ok(())
}
