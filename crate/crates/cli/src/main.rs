mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gean::data::synthetic::SyntheticConfig;

use commands::{Failure, GazeArgs, Outcome, SplitArg};
use config::Settings;

/// Gaze-informed video captioning: train, predict and evaluate.
#[derive(Parser, Debug)]
#[command(name = "gean", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON file of run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed; `GEAN_SEED` overrides it.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct Data {
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// `desk` (small widths) or `paper`.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Debug)]
struct Gaze {
    /// learned, human, uniform, random, central or peripheral.
    #[arg(long)]
    gaze: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// RGP checkpoint for learned gaze (default `<out>/rgp.ckpt`).
    #[arg(long)]
    rgp: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the gaze predictor to the training clips' fixations.
    TrainRgp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        train: Train,
    },
    /// Fit the caption decoder with the RGP frozen.
    TrainCaptioner {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        train: Train,
        #[command(flatten)]
        gaze: Gaze,
        #[arg(long)]
        l2: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        no_dropout: bool,
    },
    /// Write RGP gaze maps for every clip.
    PredictGaze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        rgp: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Greedy captions for the selected clips.
    Caption {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        gaze: Gaze,
        #[arg(long)]
        max_len: Option<usize>,
        /// Decoder checkpoint (default `<out>/decoder.ckpt`).
        #[arg(long)]
        decoder: Option<PathBuf>,
        /// Vocabulary (default `<out>/vocab.json`).
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Sim, CC, sAUC and AUC of a gaze source against recorded fixations.
    EvalGaze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        gaze: Gaze,
        #[arg(long)]
        protocol_sets: Option<usize>,
        #[arg(long)]
        protocol_frames: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// BLEU, ROUGE-L and CIDEr of a captions file against the manifest references.
    EvalCaptions {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Captions JSON (default `<out>/captions.json`).
        #[arg(long)]
        captions: Option<PathBuf>,
    },
    /// Finite-difference checks of every primitive and model graph.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random instances per check.
        #[arg(long, default_value_t = 20)]
        trials: u64,
    },
    /// Write a synthetic dataset and its manifest into `--out`.
    MakeSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        clips: usize,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        feature_dim: usize,
        /// Trailing clips marked as test.
        #[arg(long, default_value_t = 0)]
        test_clips: usize,
    },
}

fn settings(c: Common) -> Outcome<Settings> {
    Ok(Settings::new(c.config.as_deref(), c.seed, c.out)?)
}

fn gaze_args(s: &Settings, g: Gaze) -> Outcome<GazeArgs> {
    Ok(GazeArgs {
        kind: s.gaze(g.gaze)?,
        lambda: s.lambda(g.lambda)?,
        rgp: g.rgp.unwrap_or_else(|| s.out_file("rgp.ckpt")),
    })
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::TrainRgp { common, data, train } => {
            let s = settings(common)?;
            let args = commands::TrainRgpArgs {
                manifest: s.manifest(data.manifest)?,
                lr: s.lr(train.lr)?,
                steps: s.steps(train.steps, 2000),
                preset: s.preset(train.preset)?,
            };
            commands::train_rgp_cmd(&s, args)
        }
        Command::TrainCaptioner { common, data, train, gaze, l2, max_len, no_dropout } => {
            let s = settings(common)?;
            let args = commands::TrainCaptionerArgs {
                manifest: s.manifest(data.manifest)?,
                gaze: gaze_args(&s, gaze)?,
                lr: s.lr(train.lr)?,
                steps: s.steps(train.steps, 5000),
                l2: s.l2(l2),
                max_len: s.max_len(max_len),
                dropout: !no_dropout,
                preset: s.preset(train.preset)?,
            };
            commands::train_captioner_cmd(&s, args)
        }
        Command::PredictGaze { common, data, rgp, split } => {
            let s = settings(common)?;
            let manifest = s.manifest(data.manifest)?;
            let rgp = rgp.unwrap_or_else(|| s.out_file("rgp.ckpt"));
            commands::predict_gaze_cmd(&s, &manifest, &rgp, split)
        }
        Command::Caption { common, data, gaze, max_len, decoder, vocab, split } => {
            let s = settings(common)?;
            let args = commands::CaptionArgs {
                manifest: s.manifest(data.manifest)?,
                gaze: gaze_args(&s, gaze)?,
                decoder: decoder.unwrap_or_else(|| s.out_file("decoder.ckpt")),
                vocab: vocab.unwrap_or_else(|| s.out_file("vocab.json")),
                max_len: s.max_len(max_len),
                split,
            };
            commands::caption_cmd(&s, args)
        }
        Command::EvalGaze { common, data, gaze, protocol_sets, protocol_frames, split } => {
            let s = settings(common)?;
            let (sets, frames) = s.protocol(protocol_sets, protocol_frames);
            let g = gaze_args(&s, gaze)?;
            let args =
                commands::EvalGazeArgs { manifest: s.manifest(data.manifest)?, kind: g.kind, rgp: g.rgp, sets, frames, split };
            commands::eval_gaze_cmd(&s, args)
        }
        Command::EvalCaptions { common, data, captions } => {
            let s = settings(common)?;
            let manifest = s.manifest(data.manifest)?;
            let captions = captions.unwrap_or_else(|| s.out_file("captions.json"));
            commands::eval_captions_cmd(&s, &manifest, &captions)
        }
        Command::Gradcheck { common, trials } => commands::gradcheck_cmd(&settings(common)?, trials),
        Command::MakeSynthetic { common, clips, frames, feature_dim, test_clips } => {
            let s = settings(common)?;
            let cfg = SyntheticConfig { clips, frames, feature_dim, test_clips, ..Default::default() };
            commands::make_synthetic_cmd(&s, cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = match f {
                Failure::Validation(_) => "invalid input",
                Failure::Runtime(_) => "error",
            };
            eprintln!("{kind}: {f}");
            ExitCode::from(f.code() as u8)
        }
    }
}
