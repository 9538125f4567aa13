//! `tabimpute train`: fit a denoiser on a complete table.

use std::path::PathBuf;

use clap::Args;
use log::info;
use tabimpute::training::{train_with_observer, TrainObserver};
use tabimpute::{Architecture, Checkpoint, Denoiser, DenoiserConfig, MinMaxScaler, TrainingConfig};

use super::{path_str, CommonFlags};
use crate::common::{load_dataset, split_dataset, write_with_header, Outputs};
use crate::config::Settings;
use crate::error::{CliError, CliResult};

pub const DEFAULTS: [(&str, &str); 21] = [
    ("data", ""),
    ("target", ""),
    ("task", "regression"),
    ("split", "0.8"),
    ("split_seed", "0"),
    ("arch", "mlp"),
    ("blocks", "3"),
    ("hidden", "64"),
    ("embed_dim", "192"),
    ("heads", "8"),
    ("time_tokenizer", "true"),
    ("epochs", "20"),
    ("batch_size", "64"),
    ("t_training", "1000"),
    ("lr", "0.001"),
    ("weight_decay", "0.00001"),
    ("beta_l1", "1"),
    ("seed", "0"),
    ("checkpoint_every", "0"),
    ("precision", "f64"),
    ("out", ""),
];

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// Complete CSV table with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column to leave out of the features (kept for downstream evaluation).
    #[arg(long)]
    pub target: Option<String>,
    /// regression, binclass or multiclass.
    #[arg(long)]
    pub task: Option<String>,
    /// Fraction of rows used for training; the rest is held out.
    #[arg(long)]
    pub split: Option<f64>,
    /// Seed of the train/test split.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// mlp, resnet, transformer or unet.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Train without the time-step input (FiLM becomes the identity).
    #[arg(long)]
    pub no_time_tokenizer: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Number of diffusion steps.
    #[arg(long = "T")]
    pub t_training: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Also save a checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn settings(args: &TrainArgs) -> CliResult<Settings> {
    let mut s = Settings::new("train", &DEFAULTS);
    args.common.apply(&mut s)?;
    s.set_opt("data", path_str(&args.data));
    s.set_opt("target", args.target.as_ref());
    s.set_opt("task", args.task.as_ref());
    s.set_opt("split", args.split);
    s.set_opt("split_seed", args.split_seed);
    s.set_opt("arch", args.arch.as_ref());
    s.set_opt("blocks", args.blocks);
    s.set_opt("hidden", args.hidden);
    s.set_opt("embed_dim", args.embed_dim);
    s.set_opt("heads", args.heads);
    if args.no_time_tokenizer {
        s.set("time_tokenizer", false);
    }
    s.set_opt("epochs", args.epochs);
    s.set_opt("batch_size", args.batch_size);
    s.set_opt("t_training", args.t_training);
    s.set_opt("lr", args.lr);
    s.set_opt("weight_decay", args.weight_decay);
    s.set_opt("checkpoint_every", args.checkpoint_every);
    s.set_opt("out", path_str(&args.out));
    Ok(s)
}

struct Progress<'a> {
    out: &'a Outputs,
    every: usize,
    base: &'a Checkpoint,
}

impl TrainObserver<f64> for Progress<'_> {
    fn on_epoch(&mut self, epoch: usize, mean_loss: f64, model: &Denoiser) -> tabimpute::Result<()> {
        info!("epoch {epoch}: mean loss {mean_loss:.6}");
        if self.every > 0 && epoch % self.every == 0 {
            let ck = Checkpoint {
                model: model.clone(),
                t_training: self.base.t_training,
                scaler: self.base.scaler.clone(),
                feature_names: self.base.feature_names.clone(),
                comment: self.base.comment.clone(),
            };
            ck.save(&self.out.dir.join(format!("epoch-{epoch}.ckpt")))?;
        }
        Ok(())
    }
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let s = settings(args)?;
    execute(&s)
}

pub fn execute(s: &Settings) -> CliResult<()> {
    let seed: u64 = s.get("seed")?;
    let out_dir: PathBuf = s.get("out")?;
    if s.raw("precision") != "f64" {
        return Err(CliError::usage("only precision = f64 is supported by the command line"));
    }
    let data = load_dataset(s)?;
    let (train, _) = split_dataset(&data, s.get("split")?, s.get("split_seed")?)?;
    let (scaler, x) = MinMaxScaler::fit_transform(&train.features)?;
    let arch: Architecture = s.get::<String>("arch")?.parse()?;
    let mut config = DenoiserConfig::new(arch, x.cols());
    config.blocks = s.get("blocks")?;
    config.hidden = s.get("hidden")?;
    config.embed_dim = s.get("embed_dim")?;
    config.heads = s.get("heads")?;
    config.time_tokenizer = s.get("time_tokenizer")?;
    let t_training: usize = s.get("t_training")?;
    let cfg = TrainingConfig {
        epochs: s.get("epochs")?,
        batch_size: s.get("batch_size")?,
        steps: t_training,
        lr: s.get("lr")?,
        weight_decay: s.get("weight_decay")?,
        beta_l1: s.get("beta_l1")?,
        seed: seed.wrapping_add(1),
    };
    cfg.validate()?;
    let out = Outputs::create(&out_dir, s.header(seed))?;
    out.settings(s)?;
    let mut model = Denoiser::new(config, seed)?;
    info!(
        "training {arch} ({} parameters) on {} rows x {} features",
        model.store().num_trainable(),
        x.rows(),
        x.cols()
    );
    let base = Checkpoint {
        model: model.clone(),
        t_training,
        scaler: Some(scaler),
        feature_names: train.feature_names.clone(),
        comment: Some(out.header.clone()),
    };
    let mut progress = Progress {
        out: &out,
        every: s.get("checkpoint_every")?,
        base: &base,
    };
    let history = train_with_observer(&mut model, &x, &cfg, &mut progress)?;
    let ck = Checkpoint { model, ..base };
    let path = out.dir.join("model.ckpt");
    ck.save(&path)?;
    write_with_header(&out.dir.join("loss.csv"), &out.header, &history.to_csv())?;
    info!("wrote {}", path.display());
    Ok(())
}
