use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jiif::data::{DatasetName, Split, SyntheticSpec};
use jiif::evaluation::unit_label;
use jiif::jiif_decoder::{DecoderMode, WeightStrategy};
use jiif::run::{
    prepare_nyu_npy, prepare_synthetic, resolve_config, run_ablate, run_demo, run_eval, run_infer, run_train,
    EvalSource, Overrides,
};
use jiif::{DType, JiifError};

#[derive(Parser, Debug)]
#[command(name = "jiif", version, about = "RGB-guided depth super-resolution with a joint implicit image function")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a dataset in the on-disk layout expected by train/eval.
    #[command(subcommand)]
    PrepareData(Prepare),
    /// Train a model; checkpoints go to <output-dir>/<name>/.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from a checkpoint file or run directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report per-image and average RMSE on a test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint file or run directory (uses its `latest`).
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        /// Evaluate a non-learned baseline instead of a checkpoint.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Train and evaluate every ablation variant at the training scale.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Super-resolve one LR depth PNG guided by an HR RGB PNG.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lr_depth: PathBuf,
        #[arg(long)]
        guide: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Queries decoded per batch.
        #[arg(long, default_value_t = 30720)]
        chunk: usize,
    },
    /// Short end-to-end run on synthetic scenes.
    Demo {
        #[arg(long, default_value = "runs")]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
    },
}

#[derive(Subcommand, Debug)]
enum Prepare {
    /// Procedural RGB-D scenes.
    Synth {
        #[arg(long, default_value = "data")]
        root: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Height and width of each scene.
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// NumPy arrays of the labeled NYU release: (N,H,W,3) u8 RGB and (N,H,W) depth in meters.
    NyuNpy {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        depths: PathBuf,
        #[arg(long, default_value = "data")]
        root: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Baseline {
    Bicubic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

/// Run settings. Precedence: built-in defaults < --config file < flags.
#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run name [default: default]
    #[arg(long)]
    name: Option<String>,
    /// [default: runs]
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// [default: data]
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// nyu_v2, middlebury, middlebury_noisy, lu or synthetic [default: nyu_v2]
    #[arg(long)]
    dataset: Option<DatasetName>,
    /// [default: f32]
    #[arg(long, value_enum)]
    dtype: Option<Precision>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: 200]
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate [default: 1e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// Training upsampling factor [default: 8]
    #[arg(long)]
    scale: Option<usize>,
    /// Noise level added to training inputs [default: 0]
    #[arg(long)]
    train_noise_sigma: Option<f64>,
    /// HR training patch side [default: 256]
    #[arg(long)]
    patch_size: Option<usize>,
    /// Query pixels per patch [default: 30720]
    #[arg(long)]
    samples: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Decoder input layout: joint, separate or value_only [default: joint]
    #[arg(long)]
    mode: Option<DecoderMode>,
    /// Interpolation weights: graph_attention, bilinear or direct_regression [default: graph_attention]
    #[arg(long)]
    strategy: Option<WeightStrategy>,
    /// Predict depth directly instead of a residual over bicubic.
    #[arg(long)]
    no_residual: bool,
    /// Latent code channels [default: 128]
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Residual blocks per encoder [default: 16]
    #[arg(long)]
    residual_blocks: Option<usize>,
    /// Decoder hidden widths [default: 1024,512,256,128]
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Test dataset [default: training dataset]
    #[arg(long)]
    eval_dataset: Option<DatasetName>,
    /// Evaluation factors [default: 4,8,16]
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    /// Evaluation noise level [default: dataset standard, 651 for middlebury_noisy]
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Border pixels excluded from RMSE [default: 0]
    #[arg(long)]
    crop: Option<usize>,
    /// Write error maps and predictions as PNGs.
    #[arg(long)]
    save_maps: bool,
    /// Synthetic scenes generated when no files exist [default: 8]
    #[arg(long)]
    synthetic_count: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    synthetic_seed: Option<u64>,
    /// [default: 256]
    #[arg(long)]
    synthetic_size: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            name: self.name.clone(),
            output_dir: self.output_dir.clone(),
            data_root: self.data_root.clone(),
            dataset: self.dataset,
            dtype: self.dtype.map(|d| match d {
                Precision::F32 => DType::F32,
                Precision::F64 => DType::F64,
            }),
            seed: self.seed,
            epochs: self.epochs,
            lr: self.lr,
            scale: self.scale,
            train_noise_sigma: self.train_noise_sigma,
            patch_size: self.patch_size,
            samples: self.samples,
            checkpoint_every: self.checkpoint_every,
            mode: self.mode,
            strategy: self.strategy,
            no_residual: self.no_residual,
            feature_dim: self.feature_dim,
            num_residual_blocks: self.residual_blocks,
            hidden_dims: self.hidden.clone(),
            eval_dataset: self.eval_dataset,
            scales: self.scales.clone(),
            noise_sigma: self.noise_sigma,
            crop: self.crop,
            save_maps: self.save_maps,
            synthetic_count: self.synthetic_count,
            synthetic_seed: self.synthetic_seed,
            synthetic_size: self.synthetic_size,
        }
    }

    fn resolve(&self) -> jiif::Result<jiif::run::RunConfig> {
        resolve_config(self.config.as_deref(), &self.overrides())
    }
}

fn execute(cmd: Command) -> jiif::Result<()> {
    match cmd {
        Command::PrepareData(Prepare::Synth { root, split, count, seed, size }) => {
            let spec = SyntheticSpec {
                count,
                seed,
                height: size,
                width: size,
            };
            let dir = prepare_synthetic(&root, split, &spec)?;
            println!("wrote {count} pairs to {}", dir.display());
        }
        Command::PrepareData(Prepare::NyuNpy { images, depths, root }) => {
            let (train, test) = prepare_nyu_npy(&images, &depths, &root)?;
            println!("wrote {train} train and {test} test pairs under {}", root.display());
        }
        Command::Train { run, resume } => {
            let cfg = run.resolve()?;
            let s = run_train(&cfg, resume.as_deref())?;
            println!(
                "trained {} epochs ({} steps); final checkpoint {}",
                s.epochs,
                s.steps,
                s.final_checkpoint.display()
            );
        }
        Command::Eval { run, checkpoint, baseline } => {
            let cfg = run.resolve()?;
            let source = match (checkpoint, baseline) {
                (Some(p), _) => EvalSource::Checkpoint(p),
                (None, Some(Baseline::Bicubic)) => EvalSource::Bicubic,
                (None, None) => return Err(JiifError::config("checkpoint", "pass --checkpoint or --baseline")),
            };
            let (report, path) = run_eval(&cfg, &source)?;
            print!("{}", report.render_table());
            println!("report: {}", path.display());
        }
        Command::Ablate { run } => {
            let cfg = run.resolve()?;
            let (report, path) = run_ablate(&cfg)?;
            print!("{}", report.render());
            println!("report: {}", path.display());
        }
        Command::Infer { checkpoint, lr_depth, guide, output, chunk } => {
            let (h, w) = run_infer(&checkpoint, &lr_depth, &guide, &output, chunk)?;
            println!("wrote {h}x{w} prediction to {}", output.display());
        }
        Command::Demo { output_dir, seed, epochs } => {
            let s = run_demo(&output_dir, seed, epochs)?;
            let unit = unit_label(jiif::data::ValueKind::Depth);
            for r in [&s.bicubic, &s.model] {
                for scale in &r.scales {
                    println!("{:<28} x{:<3} RMSE {:.4} {unit}", r.method, scale.scale, scale.average());
                }
            }
            println!("outputs in {}", display(&s.run_dir));
        }
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
