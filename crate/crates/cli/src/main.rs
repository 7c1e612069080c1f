//! `lvunet`: parameter/MAC counts, train→deploy fusion, inference,
//! equivalence checks, mask scoring and slope schedules.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 verification failure. Results go to stdout, diagnostics to stderr.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lvunet::backbone::BackbonePrefix;
use lvunet::init::WeightInit;
use lvunet::io::{normalize, read_image_rgb, read_pgm_mask, write_pgm_mask, WeightContainer};
use lvunet::metrics::{dice_score, iou, BinaryMask, DEFAULT_THRESHOLD};
use lvunet::schedule::{ScheduleMethod, ScheduleSpec};
use lvunet::{count_flops, count_params, to_deploy, Combination, InitKind, LvUnet, Mode, ModelConfig, SkipMode};

#[derive(Parser)]
#[command(name = "lvunet", version, about = "LV-UNet inference engine and re-parametrization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Kv,
}

#[derive(clap::Args)]
struct Arch {
    #[arg(long, default_value = "II")]
    combination: Combination,
    /// Series activation radius n (window 2n+1).
    #[arg(long, default_value_t = 1)]
    series: usize,
    #[arg(long, default_value_t = 1)]
    classes: usize,
    #[arg(long, default_value = "add")]
    skip: SkipMode,
}

impl Arch {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            combination: self.combination,
            series_n: self.series,
            num_classes: self.classes,
            skip_mode: self.skip,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print parameter and multiply-accumulate counts.
    Count {
        #[command(flatten)]
        arch: Arch,
        #[arg(long, default_value = "train")]
        mode: Mode,
        /// Square input side.
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Write a container with seeded random weights (train mode).
    Init {
        #[command(flatten)]
        arch: Arch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Take the backbone prefix from this container instead of random weights.
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse a train-mode container into deploy form.
    Deploy {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Expected combination; checked against the container.
        #[arg(long)]
        combination: Option<Combination>,
        /// Expected series radius; checked against the container.
        #[arg(long)]
        series: Option<usize>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Segment one image.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        /// Defaults to the container's mode; `deploy` on train weights fuses first.
        #[arg(long)]
        mode: Option<Mode>,
        /// Leaky ReLU slope for train-mode blocks.
        #[arg(long, default_value_t = 1.0)]
        slope: f32,
        /// Binary PPM or PGM; sides must be divisible by the model's input divisor.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Foreground where sigmoid(logit) ≥ threshold.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f32,
    },
    /// Check train(a=1) against deploy logits.
    Verify {
        #[command(flatten)]
        arch: Arch,
        /// Number of random seeds, or random inputs when comparing containers.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f32,
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// Train-mode container to compare instead of random models.
        #[arg(long, requires = "deployed")]
        weights: Option<PathBuf>,
        /// Deploy-mode container paired with `--weights`.
        #[arg(long, requires = "weights")]
        deployed: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Score a predicted mask against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Print the leaky slope a(e), or the whole table.
    Schedule {
        #[arg(long)]
        epochs: u32,
        #[arg(long, default_value = "cosine")]
        method: ScheduleMethod,
        #[arg(long)]
        epoch: Option<u32>,
    },
}

enum Failure {
    Data(lvunet::Error),
    Verify(String),
}

impl From<lvunet::Error> for Failure {
    fn from(e: lvunet::Error) -> Self {
        Self::Data(e)
    }
}

type Outcome = Result<String, Failure>;

fn data_err(msg: impl Into<String>) -> Failure {
    Failure::Data(lvunet::Error::InvalidArgument(msg.into()))
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
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Verify(report)) => {
            print!("{report}");
            eprintln!("verification failed");
            ExitCode::from(3)
        }
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Count { arch, mode, size, format } => count(&arch, mode, size, format),
        Command::Init { arch, seed, backbone, out } => init(&arch, seed, backbone, out),
        Command::Deploy { weights, out, combination, series, format } => {
            deploy(weights, out, combination, series, format)
        }
        Command::Infer { weights, mode, slope, image, out, threshold } => {
            infer(weights, mode, slope, image, out, threshold)
        }
        Command::Verify { arch, seeds, tolerance, size, weights, deployed, format } => {
            let pair = weights.zip(deployed);
            verify(&arch, seeds, tolerance, size, pair, format)
        }
        Command::Eval { pred, truth, format } => eval(pred, truth, format),
        Command::Schedule { epochs, method, epoch } => schedule(epochs, method, epoch),
    }
}

fn count(arch: &Arch, mode: Mode, size: usize, format: Format) -> Outcome {
    let mut model = LvUnet::build(arch.config(), InitKind::Zeros)?;
    if mode == Mode::Deploy {
        model = to_deploy(&model)?.0;
    }
    let params = count_params(&model);
    let macs = count_flops(&model, size, size)?;
    let mut s = String::new();
    match format {
        Format::Kv => {
            writeln!(s, "params={}", params.total).unwrap();
            writeln!(s, "flops={}", macs.total).unwrap();
            for (k, v) in &params.breakdown.parts {
                writeln!(s, "params.{k}={v}").unwrap();
            }
            for (k, v) in &macs.parts {
                writeln!(s, "flops.{k}={v}").unwrap();
            }
        }
        Format::Text => {
            writeln!(s, "combination {} ({mode}), n={}, {size}x{size}", arch.combination, arch.series).unwrap();
            writeln!(s, "params: {} ({:.3}M)", params.total, params.total as f64 / 1e6).unwrap();
            writeln!(s, "flops:  {} ({:.3}G MACs)", macs.total, macs.total as f64 / 1e9).unwrap();
            writeln!(s, "parameters by module:\n{}", params.breakdown).unwrap();
            write!(s, "MACs by module:\n{macs}").unwrap();
        }
    }
    Ok(s)
}

fn init(arch: &Arch, seed: u64, backbone: Option<PathBuf>, out: PathBuf) -> Outcome {
    let config = arch.config();
    let model = match backbone {
        Some(path) => {
            let store = WeightContainer::read(path)?;
            let bb = BackbonePrefix::load(&store, config.combination.last_block())?;
            LvUnet::with_backbone(config, bb, InitKind::Random(seed))?
        }
        None => LvUnet::build(config, InitKind::Random(seed))?,
    };
    model.to_container().write(&out)?;
    Ok(format!("wrote {} ({} parameters, train mode)\n", out.display(), count_params(&model).total))
}

fn load(path: &PathBuf) -> Result<LvUnet, Failure> {
    Ok(LvUnet::from_container(&WeightContainer::read(path)?)?)
}

fn deploy(
    weights: PathBuf,
    out: PathBuf,
    combination: Option<Combination>,
    series: Option<usize>,
    format: Format,
) -> Outcome {
    let model = load(&weights)?;
    if combination.is_some_and(|c| c != model.config.combination) {
        return Err(data_err(format!("container holds combination {}", model.config.combination)));
    }
    if series.is_some_and(|n| n != model.config.series_n) {
        return Err(data_err(format!("container holds series radius {}", model.config.series_n)));
    }
    let (fused, report) = to_deploy(&model)?;
    fused.to_container().write(&out)?;
    Ok(match format {
        Format::Kv => report.to_kv(),
        Format::Text => format!("{report}wrote {}\n", out.display()),
    })
}

fn infer(weights: PathBuf, mode: Option<Mode>, slope: f32, image: PathBuf, out: PathBuf, threshold: f32) -> Outcome {
    let mut model = load(&weights)?;
    match (model.mode(), mode) {
        (Mode::Train, Some(Mode::Deploy)) => model = to_deploy(&model)?.0,
        (Mode::Deploy, Some(Mode::Train)) => {
            return Err(Failure::Data(lvunet::Error::InvalidState(
                "deploy-mode weights cannot run in train mode".into(),
            )))
        }
        _ => {}
    }
    let x = normalize(&read_image_rgb(&image)?)?;
    let div = model.input_divisor();
    if x.height() % div != 0 || x.width() % div != 0 {
        return Err(data_err(format!(
            "image is {}x{}; both sides must be divisible by {div} (resize it first)",
            x.width(),
            x.height()
        )));
    }
    let logits = model.forward(&x, slope)?;
    let mask = BinaryMask::from_logits(&logits, threshold);
    write_pgm_mask(&mask, &out)?;
    Ok(format!(
        "wrote {} ({}x{}, {} foreground pixels)\n",
        out.display(),
        mask.width(),
        mask.height(),
        mask.count()
    ))
}

const INPUT_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

fn verify(
    arch: &Arch,
    seeds: u64,
    tolerance: f32,
    size: usize,
    pair: Option<(PathBuf, PathBuf)>,
    format: Format,
) -> Outcome {
    if seeds == 0 {
        return Err(data_err("--seeds must be positive"));
    }
    let fixed = match pair {
        Some((w, d)) => {
            let (train, deployed) = (load(&w)?, load(&d)?);
            if train.mode() != Mode::Train || deployed.mode() != Mode::Deploy {
                return Err(data_err("--weights must be train mode and --deployed deploy mode"));
            }
            if train.config != deployed.config {
                return Err(data_err("containers describe different architectures"));
            }
            Some((train, deployed))
        }
        None => None,
    };
    let mut gaps = Vec::new();
    for seed in 0..seeds {
        let owned;
        let (train, deployed) = match &fixed {
            Some((t, d)) => (t, d),
            None => {
                let t = LvUnet::build(arch.config(), InitKind::Random(seed))?;
                let d = to_deploy(&t)?.0;
                owned = (t, d);
                (&owned.0, &owned.1)
            }
        };
        let x = WeightInit::seeded(seed ^ INPUT_SEED_MIX).uniform_tensor([1, 3, size, size], 0.0, 1.0);
        let a = train.forward(&x, 1.0)?;
        let b = deployed.forward(&x, 1.0)?;
        gaps.push(a.max_abs_diff(&b).expect("same architecture"));
    }
    let worst = gaps.iter().copied().fold(0.0f32, f32::max);
    let pass = worst <= tolerance;
    let mut s = String::new();
    match format {
        Format::Kv => {
            for (i, g) in gaps.iter().enumerate() {
                writeln!(s, "seed.{i}.max_abs_diff={g:e}").unwrap();
            }
            writeln!(s, "max_abs_diff={worst:e}\ntolerance={tolerance:e}\npass={pass}").unwrap();
        }
        Format::Text => {
            for (i, g) in gaps.iter().enumerate() {
                writeln!(s, "seed {i}: max |dlogit| = {g:.3e}").unwrap();
            }
            let verdict = if pass { "PASS" } else { "FAIL" };
            writeln!(s, "{verdict}: worst {worst:.3e} vs tolerance {tolerance:.3e}").unwrap();
        }
    }
    if pass {
        Ok(s)
    } else {
        Err(Failure::Verify(s))
    }
}

fn eval(pred: PathBuf, truth: PathBuf, format: Format) -> Outcome {
    let (p, t) = (read_pgm_mask(pred)?, read_pgm_mask(truth)?);
    let (i, d) = (iou(&p, &t)?, dice_score(&p, &t)?);
    Ok(match format {
        Format::Kv => format!("iou={i}\ndice={d}\n"),
        Format::Text => format!("IoU:  {i:.4}\nDice: {d:.4}\n"),
    })
}

fn schedule(epochs: u32, method: ScheduleMethod, epoch: Option<u32>) -> Outcome {
    let spec = ScheduleSpec::new(method, epochs)?;
    Ok(match epoch {
        Some(e) => format!("{:.6}\n", spec.slope(e)?),
        None => spec.table().iter().map(|(e, a)| format!("{e}\t{a:.6}\n")).collect(),
    })
}
