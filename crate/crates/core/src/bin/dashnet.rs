use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dashnet::commands::{self, Checkpoints, EvalInputs, TrainKind};
use dashnet::config::RunConfig;
use dashnet::Result;

#[derive(Parser)]
#[command(name = "dashnet", version, about = "Hybrid frame/event object tracking")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override `key.path=value`; repeatable, applied in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; wins over the config file and DASH_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic moving-object video with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate a video and convert it to events plus frames.
    Simulate {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frames inserted between each input pair (0, 1, 3, 7, ...).
        #[arg(long)]
        factor: Option<usize>,
    },
    /// Train a network or interpolation kernel.
    Train {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Data directories; repeatable.
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the hybrid tracker on a bundle.
    Track {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        ck: CkArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score trajectories against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        snn: PathBuf,
        #[arg(long)]
        ann_nat: Option<PathBuf>,
        /// Bundle for operation counts; needs both checkpoints.
        #[arg(long, requires_all = ["snn_ck", "ann_ck"])]
        bundle: Option<PathBuf>,
        #[arg(long)]
        snn_ck: Option<PathBuf>,
        #[arg(long)]
        ann_ck: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CkArgs {
    #[arg(long)]
    snn_ck: PathBuf,
    /// Frame network fused with the spiking one.
    #[arg(long)]
    ann_ck: PathBuf,
    /// Frame network without attention, run on its own.
    #[arg(long)]
    ann_nat_ck: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Ann,
    Snn,
    Interp,
}

fn execute(cli: Cli) -> Result<Vec<String>> {
    let mut overrides = cli.common.overrides;
    match &cli.command {
        Command::Simulate { factor: Some(f), .. } => overrides.push(format!("interp.factor={f}")),
        Command::Train { epochs: Some(e), .. } => overrides.push(format!("train.epochs={e}")),
        _ => {}
    }
    let cfg = RunConfig::load(cli.common.config.as_deref(), &overrides, cli.common.seed)?;
    println!("{}", cfg.header());
    match cli.command {
        Command::Synth { out } => commands::synth(&cfg, &out),
        Command::Simulate { video, out, .. } => commands::simulate_video(&cfg, &video, &out),
        Command::Train { kind, data, out, .. } => {
            let kind = match kind {
                Kind::Ann => TrainKind::Ann,
                Kind::Snn => TrainKind::Snn,
                Kind::Interp => TrainKind::Interp,
            };
            commands::train(&cfg, kind, &data, &out)
        }
        Command::Track { bundle, ck, out } => {
            let ck = Checkpoints {
                snn: ck.snn_ck,
                ann: ck.ann_ck,
                ann_nat: ck.ann_nat_ck,
            };
            commands::track(&cfg, &bundle, &ck, &out)
        }
        Command::Eval {
            gt,
            fused,
            ann,
            snn,
            ann_nat,
            bundle,
            snn_ck,
            ann_ck,
            out,
        } => {
            let ops = match (bundle, snn_ck, ann_ck) {
                (Some(b), Some(s), Some(a)) => Some((
                    b,
                    Checkpoints {
                        snn: s,
                        ann: a,
                        ann_nat: None,
                    },
                )),
                _ => None,
            };
            let inputs = EvalInputs {
                gt,
                fused,
                ann,
                snn,
                ann_nat,
                ops,
            };
            commands::eval(&cfg, &inputs, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
