use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shapetext::pipeline::{gen_synthetic, train_model, Dataset, ExperimentConfig, LoadedModel, Split, TrainOptions};

#[derive(Parser)]
#[command(name = "shapetext", version, about = "Text-to-shape retrieval on point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic furniture dataset.
    GenSynthetic {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        shapes: usize,
        #[arg(long)]
        captions_per_shape: usize,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dump_triplets: Option<PathBuf>,
    },
    /// Report retrieval metrics on a split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        json: bool,
    },
    /// Rank gallery shapes for one caption.
    Retrieve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Defaults to the dataset the checkpoint was trained on.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Print a checkpoint's config, seed and parameter shapes.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn run(cli: Cli) -> shapetext::Result<()> {
    match cli.command {
        Command::GenSynthetic {
            seed,
            shapes,
            captions_per_shape,
            points,
            out,
        } => {
            let d = gen_synthetic(&out, seed, shapes, captions_per_shape, points)?;
            println!("wrote {} shapes and {} captions to {}", d.num_shapes(), d.captions.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            dump_triplets,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (loaded, outcome) = train_model(&cfg, &data, &TrainOptions { dump_triplets })?;
            loaded.save(&out)?;
            let last = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!("trained {} epochs, final loss {last:.6}, checkpoint {}", cfg.epochs, out.display());
        }
        Command::Eval { ckpt, data, split, json } => {
            let loaded = LoadedModel::load(&ckpt)?;
            let report = loaded.evaluate(&Dataset::load(&data)?, split)?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Retrieve {
            ckpt,
            text,
            k,
            data,
            split,
        } => {
            let loaded = LoadedModel::load(&ckpt)?;
            let dir = data.or_else(|| loaded.data_dir.clone()).ok_or_else(|| {
                shapetext::Error::InvalidArgument("checkpoint records no dataset; pass --data".into())
            })?;
            for (rank, (id, score)) in loaded.retrieve(&Dataset::load(&dir)?, split, &text, k)?.iter().enumerate() {
                println!("{:>3}  {id}  {score:.6}", rank + 1);
            }
        }
        Command::Inspect { ckpt } => print!("{}", LoadedModel::load(&ckpt)?.describe()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
