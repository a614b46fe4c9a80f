mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use blockcodec::eval::{evaluate_dataset, list_images};
use blockcodec::imageio::{read_ppm, write_ppm, RgbImage};
use blockcodec::models::{DeblockNet, DEFAULT_DEBLOCK_WIDTHS};
use blockcodec::nn::gradcheck::{run_suite, DEFAULT_STEP, DEFAULT_TOLERANCE};
use blockcodec::nn::Checkpoint;
use blockcodec::pipeline::{decode_image, encode_image};
use blockcodec::synth::synthetic_set;
use blockcodec::training::{
    alternate_train, decoder_finetune, expert_finetune, extract_blocks, partition_blocks_by_difficulty,
    train_deblocker, trainer_checkpoint_path, BlockDataset, DifficultyPartition, PairTrainer,
};
use blockcodec::NetworkFamily;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{CommonFlags, Settings};

#[derive(Parser)]
#[command(
    name = "blockcodec",
    version,
    about = "Block-based variable-rate learned image codec"
)]
struct Cli {
    #[command(flatten)]
    common: CommonFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Alternate-train the three networks (resumes from per-network checkpoints)
    Train {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Assign training blocks to networks by difficulty; writes partition.txt
    Partition {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        family: PathBuf,
    },
    /// Fine-tune each network on its own partition subset
    FinetuneExperts {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fine-tune each decoder on its own subset with real binarization
    FinetuneDecoders {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the deblocking filter on codec reconstructions
    TrainDeblocker {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Encode a PPM image into a .ntc container
    Encode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        family: PathBuf,
        /// Also write the key=value encode report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decode a .ntc container into a PPM image
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        family: PathBuf,
    },
    /// Encode and decode every PPM in a directory; writes eval.txt and eval.kv
    Eval {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        family: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of every layer; nonzero exit on failure
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Write deterministic synthetic PPM images
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_images(dir: &Path) -> Result<Vec<RgbImage>> {
    let mut images = Vec::new();
    for path in list_images(dir).with_context(|| format!("listing {}", dir.display()))? {
        match read_ppm(&path) {
            Ok(img) => images.push(img),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if images.is_empty() {
        bail!("no readable .ppm images in {}", dir.display());
    }
    Ok(images)
}

fn load_blocks(dir: &Path, s: &Settings) -> Result<BlockDataset> {
    let data = extract_blocks(&load_images(dir)?, s.stride())?;
    log::info!("{} blocks from {}", data.len(), dir.display());
    Ok(data)
}

fn load_family(dir: &Path) -> Result<NetworkFamily> {
    NetworkFamily::load(dir).with_context(|| format!("loading family from {}", dir.display()))
}

fn partition_path(family: &Path) -> PathBuf {
    family.join("partition.txt")
}

/// The partition written by `partition`, or a fresh one when absent.
fn current_partition(
    family_dir: &Path,
    family: &NetworkFamily,
    data: &BlockDataset,
    target: f64,
) -> Result<DifficultyPartition> {
    let path = partition_path(family_dir);
    if path.exists() {
        let p = DifficultyPartition::from_text(&std::fs::read_to_string(&path)?)?;
        if p.len() != data.len() {
            bail!(
                "{} covers {} blocks, dataset has {}",
                path.display(),
                p.len(),
                data.len()
            );
        }
        return Ok(p);
    }
    Ok(partition_blocks_by_difficulty(family, data, target)?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let s = Settings::resolve(&cli.common)?;
    match cli.command {
        Command::Train { images, family, epochs } => {
            let cfg = s.train(epochs);
            let data = load_blocks(&images, &s)?;
            let mut fam = if family.join("family.toml").exists() {
                load_family(&family)?
            } else {
                NetworkFamily::new(s.width_mult, s.seed)
            };
            fam.target_psnr = cfg.target_psnr;
            std::fs::create_dir_all(&family)?;
            for (i, pair) in fam.pairs.iter_mut().enumerate() {
                let ckpt = trainer_checkpoint_path(&family, i);
                let mut trainer = PairTrainer::new(pair.clone(), &cfg);
                if ckpt.exists() {
                    trainer.load_checkpoint(&Checkpoint::load(&ckpt)?)?;
                    log::info!("network {i}: resuming after epoch {}", trainer.epochs_done);
                }
                for e in alternate_train(&mut trainer, &data, &cfg, Some(&ckpt))? {
                    log::info!(
                        "network {i} epoch {}: e2e loss {:.6}, decoder mse {:.6}",
                        e.epoch,
                        e.end_to_end.loss,
                        e.decoder.mse
                    );
                }
                *pair = trainer.pair;
            }
            println!("{}", fam.save(&family)?.display());
        }
        Command::Partition { images, family } => {
            let fam = load_family(&family)?;
            let target = s.target_psnr.unwrap_or(fam.target_psnr);
            let data = load_blocks(&images, &s)?;
            let p = partition_blocks_by_difficulty(&fam, &data, target)?;
            std::fs::write(partition_path(&family), p.to_text())?;
            println!(
                "target_psnr={target}\nblocks_net0={}\nblocks_net1={}\nblocks_net2={}",
                p.sets[0].len(),
                p.sets[1].len(),
                p.sets[2].len()
            );
        }
        Command::FinetuneExperts { images, family, epochs } => {
            let mut fam = load_family(&family)?;
            let cfg = s.train(epochs);
            let data = load_blocks(&images, &s)?;
            let p = current_partition(&family, &fam, &data, s.target_psnr.unwrap_or(fam.target_psnr))?;
            for (i, log) in expert_finetune(&mut fam, &data, &p, &cfg)?.iter().enumerate() {
                if let Some(last) = log.last() {
                    log::info!("expert {i}: final e2e loss {:.6}", last.end_to_end.loss);
                }
            }
            fam.save(&family)?;
        }
        Command::FinetuneDecoders { images, family, epochs } => {
            let mut fam = load_family(&family)?;
            let cfg = s.train(epochs);
            let data = load_blocks(&images, &s)?;
            let p = current_partition(&family, &fam, &data, s.target_psnr.unwrap_or(fam.target_psnr))?;
            for (i, log) in decoder_finetune(&mut fam, &data, &p, &cfg)?.iter().enumerate() {
                if let Some(last) = log.last() {
                    log::info!("decoder {i}: final mse {:.6}", last.mse);
                }
            }
            fam.save(&family)?;
        }
        Command::TrainDeblocker { images, family, epochs } => {
            let mut fam = load_family(&family)?;
            let cfg = s.train(epochs);
            let codec = s.codec(fam.target_psnr);
            let imgs = load_images(&images)?;
            let mut net = fam
                .deblocker
                .take()
                .unwrap_or_else(|| DeblockNet::new(DEFAULT_DEBLOCK_WIDTHS, &mut ChaCha8Rng::seed_from_u64(s.seed)));
            let history = train_deblocker(&mut net, &fam, &imgs, &cfg, &codec)?;
            for (e, mse) in history.iter().enumerate() {
                log::info!("deblocker epoch {}: mse {mse:.6}", e + 1);
            }
            fam.deblocker = Some(net);
            fam.save(&family)?;
        }
        Command::Encode {
            input,
            output,
            family,
            report,
        } => {
            let fam = load_family(&family)?;
            let img = read_ppm(&input).with_context(|| format!("reading {}", input.display()))?;
            let out = encode_image(&img, &fam, &s.codec(fam.target_psnr))?;
            std::fs::write(&output, &out.bytes).with_context(|| format!("writing {}", output.display()))?;
            let kv = out.report.to_kv();
            if let Some(path) = report {
                std::fs::write(path, &kv)?;
            }
            print!("{kv}");
        }
        Command::Decode { input, output, family } => {
            let fam = load_family(&family)?;
            let bytes = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let img = decode_image(&bytes, &fam, &s.codec(fam.target_psnr))?;
            write_ppm(&output, &img).with_context(|| format!("writing {}", output.display()))?;
        }
        Command::Eval { images, family, out } => {
            let fam = load_family(&family)?;
            let report = evaluate_dataset(&images, &fam, &s.codec(fam.target_psnr))?;
            report.write(&out)?;
            print!("{}", report.to_text());
        }
        Command::Gradcheck { cases, tolerance } => {
            let reports = run_suite(cases, s.seed, DEFAULT_STEP, tolerance)?;
            let mut ok = true;
            for r in &reports {
                println!(
                    "{} {:<18} cases={} max_rel_err={:.3e} tol={:.1e}",
                    if r.passed() { "ok  " } else { "FAIL" },
                    r.layer,
                    r.cases,
                    r.max_relative_error,
                    r.tolerance
                );
                ok &= r.passed();
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Synth {
            out,
            count,
            width,
            height,
        } => {
            std::fs::create_dir_all(&out)?;
            for (i, img) in synthetic_set(count, width, height, s.seed).iter().enumerate() {
                write_ppm(&out.join(format!("synth{i:03}.ppm")), img)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
