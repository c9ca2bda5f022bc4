use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dtts::corpus::cache::cache_root;
use dtts::corpus::toy::{self, ToyConfig};
use dtts::corpus::{prepare, Corpus, PrepareOptions, SplitSpec, Vocabulary};
use dtts::signal::PerturbConfig;
use dtts::targets::ssl::DEFAULT_SSL_DIM;
use dtts::targets::SslProvider;
use dtts::training::{run, Checkpoint, RunOptions, Trainer};

use crate::config::ConfigFile;
use crate::inspect::{inspect, Probes};
use crate::synth::synth;

#[derive(Debug, Parser)]
#[command(
    name = "dtts",
    version,
    about = "Decoupled cross-lingual speech synthesis"
)]
pub struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProviderMode {
    File,
    Stub,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic two-language corpus (wavs, manifest, vocabulary).
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        utterances_per_speaker: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract features and targets into a content-addressed cache.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        /// Cache directory; defaults to $DTTS_CACHE.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "stub")]
        provider: ProviderMode,
        /// Seeds the stub projection and the perturbation draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Symbol inventory; defaults to vocab.txt next to the manifest.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Directory of precomputed features for `--provider file`.
        #[arg(long)]
        ssl_dir: Option<PathBuf>,
        /// Feature width of the stub provider.
        #[arg(long, default_value_t = DEFAULT_SSL_DIM)]
        ssl_dim: usize,
    },
    /// Train from a configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Global step to stop at (overrides the config).
        #[arg(long)]
        steps: Option<u64>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Synthesize a wav and dump the model's predictions next to it.
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        /// Space-separated IPA symbols.
        #[arg(long)]
        text: String,
        #[arg(long)]
        lang: usize,
        #[arg(long)]
        spk: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature images, principal-component scatters and the
    /// disentanglement ratio over a probe grid.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Cli {
    pub fn log_level(&self) -> &'static str {
        match self.verbose {
            0 => "info",
            1 => "debug",
            _ => "trace",
        }
    }

    pub fn run(self) -> Result<()> {
        match self.command {
            Command::Toy {
                out,
                utterances_per_speaker,
                seed,
            } => {
                let cfg = ToyConfig {
                    utterances_per_speaker,
                    seed,
                    ..ToyConfig::default()
                };
                let manifest = toy::generate(&out, &cfg)?;
                println!("{}", manifest.display());
            }
            Command::Prepare {
                manifest,
                out,
                provider,
                seed,
                vocab,
                ssl_dir,
                ssl_dim,
            } => {
                let root = match out {
                    Some(p) => p,
                    None => cache_root(&manifest.with_file_name("cache")),
                };
                let vocab_path = vocab.unwrap_or_else(|| manifest.with_file_name("vocab.txt"));
                let vocab = Vocabulary::load(&vocab_path)?;
                let provider = match (provider, ssl_dir) {
                    (ProviderMode::Stub, _) => SslProvider::Stub { seed, dim: ssl_dim },
                    (ProviderMode::File, Some(dir)) => SslProvider::File { dir },
                    (ProviderMode::File, None) => bail!("--provider file needs --ssl-dir"),
                };
                let opts = PrepareOptions {
                    provider,
                    perturb: PerturbConfig {
                        seed,
                        ..PerturbConfig::default()
                    },
                    split: SplitSpec::default(),
                };
                let report = prepare(&manifest, &vocab, &root, &opts)?;
                println!(
                    "{}: {} computed, {} cached, {} failed",
                    root.display(),
                    report.computed.len(),
                    report.cached.len(),
                    report.failed.len()
                );
                for (id, err) in &report.failed {
                    eprintln!("{id}: {err}");
                }
                if !report.failed.is_empty() {
                    bail!("{} utterances failed", report.failed.len());
                }
            }
            Command::Train {
                config,
                steps,
                seed,
                resume,
            } => {
                let mut cfg = ConfigFile::load(&config)?;
                let corpus =
                    Corpus::load(&cfg.data.cache).with_context(|| match &cfg.data.manifest {
                        Some(m) => format!(
                        "loading the cache; prepare it with `dtts prepare --manifest {} --out {}`",
                        m.display(),
                        cfg.data.cache.display()
                    ),
                        None => "loading the cache".to_string(),
                    })?;
                if let Some(p) = &cfg.data.provider {
                    if *p != corpus.info.provider {
                        bail!(
                            "config expects provider {p}, cache was built with {}",
                            corpus.info.provider
                        );
                    }
                }
                let mut trainer = match resume {
                    Some(path) => {
                        let ck = Checkpoint::load(&path)?;
                        if seed.is_some_and(|s| s != ck.train.seed) {
                            bail!(
                                "--seed differs from the checkpoint's seed {}",
                                ck.train.seed
                            );
                        }
                        log::info!("resuming from {} at step {}", path.display(), ck.state.step);
                        ck.into_trainer()?
                    }
                    None => {
                        if let Some(s) = seed {
                            cfg.train.seed = s;
                        }
                        Trainer::new(cfg.train.clone(), &corpus)?
                    }
                };
                let opts = RunOptions {
                    out_dir: cfg.run.out_dir.clone(),
                    steps: steps.unwrap_or(cfg.run.steps),
                    checkpoint_every: cfg.run.checkpoint_every,
                    eval_every: cfg.run.eval_every,
                };
                let evals = run(&mut trainer, &corpus, &opts)?;
                for (split, e) in evals {
                    println!(
                        "step {} {split}: mel_l1 {} ld_pitch_acc {} ld_energy_acc {} durations_valid {}",
                        trainer.state.step, e.mel_l1, e.ld_pitch_accuracy, e.ld_energy_accuracy, e.durations_valid
                    );
                }
            }
            Command::Synth {
                ckpt,
                text,
                lang,
                spk,
                out,
            } => {
                let p = synth(&ckpt, &text, lang, spk, &out)?;
                println!(
                    "{}: {} frames, durations {:?}",
                    out.display(),
                    p.mel.rows(),
                    p.durations.0
                );
            }
            Command::Inspect { ckpt, probes, out } => {
                let s = inspect(&ckpt, &Probes::load(&probes)?, &out)?;
                println!(
                    "rho {} (LD {} / SD {}); speaker swap: SD change {} vs LD change {} (ratio {})",
                    s.rho,
                    s.ld_between,
                    s.sd_between,
                    s.sd_swap_change,
                    s.ld_swap_change,
                    s.swap_ratio
                );
            }
        }
        Ok(())
    }
}
