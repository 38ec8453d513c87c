//! Command-line workflows: synthetic corpus generation, spectrum analytics,
//! parser training, parsing, blending, gradient checks, parameter sweeps and
//! artifact validation.

pub mod commands;
pub mod config;
pub mod error;
pub mod imageio;
pub mod tensorfile;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::*;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use tensorfile::TensorFile;

#[derive(Debug, Parser)]
#[command(name = "freqblend", version, about = "Frequency-domain face blending toolkit")]
pub struct Cli {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the default configuration as JSON.
    Defaults,
    /// Generate a synthetic corpus of real scenes and self-blended fakes.
    Corpus {
        /// Output directory [default: paths.corpus_dir].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Images per class, overriding corpus.n.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Azimuthal spectrum profiles of two image directories.
    Spectrum {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        /// Bin count, overriding analytics.bins.
        #[arg(long)]
        bins: Option<usize>,
        /// Output prefix for the CSV and heatmap files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the frequency parser on a corpus directory.
    Train {
        /// Corpus directory [default: paths.corpus_dir].
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output checkpoint [default: paths.checkpoint].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss log CSV [default: the checkpoint path with a .csv extension].
        #[arg(long)]
        log: Option<PathBuf>,
        /// Reuse the scorer stored in this checkpoint instead of fitting one.
        #[arg(long)]
        scorer: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write the three distribution maps and components of one image.
    Parse {
        /// Checkpoint [default: paths.checkpoint].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Blend the structural band of a fake into a real image.
    Blend(BlendArgs),
    /// Check analytic gradients of every loss against finite differences.
    Gradcheck {
        /// Perturb this group's analytic gradient (self-test of the checker).
        #[arg(long, hide = true)]
        corrupt_group: Option<String>,
    },
    /// Retrain or re-augment for each value of a parameter.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        /// λ sets as `a,b,c,d` or α values; one per argument.
        #[arg(required = true)]
        values: Vec<String>,
        /// Corpus directory [default: paths.corpus_dir].
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify the format of tensor files, checkpoints, PNGs, configs and CSVs.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("fake_side").required(true).args(["fake", "spfake", "augment"])))]
#[command(group(clap::ArgGroup::new("maps").required(true).args(["checkpoint", "priors"])))]
pub struct BlendArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub fake: Option<PathBuf>,
    /// Self-blend the real image and use that as the fake.
    #[arg(long)]
    pub spfake: bool,
    /// Apply the augmentation policy: self-blend, then frequency blend with
    /// probability α.
    #[arg(long)]
    pub augment: bool,
    /// α for --augment, overriding blend.alpha.
    #[arg(long, requires = "augment")]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use the fixed prior band masks instead of a trained parser.
    #[arg(long)]
    pub priors: bool,
    /// Rescale the maps to sum to one at every position.
    #[arg(long)]
    pub force_normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn fmt_terms(t: &freqblend::objectives::LossTerms<f64>) -> String {
    format!(
        "L_ff {:.6e}  L_ad {:.6}  L_qa {:.6}  L_pi {:.6}  total {:.6}",
        t.ff, t.ad, t.qa, t.pi, t.total
    )
}

/// Executes a parsed command line, printing results to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Defaults => println!("{}", RunConfig::default().to_json()),
        Command::Corpus { out, n } => {
            if let Some(n) = n {
                cfg.corpus.n = n;
                cfg.validate()?;
            }
            let dir = out.unwrap_or_else(|| cfg.paths.corpus_dir.clone());
            let s = cmd_corpus(&cfg, &dir)?;
            println!("wrote {} real and {} spfake images; manifest {}", s.images_per_class, s.images_per_class, s.manifest.display());
        }
        Command::Spectrum { real, fake, bins, out } => {
            let r = cmd_spectrum(&real, &fake, bins.or(cfg.analytics.bins), &out)?;
            if let Some(w) = &r.warning {
                eprintln!("warning: {w}");
            }
            println!("bins {}; largest |fake − real| in bin {}", r.n_bins, r.argmax_raw);
            for p in [&r.profiles_csv, &r.heatmap_tensor, &r.heatmap_png] {
                println!("wrote {}", p.display());
            }
        }
        Command::Train { corpus, out, log, scorer, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let corpus = corpus.unwrap_or_else(|| cfg.paths.corpus_dir.clone());
            let out = out.unwrap_or_else(|| cfg.paths.checkpoint.clone());
            let s = cmd_train(&cfg, &corpus, &out, log.as_deref(), scorer.as_deref())?;
            println!("scorer training AUC {:.4}", s.scorer_train_auc);
            println!("initial  {}  integrity {:.4}", fmt_terms(&s.initial.terms), s.initial.integrity_residual);
            println!("final    {}  integrity {:.4}", fmt_terms(&s.final_eval.terms), s.final_eval.integrity_residual);
            println!("{} epochs; checkpoint {}; log {}", s.epochs_run, s.checkpoint.display(), s.log.display());
        }
        Command::Parse { checkpoint, image, out } => {
            let ck = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
            let r = cmd_parse(&ck, &image, &out)?;
            println!("integrity residual {:.6}; mean map sum {:.6}", r.integrity_residual, r.sum_mean);
            for p in &r.files {
                println!("wrote {}", p.display());
            }
        }
        Command::Blend(a) => {
            let fake = match (a.fake, a.spfake, a.augment) {
                (Some(p), _, _) => FakeInput::File(p),
                (_, true, _) => FakeInput::SpFake,
                _ => FakeInput::Augment {
                    alpha: a.alpha.unwrap_or(cfg.blend.alpha),
                },
            };
            let triples = match a.checkpoint {
                Some(p) => TripleChoice::Checkpoint(p),
                None => TripleChoice::Priors,
            };
            let req = BlendRequest {
                real: a.real,
                fake,
                triples,
                force_normalize: a.force_normalize,
                out: a.out,
            };
            let r = cmd_blend(&cfg, &req)?;
            let how = if r.frequency_blended { "frequency blended" } else { "self-blended only" };
            println!("wrote {} ({}x{}, {how})", req.out.display(), r.height, r.width);
        }
        Command::Gradcheck { corrupt_group } => {
            let report = cmd_gradcheck(&cfg, corrupt_group.as_deref())?;
            println!("{:<6} {:<24} {:>7} {:>12} {:>12}", "loss", "group", "checked", "max_rel", "mean_rel");
            for e in &report.entries {
                let flag = if e.max_rel < report.tolerance { "" } else { "  FAIL" };
                println!(
                    "{:<6} {:<24} {:>7} {:>12.3e} {:>12.3e}{flag}",
                    e.loss, e.group, e.checked, e.max_rel, e.mean_rel
                );
            }
            if !report.passed() {
                return Err(CliError::Numeric(format!(
                    "gradient check failed: worst relative error {:.3e} exceeds {:.0e}",
                    report.worst(),
                    report.tolerance
                )));
            }
            println!("gradient check passed: worst relative error {:.3e}", report.worst());
        }
        Command::Sweep { param, values, corpus, out } => {
            let corpus = corpus.unwrap_or_else(|| cfg.paths.corpus_dir.clone());
            let rows = cmd_sweep(&cfg, &corpus, param, &values, &out)?;
            for r in &rows {
                println!(
                    "{:<24} total {:.6}  integrity {:.4}  AUC {:.4}",
                    r.value, r.terms.total, r.integrity_residual, r.auc
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Validate { files } => {
            for f in &files {
                println!("{}: {}", f.display(), cmd_validate(f)?);
            }
        }
    }
    Ok(())
}
