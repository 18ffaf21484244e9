use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use intact_vae::dataset::{split, Dataset, SplitRatios};
use intact_vae::dgp::{generate, sample_dgp_spec};
use intact_vae::estimation::{cate, CateEstimates, EstimationMode};
use intact_vae::harness::ihdp::IHDP_DIR_ENV;
use intact_vae::harness::{emit_plot_data, run_ihdp, run_sweep, ExperimentConfig};
use intact_vae::metrics::{eps_ate, pehe, reference_outcomes, EffectReference, MetricsReport};
use intact_vae::model::{IntactVaeModel, ModelDims, NetPreset};
use intact_vae::numerics::Rng;
use intact_vae::training::{init_model, train};
use intact_vae::{Error, Result};

const EXIT_FAILURE: u8 = 1;
const EXIT_MISSING_DATA: u8 = 3;

#[derive(Parser)]
#[command(
    name = "intact-vae",
    version,
    about = "Treatment effect estimation with a β-weighted identifiable VAE"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// β value; replaces the configured list.
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long = "dim-z", global = true)]
    dim_z: Option<usize>,
    /// Estimation mode (post or pre); replaces the configured list.
    #[arg(long, global = true)]
    mode: Option<EstimationMode>,
    /// Network preset: `paper` (3×200) or `small` (2×64).
    #[arg(long, global = true)]
    preset: Option<NetPreset>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic DGP and write data.csv and spec.json.
    Gen {
        #[arg(long = "dim-w")]
        dim_w: Option<usize>,
        #[arg(long)]
        omega: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model; without --val the data are split into thirds.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Write per-unit potential outcome and effect estimates to cate.csv.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score estimates against the ground truth in a data file.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        /// Adds latent recovery and imbalance diagnostics.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Compare against noiseless outcomes instead of sampled ones.
        #[arg(long)]
        noiseless: bool,
    },
    /// Run the configured synthetic sweep.
    Sweep,
    /// Run IHDP replications.
    Ihdp {
        /// Directory of ihdp_npci_{i}.csv files; defaults to the config or $IHDP_DIR.
        #[arg(long = "data-dir")]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Turn an aggregate.csv into per-metric plot tables.
    Plotdata {
        /// Defaults to <out>/aggregate.csv.
        #[arg(long)]
        aggregate: Option<PathBuf>,
    },
}

fn resolve_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    if let Some(b) = g.beta {
        cfg.beta = vec![b];
    }
    if let Some(z) = g.dim_z {
        cfg.dim_z = Some(z);
        cfg.ihdp_dim_z = z;
    }
    if let Some(m) = g.mode {
        cfg.modes = vec![m];
    }
    if let Some(p) = g.preset {
        cfg.net_preset = p;
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mode_of(cfg: &ExperimentConfig) -> EstimationMode {
    cfg.modes[0]
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out)?;
    match cli.command {
        Command::Gen { dim_w, omega, n } => {
            let mut rng = Rng::new(cfg.seed);
            let spec = sample_dgp_spec(
                &mut rng,
                dim_w.unwrap_or(cfg.dim_w[0]),
                omega.unwrap_or(cfg.omega[0]),
                cfg.noise_mode,
            )?;
            let data = generate(&spec, n.unwrap_or(cfg.n), &mut rng)?;
            data.write_csv(&out.join("data.csv"))?;
            std::fs::write(out.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
            eprintln!(
                "wrote {} units to {}",
                data.len(),
                out.join("data.csv").display()
            );
        }
        Command::Train { data, val } => {
            let data = Dataset::read_csv(&data)?;
            let mut rng = Rng::new(cfg.seed);
            let (tr, va) = match val {
                Some(v) => (data, Dataset::read_csv(&v)?),
                None => {
                    let (tr, va, _) = split(&data, SplitRatios::THIRDS, &mut rng)?;
                    (tr, va)
                }
            };
            let dims = ModelDims {
                x: tr.dim_x(),
                z: cfg.dim_z.or(tr.w.as_ref().map(|w| w.cols())).unwrap_or(1),
                y: tr.dim_y(),
            };
            let beta = cfg.beta[0];
            let model = init_model(&mut rng, dims, cfg.net_preset, cfg.heads, beta)?;
            let outcome = train(
                &model,
                &tr,
                &va,
                &cfg.train_config(beta, cfg.seed),
                &mut rng,
            )?;
            outcome.model.save(&out.join("model.json"))?;
            outcome.history.write_json(&out.join("history.json"))?;
            outcome.history.write_csv(&out.join("history.csv"))?;
            let h = &outcome.history;
            eprintln!(
                "stopped at epoch {} ({}); best epoch {} with validation ELBO {:.6}",
                h.last_epoch(),
                h.stop_reason,
                h.best_epoch,
                h.best_val_elbo
            );
        }
        Command::Estimate { model, data } => {
            let model = IntactVaeModel::load(&model)?;
            let data = Dataset::read_csv(&data)?;
            let est = cate(&model, &data, mode_of(&cfg), cfg.mc_samples, cfg.seed)?;
            est.write_csv(&out.join("cate.csv"))?;
            eprintln!(
                "wrote {} estimates to {}",
                est.len(),
                out.join("cate.csv").display()
            );
        }
        Command::Eval {
            data,
            estimates,
            model,
            noiseless,
        } => {
            let data = Dataset::read_csv(&data)?;
            let est = CateEstimates::read_csv(&estimates, mode_of(&cfg), cfg.mc_samples)?;
            let reference = if noiseless {
                EffectReference::Noiseless
            } else {
                EffectReference::Sampled
            };
            let report = match model {
                Some(p) => MetricsReport::evaluate(
                    &IntactVaeModel::load(&p)?,
                    &data,
                    &est,
                    reference,
                    cfg.latent_source,
                )?,
                None => {
                    let (y0, y1) = reference_outcomes(&data, reference)?;
                    let tau = est.tau();
                    let p = pehe(&y0, &y1, &tau)?;
                    MetricsReport {
                        mode: est.mode,
                        reference,
                        eps_ate: eps_ate(&y0, &y1, &tau)?,
                        pehe: p,
                        root_pehe: p.sqrt(),
                        recovery: None,
                        imbalance: None,
                    }
                }
            };
            report.write_json(&out.join("metrics.json"))?;
            println!("eps_ate={} root_pehe={}", report.eps_ate, report.root_pehe);
        }
        Command::Sweep => {
            let outcome = run_sweep(&cfg)?;
            let failed: Vec<_> = outcome.records.iter().filter(|r| !r.succeeded()).collect();
            for r in &failed {
                eprintln!(
                    "run cell {} beta {} failed: {}",
                    r.cell.index,
                    r.beta,
                    r.error.as_deref().unwrap_or_default()
                );
            }
            eprintln!(
                "{} runs, {} failed; aggregate at {}",
                outcome.records.len(),
                failed.len(),
                outcome.aggregate_path.display()
            );
            if !failed.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "{} sweep runs failed",
                    failed.len()
                )));
            }
        }
        Command::Ihdp {
            data_dir,
            replications,
        } => {
            let dir = data_dir
                .or(cfg.ihdp_dir.clone())
                .or_else(|| std::env::var_os(IHDP_DIR_ENV).map(PathBuf::from))
                .ok_or_else(|| Error::MissingData(PathBuf::from(format!("${IHDP_DIR_ENV}"))))?;
            let report = run_ihdp(&cfg, &dir, replications.unwrap_or(cfg.ihdp_replications))?;
            report.write(&out)?;
            for s in &report.summaries {
                println!(
                    "{}: eps_ate {:.4} root_pehe {:.4}",
                    s.mode, s.eps_ate.mean, s.root_pehe.mean
                );
            }
        }
        Command::Plotdata { aggregate } => {
            let agg = aggregate.unwrap_or_else(|| out.join("aggregate.csv"));
            let files = emit_plot_data(&agg, &out.join("plots"))?;
            eprintln!(
                "wrote {} plot tables under {}",
                files.len(),
                out.join("plots").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::MissingData(_) => ExitCode::from(EXIT_MISSING_DATA),
                _ => ExitCode::from(EXIT_FAILURE),
            }
        }
    }
}
