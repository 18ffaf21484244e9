//! Acceptance suite: one line per criterion, then a summary.
//!
//! Criteria listed in [`KNOWN_GAPS`] are expected to fail at this scale; they
//! still print FAIL, but only an unexpected FAIL (or an unexpected pass of a
//! known gap) makes the process exit nonzero.

mod common;

use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use intact_vae::dataset::Dataset;
use intact_vae::dgp::{generate, overlap_degree, sample_dgp_spec, NoiseMode, OVERLAP_THRESHOLD};
use intact_vae::estimation::EstimationMode;
use intact_vae::harness::ihdp::{replication_path, IHDP_DIR_ENV};
use intact_vae::harness::sweep::{cell_data, cells, run_cell};
use intact_vae::harness::{run_ihdp, run_sweep, ExperimentConfig};
use intact_vae::metrics::{
    affine_recovery, eps_ate, pehe, reference_outcomes, root_pehe, EffectReference,
};
use intact_vae::model::NetPreset;
use intact_vae::numerics::{derive_seed, Rng};

const SEED: u64 = 20_240;

/// Criteria that do not pass at desk scale; see the README.
const KNOWN_GAPS: &[u32] = &[3];

// criterion 1
const GRAD_REL_TOL: f64 = 1e-4;
const KL_SAMPLES: usize = 100_000;
const KL_SE_MULT: f64 = 5.0;
const MASS_TOL: f64 = 0.01;
const NUMERICS_SECS: f64 = 30.0;
// criterion 2
const TOY_REL_TOL: f64 = 0.02;
const TOY_SECS: f64 = 120.0;
// criterion 3
const R2_MIN: f64 = 0.9;
const R2_GROUP_GAP: f64 = 0.05;
const RECOVERY_SEEDS: usize = 5;
// criterion 4
const TREND_DGPS: usize = 10;
const BASELINE_WINS: usize = 8;
// criterion 5
const IHDP_REPLICATIONS: usize = 100;
const IHDP_POST_ATE: f64 = 0.25;
const IHDP_POST_PEHE: f64 = 1.1;
const IHDP_PRE_ATE: f64 = 0.30;
// criterion 6
const IDENTITY_TRIALS: usize = 1000;
const IDENTITY_SECS: f64 = 5.0;
// criterion 8
const OVERLAP_SPECS: usize = 10;
const OVERLAP_N: usize = 1500;
const OVERLAP_SECS: f64 = 60.0;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Verdict {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Verdict {
    Verdict {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn numerics() -> Verdict {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    for seed in 0..3 {
        for (name, e) in primitive_grad_errors(seed) {
            if e > worst.0 {
                worst = (e, name.to_string());
            }
        }
        for (name, e) in mlp_grad_errors(seed) {
            if e > worst.0 {
                worst = (e, name);
            }
        }
    }
    let mut kl_z = 0.0f64;
    for (seed, dim) in [(1, 1), (2, 3), (3, 8)] {
        let (closed, mc, se) = kl_vs_monte_carlo(seed, dim, KL_SAMPLES);
        kl_z = kl_z.max((closed - mc).abs() / se);
    }
    let mut mass_err = 0.0f64;
    for (m, v) in [(0.0, 1.0), (-2.5, 0.04), (3.0, 9.0), (0.7, 1e-4)] {
        mass_err = mass_err.max((density_mass(m, v, 2001) - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst.0 < GRAD_REL_TOL && kl_z < KL_SE_MULT && mass_err < MASS_TOL && secs < NUMERICS_SECS,
        format!(
            "max grad rel err {:.2e} ({}) < {GRAD_REL_TOL:.0e}; KL |z| {kl_z:.2} < {KL_SE_MULT}; \
             mass err {mass_err:.1e} < {MASS_TOL}; {secs:.1} s < {NUMERICS_SECS} s",
            worst.0, worst.1
        ),
    )
}

fn conjugate_toy() -> Verdict {
    let start = Instant::now();
    let (out, oracle) = train_toy(1, 500, 10);
    let ll = out.history.best_val_elbo + gaussian_constant(1);
    let rel = ((ll - oracle) / oracle).abs();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        rel < TOY_REL_TOL && secs < TOY_SECS,
        format!("val log-lik {ll:.4} vs closed form {oracle:.4}, rel err {rel:.4} < {TOY_REL_TOL}; {secs:.1} s"),
    )
}

fn synthetic_config(dim_w: Vec<usize>, omega: f64, replications: usize) -> ExperimentConfig {
    ExperimentConfig {
        seed: SEED,
        dim_w,
        omega: vec![omega],
        n: 1500,
        replications,
        net_preset: NetPreset::Small,
        modes: vec![EstimationMode::Post],
        ..ExperimentConfig::default()
    }
}

fn identification() -> Verdict {
    let cfg = ExperimentConfig {
        dim_z: Some(1),
        ..synthetic_config(vec![1], 6.0, RECOVERY_SEEDS)
    };
    let mut pooled = Vec::new();
    let mut gaps = Vec::new();
    let mut ceiling = Vec::new();
    for cell in cells(&cfg) {
        let (reports, ..) = match run_cell(&cfg, &cell, 1.0, derive_seed(cell.dgp_seed, 0), None) {
            Ok(r) => r,
            Err(e) => return verdict(false, format!("cell {} failed: {e}", cell.index)),
        };
        let rec = reports[0]
            .recovery
            .as_ref()
            .expect("synthetic data carries w");
        pooled.push(rec.r2_pooled);
        gaps.push(match rec.r2_group {
            [Some(a), Some(b)] => (a - b).abs(),
            _ => f64::INFINITY,
        });
        // best achievable by any function of x: the true prior mean
        let spec = sample_dgp_spec(
            &mut Rng::new(cell.dgp_seed),
            cell.dim_w,
            cell.omega,
            cfg.noise_mode,
        )
        .unwrap();
        let (tr, va, _) = cell_data(&cfg, &cell).unwrap();
        let joint = Dataset::concat(&[&tr, &va]).unwrap();
        let h = joint.x.matmul(&spec.h_w).unwrap();
        ceiling.push(
            affine_recovery(&h, joint.w.as_ref().unwrap(), &joint.t, false)
                .unwrap()
                .r2_pooled,
        );
    }
    let (r2, gap) = (median(&pooled), median(&gaps));
    verdict(
        r2 >= R2_MIN && gap <= R2_GROUP_GAP,
        format!(
            "median pooled R² {r2:.3} ≥ {R2_MIN} (per seed {}); median group gap {gap:.3} ≤ {R2_GROUP_GAP}; \
             oracle h(x) ceiling median {:.3}",
            fmt_list(&pooled),
            median(&ceiling)
        ),
    )
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// √PEHE of `τ̂ ≡ mean(y | t=1) − mean(y | t=0)` on `data`.
fn constant_baseline(data: &Dataset) -> f64 {
    let arm = |a: u8| -> Vec<f64> {
        (0..data.len())
            .filter(|&i| data.t[i] == a)
            .map(|i| data.y.get(i, 0))
            .collect()
    };
    let (y1, y0) = (arm(1), arm(0));
    let c = if y1.is_empty() || y0.is_empty() {
        0.0
    } else {
        mean(&y1) - mean(&y0)
    };
    let (r0, r1) = reference_outcomes(data, EffectReference::Sampled).unwrap();
    root_pehe(&r0, &r1, &vec![c; data.len()]).unwrap()
}

fn latent_dimension_trend() -> Verdict {
    let cfg = synthetic_config(vec![1, 5], 0.0, TREND_DGPS);
    let mut model = [Vec::new(), Vec::new()];
    let mut baseline = Vec::new();
    for cell in cells(&cfg) {
        let slot = usize::from(cell.dim_w != 1);
        let root = match run_cell(&cfg, &cell, 1.0, derive_seed(cell.dgp_seed, 0), None) {
            Ok((reports, ..)) => reports[0].root_pehe,
            Err(e) => return verdict(false, format!("cell {} failed: {e}", cell.index)),
        };
        model[slot].push(root);
        if slot == 0 {
            let (tr, va, _) = cell_data(&cfg, &cell).unwrap();
            baseline.push(constant_baseline(&Dataset::concat(&[&tr, &va]).unwrap()));
        }
    }
    let (m1, m5) = (mean(&model[0]), mean(&model[1]));
    let wins = model[0]
        .iter()
        .zip(&baseline)
        .filter(|(m, b)| m < b)
        .count();
    verdict(
        m1 < m5 && wins >= BASELINE_WINS,
        format!(
            "mean √PEHE dim_w=1 {m1:.3} < dim_w=5 {m5:.3}: {}; beats constant baseline on {wins}/{TREND_DGPS} ≥ {BASELINE_WINS} \
             (model {} | baseline {})",
            m1 < m5,
            fmt_list(&model[0]),
            fmt_list(&baseline)
        ),
    )
}

fn ihdp() -> Verdict {
    let Some(dir) = std::env::var_os(IHDP_DIR_ENV).map(std::path::PathBuf::from) else {
        return Verdict {
            status: Status::Skip,
            detail: format!("${IHDP_DIR_ENV} not set"),
        };
    };
    if !replication_path(&dir, 1).is_file() {
        return Verdict {
            status: Status::Skip,
            detail: format!("no replication files in {}", dir.display()),
        };
    }
    let cfg = ExperimentConfig {
        seed: SEED,
        net_preset: NetPreset::Small,
        ..ExperimentConfig::default()
    };
    let report = match run_ihdp(&cfg, &dir, IHDP_REPLICATIONS) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("IHDP run failed: {e}")),
    };
    let get = |mode| {
        report
            .summaries
            .iter()
            .find(|s| s.mode == mode)
            .expect("both modes configured")
    };
    let (post, pre) = (get(EstimationMode::Post), get(EstimationMode::Pre));
    verdict(
        post.eps_ate.mean <= IHDP_POST_ATE && post.root_pehe.mean <= IHDP_POST_PEHE && pre.eps_ate.mean <= IHDP_PRE_ATE,
        format!(
            "{IHDP_REPLICATIONS} replications: post eps_ate {:.3} ≤ {IHDP_POST_ATE}, post √PEHE {:.3} ≤ {IHDP_POST_PEHE}, \
             pre eps_ate {:.3} ≤ {IHDP_PRE_ATE}",
            post.eps_ate.mean, post.root_pehe.mean, pre.eps_ate.mean
        ),
    )
}

fn metric_identities() -> Verdict {
    let start = Instant::now();
    let mut rng = Rng::new(SEED);
    let mut failures = String::new();
    let mut worst_offset = 0.0f64;
    for trial in 0..IDENTITY_TRIALS {
        let n = 1 + (trial % 97);
        let y0 = rng.normals(n);
        let y1: Vec<f64> = rng.normals(n).iter().map(|v| 3.0 * v).collect();
        let tau: Vec<f64> = rng.normals(n).iter().map(|v| 2.0 * v).collect();
        let (e, p) = (
            eps_ate(&y0, &y1, &tau).unwrap(),
            pehe(&y0, &y1, &tau).unwrap(),
        );
        if e > p.sqrt() * (1.0 + 1e-12) {
            let _ = write!(
                failures,
                " trial {trial}: eps_ate {e} > √pehe {};",
                p.sqrt()
            );
        }

        let exact: Vec<f64> = y0.iter().zip(&y1).map(|(a, b)| b - a).collect();
        if pehe(&y0, &y1, &exact).unwrap() != 0.0 || eps_ate(&y0, &y1, &exact).unwrap() > 1e-12 {
            let _ = write!(failures, " trial {trial}: perfect prediction nonzero;");
        }

        let c = rng.uniform_open(-3.0, 3.0);
        let shifted: Vec<f64> = exact.iter().map(|v| v + c).collect();
        worst_offset =
            worst_offset.max((pehe(&y0, &y1, &shifted).unwrap() - c * c).abs() / (c * c));

        // on a dyadic grid every operation is exact, so equality is bitwise
        let g0: Vec<f64> = (0..n)
            .map(|_| (rng.uniform_open(-64.0, 64.0)).round())
            .collect();
        let g1: Vec<f64> = (0..n)
            .map(|_| (rng.uniform_open(-64.0, 64.0)).round())
            .collect();
        let cd = (rng.uniform_open(-32.0, 32.0)).round() / 8.0;
        let gt: Vec<f64> = g0.iter().zip(&g1).map(|(a, b)| b - a + cd).collect();
        if pehe(&g0, &g1, &gt).unwrap() != cd * cd {
            let _ = write!(failures, " trial {trial}: dyadic offset {cd} not exact;");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let offset_ok = worst_offset < 1e-12;
    verdict(
        failures.is_empty() && offset_ok && secs < IDENTITY_SECS,
        format!(
            "{IDENTITY_TRIALS} trials; offset rel err {worst_offset:.1e} (exact on dyadic inputs); {secs:.2} s{}",
            if failures.is_empty() { String::new() } else { format!(";{failures}") }
        ),
    )
}

fn sweep_determinism() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    for (dir, jobs) in dirs.iter().zip([1, 2]) {
        let cfg = ExperimentConfig {
            seed: SEED,
            out_dir: dir.path().to_path_buf(),
            jobs,
            dim_w: vec![1, 2],
            omega: vec![0.0, 22.0],
            n: 300,
            replications: 2,
            beta: vec![1.0, 2.5],
            net_preset: NetPreset::Small,
            max_epochs: 20,
            ..ExperimentConfig::default()
        };
        match run_sweep(&cfg) {
            Ok(out) if out.all_succeeded() => {
                outputs.push(std::fs::read(&out.aggregate_path).unwrap())
            }
            Ok(_) => return verdict(false, "a sweep run failed".into()),
            Err(e) => return verdict(false, format!("sweep failed: {e}")),
        }
    }
    let rows = outputs[0].iter().filter(|&&b| b == b'\n').count() - 1;
    verdict(
        outputs[0] == outputs[1],
        format!(
            "two sweeps ({rows} aggregate rows, 1 vs 2 workers) byte-identical: {}",
            outputs[0] == outputs[1]
        ),
    )
}

fn overlap_characterization() -> Verdict {
    let start = Instant::now();
    let mut degrees = Vec::new();
    for omega in [0.0, 6.0, 22.0] {
        let d: Vec<f64> = (0..OVERLAP_SPECS as u64)
            .map(|k| {
                let seed = derive_seed(SEED, k);
                let spec = sample_dgp_spec(&mut Rng::new(seed), 1, omega, NoiseMode::Unit).unwrap();
                let data = generate(&spec, OVERLAP_N, &mut Rng::new(derive_seed(seed, 1))).unwrap();
                overlap_degree(&data, OVERLAP_THRESHOLD).unwrap()
            })
            .collect();
        degrees.push(d);
    }
    let zero = degrees[0].iter().all(|&d| d == 0.0);
    let mid = degrees[1].iter().all(|&d| d <= 0.5);
    let high = degrees[2].iter().all(|&d| d > 0.5);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        zero && mid && high && secs < OVERLAP_SECS,
        format!(
            "ω=0 all zero: {zero}; ω=6 all ≤ 0.5: {mid} ({}); ω=22 all > 0.5: {high} ({}); {secs:.1} s",
            fmt_list(&degrees[1]),
            fmt_list(&degrees[2])
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Verdict); 8] = [
        (1, "numerics oracles", numerics),
        (2, "linear-Gaussian conjugate oracle", conjugate_toy),
        (3, "affine latent recovery", identification),
        (4, "latent dimension trend", latent_dimension_trend),
        (5, "IHDP", ihdp),
        (6, "metric identities", metric_identities),
        (7, "sweep determinism", sweep_determinism),
        (8, "overlap characterization", overlap_characterization),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let start = Instant::now();
        let v = run();
        let known = KNOWN_GAPS.contains(&id);
        let label = match (v.status, known) {
            (Status::Pass, false) => "PASS",
            (Status::Pass, true) => {
                unexpected.push(format!("{id} passed but is listed as a known gap"));
                "PASS (unexpected)"
            }
            (Status::Fail, true) => "FAIL (known gap)",
            (Status::Fail, false) => {
                unexpected.push(format!("{id} failed"));
                "FAIL"
            }
            (Status::Skip, _) => "SKIP",
        };
        println!(
            "criterion {id} [{name}]: {label} | {} | {:.1} s",
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if unexpected.is_empty() {
        println!("acceptance: no unexpected outcomes (known gaps: {KNOWN_GAPS:?})");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected outcomes: {}", unexpected.join("; "));
        ExitCode::FAILURE
    }
}
