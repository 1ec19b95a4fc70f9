use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use edgeprior::bases::{BasisCache, HierarchicalBasis};
use edgeprior::circle::{InnerKind, Mesh, PLFunction};
use edgeprior::convergence::{
    check_exp_moments, check_gaussian_weak_conv, check_mult_conv, check_proj_conv,
    LevelSweepResult,
};
use edgeprior::forward::{assemble_a, Kernel, Measurement};
use edgeprior::io::{columns_csv, read_json, write_json, SignalFile};
use edgeprior::posterior::PosteriorSpec;
use edgeprior::prior::PriorModel;
use edgeprior::scam::{run_posterior, write_chain_dump, RunReport};
use edgeprior::signals::resolve_signal;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

fn config_value(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// CSV preceded by a `# config=<json>` comment line.
fn csv_with_config(csv: &str, cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    format!("# config={json}\n{csv}")
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    #[serde(flatten)]
    signal: SignalFile,
    config: serde_json::Value,
}

#[derive(Serialize)]
struct Provenance<'a> {
    seed: u64,
    kernel: &'a edgeprior::forward::KernelSpec,
    sigma: f64,
    /// `rms(A u_true) / σ` of this realization's noiseless data.
    snr: Option<f64>,
    truth_level: u32,
    k: u32,
    config: serde_json::Value,
}

pub fn synthesize(cfg: &ExperimentConfig, verify: bool) -> Result<(), CliError> {
    ensure_dir(&cfg.out)?;
    let truth = resolve_signal(&cfg.signal, cfg.truth_level)?;
    let kernel = Kernel::new(cfg.kernel.clone())?;
    let fop = assemble_a(&kernel, cfg.truth_level, cfg.k, cfg.quad_order)?;
    let clean = fop.apply(&truth)?;
    let rms = clean.norm() / (clean.len() as f64).sqrt();
    let sigma = cfg.sigma.unwrap_or(rms / cfg.snr);
    let mut m = edgeprior::forward::synthesize_seeded(&truth, &fop, sigma, cfg.seed)?;
    m.meta.kernel = Some(cfg.kernel.clone());
    m.meta.truth = Some("truth.json".into());
    m.meta.config = Some(config_value(cfg));

    let truth_file = TruthFile {
        signal: SignalFile::from_function(&truth),
        config: config_value(cfg),
    };
    write_json(&cfg.out.join("truth.json"), &truth_file)?;
    write_text(
        &cfg.out.join("truth.csv"),
        &csv_with_config(&edgeprior::io::signal_csv(&truth), cfg),
    )?;
    m.save(&cfg.out.join("measurement.json"))?;
    let prov = Provenance {
        seed: cfg.seed,
        kernel: &cfg.kernel,
        sigma,
        snr: (sigma > 0.0).then(|| rms / sigma),
        truth_level: cfg.truth_level,
        k: cfg.k,
        config: config_value(cfg),
    };
    write_json(&cfg.out.join("provenance.json"), &prov)?;
    println!(
        "synthesized K = {} coefficients (sigma = {sigma:.6e}) into {}",
        m.coeffs.len(),
        cfg.out.display()
    );

    if verify {
        let back = Measurement::load(&cfg.out.join("measurement.json"))?;
        if back.coeffs != m.coeffs {
            return Err(CliError::Diagnostic("measurement file does not round-trip".into()));
        }
        let gap = back
            .coeffs
            .iter()
            .zip(clean.iter())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if sigma == 0.0 {
            if gap > 1e-12 * rms.max(1.0) {
                return Err(CliError::Diagnostic(format!(
                    "noiseless measurement differs from the forward map of the truth by {gap:.3e}"
                )));
            }
            println!("verify: measurement equals forward(truth) (max gap {gap:.3e})");
        } else {
            let resid: f64 = back
                .coeffs
                .iter()
                .zip(clean.iter())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                / back.coeffs.len() as f64;
            println!("verify: residual rms / sigma = {:.4}", resid.sqrt() / sigma);
        }
    }
    Ok(())
}

fn prior_model(cfg: &ExperimentConfig) -> Result<PriorModel, CliError> {
    let mesh = Mesh::new(cfg.n)?;
    let p = cfg.params()?;
    match &cfg.basis_cache {
        None => Ok(PriorModel::new(mesh, p)?),
        Some(dir) => {
            let cache = BasisCache::new(dir.clone())?;
            let g: HierarchicalBasis = cache.get_or_build(mesh, InnerKind::Hnu(p))?;
            let f = cache.get_or_build(mesh, InnerKind::Dq(p))?;
            Ok(PriorModel::from_bases(p, g, f)?)
        }
    }
}

pub fn estimate(cfg: &ExperimentConfig, measurement: &Path) -> Result<RunReport, CliError> {
    let m = Measurement::load(measurement)?;
    if m.k != cfg.k {
        return Err(CliError::Config(format!(
            "k: measurement has level {} but the config says {}",
            m.k, cfg.k
        )));
    }
    ensure_dir(&cfg.out)?;
    let prior = prior_model(cfg)?;
    let kernel = Kernel::new(cfg.kernel.clone())?;
    let fop = assemble_a(&kernel, cfg.n, cfg.k, cfg.quad_order)?;
    let spec = PosteriorSpec::new(prior, fop, m, cfg.coordinates)?;
    let (mut report, out) = run_posterior(&spec, &cfg.mcmc)?;
    report.config = Some(config_value(cfg));

    let mesh = spec.mesh();
    let csv = columns_csv(&["u_cm", "v_cm"], &[&report.u_cm, &report.v_cm], mesh);
    write_text(&cfg.out.join("estimate.csv"), &csv_with_config(&csv, cfg))?;
    write_json(&cfg.out.join("report.json"), &report)?;
    if cfg.mcmc.keep_samples {
        write_chain_dump(&cfg.out.join("chain.bin"), &out)?;
    }
    println!("{}", table_header());
    println!("{}", table_row(&report));
    Ok(report)
}

fn table_header() -> String {
    format!(
        "{:>6} {:>10} {:>10} {:>8} {:>10} {:>8}",
        "N", "epsilon", "L-l0", "r", "time_s", "seed"
    )
}

fn table_row(r: &RunReport) -> String {
    format!(
        "{:>6} {:>10.3e} {:>10} {:>8.3} {:>10.2} {:>8}",
        r.n_cells, r.epsilon, r.samples, r.acceptance, r.time_s, r.seed
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Mult,
    Proj,
    Weak,
    Moments,
    All,
}

#[derive(Serialize)]
struct DiagnosticsFile<'a> {
    results: &'a [LevelSweepResult],
    config: serde_json::Value,
}

pub fn diagnose(cfg: &ExperimentConfig, suite: Suite) -> Result<Vec<LevelSweepResult>, CliError> {
    let d = &cfg.diagnose;
    let p = edgeprior::circle::PriorParams::new(d.epsilon, d.q)?;
    let wants = |s: Suite| suite == Suite::All || suite == s;
    // Refuse out-of-hypothesis requests before running anything.
    if wants(Suite::Proj) {
        if let Some(t) = d.proj_t.iter().find(|t| !(**t < 0.5)) {
            return Err(CliError::Config(format!(
                "diagnose.proj_t: projection convergence holds in H^t only for t < 1/2, got t = {t}"
            )));
        }
    }
    if wants(Suite::Moments) && !(d.exp_b > 0.0) {
        return Err(CliError::Config(format!(
            "diagnose.exp_b: exponential moments require b > 0, got {}",
            d.exp_b
        )));
    }
    ensure_dir(&cfg.out)?;
    let mut results = Vec::new();
    if wants(Suite::Mult) {
        let sine = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
        results.push(check_mult_conv(sine, true, p, &d.mult_levels, d.mult_min_ratio)?);
    }
    if wants(Suite::Proj) {
        for &t in &d.proj_t {
            results.push(check_proj_conv(p, &d.proj_levels, t)?);
        }
    }
    if wants(Suite::Weak) {
        let fine = Mesh::new(d.weak_levels.last().expect("validated") + 2)?;
        let v = match d.weak_v.as_str() {
            "constant" => PLFunction::constant(fine, 1.0),
            _ => PLFunction::interpolate(fine, |x| {
                1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin()
            }),
        };
        results.extend(check_gaussian_weak_conv(&v, p, &d.weak_levels)?);
    }
    if wants(Suite::Moments) {
        results.push(check_exp_moments(p, &d.exp_levels, d.exp_b, d.exp_samples, cfg.seed)?);
    }
    let file = DiagnosticsFile {
        results: &results,
        config: config_value(cfg),
    };
    write_json(&cfg.out.join("diagnostics.json"), &file)?;
    let summary = summary_table(&results);
    write_text(&cfg.out.join("diagnostics.txt"), &summary)?;
    print!("{summary}");
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| r.hypothesis_ok && !r.pass)
        .map(|r| r.name.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Diagnostic(format!("failed: {}", failed.join(", "))));
    }
    Ok(results)
}

fn summary_table(results: &[LevelSweepResult]) -> String {
    let mut s = String::new();
    writeln!(s, "{:<20} {:<6} {:>8}  values", "check", "pass", "rate").expect("string");
    for r in results {
        let status = match (r.pass, r.hypothesis_ok) {
            (_, false) => "n/a",
            (true, true) => "PASS",
            (false, true) => "FAIL",
        };
        let rate = r.rate.map_or("-".to_string(), |x| format!("{x:.3}"));
        let vals: Vec<String> = r
            .levels
            .iter()
            .zip(&r.values)
            .map(|(n, v)| format!("n={n}:{v:.4e}"))
            .collect();
        writeln!(s, "{:<20} {:<6} {:>8}  {}", r.name, status, rate, vals.join(" ")).expect("string");
        writeln!(s, "{:<20} {}", "", r.note).expect("string");
    }
    s
}

pub fn report(cfg: &ExperimentConfig, inputs: &[PathBuf]) -> Result<(), CliError> {
    let default = [cfg.out.join("report.json")];
    let inputs = if inputs.is_empty() { &default[..] } else { inputs };
    let mut rows = Vec::new();
    for path in inputs {
        let r: RunReport = read_json(path)?;
        if !(0.0..=1.0).contains(&r.acceptance) || r.samples + r.burnin != r.sweeps {
            return Err(CliError::Diagnostic(format!(
                "{}: inconsistent run report",
                path.display()
            )));
        }
        rows.push(r);
    }
    println!("{}", table_header());
    let mut csv = String::from("N,epsilon,samples,acceptance,time_s,seed\n");
    for r in &rows {
        println!("{}", table_row(r));
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.n_cells, r.epsilon, r.samples, r.acceptance, r.time_s, r.seed
        )
        .expect("string");
    }
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("table.csv"), &csv_with_config(&csv, cfg))?;
    Ok(())
}
