//! Single-component adaptive Metropolis (SCAM).
//!
//! Each sweep visits every coordinate `j` in order and proposes
//! `w_j + τ`, `τ ~ N(0, σ_j)`. **`σ_j` is a variance.** During burn-in
//! (`ℓ <= ℓ0`) it is the fixed `σ_j⁰`; afterwards
//! `σ_j = s · Var(w_j⁰, …, w_j^{ℓ-1}) + δ`, the variance running over the whole
//! history including burn-in. Acceptance is the usual Metropolis rule
//! `min(1, π(new)/π(old))`, evaluated in log space.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::circle::PLFunction;
use crate::error::{Error, Result};
use crate::posterior::{EvalCache, Pending, PosteriorSpec};
use crate::welford::Welford;

/// A target explored one coordinate at a time.
pub trait ComponentTarget {
    type Proposal;

    fn dim(&self) -> usize;
    fn state(&self) -> &DVector<f64>;
    fn log_density(&self) -> f64;
    /// Log-density change for `w_j := newval`, plus what is needed to commit it.
    fn propose(&self, j: usize, newval: f64) -> Result<(f64, Self::Proposal)>;
    fn accept(&mut self, p: Self::Proposal);
    /// Called every `revalidate_every` sweeps.
    fn refresh(&mut self) -> Result<()> {
        Ok(())
    }
}

impl ComponentTarget for EvalCache<'_> {
    type Proposal = Pending;

    fn dim(&self) -> usize {
        self.spec().dim()
    }

    fn state(&self) -> &DVector<f64> {
        EvalCache::state(self)
    }

    fn log_density(&self) -> f64 {
        self.log_post()
    }

    fn propose(&self, j: usize, newval: f64) -> Result<(f64, Pending)> {
        let p = self.propose_delta(j, newval)?;
        Ok((p.delta_log_post, p))
    }

    fn accept(&mut self, p: Pending) {
        EvalCache::accept(self, p)
    }

    fn refresh(&mut self) -> Result<()> {
        self.revalidate().map(|_| ())
    }
}

/// Multivariate normal `N(mean, prec⁻¹)` with an incrementally kept
/// `prec · (x - mean)`.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    prec: DMatrix<f64>,
    mean: DVector<f64>,
    x: DVector<f64>,
    px: DVector<f64>,
}

impl GaussianTarget {
    pub fn new(prec: DMatrix<f64>, mean: DVector<f64>, x0: DVector<f64>) -> Result<Self> {
        let d = mean.len();
        if prec.shape() != (d, d) || x0.len() != d {
            return Err(Error::Dimension {
                what: "Gaussian target",
                expected: d,
                actual: x0.len(),
            });
        }
        let px = &prec * (&x0 - &mean);
        Ok(GaussianTarget {
            prec,
            mean,
            x: x0,
            px,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim), DVector::zeros(dim), DVector::zeros(dim))
            .expect("consistent shapes")
    }
}

impl ComponentTarget for GaussianTarget {
    type Proposal = (usize, f64);

    fn dim(&self) -> usize {
        self.x.len()
    }

    fn state(&self) -> &DVector<f64> {
        &self.x
    }

    fn log_density(&self) -> f64 {
        -0.5 * (&self.x - &self.mean).dot(&self.px)
    }

    fn propose(&self, j: usize, newval: f64) -> Result<(f64, (usize, f64))> {
        if j >= self.dim() {
            return Err(Error::Dimension {
                what: "coordinate index",
                expected: self.dim(),
                actual: j,
            });
        }
        let d = newval - self.x[j];
        Ok((-0.5 * d * (2.0 * self.px[j] + d * self.prec[(j, j)]), (j, newval)))
    }

    fn accept(&mut self, (j, newval): (usize, f64)) {
        let d = newval - self.x[j];
        self.px.axpy(d, &self.prec.column(j), 1.0);
        self.x[j] = newval;
    }
}

/// Initial proposal variances: one value for every coordinate or one each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma0 {
    Scalar(f64),
    PerCoordinate(Vec<f64>),
}

impl Default for Sigma0 {
    fn default() -> Self {
        Sigma0::Scalar(1.0)
    }
}

impl Sigma0 {
    pub fn get(&self, j: usize) -> f64 {
        match self {
            Sigma0::Scalar(s) => *s,
            Sigma0::PerCoordinate(v) => v[j],
        }
    }
}

fn default_sweeps() -> usize {
    10_000
}
fn default_s() -> f64 {
    2.4
}
fn default_delta() -> f64 {
    1e-3
}
fn default_thin() -> usize {
    1
}
fn default_revalidate() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScamConfig {
    /// Number of sweeps `L`.
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    /// Burn-in `ℓ0`; `None` means `L/10`.
    #[serde(default)]
    pub burnin: Option<usize>,
    #[serde(default)]
    pub sigma0: Sigma0,
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    /// Keep every v-coordinate at its initial value.
    #[serde(default)]
    pub fixed_v: bool,
    /// Hold each `σ_j` at its first post-burn-in value.
    #[serde(default)]
    pub freeze_after_burnin: bool,
    #[serde(default = "default_revalidate")]
    pub revalidate_every: usize,
    /// Keep the thinned post-burn-in samples in memory for a chain dump.
    #[serde(default)]
    pub keep_samples: bool,
}

impl Default for ScamConfig {
    fn default() -> Self {
        ScamConfig {
            sweeps: default_sweeps(),
            burnin: None,
            sigma0: Sigma0::default(),
            s: default_s(),
            delta: default_delta(),
            thin: default_thin(),
            seed: 0,
            fixed_v: false,
            freeze_after_burnin: false,
            revalidate_every: default_revalidate(),
            keep_samples: false,
        }
    }
}

impl ScamConfig {
    pub fn burnin(&self) -> usize {
        self.burnin.unwrap_or(self.sweeps / 10)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.sweeps == 0 {
            return Err(Error::param("mcmc.sweeps", "must be positive"));
        }
        if self.burnin() >= self.sweeps {
            return Err(Error::param(
                "mcmc.burnin",
                format!("burn-in {} must be below the sweep count {}", self.burnin(), self.sweeps),
            ));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::param("mcmc.s", "must be > 0"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::param("mcmc.delta", "must be > 0"));
        }
        if self.thin == 0 {
            return Err(Error::param("mcmc.thin", "must be >= 1"));
        }
        if self.revalidate_every == 0 {
            return Err(Error::param("mcmc.revalidate_every", "must be >= 1"));
        }
        match &self.sigma0 {
            Sigma0::Scalar(s) if !(*s > 0.0 && s.is_finite()) => {
                return Err(Error::param("mcmc.sigma0", "must be > 0"))
            }
            Sigma0::PerCoordinate(v) => {
                if v.len() != dim {
                    return Err(Error::Dimension {
                        what: "mcmc.sigma0",
                        expected: dim,
                        actual: v.len(),
                    });
                }
                if v.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(Error::param("mcmc.sigma0", "all entries must be > 0"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// `σ_j⁰` while `ell <= ℓ0`, else `s · Var + δ`.
pub fn update_sigma(welford: &Welford, cfg: &ScamConfig, sigma0: f64, ell: usize) -> f64 {
    if ell <= cfg.burnin() {
        sigma0
    } else {
        cfg.s * welford.variance() + cfg.delta
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub welford: Vec<Welford>,
    pub sigma: Vec<f64>,
    pub accepts: Vec<u64>,
    pub proposals: Vec<u64>,
    pub ell: usize,
}

impl ChainState {
    fn new(w0: &DVector<f64>, cfg: &ScamConfig) -> Self {
        let dim = w0.len();
        let mut welford = vec![Welford::new(); dim];
        for (acc, x) in welford.iter_mut().zip(w0.iter()) {
            acc.push(*x);
        }
        ChainState {
            welford,
            sigma: (0..dim).map(|j| cfg.sigma0.get(j)).collect(),
            accepts: vec![0; dim],
            proposals: vec![0; dim],
            ell: 0,
        }
    }

    pub fn acceptance(&self) -> f64 {
        let p: u64 = self.proposals.iter().sum();
        if p == 0 {
            0.0
        } else {
            self.accepts.iter().sum::<u64>() as f64 / p as f64
        }
    }

    pub fn per_coordinate_acceptance(&self) -> Vec<f64> {
        self.accepts
            .iter()
            .zip(&self.proposals)
            .map(|(a, p)| if *p == 0 { 0.0 } else { *a as f64 / *p as f64 })
            .collect()
    }
}

/// What a run leaves behind besides the report.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Mean of the retained post-burn-in samples.
    pub cm: DVector<f64>,
    /// Per-coordinate moments of the retained samples.
    pub retained_moments: Vec<Welford>,
    pub retained: usize,
    pub thin: usize,
    /// Retained samples, row-major (`retained × dim`), if requested.
    pub samples: Option<Vec<f64>>,
    pub state: ChainState,
    pub time_s: f64,
}

impl ChainOutput {
    pub fn dim(&self) -> usize {
        self.cm.len()
    }
}

/// Runs SCAM on `target`, skipping the coordinates flagged in `frozen`.
pub fn run_scam<T: ComponentTarget>(
    target: &mut T,
    cfg: &ScamConfig,
    frozen: &[bool],
) -> Result<ChainOutput> {
    let dim = target.dim();
    cfg.validate(dim)?;
    if frozen.len() != dim {
        return Err(Error::Dimension {
            what: "frozen mask",
            expected: dim,
            actual: frozen.len(),
        });
    }
    if !target.log_density().is_finite() {
        return Err(Error::Numerical(
            "non-finite log-posterior at the initial state".into(),
        ));
    }
    let start = Instant::now();
    let burnin = cfg.burnin();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut st = ChainState::new(target.state(), cfg);
    let mut retained_moments = vec![Welford::new(); dim];
    let mut retained = 0usize;
    let mut samples = cfg.keep_samples.then(Vec::new);
    let mut frozen_sigma: Option<Vec<f64>> = None;

    for ell in 1..=cfg.sweeps {
        st.ell = ell;
        if cfg.freeze_after_burnin && ell == burnin + 1 {
            frozen_sigma = Some(
                (0..dim)
                    .map(|j| update_sigma(&st.welford[j], cfg, cfg.sigma0.get(j), ell))
                    .collect(),
            );
        }
        for j in 0..dim {
            if frozen[j] {
                continue;
            }
            let sigma = match &frozen_sigma {
                Some(f) => f[j],
                None => update_sigma(&st.welford[j], cfg, cfg.sigma0.get(j), ell),
            };
            st.sigma[j] = sigma;
            let z: f64 = rng.sample(StandardNormal);
            let newval = target.state()[j] + sigma.sqrt() * z;
            let (dlog, p) = target.propose(j, newval)?;
            st.proposals[j] += 1;
            let accept = if dlog >= 0.0 {
                true
            } else if dlog.is_nan() {
                false
            } else {
                let u: f64 = rng.random();
                u.ln() < dlog
            };
            if accept {
                target.accept(p);
                st.accepts[j] += 1;
            }
        }
        let w = target.state();
        for (acc, x) in st.welford.iter_mut().zip(w.iter()) {
            acc.push(*x);
        }
        if ell > burnin && (ell - burnin).is_multiple_of(cfg.thin) {
            for (acc, x) in retained_moments.iter_mut().zip(w.iter()) {
                acc.push(*x);
            }
            if let Some(s) = samples.as_mut() {
                s.extend(w.iter());
            }
            retained += 1;
        }
        if ell % cfg.revalidate_every == 0 {
            target.refresh()?;
        }
    }
    if retained == 0 {
        return Err(Error::param(
            "mcmc.thin",
            "no post-burn-in sample retained; reduce thinning or burn-in",
        ));
    }
    Ok(ChainOutput {
        cm: DVector::from_iterator(dim, retained_moments.iter().map(|w| w.mean())),
        retained_moments,
        retained,
        thin: cfg.thin,
        samples,
        state: st,
        time_s: start.elapsed().as_secs_f64(),
    })
}

/// Mean of `chain[ℓ]` over `ℓ > ℓ0` with `(ℓ - ℓ0) % thin == 0`, where
/// `chain[0]` is the initial state.
pub fn cm_from_chain(chain: &[DVector<f64>], burnin: usize, thin: usize) -> Result<DVector<f64>> {
    if thin == 0 {
        return Err(Error::param("thin", "must be >= 1"));
    }
    let kept: Vec<&DVector<f64>> = chain
        .iter()
        .enumerate()
        .filter(|(l, _)| *l > burnin && (l - burnin).is_multiple_of(thin))
        .map(|(_, w)| w)
        .collect();
    let first = kept
        .first()
        .ok_or_else(|| Error::param("chain", "empty post-burn-in chain"))?;
    let mut sum = DVector::zeros(first.len());
    for w in &kept {
        sum += *w;
    }
    Ok(sum / kept.len() as f64)
}

/// `(u_cm, v_cm)` from the coordinate mean; the coordinate map is affine, so
/// the mean commutes with it.
pub fn cm_functions(spec: &PosteriorSpec, cm: &DVector<f64>) -> Result<(PLFunction, PLFunction)> {
    spec.to_functions(cm)
}

/// Run summary with the columns of a parameter table
/// (`N`, `epsilon`, `samples`, `acceptance`, `time_s`, `seed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(rename = "N")]
    pub n_cells: usize,
    pub epsilon: f64,
    /// `L - ℓ0`.
    pub samples: usize,
    pub acceptance: f64,
    pub time_s: f64,
    pub seed: u64,
    pub sweeps: usize,
    pub burnin: usize,
    pub thin: usize,
    pub retained: usize,
    pub per_coordinate_acceptance: Vec<f64>,
    pub u_cm: Vec<f64>,
    pub v_cm: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Initial state `u ≡ 0`, `v ≡ 1`, i.e. `w = 0`.
pub fn run_posterior(spec: &PosteriorSpec, cfg: &ScamConfig) -> Result<(RunReport, ChainOutput)> {
    let dim = spec.dim();
    let mut cache = EvalCache::new(spec, DVector::zeros(dim))?;
    let n = dim / 2;
    let frozen: Vec<bool> = (0..dim).map(|j| cfg.fixed_v && j >= n).collect();
    let out = run_scam(&mut cache, cfg, &frozen)?;
    let (u, v) = cm_functions(spec, &out.cm)?;
    let active: Vec<usize> = (0..dim).filter(|j| !frozen[*j]).collect();
    let report = RunReport {
        n_cells: n,
        epsilon: spec.prior().params().epsilon(),
        samples: cfg.sweeps - cfg.burnin(),
        acceptance: out.state.acceptance(),
        time_s: out.time_s,
        seed: cfg.seed,
        sweeps: cfg.sweeps,
        burnin: cfg.burnin(),
        thin: cfg.thin,
        retained: out.retained,
        per_coordinate_acceptance: {
            let all = out.state.per_coordinate_acceptance();
            active.iter().map(|j| all[*j]).collect()
        },
        u_cm: u.nodal().to_vec(),
        v_cm: v.nodal().to_vec(),
        config: None,
    };
    Ok((report, out))
}

/// Independent chains on worker threads with seeds `cfg.seed + i`.
pub fn run_posterior_chains(
    spec: &PosteriorSpec,
    cfg: &ScamConfig,
    chains: usize,
) -> Result<Vec<(RunReport, ChainOutput)>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..chains)
            .map(|i| {
                let mut c = cfg.clone();
                c.seed = cfg.seed.wrapping_add(i as u64);
                scope.spawn(move || run_posterior(spec, &c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDumpHeader {
    pub dim: usize,
    pub count: usize,
    pub thin: usize,
}

/// Writes the retained samples; requires `keep_samples`.
pub fn write_chain_dump(path: &Path, out: &ChainOutput) -> Result<()> {
    let samples = out
        .samples
        .as_ref()
        .ok_or_else(|| Error::param("mcmc.keep_samples", "samples were not kept"))?;
    let header = ChainDumpHeader {
        dim: out.dim(),
        count: out.retained,
        thin: out.thin,
    };
    binio::write_dump(BufWriter::new(File::create(path)?), &header, samples)
}

pub fn read_chain_dump(path: &Path) -> Result<(ChainDumpHeader, Vec<f64>)> {
    binio::read_dump(std::io::BufReader::new(File::open(path)?), |h: &ChainDumpHeader| {
        h.dim * h.count
    })
}
