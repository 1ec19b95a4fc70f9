//! The posterior energy
//!
//! `F(u, v | m) = ∫ [-N log λ + λ |D_q u|² + ε|Dv|² + (1/4ε)(1 - v)²] dx + ‖m - A_kn u‖² / σ²`
//!
//! with `λ = ε² + (Q_n v)²`, the log-posterior `-F/2` over the coordinate
//! vector `w = (u-coords ‖ v-coords)`, and an incremental evaluation cache for
//! single-coordinate updates.
//!
//! The data term is weighted by the measurement noise variance; `σ = 1`
//! gives the unweighted energy.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bases::cell_average_columns;
use crate::circle::{
    apply_dq, cell_average_nodal, derivative, gram_weight, l2_inner, l2_inner_pc, InnerKind, Mesh,
    PLFunction,
};
use crate::error::{Error, Result};
use crate::forward::{ForwardOperator, Measurement};
use crate::prior::PriorModel;

/// Coordinates of the sampler state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateSystem {
    /// `u = Σ w_j f_j`, `v = 1 + Σ w_{N+j} g_j`.
    #[default]
    Basis,
    /// `u` nodal values, `v - 1` nodal values.
    Nodal,
}

/// Everything the energy needs, precomputed per coordinate direction.
#[derive(Debug, Clone)]
pub struct PosteriorSpec {
    prior: PriorModel,
    fop: ForwardOperator,
    m: Measurement,
    coords: CoordinateSystem,
    inv_var: f64,
    m_vec: DVector<f64>,
    /// `A` applied to each u-direction (K × N).
    a_cols: DMatrix<f64>,
    a_norm2: Vec<f64>,
    /// Cell values of `D_q` of each u-direction (N × N).
    d_cols: DMatrix<f64>,
    /// Cell averages of each v-direction (N × N), with nonzero cell lists.
    q_cols: DMatrix<f64>,
    q_support: Vec<Vec<usize>>,
    /// Prior precision of the v-coordinates; `None` means the identity.
    v_precision: Option<DMatrix<f64>>,
}

fn support(col: nalgebra::DVectorView<'_, f64>) -> Vec<usize> {
    col.iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

impl PosteriorSpec {
    pub fn new(
        prior: PriorModel,
        fop: ForwardOperator,
        m: Measurement,
        coords: CoordinateSystem,
    ) -> Result<Self> {
        let mesh = prior.mesh();
        if fop.n() != mesh.level() {
            return Err(Error::MeshMismatch {
                left: mesh.level(),
                right: fop.n(),
            });
        }
        if fop.k() != m.k {
            return Err(Error::MeshMismatch {
                left: fop.k(),
                right: m.k,
            });
        }
        m.validate()?;
        if !(m.sigma > 0.0) {
            return Err(Error::param("sigma", "posterior needs a positive noise level"));
        }
        let n = mesh.cells();
        let p = prior.params();
        let (a_cols, d_cols, q_cols, v_precision) = match coords {
            CoordinateSystem::Basis => (
                fop.matrix() * prior.fbasis().columns(),
                prior.dq_columns().clone(),
                cell_average_columns(prior.gbasis()),
                None,
            ),
            CoordinateSystem::Nodal => {
                let mut d = DMatrix::from_element(n, n, p.eps_q() / n as f64);
                let mut q = DMatrix::zeros(n, n);
                for j in 0..n {
                    let left = (j + n - 1) % n;
                    d[(j, j)] -= n as f64;
                    d[(left, j)] += n as f64;
                    q[(j, j)] += 0.5;
                    q[(left, j)] += 0.5;
                }
                (
                    fop.matrix().clone(),
                    d,
                    q,
                    Some(gram_weight(mesh, InnerKind::Hnu(p))),
                )
            }
        };
        let a_norm2 = a_cols.column_iter().map(|c| c.norm_squared()).collect();
        let q_support = q_cols.column_iter().map(support).collect();
        Ok(PosteriorSpec {
            inv_var: 1.0 / (m.sigma * m.sigma),
            m_vec: DVector::from_column_slice(&m.coeffs),
            prior,
            fop,
            m,
            coords,
            a_cols,
            a_norm2,
            d_cols,
            q_cols,
            q_support,
            v_precision,
        })
    }

    pub fn prior(&self) -> &PriorModel {
        &self.prior
    }

    pub fn fop(&self) -> &ForwardOperator {
        &self.fop
    }

    pub fn measurement(&self) -> &Measurement {
        &self.m
    }

    pub fn coords(&self) -> CoordinateSystem {
        self.coords
    }

    pub fn mesh(&self) -> Mesh {
        self.prior.mesh()
    }

    /// `2N`.
    pub fn dim(&self) -> usize {
        2 * self.mesh().cells()
    }

    /// Splits `w` into `(u, v)`.
    pub fn to_functions(&self, w: &DVector<f64>) -> Result<(PLFunction, PLFunction)> {
        let n = self.mesh().cells();
        if w.len() != 2 * n {
            return Err(Error::Dimension {
                what: "posterior state",
                expected: 2 * n,
                actual: w.len(),
            });
        }
        let wu = w.rows(0, n).into_owned();
        let wv = w.rows(n, n).into_owned();
        match self.coords {
            CoordinateSystem::Basis => Ok((
                self.prior.fbasis().from_coords(&wu)?,
                self.prior.v_from_xi(&wv)?,
            )),
            CoordinateSystem::Nodal => Ok((
                PLFunction::new(self.mesh(), wu.iter().copied().collect())?,
                PLFunction::new(self.mesh(), wv.iter().map(|x| x + 1.0).collect())?,
            )),
        }
    }

    /// Inverse of [`Self::to_functions`].
    pub fn to_coords(&self, u: &PLFunction, v: &PLFunction) -> Result<DVector<f64>> {
        let n = self.mesh().cells();
        let centred = PLFunction::new(v.mesh(), v.nodal().iter().map(|x| x - 1.0).collect())?;
        let (wu, wv) = match self.coords {
            CoordinateSystem::Basis => (
                self.prior.fbasis().coords(u)?,
                self.prior.gbasis().coords(&centred)?,
            ),
            CoordinateSystem::Nodal => {
                if u.mesh() != self.mesh() || v.mesh() != self.mesh() {
                    return Err(Error::MeshMismatch {
                        left: self.mesh().level(),
                        right: u.mesh().level().max(v.mesh().level()),
                    });
                }
                (
                    DVector::from_column_slice(u.nodal()),
                    DVector::from_column_slice(centred.nodal()),
                )
            }
        };
        let mut w = DVector::zeros(2 * n);
        w.rows_mut(0, n).copy_from(&wu);
        w.rows_mut(n, n).copy_from(&wv);
        Ok(w)
    }

    fn v_penalty(&self, xv: &DVector<f64>) -> f64 {
        match &self.v_precision {
            None => xv.norm_squared(),
            Some(h) => xv.dot(&(h * xv)),
        }
    }
}

/// `F(u, v | m)` evaluated directly from the functions.
pub fn f_eval(u: &PLFunction, v: &PLFunction, spec: &PosteriorSpec) -> Result<f64> {
    let mesh = spec.mesh();
    for f in [u, v] {
        if f.mesh() != mesh {
            return Err(Error::MeshMismatch {
                left: mesh.level(),
                right: f.mesh().level(),
            });
        }
    }
    let p = spec.prior.params();
    let e = p.epsilon();
    let n = mesh.cells() as f64;
    let vbar = v.cell_average(mesh);
    let du = apply_dq(u, &p);
    let cells: f64 = vbar
        .cellvals()
        .iter()
        .zip(du.cellvals())
        .map(|(b, d)| {
            let lam = e * e + b * b;
            -lam.ln() + lam * d * d / n
        })
        .sum();
    let dv = derivative(v);
    let centred = PLFunction::new(mesh, v.nodal().iter().map(|x| x - 1.0).collect())?;
    let v_term = e * l2_inner_pc(&dv, &dv)? + l2_inner(&centred, &centred)? / (4.0 * e);
    let resid = &spec.m_vec - spec.fop.apply(u)?;
    Ok(cells + v_term + resid.norm_squared() * spec.inv_var)
}

/// `-F/2` at the coordinate vector `w`.
pub fn log_post(w: &DVector<f64>, spec: &PosteriorSpec) -> Result<f64> {
    Ok(-0.5 * EvalCache::new(spec, w.clone())?.energy())
}

/// A proposed single-coordinate change not yet committed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pending {
    pub j: usize,
    pub newval: f64,
    /// Change of `-F/2`.
    pub delta_log_post: f64,
    d_energy: f64,
}

/// Incrementally maintained energy terms for one chain.
#[derive(Debug, Clone)]
pub struct EvalCache<'a> {
    spec: &'a PosteriorSpec,
    w: DVector<f64>,
    /// `m - A u`.
    resid: DVector<f64>,
    /// Cell values of `D_q u`.
    du: Vec<f64>,
    /// `Q_n v`.
    vbar: Vec<f64>,
    lambda: Vec<f64>,
    /// Prior precision applied to the v-coordinates.
    hx: DVector<f64>,
    energy: f64,
}

/// Outcome of a consistency check of the cache.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Revalidation {
    /// `|F_cached - F_fresh| / max(1, |F_fresh|)`.
    pub drift: f64,
    pub recomputed: bool,
}

impl<'a> EvalCache<'a> {
    pub const REFRESH_TOL: f64 = 1e-9;
    pub const ERROR_TOL: f64 = 1e-6;

    pub fn new(spec: &'a PosteriorSpec, w: DVector<f64>) -> Result<Self> {
        if w.len() != spec.dim() {
            return Err(Error::Dimension {
                what: "posterior state",
                expected: spec.dim(),
                actual: w.len(),
            });
        }
        let mut c = EvalCache {
            spec,
            w,
            resid: DVector::zeros(0),
            du: Vec::new(),
            vbar: Vec::new(),
            lambda: Vec::new(),
            hx: DVector::zeros(0),
            energy: 0.0,
        };
        c.recompute();
        if !c.energy.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite posterior energy {} at the initial state",
                c.energy
            )));
        }
        Ok(c)
    }

    fn n(&self) -> usize {
        self.spec.mesh().cells()
    }

    fn recompute(&mut self) {
        let s = self.spec;
        let n = self.n();
        let e2 = s.prior.params().epsilon().powi(2);
        let wu = self.w.rows(0, n);
        let wv = self.w.rows(n, n).into_owned();
        self.resid = &s.m_vec - &s.a_cols * wu;
        self.du = (&s.d_cols * wu).iter().copied().collect();
        self.vbar = match s.coords {
            CoordinateSystem::Basis => {
                let dv = s.prior.gbasis().columns() * &wv;
                cell_average_nodal(&dv.iter().map(|x| x + 1.0).collect::<Vec<_>>())
            }
            CoordinateSystem::Nodal => {
                cell_average_nodal(&wv.iter().map(|x| x + 1.0).collect::<Vec<_>>())
            }
        };
        self.lambda = self.vbar.iter().map(|b| e2 + b * b).collect();
        self.hx = match &s.v_precision {
            None => wv.clone(),
            Some(h) => h * &wv,
        };
        self.energy = self.full_energy();
    }

    fn full_energy(&self) -> f64 {
        let n = self.n() as f64;
        let cells: f64 = self
            .lambda
            .iter()
            .zip(&self.du)
            .map(|(l, d)| -l.ln() + l * d * d / n)
            .sum();
        let wv = self.w.rows(self.n(), self.n()).into_owned();
        cells + self.spec.v_penalty(&wv) + self.resid.norm_squared() * self.spec.inv_var
    }

    pub fn spec(&self) -> &PosteriorSpec {
        self.spec
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn log_post(&self) -> f64 {
        -0.5 * self.energy
    }

    /// Change of the log-posterior if `w_j` were set to `newval`.
    pub fn propose_delta(&self, j: usize, newval: f64) -> Result<Pending> {
        let n = self.n();
        if j >= 2 * n {
            return Err(Error::Dimension {
                what: "coordinate index",
                expected: 2 * n,
                actual: j,
            });
        }
        let s = self.spec;
        let delta = newval - self.w[j];
        let nf = n as f64;
        let d_energy = if delta == 0.0 {
            0.0
        } else if j < n {
            let a = s.a_cols.column(j);
            let data = (-2.0 * delta * a.dot(&self.resid) + delta * delta * s.a_norm2[j]) * s.inv_var;
            let dcol = s.d_cols.column(j);
            let mut prior = 0.0;
            for c in 0..n {
                let dc = dcol[c];
                if dc != 0.0 {
                    prior += self.lambda[c] * delta * dc * (2.0 * self.du[c] + delta * dc);
                }
            }
            data + prior / nf
        } else {
            let jv = j - n;
            let e2 = s.prior.params().epsilon().powi(2);
            let qcol = s.q_cols.column(jv);
            let mut cells = 0.0;
            for &c in &s.q_support[jv] {
                let b = self.vbar[c] + delta * qcol[c];
                let lam = e2 + b * b;
                let old = self.lambda[c];
                cells += -(lam / old).ln() + (lam - old) * self.du[c] * self.du[c] / nf;
            }
            let pen = match &s.v_precision {
                None => delta * (2.0 * self.w[j] + delta),
                Some(h) => delta * (2.0 * self.hx[jv] + delta * h[(jv, jv)]),
            };
            cells + pen
        };
        Ok(Pending {
            j,
            newval,
            delta_log_post: -0.5 * d_energy,
            d_energy,
        })
    }

    /// Commits a pending change produced by [`Self::propose_delta`] on the
    /// current state.
    pub fn accept(&mut self, p: Pending) {
        let n = self.n();
        let s = self.spec;
        let j = p.j;
        let delta = p.newval - self.w[j];
        if delta != 0.0 {
            if j < n {
                self.resid.axpy(-delta, &s.a_cols.column(j), 1.0);
                for (d, dc) in self.du.iter_mut().zip(s.d_cols.column(j).iter()) {
                    *d += delta * dc;
                }
            } else {
                let jv = j - n;
                let e2 = s.prior.params().epsilon().powi(2);
                let qcol = s.q_cols.column(jv);
                for &c in &s.q_support[jv] {
                    self.vbar[c] += delta * qcol[c];
                    self.lambda[c] = e2 + self.vbar[c] * self.vbar[c];
                }
                match &s.v_precision {
                    None => self.hx[jv] += delta,
                    Some(h) => self.hx.axpy(delta, &h.column(jv), 1.0),
                }
            }
        }
        self.w[j] = p.newval;
        self.energy += p.d_energy;
    }

    /// Compares the cached energy with a fresh evaluation. Drift above
    /// [`Self::REFRESH_TOL`] rebuilds the cache; above [`Self::ERROR_TOL`] it
    /// is an error.
    pub fn revalidate(&mut self) -> Result<Revalidation> {
        let cached = self.energy;
        self.recompute();
        let drift = (cached - self.energy).abs() / self.energy.abs().max(1.0);
        if drift > Self::ERROR_TOL {
            return Err(Error::Numerical(format!(
                "posterior cache drifted by {drift:.3e} (relative)"
            )));
        }
        if drift <= Self::REFRESH_TOL {
            // Keep the incrementally accumulated value; only the terms are refreshed.
            self.energy = cached;
        }
        Ok(Revalidation {
            drift,
            recomputed: drift > Self::REFRESH_TOL,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::PriorParams;
    use crate::forward::{assemble_a, Kernel, KernelSpec};
    use crate::prior::{logpdf_joint, sample_u_given_v, sample_v};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_with(n: u32, k: u32, eps: f64, q: f64, coords: CoordinateSystem, seed: u64) -> PosteriorSpec {
        let mesh = Mesh::new(n).unwrap();
        let prior = PriorModel::new(mesh, PriorParams::new(eps, q).unwrap()).unwrap();
        let kernel = Kernel::new(KernelSpec::PeriodizedGaussian { width: 0.05 }).unwrap();
        let fop = assemble_a(&kernel, n, k, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..1usize << k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Measurement::new(k, coeffs, 1.0).unwrap();
        PosteriorSpec::new(prior, fop, m, coords).unwrap()
    }

    fn zero_data(spec: &PosteriorSpec) -> PosteriorSpec {
        let mut m = spec.measurement().clone();
        m.coeffs.iter_mut().for_each(|c| *c = 0.0);
        PosteriorSpec::new(spec.prior().clone(), spec.fop().clone(), m, spec.coords()).unwrap()
    }

    fn random_w(spec: &PosteriorSpec, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = spec.mesh().cells();
        DVector::from_fn(2 * n, |i, _| {
            if i == 0 && spec.coords() == CoordinateSystem::Basis {
                0.0
            } else {
                rng.random_range(-0.5..0.5)
            }
        })
    }

    #[test]
    fn zero_state_energy() {
        for n in [0, 2, 4] {
            for eps in [0.1, 0.5] {
                let spec = zero_data(&spec_with(n, 3, eps, 4.0, CoordinateSystem::Basis, 1));
                let w = DVector::zeros(spec.dim());
                let (u, v) = spec.to_functions(&w).unwrap();
                let target = -((1usize << n) as f64) * (1.0 + eps * eps).ln();
                assert!((f_eval(&u, &v, &spec).unwrap() - target).abs() < 1e-12);
                assert!((log_post(&w, &spec).unwrap() + 0.5 * target).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn energy_matches_prior_plus_likelihood() {
        let spec = spec_with(4, 4, 0.3, 2.0, CoordinateSystem::Basis, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut offsets = Vec::new();
        for _ in 0..20 {
            let v = sample_v(spec.prior(), &mut rng);
            let u = sample_u_given_v(&v, spec.prior(), &mut rng).unwrap();
            let resid = &spec.m_vec - spec.fop().apply(&u).unwrap();
            let other = -2.0 * logpdf_joint(&u, &v, spec.prior()).unwrap() + resid.norm_squared();
            offsets.push(f_eval(&u, &v, &spec).unwrap() - other);
        }
        for o in &offsets {
            assert!((o - offsets[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn data_perturbation_is_quadratic() {
        let spec = spec_with(3, 3, 0.3, 2.0, CoordinateSystem::Basis, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_w(&spec, &mut rng);
        let (u, v) = spec.to_functions(&w).unwrap();
        let f0 = f_eval(&u, &v, &spec).unwrap();
        let resid = &spec.m_vec - spec.fop().apply(&u).unwrap();
        for (i, d) in [(0usize, 0.3), (5, -1.2)] {
            let mut m = spec.measurement().clone();
            m.coeffs[i] += d;
            let s2 = PosteriorSpec::new(spec.prior().clone(), spec.fop().clone(), m, spec.coords()).unwrap();
            let f1 = f_eval(&u, &v, &s2).unwrap();
            assert!((f1 - f0 - (d * d + 2.0 * d * resid[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn cache_matches_direct_evaluation() {
        for coords in [CoordinateSystem::Basis, CoordinateSystem::Nodal] {
            let spec = spec_with(4, 3, 0.3, 2.0, coords, 6);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let w = random_w(&spec, &mut rng);
            let (u, v) = spec.to_functions(&w).unwrap();
            let direct = f_eval(&u, &v, &spec).unwrap();
            let cache = EvalCache::new(&spec, w.clone()).unwrap();
            assert!((cache.energy() - direct).abs() < 1e-9 * direct.abs().max(1.0), "{coords:?}");
            let back = spec.to_coords(&u, &v).unwrap();
            assert!((back - w).amax() < 1e-9);
        }
    }

    #[test]
    fn deltas_match_from_scratch() {
        for coords in [CoordinateSystem::Basis, CoordinateSystem::Nodal] {
            let spec = spec_with(4, 4, 0.2, 2.0, coords, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut cache = EvalCache::new(&spec, random_w(&spec, &mut rng)).unwrap();
            for step in 0..500 {
                let j = rng.random_range(1..spec.dim());
                let newval = cache.state()[j] + rng.random_range(-0.3..0.3);
                let p = cache.propose_delta(j, newval).unwrap();
                let mut w2 = cache.state().clone();
                w2[j] = newval;
                let fresh = log_post(&w2, &spec).unwrap() - log_post(cache.state(), &spec).unwrap();
                assert!((p.delta_log_post - fresh).abs() < 1e-9, "{coords:?} step {step}");
                if step % 2 == 0 {
                    cache.accept(p);
                }
            }
            let fresh = log_post(cache.state(), &spec).unwrap();
            assert!((cache.log_post() - fresh).abs() < 1e-9 * fresh.abs().max(1.0));
            let r = cache.revalidate().unwrap();
            assert!(r.drift < 1e-9 && !r.recomputed);
        }
    }

    #[test]
    fn no_op_and_bad_index() {
        let spec = spec_with(2, 2, 0.3, 2.0, CoordinateSystem::Basis, 10);
        let cache = EvalCache::new(&spec, DVector::zeros(8)).unwrap();
        assert_eq!(cache.propose_delta(5, 0.0).unwrap().delta_log_post, 0.0);
        assert!(cache.propose_delta(8, 1.0).is_err());
        assert!(EvalCache::new(&spec, DVector::zeros(7)).is_err());
    }

    #[test]
    fn successive_deltas_commute() {
        let spec = spec_with(3, 3, 0.3, 2.0, CoordinateSystem::Basis, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = random_w(&spec, &mut rng);
        let (i, j) = (2, 11);
        let (a, b) = (0.4, -0.7);
        let mut c1 = EvalCache::new(&spec, w.clone()).unwrap();
        let p = c1.propose_delta(i, a).unwrap();
        c1.accept(p);
        let p = c1.propose_delta(j, b).unwrap();
        c1.accept(p);
        let mut c2 = EvalCache::new(&spec, w).unwrap();
        let p = c2.propose_delta(j, b).unwrap();
        c2.accept(p);
        let p = c2.propose_delta(i, a).unwrap();
        c2.accept(p);
        assert!((c1.log_post() - c2.log_post()).abs() < 1e-10);
    }

    #[test]
    fn drift_triggers_refresh_and_error() {
        let spec = spec_with(2, 2, 0.3, 2.0, CoordinateSystem::Basis, 13);
        let mut cache = EvalCache::new(&spec, DVector::zeros(8)).unwrap();
        let f = cache.energy();
        cache.energy += 1e-8 * f.abs().max(1.0);
        let r = cache.revalidate().unwrap();
        assert!(r.recomputed);
        assert_eq!(cache.energy(), f);
        cache.energy += 1e-3 * f.abs().max(1.0);
        assert!(cache.revalidate().is_err());
    }

    #[test]
    fn quadratic_in_u_for_fixed_v() {
        let spec = spec_with(3, 3, 0.3, 2.0, CoordinateSystem::Basis, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = spec.mesh().cells();
        let h = 1e-2;
        let hessian = |w0: &DVector<f64>| {
            let f = |w: &DVector<f64>| log_post(w, &spec).unwrap();
            DMatrix::from_fn(n, n, |i, j| {
                let mut pp = w0.clone();
                pp[i] += h;
                pp[j] += h;
                let mut pm = w0.clone();
                pm[i] += h;
                pm[j] -= h;
                let mut mp = w0.clone();
                mp[i] -= h;
                mp[j] += h;
                let mut mm = w0.clone();
                mm[i] -= h;
                mm[j] -= h;
                (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h)
            })
        };
        let w1 = random_w(&spec, &mut rng);
        let mut w2 = random_w(&spec, &mut rng);
        w2.rows_mut(n, n).copy_from(&w1.rows(n, n));
        let (h1, h2) = (hessian(&w1), hessian(&w2));
        assert!((&h1 - &h2).amax() <= 1e-5 * h1.amax());
    }

    #[test]
    fn constant_v_pull_has_interior_maximum() {
        // n = 0: u ≡ 0, m = 0; along constant v the energy is
        // -log(ε² + v²) + (1/4ε)(1 - v)², so the log-posterior gradient changes
        // sign exactly once on a fine grid at its stationary point.
        let eps = 0.3;
        let spec = zero_data(&spec_with(0, 0, eps, 2.0, CoordinateSystem::Nodal, 16));
        let lp = |v: f64| log_post(&DVector::from_vec(vec![0.0, v - 1.0]), &spec).unwrap();
        let grid: Vec<f64> = (0..=4000).map(|i| 0.05 + i as f64 * 3.0 / 4000.0).collect();
        let best = grid.iter().cloned().fold((f64::NAN, f64::NEG_INFINITY), |acc, v| {
            let l = lp(v);
            if l > acc.1 {
                (v, l)
            } else {
                acc
            }
        });
        let grad = |v: f64| -2.0 * v / (eps * eps + v * v) + (v - 1.0) / (2.0 * eps);
        // Energy gradient crosses zero between neighbouring grid points.
        let step = 3.0 / 4000.0;
        assert!(grad(best.0 - step) < 0.0 && grad(best.0 + step) > 0.0);
        for pair in grid.windows(2) {
            let (a, b) = (lp(pair[0]), lp(pair[1]));
            if pair[1] <= best.0 {
                assert!(b >= a - 1e-12);
            } else if pair[0] >= best.0 {
                assert!(b <= a + 1e-12);
            }
        }
    }

    #[test]
    fn circular_shift_invariance() {
        let spec = spec_with(3, 3, 0.3, 2.0, CoordinateSystem::Nodal, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let w = random_w(&spec, &mut rng);
        let (u, v) = spec.to_functions(&w).unwrap();
        let f0 = f_eval(&u, &v, &spec).unwrap();
        let rot = |f: &PLFunction| {
            let mut x = f.nodal().to_vec();
            x.rotate_right(1);
            PLFunction::new(f.mesh(), x).unwrap()
        };
        // Shift the data with the signal: the measurement is in L²-basis
        // coordinates, so rotate its function.
        let meas = spec.fop().measurement_basis();
        let mfun = meas.from_coords(&spec.m_vec).unwrap();
        let mut m = spec.measurement().clone();
        m.coeffs = meas.coords(&rot(&mfun)).unwrap().iter().copied().collect();
        let s2 = PosteriorSpec::new(spec.prior().clone(), spec.fop().clone(), m, spec.coords()).unwrap();
        let f1 = f_eval(&rot(&u), &rot(&v), &s2).unwrap();
        assert!((f0 - f1).abs() < 1e-10 * f0.abs().max(1.0));
    }

    #[test]
    fn noise_level_weights_data_term() {
        let spec = spec_with(2, 2, 0.3, 2.0, CoordinateSystem::Basis, 19);
        let mut m = spec.measurement().clone();
        m.sigma = 0.5;
        let s2 = PosteriorSpec::new(spec.prior().clone(), spec.fop().clone(), m, spec.coords()).unwrap();
        let w = DVector::zeros(8);
        let d1 = -2.0 * log_post(&w, &spec).unwrap();
        let d2 = -2.0 * log_post(&w, &s2).unwrap();
        let n0 = -4.0 * (1.0f64 + 0.09).ln();
        assert!(((d2 - n0) - 4.0 * (d1 - n0)).abs() < 1e-10);
        let mut m = spec.measurement().clone();
        m.sigma = 0.0;
        assert!(PosteriorSpec::new(spec.prior().clone(), spec.fop().clone(), m, spec.coords()).is_err());
    }
}
