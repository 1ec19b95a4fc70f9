//! The hierarchical prior: `V_n = Σ ξ_j g_j + 1` with i.i.d. standard normal
//! `ξ`, and `U_n | V_n` centred Gaussian with `f`-coordinate covariance
//! `C(V_n)`. Log-densities are returned up to additive constants.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bases::{build_c, build_s, dq_columns, CondCovariance, HierarchicalBasis, SMatrix};
use crate::circle::{
    apply_dq, derivative, l2_inner, l2_inner_pc, mass_matrix, InnerKind, Mesh, PLFunction, PriorParams,
};
use crate::error::{Error, Result};

/// Bases and matrices shared by every prior computation on one mesh.
#[derive(Debug, Clone)]
pub struct PriorModel {
    params: PriorParams,
    mesh: Mesh,
    gbasis: HierarchicalBasis,
    fbasis: HierarchicalBasis,
    s: SMatrix,
    dq: DMatrix<f64>,
}

impl PriorModel {
    pub fn new(mesh: Mesh, params: PriorParams) -> Result<Self> {
        let gbasis = HierarchicalBasis::build(mesh, InnerKind::Hnu(params))?;
        let fbasis = HierarchicalBasis::build(mesh, InnerKind::Dq(params))?;
        Self::from_bases(params, gbasis, fbasis)
    }

    pub fn from_bases(
        params: PriorParams,
        gbasis: HierarchicalBasis,
        fbasis: HierarchicalBasis,
    ) -> Result<Self> {
        let mesh = gbasis.mesh();
        if fbasis.mesh() != mesh {
            return Err(Error::MeshMismatch {
                left: mesh.level(),
                right: fbasis.mesh().level(),
            });
        }
        if gbasis.kind() != InnerKind::Hnu(params) {
            return Err(Error::param("gbasis", "expected the H(ν) basis for these parameters"));
        }
        let s = build_s(&fbasis, &params)?;
        let dq = dq_columns(&fbasis, &params);
        Ok(PriorModel {
            params,
            mesh,
            gbasis,
            fbasis,
            s,
            dq,
        })
    }

    pub fn params(&self) -> PriorParams {
        self.params
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn gbasis(&self) -> &HierarchicalBasis {
        &self.gbasis
    }

    pub fn fbasis(&self) -> &HierarchicalBasis {
        &self.fbasis
    }

    pub fn s(&self) -> &SMatrix {
        &self.s
    }

    /// Cell values of `D_q f_k`, one column per basis vector.
    pub fn dq_columns(&self) -> &DMatrix<f64> {
        &self.dq
    }

    pub fn covariance(&self, v: &PLFunction) -> Result<CondCovariance> {
        build_c(v, &self.fbasis, &self.s, &self.params)
    }

    /// `v = Σ ξ_j g_j + 1`.
    pub fn v_from_xi(&self, xi: &DVector<f64>) -> Result<PLFunction> {
        let dv = self.gbasis.from_coords(xi)?;
        Ok(PLFunction::new(self.mesh, dv.nodal().iter().map(|x| x + 1.0).collect())
            .expect("same length"))
    }

    /// `f`-coordinates `C(v)^{1/2} w = Sᵀ diag(L^{1/2}) S w`, without forming `C`.
    pub fn u_coords_from_white(&self, v: &PLFunction, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_mesh(v)?;
        let e2 = self.params.epsilon().powi(2);
        let vbar = v.cell_average(self.mesh);
        let s = self.s.entries();
        let mut sw = s * w;
        for (x, b) in sw.iter_mut().zip(vbar.cellvals()) {
            *x /= (e2 + b * b).sqrt();
        }
        Ok(s.tr_mul(&sw))
    }

    fn check_mesh(&self, f: &PLFunction) -> Result<()> {
        if f.mesh() != self.mesh {
            return Err(Error::MeshMismatch {
                left: self.mesh.level(),
                right: f.mesh().level(),
            });
        }
        Ok(())
    }
}

fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn sample_v<R: Rng + ?Sized>(model: &PriorModel, rng: &mut R) -> PLFunction {
    let xi = standard_normal_vec(model.mesh.cells(), rng);
    model.v_from_xi(&xi).expect("basis length")
}

/// `-½ (ε ‖Dv‖² + (1/4ε) ‖v - 1‖²)`, the log-density of `V_n` in its basis
/// coordinates up to an additive constant.
pub fn logpdf_v(v: &PLFunction, model: &PriorModel) -> Result<f64> {
    model.check_mesh(v)?;
    let e = model.params.epsilon();
    let dv = derivative(v);
    let centred = PLFunction::new(v.mesh(), v.nodal().iter().map(|x| x - 1.0).collect())?;
    Ok(-0.5 * (e * l2_inner_pc(&dv, &dv)? + l2_inner(&centred, &centred)? / (4.0 * e)))
}

pub fn sample_u_given_v<R: Rng + ?Sized>(
    v: &PLFunction,
    model: &PriorModel,
    rng: &mut R,
) -> Result<PLFunction> {
    let w = standard_normal_vec(model.mesh.cells(), rng);
    let coords = model.u_coords_from_white(v, &w)?;
    model.fbasis.from_coords(&coords)
}

/// `-½ ∫ [-N log(ε² + (Q_n v)²) + (ε² + (Q_n v)²) |D_q u|²] dx`, the
/// conditional log-density of `U_n` in its basis coordinates up to a constant
/// that does not depend on `(u, v)`.
pub fn logpdf_u_given_v(u: &PLFunction, v: &PLFunction, model: &PriorModel) -> Result<f64> {
    model.check_mesh(u)?;
    model.check_mesh(v)?;
    let e2 = model.params.epsilon().powi(2);
    let n = model.mesh.cells() as f64;
    let vbar = v.cell_average(model.mesh);
    let d = apply_dq(u, &model.params);
    let f: f64 = vbar
        .cellvals()
        .iter()
        .zip(d.cellvals())
        .map(|(b, du)| {
            let lam = e2 + b * b;
            -lam.ln() + lam * du * du / n
        })
        .sum();
    Ok(-0.5 * f)
}

pub fn logpdf_joint(u: &PLFunction, v: &PLFunction, model: &PriorModel) -> Result<f64> {
    Ok(logpdf_v(v, model)? + logpdf_u_given_v(u, v, model)?)
}

/// Trace of the conditional covariance operator of `U_n` on L² and the
/// level-independent bound `ε⁻²(ε^{-2q} + 1/12)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceDiagnostics {
    pub trace_cun: f64,
    pub bound_cprime: f64,
}

/// `ε⁻² Σ_{j∈ℤ} ‖D_q⁻¹ e_j‖²_{L²} = ε⁻² (ε^{-2q} + 1/12)`.
pub fn trace_bound(p: &PriorParams) -> f64 {
    let e = p.epsilon();
    (p.eps_q().powi(-2) + 1.0 / 12.0) / (e * e)
}

/// Matrix `P_jm = ⟨f_j, e_m⟩_{L²}` against an L²-orthonormal basis `{e_m}` of
/// PL(n). `C_{U_n}` acts on PL(n) as `Pᵀ C P` in the `e` coordinates.
pub fn l2_frame(model: &PriorModel, l2basis: &HierarchicalBasis) -> DMatrix<f64> {
    let m = mass_matrix(model.mesh);
    model.fbasis.columns().transpose() * m * l2basis.columns()
}

pub fn trace_diagnostics(model: &PriorModel, v: &PLFunction) -> Result<TraceDiagnostics> {
    let l2 = HierarchicalBasis::build(model.mesh, InnerKind::L2)?;
    let c = model.covariance(v)?;
    let p = l2_frame(model, &l2);
    let op = p.transpose() * c.matrix() * &p;
    Ok(TraceDiagnostics {
        trace_cun: op.trace(),
        bound_cprime: trace_bound(&model.params),
    })
}

/// Monte Carlo estimate of `E exp(b ‖(U_n, V_n)‖_{L²×L²})` at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMoment {
    pub n: u32,
    pub b: f64,
    pub samples: usize,
    /// Natural log of the estimate; always finite.
    pub log_estimate: f64,
    /// The estimate itself; `+inf` only when it exceeds the `f64` range.
    pub estimate: f64,
    /// Standard error relative to the estimate.
    pub relative_stderr: f64,
}

impl ExpMoment {
    pub fn stderr(&self) -> f64 {
        self.estimate * self.relative_stderr
    }
}

/// Per-level exponential-moment estimates with common random numbers: sample
/// `i` at every level uses the same two ChaCha streams, so the nested bases
/// see the same leading Gaussian draws. Sums are accumulated in log space.
pub fn exp_moment_estimate(
    params: PriorParams,
    levels: &[u32],
    b: f64,
    nsamples: usize,
    seed: u64,
) -> Result<Vec<ExpMoment>> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Hypothesis(format!(
            "exponential moments require b > 0, got {b}"
        )));
    }
    if nsamples < 2 {
        return Err(Error::param("nsamples", "need at least 2 samples"));
    }
    let mut out = Vec::with_capacity(levels.len());
    for &n in levels {
        let mesh = Mesh::new(n)?;
        let model = PriorModel::new(mesh, params)?;
        let mass = mass_matrix(mesh);
        let norms: Vec<f64> = (0..nsamples)
            .map(|i| {
                let mut rv = ChaCha8Rng::seed_from_u64(seed);
                rv.set_stream(2 * i as u64);
                let mut ru = ChaCha8Rng::seed_from_u64(seed);
                ru.set_stream(2 * i as u64 + 1);
                let v = sample_v(&model, &mut rv);
                let u = sample_u_given_v(&v, &model, &mut ru).expect("same mesh");
                let un = DVector::from_column_slice(u.nodal());
                let vn = DVector::from_column_slice(v.nodal());
                (un.dot(&(&mass * &un)) + vn.dot(&(&mass * &vn))).max(0.0).sqrt()
            })
            .collect();
        let expo: Vec<f64> = norms.iter().map(|x| b * x).collect();
        let top = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = expo.iter().map(|x| (x - top).exp()).collect();
        let k = nsamples as f64;
        let mean = scaled.iter().sum::<f64>() / k;
        let var = scaled.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let log_estimate = top + mean.ln();
        out.push(ExpMoment {
            n,
            b,
            samples: nsamples,
            log_estimate,
            estimate: log_estimate.exp(),
            relative_stderr: (var / k).sqrt() / mean,
        });
    }
    Ok(out)
}

/// Machine-readable prior diagnostic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorDiagnosticRecord {
    pub n: u32,
    pub epsilon: f64,
    pub q: f64,
    pub trace: f64,
    pub bound: f64,
    pub exp_moment: Option<f64>,
    pub stderr: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bases::HierarchicalBasis;

    fn model(n: u32, e: f64, q: f64) -> PriorModel {
        PriorModel::new(Mesh::new(n).unwrap(), PriorParams::new(e, q).unwrap()).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn v_mean_function_and_logpdf_examples() {
        let m = model(3, 0.25, 4.0);
        let v = m.v_from_xi(&DVector::zeros(8)).unwrap();
        assert!(v.nodal().iter().all(|&x| (x - 1.0).abs() < 1e-14));
        assert_eq!(logpdf_v(&v, &m).unwrap(), 0.0);
        let c = 0.3;
        let shifted = PLFunction::constant(Mesh::new(3).unwrap(), 1.0 + c);
        assert!((logpdf_v(&shifted, &m).unwrap() + c * c / 2.0).abs() < 1e-14);
    }

    #[test]
    fn logpdf_v_matches_isometry() {
        let m = model(4, 0.03, 4.0);
        let mut r = rng(1);
        let one = PLFunction::constant(m.mesh(), 1.0);
        let j1 = m.gbasis().coords(&one).unwrap();
        for _ in 0..10 {
            let v = sample_v(&m, &mut r);
            let jv = m.gbasis().coords(&v).unwrap();
            let oracle = -0.5 * (jv - &j1).norm_squared();
            let got = logpdf_v(&v, &m).unwrap();
            assert!((got - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn v_sample_mean_within_standard_errors() {
        let m = model(3, 0.1, 4.0);
        let mut r = rng(2);
        let k = 100_000;
        let mut sum = vec![0.0; 8];
        let mut sq = vec![0.0; 8];
        for _ in 0..k {
            let v = sample_v(&m, &mut r);
            for (j, x) in v.nodal().iter().enumerate() {
                sum[j] += x;
                sq[j] += x * x;
            }
        }
        for j in 0..8 {
            let mean = sum[j] / k as f64;
            let var = sq[j] / k as f64 - mean * mean;
            let se = (var / k as f64).sqrt();
            assert!((mean - 1.0).abs() < 5.0 * se, "node {j}");
        }
    }

    #[test]
    fn v_fourier_mode_variances() {
        // ⟨V - 1, e_j⟩ has variance (1/(4ε) + 4π²εj²)⁻¹ in the continuum; the
        // constant mode is exact at every level.
        let e = 0.05;
        let m = model(6, e, 4.0);
        let mut r = rng(3);
        let k = 40_000;
        let mut acc = [0.0f64; 3];
        for _ in 0..k {
            let v = sample_v(&m, &mut r);
            let dv: Vec<f64> = v.nodal().iter().map(|x| x - 1.0).collect();
            let f = PLFunction::new(m.mesh(), dv).unwrap();
            let c = crate::circle::fourier_coefficients(&f, 2);
            acc[0] += c[2].re * c[2].re;
            // Real cosine mode √2 cos(2π j x) has coefficient √2 Re c_j.
            acc[1] += 2.0 * c[3].re * c[3].re;
            acc[2] += 2.0 * c[4].re * c[4].re;
        }
        for (j, a) in acc.iter().enumerate() {
            let var = a / k as f64;
            let target = 1.0 / (1.0 / (4.0 * e) + 4.0 * std::f64::consts::PI.powi(2) * e * (j * j) as f64);
            let tol = if j == 0 { 0.03 } else { 0.05 };
            assert!((var / target - 1.0).abs() < tol, "mode {j}: {var} vs {target}");
        }
    }

    #[test]
    fn u_given_v_examples() {
        let m = model(2, 1e-3, 4.0);
        let v = PLFunction::constant(m.mesh(), 1.0);
        let c = m.u_coords_from_white(&v, &DVector::zeros(4)).unwrap();
        assert!(c.iter().all(|&x| x == 0.0));

        let u0 = PLFunction::zeros(Mesh::new(1).unwrap());
        let m1 = model(1, 1e-3, 4.0);
        let v1 = PLFunction::constant(m1.mesh(), 1.0);
        let got = logpdf_u_given_v(&u0, &v1, &m1).unwrap();
        assert!((got - (1.0f64 + 1e-6).ln()).abs() < 1e-18);
        assert!((got - 1.0e-6).abs() < 1e-11);
    }

    #[test]
    fn u_given_v_matches_dense_gaussian() {
        let mut r = rng(4);
        for n in 0..=4 {
            let m = model(n, 0.05, 4.0);
            let mut offsets = Vec::new();
            for _ in 0..20 {
                let v = sample_v(&m, &mut r);
                let u = sample_u_given_v(&v, &m, &mut r).unwrap();
                let c = m.covariance(&v).unwrap();
                let x = m.fbasis().coords(&u).unwrap();
                let chol = c.matrix().clone().cholesky().unwrap();
                let quad = x.dot(&chol.solve(&x));
                let dense = -0.5 * (c.log_det_cholesky().unwrap() + quad);
                offsets.push(logpdf_u_given_v(&u, &v, &m).unwrap() - dense);
            }
            for o in &offsets {
                assert!((o - offsets[0]).abs() < 1e-8, "n={n}: {o} vs {}", offsets[0]);
            }
            assert!(offsets[0].abs() < 1e-8);
        }
    }

    #[test]
    fn u_given_v_scaling_and_symmetry() {
        let m = model(3, 0.02, 4.0);
        let mut r = rng(5);
        let v = sample_v(&m, &mut r);
        let u = sample_u_given_v(&v, &m, &mut r).unwrap();
        let a = logpdf_u_given_v(&u, &v, &m).unwrap();
        let b = logpdf_u_given_v(&u.scale(2.0), &v, &m).unwrap();
        let vbar = v.cell_average(m.mesh());
        let d = apply_dq(&u, &m.params());
        let quad: f64 = vbar
            .cellvals()
            .iter()
            .zip(d.cellvals())
            .map(|(x, y)| (0.0004 + x * x) * y * y / 8.0)
            .sum();
        assert!((b - a + 1.5 * quad).abs() < 1e-9 * quad.max(1.0));
        let neg = v.scale(-1.0);
        assert!((logpdf_u_given_v(&u, &neg, &m).unwrap() - a).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn u_given_v_depends_on_v_only_through_cell_averages() {
        let m = model(3, 0.1, 4.0);
        let mut r = rng(6);
        let v = sample_v(&m, &mut r);
        let u = sample_u_given_v(&v, &m, &mut r).unwrap();
        // Alternating nodal perturbation with zero effect on every cell average
        // of a PL function: (+δ, -δ) pairs keep (a_j + a_{j+1})/2 unchanged.
        let bumped = PLFunction::new(
            m.mesh(),
            v.nodal()
                .iter()
                .enumerate()
                .map(|(j, x)| x + if j % 2 == 0 { 0.3 } else { -0.3 })
                .collect(),
        )
        .unwrap();
        let a = logpdf_u_given_v(&u, &v, &m).unwrap();
        let b = logpdf_u_given_v(&u, &bumped, &m).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        assert!((logpdf_v(&v, &m).unwrap() - logpdf_v(&bumped, &m).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn joint_is_additive() {
        let m = model(2, 0.2, 4.0);
        let zero = PLFunction::zeros(m.mesh());
        let one = PLFunction::constant(m.mesh(), 1.0);
        assert_eq!(
            logpdf_joint(&zero, &one, &m).unwrap(),
            logpdf_u_given_v(&zero, &one, &m).unwrap()
        );
        let mut r = rng(7);
        for _ in 0..5 {
            let v = sample_v(&m, &mut r);
            let u = sample_u_given_v(&v, &m, &mut r).unwrap();
            let j = logpdf_joint(&u, &v, &m).unwrap();
            assert_eq!(j, logpdf_v(&v, &m).unwrap() + logpdf_u_given_v(&u, &v, &m).unwrap());
        }
    }

    #[test]
    fn joint_mass_matches_gaussian_oracle_on_slices() {
        // n = 0: one u- and one v-coordinate. For each fixed v-coordinate the
        // u-slice of exp(joint) must integrate to exp(logpdf_v) · sqrt(2π C) · const,
        // i.e. the ratio to the Gaussian normalization is the same on every slice.
        let m = model(0, 0.3, 2.0);
        let f1 = m.fbasis().columns()[(0, 0)];
        let g1 = m.gbasis().columns()[(0, 0)];
        let mut ratios = Vec::new();
        for &xi in &[-1.0, -0.2, 0.0, 0.7, 1.5] {
            let v = PLFunction::constant(m.mesh(), 1.0 + xi * g1);
            let c = m.covariance(&v).unwrap().matrix()[(0, 0)];
            let sd = c.sqrt();
            let (lo, hi, k) = (-10.0 * sd, 10.0 * sd, 4001);
            let h = (hi - lo) / (k - 1) as f64;
            let mass: f64 = (0..k)
                .map(|i| {
                    let x = lo + i as f64 * h;
                    let u = PLFunction::constant(m.mesh(), x * f1);
                    let w = if i == 0 || i == k - 1 { 0.5 } else { 1.0 };
                    w * logpdf_joint(&u, &v, &m).unwrap().exp()
                })
                .sum::<f64>()
                * h;
            let oracle = logpdf_v(&v, &m).unwrap().exp() * (2.0 * std::f64::consts::PI).sqrt();
            ratios.push(mass / oracle);
        }
        for r in &ratios {
            assert!((r - 1.0).abs() < 1e-9, "{ratios:?}");
        }
    }

    #[test]
    fn conditional_covariance_monte_carlo() {
        let m = model(2, 1e-3, 4.0);
        let v = PLFunction::constant(m.mesh(), 1.0);
        let c = m.covariance(&v).unwrap();
        let mut r = rng(8);
        let k = 50_000;
        let mut acc = DMatrix::<f64>::zeros(4, 4);
        for _ in 0..k {
            let w = standard_normal_vec(4, &mut r);
            let x = m.u_coords_from_white(&v, &w).unwrap();
            acc += &x * x.transpose();
        }
        acc /= k as f64;
        let cm = c.matrix();
        for i in 0..4 {
            for j in 0..4 {
                let se = ((cm[(i, i)] * cm[(j, j)] + cm[(i, j)].powi(2)) / k as f64).sqrt();
                assert!((acc[(i, j)] - cm[(i, j)]).abs() < 5.0 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn dq_energy_per_cell() {
        // E ∫_{K_j} |D_q u|² N dx... per cell: E[(D_q u)_j²] = (ε² + vbar_j²)⁻¹ · N · (1/N).
        let m = model(3, 0.1, 4.0);
        let v = PLFunction::new(
            m.mesh(),
            vec![1.0, 0.2, 0.0, 0.3, 1.0, 1.2, 2.0, 1.0],
        )
        .unwrap();
        let vbar = v.cell_average(m.mesh());
        let mut r = rng(9);
        let k = 40_000;
        let mut acc = vec![0.0; 8];
        for _ in 0..k {
            let u = sample_u_given_v(&v, &m, &mut r).unwrap();
            let d = apply_dq(&u, &m.params());
            for (a, x) in acc.iter_mut().zip(d.cellvals()) {
                *a += x * x / 8.0;
            }
        }
        for (j, a) in acc.iter().enumerate() {
            let target = 1.0 / (0.01 + vbar.cellvals()[j].powi(2));
            let est = a / k as f64;
            // (D_q u)_j² / N is a scaled χ²₁: relative sd sqrt(2/k).
            assert!((est / target - 1.0).abs() < 5.0 * (2.0 / k as f64).sqrt(), "cell {j}");
        }
    }

    #[test]
    fn trace_bound_value() {
        let p = PriorParams::new(0.1, 4.0).unwrap();
        let b = trace_bound(&p);
        assert!((b - 100.0 * (1e8 + 1.0 / 12.0)).abs() < 1e-4);
    }

    #[test]
    fn trace_below_bound_and_nondecreasing() {
        let p = PriorParams::new(0.2, 2.0).unwrap();
        let smooth = |x: f64| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin();
        let mut last = 0.0;
        for n in 1..=6 {
            let m = PriorModel::new(Mesh::new(n).unwrap(), p).unwrap();
            let v = PLFunction::interpolate(m.mesh(), smooth);
            let t = trace_diagnostics(&m, &v).unwrap();
            assert!(t.trace_cun <= t.bound_cprime, "n={n}");
            assert!(t.trace_cun >= last - 1e-9 * last, "n={n}: {} < {last}", t.trace_cun);
            last = t.trace_cun;
        }
        let mut r = rng(10);
        for n in 1..=6 {
            let m = PriorModel::new(Mesh::new(n).unwrap(), p).unwrap();
            for _ in 0..3 {
                let v = sample_v(&m, &mut r);
                let t = trace_diagnostics(&m, &v).unwrap();
                assert!(t.trace_cun <= t.bound_cprime);
            }
        }
    }

    #[test]
    fn trace_equals_frame_trace() {
        // Σ_jk C_jk ⟨f_j, f_k⟩_{L²} computed without the L² frame.
        let m = model(3, 0.3, 2.0);
        let mut r = rng(11);
        let v = sample_v(&m, &mut r);
        let c = m.covariance(&v).unwrap();
        let gram = m.fbasis().columns().transpose() * mass_matrix(m.mesh()) * m.fbasis().columns();
        let direct = (c.matrix() * gram).trace();
        let t = trace_diagnostics(&m, &v).unwrap();
        assert!((t.trace_cun - direct).abs() < 1e-10 * direct);
        let l2 = HierarchicalBasis::build(m.mesh(), InnerKind::L2).unwrap();
        assert_eq!(l2_frame(&m, &l2).nrows(), 8);
    }

    #[test]
    fn exp_moments_small_b_and_monotone() {
        let p = PriorParams::new(0.25, 1.5).unwrap();
        let tiny = exp_moment_estimate(p, &[2, 3], 1e-9, 200, 0).unwrap();
        for e in &tiny {
            assert!((e.estimate - 1.0).abs() < 1e-7);
        }
        let a = exp_moment_estimate(p, &[3], 0.5, 2000, 1).unwrap();
        let b = exp_moment_estimate(p, &[3], 1.0, 2000, 1).unwrap();
        assert!(b[0].estimate > a[0].estimate);
        assert!(exp_moment_estimate(p, &[3], 0.0, 10, 1).is_err());
    }
}
