//! Level-sweep diagnostics of the discretization: convergence of the
//! multiplication operator, of the `D_q`-orthogonal projection, Cauchy
//! behaviour of the conditional Gaussian layer, and uniformity of exponential
//! moments.
//!
//! Limit objects are replaced by fine-level surrogates, so every check
//! certifies Cauchy-type behaviour across the requested levels.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bases::HierarchicalBasis;
use crate::circle::{
    fourier_coefficients, mass_matrix, prolongation_matrix, sobolev_norm_from_coeffs, InnerKind,
    Mesh, PLFunction, PriorParams,
};
use crate::error::{Error, Result};
use crate::prior::{exp_moment_estimate, trace_bound, PriorModel};
use crate::quadrature::GaussLegendre;

/// One diagnostic over a list of levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSweepResult {
    pub name: String,
    pub levels: Vec<u32>,
    pub values: Vec<f64>,
    /// Least-squares slope of `log value` against `log N`; needs ≥ 3 positive values.
    pub rate: Option<f64>,
    pub pass: bool,
    /// `false` when the inputs violate the hypothesis of the underlying
    /// result; such sweeps are reported, not failed.
    pub hypothesis_ok: bool,
    pub note: String,
}

impl LevelSweepResult {
    fn new(name: &str, levels: Vec<u32>, values: Vec<f64>, pass: bool, note: String) -> Self {
        let rate = fit_rate(&levels, &values);
        LevelSweepResult {
            name: name.into(),
            levels,
            values,
            rate,
            pass,
            hypothesis_ok: true,
            note,
        }
    }
}

/// Slope of `log v` against `log 2^n`.
pub fn fit_rate(levels: &[u32], values: &[f64]) -> Option<f64> {
    if levels.len() < 3 || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return None;
    }
    let xs: Vec<f64> = levels.iter().map(|n| *n as f64 * std::f64::consts::LN_2).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn check_levels(levels: &[u32]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::param("levels", "at least one level is required"));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("levels", "levels must be strictly increasing"));
    }
    Ok(())
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// `sup_x |1/(ε² + v²) - 1/(ε² + (Q_n v)²)|` over `16 N` cell-interior
/// points. Passes when every consecutive ratio is at least `min_ratio`
/// (first-order decay gives about 2), or trivially when all metrics vanish.
/// With `lipschitz = false` the sweep is reported with `hypothesis_ok = false`
/// and never fails.
pub fn check_mult_conv(
    v: impl Fn(f64) -> f64,
    lipschitz: bool,
    params: PriorParams,
    levels: &[u32],
    min_ratio: f64,
) -> Result<LevelSweepResult> {
    check_levels(levels)?;
    let e2 = params.epsilon().powi(2);
    let rule = GaussLegendre::new(12);
    let mut values = Vec::with_capacity(levels.len());
    for &n in levels {
        let mesh = Mesh::new(n)?;
        let q = crate::circle::cell_average_fn(&v, mesh, &rule);
        let pts = 16 * mesh.cells();
        let metric = (0..pts)
            .map(|i| {
                let x = (i as f64 + 0.5) / pts as f64;
                let vx = v(x);
                let qx = q.cellvals()[mesh.cell_of(x)];
                (1.0 / (e2 + vx * vx) - 1.0 / (e2 + qx * qx)).abs()
            })
            .fold(0.0, f64::max);
        values.push(metric);
    }
    let scale = values.iter().cloned().fold(0.0, f64::max);
    let ratios_ok = values.iter().all(|m| *m <= 1e-13 * scale.max(1.0))
        || values.windows(2).all(|w| w[0] >= min_ratio * w[1]);
    let mut r = LevelSweepResult::new(
        "mult_conv",
        levels.to_vec(),
        values,
        ratios_ok || !lipschitz,
        format!("consecutive ratio >= {min_ratio}"),
    );
    if !lipschitz {
        r.hypothesis_ok = false;
        r.note = "v is not Hölder continuous; decay is not expected (reported only)".into();
    }
    Ok(r)
}

/// Test battery: `cos(2πjx)` and `sin(2πjx)` for `1 <= j <= 8`.
fn battery() -> Vec<(usize, bool)> {
    (1..=8).flat_map(|j| [(j, true), (j, false)]).collect()
}

/// `max_f ‖f - S_n f‖_{H^t} / ‖f‖_{H¹}` over the Fourier battery, with `S_n`
/// the `D_q`-orthogonal projection onto PL(n). Passes when strictly decreasing.
pub fn check_proj_conv(params: PriorParams, levels: &[u32], t: f64) -> Result<LevelSweepResult> {
    if !(t < 0.5) {
        return Err(Error::Hypothesis(format!(
            "projection convergence holds in H^t only for t < 1/2, got t = {t}"
        )));
    }
    check_levels(levels)?;
    let mut values = Vec::with_capacity(levels.len());
    for &n in levels {
        let mesh = Mesh::new(n)?;
        let fbasis = HierarchicalBasis::build(mesh, InnerKind::Dq(params))?;
        let band = 16 * mesh.cells().max(8);
        let mut worst: f64 = 0.0;
        for (j, is_cos) in battery() {
            let f = |x: f64| {
                let a = 2.0 * std::f64::consts::PI * j as f64 * x;
                if is_cos {
                    a.cos()
                } else {
                    a.sin()
                }
            };
            let sf = dq_projection(&f, 0.0, &fbasis, &params)?;
            let mut err = fourier_coefficients(&sf, band);
            for c in err.iter_mut() {
                *c = -*c;
            }
            // Exact coefficients of f: ½ or ∓i/2 at ±j.
            let (plus, minus) = if is_cos {
                (Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0))
            } else {
                (Complex64::new(0.0, -0.5), Complex64::new(0.0, 0.5))
            };
            err[band + j] += plus;
            err[band - j] += minus;
            let h1 = sobolev_norm_from_coeffs(&fourier_mode_coeffs(j, plus, minus), 1.0);
            worst = worst.max(sobolev_norm_from_coeffs(&err, t) / h1);
        }
        values.push(worst);
    }
    let pass = strictly_decreasing(&values);
    Ok(LevelSweepResult::new(
        &format!("proj_conv_t{t}"),
        levels.to_vec(),
        values,
        pass,
        "strictly decreasing".into(),
    ))
}

fn fourier_mode_coeffs(j: usize, plus: Complex64, minus: Complex64) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(0.0, 0.0); 2 * j + 1];
    c[2 * j] = plus;
    c[0] = minus;
    c
}

/// `S_n f = Σ_k ⟨f, f_k⟩_{D_q} f_k` for a smooth `f` with known mean.
/// `D f_k` is constant on cells, so `∫ f' D f_k` only sees the nodal
/// increments of `f`, and `⟨f, f_k⟩_{D_q} = ⟨I_n f, f_k⟩_{D_q}` apart from
/// the mean term `ε^{2q} mean(f) mean(f_k)`, which is corrected separately.
pub fn dq_projection(
    f: &dyn Fn(f64) -> f64,
    mean_f: f64,
    fbasis: &HierarchicalBasis,
    params: &PriorParams,
) -> Result<PLFunction> {
    let interp = PLFunction::interpolate(fbasis.mesh(), f);
    let mut c = fbasis.coords(&interp)?;
    // Only f_1 = ε^{-q} has non-zero mean; its coordinate is ε^q · mean.
    c[0] += params.eps_q() * (mean_f - interp.mean());
    fbasis.from_coords(&c)
}

/// Cauchy behaviour of `C_{U_n}(Q_n v)` on L². For consecutive levels the
/// spectral norm of the covariance difference (against an L²-orthonormal
/// basis of the fine level of `v_fine`) and the trace difference must both
/// decrease, and every trace must lie below `ε⁻²(ε^{-2q} + 1/12)`.
///
/// Returns `[opnorm differences, trace differences, traces]`; the first two
/// are indexed by the lower level of each pair.
pub fn check_gaussian_weak_conv(
    v_fine: &PLFunction,
    params: PriorParams,
    levels: &[u32],
) -> Result<Vec<LevelSweepResult>> {
    check_levels(levels)?;
    let fine = v_fine.mesh();
    if fine.level() < *levels.last().expect("non-empty") {
        return Err(Error::param("v_fine", "surrogate level below the finest tested level"));
    }
    let e2 = params.epsilon().powi(2);
    let l2 = HierarchicalBasis::build(fine, InnerKind::L2)?;
    let em = l2.columns().transpose() * mass_matrix(fine);
    let mut covs: Vec<DMatrix<f64>> = Vec::with_capacity(levels.len());
    let mut traces = Vec::with_capacity(levels.len());
    for &n in levels {
        let mesh = Mesh::new(n)?;
        let model = PriorModel::new(mesh, params)?;
        let vbar = v_fine.cell_average(mesh);
        let s = model.s().entries();
        let mut ls = s.clone();
        for (mut row, b) in ls.row_iter_mut().zip(vbar.cellvals()) {
            row /= e2 + b * b;
        }
        let c = s.transpose() * ls;
        let t = &em * prolongation_matrix(mesh, fine)? * model.fbasis().columns();
        let cov = &t * c * t.transpose();
        traces.push(cov.trace());
        covs.push(cov);
    }
    let pairs: Vec<u32> = levels[..levels.len() - 1].to_vec();
    let opnorm: Vec<f64> = covs
        .windows(2)
        .map(|w| {
            let d = &w[1] - &w[0];
            d.symmetric_eigen().eigenvalues.amax()
        })
        .collect();
    let tracediff: Vec<f64> = traces.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let bound = trace_bound(&params);
    let under = traces.iter().all(|t| *t <= bound);
    Ok(vec![
        LevelSweepResult::new(
            "weak_conv_opnorm",
            pairs.clone(),
            opnorm.clone(),
            strictly_decreasing(&opnorm),
            "spectral norm of C_{n+1} - C_n; strictly decreasing; means are identically zero".into(),
        ),
        LevelSweepResult::new(
            "weak_conv_trace",
            pairs,
            tracediff.clone(),
            strictly_decreasing(&tracediff),
            "|Tr C_{n+1} - Tr C_n|; strictly decreasing".into(),
        ),
        LevelSweepResult::new(
            "trace_bound",
            levels.to_vec(),
            traces,
            under,
            format!("every trace <= {bound:.6e}"),
        ),
    ])
}

/// `E exp(b ‖(U_n, V_n)‖)` per level; passes when all estimates are finite and
/// `max / min <= 2`. The factor-2 band is a regression tripwire: the
/// underlying bound is uniform in `n` but its constant is unknown.
pub fn check_exp_moments(
    params: PriorParams,
    levels: &[u32],
    b: f64,
    nsamples: usize,
    seed: u64,
) -> Result<LevelSweepResult> {
    check_levels(levels)?;
    let est = exp_moment_estimate(params, levels, b, nsamples, seed)?;
    let logs: Vec<f64> = est.iter().map(|e| e.log_estimate).collect();
    let finite = est.iter().all(|e| e.estimate.is_finite());
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = finite && hi - lo <= std::f64::consts::LN_2;
    let mut r = LevelSweepResult::new(
        "exp_moments",
        levels.to_vec(),
        est.iter().map(|e| e.estimate).collect(),
        pass,
        format!("b = {b}; max/min = {:.4} (band 2); values are estimates", (hi - lo).exp()),
    );
    r.rate = None;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params(e: f64, q: f64) -> PriorParams {
        PriorParams::new(e, q).unwrap()
    }

    #[test]
    fn rate_fit() {
        let levels = [3, 4, 5, 6];
        let vals: Vec<f64> = levels.iter().map(|n| 3.0 * (1u64 << n) as f64).map(|x| 1.0 / x).collect();
        assert!((fit_rate(&levels, &vals).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(fit_rate(&[1, 2], &[1.0, 0.5]), None);
    }

    #[test]
    fn mult_conv_constant_is_exact() {
        let r = check_mult_conv(|_| 0.7, true, params(0.25, 4.0), &[2, 3, 4], 1.8).unwrap();
        // Zero up to the rounding of the quadrature weights.
        assert!(r.values.iter().all(|v| *v < 1e-13));
        assert!(r.pass);
    }

    #[test]
    fn mult_conv_sine_is_first_order() {
        let p = params(0.25, 4.0);
        let sine = |x: f64| (2.0 * PI * x).sin();
        let r = check_mult_conv(sine, true, p, &[5, 6, 7, 8, 9], 1.8).unwrap();
        assert!(r.pass, "{:?}", r.values);
        assert!((r.rate.unwrap() + 1.0).abs() < 0.05);
        // While the mesh is still resolving the peak of 1/(ε² + v²) near the
        // zeros of v (width ~ ε/2π), the decay is slower.
        let pre = check_mult_conv(sine, true, p, &[3, 4, 5, 6, 7], 1.8).unwrap();
        assert!(!pre.pass);
        let r45 = pre.values[1] / pre.values[2];
        assert!(r45 > 1.5 && r45 < 1.8, "{r45}");
    }

    #[test]
    fn mult_conv_jump_is_flagged() {
        let step = |x: f64| if x < 0.3 { 0.0 } else { 1.0 };
        let r = check_mult_conv(step, false, params(0.25, 4.0), &[3, 4, 5, 6], 1.8).unwrap();
        assert!(!r.hypothesis_ok && r.pass);
        // The sup metric does not decay.
        assert!(r.values.last().unwrap() > &(0.5 * r.values[0]));
    }

    #[test]
    fn projection_reproduces_pl_functions() {
        let p = params(0.3, 2.0);
        let mesh = Mesh::new(4).unwrap();
        let fb = HierarchicalBasis::build(mesh, InnerKind::Dq(p)).unwrap();
        let g = PLFunction::interpolate(mesh, |x| (2.0 * PI * x).sin() + x * (1.0 - x));
        let gf = |x: f64| g.eval(x);
        let sg = dq_projection(&gf, g.mean(), &fb, &p).unwrap();
        for (a, b) in sg.nodal().iter().zip(g.nodal()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_matches_dense_projection() {
        // Oracle: least squares in the D_q inner product on a fine level.
        let p = params(0.5, 2.0);
        let coarse = Mesh::new(3).unwrap();
        let fine = Mesh::new(10).unwrap();
        let f = |x: f64| (2.0 * PI * x).cos() + 0.3 * (6.0 * PI * x).sin() + 0.2;
        let fb = HierarchicalBasis::build(coarse, InnerKind::Dq(p)).unwrap();
        let sf = dq_projection(&f, 0.2, &fb, &p).unwrap();
        let ffine = PLFunction::interpolate(fine, f);
        let pm = prolongation_matrix(coarse, fine).unwrap();
        let w = crate::circle::gram_weight(fine, InnerKind::Dq(p));
        let lhs = pm.transpose() * &w * &pm;
        let rhs = pm.transpose() * &w * nalgebra::DVector::from_column_slice(ffine.nodal());
        let x = lhs.cholesky().unwrap().solve(&rhs);
        for (a, b) in sf.nodal().iter().zip(x.iter()) {
            // The fine interpolant of f differs from f by O(h_fine²).
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn proj_conv_decreases_and_guards() {
        let p = params(0.25, 4.0);
        for t in [0.0, 0.4] {
            let r = check_proj_conv(p, &[2, 3, 4, 5, 6], t).unwrap();
            assert!(r.pass, "t={t}: {:?}", r.values);
        }
        assert!(matches!(check_proj_conv(p, &[2, 3], 0.6), Err(Error::Hypothesis(_))));
        assert!(matches!(check_proj_conv(p, &[2, 3], 0.5), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn weak_conv_constant_v() {
        let p = params(0.25, 4.0);
        let levels = [1, 2, 3, 4, 5, 6];
        let v = PLFunction::constant(Mesh::new(8).unwrap(), 1.0);
        let r = check_gaussian_weak_conv(&v, p, &levels).unwrap();
        assert!(r.iter().all(|x| x.pass), "{r:?}");
        let d = &r[1].values;
        // Consecutive ratios approach 2 from below: 1.54, 1.79, 1.90, 1.95, ...
        for w in d.windows(2).skip(2) {
            assert!(w[0] / w[1] >= 1.9, "{d:?}");
        }
        // Cross-check a trace against the per-level diagnostic.
        let model = PriorModel::new(Mesh::new(3).unwrap(), p).unwrap();
        let direct = crate::prior::trace_diagnostics(&model, &PLFunction::constant(Mesh::new(3).unwrap(), 1.0))
            .unwrap()
            .trace_cun;
        assert!((r[2].values[2] - direct).abs() < 1e-8 * direct);
    }

    #[test]
    fn weak_conv_smooth_v() {
        let p = params(0.25, 4.0);
        let v = PLFunction::interpolate(Mesh::new(8).unwrap(), |x| 1.0 + 0.5 * (2.0 * PI * x).sin());
        let r = check_gaussian_weak_conv(&v, p, &[2, 3, 4, 5, 6]).unwrap();
        assert!(r.iter().all(|x| x.pass), "{r:?}");
    }

    #[test]
    fn exp_moments_guard_and_monotone() {
        let p = params(0.25, 2.0);
        assert!(matches!(
            check_exp_moments(p, &[2, 3], 0.0, 100, 1),
            Err(Error::Hypothesis(_))
        ));
        let small = check_exp_moments(p, &[2, 3], 1e-9, 200, 1).unwrap();
        assert!(small.values.iter().all(|v| (v - 1.0).abs() < 1e-6));
        let a = check_exp_moments(p, &[2, 3], 0.5, 500, 1).unwrap();
        let b = check_exp_moments(p, &[2, 3], 1.0, 500, 1).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!(y > x);
        }
    }
}
