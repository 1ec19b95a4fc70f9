//! Dyadic meshes on the unit circle, the spaces PL(n) and PC(n), the perturbed
//! derivative `D_q`, cell averaging, exact inner products, L² projection and
//! Fourier/Sobolev utilities.
//!
//! The circle is `[0, 1)` with `1 ≡ 0`. A mesh of level `n` has `N = 2^n`
//! cells `K_j = [j/N, (j+1)/N)`, `j = 0..N` (zero-based here). Piecewise-linear
//! functions are stored by their nodal values at `j/N`; piecewise-constant
//! functions by their cell values.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Largest supported mesh level; dense N×N matrices are used throughout.
pub const MAX_LEVEL: u32 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mesh {
    level: u32,
}

impl Mesh {
    pub fn new(level: u32) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::param(
                "n",
                format!("mesh level {level} exceeds maximum {MAX_LEVEL}"),
            ));
        }
        Ok(Mesh { level })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Number of cells (and nodes), `N = 2^n`.
    pub fn cells(&self) -> usize {
        1usize << self.level
    }

    pub fn width(&self) -> f64 {
        1.0 / self.cells() as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        (j % self.cells()) as f64 / self.cells() as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.cells()).map(|j| self.node(j)).collect()
    }

    pub fn refine(&self) -> Mesh {
        Mesh {
            level: self.level + 1,
        }
    }

    /// Index of the cell containing `x` (taken modulo 1).
    pub fn cell_of(&self, x: f64) -> usize {
        let y = wrap(x);
        ((y * self.cells() as f64).floor() as usize).min(self.cells() - 1)
    }

    fn check_same(&self, other: &Mesh) -> Result<()> {
        if self.level != other.level {
            return Err(Error::MeshMismatch {
                left: self.level,
                right: other.level,
            });
        }
        Ok(())
    }
}

/// Maps a real number to `[0, 1)`.
pub fn wrap(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Edge-scale parameter `epsilon` and perturbation exponent `q` of the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    epsilon: f64,
    q: f64,
}

impl PriorParams {
    pub const DEFAULT_Q: f64 = 4.0;

    pub fn new(epsilon: f64, q: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::param("epsilon", format!("must be > 0, got {epsilon}")));
        }
        if !(q.is_finite() && q > 1.0) {
            return Err(Error::param("q", format!("must be > 1, got {q}")));
        }
        Ok(PriorParams { epsilon, q })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// The mean-perturbation weight `epsilon^q`.
    pub fn eps_q(&self) -> f64 {
        self.epsilon.powf(self.q)
    }
}

/// Continuous piecewise-linear function on the circle (the space PL(n)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PLFunction {
    mesh: Mesh,
    nodal: Vec<f64>,
}

impl PLFunction {
    pub fn new(mesh: Mesh, nodal: Vec<f64>) -> Result<Self> {
        if nodal.len() != mesh.cells() {
            return Err(Error::Dimension {
                what: "nodal values",
                expected: mesh.cells(),
                actual: nodal.len(),
            });
        }
        Ok(PLFunction { mesh, nodal })
    }

    pub fn constant(mesh: Mesh, c: f64) -> Self {
        PLFunction {
            mesh,
            nodal: vec![c; mesh.cells()],
        }
    }

    pub fn zeros(mesh: Mesh) -> Self {
        Self::constant(mesh, 0.0)
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: Mesh, f: impl Fn(f64) -> f64) -> Self {
        PLFunction {
            mesh,
            nodal: mesh.nodes().into_iter().map(f).collect(),
        }
    }

    /// Periodic hat function with peak 1 at node `j`.
    pub fn hat(mesh: Mesh, j: usize) -> Self {
        let mut f = Self::zeros(mesh);
        f.nodal[j % mesh.cells()] = 1.0;
        f
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn nodal(&self) -> &[f64] {
        &self.nodal
    }

    pub fn into_nodal(self) -> Vec<f64> {
        self.nodal
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.mesh.cells();
        let y = wrap(x) * n as f64;
        let j = (y.floor() as usize).min(n - 1);
        let t = y - j as f64;
        (1.0 - t) * self.nodal[j] + t * self.nodal[(j + 1) % n]
    }

    /// `∫_𝕋 f dx`, exact (trapezoid rule is exact on PL).
    pub fn mean(&self) -> f64 {
        self.nodal.iter().sum::<f64>() / self.nodal.len() as f64
    }

    /// Representation of the same function on the next finer mesh.
    pub fn prolong(&self) -> PLFunction {
        let n = self.mesh.cells();
        let mut nodal = Vec::with_capacity(2 * n);
        for j in 0..n {
            let a = self.nodal[j];
            let b = self.nodal[(j + 1) % n];
            nodal.push(a);
            nodal.push(0.5 * (a + b));
        }
        PLFunction {
            mesh: self.mesh.refine(),
            nodal,
        }
    }

    /// Prolongs to any level `>=` the current one.
    pub fn prolong_to(&self, level: u32) -> Result<PLFunction> {
        if level < self.mesh.level {
            return Err(Error::param(
                "level",
                format!("cannot prolong level {} to {level}", self.mesh.level),
            ));
        }
        let mut f = self.clone();
        while f.mesh.level < level {
            f = f.prolong();
        }
        Ok(f)
    }

    /// Nodal injection onto a coarser mesh (keeps the nodes shared by both).
    pub fn restrict_nodal(&self, level: u32) -> Result<PLFunction> {
        if level > self.mesh.level {
            return Err(Error::param(
                "level",
                format!("cannot restrict level {} to {level}", self.mesh.level),
            ));
        }
        let step = 1usize << (self.mesh.level - level);
        let mesh = Mesh::new(level)?;
        Ok(PLFunction {
            mesh,
            nodal: self.nodal.iter().step_by(step).copied().collect(),
        })
    }

    pub fn add(&self, other: &PLFunction) -> Result<PLFunction> {
        self.mesh.check_same(&other.mesh)?;
        Ok(PLFunction {
            mesh: self.mesh,
            nodal: self
                .nodal
                .iter()
                .zip(&other.nodal)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scale(&self, c: f64) -> PLFunction {
        PLFunction {
            mesh: self.mesh,
            nodal: self.nodal.iter().map(|a| c * a).collect(),
        }
    }

    pub fn sub(&self, other: &PLFunction) -> Result<PLFunction> {
        self.add(&other.scale(-1.0))
    }

    /// Exact cell averages on `mesh` (the operator `Q_n`). The target mesh may
    /// be coarser or finer than the function's own mesh.
    pub fn cell_average(&self, mesh: Mesh) -> PCFunction {
        let own = if mesh.level > self.mesh.level {
            self.prolong_to(mesh.level).expect("finer level")
        } else {
            self.clone()
        };
        let n = own.mesh.cells();
        let fine: Vec<f64> = (0..n)
            .map(|j| 0.5 * (own.nodal[j] + own.nodal[(j + 1) % n]))
            .collect();
        let ratio = n / mesh.cells();
        let cellvals = fine
            .chunks(ratio)
            .map(|c| c.iter().sum::<f64>() / ratio as f64)
            .collect();
        PCFunction { mesh, cellvals }
    }
}

/// Piecewise-constant function on the circle (the space PC(n)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PCFunction {
    mesh: Mesh,
    cellvals: Vec<f64>,
}

impl PCFunction {
    pub fn new(mesh: Mesh, cellvals: Vec<f64>) -> Result<Self> {
        if cellvals.len() != mesh.cells() {
            return Err(Error::Dimension {
                what: "cell values",
                expected: mesh.cells(),
                actual: cellvals.len(),
            });
        }
        Ok(PCFunction { mesh, cellvals })
    }

    pub fn constant(mesh: Mesh, c: f64) -> Self {
        PCFunction {
            mesh,
            cellvals: vec![c; mesh.cells()],
        }
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn cellvals(&self) -> &[f64] {
        &self.cellvals
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.cellvals[self.mesh.cell_of(x)]
    }

    pub fn integral(&self) -> f64 {
        self.cellvals.iter().sum::<f64>() / self.cellvals.len() as f64
    }
}

/// Cell averages of a PL function given by raw nodal values on its own mesh.
pub fn cell_average_nodal(nodal: &[f64]) -> Vec<f64> {
    let n = nodal.len();
    (0..n).map(|j| 0.5 * (nodal[j] + nodal[(j + 1) % n])).collect()
}

/// Exact weak derivative: `cellvals[j] = N (nodal[j+1] - nodal[j])`.
pub fn derivative(f: &PLFunction) -> PCFunction {
    let n = f.mesh.cells();
    let scale = n as f64;
    let cellvals = (0..n)
        .map(|j| scale * (f.nodal[(j + 1) % n] - f.nodal[j]))
        .collect();
    PCFunction {
        mesh: f.mesh,
        cellvals,
    }
}

/// `D_q f = D f + epsilon^q (∫ f) 1`.
pub fn apply_dq(f: &PLFunction, p: &PriorParams) -> PCFunction {
    let shift = p.eps_q() * f.mean();
    let mut d = derivative(f);
    d.cellvals.iter_mut().for_each(|c| *c += shift);
    d
}

/// Inverse of [`apply_dq`] on PL(n): the unique `u` with `D_q u = g`.
pub fn solve_dq(g: &PCFunction, p: &PriorParams) -> PLFunction {
    let n = g.mesh.cells();
    let gbar = g.integral();
    let h = g.mesh.width();
    // Integrate the mean-zero part, then fix the constant from the mean.
    let mut nodal = Vec::with_capacity(n);
    let mut acc = 0.0;
    for j in 0..n {
        nodal.push(acc);
        acc += (g.cellvals[j] - gbar) * h;
    }
    let m = nodal.iter().sum::<f64>() / n as f64;
    let target = gbar / p.eps_q();
    nodal.iter_mut().for_each(|x| *x += target - m);
    PLFunction { mesh: g.mesh, nodal }
}

/// Cell averages `N ∫_{K_j} f` of an arbitrary integrable function, by
/// Gauss–Legendre quadrature on each cell.
pub fn cell_average_fn(f: impl Fn(f64) -> f64, mesh: Mesh, rule: &GaussLegendre) -> PCFunction {
    let h = mesh.width();
    let cellvals = (0..mesh.cells())
        .map(|j| {
            let a = j as f64 * h;
            rule.integrate(a, a + h, &f) / h
        })
        .collect();
    PCFunction { mesh, cellvals }
}

/// Inner products available on PL(n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerKind {
    /// `⟨f, g⟩_{L²}`.
    L2,
    /// Cameron–Martin inner product of the edge prior:
    /// `(1/4ε)⟨f, g⟩_{L²} + ε⟨Df, Dg⟩_{L²}`.
    Hnu(PriorParams),
    /// `⟨D_q f, D_q g⟩_{L²}`.
    Dq(PriorParams),
}

/// Exact `∫ f g` for PL functions: Simpson's rule per cell (exact on quadratics).
pub fn l2_inner(f: &PLFunction, g: &PLFunction) -> Result<f64> {
    f.mesh.check_same(&g.mesh)?;
    let n = f.mesh.cells();
    let h = f.mesh.width();
    let mut s = 0.0;
    for j in 0..n {
        let k = (j + 1) % n;
        let (f0, f1) = (f.nodal[j], f.nodal[k]);
        let (g0, g1) = (g.nodal[j], g.nodal[k]);
        let fm = 0.5 * (f0 + f1);
        let gm = 0.5 * (g0 + g1);
        s += f0 * g0 + 4.0 * fm * gm + f1 * g1;
    }
    Ok(s * h / 6.0)
}

/// Exact `∫ f g` for PC functions.
pub fn l2_inner_pc(f: &PCFunction, g: &PCFunction) -> Result<f64> {
    f.mesh.check_same(&g.mesh)?;
    Ok(f.cellvals
        .iter()
        .zip(&g.cellvals)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * f.mesh.width())
}

/// Exact `∫ f g` for `f` in PL and `g` in PC on the same mesh.
pub fn l2_inner_pl_pc(f: &PLFunction, g: &PCFunction) -> Result<f64> {
    f.mesh.check_same(&g.mesh)?;
    let avg = f.cell_average(f.mesh);
    l2_inner_pc(&avg, g)
}

pub fn inner(f: &PLFunction, g: &PLFunction, kind: InnerKind) -> Result<f64> {
    match kind {
        InnerKind::L2 => l2_inner(f, g),
        InnerKind::Hnu(p) => {
            let e = p.epsilon();
            Ok(l2_inner(f, g)? / (4.0 * e) + e * l2_inner_pc(&derivative(f), &derivative(g))?)
        }
        InnerKind::Dq(p) => l2_inner_pc(&apply_dq(f, &p), &apply_dq(g, &p)),
    }
}

pub fn norm(f: &PLFunction, kind: InnerKind) -> f64 {
    inner(f, f, kind).expect("same mesh").max(0.0).sqrt()
}

/// Consistent mass matrix `M_ij = ⟨φ_i, φ_j⟩_{L²}` of the periodic hats.
pub fn mass_matrix(mesh: Mesh) -> DMatrix<f64> {
    let n = mesh.cells();
    let h = mesh.width();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let k = (j + 1) % n;
        m[(j, j)] += h / 3.0;
        m[(k, k)] += h / 3.0;
        m[(j, k)] += h / 6.0;
        m[(k, j)] += h / 6.0;
    }
    m
}

/// Stiffness matrix `K_ij = ⟨Dφ_i, Dφ_j⟩_{L²}` of the periodic hats.
pub fn stiffness_matrix(mesh: Mesh) -> DMatrix<f64> {
    let n = mesh.cells();
    let s = n as f64;
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        let l = (j + 1) % n;
        k[(j, j)] += s;
        k[(l, l)] += s;
        k[(j, l)] -= s;
        k[(l, j)] -= s;
    }
    k
}

/// Matrix `W` with `⟨f, g⟩_kind = nodal(f)ᵀ W nodal(g)` on PL(n).
pub fn gram_weight(mesh: Mesh, kind: InnerKind) -> DMatrix<f64> {
    match kind {
        InnerKind::L2 => mass_matrix(mesh),
        InnerKind::Hnu(p) => {
            let e = p.epsilon();
            mass_matrix(mesh) / (4.0 * e) + stiffness_matrix(mesh) * e
        }
        InnerKind::Dq(p) => {
            let n = mesh.cells();
            let w = p.eps_q() / n as f64;
            stiffness_matrix(mesh) + DMatrix::from_element(n, n, w * w)
        }
    }
}

/// Nodal values on level `fine` of the level-`coarse` hats, one per column.
pub fn prolongation_matrix(coarse: Mesh, fine: Mesh) -> Result<DMatrix<f64>> {
    if coarse.level > fine.level {
        return Err(Error::param("level", "coarse level exceeds fine level"));
    }
    let nc = coarse.cells();
    let nf = fine.cells();
    let mut p = DMatrix::zeros(nf, nc);
    for j in 0..nc {
        let hat = PLFunction::hat(coarse, j).prolong_to(fine.level)?;
        p.set_column(j, &DVector::from_column_slice(hat.nodal()));
    }
    Ok(p)
}

/// L²-orthogonal projection of `f ∈ PL(n)` onto PL(k), `k <= n`.
pub fn l2_project(f: &PLFunction, k: u32) -> Result<PLFunction> {
    if k > f.mesh.level {
        return Err(Error::param(
            "k",
            format!("projection level {k} exceeds function level {}", f.mesh.level),
        ));
    }
    let coarse = Mesh::new(k)?;
    let p = prolongation_matrix(coarse, f.mesh)?;
    let rhs = p.transpose() * (mass_matrix(f.mesh) * DVector::from_column_slice(f.nodal()));
    let chol = mass_matrix(coarse)
        .cholesky()
        .ok_or_else(|| Error::Numerical("mass matrix not SPD".into()))?;
    let x = chol.solve(&rhs);
    PLFunction::new(coarse, x.iter().copied().collect())
}

/// Truncated Fourier data of a PL function.
#[derive(Debug, Clone)]
pub struct FourierSummary {
    /// Band limit `J`; `coeffs[j + J]` holds `c_j` for `-J <= j <= J`.
    pub band: usize,
    pub coeffs: Vec<Complex64>,
    pub t: f64,
    /// `(Σ_{|j|<=J} (1 + 4π² j²)^t |c_j|²)^{1/2}`.
    pub sobolev_norm: f64,
}

impl FourierSummary {
    pub fn coeff(&self, j: i64) -> Complex64 {
        self.coeffs[(j + self.band as i64) as usize]
    }
}

/// Sobolev weight `(1 + 4π² j²)^t`.
pub fn sobolev_weight(j: i64, t: f64) -> f64 {
    (1.0 + 4.0 * PI * PI * (j * j) as f64).powf(t)
}

/// `(Σ_j (1 + 4π²j²)^t |c_j|²)^{1/2}` for coefficients indexed `-J..=J`.
pub fn sobolev_norm_from_coeffs(coeffs: &[Complex64], t: f64) -> f64 {
    let band = (coeffs.len() / 2) as i64;
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| sobolev_weight(i as i64 - band, t) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Fourier coefficients `c_j = ∫ f e^{-2πijx} dx` for `|j| <= band`, in
/// closed form: the nodal DFT times the hat transform `(1/N) sinc²(πj/N)`.
pub fn fourier_coefficients(f: &PLFunction, band: usize) -> Vec<Complex64> {
    let n = f.mesh.cells();
    let mut buf: Vec<Complex64> = f.nodal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let nf = n as f64;
    (-(band as i64)..=band as i64)
        .map(|j| {
            let idx = j.rem_euclid(n as i64) as usize;
            let arg = PI * j as f64 / nf;
            let sinc = if j == 0 { 1.0 } else { arg.sin() / arg };
            buf[idx] * (sinc * sinc / nf)
        })
        .collect()
}

/// Fourier coefficients for `|j| <= band` and the truncated `H^t` norm.
/// `band` defaults to `16 N` when `None`.
pub fn fourier_and_sobolev(f: &PLFunction, band: Option<usize>, t: f64) -> Result<FourierSummary> {
    let band = band.unwrap_or(16 * f.mesh.cells());
    if band < 1 {
        return Err(Error::param("band", "must be >= 1"));
    }
    let coeffs = fourier_coefficients(f, band);
    let sobolev_norm = sobolev_norm_from_coeffs(&coeffs, t);
    Ok(FourierSummary {
        band,
        coeffs,
        t,
        sobolev_norm,
    })
}
