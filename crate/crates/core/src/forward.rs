//! Periodic convolution `Au(x) = ∫ κ(x - y) u(y) dy`, its discretization
//! `A_kn = 𝒦_k ∘ P_k ∘ A` on PL(n), and synthetic white-noise measurements.
//!
//! Measurement coordinates `𝒦_k` are taken in the L²-orthonormal hierarchical
//! basis of PL(k), so `‖m - A_kn u‖₂` equals the L² distance of the underlying
//! PL(k) functions.
//!
//! Assembly uses shift invariance. With line hats `h` (half-width `1/N`) and
//! `φ` (half-width `1/K`), `⟨A h_j, φ_i⟩ = G(x_i - x_j)` where
//! `G(s) = ∫ κ(z) c(z - s) dz` and `c(t) = ∫ h(y) φ(y + t) dy` is piecewise
//! cubic on the grid of spacing `1/max(N, K)`. `c` is evaluated exactly and the
//! `z` integral uses Gauss–Legendre per (sub)cell of that grid.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bases::HierarchicalBasis;
use crate::circle::{mass_matrix, prolongation_matrix, wrap, InnerKind, Mesh, PLFunction};
use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Images `|m| <= 5` kept in the periodized Gaussian.
const GAUSSIAN_IMAGES: i32 = 5;

/// Serializable kernel description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `κ(x) = Σ_{|m|<=5} φ_w(x + m)` with `φ_w` the centred normal density of
    /// standard deviation `width`.
    PeriodizedGaussian { width: f64 },
    /// Values at `x = i/T`, `i = 0..T`, interpolated linearly and periodically.
    CustomTable { values: Vec<f64> },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::PeriodizedGaussian { width: 0.03 }
    }
}

/// A mass-one periodic kernel.
#[derive(Debug, Clone)]
pub struct Kernel {
    spec: KernelSpec,
    scale: f64,
}

impl Kernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        let mut k = Kernel { spec, scale: 1.0 };
        let mass = match &k.spec {
            KernelSpec::PeriodizedGaussian { width } => {
                if !(width.is_finite() && *width > 0.0) {
                    return Err(Error::param("kernel.width", format!("must be > 0, got {width}")));
                }
                let cells = ((4.0 / width).ceil() as usize).max(64);
                let rule = GaussLegendre::new(8);
                let h = 1.0 / cells as f64;
                (0..cells)
                    .map(|c| {
                        let a = -0.5 + c as f64 * h;
                        rule.integrate(a, a + h, |x| k.eval_raw(x))
                    })
                    .sum::<f64>()
            }
            KernelSpec::CustomTable { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::param("kernel.values", "table must be non-empty and finite"));
                }
                values.iter().sum::<f64>() / values.len() as f64
            }
        };
        if !(mass > 0.0) {
            return Err(Error::param("kernel", format!("kernel mass must be positive, got {mass}")));
        }
        k.scale = 1.0 / mass;
        Ok(k)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    fn eval_raw(&self, x: f64) -> f64 {
        match &self.spec {
            KernelSpec::PeriodizedGaussian { width } => {
                let y = wrap(x);
                let norm = 1.0 / (width * (2.0 * std::f64::consts::PI).sqrt());
                (-GAUSSIAN_IMAGES..=GAUSSIAN_IMAGES)
                    .map(|m| {
                        let z = (y + m as f64) / width;
                        (-0.5 * z * z).exp()
                    })
                    .sum::<f64>()
                    * norm
            }
            KernelSpec::CustomTable { values } => {
                let t = values.len();
                let pos = wrap(x) * t as f64;
                let i = (pos.floor() as usize).min(t - 1);
                let s = pos - i as f64;
                (1.0 - s) * values[i] + s * values[(i + 1) % t]
            }
        }
    }

    /// Normalized kernel value at `x` (periodic).
    pub fn eval(&self, x: f64) -> f64 {
        self.scale * self.eval_raw(x)
    }

    /// Subdivisions of a grid cell of width `h` needed to resolve the kernel.
    fn subdivisions(&self, h: f64) -> usize {
        match &self.spec {
            KernelSpec::PeriodizedGaussian { width } => ((2.0 * h / width).ceil() as usize).max(1),
            KernelSpec::CustomTable { values } => ((h * values.len() as f64).ceil() as usize).max(1),
        }
    }
}

/// `c(t) = ∫ h_a(y) h_b(y + t) dy` for line hats of half-widths `a` and `b`,
/// exact (Simpson on each piece where the product is quadratic).
fn hat_correlation(a: f64, b: f64, t: f64) -> f64 {
    if t.abs() >= a + b {
        return 0.0;
    }
    let hat = |x: f64, w: f64| (1.0 - x.abs() / w).max(0.0);
    let mut pts = [-a, 0.0, a, -t - b, -t, -t + b];
    pts.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    let mut s = 0.0;
    let mut lo = -a;
    for &p in pts.iter() {
        let hi = p.clamp(-a, a);
        if hi > lo {
            let f = |y: f64| hat(y, a) * hat(y + t, b);
            let m = 0.5 * (lo + hi);
            s += (hi - lo) / 6.0 * (f(lo) + 4.0 * f(m) + f(hi));
            lo = hi;
        }
    }
    if a > lo {
        let f = |y: f64| hat(y, a) * hat(y + t, b);
        let m = 0.5 * (lo + a);
        s += (a - lo) / 6.0 * (f(lo) + 4.0 * f(m) + f(a));
    }
    s
}

/// `B_ij = ⟨A h_j^n, φ_i^k⟩_{L²}` (K × N) at Gauss order `order`.
fn hat_moments(kernel: &Kernel, n: Mesh, k: Mesh, order: usize) -> DMatrix<f64> {
    let nn = n.cells();
    let kk = k.cells();
    let nf = nn.max(kk);
    let a = 1.0 / nn as f64;
    let b = 1.0 / kk as f64;
    let h = 1.0 / nf as f64;
    let r = kernel.subdivisions(h);
    let hs = h / r as f64;
    let rule = GaussLegendre::new(order);
    let span = ((a + b) / h).round() as i64;
    let g: Vec<f64> = (0..nf)
        .map(|d| {
            let s = d as f64 * h;
            let mut acc = 0.0;
            for cell in -span..span {
                for sub in 0..r {
                    let lo = s + cell as f64 * h + sub as f64 * hs;
                    acc += rule.integrate(lo, lo + hs, |z| {
                        kernel.eval(z) * hat_correlation(a, b, z - s)
                    });
                }
            }
            acc
        })
        .collect();
    let (sk, sn) = (nf / kk, nf / nn);
    DMatrix::from_fn(kk, nn, |i, j| {
        let d = (i * sk) as i64 - (j * sn) as i64;
        g[d.rem_euclid(nf as i64) as usize]
    })
}

/// Isometry between PL(k) with the L² norm and `R^K`.
pub fn measurement_coords(k: u32) -> Result<HierarchicalBasis> {
    HierarchicalBasis::build(Mesh::new(k)?, InnerKind::L2)
}

/// `𝒦_k ∘ P_k` restricted to PL(n), as a `K × N` matrix on nodal values.
pub fn projection_matrix(n: u32, meas: &HierarchicalBasis) -> Result<DMatrix<f64>> {
    let mn = Mesh::new(n)?;
    let mk = meas.mesh();
    let fine = if mn.level() >= mk.level() { mn } else { mk };
    let pn = prolongation_matrix(mn, fine)?;
    let pk = prolongation_matrix(mk, fine)?;
    let cross = pk.transpose() * mass_matrix(fine) * pn;
    Ok(meas.columns().transpose() * cross)
}

/// The discretized forward map from nodal values of PL(n) to `𝒦_k` coordinates.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    n: u32,
    k: u32,
    a_mat: DMatrix<f64>,
    quad_order: usize,
    meas: HierarchicalBasis,
}

impl ForwardOperator {
    /// Wraps an arbitrary `K × N` matrix.
    pub fn from_matrix(n: u32, k: u32, a_mat: DMatrix<f64>) -> Result<Self> {
        let meas = measurement_coords(k)?;
        let (nn, kk) = (1usize << n, 1usize << k);
        if a_mat.shape() != (kk, nn) {
            return Err(Error::Dimension {
                what: "forward matrix rows",
                expected: kk,
                actual: a_mat.nrows(),
            });
        }
        Ok(ForwardOperator {
            n,
            k,
            a_mat,
            quad_order: 0,
            meas,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a_mat
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn measurement_basis(&self) -> &HierarchicalBasis {
        &self.meas
    }

    pub fn apply(&self, u: &PLFunction) -> Result<DVector<f64>> {
        if u.mesh().level() != self.n {
            return Err(Error::MeshMismatch {
                left: self.n,
                right: u.mesh().level(),
            });
        }
        Ok(&self.a_mat * DVector::from_column_slice(u.nodal()))
    }

    /// `P_k A u` as a function in PL(k).
    pub fn apply_function(&self, u: &PLFunction) -> Result<PLFunction> {
        self.meas.from_coords(&self.apply(u)?)
    }
}

/// Assembles `A_kn` at Gauss order `quad_order`, checking that order
/// `quad_order + 2` changes no entry by more than `1e-6`.
pub fn assemble_a(kernel: &Kernel, n: u32, k: u32, quad_order: usize) -> Result<ForwardOperator> {
    if quad_order < 2 {
        return Err(Error::param("quad_order", "must be at least 2"));
    }
    let mn = Mesh::new(n)?;
    let mk = Mesh::new(k)?;
    let b = hat_moments(kernel, mn, mk, quad_order);
    let b2 = hat_moments(kernel, mn, mk, quad_order + 2);
    let change = (&b - &b2).amax() * mk.cells() as f64;
    if change > 1e-6 {
        return Err(Error::QuadratureNotConverged { change });
    }
    let meas = measurement_coords(k)?;
    let a_mat = meas.columns().transpose() * b;
    Ok(ForwardOperator {
        n,
        k,
        a_mat,
        quad_order,
        meas,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    /// Reference to the truth signal (e.g. a file name).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Noisy data in `𝒦_k` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub k: u32,
    pub coeffs: Vec<f64>,
    pub sigma: f64,
    #[serde(default)]
    pub meta: MeasurementMeta,
}

impl Measurement {
    pub fn new(k: u32, coeffs: Vec<f64>, sigma: f64) -> Result<Self> {
        let m = Measurement {
            k,
            coeffs,
            sigma,
            meta: MeasurementMeta::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        Mesh::new(self.k)?;
        if self.coeffs.len() != 1usize << self.k {
            return Err(Error::Dimension {
                what: "measurement coefficients",
                expected: 1usize << self.k,
                actual: self.coeffs.len(),
            });
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::param("sigma", format!("must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let m: Measurement = crate::io::read_json(path)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

/// `coeffs = A_kn u_true + σ ξ` with `ξ ~ N(0, I_K)`.
pub fn synthesize<R: Rng + ?Sized>(
    u_true: &PLFunction,
    fop: &ForwardOperator,
    sigma: f64,
    rng: &mut R,
) -> Result<Measurement> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::param("sigma", format!("must be >= 0, got {sigma}")));
    }
    let clean = fop.apply(u_true)?;
    let coeffs = clean
        .iter()
        .map(|c| {
            let z: f64 = rng.sample(StandardNormal);
            c + sigma * z
        })
        .collect();
    Measurement::new(fop.k, coeffs, sigma)
}

/// [`synthesize`] with a ChaCha stream seeded from `seed`, recorded in `meta`.
pub fn synthesize_seeded(
    u_true: &PLFunction,
    fop: &ForwardOperator,
    sigma: f64,
    seed: u64,
) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = synthesize(u_true, fop, sigma, &mut rng)?;
    m.meta.seed = Some(seed);
    Ok(m)
}
