//! Level-nested orthonormal bases of PL(n), the change-of-basis matrix `S` and
//! the conditional covariance `C(v)` of the edge-adaptive Gaussian layer.
//!
//! Bases are built from the hierarchical hat generators (the constant, then
//! the new midpoint hats of each level from left to right) by Gram–Cholesky
//! orthonormalization: with Gram matrix `G = L Lᵀ` the basis is
//! `B = Gen · L⁻ᵀ`. Because `L⁻ᵀ` is upper triangular, column `j` of `B` only
//! involves generators `1..=j`, so the first `2^m` basis vectors span PL(m)
//! for every `m <= n`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::circle::{
    apply_dq, cell_average_nodal, gram_weight, stiffness_matrix, InnerKind, Mesh, PLFunction, PriorParams,
};
use crate::error::{Error, Result};

/// Nodal values (at level `mesh`) of the hierarchical generators, one per column.
pub fn hierarchical_generators(mesh: Mesh) -> DMatrix<f64> {
    let n = mesh.cells();
    let mut gen = DMatrix::zeros(n, n);
    gen.column_mut(0).fill(1.0);
    let mut col = 1;
    for m in 1..=mesh.level() {
        let nm = 1usize << m;
        for i in (1..nm).step_by(2) {
            let center = i as f64 / nm as f64;
            for j in 0..n {
                let x = mesh.node(j);
                let d = (x - center).abs();
                let d = d.min(1.0 - d);
                gen[(j, col)] = (1.0 - d * nm as f64).max(0.0);
            }
            col += 1;
        }
    }
    gen
}

fn gram_cholesky(gen: &DMatrix<f64>, gram: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = 0.5 * (&gram + gram.transpose());
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("Gram matrix of generators is not SPD".into()))?;
    let bt = chol
        .l()
        .solve_lower_triangular(&gen.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    Ok(bt.transpose())
}

/// Gram–Cholesky for `⟨D_q ·, D_q ·⟩`, done blockwise. The constant generator
/// has norm `ε^q` and `D` annihilates it, so the factor splits into
/// `f_1 = ε^{-q}` and the stiffness Cholesky of the mean-free hat generators.
/// Forming the full Gram matrix instead would mix scales `ε^{2q}` and `N²`.
fn dq_orthonormalize(mesh: Mesh, gen: &DMatrix<f64>, p: &PriorParams) -> Result<DMatrix<f64>> {
    let n = mesh.cells();
    let mut out = DMatrix::zeros(n, n);
    out.column_mut(0).fill(1.0 / p.eps_q());
    if n == 1 {
        return Ok(out);
    }
    let mut hats = gen.columns(1, n - 1).into_owned();
    for mut c in hats.column_iter_mut() {
        let mean = c.sum() / n as f64;
        c.add_scalar_mut(-mean);
    }
    let k = stiffness_matrix(mesh);
    let b = gram_cholesky(&hats, hats.transpose() * &k * &hats)?;
    out.columns_mut(1, n - 1).copy_from(&b);
    Ok(out)
}

/// Orthonormal basis of PL(n) under `kind`, stored as nodal columns.
#[derive(Debug, Clone)]
pub struct HierarchicalBasis {
    mesh: Mesh,
    kind: InnerKind,
    columns: DMatrix<f64>,
    weight: DMatrix<f64>,
}

impl HierarchicalBasis {
    pub fn build(mesh: Mesh, kind: InnerKind) -> Result<Self> {
        let gen = hierarchical_generators(mesh);
        let weight = gram_weight(mesh, kind);
        let mut columns = match kind {
            InnerKind::Dq(p) => dq_orthonormalize(mesh, &gen, &p)?,
            _ => gram_cholesky(&gen, &gen.transpose() * &weight * &gen)?,
        };
        for mut c in columns.column_iter_mut() {
            let scale = c.amax();
            if let Some(first) = c.iter().find(|x| x.abs() > 1e-12 * scale) {
                if *first < 0.0 {
                    c.neg_mut();
                }
            }
        }
        Ok(HierarchicalBasis {
            mesh,
            kind,
            columns,
            weight,
        })
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn kind(&self) -> InnerKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `N × N` matrix whose column `j` holds the nodal values of `b_j`.
    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// Gram weight `W` of the inner product on nodal vectors.
    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn vector(&self, j: usize) -> PLFunction {
        PLFunction::new(self.mesh, self.columns.column(j).iter().copied().collect())
            .expect("basis column length")
    }

    /// Coordinates of `f`: `c = Bᵀ W f`, the inverse of [`Self::from_coords`].
    pub fn coords(&self, f: &PLFunction) -> Result<DVector<f64>> {
        if f.mesh() != self.mesh {
            return Err(Error::MeshMismatch {
                left: self.mesh.level(),
                right: f.mesh().level(),
            });
        }
        Ok(self.coords_nodal(&DVector::from_column_slice(f.nodal())))
    }

    pub fn coords_nodal(&self, nodal: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            // `W = K + (ε^q/N)² 𝟏𝟏ᵀ`: the rank-one part vanishes in rounding
            // against `K` for small `ε^q`, so it is applied separately.
            InnerKind::Dq(p) => {
                let n = self.mesh.cells() as f64;
                let w = p.eps_q() / n;
                let k = stiffness_matrix(self.mesh);
                let mut c = self.columns.tr_mul(&(k * nodal));
                // `D f_1 = 0` exactly; the product above only carries rounding.
                c[0] = 0.0;
                let col_sums = self.columns.row_sum().transpose();
                c.axpy(w * w * nodal.sum(), &col_sums, 1.0);
                c
            }
            _ => self.columns.tr_mul(&(&self.weight * nodal)),
        }
    }

    pub fn from_coords(&self, c: &DVector<f64>) -> Result<PLFunction> {
        if c.len() != self.len() {
            return Err(Error::Dimension {
                what: "basis coordinates",
                expected: self.len(),
                actual: c.len(),
            });
        }
        PLFunction::new(self.mesh, (&self.columns * c).iter().copied().collect())
    }

    /// Writes the basis to the cache format (JSON header + LE column-major dump).
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = BasisHeader::from_basis(self);
        let w = BufWriter::new(File::create(path)?);
        binio::write_dump(w, &header, self.columns.as_slice())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let (header, data): (BasisHeader, _) = binio::read_dump(r, |h: &BasisHeader| h.rows * h.cols)?;
        let mesh = Mesh::new(header.n)?;
        if header.rows != mesh.cells() || header.cols != mesh.cells() {
            return Err(Error::Format("basis dump shape does not match level".into()));
        }
        let kind = header.kind()?;
        Ok(HierarchicalBasis {
            mesh,
            kind,
            columns: DMatrix::from_column_slice(header.rows, header.cols, &data),
            weight: gram_weight(mesh, kind),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BasisHeader {
    n: u32,
    kind: String,
    epsilon: Option<f64>,
    q: Option<f64>,
    rows: usize,
    cols: usize,
    layout: String,
}

impl BasisHeader {
    fn from_basis(b: &HierarchicalBasis) -> Self {
        let (kind, p) = kind_parts(b.kind);
        BasisHeader {
            n: b.mesh.level(),
            kind: kind.into(),
            epsilon: p.map(|p| p.epsilon()),
            q: p.map(|p| p.q()),
            rows: b.columns.nrows(),
            cols: b.columns.ncols(),
            layout: "column-major f64 little-endian".into(),
        }
    }

    fn kind(&self) -> Result<InnerKind> {
        let params = || match (self.epsilon, self.q) {
            (Some(e), Some(q)) => PriorParams::new(e, q),
            _ => Err(Error::Format("missing epsilon/q in basis header".into())),
        };
        match self.kind.as_str() {
            "L2" => Ok(InnerKind::L2),
            "Hnu" => Ok(InnerKind::Hnu(params()?)),
            "Dq" => Ok(InnerKind::Dq(params()?)),
            other => Err(Error::Format(format!("unknown basis kind {other}"))),
        }
    }
}

fn kind_parts(kind: InnerKind) -> (&'static str, Option<PriorParams>) {
    match kind {
        InnerKind::L2 => ("L2", None),
        InnerKind::Hnu(p) => ("Hnu", Some(p)),
        InnerKind::Dq(p) => ("Dq", Some(p)),
    }
}

/// Directory-backed cache of bases keyed by `(n, kind, epsilon, q)`.
#[derive(Debug, Clone)]
pub struct BasisCache {
    dir: PathBuf,
}

impl BasisCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(BasisCache { dir })
    }

    fn path(&self, mesh: Mesh, kind: InnerKind) -> PathBuf {
        let (k, p) = kind_parts(kind);
        let name = match p {
            Some(p) => format!(
                "basis_n{}_{}_e{:016x}_q{:016x}.bin",
                mesh.level(),
                k,
                p.epsilon().to_bits(),
                p.q().to_bits()
            ),
            None => format!("basis_n{}_{}.bin", mesh.level(), k),
        };
        self.dir.join(name)
    }

    pub fn get_or_build(&self, mesh: Mesh, kind: InnerKind) -> Result<HierarchicalBasis> {
        let path = self.path(mesh, kind);
        if path.exists() {
            if let Ok(b) = HierarchicalBasis::load(&path) {
                if b.kind == kind && b.mesh == mesh {
                    return Ok(b);
                }
            }
        }
        let b = HierarchicalBasis::build(mesh, kind)?;
        b.save(&path)?;
        Ok(b)
    }
}

/// Cell values of `D_q b_k` for every basis column (column `k`).
pub fn dq_columns(basis: &HierarchicalBasis, p: &PriorParams) -> DMatrix<f64> {
    let n = basis.len();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let d = apply_dq(&basis.vector(k), p);
        out.set_column(k, &DVector::from_column_slice(d.cellvals()));
    }
    out
}

/// Cell averages `Q_n b_k` for every basis column (column `k`).
pub fn cell_average_columns(basis: &HierarchicalBasis) -> DMatrix<f64> {
    let n = basis.len();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let col: Vec<f64> = basis.columns.column(k).iter().copied().collect();
        out.set_column(k, &DVector::from_vec(cell_average_nodal(&col)));
    }
    out
}

/// Change of basis `S_jk = ⟨D_q f_k, √N 1_{K_j}⟩_{L²}` from `{D_q f_k}` to the
/// normalized cell indicators. Orthogonal.
#[derive(Debug, Clone)]
pub struct SMatrix {
    entries: DMatrix<f64>,
    mesh: Mesh,
    params: PriorParams,
}

impl SMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn params(&self) -> PriorParams {
        self.params
    }
}

pub fn build_s(fbasis: &HierarchicalBasis, p: &PriorParams) -> Result<SMatrix> {
    match fbasis.kind() {
        InnerKind::Dq(bp) if bp == *p => {}
        _ => {
            return Err(Error::param(
                "fbasis",
                "S requires the D_q-orthonormal basis built with the same parameters",
            ))
        }
    }
    let n = fbasis.len();
    let entries = dq_columns(fbasis, p) / (n as f64).sqrt();
    Ok(SMatrix {
        entries,
        mesh: fbasis.mesh(),
        params: *p,
    })
}

/// Covariance of the `f`-coordinates of `U_n` given `V_n = v`.
#[derive(Debug, Clone)]
pub struct CondCovariance {
    vbar: Vec<f64>,
    c: DMatrix<f64>,
    l_diag: Vec<f64>,
    sqrt: DMatrix<f64>,
}

impl CondCovariance {
    /// Cell averages `Q_n v`.
    pub fn vbar(&self) -> &[f64] {
        &self.vbar
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `L_jj = (ε² + vbar_j²)⁻¹`.
    pub fn l_diag(&self) -> &[f64] {
        &self.l_diag
    }

    /// Symmetric root `C^{1/2} = Sᵀ diag(L^{1/2}) S`.
    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    /// `log det C = Σ_j log L_jj` (S is orthogonal).
    pub fn log_det(&self) -> f64 {
        self.l_diag.iter().map(|l| l.ln()).sum()
    }

    /// `log det C` from a Cholesky factorization of the assembled matrix.
    pub fn log_det_cholesky(&self) -> Result<f64> {
        let chol = self
            .c
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("C is not SPD".into()))?;
        Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }
}

/// Assembles `C(v)` from its defining integrals
/// `C_jk = ⟨(ε² + (Q_n v)²)⁻¹ D_q f_j, D_q f_k⟩` and checks it against the
/// factorization `Sᵀ diag(L) S`.
pub fn build_c(
    v: &PLFunction,
    fbasis: &HierarchicalBasis,
    s: &SMatrix,
    p: &PriorParams,
) -> Result<CondCovariance> {
    let mesh = fbasis.mesh();
    if v.mesh() != mesh || s.mesh != mesh {
        return Err(Error::MeshMismatch {
            left: mesh.level(),
            right: v.mesh().level(),
        });
    }
    let n = mesh.cells();
    let e2 = p.epsilon() * p.epsilon();
    let vbar = v.cell_average(mesh).cellvals().to_vec();
    let l_diag: Vec<f64> = vbar.iter().map(|b| 1.0 / (e2 + b * b)).collect();

    // Direct route: the L² integral over PC(n), cell by cell.
    let dq = dq_columns(fbasis, p);
    let h = mesh.width();
    let mut weighted = dq.clone();
    for (j, mut row) in weighted.row_iter_mut().enumerate() {
        row *= h * l_diag[j];
    }
    let direct = dq.tr_mul(&weighted);

    // Factorized route.
    let st = s.entries.transpose();
    let mut ls = s.entries.clone();
    for (j, mut row) in ls.row_iter_mut().enumerate() {
        row *= l_diag[j];
    }
    let factored = &st * &ls;
    let scale = direct.amax().max(1.0);
    let gap = (&direct - &factored).amax();
    if gap > 1e-10 * scale {
        return Err(Error::Numerical(format!(
            "C assembled directly and as SᵀLS differ by {gap:.3e}"
        )));
    }

    let mut rs = s.entries.clone();
    for (j, mut row) in rs.row_iter_mut().enumerate() {
        row *= l_diag[j].sqrt();
    }
    let sqrt = &st * rs;
    let c = 0.5 * (&factored + factored.transpose());
    debug_assert_eq!(c.nrows(), n);
    Ok(CondCovariance {
        vbar,
        c,
        l_diag,
        sqrt: 0.5 * (&sqrt + sqrt.transpose()),
    })
}
