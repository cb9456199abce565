//! Dense finite-dimensional complex linear algebra: pure states, Hermitian
//! observables, density matrices, tensor products and partial traces.
//!
//! Tensor products are row-major: for `a ⊗ b` the combined index is
//! `i_a * dim(b) + i_b`. Multi-factor index maps (`apply_local`,
//! `DensityMatrix::partial_trace`) follow the same convention with the first
//! factor varying slowest.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance for identities that hold exactly in exact arithmetic.
pub const EXACT_TOL: f64 = 1e-12;
/// Tolerance for eigensolver outputs.
pub const EIGEN_TOL: f64 = 1e-10;

/// Relative gap below which two eigenvalues are treated as one.
const DEGENERACY_TOL: f64 = 1e-9;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

/// Complex amplitude vector. Not necessarily normalized; `normalize` and
/// `StateVector::normalized` produce unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    /// Wraps raw amplitudes without normalizing.
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::Invariant("state dimension must be >= 1".into()));
        }
        Ok(Self { amps })
    }

    /// Wraps amplitudes and rescales them to unit norm.
    pub fn normalized(amps: Vec<C64>) -> Result<Self> {
        Self::new(amps)?.normalize()
    }

    pub fn from_real(amps: &[f64]) -> Result<Self> {
        Self::new(amps.iter().map(|&x| cr(x)).collect())
    }

    /// Computational basis vector `|k⟩` in dimension `dim`.
    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index {k} out of range for dimension {dim}");
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[k] = cr(1.0);
        Self { amps }
    }

    /// `(|0⟩ + |1⟩)/√2`
    pub fn plus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self { amps: vec![cr(h), cr(h)] }
    }

    /// `(|0⟩ − |1⟩)/√2`
    pub fn minus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self { amps: vec![cr(h), cr(-h)] }
    }

    /// Random unit vector, uniform on the sphere (normal components).
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        assert!(dim >= 1);
        loop {
            let amps: Vec<C64> = (0..dim)
                .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            if let Ok(s) = Self::normalized(amps) {
                return s;
            }
        }
    }

    pub(crate) fn from_dvector(v: &DVector<C64>) -> Self {
        Self {
            amps: v.iter().copied().collect(),
        }
    }

    pub(crate) fn to_dvector(&self) -> DVector<C64> {
        DVector::from_column_slice(&self.amps)
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amps(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amps(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Invariant(format!("cannot normalize a vector of norm {n}")));
        }
        Ok(self.scale(cr(1.0 / n)))
    }

    pub fn scale(&self, z: C64) -> Self {
        Self {
            amps: self.amps.iter().map(|a| a * z).collect(),
        }
    }

    /// `self + z·other`
    pub fn add_scaled(&self, z: C64, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self {
            amps: self.amps.iter().zip(&other.amps).map(|(a, b)| a + z * b).collect(),
        })
    }

    /// `⟨self|other⟩`, conjugate-linear in `self`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    /// Row-major Kronecker product; `self` indexes slowest.
    pub fn tensor(&self, other: &Self) -> Self {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Self { amps }
    }

    /// Largest entrywise distance to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Free-function form of [`StateVector::tensor`].
pub fn tensor(a: &StateVector, b: &StateVector) -> StateVector {
    a.tensor(b)
}

/// Free-function form of [`StateVector::inner`].
pub fn inner(a: &StateVector, b: &StateVector) -> Result<C64> {
    a.inner(b)
}

fn hermiticity_defect(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Complex Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    m: DMatrix<C64>,
}

impl HermitianOperator {
    /// Validates Hermiticity within [`EXACT_TOL`], then symmetrizes exactly.
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Invariant(format!(
                "operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::Invariant("operator dimension must be >= 1".into()));
        }
        let defect = hermiticity_defect(&m);
        if !(defect <= EXACT_TOL) {
            return Err(Error::Invariant(format!(
                "matrix is not Hermitian (max |M - M^dagger| = {defect:e})"
            )));
        }
        let h = (&m + m.adjoint()) * cr(0.5);
        Ok(Self { m: h })
    }

    /// Row-major entries.
    pub fn from_rows(dim: usize, entries: &[C64]) -> Result<Self> {
        check_dim(dim * dim, entries.len())?;
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        let d: Vec<C64> = diag.iter().map(|&x| cr(x)).collect();
        Self::new(DMatrix::from_diagonal(&DVector::from_vec(d)))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn pauli_x() -> Self {
        Self {
            m: DMatrix::from_row_slice(2, 2, &[cr(0.0), cr(1.0), cr(1.0), cr(0.0)]),
        }
    }

    pub fn pauli_y() -> Self {
        Self {
            m: DMatrix::from_row_slice(2, 2, &[cr(0.0), c(0.0, -1.0), c(0.0, 1.0), cr(0.0)]),
        }
    }

    pub fn pauli_z() -> Self {
        Self {
            m: DMatrix::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(-1.0)]),
        }
    }

    /// `|v⟩⟨v|` for the normalized direction of `v`.
    pub fn projector(v: &StateVector) -> Result<Self> {
        let u = v.normalize()?.to_dvector();
        Ok(Self { m: &u * u.adjoint() })
    }

    /// Random Hermitian matrix `(G + G†)/2` with complex normal `G`.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let g = DMatrix::from_fn(dim, dim, |_, _| {
            c(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        Self {
            m: (&g + g.adjoint()) * cr(0.5),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn scaled(&self, x: f64) -> Self {
        Self { m: &self.m * cr(x) }
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self { m: &self.m + &other.m })
    }

    /// `Σ w_k A_k` with real weights; the result stays Hermitian.
    pub fn linear_combination(terms: &[(f64, &Self)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty linear combination".into()))?;
        let mut m = DMatrix::zeros(first.dim(), first.dim());
        for (w, a) in terms {
            check_dim(first.dim(), a.dim())?;
            m += &a.m * cr(*w);
        }
        Ok(Self { m })
    }

    /// `A|ψ⟩`, unnormalized.
    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        check_dim(self.dim(), psi.dim())?;
        Ok(StateVector::from_dvector(&(&self.m * psi.to_dvector())))
    }

    /// `⟨ψ|A|ψ⟩ / ⟨ψ|ψ⟩`, real for Hermitian `A`.
    pub fn expectation(&self, psi: &StateVector) -> Result<f64> {
        let num = psi.inner(&self.apply(psi)?)?;
        Ok(num.re / psi.norm_sqr())
    }

    /// `[A, B] = AB − BA` as a plain matrix (anti-Hermitian).
    pub fn commutator(&self, other: &Self) -> Result<DMatrix<C64>> {
        check_dim(self.dim(), other.dim())?;
        Ok(&self.m * &other.m - &other.m * &self.m)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (&self.m - &other.m).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn eig(&self) -> Spectrum {
        eigen_of(self.m.clone())
    }
}

/// Ascending eigenvalues with matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<StateVector>,
}

/// One eigenvalue together with an orthonormal basis of its eigenspace.
#[derive(Debug, Clone)]
pub struct Eigenspace {
    pub value: f64,
    pub basis: Vec<StateVector>,
}

impl Eigenspace {
    /// Orthogonal projection `P ψ` onto this eigenspace.
    pub fn project(&self, psi: &StateVector) -> Result<StateVector> {
        let mut out = StateVector::new(vec![cr(0.0); psi.dim()])?;
        for v in &self.basis {
            out = out.add_scaled(v.inner(psi)?, v)?;
        }
        Ok(out)
    }

    /// Eigenprojector as a Hermitian operator.
    pub fn projector(&self) -> HermitianOperator {
        let d = self.basis[0].dim();
        let mut m = DMatrix::zeros(d, d);
        for v in &self.basis {
            let u = v.to_dvector();
            m += &u * u.adjoint();
        }
        HermitianOperator { m }
    }
}

impl Spectrum {
    /// Groups numerically equal eigenvalues (relative gap below 1e-9).
    pub fn eigenspaces(&self) -> Vec<Eigenspace> {
        let scale = self.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut out: Vec<Eigenspace> = Vec::new();
        for (&value, v) in self.values.iter().zip(&self.vectors) {
            match out.last_mut() {
                Some(last) if (value - last.value).abs() <= DEGENERACY_TOL * scale => {
                    last.basis.push(v.clone());
                }
                _ => out.push(Eigenspace {
                    value,
                    basis: vec![v.clone()],
                }),
            }
        }
        // representative value: mean over the merged cluster
        let mut idx = 0;
        for space in &mut out {
            let k = space.basis.len();
            space.value = self.values[idx..idx + k].iter().sum::<f64>() / k as f64;
            idx += k;
        }
        out
    }
}

fn eigen_of(m: DMatrix<C64>) -> Spectrum {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let col = eig.eigenvectors.column(k).into_owned();
            fix_phase(StateVector::from_dvector(&col))
        })
        .collect();
    Spectrum { values, vectors }
}

/// Rotates the global phase so the first non-negligible amplitude is real and
/// positive, which makes eigenvectors comparable across runs.
fn fix_phase(v: StateVector) -> StateVector {
    let pivot = v.amps.iter().find(|a| a.norm() > 1e-8).copied();
    match pivot {
        Some(p) => v.scale(p.conj() / p.norm()),
        None => v,
    }
}

/// Eigendecomposition of a Hermitian matrix given as raw entries.
pub fn eig_hermitian(m: &DMatrix<C64>) -> Result<Spectrum> {
    Ok(HermitianOperator::new(m.clone())?.eig())
}

/// Applies a single-factor operator `op` to factor `site` of a product space
/// with factor dimensions `dims`.
pub fn apply_local(
    psi: &StateVector,
    dims: &[usize],
    site: usize,
    op: &DMatrix<C64>,
) -> Result<StateVector> {
    let total: usize = dims.iter().product();
    check_dim(total, psi.dim())?;
    if site >= dims.len() {
        return Err(Error::InvalidParameter(format!(
            "site {site} out of range for {} factors",
            dims.len()
        )));
    }
    let d = dims[site];
    check_dim(d, op.nrows())?;
    check_dim(d, op.ncols())?;
    let inner_stride: usize = dims[site + 1..].iter().product();
    let outer = total / (d * inner_stride);
    let mut out = vec![cr(0.0); total];
    let src = psi.amps();
    for o in 0..outer {
        for r in 0..inner_stride {
            let base = o * d * inner_stride + r;
            for i in 0..d {
                let mut acc = cr(0.0);
                for j in 0..d {
                    let a = op[(i, j)];
                    if a != cr(0.0) {
                        acc += a * src[base + j * inner_stride];
                    }
                }
                out[base + i * inner_stride] = acc;
            }
        }
    }
    StateVector::new(out)
}

/// Unit-trace positive semidefinite Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: DMatrix<C64>,
}

impl DensityMatrix {
    /// Checks Hermiticity and unit trace within 1e-12 and eigenvalues
    /// `>= -1e-10`.
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        let h = HermitianOperator::new(m)?;
        let tr = h.m.trace();
        if (tr - cr(1.0)).norm() > EXACT_TOL {
            return Err(Error::Invariant(format!("density matrix trace is {tr}, expected 1")));
        }
        let min = h.eig().values.first().copied().unwrap_or(0.0);
        if min < -EIGEN_TOL {
            return Err(Error::Invariant(format!(
                "density matrix has negative eigenvalue {min:e}"
            )));
        }
        Ok(Self { m: h.m })
    }

    /// `|ψ⟩⟨ψ|` for the normalized direction of `psi`.
    pub fn from_pure(psi: &StateVector) -> Result<Self> {
        Ok(Self {
            m: HermitianOperator::projector(psi)?.m,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    /// Traces out every factor not listed in `keep`. Kept factors appear in
    /// ascending index order in the result.
    pub fn partial_trace(&self, dims: &[usize], keep: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidParameter("factor dimensions must be >= 1".into()));
        }
        let total: usize = dims.iter().product();
        check_dim(self.dim(), total)?;
        let mut kept = keep.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if let Some(&bad) = kept.iter().find(|&&k| k >= dims.len()) {
            return Err(Error::InvalidParameter(format!(
                "factor {bad} out of range for {} factors",
                dims.len()
            )));
        }
        let kept_dim: usize = kept.iter().map(|&k| dims[k]).product();
        let traced_dim = total / kept_dim;

        // split every full index into (kept index, traced index)
        let mut split = Vec::with_capacity(total);
        let mut digits = vec![0usize; dims.len()];
        for _ in 0..total {
            let (mut ki, mut ti) = (0usize, 0usize);
            for (f, &dg) in digits.iter().enumerate() {
                if kept.binary_search(&f).is_ok() {
                    ki = ki * dims[f] + dg;
                } else {
                    ti = ti * dims[f] + dg;
                }
            }
            split.push((ki, ti));
            for f in (0..dims.len()).rev() {
                digits[f] += 1;
                if digits[f] < dims[f] {
                    break;
                }
                digits[f] = 0;
            }
        }
        let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::new(); traced_dim];
        for (full, &(ki, ti)) in split.iter().enumerate() {
            groups[ti].push((ki, full));
        }
        let mut out = DMatrix::zeros(kept_dim, kept_dim);
        for group in &groups {
            for &(r, fr) in group {
                for &(col, fc) in group {
                    out[(r, col)] += self.m[(fr, fc)];
                }
            }
        }
        Ok(Self { m: out })
    }
}
