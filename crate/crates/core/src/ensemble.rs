//! Deterministic operators of a single state and average operators over
//! large product ensembles.
//!
//! For a product of `N` copies, `(1/N) Σ_i A_i` acting on the ensemble state
//! leaves a residual `‖(Ā_op − Ā)|Ψ⟩‖ = √(Σ_g N_g ΔA_g²) / N`, because the
//! single-site deviations `ΔA |Ψ_⊥⟩_i` live on mutually orthogonal sites.
//! For identical copies this is `ΔA / √N`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{apply_local, c, cr, HermitianOperator, StateVector, C64};
use crate::rng::SeedStream;

/// Largest product-space dimension the brute-force oracles will build.
pub const ORACLE_DIM_LIMIT: usize = 1 << 14;

fn check_dims(a: &HermitianOperator, psi: &StateVector) -> Result<()> {
    if a.dim() != psi.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            found: psi.dim(),
        });
    }
    Ok(())
}

/// `‖Aψ − ⟨A⟩ψ‖` for normalized `ψ`, i.e. the uncertainty `ΔA`.
pub fn uncertainty(a: &HermitianOperator, psi: &StateVector) -> Result<f64> {
    Ok(decompose(a, psi)?.delta)
}

/// True when `psi` is an eigenstate of `a` up to `tol` (`ΔA <= tol`).
pub fn is_deterministic(a: &HermitianOperator, psi: &StateVector, tol: f64) -> Result<bool> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    Ok(uncertainty(a, psi)? <= tol)
}

/// Orthonormal basis of the orthogonal complement of `psi`.
fn complement_basis(psi: &StateVector) -> Result<Vec<StateVector>> {
    let d = psi.dim();
    let mut basis: Vec<StateVector> = vec![psi.normalize()?];
    // candidates in order of least overlap with psi, for conditioning
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| basis[0].amps()[i].norm().total_cmp(&basis[0].amps()[j].norm()));
    for k in order {
        if basis.len() == d {
            break;
        }
        let mut v = StateVector::basis(d, k);
        for _ in 0..2 {
            for b in &basis {
                let ov = b.inner(&v)?;
                v = v.add_scaled(-ov, b)?;
            }
        }
        if v.norm() > 1e-6 {
            basis.push(v.normalize()?);
        }
    }
    if basis.len() != d {
        return Err(Error::Invariant("failed to complete an orthonormal basis".into()));
    }
    basis.remove(0);
    Ok(basis)
}

fn outer(u: &StateVector, v: &StateVector) -> nalgebra::DMatrix<C64> {
    let (a, b) = (u.to_dvector(), v.to_dvector());
    &a * b.adjoint()
}

/// `(d−1)² + 1` linearly independent Hermitian operators that all have `psi`
/// as an eigenvector: the projector `|ψ⟩⟨ψ|` plus a real basis of Hermitian
/// operators supported on the orthogonal complement of `ψ` (which annihilate
/// `ψ`).
pub fn deterministic_basis(psi: &StateVector) -> Result<Vec<HermitianOperator>> {
    let d = psi.dim();
    if d < 2 {
        return Err(Error::InvalidParameter(format!(
            "deterministic basis needs dimension >= 2, got {d}"
        )));
    }
    let comp = complement_basis(psi)?;
    let mut ops = vec![HermitianOperator::projector(psi)?];
    for (k, u) in comp.iter().enumerate() {
        ops.push(HermitianOperator::new(outer(u, u))?);
        for w in &comp[k + 1..] {
            let uw = outer(u, w);
            let wu = outer(w, u);
            ops.push(HermitianOperator::new(&uw + &wu)?);
            ops.push(HermitianOperator::new((&uw - &wu) * c(0.0, -1.0))?);
        }
    }
    debug_assert_eq!(ops.len(), (d - 1) * (d - 1) + 1);
    Ok(ops)
}

/// `‖[A, B] ψ‖`
pub fn commute_on_state(a: &HermitianOperator, b: &HermitianOperator, psi: &StateVector) -> Result<f64> {
    check_dims(a, psi)?;
    check_dims(b, psi)?;
    let ab = a.apply(&b.apply(psi)?)?;
    let ba = b.apply(&a.apply(psi)?)?;
    Ok(ab.add_scaled(cr(-1.0), &ba)?.norm())
}

/// `A|ψ⟩ = Ā|ψ⟩ + ΔA|ψ_⊥⟩`
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub abar: f64,
    pub delta: f64,
    /// Unit vector orthogonal to `ψ`; `None` when `ψ` is an eigenstate.
    pub perp: Option<StateVector>,
}

/// Splits `A|ψ⟩` into its component along `ψ` and an orthogonal remainder.
pub fn decompose(a: &HermitianOperator, psi: &StateVector) -> Result<Decomposition> {
    check_dims(a, psi)?;
    let psi = psi.normalize()?;
    let a_psi = a.apply(&psi)?;
    let abar = psi.inner(&a_psi)?.re;
    let rest = a_psi.add_scaled(cr(-abar), &psi)?;
    let delta = rest.norm();
    let perp = if delta > 1e-12 {
        Some(rest.scale(cr(1.0 / delta)))
    } else {
        None
    };
    Ok(Decomposition { abar, delta, perp })
}

/// Groups of identically prepared particles.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    groups: Vec<(StateVector, u64)>,
}

impl EnsembleSpec {
    pub fn new(groups: Vec<(StateVector, u64)>) -> Result<Self> {
        let first = groups
            .first()
            .ok_or_else(|| Error::InvalidParameter("ensemble needs at least one group".into()))?;
        let d = first.0.dim();
        let mut normalized = Vec::with_capacity(groups.len());
        for (s, n) in groups {
            if s.dim() != d {
                return Err(Error::Dimension {
                    expected: d,
                    found: s.dim(),
                });
            }
            if n == 0 {
                return Err(Error::InvalidParameter("group counts must be >= 1".into()));
            }
            normalized.push((s.normalize()?, n));
        }
        Ok(Self { groups: normalized })
    }

    /// `n` copies of one state.
    pub fn identical(state: &StateVector, n: u64) -> Result<Self> {
        Self::new(vec![(state.clone(), n)])
    }

    pub fn groups(&self) -> &[(StateVector, u64)] {
        &self.groups
    }

    pub fn total(&self) -> u64 {
        self.groups.iter().map(|(_, n)| n).sum()
    }

    pub fn site_dim(&self) -> usize {
        self.groups[0].0.dim()
    }
}

/// Ensemble mean and residual norm of the average operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageResidual {
    pub abar: f64,
    pub residual: f64,
}

/// Closed form for `(1/N) Σ A_i` on the product state described by `spec`.
pub fn average_operator_residual(a: &HermitianOperator, spec: &EnsembleSpec) -> Result<AverageResidual> {
    let n = spec.total() as f64;
    let (mut mean_acc, mut var_acc) = (0.0, 0.0);
    for (state, count) in spec.groups() {
        let dec = decompose(a, state)?;
        mean_acc += *count as f64 * dec.abar;
        var_acc += *count as f64 * dec.delta * dec.delta;
    }
    Ok(AverageResidual {
        abar: mean_acc / n,
        residual: var_acc.sqrt() / n,
    })
}

/// Builds the full product state and `(1/N) Σ A_i` on it explicitly.
pub fn brute_force_average(a: &HermitianOperator, spec: &EnsembleSpec) -> Result<AverageResidual> {
    let d = spec.site_dim();
    if a.dim() != d {
        return Err(Error::Dimension {
            expected: a.dim(),
            found: d,
        });
    }
    let n = spec.total();
    let dim = (d as u128).checked_pow(n.min(u32::MAX as u64) as u32);
    match dim {
        Some(dim) if dim <= ORACLE_DIM_LIMIT as u128 => {}
        _ => {
            return Err(Error::TooLargeForOracle {
                dim: dim.unwrap_or(u128::MAX),
                limit: ORACLE_DIM_LIMIT,
            })
        }
    }
    let sites: Vec<&StateVector> = spec
        .groups()
        .iter()
        .flat_map(|(s, k)| std::iter::repeat_n(s, *k as usize))
        .collect();
    let mut psi = sites[0].clone();
    for s in &sites[1..] {
        psi = psi.tensor(s);
    }
    let dims = vec![d; sites.len()];
    let mut avg = StateVector::new(vec![cr(0.0); psi.dim()])?;
    for site in 0..sites.len() {
        let local = apply_local(&psi, &dims, site, a.matrix())?;
        avg = avg.add_scaled(cr(1.0 / n as f64), &local)?;
    }
    let abar = psi.inner(&avg)?.re;
    let residual = avg.add_scaled(cr(-abar), &psi)?.norm();
    Ok(AverageResidual { abar, residual })
}

/// Operator-norm scale of `[S̄_x, S̄_y] = i S̄_z / N` for `N` spin-½ particles,
/// with `S̄_a = (1/N) Σ σ_a/2`: `1/(2N)`.
pub fn average_spin_commutator(n: u64) -> f64 {
    assert!(n >= 1);
    0.5 / n as f64
}

/// Brute-force check of `[S̄_x, S̄_y] = i S̄_z / N` on `2^N` dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinCommutatorCheck {
    /// Largest entrywise `|[S̄_x, S̄_y] − i S̄_z/N|`.
    pub max_defect: f64,
    /// Largest `|entry|` of the commutator (it is diagonal, so this is its
    /// operator norm).
    pub scale: f64,
}

/// Largest spin count the brute-force commutator check accepts.
pub const SPIN_ORACLE_MAX: usize = 12;

pub fn brute_force_spin_commutator(n: usize) -> Result<SpinCommutatorCheck> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one spin".into()));
    }
    if n > SPIN_ORACLE_MAX {
        return Err(Error::TooLargeForOracle {
            dim: 1u128 << n.min(127),
            limit: 1 << SPIN_ORACLE_MAX,
        });
    }
    let half = cr(0.5);
    let sx = HermitianOperator::pauli_x().matrix() * half;
    let sy = HermitianOperator::pauli_y().matrix() * half;
    let sz = HermitianOperator::pauli_z().matrix() * half;
    let dims = vec![2usize; n];
    let dim = 1usize << n;
    let inv_n = cr(1.0 / n as f64);
    let average = |v: &StateVector, op: &nalgebra::DMatrix<C64>| -> Result<StateVector> {
        let mut acc = StateVector::new(vec![cr(0.0); dim])?;
        for site in 0..n {
            acc = acc.add_scaled(inv_n, &apply_local(v, &dims, site, op)?)?;
        }
        Ok(acc)
    };
    let columns: Vec<Result<(f64, f64)>> = (0..dim)
        .into_par_iter()
        .map(|k| {
            let e = StateVector::basis(dim, k);
            let xy = average(&average(&e, &sy)?, &sx)?;
            let yx = average(&average(&e, &sx)?, &sy)?;
            let comm = xy.add_scaled(cr(-1.0), &yx)?;
            let want = average(&e, &sz)?.scale(c(0.0, 1.0) * inv_n);
            let defect = comm.max_abs_diff(&want);
            let scale = comm.amps().iter().map(|z| z.norm()).fold(0.0, f64::max);
            Ok((defect, scale))
        })
        .collect();
    let mut out = SpinCommutatorCheck {
        max_defect: 0.0,
        scale: 0.0,
    };
    for col in columns {
        let (d, s) = col?;
        out.max_defect = out.max_defect.max(d);
        out.scale = out.scale.max(s);
    }
    Ok(out)
}

/// Mean ensemble average and residual under random single-particle
/// fluctuations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluctuationResult {
    pub abar: f64,
    pub residual: f64,
}

/// Each of `n` copies becomes `normalize(ψ + δψ_i)`, where every amplitude of
/// `δψ_i` has magnitude uniform in `[0, noise_scale]` and a uniform phase.
/// Returns the average over `trials` of the closed-form ensemble mean and
/// residual. Trial `t` uses stream `t` under `seed`.
pub fn fluctuation_robustness(
    a: &HermitianOperator,
    psi: &StateVector,
    noise_scale: f64,
    n: u64,
    trials: u64,
    seed: u64,
) -> Result<FluctuationResult> {
    check_dims(a, psi)?;
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise scale must be >= 0, got {noise_scale}"
        )));
    }
    if n == 0 || trials == 0 {
        return Err(Error::InvalidParameter("copies and trials must be >= 1".into()));
    }
    let psi = psi.normalize()?;
    let streams = SeedStream::new(seed);
    let per_trial: Vec<Result<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = streams.trial(t);
            let (mut mean_acc, mut var_acc) = (0.0, 0.0);
            for _ in 0..n {
                let copy = perturb(&psi, noise_scale, &mut rng)?;
                let dec = decompose(a, &copy)?;
                mean_acc += dec.abar;
                var_acc += dec.delta * dec.delta;
            }
            Ok((mean_acc / n as f64, var_acc.sqrt() / n as f64))
        })
        .collect();
    let (mut abar, mut residual) = (0.0, 0.0);
    for r in per_trial {
        let (m, res) = r?;
        abar += m;
        residual += res;
    }
    Ok(FluctuationResult {
        abar: abar / trials as f64,
        residual: residual / trials as f64,
    })
}

fn perturb<R: Rng + ?Sized>(psi: &StateVector, noise_scale: f64, rng: &mut R) -> Result<StateVector> {
    if noise_scale == 0.0 {
        return Ok(psi.clone());
    }
    let amps = psi
        .amps()
        .iter()
        .map(|z| {
            let r = noise_scale * rng.random::<f64>();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            z + C64::from_polar(r, theta)
        })
        .collect();
    StateVector::normalized(amps)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
