//! The measuring device: a Gaussian pointer coupled impulsively to an
//! observable through `H = g(t) A ⊗ P_d`.
//!
//! After the coupling each eigenspace of `A` carries a copy of the pointer
//! shifted by `g·a_i`. Because every branch keeps the same width, any readout
//! density (with or without post-selection) is a finite, possibly signed,
//! mixture of normal densities of width `σ`:
//!
//! ```text
//! φ(q − m_i) φ(q − m_j) = O_ij · N(q; (m_i + m_j)/2, σ²),   O_ij = exp(−(m_i − m_j)² / 8σ²)
//! ```
//!
//! so densities, moments and CDFs are all evaluated in closed form. A grid is
//! only used to tabulate the inverse CDF for sampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hilbert::{HermitianOperator, StateVector, C64};

/// Number of grid points for inverse-CDF sampling.
pub const SAMPLING_GRID_POINTS: usize = 1 << 14;
/// Half-width of the sampling grid beyond the outermost pointer shift, in σ.
pub const SAMPLING_GRID_SIGMAS: f64 = 10.0;
/// Post-selection success probabilities below this are treated as zero.
pub const MIN_SUCCESS_PROB: f64 = 1e-300;
/// Branches whose Born weight falls below this are dropped by `couple`.
const NEGLIGIBLE_WEIGHT: f64 = 1e-28;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Pointer wavefunction whose position density is `N(mean, sigma²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPointer {
    sigma: f64,
    mean: f64,
}

impl GaussianPointer {
    pub fn new(sigma: f64, mean: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("pointer sigma must be > 0, got {sigma}")));
        }
        if !mean.is_finite() {
            return Err(Error::InvalidParameter(format!("pointer mean must be finite, got {mean}")));
        }
        Ok(Self { sigma, mean })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Real position-space amplitude `φ(q)`, with `φ² = N(mean, σ²)`.
    pub fn amplitude(&self, q: f64) -> f64 {
        self.density(q).sqrt()
    }

    pub fn density(&self, q: f64) -> f64 {
        normal_pdf(q, self.mean, self.sigma)
    }

    /// The same pointer translated by `shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            sigma: self.sigma,
            mean: self.mean + shift,
        }
    }

    /// `∫ φ_self φ_other dq` for two pointers of equal width.
    pub fn overlap(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.sigma, other.sigma);
        let d = self.mean - other.mean;
        (-d * d / (8.0 * self.sigma * self.sigma)).exp()
    }
}

fn normal_pdf(q: f64, mean: f64, sigma: f64) -> f64 {
    let z = (q - mean) / sigma;
    INV_SQRT_2PI / sigma * (-0.5 * z * z).exp()
}

fn normal_cdf(q: f64, mean: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(-(q - mean) / (sigma * std::f64::consts::SQRT_2))
}

/// One eigenspace branch of the coupled system–pointer state.
#[derive(Debug, Clone)]
pub struct PointerBranch {
    /// Eigenvalue `a_i` of the measured observable.
    pub eigenvalue: f64,
    /// Branch amplitude. `amplitude · state = P_i ψ`.
    pub amplitude: C64,
    /// Normalized system state of the branch (the eigenvector for a simple
    /// eigenvalue, the normalized projection for a degenerate one).
    pub state: StateVector,
    /// Pointer centred on `g·a_i`.
    pub pointer: GaussianPointer,
}

/// Entangled state `Σ_i α_i |a_i⟩ ⊗ |φ(q − g a_i)⟩` after the impulsive coupling.
#[derive(Debug, Clone)]
pub struct JointPointerState {
    terms: Vec<PointerBranch>,
    coupling: f64,
    sigma: f64,
    system_dim: usize,
}

impl JointPointerState {
    pub fn terms(&self) -> &[PointerBranch] {
        &self.terms
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    /// Pointer means `g·a_i` in branch order.
    pub fn means(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.pointer.mean()).collect()
    }

    /// `Σ |α_i|²`
    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|t| t.amplitude.norm_sqr()).sum()
    }

    /// Smallest distance between two pointer means, `+∞` with a single branch.
    pub fn min_separation(&self) -> f64 {
        let mut means = self.means();
        means.sort_by(f64::total_cmp);
        means.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Half-width of the sampling grid around the unshifted pointer.
    fn grid_half_width(&self) -> f64 {
        let max_shift = self
            .terms
            .iter()
            .map(|t| (self.coupling * t.eigenvalue).abs())
            .fold(0.0, f64::max);
        SAMPLING_GRID_SIGMAS * self.sigma + max_shift
    }
}

/// Couples `psi` to a fresh pointer (centred on 0, width `sigma`) through the
/// observable `a` with strength `g`. Degenerate eigenvalues merge into one
/// branch.
pub fn couple(
    psi: &StateVector,
    a: &HermitianOperator,
    g: f64,
    sigma: f64,
) -> Result<JointPointerState> {
    if psi.dim() != a.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            found: psi.dim(),
        });
    }
    if !g.is_finite() {
        return Err(Error::InvalidParameter(format!("coupling must be finite, got {g}")));
    }
    let ready = GaussianPointer::new(sigma, 0.0)?;
    let psi = psi.normalize()?;
    let mut terms = Vec::new();
    for space in a.eig().eigenspaces() {
        let (amplitude, state) = if space.basis.len() == 1 {
            let v = space.basis[0].clone();
            (v.inner(&psi)?, v)
        } else {
            let proj = space.project(&psi)?;
            let n = proj.norm();
            if n * n < NEGLIGIBLE_WEIGHT {
                continue;
            }
            (C64::new(n, 0.0), proj.scale(C64::new(1.0 / n, 0.0)))
        };
        if amplitude.norm_sqr() < NEGLIGIBLE_WEIGHT {
            continue;
        }
        terms.push(PointerBranch {
            eigenvalue: space.value,
            amplitude,
            state,
            pointer: ready.shifted(g * space.value),
        });
    }
    Ok(JointPointerState {
        terms,
        coupling: g,
        sigma,
        system_dim: psi.dim(),
    })
}

/// Pointer position density, represented exactly as a signed mixture of
/// normal densities that share one width.
#[derive(Debug, Clone)]
pub struct ReadoutDensity {
    /// `(weight, centre)`; weights sum to 1.
    components: Vec<(f64, f64)>,
    sigma: f64,
    success_prob: f64,
}

impl ReadoutDensity {
    /// Probability that the post-selection succeeds; 1 without post-selection.
    pub fn success_prob(&self) -> f64 {
        self.success_prob
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn components(&self) -> &[(f64, f64)] {
        &self.components
    }

    /// Normalized density `f(q)`.
    pub fn pdf(&self, q: f64) -> f64 {
        self.components
            .iter()
            .map(|&(w, m)| w * normal_pdf(q, m, self.sigma))
            .sum::<f64>()
            .max(0.0)
    }

    pub fn cdf(&self, q: f64) -> f64 {
        self.components
            .iter()
            .map(|&(w, m)| w * normal_cdf(q, m, self.sigma))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|&(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let second: f64 = self
            .components
            .iter()
            .map(|&(w, m)| w * (self.sigma * self.sigma + m * m))
            .sum();
        let mean = self.mean();
        second - mean * mean
    }
}

/// Pointer readout density, optionally conditioned on post-selecting the
/// system in `post`.
///
/// Without post-selection the branches add incoherently. With post-selection
/// the branch amplitudes `α_i⟨post|a_i⟩` interfere and `success_prob` is the
/// exact probability of the post-selection on the coupled state.
pub fn readout_density(j: &JointPointerState, post: Option<&StateVector>) -> Result<ReadoutDensity> {
    let sigma = j.sigma;
    let components: Vec<(f64, f64)>;
    let success_prob;
    match post {
        None => {
            let total = j.total_weight();
            components = j
                .terms
                .iter()
                .map(|t| (t.amplitude.norm_sqr() / total, t.pointer.mean()))
                .collect();
            success_prob = 1.0;
        }
        Some(post) => {
            if post.dim() != j.system_dim {
                return Err(Error::Dimension {
                    expected: j.system_dim,
                    found: post.dim(),
                });
            }
            let post = post.normalize()?;
            let coeffs: Vec<C64> = j
                .terms
                .iter()
                .map(|t| post.inner(&t.state).map(|ov| t.amplitude * ov))
                .collect::<Result<_>>()?;
            let mut raw = Vec::new();
            for (i, ti) in j.terms.iter().enumerate() {
                raw.push((coeffs[i].norm_sqr(), ti.pointer.mean()));
                for (k, tk) in j.terms.iter().enumerate().skip(i + 1) {
                    let w = 2.0 * (coeffs[i].conj() * coeffs[k]).re * ti.pointer.overlap(&tk.pointer);
                    raw.push((w, 0.5 * (ti.pointer.mean() + tk.pointer.mean())));
                }
            }
            let p: f64 = raw.iter().map(|&(w, _)| w).sum();
            if !(p >= MIN_SUCCESS_PROB) {
                return Err(Error::PostSelectionImpossible { probability: p.max(0.0) });
            }
            components = raw
                .into_iter()
                .filter(|&(w, _)| w != 0.0)
                .map(|(w, m)| (w / p, m))
                .collect();
            success_prob = p.min(1.0);
        }
    }
    Ok(ReadoutDensity {
        components,
        sigma,
        success_prob,
    })
}

/// Outcome of one readout attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reading {
    Accepted(f64),
    PostSelectionFailed,
}

impl Reading {
    pub fn value(self) -> Option<f64> {
        match self {
            Reading::Accepted(q) => Some(q),
            Reading::PostSelectionFailed => None,
        }
    }
}

/// Tabulated inverse CDF of a readout density, reusable across many draws.
#[derive(Debug, Clone)]
pub struct ReadoutSampler {
    density: ReadoutDensity,
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl ReadoutSampler {
    pub fn new(j: &JointPointerState, post: Option<&StateVector>) -> Result<Self> {
        let density = readout_density(j, post)?;
        let half = j.grid_half_width();
        let n = SAMPLING_GRID_POINTS;
        let step = 2.0 * half / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|k| -half + step * k as f64).collect();
        let mut cdf: Vec<f64> = grid.iter().map(|&x| density.cdf(x)).collect();
        let (lo, hi) = (cdf[0], cdf[n - 1]);
        let mut running = 0.0f64;
        for v in &mut cdf {
            running = running.max((*v - lo) / (hi - lo));
            *v = running.min(1.0);
        }
        Ok(Self { density, grid, cdf })
    }

    pub fn density(&self) -> &ReadoutDensity {
        &self.density
    }

    /// Bernoulli post-selection draw, then an inverse-CDF position draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Reading {
        if !rng.random_bool(self.density.success_prob.clamp(0.0, 1.0)) {
            return Reading::PostSelectionFailed;
        }
        Reading::Accepted(self.inverse_cdf(rng.random::<f64>()))
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&v| v < u);
        if k == 0 {
            return self.grid[0];
        }
        if k >= self.cdf.len() {
            return self.grid[self.grid.len() - 1];
        }
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let (x0, x1) = (self.grid[k - 1], self.grid[k]);
        if c1 > c0 {
            x0 + (u - c0) / (c1 - c0) * (x1 - x0)
        } else {
            x1
        }
    }
}

/// Draws one pointer reading, conditioned on post-selection when `post` is
/// given.
pub fn sample_reading<R: Rng + ?Sized>(
    j: &JointPointerState,
    post: Option<&StateVector>,
    rng: &mut R,
) -> Result<Reading> {
    Ok(ReadoutSampler::new(j, post)?.draw(rng))
}

/// Index (into `j.terms()`) of the branch whose pointer mean is closest to
/// `q`. Only meaningful when the pointer means are separated by more than 6σ.
pub fn classify_strong(q: f64, j: &JointPointerState) -> Result<usize> {
    let separation = j.min_separation();
    let six_sigma = 6.0 * j.sigma;
    if !(separation > six_sigma) {
        return Err(Error::NotInStrongRegime {
            separation,
            six_sigma,
        });
    }
    j.terms
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (q - a.pointer.mean())
                .abs()
                .total_cmp(&(q - b.pointer.mean()).abs())
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Invariant("joint state has no branches".into()))
}
