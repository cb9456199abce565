//! Two-time decoherence of a single qubit measurement recorded by a
//! many-particle environment, partial collapse of that environment, and the
//! robustness ratio that decides whether a final boundary condition still
//! reconstructs the original pointer reading.
//!
//! The microscopic particle and the pointer are qubits (`|1⟩, |2⟩` and
//! `|I⟩, |II⟩` are basis states 0 and 1). Every environment particle is a
//! qubit: branch I records `ε₁ = |0⟩`, branch II records
//! `ε₂ = c|0⟩ + √(1−c²)|1⟩`, so the two N-particle records overlap by `c^N`.
//! Exponentially large or small quantities are evaluated in the log domain.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hilbert::{apply_local, cr, DensityMatrix, StateVector, C64};
use crate::rng::SeedStream;

/// Default robustness ratio above which a record counts as classical.
pub const DEFAULT_CLASSICAL_THRESHOLD: f64 = 1e6;
/// Largest total dimension `2^(N+2)` the brute-force oracle builds.
pub const ORACLE_DIM_LIMIT: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchLabel {
    I,
    II,
}

impl BranchLabel {
    pub fn index(self) -> usize {
        match self {
            BranchLabel::I => 0,
            BranchLabel::II => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            BranchLabel::I => BranchLabel::II,
            BranchLabel::II => BranchLabel::I,
        }
    }
}

/// How the collapse overlaps enter the robustness ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatioForm {
    /// Probabilities: every overlap enters squared.
    #[default]
    Squared,
    /// Collapse overlaps enter unsquared, the environment overlap squared.
    Literal,
}

/// Per-particle collapse overlaps, either one value for every collapsed
/// particle or one value each.
#[derive(Debug, Clone, PartialEq)]
pub enum Gammas {
    Uniform(f64),
    PerParticle(Vec<f64>),
}

impl Gammas {
    fn get(&self, j: usize) -> f64 {
        match self {
            Gammas::Uniform(g) => *g,
            Gammas::PerParticle(v) => v[j],
        }
    }

    /// `Σ_j ln γ_j` over `n` collapsed particles.
    fn sum_ln(&self, n: u64) -> f64 {
        match self {
            Gammas::Uniform(g) => {
                if n == 0 {
                    0.0
                } else {
                    n as f64 * g.ln()
                }
            }
            Gammas::PerParticle(v) => v.iter().map(|g| g.ln()).sum(),
        }
    }

    fn check(&self, n: u64, name: &str, allow_zero: bool) -> Result<()> {
        if let Gammas::PerParticle(v) = self {
            if v.len() as u64 != n {
                return Err(Error::InvalidParameter(format!(
                    "{name} has {} entries but {n} particles collapse",
                    v.len()
                )));
            }
        }
        let count = match self {
            Gammas::Uniform(_) => n.min(1) as usize,
            Gammas::PerParticle(v) => v.len(),
        };
        for j in 0..count {
            let g = self.get(j);
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidParameter(format!("{name}[{j}] = {g} outside [0, 1]")));
            }
            if g == 0.0 && !allow_zero {
                return Err(Error::OrthogonalCollapseForbidden { index: j });
            }
        }
        Ok(())
    }
}

/// Parameters of the measurement-plus-environment scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessModel {
    alpha: C64,
    beta: C64,
    env_n: u64,
    overlap_c: f64,
    collapse_n: u64,
    gamma1: Gammas,
    gamma2: Gammas,
    form: RatioForm,
}

impl RobustnessModel {
    /// Uncollapsed model: particle `α|1⟩ + β|2⟩`, `env_n` environment
    /// particles with per-particle overlap `overlap_c`.
    pub fn new(alpha: C64, beta: C64, env_n: u64, overlap_c: f64) -> Result<Self> {
        let norm = alpha.norm_sqr() + beta.norm_sqr();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(format!("|alpha|^2 + |beta|^2 = {norm}, expected 1")));
        }
        if env_n == 0 {
            return Err(Error::InvalidParameter("environment needs at least one particle".into()));
        }
        if !(0.0..1.0).contains(&overlap_c) {
            return Err(Error::InvalidParameter(format!(
                "per-particle overlap must lie in [0, 1), got {overlap_c}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            env_n,
            overlap_c,
            collapse_n: 0,
            gamma1: Gammas::Uniform(1.0),
            gamma2: Gammas::Uniform(1.0),
            form: RatioForm::Squared,
        })
    }

    /// Real amplitudes `√p, √(1−p)` for branch-I probability `p`.
    pub fn with_branch_probability(p: f64, env_n: u64, overlap_c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
        }
        Self::new(cr(p.sqrt()), cr((1.0 - p).sqrt()), env_n, overlap_c)
    }

    /// Collapses `n < N` environment particles with overlaps
    /// `|⟨C₁|ε₁⟩| = γ₁`, `|⟨C₂|ε₁⟩| = γ₂`.
    pub fn with_collapse(mut self, n: u64, gamma1: Gammas, gamma2: Gammas) -> Result<Self> {
        if n >= self.env_n {
            return Err(Error::InvalidParameter(format!(
                "collapsed count {n} must stay below the environment size {}",
                self.env_n
            )));
        }
        gamma1.check(n, "gamma1", false)?;
        gamma2.check(n, "gamma2", true)?;
        self.collapse_n = n;
        self.gamma1 = gamma1;
        self.gamma2 = gamma2;
        Ok(self)
    }

    pub fn with_form(mut self, form: RatioForm) -> Self {
        self.form = form;
        self
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }

    pub fn beta(&self) -> C64 {
        self.beta
    }

    pub fn env_n(&self) -> u64 {
        self.env_n
    }

    pub fn overlap_c(&self) -> f64 {
        self.overlap_c
    }

    pub fn collapse_n(&self) -> u64 {
        self.collapse_n
    }

    pub fn gamma1(&self) -> &Gammas {
        &self.gamma1
    }

    pub fn gamma2(&self) -> &Gammas {
        &self.gamma2
    }

    pub fn form(&self) -> RatioForm {
        self.form
    }

    fn amplitude(&self, label: BranchLabel) -> C64 {
        match label {
            BranchLabel::I => self.alpha,
            BranchLabel::II => self.beta,
        }
    }

    fn env_qubit(&self, label: BranchLabel) -> [C64; 2] {
        env_qubit(label, self.overlap_c)
    }

    /// `ln |⟨ε₁(N)|ε₂(N)⟩| = N ln c`
    pub fn log_env_overlap(&self) -> f64 {
        log_pow(self.overlap_c, self.env_n)
    }

    pub fn env_overlap(&self) -> f64 {
        self.log_env_overlap().exp()
    }
}

fn env_qubit(label: BranchLabel, c: f64) -> [C64; 2] {
    match label {
        BranchLabel::I => [cr(1.0), cr(0.0)],
        BranchLabel::II => [cr(c), cr((1.0 - c * c).sqrt())],
    }
}

/// `k ln x` with `0·ln 0 = 0`.
fn log_pow(x: f64, k: u64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * x.ln()
    }
}

/// `count` identical qubits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductEnvironment {
    pub qubit: [C64; 2],
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchState {
    pub label: BranchLabel,
    /// Particle basis index (`|1⟩ → 0`, `|2⟩ → 1`).
    pub particle: usize,
    pub pointer: BranchLabel,
    pub environment: ProductEnvironment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchTerm {
    pub amplitude: C64,
    pub state: BranchState,
}

/// The decohered state `α|1⟩|I⟩|ε₁⟩ + β|2⟩|II⟩|ε₂⟩`. Branches with zero
/// amplitude are omitted.
pub fn forward_chain(model: &RobustnessModel) -> Vec<BranchTerm> {
    [BranchLabel::I, BranchLabel::II]
        .into_iter()
        .filter(|&l| model.amplitude(l).norm_sqr() > 0.0)
        .map(|label| BranchTerm {
            amplitude: model.amplitude(label),
            state: BranchState {
                label,
                particle: label.index(),
                pointer: label,
                environment: ProductEnvironment {
                    qubit: model.env_qubit(label),
                    count: model.env_n,
                },
            },
        })
        .collect()
}

fn check_oracle_size(env_n: u64) -> Result<usize> {
    let dim = 1u128.checked_shl((env_n + 2).min(127) as u32).unwrap_or(u128::MAX);
    if env_n + 2 > 127 || dim > ORACLE_DIM_LIMIT as u128 {
        return Err(Error::TooLargeForOracle {
            dim,
            limit: ORACLE_DIM_LIMIT,
        });
    }
    Ok(env_n as usize)
}

fn qubit_state(q: [C64; 2]) -> StateVector {
    StateVector::new(q.to_vec()).expect("qubit has two amplitudes")
}

fn branch_vector(label: BranchLabel, env: &[[C64; 2]]) -> StateVector {
    let mut v = StateVector::basis(2, label.index()).tensor(&StateVector::basis(2, label.index()));
    for q in env {
        v = v.tensor(&qubit_state(*q));
    }
    v
}

/// Full particle ⊗ pointer ⊗ environment state, for `N + 2 <= 14` qubits.
pub fn forward_state(model: &RobustnessModel) -> Result<StateVector> {
    let n = check_oracle_size(model.env_n)?;
    let mut total: Option<StateVector> = None;
    for term in forward_chain(model) {
        let env = vec![term.state.environment.qubit; n];
        let v = branch_vector(term.state.label, &env).scale(term.amplitude);
        total = Some(match total {
            None => v,
            Some(t) => t.add_scaled(cr(1.0), &v)?,
        });
    }
    total.ok_or_else(|| Error::Invariant("model has no branches".into()))
}

/// Particle ⊗ pointer density matrix with the environment traced out.
pub fn reduced_particle_pointer(model: &RobustnessModel) -> Result<DensityMatrix> {
    let psi = forward_state(model)?;
    let n = model.env_n as usize;
    let mut dims = vec![2usize; n + 2];
    dims[0] = 2;
    DensityMatrix::from_pure(&psi)?.partial_trace(&dims, &[0, 1])
}

/// Final boundary `⟨φ|⟨pointer|⟨environment|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalBoundary {
    pub micro: StateVector,
    pub pointer: BranchLabel,
    pub environment: BranchLabel,
}

impl FinalBoundary {
    /// Boundary selecting `label`, with the particle's final state set to the
    /// forward microstate of that branch.
    pub fn for_branch(label: BranchLabel) -> Self {
        Self {
            micro: StateVector::basis(2, label.index()),
            pointer: label,
            environment: label,
        }
    }

    pub fn with_micro(mut self, micro: StateVector) -> Result<Self> {
        if micro.dim() != 2 {
            return Err(Error::Dimension {
                expected: 2,
                found: micro.dim(),
            });
        }
        self.micro = micro.normalize()?;
        Ok(self)
    }
}

/// Probabilities that the boundary meets the matching (`right`) and the
/// other (`wrong`) forward branch, unnormalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub selected: BranchLabel,
    pub p_right: f64,
    pub p_wrong: f64,
}

impl Selection {
    /// Probability that backward evolution from the boundary reproduces the
    /// selected reading.
    pub fn reconstruction_probability(&self) -> f64 {
        self.p_right / (self.p_right + self.p_wrong)
    }
}

/// Two-state selection by a final boundary, before any environment
/// collapse.
pub fn select_by_final(model: &RobustnessModel, boundary: &FinalBoundary) -> Result<Selection> {
    if model.collapse_n != 0 {
        return Err(Error::InvalidParameter(
            "final-boundary selection applies before any environment collapse".into(),
        ));
    }
    let micro = boundary.micro.normalize()?;
    let prob = |label: BranchLabel| -> Result<f64> {
        let amp = model.amplitude(label);
        let particle = micro.inner(&StateVector::basis(2, label.index()))?;
        let pointer = if boundary.pointer == label { 1.0 } else { 0.0 };
        let env = if boundary.environment == label {
            1.0
        } else {
            model.env_overlap()
        };
        Ok((amp * particle).norm_sqr() * pointer * env * env)
    };
    let p_right = prob(boundary.pointer)?;
    let p_wrong = prob(boundary.pointer.other())?;
    if !(p_right + p_wrong > 0.0) {
        return Err(Error::NoConsistentHistory);
    }
    Ok(Selection {
        selected: boundary.pointer,
        p_right,
        p_wrong,
    })
}

/// Draws a final boundary selecting branch I with probability `|α|²`.
pub fn sample_final_boundary<R: Rng + ?Sized>(model: &RobustnessModel, rng: &mut R) -> FinalBoundary {
    let p = model.alpha.norm_sqr().clamp(0.0, 1.0);
    let label = if rng.random_bool(p) { BranchLabel::I } else { BranchLabel::II };
    FinalBoundary::for_branch(label)
}

/// Observed pointer reading in each simulated universe.
#[derive(Debug, Clone, PartialEq)]
pub struct UniverseRun {
    pub readings: Vec<BranchLabel>,
}

impl UniverseRun {
    pub fn count(&self, label: BranchLabel) -> usize {
        self.readings.iter().filter(|&&r| r == label).count()
    }

    pub fn frequency(&self, label: BranchLabel) -> f64 {
        self.count(label) as f64 / self.readings.len() as f64
    }
}

/// Samples a Born-weighted final boundary for each universe, selects the
/// two-state history it picks out and records the reading seen between
/// the measurement and the boundary. Universe `u` uses stream `u`.
pub fn simulate_universes(model: &RobustnessModel, universes: u64, seed: u64) -> Result<UniverseRun> {
    let streams = SeedStream::new(seed);
    let mut readings = Vec::with_capacity(universes as usize);
    for u in 0..universes {
        let mut rng = streams.trial(u);
        let boundary = sample_final_boundary(model, &mut rng);
        let sel = select_by_final(model, &boundary)?;
        let reading = if rng.random_bool(sel.reconstruction_probability()) {
            sel.selected
        } else {
            sel.selected.other()
        };
        readings.push(reading);
    }
    Ok(UniverseRun { readings })
}

/// Environment after `n` particles collapse.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedEnvironment {
    /// Indices of the collapsed particles, ascending.
    pub sites: Vec<u64>,
    /// `C₁⁽ʲ⁾` (branch I) for each collapsed site.
    pub branch_i: Vec<[C64; 2]>,
    /// `C₂⁽ʲ⁾` (branch II) for each collapsed site.
    pub branch_ii: Vec<[C64; 2]>,
    /// Particles that never collapse.
    pub remaining: u64,
    /// `ln |⟨ε₁(N−n)|ε₂(N−n)⟩|`
    pub log_remaining_overlap: f64,
}

impl CollapsedEnvironment {
    pub fn remaining_overlap(&self) -> f64 {
        self.log_remaining_overlap.exp()
    }
}

fn collapse_qubit(gamma: f64, phase: f64) -> [C64; 2] {
    [cr(gamma), C64::from_polar((1.0 - gamma * gamma).max(0.0).sqrt(), phase)]
}

/// Replaces `n` randomly chosen environment particles by collapsed states
/// `C_i⁽ʲ⁾ = γ_i|0⟩ + √(1−γ_i²) e^{iθ}|1⟩` with random phases `θ`.
pub fn collapse_environment<R: Rng + ?Sized>(
    model: &RobustnessModel,
    rng: &mut R,
) -> Result<CollapsedEnvironment> {
    model.gamma1.check(model.collapse_n, "gamma1", false)?;
    let n = model.collapse_n;
    let mut sites: Vec<u64> = if model.env_n <= usize::MAX as u64 {
        rand::seq::index::sample(rng, model.env_n as usize, n as usize)
            .into_iter()
            .map(|s| s as u64)
            .collect()
    } else {
        return Err(Error::InvalidParameter("environment too large to index".into()));
    };
    sites.sort_unstable();
    let mut branch_i = Vec::with_capacity(n as usize);
    let mut branch_ii = Vec::with_capacity(n as usize);
    for j in 0..n as usize {
        let t1 = std::f64::consts::TAU * rng.random::<f64>();
        let t2 = std::f64::consts::TAU * rng.random::<f64>();
        branch_i.push(collapse_qubit(model.gamma1.get(j), t1));
        branch_ii.push(collapse_qubit(model.gamma2.get(j), t2));
    }
    let remaining = model.env_n - n;
    Ok(CollapsedEnvironment {
        sites,
        branch_i,
        branch_ii,
        remaining,
        log_remaining_overlap: log_pow(model.overlap_c, remaining),
    })
}

/// Log of the robustness ratio for explicit parameters.
fn log_ratio_parts(env_n: u64, n: u64, c: f64, g1: &Gammas, g2: &Gammas, form: RatioForm) -> f64 {
    let k = match form {
        RatioForm::Squared => 2.0,
        RatioForm::Literal => 1.0,
    };
    let env = -2.0 * log_pow(c, env_n - n);
    let collapse = k * (g1.sum_ln(n) - g2.sum_ln(n));
    if env == f64::INFINITY || collapse == f64::INFINITY {
        return f64::INFINITY;
    }
    env + collapse
}

/// `ln Pr(right)/Pr(wrong)`, possibly `+∞`.
pub fn log_robustness_ratio(model: &RobustnessModel) -> Result<f64> {
    model.gamma1.check(model.collapse_n, "gamma1", false)?;
    Ok(log_ratio_parts(
        model.env_n,
        model.collapse_n,
        model.overlap_c,
        &model.gamma1,
        &model.gamma2,
        model.form,
    ))
}

/// `∏γ₁² / (c^{2(N−n)} ∏γ₂²)`; `+∞` when the remaining records are
/// orthogonal or some `γ₂` vanishes.
pub fn robustness_ratio(model: &RobustnessModel) -> Result<f64> {
    Ok(log_robustness_ratio(model)?.exp())
}

pub fn is_classically_robust(model: &RobustnessModel, threshold: f64) -> Result<bool> {
    Ok(log_robustness_ratio(model)? >= threshold.ln())
}

/// Canonical collapse for the oracle: the last `n` sites, zero phases.
fn canonical_collapse(model: &RobustnessModel) -> CollapsedEnvironment {
    let n = model.collapse_n;
    let remaining = model.env_n - n;
    CollapsedEnvironment {
        sites: (remaining..model.env_n).collect(),
        branch_i: (0..n as usize).map(|j| collapse_qubit(model.gamma1.get(j), 0.0)).collect(),
        branch_ii: (0..n as usize).map(|j| collapse_qubit(model.gamma2.get(j), 0.0)).collect(),
        remaining,
        log_remaining_overlap: log_pow(model.overlap_c, remaining),
    }
}

/// Robustness ratio from the full particle ⊗ pointer ⊗ environment state,
/// using the last `n` sites for the collapse.
pub fn brute_force_ratio(model: &RobustnessModel) -> Result<f64> {
    model.gamma1.check(model.collapse_n, "gamma1", false)?;
    brute_force_ratio_with(model, &canonical_collapse(model))
}

/// Oracle ratio for a given collapse.
///
/// Each branch has its collapsed sites mapped `ε_b⁽ʲ⁾ → C_b⁽ʲ⁾` and is
/// renormalized on its own, then projected on the final boundary. Before any
/// collapse the boundary is `⟨I|⟨ε₁(N)|`; after a collapse the pointer has
/// joined the collapsing apparatus, the reading is carried by the
/// environment alone, and the boundary is `⟨ε₁(N)|` for each reading. The
/// particle is traced out in both cases.
pub fn brute_force_ratio_with(model: &RobustnessModel, collapse: &CollapsedEnvironment) -> Result<f64> {
    let n_env = check_oracle_size(model.env_n)?;
    if collapse.sites.len() as u64 != model.collapse_n || collapse.branch_i.len() != collapse.sites.len() {
        return Err(Error::InvalidParameter("collapse does not match the model".into()));
    }
    let mut dims = vec![2usize; n_env + 2];
    dims[0] = 2;
    let pointer_in_boundary = model.collapse_n == 0;

    let mut probs = [0.0f64; 2];
    for label in [BranchLabel::I, BranchLabel::II] {
        let eps = model.env_qubit(label);
        let mut branch = branch_vector(label, &vec![eps; n_env]);
        let replacements = match label {
            BranchLabel::I => &collapse.branch_i,
            BranchLabel::II => &collapse.branch_ii,
        };
        for (&site, target) in collapse.sites.iter().zip(replacements) {
            // |C⟩⟨ε| on the collapsing site
            let map = nalgebra::DMatrix::from_fn(2, 2, |r, k| target[r] * eps[k].conj());
            branch = apply_local(&branch, &dims, site as usize + 2, &map)?;
        }
        let branch = branch.normalize()?;

        let mut p = 0.0;
        for particle in 0..2 {
            let pointer_overlap = if pointer_in_boundary {
                if label == BranchLabel::I { 1.0 } else { 0.0 }
            } else {
                1.0
            };
            // ⟨particle|⟨label|⟨0…0| picks a single amplitude
            let idx = (particle * 2 + label.index()) << n_env;
            p += branch.amps()[idx].norm_sqr() * pointer_overlap;
        }
        probs[label.index()] = p;
    }
    let (right, wrong) = (probs[0], probs[1]);
    let ratio = match model.form {
        RatioForm::Squared => right / wrong,
        RatioForm::Literal => {
            // collapse overlaps enter unsquared: undo one power of each
            let g1 = (0..model.collapse_n as usize).map(|j| model.gamma1.get(j)).product::<f64>();
            let g2 = (0..model.collapse_n as usize).map(|j| model.gamma2.get(j)).product::<f64>();
            (right / g1) / (wrong / g2)
        }
    };
    Ok(if wrong == 0.0 { f64::INFINITY } else { ratio })
}

/// `N(t) = N₀ e^{−t/T}`: surviving core size at time `t`.
pub fn core_decay(n0: u64, lifetime: f64, t: f64) -> Result<f64> {
    if n0 == 0 {
        return Err(Error::InvalidParameter("initial core size must be >= 1".into()));
    }
    if !(lifetime > 0.0) {
        return Err(Error::InvalidParameter(format!("lifetime must be > 0, got {lifetime}")));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
    }
    Ok(n0 as f64 * (-t / lifetime).exp())
}

/// Smallest environment size `N > n` whose robustness ratio reaches
/// `target`.
pub fn classical_threshold(
    n: u64,
    c: f64,
    gamma1: &Gammas,
    gamma2: &Gammas,
    target: f64,
    form: RatioForm,
) -> Result<u64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidParameter(format!("overlap must lie in (0, 1), got {c}")));
    }
    if !(target >= 1.0) || !target.is_finite() {
        return Err(Error::InvalidParameter(format!("target ratio must be >= 1, got {target}")));
    }
    gamma1.check(n, "gamma1", false)?;
    gamma2.check(n, "gamma2", true)?;
    let log_ratio = |env_n: u64| log_ratio_parts(env_n, n, c, gamma1, gamma2, form);
    let ln_target = target.ln();
    let k = match form {
        RatioForm::Squared => 2.0,
        RatioForm::Literal => 1.0,
    };
    let needed = (ln_target - k * (gamma1.sum_ln(n) - gamma2.sum_ln(n))) / (-2.0 * c.ln());
    let core = if needed.is_finite() { needed.ceil().max(1.0) } else { 1.0 };
    if core >= (u64::MAX - n) as f64 / 2.0 {
        return Err(Error::InvalidParameter("threshold exceeds the representable range".into()));
    }
    let mut env_n = n + core as u64;
    // settle rounding at the boundary
    while env_n > n + 1 && log_ratio(env_n - 1) >= ln_target {
        env_n -= 1;
    }
    while log_ratio(env_n) < ln_target {
        env_n += 1;
    }
    Ok(env_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn model(c: f64, env_n: u64, n: u64) -> RobustnessModel {
        RobustnessModel::with_branch_probability(0.36, env_n, c)
            .unwrap()
            .with_collapse(n, Gammas::Uniform(0.8), Gammas::Uniform(0.8))
            .unwrap()
    }

    #[test]
    fn model_validation() {
        assert!(RobustnessModel::new(cr(0.6), cr(0.6), 4, 0.5).is_err());
        assert!(RobustnessModel::new(cr(1.0), cr(0.0), 4, 1.0).is_err());
        assert!(RobustnessModel::new(cr(1.0), cr(0.0), 0, 0.5).is_err());
        let m = RobustnessModel::new(cr(0.6), cr(0.8), 4, 0.5).unwrap();
        assert!(m.clone().with_collapse(4, Gammas::Uniform(0.5), Gammas::Uniform(0.5)).is_err());
        assert_eq!(
            m.clone().with_collapse(2, Gammas::PerParticle(vec![0.5, 0.0]), Gammas::Uniform(0.5)),
            Err(Error::OrthogonalCollapseForbidden { index: 1 })
        );
        assert!(m.clone().with_collapse(2, Gammas::PerParticle(vec![0.5]), Gammas::Uniform(0.5)).is_err());
        assert!(m.with_collapse(2, Gammas::Uniform(0.5), Gammas::Uniform(0.0)).is_ok());
    }

    #[test]
    fn forward_chain_branches() {
        let m = RobustnessModel::new(cr(0.6), cr(0.8), 20, 0.9).unwrap();
        let chain = forward_chain(&m);
        assert_eq!(chain.len(), 2);
        assert_eq!(chain[0].state.pointer, BranchLabel::I);
        assert_eq!(chain[1].state.particle, 1);
        assert_eq!(chain[1].state.environment.count, 20);
        assert!((m.env_overlap() - 0.9f64.powi(20)).abs() < 1e-15);
        assert!((m.env_overlap() - 0.121_576_654_590_569_3).abs() < 1e-12);

        let single = RobustnessModel::new(cr(1.0), cr(0.0), 5, 0.3).unwrap();
        assert_eq!(forward_chain(&single).len(), 1);
    }

    #[test]
    fn forward_state_env_overlap_matches_product() {
        let m = RobustnessModel::new(cr(0.6), cr(0.8), 6, 0.7).unwrap();
        let psi = forward_state(&m).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        // overlap of the two environment records, read off the full state
        let env = |label: BranchLabel| {
            (0..6).fold(StateVector::basis(1, 0), |acc, _| acc.tensor(&qubit_state(env_qubit(label, 0.7))))
        };
        let ov = env(BranchLabel::I).inner(&env(BranchLabel::II)).unwrap();
        assert!((ov.re - 0.7f64.powi(6)).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_environment_decoheres_completely() {
        let m = RobustnessModel::new(cr(0.6), cr(0.8), 6, 0.0).unwrap();
        let rho = reduced_particle_pointer(&m).unwrap();
        let r = rho.matrix();
        for i in 0..4 {
            for j in 0..4 {
                let want = match (i, j) {
                    (0, 0) => 0.36,
                    (3, 3) => 0.64,
                    _ => 0.0,
                };
                assert!((r[(i, j)] - cr(want)).norm() < 1e-12, "({i},{j}) = {}", r[(i, j)]);
            }
        }
    }

    #[test]
    fn partial_overlap_leaves_coherence_c_pow_n() {
        let m = RobustnessModel::new(cr(0.6), cr(0.8), 5, 0.9).unwrap();
        let r = reduced_particle_pointer(&m).unwrap();
        let coh = r.matrix()[(0, 3)];
        assert!((coh - cr(0.6 * 0.8 * 0.9f64.powi(5))).norm() < 1e-12);
    }

    #[test]
    fn selection_kills_wrong_branch() {
        let m = RobustnessModel::new(cr(0.6), cr(0.8), 30, 0.95).unwrap();
        let sel = select_by_final(&m, &FinalBoundary::for_branch(BranchLabel::I)).unwrap();
        assert_eq!(sel.p_wrong, 0.0);
        assert!((sel.p_right - 0.36).abs() < 1e-12);
        assert_eq!(sel.reconstruction_probability(), 1.0);

        let empty = RobustnessModel::new(cr(0.0), cr(1.0), 30, 0.95).unwrap();
        assert_eq!(
            select_by_final(&empty, &FinalBoundary::for_branch(BranchLabel::I)),
            Err(Error::NoConsistentHistory)
        );
    }

    #[test]
    fn selection_requires_uncollapsed_model() {
        let m = model(0.9, 10, 2);
        assert!(select_by_final(&m, &FinalBoundary::for_branch(BranchLabel::I)).is_err());
    }

    #[test]
    fn universes_follow_born_weights() {
        let m = RobustnessModel::with_branch_probability(0.36, 50, 0.9).unwrap();
        let n = 100_000;
        let run = simulate_universes(&m, n, 17).unwrap();
        let f = run.frequency(BranchLabel::I);
        assert!((f - 0.36).abs() < 3.0 * (0.36 * 0.64 / n as f64).sqrt(), "{f}");
    }

    #[test]
    fn collapse_environment_examples() {
        let mut rng = seeded(51);
        let m = model(0.9, 20, 0);
        let col = collapse_environment(&m, &mut rng).unwrap();
        assert!(col.sites.is_empty());
        assert!((col.remaining_overlap() - 0.9f64.powi(20)).abs() < 1e-14);

        let m = model(0.9, 20, 19);
        let col = collapse_environment(&m, &mut rng).unwrap();
        assert_eq!(col.sites.len(), 19);
        assert!(col.sites.windows(2).all(|w| w[0] < w[1]));
        assert!((col.remaining_overlap() - 0.9).abs() < 1e-14);
        for (c1, c2) in col.branch_i.iter().zip(&col.branch_ii) {
            // ε₁ = |0⟩, so ⟨C|ε₁⟩ is the first amplitude
            assert!((c1[0].norm() - 0.8).abs() < 1e-14);
            assert!((c2[0].norm() - 0.8).abs() < 1e-14);
            let n1: f64 = c1.iter().map(|z| z.norm_sqr()).sum();
            assert!((n1 - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn ratio_examples() {
        let m = model(0.9, 20, 5);
        let r = robustness_ratio(&m).unwrap();
        assert!((r - 0.9f64.powi(-30)).abs() < 1e-9);
        assert!((r - 23.59).abs() < 0.01);

        let ortho = model(0.0, 20, 5);
        assert_eq!(robustness_ratio(&ortho).unwrap(), f64::INFINITY);

        let big = RobustnessModel::with_branch_probability(0.5, 10_000, 0.99)
            .unwrap()
            .with_collapse(100, Gammas::Uniform(0.5), Gammas::Uniform(0.5))
            .unwrap();
        let lr = log_robustness_ratio(&big).unwrap();
        assert!((lr - (-2.0 * 9900.0 * 0.99f64.ln())).abs() < 1e-9);
        assert!((lr - 199.0).abs() < 0.1);

        let diverging = RobustnessModel::with_branch_probability(0.5, 20, 0.9)
            .unwrap()
            .with_collapse(3, Gammas::Uniform(0.5), Gammas::PerParticle(vec![0.4, 0.0, 0.3]))
            .unwrap();
        assert_eq!(robustness_ratio(&diverging).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ratio_with_unequal_gammas() {
        let m = RobustnessModel::with_branch_probability(0.5, 12, 0.8)
            .unwrap()
            .with_collapse(2, Gammas::PerParticle(vec![0.9, 0.7]), Gammas::PerParticle(vec![0.3, 0.6]))
            .unwrap();
        let want = (0.9f64 * 0.7).powi(2) / (0.8f64.powi(20) * (0.3f64 * 0.6).powi(2));
        let got = robustness_ratio(&m).unwrap();
        assert!((got / want - 1.0).abs() < 1e-12);
        let literal = robustness_ratio(&m.clone().with_form(RatioForm::Literal)).unwrap();
        let want_lit = (0.9 * 0.7) / (0.8f64.powi(20) * (0.3 * 0.6));
        assert!((literal / want_lit - 1.0).abs() < 1e-12);
        let brute = brute_force_ratio(&m).unwrap();
        assert!((brute / got - 1.0).abs() < 1e-9);
        let brute_lit = brute_force_ratio(&m.with_form(RatioForm::Literal)).unwrap();
        assert!((brute_lit / want_lit - 1.0).abs() < 1e-9);
    }

    #[test]
    fn brute_force_examples() {
        let m = model(0.9, 8, 2);
        let b = brute_force_ratio(&m).unwrap();
        assert!((b / 0.9f64.powi(-12) - 1.0).abs() < 1e-9);
        assert!((b / robustness_ratio(&m).unwrap() - 1.0).abs() < 1e-9);

        assert_eq!(brute_force_ratio(&model(0.9, 8, 0)).unwrap(), f64::INFINITY);
        assert_eq!(brute_force_ratio(&model(0.0, 8, 2)).unwrap(), f64::INFINITY);
        assert!(matches!(
            brute_force_ratio(&model(0.9, 13, 2)),
            Err(Error::TooLargeForOracle { .. })
        ));
    }

    #[test]
    fn brute_force_ignores_which_sites_collapse() {
        let m = model(0.85, 9, 3);
        let mut rng = seeded(52);
        let col = collapse_environment(&m, &mut rng).unwrap();
        let random = brute_force_ratio_with(&m, &col).unwrap();
        let canonical = brute_force_ratio(&m).unwrap();
        assert!((random / canonical - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ratio_is_monotone() {
        for c in [0.5, 0.9, 0.99] {
            for n in [0u64, 2, 5] {
                let mut prev = 0.0;
                for env_n in n + 1..n + 30 {
                    let r = robustness_ratio(&model(c, env_n, n)).unwrap();
                    assert!(r > prev);
                    prev = r;
                }
            }
        }
        for env_n in [20u64, 40] {
            let mut prev = f64::INFINITY;
            for n in 0..10 {
                let r = robustness_ratio(&model(0.9, env_n, n)).unwrap();
                assert!(r < prev);
                prev = r;
            }
            let mut prev = f64::INFINITY;
            for c in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
                let r = robustness_ratio(&model(c, env_n, 3)).unwrap();
                assert!(r < prev);
                prev = r;
            }
        }
    }

    #[test]
    fn log_ratio_is_linear_in_core_size() {
        let c: f64 = 0.9;
        let n = 3;
        for env_n in n + 1..=12 {
            let m = model(c, env_n, n);
            let lr = log_robustness_ratio(&m).unwrap();
            assert!((lr - (-2.0 * c.ln() * (env_n - n) as f64)).abs() < 1e-9);
            let brute = brute_force_ratio(&m).unwrap().ln();
            assert!((brute - lr).abs() < 1e-9);
        }
    }

    #[test]
    fn decay_law() {
        assert_eq!(core_decay(1_000_000, 2.0, 0.0).unwrap(), 1e6);
        assert!((core_decay(1_000_000, 2.0, 2.0).unwrap() - 367_879.441_171_442_3).abs() < 1e-6);
        let (n0, t_life) = (1_000_000u64, 3.0);
        let t = 10.0 * t_life;
        assert!((core_decay(n0, t_life, t).unwrap() - 1e6 * (-10.0f64).exp()).abs() < 1e-9);
        for k in 1..50 {
            let t = k as f64 * 0.7;
            let h = 1e-5;
            let fd = (core_decay(n0, t_life, t + h).unwrap() - core_decay(n0, t_life, t - h).unwrap()) / (2.0 * h);
            let exact = -core_decay(n0, t_life, t).unwrap() / t_life;
            assert!(fd < 0.0);
            assert!((fd / exact - 1.0).abs() < 1e-6, "t={t} fd={fd} exact={exact}");
        }
        assert!(core_decay(0, 1.0, 0.0).is_err());
        assert!(core_decay(1, 0.0, 0.0).is_err());
        assert!(core_decay(1, 1.0, -1.0).is_err());
    }

    #[test]
    fn threshold_examples() {
        let u = Gammas::Uniform(0.7);
        let n = classical_threshold(0, 0.9, &u, &u, 1e6, RatioForm::Squared).unwrap();
        assert_eq!(n, 66);
        assert_eq!(n, (1e6f64.ln() / (-2.0 * 0.9f64.ln())).ceil() as u64);
        let at = |env_n| robustness_ratio(&model(0.9, env_n, 0)).unwrap();
        assert!(at(65) < 1e6 && at(66) >= 1e6);

        assert_eq!(classical_threshold(4, 0.9, &u, &u, 1.0, RatioForm::Squared).unwrap(), 5);

        let mut prev = 0;
        for c in [0.9, 0.99, 0.999, 0.9999] {
            let n = classical_threshold(0, c, &u, &u, 1e6, RatioForm::Squared).unwrap();
            assert!(n > prev);
            prev = n;
        }
        assert!(prev > 60_000);
    }

    #[test]
    fn threshold_with_collapse_brackets() {
        let g1 = Gammas::PerParticle(vec![0.9, 0.8, 0.95]);
        let g2 = Gammas::PerParticle(vec![0.5, 0.6, 0.4]);
        let n = classical_threshold(3, 0.95, &g1, &g2, 1e8, RatioForm::Squared).unwrap();
        let ratio = |env_n| {
            let m = RobustnessModel::with_branch_probability(0.5, env_n, 0.95)
                .unwrap()
                .with_collapse(3, g1.clone(), g2.clone())
                .unwrap();
            robustness_ratio(&m).unwrap()
        };
        assert!(ratio(n) >= 1e8);
        assert!(n == 4 || ratio(n - 1) < 1e8);
    }

    #[test]
    fn threshold_rejects_bad_inputs() {
        let u = Gammas::Uniform(0.5);
        assert!(classical_threshold(0, 1.0, &u, &u, 10.0, RatioForm::Squared).is_err());
        assert!(classical_threshold(0, 0.0, &u, &u, 10.0, RatioForm::Squared).is_err());
        assert!(classical_threshold(0, 0.5, &u, &u, 0.5, RatioForm::Squared).is_err());
    }
}
