//! Projective measurement with Born sampling, post-selection, two-states and
//! weak values, and Monte Carlo weak-measurement trials on pre- and
//! post-selected ensembles.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{HermitianOperator, StateVector, C64};
use crate::pointer::{couple, Reading, ReadoutSampler};
use crate::rng::SeedStream;

/// `|⟨φ|ψ⟩|` at or below which weak values are refused.
pub const DEFAULT_ORTHOGONALITY_THRESHOLD: f64 = 1e-12;

/// Trials per parallel work unit in the Monte Carlo drivers.
const CHUNK: u64 = 1 << 15;

/// Pre-selected `|ψ⟩` and post-selected `⟨φ|`, both normalized.
#[derive(Debug, Clone)]
pub struct TwoState {
    forward: StateVector,
    backward: StateVector,
    overlap: C64,
}

impl TwoState {
    /// `backward` is the ket whose conjugate is the post-selected bra.
    pub fn new(forward: &StateVector, backward: &StateVector) -> Result<Self> {
        if forward.dim() != backward.dim() {
            return Err(Error::Dimension {
                expected: forward.dim(),
                found: backward.dim(),
            });
        }
        let forward = forward.normalize()?;
        let backward = backward.normalize()?;
        let overlap = backward.inner(&forward)?;
        if overlap.norm() == 0.0 {
            return Err(Error::NearOrthogonalPrePost {
                overlap: 0.0,
                threshold: 0.0,
            });
        }
        Ok(Self {
            forward,
            backward,
            overlap,
        })
    }

    pub fn forward(&self) -> &StateVector {
        &self.forward
    }

    pub fn backward(&self) -> &StateVector {
        &self.backward
    }

    /// `⟨φ|ψ⟩`
    pub fn overlap(&self) -> C64 {
        self.overlap
    }

    pub fn dim(&self) -> usize {
        self.forward.dim()
    }
}

/// `⟨φ|A|ψ⟩ / ⟨φ|ψ⟩`, refusing pairs with `|⟨φ|ψ⟩| <= 1e-12`.
pub fn weak_value(ts: &TwoState, a: &HermitianOperator) -> Result<C64> {
    weak_value_with_threshold(ts, a, DEFAULT_ORTHOGONALITY_THRESHOLD)
}

pub fn weak_value_with_threshold(ts: &TwoState, a: &HermitianOperator, threshold: f64) -> Result<C64> {
    let overlap = ts.overlap.norm();
    if overlap <= threshold {
        return Err(Error::NearOrthogonalPrePost { overlap, threshold });
    }
    let num = ts.backward.inner(&a.apply(&ts.forward)?)?;
    Ok(num / ts.overlap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub outcome: f64,
    pub collapsed: StateVector,
    /// Born weight of `outcome`.
    pub probability: f64,
}

/// Precomputed outcome table for repeated projective measurements of one
/// state.
#[derive(Debug, Clone)]
pub struct StrongMeasurement {
    outcomes: Vec<MeasurementRecord>,
}

impl StrongMeasurement {
    pub fn new(psi: &StateVector, a: &HermitianOperator) -> Result<Self> {
        if psi.dim() != a.dim() {
            return Err(Error::Dimension {
                expected: a.dim(),
                found: psi.dim(),
            });
        }
        let psi = psi.normalize()?;
        let mut outcomes = Vec::new();
        for space in a.eig().eigenspaces() {
            let proj = space.project(&psi)?;
            let p = proj.norm_sqr();
            if p <= 0.0 {
                continue;
            }
            outcomes.push(MeasurementRecord {
                outcome: space.value,
                collapsed: proj.normalize()?,
                probability: p,
            });
        }
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[MeasurementRecord] {
        &self.outcomes
    }

    pub fn measure<R: Rng + ?Sized>(&self, rng: &mut R) -> MeasurementRecord {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for rec in &self.outcomes {
            acc += rec.probability;
            if u < acc {
                return rec.clone();
            }
        }
        self.outcomes[self.outcomes.len() - 1].clone()
    }
}

/// Projective measurement of `a` on `psi`: Born-weighted outcome and the
/// collapsed state `P_i ψ / ‖P_i ψ‖`.
pub fn strong_measure<R: Rng + ?Sized>(
    psi: &StateVector,
    a: &HermitianOperator,
    rng: &mut R,
) -> Result<MeasurementRecord> {
    Ok(StrongMeasurement::new(psi, a)?.measure(rng))
}

/// Projective test for `phi`; succeeds with probability `|⟨φ|ψ⟩|²`.
pub fn post_select<R: Rng + ?Sized>(psi: &StateVector, phi: &StateVector, rng: &mut R) -> Result<bool> {
    let p = post_selection_probability(psi, phi)?;
    Ok(rng.random_bool(p))
}

pub fn post_selection_probability(psi: &StateVector, phi: &StateVector) -> Result<f64> {
    let ov = phi.normalize()?.inner(&psi.normalize()?)?;
    Ok(ov.norm_sqr().clamp(0.0, 1.0))
}

/// A weak measurement of `A` on a two-state, ready for repeated trials.
///
/// Post-selection acts on the exactly coupled system–pointer state, so the
/// acceptance probability includes the disturbance caused by the coupling.
#[derive(Debug, Clone)]
pub struct WeakMeasurement {
    sampler: ReadoutSampler,
    coupling: f64,
}

impl WeakMeasurement {
    pub fn prepare(ts: &TwoState, a: &HermitianOperator, g: f64, sigma: f64) -> Result<Self> {
        if !(g > 0.0) || !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "coupling and pointer width must be positive (g = {g}, sigma = {sigma})"
            )));
        }
        let joint = couple(ts.forward(), a, g, sigma)?;
        let sampler = ReadoutSampler::new(&joint, Some(ts.backward()))?;
        Ok(Self { sampler, coupling: g })
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn sampler(&self) -> &ReadoutSampler {
        &self.sampler
    }

    /// Exact probability that a trial survives post-selection.
    pub fn acceptance_probability(&self) -> f64 {
        self.sampler.density().success_prob()
    }

    /// Exact mean pointer position of accepted trials.
    pub fn expected_shift(&self) -> f64 {
        self.sampler.density().mean()
    }

    pub fn trial<R: Rng + ?Sized>(&self, rng: &mut R) -> Reading {
        self.sampler.draw(rng)
    }

    /// Accepted readings `(trial index, q)` for trials `range`, in index order.
    /// Trial `t` uses stream `t` of `streams`.
    pub fn run(&self, streams: &SeedStream, range: std::ops::Range<u64>) -> Vec<(u64, f64)> {
        let chunks: Vec<(u64, u64)> = chunk_bounds(range);
        chunks
            .par_iter()
            .map(|&(lo, hi)| {
                (lo..hi)
                    .filter_map(|t| self.trial(&mut streams.trial(t)).value().map(|q| (t, q)))
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }

    /// Runs trials from index 0 until exactly `target` readings are accepted,
    /// giving up after `max_trials`.
    pub fn run_until_accepted(
        &self,
        streams: &SeedStream,
        target: usize,
        max_trials: u64,
    ) -> (Vec<(u64, f64)>, u64) {
        let batch = CHUNK * rayon::current_num_threads().max(1) as u64 * 4;
        let mut out = Vec::with_capacity(target);
        let mut next = 0u64;
        while out.len() < target && next < max_trials {
            let hi = (next + batch).min(max_trials);
            out.extend(self.run(streams, next..hi));
            next = hi;
        }
        if out.len() > target {
            out.truncate(target);
        }
        let used = match out.last() {
            Some(&(t, _)) if out.len() == target => t + 1,
            _ => next,
        };
        (out, used)
    }
}

fn chunk_bounds(range: std::ops::Range<u64>) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut lo = range.start;
    while lo < range.end {
        let hi = (lo + CHUNK).min(range.end);
        out.push((lo, hi));
        lo = hi;
    }
    out
}

/// One weak-measurement trial: couple, post-select on the backward state,
/// read the pointer.
pub fn weak_trial<R: Rng + ?Sized>(
    ts: &TwoState,
    a: &HermitianOperator,
    g: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Reading> {
    Ok(WeakMeasurement::prepare(ts, a, g, sigma)?.trial(rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakEstimate {
    /// Mean accepted pointer position.
    pub mean: f64,
    /// Sample standard deviation over `√accepted`.
    pub stderr: f64,
    pub acceptance_rate: f64,
    pub trials: u64,
    pub accepted: u64,
}

impl WeakEstimate {
    pub fn from_readings(readings: &[(u64, f64)], trials: u64) -> Result<Self> {
        let n = readings.len();
        if n == 0 {
            return Err(Error::NoAcceptedTrials { trials });
        }
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        for (k, &(_, q)) in readings.iter().enumerate() {
            let delta = q - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (q - mean);
        }
        let stderr = if n > 1 {
            (m2 / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Ok(Self {
            mean,
            stderr,
            acceptance_rate: n as f64 / trials as f64,
            trials,
            accepted: n as u64,
        })
    }
}

/// Aggregates `trials` weak trials under `seed`.
pub fn weak_estimate(
    ts: &TwoState,
    a: &HermitianOperator,
    g: f64,
    sigma: f64,
    trials: u64,
    seed: u64,
) -> Result<WeakEstimate> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let wm = WeakMeasurement::prepare(ts, a, g, sigma)?;
    let readings = wm.run(&SeedStream::new(seed), 0..trials);
    WeakEstimate::from_readings(&readings, trials)
}

/// Like [`weak_estimate`] but keeps running until `accepted` trials pass
/// post-selection.
pub fn weak_estimate_accepted(
    ts: &TwoState,
    a: &HermitianOperator,
    g: f64,
    sigma: f64,
    accepted: usize,
    seed: u64,
) -> Result<WeakEstimate> {
    if accepted == 0 {
        return Err(Error::InvalidParameter("accepted must be >= 1".into()));
    }
    let wm = WeakMeasurement::prepare(ts, a, g, sigma)?;
    let max_trials = ((accepted as f64 / wm.acceptance_probability()) * 4.0 + 1e6).min(u64::MAX as f64) as u64;
    let (readings, used) = wm.run_until_accepted(&SeedStream::new(seed), accepted, max_trials);
    WeakEstimate::from_readings(&readings, used)
}
