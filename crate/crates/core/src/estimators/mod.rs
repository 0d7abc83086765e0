//! Correlation estimators over detected events, dip fitting and source
//! calibration.
//!
//! All per-shot statistics are accumulated as exact integer power sums, so
//! sequential and parallel reductions give identical results.

mod fit;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::mc::ShotEvents;

pub use fit::{fit_dip, DipFit, FitError, FitErrors};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("integration volumes overlap")]
    OverlappingVolumes,
    #[error("no shots to analyse")]
    NoShots,
    #[error("no atoms detected in the integration volume(s)")]
    NoCounts,
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Axis-aligned half-open box in velocity space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrationVolume {
    /// cm/s
    pub center: [f64; 3],
    /// Full width along z (cm/s).
    pub dv_z: f64,
    /// Full width along x and y (cm/s).
    pub dv_perp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeAxis {
    Z,
    Perp,
}

impl IntegrationVolume {
    pub fn new(center: [f64; 3], dv_z: f64, dv_perp: f64) -> Result<Self, EstimatorError> {
        let v = IntegrationVolume { center, dv_z, dv_perp };
        v.validate()?;
        Ok(v)
    }

    /// Default box of the reference analysis, `0.3 × 0.5 × 0.5` cm/s.
    pub fn standard(center: [f64; 3]) -> Self {
        IntegrationVolume { center, dv_z: 0.3, dv_perp: 0.5 }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.dv_z > 0.0 && self.dv_perp > 0.0 && self.dv_z.is_finite() && self.dv_perp.is_finite()) {
            return Err(EstimatorError::InvalidVolume(format!(
                "sizes must be positive (dv_z = {}, dv_perp = {})",
                self.dv_z, self.dv_perp
            )));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(EstimatorError::InvalidVolume("centre must be finite".into()));
        }
        Ok(())
    }

    fn bounds(&self) -> [(f64, f64); 3] {
        let h = [self.dv_perp / 2.0, self.dv_perp / 2.0, self.dv_z / 2.0];
        std::array::from_fn(|k| (self.center[k] - h[k], self.center[k] + h[k]))
    }

    pub fn contains(&self, v: &[f64; 3]) -> bool {
        self.bounds().iter().zip(v).all(|(&(lo, hi), &x)| lo <= x && x < hi)
    }

    pub fn overlaps(&self, other: &IntegrationVolume) -> bool {
        self.bounds().iter().zip(other.bounds()).all(|(&(a0, a1), (b0, b1))| a0 < b1 && b0 < a1)
    }

    pub fn with_size(&self, axis: VolumeAxis, size: f64) -> Self {
        match axis {
            VolumeAxis::Z => IntegrationVolume { dv_z: size, ..*self },
            VolumeAxis::Perp => IntegrationVolume { dv_perp: size, ..*self },
        }
    }

    pub fn count(&self, shot: &ShotEvents) -> u32 {
        shot.events.iter().filter(|v| self.contains(v)).count() as u32
    }
}

/// Exact power sums of `K` integer per-shot variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Moments<const K: usize> {
    pub n: u64,
    sum: [i128; K],
    cross: [[i128; K]; K],
}

impl<const K: usize> Default for Moments<K> {
    fn default() -> Self {
        Moments { n: 0, sum: [0; K], cross: [[0; K]; K] }
    }
}

impl<const K: usize> Moments<K> {
    pub fn push(mut self, x: [i64; K]) -> Self {
        self.n += 1;
        for i in 0..K {
            self.sum[i] += x[i] as i128;
            for j in 0..K {
                self.cross[i][j] += x[i] as i128 * x[j] as i128;
            }
        }
        self
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.n += other.n;
        for i in 0..K {
            self.sum[i] += other.sum[i];
            for j in 0..K {
                self.cross[i][j] += other.cross[i][j];
            }
        }
        self
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.sum[i] as f64 / self.n as f64
    }

    /// Unbiased sample covariance.
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        (self.cross[i][j] as f64 - self.sum[i] as f64 * self.sum[j] as f64 / n) / (n - 1.0)
    }

    /// Delta-method standard error of a smooth function of the means with
    /// the given gradient.
    pub fn delta_se(&self, grad: [f64; K]) -> f64 {
        let mut v = 0.0;
        for i in 0..K {
            for j in 0..K {
                v += grad[i] * grad[j] * self.cov(i, j);
            }
        }
        (v.max(0.0) / self.n as f64).sqrt()
    }
}

fn accumulate<const K: usize, F>(exec: Execution, shots: &[ShotEvents], vars: F) -> Moments<K>
where
    F: Fn(&ShotEvents) -> [i64; K] + Sync + Send,
{
    exec::fold_merge(exec, shots, Moments::default, |m, s| m.push(vars(s)), Moments::merge)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub value: f64,
    pub std_error: f64,
    pub shots: u64,
    pub mean_counts: (f64, f64),
}

/// Mean of the first variable with its sample standard error, for
/// `[u, a, b]` moments.
fn moment_estimate(m: &Moments<3>) -> CorrelationEstimate {
    CorrelationEstimate {
        value: m.mean(0),
        std_error: (m.cov(0, 0) / m.n as f64).sqrt(),
        shots: m.n,
        mean_counts: (m.mean(1), m.mean(2)),
    }
}

/// Cross-correlation `⟨N_a N_b⟩` of detected counts in two disjoint volumes.
pub fn estimate_g2_cross(
    shots: &[ShotEvents],
    va: &IntegrationVolume,
    vb: &IntegrationVolume,
    exec: Execution,
) -> Result<CorrelationEstimate, EstimatorError> {
    va.validate()?;
    vb.validate()?;
    if va.overlaps(vb) {
        return Err(EstimatorError::OverlappingVolumes);
    }
    if shots.is_empty() {
        return Err(EstimatorError::NoShots);
    }
    let m = accumulate(exec, shots, |s| {
        let (a, b) = (va.count(s) as i64, vb.count(s) as i64);
        [a * b, a, b]
    });
    Ok(moment_estimate(&m))
}

/// Auto-correlation `⟨N(N-1)⟩` of detected counts within one volume.
pub fn estimate_g2_auto(
    shots: &[ShotEvents],
    v: &IntegrationVolume,
    exec: Execution,
) -> Result<CorrelationEstimate, EstimatorError> {
    v.validate()?;
    if shots.is_empty() {
        return Err(EstimatorError::NoShots);
    }
    let m = accumulate(exec, shots, |s| {
        let a = v.count(s) as i64;
        [a * (a - 1), a, a]
    });
    Ok(moment_estimate(&m))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipPoint {
    pub tau_us: f64,
    pub g2: f64,
    pub std_error: f64,
    pub n_c_mean: f64,
    pub n_d_mean: f64,
    pub shots: u64,
}

fn group_by_tau(shots: &[ShotEvents]) -> Vec<(f64, Vec<ShotEvents>)> {
    let mut groups: BTreeMap<u64, Vec<ShotEvents>> = BTreeMap::new();
    for s in shots {
        // Order-preserving key for finite floats.
        let bits = s.tau_us.to_bits();
        let key = if s.tau_us.is_sign_negative() { !bits } else { bits | (1 << 63) };
        groups.entry(key).or_default().push(s.clone());
    }
    groups.into_values().map(|g| (g[0].tau_us, g)).collect()
}

/// Output-port coincidence correlation at each delay present in `shots`,
/// in increasing `τ`.
pub fn dip_points(
    shots: &[ShotEvents],
    vc: &IntegrationVolume,
    vd: &IntegrationVolume,
    exec: Execution,
) -> Result<Vec<DipPoint>, EstimatorError> {
    if shots.is_empty() {
        return Err(EstimatorError::NoShots);
    }
    group_by_tau(shots)
        .into_iter()
        .map(|(tau_us, group)| {
            let e = estimate_g2_cross(&group, vc, vd, exec)?;
            Ok(DipPoint {
                tau_us,
                g2: e.value,
                std_error: e.std_error,
                n_c_mean: e.mean_counts.0,
                n_d_mean: e.mean_counts.1,
                shots: e.shots,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeScanPoint {
    pub size: f64,
    pub fit: DipFit,
    /// False when the fit hit its iteration cap; `fit` is then the last iterate.
    pub converged: bool,
}

/// Refits the dip with both output volumes resized along `axis`. A fit that
/// does not converge keeps its last iterate instead of failing the whole scan.
pub fn scan_visibility_vs_volume(
    shots: &[ShotEvents],
    base_c: &IntegrationVolume,
    base_d: &IntegrationVolume,
    axis: VolumeAxis,
    sizes: &[f64],
    exec: Execution,
) -> Result<Vec<VolumeScanPoint>, EstimatorError> {
    if sizes.is_empty() {
        return Err(EstimatorError::InvalidVolume("no sizes to scan".into()));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EstimatorError::InvalidVolume("sizes must be strictly ascending".into()));
    }
    sizes
        .iter()
        .map(|&size| {
            let (vc, vd) = (base_c.with_size(axis, size), base_d.with_size(axis, size));
            let points = dip_points(shots, &vc, &vd, exec)?;
            match fit_dip(&points) {
                Ok(fit) => Ok(VolumeScanPoint { size, fit, converged: true }),
                Err(FitError::NotConverged { last }) => Ok(VolumeScanPoint { size, fit: *last, converged: false }),
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub eta: f64,
    pub std_error: f64,
}

/// Detection efficiency from the sub-Poissonian number difference of twin
/// beams: `η = 1 - Var(N_a - N_b) / (⟨N_a⟩ + ⟨N_b⟩)`.
pub fn estimate_eta_from_variance(
    shots: &[ShotEvents],
    va: &IntegrationVolume,
    vb: &IntegrationVolume,
    exec: Execution,
) -> Result<EtaEstimate, EstimatorError> {
    if va.overlaps(vb) {
        return Err(EstimatorError::OverlappingVolumes);
    }
    if shots.is_empty() {
        return Err(EstimatorError::NoShots);
    }
    let m = accumulate(exec, shots, |s| {
        let (a, b) = (va.count(s) as i64, vb.count(s) as i64);
        [(a - b) * (a - b), a - b, a + b]
    });
    let (m2, m1, ms) = (m.mean(0), m.mean(1), m.mean(2));
    if ms <= 0.0 {
        return Err(EstimatorError::NoCounts);
    }
    let var = m2 - m1 * m1;
    let eta = 1.0 - var / ms;
    let grad = [-1.0 / ms, 2.0 * m1 / ms, var / (ms * ms)];
    Ok(EtaEstimate { eta, std_error: m.delta_se(grad) })
}

/// `hist[k]` = number of shots with `k` atoms in the volume.
pub fn count_histogram(shots: &[ShotEvents], v: &IntegrationVolume) -> Vec<u64> {
    let mut hist = Vec::new();
    for s in shots {
        let k = v.count(s) as usize;
        if hist.len() <= k {
            hist.resize(k + 1, 0);
        }
        hist[k] += 1;
    }
    hist
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    /// Mean incident number, detected mean divided by `η`.
    pub lambda: f64,
    pub lambda_std_error: f64,
    pub p1: f64,
    pub p2: f64,
    /// `P(2) / P(1) = λ / 2`.
    pub ratio: f64,
    /// Set when nothing was detected; `λ` is then zero.
    pub degenerate: bool,
}

/// Poisson model of the incident number in a volume from its detected
/// count histogram (binomial thinning keeps a Poisson law Poisson).
pub fn fit_incident_poisson(hist: &[u64], eta: f64) -> Result<PoissonFit, EstimatorError> {
    let n: u64 = hist.iter().sum();
    if n == 0 {
        return Err(EstimatorError::NoShots);
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(EstimatorError::InvalidVolume(format!("eta = {eta} must lie in (0, 1]")));
    }
    let m = hist.iter().enumerate().fold(Moments::<1>::default(), |acc, (k, &c)| {
        let mut acc = acc;
        for _ in 0..c {
            acc = acc.push([k as i64]);
        }
        acc
    });
    let mean = m.mean(0);
    let lambda = mean / eta;
    let e = (-lambda).exp();
    Ok(PoissonFit {
        lambda,
        lambda_std_error: (m.cov(0, 0) / n as f64).sqrt() / eta,
        p1: lambda * e,
        p2: lambda * lambda / 2.0 * e,
        ratio: lambda / 2.0,
        degenerate: mean == 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub tau_us: f64,
    pub shots: u64,
    pub n_c_mean: f64,
    pub n_c_std_error: f64,
    pub n_d_mean: f64,
    pub n_d_std_error: f64,
}

/// Mean detected numbers in the output volumes at each delay.
pub fn stability_table(
    shots: &[ShotEvents],
    vc: &IntegrationVolume,
    vd: &IntegrationVolume,
    exec: Execution,
) -> Result<Vec<StabilityRow>, EstimatorError> {
    if shots.is_empty() {
        return Err(EstimatorError::NoShots);
    }
    Ok(group_by_tau(shots)
        .into_iter()
        .map(|(tau_us, group)| {
            let m = accumulate(exec, &group, |s| [vc.count(s) as i64, vd.count(s) as i64]);
            let n = m.n as f64;
            StabilityRow {
                tau_us,
                shots: m.n,
                n_c_mean: m.mean(0),
                n_c_std_error: (m.cov(0, 0) / n).sqrt(),
                n_d_mean: m.mean(1),
                n_d_std_error: (m.cov(1, 1) / n).sqrt(),
            }
        })
        .collect())
}
