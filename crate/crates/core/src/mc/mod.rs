//! Monte Carlo model of the twin-atom interference experiment, generated
//! directly in velocity space.
//!
//! Each beam is tiled by elementary modes (cells) under a Gaussian envelope.
//! Pair mode `k` puts its `a` atom in cell `k` of beam `a` and its twin in
//! cell `-k` of beam `b`. The mirror swaps the beams, so the splitter couples
//! cell `k` of `a` with cell `k` of `b`: only the central cell mixes the two
//! members of the same pairs, neighbouring cells mix independent
//! populations. Every coupled cell is propagated exactly through
//! [`crate::fock`] and one outcome is sampled per shot.

mod events;
mod source;

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::fock::{self, BeamSplitterSpec, Channel, FockError, ModeId};

pub use events::{read_events, write_events, EventFile, EventsError, MalformedLine};
pub use source::{CellLattice, PairDraw};

/// Per-channel occupation ceiling for one elementary mode.
pub const CHANNEL_CUTOFF: u32 = 6;

/// Beam velocity FWHM along each axis (cm/s).
pub const BEAM_FWHM: f64 = 1.4;

/// Mean incident atom numbers in the default integration volumes of beams
/// `a` and `b` for the reference scenario.
pub const REFERENCE_INCIDENT_IN_VOLUME: (f64, f64) = (0.5, 0.8);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shots_per_tau must be at least 1")]
    NoShots,
    #[error(transparent)]
    Fock(#[from] FockError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFamily {
    /// Exactly `round(mean_n_a)`, `round(mean_n_b)` atoms in the central mode.
    FixedFock,
    /// Thermal pair number per mode, plus Poisson excess in the richer beam.
    Tmsv,
    /// Poisson pair number per mode, plus Poisson excess in the richer beam.
    IndependentPoisson,
}

/// Twin-beam source in velocity space.
///
/// `mean_n_a` and `mean_n_b` are mean occupations of the central elementary
/// mode of each beam at emission. Away from the centre they follow the
/// Gaussian beam envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub family: SourceFamily,
    pub mean_n_a: f64,
    pub mean_n_b: f64,
    /// cm/s
    pub v_center_a: [f64; 3],
    pub v_center_b: [f64; 3],
    pub fwhm_z: f64,
    pub fwhm_perp: f64,
    /// Elementary mode (cell) size, cm/s.
    pub mode_size_z: f64,
    pub mode_size_perp: f64,
    /// µs
    pub coherence_sigma_t_us: f64,
}

impl SourceSpec {
    /// Reference scenario. Central-mode means are chosen so that the default
    /// integration volumes see [`REFERENCE_INCIDENT_IN_VOLUME`] atoms after the
    /// Raman transfer.
    pub fn reference() -> Self {
        let mut s = SourceSpec {
            family: SourceFamily::IndependentPoisson,
            mean_n_a: 0.0,
            mean_n_b: 0.0,
            v_center_a: [0.0, 0.0, 12.1],
            v_center_b: [0.0, 0.0, 7.0],
            fwhm_z: BEAM_FWHM,
            fwhm_perp: BEAM_FWHM,
            mode_size_z: 0.75,
            mode_size_perp: 0.5,
            coherence_sigma_t_us: 45.0,
        };
        let sched = PulseSchedule::default();
        let capture = s.central_capture_fraction(DEFAULT_DV_Z, DEFAULT_DV_PERP);
        s.mean_n_a = REFERENCE_INCIDENT_IN_VOLUME.0 / (capture * sched.raman_survival);
        s.mean_n_b = REFERENCE_INCIDENT_IN_VOLUME.1 / (capture * sched.raman_survival);
        s
    }

    /// Single pair `|n_a, n_b⟩` in the central mode.
    pub fn fixed_fock(n_a: u32, n_b: u32) -> Self {
        SourceSpec { family: SourceFamily::FixedFock, mean_n_a: n_a as f64, mean_n_b: n_b as f64, ..Self::reference() }
    }

    /// Fraction of the central mode's atoms that fall inside a box of the
    /// given size centred on it.
    pub fn central_capture_fraction(&self, dv_z: f64, dv_perp: f64) -> f64 {
        let z = (dv_z / self.mode_size_z).min(1.0);
        let p = (dv_perp / self.mode_size_perp).min(1.0);
        z * p * p
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("fwhm_z", self.fwhm_z),
            ("fwhm_perp", self.fwhm_perp),
            ("mode_size_z", self.mode_size_z),
            ("mode_size_perp", self.mode_size_perp),
            ("coherence_sigma_t_us", self.coherence_sigma_t_us),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!("source.{name} = {v} must be positive")));
            }
        }
        for (name, v) in [("mean_n_a", self.mean_n_a), ("mean_n_b", self.mean_n_b)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Config(format!("source.{name} = {v} must be non-negative")));
            }
            match self.family {
                SourceFamily::FixedFock => {
                    if v.fract() != 0.0 || v > CHANNEL_CUTOFF as f64 {
                        return Err(SimError::Config(format!(
                            "source.{name} = {v} must be an integer ≤ {CHANNEL_CUTOFF} for fixed_fock"
                        )));
                    }
                }
                _ => {
                    if v > 3.0 {
                        return Err(SimError::Config(format!(
                            "source.{name} = {v} too large for the per-mode cutoff {CHANNEL_CUTOFF}"
                        )));
                    }
                }
            }
        }
        if self.v_center_a.iter().chain(&self.v_center_b).any(|v| !v.is_finite()) {
            return Err(SimError::Config("beam centres must be finite".into()));
        }
        Ok(())
    }
}

/// Pulse timing (µs) and per-element probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSchedule {
    pub t1_us: f64,
    /// Effective mirror time; the dip sits at `τ = t2 - t1`.
    pub t2_us: f64,
    /// Nominal splitter time. Scans override it with `t2 + τ`.
    pub t3_us: f64,
    pub mirror_reflectivity: f64,
    pub splitter_transmittance: f64,
    pub raman_survival: f64,
    pub eta: f64,
}

impl Default for PulseSchedule {
    fn default() -> Self {
        PulseSchedule {
            t1_us: 0.0,
            t2_us: 550.0,
            t3_us: 1100.0,
            mirror_reflectivity: 0.95,
            splitter_transmittance: 0.49,
            raman_survival: 0.94,
            eta: 0.25,
        }
    }
}

impl PulseSchedule {
    /// Lossless balanced optics with unit detection efficiency.
    pub fn ideal() -> Self {
        PulseSchedule {
            mirror_reflectivity: 1.0,
            splitter_transmittance: 0.5,
            raman_survival: 1.0,
            eta: 1.0,
            ..Self::default()
        }
    }

    pub fn mirror_delay_us(&self) -> f64 {
        self.t2_us - self.t1_us
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.t1_us < self.t2_us && self.t2_us < self.t3_us) {
            return Err(SimError::Config(format!(
                "schedule times must satisfy t1 < t2 < t3 (got {}, {}, {})",
                self.t1_us, self.t2_us, self.t3_us
            )));
        }
        for (name, p) in [
            ("mirror_reflectivity", self.mirror_reflectivity),
            ("splitter_transmittance", self.splitter_transmittance),
            ("raman_survival", self.raman_survival),
            ("eta", self.eta),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Config(format!("schedule.{name} = {p} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub pixel_z: f64,
    pub pixel_perp: f64,
    pub enabled: bool,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec { pixel_z: 0.15, pixel_perp: 0.25, enabled: true }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.pixel_z > 0.0 && self.pixel_perp > 0.0) {
            return Err(SimError::Config("detector pixels must be positive".into()));
        }
        Ok(())
    }

    /// Snaps a velocity to the centre of its pixel.
    pub fn quantize(&self, v: [f64; 3]) -> [f64; 3] {
        if !self.enabled {
            return v;
        }
        let snap = |x: f64, p: f64| ((x / p).floor() + 0.5) * p;
        [snap(v[0], self.pixel_perp), snap(v[1], self.pixel_perp), snap(v[2], self.pixel_z)]
    }
}

/// Detected atoms of one repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotEvents {
    pub shot_id: u64,
    pub tau_us: f64,
    /// Splitter lattice phase, in `[0, 2π)`.
    pub phase: f64,
    /// `(vx, vy, vz)` in cm/s.
    pub events: Vec<[f64; 3]>,
    /// Number of mode draws redone because they exceeded the cutoff.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub resampled: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

/// Pre-detection atom numbers leaving the splitter ports `c` and `d`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ShotTruth {
    pub port_counts: [u32; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShotSeed {
    pub run_seed: u64,
    pub shot_id: u64,
}

/// Counter-based stream for one shot: ChaCha8 keyed by the run seed, with
/// the shot id as stream number. Independent of execution order.
pub fn shot_rng(seed: ShotSeed) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.run_seed);
    rng.set_stream(seed.shot_id);
    rng
}

/// Wave-packet overlap at the splitter for a mirror-to-splitter delay `τ`.
///
/// `O = exp(-(τ - t_mirror)² / (8 σ_t²))`, so the single-pair coincidence
/// dip `1 - O²` is a Gaussian of standard deviation `√2 σ_t`.
pub fn overlap_from_tau(tau_us: f64, t_mirror_delay_us: f64, coherence_sigma_t_us: f64) -> Result<f64, SimError> {
    if !(coherence_sigma_t_us > 0.0) {
        return Err(SimError::Config(format!("coherence_sigma_t_us = {coherence_sigma_t_us} must be positive")));
    }
    let d = tau_us - t_mirror_delay_us;
    Ok((-d * d / (8.0 * coherence_sigma_t_us * coherence_sigma_t_us)).exp())
}

const DEFAULT_DV_Z: f64 = 0.3;
const DEFAULT_DV_PERP: f64 = 0.5;

type CountDistribution = Vec<((u32, u32), f64)>;

/// Validated source/schedule/detector with the mode lattice precomputed.
#[derive(Clone, Debug)]
pub struct ShotSimulator {
    source: SourceSpec,
    schedule: PulseSchedule,
    detector: DetectorSpec,
    lattice: CellLattice,
}

impl ShotSimulator {
    pub fn new(source: &SourceSpec, schedule: &PulseSchedule, detector: &DetectorSpec) -> Result<Self, SimError> {
        source.validate()?;
        schedule.validate()?;
        detector.validate()?;
        Ok(ShotSimulator {
            lattice: CellLattice::new(source),
            source: source.clone(),
            schedule: schedule.clone(),
            detector: detector.clone(),
        })
    }

    pub fn source(&self) -> &SourceSpec {
        &self.source
    }

    pub fn schedule(&self) -> &PulseSchedule {
        &self.schedule
    }

    pub fn lattice(&self) -> &CellLattice {
        &self.lattice
    }

    pub fn simulate(&self, seed: ShotSeed, tau_us: f64) -> ShotEvents {
        self.simulate_detailed(seed, tau_us).0
    }

    /// Full pipeline: pair draw, Raman loss, mirror, wave-packet overlap,
    /// splitter with a random phase, detection.
    pub fn simulate_detailed(&self, seed: ShotSeed, tau_us: f64) -> (ShotEvents, ShotTruth) {
        let mut rng = shot_rng(seed);
        let phase = rng.random::<f64>() * 2.0 * PI;
        let draw = self.lattice.draw(&mut rng);
        let sched = &self.schedule;
        let a = thin_all(&thin_all(&draw.a, sched.raman_survival, &mut rng), sched.mirror_reflectivity, &mut rng);
        let b = thin_all(&thin_all(&draw.b, sched.raman_survival, &mut rng), sched.mirror_reflectivity, &mut rng);

        let overlap = overlap_from_tau(tau_us, sched.mirror_delay_us(), self.source.coherence_sigma_t_us)
            .expect("validated coherence time");
        let splitter = BeamSplitterSpec::new(sched.splitter_transmittance, phase);
        let mut cache: HashMap<(u8, u8), CountDistribution> = HashMap::new();
        let mut events = Vec::new();
        let mut truth = ShotTruth::default();
        for cell in 0..self.lattice.len() {
            let key = (a[cell], b[cell]);
            if key == (0, 0) {
                continue;
            }
            let dist = cache
                .entry(key)
                .or_insert_with(|| output_distribution(key.0, key.1, overlap, &splitter).expect("cutoff respected"));
            let (n_c, n_d) = sample_outcome(dist, &mut rng);
            truth.port_counts[0] += n_c;
            truth.port_counts[1] += n_d;
            self.emit(&mut events, self.source.v_center_a, cell, n_c, &mut rng);
            self.emit(&mut events, self.source.v_center_b, cell, n_d, &mut rng);
        }
        let shot = ShotEvents { shot_id: seed.shot_id, tau_us, phase, events, resampled: draw.resampled };
        (shot, truth)
    }

    /// The upstream measurement without mirror or splitter: atoms are
    /// detected at their emission velocities after the Raman transfer.
    pub fn simulate_source(&self, seed: ShotSeed) -> ShotEvents {
        let mut rng = shot_rng(seed);
        let draw = self.lattice.draw(&mut rng);
        let a = thin_all(&draw.a, self.schedule.raman_survival, &mut rng);
        let b = thin_all(&draw.b, self.schedule.raman_survival, &mut rng);
        let mut events = Vec::new();
        for cell in 0..self.lattice.len() {
            self.emit(&mut events, self.source.v_center_a, cell, a[cell] as u32, &mut rng);
            self.emit(&mut events, self.source.v_center_b, cell, b[cell] as u32, &mut rng);
        }
        ShotEvents { shot_id: seed.shot_id, tau_us: 0.0, phase: 0.0, events, resampled: draw.resampled }
    }

    fn emit(&self, events: &mut Vec<[f64; 3]>, center: [f64; 3], cell: usize, atoms: u32, rng: &mut ChaCha8Rng) {
        for _ in 0..atoms {
            if rng.random::<f64>() >= self.schedule.eta {
                continue;
            }
            let v = self.lattice.sample_velocity(center, cell, rng);
            events.push(self.detector.quantize(v));
        }
    }
}

fn thin_all(counts: &[u8], p: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    if p >= 1.0 {
        return counts.to_vec();
    }
    counts.iter().map(|&n| (0..n).filter(|_| rng.random::<f64>() < p).count() as u8).collect()
}

/// Exact `(N_c, N_d)` distribution for `|n_a, n_b⟩` after the overlap
/// decomposition of channel `b` and the splitter, summed over labels.
fn output_distribution(
    n_a: u8,
    n_b: u8,
    overlap: f64,
    splitter: &BeamSplitterSpec,
) -> Result<CountDistribution, FockError> {
    let input = fock::make_input_state(
        &[(ModeId::matched(Channel::A), n_a as u32), (ModeId::matched(Channel::B), n_b as u32)],
        CHANNEL_CUTOFF,
    )?;
    let mixed = fock::decompose_overlap(&input, Channel::B, overlap)?;
    let out = fock::apply_beam_splitter(&mixed, splitter)?;
    let slots =
        |ch: Channel| -> Vec<usize> { out.channel_modes(ch).into_iter().filter_map(|m| out.mode_index(m)).collect() };
    let (c, d) = (slots(Channel::C), slots(Channel::D));
    Ok(out.group_count_distribution(&[&c, &d]).into_iter().map(|(k, p)| ((k[0], k[1]), p)).collect())
}

fn sample_outcome(dist: &CountDistribution, rng: &mut ChaCha8Rng) -> (u32, u32) {
    let total: f64 = dist.iter().map(|(_, p)| p).sum();
    let mut u = rng.random::<f64>() * total;
    for &(k, p) in dist {
        if u < p {
            return k;
        }
        u -= p;
    }
    dist.iter().rev().find(|(_, p)| *p > 0.0).map(|(k, _)| *k).unwrap_or((0, 0))
}

/// One-shot convenience wrapper around [`ShotSimulator`].
pub fn simulate_shot(
    source: &SourceSpec,
    schedule: &PulseSchedule,
    detector: &DetectorSpec,
    seed: ShotSeed,
    tau_us: f64,
) -> Result<ShotEvents, SimError> {
    Ok(ShotSimulator::new(source, schedule, detector)?.simulate(seed, tau_us))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TauBatch {
    pub tau_us: f64,
    pub shots: Vec<ShotEvents>,
}

/// Runs `shots_per_tau` shots at each delay. Shot ids run consecutively
/// across the whole scan, so the output is a pure function of `run_seed`.
pub fn run_dip_scan(
    sim: &ShotSimulator,
    tau_grid: &[f64],
    shots_per_tau: usize,
    run_seed: u64,
    exec: Execution,
) -> Result<Vec<TauBatch>, SimError> {
    if shots_per_tau == 0 {
        return Err(SimError::NoShots);
    }
    let mut batches = Vec::with_capacity(tau_grid.len());
    for (i, &tau_us) in tau_grid.iter().enumerate() {
        let base = (i * shots_per_tau) as u64;
        let shots = exec::map_indexed(exec, shots_per_tau, |k| {
            sim.simulate(ShotSeed { run_seed, shot_id: base + k as u64 }, tau_us)
        });
        batches.push(TauBatch { tau_us, shots });
    }
    Ok(batches)
}

/// Source-only repetitions (no mirror, no splitter).
pub fn run_source_shots(sim: &ShotSimulator, shots: usize, run_seed: u64, exec: Execution) -> Vec<ShotEvents> {
    exec::map_indexed(exec, shots, |k| sim.simulate_source(ShotSeed { run_seed, shot_id: k as u64 }))
}
