//! Closed-form predictions for the dip visibility.
//!
//! Moments are normally ordered second moments of the two input channels in
//! detected units. The visibility bound is homogeneous in the detection
//! efficiency, so `eta` is carried along for reporting only.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fock::{self, BeamSplitterSpec, Channel, FockError, FockState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelatorError {
    #[error("visibility undefined: {0}")]
    UndefinedVisibility(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Fock(#[from] FockError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputMoments {
    pub g2_aa: f64,
    pub g2_bb: f64,
    pub g2_ab: f64,
    pub eta: f64,
}

impl InputMoments {
    pub fn new(g2_aa: f64, g2_bb: f64, g2_ab: f64) -> Self {
        InputMoments { g2_aa, g2_bb, g2_ab, eta: 1.0 }
    }

    /// Moments measured upstream of the mirror in the reference run.
    pub fn reference_measured() -> Self {
        InputMoments { g2_aa: 0.016, g2_bb: 0.047, g2_ab: 0.048, eta: 0.25 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityPrediction {
    pub v_max: f64,
    /// Phase-averaged coincidence for fully indistinguishable particles.
    pub g2_dip: f64,
    /// Coincidence for distinguishable particles.
    pub g2_background: f64,
    /// Amplitude of the single-particle interference term `Δ(φ)`; zero when
    /// only moments are known.
    pub delta_amplitude: f64,
}

pub fn visibility_bound(m: &InputMoments) -> Result<VisibilityPrediction, CorrelatorError> {
    for (name, v) in [("g2_aa", m.g2_aa), ("g2_bb", m.g2_bb), ("g2_ab", m.g2_ab)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(CorrelatorError::Domain(format!("{name} = {v} must be finite and non-negative")));
        }
    }
    let auto = m.g2_aa + m.g2_bb;
    let total = auto + 2.0 * m.g2_ab;
    if total <= 0.0 {
        return Err(CorrelatorError::UndefinedVisibility("all moments vanish".into()));
    }
    Ok(VisibilityPrediction {
        v_max: 1.0 - auto / total,
        g2_dip: auto / 4.0,
        g2_background: total / 4.0,
        delta_amplitude: 0.0,
    })
}

/// Dip visibility for a two-mode squeezed vacuum input, `(2n + 1)/(4n + 1)`.
pub fn tmsv_visibility(mean_n: f64) -> Result<f64, CorrelatorError> {
    if !(mean_n.is_finite() && mean_n >= 0.0) {
        return Err(CorrelatorError::Domain(format!("mean_n = {mean_n}")));
    }
    Ok((2.0 * mean_n + 1.0) / (4.0 * mean_n + 1.0))
}

/// Classical-wave admissibility: `g2_ab ≤ √(g2_aa g2_bb)`.
pub fn cauchy_schwarz_check(m: &InputMoments) -> bool {
    m.g2_ab <= (m.g2_aa * m.g2_bb).sqrt() + 1e-12
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalDip {
    pub visibility: f64,
    /// Standard error of the phase average, from the spread of the
    /// per-phase visibilities.
    pub std_error: f64,
}

/// Two classical fields with intensities `I_a`, `I_b` on a balanced
/// splitter, output intensity product averaged over the relative phase.
///
/// Phases sit on a midpoint grid over `[0, 2π)`, so for three or more
/// samples the average is exactly `2 I_a I_b / (I_a + I_b)²`.
pub fn classical_wave_dip(
    intensity_a: f64,
    intensity_b: f64,
    phase_samples: usize,
) -> Result<ClassicalDip, CorrelatorError> {
    if !(intensity_a >= 0.0 && intensity_b >= 0.0) {
        return Err(CorrelatorError::Domain("intensities must be non-negative".into()));
    }
    if phase_samples == 0 {
        return Err(CorrelatorError::Domain("phase_samples must be at least 1".into()));
    }
    let sum = intensity_a + intensity_b;
    if sum <= 0.0 {
        return Err(CorrelatorError::UndefinedVisibility("both intensities are zero".into()));
    }
    let u = BeamSplitterSpec::balanced(0.0).matrix();
    let alpha = Complex64::new(intensity_a.sqrt(), 0.0);
    // distinguishable fields add in intensity
    let background = (u[0][0].norm_sqr() * intensity_a + u[0][1].norm_sqr() * intensity_b)
        * (u[1][0].norm_sqr() * intensity_a + u[1][1].norm_sqr() * intensity_b);

    let m = phase_samples as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for k in 0..phase_samples {
        let theta = 2.0 * PI * (k as f64 + 0.5) / m;
        let beta = Complex64::from_polar(intensity_b.sqrt(), theta);
        let c = u[0][0] * alpha + u[0][1] * beta;
        let d = u[1][0] * alpha + u[1][1] * beta;
        let v = 1.0 - c.norm_sqr() * d.norm_sqr() / background;
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / m;
    let var = if phase_samples > 1 { ((s2 - m * mean * mean) / (m - 1.0)).max(0.0) } else { 0.0 };
    Ok(ClassicalDip { visibility: mean, std_error: (var / m).sqrt() })
}

/// Input moments of channels `a` and `b` of an exact state (η = 1).
pub fn moments_from_state(state: &FockState, a: Channel, b: Channel) -> InputMoments {
    let ma = state.channel_modes(a);
    let mb = state.channel_modes(b);
    InputMoments::new(
        fock::correlator_g2(state, &ma, &ma),
        fock::correlator_g2(state, &mb, &mb),
        fock::correlator_g2(state, &ma, &mb),
    )
}

/// Output coincidence `⟨:N_c N_d:⟩` after a splitter, summed over labels.
pub fn splitter_coincidence(state: &FockState, transmittance: f64, phase: f64) -> Result<f64, CorrelatorError> {
    let out = fock::apply_beam_splitter(state, &BeamSplitterSpec::new(transmittance, phase))?;
    let c = out.channel_modes(Channel::C);
    let d = out.channel_modes(Channel::D);
    Ok(fock::correlator_g2(&out, &c, &d))
}

/// Uniform `grid`-point phase average of [`splitter_coincidence`].
pub fn phase_averaged_coincidence(state: &FockState, transmittance: f64, grid: usize) -> Result<f64, CorrelatorError> {
    if grid == 0 {
        return Err(CorrelatorError::Domain("grid must be at least 1".into()));
    }
    let mut acc = 0.0;
    for k in 0..grid {
        acc += splitter_coincidence(state, transmittance, 2.0 * PI * k as f64 / grid as f64)?;
    }
    Ok(acc / grid as f64)
}

/// `⟨b†² a²⟩` on the matched modes of `a` and `b`.
fn pair_exchange(state: &FockState, a: Channel, b: Channel) -> Complex64 {
    let (Some(ia), Some(ib)) = (state.mode_index(fock::ModeId::matched(a)), state.mode_index(fock::ModeId::matched(b)))
    else {
        return Complex64::new(0.0, 0.0);
    };
    let aa = state.annihilate(ia).annihilate(ia);
    let bb = state.annihilate(ib).annihilate(ib);
    bb.inner(&aa)
}

/// Single-particle interference term `Δ(φ) = 2 Re[e^{2iφ} ⟨b†² a²⟩]` for a
/// balanced splitter, so that `4 G_cd(φ) = G_aa + G_bb + Δ(φ)`.
pub fn interference_term(state: &FockState, a: Channel, b: Channel, phase: f64) -> f64 {
    2.0 * (Complex64::from_polar(1.0, 2.0 * phase) * pair_exchange(state, a, b)).re
}

/// Visibility prediction from an exact state, including `|Δ|`.
pub fn predict_from_state(state: &FockState, a: Channel, b: Channel) -> Result<VisibilityPrediction, CorrelatorError> {
    let mut p = visibility_bound(&moments_from_state(state, a, b))?;
    p.delta_amplitude = 2.0 * pair_exchange(state, a, b).norm();
    Ok(p)
}
