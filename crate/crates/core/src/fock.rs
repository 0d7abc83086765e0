//! Finite bosonic Fock space over a handful of labelled modes.
//!
//! States are stored sparsely: a map from occupation tuples to complex
//! amplitudes. Passive linear optics (beam splitter, mirror, loss,
//! wave-packet mismatch) is applied by substituting creation operators,
//! which keeps total particle number exact and never needs re-truncation.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard ceiling on the number of mode slots a state can carry.
pub const MAX_MODES: usize = 8;

/// Probability mass a constructor may drop when truncating an infinite series.
pub const TRUNCATION_BUDGET: f64 = 1e-9;

/// Largest total occupation the factorial tables cover.
const MAX_TOTAL: usize = 96;

/// Occupation tuple. Slots past the state's mode count are always zero.
pub type Occupation = [u8; MAX_MODES];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FockError {
    #[error("occupation {occupation} exceeds cutoff {cutoff}")]
    Cutoff { occupation: u32, cutoff: u32 },
    #[error("truncation tail {tail:.3e} exceeds budget; cutoff must be at least {required}")]
    TruncationBudget { tail: f64, required: u32 },
    #[error("mode error: {0}")]
    Mode(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("state would need more than {MAX_MODES} modes")]
    TooManyModes,
    #[error("invalid state: {0}")]
    Invalid(String),
}

/// Physical channel of a mode. Loss and auxiliary channels carry an index
/// so that several independent loss ports can coexist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    A,
    B,
    C,
    D,
    Loss(u8),
    Aux(u8),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::A => f.write_str("a"),
            Channel::B => f.write_str("b"),
            Channel::C => f.write_str("c"),
            Channel::D => f.write_str("d"),
            Channel::Loss(k) => write!(f, "loss{k}"),
            Channel::Aux(k) => write!(f, "aux{k}"),
        }
    }
}

/// Temporal wave-packet label. Particles with different labels are
/// distinguishable; detectors cannot resolve the label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalLabel {
    Matched,
    Orthogonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeId {
    pub channel: Channel,
    pub label: TemporalLabel,
}

impl ModeId {
    pub const fn matched(channel: Channel) -> Self {
        ModeId { channel, label: TemporalLabel::Matched }
    }

    pub const fn orthogonal(channel: Channel) -> Self {
        ModeId { channel, label: TemporalLabel::Orthogonal }
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label {
            TemporalLabel::Matched => write!(f, "{}", self.channel),
            TemporalLabel::Orthogonal => write!(f, "{}'", self.channel),
        }
    }
}

/// Two-port beam splitter acting on channels. It acts blockwise: the same
/// 2×2 matrix couples `(a, L)` and `(b, L)` for every temporal label `L`.
///
/// With `T` the transmittance the Heisenberg-picture relation is
///
/// ```text
/// c = i e^{iφ} √T a + √(1-T) b
/// d = √(1-T) a + i e^{-iφ} √T b
/// ```
///
/// which reduces to the Bragg splitter matrix at `T = 1/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSplitterSpec {
    pub transmittance: f64,
    pub phase: f64,
    pub input_pair: (Channel, Channel),
    pub output_pair: (Channel, Channel),
}

impl BeamSplitterSpec {
    /// Splitter mapping `(a, b)` onto `(c, d)`.
    pub fn new(transmittance: f64, phase: f64) -> Self {
        BeamSplitterSpec {
            transmittance,
            phase,
            input_pair: (Channel::A, Channel::B),
            output_pair: (Channel::C, Channel::D),
        }
    }

    pub fn balanced(phase: f64) -> Self {
        Self::new(0.5, phase)
    }

    /// Mode matrix `u[out][in]`.
    pub fn matrix(&self) -> [[Complex64; 2]; 2] {
        let t = self.transmittance.sqrt();
        let r = (1.0 - self.transmittance).sqrt();
        let i = Complex64::i();
        let e = Complex64::from_polar(1.0, self.phase);
        [[i * e * t, Complex64::new(r, 0.0)], [Complex64::new(r, 0.0), i * e.conj() * t]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub survival: f64,
    pub target: ModeId,
}

/// π-pulse mirror: swaps two channels with reflectivity `R`; the missing
/// `1 - R` leaks into fresh loss modes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorSpec {
    pub reflectivity: f64,
    pub phase: f64,
    pub pair: (Channel, Channel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FockState {
    modes: Vec<ModeId>,
    amplitudes: BTreeMap<Occupation, Complex64>,
    max_total: u32,
}

struct Tables {
    sqrt_fact: Vec<f64>,
    binom: Vec<Vec<f64>>,
}

fn tables() -> &'static Tables {
    static TABLES: std::sync::OnceLock<Tables> = std::sync::OnceLock::new();
    TABLES.get_or_init(|| {
        let mut sqrt_fact = vec![1.0; MAX_TOTAL + 1];
        let mut fact = 1.0f64;
        for n in 1..=MAX_TOTAL {
            fact *= n as f64;
            sqrt_fact[n] = fact.sqrt();
        }
        let mut binom = vec![vec![0.0; MAX_TOTAL + 1]; MAX_TOTAL + 1];
        for n in 0..=MAX_TOTAL {
            binom[n][0] = 1.0;
            for k in 1..=n {
                binom[n][k] = binom[n - 1][k - 1] + if k < n { binom[n - 1][k] } else { 0.0 };
            }
        }
        Tables { sqrt_fact, binom }
    })
}

fn powers(z: Complex64, n: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = Complex64::new(1.0, 0.0);
    out.push(acc);
    for _ in 0..n {
        acc *= z;
        out.push(acc);
    }
    out
}

fn check_probability(name: &str, p: f64) -> Result<(), FockError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(FockError::Domain(format!("{name} = {p} is outside [0, 1]")))
    }
}

/// Product Fock state with the given occupations.
///
/// `cutoff` bounds the occupation of every individual mode.
pub fn make_input_state(occupations: &[(ModeId, u32)], cutoff: u32) -> Result<FockState, FockError> {
    if occupations.len() > MAX_MODES {
        return Err(FockError::TooManyModes);
    }
    let mut modes = Vec::with_capacity(occupations.len());
    let mut occ: Occupation = [0; MAX_MODES];
    for (slot, &(mode, n)) in occupations.iter().enumerate() {
        if modes.contains(&mode) {
            return Err(FockError::Mode(format!("duplicate mode {mode}")));
        }
        if n > cutoff {
            return Err(FockError::Cutoff { occupation: n, cutoff });
        }
        modes.push(mode);
        occ[slot] = n as u8;
    }
    let max_total = cutoff * modes.len().max(1) as u32;
    let mut amplitudes = BTreeMap::new();
    amplitudes.insert(occ, Complex64::new(1.0, 0.0));
    Ok(FockState { modes, amplitudes, max_total })
}

/// Two-mode squeezed vacuum with `mean_n = sinh²(r)` per mode.
///
/// Amplitudes are `tanh(r)^n / cosh(r)` on `|n, n⟩` for `n ≤ cutoff`. The
/// dropped tail `(n̄/(n̄+1))^(cutoff+1)` must stay within [`TRUNCATION_BUDGET`].
pub fn make_two_mode_squeezed(mean_n: f64, cutoff: u32, pair: (ModeId, ModeId)) -> Result<FockState, FockError> {
    if !(mean_n >= 0.0 && mean_n.is_finite()) {
        return Err(FockError::Domain(format!("mean_n = {mean_n} must be finite and non-negative")));
    }
    if pair.0 == pair.1 {
        return Err(FockError::Mode(format!("duplicate mode {}", pair.0)));
    }
    let ratio = mean_n / (mean_n + 1.0);
    let tail = ratio.powi(cutoff as i32 + 1);
    if tail > TRUNCATION_BUDGET {
        let required = (TRUNCATION_BUDGET.ln() / ratio.ln()).ceil() as u32 - 1;
        return Err(FockError::TruncationBudget { tail, required });
    }
    if 2 * cutoff as usize > MAX_TOTAL || cutoff > u8::MAX as u32 {
        return Err(FockError::Cutoff { occupation: cutoff, cutoff: (MAX_TOTAL / 2) as u32 });
    }
    let mut amplitudes = BTreeMap::new();
    let norm = (1.0 / (mean_n + 1.0)).sqrt();
    let step = ratio.sqrt();
    let mut amp = norm;
    for n in 0..=cutoff {
        if amp == 0.0 {
            break;
        }
        let mut occ: Occupation = [0; MAX_MODES];
        occ[0] = n as u8;
        occ[1] = n as u8;
        amplitudes.insert(occ, Complex64::new(amp, 0.0));
        amp *= step;
    }
    Ok(FockState { modes: vec![pair.0, pair.1], amplitudes, max_total: 2 * cutoff })
}

impl FockState {
    /// Validated constructor from raw `(occupation, amplitude)` entries.
    pub fn from_amplitudes<I>(modes: Vec<ModeId>, entries: I, max_total: u32) -> Result<Self, FockError>
    where
        I: IntoIterator<Item = (Vec<u8>, Complex64)>,
    {
        if modes.len() > MAX_MODES {
            return Err(FockError::TooManyModes);
        }
        for (i, m) in modes.iter().enumerate() {
            if modes[..i].contains(m) {
                return Err(FockError::Mode(format!("duplicate mode {m}")));
            }
        }
        if max_total as usize > MAX_TOTAL {
            return Err(FockError::Invalid(format!("max_total {max_total} exceeds {MAX_TOTAL}")));
        }
        let mut amplitudes = BTreeMap::new();
        for (occ, amp) in entries {
            if occ.len() != modes.len() {
                return Err(FockError::Invalid(format!(
                    "occupation tuple of length {} for {} modes",
                    occ.len(),
                    modes.len()
                )));
            }
            let total: u32 = occ.iter().map(|&n| n as u32).sum();
            if total > max_total {
                return Err(FockError::Cutoff { occupation: total, cutoff: max_total });
            }
            if !(amp.re.is_finite() && amp.im.is_finite()) {
                return Err(FockError::Invalid("non-finite amplitude".into()));
            }
            let mut key: Occupation = [0; MAX_MODES];
            key[..occ.len()].copy_from_slice(&occ);
            *amplitudes.entry(key).or_insert(Complex64::new(0.0, 0.0)) += amp;
        }
        let state = FockState { modes, amplitudes, max_total };
        let norm = state.norm_sqr();
        if !(1.0 - TRUNCATION_BUDGET - 1e-12..=1.0 + 1e-12).contains(&norm) {
            return Err(FockError::Invalid(format!("squared norm {norm} outside [1 - budget, 1]")));
        }
        Ok(state)
    }

    pub fn modes(&self) -> &[ModeId] {
        &self.modes
    }

    pub fn max_total(&self) -> u32 {
        self.max_total
    }

    pub fn mode_index(&self, mode: ModeId) -> Option<usize> {
        self.modes.iter().position(|&m| m == mode)
    }

    /// Every mode belonging to `channel`, whatever its temporal label.
    pub fn channel_modes(&self, channel: Channel) -> Vec<ModeId> {
        self.modes.iter().copied().filter(|m| m.channel == channel).collect()
    }

    /// Non-zero entries as `(occupation slice, amplitude)`.
    pub fn amplitudes(&self) -> impl Iterator<Item = (&[u8], Complex64)> + '_ {
        let n = self.modes.len();
        self.amplitudes.iter().map(move |(k, &a)| (&k[..n], a))
    }

    pub fn amplitude(&self, occupation: &[u8]) -> Complex64 {
        if occupation.len() != self.modes.len() {
            return Complex64::new(0.0, 0.0);
        }
        let mut key: Occupation = [0; MAX_MODES];
        key[..occupation.len()].copy_from_slice(occupation);
        self.amplitudes.get(&key).copied().unwrap_or_default()
    }

    pub fn probability(&self, occupation: &[u8]) -> f64 {
        self.amplitude(occupation).norm_sqr()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    /// Distribution of the total particle number.
    pub fn total_number_distribution(&self) -> BTreeMap<u32, f64> {
        let mut out = BTreeMap::new();
        for (occ, amp) in &self.amplitudes {
            let total: u32 = occ.iter().map(|&n| n as u32).sum();
            *out.entry(total).or_insert(0.0) += amp.norm_sqr();
        }
        out
    }

    /// Joint distribution of the particle numbers summed over each group of
    /// mode indices. Keys come out in lexicographic order.
    pub fn group_count_distribution(&self, groups: &[&[usize]]) -> BTreeMap<Vec<u32>, f64> {
        let mut out = BTreeMap::new();
        for (occ, amp) in &self.amplitudes {
            let key: Vec<u32> = groups.iter().map(|g| g.iter().map(|&i| occ[i] as u32).sum()).collect();
            *out.entry(key).or_insert(0.0) += amp.norm_sqr();
        }
        out
    }

    /// Applies `a` (unnormalised) to the given mode slot.
    pub fn annihilate(&self, index: usize) -> FockState {
        let mut amplitudes = BTreeMap::new();
        for (occ, amp) in &self.amplitudes {
            let n = occ[index];
            if n == 0 {
                continue;
            }
            let mut key = *occ;
            key[index] = n - 1;
            amplitudes.insert(key, amp * (n as f64).sqrt());
        }
        FockState { modes: self.modes.clone(), amplitudes, max_total: self.max_total }
    }

    /// `⟨self|other⟩`. Both states must share the same mode layout.
    pub fn inner(&self, other: &FockState) -> Complex64 {
        debug_assert_eq!(self.modes, other.modes);
        self.amplitudes.iter().filter_map(|(k, a)| other.amplitudes.get(k).map(|b| a.conj() * b)).sum()
    }

    fn with_mode(&self, mode: ModeId) -> Result<(FockState, usize), FockError> {
        if self.mode_index(mode).is_some() {
            return Err(FockError::Mode(format!("mode {mode} already present")));
        }
        if self.modes.len() >= MAX_MODES {
            return Err(FockError::TooManyModes);
        }
        let mut next = self.clone();
        next.modes.push(mode);
        Ok((next, self.modes.len()))
    }

    /// Substitutes `a_i† → u00 a_i† + u10 a_j†`, `a_j† → u01 a_i† + u11 a_j†`.
    fn two_mode_transform(&self, i: usize, j: usize, u: [[Complex64; 2]; 2]) -> FockState {
        let tab = tables();
        let max_n = self.amplitudes.keys().map(|k| k[i].max(k[j]) as usize).max().unwrap_or(0);
        let p00 = powers(u[0][0], max_n);
        let p10 = powers(u[1][0], max_n);
        let p01 = powers(u[0][1], max_n);
        let p11 = powers(u[1][1], max_n);

        let mut out: BTreeMap<Occupation, Complex64> = BTreeMap::new();
        for (occ, &amp) in &self.amplitudes {
            let ni = occ[i] as usize;
            let nj = occ[j] as usize;
            if ni == 0 && nj == 0 {
                *out.entry(*occ).or_default() += amp;
                continue;
            }
            let pre = amp / (tab.sqrt_fact[ni] * tab.sqrt_fact[nj]);
            let total = ni + nj;
            for k in 0..=ni {
                let from_i = p00[k] * p10[ni - k] * tab.binom[ni][k];
                for l in 0..=nj {
                    let coeff = from_i * p01[l] * p11[nj - l] * tab.binom[nj][l];
                    if coeff == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let mi = k + l;
                    let mj = total - mi;
                    let mut key = *occ;
                    key[i] = mi as u8;
                    key[j] = mj as u8;
                    let v = pre * coeff * tab.sqrt_fact[mi] * tab.sqrt_fact[mj];
                    *out.entry(key).or_default() += v;
                }
            }
        }
        out.retain(|_, a| *a != Complex64::new(0.0, 0.0));
        FockState { modes: self.modes.clone(), amplitudes: out, max_total: self.max_total }
    }

    fn labels_of(&self, channel: Channel) -> Vec<TemporalLabel> {
        let mut labels: Vec<TemporalLabel> =
            self.modes.iter().filter(|m| m.channel == channel).map(|m| m.label).collect();
        labels.sort();
        labels
    }

    fn next_loss_index(&self) -> u8 {
        self.modes
            .iter()
            .filter_map(|m| match m.channel {
                Channel::Loss(k) => Some(k + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}

fn ensure_mode(state: &mut FockState, mode: ModeId) -> Result<usize, FockError> {
    if let Some(i) = state.mode_index(mode) {
        return Ok(i);
    }
    let (next, i) = state.with_mode(mode)?;
    *state = next;
    Ok(i)
}

/// Applies a beam splitter blockwise over temporal labels.
///
/// Both input channels must be present. Output channels must either alias
/// an input channel or be absent from the state.
pub fn apply_beam_splitter(state: &FockState, spec: &BeamSplitterSpec) -> Result<FockState, FockError> {
    check_probability("transmittance", spec.transmittance)?;
    let (ca, cb) = spec.input_pair;
    let (cc, cd) = spec.output_pair;
    if ca == cb || cc == cd {
        return Err(FockError::Mode("splitter ports must be distinct".into()));
    }
    for ch in [ca, cb] {
        if state.channel_modes(ch).is_empty() {
            return Err(FockError::Mode(format!("unknown input channel {ch}")));
        }
    }
    for ch in [cc, cd] {
        if ch != ca && ch != cb && !state.channel_modes(ch).is_empty() {
            return Err(FockError::Mode(format!("output channel {ch} is neither an input nor fresh")));
        }
    }

    let mut labels = state.labels_of(ca);
    labels.extend(state.labels_of(cb));
    labels.sort();
    labels.dedup();

    let u = spec.matrix();
    let mut current = state.clone();
    let mut slots = Vec::with_capacity(labels.len());
    for &label in &labels {
        let ia = ensure_mode(&mut current, ModeId { channel: ca, label })?;
        let ib = ensure_mode(&mut current, ModeId { channel: cb, label })?;
        current = current.two_mode_transform(ia, ib, u);
        slots.push((ia, ib, label));
    }
    for (ia, ib, label) in slots {
        current.modes[ia] = ModeId { channel: cc, label };
        current.modes[ib] = ModeId { channel: cd, label };
    }
    Ok(current)
}

/// Loss as a fictitious beam splitter into a fresh loss mode.
pub fn apply_loss(state: &FockState, spec: &LossSpec) -> Result<FockState, FockError> {
    check_probability("survival", spec.survival)?;
    let target =
        state.mode_index(spec.target).ok_or_else(|| FockError::Mode(format!("unknown mode {}", spec.target)))?;
    let loss = ModeId::matched(Channel::Loss(state.next_loss_index()));
    let (next, slot) = state.with_mode(loss)?;
    let t = spec.survival.sqrt();
    let r = (1.0 - spec.survival).sqrt();
    let u = [[Complex64::new(t, 0.0), Complex64::new(-r, 0.0)], [Complex64::new(r, 0.0), Complex64::new(t, 0.0)]];
    Ok(next.two_mode_transform(target, slot, u))
}

/// Mirror pulse: leakage `1 - R` on every mode of both channels, then a
/// swap of the two channels with the pulse phases `i e^{±iφ}`.
pub fn apply_mirror(state: &FockState, spec: &MirrorSpec) -> Result<FockState, FockError> {
    check_probability("reflectivity", spec.reflectivity)?;
    let (ca, cb) = spec.pair;
    if ca == cb {
        return Err(FockError::Mode("mirror channels must be distinct".into()));
    }
    let mut current = state.clone();
    if spec.reflectivity < 1.0 {
        let targets: Vec<ModeId> = state.modes.iter().copied().filter(|m| m.channel == ca || m.channel == cb).collect();
        for target in targets {
            current = apply_loss(&current, &LossSpec { survival: spec.reflectivity, target })?;
        }
    }
    let i = Complex64::i();
    let e = Complex64::from_polar(1.0, spec.phase);
    let from_a = i * e;
    let from_b = i * e.conj();
    let a_slots: Vec<usize> = (0..current.modes.len()).filter(|&k| current.modes[k].channel == ca).collect();
    let b_slots: Vec<usize> = (0..current.modes.len()).filter(|&k| current.modes[k].channel == cb).collect();
    let mut amplitudes = BTreeMap::new();
    for (occ, amp) in &current.amplitudes {
        let na: i32 = a_slots.iter().map(|&k| occ[k] as i32).sum();
        let nb: i32 = b_slots.iter().map(|&k| occ[k] as i32).sum();
        amplitudes.insert(*occ, amp * from_a.powi(na) * from_b.powi(nb));
    }
    current.amplitudes = amplitudes;
    for m in current.modes.iter_mut() {
        if m.channel == ca {
            m.channel = cb;
        } else if m.channel == cb {
            m.channel = ca;
        }
    }
    Ok(current)
}

/// Splits `channel`'s matched wave packet into `overlap · matched +
/// √(1 - overlap²) · orthogonal`.
pub fn decompose_overlap(state: &FockState, channel: Channel, overlap: f64) -> Result<FockState, FockError> {
    check_probability("overlap", overlap)?;
    let matched = ModeId::matched(channel);
    let idx = state.mode_index(matched).ok_or_else(|| FockError::Mode(format!("unknown mode {matched}")))?;
    if state.mode_index(ModeId::orthogonal(channel)).is_some() {
        return Err(FockError::Mode(format!("channel {channel} already has an orthogonal mode")));
    }
    if overlap == 1.0 {
        return Ok(state.clone());
    }
    let (next, slot) = state.with_mode(ModeId::orthogonal(channel))?;
    let s = (1.0 - overlap * overlap).sqrt();
    let u = [
        [Complex64::new(overlap, 0.0), Complex64::new(-s, 0.0)],
        [Complex64::new(s, 0.0), Complex64::new(overlap, 0.0)],
    ];
    Ok(next.two_mode_transform(idx, slot, u))
}

/// Normally ordered second moment `⟨:N₁ N₂:⟩` of two detector channels,
/// each given as a set of modes. Equal sets give `⟨N(N-1)⟩`.
pub fn correlator_g2(state: &FockState, m1: &[ModeId], m2: &[ModeId]) -> f64 {
    let idx = |set: &[ModeId]| -> Vec<usize> { set.iter().filter_map(|&m| state.mode_index(m)).collect() };
    let i1 = idx(m1);
    let i2 = idx(m2);
    let shared: Vec<usize> = i1.iter().copied().filter(|i| i2.contains(i)).collect();
    state
        .amplitudes
        .iter()
        .map(|(occ, amp)| {
            let n1: f64 = i1.iter().map(|&i| occ[i] as f64).sum();
            let n2: f64 = i2.iter().map(|&i| occ[i] as f64).sum();
            let both: f64 = shared.iter().map(|&i| occ[i] as f64).sum();
            amp.norm_sqr() * (n1 * n2 - both)
        })
        .sum()
}

/// Mean occupation summed over a set of modes.
pub fn mean_number(state: &FockState, modes: &[ModeId]) -> f64 {
    let idx: Vec<usize> = modes.iter().filter_map(|&m| state.mode_index(m)).collect();
    state.amplitudes.iter().map(|(occ, amp)| amp.norm_sqr() * idx.iter().map(|&i| occ[i] as f64).sum::<f64>()).sum()
}

#[derive(Serialize, Deserialize)]
struct FockStateRepr {
    modes: Vec<ModeId>,
    max_total: u32,
    amplitudes: Vec<(Vec<u8>, f64, f64)>,
}

impl Serialize for FockState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        FockStateRepr {
            modes: self.modes.clone(),
            max_total: self.max_total,
            amplitudes: self.amplitudes().map(|(o, a)| (o.to_vec(), a.re, a.im)).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FockState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = FockStateRepr::deserialize(deserializer)?;
        FockState::from_amplitudes(
            repr.modes,
            repr.amplitudes.into_iter().map(|(o, re, im)| (o, Complex64::new(re, im))),
            repr.max_total,
        )
        .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const A: ModeId = ModeId::matched(Channel::A);
    const B: ModeId = ModeId::matched(Channel::B);

    fn outputs(state: &FockState) -> (Vec<ModeId>, Vec<ModeId>) {
        (state.channel_modes(Channel::C), state.channel_modes(Channel::D))
    }

    #[test]
    fn input_state_construction() {
        let s = make_input_state(&[(A, 1), (B, 1)], 4).unwrap();
        assert_eq!(s.amplitudes().count(), 1);
        assert_eq!(s.amplitude(&[1, 1]), Complex64::new(1.0, 0.0));

        let s = make_input_state(&[(A, 2), (B, 2)], 4).unwrap();
        assert_eq!(s.norm_sqr(), 1.0);

        assert!(matches!(make_input_state(&[(A, 5)], 4), Err(FockError::Cutoff { .. })));
        assert!(matches!(make_input_state(&[(A, 1), (A, 1)], 4), Err(FockError::Mode(_))));
    }

    #[test]
    fn squeezed_vacuum_moments() {
        let s = make_two_mode_squeezed(0.0, 4, (A, B)).unwrap();
        assert_eq!(s.amplitudes().count(), 1);
        assert!((s.amplitude(&[0, 0]).re - 1.0).abs() < 1e-15);

        let s = make_two_mode_squeezed(0.1, 12, (A, B)).unwrap();
        assert!((mean_number(&s, &[A]) - 0.1).abs() < 1e-9);
        assert!((mean_number(&s, &[B]) - 0.1).abs() < 1e-9);

        let s = make_two_mode_squeezed(0.5, 30, (A, B)).unwrap();
        // brute force over the amplitude table
        let brute: f64 = s.amplitudes().map(|(o, a)| a.norm_sqr() * o[0] as f64 * o[1] as f64).sum();
        assert!((brute - 1.0).abs() < 1e-8);
        assert!((correlator_g2(&s, &[A], &[B]) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn squeezed_vacuum_reports_required_cutoff() {
        match make_two_mode_squeezed(0.5, 5, (A, B)) {
            Err(FockError::TruncationBudget { required, .. }) => {
                assert!(make_two_mode_squeezed(0.5, required, (A, B)).is_ok());
                assert!(make_two_mode_squeezed(0.5, required - 1, (A, B)).is_err());
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn hom_null_for_single_pairs() {
        let s = make_input_state(&[(A, 1), (B, 1)], 4).unwrap();
        for k in 0..16 {
            let phi = 2.0 * PI * k as f64 / 16.0;
            let out = apply_beam_splitter(&s, &BeamSplitterSpec::balanced(phi)).unwrap();
            let (c, d) = outputs(&out);
            assert!(correlator_g2(&out, &c, &d) < 1e-12);
            assert!((out.probability(&[2, 0]) - 0.5).abs() < 1e-12);
            assert!((out.probability(&[0, 2]) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_particle_splits_evenly() {
        let s = make_input_state(&[(A, 1), (B, 0)], 4).unwrap();
        let out = apply_beam_splitter(&s, &BeamSplitterSpec::balanced(0.3)).unwrap();
        assert!((out.probability(&[1, 0]) - 0.5).abs() < 1e-12);
        assert!((out.probability(&[0, 1]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn double_pair_joint_annihilation() {
        let s = make_input_state(&[(A, 2), (B, 2)], 4).unwrap();
        let out = apply_beam_splitter(&s, &BeamSplitterSpec::balanced(1.1)).unwrap();
        let ic = out.mode_index(ModeId::matched(Channel::C)).unwrap();
        let id = out.mode_index(ModeId::matched(Channel::D)).unwrap();
        let reduced = out.annihilate(ic).annihilate(id);
        assert!((reduced.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn splitter_rejects_bad_modes() {
        let s = make_input_state(&[(A, 1)], 4).unwrap();
        assert!(matches!(apply_beam_splitter(&s, &BeamSplitterSpec::balanced(0.0)), Err(FockError::Mode(_))));
        let s = make_input_state(&[(A, 1), (B, 1), (ModeId::matched(Channel::C), 0)], 4).unwrap();
        assert!(matches!(apply_beam_splitter(&s, &BeamSplitterSpec::balanced(0.0)), Err(FockError::Mode(_))));
        let s = make_input_state(&[(A, 1), (B, 1)], 4).unwrap();
        let aliased = BeamSplitterSpec {
            transmittance: 0.5,
            phase: 0.0,
            input_pair: (Channel::A, Channel::B),
            output_pair: (Channel::A, Channel::B),
        };
        assert!(apply_beam_splitter(&s, &aliased).is_ok());
    }

    #[test]
    fn loss_thins_binomially() {
        let s = make_input_state(&[(A, 1)], 4).unwrap();
        let same = apply_loss(&s, &LossSpec { survival: 1.0, target: A }).unwrap();
        assert!((mean_number(&same, &[A]) - 1.0).abs() < 1e-15);

        let lossy = apply_loss(&s, &LossSpec { survival: 0.25, target: A }).unwrap();
        assert!((mean_number(&lossy, &[A]) - 0.25).abs() < 1e-12);

        let s = make_input_state(&[(A, 3)], 4).unwrap();
        let lossy = apply_loss(&s, &LossSpec { survival: 0.4, target: A }).unwrap();
        let ia = lossy.mode_index(A).unwrap();
        let dist = lossy.group_count_distribution(&[&[ia]]);
        for k in 0..=3u32 {
            let binom = [1.0, 3.0, 3.0, 1.0][k as usize] * 0.4f64.powi(k as i32) * 0.6f64.powi(3 - k as i32);
            assert!((dist[&vec![k]] - binom).abs() < 1e-12);
        }
        assert!(matches!(apply_loss(&s, &LossSpec { survival: 1.5, target: A }), Err(FockError::Domain(_))));
    }

    #[test]
    fn loss_keeps_destructive_interference() {
        let s = make_input_state(&[(A, 1), (B, 1)], 4).unwrap();
        let lossy = apply_loss(&s, &LossSpec { survival: 0.3, target: A }).unwrap();
        let out = apply_beam_splitter(&lossy, &BeamSplitterSpec::balanced(0.7)).unwrap();
        let (c, d) = outputs(&out);
        let detected_both = out.amplitudes().filter(|(o, _)| o[2] == 0).map(|(_, a)| a.norm_sqr()).sum::<f64>();
        assert!((detected_both - 0.3).abs() < 1e-12);
        assert!(correlator_g2(&out, &c, &d) < 1e-12);
    }

    #[test]
    fn overlap_decomposition() {
        let s = make_input_state(&[(A, 1), (B, 1)], 4).unwrap();
        assert_eq!(decompose_overlap(&s, Channel::B, 1.0).unwrap(), s);
        assert!(matches!(decompose_overlap(&s, Channel::B, 1.2), Err(FockError::Domain(_))));

        for (overlap, expected) in [(0.0, 0.5), (0.5, 0.375)] {
            let d = decompose_overlap(&s, Channel::B, overlap).unwrap();
            assert!((d.norm_sqr() - 1.0).abs() < 1e-12);
            let out = apply_beam_splitter(&d, &BeamSplitterSpec::balanced(0.4)).unwrap();
            let (c, dd) = outputs(&out);
            assert!((correlator_g2(&out, &c, &dd) - expected).abs() < 1e-12);
        }
        let d = decompose_overlap(&s, Channel::B, 0.5).unwrap();
        assert!(matches!(decompose_overlap(&d, Channel::B, 0.5), Err(FockError::Mode(_))));
    }

    #[test]
    fn correlator_examples() {
        let s = make_input_state(&[(A, 1), (B, 1)], 4).unwrap();
        assert_eq!(correlator_g2(&s, &[A], &[B]), 1.0);
        let s = make_input_state(&[(A, 2)], 4).unwrap();
        assert_eq!(correlator_g2(&s, &[A], &[A]), 2.0);
    }

    #[test]
    fn mirror_swaps_and_leaks() {
        let s = make_input_state(&[(A, 2), (B, 0)], 4).unwrap();
        let m =
            apply_mirror(&s, &MirrorSpec { reflectivity: 0.95, phase: 0.2, pair: (Channel::A, Channel::B) }).unwrap();
        assert!((mean_number(&m, &m.channel_modes(Channel::B)) - 1.9).abs() < 1e-12);
        assert!(mean_number(&m, &m.channel_modes(Channel::A)).abs() < 1e-12);
        assert!((m.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let s = make_two_mode_squeezed(0.2, 12, (A, B)).unwrap();
        let s = decompose_overlap(&s, Channel::B, 0.6).unwrap();
        let s = apply_beam_splitter(&s, &BeamSplitterSpec::new(0.49, 0.9)).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: FockState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
