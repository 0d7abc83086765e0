//! Scenario configuration: a TOML file with unit-suffixed keys. Every field
//! has a default, so an empty file describes the reference scenario.

use std::collections::BTreeMap;

use hom_core::estimators::IntegrationVolume;
use hom_core::mc::{DetectorSpec, PulseSchedule, SourceFamily, SourceSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

const PORTS: [&str; 4] = ["a", "b", "c", "d"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub family: SourceFamily,
    pub mean_n_a: f64,
    pub mean_n_b: f64,
    pub v_center_a_cm_per_s: [f64; 3],
    pub v_center_b_cm_per_s: [f64; 3],
    pub fwhm_z_cm_per_s: f64,
    pub fwhm_perp_cm_per_s: f64,
    pub mode_size_z_cm_per_s: f64,
    pub mode_size_perp_cm_per_s: f64,
    pub coherence_sigma_t_us: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::from(&SourceSpec::reference())
    }
}

impl From<&SourceSpec> for SourceConfig {
    fn from(s: &SourceSpec) -> Self {
        SourceConfig {
            family: s.family,
            mean_n_a: s.mean_n_a,
            mean_n_b: s.mean_n_b,
            v_center_a_cm_per_s: s.v_center_a,
            v_center_b_cm_per_s: s.v_center_b,
            fwhm_z_cm_per_s: s.fwhm_z,
            fwhm_perp_cm_per_s: s.fwhm_perp,
            mode_size_z_cm_per_s: s.mode_size_z,
            mode_size_perp_cm_per_s: s.mode_size_perp,
            coherence_sigma_t_us: s.coherence_sigma_t_us,
        }
    }
}

impl SourceConfig {
    pub fn spec(&self) -> SourceSpec {
        SourceSpec {
            family: self.family,
            mean_n_a: self.mean_n_a,
            mean_n_b: self.mean_n_b,
            v_center_a: self.v_center_a_cm_per_s,
            v_center_b: self.v_center_b_cm_per_s,
            fwhm_z: self.fwhm_z_cm_per_s,
            fwhm_perp: self.fwhm_perp_cm_per_s,
            mode_size_z: self.mode_size_z_cm_per_s,
            mode_size_perp: self.mode_size_perp_cm_per_s,
            coherence_sigma_t_us: self.coherence_sigma_t_us,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub pixel_z_cm_per_s: f64,
    pub pixel_perp_cm_per_s: f64,
    pub enabled: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let d = DetectorSpec::default();
        DetectorConfig { pixel_z_cm_per_s: d.pixel_z, pixel_perp_cm_per_s: d.pixel_perp, enabled: d.enabled }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeConfig {
    pub center_cm_per_s: [f64; 3],
    #[serde(default = "default_dv_z")]
    pub dv_z_cm_per_s: f64,
    #[serde(default = "default_dv_perp")]
    pub dv_perp_cm_per_s: f64,
}

fn default_dv_z() -> f64 {
    0.3
}

fn default_dv_perp() -> f64 {
    0.5
}

impl VolumeConfig {
    pub fn volume(&self) -> IntegrationVolume {
        IntegrationVolume { center: self.center_cm_per_s, dv_z: self.dv_z_cm_per_s, dv_perp: self.dv_perp_cm_per_s }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub tau_grid_us: Vec<f64>,
    pub shots_per_tau: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { tau_grid_us: (0..9).map(|i| 350.0 + 50.0 * i as f64).collect(), shots_per_tau: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub volume_scan_z_cm_per_s: Vec<f64>,
    pub volume_scan_perp_cm_per_s: Vec<f64>,
    pub max_malformed_fraction: f64,
    /// Box size used for whole-beam calibration volumes.
    pub full_beam_size_cm_per_s: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            volume_scan_z_cm_per_s: vec![0.15, 0.3, 0.6, 1.2, 2.4],
            volume_scan_perp_cm_per_s: vec![0.25, 0.5, 1.0, 2.0],
            max_malformed_fraction: 0.01,
            full_beam_size_cm_per_s: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run_seed: u64,
    pub source: SourceConfig,
    pub schedule: PulseSchedule,
    pub detector: DetectorConfig,
    pub volumes: BTreeMap<String, VolumeConfig>,
    pub scan: ScanConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let source = SourceConfig::default();
        let volume = |c: [f64; 3]| VolumeConfig {
            center_cm_per_s: c,
            dv_z_cm_per_s: default_dv_z(),
            dv_perp_cm_per_s: default_dv_perp(),
        };
        let volumes = BTreeMap::from([
            ("a".to_string(), volume(source.v_center_a_cm_per_s)),
            ("b".to_string(), volume(source.v_center_b_cm_per_s)),
            // The mirror swaps the beams: port c leaves at the velocity of a.
            ("c".to_string(), volume(source.v_center_a_cm_per_s)),
            ("d".to_string(), volume(source.v_center_b_cm_per_s)),
        ]);
        ScenarioConfig {
            run_seed: 42,
            source,
            schedule: PulseSchedule::default(),
            detector: DetectorConfig::default(),
            volumes,
            scan: ScanConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses and validates. `text` is kept only for error locations.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            CliError::Config { origin: origin.to_string(), line, message: e.message().trim().to_string() }
        })?;
        let defaults = ScenarioConfig::default();
        for (port, v) in &defaults.volumes {
            cfg.volumes.entry(port.clone()).or_insert(*v);
        }
        cfg.validate().map_err(|(path, message)| CliError::Config {
            origin: origin.to_string(),
            line: locate(text, &path),
            message: format!("{path}: {message}"),
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn volume(&self, port: &str) -> IntegrationVolume {
        self.volumes[port].volume()
    }

    pub fn detector(&self) -> DetectorSpec {
        DetectorSpec {
            pixel_z: self.detector.pixel_z_cm_per_s,
            pixel_perp: self.detector.pixel_perp_cm_per_s,
            enabled: self.detector.enabled,
        }
    }

    fn validate(&self) -> Result<(), (String, String)> {
        let err = |path: &str, msg: String| Err((path.to_string(), msg));
        if let Err(e) = self.source.spec().validate() {
            let msg = e.to_string();
            let field = msg.split("source.").nth(1).and_then(|s| s.split_whitespace().next()).unwrap_or("family");
            let key = source_key(field);
            return err(&format!("source.{key}"), msg);
        }
        if let Err(e) = self.schedule.validate() {
            let msg = e.to_string();
            let key =
                msg.split("schedule.").nth(1).and_then(|s| s.split_whitespace().next()).unwrap_or("t2_us").to_string();
            return err(&format!("schedule.{key}"), msg);
        }
        if let Err(e) = self.detector().validate() {
            return err("detector.pixel_z_cm_per_s", e.to_string());
        }
        for port in self.volumes.keys() {
            if !PORTS.contains(&port.as_str()) {
                return err(&format!("volumes.{port}"), format!("unknown port {port:?}; expected one of a, b, c, d"));
            }
        }
        for (port, v) in &self.volumes {
            if let Err(e) = v.volume().validate() {
                return err(&format!("volumes.{port}.dv_z_cm_per_s"), e.to_string());
            }
        }
        for (x, y) in [("a", "b"), ("c", "d")] {
            if self.volume(x).overlaps(&self.volume(y)) {
                return err(&format!("volumes.{y}"), format!("volumes {x} and {y} overlap"));
            }
        }
        if self.scan.tau_grid_us.is_empty() || self.scan.tau_grid_us.iter().any(|t| !t.is_finite()) {
            return err("scan.tau_grid_us", "must be a non-empty list of finite delays".into());
        }
        if self.scan.shots_per_tau == 0 {
            return err("scan.shots_per_tau", "must be at least 1".into());
        }
        for (key, sizes) in [
            ("volume_scan_z_cm_per_s", &self.analysis.volume_scan_z_cm_per_s),
            ("volume_scan_perp_cm_per_s", &self.analysis.volume_scan_perp_cm_per_s),
        ] {
            if sizes.is_empty() || sizes.iter().any(|s| !(*s > 0.0)) || sizes.windows(2).any(|w| w[1] <= w[0]) {
                return err(&format!("analysis.{key}"), "sizes must be positive and strictly ascending".into());
            }
        }
        if !(0.0..=1.0).contains(&self.analysis.max_malformed_fraction) {
            return err("analysis.max_malformed_fraction", "must lie in [0, 1]".into());
        }
        if !(self.analysis.full_beam_size_cm_per_s > 0.0) {
            return err("analysis.full_beam_size_cm_per_s", "must be positive".into());
        }
        Ok(())
    }
}

fn source_key(field: &str) -> &str {
    match field {
        "fwhm_z" => "fwhm_z_cm_per_s",
        "fwhm_perp" => "fwhm_perp_cm_per_s",
        "mode_size_z" => "mode_size_z_cm_per_s",
        "mode_size_perp" => "mode_size_perp_cm_per_s",
        other => other,
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the key at dotted `path`, or of its table header if the key is
/// absent.
fn locate(text: &str, path: &str) -> Option<usize> {
    let (table, key) = path.rsplit_once('.').unwrap_or(("", path));
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == table || current == path {
                header_line.get_or_insert(i + 1);
            }
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let cfg = ScenarioConfig::parse("", "test").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.source.spec(), SourceSpec::reference());
    }

    #[test]
    fn dump_and_reload_is_identity() {
        let mut cfg = ScenarioConfig::default();
        cfg.run_seed = 7;
        cfg.scan.tau_grid_us = vec![500.0, 550.0, 600.0];
        cfg.source.family = SourceFamily::Tmsv;
        cfg.source.mean_n_a = 0.1;
        cfg.source.mean_n_b = 0.1;
        let text = cfg.to_toml();
        let back = ScenarioConfig::parse(&text, "dump").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(back.hash(), ScenarioConfig::default().hash());
    }

    #[test]
    fn validation_errors_carry_path_and_line() {
        let text = "run_seed = 1\n\n[schedule]\nt1_us = 0.0\neta = 1.5\n";
        match ScenarioConfig::parse(text, "cfg.toml") {
            Err(CliError::Config { line, message, .. }) => {
                assert_eq!(line, Some(5));
                assert!(message.contains("schedule.eta"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let text = "[source]\nfwhm_z_cm_per_s = -1.0\n";
        match ScenarioConfig::parse(text, "cfg.toml") {
            Err(CliError::Config { line, message, .. }) => {
                assert_eq!(line, Some(2));
                assert!(message.contains("source.fwhm_z_cm_per_s"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_and_unknown_keys_are_reported_with_lines() {
        match ScenarioConfig::parse("[scan]\nshots_per_tau = 10\nbogus = 3\n", "cfg.toml") {
            Err(CliError::Config { line, .. }) => assert_eq!(line, Some(3)),
            other => panic!("{other:?}"),
        }
        match ScenarioConfig::parse("[volumes.e]\ncenter_cm_per_s = [0.0, 0.0, 1.0]\n", "cfg.toml") {
            Err(CliError::Config { line, message, .. }) => {
                assert_eq!(line, Some(1));
                assert!(message.contains("unknown port"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overlapping_output_volumes_are_rejected() {
        let text = "[volumes.d]\ncenter_cm_per_s = [0.0, 0.0, 12.2]\n";
        assert!(matches!(ScenarioConfig::parse(text, "cfg.toml"), Err(CliError::Config { .. })));
    }
}
