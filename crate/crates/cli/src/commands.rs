use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hom_core::correlators::{
    classical_wave_dip, phase_averaged_coincidence, tmsv_visibility, visibility_bound, InputMoments,
    VisibilityPrediction,
};
use hom_core::estimators::{
    count_histogram, dip_points, estimate_eta_from_variance, estimate_g2_auto, estimate_g2_cross, fit_dip,
    fit_incident_poisson, scan_visibility_vs_volume, stability_table, CorrelationEstimate, DipFit, DipPoint,
    EtaEstimate, IntegrationVolume, PoissonFit, VolumeAxis,
};
use hom_core::exec::Execution;
use hom_core::fock::{self, Channel, ModeId};
use hom_core::mc::{
    read_events, run_dip_scan, run_source_shots, write_events, ShotEvents, ShotSimulator, SourceFamily, CHANNEL_CUTOFF,
};
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::CliError;

const OVERLAP_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const TMSV_CURVE: [f64; 6] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0];
const PHASE_GRID: usize = 64;

#[derive(Serialize)]
struct OverlapPoint {
    overlap: f64,
    g2_cd: f64,
}

#[derive(Serialize)]
struct SingleMode {
    family: SourceFamily,
    moments: InputMoments,
    bound: VisibilityPrediction,
    coincidence_vs_overlap: Vec<OverlapPoint>,
    /// From the exact curve at the configured splitter transmittance.
    visibility: f64,
}

#[derive(Serialize)]
struct TmsvPoint {
    mean_n: f64,
    visibility: f64,
}

#[derive(Serialize)]
struct PredictReport {
    config_hash: String,
    measured_moments: InputMoments,
    measured_bound: VisibilityPrediction,
    single_mode: SingleMode,
    tmsv_curve: Vec<TmsvPoint>,
    classical_bound: f64,
}

fn poisson_pmf(mean: f64, n: u32) -> f64 {
    (-mean).exp() * (1..=n).fold(1.0, |acc, k| acc * mean / k as f64)
}

/// Joint `(n_a, n_b)` distribution of the central mode, truncated at the
/// per-channel cutoff and renormalised.
fn central_mode_distribution(cfg: &ScenarioConfig) -> Vec<((u32, u32), f64)> {
    let s = &cfg.source;
    if s.family == SourceFamily::FixedFock {
        return vec![((s.mean_n_a as u32, s.mean_n_b as u32), 1.0)];
    }
    let m = s.mean_n_a.min(s.mean_n_b);
    let (ea, eb) = ((s.mean_n_a - m).max(0.0), (s.mean_n_b - m).max(0.0));
    let pair = |p: u32| match s.family {
        SourceFamily::Tmsv => (m / (1.0 + m)).powi(p as i32) / (1.0 + m),
        _ => poisson_pmf(m, p),
    };
    let mut out = Vec::new();
    let mut total = 0.0;
    for na in 0..=CHANNEL_CUTOFF {
        for nb in 0..=CHANNEL_CUTOFF {
            let w: f64 = (0..=na.min(nb)).map(|p| pair(p) * poisson_pmf(ea, na - p) * poisson_pmf(eb, nb - p)).sum();
            total += w;
            out.push(((na, nb), w));
        }
    }
    out.into_iter().map(|(k, w)| (k, w / total)).collect()
}

fn single_mode_prediction(cfg: &ScenarioConfig) -> Result<SingleMode, CliError> {
    let dist = central_mode_distribution(cfg);
    let moment = |f: fn(f64, f64) -> f64| dist.iter().map(|&((a, b), w)| w * f(a as f64, b as f64)).sum::<f64>();
    let moments = InputMoments::new(moment(|a, _| a * (a - 1.0)), moment(|_, b| b * (b - 1.0)), moment(|a, b| a * b));
    let bound = visibility_bound(&moments)?;

    let t = cfg.schedule.splitter_transmittance;
    let mut curve = Vec::new();
    for overlap in OVERLAP_GRID {
        let mut g = 0.0;
        for &((na, nb), w) in &dist {
            if w == 0.0 || na + nb < 2 {
                continue;
            }
            let state = fock::make_input_state(
                &[(ModeId::matched(Channel::A), na), (ModeId::matched(Channel::B), nb)],
                CHANNEL_CUTOFF,
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
            let mixed =
                fock::decompose_overlap(&state, Channel::B, overlap).map_err(|e| CliError::Data(e.to_string()))?;
            g += w * phase_averaged_coincidence(&mixed, t, PHASE_GRID)?;
        }
        curve.push(OverlapPoint { overlap, g2_cd: g });
    }
    let (g0, g1) = (curve[0].g2_cd, curve[curve.len() - 1].g2_cd);
    let visibility = if g0 > 0.0 { 1.0 - g1 / g0 } else { f64::NAN };
    Ok(SingleMode { family: cfg.source.family, moments, bound, coincidence_vs_overlap: curve, visibility })
}

pub fn predict(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<(), CliError> {
    let measured_moments = InputMoments::reference_measured();
    let report = PredictReport {
        config_hash: cfg.hash(),
        measured_bound: visibility_bound(&measured_moments)?,
        measured_moments,
        single_mode: single_mode_prediction(cfg)?,
        tmsv_curve: TMSV_CURVE
            .iter()
            .map(|&n| Ok(TmsvPoint { mean_n: n, visibility: tmsv_visibility(n)? }))
            .collect::<Result<_, CliError>>()?,
        classical_bound: classical_wave_dip(1.0, 1.0, 4096)?.visibility,
    };
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, text + "\n")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulationMeta<'a> {
    config_hash: String,
    run_seed: u64,
    source_only: bool,
    shots: usize,
    tau_grid_us: &'a [f64],
    shots_per_tau: usize,
    resampled_draws: u64,
    generator: String,
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

pub fn simulate(cfg: &ScenarioConfig, out: &Path, source_only: bool) -> Result<(), CliError> {
    let sim = ShotSimulator::new(&cfg.source.spec(), &cfg.schedule, &cfg.detector())?;
    let shots: Vec<ShotEvents> = if source_only {
        run_source_shots(&sim, cfg.scan.shots_per_tau * cfg.scan.tau_grid_us.len(), cfg.run_seed, Execution::Parallel)
    } else {
        run_dip_scan(&sim, &cfg.scan.tau_grid_us, cfg.scan.shots_per_tau, cfg.run_seed, Execution::Parallel)?
            .into_iter()
            .flat_map(|b| b.shots)
            .collect()
    };
    write_events(BufWriter::new(File::create(out)?), &shots)?;

    let meta = SimulationMeta {
        config_hash: cfg.hash(),
        run_seed: cfg.run_seed,
        source_only,
        shots: shots.len(),
        tau_grid_us: &cfg.scan.tau_grid_us,
        shots_per_tau: cfg.scan.shots_per_tau,
        resampled_draws: shots.iter().map(|s| s.resampled as u64).sum(),
        generator: format!("hom {}", env!("CARGO_PKG_VERSION")),
    };
    fs::write(sidecar_path(out), serde_json::to_string_pretty(&meta)? + "\n")?;
    eprintln!("wrote {} shots to {}", shots.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct DipRow {
    tau_us: f64,
    g2: f64,
    stderr: f64,
    n_c_mean: f64,
    n_d_mean: f64,
}

#[derive(Serialize)]
struct StabilityCsvRow {
    tau_us: f64,
    shots: u64,
    n_c_mean: f64,
    n_c_stderr: f64,
    n_d_mean: f64,
    n_d_stderr: f64,
}

#[derive(Serialize)]
struct VolumeRow {
    size: f64,
    visibility: f64,
    err: f64,
}

#[derive(Serialize)]
struct FitReport<'a> {
    config_hash: String,
    events: String,
    shots: usize,
    fit: &'a DipFit,
    fwhm_us: f64,
    points: &'a [DipPoint],
}

#[derive(Serialize)]
struct CalibrationReport {
    config_hash: String,
    events: String,
    shots: usize,
    g2_aa: CorrelationEstimate,
    g2_bb: CorrelationEstimate,
    g2_ab: CorrelationEstimate,
    bound: VisibilityPrediction,
    eta_from_variance: EtaEstimate,
    incident_a: PoissonFit,
    incident_b: PoissonFit,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn load_events(cfg: &ScenarioConfig, path: &Path) -> Result<Vec<ShotEvents>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let parsed = read_events(BufReader::new(file), cfg.analysis.max_malformed_fraction)?;
    for bad in &parsed.malformed {
        eprintln!("warning: {}:{}: skipped malformed line: {}", path.display(), bad.line, bad.reason);
    }
    Ok(parsed.shots)
}

pub struct AnalyzeOptions<'a> {
    pub events: &'a Path,
    pub out_dir: &'a Path,
    pub volume_scan: bool,
    pub calibration: bool,
}

pub fn analyze(cfg: &ScenarioConfig, opts: &AnalyzeOptions) -> Result<(), CliError> {
    let shots = load_events(cfg, opts.events)?;
    fs::create_dir_all(opts.out_dir)?;
    if opts.calibration {
        return calibrate(cfg, opts, &shots);
    }
    let exec = Execution::Parallel;
    let (vc, vd) = (cfg.volume("c"), cfg.volume("d"));

    let points = dip_points(&shots, &vc, &vd, exec)?;
    write_csv(
        &opts.out_dir.join("dip_scan.csv"),
        points.iter().map(|p| DipRow {
            tau_us: p.tau_us,
            g2: p.g2,
            stderr: p.std_error,
            n_c_mean: p.n_c_mean,
            n_d_mean: p.n_d_mean,
        }),
    )?;
    write_csv(
        &opts.out_dir.join("stability.csv"),
        stability_table(&shots, &vc, &vd, exec)?.into_iter().map(|r| StabilityCsvRow {
            tau_us: r.tau_us,
            shots: r.shots,
            n_c_mean: r.n_c_mean,
            n_c_stderr: r.n_c_std_error,
            n_d_mean: r.n_d_mean,
            n_d_stderr: r.n_d_std_error,
        }),
    )?;

    let fit = fit_dip(&points)?;
    let report = FitReport {
        config_hash: cfg.hash(),
        events: opts.events.display().to_string(),
        shots: shots.len(),
        fit: &fit,
        fwhm_us: fit.fwhm_us(),
        points: &points,
    };
    fs::write(opts.out_dir.join("dip_fit.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    eprintln!(
        "V = {:.3} ± {:.3}, tau0 = {:.1} ± {:.1} us, FWHM = {:.1} us, background = {:.4}",
        fit.visibility,
        fit.confidence_68.visibility,
        fit.tau0_us,
        fit.confidence_68.tau0_us,
        fit.fwhm_us(),
        fit.g2_bg
    );

    if opts.volume_scan {
        for (axis, sizes, name) in [
            (VolumeAxis::Z, &cfg.analysis.volume_scan_z_cm_per_s, "volume_scan_z.csv"),
            (VolumeAxis::Perp, &cfg.analysis.volume_scan_perp_cm_per_s, "volume_scan_perp.csv"),
        ] {
            let scan = scan_visibility_vs_volume(&shots, &vc, &vd, axis, sizes, exec)?;
            for p in scan.iter().filter(|p| !p.converged) {
                eprintln!("warning: {name}: fit at size {} did not converge; reporting the last iterate", p.size);
            }
            write_csv(
                &opts.out_dir.join(name),
                scan.iter().map(|p| VolumeRow {
                    size: p.size,
                    visibility: p.fit.visibility,
                    err: p.fit.confidence_68.visibility,
                }),
            )?;
        }
    }
    Ok(())
}

fn calibrate(cfg: &ScenarioConfig, opts: &AnalyzeOptions, shots: &[ShotEvents]) -> Result<(), CliError> {
    let exec = Execution::Parallel;
    let (va, vb) = (cfg.volume("a"), cfg.volume("b"));
    let full = |v: &IntegrationVolume| IntegrationVolume {
        center: v.center,
        dv_z: cfg.analysis.full_beam_size_cm_per_s,
        dv_perp: cfg.analysis.full_beam_size_cm_per_s,
    };
    let g2_aa = estimate_g2_auto(shots, &va, exec)?;
    let g2_bb = estimate_g2_auto(shots, &vb, exec)?;
    let g2_ab = estimate_g2_cross(shots, &va, &vb, exec)?;
    let moments = InputMoments { g2_aa: g2_aa.value, g2_bb: g2_bb.value, g2_ab: g2_ab.value, eta: cfg.schedule.eta };
    let report = CalibrationReport {
        config_hash: cfg.hash(),
        events: opts.events.display().to_string(),
        shots: shots.len(),
        bound: visibility_bound(&moments)?,
        g2_aa,
        g2_bb,
        g2_ab,
        eta_from_variance: estimate_eta_from_variance(shots, &full(&va), &full(&vb), exec)?,
        incident_a: fit_incident_poisson(&count_histogram(shots, &va), cfg.schedule.eta)?,
        incident_b: fit_incident_poisson(&count_histogram(shots, &vb), cfg.schedule.eta)?,
    };
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(opts.out_dir.join("calibration.json"), text.clone() + "\n")?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}")?;
    Ok(())
}
