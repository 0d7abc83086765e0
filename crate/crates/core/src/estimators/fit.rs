//! Weighted least-squares fit of an inverted Gaussian dip
//! `g(τ) = g_bg (1 - V exp(-(τ - τ0)² / (2σ²)))`.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DipPoint;

const MAX_ITERATIONS: usize = 200;
const TOLERANCE: f64 = 1e-9;
const MIN_POINTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {MIN_POINTS} points, got {0}")]
    InsufficientPoints(usize),
    #[error("non-finite data point at tau = {0}")]
    NonFinite(f64),
    #[error("normal equations are singular")]
    Singular,
    #[error("no convergence after {MAX_ITERATIONS} iterations")]
    NotConverged { last: Box<DipFit> },
}

/// One-standard-deviation parameter uncertainties.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitErrors {
    pub g2_bg: f64,
    pub visibility: f64,
    pub tau0_us: f64,
    pub sigma_us: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipFit {
    pub g2_bg: f64,
    pub visibility: f64,
    pub tau0_us: f64,
    pub sigma_us: f64,
    pub confidence_68: FitErrors,
    /// The unconstrained optimum had `V` outside `[0, 1]`.
    pub visibility_clamped: bool,
    pub iterations: usize,
    pub chi_square: f64,
}

impl DipFit {
    pub fn fwhm_us(&self) -> f64 {
        2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * self.sigma_us
    }

    pub fn model(&self, tau_us: f64) -> f64 {
        model(&Vector4::new(self.g2_bg, self.visibility, self.tau0_us, self.sigma_us), tau_us)
    }
}

fn model(p: &Vector4<f64>, t: f64) -> f64 {
    let u = (t - p[2]) / p[3];
    p[0] * (1.0 - p[1] * (-0.5 * u * u).exp())
}

fn gradient(p: &Vector4<f64>, t: f64) -> Vector4<f64> {
    let (bg, v, t0, s) = (p[0], p[1], p[2], p[3]);
    let u = (t - t0) / s;
    let e = (-0.5 * u * u).exp();
    Vector4::new(1.0 - v * e, -bg * e, -bg * v * e * u / s, -bg * v * e * u * u / s)
}

struct Data {
    t: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    /// Weights are relative; scale the covariance by the reduced chi-square.
    rescale: bool,
}

fn chi_square(d: &Data, p: &Vector4<f64>) -> f64 {
    d.t.iter().zip(&d.y).zip(&d.w).map(|((&t, &y), &w)| w * (y - model(p, t)).powi(2)).sum()
}

fn normal_equations(d: &Data, p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for ((&t, &y), &w) in d.t.iter().zip(&d.y).zip(&d.w) {
        let g = gradient(p, t);
        jtj += w * g * g.transpose();
        jtr += w * (y - model(p, t)) * g;
    }
    (jtj, jtr)
}

fn prepare(points: &[DipPoint]) -> Result<Data, FitError> {
    if points.len() < MIN_POINTS {
        return Err(FitError::InsufficientPoints(points.len()));
    }
    let mut pts: Vec<_> = points.to_vec();
    for p in &pts {
        if !(p.tau_us.is_finite() && p.g2.is_finite() && p.std_error.is_finite()) {
            return Err(FitError::NonFinite(p.tau_us));
        }
    }
    pts.sort_by(|a, b| a.tau_us.total_cmp(&b.tau_us));
    let min_se = pts.iter().map(|p| p.std_error).filter(|&s| s > 0.0).fold(f64::INFINITY, f64::min);
    let rescale = !min_se.is_finite();
    let w = pts.iter().map(|p| if rescale { 1.0 } else { 1.0 / p.std_error.max(min_se).powi(2) }).collect();
    Ok(Data { t: pts.iter().map(|p| p.tau_us).collect(), y: pts.iter().map(|p| p.g2).collect(), w, rescale })
}

fn initial_guess(d: &Data) -> Vector4<f64> {
    let n = d.t.len();
    let i_min = (0..n).min_by(|&i, &j| d.y[i].total_cmp(&d.y[j])).unwrap_or(0);
    let t_min = d.t[i_min];
    let mut far: Vec<usize> = (0..n).collect();
    far.sort_by(|&i, &j| (d.t[j] - t_min).abs().total_cmp(&(d.t[i] - t_min).abs()));
    let k = ((0.3 * n as f64).ceil() as usize).max(1);
    let bg = far[..k].iter().map(|&i| d.y[i]).sum::<f64>() / k as f64;
    let v = if bg > 0.0 { (1.0 - d.y[i_min] / bg).clamp(0.05, 0.95) } else { 0.5 };
    let mut gaps: Vec<f64> = d.t.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.0).collect();
    gaps.sort_by(f64::total_cmp);
    let spacing = gaps.get(gaps.len() / 2).copied().unwrap_or(1.0);
    Vector4::new(bg, v, t_min, 2.0 * spacing)
}

fn finish(d: &Data, p: Vector4<f64>, iterations: usize) -> Result<DipFit, FitError> {
    let chi2 = chi_square(d, &p);
    let (jtj, _) = normal_equations(d, &p);
    let cov = jtj.try_inverse().ok_or(FitError::Singular)?;
    let dof = d.t.len().saturating_sub(4).max(1) as f64;
    let scale = if d.rescale { chi2 / dof } else { 1.0 };
    let se = |i: usize| (cov[(i, i)] * scale).max(0.0).sqrt();
    let clamped = !(0.0..=1.0).contains(&p[1]);
    Ok(DipFit {
        g2_bg: p[0],
        visibility: p[1].clamp(0.0, 1.0),
        tau0_us: p[2],
        sigma_us: p[3].abs(),
        confidence_68: FitErrors { g2_bg: se(0), visibility: se(1), tau0_us: se(2), sigma_us: se(3) },
        visibility_clamped: clamped,
        iterations,
        chi_square: chi2,
    })
}

/// Gauss–Newton with step halving. Stops when the relative parameter step
/// drops below `1e-9` or no step reduces the chi-square.
pub fn fit_dip(points: &[DipPoint]) -> Result<DipFit, FitError> {
    let d = prepare(points)?;
    let mut p = initial_guess(&d);
    let mut chi2 = chi_square(&d, &p);
    for it in 1..=MAX_ITERATIONS {
        let (jtj, jtr) = normal_equations(&d, &p);
        let step = jtj.lu().solve(&jtr).ok_or(FitError::Singular)?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = p + lambda * step;
            let c = chi_square(&d, &trial);
            if c.is_finite() && c <= chi2 {
                accepted = Some((trial, c));
                break;
            }
            lambda *= 0.5;
        }
        let Some((next, c)) = accepted else {
            return finish(&d, p, it);
        };
        let rel = (0..4).map(|k| (next[k] - p[k]).abs() / p[k].abs().max(1e-12)).fold(0.0, f64::max);
        p = next;
        chi2 = c;
        if rel < TOLERANCE {
            return finish(&d, p, it);
        }
    }
    let last = finish(&d, p, MAX_ITERATIONS)?;
    Err(FitError::NotConverged { last: Box::new(last) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(bg: f64, v: f64, t0: f64, s: f64, noise: &[f64]) -> Vec<DipPoint> {
        let truth = Vector4::new(bg, v, t0, s);
        (0..noise.len())
            .map(|i| {
                let t = 350.0 + 25.0 * i as f64;
                DipPoint {
                    tau_us: t,
                    g2: model(&truth, t) + noise[i],
                    std_error: 0.02,
                    n_c_mean: 0.0,
                    n_d_mean: 0.0,
                    shots: 0,
                }
            })
            .collect()
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let pts = synthetic(1.2, 0.6, 550.0, 64.0, &[0.0; 17]);
        let f = fit_dip(&pts).unwrap();
        assert!((f.g2_bg - 1.2).abs() < 1e-8);
        assert!((f.visibility - 0.6).abs() < 1e-8);
        assert!((f.tau0_us - 550.0).abs() < 1e-6);
        assert!((f.sigma_us - 64.0).abs() < 1e-6);
        assert!((f.fwhm_us() - 150.7).abs() < 0.1);
        assert!(!f.visibility_clamped);
    }

    #[test]
    fn noisy_fit_reports_errors() {
        let noise = [0.01, -0.02, 0.015, 0.0, -0.01, 0.02, -0.015, 0.005, 0.01, -0.005, 0.0, 0.02, -0.02];
        let f = fit_dip(&synthetic(1.0, 0.5, 560.0, 60.0, &noise)).unwrap();
        assert!((f.visibility - 0.5).abs() < 3.0 * f.confidence_68.visibility);
        assert!(f.confidence_68.tau0_us > 0.0);
    }

    #[test]
    fn too_few_points() {
        let pts = synthetic(1.0, 0.5, 550.0, 60.0, &[0.0; 4]);
        assert_eq!(fit_dip(&pts), Err(FitError::InsufficientPoints(4)));
    }

    #[test]
    fn zero_errors_fall_back_to_unit_weights() {
        let mut pts = synthetic(1.0, 0.4, 550.0, 60.0, &[0.0, 0.01, -0.01, 0.0, 0.01, -0.01, 0.0, 0.0, 0.01]);
        for p in &mut pts {
            p.std_error = 0.0;
        }
        let f = fit_dip(&pts).unwrap();
        assert!((f.visibility - 0.4).abs() < 0.1);
        assert!(f.confidence_68.visibility > 0.0);
    }
}
