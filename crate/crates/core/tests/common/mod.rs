//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;

/// Two-port splitter matrix, rows `(c, d)`, columns `(a, b)`.
pub fn splitter_matrix(t: f64, phi: f64) -> [[Complex64; 2]; 2] {
    let i = Complex64::i();
    let (s, r) = (t.sqrt(), (1.0 - t).sqrt());
    [
        [i * Complex64::from_polar(s, phi), Complex64::new(r, 0.0)],
        [Complex64::new(r, 0.0), i * Complex64::from_polar(s, -phi)],
    ]
}

/// Permanent by Ryser's formula.
pub fn permanent(m: &[Vec<Complex64>]) -> Complex64 {
    let n = m.len();
    if n == 0 {
        return Complex64::new(1.0, 0.0);
    }
    let mut total = Complex64::new(0.0, 0.0);
    for subset in 1u32..(1 << n) {
        let mut prod = Complex64::new(1.0, 0.0);
        for row in m {
            let s: Complex64 = (0..n).filter(|j| subset & (1 << j) != 0).map(|j| row[j]).sum();
            prod *= s;
        }
        let sign = if (n as u32 - subset.count_ones()).is_multiple_of(2) { 1.0 } else { -1.0 };
        total += sign * prod;
    }
    total
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// `⟨m_c, m_d| U |n_a, n_b⟩` for a two-mode linear transform.
pub fn transition_amplitude(u: &[[Complex64; 2]; 2], n: (u32, u32), m: (u32, u32)) -> Complex64 {
    if n.0 + n.1 != m.0 + m.1 {
        return Complex64::new(0.0, 0.0);
    }
    let inputs: Vec<usize> = std::iter::repeat_n(0, n.0 as usize).chain(std::iter::repeat_n(1, n.1 as usize)).collect();
    let outputs: Vec<usize> =
        std::iter::repeat_n(0, m.0 as usize).chain(std::iter::repeat_n(1, m.1 as usize)).collect();
    let sub: Vec<Vec<Complex64>> = outputs.iter().map(|&o| inputs.iter().map(|&i| u[o][i]).collect()).collect();
    let norm = (factorial(n.0) * factorial(n.1) * factorial(m.0) * factorial(m.1)).sqrt();
    permanent(&sub) / norm
}

/// Output `(N_c, N_d)` distribution of `|n_a, n_b⟩`.
pub fn output_distribution(u: &[[Complex64; 2]; 2], n: (u32, u32)) -> Vec<((u32, u32), f64)> {
    let total = n.0 + n.1;
    (0..=total).map(|mc| ((mc, total - mc), transition_amplitude(u, n, (mc, total - mc)).norm_sqr())).collect()
}

/// `⟨N_c N_d⟩` of `|n_a, n_b⟩` after the splitter.
pub fn cross_correlation(u: &[[Complex64; 2]; 2], n: (u32, u32)) -> f64 {
    output_distribution(u, n).iter().map(|&((c, d), p)| (c * d) as f64 * p).sum()
}
