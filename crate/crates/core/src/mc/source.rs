use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};

use super::{SourceFamily, SourceSpec, CHANNEL_CUTOFF};

/// Cells whose envelope falls below this are dropped.
const ENVELOPE_FLOOR: f64 = 1e-4;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Clone, Debug)]
enum PairLaw {
    None,
    Poisson(Poisson<f64>),
    Thermal(Geometric),
}

impl PairLaw {
    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self {
            PairLaw::None => 0,
            PairLaw::Poisson(d) => d.sample(rng) as u32,
            PairLaw::Thermal(d) => d.sample(rng).min(u32::MAX as u64) as u32,
        }
    }
}

fn poisson(mean: f64) -> PairLaw {
    if mean > 0.0 {
        PairLaw::Poisson(Poisson::new(mean).expect("positive finite mean"))
    } else {
        PairLaw::None
    }
}

#[derive(Clone, Debug)]
struct ModeLaws {
    pair: PairLaw,
    extra_a: PairLaw,
    extra_b: PairLaw,
}

/// Occupations of every cell of both beams for one shot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairDraw {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
    pub resampled: u32,
}

/// Velocity-space tiling of the beams into elementary modes.
#[derive(Clone, Debug)]
pub struct CellLattice {
    offsets: Vec<[f64; 3]>,
    envelope: Vec<f64>,
    twin: Vec<usize>,
    central: usize,
    cell_size: [f64; 3],
    family: SourceFamily,
    fixed: (u8, u8),
    laws: Vec<ModeLaws>,
}

impl CellLattice {
    pub fn new(source: &SourceSpec) -> Self {
        let sigma =
            [source.fwhm_perp / FWHM_PER_SIGMA, source.fwhm_perp / FWHM_PER_SIGMA, source.fwhm_z / FWHM_PER_SIGMA];
        let size = [source.mode_size_perp, source.mode_size_perp, source.mode_size_z];
        let extent: Vec<i64> = (0..3)
            .map(|k| {
                let reach = sigma[k] * (-2.0 * ENVELOPE_FLOOR.ln()).sqrt();
                (reach / size[k]).floor() as i64
            })
            .collect();

        let mut index = Vec::new();
        let mut offsets = Vec::new();
        let mut envelope = Vec::new();
        for iz in -extent[2]..=extent[2] {
            for iy in -extent[1]..=extent[1] {
                for ix in -extent[0]..=extent[0] {
                    let off = [ix as f64 * size[0], iy as f64 * size[1], iz as f64 * size[2]];
                    let q: f64 = (0..3).map(|k| (off[k] / sigma[k]).powi(2)).sum();
                    let env = (-0.5 * q).exp();
                    if env >= ENVELOPE_FLOOR {
                        index.push([ix, iy, iz]);
                        offsets.push(off);
                        envelope.push(env);
                    }
                }
            }
        }
        let twin = index
            .iter()
            .map(|c| {
                let m = [-c[0], -c[1], -c[2]];
                index.iter().position(|d| *d == m).expect("lattice is symmetric")
            })
            .collect();
        let central = index.iter().position(|c| *c == [0, 0, 0]).expect("central cell");

        let (lo, hi) = (source.mean_n_a.min(source.mean_n_b), (source.mean_n_a - source.mean_n_b));
        let laws = envelope
            .iter()
            .map(|&e| ModeLaws {
                pair: match source.family {
                    SourceFamily::Tmsv if lo > 0.0 => {
                        PairLaw::Thermal(Geometric::new(1.0 / (1.0 + lo * e)).expect("probability in (0, 1]"))
                    }
                    SourceFamily::Tmsv => PairLaw::None,
                    _ => poisson(lo * e),
                },
                extra_a: poisson(hi.max(0.0) * e),
                extra_b: poisson((-hi).max(0.0) * e),
            })
            .collect();

        CellLattice {
            offsets,
            envelope,
            twin,
            central,
            cell_size: size,
            family: source.family,
            fixed: (source.mean_n_a.round() as u8, source.mean_n_b.round() as u8),
            laws,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn central(&self) -> usize {
        self.central
    }

    pub fn offset(&self, cell: usize) -> [f64; 3] {
        self.offsets[cell]
    }

    pub fn envelope(&self, cell: usize) -> f64 {
        self.envelope[cell]
    }

    /// Cell of beam `b` holding the twins of pair mode `cell`.
    pub fn twin(&self, cell: usize) -> usize {
        self.twin[cell]
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> PairDraw {
        let n = self.len();
        let mut out = PairDraw { a: vec![0; n], b: vec![0; n], resampled: 0 };
        if self.family == SourceFamily::FixedFock {
            out.a[self.central] = self.fixed.0;
            out.b[self.central] = self.fixed.1;
            return out;
        }
        for (k, law) in self.laws.iter().enumerate() {
            loop {
                let p = law.pair.sample(rng);
                let na = p + law.extra_a.sample(rng);
                let nb = p + law.extra_b.sample(rng);
                if na <= CHANNEL_CUTOFF && nb <= CHANNEL_CUTOFF {
                    out.a[k] = na as u8;
                    out.b[self.twin[k]] = nb as u8;
                    break;
                }
                out.resampled += 1;
            }
        }
        out
    }

    /// Uniform velocity inside `cell` of a beam centred at `center`.
    pub fn sample_velocity(&self, center: [f64; 3], cell: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let off = self.offsets[cell];
        std::array::from_fn(|k| center[k] + off[k] + (rng.random::<f64>() - 0.5) * self.cell_size[k])
    }
}
