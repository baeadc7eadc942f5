//! Particle positions relative to the central atom, dipole-dipole geometric
//! coefficients and the resulting spin-exchange couplings.
//!
//! Bath sites are numbered `1..=N` (site 0 is the atom), matching the bit
//! layout in [`crate::spinmodel`].

use std::f64::consts::{PI, SQRT_2, TAU};
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units;

/// Minimum tweezer spacing below which layouts are flagged, meters.
pub const MIN_TWEEZER_SPACING: f64 = 700e-9;

/// Default degeneracy tolerance for pseudospin superpositions, rad/s.
pub const DEFAULT_DEGENERACY_TOLERANCE: f64 = 1.0e3 * TAU;

/// Positions of the bath particles relative to the atom, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleLayout {
    positions: Vec<[f64; 3]>,
    distances: Vec<f64>,
    cos_thetas: Vec<f64>,
}

impl ParticleLayout {
    pub fn new(positions: Vec<[f64; 3]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter("layout has no sites".into()));
        }
        for (i, p) in positions.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "site {} has a non-finite coordinate",
                    i + 1
                )));
            }
            if norm(p) == 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "site {} coincides with the atom",
                    i + 1
                )));
            }
        }
        let distances: Vec<f64> = positions.iter().map(norm).collect();
        let cos_thetas = positions
            .iter()
            .zip(&distances)
            .map(|(p, r)| (p[2] / r).clamp(-1.0, 1.0))
            .collect();
        Ok(ParticleLayout {
            positions,
            distances,
            cos_thetas,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    fn index(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.positions.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                valid: format!("1..={}", self.positions.len()),
            });
        }
        Ok(k - 1)
    }

    pub fn position(&self, k: usize) -> Result<[f64; 3]> {
        Ok(self.positions[self.index(k)?])
    }

    pub fn distance(&self, k: usize) -> Result<f64> {
        Ok(self.distances[self.index(k)?])
    }

    pub fn cos_theta(&self, k: usize) -> Result<f64> {
        Ok(self.cos_thetas[self.index(k)?])
    }

    /// Polar angle from the field axis, in `[0, π]`.
    pub fn theta(&self, k: usize) -> Result<f64> {
        Ok(self.cos_theta(k)?.acos())
    }

    /// Azimuth `atan2(Y, X)`.
    pub fn phi(&self, k: usize) -> Result<f64> {
        let p = self.position(k)?;
        Ok(p[1].atan2(p[0]))
    }

    /// Smallest distance between any two bath sites.
    pub fn min_spacing(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                let d = norm(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]]);
                best = Some(best.map_or(d, |x: f64| x.min(d)));
            }
        }
        best
    }
}

fn norm(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Bath particles evenly spaced on a ring of radius `r0` around the atom,
/// tilted by `beta` out of the plane perpendicular to the field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingConfig {
    pub n_bath: usize,
    /// meters
    pub r0: f64,
    /// radians
    pub beta: f64,
}

impl RingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bath == 0 {
            return Err(Error::InvalidParameter(
                "ring needs at least one site".into(),
            ));
        }
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ring radius must be positive, got {}",
                self.r0
            )));
        }
        if !(0.0..=PI / 2.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!(
                "tilt beta = {} outside [0, π/2]",
                self.beta
            )));
        }
        Ok(())
    }

    /// Nearest-neighbour chord `2 r0 sin(π/N)`; `None` for a single site.
    pub fn min_chord(&self) -> Option<f64> {
        (self.n_bath > 1).then(|| 2.0 * self.r0 * (PI / self.n_bath as f64).sin())
    }

    pub fn spacing_warning(&self) -> bool {
        self.min_chord().is_some_and(|c| c < MIN_TWEEZER_SPACING)
    }
}

/// `(cos, sin)` of `2π m / n`, exact at multiples of a quarter turn and
/// symmetric under `m -> n - m`.
fn ring_angle(m: usize, n: usize) -> (f64, f64) {
    let m = m % n;
    if (4 * m).is_multiple_of(n) {
        return match 4 * m / n {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
    }
    let (reduced, sign) = if 2 * m > n { (n - m, -1.0) } else { (m, 1.0) };
    let angle = TAU * reduced as f64 / n as f64;
    (angle.cos(), sign * angle.sin())
}

pub fn ring_layout(config: &RingConfig) -> Result<ParticleLayout> {
    config.validate()?;
    let (cb, sb) = if config.beta == PI / 2.0 {
        (0.0, 1.0)
    } else {
        (config.beta.cos(), config.beta.sin())
    };
    let mut layout = ParticleLayout::new(
        (0..config.n_bath)
            .map(|m| {
                let (c, s) = ring_angle(m, config.n_bath);
                [config.r0 * c * cb, -config.r0 * s, config.r0 * c * sb]
            })
            .collect(),
    )?;
    // Every site sits exactly at r0 with cos θ = cos(2π(k−1)/N) sin β.
    layout.distances.fill(config.r0);
    for (m, ct) in layout.cos_thetas.iter_mut().enumerate() {
        *ct = ring_angle(m, config.n_bath).0 * sb;
    }
    Ok(layout)
}

fn check_q(q: i32, what: &str) -> Result<()> {
    if (-1..=1).contains(&q) {
        Ok(())
    } else {
        Err(Error::InvalidQuantumNumbers(format!(
            "{what} component {q} outside -1..=1"
        )))
    }
}

/// `v_{q_atom; q_mol}` for site `k`, in units of `1/(4πε₀)` per m³ (SI), so
/// that multiplying by two dipoles in C·m gives joules.
pub fn dipole_geometric_coeff(
    layout: &ParticleLayout,
    k: usize,
    q_atom: i32,
    q_mol: i32,
) -> Result<Complex64> {
    check_q(q_atom, "atomic")?;
    check_q(q_mol, "molecular")?;
    let r = layout.distance(k)?;
    let c = layout.cos_theta(k)?;
    let s = (1.0 - c * c).max(0.0).sqrt();
    let phi = layout.phi(k)?;
    let scale = 1.0 / (4.0 * PI * units::EPSILON_0 * r.powi(3));
    let v = match (q_atom, q_mol) {
        (0, 0) => Complex64::new(1.0 - 3.0 * c * c, 0.0),
        (1, -1) | (-1, 1) => Complex64::new((1.0 - 3.0 * c * c) / 2.0, 0.0),
        (0, 1) | (1, 0) => 3.0 / SQRT_2 * s * c * Complex64::from_polar(1.0, -phi),
        (0, -1) | (-1, 0) => -3.0 / SQRT_2 * s * c * Complex64::from_polar(1.0, phi),
        (1, 1) => -1.5 * s * s * Complex64::from_polar(1.0, -2.0 * phi),
        (-1, -1) => -1.5 * s * s * Complex64::from_polar(1.0, 2.0 * phi),
        _ => unreachable!("components checked above"),
    };
    Ok(v * scale)
}

/// Atomic and molecular transition dipoles with their spherical components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionPair {
    /// `<⇑|D_{dm_j}|⇓>`, debye.
    pub mu_atom: Complex64,
    pub dm_j: i32,
    /// `<↓|d_{-dM_F}|↑>`-type molecular dipole, debye.
    pub mu_mol: Complex64,
    pub dm_f: i32,
}

impl TransitionPair {
    /// Both transitions with `Δm = 0` and real dipoles.
    pub fn pi_pi(mu_atom_debye: f64, mu_mol_debye: f64) -> Self {
        TransitionPair {
            mu_atom: Complex64::new(mu_atom_debye, 0.0),
            dm_j: 0,
            mu_mol: Complex64::new(mu_mol_debye, 0.0),
            dm_f: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_q(self.dm_j, "atomic")?;
        check_q(self.dm_f, "molecular")?;
        if !(self.mu_atom.re.is_finite()
            && self.mu_atom.im.is_finite()
            && self.mu_mol.re.is_finite()
            && self.mu_mol.im.is_finite())
        {
            return Err(Error::InvalidParameter(
                "transition dipoles must be finite".into(),
            ));
        }
        Ok(())
    }
}

fn parity(n: i32) -> f64 {
    if n.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Spin-exchange coupling `C_k` in rad/s.
pub fn coupling(layout: &ParticleLayout, k: usize, pair: &TransitionPair) -> Result<Complex64> {
    pair.validate()?;
    let v = dipole_geometric_coeff(layout, k, pair.dm_j, -pair.dm_f)?;
    let mu_a = pair.mu_atom * units::DEBYE;
    let mu_m = pair.mu_mol * units::DEBYE;
    Ok(v * mu_a * mu_m * parity(pair.dm_f) / units::HBAR)
}

/// Couplings for every site, in site order.
pub fn couplings(layout: &ParticleLayout, pair: &TransitionPair) -> Result<Vec<Complex64>> {
    (1..=layout.len())
        .map(|k| coupling(layout, k, pair))
        .collect()
}

/// Molecular up-state built as a superposition of three degenerate levels
/// `u_q`, each reached from the down-state by `d_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegeneratePair {
    /// `<⇑|D_{dm_j}|⇓>`, debye.
    pub mu_atom: Complex64,
    pub dm_j: i32,
    /// `<u_q|d_q|↓>` for `q = -1, 0, +1`, debye.
    pub mu_mol: [Complex64; 3],
    /// Energies of `u_{-1}, u_0, u_{+1}` (rad/s) for the degeneracy check.
    pub level_energies: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegenerateCoupling {
    /// Real, positive coupling, rad/s.
    pub c: f64,
    /// `<u_q|↑>` for `q = -1, 0, +1`.
    pub amplitudes: [Complex64; 3],
}

/// Coupling for a superposition up-state; `C_k` is the norm of the three
/// exchange matrix elements and the up-state amplitudes are those elements
/// divided by `C_k`.
pub fn coupling_degenerate(
    layout: &ParticleLayout,
    k: usize,
    pair: &DegeneratePair,
    tolerance: f64,
) -> Result<DegenerateCoupling> {
    check_q(pair.dm_j, "atomic")?;
    if let Some(e) = pair.level_energies {
        let splitting =
            e.iter().cloned().fold(f64::MIN, f64::max) - e.iter().cloned().fold(f64::MAX, f64::min);
        if !(splitting <= tolerance) {
            return Err(Error::DegeneracyViolation {
                splitting,
                tolerance,
            });
        }
    }
    // <⇓|D_{-dm_j}|⇑> = (-1)^{dm_j} <⇑|D_{dm_j}|⇓>*
    let atom = parity(pair.dm_j) * pair.mu_atom.conj() * units::DEBYE;
    let mut elements = [Complex64::new(0.0, 0.0); 3];
    for (slot, q) in (-1..=1).enumerate() {
        let v = dipole_geometric_coeff(layout, k, -pair.dm_j, q)?;
        elements[slot] = atom * pair.mu_mol[slot] * units::DEBYE * v / units::HBAR;
    }
    let c = elements.iter().map(|m| m.norm_sqr()).sum::<f64>().sqrt();
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(
            "degenerate coupling vanishes; dipoles are zero".into(),
        ));
    }
    Ok(DegenerateCoupling {
        c,
        amplitudes: elements.map(|m| m / c),
    })
}

/// Predicted central-spin decay time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayTime {
    Finite(f64),
    NoDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpread {
    /// `max|C| - min|C|`, rad/s.
    pub a: f64,
    pub tau: DecayTime,
}

/// Spread of coupling magnitudes and `τ = 1/A`. Spreads at or below `1e-12`
/// of the largest magnitude count as homogeneous.
pub fn coupling_spread(couplings: &[Complex64]) -> Result<CouplingSpread> {
    if couplings.is_empty() {
        return Err(Error::EmptyCouplings);
    }
    let mags: Vec<f64> = couplings.iter().map(|c| c.norm()).collect();
    let max = mags.iter().cloned().fold(f64::MIN, f64::max);
    let min = mags.iter().cloned().fold(f64::MAX, f64::min);
    let a = max - min;
    let tau = if a <= 1e-12 * max {
        DecayTime::NoDecay
    } else {
        DecayTime::Finite(1.0 / a)
    };
    Ok(CouplingSpread { a, tau })
}

/// Writes `k,X_um,Y_um,Z_um,theta_rad,abs_C_kHz_2pi`.
pub fn write_layout<W: Write>(
    out: W,
    layout: &ParticleLayout,
    couplings: &[Complex64],
) -> Result<()> {
    if couplings.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            expected: layout.len(),
            got: couplings.len(),
        });
    }
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "X_um", "Y_um", "Z_um", "theta_rad", "abs_C_kHz_2pi"])
        .map_err(io)?;
    for k in 1..=layout.len() {
        let p = layout.position(k)?;
        w.write_record([
            k.to_string(),
            (p[0] * 1e6).to_string(),
            (p[1] * 1e6).to_string(),
            (p[2] * 1e6).to_string(),
            layout.theta(k)?.to_string(),
            units::to_khz_2pi(couplings[k - 1].norm()).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads positions from a file written by [`write_layout`]; extra columns are
/// ignored.
pub fn read_layout<R: Read>(input: R) -> Result<ParticleLayout> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column {name}"),
            })
    };
    let (ix, iy, iz) = (col("X_um")?, col("Y_um")?, col("Z_um")?);
    let mut positions = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let get = |i: usize| -> Result<f64> {
            let s = rec.get(i).ok_or_else(|| Error::Parse {
                line,
                message: "short row".into(),
            })?;
            s.trim()
                .parse::<f64>()
                .map(|v| v * 1e-6)
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("{s:?}: {e}"),
                })
        };
        positions.push([get(ix)?, get(iy)?, get(iz)?]);
    }
    ParticleLayout::new(positions)
}
