//! Rigid-rotor ²Σ molecule (rotation, hyperfine, Stark and Zeeman terms) in
//! parallel dc electric and magnetic fields along the quantization axis.
//!
//! The Hamiltonian is real symmetric in the uncoupled basis
//! `|N, M_N, M_s, M_I>` and commutes with `M_F = M_N + M_s + M_I`, so all
//! diagonalization is done block by block in `M_F`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angular::{spherical_harmonic_element, tensor_is_element, HalfInteger};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::units;

/// Largest rotational cutoff accepted.
pub const MAX_N: u32 = 20;
/// Default rotational cutoff.
pub const DEFAULT_N_MAX: u32 = 2;

/// Degeneracy tolerance used while assigning zero-field labels, rad/s.
const LABEL_DEGENERACY_TOL: f64 = std::f64::consts::TAU;

/// Molecular constants. Energies in rad/s, dipole in debye.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoleculeConstants {
    pub b_rot: f64,
    pub dipole_debye: f64,
    pub gamma: f64,
    pub b: f64,
    pub c: f64,
    pub c_f: f64,
    pub g_s: f64,
    pub g_i: f64,
    pub g_r: f64,
}

impl MoleculeConstants {
    /// Ground-state ⁴⁰Ca¹⁹F.
    pub fn caf() -> Self {
        MoleculeConstants {
            b_rot: units::mhz_2pi(10267.539),
            dipole_debye: 3.07,
            gamma: units::mhz_2pi(39.498),
            b: units::mhz_2pi(108.476),
            c: units::mhz_2pi(40.647),
            c_f: units::mhz_2pi(0.029),
            g_s: 2.0023,
            g_i: 5.2545,
            g_r: -5.13e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.b_rot,
            self.dipole_debye,
            self.gamma,
            self.b,
            self.c,
            self.c_f,
            self.g_s,
            self.g_i,
            self.g_r,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "molecular constants must be finite".into(),
            ));
        }
        if self.b_rot <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "B_rot must be positive, got {}",
                self.b_rot
            )));
        }
        if self.dipole_debye < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "dipole must be non-negative, got {}",
                self.dipole_debye
            )));
        }
        Ok(())
    }

    /// Parses `key = value` lines. Energies are in 2π×MHz, the dipole in
    /// debye, g-factors dimensionless. `#` starts a comment. Every key is
    /// required exactly once.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut values: [Option<f64>; 9] = [None; 9];
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            let slot = TEXT_KEYS.iter().position(|k| *k == key).ok_or_else(|| {
                err(format!(
                    "unknown key {key:?} (expected one of {})",
                    TEXT_KEYS.join(", ")
                ))
            })?;
            let value = value
                .trim()
                .parse::<f64>()
                .map_err(|e| err(format!("{key}: {e}")))?;
            if values[slot].replace(value).is_some() {
                return Err(err(format!("duplicate key {key:?}")));
            }
        }
        let missing: Vec<&str> = TEXT_KEYS
            .iter()
            .zip(&values)
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| *k)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: format!("missing keys: {}", missing.join(", ")),
            });
        }
        let v = values.map(Option::unwrap);
        let constants = MoleculeConstants {
            b_rot: units::mhz_2pi(v[0]),
            dipole_debye: v[1],
            gamma: units::mhz_2pi(v[2]),
            b: units::mhz_2pi(v[3]),
            c: units::mhz_2pi(v[4]),
            c_f: units::mhz_2pi(v[5]),
            g_s: v[6],
            g_i: v[7],
            g_r: v[8],
        };
        constants.validate()?;
        Ok(constants)
    }

    /// Inverse of [`MoleculeConstants::from_text`], exact up to the MHz conversion.
    pub fn to_text(&self) -> String {
        let v = [
            units::to_mhz_2pi(self.b_rot),
            self.dipole_debye,
            units::to_mhz_2pi(self.gamma),
            units::to_mhz_2pi(self.b),
            units::to_mhz_2pi(self.c),
            units::to_mhz_2pi(self.c_f),
            self.g_s,
            self.g_i,
            self.g_r,
        ];
        TEXT_KEYS
            .iter()
            .zip(v)
            .map(|(k, x)| format!("{k} = {x:?}\n"))
            .collect()
    }
}

const TEXT_KEYS: [&str; 9] = [
    "B_rot_MHz",
    "d_debye",
    "gamma_MHz",
    "b_MHz",
    "c_MHz",
    "c_F_MHz",
    "g_s",
    "g_I",
    "g_r",
];

/// Static fields along the quantization axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldPoint {
    pub e_v_per_cm: f64,
    pub b_gauss: f64,
}

impl FieldPoint {
    pub fn new(e_v_per_cm: f64, b_gauss: f64) -> Result<Self> {
        let f = FieldPoint {
            e_v_per_cm,
            b_gauss,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn magnetic(b_gauss: f64) -> Self {
        FieldPoint {
            e_v_per_cm: 0.0,
            b_gauss,
        }
    }

    pub fn electric(e_v_per_cm: f64) -> Self {
        FieldPoint {
            e_v_per_cm,
            b_gauss: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_v_per_cm >= 0.0
            && self.e_v_per_cm.is_finite()
            && self.b_gauss >= 0.0
            && self.b_gauss.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "fields must be finite and non-negative, got E = {} V/cm, B = {} G",
                self.e_v_per_cm, self.b_gauss
            )));
        }
        Ok(())
    }

    fn scaled(&self, s: f64) -> Self {
        FieldPoint {
            e_v_per_cm: self.e_v_per_cm * s,
            b_gauss: self.b_gauss * s,
        }
    }

    fn is_zero(&self) -> bool {
        self.e_v_per_cm == 0.0 && self.b_gauss == 0.0
    }
}

/// `|N, M_N, M_s, M_I>` with s = I = 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UncoupledState {
    pub n: u32,
    pub m_n: HalfInteger,
    pub m_s: HalfInteger,
    pub m_i: HalfInteger,
}

impl UncoupledState {
    pub fn m_f(&self) -> HalfInteger {
        self.m_n + self.m_s + self.m_i
    }
}

impl fmt::Display for UncoupledState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{},{},{},{}>", self.n, self.m_n, self.m_s, self.m_i)
    }
}

/// Uncoupled basis for `N = 0..=n_max`, ordered by `(N, M_N, M_s, M_I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularBasis {
    n_max: u32,
    states: Vec<UncoupledState>,
}

impl MolecularBasis {
    pub fn new(n_max: u32) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        if n_max > MAX_N {
            return Err(Error::DimensionOverflow {
                n_max,
                limit: MAX_N,
            });
        }
        let half = [HalfInteger::from_twice(-1), HalfInteger::HALF];
        let mut states = Vec::new();
        for n in 0..=n_max {
            let n_i = n as i32;
            for m_n in -n_i..=n_i {
                for m_s in half {
                    for m_i in half {
                        states.push(UncoupledState {
                            n,
                            m_n: HalfInteger::integer(m_n),
                            m_s,
                            m_i,
                        });
                    }
                }
            }
        }
        Ok(MolecularBasis { n_max, states })
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn states(&self) -> &[UncoupledState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, state: &UncoupledState) -> Option<usize> {
        self.states.iter().position(|s| s == state)
    }
}

fn ladder(j: f64, m: f64, up: bool) -> f64 {
    let shifted = if up { m + 1.0 } else { m - 1.0 };
    (j * (j + 1.0) - m * shifted).max(0.0).sqrt()
}

/// `<a|j1·j2|b>` for two distinct angular momenta, given bra/ket projections
/// of each. Spectator quantum numbers are checked by the caller.
fn dot_element(
    j1: f64,
    m1: (HalfInteger, HalfInteger),
    j2: f64,
    m2: (HalfInteger, HalfInteger),
) -> f64 {
    let (a1, b1) = m1;
    let (a2, b2) = m2;
    let d1 = a1.twice() - b1.twice();
    let d2 = a2.twice() - b2.twice();
    match (d1, d2) {
        (0, 0) => a1.to_f64() * a2.to_f64(),
        (2, -2) => 0.5 * ladder(j1, b1.to_f64(), true) * ladder(j2, b2.to_f64(), false),
        (-2, 2) => 0.5 * ladder(j1, b1.to_f64(), false) * ladder(j2, b2.to_f64(), true),
        _ => 0.0,
    }
}

fn parity(n: i32) -> f64 {
    if n.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Field-independent pieces of the molecular Hamiltonian, assembled once.
#[derive(Debug, Clone)]
pub struct MolecularHamiltonian {
    constants: MoleculeConstants,
    basis: Arc<MolecularBasis>,
    field_free: Mat<f64>,
    /// `-d_0` in rad/s per V/cm.
    stark: Mat<f64>,
    /// Zeeman diagonal in rad/s per gauss.
    zeeman: Vec<f64>,
    blocks: Vec<(HalfInteger, Vec<usize>)>,
    f_squared: Mat<f64>,
}

impl MolecularHamiltonian {
    pub fn new(constants: &MoleculeConstants, n_max: u32) -> Result<Self> {
        constants.validate()?;
        let basis = Arc::new(MolecularBasis::new(n_max)?);
        let dim = basis.len();
        let states = basis.states();
        let half = 0.5;

        let mut field_free = Mat::<f64>::zeros(dim, dim);
        let mut stark = Mat::<f64>::zeros(dim, dim);
        let mut f_squared = Mat::<f64>::zeros(dim, dim);
        let stark_scale =
            units::debye_to_si(constants.dipole_debye) * units::v_per_cm_to_si(1.0) / units::HBAR;
        let tensor_scale = constants.c / 3.0 * 6f64.sqrt();
        let two = HalfInteger::integer(2);

        for (i, a) in states.iter().enumerate() {
            for (j, b) in states.iter().enumerate().take(i + 1) {
                if a.m_f() != b.m_f() {
                    continue;
                }
                if a.n == b.n {
                    let nf = f64::from(a.n);
                    let mut h = 0.0;
                    let mut f2 = 0.0;
                    if i == j {
                        h += constants.b_rot * nf * (nf + 1.0);
                        f2 += nf * (nf + 1.0) + 0.75 + 0.75;
                    }
                    let s_n = if a.m_i == b.m_i {
                        dot_element(half, (a.m_s, b.m_s), nf, (a.m_n, b.m_n))
                    } else {
                        0.0
                    };
                    let s_i = if a.m_n == b.m_n {
                        dot_element(half, (a.m_s, b.m_s), half, (a.m_i, b.m_i))
                    } else {
                        0.0
                    };
                    let i_n = if a.m_s == b.m_s {
                        dot_element(half, (a.m_i, b.m_i), nf, (a.m_n, b.m_n))
                    } else {
                        0.0
                    };
                    h += constants.gamma * s_n
                        + (constants.b + constants.c / 3.0) * s_i
                        + constants.c_f * i_n;
                    f2 += 2.0 * (s_n + s_i + i_n);

                    // Rank-2 contraction, restricted to ΔN = 0.
                    let p = a.m_n - b.m_n;
                    if p.twice().abs() <= 4 && a.n >= 1 {
                        let n_h = HalfInteger::integer(a.n as i32);
                        let c2 = spherical_harmonic_element(n_h, a.m_n, two, p, n_h, b.m_n)?;
                        if c2 != 0.0 {
                            let t2 = tensor_is_element(a.m_s, a.m_i, -p, b.m_s, b.m_i)?;
                            let sign = parity(p.twice() / 2);
                            h += tensor_scale * sign * c2 * t2;
                        }
                    }
                    field_free[(i, j)] = h;
                    field_free[(j, i)] = h;
                    f_squared[(i, j)] = f2;
                    f_squared[(j, i)] = f2;
                } else if a.n.abs_diff(b.n) == 1
                    && a.m_s == b.m_s
                    && a.m_i == b.m_i
                    && a.m_n == b.m_n
                {
                    let c1 = spherical_harmonic_element(
                        HalfInteger::integer(a.n as i32),
                        a.m_n,
                        HalfInteger::ONE,
                        HalfInteger::ZERO,
                        HalfInteger::integer(b.n as i32),
                        b.m_n,
                    )?;
                    let v = -stark_scale * c1;
                    stark[(i, j)] = v;
                    stark[(j, i)] = v;
                }
            }
        }

        let gauss = units::gauss_to_tesla(1.0) / units::HBAR;
        let zeeman = states
            .iter()
            .map(|s| {
                gauss
                    * (units::BOHR_MAGNETON * constants.g_s * s.m_s.to_f64()
                        - units::NUCLEAR_MAGNETON * constants.g_i * s.m_i.to_f64()
                        - units::BOHR_MAGNETON * constants.g_r * s.m_n.to_f64())
            })
            .collect();

        let mut by_mf: BTreeMap<HalfInteger, Vec<usize>> = BTreeMap::new();
        for (i, s) in states.iter().enumerate() {
            by_mf.entry(s.m_f()).or_default().push(i);
        }

        Ok(MolecularHamiltonian {
            constants: *constants,
            basis,
            field_free,
            stark,
            zeeman,
            blocks: by_mf.into_iter().collect(),
            f_squared,
        })
    }

    pub fn constants(&self) -> &MoleculeConstants {
        &self.constants
    }

    pub fn basis(&self) -> &Arc<MolecularBasis> {
        &self.basis
    }

    /// Full Hamiltonian matrix in rad/s.
    pub fn matrix(&self, field: &FieldPoint) -> Mat<f64> {
        let dim = self.basis.len();
        Mat::from_fn(dim, dim, |i, j| {
            let mut v = self.field_free[(i, j)] + field.e_v_per_cm * self.stark[(i, j)];
            if i == j {
                v += field.b_gauss * self.zeeman[i];
            }
            v
        })
    }

    fn block_matrix(&self, indices: &[usize], field: &FieldPoint) -> Mat<f64> {
        let n = indices.len();
        Mat::from_fn(n, n, |a, b| {
            let (i, j) = (indices[a], indices[b]);
            let mut v = self.field_free[(i, j)] + field.e_v_per_cm * self.stark[(i, j)];
            if i == j {
                v += field.b_gauss * self.zeeman[i];
            }
            v
        })
    }

    /// Eigenpairs of one `M_F` block. Without an electric field `N` is exact,
    /// so each `N` is diagonalized separately with its rotational energy
    /// removed, which keeps hyperfine-scale degeneracies at full precision.
    fn block_eigen(&self, indices: &[usize], field: &FieldPoint) -> Result<(Vec<f64>, Mat<f64>)> {
        if field.e_v_per_cm != 0.0 {
            return symmetric_eigen(&self.block_matrix(indices, field));
        }
        let n = indices.len();
        let mut values = Vec::with_capacity(n);
        let mut vectors = Mat::<f64>::zeros(n, n);
        let mut by_n: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (pos, &idx) in indices.iter().enumerate() {
            by_n.entry(self.basis.states[idx].n).or_default().push(pos);
        }
        for (rot_n, positions) in by_n {
            let nf = f64::from(rot_n);
            let offset = self.constants.b_rot * nf * (nf + 1.0);
            let m = positions.len();
            let sub = Mat::from_fn(m, m, |a, b| {
                let (i, j) = (indices[positions[a]], indices[positions[b]]);
                let mut v = self.field_free[(i, j)];
                if i == j {
                    v += field.b_gauss * self.zeeman[i] - offset;
                }
                v
            });
            let (vals, vecs) = symmetric_eigen(&sub)?;
            for k in 0..m {
                let col = values.len();
                values.push(vals[k] + offset);
                for (a, &pos) in positions.iter().enumerate() {
                    vectors[(pos, col)] = vecs[(a, k)];
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sorted = Mat::from_fn(n, n, |r, k| vectors[(r, order[k])]);
        Ok((order.iter().map(|&k| values[k]).collect(), sorted))
    }

    fn zero_field_labels(&self) -> Result<Vec<BlockState>> {
        let zero = FieldPoint::default();
        let mut out = Vec::with_capacity(self.blocks.len());
        for (m_f, indices) in &self.blocks {
            let (values, mut vectors) = self.block_eigen(indices, &zero)?;
            let n = indices.len();
            let f2 = Mat::from_fn(n, n, |a, b| self.f_squared[(indices[a], indices[b])]);
            resolve_degenerate_f(&values, &mut vectors, &f2)?;

            let mut raw = Vec::with_capacity(n);
            for k in 0..n {
                let col: Vec<f64> = (0..n).map(|r| vectors[(r, k)]).collect();
                let n_exp: f64 = (0..n)
                    .map(|r| {
                        let nn = f64::from(self.basis.states[indices[r]].n);
                        col[r] * col[r] * nn * (nn + 1.0)
                    })
                    .sum();
                let f_exp = quadratic_form(&f2, &col);
                let n_label = ((-1.0 + (1.0 + 4.0 * n_exp).sqrt()) / 2.0).round() as u32;
                let f_label = ((-1.0 + (1.0 + 4.0 * f_exp).sqrt()) / 2.0).round() as u32;
                raw.push((n_label, f_label, values[k], col));
            }

            let mut labels = Vec::with_capacity(n);
            for (k, (n_label, f_label, energy, _)) in raw.iter().enumerate() {
                let mut same: Vec<(f64, usize)> = raw
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.0 == *n_label && r.1 == *f_label)
                    .map(|(idx, r)| (r.2, idx))
                    .collect();
                same.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                let branch = match same.len() {
                    1 => Branch::Unique,
                    2 if same[0].1 == k => Branch::Minus,
                    2 => Branch::Plus,
                    _ => {
                        return Err(Error::Diagonalization(format!(
                            "{} zero-field states share N = {n_label}, F = {f_label} in the M_F = {m_f} block",
                            same.len()
                        )))
                    }
                };
                let _ = energy;
                labels.push(LevelLabel {
                    n: *n_label,
                    f: *f_label,
                    branch,
                    m_f: *m_f,
                });
            }
            out.push(BlockState {
                labels,
                energies: raw.iter().map(|r| r.2).collect(),
                vectors: raw.into_iter().map(|r| r.3).collect(),
            });
        }
        Ok(out)
    }

    /// Field-dressed levels with labels inherited from zero field by
    /// overlap tracking along a ramp from zero to `field`.
    pub fn dressed_levels(&self, field: &FieldPoint) -> Result<Vec<DressedLevel>> {
        field.validate()?;
        let mut blocks = self.zero_field_labels()?;
        if !field.is_zero() {
            for s in ramp_schedule() {
                let f = field.scaled(s);
                for (block, (_, indices)) in blocks.iter_mut().zip(&self.blocks) {
                    let (values, vectors) = self.block_eigen(indices, &f)?;
                    block.advance(&values, &vectors);
                }
            }
        }

        let mut levels = Vec::with_capacity(self.basis.len());
        for (block, (_, indices)) in blocks.into_iter().zip(&self.blocks) {
            for ((label, energy), vector) in block
                .labels
                .into_iter()
                .zip(block.energies)
                .zip(block.vectors)
            {
                let mut amplitudes = vec![Complex64::new(0.0, 0.0); self.basis.len()];
                let pivot = vector
                    .iter()
                    .copied()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                    .map(|(_, v)| v)
                    .unwrap_or(1.0);
                let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                for (r, &idx) in indices.iter().enumerate() {
                    amplitudes[idx] = Complex64::new(sign * vector[r], 0.0);
                }
                levels.push(DressedLevel {
                    energy,
                    label,
                    amplitudes,
                    basis: Arc::clone(&self.basis),
                });
            }
        }
        levels.sort_by(|a, b| {
            a.label
                .m_f
                .cmp(&b.label.m_f)
                .then(a.energy.total_cmp(&b.energy))
        });
        Ok(levels)
    }
}

fn quadratic_form(m: &Mat<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += v[i] * m[(i, j)] * v[j];
        }
    }
    acc
}

/// Within clusters of (near-)degenerate eigenvalues, rotate the eigenvectors
/// to diagonalize F² so each carries a definite F.
fn resolve_degenerate_f(values: &[f64], vectors: &mut Mat<f64>, f2: &Mat<f64>) -> Result<()> {
    let n = values.len();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[end] - values[end - 1] < LABEL_DEGENERACY_TOL {
            end += 1;
        }
        let size = end - start;
        if size > 1 {
            let cols: Vec<Vec<f64>> = (start..end)
                .map(|k| (0..n).map(|r| vectors[(r, k)]).collect())
                .collect();
            let projected = Mat::from_fn(size, size, |a, b| {
                (0..n)
                    .map(|i| cols[a][i] * (0..n).map(|j| f2[(i, j)] * cols[b][j]).sum::<f64>())
                    .sum::<f64>()
            });
            let (_, rot) = symmetric_eigen(&projected)?;
            for k in 0..size {
                for r in 0..n {
                    vectors[(r, start + k)] = (0..size).map(|a| cols[a][r] * rot[(a, k)]).sum();
                }
            }
        }
        start = end;
    }
    Ok(())
}

/// Ramp fractions in (0, 1]: geometric from 1e-6 merged with a uniform grid,
/// so both the weak-field and the strong-field ends are finely resolved.
fn ramp_schedule() -> Vec<f64> {
    const STEPS: usize = 200;
    let mut s: Vec<f64> = (0..=STEPS)
        .map(|k| 1e-6f64 * 1e6f64.powf(k as f64 / STEPS as f64))
        .chain((1..=STEPS).map(|k| k as f64 / STEPS as f64))
        .collect();
    s.sort_by(f64::total_cmp);
    s.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs());
    *s.last_mut().expect("non-empty schedule") = 1.0;
    s
}

struct BlockState {
    labels: Vec<LevelLabel>,
    energies: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

impl BlockState {
    /// Greedy maximal-overlap matching of new eigenvectors to tracked ones.
    fn advance(&mut self, values: &[f64], vectors: &Mat<f64>) {
        let n = values.len();
        let mut pairs = Vec::with_capacity(n * n);
        for (old, prev) in self.vectors.iter().enumerate() {
            for new in 0..n {
                let overlap: f64 = (0..n).map(|r| prev[r] * vectors[(r, new)]).sum();
                pairs.push((overlap.abs(), old, new));
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut old_used = vec![false; n];
        let mut new_used = vec![false; n];
        let mut assignment = vec![0usize; n];
        for (_, old, new) in pairs {
            if !old_used[old] && !new_used[new] {
                old_used[old] = true;
                new_used[new] = true;
                assignment[old] = new;
            }
        }
        for (old, &new) in assignment.iter().enumerate() {
            let overlap: f64 = (0..n)
                .map(|r| self.vectors[old][r] * vectors[(r, new)])
                .sum();
            let sign = if overlap < 0.0 { -1.0 } else { 1.0 };
            self.vectors[old] = (0..n).map(|r| sign * vectors[(r, new)]).collect();
            self.energies[old] = values[new];
        }
    }
}

/// Distinguishes repeated `(N, F)` manifolds by zero-field energy order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Minus,
    Plus,
    Unique,
}

/// Adiabatic zero-field label `(N, F, branch, M_F)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct LevelLabel {
    pub n: u32,
    pub f: u32,
    pub branch: Branch,
    pub m_f: HalfInteger,
}

impl LevelLabel {
    pub fn new(n: u32, f: u32, branch: Branch, m_f: i32) -> Self {
        LevelLabel {
            n,
            f,
            branch,
            m_f: HalfInteger::integer(m_f),
        }
    }
}

impl fmt::Display for LevelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = match self.branch {
            Branch::Minus => "-",
            Branch::Plus => "+",
            Branch::Unique => "",
        };
        write!(f, "N={},F={}{},M_F={}", self.n, self.f, suffix, self.m_f)
    }
}

impl FromStr for LevelLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidParameter(format!(
                "cannot parse level label {s:?} (expected e.g. \"N=1,F=1-,M_F=0\")"
            ))
        };
        let mut n = None;
        let mut f = None;
        let mut m_f = None;
        for part in s.split(',') {
            let (key, value) = part.split_once('=').ok_or_else(bad)?;
            match key.trim() {
                "N" => n = Some(value.trim().parse::<u32>().map_err(|_| bad())?),
                "F" => {
                    let v = value.trim();
                    let (digits, branch) = if let Some(d) = v.strip_suffix('-') {
                        (d, Branch::Minus)
                    } else if let Some(d) = v.strip_suffix('+') {
                        (d, Branch::Plus)
                    } else {
                        (v, Branch::Unique)
                    };
                    f = Some((digits.parse::<u32>().map_err(|_| bad())?, branch));
                }
                "M_F" => m_f = Some(value.trim().parse::<i32>().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        let (f, branch) = f.ok_or_else(bad)?;
        Ok(LevelLabel::new(
            n.ok_or_else(bad)?,
            f,
            branch,
            m_f.ok_or_else(bad)?,
        ))
    }
}

impl From<LevelLabel> for String {
    fn from(l: LevelLabel) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for LevelLabel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A field-dressed molecular eigenstate.
#[derive(Debug, Clone)]
pub struct DressedLevel {
    /// rad/s
    pub energy: f64,
    pub label: LevelLabel,
    /// Amplitudes over [`DressedLevel::basis`].
    pub amplitudes: Vec<Complex64>,
    basis: Arc<MolecularBasis>,
}

impl DressedLevel {
    pub fn basis(&self) -> &MolecularBasis {
        &self.basis
    }

    /// Basis state with the largest weight, and that weight.
    pub fn dominant_component(&self) -> (UncoupledState, f64) {
        let (idx, w) = self
            .amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty basis");
        (self.basis.states[idx], w)
    }
}

/// Diagonalizes the molecule at `field` and returns labeled levels sorted by
/// `(M_F, energy)`.
pub fn dressed_levels(
    constants: &MoleculeConstants,
    field: &FieldPoint,
    n_max: u32,
) -> Result<Vec<DressedLevel>> {
    MolecularHamiltonian::new(constants, n_max)?.dressed_levels(field)
}

/// The real symmetric Hamiltonian matrix at `field`, rad/s.
pub fn build_hamiltonian(
    constants: &MoleculeConstants,
    field: &FieldPoint,
    n_max: u32,
) -> Result<Mat<f64>> {
    field.validate()?;
    Ok(MolecularHamiltonian::new(constants, n_max)?.matrix(field))
}

pub fn find_level<'a>(levels: &'a [DressedLevel], label: &LevelLabel) -> Result<&'a DressedLevel> {
    levels
        .iter()
        .find(|l| &l.label == label)
        .ok_or_else(|| Error::LevelNotFound(label.to_string()))
}

/// `E(a) - E(b)` in rad/s.
pub fn transition_energy(a: &DressedLevel, b: &DressedLevel) -> f64 {
    a.energy - b.energy
}

/// `<a|d_q|b>` in debye.
pub fn transition_dipole(
    constants: &MoleculeConstants,
    a: &DressedLevel,
    b: &DressedLevel,
    q: i32,
) -> Result<f64> {
    if !(-1..=1).contains(&q) {
        return Err(Error::InvalidQuantumNumbers(format!(
            "dipole component q = {q} outside -1..=1"
        )));
    }
    if a.basis.n_max != b.basis.n_max {
        return Err(Error::BasisMismatch(a.basis.n_max, b.basis.n_max));
    }
    let q_h = HalfInteger::integer(q);
    if a.label.m_f != b.label.m_f + q_h {
        return Ok(0.0);
    }
    let states = &a.basis.states;
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, sa) in states.iter().enumerate() {
        let ai = a.amplitudes[i];
        if ai.norm_sqr() == 0.0 {
            continue;
        }
        for (j, sb) in states.iter().enumerate() {
            let bj = b.amplitudes[j];
            if bj.norm_sqr() == 0.0
                || sa.m_s != sb.m_s
                || sa.m_i != sb.m_i
                || sa.n.abs_diff(sb.n) != 1
            {
                continue;
            }
            if sa.m_n != sb.m_n + q_h {
                continue;
            }
            let c1 = spherical_harmonic_element(
                HalfInteger::integer(sa.n as i32),
                sa.m_n,
                HalfInteger::ONE,
                q_h,
                HalfInteger::integer(sb.n as i32),
                sb.m_n,
            )?;
            acc += ai.conj() * bj * c1;
        }
    }
    Ok(constants.dipole_debye * acc.re)
}

/// Atomic transition frequency sampled against magnetic field.
#[derive(Debug, Clone, PartialEq)]
pub struct C0Table {
    /// `(B in gauss, c0 in rad/s)`, strictly increasing in B.
    points: Vec<(f64, f64)>,
}

impl C0Table {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidParameter(
                "c0 table needs at least two points".into(),
            ));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[1].0 <= w[0].0)
            || points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite())
        {
            return Err(Error::InvalidParameter(
                "c0 table fields must be finite and distinct".into(),
            ));
        }
        Ok(C0Table { points })
    }

    /// Two whitespace- or comma-separated columns: B (gauss), c0 (2π×MHz).
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut points = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = t
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 2 {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected 2 columns, found {}", cols.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: format!("{s:?}: {e}"),
                })
            };
            points.push((parse(cols[0])?, units::mhz_2pi(parse(cols[1])?)));
        }
        C0Table::new(points)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Linear interpolation; errors outside the sampled range.
    pub fn value_at(&self, b_gauss: f64) -> Result<f64> {
        let first = self.points[0].0;
        let last = self.points[self.points.len() - 1].0;
        if !(first..=last).contains(&b_gauss) {
            return Err(Error::InvalidParameter(format!(
                "B = {b_gauss} G outside c0 table range [{first}, {last}]"
            )));
        }
        let k = self.points.partition_point(|p| p.0 < b_gauss);
        if k == 0 {
            return Ok(self.points[0].1);
        }
        let (b0, c0) = self.points[k - 1];
        let (b1, c1) = self.points[k];
        Ok(c0 + (c1 - c0) * (b_gauss - b0) / (b1 - b0))
    }
}

/// Inclusive magnetic-field grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldScan {
    pub b_min_gauss: f64,
    pub b_max_gauss: f64,
    pub step_gauss: f64,
}

impl FieldScan {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step_gauss > 0.0)
            || !self.b_min_gauss.is_finite()
            || !self.b_max_gauss.is_finite()
        {
            return Err(Error::EmptyScan(format!(
                "step must be positive, got {}",
                self.step_gauss
            )));
        }
        if self.b_max_gauss < self.b_min_gauss || self.b_min_gauss < 0.0 {
            return Err(Error::EmptyScan(format!(
                "range [{}, {}] G is empty or negative",
                self.b_min_gauss, self.b_max_gauss
            )));
        }
        let count =
            ((self.b_max_gauss - self.b_min_gauss) / self.step_gauss + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|k| self.b_min_gauss + k as f64 * self.step_gauss)
            .collect())
    }
}

/// Which levels form the bath pseudospin, and at what electric field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceSearch {
    pub up: LevelLabel,
    pub down: LevelLabel,
    pub e_v_per_cm: f64,
    pub n_max: u32,
    pub scan: FieldScan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonantField {
    pub field: FieldPoint,
    /// `c0 - c_S` at the chosen grid point, rad/s.
    pub c_delta: f64,
    pub c_s: f64,
}

/// `c_S` at each field of the scan.
pub fn bath_splitting_scan(
    constants: &MoleculeConstants,
    search: &ResonanceSearch,
) -> Result<Vec<(f64, f64)>> {
    let ham = MolecularHamiltonian::new(constants, search.n_max)?;
    search
        .scan
        .points()?
        .into_par_iter()
        .map(|b| {
            let levels = ham.dressed_levels(&FieldPoint::new(search.e_v_per_cm, b)?)?;
            let c_s = transition_energy(
                find_level(&levels, &search.up)?,
                find_level(&levels, &search.down)?,
            );
            Ok((b, c_s))
        })
        .collect()
}

/// Grid point minimizing `|c0(B) - c_S(B)|`; no sub-step refinement.
pub fn find_resonant_field(
    c0_table: &C0Table,
    constants: &MoleculeConstants,
    search: &ResonanceSearch,
) -> Result<ResonantField> {
    let scan = bath_splitting_scan(constants, search)?;
    let mut best: Option<ResonantField> = None;
    for (b, c_s) in scan {
        let c_delta = c0_table.value_at(b)? - c_s;
        if best.is_none_or(|r| c_delta.abs() < r.c_delta.abs()) {
            best = Some(ResonantField {
                field: FieldPoint {
                    e_v_per_cm: search.e_v_per_cm,
                    b_gauss: b,
                },
                c_delta,
                c_s,
            });
        }
    }
    best.ok_or_else(|| Error::EmptyScan("no field points".into()))
}

/// Writes `B_gauss,E_V_per_cm,label,energy_MHz_2pi` rows.
pub fn write_level_map<W: Write>(out: W, rows: &[(FieldPoint, Vec<DressedLevel>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["B_gauss", "E_V_per_cm", "label", "energy_MHz_2pi"])
        .map_err(io)?;
    for (field, levels) in rows {
        for level in levels {
            w.write_record([
                field.b_gauss.to_string(),
                field.e_v_per_cm.to_string(),
                level.label.to_string(),
                units::to_mhz_2pi(level.energy).to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
