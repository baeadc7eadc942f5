//! Spin-1/2 central-spin model: product-state bases, the effective XX (or XXX)
//! Hamiltonian, exact-diagonalization propagation and observables.
//!
//! Basis states are stored as bit patterns: bit 0 is the central spin
//! (1 = ⇑) and bit `k` for `k = 1..=N` is bath site `k` (1 = ↑). The canonical
//! index of a product state is that integer, and every basis is sorted by it.

use std::io::Write;
use std::sync::Arc;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use log::warn;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angular::HalfInteger;
use crate::error::{Error, Result};
use crate::linalg;

/// Largest bath for the full `2^(N+1)` basis.
pub const MAX_FULL_BATH: usize = 14;

/// Largest bath that fits the bit encoding.
pub const MAX_BATH: usize = 62;

/// Largest basis dimension accepted for dense diagonalization.
pub const MAX_DIMENSION: usize = 1 << 15;

/// Norm drift that triggers a diagnostic.
pub const NORM_DRIFT_WARNING: f64 = 1e-8;

const NORM_TOLERANCE: f64 = 1e-10;
const TIME_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InteractionKind {
    #[serde(rename = "XX")]
    Xx,
    #[serde(rename = "XXX")]
    Xxx,
}

/// Parameters of the effective Hamiltonian, all in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSystemSpec {
    pub c0: f64,
    pub c_s: f64,
    pub couplings: Vec<Complex64>,
    pub kind: InteractionKind,
}

impl SpinSystemSpec {
    pub fn xx(c0: f64, c_s: f64, couplings: Vec<Complex64>) -> Self {
        SpinSystemSpec {
            c0,
            c_s,
            couplings,
            kind: InteractionKind::Xx,
        }
    }

    pub fn n_bath(&self) -> usize {
        self.couplings.len()
    }

    pub fn c_delta(&self) -> f64 {
        self.c0 - self.c_s
    }

    pub fn validate(&self) -> Result<()> {
        if self.couplings.is_empty() {
            return Err(Error::EmptyCouplings);
        }
        if self.couplings.len() > MAX_BATH {
            return Err(Error::TooManySpins {
                n_bath: self.couplings.len(),
                limit: MAX_BATH,
            });
        }
        if !self.c0.is_finite() || !self.c_s.is_finite() {
            return Err(Error::InvalidParameter("c0 and c_S must be finite".into()));
        }
        if self
            .couplings
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::InvalidParameter("couplings must be finite".into()));
        }
        Ok(())
    }

    /// Couplings as they enter the Hamiltonian: magnitudes in XXX mode.
    pub fn effective_couplings(&self) -> Vec<Complex64> {
        match self.kind {
            InteractionKind::Xx => self.couplings.clone(),
            InteractionKind::Xxx => self
                .couplings
                .iter()
                .map(|c| Complex64::new(c.norm(), 0.0))
                .collect(),
        }
    }
}

/// Central-spin orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Central {
    Up,
    Down,
}

/// Product state of the central spin and the bath.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProductState {
    pub central: Central,
    /// `bath[k - 1]` is site `k`; `true` means ↑.
    pub bath: Vec<bool>,
}

impl ProductState {
    pub fn new(central: Central, bath: Vec<bool>) -> Self {
        ProductState { central, bath }
    }

    pub fn from_bits(bits: u64, n_bath: usize) -> Self {
        let central = if bits & 1 == 1 {
            Central::Up
        } else {
            Central::Down
        };
        ProductState {
            central,
            bath: (1..=n_bath).map(|k| bits >> k & 1 == 1).collect(),
        }
    }

    pub fn bits(&self) -> u64 {
        let mut bits = u64::from(self.central == Central::Up);
        for (i, &up) in self.bath.iter().enumerate() {
            if up {
                bits |= 1 << (i + 1);
            }
        }
        bits
    }

    pub fn sigma_z(&self) -> HalfInteger {
        sigma_z_of(self.bits(), self.bath.len())
    }
}

fn sigma_z_of(bits: u64, n_bath: usize) -> HalfInteger {
    // 2σ = 2·(number of up spins) − (N + 1)
    HalfInteger::from_twice(2 * bits.count_ones() as i32 - n_bath as i32 - 1)
}

/// `N + 1` characters, central spin first, `1` for up.
pub fn bitstring(bits: u64, n_bath: usize) -> String {
    (0..=n_bath)
        .map(|k| if bits >> k & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// Sorted list of product states spanning a fixed-σ_z sector or the full space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorBasis {
    n_bath: usize,
    sigma_z: Option<HalfInteger>,
    states: Vec<u64>,
}

impl SectorBasis {
    /// All `2^(N+1)` product states.
    pub fn full(n_bath: usize) -> Result<Self> {
        if n_bath == 0 || n_bath > MAX_FULL_BATH {
            return Err(Error::TooManySpins {
                n_bath,
                limit: MAX_FULL_BATH,
            });
        }
        let states = (0..1u64 << (n_bath + 1)).collect();
        Ok(SectorBasis {
            n_bath,
            sigma_z: None,
            states,
        })
    }

    /// All product states with total `S_z = sigma_z`.
    pub fn sector(n_bath: usize, sigma_z: HalfInteger) -> Result<Self> {
        if n_bath == 0 || n_bath > MAX_BATH {
            return Err(Error::TooManySpins {
                n_bath,
                limit: MAX_BATH,
            });
        }
        let total = n_bath as i32 + 1;
        let twice_up = sigma_z.twice() + total;
        if twice_up < 0 || twice_up > 2 * total || twice_up % 2 != 0 {
            return Err(Error::SectorParity { n_bath, sigma_z });
        }
        let ups = (twice_up / 2) as usize;
        let dim: u128 = (0..=1usize)
            .filter(|&c| ups >= c && ups - c <= n_bath)
            .map(|c| binomial(n_bath, ups - c))
            .sum();
        if dim > MAX_DIMENSION as u128 {
            return Err(Error::InvalidParameter(format!(
                "sector dimension {dim} exceeds the dense limit {MAX_DIMENSION}"
            )));
        }
        let mut states = Vec::with_capacity(dim as usize);
        for central in 0..=1u64 {
            let bath_ups = ups as i64 - central as i64;
            if bath_ups < 0 || bath_ups as usize > n_bath {
                continue;
            }
            for pattern in combinations(n_bath, bath_ups as usize) {
                states.push(pattern << 1 | central);
            }
        }
        states.sort_unstable();
        Ok(SectorBasis {
            n_bath,
            sigma_z: Some(sigma_z),
            states,
        })
    }

    pub fn n_bath(&self) -> usize {
        self.n_bath
    }

    /// `None` for the full basis.
    pub fn sigma_z(&self) -> Option<HalfInteger> {
        self.sigma_z
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn product_state(&self, index: usize) -> ProductState {
        ProductState::from_bits(self.states[index], self.n_bath)
    }

    pub fn index_of(&self, bits: u64) -> Option<usize> {
        self.states.binary_search(&bits).ok()
    }
}

/// Same as [`SectorBasis::sector`].
pub fn enumerate_sector(n_bath: usize, sigma_z: HalfInteger) -> Result<SectorBasis> {
    SectorBasis::sector(n_bath, sigma_z)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Bit patterns of `n` bits with exactly `k` ones, ascending.
fn combinations(n: usize, k: usize) -> Vec<u64> {
    if k == 0 {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut x: u64 = (1u64 << k) - 1;
    let limit = 1u64 << n;
    while x < limit {
        out.push(x);
        // Gosper's hack
        let c = x & x.wrapping_neg();
        let r = x + c;
        x = (((r ^ x) >> 2) / c) | r;
    }
    out
}

/// Normalized amplitudes over a basis.
#[derive(Debug, Clone)]
pub struct StateVector {
    basis: Arc<SectorBasis>,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn new(basis: Arc<SectorBasis>, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: amplitudes.len(),
            });
        }
        let norm = l2_norm(&amplitudes);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized(norm));
        }
        Ok(StateVector { basis, amplitudes })
    }

    /// Rescales arbitrary nonzero amplitudes to unit norm.
    pub fn normalized(basis: Arc<SectorBasis>, mut amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm = l2_norm(&amplitudes);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NotNormalized(norm));
        }
        amplitudes.iter_mut().for_each(|a| *a /= norm);
        StateVector::new(basis, amplitudes)
    }

    pub fn product(basis: Arc<SectorBasis>, state: &ProductState) -> Result<Self> {
        if state.bath.len() != basis.n_bath() {
            return Err(Error::DimensionMismatch {
                expected: basis.n_bath(),
                got: state.bath.len(),
            });
        }
        let index = basis.index_of(state.bits()).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "product state {} is outside the basis",
                bitstring(state.bits(), state.bath.len())
            ))
        })?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); basis.dim()];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(StateVector { basis, amplitudes })
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.amplitudes)
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.basis != other.basis {
            return Err(Error::DimensionMismatch {
                expected: self.basis.dim(),
                got: other.basis.dim(),
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Same physical state expressed in the full basis.
    pub fn to_full(&self) -> Result<StateVector> {
        let full = Arc::new(SectorBasis::full(self.basis.n_bath())?);
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); full.dim()];
        for (&bits, &a) in self.basis.states().iter().zip(&self.amplitudes) {
            amplitudes[bits as usize] = a;
        }
        Ok(StateVector {
            basis: full,
            amplitudes,
        })
    }
}

fn l2_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

fn check_basis(spec: &SpinSystemSpec, basis: &SectorBasis) -> Result<()> {
    spec.validate()?;
    if spec.n_bath() != basis.n_bath() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_bath(),
            got: spec.n_bath(),
        });
    }
    Ok(())
}

fn half(bits: u64, k: usize) -> f64 {
    if bits >> k & 1 == 1 {
        0.5
    } else {
        -0.5
    }
}

/// Assembles `H - c_S Σ S_z`. The dropped Zeeman term commutes with `H` and
/// is restored as an exact phase per σ_z block.
fn assemble(spec: &SpinSystemSpec, basis: &SectorBasis) -> Mat<Complex64> {
    let n = basis.dim();
    let couplings = spec.effective_couplings();
    let c_delta = spec.c_delta();
    let mut h = Mat::<Complex64>::zeros(n, n);
    for (i, &bits) in basis.states().iter().enumerate() {
        let s0 = half(bits, 0);
        let mut diag = c_delta * s0;
        if spec.kind == InteractionKind::Xxx {
            for (k, c) in couplings.iter().enumerate() {
                diag += 2.0 * c.re * s0 * half(bits, k + 1);
            }
        }
        h[(i, i)] = Complex64::new(diag, 0.0);
        // S₊⁰ S₋ᵏ maps |⇓, ↑ₖ⟩ to |⇑, ↓ₖ⟩ with amplitude C_k.
        if bits & 1 == 0 {
            for (k, c) in couplings.iter().enumerate() {
                let mask = 1u64 << (k + 1);
                if bits & mask != 0 {
                    if let Some(j) = basis.index_of((bits ^ mask) | 1) {
                        h[(j, i)] = *c;
                        h[(i, j)] = c.conj();
                    }
                }
            }
        }
    }
    h
}

/// Matrix of the effective Hamiltonian in `basis`, rad/s.
pub fn build_effective_hamiltonian(
    spec: &SpinSystemSpec,
    basis: &SectorBasis,
) -> Result<Mat<Complex64>> {
    check_basis(spec, basis)?;
    let mut h = assemble(spec, basis);
    // literal c0 S_z⁰ + c_S Σ S_zᵏ diagonal
    let couplings = spec.effective_couplings();
    for (i, &bits) in basis.states().iter().enumerate() {
        let s0 = half(bits, 0);
        let mut diag = spec.c0 * s0;
        for (k, c) in couplings.iter().enumerate() {
            let sk = half(bits, k + 1);
            diag += spec.c_s * sk;
            if spec.kind == InteractionKind::Xxx {
                diag += 2.0 * c.re * s0 * sk;
            }
        }
        h[(i, i)] = Complex64::new(diag, 0.0);
    }
    Ok(h)
}

#[derive(Debug, Clone)]
enum Eigenvectors {
    Real(Mat<f64>),
    Complex(Mat<Complex64>),
}

/// Diagonalized invariant block: basis indices, eigenpairs of the reduced
/// Hamiltonian and the energy offset removed from it.
#[derive(Debug, Clone)]
struct Block {
    indices: Vec<usize>,
    offset: f64,
    energies: Vec<f64>,
    vectors: Eigenvectors,
}

impl Block {
    fn new(h: &Mat<Complex64>, indices: Vec<usize>, offset: f64) -> Result<Self> {
        let n = indices.len();
        let is_real = indices
            .iter()
            .all(|&j| indices.iter().all(|&i| h[(i, j)].im == 0.0));
        let (energies, vectors) = if is_real {
            let real = Mat::<f64>::from_fn(n, n, |i, j| h[(indices[i], indices[j])].re);
            let (values, u) = linalg::symmetric_eigen(&real)?;
            (values, Eigenvectors::Real(u))
        } else {
            let sub = Mat::<Complex64>::from_fn(n, n, |i, j| h[(indices[i], indices[j])]);
            let evd = linalg::hermitian_eigen(&sub)?;
            (evd.values, Eigenvectors::Complex(evd.vectors))
        };
        Ok(Block {
            indices,
            offset,
            energies,
            vectors,
        })
    }

    /// `⟨K|Ψ₀⟩` for every eigenvector of the block.
    fn weights(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let n = self.indices.len();
        let local: Vec<Complex64> = self.indices.iter().map(|&i| psi[i]).collect();
        match &self.vectors {
            Eigenvectors::Real(u) => (0..n)
                .map(|k| (0..n).map(|i| local[i] * u[(i, k)]).sum())
                .collect(),
            Eigenvectors::Complex(u) => (0..n)
                .map(|k| (0..n).map(|i| u[(i, k)].conj() * local[i]).sum())
                .collect(),
        }
    }

    /// Block amplitudes at every time, one column per time.
    fn reconstruct(&self, weights: &[Complex64], times: &[f64]) -> Mat<Complex64> {
        let n = weights.len();
        let m = times.len();
        let phase =
            |k: usize, t: f64| weights[k] * Complex64::from_polar(1.0, -self.energies[k] * t);
        let global: Vec<Complex64> = times
            .iter()
            .map(|&t| Complex64::from_polar(1.0, -self.offset * t))
            .collect();
        match &self.vectors {
            Eigenvectors::Real(u) => {
                let mut p_re = Mat::<f64>::zeros(n, m);
                let mut p_im = Mat::<f64>::zeros(n, m);
                for (c, &t) in times.iter().enumerate() {
                    for k in 0..n {
                        let z = phase(k, t) * global[c];
                        p_re[(k, c)] = z.re;
                        p_im[(k, c)] = z.im;
                    }
                }
                let mut re = Mat::<f64>::zeros(n, m);
                let mut im = Mat::<f64>::zeros(n, m);
                matmul(
                    re.as_mut(),
                    Accum::Replace,
                    u.as_ref(),
                    p_re.as_ref(),
                    1.0,
                    Par::Seq,
                );
                matmul(
                    im.as_mut(),
                    Accum::Replace,
                    u.as_ref(),
                    p_im.as_ref(),
                    1.0,
                    Par::Seq,
                );
                Mat::from_fn(n, m, |i, c| Complex64::new(re[(i, c)], im[(i, c)]))
            }
            Eigenvectors::Complex(u) => {
                let p = Mat::<Complex64>::from_fn(n, m, |k, c| phase(k, times[c]) * global[c]);
                let mut psi = Mat::<Complex64>::zeros(n, m);
                matmul(
                    psi.as_mut(),
                    Accum::Replace,
                    u.as_ref(),
                    p.as_ref(),
                    Complex64::new(1.0, 0.0),
                    Par::Seq,
                );
                psi
            }
        }
    }
}

/// Exact propagator `e^{-iHt}` from dense eigendecompositions of its
/// invariant blocks.
#[derive(Debug, Clone)]
pub struct Propagator {
    basis: Arc<SectorBasis>,
    blocks: Vec<Block>,
}

impl Propagator {
    /// Diagonalizes an arbitrary Hermitian matrix on `basis` as one block. The
    /// mean diagonal is removed before diagonalization and restored as a
    /// global phase.
    pub fn new(h: &Mat<Complex64>, basis: Arc<SectorBasis>) -> Result<Self> {
        let n = basis.dim();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: h.nrows(),
            });
        }
        let shift = (0..n).map(|i| h[(i, i)].re).sum::<f64>() / n as f64;
        let mut shifted = h.clone();
        for i in 0..n {
            shifted[(i, i)].re -= shift;
        }
        let block = Block::new(&shifted, (0..n).collect(), shift)?;
        Ok(Propagator {
            basis,
            blocks: vec![block],
        })
    }

    /// Builds `H - c_S Σ S_z` and diagonalizes it per σ_z block; the Zeeman
    /// energy `c_S σ_z` of each block is applied as an exact phase. This keeps
    /// full precision when c0 and c_S are large and nearly equal.
    pub fn from_spec(spec: &SpinSystemSpec, basis: Arc<SectorBasis>) -> Result<Self> {
        check_basis(spec, &basis)?;
        let h = assemble(spec, &basis);
        let n_bath = basis.n_bath();
        let mut groups: Vec<(HalfInteger, Vec<usize>)> = Vec::new();
        for (i, &bits) in basis.states().iter().enumerate() {
            let sigma = sigma_z_of(bits, n_bath);
            match groups.iter_mut().find(|(s, _)| *s == sigma) {
                Some((_, idx)) => idx.push(i),
                None => groups.push((sigma, vec![i])),
            }
        }
        let blocks = groups
            .into_iter()
            .map(|(sigma, idx)| Block::new(&h, idx, spec.c_s * sigma.to_f64()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Propagator { basis, blocks })
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    /// Eigenvalues of `H`, rad/s, grouped by block.
    pub fn energies(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.energies.iter().map(move |e| e + b.offset))
            .collect()
    }

    /// `|Ψ(t)⟩` for every requested time, seconds.
    pub fn evolve(&self, psi0: &StateVector, times: &[f64]) -> Result<Vec<StateVector>> {
        let chunks = self.run_chunks(psi0, times, |psi| psi)?;
        let mut out = Vec::with_capacity(times.len());
        for chunk in chunks {
            for col in 0..chunk.ncols() {
                let amplitudes: Vec<Complex64> =
                    (0..chunk.nrows()).map(|i| chunk[(i, col)]).collect();
                out.push(StateVector {
                    basis: self.basis.clone(),
                    amplitudes,
                });
            }
        }
        Ok(out)
    }

    /// Expectation values of diagonal observables, one row per observable and
    /// one entry per time. Each observable lists its value on every basis state.
    pub fn diagonal_expectations(
        &self,
        psi0: &StateVector,
        times: &[f64],
        observables: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        let n = self.basis.dim();
        for obs in observables {
            if obs.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: obs.len(),
                });
            }
        }
        let chunks = self.run_chunks(psi0, times, |psi| {
            let mut values = Mat::<f64>::zeros(observables.len(), psi.ncols());
            for col in 0..psi.ncols() {
                for (r, obs) in observables.iter().enumerate() {
                    values[(r, col)] = (0..n).map(|i| psi[(i, col)].norm_sqr() * obs[i]).sum();
                }
            }
            values
        })?;
        let mut out = vec![Vec::with_capacity(times.len()); observables.len()];
        for chunk in chunks {
            for (r, row) in out.iter_mut().enumerate() {
                row.extend((0..chunk.ncols()).map(|c| chunk[(r, c)]));
            }
        }
        Ok(out)
    }

    /// Propagates in chunks of times; each chunk is reduced by `reduce`. Chunks
    /// are independent and evaluated sequentially inside, so the result does not
    /// depend on the thread count.
    fn run_chunks<T, F>(&self, psi0: &StateVector, times: &[f64], reduce: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(Mat<Complex64>) -> T + Sync,
    {
        if *psi0.basis != *self.basis {
            return Err(Error::DimensionMismatch {
                expected: self.basis.dim(),
                got: psi0.basis.dim(),
            });
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite time {t}")));
        }
        // Blocks the initial state does not touch stay empty.
        let active: Vec<(&Block, Vec<Complex64>)> = self
            .blocks
            .iter()
            .filter(|b| {
                b.indices
                    .iter()
                    .any(|&i| psi0.amplitudes[i].norm_sqr() > 0.0)
            })
            .map(|b| (b, b.weights(&psi0.amplitudes)))
            .collect();
        let n = self.basis.dim();
        Ok(times
            .par_chunks(TIME_CHUNK)
            .map(|chunk| {
                let mut psi = Mat::<Complex64>::zeros(n, chunk.len());
                for (block, weights) in &active {
                    let part = block.reconstruct(weights, chunk);
                    for (r, &i) in block.indices.iter().enumerate() {
                        for c in 0..chunk.len() {
                            psi[(i, c)] = part[(r, c)];
                        }
                    }
                }
                for (col, &t) in chunk.iter().enumerate() {
                    let norm = (0..n).map(|i| psi[(i, col)].norm_sqr()).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > NORM_DRIFT_WARNING {
                        warn!("norm drift {:.3e} at t = {t:e} s", norm - 1.0);
                    }
                }
                reduce(psi)
            })
            .collect())
    }
}

/// Diagonalizes `h` and evolves `psi0` to every time in `times`.
pub fn evolve(h: &Mat<Complex64>, psi0: &StateVector, times: &[f64]) -> Result<Vec<StateVector>> {
    Propagator::new(h, psi0.basis.clone())?.evolve(psi0, times)
}

/// Values of `S_z` at `site` (0 = central) on each basis state.
pub fn sz_diagonal(basis: &SectorBasis, site: usize) -> Result<Vec<f64>> {
    if site > basis.n_bath() {
        return Err(Error::IndexOutOfRange {
            index: site,
            valid: format!("0..={}", basis.n_bath()),
        });
    }
    Ok(basis.states().iter().map(|&b| half(b, site)).collect())
}

/// `⟨S_z⟩` at `site` (0 = central).
pub fn observable_sz(psi: &StateVector, site: usize) -> Result<f64> {
    let diag = sz_diagonal(&psi.basis, site)?;
    Ok(psi
        .amplitudes
        .iter()
        .zip(diag)
        .map(|(a, s)| a.norm_sqr() * s)
        .sum())
}

/// `⟨S₊⁰⟩` of the central spin.
pub fn central_s_plus(psi: &StateVector) -> Complex64 {
    let basis = &psi.basis;
    basis
        .states()
        .iter()
        .zip(&psi.amplitudes)
        .filter(|(&bits, _)| bits & 1 == 0)
        .filter_map(|(&bits, &a)| {
            basis
                .index_of(bits | 1)
                .map(|j| psi.amplitudes[j].conj() * a)
        })
        .sum()
}

/// `√(⟨S₊⁰⟩⟨S₋⁰⟩ + ⟨S_z⁰⟩²)`. Within a single σ_z sector the transverse part
/// vanishes identically.
pub fn central_spin_norm(psi: &StateVector) -> f64 {
    let sz = observable_sz(psi, 0).expect("site 0 always exists");
    (central_s_plus(psi).norm_sqr() + sz * sz).sqrt()
}

/// `⟨Ψ|H|Ψ⟩` for a dense matrix on the state's basis.
pub fn expectation(h: &Mat<Complex64>, psi: &StateVector) -> Result<f64> {
    let n = psi.basis.dim();
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: h.nrows(),
        });
    }
    let a = &psi.amplitudes;
    let mut total = Complex64::new(0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            total += a[i].conj() * h[(i, j)] * a[j];
        }
    }
    Ok(total.re)
}

/// Which of `F` and `F†` to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaugeDirection {
    /// `F`: multiplies by `e^{+iΣ ξ_k b_k}`.
    Forward,
    /// `F†`: multiplies by `e^{-iΣ ξ_k b_k}`.
    Adjoint,
}

/// Applies the diagonal bath phase rotation; `xis[k - 1]` belongs to site `k`.
pub fn phase_transform(
    psi: &StateVector,
    xis: &[f64],
    direction: GaugeDirection,
) -> Result<StateVector> {
    let n_bath = psi.basis.n_bath();
    if xis.len() != n_bath {
        return Err(Error::DimensionMismatch {
            expected: n_bath,
            got: xis.len(),
        });
    }
    let sign = match direction {
        GaugeDirection::Forward => 1.0,
        GaugeDirection::Adjoint => -1.0,
    };
    let amplitudes = psi
        .basis
        .states()
        .iter()
        .zip(&psi.amplitudes)
        .map(|(&bits, &a)| {
            let angle: f64 = (1..=n_bath)
                .filter(|&k| bits >> k & 1 == 1)
                .map(|k| xis[k - 1])
                .sum();
            a * Complex64::from_polar(1.0, sign * angle)
        })
        .collect();
    Ok(StateVector {
        basis: psi.basis.clone(),
        amplitudes,
    })
}

/// Gauge angles `ξ_k = arg C_k` that make every coupling real and positive.
pub fn gauge_angles(couplings: &[Complex64]) -> Vec<f64> {
    couplings.iter().map(|c| c.arg()).collect()
}

/// Writes `index,bitstring,re,im` rows.
pub fn write_snapshot<W: Write>(out: W, psi: &StateVector) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["index", "bitstring", "re", "im"])
        .map_err(io)?;
    for (i, (&bits, a)) in psi.basis.states().iter().zip(&psi.amplitudes).enumerate() {
        w.write_record([
            i.to_string(),
            bitstring(bits, psi.basis.n_bath()),
            format!("{:e}", a.re),
            format!("{:e}", a.im),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_state(basis: &Arc<SectorBasis>, rng: &mut ChaCha8Rng) -> StateVector {
        let amps = (0..basis.dim())
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        StateVector::normalized(basis.clone(), amps).unwrap()
    }

    fn random_spec(n: usize, rng: &mut ChaCha8Rng) -> SpinSystemSpec {
        let couplings = (0..n)
            .map(|_| c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        SpinSystemSpec::xx(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            couplings,
        )
    }

    #[test]
    fn sector_sizes() {
        let top = enumerate_sector(3, HalfInteger::integer(2)).unwrap();
        assert_eq!(top.dim(), 1);
        assert_eq!(
            top.product_state(0),
            ProductState::new(Central::Up, vec![true; 3])
        );
        assert_eq!(
            enumerate_sector(12, HalfInteger::from_twice(-1))
                .unwrap()
                .dim(),
            1716
        );
        // one spin up above all-down: σ = -9/2 + 1
        assert_eq!(
            enumerate_sector(8, HalfInteger::from_twice(-7))
                .unwrap()
                .dim(),
            9
        );
        assert!(matches!(
            enumerate_sector(3, HalfInteger::HALF),
            Err(Error::SectorParity { .. })
        ));
        assert!(matches!(
            enumerate_sector(3, HalfInteger::integer(3)),
            Err(Error::SectorParity { .. })
        ));
        assert!(matches!(
            SectorBasis::full(15),
            Err(Error::TooManySpins { .. })
        ));
    }

    #[test]
    fn sector_states_are_sorted_and_consistent() {
        for n in 1..=7 {
            let mut total = 0;
            for twice in (-(n as i32) - 1..=n as i32 + 1).step_by(2) {
                let s = HalfInteger::from_twice(twice);
                let basis = enumerate_sector(n, s).unwrap();
                assert!(basis.states().windows(2).all(|w| w[0] < w[1]));
                assert!(basis.states().iter().all(|&b| sigma_z_of(b, n) == s));
                total += basis.dim();
            }
            assert_eq!(total, 1 << (n + 1));
        }
    }

    #[test]
    fn two_level_matrix() {
        let spec = SpinSystemSpec::xx(3.0, 1.0, vec![c(0.7, 0.0)]);
        let basis = enumerate_sector(1, HalfInteger::ZERO).unwrap();
        assert_eq!(bitstring(basis.states()[0], 1), "10");
        let h = build_effective_hamiltonian(&spec, &basis).unwrap();
        assert_eq!(h[(0, 0)], c(1.0, 0.0));
        assert_eq!(h[(1, 1)], c(-1.0, 0.0));
        assert_eq!(h[(0, 1)], c(0.7, 0.0));
        assert_eq!(h[(1, 0)], c(0.7, 0.0));
    }

    #[test]
    fn xxx_matrix_adds_zz() {
        let mut spec = SpinSystemSpec::xx(3.0, 1.0, vec![c(0.0, 0.7)]);
        spec.kind = InteractionKind::Xxx;
        let basis = SectorBasis::full(1).unwrap();
        let h = build_effective_hamiltonian(&spec, &basis).unwrap();
        // |⇑↑⟩ = 0b11: c0/2 + cS/2 + 2·0.7·(1/4)
        assert!((h[(3, 3)].re - (1.5 + 0.5 + 0.35)).abs() < 1e-15);
        // |⇑↓⟩ = 0b01: c0/2 - cS/2 - 0.35
        assert!((h[(1, 1)].re - (1.5 - 0.5 - 0.35)).abs() < 1e-15);
        assert_eq!(h[(1, 2)], c(0.7, 0.0));
    }

    #[test]
    fn zero_couplings_give_diagonal() {
        let spec = SpinSystemSpec::xx(2.0, 0.5, vec![c(0.0, 0.0); 3]);
        let h = build_effective_hamiltonian(&spec, &SectorBasis::full(3).unwrap()).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                if i != j {
                    assert_eq!(h[(i, j)], c(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn rabi_exchange() {
        let coupling = 2.0 * std::f64::consts::PI * 287e3;
        let spec = SpinSystemSpec::xx(1.0e11, 1.0e11, vec![c(coupling, 0.0)]);
        let basis = Arc::new(enumerate_sector(1, HalfInteger::ZERO).unwrap());
        let psi0 =
            StateVector::product(basis.clone(), &ProductState::new(Central::Up, vec![false]))
                .unwrap();
        let prop = Propagator::from_spec(&spec, basis).unwrap();
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 5e-8).collect();
        let states = prop.evolve(&psi0, &times).unwrap();
        for (psi, t) in states.iter().zip(&times) {
            let expected = 0.5 * (2.0 * coupling * t).cos();
            assert!((observable_sz(psi, 0).unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn time_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = random_spec(4, &mut rng);
        let basis = Arc::new(SectorBasis::full(4).unwrap());
        let psi0 = random_state(&basis, &mut rng);
        let h = build_effective_hamiltonian(&spec, &basis).unwrap();
        let psi = evolve(&h, &psi0, &[0.0]).unwrap();
        assert!((psi0.inner(&psi[0]).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn observables_on_simple_states() {
        let basis = Arc::new(enumerate_sector(1, HalfInteger::ZERO).unwrap());
        let up = StateVector::product(basis.clone(), &ProductState::new(Central::Up, vec![false]))
            .unwrap();
        assert_eq!(observable_sz(&up, 0).unwrap(), 0.5);
        assert_eq!(observable_sz(&up, 1).unwrap(), -0.5);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mix = StateVector::new(basis, vec![c(s, 0.0), c(s, 0.0)]).unwrap();
        assert!(observable_sz(&mix, 0).unwrap().abs() < 1e-15);
        assert!(matches!(
            observable_sz(&mix, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn central_spin_norm_of_transverse_state() {
        let basis = Arc::new(SectorBasis::full(1).unwrap());
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // (|⇑⟩ + |⇓⟩)/√2 ⊗ |↓⟩: bits 0b01 and 0b00
        let psi =
            StateVector::new(basis, vec![c(s, 0.0), c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!((central_s_plus(&psi).re - 0.5).abs() < 1e-15);
        assert!((central_spin_norm(&psi) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_unnormalized_and_mismatched() {
        let basis = Arc::new(SectorBasis::full(1).unwrap());
        assert!(matches!(
            StateVector::new(basis.clone(), vec![c(1.0, 0.0); 4]),
            Err(Error::NotNormalized(_))
        ));
        assert!(matches!(
            StateVector::new(basis, vec![c(1.0, 0.0)]),
            Err(Error::DimensionMismatch { .. })
        ));
        let spec = SpinSystemSpec::xx(0.0, 0.0, vec![c(1.0, 0.0); 2]);
        assert!(build_effective_hamiltonian(&spec, &SectorBasis::full(1).unwrap()).is_err());
    }

    #[test]
    fn sector_matches_full_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=6 {
            let spec = random_spec(n, &mut rng);
            let sigma = HalfInteger::from_twice(if n % 2 == 0 { -1 } else { 0 });
            let sector = Arc::new(enumerate_sector(n, sigma).unwrap());
            let full = Arc::new(SectorBasis::full(n).unwrap());
            let psi0 = random_state(&sector, &mut rng);
            let psi0_full = psi0.to_full().unwrap();
            let times: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..10.0)).collect();
            let a = Propagator::from_spec(&spec, sector)
                .unwrap()
                .evolve(&psi0, &times)
                .unwrap();
            let b = Propagator::from_spec(&spec, full)
                .unwrap()
                .evolve(&psi0_full, &times)
                .unwrap();
            for (x, y) in a.iter().zip(&b) {
                let leak: f64 = y
                    .basis()
                    .states()
                    .iter()
                    .zip(y.amplitudes())
                    .filter(|(&bits, _)| sigma_z_of(bits, n) != sigma)
                    .map(|(_, a)| a.norm())
                    .fold(0.0, f64::max);
                assert!(leak < 1e-12);
                for site in 0..=n {
                    let d = observable_sz(x, site).unwrap() - observable_sz(y, site).unwrap();
                    assert!(d.abs() < 1e-10, "n={n} site={site} diff={d}");
                }
                let total: f64 = (0..=n).map(|s| observable_sz(x, s).unwrap()).sum();
                assert!((total - sigma.to_f64()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gauge_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=5 {
            let spec = random_spec(n, &mut rng);
            let xis: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let mut rotated = spec.clone();
            for (ck, xi) in rotated.couplings.iter_mut().zip(&xis) {
                *ck *= Complex64::from_polar(1.0, -xi);
            }
            let basis = Arc::new(SectorBasis::full(n).unwrap());
            let psi0 = random_state(&basis, &mut rng);
            let times: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..5.0)).collect();
            let lhs = Propagator::from_spec(&rotated, basis.clone())
                .unwrap()
                .evolve(&psi0, &times)
                .unwrap();
            let start = phase_transform(&psi0, &xis, GaugeDirection::Adjoint).unwrap();
            let rhs = Propagator::from_spec(&spec, basis)
                .unwrap()
                .evolve(&start, &times)
                .unwrap();
            for (l, r) in lhs.iter().zip(&rhs) {
                let r = phase_transform(r, &xis, GaugeDirection::Forward).unwrap();
                let d = l
                    .amplitudes()
                    .iter()
                    .zip(r.amplitudes())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(d < 1e-10, "n={n} diff={d}");
            }
        }
    }

    #[test]
    fn gauge_of_product_state_is_a_phase() {
        let basis = Arc::new(SectorBasis::full(3).unwrap());
        let psi = StateVector::product(
            basis.clone(),
            &ProductState::new(Central::Down, vec![true, false, true]),
        )
        .unwrap();
        let out = phase_transform(&psi, &[0.3, 1.1, -0.4], GaugeDirection::Adjoint).unwrap();
        assert!((psi.inner(&out).unwrap().norm() - 1.0).abs() < 1e-15);
        let same = phase_transform(&psi, &[0.0; 3], GaugeDirection::Forward).unwrap();
        assert_eq!(same.amplitudes(), psi.amplitudes());
    }

    #[test]
    fn diagonal_observables_ignore_coupling_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 1..=5 {
            let spec = random_spec(n, &mut rng);
            let mut real = spec.clone();
            real.couplings
                .iter_mut()
                .for_each(|ck| *ck = c(ck.norm(), 0.0));
            let basis = Arc::new(SectorBasis::full(n).unwrap());
            let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let psi0 =
                StateVector::product(basis.clone(), &ProductState::new(Central::Up, bits)).unwrap();
            let times: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
            let obs: Vec<Vec<f64>> = (0..=n).map(|s| sz_diagonal(&basis, s).unwrap()).collect();
            let a = Propagator::from_spec(&spec, basis.clone())
                .unwrap()
                .diagonal_expectations(&psi0, &times, &obs)
                .unwrap();
            let b = Propagator::from_spec(&real, basis)
                .unwrap()
                .diagonal_expectations(&psi0, &times, &obs)
                .unwrap();
            for (ra, rb) in a.iter().zip(&b) {
                for (x, y) in ra.iter().zip(rb) {
                    assert!((x - y).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn energy_is_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = random_spec(5, &mut rng);
        let basis = Arc::new(SectorBasis::full(5).unwrap());
        let h = build_effective_hamiltonian(&spec, &basis).unwrap();
        let psi0 = random_state(&basis, &mut rng);
        let e0 = expectation(&h, &psi0).unwrap();
        for psi in evolve(&h, &psi0, &[0.5, 1.7, 9.3, 40.0]).unwrap() {
            assert!((psi.norm() - 1.0).abs() < 1e-12);
            assert!((expectation(&h, &psi).unwrap() - e0).abs() <= 1e-10 * e0.abs().max(1.0));
        }
    }

    #[test]
    fn diagonal_expectations_match_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = random_spec(4, &mut rng);
        let basis = Arc::new(enumerate_sector(4, HalfInteger::from_twice(-1)).unwrap());
        let psi0 = random_state(&basis, &mut rng);
        let prop = Propagator::from_spec(&spec, basis.clone()).unwrap();
        let times: Vec<f64> = (0..300).map(|i| i as f64 * 0.01).collect();
        let obs = vec![
            sz_diagonal(&basis, 0).unwrap(),
            sz_diagonal(&basis, 3).unwrap(),
        ];
        let values = prop.diagonal_expectations(&psi0, &times, &obs).unwrap();
        let states = prop.evolve(&psi0, &times).unwrap();
        for (i, psi) in states.iter().enumerate() {
            assert!((values[0][i] - observable_sz(psi, 0).unwrap()).abs() < 1e-14);
            assert!((values[1][i] - observable_sz(psi, 3).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn snapshot_format() {
        let basis = Arc::new(enumerate_sector(2, HalfInteger::from_twice(-1)).unwrap());
        let psi = StateVector::product(basis, &ProductState::new(Central::Down, vec![false, true]))
            .unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &psi).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,bitstring,re,im");
        assert_eq!(lines.len(), 4);
        assert!(lines.contains(&"2,001,1e0,0e0"));
    }

    proptest! {
        #[test]
        fn hamiltonian_is_hermitian(seed in any::<u64>(), n in 1usize..5, xxx in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut spec = random_spec(n, &mut rng);
            if xxx {
                spec.kind = InteractionKind::Xxx;
            }
            let h = build_effective_hamiltonian(&spec, &SectorBasis::full(n).unwrap()).unwrap();
            for i in 0..h.nrows() {
                for j in 0..h.ncols() {
                    prop_assert_eq!(h[(i, j)], h[(j, i)].conj());
                }
            }
        }

        #[test]
        fn evolution_is_unitary(seed in any::<u64>(), n in 1usize..5, t in 0.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_spec(n, &mut rng);
            let basis = Arc::new(SectorBasis::full(n).unwrap());
            let psi0 = random_state(&basis, &mut rng);
            let psi = Propagator::from_spec(&spec, basis).unwrap().evolve(&psi0, &[t]).unwrap();
            prop_assert!((psi[0].norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sector_count_is_binomial(n in 1usize..16, ups in 0usize..17) {
            prop_assume!(ups <= n + 1);
            let sigma = HalfInteger::from_twice(2 * ups as i32 - n as i32 - 1);
            let basis = enumerate_sector(n, sigma).unwrap();
            prop_assert_eq!(basis.dim() as u128, binomial(n + 1, ups));
        }
    }
}
