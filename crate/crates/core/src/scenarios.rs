//! Dynamical experiments on the ring: central-spin decoherence in a random
//! unpolarized bath, and classical-bit transfer between two bath spins with
//! equal couplings (which doubles as an AND gate).

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::angular::HalfInteger;
use crate::error::{Error, Result};
use crate::geometry::{self, CouplingSpread, DecayTime, RingConfig, TransitionPair};
use crate::spinmodel::{
    self, Central, InteractionKind, ProductState, Propagator, SectorBasis, SpinSystemSpec,
    StateVector,
};
use crate::units;

/// Samples in the default decoherence grid.
pub const DECOHERENCE_SAMPLES: usize = 2000;
/// Samples in the default transfer grid.
pub const TRANSFER_SAMPLES: usize = 4000;
/// Default transfer window, seconds.
pub const TRANSFER_WINDOW: f64 = 1.2e-4;
/// Minimum series length accepted by [`extract_envelope`].
pub const MIN_ENVELOPE_SAMPLES: usize = 50;
/// Envelope points that must stay below threshold after a crossing.
pub const DWELL_POINTS: usize = 5;
/// Moving-average width used before locating the transfer peak.
pub const SMOOTHING_WINDOW: usize = 7;
/// Fraction of the grid used for late-time averages.
pub const LATE_FRACTION: f64 = 0.2;
/// Distance from the initial value that counts as a revival.
pub const REVIVAL_TOLERANCE: f64 = 0.05;

/// Atom-molecule working point: dipoles, ring radius and pseudospin splittings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingPoint {
    pub name: String,
    pub mu_atom_debye: f64,
    pub mu_mol_debye: f64,
    /// Ring radius, meters.
    pub r0: f64,
    /// Bath splitting, rad/s.
    pub c_s: f64,
    /// Central minus bath splitting, rad/s.
    pub c_delta: f64,
    /// Radiative lifetimes of the two atomic levels, seconds.
    pub lifetimes: [f64; 2],
}

impl WorkingPoint {
    /// K Rydberg atom with CaF at 818.1 G.
    pub fn k_caf() -> Self {
        WorkingPoint {
            name: "K-CaF".into(),
            mu_atom_debye: 3626.87,
            mu_mol_debye: 1.77,
            r0: 1.5e-6,
            c_s: units::mhz_2pi(20532.001),
            c_delta: units::khz_2pi(19.0),
            lifetimes: [3.4e-4, 5.2e-4],
        }
    }

    /// Rb Rydberg atom with CaF at 3042.5 mV/cm and zero magnetic field.
    pub fn rb_caf() -> Self {
        WorkingPoint {
            name: "Rb-CaF".into(),
            mu_atom_debye: 2539.79,
            mu_mol_debye: 1.72,
            r0: 1.5e-6,
            c_s: units::mhz_2pi(20528.349),
            c_delta: units::khz_2pi(-21.0),
            lifetimes: [1.1e-4, 2.5e-4],
        }
    }

    pub fn c0(&self) -> f64 {
        self.c_s + self.c_delta
    }

    pub fn pair(&self) -> TransitionPair {
        TransitionPair::pi_pi(self.mu_atom_debye, self.mu_mol_debye)
    }

    pub fn ring(&self, n_bath: usize, beta: f64) -> RingConfig {
        RingConfig {
            n_bath,
            r0: self.r0,
            beta,
        }
    }

    /// `C_k` for a ring of `n_bath` molecules tilted by `beta`.
    pub fn ring_couplings(&self, n_bath: usize, beta: f64) -> Result<Vec<Complex64>> {
        let layout = geometry::ring_layout(&self.ring(n_bath, beta))?;
        geometry::couplings(&layout, &self.pair())
    }

    pub fn spec(
        &self,
        couplings: Vec<Complex64>,
        c_delta: f64,
        kind: InteractionKind,
    ) -> SpinSystemSpec {
        SpinSystemSpec {
            c0: self.c_s + c_delta,
            c_s: self.c_s,
            couplings,
            kind,
        }
    }
}

/// `count` evenly spaced samples on `[start, stop]`.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Sampled channels on a shared, strictly increasing time axis (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    times: Vec<f64>,
    channels: Vec<(String, Vec<f64>)>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        validate_times(&times)?;
        Ok(TimeSeries {
            times,
            channels: Vec::new(),
        })
    }

    pub fn add_channel(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.times.len() {
            return Err(Error::TimeSeries(format!(
                "channel {name} has {} samples, expected {}",
                values.len(),
                self.times.len()
            )));
        }
        if name == "time_s" || self.channels.iter().any(|(n, _)| n == name) {
            return Err(Error::TimeSeries(format!("duplicate channel {name}")));
        }
        self.channels.push((name.to_string(), values));
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|(n, _)| n.as_str())
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::TimeSeries(format!("no channel named {name}")))
    }

    /// CSV with a `time_s` column followed by the channels.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time_s".to_string()];
        header.extend(self.channels.iter().map(|(n, _)| n.clone()));
        w.write_record(&header).map_err(csv_error)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:e}")];
            row.extend(self.channels.iter().map(|(_, v)| format!("{:e}", v[i])));
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let header: Vec<String> = reader
            .headers()
            .map_err(csv_error)?
            .iter()
            .map(String::from)
            .collect();
        if header.first().map(String::as_str) != Some("time_s") {
            return Err(Error::Parse {
                line: 1,
                message: "first column must be time_s".into(),
            });
        }
        let mut columns = vec![Vec::new(); header.len()];
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(csv_error)?;
            if record.len() != header.len() {
                return Err(Error::Parse {
                    line: i + 2,
                    message: "wrong number of fields".into(),
                });
            }
            for (col, field) in record.iter().enumerate() {
                let value = field.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 2,
                    message: format!("{field:?}: {e}"),
                })?;
                columns[col].push(value);
            }
        }
        let mut columns = columns.into_iter();
        let mut series = TimeSeries::new(columns.next().unwrap_or_default())?;
        for (name, values) in header[1..].iter().zip(columns) {
            series.add_channel(name, values)?;
        }
        Ok(series)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn validate_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::TimeSeries("empty time grid".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::TimeSeries("non-finite time".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::TimeSeries(
            "times must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn sz_channel(site: usize) -> String {
    if site == 0 {
        "Sz_central".into()
    } else {
        format!("Sz_site_{site}")
    }
}

/// Decoherence of a polarized central spin in a random bath.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceRun {
    pub n_bath: usize,
    /// Ring tilt, radians. Informational; couplings are passed separately.
    pub beta: f64,
    pub up_count: usize,
    pub seed: u64,
    /// Seconds. Empty selects [`default_decoherence_grid`].
    pub times: Vec<f64>,
    /// rad/s.
    pub c_delta: f64,
    pub kind: InteractionKind,
}

impl DecoherenceRun {
    /// Half-filled bath, default grid and detuning of the K-CaF working point.
    pub fn new(n_bath: usize, beta: f64, seed: u64) -> Self {
        DecoherenceRun {
            n_bath,
            beta,
            up_count: n_bath / 2,
            seed,
            times: Vec::new(),
            c_delta: WorkingPoint::k_caf().c_delta,
            kind: InteractionKind::Xx,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bath == 0 {
            return Err(Error::InvalidParameter("n_bath must be positive".into()));
        }
        if self.up_count > self.n_bath {
            return Err(Error::InvalidParameter(format!(
                "up_count {} exceeds n_bath {}",
                self.up_count, self.n_bath
            )));
        }
        if !self.c_delta.is_finite() {
            return Err(Error::InvalidParameter("c_delta must be finite".into()));
        }
        if !self.times.is_empty() {
            validate_times(&self.times)?;
        }
        Ok(())
    }

    /// Sector holding `|⇓⟩ ⊗ (bath with up_count spins up)`.
    pub fn sector(&self) -> Result<SectorBasis> {
        let twice = 2 * self.up_count as i32 - self.n_bath as i32 - 1;
        spinmodel::enumerate_sector(self.n_bath, HalfInteger::from_twice(twice))
    }
}

/// `[0, 10τ]` with `τ = 1/A`, or `[0, 50/max|C|]` for homogeneous couplings.
pub fn default_decoherence_grid(couplings: &[Complex64]) -> Result<Vec<f64>> {
    let spread = geometry::coupling_spread(couplings)?;
    let stop = match spread.tau {
        DecayTime::Finite(tau) => 10.0 * tau,
        DecayTime::NoDecay => 50.0 / max_coupling(couplings),
    };
    Ok(linspace(0.0, stop, DECOHERENCE_SAMPLES))
}

fn max_coupling(couplings: &[Complex64]) -> f64 {
    couplings.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// `Σ_j α_j |⇓⟩⊗|j⟩` over bath configurations with `up_count` spins up.
///
/// Magnitudes come from stream 0 and phases from stream 1 of a ChaCha20
/// generator seeded with `run.seed`, one draw per configuration in ascending
/// bit order.
pub fn random_half_filled_state(run: &DecoherenceRun) -> Result<StateVector> {
    run.validate()?;
    let basis = Arc::new(run.sector()?);
    let mut magnitudes = ChaCha20Rng::seed_from_u64(run.seed);
    magnitudes.set_stream(0);
    let mut phases = ChaCha20Rng::seed_from_u64(run.seed);
    phases.set_stream(1);
    let amplitudes = basis
        .states()
        .iter()
        .map(|&bits| {
            if bits & 1 == 1 {
                return Complex64::new(0.0, 0.0);
            }
            let r: f64 = magnitudes.random();
            let phi: f64 = phases.random::<f64>() * TAU;
            Complex64::from_polar(r, phi)
        })
        .collect();
    StateVector::normalized(basis, amplitudes)
}

/// Result of [`extract_envelope`].
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    /// Envelope interpolated onto every sample.
    pub values: Vec<f64>,
    /// Times and heights of the envelope nodes (the first sample plus local maxima).
    pub nodes: Vec<(f64, f64)>,
    /// Late-window mean of the signal.
    pub asymptote: f64,
    pub decay_time: DecayTime,
}

/// Envelope of `|signal - asymptote|` and its 1/e decay time.
///
/// The asymptote is the mean over the last 20% of samples. Envelope nodes are
/// the first sample and every local maximum that is not itself a dip between
/// its two neighbouring maxima; the decay time is the first
/// (interpolated) time the envelope drops below `1/e` of its initial value and
/// stays there for the next [`DWELL_POINTS`] nodes.
pub fn extract_envelope(series: &TimeSeries, channel: &str) -> Result<Envelope> {
    let signal = series.channel(channel)?;
    let times = series.times();
    let n = signal.len();
    if n < MIN_ENVELOPE_SAMPLES {
        return Err(Error::TimeSeries(format!(
            "envelope needs at least {MIN_ENVELOPE_SAMPLES} samples, got {n}"
        )));
    }
    let asymptote = late_mean(signal);
    let lo = signal.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = signal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0) {
        return Ok(Envelope {
            values: vec![0.0; n],
            nodes: vec![(times[0], 0.0)],
            asymptote,
            decay_time: DecayTime::NoDecay,
        });
    }

    let dev: Vec<f64> = signal.iter().map(|s| (s - asymptote).abs()).collect();
    let mut nodes = vec![(times[0], dev[0])];
    for i in 1..n - 1 {
        if dev[i] >= dev[i - 1] && dev[i] > dev[i + 1] {
            nodes.push((times[i], dev[i]));
        }
    }
    if nodes.len() < 3 {
        return Err(Error::TooFewExtrema {
            channel: channel.to_string(),
            found: nodes.len() - 1,
        });
    }
    // ripple maxima sitting below both neighbouring nodes are not part of the envelope
    let nodes: Vec<(f64, f64)> = (0..nodes.len())
        .filter(|&j| {
            j == 0
                || j == nodes.len() - 1
                || !(nodes[j].1 < nodes[j - 1].1 && nodes[j].1 < nodes[j + 1].1)
        })
        .map(|j| nodes[j])
        .collect();

    let values = interpolate(&nodes, times);
    let threshold = nodes[0].1 / std::f64::consts::E;
    let mut decay_time = DecayTime::NoDecay;
    for j in 1..nodes.len() {
        if nodes[j].1 >= threshold {
            continue;
        }
        let dwell = &nodes[j + 1..nodes.len().min(j + 1 + DWELL_POINTS)];
        if dwell.len() == DWELL_POINTS && dwell.iter().all(|&(_, v)| v < threshold) {
            let (t0, v0) = nodes[j - 1];
            let (t1, v1) = nodes[j];
            decay_time = DecayTime::Finite(t0 + (t1 - t0) * (v0 - threshold) / (v0 - v1));
            break;
        }
    }
    Ok(Envelope {
        values,
        nodes,
        asymptote,
        decay_time,
    })
}

fn interpolate(nodes: &[(f64, f64)], times: &[f64]) -> Vec<f64> {
    let mut j = 0;
    times
        .iter()
        .map(|&t| {
            while j + 1 < nodes.len() && nodes[j + 1].0 <= t {
                j += 1;
            }
            match nodes.get(j + 1) {
                Some(&(t1, v1)) if t >= nodes[j].0 => {
                    let (t0, v0) = nodes[j];
                    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                }
                _ => nodes[j].1,
            }
        })
        .collect()
}

fn late_mean(signal: &[f64]) -> f64 {
    let count = ((signal.len() as f64 * LATE_FRACTION).round() as usize).clamp(1, signal.len());
    signal[signal.len() - count..].iter().sum::<f64>() / count as f64
}

/// Summary of a decoherence run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub predicted_tau: DecayTime,
    pub spread: f64,
    pub measured_decay_time: DecayTime,
    pub initial_sz: f64,
    pub late_time_mean: f64,
    /// `|⟨S_z⁰⟩(0) - late_time_mean|`.
    pub decayed_fraction: f64,
    /// Local extrema after `t = 0` lying within [`REVIVAL_TOLERANCE`] of the
    /// initial value.
    pub revivals: usize,
    pub c_delta: f64,
    pub kind: InteractionKind,
    /// Set when XXX mode replaced the couplings by their magnitudes.
    pub couplings_coerced: bool,
}

#[derive(Debug, Clone)]
pub struct DecoherenceResult {
    pub series: TimeSeries,
    pub envelope: Envelope,
    pub report: DecayReport,
}

/// Evolves a random bath state and measures the central-spin decay.
pub fn run_decoherence(run: &DecoherenceRun, couplings: &[Complex64]) -> Result<DecoherenceResult> {
    run.validate()?;
    if couplings.len() != run.n_bath {
        return Err(Error::DimensionMismatch {
            expected: run.n_bath,
            got: couplings.len(),
        });
    }
    let times = if run.times.is_empty() {
        default_decoherence_grid(couplings)?
    } else {
        run.times.clone()
    };
    let psi0 = random_half_filled_state(run)?;
    let spec = WorkingPoint::k_caf().spec(couplings.to_vec(), run.c_delta, run.kind);
    let propagator = Propagator::from_spec(&spec, psi0.basis().clone())?;
    let sz0 = spinmodel::sz_diagonal(psi0.basis(), 0)?;
    let values = propagator
        .diagonal_expectations(&psi0, &times, &[sz0])?
        .remove(0);

    let mut series = TimeSeries::new(times)?;
    series.add_channel(&sz_channel(0), values)?;
    let envelope = extract_envelope(&series, &sz_channel(0))?;
    series.add_channel("envelope", envelope.values.clone())?;

    let signal = series.channel(&sz_channel(0))?;
    let CouplingSpread { a, tau } = geometry::coupling_spread(couplings)?;
    let initial_sz = signal[0];
    let late_time_mean = late_mean(signal);
    let report = DecayReport {
        predicted_tau: tau,
        spread: a,
        measured_decay_time: envelope.decay_time,
        initial_sz,
        late_time_mean,
        decayed_fraction: (initial_sz - late_time_mean).abs(),
        revivals: count_revivals(signal),
        c_delta: run.c_delta,
        kind: run.kind,
        couplings_coerced: run.kind == InteractionKind::Xxx
            && couplings.iter().any(|c| c.im != 0.0 || c.re < 0.0),
    };
    Ok(DecoherenceResult {
        series,
        envelope,
        report,
    })
}

fn count_revivals(signal: &[f64]) -> usize {
    let s0 = signal[0];
    let n = signal.len();
    (1..n - 1)
        .filter(|&i| {
            let extremum = (signal[i] - signal[i - 1]) * (signal[i + 1] - signal[i]) <= 0.0;
            extremum && (signal[i] - s0).abs() <= REVIVAL_TOLERANCE
        })
        .count()
}

/// Transfer of a classical bit from `input_site` to `output_site`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRun {
    pub n_bath: usize,
    pub beta: f64,
    pub input_site: usize,
    pub output_site: usize,
    pub central_init: Central,
    pub input_up: bool,
    /// Seconds. Empty selects [`default_transfer_grid`].
    pub times: Vec<f64>,
    pub c_delta: f64,
    pub kind: InteractionKind,
}

impl TransferRun {
    /// `|⇑; ↑_in, ↓ …⟩` with the K-CaF detuning and default grid.
    pub fn new(n_bath: usize, beta: f64, input_site: usize, output_site: usize) -> Self {
        TransferRun {
            n_bath,
            beta,
            input_site,
            output_site,
            central_init: Central::Up,
            input_up: true,
            times: Vec::new(),
            c_delta: WorkingPoint::k_caf().c_delta,
            kind: InteractionKind::Xx,
        }
    }

    /// Checks sites and the equal-magnitude condition `|C_in| = |C_out|`.
    pub fn validate(&self, couplings: &[Complex64]) -> Result<()> {
        if couplings.len() != self.n_bath {
            return Err(Error::DimensionMismatch {
                expected: self.n_bath,
                got: couplings.len(),
            });
        }
        for site in [self.input_site, self.output_site] {
            if site == 0 || site > self.n_bath {
                return Err(Error::IndexOutOfRange {
                    index: site,
                    valid: format!("1..={}", self.n_bath),
                });
            }
        }
        if self.input_site == self.output_site {
            return Err(Error::InvalidParameter(
                "input and output sites must differ".into(),
            ));
        }
        if !self.times.is_empty() {
            validate_times(&self.times)?;
        }
        let c_in = couplings[self.input_site - 1].norm();
        let c_out = couplings[self.output_site - 1].norm();
        if (c_in - c_out).abs() > 1e-9 * c_in.max(c_out) {
            return Err(Error::InvalidParameter(format!(
                "|C_{}| = {c_in} and |C_{}| = {c_out} differ",
                self.input_site, self.output_site
            )));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> ProductState {
        let mut bath = vec![false; self.n_bath];
        bath[self.input_site - 1] = self.input_up;
        ProductState::new(self.central_init, bath)
    }
}

/// [`TRANSFER_SAMPLES`] points over `[0, TRANSFER_WINDOW]`.
pub fn default_transfer_grid() -> Vec<f64> {
    linspace(0.0, TRANSFER_WINDOW, TRANSFER_SAMPLES)
}

/// One line of the AND truth table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AndRow {
    pub central: Central,
    pub input_up: bool,
    /// `⟨S_z^out⟩` at the transfer time of the `(⇑, ↑)` run.
    pub output_at_tau: f64,
    pub max_output: f64,
    /// 1 when `output_at_tau > 0`.
    pub bit: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// First local maximum of the smoothed output after it crosses zero.
    pub tau_transf: Option<f64>,
    /// Largest raw output within the smoothing window around `tau_transf`.
    pub peak_value: Option<f64>,
    pub max_output: f64,
    pub and_table: Option<Vec<AndRow>>,
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    pub series: TimeSeries,
    pub report: TransferReport,
}

/// Evolves the transfer initial state and records `⟨S_z⟩` on every site.
pub fn run_transfer(run: &TransferRun, couplings: &[Complex64]) -> Result<TransferResult> {
    run.validate(couplings)?;
    let times = if run.times.is_empty() {
        default_transfer_grid()
    } else {
        run.times.clone()
    };
    let state = run.initial_state();
    let basis = Arc::new(spinmodel::enumerate_sector(run.n_bath, state.sigma_z())?);
    let psi0 = StateVector::product(basis.clone(), &state)?;
    let spec = WorkingPoint::k_caf().spec(couplings.to_vec(), run.c_delta, run.kind);
    let propagator = Propagator::from_spec(&spec, basis.clone())?;
    let observables = (0..=run.n_bath)
        .map(|k| spinmodel::sz_diagonal(&basis, k))
        .collect::<Result<Vec<_>>>()?;
    let values = propagator.diagonal_expectations(&psi0, &times, &observables)?;

    let mut series = TimeSeries::new(times)?;
    for (site, v) in values.into_iter().enumerate() {
        series.add_channel(&sz_channel(site), v)?;
    }
    let output = series.channel(&sz_channel(run.output_site))?;
    let (tau_transf, peak_value) = match transfer_peak(output) {
        Some(i) => {
            let lo = i.saturating_sub(SMOOTHING_WINDOW / 2);
            let hi = (i + SMOOTHING_WINDOW / 2).min(output.len() - 1);
            (
                Some(series.times()[i]),
                Some(output[lo..=hi].iter().cloned().fold(f64::MIN, f64::max)),
            )
        }
        None => (None, None),
    };
    let max_output = output.iter().cloned().fold(f64::MIN, f64::max);
    Ok(TransferResult {
        series,
        report: TransferReport {
            tau_transf,
            peak_value,
            max_output,
            and_table: None,
        },
    })
}

/// Index of the first local maximum of the smoothed signal after it first
/// becomes positive.
pub fn transfer_peak(signal: &[f64]) -> Option<usize> {
    let smooth = moving_average(signal, SMOOTHING_WINDOW);
    let start = smooth.iter().position(|&v| v > 0.0)?;
    (start.max(1)..smooth.len() - 1)
        .find(|&i| smooth[i] >= smooth[i - 1] && smooth[i] > smooth[i + 1])
}

/// Centered moving average; the window shrinks near the ends.
pub fn moving_average(signal: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..signal.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(signal.len() - 1);
            signal[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Runs all four `(central, input)` combinations. The transfer time comes from
/// the `(⇑, ↑)` run and every row is read off at that time.
pub fn run_and_gate(
    run: &TransferRun,
    couplings: &[Complex64],
) -> Result<(Vec<TransferResult>, TransferReport)> {
    let combos = [
        (Central::Down, false),
        (Central::Down, true),
        (Central::Up, false),
        (Central::Up, true),
    ];
    let results = combos
        .iter()
        .map(|&(central, input_up)| {
            let mut r = run.clone();
            r.central_init = central;
            r.input_up = input_up;
            run_transfer(&r, couplings)
        })
        .collect::<Result<Vec<_>>>()?;
    let gate = &results[3];
    let index = gate
        .report
        .tau_transf
        .map(|t| gate.series.times().partition_point(|&x| x < t));
    let channel = sz_channel(run.output_site);
    let table = combos
        .iter()
        .zip(&results)
        .map(|(&(central, input_up), r)| {
            let output = r.series.channel(&channel)?;
            let at = index.map_or(output[0], |i| output[i]);
            Ok(AndRow {
                central,
                input_up,
                output_at_tau: at,
                max_output: r.report.max_output,
                bit: u8::from(at > 0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = gate.report.clone();
    report.and_table = Some(table);
    Ok((results, report))
}
