//! JSON run configuration, validation and scenario orchestration.
//!
//! Field names carry their units (`B_gauss`, `r0_um`, `*_MHz_2pi`, ...).
//! Every scenario renders its outputs in memory on the worker pool; a single
//! writer then puts them on disk under names derived from a hash of the
//! effective configuration.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{self, DegeneratePair, ParticleLayout, RingConfig, TransitionPair};
use crate::molecule::{self, FieldPoint, LevelLabel, MolecularHamiltonian, MoleculeConstants};
use crate::scenarios::{self, DecoherenceRun, TransferRun, WorkingPoint};
use crate::spinmodel::{self, GaugeDirection, InteractionKind, Propagator, SpinSystemSpec};
use crate::units;

pub const DEFAULT_LIFETIME_BUDGET: f64 = 1e-4;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_DOWN_LEVEL: &str = "N=0,F=0,M_F=0";
pub const DEFAULT_UP_LEVEL: &str = "N=1,F=1-,M_F=0";
pub const DEFAULT_UP_MANIFOLD: &str = "N=1,F=1-";
const GAUGE_SAMPLES: usize = 200;
const GAUGE_T_STOP_US: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Spectrum,
    Couplings,
    Decoherence,
    Transfer,
    GaugeCheck,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::Spectrum => "spectrum",
            Scenario::Couplings => "couplings",
            Scenario::Decoherence => "decoherence",
            Scenario::Transfer => "transfer",
            Scenario::GaugeCheck => "gauge-check",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub molecule: Option<MoleculeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSection>,
    #[serde(
        rename = "B_sweep_gauss",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub b_sweep_gauss: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring: Option<RingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions_um: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_sweep_pi: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin: Option<SpinSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoherence: Option<DecoherenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauge: Option<GaugeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifetime_budget_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

/// One of `{"preset": "caf"}`, explicit constants, or a `key = value`
/// constants file. The file is read and inlined as `constants` on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoleculeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    #[serde(rename = "B_rot_MHz_2pi")]
    pub b_rot_mhz_2pi: f64,
    pub d_debye: f64,
    #[serde(rename = "gamma_MHz_2pi")]
    pub gamma_mhz_2pi: f64,
    #[serde(rename = "b_MHz_2pi")]
    pub b_mhz_2pi: f64,
    #[serde(rename = "c_MHz_2pi")]
    pub c_mhz_2pi: f64,
    #[serde(rename = "c_F_MHz_2pi")]
    pub c_f_mhz_2pi: f64,
    pub g_s: f64,
    #[serde(rename = "g_I")]
    pub g_i: f64,
    pub g_r: f64,
}

impl ConstantsSection {
    pub fn to_constants(&self) -> MoleculeConstants {
        MoleculeConstants {
            b_rot: units::mhz_2pi(self.b_rot_mhz_2pi),
            dipole_debye: self.d_debye,
            gamma: units::mhz_2pi(self.gamma_mhz_2pi),
            b: units::mhz_2pi(self.b_mhz_2pi),
            c: units::mhz_2pi(self.c_mhz_2pi),
            c_f: units::mhz_2pi(self.c_f_mhz_2pi),
            g_s: self.g_s,
            g_i: self.g_i,
            g_r: self.g_r,
        }
    }

    pub fn from_constants(c: &MoleculeConstants) -> Self {
        ConstantsSection {
            b_rot_mhz_2pi: units::to_mhz_2pi(c.b_rot),
            d_debye: c.dipole_debye,
            gamma_mhz_2pi: units::to_mhz_2pi(c.gamma),
            b_mhz_2pi: units::to_mhz_2pi(c.b),
            c_mhz_2pi: units::to_mhz_2pi(c.c),
            c_f_mhz_2pi: units::to_mhz_2pi(c.c_f),
            g_s: c.g_s,
            g_i: c.g_i,
            g_r: c.g_r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    #[serde(rename = "E_V_per_cm", default)]
    pub e_v_per_cm: f64,
    #[serde(rename = "B_gauss", default)]
    pub b_gauss: f64,
}

/// Inclusive `(start, stop, count)` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        scenarios::linspace(self.start, self.stop, self.count)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.count == 0 || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{what}: sweep needs finite ends and count >= 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSection {
    pub n_bath: usize,
    pub r0_um: f64,
    #[serde(default)]
    pub beta_pi: f64,
}

/// Where the atom and molecule transition dipoles come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PairSource {
    Literal {
        mu_atom_debye: f64,
        mu_mol_debye: f64,
        #[serde(default)]
        dm_j: i32,
        #[serde(default)]
        dm_f: i32,
    },
    /// Molecular dipole `<down|d_{-dM_F}|up>` from the dressed levels at `field`.
    Computed {
        mu_atom_debye: f64,
        #[serde(default)]
        dm_j: i32,
        #[serde(default = "default_down")]
        down: String,
        #[serde(default = "default_up")]
        up: String,
    },
    /// Up-state spread over `M_F = -1, 0, +1` of one manifold. Dipoles are
    /// computed from the molecule unless given.
    Degenerate {
        mu_atom_debye: f64,
        dm_j: i32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_mol_debye: Option<[f64; 3]>,
        #[serde(default = "default_down")]
        down: String,
        #[serde(default = "default_up_manifold")]
        up_manifold: String,
        #[serde(
            rename = "tolerance_kHz_2pi",
            default,
            skip_serializing_if = "Option::is_none"
        )]
        tolerance_khz_2pi: Option<f64>,
    },
}

fn default_down() -> String {
    DEFAULT_DOWN_LEVEL.into()
}

fn default_up() -> String {
    DEFAULT_UP_LEVEL.into()
}

fn default_up_manifold() -> String {
    DEFAULT_UP_MANIFOLD.into()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionKind>,
    /// Rotating-frame reference; sector dynamics only see `c_delta`.
    #[serde(
        rename = "c_s_MHz_2pi",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub c_s_mhz_2pi: Option<f64>,
    #[serde(
        rename = "c_delta_kHz_2pi",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub c_delta_khz_2pi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoherenceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_stop_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub input_site: usize,
    pub output_site: usize,
    /// Run all four AND-gate inputs.
    #[serde(default)]
    pub gate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_stop_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_stop_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn warning(message: String) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message,
        }
    }

    fn error(message: String) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Dipole pair after the molecule has been consulted.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedPair {
    Plain(TransitionPair),
    Degenerate {
        pair: DegeneratePair,
        tolerance: f64,
    },
}

/// Bath geometry with the ring tilt it came from, if any.
#[derive(Debug, Clone)]
pub struct LayoutPoint {
    pub beta: Option<f64>,
    pub layout: ParticleLayout,
}

/// Config with presets and defaults filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub constants: MoleculeConstants,
    pub n_max: u32,
    pub field: FieldPoint,
    pub layouts: Vec<LayoutPoint>,
    pub pair: Option<ResolvedPair>,
    pub kind: InteractionKind,
    pub c_s: f64,
    pub c_delta: f64,
    pub lifetime_budget: f64,
    pub seed: u64,
}

impl Resolved {
    pub fn couplings(&self, layout: &ParticleLayout) -> Result<Vec<Complex64>> {
        match &self.pair {
            None => Err(Error::InvalidParameter("no transition-pair source".into())),
            Some(ResolvedPair::Plain(pair)) => geometry::couplings(layout, pair),
            Some(ResolvedPair::Degenerate { pair, tolerance }) => (1..=layout.len())
                .map(|k| {
                    Ok(Complex64::new(
                        geometry::coupling_degenerate(layout, k, pair, *tolerance)?.c,
                        0.0,
                    ))
                })
                .collect(),
        }
    }
}

impl RunConfig {
    /// Relative constants files are looked up from the working directory.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::parse(text, Path::new(""))
    }

    /// Relative constants files are looked up next to the config.
    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse(
            &fs::read_to_string(path)?,
            path.parent().unwrap_or(Path::new("")),
        )
    }

    fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if let Some(molecule) = config.molecule.as_mut() {
            if let Some(file) = molecule.constants_file.take() {
                if molecule.preset.is_some() || molecule.constants.is_some() {
                    return Err(Error::InvalidParameter(
                        "molecule: give exactly one of preset, constants or constants_file".into(),
                    ));
                }
                let path = base.join(&file);
                let text = fs::read_to_string(&path)?;
                let constants = MoleculeConstants::from_text(&text).map_err(|e| match e {
                    Error::Parse { line, message } => Error::Parse {
                        line,
                        message: format!("{}: {message}", path.display()),
                    },
                    other => other,
                })?;
                molecule.constants = Some(ConstantsSection::from_constants(&constants));
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over the compact JSON, ignoring the
    /// output directory.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("config serializes"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn layout_source_count(&self) -> usize {
        usize::from(self.ring.is_some()) + usize::from(self.positions_um.is_some())
    }

    /// Fills in defaults and builds every layout. Structural problems are errors.
    pub fn resolve(&self) -> Result<Resolved> {
        let molecule = self.molecule.clone().unwrap_or(MoleculeSection {
            preset: None,
            constants_file: None,
            constants: None,
            n_max: None,
        });
        let constants = match (&molecule.preset, &molecule.constants) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidParameter(
                    "molecule: give either a preset or constants, not both".into(),
                ))
            }
            (Some(p), None) if p.eq_ignore_ascii_case("caf") => MoleculeConstants::caf(),
            (Some(p), None) => {
                return Err(Error::InvalidParameter(format!(
                    "molecule: unknown preset {p:?}"
                )))
            }
            (None, Some(c)) => c.to_constants(),
            (None, None) => MoleculeConstants::caf(),
        };
        constants.validate()?;
        let n_max = molecule.n_max.unwrap_or(molecule::DEFAULT_N_MAX);
        if n_max > molecule::MAX_N {
            return Err(Error::DimensionOverflow {
                n_max,
                limit: molecule::MAX_N,
            });
        }
        let field = self.field.unwrap_or_default();
        let field = FieldPoint::new(field.e_v_per_cm, field.b_gauss)?;

        if self.layout_source_count() > 1 {
            return Err(Error::InvalidParameter(
                "give exactly one layout source: ring or positions_um".into(),
            ));
        }
        if self.scenario != Scenario::Spectrum {
            if self.layout_source_count() == 0 {
                return Err(Error::InvalidParameter(format!(
                    "{} needs a layout: ring or positions_um",
                    self.scenario
                )));
            }
            if self.pair.is_none() {
                return Err(Error::InvalidParameter(format!(
                    "{} needs a transition-pair source",
                    self.scenario
                )));
            }
        }
        if self.scenario == Scenario::Spectrum
            && self.b_sweep_gauss.is_none()
            && self.field.is_none()
        {
            return Err(Error::InvalidParameter(
                "spectrum needs B_sweep_gauss or field".into(),
            ));
        }
        if let Some(s) = &self.b_sweep_gauss {
            s.validate("B_sweep_gauss")?;
        }
        if self.beta_sweep_pi.is_some() && self.ring.is_none() {
            return Err(Error::InvalidParameter(
                "beta_sweep_pi requires a ring layout".into(),
            ));
        }
        if self.scenario == Scenario::Transfer && self.transfer.is_none() {
            return Err(Error::InvalidParameter(
                "transfer needs a transfer section".into(),
            ));
        }

        let mut layouts = Vec::new();
        if let Some(ring) = &self.ring {
            let betas = match &self.beta_sweep_pi {
                Some(s) => {
                    s.validate("beta_sweep_pi")?;
                    s.values()
                }
                None => vec![ring.beta_pi],
            };
            for beta_pi in betas {
                let beta = beta_pi * PI;
                let layout = geometry::ring_layout(&RingConfig {
                    n_bath: ring.n_bath,
                    r0: units::micrometers(ring.r0_um),
                    beta,
                })?;
                layouts.push(LayoutPoint {
                    beta: Some(beta),
                    layout,
                });
            }
        }
        if let Some(p) = &self.positions_um {
            let positions = p.iter().map(|r| r.map(units::micrometers)).collect();
            layouts.push(LayoutPoint {
                beta: None,
                layout: ParticleLayout::new(positions)?,
            });
        }

        let pair = match &self.pair {
            None => None,
            Some(source) => Some(resolve_pair(source, &constants, &field, n_max)?),
        };

        let wp = WorkingPoint::k_caf();
        let spin = self.spin.unwrap_or_default();
        let c_s = spin.c_s_mhz_2pi.map_or(wp.c_s, units::mhz_2pi);
        let c_delta = spin.c_delta_khz_2pi.map_or(wp.c_delta, units::khz_2pi);
        if !c_s.is_finite() || !c_delta.is_finite() {
            return Err(Error::InvalidParameter(
                "spin: c_s and c_delta must be finite".into(),
            ));
        }
        let lifetime_budget = self.lifetime_budget_s.unwrap_or(DEFAULT_LIFETIME_BUDGET);
        if !(lifetime_budget > 0.0 && lifetime_budget.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lifetime_budget_s must be positive, got {lifetime_budget}"
            )));
        }
        Ok(Resolved {
            constants,
            n_max,
            field,
            layouts,
            pair,
            kind: spin.interaction.unwrap_or(InteractionKind::Xx),
            c_s,
            c_delta,
            lifetime_budget,
            seed: self.seed.unwrap_or(DEFAULT_SEED),
        })
    }

    /// Full validation without running a scenario. Errors end the list.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let resolved = match self.resolve() {
            Ok(r) => r,
            Err(e) => return vec![Diagnostic::error(e.to_string())],
        };
        let mut out = Vec::new();
        if let (Some(ring), None) = (&self.ring, &self.beta_sweep_pi) {
            let cfg = RingConfig {
                n_bath: ring.n_bath,
                r0: units::micrometers(ring.r0_um),
                beta: ring.beta_pi * PI,
            };
            if cfg.spacing_warning() {
                out.push(Diagnostic::warning(format!(
                    "ring of {} sites at r0 = {} um has nearest-neighbour chord {:.3} um, below the {} um tweezer spacing",
                    ring.n_bath,
                    ring.r0_um,
                    cfg.min_chord().unwrap_or(0.0) * 1e6,
                    geometry::MIN_TWEEZER_SPACING * 1e6
                )));
            }
        } else {
            for p in &resolved.layouts {
                if let Some(d) = p
                    .layout
                    .min_spacing()
                    .filter(|&d| d < geometry::MIN_TWEEZER_SPACING)
                {
                    out.push(Diagnostic::warning(format!(
                        "bath sites {:.3} um apart, below the {} um tweezer spacing",
                        d * 1e6,
                        geometry::MIN_TWEEZER_SPACING * 1e6
                    )));
                    break;
                }
            }
        }
        if resolved.pair.is_some() {
            for p in &resolved.layouts {
                let c = match resolved.couplings(&p.layout) {
                    Ok(c) => c,
                    Err(e) => {
                        out.push(Diagnostic::error(e.to_string()));
                        return out;
                    }
                };
                let max = c.iter().map(|c| c.norm()).fold(0.0, f64::max);
                if max / std::f64::consts::TAU * resolved.lifetime_budget < 1.0 {
                    out.push(Diagnostic::warning(format!(
                        "largest coupling 2π×{:.3} kHz completes less than one cycle within the {} s lifetime budget",
                        units::to_khz_2pi(max),
                        resolved.lifetime_budget
                    )));
                    break;
                }
            }
        }
        if let (Scenario::Transfer, Some(t)) = (self.scenario, &self.transfer) {
            for p in &resolved.layouts {
                let check = resolved
                    .couplings(&p.layout)
                    .and_then(|c| transfer_run(&resolved, t, p).validate(&c));
                if let Err(e) = check {
                    out.push(Diagnostic::error(e.to_string()));
                    return out;
                }
            }
        }
        out
    }
}

fn parse_label(s: &str) -> Result<LevelLabel> {
    s.parse()
}

fn resolve_pair(
    source: &PairSource,
    constants: &MoleculeConstants,
    field: &FieldPoint,
    n_max: u32,
) -> Result<ResolvedPair> {
    match source {
        PairSource::Literal {
            mu_atom_debye,
            mu_mol_debye,
            dm_j,
            dm_f,
        } => {
            let pair = TransitionPair {
                mu_atom: Complex64::new(*mu_atom_debye, 0.0),
                dm_j: *dm_j,
                mu_mol: Complex64::new(*mu_mol_debye, 0.0),
                dm_f: *dm_f,
            };
            pair.validate()?;
            Ok(ResolvedPair::Plain(pair))
        }
        PairSource::Computed {
            mu_atom_debye,
            dm_j,
            down,
            up,
        } => {
            let (down, up) = (parse_label(down)?, parse_label(up)?);
            let levels = molecule::dressed_levels(constants, field, n_max)?;
            let lo = molecule::find_level(&levels, &down)?;
            let hi = molecule::find_level(&levels, &up)?;
            let dm = up.m_f - down.m_f;
            if dm.twice() % 2 != 0 || dm.twice().abs() > 2 {
                return Err(Error::InvalidQuantumNumbers(format!(
                    "ΔM_F between {down} and {up} is not -1, 0 or +1"
                )));
            }
            let dm_f = dm.twice() / 2;
            let mu_mol = molecule::transition_dipole(constants, lo, hi, -dm_f)?;
            let pair = TransitionPair {
                mu_atom: Complex64::new(*mu_atom_debye, 0.0),
                dm_j: *dm_j,
                mu_mol: Complex64::new(mu_mol, 0.0),
                dm_f,
            };
            pair.validate()?;
            Ok(ResolvedPair::Plain(pair))
        }
        PairSource::Degenerate {
            mu_atom_debye,
            dm_j,
            mu_mol_debye,
            down,
            up_manifold,
            tolerance_khz_2pi,
        } => {
            let tolerance =
                tolerance_khz_2pi.map_or(geometry::DEFAULT_DEGENERACY_TOLERANCE, units::khz_2pi);
            let (mu_mol, level_energies) = match mu_mol_debye {
                Some(mu) => (mu.map(|m| Complex64::new(m, 0.0)), None),
                None => {
                    let down = parse_label(down)?;
                    let levels = molecule::dressed_levels(constants, field, n_max)?;
                    let lo = molecule::find_level(&levels, &down)?;
                    let mut mu = [Complex64::new(0.0, 0.0); 3];
                    let mut energies = [0.0; 3];
                    for (slot, q) in (-1..=1).enumerate() {
                        let m_f = down.m_f.twice() / 2 + q;
                        let label = parse_label(&format!("{up_manifold},M_F={m_f}"))?;
                        let u = molecule::find_level(&levels, &label)?;
                        mu[slot] =
                            Complex64::new(molecule::transition_dipole(constants, u, lo, q)?, 0.0);
                        energies[slot] = u.energy;
                    }
                    (mu, Some(energies))
                }
            };
            let pair = DegeneratePair {
                mu_atom: Complex64::new(*mu_atom_debye, 0.0),
                dm_j: *dm_j,
                mu_mol,
                level_energies,
            };
            Ok(ResolvedPair::Degenerate { pair, tolerance })
        }
    }
}

/// Overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub scenario: Option<Scenario>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub diagnostics: Vec<Diagnostic>,
}

/// One rendered output: file-name suffix and contents.
struct Artifact {
    suffix: String,
    bytes: Vec<u8>,
}

/// Reads a config file and validates it without running anything. Only I/O
/// failures are errors; everything else is reported as a diagnostic.
pub fn validate(path: &Path) -> std::io::Result<Vec<Diagnostic>> {
    let text = fs::read_to_string(path)?;
    Ok(match RunConfig::from_json(&text) {
        Ok(c) => c.diagnostics(),
        Err(e) => vec![Diagnostic::error(e.to_string())],
    })
}

/// Applies the overrides, so the echo in the metadata describes what ran.
pub fn effective_config(config: &RunConfig, options: &RunOptions) -> Result<RunConfig> {
    let mut c = config.clone();
    if let Some(s) = options.scenario {
        if s != c.scenario {
            return Err(Error::InvalidParameter(format!(
                "command line asks for {s} but the config is for {}",
                c.scenario
            )));
        }
    }
    if let Some(seed) = options.seed {
        c.seed = Some(seed);
    }
    if let Some(dir) = &options.out_dir {
        c.output_dir = Some(dir.to_string_lossy().into_owned());
    }
    Ok(c)
}

/// Runs the configured scenario and writes its outputs plus a metadata sidecar.
pub fn run(config: &RunConfig, options: &RunOptions) -> Result<RunOutcome> {
    let config = effective_config(config, options)?;
    let diagnostics = config.diagnostics();
    if let Some(d) = diagnostics.iter().find(|d| d.severity == Severity::Error) {
        return Err(Error::InvalidParameter(d.message.clone()));
    }
    for d in &diagnostics {
        log::warn!("{}", d.message);
    }
    let resolved = config.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let stem = format!("{}_{}", config.scenario, config.content_hash());
    let (artifacts, coerced) = pool.install(|| execute(&config, &resolved, &stem))?;

    let dir = PathBuf::from(config.output_dir.clone().unwrap_or_else(|| ".".into()));
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for a in &artifacts {
        let path = dir.join(format!("{stem}{}", a.suffix));
        fs::write(&path, &a.bytes)?;
        files.push(path);
    }
    let meta = metadata(&config, &resolved, coerced, &files, &diagnostics);
    let path = dir.join(format!("{stem}_meta.json"));
    fs::write(
        &path,
        serde_json::to_vec_pretty(&meta).expect("metadata serializes"),
    )?;
    files.push(path);
    Ok(RunOutcome { files, diagnostics })
}

fn metadata(
    config: &RunConfig,
    resolved: &Resolved,
    coerced: bool,
    files: &[PathBuf],
    diagnostics: &[Diagnostic],
) -> serde_json::Value {
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": config.scenario,
        "seed": resolved.seed,
        "config": config,
        "constants": {
            "molecule": ConstantsSection::from_constants(&resolved.constants),
            "n_max": resolved.n_max,
            "planck_J_s": units::PLANCK,
            "hbar_J_s": units::HBAR,
            "epsilon_0_F_per_m": units::EPSILON_0,
            "bohr_magneton_J_per_T": units::BOHR_MAGNETON,
            "nuclear_magneton_J_per_T": units::NUCLEAR_MAGNETON,
            "debye_C_m": units::DEBYE,
        },
        "spin": {
            "interaction": resolved.kind,
            "c_s_MHz_2pi": units::to_mhz_2pi(resolved.c_s),
            "c_delta_kHz_2pi": units::to_khz_2pi(resolved.c_delta),
            "couplings_coerced": coerced,
        },
        "files": names,
        "diagnostics": diagnostics,
    })
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec_pretty(value).expect("report serializes")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn beta_pi(p: &LayoutPoint) -> Option<f64> {
    p.beta.map(|b| b / PI)
}

fn grid(t_stop_us: Option<f64>, samples: Option<usize>, default_samples: usize) -> Vec<f64> {
    match t_stop_us {
        Some(t) => scenarios::linspace(0.0, t * 1e-6, samples.unwrap_or(default_samples)),
        None => Vec::new(),
    }
}

fn coerced(kind: InteractionKind, couplings: &[Complex64]) -> bool {
    kind == InteractionKind::Xxx && couplings.iter().any(|c| c.im != 0.0 || c.re < 0.0)
}

fn execute(config: &RunConfig, r: &Resolved, stem: &str) -> Result<(Vec<Artifact>, bool)> {
    match config.scenario {
        Scenario::Spectrum => spectrum(config, r).map(|a| (a, false)),
        Scenario::Couplings => couplings_table(r).map(|a| (a, false)),
        Scenario::Decoherence => decoherence(config, r, stem),
        Scenario::Transfer => transfer(config, r, stem),
        Scenario::GaugeCheck => gauge_check(config, r).map(|a| (a, false)),
    }
}

fn spectrum(config: &RunConfig, r: &Resolved) -> Result<Vec<Artifact>> {
    let fields: Vec<f64> = match &config.b_sweep_gauss {
        Some(s) => s.values(),
        None => vec![r.field.b_gauss],
    };
    let ham = MolecularHamiltonian::new(&r.constants, r.n_max)?;
    let rows = fields
        .par_iter()
        .map(|&b| {
            let field = FieldPoint::new(r.field.e_v_per_cm, b)?;
            Ok((field, ham.dressed_levels(&field)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut map = Vec::new();
    molecule::write_level_map(&mut map, &rows)?;
    let report = json!({
        "E_V_per_cm": r.field.e_v_per_cm,
        "B_gauss": fields,
        "levels_per_point": rows.first().map_or(0, |(_, l)| l.len()),
    });
    Ok(vec![
        Artifact {
            suffix: "_levels.csv".into(),
            bytes: map,
        },
        Artifact {
            suffix: "_report.json".into(),
            bytes: to_json_bytes(&report),
        },
    ])
}

fn couplings_table(r: &Resolved) -> Result<Vec<Artifact>> {
    let per_layout = r
        .layouts
        .par_iter()
        .map(|p| Ok((p, r.couplings(&p.layout)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "beta_pi",
        "k",
        "X_um",
        "Y_um",
        "Z_um",
        "theta_rad",
        "re_kHz_2pi",
        "im_kHz_2pi",
        "abs_kHz_2pi",
    ])
    .map_err(csv_err)?;
    let mut report = Vec::new();
    for (p, c) in &per_layout {
        let beta = beta_pi(p).map_or(String::new(), |b| b.to_string());
        for k in 1..=p.layout.len() {
            let x = p.layout.position(k)?;
            let ck = c[k - 1];
            w.write_record([
                beta.clone(),
                k.to_string(),
                (x[0] * 1e6).to_string(),
                (x[1] * 1e6).to_string(),
                (x[2] * 1e6).to_string(),
                p.layout.theta(k)?.to_string(),
                units::to_khz_2pi(ck.re).to_string(),
                units::to_khz_2pi(ck.im).to_string(),
                units::to_khz_2pi(ck.norm()).to_string(),
            ])
            .map_err(csv_err)?;
        }
        let spread = geometry::coupling_spread(c)?;
        report.push(json!({
            "beta_pi": beta_pi(p),
            "spread_A_kHz_2pi": units::to_khz_2pi(spread.a),
            "predicted_tau_s": spread.tau,
        }));
    }
    let table = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(vec![
        Artifact {
            suffix: "_couplings.csv".into(),
            bytes: table,
        },
        Artifact {
            suffix: "_report.json".into(),
            bytes: to_json_bytes(&report),
        },
    ])
}

fn series_bytes(series: &scenarios::TimeSeries) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    series.write_csv(&mut out)?;
    Ok(out)
}

fn decoherence(config: &RunConfig, r: &Resolved, stem: &str) -> Result<(Vec<Artifact>, bool)> {
    let section = config.decoherence.clone().unwrap_or_default();
    let seeds = section.seeds.clone().unwrap_or_else(|| vec![r.seed]);
    if seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "decoherence: seeds is empty".into(),
        ));
    }
    let times = grid(
        section.t_stop_us,
        section.samples,
        scenarios::DECOHERENCE_SAMPLES,
    );
    let jobs: Vec<(usize, &LayoutPoint, u64)> = r
        .layouts
        .iter()
        .enumerate()
        .flat_map(|(i, p)| seeds.iter().map(move |&s| (i, p, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, p, seed)| {
            let couplings = r.couplings(&p.layout)?;
            let mut run = DecoherenceRun::new(p.layout.len(), p.beta.unwrap_or(0.0), seed);
            if let Some(u) = section.up_count {
                run.up_count = u;
            }
            run.times = times.clone();
            run.c_delta = r.c_delta;
            run.kind = r.kind;
            let result = scenarios::run_decoherence(&run, &couplings)?;
            Ok((i, p, seed, result))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut artifacts = Vec::new();
    let mut report = Vec::new();
    let mut any_coerced = false;
    for (i, p, seed, result) in &results {
        any_coerced |= result.report.couplings_coerced;
        let suffix = format!("_b{i}_s{seed}.csv");
        report.push(json!({
            "beta_pi": beta_pi(p),
            "seed": seed,
            "series": format!("{stem}{suffix}"),
            "report": result.report,
        }));
        artifacts.push(Artifact {
            suffix,
            bytes: series_bytes(&result.series)?,
        });
    }
    artifacts.push(Artifact {
        suffix: "_report.json".into(),
        bytes: to_json_bytes(&report),
    });
    Ok((artifacts, any_coerced))
}

fn transfer_run(r: &Resolved, t: &TransferSection, p: &LayoutPoint) -> TransferRun {
    let mut run = TransferRun::new(
        p.layout.len(),
        p.beta.unwrap_or(0.0),
        t.input_site,
        t.output_site,
    );
    run.times = grid(t.t_stop_us, t.samples, scenarios::TRANSFER_SAMPLES);
    run.c_delta = r.c_delta;
    run.kind = r.kind;
    run
}

fn transfer(config: &RunConfig, r: &Resolved, stem: &str) -> Result<(Vec<Artifact>, bool)> {
    let t = config
        .transfer
        .ok_or_else(|| Error::InvalidParameter("transfer needs a transfer section".into()))?;
    let results = r
        .layouts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let couplings = r.couplings(&p.layout)?;
            let run = transfer_run(r, &t, p);
            let (series, report) = if t.gate {
                let (mut all, report) = scenarios::run_and_gate(&run, &couplings)?;
                (all.pop().expect("four gate runs").series, report)
            } else {
                let result = scenarios::run_transfer(&run, &couplings)?;
                (result.series, result.report)
            };
            Ok((i, p, series, report, coerced(r.kind, &couplings)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut artifacts = Vec::new();
    let mut report = Vec::new();
    let mut any_coerced = false;
    for (i, p, series, rep, c) in &results {
        any_coerced |= *c;
        let suffix = format!("_b{i}.csv");
        report.push(
            json!({ "beta_pi": beta_pi(p), "series": format!("{stem}{suffix}"), "report": rep }),
        );
        artifacts.push(Artifact {
            suffix,
            bytes: series_bytes(series)?,
        });
    }
    artifacts.push(Artifact {
        suffix: "_report.json".into(),
        bytes: to_json_bytes(&report),
    });
    Ok((artifacts, any_coerced))
}

/// Largest deviations between evolving with complex couplings and evolving
/// the gauge-rotated state with their magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeCheck {
    pub n_bath: usize,
    pub dim: usize,
    pub max_amplitude_deviation: f64,
    pub max_sz_deviation: f64,
}

pub fn gauge_check_couplings(
    couplings: &[Complex64],
    c_delta: f64,
    seed: u64,
    times: &[f64],
) -> Result<GaugeCheck> {
    let n = couplings.len();
    let wp = WorkingPoint::k_caf();
    let complex = SpinSystemSpec {
        c0: wp.c_s + c_delta,
        c_s: wp.c_s,
        couplings: couplings.to_vec(),
        kind: InteractionKind::Xx,
    };
    let mut real = complex.clone();
    real.couplings = couplings
        .iter()
        .map(|c| Complex64::new(c.norm(), 0.0))
        .collect();
    let xis = spinmodel::gauge_angles(couplings);

    let psi0 = scenarios::random_half_filled_state(&DecoherenceRun::new(n, 0.0, seed))?;
    let basis = psi0.basis().clone();
    let lhs = Propagator::from_spec(&complex, basis.clone())?.evolve(&psi0, times)?;
    let start = spinmodel::phase_transform(&psi0, &xis, GaugeDirection::Forward)?;
    let rhs = Propagator::from_spec(&real, Arc::clone(&basis))?.evolve(&start, times)?;
    let observables = (0..=n)
        .map(|site| spinmodel::sz_diagonal(&basis, site))
        .collect::<Result<Vec<_>>>()?;

    let mut amp: f64 = 0.0;
    let mut sz: f64 = 0.0;
    for (l, r) in lhs.iter().zip(&rhs) {
        let back = spinmodel::phase_transform(r, &xis, GaugeDirection::Adjoint)?;
        for (a, b) in l.amplitudes().iter().zip(back.amplitudes()) {
            amp = amp.max((a - b).norm());
        }
        for o in &observables {
            let el: f64 = o
                .iter()
                .zip(l.amplitudes())
                .map(|(v, a)| v * a.norm_sqr())
                .sum();
            let er: f64 = o
                .iter()
                .zip(r.amplitudes())
                .map(|(v, a)| v * a.norm_sqr())
                .sum();
            sz = sz.max((el - er).abs());
        }
    }
    Ok(GaugeCheck {
        n_bath: n,
        dim: basis.dim(),
        max_amplitude_deviation: amp,
        max_sz_deviation: sz,
    })
}

fn gauge_check(config: &RunConfig, r: &Resolved) -> Result<Vec<Artifact>> {
    let g = config.gauge.unwrap_or_default();
    let times = scenarios::linspace(
        0.0,
        g.t_stop_us.unwrap_or(GAUGE_T_STOP_US) * 1e-6,
        g.samples.unwrap_or(GAUGE_SAMPLES),
    );
    let report = r
        .layouts
        .par_iter()
        .map(|p| {
            let c = r.couplings(&p.layout)?;
            let check = gauge_check_couplings(&c, r.c_delta, r.seed, &times)?;
            Ok(json!({ "beta_pi": beta_pi(p), "check": check }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![Artifact {
        suffix: "_report.json".into(),
        bytes: to_json_bytes(&report),
    }])
}
