//! JSON run configuration.

use std::f64::consts::FRAC_PI_4;

use orbitlab::intersect::Detector;
use orbitlab::{
    parse, IntersectionSettings, MetricModel, Section, ShootingSettings, Space, SystemSpec,
    Tolerances,
};
use serde::Deserialize;

use crate::failure::Failure;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: Option<SystemConfig>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    /// Seed for every randomized sampling step.
    #[serde(default)]
    pub seed: u64,
    pub integrate: Option<IntegrateConfig>,
    pub find_brake: Option<FindBrakeConfig>,
    pub find_rotation: Option<FindRotationConfig>,
    /// Orbits analysed by `monodromy` and `intersections`.
    pub orbits: Option<Vec<OrbitSource>>,
    pub jacobi_check: Option<JacobiCheckConfig>,
    pub perturb: Option<PerturbConfig>,
    pub oscillator: Option<OscillatorConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub dimension: usize,
    #[serde(default = "euclidean")]
    pub space: Space,
    pub metric: MetricConfig,
    pub potential: String,
    pub energy: f64,
}

fn euclidean() -> Space {
    Space::Euclidean
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MetricConfig {
    Euclidean,
    Riemannian { g: Vec<Vec<String>> },
    Finsler { f2: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    pub integrator: IntegratorTolerances,
    pub shooting: ShootingTolerances,
    pub intersection: IntersectionTolerances,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorTolerances {
    pub rel: f64,
    pub abs: f64,
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorTolerances {
    fn default() -> Self {
        let t = Tolerances::default();
        IntegratorTolerances {
            rel: t.rel,
            abs: t.abs,
            h_max: None,
            max_steps: t.max_steps,
        }
    }
}

impl IntegratorTolerances {
    pub fn build(&self) -> Tolerances {
        Tolerances {
            rel: self.rel,
            abs: self.abs,
            h_max: self.h_max.unwrap_or(f64::INFINITY),
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootingTolerances {
    pub rel: f64,
    pub abs: f64,
    pub t_max: f64,
    pub newton_tol: f64,
    pub max_iter: usize,
    pub max_seed_gap: f64,
    pub tol_eig: f64,
}

impl Default for ShootingTolerances {
    fn default() -> Self {
        let s = ShootingSettings::default();
        ShootingTolerances {
            rel: s.tol.rel,
            abs: s.tol.abs,
            t_max: s.t_max,
            newton_tol: s.newton_tol,
            max_iter: s.max_iter,
            max_seed_gap: s.max_seed_gap,
            tol_eig: s.tol_eig,
        }
    }
}

impl ShootingTolerances {
    pub fn build(&self) -> ShootingSettings {
        ShootingSettings {
            tol: Tolerances::new(self.rel, self.abs),
            t_max: self.t_max,
            newton_tol: self.newton_tol,
            max_iter: self.max_iter,
            max_seed_gap: self.max_seed_gap,
            tol_eig: self.tol_eig,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntersectionTolerances {
    pub tol_space: Option<f64>,
    pub tol_angle: f64,
    pub resolution: f64,
    pub detector: Detector,
}

impl Default for IntersectionTolerances {
    fn default() -> Self {
        let s = IntersectionSettings::default();
        IntersectionTolerances {
            tol_space: s.tol_space,
            tol_angle: s.tol_angle,
            resolution: s.resolution,
            detector: s.detector,
        }
    }
}

impl IntersectionTolerances {
    pub fn build(&self) -> IntersectionSettings {
        IntersectionSettings {
            tol_space: self.tol_space,
            tol_angle: self.tol_angle,
            resolution: self.resolution,
            detector: self.detector,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrateConfig {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub t_start: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindBrakeConfig {
    pub seeds: Vec<Vec<f64>>,
    #[serde(default = "yes")]
    pub monodromy: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindRotationConfig {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub section: Section,
    #[serde(default = "yes")]
    pub monodromy: bool,
}

fn yes() -> bool {
    true
}

/// How an analysed orbit is obtained.
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OrbitSource {
    /// Brake orbit searched from a seed near `{U = E}`.
    Brake { seed: Vec<f64> },
    /// Rotation searched from an initial state through a section.
    Rotation {
        x: Vec<f64>,
        v: Vec<f64>,
        section: Section,
    },
    /// Known initial state and period.
    Closed {
        x: Vec<f64>,
        v: Vec<f64>,
        period: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JacobiCheckConfig {
    pub samples: usize,
    pub t_end: f64,
    /// Sampling box for initial positions.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Smallest accepted `E − U` at a sampled position.
    pub margin: f64,
}

impl Default for JacobiCheckConfig {
    fn default() -> Self {
        JacobiCheckConfig {
            samples: 50,
            t_end: 1.0,
            lower: Vec::new(),
            upper: Vec::new(),
            margin: 0.05,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
    pub displacement: Vec<f64>,
    pub eta: f64,
    pub eps: f64,
    pub s: f64,
    /// Geodesic strand crossing the displaced one.
    pub other: GeodesicStrand,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "identity_samples")]
    pub identity_samples: usize,
}

fn identity_samples() -> usize {
    1000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicStrand {
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
    pub length: f64,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Curve parameter of the grid centre.
    pub t0: f64,
    pub half_width: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            t0: 0.0,
            half_width: 1.5,
            points: 61,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorConfig {
    pub alpha: Vec<f64>,
    pub energy: f64,
    pub resonant: Option<ResonantConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonantConfig {
    pub m: [u32; 2],
    #[serde(default = "one")]
    pub base: f64,
    /// Amplitudes; by default the energy is split evenly between the axes.
    pub amplitudes: Option<[f64; 2]>,
    /// Phase of the analysed member.
    #[serde(default = "figure_eight")]
    pub s: f64,
    /// Phases checked for the degenerate family.
    #[serde(default = "family")]
    pub family: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

fn figure_eight() -> f64 {
    FRAC_PI_4
}

fn family() -> Vec<f64> {
    (0..8).map(|k| k as f64 * FRAC_PI_4 / 2.0).collect()
}

impl RunConfig {
    pub fn load(text: &str) -> Result<Self, Failure> {
        serde_json::from_str(text).map_err(|e| Failure::Config(format!("invalid config: {e}")))
    }

    pub fn system(&self) -> Result<SystemSpec, Failure> {
        let sys = self
            .system
            .as_ref()
            .ok_or_else(|| Failure::Config("missing `system` block".into()))?;
        sys.build()
    }
}

/// Fetch a command block or report it missing.
pub fn require<'a, T>(block: &'a Option<T>, name: &str) -> Result<&'a T, Failure> {
    block
        .as_ref()
        .ok_or_else(|| Failure::Config(format!("missing `{name}` block")))
}

/// Check a vector length against the dimension.
pub fn check_len(name: &str, v: &[f64], n: usize) -> Result<(), Failure> {
    if v.len() != n {
        return Err(Failure::Config(format!(
            "`{name}` has {} components, expected {n}",
            v.len()
        )));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Failure::Config(format!(
            "`{name}` has non-finite components"
        )));
    }
    Ok(())
}

impl SystemConfig {
    pub fn build(&self) -> Result<SystemSpec, Failure> {
        let n = self.dimension;
        if n == 0 {
            return Err(Failure::Config("dimension must be positive".into()));
        }
        let expr = |src: &str| parse(src, n).map_err(Failure::from);
        let metric = match &self.metric {
            MetricConfig::Euclidean => MetricModel::euclidean(n, self.space.clone())?,
            MetricConfig::Riemannian { g } => {
                let rows = g
                    .iter()
                    .map(|row| row.iter().map(|c| expr(c)).collect())
                    .collect::<Result<Vec<Vec<_>>, _>>()?;
                MetricModel::riemannian(n, rows, self.space.clone())?
            }
            MetricConfig::Finsler { f2 } => MetricModel::finsler(n, expr(f2)?, self.space.clone())?,
        };
        Ok(SystemSpec::new(
            metric,
            expr(&self.potential)?,
            self.energy,
        )?)
    }
}
