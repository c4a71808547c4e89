//! Command implementations. Each reads its block from the run configuration
//! and writes its artifacts into the output directory.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use orbitlab::dynamics::{fmt17, integrate as integrate_flow, ScalarField};
use orbitlab::intersect::{mutual_intersections, self_intersections};
use orbitlab::orbits::{
    find_brake, find_rotation, monodromy as monodromy_of, orbit_from_initial_state,
    verify_degenerate_family, FamilyReport, OrbitReport,
};
use orbitlab::perturb::{identity_residual, perturbed_potential, verify_removal, RemovalReport};
use orbitlab::{
    ConformalPerturbation, DisplacedCurve, IntersectionReport, JacobiMetric, MonodromyReport,
    OscillatorSpec, PeriodicOrbit, PhaseState, ShootingSettings, Space, SystemSpec, TubeFrame,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{check_len, require, OrbitSource, RunConfig};
use crate::failure::Failure;

type Outcome = Result<(), Failure>;

/// Output directory writer.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
        })
    }

    pub fn text(&self, name: &str, body: &str) -> Outcome {
        let path = self.dir.join(name);
        fs::write(&path, body)
            .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Outcome {
        let mut body = serde_json::to_string_pretty(value)
            .map_err(|e| Failure::Io(format!("cannot serialize {name}: {e}")))?;
        body.push('\n');
        self.text(name, &body)
    }
}

/// Rest-point seeds need `∇U ≠ 0` so that `{U = E}` is a regular level.
fn check_regular_seed(spec: &SystemSpec, seed: &[f64]) -> Outcome {
    check_len("seed", seed, spec.dimension())?;
    let grad = spec.potential.gradient(seed)?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm <= 1e-6 {
        return Err(Failure::Config(format!(
            "seed {seed:?} is not a regular point of U (|∇U| = {norm:e})"
        )));
    }
    Ok(())
}

fn resolve_orbit(
    spec: &SystemSpec,
    source: &OrbitSource,
    s: &ShootingSettings,
) -> Result<PeriodicOrbit, Failure> {
    let n = spec.dimension();
    let orbit = match source {
        OrbitSource::Brake { seed } => {
            check_regular_seed(spec, seed)?;
            find_brake(spec, seed, s)?
        }
        OrbitSource::Rotation { x, v, section } => {
            check_len("x", x, n)?;
            check_len("v", v, n)?;
            find_rotation(spec, &PhaseState::new(x.clone(), v.clone()), section, s)?
        }
        OrbitSource::Closed { x, v, period } => {
            check_len("x", x, n)?;
            check_len("v", v, n)?;
            orbit_from_initial_state(spec, &PhaseState::new(x.clone(), v.clone()), *period, s)?
        }
    };
    Ok(orbit)
}

fn orbit_list(cfg: &RunConfig, spec: &SystemSpec) -> Result<Vec<PeriodicOrbit>, Failure> {
    let sources = require(&cfg.orbits, "orbits")?;
    if sources.is_empty() {
        return Err(Failure::Config("`orbits` is empty".into()));
    }
    let s = cfg.tolerances.shooting.build();
    sources
        .iter()
        .map(|src| resolve_orbit(spec, src, &s))
        .collect()
}

#[derive(Serialize)]
struct IntegrateSummary {
    t_start: f64,
    t_end: f64,
    samples: usize,
    initial_energy: f64,
    energy_drift: f64,
}

pub fn integrate(cfg: &RunConfig, out: &Output) -> Outcome {
    let spec = cfg.system()?;
    let c = require(&cfg.integrate, "integrate")?;
    let n = spec.dimension();
    check_len("x", &c.x, n)?;
    check_len("v", &c.v, n)?;
    if !(c.t_end.is_finite() && c.t_end != c.t_start) {
        return Err(Failure::Config(
            "`t_end` must be finite and differ from `t_start`".into(),
        ));
    }
    let initial = PhaseState::new(c.x.clone(), c.v.clone());
    let tol = cfg.tolerances.integrator.build();
    let traj = integrate_flow(&spec, &initial, (c.t_start, c.t_end), &tol, &[])?;
    out.text("trajectory.csv", &traj.to_csv())?;
    out.json(
        "integrate.json",
        &IntegrateSummary {
            t_start: c.t_start,
            t_end: traj.t_end(),
            samples: traj.len(),
            initial_energy: traj.energy[0],
            energy_drift: traj.energy_drift,
        },
    )
}

fn write_orbit(
    out: &Output,
    stem: &str,
    spec: &SystemSpec,
    orbit: &PeriodicOrbit,
    with_monodromy: bool,
    s: &ShootingSettings,
) -> Outcome {
    let mono = if with_monodromy {
        Some(monodromy_of(spec, orbit, s)?)
    } else {
        None
    };
    out.json(
        &format!("{stem}.json"),
        &OrbitReport::new(orbit, mono.as_ref()),
    )?;
    out.text(&format!("{stem}.csv"), &orbit.trajectory.to_csv())
}

pub fn find_brake_cmd(cfg: &RunConfig, out: &Output) -> Outcome {
    let spec = cfg.system()?;
    let c = require(&cfg.find_brake, "find_brake")?;
    if c.seeds.is_empty() {
        return Err(Failure::Config("`find_brake.seeds` is empty".into()));
    }
    let s = cfg.tolerances.shooting.build();
    for seed in &c.seeds {
        check_regular_seed(&spec, seed)?;
    }
    for (k, seed) in c.seeds.iter().enumerate() {
        let orbit = find_brake(&spec, seed, &s)?;
        write_orbit(out, &format!("brake_{k}"), &spec, &orbit, c.monodromy, &s)?;
    }
    Ok(())
}

pub fn find_rotation_cmd(cfg: &RunConfig, out: &Output) -> Outcome {
    let spec = cfg.system()?;
    let c = require(&cfg.find_rotation, "find_rotation")?;
    let n = spec.dimension();
    check_len("x", &c.x, n)?;
    check_len("v", &c.v, n)?;
    let s = cfg.tolerances.shooting.build();
    let seed = PhaseState::new(c.x.clone(), c.v.clone());
    let orbit = find_rotation(&spec, &seed, &c.section, &s)?;
    write_orbit(out, "rotation", &spec, &orbit, c.monodromy, &s)
}

#[derive(Serialize)]
struct MonodromyEntry {
    orbit: OrbitReport,
    monodromy: MonodromyReport,
}

pub fn monodromy(cfg: &RunConfig, out: &Output) -> Outcome {
    let spec = cfg.system()?;
    let s = cfg.tolerances.shooting.build();
    let entries = orbit_list(cfg, &spec)?
        .iter()
        .map(|orbit| {
            let m = monodromy_of(&spec, orbit, &s)?;
            Ok(MonodromyEntry {
                orbit: OrbitReport::new(orbit, Some(&m)),
                monodromy: m,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    out.json("monodromy.json", &entries)
}

#[derive(Serialize)]
struct SelfEntry {
    orbit: usize,
    report: IntersectionReport,
}

#[derive(Serialize)]
struct MutualEntry {
    a: usize,
    b: usize,
    report: IntersectionReport,
}

#[derive(Serialize)]
struct IntersectionsOutput {
    #[serde(rename = "self")]
    self_: Vec<SelfEntry>,
    mutual: Vec<MutualEntry>,
}

pub fn intersections(cfg: &RunConfig, out: &Output) -> Outcome {
    let spec = cfg.system()?;
    let settings = cfg.tolerances.intersection.build();
    let orbits = orbit_list(cfg, &spec)?;
    let mut result = IntersectionsOutput {
        self_: Vec::new(),
        mutual: Vec::new(),
    };
    for (k, orbit) in orbits.iter().enumerate() {
        result.self_.push(SelfEntry {
            orbit: k,
            report: self_intersections(orbit, &settings)?,
        });
        for (j, other) in orbits.iter().enumerate().skip(k + 1) {
            result.mutual.push(MutualEntry {
                a: k,
                b: j,
                report: mutual_intersections(orbit, other, &settings)?,
            });
        }
    }
    out.json("intersections.json", &result)
}

#[derive(Serialize)]
struct JacobiSummary {
    samples: usize,
    t_end: f64,
    seed: u64,
    max_deviation: f64,
}

pub fn jacobi_check(cfg: &RunConfig, out: &Output) -> Outcome {
    let spec = cfg.system()?;
    let c = require(&cfg.jacobi_check, "jacobi_check")?;
    let n = spec.dimension();
    let (lower, upper) = match (spec.space(), c.lower.is_empty() && c.upper.is_empty()) {
        (Space::Torus { periods }, true) => (vec![0.0; n], periods.clone()),
        _ => {
            check_len("lower", &c.lower, n)?;
            check_len("upper", &c.upper, n)?;
            (c.lower.clone(), c.upper.clone())
        }
    };
    if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
        return Err(Failure::Config("sampling box needs lower < upper".into()));
    }
    if !(c.t_end > 0.0) || c.samples == 0 {
        return Err(Failure::Config(
            "`t_end` and `samples` must be positive".into(),
        ));
    }
    let jm = JacobiMetric::new(&spec)?;
    let tol = cfg.tolerances.integrator.build();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = header("index", n) + ",deviation\n";
    let mut worst: f64 = 0.0;
    let mut attempts = 0usize;
    let mut accepted = 0usize;
    while accepted < c.samples {
        attempts += 1;
        if attempts > 1000 * c.samples {
            return Err(Failure::Config(format!(
                "sampling box holds too few points with E − U ≥ {}",
                c.margin
            )));
        }
        let x: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(&a, &b)| rng.gen_range(a..b))
            .collect();
        let kinetic = spec.energy - spec.potential.value(&x)?;
        if kinetic < c.margin {
            continue;
        }
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = spec.metric.norm(&x, &dir)?;
        if f < 1e-3 {
            continue;
        }
        let scale = (2.0 * kinetic).sqrt() / f;
        let v: Vec<f64> = dir.iter().map(|d| d * scale).collect();
        let dev = jm.proposition_check(&PhaseState::new(x.clone(), v.clone()), c.t_end, &tol)?;
        worst = worst.max(dev);
        rows += &accepted.to_string();
        for value in x.iter().chain(&v).chain([&dev]) {
            rows.push(',');
            rows += &fmt17(*value);
        }
        rows.push('\n');
        accepted += 1;
    }
    out.text("jacobi_check.csv", &rows)?;
    out.json(
        "jacobi_check.json",
        &JacobiSummary {
            samples: accepted,
            t_end: c.t_end,
            seed: cfg.seed,
            max_deviation: worst,
        },
    )
}

fn header(first: &str, n: usize) -> String {
    let mut h = first.to_string();
    for prefix in ["x", "v"] {
        for i in 1..=n {
            h += &format!(",{prefix}{i}");
        }
    }
    h
}

/// Largest accepted distance between the perturbed orbit and the displaced curve.
const SHOOTING_TOL: f64 = 1e-6;

#[derive(Serialize)]
struct PerturbedPotentialInfo {
    form: &'static str,
    base_potential: String,
    energy: f64,
}

#[derive(Serialize)]
struct PerturbOutput {
    displacement: f64,
    rho: f64,
    support: Vec<(f64, f64)>,
    geodesic_residual: f64,
    phi_on_curve: f64,
    phi_outside_support: f64,
    identity_residual: f64,
    identity_samples: usize,
    identity_samples_in_support: usize,
    perturbed_potential: PerturbedPotentialInfo,
    removal: RemovalReport,
    removed: bool,
}

pub fn perturb(cfg: &RunConfig, out: &Output) -> Outcome {
    let spec = cfg.system()?;
    let c = require(&cfg.perturb, "perturb")?;
    let n = spec.dimension();
    if !spec.metric.is_riemannian() {
        return Err(Failure::Config(
            "perturb needs a Euclidean or Riemannian metric".into(),
        ));
    }
    for (name, v) in [
        ("point", &c.point),
        ("direction", &c.direction),
        ("displacement", &c.displacement),
        ("other.point", &c.other.point),
        ("other.direction", &c.other.direction),
    ] {
        check_len(name, v, n)?;
    }
    let tol = cfg.tolerances.shooting.build().tol;
    let jm = JacobiMetric::new(&spec)?;
    let tube = TubeFrame::new(
        &jm,
        &c.point,
        &c.direction,
        &c.displacement,
        c.eta,
        c.eps,
        &tol,
    )?;
    let half = tube.half_length();
    let curve = DisplacedCurve::new(Arc::new(tube), c.s)?;
    let phi = Arc::new(ConformalPerturbation::solve(curve)?);

    let mut residual: f64 = 0.0;
    let mut on_curve: f64 = 0.0;
    for k in 0..=1000 {
        let t = -half + 2.0 * half * k as f64 / 1000.0;
        residual = residual.max(phi.geodesic_residual(t)?);
        on_curve = on_curve.max(phi.value(&phi.curve().point(t)?)?.abs());
    }

    // Identity samples: half near the transition pieces, half near the
    // whole curve.
    let perturbed = perturbed_potential(&spec, phi.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(c.identity_samples);
    let mut outside: f64 = 0.0;
    let mut inside = 0;
    let intervals = phi.curve().transition_intervals();
    for k in 0..c.identity_samples {
        let (t, spread) = if k % 2 == 0 {
            let (a, b) = intervals[k % 4 / 2];
            (rng.gen_range(a..b), 0.5 * phi.rho)
        } else {
            (rng.gen_range(-half..half), c.eps)
        };
        let centre = phi.curve().point(t)?;
        let x: Vec<f64> = centre
            .iter()
            .map(|ci| ci + rng.gen_range(-spread..spread))
            .collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if phi.declared_support_contains(&x)? {
            inside += 1;
        } else {
            let du = perturbed.potential.value(&x)? - spec.potential.value(&x)?;
            outside = outside.max(phi.value(&x)?.abs()).max(du.abs());
        }
        samples.push((x, v));
    }
    let identity = identity_residual(&spec, &perturbed, &phi, &samples)?;

    let other = jm.integrate_geodesic(
        &c.other.point,
        &c.other.direction,
        c.other.length,
        &tol,
        true,
    )?;
    let settings = cfg.tolerances.intersection.build();
    let removal = verify_removal(phi.clone(), &other, &settings, &tol)?;
    let grid = phi.grid(c.grid.t0, c.grid.half_width, c.grid.points)?;
    out.json("phi_grid.json", &grid)?;
    let potential_source = cfg
        .system
        .as_ref()
        .map(|s| s.potential.clone())
        .unwrap_or_default();
    out.json(
        "perturb.json",
        &PerturbOutput {
            displacement: c.s,
            rho: phi.rho,
            support: phi.support.clone(),
            geodesic_residual: residual,
            phi_on_curve: on_curve,
            phi_outside_support: outside,
            identity_residual: identity,
            identity_samples: samples.len(),
            identity_samples_in_support: inside,
            perturbed_potential: PerturbedPotentialInfo {
                form: "(1 - exp(phi)) * E + exp(phi) * U",
                base_potential: potential_source,
                energy: spec.energy,
            },
            removed: removal.intersections.pairs.is_empty()
                && removal.gap >= removal.required_gap
                && removal.shooting_max_deviation <= SHOOTING_TOL,
            removal,
        },
    )?;
    out.text(
        "displaced_curve.csv",
        &phi.curve().to_trajectory(2000)?.to_csv(),
    )
}

#[derive(Serialize)]
struct AxisEntry {
    axis: usize,
    period: f64,
    expected_period: f64,
    amplitude: f64,
    expected_amplitude: f64,
    eigenvalues: Vec<[f64; 2]>,
    expected_eigenvalues: Vec<[f64; 2]>,
    spectrum_error: f64,
    nondegenerate: bool,
    determinant: f64,
    dp_count: usize,
}

#[derive(Serialize)]
struct CrossingEntry {
    a: usize,
    b: usize,
    points: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ResonantEntry {
    m: [u32; 2],
    alpha: [f64; 2],
    amplitudes: [f64; 2],
    s: f64,
    energy: f64,
    period: f64,
    dp_count: usize,
    trivial_multiplicity: usize,
    nondegenerate: bool,
    eigenvalues: Vec<[f64; 2]>,
    family: FamilyReport,
}

#[derive(Serialize)]
struct OscillatorOutput {
    alpha: Vec<f64>,
    energy: f64,
    brake_orbits: Vec<AxisEntry>,
    crossings: Vec<CrossingEntry>,
    all_nondegenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    resonant: Option<ResonantEntry>,
}

/// Largest distance between the expected spectrum and the closest unused
/// computed eigenvalue.
fn spectrum_error(expected: &[[f64; 2]], computed: &[[f64; 2]]) -> f64 {
    let mut used = vec![false; computed.len()];
    let mut worst: f64 = 0.0;
    for e in expected {
        let best = computed
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, c)| (k, (c[0] - e[0]).hypot(c[1] - e[1])))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((k, d)) => {
                used[k] = true;
                worst = worst.max(d);
            }
            None => return f64::INFINITY,
        }
    }
    worst
}

pub fn oscillator_report(cfg: &RunConfig, out: &Output) -> Outcome {
    let c = require(&cfg.oscillator, "oscillator")?;
    let osc = OscillatorSpec::new(c.alpha.clone(), c.energy)?;
    let spec = osc.system()?;
    let s = cfg.tolerances.shooting.build();
    let settings = cfg.tolerances.intersection.build();
    let n = osc.dimension();
    let mut orbits = Vec::with_capacity(n);
    let mut axes = Vec::with_capacity(n);
    for j in 0..n {
        let mut seed = vec![0.0; n];
        seed[j] = osc.amplitude(j);
        let orbit = find_brake(&spec, &seed, &s)?;
        let mono = monodromy_of(&spec, &orbit, &s)?;
        let mut expected = vec![[1.0, 0.0], [1.0, 0.0]];
        for i in (0..n).filter(|&i| i != j) {
            let angle = TAU * c.alpha[i] / c.alpha[j];
            expected.push([angle.cos(), angle.sin()]);
            expected.push([angle.cos(), -angle.sin()]);
        }
        let amplitude = orbit.rest_points[0]
            .x
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        axes.push(AxisEntry {
            axis: j,
            period: orbit.period,
            expected_period: osc.period(j),
            amplitude,
            expected_amplitude: osc.amplitude(j),
            spectrum_error: spectrum_error(&expected, &mono.eigenvalues),
            eigenvalues: mono.eigenvalues.clone(),
            expected_eigenvalues: expected,
            nondegenerate: mono.nondegenerate,
            determinant: mono.determinant,
            dp_count: self_intersections(&orbit, &settings)?.dp_count,
        });
        orbits.push(orbit);
    }
    let mut crossings = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let rep = mutual_intersections(&orbits[a], &orbits[b], &settings)?;
            crossings.push(CrossingEntry {
                a,
                b,
                points: rep.pairs.iter().map(|p| p.point.clone()).collect(),
            });
        }
    }
    let resonant = match &c.resonant {
        Some(r) => Some(resonant_entry(r, c.energy, &s, &settings)?),
        None => None,
    };
    let report = OscillatorOutput {
        alpha: c.alpha.clone(),
        energy: c.energy,
        all_nondegenerate: axes.iter().all(|a| a.nondegenerate),
        brake_orbits: axes,
        crossings,
        resonant,
    };
    out.json("oscillator_report.json", &report)
}

fn resonant_entry(
    r: &crate::config::ResonantConfig,
    energy: f64,
    s: &ShootingSettings,
    settings: &orbitlab::IntersectionSettings,
) -> Result<ResonantEntry, Failure> {
    let osc = OscillatorSpec::resonant(r.m, r.base, &[], energy)?;
    let alpha = [r.m[0] as f64 * r.base, r.m[1] as f64 * r.base];
    let amplitudes = r
        .amplitudes
        .unwrap_or([energy.sqrt() / alpha[0], energy.sqrt() / alpha[1]]);
    let spec = osc.system()?.with_energy(osc.lissajous_energy(amplitudes));
    let period = osc.lissajous_period()?;
    let orbit = orbit_from_initial_state(&spec, &osc.lissajous(amplitudes, r.s, 0.0)?, period, s)?;
    let mono = monodromy_of(&spec, &orbit, s)?;
    Ok(ResonantEntry {
        m: r.m,
        alpha,
        amplitudes,
        s: r.s,
        energy: spec.energy,
        period,
        dp_count: self_intersections(&orbit, settings)?.dp_count,
        trivial_multiplicity: mono.trivial_multiplicity,
        nondegenerate: mono.nondegenerate,
        eigenvalues: mono.eigenvalues,
        family: verify_degenerate_family(&spec, &osc, amplitudes, &r.family)?,
    })
}
