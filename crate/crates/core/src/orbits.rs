//! Periodic orbits at fixed energy: brake-orbit and rotation shooting,
//! monodromy by variational equations, and the degenerate Lissajous family.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{
    integrate_field, kinetic_minimum_event, lagrange_rhs, propagate_fixed, total_energy, Direction,
    Event, LagrangeField, PhaseState, Solution, SystemSpec, Tolerances, Trajectory, VectorField,
};
use crate::error::{Error, Result};
use crate::expr::dual::{dot, seed_tangent, Dual};
use crate::expr::Real;
use crate::geometry::Space;
use crate::linalg::{norm, orthonormal_complement, Mat};
use crate::reference::OscillatorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitKind {
    Rotation,
    Brake,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestPoint {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Closed orbit over one period `[0, τ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    pub trajectory: Trajectory,
    pub period: f64,
    pub kind: OrbitKind,
    pub rest_points: Vec<RestPoint>,
    pub closure_residual: f64,
    pub minimal_period: bool,
    pub energy: f64,
}

impl PeriodicOrbit {
    pub fn initial(&self) -> PhaseState {
        self.trajectory.initial()
    }

    pub fn dimension(&self) -> usize {
        self.trajectory.dimension
    }

    pub fn space(&self) -> &Space {
        &self.trajectory.space
    }
}

/// Numerical settings shared by the orbit searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingSettings {
    pub tol: Tolerances,
    /// Search horizon for turning points and returns.
    pub t_max: f64,
    /// Residual norm accepted as converged.
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Largest accepted `|U(seed) − E| / (1 + |E|)` before projection.
    pub max_seed_gap: f64,
    /// Radius around 1 for counting trivial monodromy eigenvalues.
    pub tol_eig: f64,
}

impl Default for ShootingSettings {
    fn default() -> Self {
        ShootingSettings {
            tol: Tolerances::new(1e-12, 1e-14),
            t_max: 100.0,
            newton_tol: 1e-11,
            max_iter: 40,
            max_seed_gap: 0.1,
            tol_eig: 1e-6,
        }
    }
}

fn minimal_image_diff(space: &Space, a: &[f64], b: &[f64]) -> Vec<f64> {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    space.minimal_image(&d)
}

/// Distance between two packed states, positions compared by minimal image.
fn state_distance(space: &Space, n: usize, a: &[f64], b: &[f64]) -> f64 {
    let dx = minimal_image_diff(space, &a[..n], &b[..n]);
    let dv: Vec<f64> = a[n..].iter().zip(&b[n..]).map(|(x, y)| x - y).collect();
    (norm(&dx).powi(2) + norm(&dv).powi(2)).sqrt()
}

/// Project onto `{U = E}` by Newton steps along `∇U`.
fn project_to_level(spec: &SystemSpec, x: &[f64]) -> Result<Vec<f64>> {
    let e = spec.energy;
    let mut q = x.to_vec();
    for _ in 0..60 {
        let u = spec.potential.value(&q)?;
        let du = spec.potential.gradient(&q)?;
        let g2 = dot(&du, &du);
        if g2.sqrt() <= 1e-6 {
            return Err(Error::Precondition(format!(
                "energy level is not regular near {q:?} (|∇U| = {:e})",
                g2.sqrt()
            )));
        }
        if (u - e).abs() <= 1e-14 * (1.0 + e.abs()) {
            return Ok(q);
        }
        for (qi, gi) in q.iter_mut().zip(&du) {
            *qi -= (u - e) * gi / g2;
        }
    }
    let u = spec.potential.value(&q)?;
    if (u - e).abs() <= 1e-8 {
        Ok(q)
    } else {
        Err(Error::Precondition(format!(
            "projection onto U = E did not converge (gap {:e})",
            u - e
        )))
    }
}

fn rest_state(q: &[f64]) -> Vec<f64> {
    let mut y = q.to_vec();
    y.extend(std::iter::repeat_n(0.0, q.len()));
    y
}

/// First kinetic-energy minimum after leaving `q` at rest.
fn first_turn(spec: &SystemSpec, q: &[f64], s: &ShootingSettings) -> Result<f64> {
    let ev = kinetic_minimum_event(spec, true);
    let sol = integrate_field(
        &LagrangeField(spec),
        0.0,
        &rest_state(q),
        s.t_max,
        &s.tol,
        &[ev],
    )?;
    sol.events
        .first()
        .map(|e| e.t)
        .ok_or(Error::NoEvent(s.t_max))
}

fn flow(spec: &SystemSpec, y0: &[f64], t: f64, s: &ShootingSettings) -> Result<Solution> {
    integrate_field(&LagrangeField(spec), 0.0, y0, t, &s.tol, &[])
}

fn check_conditioning(j: &DMatrix<f64>) -> Result<()> {
    let sv = j.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(min > 1e-11 * max) {
        return Err(Error::SingularJacobian(format!(
            "singular values in [{min:e}, {max:e}]"
        )));
    }
    Ok(())
}

/// Brake orbit starting at rest near `seed` on `{U = E}`: Newton on the rest
/// point (tangent coordinates of the level set) and the half period `t*`
/// solving `ẋ(t*) = 0`; the period is `2t*` by reversibility.
pub fn find_brake(spec: &SystemSpec, seed: &[f64], s: &ShootingSettings) -> Result<PeriodicOrbit> {
    let n = spec.dimension();
    if seed.len() != n {
        return Err(Error::InvalidParameter(format!(
            "seed must have {n} coordinates"
        )));
    }
    let e = spec.energy;
    let gap = spec.potential.value(seed)? - e;
    if gap.abs() > s.max_seed_gap * (1.0 + e.abs()) {
        return Err(Error::Precondition(format!(
            "seed is not near the level U = E (U − E = {gap:e})"
        )));
    }
    let mut q = project_to_level(spec, seed)?;
    let mut tstar = first_turn(spec, &q, s)?;
    let field = LagrangeField(spec);
    let residual = |q: &[f64], t: f64| -> Result<(Solution, f64)> {
        let sol = flow(spec, &rest_state(q), t, s)?;
        let r = norm(&sol.y_end()[n..]);
        Ok((sol, r))
    };
    let (mut sol, mut rn) = residual(&q, tstar)?;
    let mut iter = 0;
    while rn > s.newton_tol {
        iter += 1;
        if iter > s.max_iter {
            return Err(Error::NewtonDivergence(format!(
                "no convergence after {} iterations (residual {rn:e})",
                s.max_iter
            )));
        }
        let du = spec.potential.gradient(&q)?;
        let basis = orthonormal_complement(&du);
        let steps = sol.steps();
        let mut jac = Mat::zeros(n);
        for (c, b) in basis.iter().enumerate() {
            let mut tangent = b.clone();
            tangent.extend(std::iter::repeat_n(0.0, n));
            let y0 = seed_tangent(&rest_state(&q), &tangent);
            let y: Vec<Dual<f64>> = propagate_fixed(&field, 0.0, &y0, &steps)?;
            for i in 0..n {
                jac[(i, c)] = y[n + i].eps;
            }
        }
        let yend = sol.y_end();
        let acc = lagrange_rhs(spec, &yend[..n], &yend[n..])?;
        for i in 0..n {
            jac[(i, n - 1)] = acc[i];
        }
        check_conditioning(&jac.to_nalgebra())?;
        let rhs: Vec<f64> = yend[n..].iter().map(|c| -c).collect();
        let delta = jac.solve(&rhs)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let mut trial = q.clone();
            for (c, b) in basis.iter().enumerate() {
                for i in 0..n {
                    trial[i] += lambda * delta[c] * b[i];
                }
            }
            let tt = tstar + lambda * delta[n - 1];
            if tt > 0.0 {
                if let Ok(tq) = project_to_level(spec, &trial) {
                    if let Ok((ts, tr)) = residual(&tq, tt) {
                        if tr < rn {
                            q = tq;
                            tstar = tt;
                            sol = ts;
                            rn = tr;
                            accepted = true;
                            break;
                        }
                    }
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDivergence(format!(
                "line search failed at residual {rn:e}"
            )));
        }
    }
    build_brake(spec, &q, tstar, s)
}

fn build_brake(
    spec: &SystemSpec,
    q: &[f64],
    tstar: f64,
    s: &ShootingSettings,
) -> Result<PeriodicOrbit> {
    let n = spec.dimension();
    let period = 2.0 * tstar;
    let ev = kinetic_minimum_event(spec, false);
    let sol = integrate_field(
        &LagrangeField(spec),
        0.0,
        &rest_state(q),
        period,
        &s.tol,
        &[ev],
    )?;
    let traj = Trajectory::from_solution(spec, sol)?;
    let y0 = &traj.states[0];
    let closure = state_distance(&traj.space, n, traj.states.last().unwrap(), y0);
    if closure >= 1e-8 * (1.0 + norm(y0)) {
        return Err(Error::Invariant(format!(
            "brake orbit closure residual {closure:e}"
        )));
    }
    for k in 0..=50 {
        let t = tstar * k as f64 / 50.0;
        let a = traj.position_at(tstar + t);
        let b = traj.position_at(tstar - t);
        let d = norm(&minimal_image_diff(&traj.space, &a, &b));
        if d >= 1e-7 {
            return Err(Error::Invariant(format!(
                "brake orbit is not symmetric about τ/2 (deviation {d:e} at t = {t})"
            )));
        }
    }
    let x_half = traj.position_at(tstar);
    // Interior rest points besides τ/2 mean this is an iterate.
    let interior_rests = traj
        .events
        .iter()
        .filter(|e| e.t > 1e-6 * period && e.t < period * (1.0 - 1e-6))
        .filter(|e| {
            spec.metric
                .kinetic_energy(&e.y[..n], &e.y[n..])
                .unwrap_or(1.0)
                < 1e-10
        })
        .count();
    let space = &traj.space.clone();
    Ok(PeriodicOrbit {
        period,
        kind: OrbitKind::Brake,
        rest_points: vec![
            RestPoint {
                t: 0.0,
                x: space.wrap(q),
            },
            RestPoint {
                t: tstar,
                x: space.wrap(&x_half),
            },
        ],
        closure_residual: closure,
        minimal_period: interior_rests <= 1,
        energy: spec.energy,
        trajectory: traj,
    })
}

/// Hyperplane `{x : ν·(x − p) = 0}` used as a return section. On a torus the
/// normal must be a coordinate axis.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Section {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
}

impl Section {
    fn validate(&self, space: &Space, n: usize) -> Result<Vec<f64>> {
        if self.point.len() != n || self.normal.len() != n {
            return Err(Error::InvalidParameter(format!(
                "section needs {n} components"
            )));
        }
        let nn = norm(&self.normal);
        if !(nn > 0.0) {
            return Err(Error::InvalidParameter("section normal is zero".into()));
        }
        if space.is_torus() && self.normal.iter().filter(|c| **c != 0.0).count() != 1 {
            return Err(Error::Unsupported(
                "torus sections must be normal to a coordinate axis".into(),
            ));
        }
        Ok(self.normal.iter().map(|c| c / nn).collect())
    }

    /// Signed section function, periodic on a torus.
    fn value(&self, space: &Space, unit: &[f64], x: &[f64]) -> f64 {
        match space {
            Space::Euclidean => dot(unit, &crate::linalg::sub(x, &self.point)),
            Space::Torus { periods } => {
                let k = unit.iter().position(|c| *c != 0.0).unwrap();
                let d = (x[k] - self.point[k]) * unit[k].signum();
                (std::f64::consts::PI * d / periods[k]).sin()
            }
        }
    }
}

/// Time of the first return to the section moving in the same direction.
fn first_return(
    spec: &SystemSpec,
    section: &Section,
    unit: &[f64],
    y0: &[f64],
    s: &ShootingSettings,
) -> Result<f64> {
    let n = spec.dimension();
    let space = spec.space();
    let sign0 = dot(unit, &y0[n..]).signum();
    let mut t = 0.0;
    let mut y = y0.to_vec();
    loop {
        let ev = Event::new("section", Direction::Either, true, |_, z: &[f64]| {
            Ok(section.value(space, unit, &z[..n]))
        });
        let sol = integrate_field(&LagrangeField(spec), t, &y, s.t_max, &s.tol, &[ev])?;
        let Some(hit) = sol.events.first() else {
            return Err(Error::NoEvent(s.t_max));
        };
        if dot(unit, &hit.y[n..]).signum() == sign0 && hit.t > 1e-9 {
            return Ok(hit.t);
        }
        t = hit.t;
        y = hit.y.clone();
    }
}

/// Initial state on the section from tangent coordinates `p` and direction
/// increments `w`; the speed is fixed by the energy.
fn rotation_initial<T: Real>(
    spec: &SystemSpec,
    x_base: &[f64],
    plane: &[Vec<f64>],
    dir: &[f64],
    dir_basis: &[Vec<f64>],
    p: &[T],
    w: &[T],
) -> Result<Vec<T>> {
    let n = x_base.len();
    let mut x: Vec<T> = x_base.iter().map(|&c| T::cst(c)).collect();
    for (k, b) in plane.iter().enumerate() {
        for i in 0..n {
            x[i] += p[k].scale(b[i]);
        }
    }
    let mut u: Vec<T> = dir.iter().map(|&c| T::cst(c)).collect();
    for (k, b) in dir_basis.iter().enumerate() {
        for i in 0..n {
            u[i] += w[k].scale(b[i]);
        }
    }
    let ke = T::cst(spec.energy) - spec.potential.value(&x)?;
    if ke.value() <= 0.0 {
        return Err(Error::Precondition(
            "section point lies outside the potential well".into(),
        ));
    }
    let f2 = spec.metric.f2(&x, &u)?;
    let scale = (ke.scale(2.0) / f2).sqrt();
    let mut y = x;
    y.extend(u.into_iter().map(|c| c * scale));
    Ok(y)
}

/// Closed orbit with nowhere vanishing velocity through the section near
/// `seed`. Gauss–Newton on section coordinates, velocity direction and return
/// time solves the closure `z(T) = z(0)`.
pub fn find_rotation(
    spec: &SystemSpec,
    seed: &PhaseState,
    section: &Section,
    s: &ShootingSettings,
) -> Result<PeriodicOrbit> {
    let n = spec.dimension();
    let space = spec.space().clone();
    let unit = section.validate(&space, n)?;
    if seed.x.len() != n || seed.v.len() != n {
        return Err(Error::InvalidParameter(format!(
            "seed must have dimension {n}"
        )));
    }
    let h = total_energy(spec, &seed.x, &seed.v)?;
    if (h - spec.energy).abs() > 1e-8 * (1.0 + spec.energy.abs()) {
        return Err(Error::Precondition(format!(
            "seed energy {h} differs from E = {}",
            spec.energy
        )));
    }
    let speed = norm(&seed.v);
    if speed == 0.0 || dot(&unit, &seed.v).abs() < 1e-3 * speed {
        return Err(Error::Transversality(
            "seed velocity is tangent to the section".into(),
        ));
    }
    // Move the seed onto the section along the normal.
    let mut x0 = seed.x.clone();
    match &space {
        Space::Euclidean => {
            let d = dot(&unit, &crate::linalg::sub(&x0, &section.point));
            for i in 0..n {
                x0[i] -= d * unit[i];
            }
        }
        Space::Torus { .. } => {
            let k = unit.iter().position(|c| *c != 0.0).unwrap();
            x0[k] = section.point[k];
        }
    }
    let plane = orthonormal_complement(&unit);
    let mut dir: Vec<f64> = seed.v.iter().map(|c| c / speed).collect();
    let field = LagrangeField(spec);
    let zeros = vec![0.0; n - 1];
    let mut y0 = rotation_initial::<f64>(spec, &x0, &plane, &dir, &[], &zeros, &[])?;
    let mut period = first_return(spec, section, &unit, &y0, s)?;

    let closure = |y0: &[f64], yt: &[f64]| -> Vec<f64> {
        let mut r = minimal_image_diff(&space, &yt[..n], &y0[..n]);
        r.extend(yt[n..].iter().zip(&y0[n..]).map(|(a, b)| a - b));
        r
    };
    let eval = |y0: &[f64], t: f64| -> Result<(Solution, Vec<f64>)> {
        let sol = flow(spec, y0, t, s)?;
        let r = closure(y0, sol.y_end());
        Ok((sol, r))
    };
    let scale = 1.0 + norm(&y0);
    let (mut sol, mut r) = eval(&y0, period)?;
    let mut iter = 0;
    while norm(&r) > s.newton_tol * scale {
        iter += 1;
        if iter > s.max_iter {
            return Err(Error::NewtonDivergence(format!(
                "no convergence after {} iterations (residual {:e})",
                s.max_iter,
                norm(&r)
            )));
        }
        let x_base = y0[..n].to_vec();
        dir = {
            let nv = norm(&y0[n..]);
            y0[n..].iter().map(|c| c / nv).collect()
        };
        let dir_basis = orthonormal_complement(&dir);
        let m = 2 * n - 1;
        let steps = sol.steps();
        let mut jac = DMatrix::<f64>::zeros(2 * n, m);
        for c in 0..2 * (n - 1) {
            let mut p = vec![Dual::constant(0.0); n - 1];
            let mut w = vec![Dual::constant(0.0); n - 1];
            if c < n - 1 {
                p[c] = Dual::variable(0.0);
            } else {
                w[c - (n - 1)] = Dual::variable(0.0);
            }
            let yd = rotation_initial(spec, &x_base, &plane, &dir, &dir_basis, &p, &w)?;
            let yt = propagate_fixed(&field, 0.0, &yd, &steps)?;
            for i in 0..2 * n {
                jac[(i, c)] = yt[i].eps - yd[i].eps;
            }
        }
        let fend = field.eval(period, sol.y_end())?;
        for i in 0..2 * n {
            jac[(i, m - 1)] = fend[i];
        }
        let svd = jac.clone().svd(true, true);
        let rhs = DVector::from_iterator(2 * n, r.iter().map(|c| -c));
        let tol_sv = 1e-10 * svd.singular_values.max();
        let delta = svd
            .solve(&rhs, tol_sv)
            .map_err(|e| Error::SingularJacobian(e.to_string()))?;
        let rn = norm(&r);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let p: Vec<f64> = (0..n - 1).map(|k| lambda * delta[k]).collect();
            let w: Vec<f64> = (0..n - 1).map(|k| lambda * delta[n - 1 + k]).collect();
            let tt = period + lambda * delta[m - 1];
            if tt > 0.0 {
                if let Ok(ty) = rotation_initial(spec, &x_base, &plane, &dir, &dir_basis, &p, &w) {
                    if let Ok((ts, tr)) = eval(&ty, tt) {
                        if norm(&tr) < rn {
                            y0 = ty;
                            period = tt;
                            sol = ts;
                            r = tr;
                            accepted = true;
                            break;
                        }
                    }
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDivergence(format!(
                "line search failed at residual {rn:e}"
            )));
        }
    }
    // Minimal-period probe.
    let probe = Trajectory::from_solution(spec, flow(spec, &y0, period, s)?)?;
    let mut divisor = 1;
    for m in (2..=6).rev() {
        let z = probe.state_at(period / m as f64);
        if state_distance(&space, n, &z, &y0) < 1e-6 * scale {
            divisor = m;
            break;
        }
    }
    let period = period / divisor as f64;
    let traj = Trajectory::from_solution(spec, flow(spec, &y0, period, s)?)?;
    let closure_residual = state_distance(&space, n, traj.states.last().unwrap(), &y0);
    if closure_residual >= 1e-8 * scale {
        return Err(Error::Invariant(format!(
            "rotation closure residual {closure_residual:e}"
        )));
    }
    let min_ke = traj
        .states
        .iter()
        .map(|y| spec.metric.kinetic_energy(&y[..n], &y[n..]))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if min_ke <= 1e-10 {
        return Err(Error::Invariant(format!(
            "rotation has a near rest point (kinetic energy {min_ke:e})"
        )));
    }
    let minimal = (2..=6)
        .all(|m| state_distance(&space, n, &traj.state_at(period / m as f64), &y0) >= 1e-6 * scale);
    Ok(PeriodicOrbit {
        trajectory: traj,
        period,
        kind: OrbitKind::Rotation,
        rest_points: Vec::new(),
        closure_residual,
        minimal_period: minimal,
        energy: spec.energy,
    })
}

/// Periodic orbit from known initial data and period (for instance a closed
/// form). Classified as a brake orbit when it starts at rest.
pub fn orbit_from_initial_state(
    spec: &SystemSpec,
    initial: &PhaseState,
    period: f64,
    s: &ShootingSettings,
) -> Result<PeriodicOrbit> {
    let n = spec.dimension();
    let y0 = initial.packed();
    if norm(&initial.v) == 0.0 {
        let q = initial.x.clone();
        let u = spec.potential.value(&q)?;
        if (u - spec.energy).abs() > 1e-8 * (1.0 + spec.energy.abs()) {
            return Err(Error::Precondition(format!(
                "rest point has U − E = {:e}",
                u - spec.energy
            )));
        }
        return build_brake(spec, &q, 0.5 * period, s);
    }
    let traj = Trajectory::from_solution(spec, flow(spec, &y0, period, s)?)?;
    let scale = 1.0 + norm(&y0);
    let closure_residual = state_distance(&traj.space, n, traj.states.last().unwrap(), &y0);
    if closure_residual >= 1e-8 * scale {
        return Err(Error::Invariant(format!(
            "orbit does not close after {period} (residual {closure_residual:e})"
        )));
    }
    let minimal = (2..=6).all(|m| {
        state_distance(&traj.space, n, &traj.state_at(period / m as f64), &y0) >= 1e-6 * scale
    });
    Ok(PeriodicOrbit {
        trajectory: traj,
        period,
        kind: OrbitKind::Rotation,
        rest_points: Vec::new(),
        closure_residual,
        minimal_period: minimal,
        energy: total_energy(spec, &initial.x, &initial.v)?,
    })
}

/// Spectrum of the monodromy matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonodromyReport {
    /// Row-major `2n×2n` matrix in `(x, ẋ)` coordinates.
    pub matrix: Vec<Vec<f64>>,
    /// Eigenvalues of the full matrix as `[re, im]`.
    pub eigenvalues: Vec<[f64; 2]>,
    /// Eigenvalues of the transverse (linearized return) map on the energy
    /// level, obtained by splitting off the flow direction and energy.
    pub transverse_eigenvalues: Vec<[f64; 2]>,
    pub trivial_multiplicity: usize,
    pub nondegenerate: bool,
    pub determinant: f64,
    pub tol_eig: f64,
}

/// `(z, Φ)` with `Φ' = Df(z) Φ`, `Φ` stored column-major.
struct Variational<'a>(LagrangeField<'a>);

impl VectorField for Variational<'_> {
    fn dim(&self) -> usize {
        let m = self.0.dim();
        m + m * m
    }

    fn eval<T: Real>(&self, t: T, y: &[T]) -> Result<Vec<T>> {
        let m = self.0.dim();
        let z = &y[..m];
        let mut out = self.0.eval(t, z)?;
        for c in 0..m {
            let col = &y[m + c * m..m + (c + 1) * m];
            let zd = seed_tangent(z, col);
            let fz = self.0.eval(Dual::constant(t), &zd)?;
            out.extend(fz.into_iter().map(|d| d.eps));
        }
        Ok(out)
    }
}

/// Fundamental matrix of the variational equations along the orbit from
/// `initial` over `[0, t]`.
pub fn fundamental_matrix(
    spec: &SystemSpec,
    initial: &[f64],
    t: f64,
    tol: &Tolerances,
) -> Result<DMatrix<f64>> {
    let m = 2 * spec.dimension();
    let mut y0 = initial.to_vec();
    for c in 0..m {
        for r in 0..m {
            y0.push(if r == c { 1.0 } else { 0.0 });
        }
    }
    let sol = integrate_field(&Variational(LagrangeField(spec)), 0.0, &y0, t, tol, &[])?;
    Ok(DMatrix::from_column_slice(m, m, &sol.y_end()[m..]))
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<[f64; 2]> {
    let mut ev: Vec<[f64; 2]> = m
        .complex_eigenvalues()
        .iter()
        .map(|c| [c.re, c.im])
        .collect();
    ev.sort_by(|a, b| {
        a[1].atan2(a[0])
            .total_cmp(&b[1].atan2(b[0]))
            .then((a[0].hypot(a[1])).total_cmp(&b[0].hypot(b[1])))
    });
    ev
}

/// Transverse block `Wᵀ M W`, with `W` an orthonormal basis of the part of
/// `ker dH` orthogonal to the flow direction.
fn transverse_block(spec: &SystemSpec, z0: &[f64], m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = spec.dimension();
    let f = LagrangeField(spec).eval(0.0, z0)?;
    // dH by forward differentiation of the energy.
    let dh: Vec<f64> = (0..2 * n)
        .map(|k| {
            let zd = crate::expr::dual::seed(z0, Some(k));
            let ke = spec.metric.kinetic_energy(&zd[..n], &zd[n..])?;
            let u = spec.potential.value(&zd[..n])?;
            Ok((ke + u).eps)
        })
        .collect::<Result<_>>()?;
    if norm(&f) == 0.0 || norm(&dh) == 0.0 {
        return Err(Error::Precondition("orbit through an equilibrium".into()));
    }
    // Orthonormal basis of span(dH, f)^⊥ via complements.
    let dh_unit: Vec<f64> = dh.iter().map(|c| c / norm(&dh)).collect();
    let ker = orthonormal_complement(&dh_unit);
    // Coordinates of f in ker, then the complement of f inside ker.
    let fk: Vec<f64> = ker.iter().map(|b| dot(b, &f)).collect();
    let inner = orthonormal_complement(&fk);
    let w: Vec<Vec<f64>> = inner
        .iter()
        .map(|c| {
            let mut v = vec![0.0; 2 * n];
            for (ci, b) in c.iter().zip(&ker) {
                for i in 0..2 * n {
                    v[i] += ci * b[i];
                }
            }
            v
        })
        .collect();
    let wm = DMatrix::from_fn(2 * n, w.len(), |i, j| w[j][i]);
    Ok(wm.transpose() * m * wm)
}

fn report(spec: &SystemSpec, z0: &[f64], m: DMatrix<f64>, tol_eig: f64) -> Result<MonodromyReport> {
    let p = transverse_block(spec, z0, &m)?;
    let transverse = sorted_eigenvalues(&p);
    let trivial = 2 + transverse
        .iter()
        .filter(|e| (e[0] - 1.0).hypot(e[1]) < tol_eig)
        .count();
    Ok(MonodromyReport {
        matrix: (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect(),
        eigenvalues: sorted_eigenvalues(&m),
        transverse_eigenvalues: transverse,
        trivial_multiplicity: trivial,
        nondegenerate: trivial == 2,
        determinant: m.determinant(),
        tol_eig,
    })
}

/// Monodromy over one period. Df comes from dual-number differentiation of the
/// Euler–Lagrange right-hand side.
pub fn monodromy(
    spec: &SystemSpec,
    orbit: &PeriodicOrbit,
    s: &ShootingSettings,
) -> Result<MonodromyReport> {
    monodromy_iterate(spec, orbit, 1, s)
}

/// Monodromy of the `m`-fold iterate, integrated over `m τ`.
pub fn monodromy_iterate(
    spec: &SystemSpec,
    orbit: &PeriodicOrbit,
    m: usize,
    s: &ShootingSettings,
) -> Result<MonodromyReport> {
    let scale = 1.0 + norm(&orbit.trajectory.states[0]);
    if orbit.closure_residual >= 1e-8 * scale {
        return Err(Error::Precondition(format!(
            "orbit is not closed (residual {:e})",
            orbit.closure_residual
        )));
    }
    let z0 = orbit.trajectory.states[0].clone();
    let mat = fundamental_matrix(spec, &z0, m as f64 * orbit.period, &s.tol)?;
    report(spec, &z0, mat, s.tol_eig)
}

/// Check of one Lissajous family member.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyMember {
    pub s: f64,
    /// Largest `|ẍ − a(x, ẋ)|` over one period, `ẍ` from the closed form.
    pub lagrange_residual: f64,
    pub energy: f64,
    pub period: f64,
    pub closes: bool,
    pub minimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    pub members: Vec<FamilyMember>,
    /// Largest pairwise energy difference.
    pub energy_spread: f64,
    /// Energy from the closed formula, for comparison.
    pub closed_form_energy: f64,
}

/// Verify that the Lissajous family consists of solutions of one energy and
/// one minimal period.
pub fn verify_degenerate_family(
    spec: &SystemSpec,
    osc: &OscillatorSpec,
    amplitudes: [f64; 2],
    s_values: &[f64],
) -> Result<FamilyReport> {
    let period = osc.lissajous_period()?;
    let mut members = Vec::new();
    for &s in s_values {
        let mut residual: f64 = 0.0;
        for k in 0..=400 {
            let t = period * k as f64 / 400.0;
            let p = osc.lissajous(amplitudes, s, t)?;
            let acc = osc.lissajous_acceleration(amplitudes, s, t)?;
            let a = lagrange_rhs(spec, &p.x, &p.v)?;
            residual = residual.max(norm(&crate::linalg::sub(&acc, &a)));
        }
        let p0 = osc.lissajous(amplitudes, s, 0.0)?;
        let close_dist = |t: f64| -> Result<f64> {
            let p = osc.lissajous(amplitudes, s, t)?;
            Ok(norm(&crate::linalg::sub(&p.packed(), &p0.packed())))
        };
        members.push(FamilyMember {
            s,
            lagrange_residual: residual,
            energy: total_energy(spec, &p0.x, &p0.v)?,
            period,
            closes: close_dist(period)? < 1e-12,
            minimal: (2..=6)
                .map(|m| close_dist(period / m as f64))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .all(|d| d > 1e-6),
        });
    }
    let (lo, hi) = members
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), m| {
            (l.min(m.energy), h.max(m.energy))
        });
    Ok(FamilyReport {
        members,
        energy_spread: if hi >= lo { hi - lo } else { 0.0 },
        closed_form_energy: osc.lissajous_energy(amplitudes),
    })
}

/// JSON-friendly summary of an orbit and optionally its monodromy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitReport {
    pub kind: OrbitKind,
    pub period: f64,
    pub energy: f64,
    pub closure_residual: f64,
    pub minimal_period: bool,
    pub rest_points: Vec<RestPoint>,
    pub initial_state: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nondegenerate: Option<bool>,
}

impl OrbitReport {
    pub fn new(orbit: &PeriodicOrbit, monodromy: Option<&MonodromyReport>) -> Self {
        OrbitReport {
            kind: orbit.kind,
            period: orbit.period,
            energy: orbit.energy,
            closure_residual: orbit.closure_residual,
            minimal_period: orbit.minimal_period,
            rest_points: orbit.rest_points.clone(),
            initial_state: orbit.trajectory.states[0].clone(),
            eigenvalues: monodromy.map(|m| m.eigenvalues.clone()),
            nondegenerate: monodromy.map(|m| m.nondegenerate),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::geometry::MetricModel;
    use std::f64::consts::{PI, SQRT_2};

    fn osc2() -> (OscillatorSpec, SystemSpec) {
        let o = OscillatorSpec::new(vec![1.0, SQRT_2], 0.5).unwrap();
        let s = o.system().unwrap();
        (o, s)
    }

    #[test]
    fn brake_orbit_along_first_axis() {
        let (_, spec) = osc2();
        let orbit = find_brake(&spec, &[1.0, 0.05], &ShootingSettings::default()).unwrap();
        assert_eq!(orbit.kind, OrbitKind::Brake);
        assert!((orbit.period - 2.0 * PI).abs() < 1e-8, "{}", orbit.period);
        let amp = orbit.rest_points[0].x[0].abs();
        assert!((amp - 1.0).abs() < 1e-8);
        assert!(orbit.rest_points[0].x[1].abs() < 1e-8);
        assert!(orbit.minimal_period);
    }

    #[test]
    fn brake_orbit_along_second_axis() {
        let (_, spec) = osc2();
        let seed = [0.03, 1.0 / SQRT_2];
        let orbit = find_brake(&spec, &seed, &ShootingSettings::default()).unwrap();
        assert!((orbit.period - 2.0 * PI / SQRT_2).abs() < 1e-8);
    }

    #[test]
    fn far_seed_is_rejected() {
        let (_, spec) = osc2();
        assert!(matches!(
            find_brake(&spec, &[3.0, 0.0], &ShootingSettings::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn non_resonant_monodromy() {
        let (_, spec) = osc2();
        let s = ShootingSettings::default();
        let orbit = find_brake(&spec, &[1.0, 0.0], &s).unwrap();
        let rep = monodromy(&spec, &orbit, &s).unwrap();
        assert!(rep.nondegenerate);
        assert_eq!(rep.trivial_multiplicity, 2);
        assert!((rep.determinant - 1.0).abs() < 1e-6);
        let angle = 2.0 * PI * SQRT_2;
        let mut found = 0;
        for e in &rep.eigenvalues {
            if (e[0] - angle.cos()).abs() < 1e-6 && (e[1].abs() - angle.sin().abs()).abs() < 1e-6 {
                found += 1;
            }
        }
        assert_eq!(found, 2, "{:?}", rep.eigenvalues);
    }

    #[test]
    fn iterates_match_matrix_powers() {
        let (_, spec) = osc2();
        let s = ShootingSettings::default();
        let orbit = find_brake(&spec, &[1.0, 0.0], &s).unwrap();
        let z0 = orbit.trajectory.states[0].clone();
        let m1 = fundamental_matrix(&spec, &z0, orbit.period, &s.tol).unwrap();
        for k in [2usize, 3] {
            let mk = fundamental_matrix(&spec, &z0, k as f64 * orbit.period, &s.tol).unwrap();
            let pow = m1.pow(k as u32);
            assert!((mk - pow).amax() < 1e-5);
        }
    }

    #[test]
    fn resonant_lissajous_is_degenerate() {
        let o = OscillatorSpec::resonant([1, 2], 1.0, &[], 1.0).unwrap();
        let a = [1.0, 0.5];
        let spec = o.system().unwrap().with_energy(o.lissajous_energy(a));
        let s = ShootingSettings::default();
        let start = o.lissajous(a, 0.0, 0.0).unwrap();
        let orbit =
            orbit_from_initial_state(&spec, &start, o.lissajous_period().unwrap(), &s).unwrap();
        assert_eq!(orbit.kind, OrbitKind::Brake);
        let rep = monodromy(&spec, &orbit, &s).unwrap();
        assert!(rep.trivial_multiplicity >= 4);
        assert!(!rep.nondegenerate);
    }

    #[test]
    fn family_members_share_energy_and_period() {
        let o = OscillatorSpec::resonant([1, 2], 1.0, &[], 1.0).unwrap();
        let spec = o.system().unwrap();
        let rep = verify_degenerate_family(&spec, &o, [1.0, 0.5], &[0.0, 0.3, 0.7]).unwrap();
        for m in &rep.members {
            assert!(m.lagrange_residual < 1e-10);
            assert!(m.closes && m.minimal);
        }
        assert!(rep.energy_spread < 1e-12);
        assert!((rep.closed_form_energy - rep.members[0].energy).abs() < 1e-12);
        let s0 = o.lissajous([1.0, 0.5], 0.0, 0.4).unwrap();
        assert!((s0.x[0] - 0.4f64.cos()).abs() < 1e-15);
    }

    fn torus_spec(potential: &str, energy: f64) -> SystemSpec {
        let m = MetricModel::euclidean(
            2,
            Space::Torus {
                periods: vec![2.0 * PI, 2.0 * PI],
            },
        )
        .unwrap();
        SystemSpec::new(m, parse(potential, 2).unwrap(), energy).unwrap()
    }

    #[test]
    fn flat_torus_rotation() {
        let spec = torus_spec("0", 0.5);
        let s = ShootingSettings::default();
        let seed = PhaseState::new(vec![0.3, 0.0], vec![1.0, 0.0]);
        let section = Section {
            point: vec![0.0, 0.0],
            normal: vec![1.0, 0.0],
        };
        let orbit = find_rotation(&spec, &seed, &section, &s).unwrap();
        assert!((orbit.period - 2.0 * PI).abs() < 1e-10);
        assert!(orbit.minimal_period);
        let rep = monodromy(&spec, &orbit, &s).unwrap();
        assert!(rep
            .eigenvalues
            .iter()
            .all(|e| (e[0] - 1.0).hypot(e[1]) < 1e-6));
        assert!(!rep.nondegenerate);
    }

    #[test]
    fn perturbed_torus_rotation_closes() {
        let spec = torus_spec("0.1*cos(x1)", 1.0);
        let s = ShootingSettings::default();
        // Off the invariant line x1 = 0, so Newton has work to do.
        let x = [0.2, 0.0];
        let u = 0.1 * 0.2f64.cos();
        let sp = (2.0 * (1.0 - u)).sqrt();
        let dir = [0.05f64, 1.0];
        let nd = dir[0].hypot(dir[1]);
        let seed = PhaseState::new(x.to_vec(), vec![sp * dir[0] / nd, sp * dir[1] / nd]);
        let section = Section {
            point: vec![0.0, 0.0],
            normal: vec![0.0, 1.0],
        };
        let orbit = find_rotation(&spec, &seed, &section, &s).unwrap();
        let scale = 1.0 + norm(&orbit.trajectory.states[0]);
        assert!(orbit.closure_residual < 1e-8 * scale);
        let rep = monodromy(&spec, &orbit, &s).unwrap();
        assert!((rep.determinant - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tangent_seed_is_rejected() {
        let spec = torus_spec("0", 0.5);
        let seed = PhaseState::new(vec![0.0, 0.0], vec![0.0, 1.0]);
        let section = Section {
            point: vec![0.0, 0.0],
            normal: vec![1.0, 0.0],
        };
        assert!(matches!(
            find_rotation(&spec, &seed, &section, &ShootingSettings::default()),
            Err(Error::Transversality(_))
        ));
    }
}
