//! Lagrangian and Hamiltonian equations of motion for `L = ½F² − U`, total
//! energy, and trajectories produced by the adaptive integrator.

pub mod ode;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::dual::{dot, lift, seed};
use crate::expr::{ExprNode, Real};
use crate::geometry::{MetricModel, Space};

pub use ode::{
    integrate as integrate_field, locate, propagate_fixed, DenseSegment, Direction, Event,
    EventHit, Solution, Tolerances, VectorField,
};

/// A potential that is not a parsed expression (for instance a perturbed
/// potential assembled from several pieces). Only plain floats are supported.
pub trait ScalarField: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub enum Potential {
    Expr(ExprNode),
    Composite(Arc<dyn ScalarField>),
}

impl From<ExprNode> for Potential {
    fn from(e: ExprNode) -> Self {
        Potential::Expr(e)
    }
}

fn to_f64<T: Real>(x: &[T]) -> Result<Vec<f64>> {
    if T::ORDER > 0 {
        return Err(Error::Unsupported(
            "composite potentials cannot be differentiated with dual numbers".into(),
        ));
    }
    Ok(x.iter().map(|c| c.value()).collect())
}

impl Potential {
    pub fn as_expr(&self) -> Option<&ExprNode> {
        match self {
            Potential::Expr(e) => Some(e),
            Potential::Composite(_) => None,
        }
    }

    pub fn value<T: Real>(&self, x: &[T]) -> Result<T> {
        match self {
            Potential::Expr(e) => e.eval(x, &[] as &[T]),
            Potential::Composite(f) => Ok(T::cst(f.value(&to_f64(x)?)?)),
        }
    }

    /// `∇U(x)` by forward-mode differentiation.
    pub fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        match self {
            Potential::Expr(e) => {
                if e.is_constant() {
                    return Ok(vec![T::zero(); x.len()]);
                }
                (0..x.len())
                    .map(|l| Ok(e.eval(&seed(x, Some(l)), &[])?.eps))
                    .collect()
            }
            Potential::Composite(f) => {
                Ok(f.gradient(&to_f64(x)?)?.into_iter().map(T::cst).collect())
            }
        }
    }
}

/// Full problem definition: kinetic metric, potential and energy level.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub metric: MetricModel,
    pub potential: Potential,
    pub energy: f64,
}

impl SystemSpec {
    pub fn new(metric: MetricModel, potential: impl Into<Potential>, energy: f64) -> Result<Self> {
        let potential = potential.into();
        if !energy.is_finite() {
            return Err(Error::Model(format!("energy must be finite, got {energy}")));
        }
        if let Potential::Expr(e) = &potential {
            let (nx, nv) = e.extent();
            if nv > 0 {
                return Err(Error::Model(
                    "potential must not depend on velocities".into(),
                ));
            }
            if nx > metric.dimension() {
                return Err(Error::Model(format!(
                    "potential uses x{nx} but the dimension is {}",
                    metric.dimension()
                )));
            }
        }
        Ok(SystemSpec {
            metric,
            potential,
            energy,
        })
    }

    pub fn dimension(&self) -> usize {
        self.metric.dimension()
    }

    pub fn space(&self) -> &Space {
        self.metric.space()
    }

    pub fn with_energy(&self, energy: f64) -> Self {
        SystemSpec {
            energy,
            ..self.clone()
        }
    }

    pub fn with_potential(&self, potential: Potential) -> Self {
        SystemSpec {
            potential,
            ..self.clone()
        }
    }
}

/// Phase-space point `(x, ẋ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseState {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Self {
        PhaseState { x, v }
    }

    pub fn from_packed(y: &[f64]) -> Self {
        let n = y.len() / 2;
        PhaseState {
            x: y[..n].to_vec(),
            v: y[n..].to_vec(),
        }
    }

    pub fn packed(&self) -> Vec<f64> {
        let mut y = self.x.clone();
        y.extend_from_slice(&self.v);
        y
    }

    /// `(x, −v)`.
    pub fn reversed(&self) -> Self {
        PhaseState {
            x: self.x.clone(),
            v: self.v.iter().map(|c| -c).collect(),
        }
    }
}

/// Acceleration `ẍ = −2G(x, ẋ) − g⁻¹(x, ẋ)∇U(x)`.
///
/// For a Finsler metric at an exact rest point (`ẋ = 0`), `G` is continued by
/// zero and the tensor is evaluated in the direction `w = −∇U`.
pub fn lagrange_rhs<T: Real>(spec: &SystemSpec, x: &[T], v: &[T]) -> Result<Vec<T>> {
    let m = &spec.metric;
    let du = spec.potential.gradient(x)?;
    let at_rest = v.iter().all(|c| c.value() == 0.0);
    if m.is_riemannian() {
        let g = m.tensor(x, v)?;
        if m.is_translation_invariant() || at_rest {
            return Ok(g.solve(&du)?.into_iter().map(|c| -c).collect());
        }
        let dg = m.tensor_dx(x, v)?;
        return combine(&g, &dg, v, &du);
    }
    if at_rest {
        if v.iter().any(|c| *c != T::zero()) {
            return Err(Error::Unsupported(
                "velocity sensitivities at a rest point of a finsler metric".into(),
            ));
        }
        if du.iter().all(|c| c.value() == 0.0) {
            return Ok(vec![T::zero(); x.len()]);
        }
        let w: Vec<T> = du.iter().map(|&c| -c).collect();
        let g = m.tensor(x, &w)?;
        return Ok(g.solve(&du)?.into_iter().map(|c| -c).collect());
    }
    let g = m.tensor(x, v)?;
    let dg = m.tensor_dx(x, v)?;
    combine(&g, &dg, v, &du)
}

/// `−g⁻¹(½w + ∇U)` with `w_l = 2 vʲ(∂_j g v)_l − vᵀ∂_l g v`, so that `−2G`
/// and the potential force share one linear solve.
fn combine<T: Real>(
    g: &crate::linalg::Mat<T>,
    dg: &[crate::linalg::Mat<T>],
    v: &[T],
    du: &[T],
) -> Result<Vec<T>> {
    let n = v.len();
    let mut rhs = du.to_vec();
    for (j, dgj) in dg.iter().enumerate() {
        let t = dgj.mul_vec(v);
        for l in 0..n {
            rhs[l] += v[j] * t[l];
        }
    }
    for l in 0..n {
        rhs[l] -= dg[l].bilinear(v, v).scale(0.5);
    }
    Ok(g.solve(&rhs)?.into_iter().map(|c| -c).collect())
}

/// Hamilton's equations in `(x, y)`: `ẋ = ℒ⁻¹(y)`, `ẏ = ½∂F²/∂x(x, ẋ) − ∇U`.
pub fn hamilton_rhs<T: Real>(spec: &SystemSpec, x: &[T], y: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let m = &spec.metric;
    let v = if m.is_riemannian() {
        m.tensor(x, y)?.solve(y)?
    } else {
        m.legendre_inverse(x, y)?
    };
    let du = spec.potential.gradient(x)?;
    let mut ydot: Vec<T> = du.iter().map(|&c| -c).collect();
    if !m.is_translation_invariant() && v.iter().any(|c| c.value() != 0.0) {
        let vl = lift(&v);
        for (l, yd) in ydot.iter_mut().enumerate() {
            let d = m.f2(&seed(x, Some(l)), &vl)?.eps;
            *yd += d.scale(0.5);
        }
    }
    Ok((v, ydot))
}

/// Total energy `½F²(x, ẋ) + U(x)`.
pub fn total_energy(spec: &SystemSpec, x: &[f64], v: &[f64]) -> Result<f64> {
    Ok(spec.metric.kinetic_energy(x, v)? + spec.potential.value(x)?)
}

/// First-order Euler–Lagrange system on the packed state `(x, ẋ)`.
#[derive(Debug, Clone, Copy)]
pub struct LagrangeField<'a>(pub &'a SystemSpec);

impl VectorField for LagrangeField<'_> {
    fn dim(&self) -> usize {
        2 * self.0.dimension()
    }

    fn eval<T: Real>(&self, _t: T, y: &[T]) -> Result<Vec<T>> {
        let n = self.0.dimension();
        let (x, v) = y.split_at(n);
        let a = lagrange_rhs(self.0, x, v)?;
        let mut out = v.to_vec();
        out.extend(a);
        Ok(out)
    }
}

/// First-order Hamiltonian system on the packed state `(x, y)`.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonField<'a>(pub &'a SystemSpec);

impl VectorField for HamiltonField<'_> {
    fn dim(&self) -> usize {
        2 * self.0.dimension()
    }

    fn eval<T: Real>(&self, _t: T, z: &[T]) -> Result<Vec<T>> {
        let n = self.0.dimension();
        let (x, y) = z.split_at(n);
        let (mut xd, yd) = hamilton_rhs(self.0, x, y)?;
        xd.extend(yd);
        Ok(xd)
    }
}

/// Event firing at each local minimum of kinetic energy, detected as a
/// `+ → −` sign change of `dU/dt = ∇U·ẋ`.
pub fn kinetic_minimum_event<'a>(spec: &'a SystemSpec, terminal: bool) -> Event<'a> {
    let n = spec.dimension();
    Event::new(
        "kinetic_minimum",
        Direction::Falling,
        terminal,
        move |_, y| {
            let du = spec.potential.gradient(&y[..n])?;
            Ok(dot(&du, &y[n..]))
        },
    )
}

/// Time-sampled phase-space curve with dense interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dimension: usize,
    /// Sample times (strictly monotone).
    pub t: Vec<f64>,
    /// Packed `(x, ẋ)` states at the sample times, in the universal cover.
    pub states: Vec<Vec<f64>>,
    pub segments: Vec<DenseSegment>,
    /// `H` at each sample (empty when not computed).
    pub energy: Vec<f64>,
    /// `max |H(t) − H(t₀)|` over the samples.
    pub energy_drift: f64,
    pub events: Vec<EventHit>,
    pub space: Space,
}

impl Trajectory {
    /// Wrap an integrator solution of the Lagrangian field.
    pub fn from_solution(spec: &SystemSpec, sol: Solution) -> Result<Self> {
        let n = spec.dimension();
        let energy = sol
            .y
            .iter()
            .map(|y| total_energy(spec, &y[..n], &y[n..]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(n, sol, energy, spec.space().clone()))
    }

    /// Wrap a solution without computing energies.
    pub fn from_raw(dimension: usize, sol: Solution, space: Space) -> Self {
        Self::assemble(dimension, sol, Vec::new(), space)
    }

    fn assemble(dimension: usize, sol: Solution, energy: Vec<f64>, space: Space) -> Self {
        let energy_drift = energy
            .first()
            .map(|&e0| energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max))
            .unwrap_or(0.0);
        Trajectory {
            dimension,
            t: sol.t,
            states: sol.y,
            segments: sol.segments,
            energy,
            energy_drift,
            events: sol.events,
            space,
        }
    }

    /// Build from precomputed samples and segments.
    pub fn from_segments(
        dimension: usize,
        t: Vec<f64>,
        states: Vec<Vec<f64>>,
        segments: Vec<DenseSegment>,
        space: Space,
    ) -> Self {
        Trajectory {
            dimension,
            t,
            states,
            segments,
            energy: Vec::new(),
            energy_drift: 0.0,
            events: Vec::new(),
            space,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.t[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    /// Packed state at `t` in the universal cover (clamped to the span).
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        match locate(&self.segments, t) {
            Some(seg) => seg.eval(t),
            None => self.states[0].clone(),
        }
    }

    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let mut s = self.state_at(t);
        s.truncate(self.dimension);
        s
    }

    pub fn velocity_at(&self, t: f64) -> Vec<f64> {
        self.state_at(t).split_off(self.dimension)
    }

    pub fn initial(&self) -> PhaseState {
        PhaseState::from_packed(&self.states[0])
    }

    pub fn last(&self) -> PhaseState {
        PhaseState::from_packed(self.states.last().unwrap())
    }

    /// CSV with header `t,x1..xn,v1..vn,H`, positions wrapped on a torus.
    pub fn to_csv(&self) -> String {
        let n = self.dimension;
        let mut out = String::from("t");
        for i in 1..=n {
            out += &format!(",x{i}");
        }
        for i in 1..=n {
            out += &format!(",v{i}");
        }
        out += ",H\n";
        for (k, (t, y)) in self.t.iter().zip(&self.states).enumerate() {
            let x = self.space.wrap(&y[..n]);
            out += &fmt17(*t);
            for c in x.iter().chain(&y[n..]) {
                out.push(',');
                out += &fmt17(*c);
            }
            out.push(',');
            out += &self
                .energy
                .get(k)
                .map_or_else(|| "nan".to_string(), |e| fmt17(*e));
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Integrate the Euler–Lagrange equations from `initial` over `t_span`.
pub fn integrate(
    spec: &SystemSpec,
    initial: &PhaseState,
    t_span: (f64, f64),
    tol: &Tolerances,
    events: &[Event<'_>],
) -> Result<Trajectory> {
    let n = spec.dimension();
    if initial.x.len() != n || initial.v.len() != n {
        return Err(Error::InvalidParameter(format!(
            "initial state must have {n} positions and {n} velocities"
        )));
    }
    let sol = integrate_field(
        &LagrangeField(spec),
        t_span.0,
        &initial.packed(),
        t_span.1,
        tol,
        events,
    )?;
    Trajectory::from_solution(spec, sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Dual};

    fn oscillator(a2: f64) -> SystemSpec {
        let m = MetricModel::euclidean(2, Space::Euclidean).unwrap();
        let u = parse(&format!("0.5*x1^2 + 0.5*{}*x2^2", a2 * a2), 2).unwrap();
        SystemSpec::new(m, u, 0.5).unwrap()
    }

    fn quartic_finsler() -> SystemSpec {
        let m = MetricModel::finsler(
            2,
            parse("(1+0.2*sin(x1)^2)*v1^2 + v2^2 + 0.1*(v1^4+v2^4)^0.5", 2).unwrap(),
            Space::Euclidean,
        )
        .unwrap();
        SystemSpec::new(m, parse("0.5*x1^2 + x2^2", 2).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn oscillator_acceleration() {
        let a = lagrange_rhs(&oscillator(2.0), &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(a, vec![-1.0, 0.0]);
    }

    #[test]
    fn pendulum_on_torus() {
        let m = MetricModel::euclidean(
            1,
            Space::Torus {
                periods: vec![2.0 * std::f64::consts::PI],
            },
        )
        .unwrap();
        let spec = SystemSpec::new(m, parse("-cos(x1)", 1).unwrap(), 0.0).unwrap();
        let a = lagrange_rhs(&spec, &[std::f64::consts::FRAC_PI_2], &[0.0]).unwrap();
        assert!((a[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_potential_gives_geodesic_equation() {
        let m = MetricModel::finsler(
            2,
            parse("exp(x1)*(v1^2+v2^2) + 0.1*(v1^4+v2^4)^0.5", 2).unwrap(),
            Space::Euclidean,
        )
        .unwrap();
        let spec = SystemSpec::new(m.clone(), parse("0", 2).unwrap(), 1.0).unwrap();
        let (x, v) = ([0.3, 0.1], [0.7, -0.4]);
        let a = lagrange_rhs(&spec, &x, &v).unwrap();
        let g = m.geodesic_coefficients(&x, &v).unwrap();
        for k in 0..2 {
            assert!((a[k] + 2.0 * g[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn hamilton_oscillator() {
        let (xd, yd) = hamilton_rhs(&oscillator(2.0), &[0.3, -0.2], &[1.0, 2.0]).unwrap();
        assert_eq!(xd, vec![1.0, 2.0]);
        assert!((yd[0] + 0.3).abs() < 1e-15 && (yd[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn energy_values() {
        let spec = oscillator(2.0);
        assert_eq!(total_energy(&spec, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(total_energy(&spec, &[0.0, 0.5], &[0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn oscillator_matches_cosine() {
        let spec = oscillator(2f64.sqrt());
        let tol = Tolerances::new(1e-12, 1e-14);
        let tr = integrate(
            &spec,
            &PhaseState::new(vec![1.0, 0.0], vec![0.0, 0.0]),
            (0.0, 10.0),
            &tol,
            &[],
        )
        .unwrap();
        for k in 0..=100 {
            let t = 0.1 * k as f64;
            assert!((tr.position_at(t)[0] - t.cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn free_motion_is_a_straight_line() {
        let m = MetricModel::euclidean(2, Space::Euclidean).unwrap();
        let spec = SystemSpec::new(m, parse("0", 2).unwrap(), 0.5).unwrap();
        let tr = integrate(
            &spec,
            &PhaseState::new(vec![1.0, 2.0], vec![0.6, -0.8]),
            (0.0, 5.0),
            &Tolerances::default(),
            &[],
        )
        .unwrap();
        let x = tr.last().x;
        assert!((x[0] - 4.0).abs() < 1e-12 && (x[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn kinetic_minimum_event_on_brake_orbit() {
        let spec = oscillator(2f64.sqrt());
        let tol = Tolerances::new(1e-12, 1e-14);
        let ev = kinetic_minimum_event(&spec, true);
        let tr = integrate(
            &spec,
            &PhaseState::new(vec![1.0, 0.0], vec![0.0, 0.0]),
            (0.0, 10.0),
            &tol,
            &[ev],
        )
        .unwrap();
        assert!((tr.t_end() - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn finsler_rest_point_uses_fallback_direction() {
        let spec = quartic_finsler();
        let a = lagrange_rhs(&spec, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        let g = spec.metric.tensor(&[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        let expected = g.solve(&[-1.0, 0.0]).unwrap();
        assert!((a[0] - expected[0]).abs() < 1e-15);
        // Position sensitivities are fine at rest; velocity sensitivities are not.
        let x = [Dual::variable(1.0), Dual::constant(0.0)];
        let v = [Dual::constant(0.0), Dual::constant(0.0)];
        assert!(lagrange_rhs(&spec, &x, &v).is_ok());
        let v = [Dual::variable(0.0), Dual::constant(0.0)];
        assert!(matches!(
            lagrange_rhs(&spec, &[Dual::constant(1.0), Dual::constant(0.0)], &v),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn finsler_energy_is_conserved() {
        let spec = quartic_finsler();
        let tr = integrate(
            &spec,
            &PhaseState::new(vec![0.5, 0.2], vec![0.3, 0.9]),
            (0.0, 20.0),
            &Tolerances::new(1e-11, 1e-13),
            &[],
        )
        .unwrap();
        assert!(tr.energy_drift < 1e-9, "drift {}", tr.energy_drift);
    }

    #[test]
    fn hamilton_and_lagrange_flows_agree_under_legendre() {
        let spec = quartic_finsler();
        let x0 = [0.5, 0.2];
        let v0 = [0.3, 0.9];
        let tol = Tolerances::new(1e-12, 1e-14);
        let lag = integrate(
            &spec,
            &PhaseState::new(x0.to_vec(), v0.to_vec()),
            (0.0, 5.0),
            &tol,
            &[],
        )
        .unwrap();
        let mut z0 = x0.to_vec();
        z0.extend(spec.metric.legendre(&x0, &v0).unwrap());
        let ham = integrate_field(&HamiltonField(&spec), 0.0, &z0, 5.0, &tol, &[]).unwrap();
        for k in 0..=50 {
            let t = 0.1 * k as f64;
            let z = ham.eval(t);
            let y = lag.state_at(t);
            let v = spec.metric.legendre_inverse(&z[..2], &z[2..]).unwrap();
            for i in 0..2 {
                assert!((z[i] - y[i]).abs() < 1e-8);
                assert!((v[i] - y[2 + i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn csv_header_and_precision() {
        let spec = oscillator(1.0);
        let tr = integrate(
            &spec,
            &PhaseState::new(vec![1.0, 0.0], vec![0.0, 0.0]),
            (0.0, 0.1),
            &Tolerances::default(),
            &[],
        )
        .unwrap();
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,v1,v2,H");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 6);
        assert_eq!(first[1].parse::<f64>().unwrap(), 1.0);
        assert!(first[1].starts_with("1.0000000000000000e0"));
    }
}
