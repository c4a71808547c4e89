//! Jacobi–Maupertuis correspondence: the conformal metric `F̄² = 2(E − U)F²`,
//! its geodesic coefficients, and the reparametrizations between energy-`E`
//! orbits and unit-speed `F̄`-geodesics (`ds/dt = 2(E − U)`).

use crate::dynamics::{
    integrate_field, lagrange_rhs, total_energy, DenseSegment, Direction, Event, PhaseState,
    Solution, SystemSpec, Tolerances, Trajectory, VectorField,
};
use crate::error::{Error, Result};
use crate::expr::dual::dot;
use crate::expr::{ExprNode, Real};
use crate::geometry::MetricModel;
use crate::linalg::norm;

/// Conformal metric `ψF²` with `ψ = 2(E − U)`, valid where `E − U > δ_floor`.
#[derive(Debug, Clone)]
pub struct JacobiMetric {
    spec: SystemSpec,
    psi: ExprNode,
    conformal: MetricModel,
    delta_floor: f64,
}

impl JacobiMetric {
    pub fn new(spec: &SystemSpec) -> Result<Self> {
        let u = spec.potential.as_expr().ok_or_else(|| {
            Error::Unsupported("the Jacobi metric needs an expression potential".into())
        })?;
        let psi = ExprNode::product(
            ExprNode::constant(2.0),
            ExprNode::difference(ExprNode::constant(spec.energy), u.clone()),
        );
        let conformal = spec.metric.conformal(&psi)?;
        Ok(JacobiMetric {
            spec: spec.clone(),
            psi,
            conformal,
            delta_floor: 1e-8 * (1.0 + spec.energy.abs()),
        })
    }

    pub fn with_delta_floor(mut self, delta_floor: f64) -> Self {
        self.delta_floor = delta_floor;
        self
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn delta_floor(&self) -> f64 {
        self.delta_floor
    }

    /// The conformal metric as a standalone model (`ψ·g` or `ψ·F²`).
    pub fn as_metric(&self) -> &MetricModel {
        &self.conformal
    }

    pub fn psi_expr(&self) -> &ExprNode {
        &self.psi
    }

    /// `ψ(x) = 2(E − U(x))`, guarded against the boundary of the well.
    pub fn psi<T: Real>(&self, x: &[T]) -> Result<T> {
        let u = self.spec.potential.value(x)?;
        let gap = self.spec.energy - u.value();
        if gap <= self.delta_floor {
            return Err(Error::Degeneracy {
                point: x.iter().map(|c| c.value()).collect(),
                gap,
            });
        }
        Ok((T::cst(self.spec.energy) - u).scale(2.0))
    }

    /// `F̄²(x, v) = 2(E − U(x)) F²(x, v)`.
    pub fn jacobi_f2(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        Ok(self.psi(x)? * self.spec.metric.f2(x, v)?)
    }

    /// `Ḡ = G + (2(∇ψ·v)v − g⁻¹∇ψ F²) / (4ψ)`.
    pub fn geodesic_coefficients<T: Real>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        let m = &self.spec.metric;
        let psi = self.psi(x)?;
        let dpsi: Vec<T> = self
            .spec
            .potential
            .gradient(x)?
            .into_iter()
            .map(|c| c.scale(-2.0))
            .collect();
        let g = m.tensor(x, v)?;
        let base = if m.is_translation_invariant() {
            vec![T::zero(); x.len()]
        } else {
            m.geodesic_coefficients_from(&g, &m.tensor_dx(x, v)?, v)?
        };
        let f2 = g.bilinear(v, v);
        let gi = g.solve(&dpsi)?;
        let dv = dot(&dpsi, v);
        let denom = psi.scale(4.0);
        Ok((0..x.len())
            .map(|k| base[k] + ((dv * v[k]).scale(2.0) - gi[k] * f2) / denom)
            .collect())
    }

    /// Same quantity from the geometry kernel applied to the conformal model.
    pub fn geodesic_coefficients_direct<T: Real>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        self.psi(x)?;
        self.conformal.geodesic_coefficients(x, v)
    }

    /// Map an energy-`E` orbit to the unit-speed `F̄`-geodesic through the same
    /// points, parametrized by `s` with `ds/dt = 2(E − U)`.
    pub fn orbit_to_geodesic(&self, traj: &Trajectory) -> Result<Trajectory> {
        let spec = &self.spec;
        let n = spec.dimension();
        for y in &traj.states {
            let (x, v) = y.split_at(n);
            self.psi(x)?;
            let h = total_energy(spec, x, v)?;
            if (h - spec.energy).abs() > 1e-6 {
                return Err(Error::EnergyMismatch((h - spec.energy).abs()));
            }
        }
        let clock = Clock::Orbit { jm: self, traj };
        let s_of_t = quadrature(&clock, traj.t_start(), traj.t_end())?;
        let mut nodes = Vec::with_capacity(traj.len());
        for (t, y) in traj.t.iter().zip(&traj.states) {
            let (x, v) = y.split_at(n);
            let psi = self.psi(x)?;
            let du = spec.potential.gradient(x)?;
            let psi_t = -2.0 * dot(&du, v);
            let a = lagrange_rhs(spec, x, v)?;
            let d: Vec<f64> = v.iter().map(|c| c / psi).collect();
            let dd: Vec<f64> = (0..n)
                .map(|i| (a[i] / psi - v[i] * psi_t / (psi * psi)) / psi)
                .collect();
            nodes.push(Node {
                time: s_of_t.eval(*t)[0],
                x: x.to_vec(),
                d,
                dd,
            });
        }
        let out = hermite_trajectory(n, &nodes, traj.space.clone());
        for (x, d) in nodes.iter().map(|nd| (&nd.x, &nd.d)) {
            let f = self.jacobi_f2(x, d)?;
            if (f - 1.0).abs() > 1e-6 {
                return Err(Error::Invariant(format!("geodesic speed F̄² = {f}")));
            }
        }
        Ok(out)
    }

    /// Inverse of [`Self::orbit_to_geodesic`]: `t(s) = t₀ + ∫ ds / ψ`.
    /// The geodesic's state is `(x̃, x̃')`; second derivatives come from the
    /// geodesic equation `x̃'' = −2Ḡ`.
    pub fn geodesic_to_orbit(&self, geo: &Trajectory, t0: f64) -> Result<Trajectory> {
        let spec = &self.spec;
        let n = spec.dimension();
        for y in &geo.states {
            let f = self.jacobi_f2(&y[..n], &y[n..])?;
            if (f - 1.0).abs() > 1e-6 {
                return Err(Error::Precondition(format!(
                    "geodesic is not unit speed: F̄² = {f}"
                )));
            }
        }
        let clock = Clock::Geodesic { jm: self, geo };
        let t_of_s = quadrature(&clock, geo.t_start(), geo.t_end())?;
        let mut nodes = Vec::with_capacity(geo.len());
        for (s, y) in geo.t.iter().zip(&geo.states) {
            let (x, d) = y.split_at(n);
            let psi = self.psi(x)?;
            let du = spec.potential.gradient(x)?;
            let psi_s = -2.0 * dot(&du, d);
            let gbar = self.geodesic_coefficients(x, d)?;
            nodes.push(Node {
                time: t0 + t_of_s.eval(*s)[0],
                x: x.to_vec(),
                d: d.iter().map(|c| psi * c).collect(),
                dd: (0..n)
                    .map(|i| psi * (psi_s * d[i] - 2.0 * psi * gbar[i]))
                    .collect(),
            });
        }
        let mut out = hermite_trajectory(n, &nodes, geo.space.clone());
        out.energy = out
            .states
            .iter()
            .map(|y| total_energy(spec, &y[..n], &y[n..]))
            .collect::<Result<_>>()?;
        let e0 = out.energy[0];
        out.energy_drift = out
            .energy
            .iter()
            .map(|e| (e - e0).abs())
            .fold(0.0, f64::max);
        Ok(out)
    }

    /// Largest deviation, over the nodes of an orbit produced by
    /// [`Self::geodesic_to_orbit`], between its acceleration and the
    /// Euler–Lagrange right-hand side.
    pub fn lagrange_residual(&self, orbit: &Trajectory) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for seg in &orbit.segments {
            if let DenseSegment::Hermite5 { x0, d0, a0, .. } = seg {
                let a = lagrange_rhs(&self.spec, x0, d0)?;
                worst = worst.max(norm(&crate::linalg::sub(&a, a0)));
            }
        }
        if let Some(DenseSegment::Hermite5 { x1, d1, a1, .. }) = orbit.segments.last() {
            let a = lagrange_rhs(&self.spec, x1, d1)?;
            worst = worst.max(norm(&crate::linalg::sub(&a, a1)));
        }
        Ok(worst)
    }

    /// Integrate the `F̄`-geodesic equation from `(x, x̃')` over `[0, s_end]`.
    pub fn integrate_geodesic(
        &self,
        x: &[f64],
        d: &[f64],
        s_end: f64,
        tol: &Tolerances,
        direct: bool,
    ) -> Result<Trajectory> {
        let field = GeodesicField {
            jm: self,
            direct,
            clock: false,
        };
        let mut y0 = x.to_vec();
        y0.extend_from_slice(d);
        let sol = integrate_field(&field, 0.0, &y0, s_end, tol, &[])?;
        Ok(Trajectory::from_raw(
            self.spec.dimension(),
            sol,
            self.spec.space().clone(),
        ))
    }

    /// Integrate the Lagrangian flow and the `F̄`-geodesic flow from the same
    /// initial data over `t ∈ [0, t_end]` and return the largest deviation of
    /// positions and velocities after mapping the geodesic through `t(s)`.
    /// The geodesic uses the direct geometry path on the conformal model.
    pub fn proposition_check(
        &self,
        initial: &PhaseState,
        t_end: f64,
        tol: &Tolerances,
    ) -> Result<f64> {
        let spec = &self.spec;
        let n = spec.dimension();
        let lag = crate::dynamics::integrate(spec, initial, (0.0, t_end), tol, &[])?;
        let psi0 = self.psi(&initial.x)?;
        let mut y0 = initial.x.clone();
        y0.extend(initial.v.iter().map(|c| c / psi0));
        y0.push(0.0);
        let field = GeodesicField {
            jm: self,
            direct: true,
            clock: true,
        };
        let stop = Event::new("t_end", Direction::Rising, true, |_, y: &[f64]| {
            Ok(y[2 * n] - t_end)
        });
        let mut s_max = 2.0 * t_end * psi0.max(1e-3);
        let sol: Solution = loop {
            let sol = integrate_field(&field, 0.0, &y0, s_max, tol, std::slice::from_ref(&stop))?;
            if sol.y_end()[2 * n] >= t_end - 1e-9 {
                break sol;
            }
            s_max *= 4.0;
            if s_max > 1e9 {
                return Err(Error::NoEvent(s_max));
            }
        };
        let mut worst: f64 = 0.0;
        let mut check = |y: &[f64]| -> Result<()> {
            let t = y[2 * n].min(t_end);
            let z = lag.state_at(t);
            let psi = self.psi(&y[..n])?;
            for i in 0..n {
                worst = worst.max((z[i] - y[i]).abs());
                worst = worst.max((z[n + i] - psi * y[n + i]).abs());
            }
            Ok(())
        };
        for y in &sol.y {
            check(y)?;
        }
        for seg in &sol.segments {
            let mid = 0.5 * (seg.t0() + seg.t1().min(sol.t_end()));
            check(&seg.eval(mid))?;
        }
        Ok(worst)
    }
}

/// `x̃'' = −2Ḡ(x̃, x̃')`, optionally augmented with `dt/ds = 1/ψ`.
struct GeodesicField<'a> {
    jm: &'a JacobiMetric,
    direct: bool,
    clock: bool,
}

impl VectorField for GeodesicField<'_> {
    fn dim(&self) -> usize {
        2 * self.jm.spec.dimension() + usize::from(self.clock)
    }

    fn eval<T: Real>(&self, _s: T, y: &[T]) -> Result<Vec<T>> {
        let n = self.jm.spec.dimension();
        let (x, d) = (&y[..n], &y[n..2 * n]);
        let g = if self.direct {
            self.jm.geodesic_coefficients_direct(x, d)?
        } else {
            self.jm.geodesic_coefficients(x, d)?
        };
        let mut out = d.to_vec();
        out.extend(g.into_iter().map(|c| c.scale(-2.0)));
        if self.clock {
            out.push(T::one() / self.jm.psi(x)?);
        }
        Ok(out)
    }
}

/// Scalar clock ODEs along an existing curve.
enum Clock<'a> {
    /// `ds/dt = ψ(x(t))`.
    Orbit {
        jm: &'a JacobiMetric,
        traj: &'a Trajectory,
    },
    /// `dt/ds = 1/ψ(x̃(s))`.
    Geodesic {
        jm: &'a JacobiMetric,
        geo: &'a Trajectory,
    },
}

impl VectorField for Clock<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn eval<T: Real>(&self, t: T, _y: &[T]) -> Result<Vec<T>> {
        let r = match self {
            Clock::Orbit { jm, traj } => jm.psi(&traj.position_at(t.value()))?,
            Clock::Geodesic { jm, geo } => 1.0 / jm.psi(&geo.position_at(t.value()))?,
        };
        Ok(vec![T::cst(r)])
    }
}

fn quadrature(clock: &Clock<'_>, a: f64, b: f64) -> Result<Solution> {
    integrate_field(clock, a, &[0.0], b, &Tolerances::new(1e-12, 1e-14), &[])
}

struct Node {
    time: f64,
    x: Vec<f64>,
    d: Vec<f64>,
    dd: Vec<f64>,
}

fn hermite_trajectory(n: usize, nodes: &[Node], space: crate::geometry::Space) -> Trajectory {
    let t: Vec<f64> = nodes.iter().map(|nd| nd.time).collect();
    let states = nodes
        .iter()
        .map(|nd| {
            let mut y = nd.x.clone();
            y.extend_from_slice(&nd.d);
            y
        })
        .collect();
    let segments = nodes
        .windows(2)
        .map(|w| DenseSegment::Hermite5 {
            t0: w[0].time,
            h: w[1].time - w[0].time,
            x0: w[0].x.clone(),
            x1: w[1].x.clone(),
            d0: w[0].d.clone(),
            d1: w[1].d.clone(),
            a0: w[0].dd.clone(),
            a1: w[1].dd.clone(),
        })
        .collect();
    Trajectory::from_segments(n, t, states, segments, space)
}
