//! Local conformal perturbation that displaces a Jacobi geodesic.
//!
//! A center geodesic `γ` of the Jacobi metric `F̄` is surrounded by a tube
//! `ξ(t, u) = γ(t) + Σ u_k w_k(t)` with a `ḡ`-orthonormal normal frame. The
//! displaced curve `c = ξ(t, u_s(t), 0, …)` is turned into a pregeodesic of
//! `e^φ F̄` by prescribing `φ = 0` and `∇φ` along `c`; off the curve `φ` is
//! extended linearly in the normal direction with a smooth radial cut-off.
//! The same factor is realized as a potential change `Ũ = (1 − e^φ)E + e^φ U`.

use std::sync::Arc;

use serde::Serialize;

use crate::dynamics::{
    integrate, DenseSegment, Direction, Event, PhaseState, Potential, ScalarField, SystemSpec,
    Tolerances, Trajectory,
};
use crate::error::{Error, Result};
use crate::expr::dual::{dot, Dual};
use crate::expr::Real;
use crate::intersect::{
    closest_approach, curve_intersections, IntersectionReport, IntersectionSettings,
};
use crate::jacobi::JacobiMetric;
use crate::linalg::{norm, orthonormal_complement, sub, Mat};

type Jet = Dual<Dual<f64>>;

/// Second-order Taylor jet in one variable: value, first and second derivative.
fn jet(x: f64, d: f64, dd: f64) -> Jet {
    Dual::new(Dual::new(x, d), Dual::new(d, dd))
}

fn unjet(j: &[Jet]) -> [Vec<f64>; 3] {
    [
        j.iter().map(|c| c.re.re).collect(),
        j.iter().map(|c| c.re.eps).collect(),
        j.iter().map(|c| c.eps.eps).collect(),
    ]
}

/// Quintic smoothstep on `[0, 1]`, clamped outside.
fn smoothstep<T: Real>(x: T) -> T {
    let v = x.value();
    if v <= 0.0 {
        T::zero()
    } else if v >= 1.0 {
        T::one()
    } else {
        x * x * x * (x * (x.scale(6.0) - T::cst(15.0)) + T::cst(10.0))
    }
}

fn smoothstep_slope(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        30.0 * x * x * (x - 1.0) * (x - 1.0)
    }
}

/// Tube around a unit-speed `F̄`-geodesic on `t ∈ [−2η, 2η]`.
#[derive(Debug, Clone)]
pub struct TubeFrame {
    jm: JacobiMetric,
    forward: Trajectory,
    backward: Trajectory,
    pub eta: f64,
    pub eps: f64,
    /// Reference directions Gram–Schmidt-projected into the normal space;
    /// the first one becomes the displacement direction `w_1`.
    references: Vec<Vec<f64>>,
}

impl TubeFrame {
    /// Tube around the geodesic through `point` with direction `direction`
    /// (normalized to unit `F̄` speed). `displacement` picks `w_1`.
    pub fn new(
        jm: &JacobiMetric,
        point: &[f64],
        direction: &[f64],
        displacement: &[f64],
        eta: f64,
        eps: f64,
        tol: &Tolerances,
    ) -> Result<Self> {
        let spec = jm.spec();
        let n = spec.dimension();
        if !spec.metric.is_riemannian() {
            return Err(Error::Unsupported(
                "tubes are built for Riemannian kinetic energy only".into(),
            ));
        }
        if n < 2 || point.len() != n || direction.len() != n || displacement.len() != n {
            return Err(Error::InvalidParameter(format!(
                "point, direction and displacement need {n} ≥ 2 components"
            )));
        }
        if !(eps > 0.0 && 7.0 * eps < eta) {
            return Err(Error::InvalidParameter(format!(
                "tube parameters need 0 < 7ε < η (η = {eta}, ε = {eps})"
            )));
        }
        let speed = jm.jacobi_f2(point, direction)?.sqrt();
        if !(speed > 0.0) {
            return Err(Error::InvalidParameter("direction has zero length".into()));
        }
        let d: Vec<f64> = direction.iter().map(|c| c / speed).collect();
        let back: Vec<f64> = d.iter().map(|c| -c).collect();
        let forward = jm.integrate_geodesic(point, &d, 2.0 * eta, tol, true)?;
        let backward = jm.integrate_geodesic(point, &back, 2.0 * eta, tol, true)?;
        let mut references = vec![displacement.to_vec()];
        // Remaining references: coordinate axes least aligned with the
        // tangent and the displacement.
        let mut axes: Vec<usize> = (0..n).collect();
        let dn = norm(displacement);
        axes.sort_by(|&i, &j| {
            let score = |k: usize| (d[k] / norm(&d)).abs() + (displacement[k] / dn).abs();
            score(i).total_cmp(&score(j))
        });
        for k in axes.into_iter().take(n - 2) {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            references.push(e);
        }
        let tube = TubeFrame {
            jm: jm.clone(),
            forward,
            backward,
            eta,
            eps,
            references,
        };
        tube.check_overlap()?;
        Ok(tube)
    }

    pub fn jacobi(&self) -> &JacobiMetric {
        &self.jm
    }

    pub fn dimension(&self) -> usize {
        self.jm.spec().dimension()
    }

    pub fn half_length(&self) -> f64 {
        2.0 * self.eta
    }

    /// `(γ, γ', γ'')` at `t`.
    pub fn center(&self, t: f64) -> Result<[Vec<f64>; 3]> {
        let n = self.dimension();
        let t = t.clamp(-2.0 * self.eta, 2.0 * self.eta);
        let (x, v) = if t >= 0.0 {
            let y = self.forward.state_at(t);
            (y[..n].to_vec(), y[n..].to_vec())
        } else {
            let y = self.backward.state_at(-t);
            (y[..n].to_vec(), y[n..].iter().map(|c| -c).collect())
        };
        let g = self.jm.geodesic_coefficients_direct(&x, &v)?;
        let a: Vec<f64> = g.iter().map(|c| -2.0 * c).collect();
        Ok([x, v, a])
    }

    /// Jets of `γ` and `γ'` in `t`.
    fn center_jets(&self, t: f64) -> Result<(Vec<Jet>, Vec<Jet>)> {
        let [x, v, a] = self.center(t)?;
        let xd: Vec<Dual<f64>> = x.iter().zip(&v).map(|(&p, &q)| Dual::new(p, q)).collect();
        let vd: Vec<Dual<f64>> = v.iter().zip(&a).map(|(&p, &q)| Dual::new(p, q)).collect();
        let jerk: Vec<f64> = self
            .jm
            .geodesic_coefficients_direct(&xd, &vd)?
            .iter()
            .map(|c| -2.0 * c.eps)
            .collect();
        let n = x.len();
        let xj = (0..n).map(|i| jet(x[i], v[i], a[i])).collect();
        let vj = (0..n).map(|i| jet(v[i], a[i], jerk[i])).collect();
        Ok((xj, vj))
    }

    /// `ḡ`-orthonormal normal frame at `(x, v)`.
    pub fn frame<T: Real>(&self, x: &[T], v: &[T]) -> Result<Vec<Vec<T>>> {
        let g = self.jm.as_metric().tensor(x, v)?;
        let mut basis: Vec<Vec<T>> = Vec::new();
        let vn = g.bilinear(v, v).sqrt();
        basis.push(v.iter().map(|&c| c / vn).collect());
        for r in &self.references {
            let mut w: Vec<T> = r.iter().map(|&c| T::cst(c)).collect();
            for b in &basis {
                let p = g.bilinear(b, &w);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= p * *bi;
                }
            }
            let wn = g.bilinear(&w, &w).sqrt();
            if !(wn.value() > 1e-8) {
                return Err(Error::Singular(
                    "frame reference is tangent to the center curve".into(),
                ));
            }
            basis.push(w.into_iter().map(|c| c / wn).collect());
        }
        basis.remove(0);
        Ok(basis)
    }

    /// `ξ(t, u) = γ(t) + Σ u_k w_k(t)`.
    pub fn xi(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let [x, v, _] = self.center(t)?;
        let frame = self.frame(&x, &v)?;
        let mut p = x;
        for (uk, w) in u.iter().zip(&frame) {
            for i in 0..p.len() {
                p[i] += uk * w[i];
            }
        }
        Ok(p)
    }

    /// Largest deviation of the sampled frame `(γ', w_k)` from orthonormality.
    pub fn orthonormality_defect(&self, samples: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..=samples {
            let t = -2.0 * self.eta + 4.0 * self.eta * k as f64 / samples as f64;
            let [x, v, _] = self.center(t)?;
            let g = self.jm.as_metric().tensor(&x, &v)?;
            let mut all = vec![v.clone()];
            all.extend(self.frame(&x, &v)?);
            for i in 0..all.len() {
                for j in 0..all.len() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((g.bilinear(&all[i], &all[j]) - want).abs());
                }
            }
        }
        Ok(worst)
    }

    /// Largest chart length of a frame vector, i.e. the chart radius of the tube per unit `ε`.
    fn chart_scale(&self, samples: usize) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for k in 0..=samples {
            let t = -2.0 * self.eta + 4.0 * self.eta * k as f64 / samples as f64;
            let [x, v, _] = self.center(t)?;
            for w in self.frame(&x, &v)? {
                lo = lo.min(norm(&w));
                hi = hi.max(norm(&w));
            }
        }
        Ok((lo, hi))
    }

    /// Injectivity of `ξ` by sampling: chart curvature times tube radius below
    /// one and no two centers far apart in `t` closer than the tube diameter.
    fn check_overlap(&self) -> Result<()> {
        let m = 400;
        let (_, scale) = self.chart_scale(m)?;
        let radius = self.eps * scale;
        let ts: Vec<f64> = (0..=m)
            .map(|k| -2.0 * self.eta + 4.0 * self.eta * k as f64 / m as f64)
            .collect();
        let mut centers = Vec::with_capacity(ts.len());
        for &t in &ts {
            let [x, v, a] = self.center(t)?;
            let v2 = dot(&v, &v);
            let along = dot(&a, &v) / v2;
            let perp: Vec<f64> = a.iter().zip(&v).map(|(ai, vi)| ai - along * vi).collect();
            let kappa = norm(&perp) / v2;
            if kappa * radius >= 1.0 {
                return Err(Error::TubeOverlap(format!(
                    "tube radius {radius:e} exceeds the curvature radius {:e} at t = {t}",
                    1.0 / kappa
                )));
            }
            centers.push(x);
        }
        let space = self.jm.spec().space();
        for i in 0..ts.len() {
            for j in i + 1..ts.len() {
                let dd = norm(&space.minimal_image(&sub(&centers[i], &centers[j])));
                // Chart distance along the curve exceeds 2·radius here.
                let along = (ts[j] - ts[i]) * scale;
                if along > 4.0 * radius && dd <= 2.1 * radius {
                    return Err(Error::TubeOverlap(format!(
                        "tube pieces at t = {} and t = {} overlap",
                        ts[i], ts[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `γ_s(t) = ξ(t, u_s(t), 0, …)` with a quintic plateau profile.
#[derive(Debug, Clone)]
pub struct DisplacedCurve {
    tube: Arc<TubeFrame>,
    pub s: f64,
}

impl DisplacedCurve {
    pub fn new(tube: Arc<TubeFrame>, s: f64) -> Result<Self> {
        if !(s >= 0.0 && s <= 0.5 * tube.eps) {
            return Err(Error::InvalidParameter(format!(
                "displacement must satisfy 0 ≤ s ≤ ε/2 (s = {s}, ε = {})",
                tube.eps
            )));
        }
        Ok(DisplacedCurve { tube, s })
    }

    pub fn tube(&self) -> &TubeFrame {
        &self.tube
    }

    /// `u_s(t)`: `s` on `|t| ≤ η + 2ε`, zero for `|t| ≥ η + 4ε`.
    pub fn profile<T: Real>(&self, t: T) -> T {
        let (eta, eps) = (self.tube.eta, self.tube.eps);
        let a = if t.value() < 0.0 { -t } else { t };
        let x = (a - T::cst(eta + 2.0 * eps)) / T::cst(2.0 * eps);
        (T::one() - smoothstep(x)).scale(self.s)
    }

    /// Parameter intervals where the profile is not constant.
    pub fn transition_intervals(&self) -> [(f64, f64); 2] {
        let (eta, eps) = (self.tube.eta, self.tube.eps);
        [
            (-(eta + 4.0 * eps), -(eta + 2.0 * eps)),
            (eta + 2.0 * eps, eta + 4.0 * eps),
        ]
    }

    /// Outer edge of the displaced part.
    pub fn reach(&self) -> f64 {
        self.tube.eta + 4.0 * self.tube.eps
    }

    /// `(c, ċ, c̈)` at `t`.
    pub fn jet(&self, t: f64) -> Result<[Vec<f64>; 3]> {
        let (x, v) = self.tube.center_jets(t)?;
        let tj = jet(t, 1.0, 0.0);
        let u = self.profile(tj);
        let w = self.tube.frame(&x, &v)?.swap_remove(0);
        let c: Vec<Jet> = x.iter().zip(&w).map(|(&xi, &wi)| xi + u * wi).collect();
        Ok(unjet(&c))
    }

    pub fn point(&self, t: f64) -> Result<Vec<f64>> {
        let [c, _, _] = self.jet(t)?;
        Ok(c)
    }

    /// Quintic Hermite trajectory of the curve on `[−2η, 2η]`.
    pub fn to_trajectory(&self, samples: usize) -> Result<Trajectory> {
        let n = self.tube.dimension();
        let l = self.tube.half_length();
        let ts: Vec<f64> = (0..=samples)
            .map(|k| -l + 2.0 * l * k as f64 / samples as f64)
            .collect();
        let jets: Vec<[Vec<f64>; 3]> = ts.iter().map(|&t| self.jet(t)).collect::<Result<_>>()?;
        let states = jets
            .iter()
            .map(|[c, d, _]| {
                let mut y = c.clone();
                y.extend_from_slice(d);
                y
            })
            .collect();
        let segments = (0..samples)
            .map(|k| DenseSegment::Hermite5 {
                t0: ts[k],
                h: ts[k + 1] - ts[k],
                x0: jets[k][0].clone(),
                x1: jets[k + 1][0].clone(),
                d0: jets[k][1].clone(),
                d1: jets[k + 1][1].clone(),
                a0: jets[k][2].clone(),
                a1: jets[k + 1][2].clone(),
            })
            .collect();
        Ok(Trajectory::from_segments(
            n,
            ts,
            states,
            segments,
            self.tube.jm.spec().space().clone(),
        ))
    }

    /// `ḡ`-length over `[−2η, 2η]` (composite Simpson rule).
    pub fn length(&self, intervals: usize) -> Result<f64> {
        let l = self.tube.half_length();
        let m = intervals + intervals % 2;
        let h = 2.0 * l / m as f64;
        let mut sum = 0.0;
        for k in 0..=m {
            let t = -l + h * k as f64;
            let [c, d, _] = self.jet(t)?;
            let w = if k == 0 || k == m {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * self.tube.jm.jacobi_f2(&c, &d)?.sqrt();
        }
        Ok(sum * h / 3.0)
    }
}

/// Conformal factor `φ` vanishing on the displaced curve with the gradient
/// that makes the curve a pregeodesic of `e^φ F̄`.
#[derive(Debug, Clone)]
pub struct ConformalPerturbation {
    curve: DisplacedCurve,
    /// Chart radius of the support around the curve.
    pub rho: f64,
    /// Parameter intervals carrying a nonzero prescribed gradient.
    pub support: Vec<(f64, f64)>,
    coarse: Vec<(f64, Vec<f64>)>,
}

impl ConformalPerturbation {
    /// Prescribe `∇φ` along the curve and build the extension.
    pub fn solve(curve: DisplacedCurve) -> Result<Self> {
        let tube = curve.tube.clone();
        let (lo, _) = tube.chart_scale(200)?;
        let rho = 0.5 * tube.eps * lo;
        let l = tube.half_length();
        let coarse = (0..=800)
            .map(|k| {
                let t = -l + 2.0 * l * k as f64 / 800.0;
                Ok((t, curve.point(t)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut p = ConformalPerturbation {
            curve,
            rho,
            support: Vec::new(),
            coarse,
        };
        // The plateau is a geodesic exactly when the prescribed gradient
        // vanishes there; otherwise it joins the support.
        let reach = p.curve.reach();
        let inner = reach - 2.0 * tube.eps;
        let plateau_zero = (0..=200).all(|k| {
            let t = -inner + 2.0 * inner * k as f64 / 200.0;
            p.required_gradient(t)
                .map(|a| norm(&a) == 0.0)
                .unwrap_or(false)
        });
        p.support = if plateau_zero {
            p.curve.transition_intervals().to_vec()
        } else {
            vec![(-reach, reach)]
        };
        Ok(p)
    }

    pub fn curve(&self) -> &DisplacedCurve {
        &self.curve
    }

    fn space(&self) -> &crate::geometry::Space {
        self.curve.tube.jm.spec().space()
    }

    fn in_support(&self, t: f64) -> bool {
        self.support.iter().any(|&(a, b)| t > a && t < b)
    }

    /// `∇φ(c(t))`: zero along `ċ`, and `dφ(e) = 2 ḡ(e, c̈ + 2Ḡ) / ḡ(ċ, ċ)`
    /// for `e` normal to `ċ`.
    pub fn required_gradient(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.curve.tube.dimension();
        if t.abs() >= self.curve.reach() {
            return Ok(vec![0.0; n]);
        }
        let jm = &self.curve.tube.jm;
        let [c, cd, cdd] = self.curve.jet(t)?;
        let g = jm.as_metric().tensor(&c, &cd)?;
        let gb = jm.geodesic_coefficients(&c, &cd)?;
        let r: Vec<f64> = cdd.iter().zip(&gb).map(|(a, b)| a + 2.0 * b).collect();
        let gc = g.mul_vec(&cd);
        let speed2 = dot(&cd, &gc);
        let gr = g.mul_vec(&r);
        let normals = orthonormal_complement(&gc);
        let mut m = Mat::zeros(n);
        let mut rhs = vec![0.0; n];
        for j in 0..n {
            m[(0, j)] = cd[j];
        }
        for (k, e) in normals.iter().enumerate() {
            for j in 0..n {
                m[(k + 1, j)] = e[j];
            }
            rhs[k + 1] = 2.0 * dot(e, &gr) / speed2;
        }
        m.solve(&rhs)
            .map_err(|_| Error::Singular(format!("gradient system is singular at t = {t}")))
    }

    /// Nearest curve parameter to `x` (chart metric).
    pub fn project(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let space = self.space();
        let (mut t, _) = self
            .coarse
            .iter()
            .map(|(t, p)| (*t, norm(&space.minimal_image(&sub(x, p)))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let l = self.curve.tube.half_length();
        for _ in 0..30 {
            let [c, cd, cdd] = self.curve.jet(t)?;
            let d = space.minimal_image(&sub(x, &c));
            let h = dot(&cd, &d);
            let dh = dot(&cdd, &d) - dot(&cd, &cd);
            if dh >= 0.0 {
                break;
            }
            let next = (t - h / dh).clamp(-l, l);
            let done = (next - t).abs() <= 1e-15 * (1.0 + t.abs());
            t = next;
            if done {
                break;
            }
        }
        let c = self.curve.point(t)?;
        Ok((t, space.minimal_image(&sub(x, &c))))
    }

    fn cutoff(&self, q: f64) -> (f64, f64) {
        (1.0 - smoothstep(q), -smoothstep_slope(q))
    }

    /// Largest `|φ|` on a sampled normal fan around the curve.
    pub fn max_abs(&self, samples: usize) -> Result<f64> {
        let n = self.curve.tube.dimension();
        let reach = self.curve.reach();
        let mut worst: f64 = 0.0;
        for k in 0..=samples {
            let t = -reach + 2.0 * reach * k as f64 / samples as f64;
            let [c, cd, _] = self.curve.jet(t)?;
            for e in orthonormal_complement(&cd) {
                for j in 1..=8 {
                    let r = self.rho * j as f64 / 9.0;
                    for sgn in [-1.0, 1.0] {
                        let x: Vec<f64> = (0..n).map(|i| c[i] + sgn * r * e[i]).collect();
                        worst = worst.max(self.value(&x)?.abs());
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Whether `x` lies in the declared support (tube pieces of radius `ρ`).
    pub fn declared_support_contains(&self, x: &[f64]) -> Result<bool> {
        let (t, d) = self.project(x)?;
        Ok(norm(&d) < self.rho && self.in_support(t))
    }

    /// Geodesic residual of the curve for `e^φ F̄`: normal part of
    /// `c̈ + 2Ĝ(c, ċ)` divided by `ḡ(ċ, ċ)`, with `∇φ` from [`ScalarField::gradient`].
    pub fn geodesic_residual(&self, t: f64) -> Result<f64> {
        let jm = &self.curve.tube.jm;
        let [c, cd, cdd] = self.curve.jet(t)?;
        let g = jm.as_metric().tensor(&c, &cd)?;
        let gb = jm.geodesic_coefficients(&c, &cd)?;
        let dphi = self.gradient(&c)?;
        let speed2 = g.bilinear(&cd, &cd);
        let grad = g.solve(&dphi)?;
        let along = dot(&dphi, &cd);
        let r: Vec<f64> = (0..c.len())
            .map(|i| cdd[i] + 2.0 * gb[i] + along * cd[i] - 0.5 * speed2 * grad[i])
            .collect();
        let tangential = g.bilinear(&r, &cd) / speed2;
        let normal: Vec<f64> = r.iter().zip(&cd).map(|(a, b)| a - tangential * b).collect();
        Ok(g.bilinear(&normal, &normal).sqrt() / speed2)
    }

    /// Samples of `φ` on a square grid in the plane spanned by `ċ(t0)` and `w_1(t0)`.
    pub fn grid(&self, t0: f64, half_width: f64, points: usize) -> Result<PhiGrid> {
        let [c, cd, _] = self.curve.jet(t0)?;
        let (x, v) = self.curve.tube.center_jets(t0)?;
        let w = self.curve.tube.frame(&x, &v)?.swap_remove(0);
        let w: Vec<f64> = w.iter().map(|c| c.re.re).collect();
        let e1: Vec<f64> = cd.iter().map(|c| c / norm(&cd)).collect();
        let p = dot(&w, &e1);
        let e2: Vec<f64> = w.iter().zip(&e1).map(|(a, b)| a - p * b).collect();
        let e2n = norm(&e2);
        let e2: Vec<f64> = e2.iter().map(|c| c / e2n).collect();
        let coords: Vec<f64> = (0..points)
            .map(|k| -half_width + 2.0 * half_width * k as f64 / (points - 1).max(1) as f64)
            .collect();
        let mut values = Vec::with_capacity(points);
        for &b in &coords {
            let mut row = Vec::with_capacity(points);
            for &a in &coords {
                let x: Vec<f64> = (0..c.len()).map(|i| c[i] + a * e1[i] + b * e2[i]).collect();
                row.push(self.value(&x)?);
            }
            values.push(row);
        }
        Ok(PhiGrid {
            origin: c,
            axis_u: e1,
            axis_v: e2,
            coords,
            values,
        })
    }
}

impl ScalarField for ConformalPerturbation {
    /// `φ(x) = β(d²/ρ²) ⟨∇φ(c(t*)), x − c(t*)⟩` with `t*` the nearest parameter.
    fn value(&self, x: &[f64]) -> Result<f64> {
        let (t, d) = self.project(x)?;
        let q = dot(&d, &d) / (self.rho * self.rho);
        if q >= 1.0 || !self.in_support(t) {
            return Ok(0.0);
        }
        let a = self.required_gradient(t)?;
        Ok(self.cutoff(q).0 * dot(&a, &d))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let (t, d) = self.project(x)?;
        let q = dot(&d, &d) / (self.rho * self.rho);
        if q >= 1.0 || !self.in_support(t) {
            return Ok(vec![0.0; n]);
        }
        let a = self.required_gradient(t)?;
        let [_, cd, cdd] = self.curve.jet(t)?;
        // ∂_t a by central differences; it only enters off the curve.
        let h = 1e-5 * self.curve.tube.eta;
        let ap = self.required_gradient(t + h)?;
        let am = self.required_gradient(t - h)?;
        let da: Vec<f64> = ap
            .iter()
            .zip(&am)
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect();
        let lin = dot(&a, &d);
        let (beta, dbeta) = self.cutoff(q);
        let denom = dot(&cd, &cd) - dot(&cdd, &d);
        let coef = (dot(&da, &d) - dot(&a, &cd)) / denom;
        Ok((0..n)
            .map(|i| {
                let dq = 2.0 * d[i] / (self.rho * self.rho);
                let dlin = a[i] + coef * cd[i];
                dbeta * dq * lin + beta * dlin
            })
            .collect())
    }
}

/// Sampled conformal factor for export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiGrid {
    pub origin: Vec<f64>,
    pub axis_u: Vec<f64>,
    pub axis_v: Vec<f64>,
    pub coords: Vec<f64>,
    /// `values[j][i]` at `origin + coords[i]·axis_u + coords[j]·axis_v`.
    pub values: Vec<Vec<f64>>,
}

/// `Ũ = (1 − e^φ)E + e^φ U`.
#[derive(Debug, Clone)]
pub struct PerturbedPotential {
    phi: Arc<ConformalPerturbation>,
    base: Potential,
    energy: f64,
}

impl PerturbedPotential {
    pub fn phi(&self) -> &ConformalPerturbation {
        &self.phi
    }
}

impl ScalarField for PerturbedPotential {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let e = self.phi.value(x)?.exp();
        Ok((1.0 - e) * self.energy + e * self.base.value(x)?)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let e = self.phi.value(x)?.exp();
        let u = self.base.value(x)?;
        let du = self.base.gradient(x)?;
        let dphi = self.phi.gradient(x)?;
        Ok((0..x.len())
            .map(|i| e * ((u - self.energy) * dphi[i] + du[i]))
            .collect())
    }
}

/// System with `U` replaced by `Ũ`.
pub fn perturbed_potential(spec: &SystemSpec, phi: Arc<ConformalPerturbation>) -> SystemSpec {
    let field = PerturbedPotential {
        phi,
        base: spec.potential.clone(),
        energy: spec.energy,
    };
    spec.with_potential(Potential::Composite(Arc::new(field)))
}

/// Largest `|e^φ·2(E − U)F² − 2(E − Ũ)F²|`, relative to `1 + |lhs|`.
pub fn identity_residual(
    spec: &SystemSpec,
    perturbed: &SystemSpec,
    phi: &ConformalPerturbation,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    let e = spec.energy;
    let mut worst: f64 = 0.0;
    for (x, v) in samples {
        let f2 = spec.metric.f2(x, v)?;
        let lhs = phi.value(x)?.exp() * 2.0 * (e - spec.potential.value(x)?) * f2;
        let rhs = 2.0 * (e - perturbed.potential.value(x)?) * f2;
        worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
    }
    Ok(worst)
}

/// Outcome of re-running detection and dynamics on the perturbed data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalReport {
    pub displacement: f64,
    /// Minimal distance between the displaced curve and the other strand.
    pub gap: f64,
    pub required_gap: f64,
    pub intersections: IntersectionReport,
    /// Distance between the shot orbit's end and the curve's end.
    pub shooting_endpoint_error: f64,
    /// Largest distance of the shot orbit from the displaced curve.
    pub shooting_max_deviation: f64,
    pub displaced_length: f64,
    pub center_length: f64,
}

/// Check that the displaced curve misses `other`, and that the perturbed
/// Lagrangian system, shot from the curve's start, follows the curve.
pub fn verify_removal(
    phi: Arc<ConformalPerturbation>,
    other: &Trajectory,
    settings: &IntersectionSettings,
    tol: &Tolerances,
) -> Result<RemovalReport> {
    let curve = phi.curve().clone();
    let tube = curve.tube.clone();
    let spec = tube.jm.spec().clone();
    let n = spec.dimension();
    let traj = curve.to_trajectory(4000)?;
    let approach = closest_approach(&traj, other, settings)?;
    let intersections = curve_intersections(&traj, other, settings)?;
    let required = 0.5 * curve.s;

    let perturbed = perturbed_potential(&spec, phi.clone());
    let l = tube.half_length();
    let [c0, d0, _] = curve.jet(-l)?;
    let [c1, d1, _] = curve.jet(l)?;
    let ke = spec.energy - spec.potential.value(&c0)?;
    let scale = (2.0 * ke / spec.metric.f2(&c0, &d0)?).sqrt();
    let v0: Vec<f64> = d0.iter().map(|c| c * scale).collect();
    let end = Event::new("end", Direction::Rising, true, |_, y: &[f64]| {
        Ok(dot(&d1, &sub(&y[..n], &c1)))
    });
    let t_max = 4.0 * l / scale.min(1.0) * 4.0;
    // φ lives in thin tubes after a force-free stretch; cap the step so the
    // integrator cannot jump over them.
    let capped = tol.with_h_max(tol.h_max.min(0.05 * tube.eps / scale));
    let orbit = integrate(
        &perturbed,
        &PhaseState::new(c0, v0),
        (0.0, t_max),
        &capped,
        &[end],
    )?;
    let last = orbit.last();
    let endpoint = norm(&spec.space().minimal_image(&sub(&last.x, &c1)));
    let mut deviation: f64 = 0.0;
    for y in &orbit.states {
        deviation = deviation.max(norm(&phi.project(&y[..n])?.1));
    }
    let center = DisplacedCurve::new(tube.clone(), 0.0)?;
    let report = RemovalReport {
        displacement: curve.s,
        gap: approach.gap,
        required_gap: required,
        intersections,
        shooting_endpoint_error: endpoint,
        shooting_max_deviation: deviation,
        displaced_length: curve.length(4000)?,
        center_length: center.length(4000)?,
    };
    if report.gap < required {
        return Err(Error::GapCriterion {
            gap: report.gap,
            required,
        });
    }
    Ok(report)
}
