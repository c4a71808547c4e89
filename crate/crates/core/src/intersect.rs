//! Self- and mutual intersections of periodic orbits.
//!
//! Orbits are resampled into polylines from dense output. Candidate segment
//! pairs come from a uniform spatial hash (or, as an oracle, from all pairs),
//! then each candidate is refined on the dense output by Levenberg–Marquardt
//! on `γ(s) − γ*(t)` and classified by the angle between the velocities.
//!
//! A brake orbit retraces itself, so every point is met twice with opposite
//! velocities. Only the half arc between the two rest points is searched; the
//! retrace is reported as one `reversal` pair after checking it numerically.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::expr::dual::dot;
use crate::geometry::Space;
use crate::linalg::norm;
use crate::orbits::{OrbitKind, PeriodicOrbit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionKind {
    DoublePoint,
    Reversal,
    Tangential,
    /// Closest approach between `tol_space` and twice the candidate radius.
    NearMiss,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersectionPair {
    pub s: f64,
    pub t: f64,
    pub point: Vec<f64>,
    pub kind: IntersectionKind,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersectionReport {
    pub pairs: Vec<IntersectionPair>,
    /// Number of distinct transversal crossing points.
    pub dp_count: usize,
    pub reversal_count: usize,
    pub tangential_count: usize,
    pub near_miss_count: usize,
    /// Candidate segment pairs passed to refinement.
    pub candidate_count: usize,
    pub tol_space: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    SpatialHash,
    BruteForce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntersectionSettings {
    /// Absolute refinement tolerance; `None` means `1e-6 · diameter`.
    pub tol_space: Option<f64>,
    pub tol_angle: f64,
    /// Target number of polyline segments per diameter.
    pub resolution: f64,
    pub detector: Detector,
}

impl Default for IntersectionSettings {
    fn default() -> Self {
        IntersectionSettings {
            tol_space: None,
            tol_angle: 1e-3,
            resolution: 1500.0,
            detector: Detector::SpatialHash,
        }
    }
}

/// The searched parameter range of one orbit.
struct Strand<'a> {
    traj: &'a Trajectory,
    start: f64,
    end: f64,
    closed: bool,
}

impl<'a> Strand<'a> {
    fn of(orbit: &'a PeriodicOrbit) -> Self {
        match orbit.kind {
            OrbitKind::Brake => Strand {
                traj: &orbit.trajectory,
                start: 0.0,
                end: 0.5 * orbit.period,
                closed: false,
            },
            OrbitKind::Rotation => Strand {
                traj: &orbit.trajectory,
                start: 0.0,
                end: orbit.period,
                closed: true,
            },
        }
    }

    fn open(traj: &'a Trajectory) -> Self {
        Strand {
            traj,
            start: traj.t_start(),
            end: traj.t_end(),
            closed: false,
        }
    }

    fn span(&self) -> f64 {
        self.end - self.start
    }

    fn normalize(&self, s: f64) -> f64 {
        if self.closed {
            self.start + (s - self.start).rem_euclid(self.span())
        } else {
            s.clamp(self.start, self.end)
        }
    }

    fn position(&self, s: f64) -> Vec<f64> {
        self.traj.position_at(self.normalize(s))
    }

    fn velocity(&self, s: f64) -> Vec<f64> {
        self.traj.velocity_at(self.normalize(s))
    }

    fn max_speed(&self) -> f64 {
        self.traj
            .states
            .iter()
            .map(|y| norm(&y[self.traj.dimension..]))
            .fold(0.0, f64::max)
    }
}

/// Uniform-in-time resampling of a strand.
pub struct Polyline {
    /// Sample times.
    pub times: Vec<f64>,
    /// Sample positions (cover coordinates).
    pub points: Vec<Vec<f64>>,
    /// Cumulative arc length at each sample.
    pub arc: Vec<f64>,
    pub closed: bool,
    /// Wrapped segment starts and minimal-image segment vectors.
    starts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Polyline {
    fn sample(strand: &Strand, step: f64) -> Self {
        let vmax = strand.max_speed().max(1e-300);
        let count = ((strand.span() * vmax / step).ceil() as usize).max(8);
        let times: Vec<f64> = (0..=count)
            .map(|k| strand.start + strand.span() * k as f64 / count as f64)
            .collect();
        let points: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| strand.traj.position_at(t.min(strand.end)))
            .collect();
        Self::from_points(&strand.traj.space, times, points, strand.closed)
    }

    /// Polyline through `points` (cover coordinates) sampled at `times`.
    pub fn from_points(
        space: &Space,
        times: Vec<f64>,
        points: Vec<Vec<f64>>,
        closed: bool,
    ) -> Self {
        assert!(points.len() >= 2 && times.len() == points.len());
        let deltas: Vec<Vec<f64>> = points
            .windows(2)
            .map(|w| space.minimal_image(&crate::linalg::sub(&w[1], &w[0])))
            .collect();
        let mut arc = vec![0.0];
        for d in &deltas {
            arc.push(arc.last().unwrap() + norm(d));
        }
        let starts = points[..points.len() - 1]
            .iter()
            .map(|p| space.wrap(p))
            .collect();
        Polyline {
            times,
            points,
            arc,
            closed,
            starts,
            deltas,
        }
    }

    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    fn max_segment(&self) -> f64 {
        self.arc.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Arc length strictly between segments `i < j` (cyclic when closed).
    fn arc_gap(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let inner = (self.arc[j] - self.arc[i + 1]).max(0.0);
        if self.closed {
            inner.min((self.length() - (self.arc[j + 1] - self.arc[i])).max(0.0))
        } else {
            inner
        }
    }

    /// Arc length between two parameters (cyclic when closed).
    fn arc_between(&self, s: f64, t: f64) -> f64 {
        let d = (self.arc_at(s) - self.arc_at(t)).abs();
        if self.closed {
            d.min(self.length() - d)
        } else {
            d
        }
    }

    fn arc_at(&self, s: f64) -> f64 {
        let t0 = self.times[0];
        let dt = self.times[1] - t0;
        let x = ((s - t0) / dt).clamp(0.0, self.segments() as f64);
        let k = (x.floor() as usize).min(self.segments() - 1);
        let f = x - k as f64;
        self.arc[k] + f * (self.arc[k + 1] - self.arc[k])
    }
}

/// Closest points of segments `a0 + u·da` and `b0 + v·db`, `u, v ∈ [0, 1]`.
fn segment_closest(a0: &[f64], da: &[f64], b0: &[f64], db: &[f64]) -> (f64, f64, f64) {
    let r: Vec<f64> = a0.iter().zip(b0).map(|(a, b)| a - b).collect();
    let aa = dot(da, da);
    let bb = dot(db, db);
    let ab = dot(da, db);
    let ar = dot(da, &r);
    let br = dot(db, &r);
    let (mut u, mut v);
    if aa <= 1e-300 && bb <= 1e-300 {
        u = 0.0;
        v = 0.0;
    } else if aa <= 1e-300 {
        u = 0.0;
        v = (br / bb).clamp(0.0, 1.0);
    } else if bb <= 1e-300 {
        v = 0.0;
        u = (-ar / aa).clamp(0.0, 1.0);
    } else {
        let den = aa * bb - ab * ab;
        u = if den > 1e-14 * aa * bb {
            ((ab * br - ar * bb) / den).clamp(0.0, 1.0)
        } else {
            0.0
        };
        v = (ab * u + br) / bb;
        if v < 0.0 {
            v = 0.0;
            u = (-ar / aa).clamp(0.0, 1.0);
        } else if v > 1.0 {
            v = 1.0;
            u = ((ab - ar) / aa).clamp(0.0, 1.0);
        }
    }
    let d: Vec<f64> = (0..r.len()).map(|i| r[i] + u * da[i] - v * db[i]).collect();
    (u, v, norm(&d))
}

struct Geometry<'a> {
    space: &'a Space,
}

impl Geometry<'_> {
    fn diff(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.space.minimal_image(&crate::linalg::sub(a, b))
    }

    fn segment<'p>(&self, p: &'p Polyline, k: usize) -> (&'p [f64], &'p [f64]) {
        (&p.starts[k], &p.deltas[k])
    }

    /// Lower bound on the distance between two segments from per-axis gaps.
    fn axis_gap(&self, pa: &Polyline, i: usize, pb: &Polyline, j: usize) -> f64 {
        let (a0, da) = self.segment(pa, i);
        let (b0, db) = self.segment(pb, j);
        let mut worst: f64 = 0.0;
        for k in 0..a0.len() {
            let mut shift = b0[k] - a0[k];
            if let Space::Torus { periods } = self.space {
                shift -= periods[k] * (shift / periods[k]).round();
            }
            let (alo, ahi) = (da[k].min(0.0), da[k].max(0.0));
            let (blo, bhi) = (shift + db[k].min(0.0), shift + db[k].max(0.0));
            worst = worst.max(blo - ahi).max(alo - bhi);
        }
        worst
    }

    /// Distance between segments with the closest-point fractions.
    fn segment_distance(
        &self,
        pa: &Polyline,
        i: usize,
        pb: &Polyline,
        j: usize,
    ) -> (f64, f64, f64) {
        let (a0, da) = self.segment(pa, i);
        let (b0, db) = self.segment(pb, j);
        let shift = self.diff(b0, a0);
        let b0: Vec<f64> = a0.iter().zip(&shift).map(|(a, s)| a + s).collect();
        segment_closest(a0, da, &b0, db)
    }

    /// Hash cells touched by segment `k` padded by `pad`. On a torus each
    /// axis uses a cell edge dividing the period and indices wrap.
    fn cells(&self, p: &Polyline, k: usize, cell: &[f64], pad: f64) -> Vec<Vec<i64>> {
        let (a0, d) = self.segment(p, k);
        let n = a0.len();
        let ranges: Vec<(i64, i64)> = (0..n)
            .map(|i| {
                let lo = a0[i].min(a0[i] + d[i]) - pad;
                let hi = a0[i].max(a0[i] + d[i]) + pad;
                ((lo / cell[i]).floor() as i64, (hi / cell[i]).floor() as i64)
            })
            .collect();
        let wraps: Option<Vec<i64>> = match self.space {
            Space::Torus { periods } => Some(
                periods
                    .iter()
                    .zip(cell)
                    .map(|(l, c)| (l / c).round() as i64)
                    .collect(),
            ),
            Space::Euclidean => None,
        };
        let mut out = BTreeSet::new();
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        loop {
            let key = match &wraps {
                Some(m) => idx.iter().zip(m).map(|(c, m)| c.rem_euclid(*m)).collect(),
                None => idx.clone(),
            };
            out.insert(key);
            let mut axis = 0;
            loop {
                if axis == n {
                    return out.into_iter().collect();
                }
                idx[axis] += 1;
                if idx[axis] <= ranges[axis].1 {
                    break;
                }
                idx[axis] = ranges[axis].0;
                axis += 1;
            }
        }
    }

    fn cell_sizes(&self, n: usize, wanted: f64) -> Vec<f64> {
        match self.space {
            Space::Torus { periods } => periods
                .iter()
                .map(|l| l / (l / wanted).floor().max(1.0))
                .collect(),
            Space::Euclidean => vec![wanted; n],
        }
    }
}
/// Candidate segment pairs `(i, j)` within distance `r_cap`. With `b = None`
/// the pairs come from one polyline, `i < j`, excluding neighbours closer
/// than `3 r_cap` in arc length.
pub fn candidate_pairs(
    space: &Space,
    a: &Polyline,
    b: Option<&Polyline>,
    r_cap: f64,
    detector: Detector,
) -> BTreeSet<(usize, usize)> {
    let geo = Geometry { space };
    let other = b.unwrap_or(a);
    let keep = |i: usize, j: usize| -> bool {
        if b.is_none() && (j <= i || a.arc_gap(i, j) < 3.0 * r_cap) {
            return false;
        }
        geo.axis_gap(a, i, other, j) < r_cap && geo.segment_distance(a, i, other, j).2 < r_cap
    };
    let mut out = BTreeSet::new();
    match detector {
        Detector::BruteForce => {
            for i in 0..a.segments() {
                for j in 0..other.segments() {
                    if keep(i, j) {
                        out.insert((i, j));
                    }
                }
            }
        }
        Detector::SpatialHash => {
            // Padding by r_cap/2 on each side: segments closer than r_cap
            // share at least one cell.
            let n = a.points[0].len();
            let cell = geo.cell_sizes(
                n,
                a.max_segment().max(other.max_segment()).max(r_cap) + r_cap,
            );
            let mut grid: HashMap<Vec<i64>, (Vec<usize>, Vec<usize>)> = HashMap::new();
            for i in 0..a.segments() {
                for c in geo.cells(a, i, &cell, 0.5 * r_cap) {
                    grid.entry(c).or_default().0.push(i);
                }
            }
            if b.is_some() {
                for j in 0..other.segments() {
                    for c in geo.cells(other, j, &cell, 0.5 * r_cap) {
                        grid.entry(c).or_default().1.push(j);
                    }
                }
            }
            for (list_a, list_b) in grid.values() {
                let list_b = if b.is_some() { list_b } else { list_a };
                for &i in list_a {
                    for &j in list_b {
                        if !out.contains(&(i, j)) && keep(i, j) {
                            out.insert((i, j));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Levenberg–Marquardt on `a(s) − b(t)`; returns `(s, t, gap)`.
fn refine(geo: &Geometry, a: &Strand, b: &Strand, mut s: f64, mut t: f64) -> (f64, f64, f64) {
    let residual = |s: f64, t: f64| geo.diff(&a.position(s), &b.position(t));
    let mut r = residual(s, t);
    let mut rn = norm(&r);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        if rn == 0.0 {
            break;
        }
        let ja = a.velocity(s);
        let jb: Vec<f64> = b.velocity(t).iter().map(|c| -c).collect();
        let (m00, m01, m11) = (dot(&ja, &ja), dot(&ja, &jb), dot(&jb, &jb));
        let (g0, g1) = (dot(&ja, &r), dot(&jb, &r));
        let mut improved = false;
        while lambda < 1e12 {
            let a00 = m00 * (1.0 + lambda) + 1e-300;
            let a11 = m11 * (1.0 + lambda) + 1e-300;
            let det = a00 * a11 - m01 * m01;
            if det <= 0.0 {
                lambda *= 4.0;
                continue;
            }
            let ds = -(a11 * g0 - m01 * g1) / det;
            let dt = -(a00 * g1 - m01 * g0) / det;
            let (s1, t1) = (a.normalize(s + ds), b.normalize(t + dt));
            let r1 = residual(s1, t1);
            let n1 = norm(&r1);
            if n1 < rn {
                let small = (s1 - s).abs() + (t1 - t).abs() <= 1e-15 * (1.0 + s.abs() + t.abs());
                s = s1;
                t = t1;
                r = r1;
                rn = n1;
                lambda = (lambda / 3.0).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (s, t, rn)
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 1e-12).then(|| v.iter().map(|c| c / n).collect())
}

fn classify(va: &[f64], vb: &[f64], tol_angle: f64) -> IntersectionKind {
    match (unit(va), unit(vb)) {
        (Some(ua), Some(ub)) => {
            let c = dot(&ua, &ub).clamp(-1.0, 1.0);
            let angle = c.acos();
            if std::f64::consts::PI - angle < tol_angle {
                IntersectionKind::Reversal
            } else if angle < tol_angle {
                IntersectionKind::Tangential
            } else {
                IntersectionKind::DoublePoint
            }
        }
        // Meeting at a rest point: the crossing cannot be certified.
        _ => IntersectionKind::Tangential,
    }
}

fn diameter(curves: &[&Trajectory]) -> f64 {
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    for c in curves {
        let n = c.dimension;
        for y in &c.states {
            if lo.is_empty() {
                lo = y[..n].to_vec();
                hi = y[..n].to_vec();
            }
            for i in 0..n {
                lo[i] = lo[i].min(y[i]);
                hi[i] = hi[i].max(y[i]);
            }
        }
    }
    let mut d: Vec<f64> = hi.iter().zip(&lo).map(|(h, l)| h - l).collect();
    if let Space::Torus { periods } = &curves[0].space {
        for (di, l) in d.iter_mut().zip(periods) {
            *di = di.min(*l);
        }
    }
    norm(&d)
}

struct Context {
    tol_space: f64,
    r_cap: f64,
    step: f64,
}

fn context(curves: &[&Trajectory], settings: &IntersectionSettings) -> Result<Context> {
    let diam = diameter(curves);
    if !(diam > 0.0) || !diam.is_finite() {
        return Err(Error::Precondition("orbit has zero extent".into()));
    }
    if !(settings.resolution >= 10.0) || !(settings.tol_angle > 0.0) {
        return Err(Error::InvalidParameter(
            "resolution ≥ 10 and tol_angle > 0 required".into(),
        ));
    }
    let step = diam / settings.resolution;
    let tol_space = settings.tol_space.unwrap_or(1e-6 * diam);
    Ok(Context {
        tol_space,
        r_cap: step,
        step,
    })
}

#[allow(clippy::too_many_arguments)]
fn collect(
    geo: &Geometry,
    a: &Strand,
    b: &Strand,
    pa: &Polyline,
    pb: &Polyline,
    candidates: &BTreeSet<(usize, usize)>,
    same: bool,
    ctx: &Context,
    tol_angle: f64,
) -> Vec<IntersectionPair> {
    let mut found: Vec<IntersectionPair> = Vec::new();
    for &(i, j) in candidates {
        let (u, v, _) = geo.segment_distance(pa, i, pb, j);
        let s0 = pa.times[i] + u * (pa.times[i + 1] - pa.times[i]);
        let t0 = pb.times[j] + v * (pb.times[j + 1] - pb.times[j]);
        let (mut s, mut t, gap) = refine(geo, a, b, s0, t0);
        if same {
            if pa.arc_between(s, t) < ctx.r_cap {
                continue;
            }
            if s > t {
                std::mem::swap(&mut s, &mut t);
            }
        }
        if gap > 2.0 * ctx.r_cap {
            continue;
        }
        let kind = if gap <= ctx.tol_space {
            classify(&a.velocity(s), &b.velocity(t), tol_angle)
        } else {
            IntersectionKind::NearMiss
        };
        let dup = found.iter().any(|p| {
            let close = |x: f64, y: f64, strand: &Strand| {
                let d = (x - y).abs();
                let d = if strand.closed {
                    d.min(strand.span() - d)
                } else {
                    d
                };
                d < 1e-6 * strand.span()
            };
            close(p.s, s, a) && close(p.t, t, b)
        });
        if !dup {
            found.push(IntersectionPair {
                s,
                t,
                point: geo.space.wrap(&a.position(s)),
                kind,
                gap,
            });
        }
    }
    found
}

fn summarize(
    mut pairs: Vec<IntersectionPair>,
    candidate_count: usize,
    ctx: &Context,
    space: &Space,
) -> IntersectionReport {
    pairs.sort_by(|p, q| p.s.total_cmp(&q.s).then(p.t.total_cmp(&q.t)));
    let count = |k: IntersectionKind| pairs.iter().filter(|p| p.kind == k).count();
    let mut points: Vec<&Vec<f64>> = Vec::new();
    for p in pairs
        .iter()
        .filter(|p| p.kind == IntersectionKind::DoublePoint)
    {
        let seen = points.iter().any(|q| {
            norm(&space.minimal_image(&crate::linalg::sub(q, &p.point))) < 10.0 * ctx.tol_space
        });
        if !seen {
            points.push(&p.point);
        }
    }
    IntersectionReport {
        dp_count: points.len(),
        reversal_count: count(IntersectionKind::Reversal),
        tangential_count: count(IntersectionKind::Tangential),
        near_miss_count: count(IntersectionKind::NearMiss),
        candidate_count,
        tol_space: ctx.tol_space,
        pairs,
    }
}

/// Self-intersections of a periodic orbit.
pub fn self_intersections(
    orbit: &PeriodicOrbit,
    settings: &IntersectionSettings,
) -> Result<IntersectionReport> {
    let ctx = context(&[&orbit.trajectory], settings)?;
    let geo = Geometry {
        space: orbit.space(),
    };
    let strand = Strand::of(orbit);
    let poly = Polyline::sample(&strand, ctx.step);
    let candidates = candidate_pairs(geo.space, &poly, None, ctx.r_cap, settings.detector);
    let mut pairs = collect(
        &geo,
        &strand,
        &strand,
        &poly,
        &poly,
        &candidates,
        true,
        &ctx,
        settings.tol_angle,
    );
    match orbit.kind {
        OrbitKind::Rotation => {
            if let Some(p) = pairs.iter().find(|p| {
                matches!(
                    p.kind,
                    IntersectionKind::Tangential | IntersectionKind::Reversal
                )
            }) {
                return Err(Error::Ambiguous(format!(
                    "non-transversal self-contact of a rotation at s = {}, t = {}",
                    p.s, p.t
                )));
            }
        }
        OrbitKind::Brake => {
            let tau = orbit.period;
            let (s, t) = (0.25 * tau, 0.75 * tau);
            let traj = &orbit.trajectory;
            let mut worst: f64 = 0.0;
            for k in 1..64 {
                let u = 0.5 * tau * k as f64 / 64.0;
                worst = worst.max(norm(
                    &geo.diff(&traj.position_at(u), &traj.position_at(tau - u)),
                ));
            }
            if worst > ctx.tol_space.max(1e-7) {
                return Err(Error::Invariant(format!(
                    "brake orbit does not retrace itself (deviation {worst:e})"
                )));
            }
            pairs.push(IntersectionPair {
                s,
                t,
                point: geo.space.wrap(&traj.position_at(s)),
                kind: classify(
                    &traj.velocity_at(s),
                    &traj.velocity_at(t),
                    settings.tol_angle,
                ),
                gap: norm(&geo.diff(&traj.position_at(s), &traj.position_at(t))),
            });
        }
    }
    Ok(summarize(pairs, candidates.len(), &ctx, geo.space))
}

/// Intersections between two orbits of the same system.
pub fn mutual_intersections(
    a: &PeriodicOrbit,
    b: &PeriodicOrbit,
    settings: &IntersectionSettings,
) -> Result<IntersectionReport> {
    if a.space() != b.space() || a.dimension() != b.dimension() {
        return Err(Error::Precondition(
            "orbits live in different spaces".into(),
        ));
    }
    let ctx = context(&[&a.trajectory, &b.trajectory], settings)?;
    let geo = Geometry { space: a.space() };
    let (sa, sb) = (Strand::of(a), Strand::of(b));
    let (pa, pb) = (
        Polyline::sample(&sa, ctx.step),
        Polyline::sample(&sb, ctx.step),
    );
    let candidates = candidate_pairs(geo.space, &pa, Some(&pb), ctx.r_cap, settings.detector);
    let pairs = collect(
        &geo,
        &sa,
        &sb,
        &pa,
        &pb,
        &candidates,
        false,
        &ctx,
        settings.tol_angle,
    );
    Ok(summarize(pairs, candidates.len(), &ctx, geo.space))
}

/// Intersections between two open curves over their full time spans.
pub fn curve_intersections(
    a: &Trajectory,
    b: &Trajectory,
    settings: &IntersectionSettings,
) -> Result<IntersectionReport> {
    if a.space != b.space || a.dimension != b.dimension {
        return Err(Error::Precondition(
            "curves live in different spaces".into(),
        ));
    }
    let ctx = context(&[a, b], settings)?;
    let geo = Geometry { space: &a.space };
    let (sa, sb) = (Strand::open(a), Strand::open(b));
    let (pa, pb) = (
        Polyline::sample(&sa, ctx.step),
        Polyline::sample(&sb, ctx.step),
    );
    let candidates = candidate_pairs(geo.space, &pa, Some(&pb), ctx.r_cap, settings.detector);
    let pairs = collect(
        &geo,
        &sa,
        &sb,
        &pa,
        &pb,
        &candidates,
        false,
        &ctx,
        settings.tol_angle,
    );
    Ok(summarize(pairs, candidates.len(), &ctx, geo.space))
}

/// Closest approach of two open curves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Approach {
    pub s: f64,
    pub t: f64,
    pub gap: f64,
}

/// Global minimum of `|a(s) − b(t)|`: best polyline segment pair, then
/// refinement on the dense output.
pub fn closest_approach(
    a: &Trajectory,
    b: &Trajectory,
    settings: &IntersectionSettings,
) -> Result<Approach> {
    let ctx = context(&[a, b], settings)?;
    let geo = Geometry { space: &a.space };
    let (sa, sb) = (Strand::open(a), Strand::open(b));
    let (pa, pb) = (
        Polyline::sample(&sa, ctx.step),
        Polyline::sample(&sb, ctx.step),
    );
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..pa.segments() {
        for j in 0..pb.segments() {
            let (u, v, d) = geo.segment_distance(&pa, i, &pb, j);
            if d < best.0 {
                let s = pa.times[i] + u * (pa.times[i + 1] - pa.times[i]);
                let t = pb.times[j] + v * (pb.times[j + 1] - pb.times[j]);
                best = (d, s, t);
            }
        }
    }
    let (s, t, gap) = refine(&geo, &sa, &sb, best.1, best.2);
    Ok(Approach { s, t, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{PhaseState, SystemSpec};
    use crate::expr::parse;
    use crate::geometry::MetricModel;
    use crate::orbits::{find_brake, orbit_from_initial_state, ShootingSettings};
    use crate::reference::OscillatorSpec;
    use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};

    fn brute() -> IntersectionSettings {
        IntersectionSettings {
            detector: Detector::BruteForce,
            ..Default::default()
        }
    }

    #[test]
    fn segment_distance_cases() {
        let (u, v, d) = segment_closest(&[0.0, 0.0], &[2.0, 0.0], &[1.0, -1.0], &[0.0, 2.0]);
        assert!((u - 0.5).abs() < 1e-15 && (v - 0.5).abs() < 1e-15 && d < 1e-15);
        let (_, _, d) = segment_closest(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]);
        assert!((d - 1.0).abs() < 1e-15);
        let (_, _, d) = segment_closest(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 4.0], &[0.0, 0.0]);
        assert!((d - 20f64.sqrt()).abs() < 1e-15);
    }

    fn oscillator_orbits() -> Vec<PeriodicOrbit> {
        let o = OscillatorSpec::new(vec![1.0, SQRT_2], 0.5).unwrap();
        let spec = o.system().unwrap();
        let s = ShootingSettings::default();
        vec![
            find_brake(&spec, &[1.0, 0.0], &s).unwrap(),
            find_brake(&spec, &[0.0, 1.0 / SQRT_2], &s).unwrap(),
        ]
    }

    #[test]
    fn brake_orbits_are_simple_and_cross_at_origin() {
        let orbits = oscillator_orbits();
        for o in &orbits {
            let rep = self_intersections(o, &Default::default()).unwrap();
            assert_eq!(rep.dp_count, 0);
            assert_eq!(rep.reversal_count, 1);
            assert_eq!(rep, self_intersections(o, &brute()).unwrap());
        }
        let ab = mutual_intersections(&orbits[0], &orbits[1], &Default::default()).unwrap();
        assert_eq!(ab.pairs.len(), 1);
        assert_eq!(ab.dp_count, 1);
        assert!(norm(&ab.pairs[0].point) < ab.tol_space);
        assert_eq!(
            ab,
            mutual_intersections(&orbits[0], &orbits[1], &brute()).unwrap()
        );
        let ba = mutual_intersections(&orbits[1], &orbits[0], &Default::default()).unwrap();
        assert!((ab.pairs[0].s - ba.pairs[0].t).abs() < 1e-9);
        assert!((ab.pairs[0].t - ba.pairs[0].s).abs() < 1e-9);
    }

    fn lissajous(s: f64) -> PeriodicOrbit {
        let o = OscillatorSpec::resonant([1, 2], 1.0, &[], 1.0).unwrap();
        let a = [1.0, 0.5];
        let spec = o.system().unwrap().with_energy(o.lissajous_energy(a));
        let start = o.lissajous(a, s, 0.0).unwrap();
        orbit_from_initial_state(
            &spec,
            &start,
            o.lissajous_period().unwrap(),
            &ShootingSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn figure_eight_has_one_double_point() {
        let orbit = lissajous(FRAC_PI_4);
        assert_eq!(orbit.kind, OrbitKind::Rotation);
        let rep = self_intersections(&orbit, &Default::default()).unwrap();
        assert_eq!(rep.dp_count, 1, "{rep:?}");
        assert!(norm(&rep.pairs[0].point) < rep.tol_space);
        assert_eq!(rep, self_intersections(&orbit, &brute()).unwrap());
    }

    #[test]
    fn parabola_member_retraces() {
        let rep = self_intersections(&lissajous(0.0), &Default::default()).unwrap();
        assert_eq!(rep.dp_count, 0);
        assert_eq!(rep.reversal_count, 1);
    }

    fn torus_rotation(offset: f64) -> PeriodicOrbit {
        let space = Space::Torus {
            periods: vec![2.0 * PI, 2.0 * PI],
        };
        let spec = SystemSpec::new(
            MetricModel::euclidean(2, space).unwrap(),
            parse("0", 2).unwrap(),
            0.5,
        )
        .unwrap();
        let st = PhaseState::new(vec![0.0, offset], vec![1.0, 0.0]);
        orbit_from_initial_state(&spec, &st, 2.0 * PI, &ShootingSettings::default()).unwrap()
    }

    #[test]
    fn torus_rotations() {
        let a = torus_rotation(0.0);
        let b = torus_rotation(PI);
        let rep = self_intersections(&a, &Default::default()).unwrap();
        assert!(rep.pairs.is_empty());
        let rep = mutual_intersections(&a, &b, &Default::default()).unwrap();
        assert!(rep.pairs.is_empty());
        assert_eq!(rep.candidate_count, 0);
    }

    #[test]
    fn seam_crossing_on_torus() {
        let space = Space::Torus {
            periods: vec![2.0 * PI, 2.0 * PI],
        };
        let spec = SystemSpec::new(
            MetricModel::euclidean(2, space).unwrap(),
            parse("0", 2).unwrap(),
            0.5,
        )
        .unwrap();
        let s = ShootingSettings::default();
        let a = orbit_from_initial_state(
            &spec,
            &PhaseState::new(vec![0.0, 0.0], vec![1.0, 0.0]),
            2.0 * PI,
            &s,
        )
        .unwrap();
        let b = orbit_from_initial_state(
            &spec,
            &PhaseState::new(vec![1.0, 1.0], vec![0.0, 1.0]),
            2.0 * PI,
            &s,
        )
        .unwrap();
        let rep = mutual_intersections(&a, &b, &Default::default()).unwrap();
        assert_eq!(rep.dp_count, 1);
        let p = &rep.pairs[0];
        assert!(
            (p.point[0] - 1.0).abs() < 1e-9
                && p.point[1].abs().min((p.point[1] - 2.0 * PI).abs()) < 1e-9
        );
        assert_eq!(rep, mutual_intersections(&a, &b, &brute()).unwrap());
    }
}
