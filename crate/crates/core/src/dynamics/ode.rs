//! Dormand–Prince 5(4) with PI step-size control, dense output and event
//! location, plus a fixed-step replay used for dual-number sensitivities.

use crate::error::{Error, Result};
use crate::expr::Real;

/// Right-hand side `y' = f(t, y)`, evaluable over any [`Real`].
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval<T: Real>(&self, t: T, y: &[T]) -> Result<Vec<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
    /// Largest step magnitude (`f64::INFINITY` for none).
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rel: 1e-10,
            abs: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }
}

impl Tolerances {
    pub fn new(rel: f64, abs: f64) -> Self {
        Tolerances {
            rel,
            abs,
            ..Default::default()
        }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel >= 1e-13 && self.rel < 1.0) || !(self.abs > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerances rel = {:e}, abs = {:e} out of range (rel ≥ 1e-13, abs > 0)",
                self.rel, self.abs
            )));
        }
        if !(self.h_max > 0.0) {
            return Err(Error::InvalidParameter("h_max must be positive".into()));
        }
        Ok(())
    }
}

/// Interpolant over one step.
#[derive(Debug, Clone, PartialEq)]
pub enum DenseSegment {
    /// Fourth-order continuous extension of the Dormand–Prince step.
    Dopri { t0: f64, h: f64, r: [Vec<f64>; 5] },
    /// Quintic Hermite interpolation of positions `x(t)` from `(x, x', x'')`
    /// at both ends. The state is `(x, x')`.
    Hermite5 {
        t0: f64,
        h: f64,
        x0: Vec<f64>,
        x1: Vec<f64>,
        d0: Vec<f64>,
        d1: Vec<f64>,
        a0: Vec<f64>,
        a1: Vec<f64>,
    },
}

impl DenseSegment {
    pub fn t0(&self) -> f64 {
        match self {
            DenseSegment::Dopri { t0, .. } | DenseSegment::Hermite5 { t0, .. } => *t0,
        }
    }

    pub fn t1(&self) -> f64 {
        match self {
            DenseSegment::Dopri { t0, h, .. } | DenseSegment::Hermite5 { t0, h, .. } => t0 + h,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = (self.t0().min(self.t1()), self.t0().max(self.t1()));
        t >= a && t <= b
    }

    /// State at `t` (may lie slightly outside the step).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        match self {
            DenseSegment::Dopri { t0, h, r } => {
                let th = (t - t0) / h;
                let th1 = 1.0 - th;
                (0..r[0].len())
                    .map(|i| {
                        r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))
                    })
                    .collect()
            }
            DenseSegment::Hermite5 {
                t0,
                h,
                x0,
                x1,
                d0,
                d1,
                a0,
                a1,
            } => {
                let s = (t - t0) / h;
                let (s2, s3) = (s * s, s * s * s);
                let (s4, s5) = (s3 * s, s3 * s2);
                // Quintic Hermite basis and derivatives on [0, 1].
                let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
                let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
                let h2 = 0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5;
                let h3 = 0.5 * s3 - s4 + 0.5 * s5;
                let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
                let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
                let dh0 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4;
                let dh1 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4;
                let dh2 = s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4;
                let dh3 = 1.5 * s2 - 4.0 * s3 + 2.5 * s4;
                let dh4 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4;
                let dh5 = -dh0;
                let n = x0.len();
                let mut out = Vec::with_capacity(2 * n);
                for i in 0..n {
                    out.push(
                        h0 * x0[i]
                            + h5 * x1[i]
                            + h * (h1 * d0[i] + h4 * d1[i])
                            + h * h * (h2 * a0[i] + h3 * a1[i]),
                    );
                }
                for i in 0..n {
                    out.push(
                        (dh0 * x0[i] + dh5 * x1[i]) / h
                            + dh1 * d0[i]
                            + dh4 * d1[i]
                            + h * (dh2 * a0[i] + dh3 * a1[i]),
                    );
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Either,
}

/// Event function `g(t, y)`.
pub type EventFn<'a> = Box<dyn Fn(f64, &[f64]) -> Result<f64> + 'a>;

/// Scalar event function `g(t, y)`; a hit is a sign change of `g`.
pub struct Event<'a> {
    pub name: String,
    pub g: EventFn<'a>,
    pub direction: Direction,
    pub terminal: bool,
}

impl<'a> Event<'a> {
    pub fn new(
        name: impl Into<String>,
        direction: Direction,
        terminal: bool,
        g: impl Fn(f64, &[f64]) -> Result<f64> + 'a,
    ) -> Self {
        Event {
            name: name.into(),
            g: Box::new(g),
            direction,
            terminal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventHit {
    pub index: usize,
    pub name: String,
    pub t: f64,
    pub y: Vec<f64>,
}

/// Output of an adaptive integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Accepted step endpoints, starting with `t0`.
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub segments: Vec<DenseSegment>,
    pub events: Vec<EventHit>,
    pub rejected: usize,
}

impl Solution {
    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn y_end(&self) -> &[f64] {
        self.y.last().unwrap()
    }

    /// Signed step sizes of the accepted steps.
    pub fn steps(&self) -> Vec<f64> {
        self.t.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Dense evaluation; clamps to the covered interval.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        locate(&self.segments, t)
            .map(|s| s.eval(t))
            .unwrap_or_else(|| self.y[0].clone())
    }
}

/// Segment covering `t` (binary search; clamps at the ends).
pub fn locate(segments: &[DenseSegment], t: f64) -> Option<&DenseSegment> {
    if segments.is_empty() {
        return None;
    }
    let forward = segments[0].t1() >= segments[0].t0();
    let idx = segments.partition_point(|s| if forward { s.t1() < t } else { s.t1() > t });
    Some(&segments[idx.min(segments.len() - 1)])
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Stages of one Dormand–Prince step over any scalar type. Returns the
/// fifth-order update and the seven stage derivatives (the last is FSAL).
fn dopri_step<T: Real, F: VectorField>(
    f: &F,
    t: f64,
    y: &[T],
    k1: Vec<T>,
    h: f64,
) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    let n = y.len();
    let mut k: Vec<Vec<T>> = Vec::with_capacity(7);
    k.push(k1);
    for s in 1..7 {
        let mut ys = y.to_vec();
        for (j, kj) in k.iter().enumerate() {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..n {
                    ys[i] += kj[i].scale(h * a);
                }
            }
        }
        if s == 6 {
            // Stage 7 is evaluated at the fifth-order solution (FSAL).
            let k7 = f.eval(T::cst(t + h), &ys)?;
            k.push(k7);
            return Ok((ys, k));
        }
        k.push(f.eval(T::cst(t + C[s] * h), &ys)?);
    }
    unreachable!()
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Adaptive integration from `t0` to `t1` (either direction).
pub fn integrate<F: VectorField>(
    f: &F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    tol: &Tolerances,
    events: &[Event<'_>],
) -> Result<Solution> {
    tol.validate()?;
    let n = f.dim();
    if y0.len() != n {
        return Err(Error::InvalidParameter(format!(
            "initial state has length {}, expected {n}",
            y0.len()
        )));
    }
    if !finite(y0) {
        return Err(Error::InvalidParameter("non-finite initial state".into()));
    }
    let mut sol = Solution {
        t: vec![t0],
        y: vec![y0.to_vec()],
        segments: Vec::new(),
        events: Vec::new(),
        rejected: 0,
    };
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(sol);
    }
    let dir = span.signum();
    let sk = |a: &[f64], b: &[f64], i: usize| tol.abs + tol.rel * a[i].abs().max(b[i].abs());

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = f.eval(t, &y)?;
    let mut h = initial_step(f, t, &y, &k1, dir, tol)?
        .min(span.abs())
        .min(tol.h_max);
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    let mut g_prev: Vec<f64> = events.iter().map(|e| (e.g)(t, &y)).collect::<Result<_>>()?;
    // Sign used for crossing detection; an initial exact zero is ignored.
    let mut sign_prev: Vec<f64> = g_prev.iter().map(|g| sign(*g)).collect();

    let h_min_rel = 1e-14;
    let mut steps = 0usize;
    loop {
        if (t1 - t) * dir <= 0.0 {
            break;
        }
        if steps >= tol.max_steps {
            return Err(Error::MaxSteps { t, state: y });
        }
        steps += 1;
        let mut last = false;
        if (t + dir * h - t1) * dir >= 0.0 {
            h = (t1 - t).abs();
            last = true;
        }
        if h <= h_min_rel * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, state: y });
        }
        let hs = dir * h;
        let (y_new, mut k) = match dopri_step(f, t, &y, k1.clone(), hs) {
            Ok(r) => r,
            Err(e @ Error::Domain { .. })
            | Err(e @ Error::Singular(_))
            | Err(e @ Error::Model(_)) => {
                // Trial stage left the model's domain: shrink and retry.
                if h <= h_min_rel * t.abs().max(1.0) * 1e3 {
                    return Err(e);
                }
                h *= 0.25;
                last_rejected = true;
                sol.rejected += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut err = 0.0;
        for i in 0..n {
            let ei: f64 = (0..7).map(|s| E[s] * k[s][i].value()).sum::<f64>() * hs;
            err += (ei / sk(&y, &y_new, i)).powi(2);
        }
        err = (err / n as f64).sqrt();
        if !err.is_finite() || !finite(&y_new) {
            h *= 0.1;
            last_rejected = true;
            sol.rejected += 1;
            continue;
        }
        let beta = 0.04;
        let expo1 = 0.2 - beta * 0.75;
        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let mut fac = fac11 / facold.powf(beta);
            fac = (fac / 0.9).clamp(0.1, 5.0);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            facold = err.max(1e-4);
            last_rejected = false;

            let seg = build_segment(t, hs, &y, &y_new, &k);
            let t_new = if last { t1 } else { t + hs };
            // Event detection on the new step.
            let mut terminal_hit: Option<f64> = None;
            for (ei, ev) in events.iter().enumerate() {
                let g_new = (ev.g)(t_new, &y_new)?;
                let s_new = sign(g_new);
                let s_old = sign_prev[ei];
                let crossed = s_old != 0.0 && s_new != 0.0 && s_old != s_new
                    || (s_old != 0.0 && s_new == 0.0);
                let dir_ok = match ev.direction {
                    Direction::Either => true,
                    Direction::Rising => s_old < 0.0,
                    Direction::Falling => s_old > 0.0,
                };
                if crossed && dir_ok {
                    let te = bisect(&seg, &ev.g, t, t_new, s_old)?;
                    let ye = seg.eval(te);
                    sol.events.push(EventHit {
                        index: ei,
                        name: ev.name.clone(),
                        t: te,
                        y: ye,
                    });
                    if ev.terminal {
                        terminal_hit = Some(match terminal_hit {
                            Some(tp) if (tp - t) * dir <= (te - t) * dir => tp,
                            _ => te,
                        });
                    }
                }
                g_prev[ei] = g_new;
                if s_new != 0.0 {
                    sign_prev[ei] = s_new;
                }
            }
            if let Some(te) = terminal_hit {
                // Keep only events up to the terminal time.
                sol.events.retain(|e| (e.t - te) * dir <= 0.0);
                let ye = seg.eval(te);
                sol.segments.push(seg);
                sol.t.push(te);
                sol.y.push(ye);
                // The last segment extends past te; its eval is still valid there.
                return Ok(sol);
            }
            sol.segments.push(seg);
            t = t_new;
            y = y_new;
            k1 = k.pop().unwrap();
            sol.t.push(t);
            sol.y.push(y.clone());
            h = h_new.min(tol.h_max);
        } else {
            let h_new = h / (fac11 / 0.9).min(5.0);
            last_rejected = true;
            sol.rejected += 1;
            h = h_new;
        }
    }
    Ok(sol)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn bisect(
    seg: &DenseSegment,
    g: &dyn Fn(f64, &[f64]) -> Result<f64>,
    ta: f64,
    tb: f64,
    s_a: f64,
) -> Result<f64> {
    let (mut a, mut b) = (ta, tb);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 {
            break;
        }
        let m = 0.5 * (a + b);
        let gm = g(m, &seg.eval(m))?;
        if sign(gm) == s_a {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

fn initial_step<F: VectorField>(
    f: &F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    dir: f64,
    tol: &Tolerances,
) -> Result<f64> {
    let n = y.len();
    let sk: Vec<f64> = y.iter().map(|v| tol.abs + tol.rel * v.abs()).collect();
    let nrm = |v: &[f64]| {
        (v.iter().zip(&sk).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let dnf = nrm(f0);
    let dny = nrm(y);
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        0.01 * dny / dnf
    };
    h = h.min(tol.h_max);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + dir * h * b).collect();
    let f1 = match f.eval(t + dir * h, &y1) {
        Ok(v) => v,
        Err(_) => return Ok(h * 1e-3),
    };
    let df: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let der2 = nrm(&df) / h;
    let der12 = dnf.max(der2);
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    Ok((100.0 * h).min(h1).min(tol.h_max))
}

fn build_segment<T: Real>(t: f64, h: f64, y0: &[f64], y1: &[f64], k: &[Vec<T>]) -> DenseSegment {
    let n = y0.len();
    let mut r: [Vec<f64>; 5] = Default::default();
    for v in r.iter_mut() {
        v.reserve(n);
    }
    for i in 0..n {
        let ydiff = y1[i] - y0[i];
        let bspl = h * k[0][i].value() - ydiff;
        r[0].push(y0[i]);
        r[1].push(ydiff);
        r[2].push(bspl);
        r[3].push(ydiff - h * k[6][i].value() - bspl);
        r[4].push(h * (0..7).map(|s| D[s] * k[s][i].value()).sum::<f64>());
    }
    DenseSegment::Dopri { t0: t, h, r }
}

/// Replay a sequence of steps with the fifth-order Dormand–Prince map over any
/// scalar type. With dual-number states this differentiates the discrete
/// solution map exactly.
pub fn propagate_fixed<T: Real, F: VectorField>(
    f: &F,
    t0: f64,
    y0: &[T],
    steps: &[f64],
) -> Result<Vec<T>> {
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = f.eval(T::cst(t), &y)?;
    for &h in steps {
        let (yn, mut k) = dopri_step(f, t, &y, k1, h)?;
        y = yn;
        k1 = k.pop().unwrap();
        t += h;
    }
    Ok(y)
}
