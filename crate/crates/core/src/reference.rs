//! Closed-form harmonic oscillator `H = ½Σ(y_i² + α_i² x_i²)` on Euclidean
//! ℝⁿ: brake orbits, Jacobi fields and the resonant Lissajous family. Used as
//! ground truth throughout the test suites.
//!
//! Axis indices are 0-based.

use crate::dynamics::{PhaseState, SystemSpec};
use crate::error::{Error, Result};
use crate::expr::parse;
use crate::geometry::{MetricModel, Space};

/// `α_0 = m_0 α` and `α_1 = m_1 α` with coprime `m_0, m_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    pub m: [u32; 2],
    pub base: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorSpec {
    pub alpha: Vec<f64>,
    pub energy: f64,
    pub resonance: Option<Resonance>,
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl OscillatorSpec {
    pub fn new(alpha: Vec<f64>, energy: f64) -> Result<Self> {
        if alpha.is_empty() || alpha.len() > 9 {
            return Err(Error::InvalidParameter("need 1..=9 frequencies".into()));
        }
        if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::InvalidParameter(
                "frequencies must be positive".into(),
            ));
        }
        if !(energy.is_finite() && energy > 0.0) {
            return Err(Error::InvalidParameter("energy must be positive".into()));
        }
        Ok(OscillatorSpec {
            alpha,
            energy,
            resonance: None,
        })
    }

    /// Resonant oscillator with `α_0 = m_0 α`, `α_1 = m_1 α` and further
    /// frequencies appended.
    pub fn resonant(m: [u32; 2], base: f64, extra: &[f64], energy: f64) -> Result<Self> {
        let mut alpha = vec![m[0] as f64 * base, m[1] as f64 * base];
        alpha.extend_from_slice(extra);
        Self::new(alpha, energy)?.with_resonance(m, base)
    }

    /// Declare a resonance between the first two frequencies (checked to 1e-12).
    pub fn with_resonance(mut self, m: [u32; 2], base: f64) -> Result<Self> {
        if self.alpha.len() < 2 || m[0] == 0 || m[1] == 0 || gcd(m[0], m[1]) != 1 {
            return Err(Error::InvalidParameter(
                "resonance needs two frequencies and coprime positive integers".into(),
            ));
        }
        for k in 0..2 {
            let expected = m[k] as f64 * base;
            if (self.alpha[k] - expected).abs() > 1e-12 * expected.max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "α_{k} = {} is not {} · {base}",
                    self.alpha[k], m[k]
                )));
            }
        }
        self.resonance = Some(Resonance { m, base });
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.alpha.len()
    }

    /// Expression for `U = ½Σα_i² x_i²`.
    pub fn potential_source(&self) -> String {
        self.alpha
            .iter()
            .enumerate()
            .map(|(i, a)| format!("{:?}*x{}^2", 0.5 * a * a, i + 1))
            .collect::<Vec<_>>()
            .join(" + ")
    }

    pub fn system(&self) -> Result<SystemSpec> {
        let n = self.dimension();
        let metric = MetricModel::euclidean(n, Space::Euclidean)?;
        SystemSpec::new(metric, parse(&self.potential_source(), n)?, self.energy)
    }

    pub fn energy_of(&self, s: &PhaseState) -> f64 {
        s.x.iter()
            .zip(&s.v)
            .zip(&self.alpha)
            .map(|((x, v), a)| 0.5 * (v * v + a * a * x * x))
            .sum()
    }

    /// Minimal period `2π/α_j` of the `j`-th axis brake orbit.
    pub fn period(&self, j: usize) -> f64 {
        2.0 * std::f64::consts::PI / self.alpha[j]
    }

    /// Amplitude `√(2E)/α_j`.
    pub fn amplitude(&self, j: usize) -> f64 {
        (2.0 * self.energy).sqrt() / self.alpha[j]
    }

    /// Brake orbit along axis `j` through the origin at `t = 0`:
    /// `x_j(t) = √(2E)/α_j · sin(α_j t)`.
    pub fn brake_orbit(&self, j: usize, t: f64) -> Result<PhaseState> {
        let n = self.dimension();
        if j >= n {
            return Err(Error::InvalidParameter(format!("axis {j} out of range")));
        }
        let mut x = vec![0.0; n];
        let mut v = vec![0.0; n];
        let a = self.alpha[j];
        let r = (2.0 * self.energy).sqrt();
        x[j] = r / a * (a * t).sin();
        v[j] = r * (a * t).cos();
        Ok(PhaseState::new(x, v))
    }

    /// Solution of `v̈_i + α_i² v_i = 0`:
    /// `v_i(t) = v_i(0) cos(α_i t) + v̇_i(0)/α_i · sin(α_i t)`.
    pub fn jacobi_field(&self, v0: &[f64], vd0: &[f64], t: f64) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(v0.iter().zip(vd0))
            .map(|(a, (p, q))| p * (a * t).cos() + q / a * (a * t).sin())
            .collect()
    }

    /// Time derivative of [`Self::jacobi_field`].
    pub fn jacobi_field_rate(&self, v0: &[f64], vd0: &[f64], t: f64) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(v0.iter().zip(vd0))
            .map(|(a, (p, q))| -p * a * (a * t).sin() + q * (a * t).cos())
            .collect()
    }

    fn resonance(&self) -> Result<Resonance> {
        self.resonance
            .ok_or_else(|| Error::InvalidParameter("no resonance declared".into()))
    }

    /// Member `s` of the Lissajous family
    /// `x_0 = a_0 cos(m_0 α t − s)`, `x_1 = a_1 cos(m_1 α t)`, other coordinates 0.
    pub fn lissajous(&self, a: [f64; 2], s: f64, t: f64) -> Result<PhaseState> {
        self.resonance()?;
        let n = self.dimension();
        let mut x = vec![0.0; n];
        let mut v = vec![0.0; n];
        let (w0, w1) = (self.alpha[0], self.alpha[1]);
        x[0] = a[0] * (w0 * t - s).cos();
        v[0] = -a[0] * w0 * (w0 * t - s).sin();
        x[1] = a[1] * (w1 * t).cos();
        v[1] = -a[1] * w1 * (w1 * t).sin();
        Ok(PhaseState::new(x, v))
    }

    /// Second time derivative of [`Self::lissajous`], differentiated by hand
    /// from the closed form.
    pub fn lissajous_acceleration(&self, a: [f64; 2], s: f64, t: f64) -> Result<Vec<f64>> {
        self.resonance()?;
        let mut acc = vec![0.0; self.dimension()];
        let (w0, w1) = (self.alpha[0], self.alpha[1]);
        acc[0] = -a[0] * w0 * w0 * (w0 * t - s).cos();
        acc[1] = -a[1] * w1 * w1 * (w1 * t).cos();
        Ok(acc)
    }

    /// Energy of every Lissajous member, `½(α_0² a_0² + α_1² a_1²)`.
    pub fn lissajous_energy(&self, a: [f64; 2]) -> f64 {
        0.5 * (self.alpha[0].powi(2) * a[0].powi(2) + self.alpha[1].powi(2) * a[1].powi(2))
    }

    /// Minimal period `2π/α` of the Lissajous family.
    pub fn lissajous_period(&self) -> Result<f64> {
        Ok(2.0 * std::f64::consts::PI / self.resonance()?.base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lagrange_rhs;
    use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

    fn non_resonant() -> OscillatorSpec {
        OscillatorSpec::new(vec![1.0, SQRT_2], 0.5).unwrap()
    }

    #[test]
    fn brake_orbit_values() {
        let o = non_resonant();
        let s = o.brake_orbit(0, FRAC_PI_2).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-15 && s.v[0].abs() < 1e-15);
        let s = o.brake_orbit(0, 0.0).unwrap();
        assert_eq!(s.x, vec![0.0, 0.0]);
        assert_eq!(s.v, vec![1.0, 0.0]);
        let r = o.brake_orbit(1, -FRAC_PI_2 / SQRT_2).unwrap();
        assert!((r.x[1] + o.amplitude(1)).abs() < 1e-15);
        assert!((o.energy_of(&r) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_satisfy_lagrange_equations() {
        let o = OscillatorSpec::resonant([1, 2], 1.0, &[], 1.0).unwrap();
        let spec = o.system().unwrap();
        let dt = 1e-4;
        for k in 0..50 {
            let t = 0.13 * k as f64;
            for s in [0.0, 0.3, 0.7] {
                let p = o.lissajous([1.0, 0.5], s, t).unwrap();
                let a = lagrange_rhs(&spec, &p.x, &p.v).unwrap();
                let (pp, pm) = (
                    o.lissajous([1.0, 0.5], s, t + dt).unwrap(),
                    o.lissajous([1.0, 0.5], s, t - dt).unwrap(),
                );
                for i in 0..2 {
                    let fd = (pp.v[i] - pm.v[i]) / (2.0 * dt);
                    assert!((fd - a[i]).abs() < 1e-7);
                    // Exact: ẍ = −α² x.
                    assert!((a[i] + o.alpha[i].powi(2) * p.x[i]).abs() < 1e-12);
                }
            }
            let b = o.brake_orbit(1, t).unwrap();
            let a = lagrange_rhs(&spec, &b.x, &b.v).unwrap();
            assert!((a[1] + 4.0 * b.x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_field_closes_only_for_resonance() {
        let o = non_resonant();
        let v = o.jacobi_field(&[0.0, 1.0], &[0.0, 0.0], o.period(1));
        assert!((v[1] - 1.0).abs() < 1e-14);
        // Transverse field along orbit 0 over its period 2π: rotated by 2π√2.
        let t = o.period(0);
        let v = o.jacobi_field(&[0.0, 1.0], &[0.0, 0.3], t);
        assert!((v[1] - 1.0).abs() > 1e-2);
        let r = OscillatorSpec::resonant([1, 2], 1.0, &[], 1.0).unwrap();
        let v = r.jacobi_field(&[0.0, 1.0], &[0.0, 0.3], 2.0 * PI);
        let w = r.jacobi_field_rate(&[0.0, 1.0], &[0.0, 0.3], 2.0 * PI);
        assert!((v[1] - 1.0).abs() < 1e-14 && (w[1] - 0.3).abs() < 1e-14);
    }

    #[test]
    fn lissajous_energy_is_independent_of_s() {
        let o = OscillatorSpec::resonant([1, 2], 1.0, &[], 1.0).unwrap();
        let e = o.lissajous_energy([1.0, 0.5]);
        for s in [0.0, 0.3, 0.7, 1.5] {
            for t in [0.0, 0.4, 2.0] {
                let p = o.lissajous([1.0, 0.5], s, t).unwrap();
                assert!((o.energy_of(&p) - e).abs() < 1e-14);
            }
        }
        assert!((e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lissajous_minimal_period() {
        let o = OscillatorSpec::resonant([1, 2], 1.0, &[], 1.0).unwrap();
        let tp = o.lissajous_period().unwrap();
        let a = o.lissajous([1.0, 0.5], 0.3, 0.2).unwrap();
        let b = o.lissajous([1.0, 0.5], 0.3, 0.2 + tp).unwrap();
        assert!((a.x[0] - b.x[0]).abs() < 1e-14 && (a.x[1] - b.x[1]).abs() < 1e-14);
        let c = o.lissajous([1.0, 0.5], 0.3, 0.2 + tp / 2.0).unwrap();
        assert!((a.x[0] - c.x[0]).abs() > 0.1);
    }

    #[test]
    fn resonance_is_validated() {
        assert!(OscillatorSpec::new(vec![1.0, 2.0], 1.0)
            .unwrap()
            .with_resonance([1, 2], 1.0)
            .is_ok());
        assert!(OscillatorSpec::new(vec![1.0, 2.1], 1.0)
            .unwrap()
            .with_resonance([1, 2], 1.0)
            .is_err());
        assert!(OscillatorSpec::new(vec![2.0, 4.0], 1.0)
            .unwrap()
            .with_resonance([2, 4], 1.0)
            .is_err());
    }
}
