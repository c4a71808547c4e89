//! Finsler/Riemannian kernel: fundamental tensor, Cartan tensor, Christoffel
//! symbols, geodesic coefficients and the Legendre transform.
//!
//! All `x`-derivatives of the metric come from nested dual numbers evaluated on
//! the expression model. Finite differences appear only in tests.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::dual::{dot, Dual};
use crate::expr::{ExprNode, Real};
use crate::linalg::Mat;

/// Configuration space: a single global chart on ℝⁿ or on a flat torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Space {
    Euclidean,
    Torus { periods: Vec<f64> },
}

impl Space {
    pub fn validate(&self, n: usize) -> Result<()> {
        if let Space::Torus { periods } = self {
            if periods.len() != n {
                return Err(Error::Model(format!(
                    "torus needs {n} periods, got {}",
                    periods.len()
                )));
            }
            if let Some(p) = periods.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::Model(format!(
                    "torus period must be positive, got {p}"
                )));
            }
        }
        Ok(())
    }

    /// Canonical representative in `[0, L_i)` on a torus; identity otherwise.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Space::Euclidean => x.to_vec(),
            Space::Torus { periods } => x
                .iter()
                .zip(periods)
                .map(|(&xi, &l)| {
                    let r = xi.rem_euclid(l);
                    if r >= l {
                        0.0
                    } else {
                        r
                    }
                })
                .collect(),
        }
    }

    /// Shortest representative of a displacement (minimal-image convention).
    pub fn minimal_image(&self, d: &[f64]) -> Vec<f64> {
        match self {
            Space::Euclidean => d.to_vec(),
            Space::Torus { periods } => d
                .iter()
                .zip(periods)
                .map(|(&di, &l)| di - l * (di / l).round())
                .collect(),
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Space::Torus { .. })
    }
}

/// A point of the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint(pub Vec<f64>);

impl ChartPoint {
    pub fn canonical(coords: &[f64], space: &Space) -> Self {
        ChartPoint(space.wrap(coords))
    }
}

impl Deref for ChartPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Tangent vector components in the coordinate basis.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(pub Vec<f64>);

impl Deref for TangentVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Covector components in the dual basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Covector(pub Vec<f64>);

impl Deref for Covector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Fully indexed `n×n×n` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(n: usize) -> Self {
        Tensor3 {
            n,
            data: vec![T::zero(); n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|x| x.value().abs())
            .fold(0.0, f64::max)
    }
}

impl<T> std::ops::Index<(usize, usize, usize)> for Tensor3<T> {
    type Output = T;
    fn index(&self, (i, j, k): (usize, usize, usize)) -> &T {
        &self.data[(i * self.n + j) * self.n + k]
    }
}

impl<T> std::ops::IndexMut<(usize, usize, usize)> for Tensor3<T> {
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut T {
        &mut self.data[(i * self.n + j) * self.n + k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricKind {
    /// `g_ij(x)`, stored as a full matrix mirrored from the upper triangle.
    Riemannian(Vec<ExprNode>),
    /// `F²(x, v)`.
    Finsler(ExprNode),
}

/// Kinetic metric of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    dimension: usize,
    kind: MetricKind,
    space: Space,
    constant: bool,
}

fn pack<T: Real>(x: &[T], v: &[T]) -> Vec<T> {
    let mut p = Vec::with_capacity(x.len() + v.len());
    p.extend_from_slice(x);
    p.extend_from_slice(v);
    p
}

fn delta<T: Real>(k: usize, a: Option<usize>) -> T {
    if Some(k) == a {
        T::one()
    } else {
        T::zero()
    }
}

/// Packed point with slots `a` (outer) and `b` (inner) seeded.
fn seed2<T: Real>(p: &[T], a: usize, b: usize) -> Vec<Dual<Dual<T>>> {
    p.iter()
        .enumerate()
        .map(|(k, &x)| {
            Dual::new(
                Dual::new(x, delta(k, Some(b))),
                Dual::constant(delta(k, Some(a))),
            )
        })
        .collect()
}

/// Packed point with slots `a` (outermost), `b`, `c` (innermost) seeded.
fn seed3<T: Real>(p: &[T], a: usize, b: usize, c: usize) -> Vec<Dual<Dual<Dual<T>>>> {
    let inner = seed2(p, b, c);
    inner
        .into_iter()
        .enumerate()
        .map(|(k, x)| Dual::new(x, Dual::constant(Dual::constant(delta(k, Some(a))))))
        .collect()
}

impl MetricModel {
    /// Flat metric `δ_ij`.
    pub fn euclidean(dimension: usize, space: Space) -> Result<Self> {
        let rows = (0..dimension)
            .map(|i| {
                (0..dimension)
                    .map(|j| ExprNode::Const(if i == j { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect();
        Self::riemannian(dimension, rows, space)
    }

    /// Riemannian metric from a full matrix of coefficient expressions in `x`.
    /// Mirrored entries must be structurally identical.
    pub fn riemannian(dimension: usize, rows: Vec<Vec<ExprNode>>, space: Space) -> Result<Self> {
        space.validate(dimension)?;
        if rows.len() != dimension || rows.iter().any(|r| r.len() != dimension) {
            return Err(Error::Model(format!(
                "metric matrix must be {dimension}x{dimension}"
            )));
        }
        for i in 0..dimension {
            for j in 0..dimension {
                let e = &rows[i][j];
                let (nx, nv) = e.extent();
                if nv > 0 {
                    return Err(Error::Model(format!(
                        "riemannian coefficient g{}{} depends on velocities",
                        i + 1,
                        j + 1
                    )));
                }
                if nx > dimension {
                    return Err(Error::Model(format!("g{}{} uses x{nx}", i + 1, j + 1)));
                }
                if j > i && rows[j][i] != *e {
                    return Err(Error::Model(format!(
                        "metric is not symmetric: g{}{} != g{}{}",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        let constant = rows.iter().flatten().all(|e| e.is_constant());
        let entries = rows.into_iter().flatten().collect();
        let m = MetricModel {
            dimension,
            kind: MetricKind::Riemannian(entries),
            space,
            constant,
        };
        m.spot_check_periodicity()?;
        Ok(m)
    }

    /// Finsler metric from `F²(x, v)`. Homogeneity and reversibility are
    /// spot-checked at a few deterministic sample points.
    pub fn finsler(dimension: usize, f2: ExprNode, space: Space) -> Result<Self> {
        space.validate(dimension)?;
        let (nx, nv) = f2.extent();
        if nx > dimension || nv > dimension {
            return Err(Error::Model(
                "F² references variables beyond the dimension".into(),
            ));
        }
        let constant = nx == 0;
        let m = MetricModel {
            dimension,
            kind: MetricKind::Finsler(f2),
            space,
            constant,
        };
        for k in 0..4 {
            let x: Vec<f64> = (0..dimension)
                .map(|i| 0.31 * (k as f64 + 1.0) - 0.17 * i as f64)
                .collect();
            let v: Vec<f64> = (0..dimension)
                .map(|i| ((k * 7 + i * 3) as f64 * 0.9 + 0.4).sin())
                .collect();
            m.check_homogeneity(&x, &v, &[0.5, 2.0, 3.0], 1e-10)?;
        }
        m.spot_check_periodicity()?;
        Ok(m)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    pub fn is_riemannian(&self) -> bool {
        matches!(self.kind, MetricKind::Riemannian(_))
    }

    /// Coefficients do not depend on `x`.
    pub fn is_translation_invariant(&self) -> bool {
        self.constant
    }

    /// Same metric multiplied by a conformal factor expression in `x`.
    pub fn conformal(&self, factor: &ExprNode) -> Result<Self> {
        let n = self.dimension;
        match &self.kind {
            MetricKind::Riemannian(entries) => {
                let rows = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| ExprNode::product(factor.clone(), entries[i * n + j].clone()))
                            .collect()
                    })
                    .collect();
                Self::riemannian(n, rows, self.space.clone())
            }
            MetricKind::Finsler(f2) => Self::finsler(
                n,
                ExprNode::product(factor.clone(), f2.clone()),
                self.space.clone(),
            ),
        }
    }

    /// Verify `F²(x, λv) = λ² F²(x, v)` and `F²(x, -v) = F²(x, v)` at one sample.
    /// Samples where the expression is outside its domain are skipped.
    pub fn check_homogeneity(&self, x: &[f64], v: &[f64], lambdas: &[f64], rel: f64) -> Result<()> {
        let base = match self.f2(x, v) {
            Ok(b) => b,
            Err(Error::Domain { .. }) => return Ok(()),
            Err(e) => return Err(e),
        };
        let scale = base.abs().max(1e-300);
        for &l in lambdas {
            let vl: Vec<f64> = v.iter().map(|c| c * l).collect();
            let f = self.f2(x, &vl)?;
            if (f - l * l * base).abs() > rel * scale * l * l {
                return Err(Error::Model(format!(
                    "F² is not 2-homogeneous: F²(x,{l}v) = {f}, expected {}",
                    l * l * base
                )));
            }
        }
        let vm: Vec<f64> = v.iter().map(|c| -c).collect();
        let f = self.f2(x, &vm)?;
        if (f - base).abs() > rel * scale {
            return Err(Error::Model(format!(
                "F² is not reversible: F²(x,-v) = {f}, F²(x,v) = {base}"
            )));
        }
        Ok(())
    }

    fn spot_check_periodicity(&self) -> Result<()> {
        let Space::Torus { periods } = &self.space else {
            return Ok(());
        };
        let n = self.dimension;
        let x: Vec<f64> = (0..n).map(|i| 0.23 + 0.41 * i as f64).collect();
        let v: Vec<f64> = (0..n).map(|i| 0.8 - 0.3 * i as f64).collect();
        let base = match self.tensor(&x, &v) {
            Ok(g) => g,
            Err(Error::Domain { .. }) => return Ok(()),
            Err(e) => return Err(e),
        };
        for (i, &l) in periods.iter().enumerate() {
            let mut xs = x.clone();
            xs[i] += l;
            let g = self.tensor(&xs, &v)?;
            for a in 0..n {
                for b in 0..n {
                    let d = (g[(a, b)] - base[(a, b)]).abs();
                    if d > 1e-9 * (1.0 + base[(a, b)].abs()) {
                        return Err(Error::Model(format!(
                            "metric coefficients are not periodic in x{} with period {l}",
                            i + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn require_nonzero<T: Real>(&self, v: &[T]) -> Result<()> {
        if !self.is_riemannian() && v.iter().all(|c| c.value() == 0.0) {
            return Err(Error::Precondition(
                "finsler quantities are undefined at v = 0".into(),
            ));
        }
        Ok(())
    }

    /// `F²(x, v)`.
    pub fn f2<T: Real>(&self, x: &[T], v: &[T]) -> Result<T> {
        match &self.kind {
            MetricKind::Finsler(f2) => f2.eval(x, v),
            MetricKind::Riemannian(_) => Ok(self.tensor(x, v)?.bilinear(v, v)),
        }
    }

    /// Fundamental tensor `g_ij(x, v) = ½ ∂²F²/∂v^i∂v^j` (no definiteness check).
    pub fn tensor<T: Real>(&self, x: &[T], v: &[T]) -> Result<Mat<T>> {
        let n = self.dimension;
        match &self.kind {
            MetricKind::Riemannian(entries) => {
                let mut g = Mat::zeros(n);
                for i in 0..n {
                    for j in i..n {
                        let e = entries[i * n + j].eval(x, &[] as &[T])?;
                        g[(i, j)] = e;
                        g[(j, i)] = e;
                    }
                }
                Ok(g)
            }
            MetricKind::Finsler(f2) => {
                self.require_nonzero(v)?;
                let p = pack(x, v);
                let mut g = Mat::zeros(n);
                for i in 0..n {
                    for j in i..n {
                        let r = f2.eval_packed(&seed2(&p, n + i, n + j), n)?;
                        let gij = r.eps.eps.scale(0.5);
                        g[(i, j)] = gij;
                        g[(j, i)] = gij;
                    }
                }
                Ok(g)
            }
        }
    }

    /// `∂g_ij/∂x^l` for each `l`.
    pub fn tensor_dx<T: Real>(&self, x: &[T], v: &[T]) -> Result<Vec<Mat<T>>> {
        let n = self.dimension;
        if self.constant {
            return Ok(vec![Mat::zeros(n); n]);
        }
        let mut out = Vec::with_capacity(n);
        match &self.kind {
            MetricKind::Riemannian(entries) => {
                for l in 0..n {
                    let xs = crate::expr::dual::seed(x, Some(l));
                    let mut d = Mat::zeros(n);
                    for i in 0..n {
                        for j in i..n {
                            let e = entries[i * n + j].eval(&xs, &[] as &[Dual<T>])?.eps;
                            d[(i, j)] = e;
                            d[(j, i)] = e;
                        }
                    }
                    out.push(d);
                }
            }
            MetricKind::Finsler(f2) => {
                self.require_nonzero(v)?;
                let p = pack(x, v);
                for l in 0..n {
                    let mut d = Mat::zeros(n);
                    for i in 0..n {
                        for j in i..n {
                            let r = f2.eval_packed(&seed3(&p, l, n + i, n + j), n)?;
                            let e = r.eps.eps.eps.scale(0.5);
                            d[(i, j)] = e;
                            d[(j, i)] = e;
                        }
                    }
                    out.push(d);
                }
            }
        }
        Ok(out)
    }

    /// Fundamental tensor with the positive-definiteness check.
    pub fn metric_tensor(&self, x: &[f64], v: &[f64]) -> Result<Mat<f64>> {
        let g = self.tensor(x, v)?;
        g.check_positive_definite("fundamental tensor")?;
        Ok(g)
    }

    /// Cartan tensor `C_ijk = ¼ ∂³F²/∂v^i∂v^j∂v^k`; identically zero for
    /// Riemannian models.
    pub fn cartan_tensor(&self, x: &[f64], v: &[f64]) -> Result<Tensor3<f64>> {
        let n = self.dimension;
        let mut c = Tensor3::zeros(n);
        let MetricKind::Finsler(f2) = &self.kind else {
            return Ok(c);
        };
        self.require_nonzero(v)?;
        self.metric_tensor(x, v)?;
        let p = pack(x, v);
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    let r = f2.eval_packed(&seed3(&p, n + i, n + j, n + k), n)?;
                    let val = 0.25 * r.eps.eps.eps;
                    for (a, b, d) in [
                        (i, j, k),
                        (i, k, j),
                        (j, i, k),
                        (j, k, i),
                        (k, i, j),
                        (k, j, i),
                    ] {
                        c[(a, b, d)] = val;
                    }
                }
            }
        }
        Ok(c)
    }

    /// Christoffel symbols of the first kind
    /// `γ_ijl = ½ (∂g_li/∂x^j + ∂g_jl/∂x^i − ∂g_ij/∂x^l)`.
    pub fn christoffel_first<T: Real>(&self, x: &[T], v: &[T]) -> Result<Tensor3<T>> {
        let n = self.dimension;
        let dg = self.tensor_dx(x, v)?;
        let mut out = Tensor3::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    out[(i, j, l)] = (dg[j][(l, i)] + dg[i][(j, l)] - dg[l][(i, j)]).scale(0.5);
                }
            }
        }
        Ok(out)
    }

    /// Christoffel symbols of the second kind `Γ^k_ij = g^{kl} γ_ijl`, stored
    /// as `[(k, i, j)]`.
    pub fn christoffel_second<T: Real>(&self, x: &[T], v: &[T]) -> Result<Tensor3<T>> {
        let n = self.dimension;
        let first = self.christoffel_first(x, v)?;
        let lu = self.tensor(x, v)?.lu()?;
        let mut out = Tensor3::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let rhs: Vec<T> = (0..n).map(|l| first[(i, j, l)]).collect();
                let col = lu.solve(&rhs);
                for k in 0..n {
                    out[(k, i, j)] = col[k];
                }
            }
        }
        Ok(out)
    }

    /// `G^k = ¼ g^{kl} (2 ∂g_li/∂x^j − ∂g_ij/∂x^l) v^i v^j`.
    pub fn geodesic_coefficients<T: Real>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        let n = self.dimension;
        if self.constant {
            return Ok(vec![T::zero(); n]);
        }
        let g = self.tensor(x, v)?;
        let dg = self.tensor_dx(x, v)?;
        self.geodesic_coefficients_from(&g, &dg, v)
    }

    pub(crate) fn geodesic_coefficients_from<T: Real>(
        &self,
        g: &Mat<T>,
        dg: &[Mat<T>],
        v: &[T],
    ) -> Result<Vec<T>> {
        let n = self.dimension;
        // w_l = 2 v^j (∂_j g · v)_l − vᵀ (∂_l g) v
        let mut w = vec![T::zero(); n];
        for (j, dgj) in dg.iter().enumerate() {
            let t = dgj.mul_vec(v);
            for l in 0..n {
                w[l] += (v[j] * t[l]).scale(2.0);
            }
        }
        for l in 0..n {
            w[l] -= dg[l].bilinear(v, v);
        }
        let sol = g.solve(&w)?;
        Ok(sol.into_iter().map(|c| c.scale(0.25)).collect())
    }

    /// Legendre transform `y_i = g_ij(x, v) v^j`.
    pub fn legendre<T: Real>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        Ok(self.tensor(x, v)?.mul_vec(v))
    }

    /// Inverse Legendre transform. Riemannian: one linear solve. Finsler:
    /// damped Newton on `g(x, v) v − y = 0` (Jacobian `g`, by the Cartan
    /// identity) started from the Euclidean guess `v = y`.
    pub fn legendre_inverse<T: Real>(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        if self.is_riemannian() {
            return self.tensor(x, y)?.solve(y);
        }
        if y.iter().all(|c| c.value() == 0.0) {
            return Err(Error::Precondition("legendre_inverse needs y != 0".into()));
        }
        let residual = |v: &[T]| -> Result<(Vec<T>, Mat<T>, f64)> {
            let g = self.tensor(x, v)?;
            let r: Vec<T> = g.mul_vec(v).iter().zip(y).map(|(&a, &b)| a - b).collect();
            let norm = r.iter().map(|c| c.value().powi(2)).sum::<f64>().sqrt();
            Ok((r, g, norm))
        };
        let ynorm = y.iter().map(|c| c.value().powi(2)).sum::<f64>().sqrt();
        let mut v: Vec<T> = y.to_vec();
        let (mut r, mut g, mut rn) = residual(&v)?;
        for _ in 0..50 {
            if rn <= 1e-14 * ynorm {
                return Ok(v);
            }
            let step = g.solve(&r)?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<T> = v
                    .iter()
                    .zip(&step)
                    .map(|(&a, &d)| a - d.scale(lambda))
                    .collect();
                if let Ok((rt, gt, nt)) = residual(&trial) {
                    if nt < rn {
                        v = trial;
                        r = rt;
                        g = gt;
                        rn = nt;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if rn <= 1e-12 * ynorm {
            return Ok(v);
        }
        Err(Error::Inversion { residual: rn })
    }

    /// `½ F²` kinetic energy.
    pub fn kinetic_energy<T: Real>(&self, x: &[T], v: &[T]) -> Result<T> {
        if v.iter().all(|c| c.value() == 0.0) {
            return Ok(T::zero());
        }
        Ok(self.f2(x, v)?.scale(0.5))
    }

    /// `‖v‖` in the metric (`F(x, v)`).
    pub fn norm(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        Ok(self.kinetic_energy(x, v)?.mul_add(2.0, 0.0).sqrt())
    }

    /// `g(x, w)(a, b)`; for Riemannian models `w` is ignored.
    pub fn inner(&self, x: &[f64], w: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
        let g = self.tensor(x, w)?;
        Ok(dot(a, &g.mul_vec(b)))
    }
}
