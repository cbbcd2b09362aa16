//! Weighted least-squares approximation of first derivatives on the point
//! cloud: scalar gradients, the velocity gradient with its symmetric /
//! antisymmetric split, stress divergence, and value interpolation at
//! off-cloud locations.
//!
//! At a point `x_i` with neighbors `x_j`, a first-order Taylor ansatz
//! `f_j = f_i + (x_j - x_i) . grad f + e_j` is closed by minimizing
//! `sum w_j e_j^2`. Offsets are scaled by the support radius before assembly
//! so the normal matrix is well scaled; the factorization refuses stencils
//! whose condition estimate exceeds `cond_max`.

use nalgebra::{Cholesky, Const, Matrix4, Vector4};

use crate::cloud::{weight_sq, NeighborIndex, PointCloud};
use crate::error::{Error, Result};
use crate::num::{lit, Dim, Real, M3, V3};

/// Default bound on the normal-matrix condition estimate.
pub const DEFAULT_COND_MAX: f64 = 1e12;

/// Stencil parameters shared by all least-squares operations.
#[derive(Debug, Clone, Copy)]
pub struct GfdmParams<T: Real> {
    pub alpha: T,
    pub cond_max: T,
}

impl<T: Real> Default for GfdmParams<T> {
    fn default() -> Self {
        Self {
            alpha: lit(crate::cloud::DEFAULT_ALPHA),
            cond_max: lit(DEFAULT_COND_MAX),
        }
    }
}

/// Accumulator for the 3x3 weighted normal matrix of a gradient stencil.
///
/// Offsets passed to [`NormalSystem::add`] must already be divided by the
/// support radius; [`LsFactor::gradient`] undoes the scaling.
pub struct NormalSystem<T: Real> {
    a: M3<T>,
    rows: usize,
}

impl<T: Real> NormalSystem<T> {
    pub fn new() -> Self {
        Self {
            a: M3::zeros(),
            rows: 0,
        }
    }

    #[inline]
    pub fn add(&mut self, offset_h: &V3<T>, w: T) {
        if w <= T::zero() {
            return;
        }
        self.a.syger(w, offset_h, offset_h, T::one());
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Factors the normal matrix. In planar mode the decoupled z equation is
    /// replaced by a scale-matched dummy so one code path serves both
    /// dimensions; the z component of every solution is exactly zero.
    pub fn factor(mut self, dim: Dim, cond_max: T, point: usize) -> Result<LsFactor<T>> {
        // syger fills the lower triangle only.
        self.a[(0, 1)] = self.a[(1, 0)];
        self.a[(0, 2)] = self.a[(2, 0)];
        self.a[(1, 2)] = self.a[(2, 1)];
        if dim == Dim::Two {
            let half = lit::<T>(0.5);
            self.a[(2, 2)] = (self.a[(0, 0)] + self.a[(1, 1)]) * half;
            self.a[(0, 2)] = T::zero();
            self.a[(1, 2)] = T::zero();
            self.a[(2, 0)] = T::zero();
            self.a[(2, 1)] = T::zero();
        }
        let chol = Cholesky::new(self.a).ok_or(Error::SingularNormalMatrix {
            point,
            cond: f64::INFINITY,
        })?;
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (l[(0, 0)], l[(0, 0)]);
        for k in 1..3 {
            lo = lo.min(l[(k, k)]);
            hi = hi.max(l[(k, k)]);
        }
        let ratio = hi / lo;
        let cond = ratio * ratio;
        if !(cond < cond_max) {
            return Err(Error::SingularNormalMatrix {
                point,
                cond: cond.to_subset().unwrap_or(f64::INFINITY),
            });
        }
        Ok(LsFactor { chol, cond })
    }
}

impl<T: Real> Default for NormalSystem<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Factored stencil; solves for gradients given accumulated right-hand sides.
pub struct LsFactor<T: Real> {
    chol: Cholesky<T, Const<3>>,
    pub cond: T,
}

impl<T: Real> LsFactor<T> {
    /// Solves for the gradient. `rhs` must be `sum w_j (d_j/h) (f_j - f_i)`;
    /// `h` is the same support radius used to scale the offsets.
    #[inline]
    pub fn gradient(&self, rhs: &V3<T>, h: T) -> V3<T> {
        self.chol.solve(rhs) / h
    }

    /// Solves against the normal matrix in scaled coordinates.
    #[inline]
    pub fn solve_scaled(&self, rhs: &V3<T>) -> V3<T> {
        self.chol.solve(rhs)
    }
}

/// Affine-consistent smoothing: the difference between the first-order
/// weighted least-squares fit of a field at the stencil center and the
/// carried point value. Exactly zero for affine fields (any stencil), large
/// for sub-stencil oscillation; blending a fraction of it into the update
/// suppresses the zero-energy modes a collocated stencil cannot see.
///
/// Inputs are the moments of one stencil pass with offsets scaled by `h`:
/// `w_sum = sum w`, `wd_sum = sum w d_hat`, `wf_sum = sum w (f_j - f_i)`,
/// `rhs = sum w d_hat (f_j - f_i)`, plus the factored normal matrix.
pub fn fit_residual<T: Real>(
    factor: &LsFactor<T>,
    w_sum: T,
    wd_sum: &V3<T>,
    wf_sum: T,
    rhs: &V3<T>,
) -> T {
    let q = factor.solve_scaled(wd_sum);
    let denom = w_sum - q.dot(wd_sum);
    if denom <= w_sum * lit(1e-9) {
        return T::zero();
    }
    (wf_sum - q.dot(rhs)) / denom
}

/// Velocity gradient `L = grad v` with its strain-rate / spin split.
#[derive(Debug, Clone, Copy)]
pub struct VelocityGradient<T: Real> {
    pub l: M3<T>,
    pub d: M3<T>,
    pub w: M3<T>,
}

impl<T: Real> VelocityGradient<T> {
    /// Splits L into D and W, each off-diagonal pair computed once so D is
    /// exactly symmetric and W exactly antisymmetric.
    pub fn from_l(l: M3<T>) -> Self {
        let half = lit::<T>(0.5);
        let mut d = M3::zeros();
        let mut w = M3::zeros();
        for k in 0..3 {
            d[(k, k)] = l[(k, k)];
        }
        for (r, c) in [(0, 1), (0, 2), (1, 2)] {
            let sym = (l[(r, c)] + l[(c, r)]) * half;
            let anti = (l[(r, c)] - l[(c, r)]) * half;
            d[(r, c)] = sym;
            d[(c, r)] = sym;
            w[(r, c)] = anti;
            w[(c, r)] = -anti;
        }
        Self { l, d, w }
    }

    /// `div v = tr L`.
    pub fn divergence(&self) -> T {
        self.l.trace()
    }
}

/// Weighted least-squares gradient of a per-point scalar field at point `i`.
pub fn ls_gradient<T: Real>(
    i: usize,
    values: &[T],
    cloud: &PointCloud<T>,
    index: &NeighborIndex<T>,
    params: &GfdmParams<T>,
) -> Result<V3<T>> {
    let h = cloud.support_h;
    let h_sq = h * h;
    let center = cloud.positions[i];
    let mut sys = NormalSystem::new();
    let mut rhs = V3::zeros();
    for &j in index.neighbors(i) {
        let j = j as usize;
        let d = cloud.positions[j] - center;
        let w = weight_sq(d.norm_squared(), h_sq, params.alpha);
        if w <= T::zero() {
            continue;
        }
        let dh = d / h;
        sys.add(&dh, w);
        rhs += dh * (w * (values[j] - values[i]));
    }
    let factor = sys.factor(cloud.dim, params.cond_max, i)?;
    Ok(factor.gradient(&rhs, h))
}

/// Velocity gradient at point `i`, all three component gradients sharing one
/// stencil factorization.
pub fn velocity_gradient<T: Real>(
    i: usize,
    velocities: &[V3<T>],
    cloud: &PointCloud<T>,
    index: &NeighborIndex<T>,
    params: &GfdmParams<T>,
) -> Result<VelocityGradient<T>> {
    let h = cloud.support_h;
    let h_sq = h * h;
    let center = cloud.positions[i];
    let v_i = velocities[i];
    let mut sys = NormalSystem::new();
    let mut rhs = [V3::zeros(); 3];
    for &j in index.neighbors(i) {
        let j = j as usize;
        let d = cloud.positions[j] - center;
        let w = weight_sq(d.norm_squared(), h_sq, params.alpha);
        if w <= T::zero() {
            continue;
        }
        let dh = d / h;
        sys.add(&dh, w);
        let dv = velocities[j] - v_i;
        for k in 0..3 {
            rhs[k] += dh * (w * dv[k]);
        }
    }
    let factor = sys.factor(cloud.dim, params.cond_max, i)?;
    let mut l = M3::zeros();
    for k in 0..3 {
        let g = factor.gradient(&rhs[k], h);
        for c in 0..3 {
            l[(k, c)] = g[c];
        }
    }
    Ok(VelocityGradient::from_l(l))
}

/// Divergence of the stress field at point `i`:
/// `(div sigma)_k = sum_l d sigma_kl / d x_l`.
pub fn stress_divergence<T: Real>(
    i: usize,
    stresses: &[M3<T>],
    cloud: &PointCloud<T>,
    index: &NeighborIndex<T>,
    params: &GfdmParams<T>,
) -> Result<V3<T>> {
    const COMPONENTS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    let h = cloud.support_h;
    let h_sq = h * h;
    let center = cloud.positions[i];
    let s_i = stresses[i];
    let mut sys = NormalSystem::new();
    let mut rhs = [V3::zeros(); 6];
    for &j in index.neighbors(i) {
        let j = j as usize;
        let d = cloud.positions[j] - center;
        let w = weight_sq(d.norm_squared(), h_sq, params.alpha);
        if w <= T::zero() {
            continue;
        }
        let dh = d / h;
        sys.add(&dh, w);
        let s_j = stresses[j];
        for (c, (r, l)) in COMPONENTS.iter().enumerate() {
            rhs[c] += dh * (w * (s_j[(*r, *l)] - s_i[(*r, *l)]));
        }
    }
    let factor = sys.factor(cloud.dim, params.cond_max, i)?;
    let mut grads = [V3::zeros(); 6];
    for c in 0..6 {
        grads[c] = factor.gradient(&rhs[c], h);
    }
    // Map component gradients onto the divergence contraction.
    let comp = |r: usize, l: usize| -> usize {
        match (r.min(l), r.max(l)) {
            (0, 0) => 0,
            (1, 1) => 1,
            (2, 2) => 2,
            (0, 1) => 3,
            (0, 2) => 4,
            _ => 5,
        }
    };
    let mut div = V3::zeros();
    for k in 0..3 {
        let mut acc = T::zero();
        for l in 0..3 {
            acc += grads[comp(k, l)][l];
        }
        div[k] = acc;
    }
    Ok(div)
}

/// First-order fit of field value (and gradient) at an arbitrary target
/// location, used to interpolate flow quantities at inserted points and to
/// prescribe boundary-particle fields by extrapolation.
pub struct ValueFit<T: Real> {
    chol: Cholesky<T, Const<4>>,
    rows: Vec<(T, V3<T>)>,
}

impl<T: Real> ValueFit<T> {
    /// Builds the fit from donor positions. Donors beyond the support radius
    /// get zero weight and are kept so value iteration order stays aligned.
    pub fn build(
        target: &V3<T>,
        donors: impl Iterator<Item = V3<T>>,
        h: T,
        alpha: T,
        dim: Dim,
    ) -> Result<Self> {
        let h_sq = h * h;
        let mut a = Matrix4::<T>::zeros();
        let mut rows = Vec::new();
        for p in donors {
            let d = p - target;
            let w = weight_sq(d.norm_squared(), h_sq, alpha);
            let dh = d / h;
            let q = Vector4::new(T::one(), dh.x, dh.y, dh.z);
            a.syger(w, &q, &q, T::one());
            rows.push((w, dh));
        }
        for r in 0..4 {
            for c in (r + 1)..4 {
                a[(r, c)] = a[(c, r)];
            }
        }
        if dim == Dim::Two {
            let half = lit::<T>(0.5);
            a[(3, 3)] = (a[(1, 1)] + a[(2, 2)]) * half;
            for k in 0..3 {
                a[(3, k)] = T::zero();
                a[(k, 3)] = T::zero();
            }
        }
        let chol = Cholesky::new(a).ok_or(Error::SingularNormalMatrix {
            point: usize::MAX,
            cond: f64::INFINITY,
        })?;
        Ok(Self { chol, rows })
    }

    /// Fitted field value at the target. `values` must iterate the donors in
    /// the order they were supplied to [`ValueFit::build`].
    pub fn interpolate(&self, values: impl Iterator<Item = T>) -> T {
        let mut rhs = Vector4::zeros();
        for ((w, dh), f) in self.rows.iter().zip(values) {
            let q = Vector4::new(T::one(), dh.x, dh.y, dh.z);
            rhs += q * (*w * f);
        }
        self.chol.solve(&rhs)[0]
    }
}
