//! Lagrangian explicit time stepping of the continuum balance equations on
//! the moving point cloud.
//!
//! Each step is two phases: a read-only parallel phase computing all updates
//! from the frozen old state, and an exclusive phase applying them, refreshing
//! boundary-particle stresses, projecting wall penetration, and (periodically)
//! managing the cloud.

use rayon::prelude::*;

use crate::cloud::{
    manage_cloud, weight_sq, ManageParams, ManageReport, NeighborIndex, ParticleKind, PointCloud,
    DETACH_NEIGHBORS,
};
use crate::error::{Error, Result};
use crate::gfdm::{GfdmParams, NormalSystem, ValueFit, VelocityGradient};
use crate::num::{lit, Dim, Real, M3, V3};
use crate::rheology::{stress_update, MaterialParams};

/// Full per-particle continuum state.
#[derive(Debug, Clone)]
pub struct ContinuumState<T: Real> {
    pub cloud: PointCloud<T>,
    pub velocities: Vec<V3<T>>,
    pub densities: Vec<T>,
    pub stresses: Vec<M3<T>>,
    /// Per-point volume ledger; spacing^D at initialization.
    pub volumes: Vec<T>,
    pub time: T,
}

impl<T: Real> ContinuumState<T> {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    /// Keeps only particles for which `keep(i)` holds.
    pub fn retain(&mut self, keep: impl Fn(usize) -> bool) {
        let n = self.cloud.len();
        let mut mask = vec![false; n];
        for (i, m) in mask.iter_mut().enumerate() {
            *m = keep(i);
        }
        macro_rules! compact {
            ($v:expr) => {{
                let mut k = 0;
                $v.retain(|_| {
                    let keep = mask[k];
                    k += 1;
                    keep
                });
            }};
        }
        compact!(self.cloud.positions);
        compact!(self.cloud.kinds);
        compact!(self.velocities);
        compact!(self.densities);
        compact!(self.stresses);
        compact!(self.volumes);
    }

    pub fn interior_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.cloud.is_interior(i))
    }
}

/// Tangential treatment when a particle is projected back to a wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlipMode {
    /// Keep the tangential velocity (default).
    FreeSlip,
    /// Zero the full velocity on contact.
    NoSlip,
}

/// An axis-aligned wall; the domain lies on the `inward` side.
#[derive(Debug, Clone, Copy)]
pub struct Wall<T: Real> {
    pub axis: usize,
    pub position: T,
    /// +1 if admissible coordinates are above `position`, -1 if below.
    pub inward: T,
}

/// Scenario domain: the walls particles may not penetrate.
#[derive(Debug, Clone)]
pub struct Domain<T: Real> {
    pub dim: Dim,
    pub walls: Vec<Wall<T>>,
}

impl<T: Real> Domain<T> {
    /// Floor at vertical coordinate zero, open everywhere else.
    pub fn floor_only(dim: Dim) -> Self {
        Self {
            dim,
            walls: vec![Wall {
                axis: dim.vertical_axis(),
                position: T::zero(),
                inward: T::one(),
            }],
        }
    }

    /// Floor plus side walls at `lo` and `hi` along the first horizontal axis.
    pub fn box_2d(lo: T, hi: T) -> Self {
        let mut d = Self::floor_only(Dim::Two);
        d.walls.push(Wall {
            axis: 0,
            position: lo,
            inward: T::one(),
        });
        d.walls.push(Wall {
            axis: 0,
            position: hi,
            inward: -T::one(),
        });
        d
    }

    pub fn allows(&self, p: &V3<T>) -> bool {
        self.walls
            .iter()
            .all(|w| (p[w.axis] - w.position) * w.inward >= T::zero())
    }
}

/// Numerical controls of the continuum solver.
#[derive(Debug, Clone, Copy)]
pub struct NumericsParams<T: Real> {
    pub dt: T,
    pub gfdm: GfdmParams<T>,
    /// Run cloud management every this many steps (0 disables).
    pub manage_every: usize,
    /// Warn when dt * c_e / spacing exceeds this.
    pub cfl_max: T,
    /// Advect with the end-of-step velocity instead of the start-of-step one.
    pub advect_updated_velocity: bool,
    /// Evaluate D, W (and the stress update) on the updated velocity field.
    pub gradients_updated_velocity: bool,
    pub slip: SlipMode,
    /// Degrade failed stencils to ballistic motion after a management retry
    /// instead of aborting the run.
    pub ballistic_fallback: bool,
    /// Fraction of the affine-consistent fit residual blended into each
    /// velocity per step. Zero for affine velocity fields; suppresses the
    /// sub-stencil zero-energy modes of the collocated discretization.
    pub velocity_smoothing: T,
    /// Same blending applied to the carried density and stress fields, which
    /// otherwise accumulate stencil-scale noise from the integrated velocity
    /// divergence.
    pub field_smoothing: T,
}

impl<T: Real> NumericsParams<T> {
    pub fn with_dt(dt: T) -> Self {
        Self {
            dt,
            gfdm: GfdmParams::default(),
            manage_every: 10,
            cfl_max: lit(0.1),
            advect_updated_velocity: false,
            gradients_updated_velocity: false,
            slip: SlipMode::FreeSlip,
            ballistic_fallback: true,
            velocity_smoothing: lit(0.05),
            field_smoothing: lit(0.05),
        }
    }
}

enum Update<T: Real> {
    Boundary,
    /// Detached or degenerate-stencil particle in free flight.
    Ballistic {
        velocity: V3<T>,
        position: V3<T>,
    },
    Flow {
        velocity: V3<T>,
        position: V3<T>,
        density: T,
        stress: M3<T>,
        /// Deferred stress inputs when gradients are re-evaluated on the
        /// updated velocity field.
        pending: Option<(T, T)>, // (rho_new, reserved)
    },
}

/// Explicit Lagrangian stepper for the continuum model.
pub struct ContinuumSolver<T: Real> {
    pub material: MaterialParams<T>,
    pub numerics: NumericsParams<T>,
    pub domain: Domain<T>,
    steps: u64,
}

impl<T: Real> ContinuumSolver<T> {
    pub fn new(material: MaterialParams<T>, numerics: NumericsParams<T>, domain: Domain<T>) -> Self {
        Self {
            material,
            numerics,
            domain,
            steps: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// `dt * c_e / spacing`: acoustic Courant number of the stencil.
    pub fn cfl_number(&self, spacing: T) -> T {
        self.numerics.dt * self.material.elastic_wave_speed() / spacing
    }

    fn manage_params(&self, cloud: &PointCloud<T>) -> ManageParams<T> {
        let mut p = ManageParams::defaults(cloud.spacing, cloud.dim);
        p.strict = false;
        p
    }

    /// Runs point management (merge + hole fill) on the state.
    pub fn manage(&self, state: &mut ContinuumState<T>) -> Result<ManageReport> {
        let params = self.manage_params(&state.cloud);
        let domain = self.domain.clone();
        manage_cloud(state, &params, &|p| domain.allows(p))
    }

    /// Advances the state by one time step. A singular stencil triggers one
    /// cloud-management retry; with `ballistic_fallback` the offending
    /// particles degrade to free flight instead of failing the run.
    pub fn step(&mut self, state: &mut ContinuumState<T>) -> Result<()> {
        if self.steps == 0 {
            let cfl: f64 = self
                .cfl_number(state.cloud.spacing)
                .to_subset()
                .unwrap_or(f64::NAN);
            let cfl_max: f64 = self.numerics.cfl_max.to_subset().unwrap_or(0.1);
            if cfl > cfl_max {
                log::warn!(
                    "dt violates the elastic CFL guard: dt*c_e/spacing = {cfl:.3} > {cfl_max}"
                );
            }
        }
        match self.try_step(state, false) {
            Ok(()) => {}
            Err(Error::SingularNormalMatrix { point, .. }) => {
                log::debug!("singular stencil at point {point}; managing cloud and retrying");
                self.manage(state)?;
                self.try_step(state, self.numerics.ballistic_fallback)?;
            }
            Err(e) => return Err(e),
        }
        self.steps += 1;
        if self.numerics.manage_every > 0 && self.steps % self.numerics.manage_every as u64 == 0 {
            self.manage(state)?;
        }
        Ok(())
    }

    fn try_step(&self, state: &mut ContinuumState<T>, degrade_failed: bool) -> Result<()> {
        let dt = self.numerics.dt;
        let cloud = &state.cloud;
        let h = cloud.support_h;
        let gravity = cloud.dim.gravity(self.material.gravity);
        let index = NeighborIndex::build(&cloud.positions, h);

        let updates: Vec<Result<Update<T>>> = (0..cloud.len())
            .into_par_iter()
            .map(|i| {
                if !cloud.is_interior(i) {
                    return Ok(Update::Boundary);
                }
                if index.count(i) < DETACH_NEIGHBORS {
                    return Ok(self.ballistic(state, i, gravity));
                }
                match self.flow_update(state, &index, i, gravity) {
                    Ok(u) => Ok(u),
                    Err(Error::SingularNormalMatrix { .. }) if degrade_failed => {
                        Ok(self.ballistic(state, i, gravity))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect();

        let mut resolved = Vec::with_capacity(updates.len());
        for u in updates {
            resolved.push(u?);
        }

        if self.numerics.gradients_updated_velocity {
            self.finish_with_updated_gradients(state, &index, &mut resolved)?;
        }

        for (i, u) in resolved.iter().enumerate() {
            match u {
                Update::Boundary => {}
                Update::Ballistic { velocity, position } => {
                    state.velocities[i] = *velocity;
                    state.cloud.positions[i] = *position;
                    state.stresses[i] = M3::zeros();
                }
                Update::Flow {
                    velocity,
                    position,
                    density,
                    stress,
                    ..
                } => {
                    state.velocities[i] = *velocity;
                    state.cloud.positions[i] = *position;
                    state.densities[i] = *density;
                    state.stresses[i] = *stress;
                }
            }
        }
        state.time += dt;

        self.refresh_boundary_fields(state, &index);
        apply_boundary(state, &self.domain, self.numerics.slip);
        Ok(())
    }

    fn ballistic(&self, state: &ContinuumState<T>, i: usize, gravity: V3<T>) -> Update<T> {
        let dt = self.numerics.dt;
        let v_old = state.velocities[i];
        let v_new = v_old + gravity * dt;
        let v_adv = if self.numerics.advect_updated_velocity {
            v_new
        } else {
            v_old
        };
        Update::Ballistic {
            velocity: v_new,
            position: state.cloud.positions[i] + v_adv * dt,
        }
    }

    fn flow_update(
        &self,
        state: &ContinuumState<T>,
        index: &NeighborIndex<T>,
        i: usize,
        gravity: V3<T>,
    ) -> Result<Update<T>> {
        const COMPONENTS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
        let dt = self.numerics.dt;
        let cloud = &state.cloud;
        let h = cloud.support_h;
        let h_sq = h * h;
        let center = cloud.positions[i];
        let v_i = state.velocities[i];
        let s_i = state.stresses[i];

        let mut sys = NormalSystem::new();
        let mut rhs_v = [V3::zeros(); 3];
        let mut rhs_s = [V3::zeros(); 6];
        let mut rhs_rho = V3::zeros();
        let mut w_sum = T::zero();
        let mut wd_sum = V3::zeros();
        let mut wv_sum = V3::zeros();
        let mut ws_sum = [T::zero(); 6];
        let mut wrho_sum = T::zero();
        let rho_i = state.densities[i];
        for &j in index.neighbors(i) {
            let j = j as usize;
            let d = cloud.positions[j] - center;
            let w = weight_sq(d.norm_squared(), h_sq, self.numerics.gfdm.alpha);
            if w <= T::zero() {
                continue;
            }
            let dh = d / h;
            sys.add(&dh, w);
            let dv = state.velocities[j] - v_i;
            w_sum += w;
            wd_sum += dh * w;
            wv_sum += dv * w;
            for k in 0..3 {
                rhs_v[k] += dh * (w * dv[k]);
            }
            let drho = state.densities[j] - rho_i;
            wrho_sum += w * drho;
            rhs_rho += dh * (w * drho);
            let s_j = &state.stresses[j];
            for (c, (r, l)) in COMPONENTS.iter().enumerate() {
                let ds = s_j[(*r, *l)] - s_i[(*r, *l)];
                ws_sum[c] += w * ds;
                rhs_s[c] += dh * (w * ds);
            }
        }
        let factor = sys.factor(cloud.dim, self.numerics.gfdm.cond_max, i)?;

        let mut grads = [V3::zeros(); 6];
        for c in 0..6 {
            grads[c] = factor.gradient(&rhs_s[c], h);
        }
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
        let mut div_sigma = V3::zeros();
        for k in 0..3 {
            let mut acc = T::zero();
            for l in 0..3 {
                acc += grads[comp(k, l)][l];
            }
            div_sigma[k] = acc;
        }

        let mut l_mat = M3::zeros();
        for k in 0..3 {
            let g = factor.gradient(&rhs_v[k], h);
            for c in 0..3 {
                l_mat[(k, c)] = g[c];
            }
        }
        let vg = VelocityGradient::from_l(l_mat);

        let eps = self.numerics.velocity_smoothing;
        let mut v_base = v_i;
        if eps > T::zero() {
            for k in 0..3 {
                v_base[k] += eps * crate::gfdm::fit_residual(&factor, w_sum, &wd_sum, wv_sum[k], &rhs_v[k]);
            }
        }
        let eps_f = self.numerics.field_smoothing;
        let mut rho = rho_i;
        let mut sigma = s_i;
        if eps_f > T::zero() {
            rho += eps_f * crate::gfdm::fit_residual(&factor, w_sum, &wd_sum, wrho_sum, &rhs_rho);
            for (c, (r, l)) in COMPONENTS.iter().enumerate() {
                let blended = s_i[(*r, *l)]
                    + eps_f * crate::gfdm::fit_residual(&factor, w_sum, &wd_sum, ws_sum[c], &rhs_s[c]);
                sigma[(*r, *l)] = blended;
                sigma[(*l, *r)] = blended;
            }
        }
        let v_new = v_base + (div_sigma / rho + gravity) * dt;
        // Explicit-Euler density factor, clamped so one noisy divergence
        // sample cannot drive the density negative.
        let shrink = (dt * vg.divergence()).clamp(lit(-0.2), lit(0.2));
        let rho_new = rho * (T::one() - shrink);
        let v_adv = if self.numerics.advect_updated_velocity {
            v_new
        } else {
            v_i
        };
        let position = center + v_adv * dt;

        if self.numerics.gradients_updated_velocity {
            // Stress comes later from the updated velocity field.
            return Ok(Update::Flow {
                velocity: v_new,
                position,
                density: rho_new,
                stress: sigma,
                pending: Some((rho_new, T::zero())),
            });
        }
        let (stress, _) = stress_update(&sigma, &vg.d, &vg.w, rho_new, dt, &self.material)?;
        Ok(Update::Flow {
            velocity: v_new,
            position,
            density: rho_new,
            stress,
            pending: None,
        })
    }

    /// Second parallel pass: velocity gradients on the end-of-step field, then
    /// the stress update. Used when `gradients_updated_velocity` is set.
    fn finish_with_updated_gradients(
        &self,
        state: &ContinuumState<T>,
        index: &NeighborIndex<T>,
        updates: &mut [Update<T>],
    ) -> Result<()> {
        let dt = self.numerics.dt;
        let cloud = &state.cloud;
        let h = cloud.support_h;
        let h_sq = h * h;
        let v_new: Vec<V3<T>> = updates
            .iter()
            .enumerate()
            .map(|(i, u)| match u {
                Update::Boundary => state.velocities[i],
                Update::Ballistic { velocity, .. } | Update::Flow { velocity, .. } => *velocity,
            })
            .collect();

        let stresses: Vec<Result<Option<M3<T>>>> = updates
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                let Update::Flow {
                    pending: Some((rho_new, _)),
                    stress: sigma_base,
                    ..
                } = u
                else {
                    return Ok(None);
                };
                let center = cloud.positions[i];
                let v_i = v_new[i];
                let mut sys = NormalSystem::new();
                let mut rhs = [V3::zeros(); 3];
                for &j in index.neighbors(i) {
                    let j = j as usize;
                    let d = cloud.positions[j] - center;
                    let w = weight_sq(d.norm_squared(), h_sq, self.numerics.gfdm.alpha);
                    if w <= T::zero() {
                        continue;
                    }
                    let dh = d / h;
                    sys.add(&dh, w);
                    let dv = v_new[j] - v_i;
                    for k in 0..3 {
                        rhs[k] += dh * (w * dv[k]);
                    }
                }
                let factor = match sys.factor(cloud.dim, self.numerics.gfdm.cond_max, i) {
                    Ok(f) => f,
                    // The first pass succeeded, so only degrade mode lands here.
                    Err(_) => return Ok(None),
                };
                let mut l_mat = M3::zeros();
                for k in 0..3 {
                    let g = factor.gradient(&rhs[k], h);
                    for c in 0..3 {
                        l_mat[(k, c)] = g[c];
                    }
                }
                let vg = VelocityGradient::from_l(l_mat);
                let (stress, _) =
                    stress_update(sigma_base, &vg.d, &vg.w, *rho_new, dt, &self.material)?;
                Ok(Some(stress))
            })
            .collect();

        for (u, s) in updates.iter_mut().zip(stresses) {
            if let (Update::Flow { stress, .. }, Some(new_stress)) = (u, s?) {
                *stress = new_stress;
            }
        }
        Ok(())
    }

    /// Prescribes boundary-particle stresses by weighted least-squares
    /// extrapolation from interior neighbors; boundary particles with no
    /// interior support carry zero stress.
    fn refresh_boundary_fields(&self, state: &mut ContinuumState<T>, index: &NeighborIndex<T>) {
        let cloud = &state.cloud;
        let h = cloud.support_h;
        let alpha = self.numerics.gfdm.alpha;
        let new_stresses: Vec<Option<(usize, M3<T>)>> = (0..cloud.len())
            .into_par_iter()
            .map(|i| {
                if cloud.is_interior(i) {
                    return None;
                }
                let donors: Vec<usize> = index
                    .neighbors(i)
                    .iter()
                    .map(|&j| j as usize)
                    .filter(|&j| cloud.is_interior(j))
                    .collect();
                if donors.len() < DETACH_NEIGHBORS {
                    return Some((i, M3::zeros()));
                }
                let fit = match ValueFit::build(
                    &cloud.positions[i],
                    donors.iter().map(|&j| cloud.positions[j]),
                    h,
                    alpha,
                    cloud.dim,
                ) {
                    Ok(f) => f,
                    Err(_) => return Some((i, M3::zeros())),
                };
                let mut sigma = M3::zeros();
                for (r, c) in [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)] {
                    let mut v = fit.interpolate(donors.iter().map(|&j| state.stresses[j][(r, c)]));
                    // Allow the moderate overshoot a one-sided linear
                    // extrapolation of a smooth field needs, but not more:
                    // unbounded extrapolation amplifies stencil noise.
                    let first = state.stresses[donors[0]][(r, c)];
                    let (mut lo, mut hi) = (first, first);
                    for &j in &donors[1..] {
                        let s = state.stresses[j][(r, c)];
                        lo = lo.min(s);
                        hi = hi.max(s);
                    }
                    let slack = (hi - lo) * lit(0.5);
                    v = v.clamp(lo - slack, hi + slack);
                    sigma[(r, c)] = v;
                    sigma[(c, r)] = v;
                }
                Some((i, sigma))
            })
            .collect();
        for entry in new_stresses.into_iter().flatten() {
            state.stresses[entry.0] = entry.1;
        }
    }
}

/// Projects interior particles back inside the domain: penetrating particles
/// move onto the wall surface and lose their inward normal velocity (free
/// slip) or their full velocity (no slip). Boundary particles keep their
/// prescribed velocities.
pub fn apply_boundary<T: Real>(state: &mut ContinuumState<T>, domain: &Domain<T>, slip: SlipMode) {
    for i in 0..state.cloud.len() {
        if !state.cloud.is_interior(i) {
            continue;
        }
        for wall in &domain.walls {
            let p = &mut state.cloud.positions[i];
            let depth = (p[wall.axis] - wall.position) * wall.inward;
            if depth < T::zero() {
                p[wall.axis] = wall.position;
                let v = &mut state.velocities[i];
                match slip {
                    SlipMode::FreeSlip => {
                        if v[wall.axis] * wall.inward < T::zero() {
                            v[wall.axis] = T::zero();
                        }
                    }
                    SlipMode::NoSlip => *v = V3::zeros(),
                }
            }
        }
    }
}

/// Initial column geometry.
#[derive(Debug, Clone, Copy)]
pub enum ColumnGeometry<T: Real> {
    /// 2D column of width `2 * half_width` and height `height`, centered on
    /// x = 0, resting on the floor.
    Plane { half_width: T, height: T },
    /// 3D cylinder of given radius and height, centered on the z axis.
    Cylinder { radius: T, height: T },
}

/// Builds the initial state: a regular interior lattice at rest with bulk
/// density and zero stress, plus a floor of boundary particles wide enough
/// for the expected spreading.
pub fn initialize_column<T: Real>(
    geometry: ColumnGeometry<T>,
    spacing: T,
    material: &MaterialParams<T>,
    support_factor: T,
    floor_extent: T,
) -> Result<ContinuumState<T>> {
    if !(spacing > T::zero()) {
        return Err(Error::InvalidGeometry("spacing must be positive".into()));
    }
    let half = lit::<T>(0.5);
    let mut positions = Vec::new();
    let mut kinds = Vec::new();
    let dim;
    let anchor;

    match geometry {
        ColumnGeometry::Plane { half_width, height } => {
            if !(half_width > T::zero()) || !(height > T::zero()) {
                return Err(Error::InvalidGeometry(
                    "column half-width and height must be positive".into(),
                ));
            }
            dim = Dim::Two;
            let nx = usize::max(1, round_count(half_width * lit(2.0) / spacing));
            let ny = usize::max(1, round_count(height / spacing));
            let x0 = -(lit::<T>(nx as f64) * spacing) * half + spacing * half;
            anchor = V3::new(x0, spacing * half, T::zero());
            for j in 0..ny {
                for i in 0..nx {
                    positions.push(V3::new(
                        x0 + spacing * lit(i as f64),
                        spacing * half + spacing * lit(j as f64),
                        T::zero(),
                    ));
                    kinds.push(ParticleKind::Interior);
                }
            }
            let k_max = round_count(floor_extent / spacing) as i64;
            for k in -k_max..=k_max {
                positions.push(V3::new(spacing * lit(k as f64), T::zero(), T::zero()));
                kinds.push(ParticleKind::Boundary);
            }
        }
        ColumnGeometry::Cylinder { radius, height } => {
            if !(radius > T::zero()) || !(height > T::zero()) {
                return Err(Error::InvalidGeometry(
                    "cylinder radius and height must be positive".into(),
                ));
            }
            dim = Dim::Three;
            anchor = V3::new(spacing * half, spacing * half, spacing * half);
            let k_r = round_count(radius / spacing) as i64 + 1;
            let nz = usize::max(1, round_count(height / spacing));
            let r_sq = radius * radius;
            for kz in 0..nz {
                for ky in -k_r..=k_r {
                    for kx in -k_r..=k_r {
                        let x = spacing * (lit::<T>(kx as f64) + half);
                        let y = spacing * (lit::<T>(ky as f64) + half);
                        if x * x + y * y > r_sq {
                            continue;
                        }
                        positions.push(V3::new(x, y, spacing * half + spacing * lit(kz as f64)));
                        kinds.push(ParticleKind::Interior);
                    }
                }
            }
            let k_f = round_count(floor_extent / spacing) as i64;
            let floor_sq = floor_extent * floor_extent;
            for ky in -k_f..=k_f {
                for kx in -k_f..=k_f {
                    let x = spacing * lit::<T>(kx as f64);
                    let y = spacing * lit::<T>(ky as f64);
                    if x * x + y * y > floor_sq {
                        continue;
                    }
                    positions.push(V3::new(x, y, T::zero()));
                    kinds.push(ParticleKind::Boundary);
                }
            }
        }
    }

    let n = positions.len();
    let n_interior = kinds.iter().filter(|k| **k == ParticleKind::Interior).count();
    if n_interior == 0 {
        return Err(Error::InvalidGeometry("no interior particles".into()));
    }
    let mut cloud = PointCloud::with_support(
        positions,
        kinds,
        spacing,
        spacing * support_factor,
        dim,
    );
    cloud.lattice_anchor = anchor;
    let cell_volume = match dim {
        Dim::Two => spacing * spacing,
        Dim::Three => spacing * spacing * spacing,
    };
    Ok(ContinuumState {
        velocities: vec![V3::zeros(); n],
        densities: vec![material.bulk_density; n],
        stresses: vec![M3::zeros(); n],
        volumes: vec![cell_volume; n],
        time: T::zero(),
        cloud,
    })
}

fn round_count<T: Real>(x: T) -> usize {
    let v: f64 = x.round().to_subset().unwrap_or(0.0);
    v.max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sand() -> MaterialParams<f64> {
        MaterialParams::sand()
    }

    fn small_column() -> ContinuumState<f64> {
        initialize_column(
            ColumnGeometry::Plane {
                half_width: 0.05,
                height: 0.05,
            },
            0.005,
            &sand(),
            3.0,
            0.2,
        )
        .unwrap()
    }

    #[test]
    fn zero_gravity_zero_state_is_fixed_point() {
        let mut state = small_column();
        let mut material = sand();
        material.gravity = 0.0;
        let mut solver = ContinuumSolver::new(
            material,
            NumericsParams::with_dt(1e-5),
            Domain::floor_only(Dim::Two),
        );
        let before = state.clone();
        solver.step(&mut state).unwrap();
        assert_eq!(state.cloud.positions, before.cloud.positions);
        assert_eq!(state.velocities, before.velocities);
        assert_eq!(state.densities, before.densities);
        assert_eq!(state.stresses, before.stresses);
        assert_relative_eq!(state.time, 1e-5);
    }

    #[test]
    fn first_step_from_zero_stress_gains_exactly_dt_g() {
        let mut state = small_column();
        let dt = 1e-5;
        let mut numerics = NumericsParams::with_dt(dt);
        numerics.manage_every = 0;
        let mut solver = ContinuumSolver::new(sand(), numerics, Domain::floor_only(Dim::Two));
        solver.step(&mut state).unwrap();
        for i in state.interior_ids().collect::<Vec<_>>() {
            assert_eq!(state.velocities[i], V3::new(0.0, -9.81 * dt, 0.0));
        }
    }

    #[test]
    fn uniform_expansion_scales_density_analytically() {
        // Free cloud (no boundary), v = c x, one step: rho *= 1 - dt c dim.
        let c = 3.0;
        let dt = 1e-4;
        let mut state = small_column();
        let kinds = state.cloud.kinds.clone();
        state.retain(|i| kinds[i] == ParticleKind::Interior);
        for i in 0..state.len() {
            state.velocities[i] = state.cloud.positions[i] * c;
        }
        let mut material = sand();
        material.gravity = 0.0;
        let mut numerics = NumericsParams::with_dt(dt);
        numerics.manage_every = 0;
        let mut solver = ContinuumSolver::new(
            material,
            numerics,
            Domain {
                dim: Dim::Two,
                walls: vec![],
            },
        );
        let rho_before = state.densities.clone();
        solver.step(&mut state).unwrap();
        let expected = 1.0 - dt * c * 2.0;
        for i in 0..state.len() {
            assert_relative_eq!(
                state.densities[i],
                rho_before[i] * expected,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn boundary_projection_contracts() {
        let mut state = small_column();
        let domain = Domain::floor_only(Dim::Two);
        // Find an interior particle and push it below the floor.
        let i = state.interior_ids().next().unwrap();
        state.cloud.positions[i].y = -1e-4;
        state.velocities[i] = V3::new(1.0, -0.5, 0.0);
        apply_boundary(&mut state, &domain, SlipMode::FreeSlip);
        assert_eq!(state.cloud.positions[i].y, 0.0);
        assert_eq!(state.velocities[i], V3::new(1.0, 0.0, 0.0));

        // Upward-moving particle on the wall keeps its velocity.
        state.cloud.positions[i].y = -1e-4;
        state.velocities[i] = V3::new(0.3, 0.7, 0.0);
        apply_boundary(&mut state, &domain, SlipMode::FreeSlip);
        assert_eq!(state.velocities[i], V3::new(0.3, 0.7, 0.0));

        // No penetration: untouched.
        let before = state.clone();
        apply_boundary(&mut state, &domain, SlipMode::FreeSlip);
        assert_eq!(state.cloud.positions, before.cloud.positions);
        assert_eq!(state.velocities, before.velocities);
    }

    #[test]
    fn column_particle_budget() {
        // Budget 2000 at a = 1, L0 = 0.05.
        let budget = 2000.0f64;
        let (l0, h0) = (0.05, 0.05);
        let spacing = (2.0 * l0 * h0 / budget as f64).sqrt();
        let state = initialize_column(
            ColumnGeometry::Plane {
                half_width: l0,
                height: h0,
            },
            spacing,
            &sand(),
            3.0,
            0.3,
        )
        .unwrap();
        let n = state.interior_ids().count() as f64;
        assert!((n - budget).abs() / budget < 0.05, "count {n}");
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let err = initialize_column(
            ColumnGeometry::Plane {
                half_width: 0.05,
                height: 0.0,
            },
            0.005,
            &sand(),
            3.0,
            0.2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidGeometry(_)));
    }

    #[test]
    fn cylinder_particle_count_matches_reference_configuration() {
        // Coarse 3D configuration: about 19440 interior points.
        let budget = 19440.0;
        let (r, h) = (0.2, 0.2);
        let spacing = (std::f64::consts::PI * r * r * h / budget).cbrt();
        let state = initialize_column(
            ColumnGeometry::Cylinder {
                radius: r,
                height: h,
            },
            spacing,
            &sand(),
            3.0,
            0.5,
        )
        .unwrap();
        let n = state.interior_ids().count() as f64;
        assert!(
            (n - budget).abs() / budget < 0.05,
            "count {n} vs budget {budget}"
        );
    }

    #[test]
    fn two_runs_are_bitwise_identical() {
        let run = || {
            let mut state = small_column();
            let mut solver = ContinuumSolver::new(
                sand(),
                NumericsParams::with_dt(1e-5),
                Domain::floor_only(Dim::Two),
            );
            for _ in 0..50 {
                solver.step(&mut state).unwrap();
            }
            state
        };
        let a = run();
        let b = run();
        assert_eq!(a.cloud.positions, b.cloud.positions);
        assert_eq!(a.velocities, b.velocities);
        assert_eq!(a.densities, b.densities);
        assert_eq!(a.stresses, b.stresses);
    }
}
