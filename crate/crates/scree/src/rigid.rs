//! Rigid intruder coupled to the granular solvers: Newton-Euler integration,
//! surface-integral loads from the continuum stress field, and pairwise
//! contact loads from DEM grains.

use crate::cloud::{SpatialHash, DETACH_NEIGHBORS};
use crate::continuum::ContinuumState;
use crate::dem::{contact_force, DemState, GrainKind};
use crate::error::{Error, Result};
use crate::gfdm::ValueFit;
use crate::num::{lit, Real, M3, V3};

/// One quadrature point of the body surface, stored relative to the center of
/// mass with its outward (into the granular material) normal and area weight.
#[derive(Debug, Clone, Copy)]
pub struct SurfacePoint<T: Real> {
    pub offset: V3<T>,
    pub normal: V3<T>,
    pub area: T,
}

/// Moment of inertia: a scalar in planar motion, the full tensor otherwise.
#[derive(Debug, Clone, Copy)]
pub enum Inertia<T: Real> {
    Planar(T),
    Full(M3<T>),
}

#[derive(Debug, Clone)]
pub struct RigidBody<T: Real> {
    pub mass: T,
    pub inertia: Inertia<T>,
    pub center: V3<T>,
    pub velocity: V3<T>,
    pub omega: V3<T>,
    pub surface: Vec<SurfacePoint<T>>,
}

impl<T: Real> RigidBody<T> {
    /// Solid disc of unit depth for planar runs: mass `rho pi R^2`, inertia
    /// `M R^2 / 2`, perimeter sampled at the given arc spacing.
    pub fn disc(radius: T, density: T, center: V3<T>, arc_spacing: T) -> Self {
        let mass = density * T::pi() * radius * radius;
        let inertia = mass * radius * radius * lit(0.5);
        let n = (T::pi() * lit::<T>(2.0) * radius / arc_spacing)
            .round()
            .to_subset()
            .unwrap_or(16.0f64)
            .max(8.0) as usize;
        let d_arc = T::pi() * lit::<T>(2.0) * radius / lit(n as f64);
        let surface = (0..n)
            .map(|k| {
                let theta = T::pi() * lit::<T>(2.0) * lit::<T>(k as f64) / lit(n as f64);
                let normal = V3::new(theta.cos(), theta.sin(), T::zero());
                SurfacePoint {
                    offset: normal * radius,
                    normal,
                    area: d_arc,
                }
            })
            .collect();
        Self {
            mass,
            inertia: Inertia::Planar(inertia),
            center,
            velocity: V3::zeros(),
            omega: V3::zeros(),
            surface,
        }
    }

    /// World position of surface point `k`.
    #[inline]
    pub fn surface_position(&self, k: usize) -> V3<T> {
        self.center + self.surface[k].offset
    }

    /// Velocity of a point on the body surface: `V + omega x (x - Xc)`.
    #[inline]
    pub fn surface_velocity(&self, k: usize) -> V3<T> {
        self.velocity + self.omega.cross(&self.surface[k].offset)
    }

    /// Total quadrature area (perimeter in planar mode).
    pub fn surface_area(&self) -> T {
        self.surface
            .iter()
            .map(|s| s.area)
            .fold(T::zero(), |a, b| a + b)
    }

    /// Signed distance is not tracked; a point is inside a disc/sphere body
    /// when closer to the center than the surface offsets.
    pub fn contains(&self, p: &V3<T>, radius: T) -> bool {
        (p - self.center).norm_squared() < radius * radius
    }
}

/// Surface-integral load from the continuum stress field:
/// `F = sum (-sigma . n) dA`, `T = sum (x - Xc) x (-sigma . n) dA`, with the
/// stress at each surface point interpolated by weighted least squares from
/// neighboring interior particles. Surface points without interior support
/// contribute nothing (the body is locally out of the material).
pub fn continuum_surface_load<T: Real>(
    body: &RigidBody<T>,
    state: &ContinuumState<T>,
) -> (V3<T>, V3<T>) {
    let cloud = &state.cloud;
    let h = cloud.support_h;
    let hash = SpatialHash::build(&cloud.positions, h);
    let mut force = V3::zeros();
    let mut torque = V3::zeros();
    let mut scratch: Vec<u32> = Vec::new();
    for (k, sp) in body.surface.iter().enumerate() {
        let pos = body.surface_position(k);
        hash.query_into(&cloud.positions, &pos, h, None, &mut scratch);
        let donors: Vec<usize> = scratch
            .iter()
            .map(|&j| j as usize)
            .filter(|&j| cloud.is_interior(j))
            .collect();
        if donors.len() < DETACH_NEIGHBORS {
            continue;
        }
        let fit = match ValueFit::build(
            &pos,
            donors.iter().map(|&j| cloud.positions[j]),
            h,
            lit(crate::cloud::DEFAULT_ALPHA),
            cloud.dim,
        ) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let mut sigma = M3::zeros();
        for (r, c) in [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)] {
            let v = fit.interpolate(donors.iter().map(|&j| state.stresses[j][(r, c)]));
            sigma[(r, c)] = v;
            sigma[(c, r)] = v;
        }
        let traction = -(sigma * sp.normal) * sp.area;
        force += traction;
        torque += (pos - body.center).cross(&traction);
    }
    (force, torque)
}

/// Contact load on the body from DEM grains: sums the Hertz-Mindlin forces on
/// every body-surface particle (moving at the surface velocity) against its
/// neighboring grains. Wall and body particles are excluded from the pair
/// list. The reaction on each grain is applied by the DEM sweep itself via
/// the exact pairwise antisymmetry of the contact law.
pub fn dem_body_load<T: Real>(body: &RigidBody<T>, state: &DemState<T>) -> (V3<T>, V3<T>) {
    let reach = state.params.radius * lit(2.1);
    let hash = SpatialHash::build(&state.positions, reach);
    let mut force = V3::zeros();
    let mut torque = V3::zeros();
    let mut scratch: Vec<u32> = Vec::new();
    let mut surface_k = 0usize;
    for i in 0..state.len() {
        if state.kinds[i] != GrainKind::BodySurface {
            continue;
        }
        let pos = state.positions[i];
        let vel = body.surface_velocity(surface_k);
        surface_k += 1;
        hash.query_into(&state.positions, &pos, reach, Some(i), &mut scratch);
        let mut f = V3::zeros();
        for &j in &scratch {
            let j = j as usize;
            if state.kinds[j] != GrainKind::Grain {
                continue;
            }
            f += contact_force(&pos, &state.positions[j], &vel, &state.velocities[j], &state.params);
        }
        force += f;
        torque += (pos - body.center).cross(&f);
    }
    (force, torque)
}

/// One explicit Euler step of the Newton-Euler equations. Planar mode
/// integrates the z torque against the scalar inertia (the gyroscopic term
/// vanishes identically); full mode solves `[I] domega/dt = T - omega x [I]
/// omega`. The center advects with the updated velocity.
pub fn body_step<T: Real>(
    body: &mut RigidBody<T>,
    force: &V3<T>,
    torque: &V3<T>,
    dt: T,
    gravity: &V3<T>,
) -> Result<()> {
    body.velocity += (force / body.mass + gravity) * dt;
    match body.inertia {
        Inertia::Planar(i_z) => {
            if i_z == T::zero() {
                return Err(Error::SingularInertia);
            }
            body.omega.z += dt * torque.z / i_z;
        }
        Inertia::Full(i_mat) => {
            let inv = i_mat.try_inverse().ok_or(Error::SingularInertia)?;
            let gyro = body.omega.cross(&(i_mat * body.omega));
            body.omega += inv * (torque - gyro) * dt;
        }
    }
    body.center += body.velocity * dt;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{ParticleKind, PointCloud};
    use crate::num::Dim;
    use approx::assert_relative_eq;

    /// Interior lattice filling a box, minus a disc-shaped cavity, carrying a
    /// prescribed stress field.
    fn immersed_state(
        disc_center: V3<f64>,
        disc_r: f64,
        stress_of: impl Fn(&V3<f64>) -> M3<f64>,
    ) -> ContinuumState<f64> {
        let s = 0.01;
        let mut positions = Vec::new();
        for j in 0..60 {
            for i in 0..60 {
                let p = V3::new(0.2 + (i as f64 + 0.5) * s, (j as f64 + 0.5) * s, 0.0);
                if (p - disc_center).norm() > disc_r {
                    positions.push(p);
                }
            }
        }
        let n = positions.len();
        let stresses = positions.iter().map(&stress_of).collect();
        let cloud = PointCloud::new(positions, vec![ParticleKind::Interior; n], s, Dim::Two);
        ContinuumState {
            velocities: vec![V3::zeros(); n],
            densities: vec![1500.0; n],
            stresses,
            volumes: vec![s * s; n],
            time: 0.0,
            cloud,
        }
    }

    #[test]
    fn disc_surface_discretization() {
        let body = RigidBody::<f64>::disc(0.05, 8050.0, V3::new(0.5, 0.6, 0.0), 0.0128);
        assert_relative_eq!(body.mass, 63.2245521534946, max_relative = 1e-12);
        match body.inertia {
            Inertia::Planar(i) => assert_relative_eq!(i, 0.07903069019186826, max_relative = 1e-12),
            _ => panic!("disc is planar"),
        }
        // Quadrature area within 1% of the true perimeter.
        assert_relative_eq!(
            body.surface_area(),
            2.0 * std::f64::consts::PI * 0.05,
            max_relative = 0.01
        );
        // Surface velocity field: V + omega x r.
        let mut body = body;
        body.velocity = V3::new(0.0, -1.0, 0.0);
        body.omega = V3::new(0.0, 0.0, 2.0);
        let k = 0; // point at angle 0: offset (R, 0, 0)
        let v = body.surface_velocity(k);
        assert_relative_eq!(v.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(v.y, -1.0 + 2.0 * 0.05, max_relative = 1e-12);
    }

    #[test]
    fn load_is_zero_outside_the_material() {
        let state = immersed_state(V3::new(0.5, 0.3, 0.0), 0.05, |_| M3::zeros());
        let body = RigidBody::disc(0.05, 8050.0, V3::new(5.0, 5.0, 0.0), 0.01);
        let (f, t) = continuum_surface_load(&body, &state);
        assert_eq!(f, V3::zeros());
        assert_eq!(t, V3::zeros());
    }

    #[test]
    fn uniform_pressure_on_closed_disc_cancels() {
        let q = 1e4;
        let center = V3::new(0.5, 0.3, 0.0);
        let state = immersed_state(center, 0.05, |_| M3::from_diagonal_element(-q));
        let body = RigidBody::disc(0.05, 8050.0, center, 0.01);
        let (f, _) = continuum_surface_load(&body, &state);
        let tol = 0.01 * q * body.surface_area();
        assert!(f.norm() < tol, "net force {} vs tol {tol}", f.norm());
    }

    #[test]
    fn lithostatic_field_gives_buoyancy() {
        let center = V3::new(0.5, 0.3, 0.0);
        let r = 0.05;
        let rho_g = 1500.0 * -9.81;
        let y0 = 0.6;
        let state = immersed_state(center, r, |p| {
            let mut m = M3::zeros();
            m[(1, 1)] = rho_g * (p.y - y0);
            m
        });
        let body = RigidBody::disc(r, 8050.0, center, 0.01);
        let (f, _) = continuum_surface_load(&body, &state);
        let buoyancy = 1500.0 * 9.81 * std::f64::consts::PI * r * r;
        assert_relative_eq!(f.y, buoyancy, max_relative = 0.05);
        assert!(f.x.abs() < 0.05 * buoyancy);
    }

    fn dem_with_body(grains: Vec<(V3<f64>, V3<f64>)>) -> (RigidBody<f64>, DemState<f64>) {
        let g_mod = 1e9 / 2.6;
        let r = 3e-3;
        let m = crate::dem::DemParams::sphere_mass(r, 2450.0);
        let params = crate::dem::DemParams::from_elastic(r, m, 0.5, 0.3815, 1e-5, g_mod, 0.3);
        let body = RigidBody::disc(0.05, 8050.0, V3::new(0.0, 0.0, 0.0), 2.0 * r);
        let mut positions: Vec<V3<f64>> = (0..body.surface.len())
            .map(|k| body.surface_position(k))
            .collect();
        let mut velocities = vec![V3::zeros(); positions.len()];
        let mut kinds = vec![GrainKind::BodySurface; positions.len()];
        for (x, v) in grains {
            positions.push(x);
            velocities.push(v);
            kinds.push(GrainKind::Grain);
        }
        let state = DemState {
            positions,
            velocities,
            kinds,
            params,
            dim: Dim::Two,
            time: 0.0,
        };
        (body, state)
    }

    #[test]
    fn no_grains_in_range_gives_zero_load() {
        let (body, state) = dem_with_body(vec![(V3::new(1.0, 0.0, 0.0), V3::zeros())]);
        let (f, t) = dem_body_load(&body, &state);
        assert_eq!(f, V3::zeros());
        assert_eq!(t, V3::zeros());
    }

    #[test]
    fn central_press_has_no_torque() {
        // A grain pressing on the surface point at angle 0 (offset (R,0,0)).
        let r_grain = 3e-3;
        let contact = V3::new(0.05 + 2.0 * r_grain - 1e-4, 0.0, 0.0);
        let (body, state) = dem_with_body(vec![(contact, V3::new(-1.0, 0.0, 0.0))]);
        let (f, t) = dem_body_load(&body, &state);
        assert!(f.x < 0.0, "push toward the center, got {f:?}");
        assert_relative_eq!(f.y, 0.0, epsilon = 1e-12);
        assert!(t.norm() < 1e-12);
    }

    #[test]
    fn symmetric_grain_pair_cancels_lateral_force() {
        let r_grain = 3e-3;
        let d = 0.05 + 2.0 * r_grain - 1e-4;
        let a = std::f64::consts::FRAC_PI_4;
        // The disc surface is sampled discretely; pick the two quadrature
        // points nearest +-45 degrees by mirroring an actual surface point.
        let (body0, _) = dem_with_body(vec![]);
        let sp = body0
            .surface
            .iter()
            .map(|s| s.normal)
            .min_by(|n1, n2| {
                let k = |n: &V3<f64>| (n.y.atan2(n.x) - a).abs();
                k(n1).partial_cmp(&k(n2)).unwrap()
            })
            .unwrap();
        let g1 = V3::new(sp.x * d, sp.y * d, 0.0);
        let g2 = V3::new(sp.x * d, -sp.y * d, 0.0);
        let (body, state) = dem_with_body(vec![
            (g1, V3::new(-1.0, -1.0, 0.0)),
            (g2, V3::new(-1.0, 1.0, 0.0)),
        ]);
        let (f, t) = dem_body_load(&body, &state);
        assert!(f.x < 0.0);
        assert!(f.y.abs() < 1e-12 * f.x.abs().max(1.0), "lateral {f:?}");
        assert!(t.norm() < 1e-10);
    }

    #[test]
    fn body_reaction_equals_minus_grain_forces() {
        let r_grain = 3e-3;
        let d = 0.05 + 2.0 * r_grain - 2e-4;
        let grains = vec![
            (V3::new(d, 0.0, 0.0), V3::new(-0.3, 0.2, 0.0)),
            (V3::new(0.0, -d, 0.0), V3::new(0.1, 0.5, 0.0)),
        ];
        let (body, state) = dem_with_body(grains);
        let (f_body, _) = dem_body_load(&body, &state);
        // Sum the contact forces the grains receive from the surface points.
        let mut f_grains = V3::zeros();
        for j in 0..state.len() {
            if state.kinds[j] != GrainKind::Grain {
                continue;
            }
            let mut k = 0;
            for i in 0..state.len() {
                if state.kinds[i] != GrainKind::BodySurface {
                    continue;
                }
                f_grains += contact_force(
                    &state.positions[j],
                    &state.positions[i],
                    &state.velocities[j],
                    &body.surface_velocity(k),
                    &state.params,
                );
                k += 1;
            }
        }
        assert_eq!(f_body, -f_grains);
    }

    #[test]
    fn free_fall_matches_discrete_parabola() {
        let mut body = RigidBody::disc(0.05, 8050.0, V3::zeros(), 0.01);
        let g = V3::new(0.0, -9.81, 0.0);
        let dt = 1e-4;
        let n = 1000;
        for _ in 0..n {
            body_step(&mut body, &V3::zeros(), &V3::zeros(), dt, &g).unwrap();
        }
        let t = n as f64 * dt;
        assert_relative_eq!(body.velocity.y, -9.81 * t, max_relative = 1e-12);
        // Symplectic sum: x_n = -g dt^2 n(n+1)/2.
        let expected = -9.81 * dt * dt * (n as f64) * (n as f64 + 1.0) / 2.0;
        assert_relative_eq!(body.center.y, expected, max_relative = 1e-10);
    }

    #[test]
    fn constant_torque_spins_up_linearly() {
        let mut body = RigidBody::disc(0.05, 8050.0, V3::zeros(), 0.01);
        let i_z = match body.inertia {
            Inertia::Planar(i) => i,
            _ => unreachable!(),
        };
        let torque = V3::new(0.3, -0.1, 2.0); // planar mode uses only z
        let dt = 1e-3;
        for _ in 0..100 {
            body_step(&mut body, &V3::zeros(), &torque, dt, &V3::zeros()).unwrap();
        }
        assert_relative_eq!(body.omega.z, 2.0 / i_z * 0.1, max_relative = 1e-12);
        // Planar torque response lives entirely in z.
        assert_eq!(body.omega.x, 0.0);
        assert_eq!(body.omega.y, 0.0);
    }

    #[test]
    fn torque_free_top_drift_is_first_order() {
        let inertia = M3::from_diagonal(&V3::new(1.0, 2.0, 3.0));
        let run = |dt: f64| {
            let mut body = RigidBody {
                mass: 1.0,
                inertia: Inertia::Full(inertia),
                center: V3::zeros(),
                velocity: V3::zeros(),
                omega: V3::new(1.0, 0.1, 0.0),
                surface: vec![],
            };
            let e0 = 0.5 * body.omega.dot(&(inertia * body.omega));
            let l0 = (inertia * body.omega).norm();
            let steps = (1.0 / dt) as usize;
            for _ in 0..steps {
                body_step(&mut body, &V3::zeros(), &V3::zeros(), dt, &V3::zeros()).unwrap();
            }
            let e1 = 0.5 * body.omega.dot(&(inertia * body.omega));
            let l1 = (inertia * body.omega).norm();
            ((e1 - e0).abs() / e0, (l1 - l0).abs() / l0)
        };
        let (de1, dl1) = run(1e-3);
        let (de2, dl2) = run(5e-4);
        assert!(de1 / de2 > 1.7 && de1 / de2 < 2.3, "energy ratio {}", de1 / de2);
        assert!(dl1 / dl2 > 1.7 && dl1 / dl2 < 2.3, "momentum ratio {}", dl1 / dl2);
    }

    #[test]
    fn singular_inertia_is_reported() {
        let mut body = RigidBody {
            mass: 1.0,
            inertia: Inertia::Full(M3::zeros()),
            center: V3::zeros(),
            velocity: V3::zeros(),
            omega: V3::zeros(),
            surface: vec![],
        };
        let err = body_step(&mut body, &V3::zeros(), &V3::new(0.0, 0.0, 1.0), 1e-3, &V3::zeros())
            .unwrap_err();
        assert!(matches!(err, Error::SingularInertia));
    }
}
