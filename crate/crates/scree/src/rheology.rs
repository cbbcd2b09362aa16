//! Elasto-viscoplastic constitutive model: stress decomposition, the mu(I)
//! friction law and its inverse, the objective (Jaumann) elastic increment,
//! and the elastic-trial / return-mapping stress update.
//!
//! Sign conventions: pressure `p = -tr(sigma)/3` is positive in compression;
//! `tau_bar = |sigma_0|/sqrt(2)` is the equivalent shear stress of the
//! trace-free deviator `sigma_0 = sigma + p I`.

use crate::error::{Error, Result};
use crate::num::{lit, Real, M3};

/// Macroscopic material constants.
#[derive(Debug, Clone, Copy)]
pub struct MaterialParams<T: Real> {
    /// Young's modulus E [Pa].
    pub youngs_modulus: T,
    /// Poisson ratio [-], in (0, 0.5).
    pub poisson_ratio: T,
    /// Static friction coefficient mu_s [-].
    pub mu_s: T,
    /// Limiting friction coefficient mu_2 [-], > mu_s.
    pub mu_2: T,
    /// Rate constant xi multiplying sqrt(p) in the flow rule.
    pub xi: T,
    /// Reference inertial number I_0 [-].
    pub i0: T,
    /// Mean grain size d [m].
    pub grain_diameter: T,
    /// Grain material density rho_s [kg/m^3].
    pub grain_density: T,
    /// Bulk density rho_0 [kg/m^3].
    pub bulk_density: T,
    /// Critical density rho_C below which the material is stress-free.
    pub critical_density: T,
    /// Signed gravity along the vertical axis [m/s^2], usually negative.
    pub gravity: T,
}

impl<T: Real> MaterialParams<T> {
    /// The standard dry-sand parameter set used by all shipped scenarios.
    pub fn sand() -> Self {
        Self {
            youngs_modulus: lit(1e9),
            poisson_ratio: lit(0.3),
            mu_s: lit(0.3819),
            mu_2: lit(0.6435),
            xi: lit(1.123),
            i0: lit(0.32),
            grain_diameter: lit(3e-3),
            grain_density: lit(2450.0),
            bulk_density: lit(1500.0),
            critical_density: lit(1500.0),
            gravity: lit(-9.81),
        }
    }

    /// Shear modulus G = E / (2 (1 + nu)).
    #[inline]
    pub fn shear_modulus(&self) -> T {
        self.youngs_modulus / ((T::one() + self.poisson_ratio) * lit(2.0))
    }

    /// Compressive bulk modulus K_C = E / (3 (1 - 2 nu)).
    #[inline]
    pub fn bulk_modulus(&self) -> T {
        self.youngs_modulus
            / ((T::one() - lit::<T>(2.0) * self.poisson_ratio) * lit(3.0))
    }

    /// Elastic wave speed sqrt(E / rho_0) used by the CFL guard.
    pub fn elastic_wave_speed(&self) -> T {
        (self.youngs_modulus / self.bulk_density).sqrt()
    }

    /// Rate constant implied by (I_0, d, rho_s); compared against `xi` at
    /// config load and reported as a consistency warning on mismatch.
    pub fn xi_from_grain(&self) -> T {
        self.i0 / (self.grain_diameter * self.grain_density.sqrt())
    }
}

/// Pressure / deviator / shear-stress decomposition of a Cauchy stress.
#[derive(Debug, Clone, Copy)]
pub struct StressParts<T: Real> {
    /// p = -tr(sigma)/3, positive in compression.
    pub pressure: T,
    /// Trace-free deviator sigma_0 = sigma + p I.
    pub deviator: M3<T>,
    /// tau_bar = |sigma_0| / sqrt(2).
    pub tau_bar: T,
}

/// Splits a symmetric stress tensor into pressure, deviator, and equivalent
/// shear stress.
pub fn decompose_stress<T: Real>(sigma: &M3<T>) -> StressParts<T> {
    let third = lit::<T>(1.0 / 3.0);
    let pressure = -sigma.trace() * third;
    let mut deviator = *sigma;
    for k in 0..3 {
        deviator[(k, k)] += pressure;
    }
    let norm = deviator.norm(); // sqrt(tr(s0^2)) for symmetric s0
    let tau_bar = norm / T::SQRT_2();
    StressParts {
        pressure,
        deviator,
        tau_bar,
    }
}

/// Friction coefficient mu(I), continuously extended by mu(0) = mu_s.
pub fn mu_of_inertial_number<T: Real>(i: T, params: &MaterialParams<T>) -> T {
    if i > T::zero() {
        params.mu_s + (params.mu_2 - params.mu_s) / (params.i0 / i + T::one())
    } else {
        params.mu_s
    }
}

/// Plastic shear strain rate: the inverse of the mu(I) relation,
/// `gamma_dot = sqrt(p) xi (tau_bar - mu_s p) / (mu_2 p - tau_bar)` above
/// yield, zero at or below.
pub fn gamma_dot<T: Real>(tau_bar: T, pressure: T, params: &MaterialParams<T>) -> Result<T> {
    let yield_stress = params.mu_s * pressure;
    if tau_bar <= yield_stress {
        return Ok(T::zero());
    }
    let limit = params.mu_2 * pressure;
    if tau_bar >= limit {
        return Err(Error::AboveLimitSurface {
            tau_bar: tau_bar.to_subset().unwrap_or(f64::NAN),
            limit: limit.to_subset().unwrap_or(f64::NAN),
        });
    }
    Ok(pressure.sqrt() * params.xi * (tau_bar - yield_stress) / (limit - tau_bar))
}

/// Shear stress as a function of the plastic strain rate (the forward mu(I)
/// relation); exact inverse of [`gamma_dot`].
pub fn tau_of_gamma_dot<T: Real>(gd: T, pressure: T, params: &MaterialParams<T>) -> T {
    if gd <= T::zero() {
        return params.mu_s * pressure;
    }
    let ratio = params.xi * pressure.sqrt() / gd;
    pressure * (params.mu_s + (params.mu_2 - params.mu_s) / (ratio + T::one()))
}

/// One explicit Euler step of the hypoelastic law with Jaumann spin terms:
/// `sigma' = sigma + dt ( E/(1+nu) [ (D - D_p) + nu/(1-2nu) tr(D - D_p) I ]
/// + W sigma - sigma W )`. The result is symmetrized.
pub fn elastic_increment<T: Real>(
    sigma: &M3<T>,
    d: &M3<T>,
    w: &M3<T>,
    d_plastic: &M3<T>,
    dt: T,
    params: &MaterialParams<T>,
) -> M3<T> {
    let de = d - d_plastic;
    let coef = params.youngs_modulus / (T::one() + params.poisson_ratio);
    let tr_coef =
        params.poisson_ratio / (T::one() - lit::<T>(2.0) * params.poisson_ratio) * de.trace();
    let mut rate = de;
    for k in 0..3 {
        rate[(k, k)] += tr_coef;
    }
    let rate = rate * coef + w * sigma - sigma * w;
    let next = sigma + rate * dt;
    (next + next.transpose()) * lit::<T>(0.5)
}

/// Projects a trial shear stress back onto the yield condition
/// `tau = tau_tr - G dt gamma_dot(tau)` via the closed-form quadratic root
/// `tau = 2H / (B + sqrt(B^2 - 4H))` with
/// `B = mu_2 p + tau_tr + G dt sqrt(p) xi` and
/// `H = tau_tr mu_2 p + G dt sqrt(p) xi mu_s p`.
pub fn return_map<T: Real>(tau_tr: T, p_tr: T, dt: T, params: &MaterialParams<T>) -> Result<T> {
    debug_assert!(p_tr > T::zero() && tau_tr > params.mu_s * p_tr);
    let relax = params.shear_modulus() * dt * p_tr.sqrt() * params.xi;
    let limit = params.mu_2 * p_tr;
    let b = limit + tau_tr + relax;
    let h = tau_tr * limit + relax * params.mu_s * p_tr;
    let four = lit::<T>(4.0);
    let disc = b * b - four * h;
    if disc < T::zero() {
        return Err(Error::NegativeDiscriminant {
            disc: disc.to_subset().unwrap_or(f64::NAN),
        });
    }
    Ok(lit::<T>(2.0) * h / (b + disc.sqrt()))
}

/// Which branch of the stress update fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StressOutcome {
    /// Density below critical or trial pressure non-positive: stress zeroed.
    Collapsed,
    /// Trial stress at or below yield: accepted unchanged.
    Elastic,
    /// Trial above yield: deviator scaled back by the return map.
    ReturnMapped,
}

/// Full elastic-trial / return-mapping stress update for one particle and one
/// time step. The trial integrates the elastic law with zero plastic strain
/// rate; the gate zeroes stress for underdense or tensile states; above yield
/// the deviator is rescaled onto the return-mapped shear stress while the
/// trial pressure is kept.
pub fn stress_update<T: Real>(
    sigma: &M3<T>,
    d: &M3<T>,
    w: &M3<T>,
    rho_new: T,
    dt: T,
    params: &MaterialParams<T>,
) -> Result<(M3<T>, StressOutcome)> {
    let trial = elastic_increment(sigma, d, w, &M3::zeros(), dt, params);
    let parts = decompose_stress(&trial);
    if rho_new < params.critical_density || parts.pressure <= T::zero() {
        return Ok((M3::zeros(), StressOutcome::Collapsed));
    }
    if parts.tau_bar <= params.mu_s * parts.pressure {
        return Ok((trial, StressOutcome::Elastic));
    }
    // tau_bar > mu_s p > 0 here, so the rescale is well defined.
    let tau_new = return_map(parts.tau_bar, parts.pressure, dt, params)?;
    let mut next = parts.deviator * (tau_new / parts.tau_bar);
    for k in 0..3 {
        next[(k, k)] -= parts.pressure;
    }
    Ok((next, StressOutcome::ReturnMapped))
}
