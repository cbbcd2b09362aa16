//! Moving point cloud: particle kinds, Gaussian weight kernel, spatial-hash
//! neighbor search, and point management (merging clustered points, filling
//! holes).

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::continuum::ContinuumState;
use crate::error::{Error, Result};
use crate::gfdm::ValueFit;
use crate::num::{lit, Dim, Real, V3};

/// Default weight-kernel exponent.
pub const DEFAULT_ALPHA: f64 = 6.25;
/// Default ratio of support radius to initial spacing.
pub const DEFAULT_SUPPORT_FACTOR: f64 = 3.0;
/// Points with fewer neighbors than this are considered detached from the
/// bulk: they are integrated ballistically and excluded from run-out
/// measurements, and hole-filling does not try to rescue them.
pub const DETACH_NEIGHBORS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleKind {
    /// Moves with the flow and carries the full state.
    Interior,
    /// Fixed in space during continuum stepping; velocity is prescribed.
    Boundary,
}

/// The point set: positions, kinds, and the lattice metadata the stencils
/// and point management rely on.
#[derive(Debug, Clone)]
pub struct PointCloud<T: Real> {
    pub positions: Vec<V3<T>>,
    pub kinds: Vec<ParticleKind>,
    /// Initial lattice spacing [m].
    pub spacing: T,
    /// Stencil support radius h [m].
    pub support_h: T,
    /// Origin of the generating lattice; hole-filling inserts at
    /// `anchor + spacing * (i, j, k)`.
    pub lattice_anchor: V3<T>,
    pub dim: Dim,
}

impl<T: Real> PointCloud<T> {
    /// Builds a cloud with the default support radius `3 * spacing`.
    pub fn new(
        positions: Vec<V3<T>>,
        kinds: Vec<ParticleKind>,
        spacing: T,
        dim: Dim,
    ) -> Self {
        let support_h = spacing * lit(DEFAULT_SUPPORT_FACTOR);
        Self::with_support(positions, kinds, spacing, support_h, dim)
    }

    pub fn with_support(
        positions: Vec<V3<T>>,
        kinds: Vec<ParticleKind>,
        spacing: T,
        support_h: T,
        dim: Dim,
    ) -> Self {
        assert_eq!(positions.len(), kinds.len());
        assert!(spacing > T::zero() && support_h > T::zero());
        Self {
            positions,
            kinds,
            spacing,
            support_h,
            lattice_anchor: V3::zeros(),
            dim,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn is_interior(&self, i: usize) -> bool {
        self.kinds[i] == ParticleKind::Interior
    }
}

/// Gaussian weight with compact support `[0, h]`: `exp(-alpha d^2/h^2)` for
/// `d <= h`, zero beyond.
#[inline]
pub fn weight<T: Real>(dist: T, h: T, alpha: T) -> T {
    weight_sq(dist * dist, h * h, alpha)
}

/// Same kernel on squared distances; saves the square root in hot loops.
#[inline]
pub fn weight_sq<T: Real>(dist_sq: T, h_sq: T, alpha: T) -> T {
    if dist_sq <= h_sq {
        (-alpha * dist_sq / h_sq).exp()
    } else {
        T::zero()
    }
}

/// Uniform spatial hash over grid cells of fixed size.
pub struct SpatialHash<T: Real> {
    cell_size: T,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl<T: Real> SpatialHash<T> {
    pub fn build(positions: &[V3<T>], cell_size: T) -> Self {
        assert!(cell_size > T::zero());
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in positions.iter().enumerate() {
            cells
                .entry(Self::key(p, cell_size))
                .or_default()
                .push(i as u32);
        }
        Self { cell_size, cells }
    }

    #[inline]
    fn key(p: &V3<T>, cell: T) -> (i64, i64, i64) {
        let f = |x: T| (x / cell).floor().to_subset().unwrap_or(0.0) as i64;
        (f(p.x), f(p.y), f(p.z))
    }

    /// Appends ids of all points within `radius` of `center` (excluding
    /// `exclude`) to `out`, sorted ascending.
    pub fn query_into(
        &self,
        positions: &[V3<T>],
        center: &V3<T>,
        radius: T,
        exclude: Option<usize>,
        out: &mut Vec<u32>,
    ) {
        out.clear();
        let r_sq = radius * radius;
        let (cx, cy, cz) = Self::key(center, self.cell_size);
        // Cells within the radius; usually a 3^D block since cell size >= radius.
        let reach = {
            let r = radius / self.cell_size;
            r.ceil().to_subset().unwrap_or(1.0) as i64
        };
        for ix in (cx - reach)..=(cx + reach) {
            for iy in (cy - reach)..=(cy + reach) {
                for iz in (cz - reach)..=(cz + reach) {
                    let Some(ids) = self.cells.get(&(ix, iy, iz)) else {
                        continue;
                    };
                    for &j in ids {
                        if Some(j as usize) == exclude {
                            continue;
                        }
                        let d = positions[j as usize] - center;
                        if d.norm_squared() <= r_sq {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

/// Per-point neighbor lists within a fixed radius, stored compressed.
pub struct NeighborIndex<T: Real> {
    pub radius: T,
    offsets: Vec<usize>,
    ids: Vec<u32>,
}

impl<T: Real> NeighborIndex<T> {
    /// Builds the index with lists `{ j != i : |x_j - x_i| <= radius }` in
    /// ascending id order.
    pub fn build(positions: &[V3<T>], radius: T) -> Self {
        let hash = SpatialHash::build(positions, radius);
        let lists: Vec<Vec<u32>> = positions
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut out = Vec::with_capacity(32);
                hash.query_into(positions, p, radius, Some(i), &mut out);
                out
            })
            .collect();
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut total = 0;
        for l in &lists {
            total += l.len();
            offsets.push(total);
        }
        let mut ids = Vec::with_capacity(total);
        for l in &lists {
            ids.extend_from_slice(l);
        }
        Self {
            radius,
            offsets,
            ids,
        }
    }

    /// Index at the cloud's support radius.
    pub fn build_support(cloud: &PointCloud<T>) -> Self {
        Self::build(&cloud.positions, cloud.support_h)
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.ids[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn count(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of neighbors of `i` strictly within `radius`.
    pub fn count_within(&self, i: usize, positions: &[V3<T>], radius: T) -> usize {
        let r_sq = radius * radius;
        self.neighbors(i)
            .iter()
            .filter(|&&j| (positions[j as usize] - positions[i]).norm_squared() <= r_sq)
            .count()
    }
}

/// Thresholds for point management.
#[derive(Debug, Clone, Copy)]
pub struct ManageParams<T: Real> {
    /// Interior pairs closer than this are merged.
    pub merge_tol: T,
    /// Minimum neighbor count an attached interior point must have.
    pub min_neighbors: usize,
    /// Fail when a point stays deficient after filling. The solver runs in
    /// lenient mode and lets such points degrade to ballistic motion at the
    /// spreading front instead of aborting.
    pub strict: bool,
}

impl<T: Real> ManageParams<T> {
    pub fn defaults(spacing: T, dim: Dim) -> Self {
        Self {
            merge_tol: spacing * lit(0.2),
            min_neighbors: match dim {
                Dim::Two => 5,
                Dim::Three => 7,
            },
            strict: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ManageReport {
    pub merged: usize,
    pub inserted: usize,
}

/// Merges clustered interior pairs and fills holes so every attached interior
/// point keeps an admissible stencil. Detached points (fewer than
/// [`DETACH_NEIGHBORS`] neighbors) are left alone. A state that needs no
/// change is returned untouched.
///
/// `allow_insert` lets the caller veto candidate sites (below the floor,
/// inside a rigid body). Total mass `sum(rho_i * V_i)` is conserved: merges
/// pool mass and volume, insertions take their mass from the donor stencil.
pub fn manage_cloud<T: Real>(
    state: &mut ContinuumState<T>,
    params: &ManageParams<T>,
    allow_insert: &dyn Fn(&V3<T>) -> bool,
) -> Result<ManageReport> {
    let mut report = ManageReport::default();
    let index = NeighborIndex::build_support(&state.cloud);

    // Merge pass: closest-first greedy over interior pairs.
    let merge_tol_sq = params.merge_tol * params.merge_tol;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..state.cloud.len() {
        if !state.cloud.is_interior(i) {
            continue;
        }
        for &j in index.neighbors(i) {
            let j = j as usize;
            if j <= i || !state.cloud.is_interior(j) {
                continue;
            }
            let d2 = (state.cloud.positions[j] - state.cloud.positions[i]).norm_squared();
            if d2 < merge_tol_sq {
                pairs.push((i, j));
            }
        }
    }
    if !pairs.is_empty() {
        let mut gone = vec![false; state.cloud.len()];
        for (i, j) in pairs {
            if gone[i] || gone[j] {
                continue;
            }
            let half = lit::<T>(0.5);
            state.cloud.positions[i] =
                (state.cloud.positions[i] + state.cloud.positions[j]) * half;
            state.velocities[i] = (state.velocities[i] + state.velocities[j]) * half;
            state.stresses[i] = (state.stresses[i] + state.stresses[j]) * half;
            let mass = state.densities[i] * state.volumes[i] + state.densities[j] * state.volumes[j];
            let vol = state.volumes[i] + state.volumes[j];
            state.volumes[i] = vol;
            state.densities[i] = mass / vol;
            gone[j] = true;
            report.merged += 1;
        }
        state.retain(|k| !gone[k]);
    }

    // Fill pass: insert lattice sites near attached-but-deficient points.
    // Bounded per call so a disintegrating region cannot flood the cloud.
    let insert_budget = usize::max(16, state.cloud.len() / 50);
    for _round in 0..3 {
        let index = NeighborIndex::build_support(&state.cloud);
        let deficient: Vec<usize> = (0..state.cloud.len())
            .filter(|&i| {
                state.cloud.is_interior(i)
                    && index.count(i) >= DETACH_NEIGHBORS
                    && index.count(i) < params.min_neighbors
            })
            .collect();
        if deficient.is_empty() || report.inserted >= insert_budget {
            break;
        }
        drop(index);
        let inserted = fill_holes(
            state,
            &deficient,
            params,
            allow_insert,
            insert_budget - report.inserted,
        )?;
        report.inserted += inserted;
        if inserted == 0 {
            break;
        }
    }

    // Final admissibility check on attached interior points.
    let index = NeighborIndex::build_support(&state.cloud);
    for i in 0..state.cloud.len() {
        if state.cloud.is_interior(i)
            && index.count(i) >= DETACH_NEIGHBORS
            && index.count(i) < params.min_neighbors
        {
            if params.strict {
                return Err(Error::InsufficientNeighbors {
                    point: i,
                    count: index.count(i),
                    needed: params.min_neighbors,
                });
            }
            log::debug!(
                "point {i} still has {} neighbors after management",
                index.count(i)
            );
        }
    }
    Ok(report)
}

/// Inserts new interior points at empty lattice sites inside the support of
/// deficient points. Fields come from a weighted least-squares fit over the
/// donor stencil; donor volumes shrink so total mass is unchanged.
fn fill_holes<T: Real>(
    state: &mut ContinuumState<T>,
    deficient: &[usize],
    params: &ManageParams<T>,
    allow_insert: &dyn Fn(&V3<T>) -> bool,
    budget: usize,
) -> Result<usize> {
    let s = state.cloud.spacing;
    let h = state.cloud.support_h;
    let anchor = state.cloud.lattice_anchor;
    let dim = state.cloud.dim;
    let reach = {
        let r: f64 = (h / s).ceil().to_subset().unwrap_or(3.0);
        r as i64
    };

    // Candidate sites, deduplicated by integer lattice coordinate.
    let mut sites: BTreeSet<(i64, i64, i64)> = BTreeSet::new();
    for &i in deficient {
        let p = state.cloud.positions[i];
        let rel = (p - anchor) / s;
        let base = (
            rel.x.round().to_subset().unwrap_or(0.0) as i64,
            rel.y.round().to_subset().unwrap_or(0.0) as i64,
            rel.z.round().to_subset().unwrap_or(0.0) as i64,
        );
        let z_range = if dim == Dim::Two { 0..=0 } else { -reach..=reach };
        for iz in z_range {
            for iy in -reach..=reach {
                for ix in -reach..=reach {
                    sites.insert((base.0 + ix, base.1 + iy, base.2 + iz));
                }
            }
        }
    }

    let hash = SpatialHash::build(&state.cloud.positions, h);
    let mut scratch: Vec<u32> = Vec::new();
    let mut inserted = 0;
    for (ix, iy, iz) in sites {
        if inserted >= budget {
            break;
        }
        let site = anchor + V3::new(lit(ix as f64), lit(iy as f64), lit(iz as f64)) * s;
        if !allow_insert(&site) {
            continue;
        }
        hash.query_into(&state.cloud.positions, &site, h, None, &mut scratch);
        // Occupied cell: something already sits closer than 0.7 spacing.
        let occ_sq = s * s * lit(0.49);
        if scratch
            .iter()
            .any(|&j| (state.cloud.positions[j as usize] - site).norm_squared() < occ_sq)
        {
            continue;
        }
        // Donors: interior neighbors within support.
        let donors: Vec<usize> = scratch
            .iter()
            .map(|&j| j as usize)
            .filter(|&j| state.cloud.is_interior(j))
            .collect();
        if donors.len() < params.min_neighbors {
            continue;
        }
        // One-sided support means the site is at or past the free surface.
        let alpha = lit::<T>(DEFAULT_ALPHA);
        let mut wsum = T::zero();
        let mut centroid = V3::zeros();
        for &j in &donors {
            let d = state.cloud.positions[j] - site;
            let w = weight_sq(d.norm_squared(), h * h, alpha);
            wsum += w;
            centroid += d * w;
        }
        if wsum <= T::zero() || (centroid / wsum).norm() > h * lit(0.45) {
            continue;
        }

        let fit = match ValueFit::build(
            &site,
            donors.iter().map(|&j| state.cloud.positions[j]),
            h,
            alpha,
            dim,
        ) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let vel = V3::from_fn(|k, _| fit.interpolate(donors.iter().map(|&j| state.velocities[j][k])));
        let rho = fit.interpolate(donors.iter().map(|&j| state.densities[j]));
        let mut sigma = crate::num::M3::zeros();
        for (r, c) in [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)] {
            let v = fit.interpolate(donors.iter().map(|&j| state.stresses[j][(r, c)]));
            sigma[(r, c)] = v;
            sigma[(c, r)] = v;
        }
        if !(rho > T::zero()) {
            continue;
        }

        // Take the new point's mass out of the donors so total mass is fixed.
        let vol = match dim {
            Dim::Two => s * s,
            Dim::Three => s * s * s,
        };
        let new_mass = rho * vol;
        let donor_mass: T = donors
            .iter()
            .map(|&j| state.densities[j] * state.volumes[j])
            .fold(T::zero(), |a, b| a + b);
        if new_mass >= donor_mass * lit(0.5) {
            continue;
        }
        let scale = T::one() - new_mass / donor_mass;
        for &j in &donors {
            state.volumes[j] *= scale;
        }

        state.cloud.positions.push(site);
        state.cloud.kinds.push(ParticleKind::Interior);
        state.velocities.push(vel);
        state.densities.push(rho);
        state.stresses.push(sigma);
        state.volumes.push(vol);
        inserted += 1;
    }
    Ok(inserted)
}
