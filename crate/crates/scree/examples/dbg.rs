use scree::continuum::*;
use scree::rheology::MaterialParams;
use scree::num::Dim;
use std::time::Instant;

fn main() {
    let mut mat = MaterialParams::sand();
    mat.youngs_modulus = 1e6;
    mat.critical_density = 1425.0;
    let s1000 = (2.0 * 0.05 * 0.05 / 1000.0f64).sqrt();
    let mut state = initialize_column(
        ColumnGeometry::Plane { half_width: 0.05, height: 0.05 },
        s1000, &mat, 3.0, 0.4,
    ).unwrap();
    let numerics = NumericsParams::with_dt(1e-5);
    let mut solver = ContinuumSolver::new(mat, numerics, Domain::floor_only(Dim::Two));
    let mut t0 = Instant::now();
    for step in 0..50_000 {
        if let Err(e) = solver.step(&mut state) { eprintln!("ERR at {step}: {e}"); return; }
        if step % 2500 == 2499 {
            let vmax = state.velocities.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
            let xmax = state.interior_ids().map(|i| state.cloud.positions[i].x.abs()).fold(0.0f64, f64::max);
            let hmax = state.interior_ids().map(|i| state.cloud.positions[i].y).fold(0.0f64, f64::max);
            eprintln!("step {}: N {} vmax {vmax:.2e} xmax {xmax:.3} hmax {hmax:.3} wall/2.5k {:.1}s", step+1, state.len(), t0.elapsed().as_secs_f64());
            t0 = Instant::now();
            if vmax > 100.0 { eprintln!("BLOWN"); return; }
        }
    }
}
