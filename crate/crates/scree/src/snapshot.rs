//! Snapshot and summary serialization: CSV (primary interchange), VTK legacy
//! ASCII (for standard viewers), and JSON run summaries.
//!
//! The particle CSV is the bit-exact public contract: one header line, then
//! one record per particle with columns
//! `id,kind,x,y,z,vx,vy,vz,rho,sigma_xx,sigma_yy,sigma_zz,sigma_xy,sigma_yz,sigma_xz`.
//! Floats print in shortest round-trip form, so re-parsing reproduces the
//! exact values. When a rigid body is present its state goes to a `.body.csv`
//! sidecar so the particle column count never changes.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::ParticleKind;
use crate::continuum::ContinuumState;
use crate::dem::{DemState, GrainKind};
use crate::error::{Error, Result};
use crate::rigid::RigidBody;
use crate::{Mat3, Vec3};

pub const CSV_HEADER: &str =
    "id,kind,x,y,z,vx,vy,vz,rho,sigma_xx,sigma_yy,sigma_zz,sigma_xy,sigma_yz,sigma_xz";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleRow {
    pub id: usize,
    /// 0: interior / free grain, 1: boundary / wall / body surface.
    pub kind: u8,
    pub position: Vec3,
    pub velocity: Vec3,
    pub rho: f64,
    pub stress: Mat3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyRow {
    pub center: [f64; 3],
    pub velocity: [f64; 3],
    pub omega: [f64; 3],
}

/// One output frame.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub solver: String,
    pub dim: usize,
    pub rows: Vec<ParticleRow>,
    pub body: Option<BodyRow>,
}

impl Snapshot {
    pub fn from_continuum(state: &ContinuumState<f64>, body: Option<&RigidBody<f64>>) -> Self {
        let rows = (0..state.len())
            .map(|i| ParticleRow {
                id: i,
                kind: match state.cloud.kinds[i] {
                    ParticleKind::Interior => 0,
                    ParticleKind::Boundary => 1,
                },
                position: state.cloud.positions[i],
                velocity: state.velocities[i],
                rho: state.densities[i],
                stress: state.stresses[i],
            })
            .collect();
        Self {
            time: state.time,
            solver: "plasticity".into(),
            dim: state.cloud.dim.count(),
            rows,
            body: body.map(body_row),
        }
    }

    pub fn from_dem(state: &DemState<f64>, body: Option<&RigidBody<f64>>) -> Self {
        let rows = (0..state.len())
            .map(|i| ParticleRow {
                id: i,
                kind: match state.kinds[i] {
                    GrainKind::Grain => 0,
                    GrainKind::Wall | GrainKind::BodySurface => 1,
                },
                position: state.positions[i],
                velocity: state.velocities[i],
                rho: 0.0,
                stress: Mat3::zeros(),
            })
            .collect();
        Self {
            time: state.time,
            solver: "dem".into(),
            dim: state.dim.count(),
            rows,
            body: body.map(body_row),
        }
    }
}

fn body_row(b: &RigidBody<f64>) -> BodyRow {
    BodyRow {
        center: [b.center.x, b.center.y, b.center.z],
        velocity: [b.velocity.x, b.velocity.y, b.velocity.z],
        omega: [b.omega.x, b.omega.y, b.omega.z],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotFormat {
    Csv,
    VtkLegacyAscii,
}

/// Writes a snapshot in the requested format; `.body.csv` sidecar when a
/// rigid body is present and the format is CSV.
pub fn export_snapshot(snapshot: &Snapshot, path: &Path, format: SnapshotFormat) -> Result<()> {
    match format {
        SnapshotFormat::Csv => write_csv(snapshot, path),
        SnapshotFormat::VtkLegacyAscii => write_vtk(snapshot, path),
    }
}

fn write_csv(snapshot: &Snapshot, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(snapshot.rows.len() * 160 + 128);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &snapshot.rows {
        let p = r.position;
        let v = r.velocity;
        let s = r.stress;
        use std::fmt::Write;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.id,
            r.kind,
            p.x,
            p.y,
            p.z,
            v.x,
            v.y,
            v.z,
            r.rho,
            s[(0, 0)],
            s[(1, 1)],
            s[(2, 2)],
            s[(0, 1)],
            s[(1, 2)],
            s[(0, 2)],
        );
    }
    std::fs::write(path, out)?;
    if let Some(body) = &snapshot.body {
        let mut side = String::from("xc,yc,zc,vx,vy,vz,omega_x,omega_y,omega_z\n");
        use std::fmt::Write;
        let _ = writeln!(
            side,
            "{},{},{},{},{},{},{},{},{}",
            body.center[0],
            body.center[1],
            body.center[2],
            body.velocity[0],
            body.velocity[1],
            body.velocity[2],
            body.omega[0],
            body.omega[1],
            body.omega[2],
        );
        std::fs::write(sidecar_path(path), side)?;
    }
    Ok(())
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.to_path_buf();
    p.set_extension("body.csv");
    p
}

/// Reads back a particle CSV (testing and analysis).
pub fn read_csv(path: &Path) -> Result<Vec<ParticleRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
    if header != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected CSV header: {header}")));
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(Error::Parse(format!(
                "line {}: expected 15 fields, got {}",
                ln + 2,
                fields.len()
            )));
        }
        let f = |k: usize| -> Result<f64> {
            fields[k]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2)))
        };
        let mut stress = Mat3::zeros();
        stress[(0, 0)] = f(9)?;
        stress[(1, 1)] = f(10)?;
        stress[(2, 2)] = f(11)?;
        stress[(0, 1)] = f(12)?;
        stress[(1, 0)] = stress[(0, 1)];
        stress[(1, 2)] = f(13)?;
        stress[(2, 1)] = stress[(1, 2)];
        stress[(0, 2)] = f(14)?;
        stress[(2, 0)] = stress[(0, 2)];
        rows.push(ParticleRow {
            id: fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2)))?,
            kind: fields[1]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2)))?,
            position: Vec3::new(f(2)?, f(3)?, f(4)?),
            velocity: Vec3::new(f(5)?, f(6)?, f(7)?),
            rho: f(8)?,
            stress,
        });
    }
    Ok(rows)
}

fn write_vtk(snapshot: &Snapshot, path: &Path) -> Result<()> {
    let n = snapshot.rows.len();
    let mut out = String::with_capacity(n * 220 + 512);
    out.push_str("# vtk DataFile Version 3.0\n");
    use std::fmt::Write;
    let _ = writeln!(
        out,
        "granular snapshot time={} solver={} dim={}",
        snapshot.time, snapshot.solver, snapshot.dim
    );
    out.push_str("ASCII\nDATASET POLYDATA\n");
    let _ = writeln!(out, "POINTS {n} double");
    for r in &snapshot.rows {
        let _ = writeln!(out, "{} {} {}", r.position.x, r.position.y, r.position.z);
    }
    let _ = writeln!(out, "VERTICES {n} {}", 2 * n);
    for i in 0..n {
        let _ = writeln!(out, "1 {i}");
    }
    let _ = writeln!(out, "POINT_DATA {n}");
    out.push_str("SCALARS kind int 1\nLOOKUP_TABLE default\n");
    for r in &snapshot.rows {
        let _ = writeln!(out, "{}", r.kind);
    }
    out.push_str("SCALARS rho double 1\nLOOKUP_TABLE default\n");
    for r in &snapshot.rows {
        let _ = writeln!(out, "{}", r.rho);
    }
    out.push_str("VECTORS velocity double\n");
    for r in &snapshot.rows {
        let _ = writeln!(out, "{} {} {}", r.velocity.x, r.velocity.y, r.velocity.z);
    }
    out.push_str("TENSORS stress double\n");
    for r in &snapshot.rows {
        let s = r.stress;
        let _ = writeln!(
            out,
            "{} {} {}\n{} {} {}\n{} {} {}\n",
            s[(0, 0)],
            s[(0, 1)],
            s[(0, 2)],
            s[(1, 0)],
            s[(1, 1)],
            s[(1, 2)],
            s[(2, 0)],
            s[(2, 1)],
            s[(2, 2)],
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Fitted run-out power law `runout = coefficient * a^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedLaw {
    pub coefficient: f64,
    pub exponent: f64,
}

/// End-of-run record written as JSON next to the snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub solver: String,
    pub config_hash: String,
    pub aspect_ratio: f64,
    pub particles: usize,
    pub steps: u64,
    pub wall_clock_s: f64,
    pub final_runout: f64,
    pub normalized_runout: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FittedLaw>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body_final_height: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body_final_speed: Option<f64>,
}

impl RunSummary {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("summary serialization: {e}")))?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}
