//! Binary state snapshots.  Layout, all little-endian:
//! magic `QTNS`, u32 version = 1, u32 N, N x u32 M, f64 L, f64 t,
//! 5 x f64 parameter digest (a, b, c, xi_a, lambda1),
//! then the velocity payload (N * M^N f64, component-major, row-major grid)
//! and the tensor payload (N^2 * M^N f64).

use qtlab_core::grid::{GridSpec, PhysicalField};
use qtlab_core::params::ModelParams;
use qtlab_core::qtensor::{QTensorField, VelocityField};
use qtlab_core::stepper::SimState;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"QTNS";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("bad magic bytes (not a snapshot file)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    BadVersion(u32),
    #[error("truncated or oversized snapshot: {0}")]
    Truncated(String),
    #[error("snapshot header invalid: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("field validation failed: {0}")]
    Field(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub dim: usize,
    pub m: usize,
    pub length: f64,
    pub t: f64,
    pub digest: [f64; 5],
}

pub fn params_digest(params: &ModelParams) -> [f64; 5] {
    [params.a, params.b_coef, params.c_coef, params.xi_a, params.lambda1]
}

pub fn save_snapshot(state: &SimState, params: &ModelParams, path: &Path) -> Result<(), SnapshotError> {
    let grid = state.u.grid();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.dim as u32).to_le_bytes());
    for _ in 0..grid.dim {
        buf.extend_from_slice(&(grid.points_per_dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&grid.box_length.to_le_bytes());
    buf.extend_from_slice(&state.t.to_le_bytes());
    for v in params_digest(params) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &state.u.0.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &state.q.0.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, SnapshotError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| SnapshotError::Truncated("u32".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, SnapshotError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| SnapshotError::Truncated("f64".into()))?;
    Ok(f64::from_le_bytes(b))
}

pub fn load_snapshot(path: &Path) -> Result<(SimState, SnapshotHeader), SnapshotError> {
    let bytes = std::fs::read(path)?;
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| SnapshotError::Truncated("magic".into()))?;
    if &magic != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(SnapshotError::BadVersion(version));
    }
    let dim = read_u32(&mut r)? as usize;
    if !(dim == 2 || dim == 3) {
        return Err(SnapshotError::BadHeader(format!("dimension {dim}")));
    }
    let mut m = 0usize;
    for axis in 0..dim {
        let mx = read_u32(&mut r)? as usize;
        if axis == 0 {
            m = mx;
        } else if mx != m {
            return Err(SnapshotError::BadHeader("anisotropic grids are not supported".into()));
        }
    }
    let length = read_f64(&mut r)?;
    let t = read_f64(&mut r)?;
    let mut digest = [0.0; 5];
    for d in digest.iter_mut() {
        *d = read_f64(&mut r)?;
    }
    let grid = GridSpec::new(dim, m, length)
        .map_err(|e| SnapshotError::BadHeader(e.to_string()))?;
    let n = grid.n_points();
    let expected = dim * n + dim * dim * n;
    if r.len() != expected * 8 {
        return Err(SnapshotError::Truncated(format!(
            "payload has {} bytes, expected {}",
            r.len(),
            expected * 8
        )));
    }
    let mut read_field = |comps: usize| -> Result<PhysicalField, SnapshotError> {
        let mut data = vec![0.0f64; comps * n];
        for v in data.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        PhysicalField::from_data(grid, comps, data)
            .map_err(|e| SnapshotError::BadHeader(e.to_string()))
    };
    let u_raw = read_field(dim)?;
    let q_raw = read_field(dim * dim)?;
    let u = VelocityField::new(u_raw).map_err(|e| SnapshotError::Field(e.to_string()))?;
    let q = QTensorField::new(q_raw).map_err(|e| SnapshotError::Field(e.to_string()))?;
    let header = SnapshotHeader { dim, m, length, t, digest };
    let mut state = SimState::new(u, q);
    state.t = t;
    Ok((state, header))
}
