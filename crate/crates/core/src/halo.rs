//! Periodic lateral halo exchange between z-pencils.
//!
//! The x phase fills the west/east halos from interior columns; the y phase
//! then sends full rows including those x halos, which fills the corners.

use thiserror::Error;

use crate::comm::Comm;
use crate::fields::{Field3, Shape};
use crate::grid::Decomposition;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HaloError {
    #[error("field extents {got:?} do not match the decomposition {expected:?}")]
    Extents { got: Shape, expected: Shape },
}

const TO_EAST: u64 = 0;
const TO_WEST: u64 = 1;
const TO_NORTH: u64 = 2;
const TO_SOUTH: u64 = 3;

/// Exchanges the halos of all `fields` in one batch per direction.
pub fn exchange_halos(fields: &mut [&mut Field3], decomp: &Decomposition, comm: &Comm) -> Result<(), HaloError> {
    let expected = Shape::of(decomp);
    for f in fields.iter() {
        if f.shape() != expected {
            return Err(HaloError::Extents { got: f.shape(), expected });
        }
    }
    if fields.is_empty() {
        return Ok(());
    }
    let s = expected;
    let (h, imax, jmax) = (s.halo as isize, s.imax as isize, s.jmax as isize);
    let nb = decomp.neighbors(comm.rank());
    let tag = comm.next_tag();

    // x phase: interior rows only.
    let pack_x = |fields: &[&mut Field3], i0: isize| -> Vec<f64> {
        let mut buf = Vec::with_capacity(fields.len() * s.halo * s.jmax * s.ktot);
        for f in fields {
            for k in 0..s.ktot {
                for j in 0..jmax {
                    let n = s.idx(i0, j, k);
                    buf.extend_from_slice(&f.data()[n..n + s.halo]);
                }
            }
        }
        buf
    };
    let send_east = pack_x(fields, imax - h);
    let send_west = pack_x(fields, 0);
    comm.send(nb.east, tag + TO_EAST, send_east);
    comm.send(nb.west, tag + TO_WEST, send_west);
    let from_west: Vec<f64> = comm.recv(nb.west, tag + TO_EAST);
    let from_east: Vec<f64> = comm.recv(nb.east, tag + TO_WEST);
    let unpack_x = |fields: &mut [&mut Field3], i0: isize, buf: &[f64]| {
        let mut o = 0;
        for f in fields.iter_mut() {
            for k in 0..s.ktot {
                for j in 0..jmax {
                    let n = s.idx(i0, j, k);
                    f.data_mut()[n..n + s.halo].copy_from_slice(&buf[o..o + s.halo]);
                    o += s.halo;
                }
            }
        }
    };
    unpack_x(fields, -h, &from_west);
    unpack_x(fields, imax, &from_east);

    // y phase: full stored rows, x halos included.
    let row = s.sx();
    let pack_y = |fields: &[&mut Field3], j0: isize| -> Vec<f64> {
        let mut buf = Vec::with_capacity(fields.len() * s.halo * row * s.ktot);
        for f in fields {
            for k in 0..s.ktot {
                let n = s.idx(-h, j0, k);
                buf.extend_from_slice(&f.data()[n..n + s.halo * row]);
            }
        }
        buf
    };
    let send_north = pack_y(fields, jmax - h);
    let send_south = pack_y(fields, 0);
    comm.send(nb.north, tag + TO_NORTH, send_north);
    comm.send(nb.south, tag + TO_SOUTH, send_south);
    let from_south: Vec<f64> = comm.recv(nb.south, tag + TO_NORTH);
    let from_north: Vec<f64> = comm.recv(nb.north, tag + TO_SOUTH);
    let unpack_y = |fields: &mut [&mut Field3], j0: isize, buf: &[f64]| {
        let mut o = 0;
        let len = s.halo * row;
        for f in fields.iter_mut() {
            for k in 0..s.ktot {
                let n = s.idx(-h, j0, k);
                f.data_mut()[n..n + len].copy_from_slice(&buf[o..o + len]);
                o += len;
            }
        }
    };
    unpack_y(fields, -h, &from_south);
    unpack_y(fields, jmax, &from_north);
    Ok(())
}

/// Single-field convenience wrapper.
pub fn exchange_one(field: &mut Field3, decomp: &Decomposition, comm: &Comm) -> Result<(), HaloError> {
    exchange_halos(&mut [field], decomp, comm)
}
