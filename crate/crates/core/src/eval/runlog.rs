//! Run-log files: `ability,model_size,data_volume,epoch,split,accuracy`.

use std::io::{Read, Write};

use super::{AccuracyUnit, RunPoint};
use crate::error::Result;
use crate::table::{read_csv, write_csv};
use crate::Scalar;

/// Reads and validates every row against `unit`.
pub fn read_runlog<T: Scalar, R: Read>(reader: R, unit: AccuracyUnit) -> Result<Vec<RunPoint<T>>> {
    let points: Vec<RunPoint<T>> = read_csv(reader)?;
    for p in &points {
        p.validate(unit)?;
    }
    Ok(points)
}

pub fn write_runlog<T: Scalar, W: Write>(points: &[RunPoint<T>], writer: W) -> Result<()> {
    write_csv(points, writer)
}
