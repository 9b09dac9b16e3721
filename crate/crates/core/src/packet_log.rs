//! Packet log: one row per transmitted packet of any node, stamped with its
//! transmission start, the instant a neighbour can observe.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::apps::PacketType;
use crate::kernel::SimTime;
use crate::mobility::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub t_us: SimTime,
    pub sender: NodeId,
    pub ptype: PacketType,
    pub payload: u32,
    pub speed: f64,
    pub heading: f64,
    pub x: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum PacketLogError {
    #[error("packet log row {row}: {source}")]
    Row { row: usize, source: csv::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write<W: Write>(w: W, records: &[PacketRecord]) -> Result<(), PacketLogError> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read<R: Read>(r: R) -> Result<Vec<PacketRecord>, PacketLogError> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|source| PacketLogError::Row { row: i + 1, source }))
        .collect()
}
