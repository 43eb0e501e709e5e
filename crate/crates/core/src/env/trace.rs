//! Per-slot trace rows and their CSV encoding.
//!
//! Columns, in order: `slot, time_ms, cell, ue, tp_bps, delay_ms, bler,
//! prbs, mcs, tp_regret, delay_regret, reward, bwp_start, bwp_size,
//! disconnected, queued_bytes`. `time_ms` is the end of the slot, `prbs` and
//! `mcs` are slot means, `reward` is the network-wide slot reward and the
//! BWP columns give the widest run of non-negative preference groups.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: u64,
    pub time_ms: u64,
    pub cell: usize,
    pub ue: usize,
    pub tp_bps: f64,
    pub delay_ms: f64,
    pub bler: f64,
    pub prbs: f64,
    pub mcs: f64,
    pub tp_regret: f64,
    pub delay_regret: f64,
    pub reward: f64,
    pub bwp_start: usize,
    pub bwp_size: usize,
    pub disconnected: bool,
    pub queued_bytes: u64,
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(out),
        }
    }

    pub fn write_rows(&mut self, rows: &[TraceRow]) -> Result<()> {
        for row in rows {
            self.inner
                .serialize(row)
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

pub fn read_trace<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Io(std::io::Error::other(e))))
        .collect()
}
