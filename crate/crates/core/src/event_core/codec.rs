//! `EVB1` binary and `t,x,y,p` CSV event codecs.

use std::io::{Read, Write};

use super::stream::{Event, EventStream, Polarity, SensorSize};
use crate::error::{Error, Result};

pub const EVB_MAGIC: [u8; 8] = *b"EVB1\0\0\0\0";
const RECORD_BYTES: usize = 8 + 2 + 2 + 1 + 5;

fn io_err(e: std::io::Error) -> Error {
    Error::io("<event stream>", e)
}

pub fn write_evb<W: Write>(stream: &EventStream, mut w: W) -> Result<()> {
    let sensor = stream.sensor();
    let mut header = Vec::with_capacity(20);
    header.extend_from_slice(&EVB_MAGIC);
    header.extend_from_slice(&sensor.width.to_le_bytes());
    header.extend_from_slice(&sensor.height.to_le_bytes());
    header.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    w.write_all(&header).map_err(io_err)?;
    let mut buf = Vec::with_capacity(stream.len() * RECORD_BYTES);
    for e in stream.events() {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p.sign() as u8);
        buf.extend_from_slice(&[0u8; 5]);
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_evb<R: Read>(mut r: R) -> Result<EventStream> {
    let mut header = [0u8; 20];
    r.read_exact(&mut header)
        .map_err(|e| Error::data(format!("truncated EVB1 header: {e}")))?;
    if header[..8] != EVB_MAGIC {
        return Err(Error::data("bad EVB1 magic"));
    }
    let width = u16::from_le_bytes([header[8], header[9]]);
    let height = u16::from_le_bytes([header[10], header[11]]);
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(io_err)?;
    if body.len() != count * RECORD_BYTES {
        return Err(Error::data(format!(
            "EVB1 body has {} bytes, expected {} for {count} events",
            body.len(),
            count * RECORD_BYTES
        )));
    }
    let mut events = Vec::with_capacity(count);
    for rec in body.chunks_exact(RECORD_BYTES) {
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = Polarity::from_sign(rec[12] as i8)?;
        if rec[13..].iter().any(|&b| b != 0) {
            return Err(Error::data("non-zero EVB1 padding"));
        }
        events.push(Event { x, y, t, p });
    }
    EventStream::new(events, SensorSize::new(width, height))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CsvRow {
    t: u64,
    x: u16,
    y: u16,
    p: i8,
}

pub fn write_csv<W: Write>(stream: &EventStream, w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(["t", "x", "y", "p"])
        .map_err(|e| Error::data(format!("csv write: {e}")))?;
    for e in stream.events() {
        wr.serialize(CsvRow {
            t: e.t,
            x: e.x,
            y: e.y,
            p: e.p.sign(),
        })
        .map_err(|e| Error::data(format!("csv write: {e}")))?;
    }
    wr.flush().map_err(io_err)
}

/// CSV carries no sensor size, so the caller supplies it.
pub fn read_csv<R: Read>(r: R, sensor: SensorSize) -> Result<EventStream> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd
        .headers()
        .map_err(|e| Error::data(format!("csv header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "x", "y", "p"] {
        return Err(Error::data(format!("expected csv header t,x,y,p, got {headers:?}")));
    }
    let mut events = Vec::new();
    for (i, row) in rd.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::data(format!("csv row {}: {e}", i + 1)))?;
        events.push(Event {
            x: row.x,
            y: row.y,
            t: row.t,
            p: Polarity::from_sign(row.p)?,
        });
    }
    EventStream::new(events, sensor)
}
