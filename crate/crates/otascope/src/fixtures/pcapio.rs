//! Minimal pcap/pcapng writers used to synthesize fixture captures. Only the
//! features the toolkit itself consumes are implemented: classic pcap in both
//! timestamp precisions, and pcapng with a single Ethernet interface.

use std::io::{self, Write};

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW_IP: u32 = 101;

/// Classic libpcap writer (little-endian).
pub struct PcapWriter<W: Write> {
    out: W,
    nanos: bool,
    pub frames: u64,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(out: W, linktype: u32) -> io::Result<Self> {
        Self::with_precision(out, linktype, false)
    }

    pub fn new_nanos(out: W, linktype: u32) -> io::Result<Self> {
        Self::with_precision(out, linktype, true)
    }

    fn with_precision(mut out: W, linktype: u32, nanos: bool) -> io::Result<Self> {
        let magic: u32 = if nanos { 0xa1b2_3c4d } else { 0xa1b2_c3d4 };
        out.write_all(&magic.to_le_bytes())?;
        out.write_all(&2u16.to_le_bytes())?; // version major
        out.write_all(&4u16.to_le_bytes())?; // version minor
        out.write_all(&0i32.to_le_bytes())?; // thiszone
        out.write_all(&0u32.to_le_bytes())?; // sigfigs
        out.write_all(&65535u32.to_le_bytes())?; // snaplen
        out.write_all(&linktype.to_le_bytes())?;
        Ok(PcapWriter { out, nanos, frames: 0 })
    }

    /// Writes one frame. `ts_micros` is an absolute unix timestamp.
    pub fn write_frame(&mut self, ts_micros: i64, frame: &[u8]) -> io::Result<()> {
        let secs = (ts_micros / 1_000_000) as u32;
        let sub = (ts_micros % 1_000_000) as u32;
        let sub = if self.nanos { sub * 1000 } else { sub };
        self.out.write_all(&secs.to_le_bytes())?;
        self.out.write_all(&sub.to_le_bytes())?;
        self.out.write_all(&(frame.len() as u32).to_le_bytes())?;
        self.out.write_all(&(frame.len() as u32).to_le_bytes())?;
        self.out.write_all(frame)?;
        self.frames += 1;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

fn ng_block(out: &mut Vec<u8>, block_type: u32, body: &[u8]) {
    let pad = (4 - body.len() % 4) % 4;
    let total = 12 + body.len() + pad;
    out.extend_from_slice(&block_type.to_le_bytes());
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(body);
    out.extend(std::iter::repeat(0u8).take(pad));
    out.extend_from_slice(&(total as u32).to_le_bytes());
}

/// pcapng writer with one interface block; timestamps are microseconds
/// (`if_tsresol` = 6, the pcapng default).
pub struct PcapNgWriter {
    buf: Vec<u8>,
    pub frames: u64,
}

impl PcapNgWriter {
    pub fn new(linktype: u32) -> PcapNgWriter {
        let mut buf = Vec::new();
        // Section header block.
        let mut body = Vec::new();
        body.extend_from_slice(&0x1a2b_3c4du32.to_le_bytes()); // byte-order magic
        body.extend_from_slice(&1u16.to_le_bytes()); // major
        body.extend_from_slice(&0u16.to_le_bytes()); // minor
        body.extend_from_slice(&u64::MAX.to_le_bytes()); // section length unknown
        ng_block(&mut buf, 0x0a0d_0d0a, &body);
        // Interface description block.
        let mut body = Vec::new();
        body.extend_from_slice(&(linktype as u16).to_le_bytes());
        body.extend_from_slice(&0u16.to_le_bytes()); // reserved
        body.extend_from_slice(&0u32.to_le_bytes()); // snaplen 0 = unlimited
        ng_block(&mut buf, 0x0000_0001, &body);
        PcapNgWriter { buf, frames: 0 }
    }

    pub fn write_frame(&mut self, ts_micros: i64, frame: &[u8]) {
        let ts = ts_micros as u64;
        let mut body = Vec::new();
        body.extend_from_slice(&0u32.to_le_bytes()); // interface id
        body.extend_from_slice(&((ts >> 32) as u32).to_le_bytes());
        body.extend_from_slice(&(ts as u32).to_le_bytes());
        body.extend_from_slice(&(frame.len() as u32).to_le_bytes()); // caplen
        body.extend_from_slice(&(frame.len() as u32).to_le_bytes()); // origlen
        body.extend_from_slice(frame);
        let pad = (4 - frame.len() % 4) % 4;
        body.extend(std::iter::repeat(0u8).take(pad));
        ng_block(&mut self.buf, 0x0000_0006, &body);
        self.frames += 1;
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}
