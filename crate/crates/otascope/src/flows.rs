//! Capture decoding and flow assembly: reads pcap/pcapng files, walks the
//! link/network layers, reassembles TCP payload streams in both directions,
//! and groups UDP datagrams per flow.
//!
//! Reassembly is tolerant by design: capture files routinely start mid-flow,
//! lose segments, and contain retransmissions with differing payloads. The
//! contract downstream parsers rely on is: `bytes` is the longest contiguous
//! prefix of the stream that was actually observed, every missing range is
//! listed in `gaps`, and overlapping writes never change already-accepted
//! bytes (first write wins).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use pcap_parser::{Block, PcapBlockOwned, PcapError};
use thiserror::Error;

/// Absolute unix timestamp in microseconds.
pub type TimestampMicros = i64;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("failed to read capture: {0}")]
    Io(#[from] std::io::Error),
    #[error("unrecognized capture file header")]
    BadHeader,
    #[error("capture read error: {0}")]
    Read(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Transport {
    Tcp,
    Udp,
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
        })
    }
}

/// Directional five-tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub src: IpAddr,
    pub src_port: u16,
    pub dst: IpAddr,
    pub dst_port: u16,
    pub transport: Transport,
}

impl FlowKey {
    pub fn tcp(src: IpAddr, src_port: u16, dst: IpAddr, dst_port: u16) -> FlowKey {
        FlowKey { src, src_port, dst, dst_port, transport: Transport::Tcp }
    }

    pub fn udp(src: IpAddr, src_port: u16, dst: IpAddr, dst_port: u16) -> FlowKey {
        FlowKey { src, src_port, dst, dst_port, transport: Transport::Udp }
    }

    pub fn reversed(&self) -> FlowKey {
        FlowKey {
            src: self.dst,
            src_port: self.dst_port,
            dst: self.src,
            dst_port: self.src_port,
            transport: self.transport,
        }
    }

    /// Orientation-independent form: a flow and its reverse map to the same
    /// canonical key, with the lexicographically smaller endpoint as source.
    pub fn canonical(&self) -> FlowKey {
        let rev = self.reversed();
        if (self.src, self.src_port) <= (rev.src, rev.src_port) {
            *self
        } else {
            rev
        }
    }

    /// Inverse of the `Display` form (`tcp 10.0.0.1:80 -> 10.0.0.2:5000`).
    pub fn parse(s: &str) -> Option<FlowKey> {
        fn endpoint(s: &str) -> Option<(IpAddr, u16)> {
            let idx = s.rfind(':')?;
            let ip: IpAddr = s[..idx].parse().ok()?;
            let port: u16 = s[idx + 1..].parse().ok()?;
            Some((ip, port))
        }
        let (transport, rest) = s.split_once(' ')?;
        let transport = match transport {
            "tcp" => Transport::Tcp,
            "udp" => Transport::Udp,
            _ => return None,
        };
        let (src, dst) = rest.split_once(" -> ")?;
        let (src, src_port) = endpoint(src)?;
        let (dst, dst_port) = endpoint(dst)?;
        Some(FlowKey { src, src_port, dst, dst_port, transport })
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}:{} -> {}:{}",
            self.transport, self.src, self.src_port, self.dst, self.dst_port
        )
    }
}

#[derive(Debug, Clone)]
pub struct TcpPacket {
    pub ts: TimestampMicros,
    pub flow: FlowKey,
    pub seq: u32,
    pub flags: u8,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct UdpPacket {
    pub ts: TimestampMicros,
    pub flow: FlowKey,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone)]
pub enum DecodedPacket {
    Tcp(TcpPacket),
    Udp(UdpPacket),
}

impl DecodedPacket {
    pub fn ts(&self) -> TimestampMicros {
        match self {
            DecodedPacket::Tcp(p) => p.ts,
            DecodedPacket::Udp(p) => p.ts,
        }
    }
}

#[derive(Debug, Default)]
pub struct DecodeResult {
    pub packets: Vec<DecodedPacket>,
    /// Number of frame records in the file, decodable or not.
    pub frame_count: u64,
    /// File ended in the middle of a record (or a record failed to parse);
    /// everything before the damage is still returned.
    pub truncated: bool,
    /// IPv6 fragments are counted and skipped rather than reassembled.
    pub ipv6_fragments: u64,
    /// Frames whose link/network layers could not be interpreted.
    pub opaque_frames: u64,
}

pub const TCP_FIN: u8 = 0x01;
pub const TCP_SYN: u8 = 0x02;
pub const TCP_ACK: u8 = 0x10;

// ---------------------------------------------------------------------------
// Capture file decoding

struct NgInterface {
    linktype: u32,
    /// Timestamp units per second.
    units: u64,
}

#[derive(Default)]
struct Ipv4Defrag {
    buffers: HashMap<(Ipv4Addr, Ipv4Addr, u16, u8), FragBuffer>,
}

#[derive(Default)]
struct FragBuffer {
    /// (byte offset, payload) in arrival order.
    pieces: Vec<(usize, Vec<u8>)>,
    total_len: Option<usize>,
}

impl FragBuffer {
    fn complete(&self) -> Option<usize> {
        let total = self.total_len?;
        let mut intervals: Vec<(usize, usize)> =
            self.pieces.iter().map(|(o, d)| (*o, *o + d.len())).collect();
        intervals.sort_unstable();
        let mut covered = 0usize;
        for (start, end) in intervals {
            if start > covered {
                return None;
            }
            covered = covered.max(end);
        }
        (covered >= total).then_some(total)
    }

    /// First write wins on overlapping fragment bytes.
    fn assemble(&self, total: usize) -> Vec<u8> {
        let mut buf = vec![0u8; total];
        let mut written = vec![false; total];
        for (off, data) in &self.pieces {
            for (i, b) in data.iter().enumerate() {
                let pos = off + i;
                if pos < total && !written[pos] {
                    buf[pos] = *b;
                    written[pos] = true;
                }
            }
        }
        buf
    }
}

impl Ipv4Defrag {
    fn push(
        &mut self,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        ident: u16,
        proto: u8,
        frag_offset_bytes: usize,
        more_fragments: bool,
        payload: &[u8],
    ) -> Option<Vec<u8>> {
        if self.buffers.len() > 4096 {
            // Pathological input; drop state rather than grow without bound.
            self.buffers.clear();
        }
        let buf = self.buffers.entry((src, dst, ident, proto)).or_default();
        buf.pieces.push((frag_offset_bytes, payload.to_vec()));
        if !more_fragments {
            buf.total_len = Some(frag_offset_bytes + payload.len());
        }
        if let Some(total) = buf.complete() {
            let assembled = buf.assemble(total);
            self.buffers.remove(&(src, dst, ident, proto));
            return Some(assembled);
        }
        None
    }
}

enum IpPayload {
    Tcp { src: IpAddr, dst: IpAddr, data: Vec<u8> },
    Udp { src: IpAddr, dst: IpAddr, data: Vec<u8> },
    None,
}

struct FrameDecoder {
    defrag: Ipv4Defrag,
    ipv6_fragments: u64,
    opaque: u64,
}

impl FrameDecoder {
    fn new() -> FrameDecoder {
        FrameDecoder { defrag: Ipv4Defrag::default(), ipv6_fragments: 0, opaque: 0 }
    }

    fn decode(&mut self, linktype: u32, frame: &[u8], ts: TimestampMicros, out: &mut Vec<DecodedPacket>) {
        let payload = match linktype {
            1 => self.decode_ethernet(frame),
            101 => self.decode_ip(frame),
            _ => {
                self.opaque += 1;
                IpPayload::None
            }
        };
        match payload {
            IpPayload::Tcp { src, dst, data } => {
                if let Some(p) = parse_tcp(src, dst, &data, ts) {
                    out.push(DecodedPacket::Tcp(p));
                } else {
                    self.opaque += 1;
                }
            }
            IpPayload::Udp { src, dst, data } => {
                if let Some(p) = parse_udp(src, dst, &data, ts) {
                    out.push(DecodedPacket::Udp(p));
                } else {
                    self.opaque += 1;
                }
            }
            IpPayload::None => {}
        }
    }

    fn decode_ethernet(&mut self, frame: &[u8]) -> IpPayload {
        if frame.len() < 14 {
            self.opaque += 1;
            return IpPayload::None;
        }
        let mut ethertype = u16::from_be_bytes([frame[12], frame[13]]);
        let mut offset = 14;
        // Unwrap up to two VLAN tags (802.1Q / 802.1ad).
        for _ in 0..2 {
            if ethertype == 0x8100 || ethertype == 0x88a8 {
                if frame.len() < offset + 4 {
                    self.opaque += 1;
                    return IpPayload::None;
                }
                ethertype = u16::from_be_bytes([frame[offset + 2], frame[offset + 3]]);
                offset += 4;
            }
        }
        match ethertype {
            0x0800 => self.decode_ipv4(&frame[offset..]),
            0x86dd => self.decode_ipv6(&frame[offset..]),
            _ => {
                self.opaque += 1;
                IpPayload::None
            }
        }
    }

    fn decode_ip(&mut self, data: &[u8]) -> IpPayload {
        match data.first().map(|b| b >> 4) {
            Some(4) => self.decode_ipv4(data),
            Some(6) => self.decode_ipv6(data),
            _ => {
                self.opaque += 1;
                IpPayload::None
            }
        }
    }

    fn decode_ipv4(&mut self, data: &[u8]) -> IpPayload {
        if data.len() < 20 || data[0] >> 4 != 4 {
            self.opaque += 1;
            return IpPayload::None;
        }
        let ihl = usize::from(data[0] & 0x0f) * 4;
        let total_len = usize::from(u16::from_be_bytes([data[2], data[3]]));
        if ihl < 20 || data.len() < ihl || total_len < ihl {
            self.opaque += 1;
            return IpPayload::None;
        }
        // Ethernet padding may extend past total_length; snaplen may cut it short.
        let end = total_len.min(data.len());
        let proto = data[9];
        let src = Ipv4Addr::new(data[12], data[13], data[14], data[15]);
        let dst = Ipv4Addr::new(data[16], data[17], data[18], data[19]);
        let flags_frag = u16::from_be_bytes([data[6], data[7]]);
        let more_fragments = flags_frag & 0x2000 != 0;
        let frag_offset = usize::from(flags_frag & 0x1fff) * 8;
        let payload = &data[ihl..end];
        if more_fragments || frag_offset > 0 {
            let ident = u16::from_be_bytes([data[4], data[5]]);
            match self.defrag.push(src, dst, ident, proto, frag_offset, more_fragments, payload) {
                Some(assembled) => self.dispatch_proto(proto, src.into(), dst.into(), assembled),
                None => IpPayload::None,
            }
        } else {
            self.dispatch_proto(proto, src.into(), dst.into(), payload.to_vec())
        }
    }

    fn decode_ipv6(&mut self, data: &[u8]) -> IpPayload {
        if data.len() < 40 || data[0] >> 4 != 6 {
            self.opaque += 1;
            return IpPayload::None;
        }
        let src: Ipv6Addr = <[u8; 16]>::try_from(&data[8..24]).unwrap().into();
        let dst: Ipv6Addr = <[u8; 16]>::try_from(&data[24..40]).unwrap().into();
        let mut next = data[0 + 6];
        let mut offset = 40;
        loop {
            match next {
                // Hop-by-hop, routing, destination options: skip.
                0 | 43 | 60 => {
                    if data.len() < offset + 8 {
                        self.opaque += 1;
                        return IpPayload::None;
                    }
                    let ext_len = (usize::from(data[offset + 1]) + 1) * 8;
                    next = data[offset];
                    offset += ext_len;
                    if data.len() < offset {
                        self.opaque += 1;
                        return IpPayload::None;
                    }
                }
                // Fragment header: counted, not reassembled.
                44 => {
                    self.ipv6_fragments += 1;
                    return IpPayload::None;
                }
                _ => break,
            }
        }
        self.dispatch_proto(next, src.into(), dst.into(), data[offset..].to_vec())
    }

    fn dispatch_proto(&mut self, proto: u8, src: IpAddr, dst: IpAddr, data: Vec<u8>) -> IpPayload {
        match proto {
            6 => IpPayload::Tcp { src, dst, data },
            17 => IpPayload::Udp { src, dst, data },
            _ => IpPayload::None,
        }
    }
}

fn parse_tcp(src: IpAddr, dst: IpAddr, data: &[u8], ts: TimestampMicros) -> Option<TcpPacket> {
    if data.len() < 20 {
        return None;
    }
    let src_port = u16::from_be_bytes([data[0], data[1]]);
    let dst_port = u16::from_be_bytes([data[2], data[3]]);
    let seq = u32::from_be_bytes([data[4], data[5], data[6], data[7]]);
    let data_offset = usize::from(data[12] >> 4) * 4;
    if data_offset < 20 || data.len() < data_offset {
        return None;
    }
    Some(TcpPacket {
        ts,
        flow: FlowKey::tcp(src, src_port, dst, dst_port),
        seq,
        flags: data[13],
        payload: data[data_offset..].to_vec(),
    })
}

fn parse_udp(src: IpAddr, dst: IpAddr, data: &[u8], ts: TimestampMicros) -> Option<UdpPacket> {
    if data.len() < 8 {
        return None;
    }
    let src_port = u16::from_be_bytes([data[0], data[1]]);
    let dst_port = u16::from_be_bytes([data[2], data[3]]);
    let udp_len = usize::from(u16::from_be_bytes([data[4], data[5]]));
    if udp_len < 8 {
        return None;
    }
    let end = udp_len.min(data.len());
    Some(UdpPacket {
        ts,
        flow: FlowKey::udp(src, src_port, dst, dst_port),
        payload: data[8..end].to_vec(),
    })
}

pub fn decode_capture(path: &Path) -> Result<DecodeResult, FlowError> {
    let file = std::fs::File::open(path)?;
    decode_capture_read(file)
}

pub fn decode_capture_bytes(bytes: &[u8]) -> Result<DecodeResult, FlowError> {
    decode_capture_read(std::io::Cursor::new(bytes.to_vec()))
}

fn decode_capture_read<R: Read>(input: R) -> Result<DecodeResult, FlowError> {
    let mut reader = pcap_parser::create_reader(1 << 20, input).map_err(|e| match e {
        PcapError::Eof | PcapError::UnexpectedEof | PcapError::Incomplete(_) => FlowError::BadHeader,
        PcapError::HeaderNotRecognized => FlowError::BadHeader,
        PcapError::ReadError => FlowError::Read("read error".to_string()),
        other => FlowError::Read(other.to_string()),
    })?;

    let mut result = DecodeResult::default();
    let mut decoder = FrameDecoder::new();
    let mut legacy_linktype: u32 = 1;
    let mut legacy_nanos = false;
    let mut interfaces: Vec<NgInterface> = Vec::new();
    let mut saw_header = false;
    let mut stalled = 0u8;

    loop {
        match reader.next() {
            Ok((offset, block)) => {
                stalled = 0;
                match block {
                    PcapBlockOwned::LegacyHeader(hdr) => {
                        saw_header = true;
                        legacy_linktype = hdr.network.0 as u32;
                        legacy_nanos = hdr.is_nanosecond_precision();
                    }
                    PcapBlockOwned::Legacy(pkt) => {
                        saw_header = true;
                        result.frame_count += 1;
                        let sub = i64::from(pkt.ts_usec);
                        let micros = if legacy_nanos { sub / 1000 } else { sub };
                        let ts = i64::from(pkt.ts_sec) * 1_000_000 + micros;
                        decoder.decode(legacy_linktype, pkt.data, ts, &mut result.packets);
                    }
                    PcapBlockOwned::NG(Block::SectionHeader(_)) => {
                        saw_header = true;
                        interfaces.clear();
                    }
                    PcapBlockOwned::NG(Block::InterfaceDescription(idb)) => {
                        let units = idb.ts_resolution().unwrap_or(1_000_000).max(1);
                        interfaces.push(NgInterface { linktype: idb.linktype.0 as u32, units });
                    }
                    PcapBlockOwned::NG(Block::EnhancedPacket(epb)) => {
                        result.frame_count += 1;
                        if let Some(iface) = interfaces.get(epb.if_id as usize) {
                            let raw = (u64::from(epb.ts_high) << 32) | u64::from(epb.ts_low);
                            let ts = (u128::from(raw) * 1_000_000 / u128::from(iface.units)) as i64;
                            decoder.decode(iface.linktype, epb.data, ts, &mut result.packets);
                        } else {
                            decoder.opaque += 1;
                        }
                    }
                    PcapBlockOwned::NG(Block::SimplePacket(spb)) => {
                        result.frame_count += 1;
                        if let Some(iface) = interfaces.first() {
                            decoder.decode(iface.linktype, spb.data, 0, &mut result.packets);
                        } else {
                            decoder.opaque += 1;
                        }
                    }
                    PcapBlockOwned::NG(_) => {}
                }
                reader.consume(offset);
            }
            Err(PcapError::Eof) => break,
            Err(PcapError::Incomplete(_)) => {
                stalled += 1;
                if stalled > 2 {
                    // Buffer refilled twice without progress: damaged record.
                    result.truncated = true;
                    break;
                }
                if reader.refill().is_err() {
                    result.truncated = true;
                    break;
                }
            }
            Err(PcapError::UnexpectedEof) => {
                if !saw_header {
                    return Err(FlowError::BadHeader);
                }
                result.truncated = true;
                break;
            }
            Err(PcapError::HeaderNotRecognized) => {
                return Err(FlowError::BadHeader);
            }
            Err(e) => {
                if !saw_header {
                    return Err(FlowError::BadHeader);
                }
                log::warn!("capture parse error after {} frames: {e}", result.frame_count);
                result.truncated = true;
                break;
            }
        }
    }
    if !saw_header {
        return Err(FlowError::BadHeader);
    }
    result.ipv6_fragments = decoder.ipv6_fragments;
    result.opaque_frames = decoder.opaque;
    Ok(result)
}

// ---------------------------------------------------------------------------
// TCP reassembly

/// One direction of a reassembled TCP stream.
#[derive(Debug, Clone, Default)]
pub struct StreamData {
    /// Longest contiguous observed prefix (starting at the first captured
    /// byte for mid-stream flows).
    pub bytes: Vec<u8>,
    /// Missing ranges as `(offset, length)`. A leading `(0, 0)` entry is a
    /// sentinel meaning "an unknown amount of data preceded the capture"
    /// (flow observed without its SYN).
    pub gaps: Vec<(u64, u64)>,
    /// Whether this direction's SYN was observed.
    pub syn: bool,
    pub fin: bool,
    /// Arrival timestamp of the segment that first covered each offset,
    /// sorted by offset.
    markers: Vec<(u64, TimestampMicros)>,
}

impl StreamData {
    /// Builds a fully-observed stream, as if captured losslessly from the
    /// handshake through the close. Useful for tests and for embedders that
    /// already have application bytes in hand.
    pub fn from_bytes(bytes: Vec<u8>, ts: TimestampMicros) -> StreamData {
        let markers = if bytes.is_empty() { Vec::new() } else { vec![(0, ts)] };
        StreamData { bytes, gaps: Vec::new(), syn: true, fin: true, markers }
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Timestamp of the write that supplied the byte at `offset`.
    pub fn ts_at_offset(&self, offset: u64) -> Option<TimestampMicros> {
        let idx = self.markers.partition_point(|(o, _)| *o <= offset);
        idx.checked_sub(1).map(|i| self.markers[i].1)
    }

    pub fn first_ts(&self) -> Option<TimestampMicros> {
        self.markers.iter().map(|(_, t)| *t).min()
    }

    pub fn last_ts(&self) -> Option<TimestampMicros> {
        self.markers.iter().map(|(_, t)| *t).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

/// Both directions of a TCP connection, keyed by the canonical flow.
#[derive(Debug, Clone)]
pub struct TcpStreamPair {
    /// Canonical orientation: `A` is `flow_ab.src`.
    pub flow_ab: FlowKey,
    pub a_to_b: StreamData,
    pub b_to_a: StreamData,
    /// Which side initiated the connection, when the handshake was seen.
    pub client: Option<Side>,
}

impl TcpStreamPair {
    /// Builds a lossless pair from raw application bytes, with `flow` oriented
    /// client-to-server.
    pub fn synthetic(
        flow: FlowKey,
        client_bytes: Vec<u8>,
        server_bytes: Vec<u8>,
        ts: TimestampMicros,
    ) -> TcpStreamPair {
        let canon = flow.canonical();
        let client = if flow == canon { Side::A } else { Side::B };
        let c2s = StreamData::from_bytes(client_bytes, ts);
        let s2c = StreamData::from_bytes(server_bytes, ts + 1);
        let (a_to_b, b_to_a) = match client {
            Side::A => (c2s, s2c),
            Side::B => (s2c, c2s),
        };
        TcpStreamPair { flow_ab: canon, a_to_b, b_to_a, client: Some(client) }
    }

    pub fn stream(&self, side: Side) -> &StreamData {
        match side {
            Side::A => &self.a_to_b,
            Side::B => &self.b_to_a,
        }
    }

    /// Flow oriented `side -> other`.
    pub fn flow_from(&self, side: Side) -> FlowKey {
        match side {
            Side::A => self.flow_ab,
            Side::B => self.flow_ab.reversed(),
        }
    }
}

#[derive(Default)]
struct DirState {
    base: Option<u32>,
    highwater: i64,
    syn_rel: Option<i64>,
    fin: bool,
    runs: BTreeMap<i64, Vec<u8>>,
    markers: Vec<(i64, TimestampMicros)>,
}

impl DirState {
    fn process(&mut self, seq: u32, flags: u8, payload: &[u8], ts: TimestampMicros) {
        let base = *self.base.get_or_insert(seq);
        let expected_abs = base.wrapping_add(self.highwater as u32);
        let delta = seq.wrapping_sub(expected_abs) as i32;
        let rel = self.highwater + i64::from(delta);

        let syn = flags & TCP_SYN != 0;
        if syn && self.syn_rel.is_none() {
            self.syn_rel = Some(rel);
        }
        if flags & TCP_FIN != 0 {
            self.fin = true;
        }
        // SYN occupies one sequence number; payload (rare, e.g. TFO) follows it.
        let data_rel = if syn { rel + 1 } else { rel };
        if !payload.is_empty() {
            self.insert(data_rel, payload, ts);
        }
        let consumed = data_rel + payload.len() as i64 + i64::from(syn);
        self.highwater = self.highwater.max(consumed);
    }

    /// Writes `data` at stream offset `rel`, skipping already-covered bytes.
    fn insert(&mut self, rel: i64, data: &[u8], ts: TimestampMicros) {
        let end = rel + data.len() as i64;
        let mut pieces: Vec<(i64, std::ops::Range<usize>)> = Vec::new();
        let mut cursor = rel;
        while cursor < end {
            if let Some((&start, run)) = self.runs.range(..=cursor).next_back() {
                let run_end = start + run.len() as i64;
                if run_end > cursor {
                    cursor = run_end;
                    continue;
                }
            }
            let next_start = self
                .runs
                .range((std::ops::Bound::Excluded(cursor), std::ops::Bound::Unbounded))
                .next()
                .map(|(&s, _)| s)
                .unwrap_or(i64::MAX);
            let piece_end = end.min(next_start);
            pieces.push((cursor, (cursor - rel) as usize..(piece_end - rel) as usize));
            cursor = piece_end;
        }
        for (off, range) in pieces {
            self.runs.insert(off, data[range].to_vec());
            self.markers.push((off, ts));
        }
    }

    fn finish(self) -> StreamData {
        let syn = self.syn_rel.is_some();
        let origin = match self.syn_rel {
            Some(sr) => sr + 1,
            None => self.runs.keys().next().copied().unwrap_or(0),
        };
        // Coalesce adjacent runs, clipping anything before the stream origin
        // (pre-ISN junk such as keepalive probes).
        let mut merged: Vec<(i64, Vec<u8>)> = Vec::new();
        for (start, run) in self.runs {
            let run_end = start + run.len() as i64;
            if run_end <= origin {
                continue;
            }
            let skip = (origin - start).max(0) as usize;
            let start = start.max(origin);
            let run = if skip > 0 { run[skip..].to_vec() } else { run };
            match merged.last_mut() {
                Some((ps, pdata)) if *ps + pdata.len() as i64 == start => pdata.extend(run),
                _ => merged.push((start, run)),
            }
        }

        let mut out = StreamData { syn, fin: self.fin, ..StreamData::default() };
        if !syn && !merged.is_empty() {
            out.gaps.push((0, 0));
        }
        let mut prev_end = origin;
        for (i, (start, run)) in merged.iter().enumerate() {
            if *start > prev_end {
                out.gaps.push(((prev_end - origin) as u64, (*start - prev_end) as u64));
            }
            if i == 0 && *start == origin {
                out.bytes = run.clone();
            }
            prev_end = *start + run.len() as i64;
        }
        let mut markers: Vec<(u64, TimestampMicros)> = self
            .markers
            .into_iter()
            .filter(|(o, _)| *o >= origin)
            .map(|(o, t)| ((o - origin) as u64, t))
            .collect();
        markers.sort_by_key(|(o, _)| *o);
        markers.dedup_by_key(|(o, _)| *o);
        out.markers = markers;
        out
    }
}

/// Groups TCP packets into bidirectional streams and reassembles both sides.
/// Output is sorted by canonical flow key, so it is independent of packet
/// interleaving across flows.
pub fn reassemble_tcp(packets: &[DecodedPacket]) -> Vec<TcpStreamPair> {
    struct PairState {
        a: DirState,
        b: DirState,
        syn_side: Option<Side>,
        synack_side: Option<Side>,
    }
    let mut pairs: BTreeMap<FlowKey, PairState> = BTreeMap::new();
    for packet in packets {
        let DecodedPacket::Tcp(p) = packet else { continue };
        let canon = p.flow.canonical();
        let side = if p.flow == canon { Side::A } else { Side::B };
        let state = pairs.entry(canon).or_insert_with(|| PairState {
            a: DirState::default(),
            b: DirState::default(),
            syn_side: None,
            synack_side: None,
        });
        if p.flags & TCP_SYN != 0 {
            if p.flags & TCP_ACK != 0 {
                state.synack_side.get_or_insert(side);
            } else {
                state.syn_side.get_or_insert(side);
            }
        }
        let dir = match side {
            Side::A => &mut state.a,
            Side::B => &mut state.b,
        };
        dir.process(p.seq, p.flags, &p.payload, p.ts);
    }
    pairs
        .into_iter()
        .map(|(flow_ab, st)| {
            let client = st.syn_side.or(st.synack_side.map(Side::opposite));
            TcpStreamPair {
                flow_ab,
                a_to_b: st.a.finish(),
                b_to_a: st.b.finish(),
                client,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// UDP grouping

#[derive(Debug, Clone)]
pub struct UdpFlowGroup {
    pub flow: FlowKey,
    /// Addressed to/from the SSDP port or the SSDP multicast group.
    pub ssdp_candidate: bool,
    pub datagrams: Vec<(TimestampMicros, Vec<u8>)>,
}

pub fn is_multicast(ip: &IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => v4.is_multicast(),
        IpAddr::V6(v6) => v6.is_multicast(),
    }
}

const SSDP_PORT: u16 = 1900;

fn ssdp_candidate(flow: &FlowKey) -> bool {
    flow.src_port == SSDP_PORT
        || flow.dst_port == SSDP_PORT
        || flow.dst == IpAddr::V4(Ipv4Addr::new(239, 255, 255, 250))
}

/// Groups UDP datagrams by directional flow, preserving arrival order within
/// each group; groups are sorted by flow key.
pub fn group_udp(packets: &[DecodedPacket]) -> Vec<UdpFlowGroup> {
    let mut groups: BTreeMap<FlowKey, Vec<(TimestampMicros, Vec<u8>)>> = BTreeMap::new();
    for packet in packets {
        let DecodedPacket::Udp(p) = packet else { continue };
        groups.entry(p.flow).or_default().push((p.ts, p.payload.clone()));
    }
    groups
        .into_iter()
        .map(|(flow, datagrams)| UdpFlowGroup {
            flow,
            ssdp_candidate: ssdp_candidate(&flow),
            datagrams,
        })
        .collect()
}
