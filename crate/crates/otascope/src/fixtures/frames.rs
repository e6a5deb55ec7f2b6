//! Raw frame builders for fixture captures: Ethernet (optionally VLAN-tagged)
//! carrying IPv4/IPv6 TCP and UDP. Checksums are computed so the output is
//! palatable to external tools, even though the decoder ignores them.

use std::net::{Ipv4Addr, Ipv6Addr};

pub const TCP_FIN: u8 = 0x01;
pub const TCP_SYN: u8 = 0x02;
pub const TCP_RST: u8 = 0x04;
pub const TCP_PSH: u8 = 0x08;
pub const TCP_ACK: u8 = 0x10;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_IPV6: u16 = 0x86dd;
pub const ETHERTYPE_VLAN: u16 = 0x8100;

fn checksum16(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in chunks {
        let mut i = 0;
        while i + 1 < chunk.len() {
            sum += u32::from(u16::from_be_bytes([chunk[i], chunk[i + 1]]));
            i += 2;
        }
        if i < chunk.len() {
            sum += u32::from(u16::from_be_bytes([chunk[i], 0]));
        }
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

pub fn ether(dst_mac: [u8; 6], src_mac: [u8; 6], ethertype: u16, payload: &[u8]) -> Vec<u8> {
    let mut f = Vec::with_capacity(14 + payload.len());
    f.extend_from_slice(&dst_mac);
    f.extend_from_slice(&src_mac);
    f.extend_from_slice(&ethertype.to_be_bytes());
    f.extend_from_slice(payload);
    f
}

/// Inserts an 802.1Q tag into an existing Ethernet frame.
pub fn vlan_tag(frame: &[u8], vid: u16) -> Vec<u8> {
    let mut f = Vec::with_capacity(frame.len() + 4);
    f.extend_from_slice(&frame[..12]);
    f.extend_from_slice(&ETHERTYPE_VLAN.to_be_bytes());
    f.extend_from_slice(&(vid & 0x0fff).to_be_bytes());
    f.extend_from_slice(&frame[12..]);
    f
}

pub struct Ipv4Opts {
    pub ident: u16,
    /// Raw flags/fragment-offset field (offset in 8-byte units).
    pub flags_frag: u16,
    pub ttl: u8,
}

impl Default for Ipv4Opts {
    fn default() -> Self {
        Ipv4Opts { ident: 0, flags_frag: 0, ttl: 64 }
    }
}

pub fn ipv4(src: Ipv4Addr, dst: Ipv4Addr, proto: u8, payload: &[u8], opts: Ipv4Opts) -> Vec<u8> {
    let total = 20 + payload.len();
    let mut h = [0u8; 20];
    h[0] = 0x45;
    h[2..4].copy_from_slice(&(total as u16).to_be_bytes());
    h[4..6].copy_from_slice(&opts.ident.to_be_bytes());
    h[6..8].copy_from_slice(&opts.flags_frag.to_be_bytes());
    h[8] = opts.ttl;
    h[9] = proto;
    h[12..16].copy_from_slice(&src.octets());
    h[16..20].copy_from_slice(&dst.octets());
    let ck = checksum16(&[&h]);
    h[10..12].copy_from_slice(&ck.to_be_bytes());
    let mut p = Vec::with_capacity(total);
    p.extend_from_slice(&h);
    p.extend_from_slice(payload);
    p
}

pub fn ipv6(src: Ipv6Addr, dst: Ipv6Addr, next_header: u8, payload: &[u8]) -> Vec<u8> {
    let mut p = Vec::with_capacity(40 + payload.len());
    p.extend_from_slice(&0x6000_0000u32.to_be_bytes());
    p.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    p.push(next_header);
    p.push(64); // hop limit
    p.extend_from_slice(&src.octets());
    p.extend_from_slice(&dst.octets());
    p.extend_from_slice(payload);
    p
}

fn l4_checksum_v4(src: Ipv4Addr, dst: Ipv4Addr, proto: u8, segment: &[u8]) -> u16 {
    let mut pseudo = Vec::with_capacity(12);
    pseudo.extend_from_slice(&src.octets());
    pseudo.extend_from_slice(&dst.octets());
    pseudo.push(0);
    pseudo.push(proto);
    pseudo.extend_from_slice(&(segment.len() as u16).to_be_bytes());
    checksum16(&[&pseudo, segment])
}

pub struct TcpOpts {
    pub seq: u32,
    pub ack: u32,
    pub flags: u8,
    pub window: u16,
}

pub fn tcp(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    opts: TcpOpts,
    payload: &[u8],
) -> Vec<u8> {
    let mut seg = Vec::with_capacity(20 + payload.len());
    seg.extend_from_slice(&src_port.to_be_bytes());
    seg.extend_from_slice(&dst_port.to_be_bytes());
    seg.extend_from_slice(&opts.seq.to_be_bytes());
    seg.extend_from_slice(&opts.ack.to_be_bytes());
    seg.push(5 << 4); // data offset: 5 words, no options
    seg.push(opts.flags);
    seg.extend_from_slice(&opts.window.to_be_bytes());
    seg.extend_from_slice(&[0, 0]); // checksum placeholder
    seg.extend_from_slice(&[0, 0]); // urgent pointer
    seg.extend_from_slice(payload);
    let ck = l4_checksum_v4(src, dst, 6, &seg);
    seg[16..18].copy_from_slice(&ck.to_be_bytes());
    seg
}

pub fn udp(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    payload: &[u8],
) -> Vec<u8> {
    let len = 8 + payload.len();
    let mut seg = Vec::with_capacity(len);
    seg.extend_from_slice(&src_port.to_be_bytes());
    seg.extend_from_slice(&dst_port.to_be_bytes());
    seg.extend_from_slice(&(len as u16).to_be_bytes());
    seg.extend_from_slice(&[0, 0]);
    seg.extend_from_slice(payload);
    let ck = l4_checksum_v4(src, dst, 17, &seg);
    // UDP checksum 0 means "absent"; RFC 768 maps a computed 0 to 0xffff.
    let ck = if ck == 0 { 0xffff } else { ck };
    seg[6..8].copy_from_slice(&ck.to_be_bytes());
    seg
}

const MAC_A: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x0a];
const MAC_B: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x0b];

/// Ethernet/IPv4/TCP frame with default MACs, the common fixture case.
pub fn tcp_frame(
    src: Ipv4Addr,
    src_port: u16,
    dst: Ipv4Addr,
    dst_port: u16,
    opts: TcpOpts,
    payload: &[u8],
) -> Vec<u8> {
    let seg = tcp(src, dst, src_port, dst_port, opts, payload);
    let ip = ipv4(src, dst, 6, &seg, Ipv4Opts::default());
    ether(MAC_B, MAC_A, ETHERTYPE_IPV4, &ip)
}

/// Ethernet/IPv4/UDP frame with default MACs.
pub fn udp_frame(
    src: Ipv4Addr,
    src_port: u16,
    dst: Ipv4Addr,
    dst_port: u16,
    payload: &[u8],
) -> Vec<u8> {
    let seg = udp(src, dst, src_port, dst_port, payload);
    let ip = ipv4(src, dst, 17, &seg, Ipv4Opts::default());
    ether(MAC_B, MAC_A, ETHERTYPE_IPV4, &ip)
}

/// Data frames for one direction of an established connection, with the
/// payload cut at the given offsets (so `&[5]` sends `[..5]` then `[5..]`).
/// Out-of-range or unsorted cut points are ignored.
pub fn tcp_data_frames(
    src: Ipv4Addr,
    src_port: u16,
    dst: Ipv4Addr,
    dst_port: u16,
    start_seq: u32,
    ack: u32,
    payload: &[u8],
    cuts: &[usize],
) -> Vec<Vec<u8>> {
    let mut bounds = vec![0usize];
    for &c in cuts {
        if c > *bounds.last().unwrap() && c < payload.len() {
            bounds.push(c);
        }
    }
    bounds.push(payload.len());
    let mut out = Vec::new();
    for w in bounds.windows(2) {
        let chunk = &payload[w[0]..w[1]];
        let opts = TcpOpts {
            seq: start_seq.wrapping_add(w[0] as u32),
            ack,
            flags: TCP_ACK | TCP_PSH,
            window: 64240,
        };
        out.push(tcp_frame(src, src_port, dst, dst_port, opts, chunk));
    }
    out
}

pub struct ConversationOpts {
    pub client_isn: u32,
    pub server_isn: u32,
    /// Maximum payload bytes per data segment.
    pub segment_size: usize,
    /// Exchange FINs after the data.
    pub close: bool,
}

impl Default for ConversationOpts {
    fn default() -> Self {
        ConversationOpts { client_isn: 1000, server_isn: 5000, segment_size: 1400, close: true }
    }
}

/// Frames for a complete TCP conversation: handshake, client bytes, server
/// bytes, and (by default) an orderly close. Payloads are chunked by
/// `segment_size`.
pub fn tcp_conversation(
    client: Ipv4Addr,
    client_port: u16,
    server: Ipv4Addr,
    server_port: u16,
    c2s: &[u8],
    s2c: &[u8],
    opts: &ConversationOpts,
) -> Vec<Vec<u8>> {
    let isn_c = opts.client_isn;
    let isn_s = opts.server_isn;
    let seg = opts.segment_size.max(1);
    let mut out = Vec::new();
    let syn = TcpOpts { seq: isn_c, ack: 0, flags: TCP_SYN, window: 64240 };
    out.push(tcp_frame(client, client_port, server, server_port, syn, &[]));
    let synack = TcpOpts { seq: isn_s, ack: isn_c.wrapping_add(1), flags: TCP_SYN | TCP_ACK, window: 64240 };
    out.push(tcp_frame(server, server_port, client, client_port, synack, &[]));
    let ack = TcpOpts { seq: isn_c.wrapping_add(1), ack: isn_s.wrapping_add(1), flags: TCP_ACK, window: 64240 };
    out.push(tcp_frame(client, client_port, server, server_port, ack, &[]));

    let cuts: Vec<usize> = (seg..c2s.len()).step_by(seg).collect();
    out.extend(tcp_data_frames(
        client,
        client_port,
        server,
        server_port,
        isn_c.wrapping_add(1),
        isn_s.wrapping_add(1),
        c2s,
        &cuts,
    ));
    let cuts: Vec<usize> = (seg..s2c.len()).step_by(seg).collect();
    out.extend(tcp_data_frames(
        server,
        server_port,
        client,
        client_port,
        isn_s.wrapping_add(1),
        isn_c.wrapping_add(1).wrapping_add(c2s.len() as u32),
        s2c,
        &cuts,
    ));

    if opts.close {
        let c_next = isn_c.wrapping_add(1).wrapping_add(c2s.len() as u32);
        let s_next = isn_s.wrapping_add(1).wrapping_add(s2c.len() as u32);
        let fin_c = TcpOpts { seq: c_next, ack: s_next, flags: TCP_FIN | TCP_ACK, window: 64240 };
        out.push(tcp_frame(client, client_port, server, server_port, fin_c, &[]));
        let fin_s = TcpOpts {
            seq: s_next,
            ack: c_next.wrapping_add(1),
            flags: TCP_FIN | TCP_ACK,
            window: 64240,
        };
        out.push(tcp_frame(server, server_port, client, client_port, fin_s, &[]));
        let last = TcpOpts {
            seq: c_next.wrapping_add(1),
            ack: s_next.wrapping_add(1),
            flags: TCP_ACK,
            window: 64240,
        };
        out.push(tcp_frame(client, client_port, server, server_port, last, &[]));
    }
    out
}
