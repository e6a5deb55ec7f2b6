//! TLS handshake byte builders for fixtures and tests: ClientHello and
//! ServerHello handshake messages plus record-layer wrapping with an
//! arbitrary fragment size.

/// Deterministic 32-byte "random" so identical specs produce identical bytes.
const FIXED_RANDOM: [u8; 32] = [0x5a; 32];

#[derive(Debug, Clone)]
pub struct ClientHelloSpec {
    /// legacy_version field inside the hello body, e.g. 0x0303.
    pub legacy_version: u16,
    pub cipher_suites: Vec<u16>,
    pub server_name: Option<String>,
    /// supported_versions extension values, in offer order.
    pub supported_versions: Option<Vec<u16>>,
}

impl Default for ClientHelloSpec {
    fn default() -> Self {
        ClientHelloSpec {
            legacy_version: 0x0303,
            cipher_suites: vec![0xc02f, 0xc030],
            server_name: None,
            supported_versions: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerHelloSpec {
    pub legacy_version: u16,
    pub cipher_suite: u16,
    /// selected_version for the supported_versions extension (TLS 1.3).
    pub selected_version: Option<u16>,
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn extension(out: &mut Vec<u8>, ext_type: u16, body: &[u8]) {
    put_u16(out, ext_type);
    put_u16(out, body.len() as u16);
    out.extend_from_slice(body);
}

/// Builds the handshake message (type + length + body) for a ClientHello.
pub fn client_hello_message(spec: &ClientHelloSpec) -> Vec<u8> {
    let mut body = Vec::new();
    put_u16(&mut body, spec.legacy_version);
    body.extend_from_slice(&FIXED_RANDOM);
    body.push(0); // empty session id
    put_u16(&mut body, (spec.cipher_suites.len() * 2) as u16);
    for cs in &spec.cipher_suites {
        put_u16(&mut body, *cs);
    }
    body.push(1); // one compression method
    body.push(0); // null compression

    let mut exts = Vec::new();
    if let Some(name) = &spec.server_name {
        let mut sni = Vec::new();
        put_u16(&mut sni, (name.len() + 3) as u16); // server_name_list length
        sni.push(0); // name_type host_name
        put_u16(&mut sni, name.len() as u16);
        sni.extend_from_slice(name.as_bytes());
        extension(&mut exts, 0, &sni);
    }
    if let Some(versions) = &spec.supported_versions {
        let mut sv = Vec::new();
        sv.push((versions.len() * 2) as u8);
        for v in versions {
            put_u16(&mut sv, *v);
        }
        extension(&mut exts, 43, &sv);
    }
    if !exts.is_empty() {
        put_u16(&mut body, exts.len() as u16);
        body.extend_from_slice(&exts);
    }

    let mut msg = vec![0x01]; // client_hello
    msg.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    msg.extend_from_slice(&body);
    msg
}

/// Builds the handshake message for a ServerHello.
pub fn server_hello_message(spec: &ServerHelloSpec) -> Vec<u8> {
    let mut body = Vec::new();
    put_u16(&mut body, spec.legacy_version);
    body.extend_from_slice(&FIXED_RANDOM);
    body.push(0); // empty session id
    put_u16(&mut body, spec.cipher_suite);
    body.push(0); // null compression
    if let Some(v) = spec.selected_version {
        let mut exts = Vec::new();
        let mut sv = Vec::new();
        put_u16(&mut sv, v);
        extension(&mut exts, 43, &sv);
        put_u16(&mut body, exts.len() as u16);
        body.extend_from_slice(&exts);
    }
    let mut msg = vec![0x02]; // server_hello
    msg.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    msg.extend_from_slice(&body);
    msg
}

/// Wraps handshake bytes into one or more handshake records, at most
/// `max_fragment` payload bytes each.
pub fn wrap_records(handshake: &[u8], record_version: u16, max_fragment: usize) -> Vec<u8> {
    assert!(max_fragment > 0, "record fragments must be non-empty");
    let mut out = Vec::new();
    for chunk in handshake.chunks(max_fragment) {
        out.push(22); // handshake
        put_u16(&mut out, record_version);
        put_u16(&mut out, chunk.len() as u16);
        out.extend_from_slice(chunk);
    }
    out
}

pub fn change_cipher_spec(record_version: u16) -> Vec<u8> {
    let mut out = vec![20];
    put_u16(&mut out, record_version);
    put_u16(&mut out, 1);
    out.push(1);
    out
}

pub fn app_data_record(record_version: u16, payload: &[u8]) -> Vec<u8> {
    let mut out = vec![23];
    put_u16(&mut out, record_version);
    put_u16(&mut out, payload.len() as u16);
    out.extend_from_slice(payload);
    out
}

/// A complete client-side first flight: ClientHello in a single record.
pub fn client_first_flight(spec: &ClientHelloSpec) -> Vec<u8> {
    wrap_records(&client_hello_message(spec), 0x0301, usize::MAX >> 1)
}

/// Server first flight: ServerHello record, then change-cipher-spec to mark
/// the end of the plaintext handshake.
pub fn server_first_flight(spec: &ServerHelloSpec) -> Vec<u8> {
    let mut out = wrap_records(&server_hello_message(spec), 0x0303, usize::MAX >> 1);
    out.extend_from_slice(&change_cipher_spec(0x0303));
    out
}
