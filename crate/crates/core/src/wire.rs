//! Binary datagram codec for state and command messages.
//!
//! Layout, little-endian: magic `ESW1` (4 bytes), message type (1 byte),
//! seq (u32), state_seq (u32, commands only), t_created (f64), payload
//! floats (f64 each: state = 8, command = 3), CRC32 trailer over all
//! preceding bytes. Datagrams never exceed [`MAX_DATAGRAM`] bytes.

use nalgebra::Vector3;
use thiserror::Error;

use crate::dynamics::{ControlCommand, UavState};

pub const MAGIC: [u8; 4] = *b"ESW1";
pub const MAX_DATAGRAM: usize = 128;

pub const TYPE_STATE: u8 = 0;
pub const TYPE_COMMAND: u8 = 1;
pub const TYPE_PROBE: u8 = 2;
pub const TYPE_PROBE_REPLY: u8 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("datagram truncated ({0} bytes)")]
    Truncated(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unknown message type {0}")]
    BadType(u8),
    #[error("CRC mismatch")]
    BadCrc,
    #[error("datagram length {got} does not match type (expected {expected})")]
    BadLength { expected: usize, got: usize },
}

/// Messages that cross the wire in datagram mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WireMsg {
    /// Uplink vehicle state; `state.t` doubles as the creation timestamp.
    State { seq: u32, state: UavState },
    Command(ControlCommand),
    /// Clock-sync probe from the vehicle side.
    Probe { seq: u32, t_send: f64 },
    /// Echo of a probe carrying the responder's receive timestamp.
    ProbeReply { seq: u32, t_send: f64, t_recv: f64 },
}

const STATE_LEN: usize = 4 + 1 + 4 + 8 + 8 * 8 + 4;
const COMMAND_LEN: usize = 4 + 1 + 4 + 4 + 8 + 3 * 8 + 4;
const PROBE_LEN: usize = 4 + 1 + 4 + 8 + 4;
const PROBE_REPLY_LEN: usize = 4 + 1 + 4 + 8 + 8 + 4;

/// CRC-32 (IEEE 802.3, reflected, polynomial 0xEDB88320).
pub fn crc32(data: &[u8]) -> u32 {
    const TABLE: [u32; 256] = crc32_table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc = (crc >> 8) ^ TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    !crc
}

const fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(msg_type: u8) -> Self {
        let mut buf = Vec::with_capacity(MAX_DATAGRAM);
        buf.extend_from_slice(&MAGIC);
        buf.push(msg_type);
        Self { buf }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        debug_assert!(self.buf.len() <= MAX_DATAGRAM);
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn f64(&mut self) -> f64 {
        let v = f64::from_le_bytes(self.buf[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }
}

pub fn encode(msg: &WireMsg) -> Vec<u8> {
    match msg {
        WireMsg::State { seq, state } => {
            let mut w = Writer::new(TYPE_STATE);
            w.u32(*seq);
            w.f64(state.t);
            for c in state.p.iter().chain(state.v.iter()) {
                w.f64(*c);
            }
            w.f64(state.phi);
            w.f64(state.theta);
            w.finish()
        }
        WireMsg::Command(cmd) => {
            let mut w = Writer::new(TYPE_COMMAND);
            w.u32(cmd.seq);
            w.u32(cmd.state_seq);
            w.f64(cmd.t_created);
            w.f64(cmd.thrust);
            w.f64(cmd.phi_ref);
            w.f64(cmd.theta_ref);
            w.finish()
        }
        WireMsg::Probe { seq, t_send } => {
            let mut w = Writer::new(TYPE_PROBE);
            w.u32(*seq);
            w.f64(*t_send);
            w.finish()
        }
        WireMsg::ProbeReply {
            seq,
            t_send,
            t_recv,
        } => {
            let mut w = Writer::new(TYPE_PROBE_REPLY);
            w.u32(*seq);
            w.f64(*t_send);
            w.f64(*t_recv);
            w.finish()
        }
    }
}

pub fn decode(buf: &[u8]) -> Result<WireMsg, WireError> {
    if buf.len() < 9 {
        return Err(WireError::Truncated(buf.len()));
    }
    if buf[..4] != MAGIC {
        return Err(WireError::BadMagic);
    }
    let msg_type = buf[4];
    let expected = match msg_type {
        TYPE_STATE => STATE_LEN,
        TYPE_COMMAND => COMMAND_LEN,
        TYPE_PROBE => PROBE_LEN,
        TYPE_PROBE_REPLY => PROBE_REPLY_LEN,
        other => return Err(WireError::BadType(other)),
    };
    if buf.len() != expected {
        return Err(WireError::BadLength {
            expected,
            got: buf.len(),
        });
    }
    let body = &buf[..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    if crc32(body) != stored {
        return Err(WireError::BadCrc);
    }

    let mut r = Reader { buf, pos: 5 };
    Ok(match msg_type {
        TYPE_STATE => {
            let seq = r.u32();
            let t = r.f64();
            let p = Vector3::new(r.f64(), r.f64(), r.f64());
            let v = Vector3::new(r.f64(), r.f64(), r.f64());
            let phi = r.f64();
            let theta = r.f64();
            WireMsg::State {
                seq,
                state: UavState { p, v, phi, theta, t },
            }
        }
        TYPE_COMMAND => {
            let seq = r.u32();
            let state_seq = r.u32();
            let t_created = r.f64();
            let thrust = r.f64();
            let phi_ref = r.f64();
            let theta_ref = r.f64();
            WireMsg::Command(ControlCommand {
                thrust,
                phi_ref,
                theta_ref,
                t_created,
                seq,
                state_seq,
            })
        }
        TYPE_PROBE => WireMsg::Probe {
            seq: r.u32(),
            t_send: r.f64(),
        },
        TYPE_PROBE_REPLY => WireMsg::ProbeReply {
            seq: r.u32(),
            t_send: r.f64(),
            t_recv: r.f64(),
        },
        _ => unreachable!(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_state(rng: &mut StdRng) -> UavState {
        UavState {
            p: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            v: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            phi: rng.gen(),
            theta: rng.gen(),
            t: rng.gen(),
        }
    }

    fn random_command(rng: &mut StdRng) -> ControlCommand {
        ControlCommand {
            thrust: rng.gen(),
            phi_ref: rng.gen(),
            theta_ref: rng.gen(),
            t_created: rng.gen(),
            seq: rng.gen(),
            state_seq: rng.gen(),
        }
    }

    #[test]
    fn crc32_known_vector() {
        // standard check value for "123456789"
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn round_trip_states_and_commands() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = random_state(&mut rng);
            let msg = WireMsg::State { seq: rng.gen(), state: s };
            assert_eq!(decode(&encode(&msg)).unwrap(), msg);

            let c = random_command(&mut rng);
            let msg = WireMsg::Command(c);
            assert_eq!(decode(&encode(&msg)).unwrap(), msg);
        }
    }

    #[test]
    fn round_trip_probes() {
        let msg = WireMsg::Probe { seq: 5, t_send: 1.25 };
        assert_eq!(decode(&encode(&msg)).unwrap(), msg);
        let msg = WireMsg::ProbeReply {
            seq: 5,
            t_send: 1.25,
            t_recv: 1.251,
        };
        assert_eq!(decode(&encode(&msg)).unwrap(), msg);
    }

    #[test]
    fn datagrams_fit_budget() {
        let mut rng = StdRng::seed_from_u64(4);
        let msgs = [
            WireMsg::State { seq: 1, state: random_state(&mut rng) },
            WireMsg::Command(random_command(&mut rng)),
            WireMsg::Probe { seq: 0, t_send: 0.0 },
            WireMsg::ProbeReply { seq: 0, t_send: 0.0, t_recv: 0.0 },
        ];
        for m in &msgs {
            assert!(encode(m).len() <= MAX_DATAGRAM);
        }
    }

    #[test]
    fn malformed_datagrams_rejected() {
        let mut rng = StdRng::seed_from_u64(5);
        let good = encode(&WireMsg::Command(random_command(&mut rng)));

        // truncation at every length
        for cut in 0..good.len() {
            assert!(decode(&good[..cut]).is_err(), "cut={cut}");
        }
        // bad magic
        let mut bad = good.clone();
        bad[0] ^= 0xFF;
        assert_eq!(decode(&bad), Err(WireError::BadMagic));
        // bad type
        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(decode(&bad), Err(WireError::BadType(9)));
        // single-bit corruption anywhere in the body breaks the CRC
        for byte in 5..good.len() - 4 {
            let mut bad = good.clone();
            bad[byte] ^= 0x01;
            assert_eq!(decode(&bad), Err(WireError::BadCrc), "byte={byte}");
        }
        // corrupted trailer
        let mut bad = good;
        let n = bad.len();
        bad[n - 1] ^= 0x01;
        assert_eq!(decode(&bad), Err(WireError::BadCrc));
    }
}
