//! Optional live datagram transport carrying the wire codec between two
//! OS processes. Timestamps on both sides come from a shared monotonic
//! epoch negotiated at startup: the vehicle side sends timestamp probes
//! and takes the median offset over a series of exchanges.

use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use crate::wire::{self, WireMsg, MAX_DATAGRAM};

/// Which side of the link this endpoint plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Uav,
    Edge,
}

/// One side of the live datagram link.
pub struct DatagramEndpoint {
    socket: UdpSocket,
    peer: SocketAddr,
    epoch: Instant,
    /// Offset added to local monotonic time so both sides agree, seconds.
    pub clock_offset: f64,
    /// Datagrams that failed to decode; counted, never fatal.
    pub malformed: u64,
    probe_seq: u32,
}

impl DatagramEndpoint {
    pub fn bind<A: ToSocketAddrs, B: ToSocketAddrs>(bind: A, peer: B) -> io::Result<Self> {
        let socket = UdpSocket::bind(bind)?;
        socket.set_nonblocking(true)?;
        let peer = peer
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "unresolvable peer"))?;
        Ok(Self {
            socket,
            peer,
            epoch: Instant::now(),
            clock_offset: 0.0,
            malformed: 0,
            probe_seq: 0,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    /// Repoints the endpoint at a different peer (used when the peer port
    /// is only known after both sockets are bound).
    pub fn set_peer(&mut self, peer: SocketAddr) {
        self.peer = peer;
    }

    /// Shared-epoch time in seconds.
    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() + self.clock_offset
    }

    pub fn send_msg(&self, msg: &WireMsg) -> io::Result<()> {
        let buf = wire::encode(msg);
        self.socket.send_to(&buf, self.peer)?;
        Ok(())
    }

    /// Non-blocking receive of the next well-formed message, if any.
    /// Malformed datagrams are dropped and counted.
    pub fn try_recv(&mut self) -> Option<WireMsg> {
        self.try_recv_from().map(|(msg, _)| msg)
    }

    /// Like [`try_recv`](Self::try_recv) but also reports the sender, so a
    /// listening side can learn its peer from the first datagram.
    pub fn try_recv_from(&mut self) -> Option<(WireMsg, SocketAddr)> {
        let mut buf = [0u8; MAX_DATAGRAM + 64];
        loop {
            match self.socket.recv_from(&mut buf) {
                Ok((n, src)) => match wire::decode(&buf[..n]) {
                    Ok(msg) => return Some((msg, src)),
                    Err(_) => {
                        self.malformed += 1;
                        continue;
                    }
                },
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => return None,
                Err(_) => return None,
            }
        }
    }

    /// Responds to a clock probe with the local receive timestamp. The
    /// edge side calls this for every probe it receives.
    pub fn answer_probe(&self, seq: u32, t_send: f64) -> io::Result<()> {
        self.send_msg(&WireMsg::ProbeReply {
            seq,
            t_send,
            t_recv: self.now(),
        })
    }

    /// Runs the startup clock handshake from the vehicle side: `probes`
    /// round trips, offset taken as the median of the per-probe estimates.
    /// The peer must be answering probes. Adjusts `clock_offset` in place.
    pub fn sync_epoch(&mut self, probes: usize, timeout: Duration) -> io::Result<f64> {
        let mut offsets = Vec::with_capacity(probes);
        for _ in 0..probes {
            self.probe_seq += 1;
            let seq = self.probe_seq;
            let t0 = self.now();
            self.send_msg(&WireMsg::Probe { seq, t_send: t0 })?;
            let deadline = Instant::now() + timeout;
            loop {
                if Instant::now() >= deadline {
                    break;
                }
                match self.try_recv() {
                    Some(WireMsg::ProbeReply {
                        seq: rseq,
                        t_send,
                        t_recv,
                    }) if rseq == seq => {
                        let t1 = self.now();
                        // midpoint estimate of the peer clock against ours
                        offsets.push(t_recv - (t_send + t1) / 2.0);
                        break;
                    }
                    Some(_) => continue,
                    None => std::thread::sleep(Duration::from_micros(200)),
                }
            }
        }
        if offsets.is_empty() {
            return Err(io::Error::new(
                io::ErrorKind::TimedOut,
                "no probe replies; peer unreachable",
            ));
        }
        offsets.sort_by(|a, b| a.total_cmp(b));
        let median = offsets[offsets.len() / 2];
        self.clock_offset += median;
        Ok(median)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlCommand;

    pub(crate) fn loopback_pair() -> (DatagramEndpoint, DatagramEndpoint) {
        let mut a = DatagramEndpoint::bind("127.0.0.1:0", "127.0.0.1:9").unwrap();
        let b = DatagramEndpoint::bind("127.0.0.1:0", a.local_addr().unwrap()).unwrap();
        let b_addr = b.local_addr().unwrap();
        a.set_peer(b_addr);
        (a, b)
    }

    #[test]
    fn send_and_receive_roundtrip() {
        let (uav, mut edge) = loopback_pair();
        let msg = WireMsg::Command(ControlCommand::hover(9.81, 1.0));
        uav.send_msg(&msg).unwrap();
        let mut got = None;
        for _ in 0..100 {
            if let Some(m) = edge.try_recv() {
                got = Some(m);
                break;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        assert_eq!(got, Some(msg));
        assert_eq!(edge.malformed, 0);
    }

    #[test]
    fn clock_sync_converges_on_loopback() {
        let (mut uav, mut edge) = loopback_pair();
        let responder = std::thread::spawn(move || {
            let start = Instant::now();
            while start.elapsed() < Duration::from_secs(2) {
                if let Some(WireMsg::Probe { seq, t_send }) = edge.try_recv() {
                    edge.answer_probe(seq, t_send).unwrap();
                }
                std::thread::sleep(Duration::from_micros(100));
            }
        });
        let offset = uav.sync_epoch(10, Duration::from_millis(200)).unwrap();
        responder.join().unwrap();
        // both endpoints were created within milliseconds of each other,
        // so the negotiated offset stays small on loopback
        assert!(offset.abs() < 1.0, "offset {offset}");
    }
}
