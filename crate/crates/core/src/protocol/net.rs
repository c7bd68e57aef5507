//! TCP transport for the curator/user protocol.
//!
//! The curator accepts one connection per user. For each it sends a
//! [`QueryMessage`] with its current iterate, waits for the matching
//! [`ResponseMessage`] and only then applies the update. Rounds are handled
//! one at a time, so the next inquiry always reflects every earlier answer.
//! A connection that fails, times out or misbehaves is dropped without
//! touching the state.
//!
//! A second listener serves the current estimate as JSON over minimal HTTP.

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::wire::{QueryMessage, ResponseMessage};
use crate::error::{config, Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorState, OnlineQuantile};
use crate::inference::sn_interval_at;
use crate::pivot::{CriticalValue, PivotTable};
use crate::randomizer::{lrc_unchecked, PrivacyLevel};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Significance level of the interval reported by the status endpoint.
    pub alpha: f64,
    /// Stop after this many completed rounds.
    pub max_rounds: Option<u64>,
    /// Per-round read/write timeout.
    pub round_timeout: Duration,
    /// Address for the JSON status endpoint, if any.
    pub status_bind: Option<SocketAddr>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { alpha: 0.05, max_rounds: None, round_timeout: Duration::from_secs(5), status_bind: None }
    }
}

/// Snapshot returned by the status endpoint. Estimate and interval are null
/// until enough rounds have completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub n: u64,
    pub estimate: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub alpha: f64,
}

struct Shared {
    estimator: Mutex<OnlineQuantile>,
    critical: CriticalValue,
    stop: AtomicBool,
    rejected: Mutex<u64>,
}

impl Shared {
    fn status(&self) -> Status {
        let est = self.estimator.lock().expect("estimator lock");
        let state = est.state();
        let interval = sn_interval_at(state, &self.critical).ok();
        Status {
            n: state.n,
            estimate: state.estimate().ok(),
            ci_lo: interval.map(|i| i.lo),
            ci_hi: interval.map(|i| i.hi),
            alpha: self.critical.alpha,
        }
    }
}

/// A bound, not yet running, curator.
pub struct Curator {
    listener: TcpListener,
    status_listener: Option<TcpListener>,
    shared: Arc<Shared>,
    options: ServeOptions,
}

impl Curator {
    /// Binds the round listener (and the status listener, if requested).
    ///
    /// The privacy level is rounded to whole parts per million, the resolution
    /// of the wire format, so curator and users agree on `r` exactly.
    pub fn bind<A: ToSocketAddrs>(addr: A, estimator: EstimatorConfig, pivot: &PivotTable, options: ServeOptions) -> Result<Self> {
        let critical = pivot.critical_value(options.alpha)?;
        let mut cfg = estimator;
        if !cfg.level.is_private() {
            return Err(config("the networked curator requires a private level"));
        }
        let wire_level = PrivacyLevel::from_rate_ppm(cfg.level.rate_ppm())?;
        if wire_level.rate() != cfg.level.rate() {
            log::info!("rounding r = {} to the wire resolution: {}", cfg.level.rate(), wire_level.rate());
            cfg.level = wire_level;
        }
        let estimator = OnlineQuantile::new(cfg)?;
        let listener = TcpListener::bind(addr)?;
        let status_listener = options.status_bind.map(TcpListener::bind).transpose()?;
        let shared = Arc::new(Shared {
            estimator: Mutex::new(estimator),
            critical,
            stop: AtomicBool::new(false),
            rejected: Mutex::new(0),
        });
        Ok(Self { listener, status_listener, shared, options })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn status_addr(&self) -> Option<SocketAddr> {
        self.status_listener.as_ref().and_then(|l| l.local_addr().ok())
    }

    /// Runs the curator on a background thread.
    pub fn spawn(self) -> Result<CuratorHandle> {
        let addr = self.local_addr()?;
        let status_addr = self.status_addr();
        let shared = Arc::clone(&self.shared);
        let thread = thread::spawn(move || self.run());
        Ok(CuratorHandle { addr, status_addr, shared, thread: Some(thread) })
    }

    /// Serves rounds on the calling thread until `max_rounds` is reached or
    /// the curator is stopped. Returns the final state.
    pub fn run(self) -> Result<EstimatorState> {
        let status_addr = self.status_addr();
        let status_thread = self.status_listener.map(|listener| {
            let shared = Arc::clone(&self.shared);
            thread::spawn(move || serve_status(listener, shared))
        });
        let result = round_loop(&self.listener, &self.shared, &self.options);
        self.shared.stop.store(true, Ordering::SeqCst);
        if let (Some(handle), Some(addr)) = (status_thread, status_addr) {
            let _ = TcpStream::connect(addr);
            let _ = handle.join();
        }
        result
    }
}

fn round_loop(listener: &TcpListener, shared: &Shared, options: &ServeOptions) -> Result<EstimatorState> {
    for conn in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let mut est = shared.estimator.lock().expect("estimator lock");
        match one_round(stream, &mut est, options.round_timeout) {
            Ok(()) => {}
            Err(e) => {
                *shared.rejected.lock().expect("reject counter") += 1;
                log::debug!("round dropped: {e}");
            }
        }
        let n = est.state().n;
        drop(est);
        if options.max_rounds.is_some_and(|max| n >= max) {
            break;
        }
    }
    Ok(*shared.estimator.lock().expect("estimator lock").state())
}

fn one_round(mut stream: TcpStream, est: &mut OnlineQuantile, timeout: Duration) -> Result<()> {
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.set_nodelay(true)?;
    let seq = est.state().n + 1;
    let query = QueryMessage { seq, threshold: est.next_threshold(), rate_ppm: est.config().level.rate_ppm() };
    stream.write_all(&query.encode())?;
    stream.flush()?;
    let response = ResponseMessage::read_from(&mut stream)?;
    if response.seq != seq {
        return Err(Error::Protocol(format!("response for seq {} while {seq} is outstanding", response.seq)));
    }
    est.update(response.bit);
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}

fn serve_status(listener: TcpListener, shared: Arc<Shared>) {
    for conn in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(mut stream) = conn else { continue };
        let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
        // Drain whatever request line arrived; the response does not depend on it.
        let mut scratch = [0u8; 1024];
        let _ = stream.read(&mut scratch);
        let body = serde_json::to_string(&shared.status()).unwrap_or_else(|_| "{}".into());
        let reply = format!(
            "HTTP/1.0 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
            body.len()
        );
        let _ = stream.write_all(reply.as_bytes());
    }
}

/// Handle to a curator running on a background thread.
pub struct CuratorHandle {
    addr: SocketAddr,
    status_addr: Option<SocketAddr>,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<Result<EstimatorState>>>,
}

impl CuratorHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn status_addr(&self) -> Option<SocketAddr> {
        self.status_addr
    }

    pub fn status(&self) -> Status {
        self.shared.status()
    }

    /// Connections dropped without an update.
    pub fn rejected_rounds(&self) -> u64 {
        *self.shared.rejected.lock().expect("reject counter")
    }

    /// Waits for the curator to finish (after `max_rounds`) and returns its state.
    pub fn join(mut self) -> Result<EstimatorState> {
        self.thread.take().expect("joined once").join().map_err(|_| Error::Protocol("curator thread panicked".into()))?
    }

    /// Stops accepting rounds and returns the final state.
    pub fn shutdown(mut self) -> Result<EstimatorState> {
        self.shared.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept calls.
        let _ = TcpStream::connect(self.addr);
        if let Some(addr) = self.status_addr {
            let _ = TcpStream::connect(addr);
        }
        self.thread.take().expect("joined once").join().map_err(|_| Error::Protocol("curator thread panicked".into()))?
    }
}

impl Drop for CuratorHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.shared.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            if let Some(addr) = self.status_addr {
                let _ = TcpStream::connect(addr);
            }
        }
    }
}

/// Fetches the status JSON from a curator's status endpoint.
pub fn fetch_status<A: ToSocketAddrs>(addr: A) -> Result<Status> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    stream.write_all(b"GET /status HTTP/1.0\r\n\r\n")?;
    let mut reply = String::new();
    stream.read_to_string(&mut reply)?;
    let body = reply
        .split_once("\r\n\r\n")
        .map(|(_, b)| b)
        .ok_or_else(|| Error::Protocol("malformed status reply".into()))?;
    Ok(serde_json::from_str(body)?)
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Connection attempts before giving up. Only attempts made before a query
    /// arrives are retried; once the datum has been used it is never resent.
    pub max_attempts: u32,
    pub retry_delay: Duration,
    pub timeout: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self { max_attempts: 5, retry_delay: Duration::from_millis(50), timeout: Duration::from_secs(5) }
    }
}

/// One completed user round, including every byte the user sent.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRound {
    pub query: QueryMessage,
    pub response: ResponseMessage,
    pub sent: Vec<u8>,
}

/// Answers one curator inquiry about `private_x` over an established stream.
/// The only bytes written are the response frame.
pub fn answer_query<S, R>(stream: &mut S, private_x: f64, rng: &mut R) -> Result<ClientRound>
where
    S: Read + Write,
    R: RngCore + ?Sized,
{
    if !private_x.is_finite() {
        return Err(Error::InvalidInput("private value must be finite".into()));
    }
    let query = QueryMessage::read_from(stream)?;
    let level = PrivacyLevel::from_rate_ppm(query.rate_ppm)?;
    let bit = lrc_unchecked(query.threshold, &level, private_x, rng);
    let response = ResponseMessage { seq: query.seq, bit };
    let sent = response.encode().to_vec();
    stream.write_all(&sent)?;
    stream.flush()?;
    Ok(ClientRound { query, response, sent })
}

/// Connects to a curator and answers a single round about `private_x`.
pub fn user_client<A, R>(addr: A, private_x: f64, rng: &mut R, options: &ClientOptions) -> Result<ClientRound>
where
    A: ToSocketAddrs,
    R: RngCore + ?Sized,
{
    let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
    let mut last_err = None;
    for attempt in 0..options.max_attempts.max(1) {
        if attempt > 0 {
            thread::sleep(options.retry_delay);
        }
        let mut stream = match TcpStream::connect(&addrs[..]) {
            Ok(s) => s,
            Err(e) => {
                last_err = Some(Error::Io(e));
                continue;
            }
        };
        stream.set_read_timeout(Some(options.timeout))?;
        stream.set_write_timeout(Some(options.timeout))?;
        stream.set_nodelay(true)?;
        let mut probe = [0u8; 1];
        // Wait for the query before touching the datum, so a connection that
        // dies here can be retried safely.
        match stream.peek(&mut probe) {
            Ok(1) => return answer_query(&mut stream, private_x, rng),
            Ok(_) => last_err = Some(Error::Protocol("curator closed before sending a query".into())),
            Err(e) => last_err = Some(Error::Io(e)),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Protocol("no connection attempts made".into())))
}
