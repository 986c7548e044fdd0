//! Interactive session service for a human operator.
//!
//! One connection at a time. A reader thread decodes frames and passes them
//! to the tick loop over a channel, so socket I/O never blocks the clock.
//! The tick loop owns the simulation; it never runs faster than the
//! configured period and falls back to a zero command once the held command
//! is older than the stale limit.

use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use verti_core::controllers::Observation;
use verti_core::dataset::{Manifest, Recorder};
use verti_core::sim::Session;
use verti_core::terrain::{CourseSpec, HeightMap};
use verti_core::vehicle::{Action, SimParams, VehicleError, VehicleKind};

use crate::protocol::{self, ClientMsg, ServerMsg, StateMsg};
use crate::trial::Direction;
use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub course: CourseSpec,
    pub vehicle: VehicleKind,
    pub depth_size: usize,
    /// Recordings go to `record_root/trial_NNN`.
    pub record_root: PathBuf,
    pub tick: Duration,
    pub stale_after: Duration,
}

impl ServeConfig {
    pub fn new(course: CourseSpec, vehicle: VehicleKind, record_root: impl Into<PathBuf>) -> Self {
        Self {
            course,
            vehicle,
            depth_size: verti_core::sim::DEFAULT_DEPTH_SIZE,
            record_root: record_root.into(),
            tick: Duration::from_millis(50),
            stale_after: Duration::from_secs(1),
        }
    }
}

/// Running service started by [`spawn`].
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<Result<(), HarnessError>>>,
}

impl ServerHandle {
    /// Ask the service to stop and wait for it. An open connection is
    /// closed at the next tick.
    pub fn shutdown(mut self) -> Result<(), HarnessError> {
        self.stop.store(true, Ordering::SeqCst);
        match self.join.take().map(JoinHandle::join) {
            Some(Ok(r)) => r,
            Some(Err(_)) => Err(HarnessError::Protocol("service thread panicked".into())),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

/// Serve on an already bound listener from a background thread.
pub fn spawn(listener: TcpListener, map: Arc<HeightMap>, cfg: ServeConfig) -> Result<ServerHandle, HarnessError> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let join = thread::spawn(move || run(listener, map, cfg, &flag));
    Ok(ServerHandle { addr, stop, join: Some(join) })
}

/// Serve until `stop` is set.
pub fn run(listener: TcpListener, map: Arc<HeightMap>, cfg: ServeConfig, stop: &AtomicBool) -> Result<(), HarnessError> {
    listener.set_nonblocking(true)?;
    let start = Direction::Forward.start_pose(cfg.course.length());
    let mut sim = Session::new(map, cfg.vehicle.geometry(), SimParams::default(), start, None)?;
    sim.depth_size = cfg.depth_size;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                // a dropped operator is not a service failure
                let _ = Operator::new(&mut sim, &cfg, start).attach(stream, stop);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

enum Inbound {
    Msg(ClientMsg),
    Malformed(String),
    Closed,
}

fn reader(stream: TcpStream, tx: mpsc::Sender<Inbound>) {
    let mut r = BufReader::new(stream);
    loop {
        let item = match protocol::read_frame(&mut r) {
            Ok(Some(bytes)) => match protocol::parse_client(&bytes) {
                Ok(m) => Inbound::Msg(m),
                Err(e) => Inbound::Malformed(e.to_string()),
            },
            Ok(None) | Err(_) => {
                let _ = tx.send(Inbound::Closed);
                return;
            }
        };
        if tx.send(item).is_err() {
            return;
        }
    }
}

/// Per-connection state around the shared session.
struct Operator<'a> {
    sim: &'a mut Session,
    cfg: &'a ServeConfig,
    start: (f64, f64, f64),
    held: Action,
    held_at: Option<Instant>,
    recorder: Option<Recorder>,
    /// What the operator last saw; recorded with the command that follows it.
    shown: Observation,
}

impl<'a> Operator<'a> {
    fn new(sim: &'a mut Session, cfg: &'a ServeConfig, start: (f64, f64, f64)) -> Self {
        let shown = sim.observe(true);
        Self { sim, cfg, start, held: Action::stop(), held_at: None, recorder: None, shown }
    }

    fn attach(mut self, stream: TcpStream, stop: &AtomicBool) -> Result<(), HarnessError> {
        let (tx, rx) = mpsc::channel();
        let read_half = stream.try_clone()?;
        let reader_thread = thread::spawn(move || reader(read_half, tx));
        let mut out = BufWriter::new(stream.try_clone()?);
        let result = self.tick_loop(&rx, &mut out, stop);

        // disconnect or shutdown: command zero and close any recording
        self.held = Action::stop();
        self.held_at = None;
        let closed = self.stop_recording();
        let _ = stream.shutdown(Shutdown::Both);
        let _ = reader_thread.join();
        result.and(closed.map(|_| ()))
    }

    fn tick_loop(&mut self, rx: &Receiver<Inbound>, out: &mut BufWriter<TcpStream>, stop: &AtomicBool) -> Result<(), HarnessError> {
        self.send_state(out)?;
        let mut deadline = Instant::now() + self.cfg.tick;
        while !stop.load(Ordering::SeqCst) {
            let now = Instant::now();
            if now < deadline {
                thread::sleep(deadline - now);
            }
            // late ticks are not made up; the clock never runs ahead of wall time
            deadline = deadline.max(Instant::now() - self.cfg.tick / 2) + self.cfg.tick;

            loop {
                match rx.try_recv() {
                    Ok(Inbound::Msg(m)) => self.handle(m, out)?,
                    Ok(Inbound::Malformed(e)) => protocol::send(out, &ServerMsg::Err { message: e })?,
                    Ok(Inbound::Closed) | Err(TryRecvError::Disconnected) => return Ok(()),
                    Err(TryRecvError::Empty) => break,
                }
            }
            self.tick(out)?;
        }
        Ok(())
    }

    fn command(&self) -> Action {
        match self.held_at {
            Some(at) if at.elapsed() <= self.cfg.stale_after => self.held,
            _ => Action::stop(),
        }
    }

    fn tick(&mut self, out: &mut BufWriter<TcpStream>) -> Result<(), HarnessError> {
        let cmd = self.command();
        if let Some(rec) = self.recorder.as_mut() {
            rec.record_frame(&self.shown, &cmd)?;
        }
        match self.sim.advance(&cmd) {
            Ok(_) => {}
            Err(VehicleError::Boundary { .. }) => {
                self.stop_recording()?;
                self.sim.reset(self.start)?;
                self.held_at = None;
                protocol::send(out, &ServerMsg::Err { message: "left the map; respawned at the start".into() })?;
            }
            Err(e) => return Err(e.into()),
        }
        self.shown = self.sim.observe(true);
        self.send_state(out)
    }

    fn send_state(&mut self, out: &mut BufWriter<TcpStream>) -> Result<(), HarnessError> {
        protocol::send(out, &ServerMsg::State(StateMsg::from_state(self.sim.state(), self.recorder.is_some())))?;
        if let Some(d) = &self.shown.depth {
            protocol::send(out, &ServerMsg::depth(d))?;
        }
        Ok(())
    }

    fn handle(&mut self, msg: ClientMsg, out: &mut BufWriter<TcpStream>) -> Result<(), HarnessError> {
        match msg {
            ClientMsg::Cmd { v, omega, d_front, d_rear, low_gear } => {
                let a = Action { v, omega, d: (d_front, d_rear), s: low_gear };
                if !(v.is_finite() && omega.is_finite()) {
                    return Ok(protocol::send(out, &ServerMsg::Err { message: "cmd: non-finite value".into() })?);
                }
                self.held = a.clamped();
                self.held_at = Some(Instant::now());
            }
            ClientMsg::Reset => {
                // the clock restarts, so an open recording cannot continue
                let closed = self.stop_recording()?;
                self.sim.reset(self.start)?;
                self.held = Action::stop();
                self.held_at = None;
                self.shown = self.sim.observe(true);
                protocol::send(out, &ServerMsg::ack("reset", closed.map(|p| format!("closed {}", p.display()))))?;
                self.send_state(out)?;
            }
            ClientMsg::Record { on: true } => {
                if self.recorder.is_some() {
                    protocol::send(out, &ServerMsg::Err { message: "already recording".into() })?;
                } else {
                    let (dir, id) = next_trial_dir(&self.cfg.record_root)?;
                    let mut manifest = Manifest::new(self.cfg.vehicle, id);
                    manifest.course_seed = Some(self.cfg.course.seed);
                    manifest.course_difficulty = Some(self.cfg.course.difficulty);
                    self.recorder = Some(Recorder::create(&dir, manifest)?);
                    protocol::send(out, &ServerMsg::ack("record", Some(dir.display().to_string())))?;
                }
            }
            ClientMsg::Record { on: false } => match self.stop_recording()? {
                Some(dir) => protocol::send(out, &ServerMsg::ack("record", Some(dir.display().to_string())))?,
                None => protocol::send(out, &ServerMsg::Err { message: "not recording".into() })?,
            },
        }
        Ok(())
    }

    fn stop_recording(&mut self) -> Result<Option<PathBuf>, HarnessError> {
        match self.recorder.take() {
            Some(rec) => {
                let dir = rec.dir().to_path_buf();
                rec.finish()?;
                Ok(Some(dir))
            }
            None => Ok(None),
        }
    }
}

/// First unused `trial_NNN` under `root`.
fn next_trial_dir(root: &Path) -> io::Result<(PathBuf, String)> {
    std::fs::create_dir_all(root)?;
    for n in 0.. {
        let id = format!("trial_{n:03}");
        let dir = root.join(&id);
        if !dir.exists() {
            return Ok((dir, id));
        }
    }
    unreachable!()
}
