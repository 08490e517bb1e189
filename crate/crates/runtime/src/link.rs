//! How the driver talks to an actor: directly in-process, or over one framed
//! TCP connection to an actor thread or child process.

use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ddrl_core::coord::{InferReply, InferRequest};
use ddrl_core::policy::PolicyParameters;
use thiserror::Error;

use crate::actor::{ActorCore, ActorError, ActorSettings, CentralOutput, Payload, RolloutJob, RolloutReport};
use crate::wire::{FramedStream, WireError, WireMessage, SLOT_BEHAVIOR, SLOT_OPPONENT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error(transparent)]
    Actor(#[from] ActorError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("unexpected {0} message from actor")]
    Unexpected(&'static str),
    #[error("actor was killed")]
    Killed,
    #[error("could not start actor: {0}")]
    Spawn(String),
}

/// Driver-side handle on one actor.
pub trait ActorLink: Send {
    fn rollout(&mut self, job: &RolloutJob) -> Result<RolloutReport, LinkError>;
    fn set_opponent(&mut self, opponent: Option<Arc<PolicyParameters>>) -> Result<(), LinkError>;
    fn central_begin(&mut self) -> Result<Vec<InferRequest>, LinkError>;
    fn central_step(&mut self, replies: Vec<InferReply>) -> Result<CentralOutput, LinkError>;
    /// Simulate a crash: every later call fails.
    fn kill(&mut self);
    fn shutdown(&mut self);
}

pub struct LocalLink {
    core: ActorCore,
    killed: bool,
}

impl LocalLink {
    pub fn new(settings: ActorSettings) -> Self {
        LocalLink {
            core: ActorCore::new(settings),
            killed: false,
        }
    }

    fn alive(&self) -> Result<(), LinkError> {
        if self.killed {
            Err(LinkError::Killed)
        } else {
            Ok(())
        }
    }
}

impl ActorLink for LocalLink {
    fn rollout(&mut self, job: &RolloutJob) -> Result<RolloutReport, LinkError> {
        self.alive()?;
        Ok(self.core.rollout(job)?)
    }

    fn set_opponent(&mut self, opponent: Option<Arc<PolicyParameters>>) -> Result<(), LinkError> {
        self.alive()?;
        self.core.set_opponent(opponent);
        Ok(())
    }

    fn central_begin(&mut self) -> Result<Vec<InferRequest>, LinkError> {
        self.alive()?;
        Ok(self.core.central_begin())
    }

    fn central_step(&mut self, replies: Vec<InferReply>) -> Result<CentralOutput, LinkError> {
        self.alive()?;
        Ok(self.core.central_step(&replies)?)
    }

    fn kill(&mut self) {
        self.killed = true;
    }

    fn shutdown(&mut self) {}
}

enum Worker {
    Thread(Option<JoinHandle<Result<(), LinkError>>>),
    Process(Child),
}

/// Connection to an actor served by [`serve_actor`].
pub struct RemoteLink {
    conn: FramedStream<TcpStream>,
    worker: Worker,
    frames_per_rollout: u64,
}

fn wrong(msg: &WireMessage) -> LinkError {
    LinkError::Unexpected(match msg {
        WireMessage::ParamPush { .. } => "ParamPush",
        WireMessage::ParamRequest { .. } => "ParamRequest",
        WireMessage::TrajBatch { .. } => "TrajBatch",
        WireMessage::GradMsg { .. } => "GradMsg",
        WireMessage::InferRequest(_) => "InferRequest",
        WireMessage::InferResponse(_) => "InferResponse",
        WireMessage::MatchResult(_) => "MatchResult",
        WireMessage::Shutdown => "Shutdown",
    })
}

impl RemoteLink {
    fn push(&mut self, slot: u8, params: &PolicyParameters) -> Result<(), LinkError> {
        self.conn.send(&WireMessage::ParamPush {
            slot,
            params: params.clone(),
        })?;
        Ok(())
    }

    fn recv_requests(&mut self) -> Result<Vec<InferRequest>, LinkError> {
        match self.conn.recv()? {
            WireMessage::InferRequest(r) => Ok(r),
            other => Err(wrong(&other)),
        }
    }
}

impl ActorLink for RemoteLink {
    fn rollout(&mut self, job: &RolloutJob) -> Result<RolloutReport, LinkError> {
        if let Some(opp) = &job.opponent {
            self.push(SLOT_OPPONENT, opp)?;
        }
        self.push(SLOT_BEHAVIOR, &job.behavior)?;
        match self.conn.recv()? {
            WireMessage::TrajBatch {
                frames,
                trajectories,
                episodes,
            } => Ok(RolloutReport {
                frames,
                samples: trajectories.iter().map(|t| t.len() as u64).sum(),
                payload: Payload::Trajectories(trajectories),
                episodes,
            }),
            WireMessage::GradMsg {
                frames,
                samples,
                update,
                episodes,
            } => Ok(RolloutReport {
                frames,
                samples,
                payload: Payload::Gradient(update),
                episodes,
            }),
            other => Err(wrong(&other)),
        }
        .inspect(|r| {
            debug_assert_eq!(r.frames, self.frames_per_rollout);
        })
    }

    fn set_opponent(&mut self, opponent: Option<Arc<PolicyParameters>>) -> Result<(), LinkError> {
        if let Some(opp) = opponent {
            self.push(SLOT_OPPONENT, &opp)?;
        }
        Ok(())
    }

    fn central_begin(&mut self) -> Result<Vec<InferRequest>, LinkError> {
        self.conn.send(&WireMessage::InferResponse(Vec::new()))?;
        self.recv_requests()
    }

    fn central_step(&mut self, replies: Vec<InferReply>) -> Result<CentralOutput, LinkError> {
        self.conn.send(&WireMessage::InferResponse(replies))?;
        let (frames, trajectories, episodes) = match self.conn.recv()? {
            WireMessage::TrajBatch {
                frames,
                trajectories,
                episodes,
            } => (frames, trajectories, episodes),
            other => return Err(wrong(&other)),
        };
        let requests = self.recv_requests()?;
        Ok(CentralOutput {
            frames,
            trajectories,
            episodes,
            requests,
        })
    }

    fn kill(&mut self) {
        match &mut self.worker {
            Worker::Process(child) => {
                let _ = child.kill();
                let _ = child.wait();
            }
            Worker::Thread(_) => {
                let _ = self.conn.get_ref().shutdown(Shutdown::Both);
            }
        }
    }

    fn shutdown(&mut self) {
        let _ = self.conn.send(&WireMessage::Shutdown);
        match &mut self.worker {
            Worker::Process(child) => {
                let _ = child.wait();
            }
            Worker::Thread(handle) => {
                if let Some(h) = handle.take() {
                    let _ = h.join();
                }
            }
        }
    }
}

impl Drop for RemoteLink {
    fn drop(&mut self) {
        if let Worker::Process(child) = &mut self.worker {
            if matches!(child.try_wait(), Ok(None)) {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

/// Actor side of the socket protocol; returns on `Shutdown`.
pub fn serve_actor(stream: TcpStream, settings: ActorSettings) -> Result<(), LinkError> {
    stream.set_nodelay(true).map_err(|e| WireError::Io(e.to_string()))?;
    let mut conn = FramedStream::new(stream);
    let mut core = ActorCore::new(settings);
    let mut opponent: Option<Arc<PolicyParameters>> = None;
    loop {
        match conn.recv()? {
            WireMessage::ParamPush { slot: SLOT_OPPONENT, params } => {
                let p = Arc::new(params);
                core.set_opponent(Some(p.clone()));
                opponent = Some(p);
            }
            WireMessage::ParamPush { params, .. } => {
                let job = RolloutJob {
                    behavior: Arc::new(params),
                    opponent: opponent.clone(),
                };
                let r = core.rollout(&job)?;
                let reply = match r.payload {
                    Payload::Trajectories(trajectories) => WireMessage::TrajBatch {
                        frames: r.frames,
                        trajectories,
                        episodes: r.episodes,
                    },
                    Payload::Gradient(update) => WireMessage::GradMsg {
                        frames: r.frames,
                        samples: r.samples,
                        update,
                        episodes: r.episodes,
                    },
                };
                conn.send(&reply)?;
            }
            WireMessage::InferResponse(replies) if replies.is_empty() => {
                conn.send(&WireMessage::InferRequest(core.central_begin()))?;
            }
            WireMessage::InferResponse(replies) => {
                let out = core.central_step(&replies)?;
                conn.send(&WireMessage::TrajBatch {
                    frames: out.frames,
                    trajectories: out.trajectories,
                    episodes: out.episodes,
                })?;
                conn.send(&WireMessage::InferRequest(out.requests))?;
            }
            WireMessage::Shutdown => return Ok(()),
            other => return Err(wrong(&other)),
        }
    }
}

/// How socket actors are started.
#[derive(Clone, Debug)]
pub enum Launch {
    Thread,
    /// Run `<exe> actor --connect ADDR --worker-id I --config PATH`.
    Process { exe: PathBuf, config: PathBuf },
}

const ACCEPT_TIMEOUT: Duration = Duration::from_secs(30);

fn accept_within(listener: &TcpListener, child: Option<&mut Child>) -> Result<TcpStream, LinkError> {
    let spawn_err = |e: std::io::Error| LinkError::Spawn(e.to_string());
    listener.set_nonblocking(true).map_err(spawn_err)?;
    let deadline = Instant::now() + ACCEPT_TIMEOUT;
    let mut child = child;
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false).map_err(spawn_err)?;
                return Ok(s);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if let Some(c) = child.as_deref_mut() {
                    if let Ok(Some(status)) = c.try_wait() {
                        return Err(LinkError::Spawn(format!("actor exited early: {status}")));
                    }
                }
                if Instant::now() > deadline {
                    return Err(LinkError::Spawn("actor did not connect in time".into()));
                }
                std::thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(spawn_err(e)),
        }
    }
}

/// Start one socket actor and connect to it.
pub fn spawn_remote(listener: &TcpListener, settings: ActorSettings, launch: &Launch) -> Result<RemoteLink, LinkError> {
    let addr: SocketAddr = listener.local_addr().map_err(|e| LinkError::Spawn(e.to_string()))?;
    let frames_per_rollout = (settings.unroll_length * settings.copies) as u64;
    let (stream, worker) = match launch {
        Launch::Thread => {
            let handle = std::thread::spawn(move || {
                let s = TcpStream::connect(addr).map_err(|e| LinkError::Spawn(e.to_string()))?;
                serve_actor(s, settings)
            });
            (accept_within(listener, None)?, Worker::Thread(Some(handle)))
        }
        Launch::Process { exe, config } => {
            let mut child = Command::new(exe)
                .arg("actor")
                .arg("--connect")
                .arg(addr.to_string())
                .arg("--worker-id")
                .arg(settings.index.to_string())
                .arg("--config")
                .arg(config)
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .spawn()
                .map_err(|e| LinkError::Spawn(format!("{}: {e}", exe.display())))?;
            let s = accept_within(listener, Some(&mut child))?;
            (s, Worker::Process(child))
        }
    };
    stream.set_nodelay(true).map_err(|e| LinkError::Spawn(e.to_string()))?;
    Ok(RemoteLink {
        conn: FramedStream::new(stream),
        worker,
        frames_per_rollout,
    })
}
