//! Length-prefixed framing between the learner side and remote actors.
//!
//! A frame is `[tag: u8][len: u32 LE][payload: len bytes]`. Parameters use
//! the policy snapshot encoding and gradients the gradient encoding; every
//! float inside trajectories travels as an exact little-endian `f64`.

use std::io::{Read, Write};

use ddrl_core::coord::{InferReply, InferRequest};
use ddrl_core::league::{GenerationRef, MatchResult, Outcome};
use ddrl_core::learn::{Trajectory, Transition};
use ddrl_core::policy::{decode_gradient, deserialize_params, encode_gradient, serialize_params, Arch, GradientUpdate, PolicyParameters};
use ddrl_core::wire::{ByteReader, ByteWriter, Truncated};
use ddrl_core::PlayerId;
use thiserror::Error;

use crate::actor::EpisodeStat;

pub const DEFAULT_MAX_FRAME: usize = 16 * 1024 * 1024;
pub const HEADER_LEN: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("frame of {len} bytes exceeds the {max}-byte limit")]
    FrameTooLarge { len: usize, max: usize },
    #[error("connection: {0}")]
    Io(String),
    #[error("connection closed")]
    Closed,
}

impl From<Truncated> for WireError {
    fn from(t: Truncated) -> Self {
        WireError::Protocol(t.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    ParamPush = 1,
    ParamRequest = 2,
    TrajBatch = 3,
    GradMsg = 4,
    InferRequest = 5,
    InferResponse = 6,
    MatchResult = 7,
    Shutdown = 8,
}

impl Tag {
    pub fn from_byte(b: u8) -> Option<Tag> {
        Some(match b {
            1 => Tag::ParamPush,
            2 => Tag::ParamRequest,
            3 => Tag::TrajBatch,
            4 => Tag::GradMsg,
            5 => Tag::InferRequest,
            6 => Tag::InferResponse,
            7 => Tag::MatchResult,
            8 => Tag::Shutdown,
            _ => return None,
        })
    }
}

/// Which parameter slot a push fills on the actor.
pub const SLOT_BEHAVIOR: u8 = 0;
pub const SLOT_OPPONENT: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    /// Parameters for a slot. A behavior push starts a local-inference rollout.
    ParamPush { slot: u8, params: PolicyParameters },
    ParamRequest { player_id: PlayerId, min_version: u64 },
    TrajBatch {
        frames: u64,
        trajectories: Vec<Trajectory>,
        episodes: Vec<EpisodeStat>,
    },
    GradMsg {
        frames: u64,
        samples: u64,
        update: GradientUpdate,
        episodes: Vec<EpisodeStat>,
    },
    InferRequest(Vec<InferRequest>),
    InferResponse(Vec<InferReply>),
    MatchResult(MatchResult),
    Shutdown,
}

impl WireMessage {
    pub fn tag(&self) -> Tag {
        match self {
            WireMessage::ParamPush { .. } => Tag::ParamPush,
            WireMessage::ParamRequest { .. } => Tag::ParamRequest,
            WireMessage::TrajBatch { .. } => Tag::TrajBatch,
            WireMessage::GradMsg { .. } => Tag::GradMsg,
            WireMessage::InferRequest(_) => Tag::InferRequest,
            WireMessage::InferResponse(_) => Tag::InferResponse,
            WireMessage::MatchResult(_) => Tag::MatchResult,
            WireMessage::Shutdown => Tag::Shutdown,
        }
    }
}

fn put_arch(w: &mut ByteWriter, arch: &Arch) {
    let (a, b, c) = match *arch {
        Arch::Tabular { states, actions } => (states, actions, 0),
        Arch::Linear { inputs, actions } => (inputs, actions, 0),
        Arch::Mlp1 { inputs, hidden, actions } => (inputs, actions, hidden),
    };
    w.u8(arch.tag()).u32(a as u32).u32(b as u32).u32(c as u32);
}

fn get_arch(r: &mut ByteReader) -> Result<Arch, WireError> {
    let tag = r.u8()?;
    let (a, b, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    Ok(match tag {
        1 => Arch::Tabular { states: a, actions: b },
        2 => Arch::Linear { inputs: a, actions: b },
        3 => Arch::Mlp1 {
            inputs: a,
            hidden: c,
            actions: b,
        },
        t => return Err(WireError::Protocol(format!("unknown arch tag {t}"))),
    })
}

fn put_mask(w: &mut ByteWriter, mask: &[bool]) {
    w.u32(mask.len() as u32);
    for &m in mask {
        w.u8(u8::from(m));
    }
}

fn get_mask(r: &mut ByteReader) -> Result<Vec<bool>, WireError> {
    let n = r.u32()? as usize;
    let raw = r.take(n)?;
    raw.iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::Protocol(format!("mask byte {b}"))),
        })
        .collect()
}

fn get_bool(r: &mut ByteReader) -> Result<bool, WireError> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(WireError::Protocol(format!("bool byte {b}"))),
    }
}

/// Guard a declared element count against the bytes actually left.
fn count(r: &mut ByteReader, min_each: usize) -> Result<usize, WireError> {
    let n = r.u32()? as usize;
    if n.saturating_mul(min_each) > r.remaining() {
        return Err(WireError::Protocol(format!("count {n} exceeds payload")));
    }
    Ok(n)
}

fn put_transition(w: &mut ByteWriter, t: &Transition) {
    w.f64s(&t.obs);
    put_mask(w, &t.mask);
    w.u32(t.action as u32).f64(t.reward).f64s(&t.next_obs).u8(u8::from(t.done));
    w.f64(t.behavior_log_prob)
        .f64(t.value_estimate)
        .u64(t.param_version)
        .u32(t.agent_id as u32)
        .str(t.player_id.as_str())
        .u64(t.episode_id)
        .u32(t.episode_step);
}

fn get_transition(r: &mut ByteReader) -> Result<Transition, WireError> {
    Ok(Transition {
        obs: r.f64s()?,
        mask: get_mask(r)?,
        action: r.u32()? as usize,
        reward: r.f64()?,
        next_obs: r.f64s()?,
        done: get_bool(r)?,
        behavior_log_prob: r.f64()?,
        value_estimate: r.f64()?,
        param_version: r.u64()?,
        agent_id: r.u32()? as usize,
        player_id: PlayerId(r.string()?),
        episode_id: r.u64()?,
        episode_step: r.u32()?,
    })
}

fn put_episodes(w: &mut ByteWriter, eps: &[EpisodeStat]) {
    w.u32(eps.len() as u32);
    for e in eps {
        w.f64(e.ret).f64(e.discounted).u32(e.length);
    }
}

fn get_episodes(r: &mut ByteReader) -> Result<Vec<EpisodeStat>, WireError> {
    let n = count(r, 20)?;
    (0..n)
        .map(|_| {
            Ok(EpisodeStat {
                ret: r.f64()?,
                discounted: r.f64()?,
                length: r.u32()?,
            })
        })
        .collect()
}

fn put_gen(w: &mut ByteWriter, g: &GenerationRef) {
    w.str(g.player_id.as_str()).u32(g.generation);
}

fn get_gen(r: &mut ByteReader) -> Result<GenerationRef, WireError> {
    Ok(GenerationRef::new(PlayerId(r.string()?), r.u32()?))
}

fn payload(msg: &WireMessage) -> Vec<u8> {
    let mut w = ByteWriter::new();
    match msg {
        WireMessage::ParamPush { slot, params } => {
            w.u8(*slot);
            put_arch(&mut w, &params.arch);
            w.bytes(&serialize_params(params));
        }
        WireMessage::ParamRequest { player_id, min_version } => {
            w.str(player_id.as_str()).u64(*min_version);
        }
        WireMessage::TrajBatch {
            frames,
            trajectories,
            episodes,
        } => {
            w.u64(*frames).u32(trajectories.len() as u32);
            for t in trajectories {
                w.f64(t.bootstrap_value).u32(t.transitions.len() as u32);
                for s in &t.transitions {
                    put_transition(&mut w, s);
                }
            }
            put_episodes(&mut w, episodes);
        }
        WireMessage::GradMsg {
            frames,
            samples,
            update,
            episodes,
        } => {
            w.u64(*frames).u64(*samples).bytes(&encode_gradient(update));
            put_episodes(&mut w, episodes);
        }
        WireMessage::InferRequest(reqs) => {
            w.u32(reqs.len() as u32);
            for q in reqs {
                w.str(q.player_id.as_str()).f64s(&q.observation);
                put_mask(&mut w, &q.mask);
                w.u64(q.rng_seed);
            }
        }
        WireMessage::InferResponse(replies) => {
            w.u32(replies.len() as u32);
            for a in replies {
                w.u32(a.action as u32).f64(a.log_prob).f64(a.value).u64(a.version);
            }
        }
        WireMessage::MatchResult(m) => {
            w.u64(m.id);
            put_gen(&mut w, &m.side_a);
            put_gen(&mut w, &m.side_b);
            w.u8(match m.outcome {
                Outcome::AWin => 0,
                Outcome::BWin => 1,
                Outcome::Draw => 2,
            })
            .u32(m.game_count);
        }
        WireMessage::Shutdown => {}
    }
    w.finish()
}

fn parse_payload(tag: Tag, bytes: &[u8]) -> Result<WireMessage, WireError> {
    let mut r = ByteReader::new(bytes);
    let r = &mut r;
    let msg = match tag {
        Tag::ParamPush => {
            let slot = r.u8()?;
            let arch = get_arch(r)?;
            let raw = r.bytes()?;
            let params = deserialize_params(raw, &arch).map_err(|e| WireError::Protocol(e.to_string()))?;
            WireMessage::ParamPush { slot, params }
        }
        Tag::ParamRequest => WireMessage::ParamRequest {
            player_id: PlayerId(r.string()?),
            min_version: r.u64()?,
        },
        Tag::TrajBatch => {
            let frames = r.u64()?;
            let n = count(r, 12)?;
            let mut trajectories = Vec::with_capacity(n);
            for _ in 0..n {
                let bootstrap = r.f64()?;
                let len = count(r, 60)?;
                let steps = (0..len).map(|_| get_transition(r)).collect::<Result<Vec<_>, _>>()?;
                trajectories.push(Trajectory::new(steps, bootstrap).map_err(|e| WireError::Protocol(e.to_string()))?);
            }
            let episodes = get_episodes(r)?;
            WireMessage::TrajBatch {
                frames,
                trajectories,
                episodes,
            }
        }
        Tag::GradMsg => {
            let frames = r.u64()?;
            let samples = r.u64()?;
            let update = decode_gradient(r.bytes()?).map_err(|e| WireError::Protocol(e.to_string()))?;
            let episodes = get_episodes(r)?;
            WireMessage::GradMsg {
                frames,
                samples,
                update,
                episodes,
            }
        }
        Tag::InferRequest => {
            let n = count(r, 20)?;
            let reqs = (0..n)
                .map(|_| {
                    Ok(InferRequest {
                        player_id: PlayerId(r.string()?),
                        observation: r.f64s()?,
                        mask: get_mask(r)?,
                        rng_seed: r.u64()?,
                    })
                })
                .collect::<Result<Vec<_>, WireError>>()?;
            WireMessage::InferRequest(reqs)
        }
        Tag::InferResponse => {
            let n = count(r, 28)?;
            let replies = (0..n)
                .map(|_| {
                    Ok(InferReply {
                        action: r.u32()? as usize,
                        log_prob: r.f64()?,
                        value: r.f64()?,
                        version: r.u64()?,
                    })
                })
                .collect::<Result<Vec<_>, WireError>>()?;
            WireMessage::InferResponse(replies)
        }
        Tag::MatchResult => {
            let id = r.u64()?;
            let side_a = get_gen(r)?;
            let side_b = get_gen(r)?;
            let outcome = match r.u8()? {
                0 => Outcome::AWin,
                1 => Outcome::BWin,
                2 => Outcome::Draw,
                b => return Err(WireError::Protocol(format!("outcome byte {b}"))),
            };
            let mut m = MatchResult::new(side_a, side_b, outcome, r.u32()?);
            m.id = id;
            WireMessage::MatchResult(m)
        }
        Tag::Shutdown => WireMessage::Shutdown,
    };
    if !r.is_empty() {
        return Err(WireError::Protocol(format!("{} trailing payload bytes", r.remaining())));
    }
    Ok(msg)
}

/// One complete frame, refusing payloads over `max_frame` bytes.
pub fn encode(msg: &WireMessage, max_frame: usize) -> Result<Vec<u8>, WireError> {
    let body = payload(msg);
    if body.len() > max_frame || body.len() > u32::MAX as usize {
        return Err(WireError::FrameTooLarge {
            len: body.len(),
            max: max_frame,
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.push(msg.tag() as u8);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Validate a header: known tag and length within the bound.
fn check_header(header: &[u8], max_frame: usize) -> Result<(Tag, usize), WireError> {
    let tag = Tag::from_byte(header[0]).ok_or_else(|| WireError::Protocol(format!("unknown tag {}", header[0])))?;
    let len = u32::from_le_bytes(header[1..5].try_into().expect("four bytes")) as usize;
    if len > max_frame {
        return Err(WireError::FrameTooLarge { len, max: max_frame });
    }
    Ok((tag, len))
}

/// Decode exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8], max_frame: usize) -> Result<WireMessage, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Protocol("frame shorter than its header".into()));
    }
    let (tag, len) = check_header(&bytes[..HEADER_LEN], max_frame)?;
    if bytes.len() != HEADER_LEN + len {
        return Err(WireError::Protocol(format!(
            "header declares {len} payload bytes, frame carries {}",
            bytes.len() - HEADER_LEN
        )));
    }
    parse_payload(tag, &bytes[HEADER_LEN..])
}

/// Incremental decoder for a byte stream of concatenated frames.
#[derive(Debug)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    max_frame: usize,
}

impl FrameDecoder {
    pub fn new(max_frame: usize) -> Self {
        FrameDecoder { buf: Vec::new(), max_frame }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet part of a returned message.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete message, if one has fully arrived. Header errors are
    /// reported as soon as the header is complete.
    pub fn next_message(&mut self) -> Result<Option<WireMessage>, WireError> {
        if self.buf.len() < HEADER_LEN {
            return Ok(None);
        }
        let (tag, len) = check_header(&self.buf[..HEADER_LEN], self.max_frame)?;
        if self.buf.len() < HEADER_LEN + len {
            return Ok(None);
        }
        let msg = parse_payload(tag, &self.buf[HEADER_LEN..HEADER_LEN + len]);
        self.buf.drain(..HEADER_LEN + len);
        msg.map(Some)
    }
}

/// Blocking framed connection over any byte stream.
pub struct FramedStream<S> {
    stream: S,
    decoder: FrameDecoder,
    max_frame: usize,
}

impl<S: Read + Write> FramedStream<S> {
    pub fn new(stream: S) -> Self {
        Self::with_limit(stream, DEFAULT_MAX_FRAME)
    }

    pub fn with_limit(stream: S, max_frame: usize) -> Self {
        FramedStream {
            stream,
            decoder: FrameDecoder::new(max_frame),
            max_frame,
        }
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }

    pub fn send(&mut self, msg: &WireMessage) -> Result<(), WireError> {
        let frame = encode(msg, self.max_frame)?;
        self.stream.write_all(&frame).map_err(|e| WireError::Io(e.to_string()))?;
        self.stream.flush().map_err(|e| WireError::Io(e.to_string()))
    }

    pub fn recv(&mut self) -> Result<WireMessage, WireError> {
        let mut chunk = [0u8; 64 * 1024];
        loop {
            if let Some(m) = self.decoder.next_message()? {
                return Ok(m);
            }
            let n = self.stream.read(&mut chunk).map_err(|e| WireError::Io(e.to_string()))?;
            if n == 0 {
                return Err(WireError::Closed);
            }
            self.decoder.push(&chunk[..n]);
        }
    }
}
