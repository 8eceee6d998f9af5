//! Demonstration dataset files.
//!
//! Tabletop demonstrations ("CDEM", little-endian):
//!   magic | u32 version | u8 kind | u32 grid | u32 channels | u32 episodes
//!   per episode:
//!     task spec: u8 kind | u32 instr_len | u32 tokens... |
//!                u32 goal_count | per goal (u32 object_id, f32 cx, f32 cy, f32 r) |
//!                u32 horizon
//!     u64 reset_seed | u32 steps
//!     per step: f32 obs[grid*grid*channels] | f32 proprio[7] | f32 action[7]
//!
//! Blockworld token datasets ("CDBW"):
//!   magic | u32 version | u8 mode | u32 n_blocks | u32 examples
//!   per example: u32 prompt_len | tokens | u32 answer_len | tokens

use std::io::{Read, Write};
use std::path::Path;

use crate::codec::{Action, ACTION_DIMS};
use crate::env::manip::{Goal, TaskKind, TaskSpec, OBS_CHANNELS, OBS_GRID};

#[derive(Debug)]
pub enum DatasetError {
    Io(std::io::Error),
    Format(String),
}

impl std::fmt::Display for DatasetError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetError::Io(e) => write!(f, "dataset io error: {e}"),
            DatasetError::Format(m) => write!(f, "dataset format error: {m}"),
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone)]
pub struct DemoStep {
    pub obs: Vec<f32>,
    pub proprio: [f32; ACTION_DIMS],
    pub action: Action,
}

#[derive(Debug, Clone)]
pub struct DemoEpisode {
    pub task: TaskSpec,
    pub reset_seed: u64,
    pub steps: Vec<DemoStep>,
}

#[derive(Debug, Clone, Default)]
pub struct DemoSet {
    pub episodes: Vec<DemoEpisode>,
}

impl DemoSet {
    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn all_actions(&self) -> Vec<[f32; ACTION_DIMS]> {
        self.episodes
            .iter()
            .flat_map(|e| e.steps.iter().map(|s| s.action.to_array()))
            .collect()
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DatasetError::Format("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn task_kind_byte(kind: TaskKind) -> u8 {
    match kind {
        TaskKind::GoalMini => 0,
        TaskKind::LongMini => 1,
    }
}

fn parse_task_kind(b: u8) -> Result<TaskKind> {
    match b {
        0 => Ok(TaskKind::GoalMini),
        1 => Ok(TaskKind::LongMini),
        other => Err(DatasetError::Format(format!("unknown task kind byte {other}"))),
    }
}

pub fn write_demos(path: &Path, set: &DemoSet) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"CDEM");
    put_u32(&mut out, 1);
    let kind_hint = set
        .episodes
        .first()
        .map(|e| task_kind_byte(e.task.kind))
        .unwrap_or(0);
    let mixed = set
        .episodes
        .iter()
        .any(|e| task_kind_byte(e.task.kind) != kind_hint);
    out.push(if mixed { 2 } else { kind_hint });
    put_u32(&mut out, OBS_GRID as u32);
    put_u32(&mut out, OBS_CHANNELS as u32);
    put_u32(&mut out, set.episodes.len() as u32);
    for ep in &set.episodes {
        out.push(task_kind_byte(ep.task.kind));
        put_u32(&mut out, ep.task.instruction.len() as u32);
        for &t in &ep.task.instruction {
            put_u32(&mut out, t);
        }
        put_u32(&mut out, ep.task.goals.len() as u32);
        for g in &ep.task.goals {
            put_u32(&mut out, g.object_id);
            put_f32(&mut out, g.center[0]);
            put_f32(&mut out, g.center[1]);
            put_f32(&mut out, g.radius);
        }
        put_u32(&mut out, ep.task.horizon);
        out.extend_from_slice(&ep.reset_seed.to_le_bytes());
        put_u32(&mut out, ep.steps.len() as u32);
        for s in &ep.steps {
            for &v in &s.obs {
                put_f32(&mut out, v);
            }
            for &v in &s.proprio {
                put_f32(&mut out, v);
            }
            for &v in &s.action.to_array() {
                put_f32(&mut out, v);
            }
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_demos(path: &Path) -> Result<DemoSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { buf: &bytes, pos: 0 };
    if cur.take(4)? != b"CDEM" {
        return Err(DatasetError::Format("bad magic".into()));
    }
    if cur.u32()? != 1 {
        return Err(DatasetError::Format("unsupported version".into()));
    }
    let _kind_hint = cur.u8()?;
    let grid = cur.u32()? as usize;
    let channels = cur.u32()? as usize;
    if grid != OBS_GRID || channels != OBS_CHANNELS {
        return Err(DatasetError::Format(format!(
            "observation geometry {grid}x{grid}x{channels} does not match {OBS_GRID}x{OBS_GRID}x{OBS_CHANNELS}"
        )));
    }
    let n_episodes = cur.u32()? as usize;
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let kind = parse_task_kind(cur.u8()?)?;
        let instr_len = cur.u32()? as usize;
        let mut instruction = Vec::with_capacity(instr_len);
        for _ in 0..instr_len {
            instruction.push(cur.u32()?);
        }
        let goal_count = cur.u32()? as usize;
        let mut goals = Vec::with_capacity(goal_count);
        for _ in 0..goal_count {
            let object_id = cur.u32()?;
            let cx = cur.f32()?;
            let cy = cur.f32()?;
            let radius = cur.f32()?;
            goals.push(Goal { object_id, center: [cx, cy], radius });
        }
        let horizon = cur.u32()?;
        let reset_seed = cur.u64()?;
        let n_steps = cur.u32()? as usize;
        let mut steps = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let mut obs = Vec::with_capacity(grid * grid * channels);
            for _ in 0..grid * grid * channels {
                obs.push(cur.f32()?);
            }
            let mut proprio = [0.0f32; ACTION_DIMS];
            for v in proprio.iter_mut() {
                *v = cur.f32()?;
            }
            let mut arr = [0.0f32; ACTION_DIMS];
            for v in arr.iter_mut() {
                *v = cur.f32()?;
            }
            steps.push(DemoStep { obs, proprio, action: Action::from_array(arr) });
        }
        episodes.push(DemoEpisode {
            task: TaskSpec { kind, instruction, goals, horizon },
            reset_seed,
            steps,
        });
    }
    if !cur.done() {
        return Err(DatasetError::Format("trailing bytes".into()));
    }
    Ok(DemoSet { episodes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BwMode {
    Grounding,
    Planning,
}

#[derive(Debug, Clone)]
pub struct TokenExample {
    pub prompt: Vec<u32>,
    pub answer: Vec<u32>,
}

pub fn write_token_examples(
    path: &Path,
    mode: BwMode,
    n_blocks: usize,
    examples: &[TokenExample],
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"CDBW");
    put_u32(&mut out, 1);
    out.push(match mode {
        BwMode::Grounding => 0,
        BwMode::Planning => 1,
    });
    put_u32(&mut out, n_blocks as u32);
    put_u32(&mut out, examples.len() as u32);
    for ex in examples {
        put_u32(&mut out, ex.prompt.len() as u32);
        for &t in &ex.prompt {
            put_u32(&mut out, t);
        }
        put_u32(&mut out, ex.answer.len() as u32);
        for &t in &ex.answer {
            put_u32(&mut out, t);
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_token_examples(path: &Path) -> Result<(BwMode, usize, Vec<TokenExample>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { buf: &bytes, pos: 0 };
    if cur.take(4)? != b"CDBW" {
        return Err(DatasetError::Format("bad magic".into()));
    }
    if cur.u32()? != 1 {
        return Err(DatasetError::Format("unsupported version".into()));
    }
    let mode = match cur.u8()? {
        0 => BwMode::Grounding,
        1 => BwMode::Planning,
        other => return Err(DatasetError::Format(format!("unknown mode byte {other}"))),
    };
    let n_blocks = cur.u32()? as usize;
    let n = cur.u32()? as usize;
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let pl = cur.u32()? as usize;
        let mut prompt = Vec::with_capacity(pl);
        for _ in 0..pl {
            prompt.push(cur.u32()?);
        }
        let al = cur.u32()? as usize;
        let mut answer = Vec::with_capacity(al);
        for _ in 0..al {
            answer.push(cur.u32()?);
        }
        examples.push(TokenExample { prompt, answer });
    }
    if !cur.done() {
        return Err(DatasetError::Format("trailing bytes".into()));
    }
    Ok((mode, n_blocks, examples))
}
