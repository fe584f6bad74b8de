//! Trace records consumed by the simulators.
//!
//! Three line-oriented text formats are supported:
//!
//! * memory references (`.din`), Dinero's classic `<label> <hex-address>` layout
//!   with label 0 = data read, 1 = data write, 2 = instruction fetch;
//! * heap events (`.alloc`), `A <id> <size>` and `F <id>`;
//! * register access profiles (`.regprof`), a `registers <N> window <seconds>`
//!   header followed by `<reg-index> <reads> <writes>` lines.
//!
//! Blank lines and lines starting with `#` are ignored by every parser. Files
//! whose name ends in `.gz` are transparently decompressed by [`open_trace`].

use std::collections::{BinaryHeap, HashSet};
use std::cmp::Reverse;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("event {index}: {msg}")]
    Invalid { index: usize, msg: String },
    #[error("invalid generator parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Opens a trace file for streaming, decompressing `.gz` files on the fly.
pub fn open_trace(path: impl AsRef<Path>) -> io::Result<Box<dyn BufRead>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    if gz {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Iterates over the meaningful lines of a stream, yielding `(line_number, text)`.
struct Lines<R> {
    reader: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R) -> Self {
        Self {
            reader,
            line: 0,
            buf: String::new(),
        }
    }

    fn next_line(&mut self) -> Option<Result<(usize, &str), TraceError>> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let t = self.buf.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            return Some(Ok((self.line, self.buf.trim())));
        }
    }
}

// ---------------------------------------------------------------------------
// Memory references

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessKind {
    DataRead,
    DataWrite,
    InstructionFetch,
}

impl AccessKind {
    pub fn label(self) -> u8 {
        match self {
            AccessKind::DataRead => 0,
            AccessKind::DataWrite => 1,
            AccessKind::InstructionFetch => 2,
        }
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(AccessKind::DataRead),
            1 => Some(AccessKind::DataWrite),
            2 => Some(AccessKind::InstructionFetch),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemRef {
    pub kind: AccessKind,
    pub address: u64,
}

impl MemRef {
    pub fn new(kind: AccessKind, address: u64) -> Self {
        Self { kind, address }
    }
}

impl fmt::Display for MemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:x}", self.kind.label(), self.address)
    }
}

fn parse_mem_line(line: usize, text: &str) -> Result<MemRef, TraceError> {
    let mut fields = text.split_whitespace();
    let label = fields.next().ok_or_else(|| parse_err(line, "empty record"))?;
    let addr = fields
        .next()
        .ok_or_else(|| parse_err(line, "missing address"))?;
    let label: u8 = label
        .parse()
        .map_err(|_| parse_err(line, format!("bad label `{label}`")))?;
    let kind = AccessKind::from_label(label)
        .ok_or_else(|| parse_err(line, format!("unknown label {label}")))?;
    let hex = addr
        .strip_prefix("0x")
        .or_else(|| addr.strip_prefix("0X"))
        .unwrap_or(addr);
    let address = u64::from_str_radix(hex, 16)
        .map_err(|_| parse_err(line, format!("bad address `{addr}`")))?;
    Ok(MemRef { kind, address })
}

/// Streaming reader over a `.din` memory trace.
pub struct MemTraceReader<R> {
    lines: Lines<R>,
}

impl<R: BufRead> MemTraceReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: Lines::new(reader),
        }
    }
}

impl<R: BufRead> Iterator for MemTraceReader<R> {
    type Item = Result<MemRef, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        let next = self.lines.next_line()?;
        Some(next.and_then(|(line, text)| parse_mem_line(line, text)))
    }
}

pub fn parse_mem_trace<R: BufRead>(reader: R) -> Result<Vec<MemRef>, TraceError> {
    MemTraceReader::new(reader).collect()
}

pub fn write_mem_trace<W: Write>(mut out: W, trace: &[MemRef]) -> io::Result<()> {
    for r in trace {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Heap events

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum AllocEvent {
    Alloc { id: u64, size: u64 },
    Free { id: u64 },
}

impl AllocEvent {
    pub fn id(&self) -> u64 {
        match *self {
            AllocEvent::Alloc { id, .. } | AllocEvent::Free { id } => id,
        }
    }
}

impl fmt::Display for AllocEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocEvent::Alloc { id, size } => write!(f, "A {id} {size}"),
            AllocEvent::Free { id } => write!(f, "F {id}"),
        }
    }
}

fn parse_alloc_line(line: usize, text: &str) -> Result<AllocEvent, TraceError> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    let num = |s: &str, what: &str| -> Result<u64, TraceError> {
        s.parse()
            .map_err(|_| parse_err(line, format!("bad {what} `{s}`")))
    };
    match fields.as_slice() {
        ["A", id, size] => {
            let size = num(size, "size")?;
            if size == 0 {
                return Err(parse_err(line, "zero-sized allocation"));
            }
            Ok(AllocEvent::Alloc {
                id: num(id, "id")?,
                size,
            })
        }
        ["A", _] => Err(parse_err(line, "missing size")),
        ["F", id] => Ok(AllocEvent::Free { id: num(id, "id")? }),
        _ => Err(parse_err(line, format!("malformed record `{text}`"))),
    }
}

/// Streaming reader over an `.alloc` heap trace.
pub struct AllocTraceReader<R> {
    lines: Lines<R>,
}

impl<R: BufRead> AllocTraceReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: Lines::new(reader),
        }
    }
}

impl<R: BufRead> Iterator for AllocTraceReader<R> {
    type Item = Result<AllocEvent, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        let next = self.lines.next_line()?;
        Some(next.and_then(|(line, text)| parse_alloc_line(line, text)))
    }
}

pub fn parse_alloc_trace<R: BufRead>(reader: R) -> Result<Vec<AllocEvent>, TraceError> {
    AllocTraceReader::new(reader).collect()
}

pub fn write_alloc_trace<W: Write>(mut out: W, trace: &[AllocEvent]) -> io::Result<()> {
    for e in trace {
        writeln!(out, "{e}")?;
    }
    Ok(())
}

/// Checks causal validity: ids are not re-allocated while live, and every free
/// names a live allocation.
pub fn validate_alloc_trace(trace: &[AllocEvent]) -> Result<(), TraceError> {
    let mut live = HashSet::new();
    for (index, ev) in trace.iter().enumerate() {
        match *ev {
            AllocEvent::Alloc { id, size } => {
                if size == 0 {
                    return Err(TraceError::Invalid {
                        index,
                        msg: format!("zero-sized allocation of id {id}"),
                    });
                }
                if !live.insert(id) {
                    return Err(TraceError::Invalid {
                        index,
                        msg: format!("id {id} allocated while still live"),
                    });
                }
            }
            AllocEvent::Free { id } => {
                if !live.remove(&id) {
                    return Err(TraceError::Invalid {
                        index,
                        msg: format!("free of unknown or already freed id {id}"),
                    });
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Register profiles

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterProfile {
    pub reads: Vec<u64>,
    pub writes: Vec<u64>,
    pub window_seconds: f64,
}

impl RegisterProfile {
    pub fn zeros(num_registers: usize, window_seconds: f64) -> Self {
        Self {
            reads: vec![0; num_registers],
            writes: vec![0; num_registers],
            window_seconds,
        }
    }

    pub fn num_registers(&self) -> usize {
        self.reads.len()
    }
}

pub fn parse_register_profile<R: BufRead>(reader: R) -> Result<RegisterProfile, TraceError> {
    let mut lines = Lines::new(reader);
    let (hline, header) = match lines.next_line() {
        Some(r) => r?,
        None => return Err(parse_err(0, "missing `registers <N> window <seconds>` header")),
    };
    let (n, window) = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["registers", n, "window", w] => {
            let n: usize = n
                .parse()
                .map_err(|_| parse_err(hline, format!("bad register count `{n}`")))?;
            let w: f64 = w
                .parse()
                .map_err(|_| parse_err(hline, format!("bad window `{w}`")))?;
            (n, w)
        }
        _ => return Err(parse_err(hline, format!("malformed header `{header}`"))),
    };
    if !(window > 0.0 && window.is_finite()) {
        return Err(parse_err(hline, "window must be positive"));
    }
    let mut profile = RegisterProfile::zeros(n, window);
    let mut seen = vec![false; n];
    while let Some(next) = lines.next_line() {
        let (line, text) = next?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        let [idx, reads, writes] = fields.as_slice() else {
            return Err(parse_err(line, format!("malformed record `{text}`")));
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| parse_err(line, format!("bad register index `{idx}`")))?;
        if idx >= n {
            return Err(parse_err(
                line,
                format!("register index {idx} out of range (N = {n})"),
            ));
        }
        if std::mem::replace(&mut seen[idx], true) {
            return Err(parse_err(line, format!("duplicate register index {idx}")));
        }
        profile.reads[idx] = reads
            .parse()
            .map_err(|_| parse_err(line, format!("bad read count `{reads}`")))?;
        profile.writes[idx] = writes
            .parse()
            .map_err(|_| parse_err(line, format!("bad write count `{writes}`")))?;
    }
    Ok(profile)
}

pub fn write_register_profile<W: Write>(mut out: W, profile: &RegisterProfile) -> io::Result<()> {
    writeln!(
        out,
        "registers {} window {:?}",
        profile.num_registers(),
        profile.window_seconds
    )?;
    for (i, (r, w)) in profile.reads.iter().zip(&profile.writes).enumerate() {
        writeln!(out, "{i} {r} {w}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic generators

/// Parameters for [`gen_synthetic_mem_trace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemTraceSpec {
    pub length: usize,
    /// Fraction of references that are instruction fetches.
    pub instr_share: f64,
    pub working_set_bytes: u64,
    /// Fraction of data references that continue a sequential stride run.
    pub stride_share: f64,
    pub seed: u64,
}

impl Default for MemTraceSpec {
    fn default() -> Self {
        Self {
            length: 10_000,
            instr_share: 0.5,
            working_set_bytes: 1 << 16,
            stride_share: 0.7,
            seed: 1,
        }
    }
}

const WRITE_SHARE: f64 = 0.3;

/// Deterministic synthetic memory trace.
///
/// Instruction fetches walk a loop body of 4-byte instructions placed in the
/// low part of the working set; each completed iteration may jump to a new
/// loop. Data references either advance a strided run or jump uniformly
/// within the working set. Every address is below `working_set_bytes`.
pub fn gen_synthetic_mem_trace(spec: &MemTraceSpec) -> Result<Vec<MemRef>, TraceError> {
    if spec.length == 0 {
        return Err(TraceError::Params("length must be positive".into()));
    }
    for (name, v) in [("instr_share", spec.instr_share), ("stride_share", spec.stride_share)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(TraceError::Params(format!("{name} must lie in [0, 1]")));
        }
    }
    if spec.working_set_bytes < 8 {
        return Err(TraceError::Params("working set must be at least 8 bytes".into()));
    }
    let ws = spec.working_set_bytes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let code_bytes = (ws / 4).max(4) & !3;
    let new_loop = |rng: &mut ChaCha8Rng| {
        let len = 4 * rng.random_range(4..=64u64).min(code_bytes / 4);
        let start = 4 * rng.random_range(0..=(code_bytes - len) / 4);
        (start, len)
    };
    let (mut loop_start, mut loop_len) = new_loop(&mut rng);
    let mut pc = loop_start;
    let strides = [4u64, 8, 16, 32, 64];
    let mut stride = 8u64;
    let mut cursor = rng.random_range(0..ws);

    let mut out = Vec::with_capacity(spec.length);
    for _ in 0..spec.length {
        if rng.random_bool(spec.instr_share) {
            out.push(MemRef::new(AccessKind::InstructionFetch, pc));
            pc += 4;
            if pc >= loop_start + loop_len {
                if rng.random_bool(0.05) {
                    (loop_start, loop_len) = new_loop(&mut rng);
                }
                pc = loop_start;
            }
        } else {
            if rng.random_bool(spec.stride_share) {
                cursor = (cursor + stride) % ws;
            } else {
                cursor = rng.random_range(0..ws);
                stride = strides[rng.random_range(0..strides.len())];
            }
            let kind = if rng.random_bool(WRITE_SHARE) {
                AccessKind::DataWrite
            } else {
                AccessKind::DataRead
            };
            out.push(MemRef::new(kind, cursor));
        }
    }
    Ok(out)
}

/// Parameters for [`gen_synthetic_alloc_trace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocTraceSpec {
    pub events: usize,
    /// `(size, weight)` pairs; weights sum to one.
    pub size_classes: Vec<(u64, f64)>,
    /// Mean allocation lifetime, measured in subsequent allocations.
    pub mean_lifetime: f64,
    pub seed: u64,
}

/// Deterministic synthetic heap trace.
///
/// Each allocation draws its size from the weighted classes and an
/// exponentially distributed lifetime; frees are emitted in death order. The
/// trace never exceeds `events` records and ends with every block freed; an
/// odd budget leaves the last record unused.
pub fn gen_synthetic_alloc_trace(spec: &AllocTraceSpec) -> Result<Vec<AllocEvent>, TraceError> {
    if spec.events == 0 {
        return Err(TraceError::Params("events must be positive".into()));
    }
    if spec.size_classes.is_empty() {
        return Err(TraceError::Params("at least one size class required".into()));
    }
    let total: f64 = spec.size_classes.iter().map(|c| c.1).sum();
    if (total - 1.0).abs() > 1e-9 || spec.size_classes.iter().any(|c| c.1 < 0.0 || c.0 == 0) {
        return Err(TraceError::Params(
            "class weights must be nonnegative and sum to 1, sizes positive".into(),
        ));
    }
    if !(spec.mean_lifetime > 0.0 && spec.mean_lifetime.is_finite()) {
        return Err(TraceError::Params("mean lifetime must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lifetime = Exp::new(1.0 / spec.mean_lifetime)
        .map_err(|e| TraceError::Params(e.to_string()))?;

    // Min-heap of (death time, id); ties resolve by id.
    let mut deaths: BinaryHeap<Reverse<(u64, u64)>> = BinaryHeap::new();
    let mut out = Vec::with_capacity(spec.events);
    let mut now = 0u64;
    let mut next_id = 1u64;
    while out.len() < spec.events {
        let remaining = spec.events - out.len();
        if remaining <= deaths.len() + 1 {
            // A new allocation could no longer be freed in time.
            let Some(Reverse((_, id))) = deaths.pop() else {
                break;
            };
            out.push(AllocEvent::Free { id });
            continue;
        }
        if let Some(&Reverse((t, id))) = deaths.peek() {
            if t <= now {
                deaths.pop();
                out.push(AllocEvent::Free { id });
                continue;
            }
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut size = spec.size_classes[spec.size_classes.len() - 1].0;
        for &(s, w) in &spec.size_classes {
            acc += w;
            if u < acc {
                size = s;
                break;
            }
        }
        let life: f64 = lifetime.sample(&mut rng);
        let id = next_id;
        next_id += 1;
        out.push(AllocEvent::Alloc { id, size });
        deaths.push(Reverse((now + 1 + life.floor() as u64, id)));
        now += 1;
    }
    Ok(out)
}
