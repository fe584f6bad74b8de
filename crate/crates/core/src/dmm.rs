//! Heap simulator for parameterized dynamic memory managers.
//!
//! A [`DmmSpec`] splits request sizes into regions, each served by one
//! policy. Replaying an allocation trace through a spec yields the operation
//! cost and peak heap footprint used to rank allocators.
//!
//! Heap model:
//!
//! * one address space `[0, brk)` tiled by blocks; every block belongs to the
//!   region that created it and never migrates;
//! * headers live inside blocks, so a block serves a request when
//!   `block size >= request + header`;
//! * growth appends one fresh block at `brk`. Segregated lists and
//!   non-splitting policies grow by exactly the block needed; splitting free
//!   lists grow by the need rounded up to the quantum; splitting buddies grow
//!   by the smallest class covering both need and quantum;
//! * segregated and buddy class lists are LIFO stacks.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traces::AllocEvent;

#[derive(Debug, Error, PartialEq)]
pub enum DmmError {
    #[error("invalid DMM spec: {0}")]
    Spec(String),
    #[error("event {index}: {msg}")]
    Replay { index: usize, msg: String },
    #[error("heap invariant violated after event {index}: {msg}")]
    Invariant { index: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Fit {
    First,
    Best,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Order {
    Fifo,
    Lifo,
    Addr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Policy {
    /// One list per block size; blocks are `request + header` rounded up to
    /// `granularity`.
    SegregatedExact { granularity: u64 },
    /// Power-of-two classes from 16 bytes.
    SegregatedPow2,
    BuddyBinary { coalesce: bool, split: bool },
    BuddyFib { coalesce: bool, split: bool },
    FreeList {
        fit: Fit,
        order: Order,
        coalesce: bool,
        split: bool,
    },
}

impl Policy {
    pub fn splits(&self) -> bool {
        match *self {
            Policy::BuddyBinary { split, .. }
            | Policy::BuddyFib { split, .. }
            | Policy::FreeList { split, .. } => split,
            _ => false,
        }
    }

    pub fn coalesces(&self) -> bool {
        match *self {
            Policy::BuddyBinary { coalesce, .. }
            | Policy::BuddyFib { coalesce, .. }
            | Policy::FreeList { coalesce, .. } => coalesce,
            _ => false,
        }
    }
}

/// Requests of size `lo <= s < hi` (no upper bound when `hi` is `None`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub lo: u64,
    pub hi: Option<u64>,
    pub policy: Policy,
}

impl Region {
    pub fn contains(&self, size: u64) -> bool {
        size >= self.lo && self.hi.is_none_or(|h| size < h)
    }
}

pub const DEFAULT_HEADER: u64 = 8;
pub const DEFAULT_QUANTUM: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DmmSpec {
    pub regions: Vec<Region>,
    #[serde(default = "default_header")]
    pub header_bytes: u64,
    #[serde(default = "default_quantum")]
    pub heap_growth_quantum: u64,
}

fn default_header() -> u64 {
    DEFAULT_HEADER
}

fn default_quantum() -> u64 {
    DEFAULT_QUANTUM
}

impl DmmSpec {
    pub fn single(policy: Policy) -> Self {
        Self {
            regions: vec![Region {
                lo: 1,
                hi: None,
                policy,
            }],
            header_bytes: DEFAULT_HEADER,
            heap_growth_quantum: DEFAULT_QUANTUM,
        }
    }

    /// Regions must be contiguous from 1 with an open-ended last region.
    pub fn validate(&self) -> Result<(), DmmError> {
        let err = |m: String| Err(DmmError::Spec(m));
        if self.regions.is_empty() {
            return err("no regions".into());
        }
        if self.heap_growth_quantum == 0 {
            return err("heap growth quantum must be positive".into());
        }
        let mut expected_lo = 1;
        for (i, r) in self.regions.iter().enumerate() {
            if r.lo != expected_lo {
                return err(format!("region {i} starts at {} instead of {expected_lo}", r.lo));
            }
            match r.hi {
                Some(h) if h <= r.lo => return err(format!("region {i} is empty")),
                Some(h) if i + 1 == self.regions.len() => {
                    return err(format!("last region ends at {h} instead of being open"))
                }
                None if i + 1 != self.regions.len() => {
                    return err(format!("region {i} is open-ended but not last"))
                }
                Some(h) => expected_lo = h,
                None => {}
            }
            if let Policy::SegregatedExact { granularity: 0 } = r.policy {
                return err(format!("region {i} has zero granularity"));
            }
        }
        Ok(())
    }

    pub fn region_of(&self, size: u64) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(size))
    }
}

/// The five general-purpose allocators used as references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Reference {
    Kng,
    Lea,
    Fib,
    S10,
    Exa,
}

impl Reference {
    pub const ALL: [Reference; 5] = [
        Reference::Kng,
        Reference::Lea,
        Reference::Fib,
        Reference::S10,
        Reference::Exa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Reference::Kng => "KNG",
            Reference::Lea => "LEA",
            Reference::Fib => "FIB",
            Reference::S10 => "S10",
            Reference::Exa => "EXA",
        }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Reference {
    type Err = DmmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Reference::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| DmmError::Spec(format!("unknown reference allocator `{s}`")))
    }
}

pub fn build_reference(kind: Reference) -> DmmSpec {
    match kind {
        Reference::Kng => DmmSpec::single(Policy::SegregatedPow2),
        Reference::Lea => DmmSpec {
            regions: vec![
                Region {
                    lo: 1,
                    hi: Some(512),
                    policy: Policy::SegregatedExact { granularity: 8 },
                },
                Region {
                    lo: 512,
                    hi: None,
                    policy: Policy::FreeList {
                        fit: Fit::Best,
                        order: Order::Addr,
                        coalesce: true,
                        split: true,
                    },
                },
            ],
            header_bytes: DEFAULT_HEADER,
            heap_growth_quantum: DEFAULT_QUANTUM,
        },
        Reference::Fib => DmmSpec::single(Policy::BuddyFib {
            coalesce: true,
            split: true,
        }),
        Reference::S10 => {
            let mut bounds = vec![1u64];
            bounds.extend((0..9).map(|k| 16u64 << k));
            let regions = bounds
                .iter()
                .enumerate()
                .map(|(i, &lo)| Region {
                    lo,
                    hi: bounds.get(i + 1).copied(),
                    policy: Policy::FreeList {
                        fit: Fit::First,
                        order: Order::Fifo,
                        coalesce: false,
                        split: false,
                    },
                })
                .collect();
            DmmSpec {
                regions,
                header_bytes: DEFAULT_HEADER,
                heap_growth_quantum: DEFAULT_QUANTUM,
            }
        }
        Reference::Exa => DmmSpec::single(Policy::SegregatedExact { granularity: 1 }),
    }
}

/// Operation cost weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Per free-structure node inspected while searching for a block.
    pub inspect: u64,
    /// Per allocation or free.
    pub base: u64,
    pub split: u64,
    pub coalesce: u64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            inspect: 1,
            base: 1,
            split: 2,
            coalesce: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmmMetrics {
    /// Weighted operation count.
    pub sim_time: u64,
    /// Largest heap extent reached, bytes.
    pub peak_memory: u64,
    /// Free-structure nodes inspected.
    pub accesses: u64,
    pub allocs: u64,
    pub frees: u64,
    pub splits: u64,
    pub coalesces: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentationReport {
    /// Unused payload bytes inside live blocks when the heap first reached
    /// its peak.
    pub internal_bytes: u64,
    /// Free bytes on the heap when the peak-setting growth happened; by
    /// construction none of them could serve that request.
    pub external_bytes: u64,
    pub peak: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayOptions {
    pub costs: CostWeights,
    /// Check heap tiling and byte conservation after every event.
    pub debug: bool,
    /// Record a CSV heap-event log.
    pub log: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub metrics: DmmMetrics,
    pub fragmentation: FragmentationReport,
    pub log: Option<String>,
}

#[derive(Debug, Clone)]
struct Block {
    size: u64,
    region: usize,
    /// `(id, requested bytes)` while live.
    live: Option<(u64, u64)>,
    /// Buddy class index.
    class: usize,
    /// Buddy split history, innermost last: `(parent addr, parent class)`.
    lineage: Vec<(u64, usize)>,
}

enum RegionState {
    Segregated { lists: HashMap<u64, Vec<u64>> },
    Buddy { fib: bool, lists: Vec<Vec<u64>> },
    List { items: Vec<u64> },
}

const MIN_CLASS: u64 = 16;
const ALIGN: u64 = 8;
const MIN_PAYLOAD: u64 = 8;

/// Buddy class sizes: 16 * 2^k, or 16, 32, 48, 80, ... (each the sum of the
/// previous two).
pub fn buddy_class_size(k: usize, fib: bool) -> u64 {
    if !fib {
        return MIN_CLASS.saturating_mul(1u64.checked_shl(k as u32).unwrap_or(u64::MAX));
    }
    let (mut a, mut b) = (MIN_CLASS, 2 * MIN_CLASS);
    for _ in 0..k {
        (a, b) = (b, a.saturating_add(b));
    }
    a
}

/// Smallest class index whose size is at least `bytes`.
pub fn buddy_class_for(bytes: u64, fib: bool) -> usize {
    (0..).find(|&k| buddy_class_size(k, fib) >= bytes).expect("classes are unbounded")
}

/// Child classes of a split: `(lower, upper)`.
fn buddy_children(k: usize, fib: bool) -> Option<(usize, usize)> {
    match (fib, k) {
        (false, 0) | (true, 0 | 1) => None,
        (false, k) => Some((k - 1, k - 1)),
        (true, k) => Some((k - 1, k - 2)),
    }
}

fn round_up(x: u64, to: u64) -> u64 {
    x.div_ceil(to) * to
}

/// Block size a free list carves for a request.
pub fn free_list_need(request: u64, header: u64) -> u64 {
    header + round_up(request.max(MIN_PAYLOAD), ALIGN)
}

/// Class size a segregated policy uses for a request.
pub fn segregated_class(policy: &Policy, request: u64, header: u64) -> u64 {
    match *policy {
        Policy::SegregatedExact { granularity } => round_up(request + header, granularity),
        _ => (request + header).next_power_of_two().max(MIN_CLASS),
    }
}

struct Heap<'s> {
    spec: &'s DmmSpec,
    costs: CostWeights,
    blocks: BTreeMap<u64, Block>,
    states: Vec<RegionState>,
    live: HashMap<u64, u64>,
    brk: u64,
    m: DmmMetrics,
    frag: FragmentationReport,
    free_bytes: u64,
    internal_bytes: u64,
    live_payload: u64,
    log: Option<String>,
}

impl<'s> Heap<'s> {
    fn new(spec: &'s DmmSpec, opts: &ReplayOptions) -> Self {
        let states = spec
            .regions
            .iter()
            .map(|r| match r.policy {
                Policy::SegregatedExact { .. } | Policy::SegregatedPow2 => RegionState::Segregated {
                    lists: HashMap::new(),
                },
                Policy::BuddyBinary { .. } => RegionState::Buddy {
                    fib: false,
                    lists: Vec::new(),
                },
                Policy::BuddyFib { .. } => RegionState::Buddy {
                    fib: true,
                    lists: Vec::new(),
                },
                Policy::FreeList { .. } => RegionState::List { items: Vec::new() },
            })
            .collect();
        Self {
            spec,
            costs: opts.costs,
            blocks: BTreeMap::new(),
            states,
            live: HashMap::new(),
            brk: 0,
            m: DmmMetrics::default(),
            frag: FragmentationReport::default(),
            free_bytes: 0,
            internal_bytes: 0,
            live_payload: 0,
            log: opts.log.then(|| String::from("event,op,id,addr,size,brk\n")),
        }
    }

    fn note(&mut self, index: usize, op: &str, id: u64, addr: u64, size: u64) {
        if let Some(log) = self.log.as_mut() {
            let _ = writeln!(log, "{index},{op},{id},{addr},{size},{}", self.brk);
        }
    }

    fn inspect(&mut self, n: u64) {
        self.m.accesses += n;
    }

    /// Appends a fresh free block; records the fragmentation snapshot when
    /// this growth sets a new peak.
    fn grow(&mut self, region: usize, size: u64, class: usize) -> u64 {
        let addr = self.brk;
        if addr + size > self.m.peak_memory {
            self.frag.external_bytes = self.free_bytes;
            self.frag.peak = addr + size;
            self.m.peak_memory = addr + size;
        }
        self.brk += size;
        self.blocks.insert(
            addr,
            Block {
                size,
                region,
                live: None,
                class,
                lineage: Vec::new(),
            },
        );
        self.free_bytes += size;
        addr
    }

    fn mark_live(&mut self, addr: u64, id: u64, request: u64) {
        let header = self.spec.header_bytes;
        let b = self.blocks.get_mut(&addr).expect("block exists");
        b.live = Some((id, request));
        self.free_bytes -= b.size;
        self.internal_bytes += b.size - request - header;
        self.live_payload += request;
        self.live.insert(id, addr);
    }

    fn alloc(&mut self, index: usize, id: u64, request: u64) -> Result<(), DmmError> {
        let region = self.spec.region_of(request).ok_or_else(|| DmmError::Replay {
            index,
            msg: format!("no region serves size {request}"),
        })?;
        let policy = self.spec.regions[region].policy;
        let header = self.spec.header_bytes;
        let peak_before = self.m.peak_memory;
        let addr = match policy {
            Policy::SegregatedExact { .. } | Policy::SegregatedPow2 => {
                self.alloc_segregated(region, segregated_class(&policy, request, header))
            }
            Policy::BuddyBinary { split, .. } | Policy::BuddyFib { split, .. } => {
                self.alloc_buddy(region, request + header, split)
            }
            Policy::FreeList { fit, order, split, .. } => {
                self.alloc_list(region, free_list_need(request, header), fit, order, split)
            }
        };
        self.mark_live(addr, id, request);
        if self.m.peak_memory > peak_before {
            self.frag.internal_bytes = self.internal_bytes;
        }
        self.m.allocs += 1;
        self.m.sim_time += self.costs.base;
        let size = self.blocks[&addr].size;
        self.note(index, "alloc", id, addr, size);
        Ok(())
    }

    fn alloc_segregated(&mut self, region: usize, class: u64) -> u64 {
        let RegionState::Segregated { lists } = &mut self.states[region] else {
            unreachable!()
        };
        if let Some(addr) = lists.get_mut(&class).and_then(|l| l.pop()) {
            self.inspect(1);
            return addr;
        }
        self.grow(region, class, 0)
    }

    fn alloc_buddy(&mut self, region: usize, need: u64, split: bool) -> u64 {
        let RegionState::Buddy { fib, lists } = &mut self.states[region] else {
            unreachable!()
        };
        let fib = *fib;
        let want = buddy_class_for(need, fib);
        let found = if split {
            (want..lists.len()).find(|&k| !lists[k].is_empty())
        } else {
            (want < lists.len() && !lists[want].is_empty()).then_some(want)
        };
        let mut addr = match found {
            Some(k) => {
                let a = lists[k].pop().expect("nonempty list");
                self.inspect(1);
                a
            }
            None => {
                let k = if split {
                    buddy_class_for(need.max(self.spec.heap_growth_quantum), fib)
                } else {
                    want
                };
                self.grow(region, buddy_class_size(k, fib), k)
            }
        };
        if split {
            addr = self.split_buddy(region, addr, need, fib);
        }
        addr
    }

    /// Splits a free buddy down to the smallest class still holding `need`,
    /// returning it to the free lists all halves not taken.
    fn split_buddy(&mut self, region: usize, mut addr: u64, need: u64, fib: bool) -> u64 {
        loop {
            let k = self.blocks[&addr].class;
            let Some((lo, up)) = buddy_children(k, fib) else {
                return addr;
            };
            let (lo_size, up_size) = (buddy_class_size(lo, fib), buddy_class_size(up, fib));
            let (take_upper, keep_class) = if up_size >= need && up_size < lo_size {
                (true, up)
            } else if lo_size >= need {
                (false, lo)
            } else {
                return addr;
            };
            let parent = self.blocks.remove(&addr).expect("block exists");
            let mut lineage = parent.lineage;
            lineage.push((addr, k));
            let upper_addr = addr + lo_size;
            self.blocks.insert(
                addr,
                Block {
                    size: lo_size,
                    region,
                    live: None,
                    class: lo,
                    lineage: lineage.clone(),
                },
            );
            self.blocks.insert(
                upper_addr,
                Block {
                    size: up_size,
                    region,
                    live: None,
                    class: up,
                    lineage,
                },
            );
            self.m.splits += 1;
            self.m.sim_time += self.costs.split;
            let (keep, spare, spare_class) = if take_upper {
                (upper_addr, addr, lo)
            } else {
                (addr, upper_addr, up)
            };
            debug_assert_eq!(self.blocks[&keep].class, keep_class);
            self.push_buddy(region, spare, spare_class);
            addr = keep;
        }
    }

    fn push_buddy(&mut self, region: usize, addr: u64, class: usize) {
        let RegionState::Buddy { lists, .. } = &mut self.states[region] else {
            unreachable!()
        };
        if lists.len() <= class {
            lists.resize_with(class + 1, Vec::new);
        }
        lists[class].push(addr);
    }

    fn alloc_list(&mut self, region: usize, need: u64, fit: Fit, order: Order, split: bool) -> u64 {
        let RegionState::List { items } = &self.states[region] else {
            unreachable!()
        };
        let n = items.len();
        let at = |i: usize| match order {
            Order::Lifo => items[n - 1 - i],
            Order::Fifo | Order::Addr => items[i],
        };
        let mut inspected = 0u64;
        let mut chosen: Option<(usize, u64)> = None;
        for i in 0..n {
            inspected += 1;
            let a = at(i);
            let s = self.blocks[&a].size;
            if s < need {
                continue;
            }
            match fit {
                Fit::First => {
                    chosen = Some((i, s));
                    break;
                }
                Fit::Best => {
                    if chosen.is_none_or(|(_, best)| s < best) {
                        chosen = Some((i, s));
                    }
                    if s == need {
                        break;
                    }
                }
            }
        }
        let chosen = chosen.map(|(i, _)| at(i));
        self.inspect(inspected);
        let addr = match chosen {
            Some(a) => {
                self.list_remove(region, a);
                a
            }
            None => {
                let g = if split {
                    round_up(need, self.spec.heap_growth_quantum)
                } else {
                    need
                };
                self.grow(region, g, 0)
            }
        };
        if split {
            let size = self.blocks[&addr].size;
            if size - need >= self.spec.header_bytes + MIN_PAYLOAD {
                self.blocks.get_mut(&addr).expect("block exists").size = need;
                let rest = addr + need;
                self.blocks.insert(
                    rest,
                    Block {
                        size: size - need,
                        region,
                        live: None,
                        class: 0,
                        lineage: Vec::new(),
                    },
                );
                self.list_insert(region, rest, order);
                self.m.splits += 1;
                self.m.sim_time += self.costs.split;
            }
        }
        addr
    }

    fn list_remove(&mut self, region: usize, addr: u64) {
        let RegionState::List { items } = &mut self.states[region] else {
            unreachable!()
        };
        let pos = items.iter().position(|&a| a == addr).expect("block is listed");
        items.remove(pos);
    }

    fn list_insert(&mut self, region: usize, addr: u64, order: Order) {
        let RegionState::List { items } = &mut self.states[region] else {
            unreachable!()
        };
        match order {
            Order::Fifo | Order::Lifo => items.push(addr),
            Order::Addr => {
                let pos = items.partition_point(|&a| a < addr);
                items.insert(pos, addr);
            }
        }
    }

    fn free(&mut self, index: usize, id: u64) -> Result<(), DmmError> {
        let addr = self.live.remove(&id).ok_or_else(|| DmmError::Replay {
            index,
            msg: format!("free of unknown or already freed id {id}"),
        })?;
        let header = self.spec.header_bytes;
        let b = self.blocks.get_mut(&addr).expect("live block exists");
        let (_, request) = b.live.take().expect("block is live");
        let (size, region) = (b.size, b.region);
        self.free_bytes += size;
        self.internal_bytes -= size - request - header;
        self.live_payload -= request;
        self.m.frees += 1;
        self.m.sim_time += self.costs.base;
        self.note(index, "free", id, addr, size);
        match self.spec.regions[region].policy {
            Policy::SegregatedExact { .. } | Policy::SegregatedPow2 => {
                let RegionState::Segregated { lists } = &mut self.states[region] else {
                    unreachable!()
                };
                lists.entry(size).or_default().push(addr);
            }
            Policy::BuddyBinary { coalesce, .. } | Policy::BuddyFib { coalesce, .. } => {
                self.free_buddy(region, addr, coalesce);
            }
            Policy::FreeList {
                order, coalesce, ..
            } => self.free_list(region, addr, order, coalesce),
        }
        Ok(())
    }

    fn coalesced(&mut self) {
        self.m.coalesces += 1;
        self.m.sim_time += self.costs.coalesce;
    }

    fn free_buddy(&mut self, region: usize, mut addr: u64, coalesce: bool) {
        let fib = matches!(self.states[region], RegionState::Buddy { fib: true, .. });
        while coalesce {
            let b = &self.blocks[&addr];
            let Some(&(parent, pk)) = b.lineage.last() else {
                break;
            };
            let (lo, up) = buddy_children(pk, fib).expect("parent was split");
            let (buddy_addr, buddy_class) = if addr == parent {
                (parent + buddy_class_size(lo, fib), up)
            } else {
                (parent, lo)
            };
            let depth = b.lineage.len();
            let mergeable = self.blocks.get(&buddy_addr).is_some_and(|o| {
                o.live.is_none()
                    && o.class == buddy_class
                    && o.lineage.len() == depth
                    && o.lineage.last() == Some(&(parent, pk))
            });
            if !mergeable {
                break;
            }
            let RegionState::Buddy { lists, .. } = &mut self.states[region] else {
                unreachable!()
            };
            let list = &mut lists[buddy_class];
            let pos = list.iter().position(|&a| a == buddy_addr).expect("free buddy is listed");
            list.remove(pos);
            self.blocks.remove(&buddy_addr);
            let mut merged = self.blocks.remove(&addr).expect("block exists");
            merged.lineage.pop();
            merged.class = pk;
            merged.size = buddy_class_size(pk, fib);
            self.blocks.insert(parent, merged);
            self.coalesced();
            addr = parent;
        }
        let class = self.blocks[&addr].class;
        self.push_buddy(region, addr, class);
    }

    fn free_list(&mut self, region: usize, mut addr: u64, order: Order, coalesce: bool) {
        if coalesce {
            let size = self.blocks[&addr].size;
            let right = addr + size;
            if self.blocks.get(&right).is_some_and(|b| b.live.is_none() && b.region == region) {
                self.list_remove(region, right);
                let rb = self.blocks.remove(&right).expect("block exists");
                self.blocks.get_mut(&addr).expect("block exists").size += rb.size;
                self.coalesced();
            }
            let left = self
                .blocks
                .range(..addr)
                .next_back()
                .filter(|(_, b)| b.live.is_none() && b.region == region)
                .map(|(&a, _)| a);
            if let Some(left) = left {
                self.list_remove(region, left);
                let me = self.blocks.remove(&addr).expect("block exists");
                self.blocks.get_mut(&left).expect("block exists").size += me.size;
                self.coalesced();
                addr = left;
            }
        }
        self.list_insert(region, addr, order);
    }

    fn check(&self, index: usize, expected_live: u64) -> Result<(), DmmError> {
        let fail = |msg: String| Err(DmmError::Invariant { index, msg });
        let mut cursor = 0;
        let mut free = 0;
        for (&a, b) in &self.blocks {
            if a != cursor {
                return fail(format!("gap or overlap at {a} (expected {cursor})"));
            }
            if b.size == 0 {
                return fail(format!("empty block at {a}"));
            }
            if b.live.is_none() {
                free += b.size;
            }
            cursor += b.size;
        }
        if cursor != self.brk {
            return fail(format!("blocks end at {cursor}, heap at {}", self.brk));
        }
        let listed: usize = self
            .states
            .iter()
            .map(|s| match s {
                RegionState::Segregated { lists } => lists.values().map(Vec::len).sum(),
                RegionState::Buddy { lists, .. } => lists.iter().map(Vec::len).sum(),
                RegionState::List { items } => items.len(),
            })
            .sum();
        let free_blocks = self.blocks.values().filter(|b| b.live.is_none()).count();
        if listed != free_blocks || free != self.free_bytes {
            return fail(format!(
                "{listed} listed vs {free_blocks} free blocks, {free} vs {} free bytes",
                self.free_bytes
            ));
        }
        if self.live_payload != expected_live {
            return fail(format!(
                "live payload {} differs from trace balance {expected_live}",
                self.live_payload
            ));
        }
        Ok(())
    }
}

/// Replays `trace` with default costs and no checking.
pub fn replay(spec: &DmmSpec, trace: &[AllocEvent]) -> Result<DmmMetrics, DmmError> {
    Ok(replay_with(spec, trace, &ReplayOptions::default())?.metrics)
}

pub fn replay_with(
    spec: &DmmSpec,
    trace: &[AllocEvent],
    opts: &ReplayOptions,
) -> Result<ReplayOutcome, DmmError> {
    spec.validate()?;
    let mut heap = Heap::new(spec, opts);
    let mut balance = 0u64;
    let mut sizes: HashMap<u64, u64> = HashMap::new();
    for (index, ev) in trace.iter().enumerate() {
        match *ev {
            AllocEvent::Alloc { id, size } => {
                if size == 0 {
                    return Err(DmmError::Replay {
                        index,
                        msg: format!("zero-sized allocation of id {id}"),
                    });
                }
                if heap.live.contains_key(&id) {
                    return Err(DmmError::Replay {
                        index,
                        msg: format!("id {id} allocated while still live"),
                    });
                }
                heap.alloc(index, id, size)?;
                if opts.debug {
                    sizes.insert(id, size);
                    balance += size;
                }
            }
            AllocEvent::Free { id } => {
                heap.free(index, id)?;
                if opts.debug {
                    balance -= sizes.remove(&id).expect("freed id was allocated");
                }
            }
        }
        if opts.debug {
            heap.check(index, balance)?;
        }
    }
    heap.m.sim_time += heap.m.accesses * heap.costs.inspect;
    Ok(ReplayOutcome {
        metrics: heap.m,
        fragmentation: heap.frag,
        log: heap.log,
    })
}

pub fn fragmentation_report(
    spec: &DmmSpec,
    trace: &[AllocEvent],
) -> Result<FragmentationReport, DmmError> {
    Ok(replay_with(spec, trace, &ReplayOptions::default())?.fragmentation)
}
