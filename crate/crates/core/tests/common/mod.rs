//! Straightforward reference implementations used as test oracles. None of
//! them share code with the library beyond its plain data types.
#![allow(dead_code)]

use std::collections::VecDeque;

use memdse::cache::{CacheConfig, CacheParams, CacheStats, Prefetch, Replacement, WritePolicy};
use memdse::dmm::{DmmMetrics, DmmSpec, Fit, Order, Policy};
use memdse::thermal::{Floorplan, MaterialParams};
use memdse::traces::{AccessKind, AllocEvent, MemRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Thermal: dense Gaussian elimination on the conductance matrix.

pub fn dense_cell_power(fp: &Floorplan, register_power: &[f64]) -> Vec<f64> {
    let w = fp.grid_width;
    let mut p = vec![0.0; w * fp.grid_height];
    for (r, &pw) in fp.registers.iter().zip(register_power) {
        let share = pw / (r.w * r.h) as f64;
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                p[y * w + x] = share;
            }
        }
    }
    p
}

pub fn dense_matrix(w: usize, h: usize, mat: &MaterialParams) -> Vec<Vec<f64>> {
    let n = w * h;
    let g = mat.conductivity * mat.thickness_um * 1e-6;
    let mut a = vec![vec![0.0; n]; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut exposed = 0;
            let nbs = [
                (x as isize - 1, y as isize),
                (x as isize + 1, y as isize),
                (x as isize, y as isize - 1),
                (x as isize, y as isize + 1),
            ];
            for (nx, ny) in nbs {
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    exposed += 1;
                } else {
                    let j = ny as usize * w + nx as usize;
                    a[i][j] -= g;
                    a[i][i] += g;
                }
            }
            a[i][i] += exposed as f64 * mat.boundary_conductance;
        }
    }
    a
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        let d = a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / d;
            if f == 0.0 {
                continue;
            }
            let (top, bottom) = a.split_at_mut(r);
            let (pivot_row, row) = (&top[c], &mut bottom[0]);
            for k in c..n {
                row[k] -= f * pivot_row[k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn dense_rise(fp: &Floorplan, cell_power: &[f64], mat: &MaterialParams) -> Vec<f64> {
    dense_solve(dense_matrix(fp.grid_width, fp.grid_height, mat), cell_power.to_vec())
}

// ---------------------------------------------------------------------------
// Cache: per-set way arrays with explicit recency and fill queues.

struct RefSide {
    p: CacheParams,
    sets: u64,
    /// `ways[set][way] = Some((tag, dirty))`.
    ways: Vec<Vec<Option<(u64, bool)>>>,
    /// Way indices, most recently used first.
    recency: Vec<VecDeque<usize>>,
    /// Way indices in fill order, oldest first.
    fills: Vec<VecDeque<usize>>,
}

impl RefSide {
    fn new(p: CacheParams) -> Self {
        let sets = p.size_bytes / (p.block_bytes * p.associativity);
        let a = p.associativity as usize;
        Self {
            p,
            sets,
            ways: vec![vec![None; a]; sets as usize],
            recency: vec![VecDeque::new(); sets as usize],
            fills: vec![VecDeque::new(); sets as usize],
        }
    }

    fn find(&self, set: usize, tag: u64) -> Option<usize> {
        (0..self.ways[set].len()).find(|&w| matches!(self.ways[set][w], Some((t, _)) if t == tag))
    }

    fn touch(&mut self, set: usize, way: usize) {
        let r = &mut self.recency[set];
        if let Some(pos) = r.iter().position(|&w| w == way) {
            r.remove(pos);
        }
        r.push_front(way);
    }

    fn fill(&mut self, set: usize, tag: u64, dirty: bool, rng: &mut ChaCha8Rng, st: &mut CacheStats) {
        let way = match (0..self.ways[set].len()).find(|&w| self.ways[set][w].is_none()) {
            Some(w) => w,
            None => {
                let v = match self.p.replacement {
                    Replacement::Lru => *self.recency[set].back().unwrap(),
                    Replacement::Fifo => *self.fills[set].front().unwrap(),
                    Replacement::Random => rng.random_range(0..self.p.associativity as usize),
                };
                if let Some((_, true)) = self.ways[set][v] {
                    st.writebacks += 1;
                }
                v
            }
        };
        self.ways[set][way] = Some((tag, dirty));
        let f = &mut self.fills[set];
        if let Some(pos) = f.iter().position(|&w| w == way) {
            f.remove(pos);
        }
        f.push_back(way);
        self.touch(set, way);
    }

    fn access(&mut self, block: u64, dirty: bool, rng: &mut ChaCha8Rng, st: &mut CacheStats) -> bool {
        let (set, tag) = ((block % self.sets) as usize, block / self.sets);
        match self.find(set, tag) {
            Some(w) => {
                if self.p.replacement == Replacement::Lru {
                    self.touch(set, w);
                }
                if dirty {
                    self.ways[set][w].as_mut().unwrap().1 = true;
                }
                true
            }
            None => {
                self.fill(set, tag, dirty, rng, st);
                false
            }
        }
    }

    fn prefetch(&mut self, block: u64, rng: &mut ChaCha8Rng, st: &mut CacheStats) {
        let (set, tag) = ((block % self.sets) as usize, block / self.sets);
        if self.find(set, tag).is_none() {
            st.prefetch_fetches += 1;
            self.fill(set, tag, false, rng, st);
        }
    }
}

pub fn ref_simulate(trace: &[MemRef], cfg: &CacheConfig, seed: u64) -> CacheStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut i = RefSide::new(cfg.icache);
    let mut d = RefSide::new(cfg.dcache);
    let mut st = CacheStats::default();
    let cb = cfg.write_policy == WritePolicy::CopyBack;
    for r in trace {
        let write = r.kind == AccessKind::DataWrite;
        let side = if r.kind == AccessKind::InstructionFetch { &mut i } else { &mut d };
        let block = r.address / side.p.block_bytes;
        let hit = side.access(block, write && cb, &mut rng, &mut st);
        if r.kind == AccessKind::InstructionFetch {
            st.i_access += 1;
            if !hit {
                st.i_miss += 1;
            }
        } else {
            st.d_access += 1;
            if !hit {
                st.d_miss += 1;
            }
        }
        if write && !cb {
            st.writethroughs += 1;
        }
        if side.p.prefetch == Prefetch::Always {
            side.prefetch(block + 1, &mut rng, &mut st);
        }
    }
    st
}

// ---------------------------------------------------------------------------
// Heap: a flat address-sorted block vector searched linearly. Free-list
// order is recovered from insertion stamps.

#[derive(Clone, Debug)]
enum State {
    Free { stamp: u64 },
    Live { id: u64 },
}

#[derive(Clone, Debug)]
struct OBlock {
    addr: u64,
    size: u64,
    region: usize,
    state: State,
    /// `(parent addr, parent size)` per buddy split, outermost first.
    lineage: Vec<(u64, u64)>,
}

fn class_sizes(fib: bool, upto: u64) -> Vec<u64> {
    let mut v = vec![16u64];
    if fib {
        v.push(32);
    }
    while *v.last().unwrap() < upto {
        let n = if fib {
            v[v.len() - 1] + v[v.len() - 2]
        } else {
            v[v.len() - 1] * 2
        };
        v.push(n);
    }
    v
}

/// Sizes of the two halves of a buddy block, lower first.
fn children(size: u64, fib: bool) -> Option<(u64, u64)> {
    let cls = class_sizes(fib, size);
    let k = cls.iter().position(|&c| c == size).expect("size is a class");
    if fib {
        (k >= 2).then(|| (cls[k - 1], cls[k - 2]))
    } else {
        (k >= 1).then(|| (cls[k - 1], cls[k - 1]))
    }
}

fn ceil_to(x: u64, m: u64) -> u64 {
    x.div_ceil(m) * m
}

struct Oracle<'a> {
    spec: &'a DmmSpec,
    blocks: Vec<OBlock>,
    brk: u64,
    stamp: u64,
    m: DmmMetrics,
}

impl Oracle<'_> {
    fn next_stamp(&mut self) -> u64 {
        self.stamp += 1;
        self.stamp
    }

    fn idx(&self, addr: u64) -> usize {
        self.blocks.iter().position(|b| b.addr == addr).unwrap()
    }

    fn insert(&mut self, b: OBlock) {
        let pos = self.blocks.iter().position(|x| x.addr > b.addr).unwrap_or(self.blocks.len());
        self.blocks.insert(pos, b);
    }

    fn release(&mut self, addr: u64) {
        let s = self.next_stamp();
        let i = self.idx(addr);
        self.blocks[i].state = State::Free { stamp: s };
    }

    fn grow(&mut self, region: usize, size: u64) -> u64 {
        let addr = self.brk;
        self.brk += size;
        self.m.peak_memory = self.m.peak_memory.max(self.brk);
        self.insert(OBlock {
            addr,
            size,
            region,
            state: State::Live { id: u64::MAX },
            lineage: Vec::new(),
        });
        addr
    }

    fn free_in(&self, region: usize) -> Vec<(u64, u64, u64)> {
        self.blocks
            .iter()
            .filter(|b| b.region == region)
            .filter_map(|b| match b.state {
                State::Free { stamp } => Some((b.addr, b.size, stamp)),
                _ => None,
            })
            .collect()
    }

    fn newest_of_size(&self, region: usize, size: u64) -> Option<u64> {
        self.free_in(region)
            .into_iter()
            .filter(|f| f.1 == size)
            .max_by_key(|f| f.2)
            .map(|f| f.0)
    }

    fn take(&mut self, addr: u64, id: u64) {
        let i = self.idx(addr);
        self.blocks[i].state = State::Live { id };
    }

    fn alloc(&mut self, id: u64, req: u64) {
        let h = self.spec.header_bytes;
        let q = self.spec.heap_growth_quantum;
        let region = self.spec.regions.iter().position(|r| {
            req >= r.lo && r.hi.map_or(true, |hi| req < hi)
        });
        let region = region.expect("some region serves the request");
        let addr = match self.spec.regions[region].policy {
            Policy::SegregatedExact { granularity } => self.seg(region, ceil_to(req + h, granularity)),
            Policy::SegregatedPow2 => self.seg(region, (req + h).next_power_of_two().max(16)),
            Policy::BuddyBinary { split, .. } => self.buddy(region, req + h, split, false, q),
            Policy::BuddyFib { split, .. } => self.buddy(region, req + h, split, true, q),
            Policy::FreeList { fit, order, split, .. } => {
                let need = h + ceil_to(req.max(8), 8);
                self.list(region, need, fit, order, split, q)
            }
        };
        self.take(addr, id);
        self.m.allocs += 1;
        self.m.sim_time += 1;
    }

    fn seg(&mut self, region: usize, size: u64) -> u64 {
        match self.newest_of_size(region, size) {
            Some(a) => {
                self.m.accesses += 1;
                a
            }
            None => self.grow(region, size),
        }
    }

    fn buddy(&mut self, region: usize, need: u64, split: bool, fib: bool, q: u64) -> u64 {
        let classes = class_sizes(fib, need.max(q));
        let want = *classes.iter().find(|&&c| c >= need).unwrap();
        let found = if split {
            let best = self.free_in(region).into_iter().map(|f| f.1).filter(|&s| s >= want).min();
            best.and_then(|s| self.newest_of_size(region, s))
        } else {
            self.newest_of_size(region, want)
        };
        let mut addr = match found {
            Some(a) => {
                self.m.accesses += 1;
                a
            }
            None => {
                let g = if split {
                    *classes.iter().find(|&&c| c >= need.max(q)).unwrap()
                } else {
                    want
                };
                self.grow(region, g)
            }
        };
        if !split {
            return addr;
        }
        // Mark the working block busy so it is not mistaken for a free one.
        let i = self.idx(addr);
        self.blocks[i].state = State::Live { id: u64::MAX };
        loop {
            let i = self.idx(addr);
            let b = self.blocks[i].clone();
            let Some((lo, up)) = children(b.size, fib) else {
                return addr;
            };
            let take_upper = up >= need && up < lo;
            if !take_upper && lo < need {
                return addr;
            }
            let mut lineage = b.lineage.clone();
            lineage.push((b.addr, b.size));
            self.blocks.remove(i);
            let lower = OBlock {
                addr: b.addr,
                size: lo,
                region,
                state: State::Live { id: u64::MAX },
                lineage: lineage.clone(),
            };
            let upper = OBlock {
                addr: b.addr + lo,
                size: up,
                region,
                state: State::Live { id: u64::MAX },
                lineage,
            };
            self.insert(lower);
            self.insert(upper);
            self.m.splits += 1;
            self.m.sim_time += 2;
            let (keep, spare) = if take_upper {
                (b.addr + lo, b.addr)
            } else {
                (b.addr, b.addr + lo)
            };
            self.release(spare);
            addr = keep;
        }
    }

    fn list(&mut self, region: usize, need: u64, fit: Fit, order: Order, split: bool, q: u64) -> u64 {
        let mut free = self.free_in(region);
        match order {
            Order::Fifo => free.sort_by_key(|f| f.2),
            Order::Lifo => free.sort_by_key(|f| std::cmp::Reverse(f.2)),
            Order::Addr => free.sort_by_key(|f| f.0),
        }
        let mut chosen: Option<(u64, u64)> = None;
        for &(a, s, _) in &free {
            self.m.accesses += 1;
            if s < need {
                continue;
            }
            if fit == Fit::First {
                chosen = Some((a, s));
                break;
            }
            if chosen.map_or(true, |c| s < c.1) {
                chosen = Some((a, s));
            }
            if s == need {
                break;
            }
        }
        let addr = match chosen {
            Some((a, _)) => {
                let i = self.idx(a);
                self.blocks[i].state = State::Live { id: u64::MAX };
                a
            }
            None => self.grow(region, if split { ceil_to(need, q) } else { need }),
        };
        if split {
            let i = self.idx(addr);
            let size = self.blocks[i].size;
            if size - need >= self.spec.header_bytes + 8 {
                self.blocks[i].size = need;
                let s = self.next_stamp();
                self.insert(OBlock {
                    addr: addr + need,
                    size: size - need,
                    region,
                    state: State::Free { stamp: s },
                    lineage: Vec::new(),
                });
                self.m.splits += 1;
                self.m.sim_time += 2;
            }
        }
        addr
    }

    fn free(&mut self, id: u64) {
        let i = self
            .blocks
            .iter()
            .position(|b| matches!(b.state, State::Live { id: x } if x == id))
            .unwrap();
        self.m.frees += 1;
        self.m.sim_time += 1;
        let (addr, region) = (self.blocks[i].addr, self.blocks[i].region);
        match self.spec.regions[region].policy {
            Policy::SegregatedExact { .. } | Policy::SegregatedPow2 => self.release(addr),
            Policy::BuddyBinary { coalesce, .. } => self.free_buddy(addr, coalesce, false),
            Policy::BuddyFib { coalesce, .. } => self.free_buddy(addr, coalesce, true),
            Policy::FreeList { coalesce, .. } => {
                let mut addr = addr;
                if coalesce {
                    let i = self.idx(addr);
                    let end = addr + self.blocks[i].size;
                    if let Some(j) = self.blocks.iter().position(|b| {
                        b.addr == end && b.region == region && matches!(b.state, State::Free { .. })
                    }) {
                        let extra = self.blocks.remove(j).size;
                        let i = self.idx(addr);
                        self.blocks[i].size += extra;
                        self.m.coalesces += 1;
                        self.m.sim_time += 3;
                    }
                    if let Some(j) = self.blocks.iter().position(|b| {
                        b.addr + b.size == addr && b.region == region && matches!(b.state, State::Free { .. })
                    }) {
                        let i = self.idx(addr);
                        let me = self.blocks.remove(i).size;
                        let j = if j > i { j - 1 } else { j };
                        self.blocks[j].size += me;
                        addr = self.blocks[j].addr;
                        self.m.coalesces += 1;
                        self.m.sim_time += 3;
                    }
                }
                self.release(addr);
            }
        }
    }

    fn free_buddy(&mut self, mut addr: u64, coalesce: bool, fib: bool) {
        if coalesce {
            loop {
                let i = self.idx(addr);
                let me = self.blocks[i].clone();
                let Some(&(paddr, psize)) = me.lineage.last() else {
                    break;
                };
                let (lo, _) = children(psize, fib).unwrap();
                let baddr = if addr == paddr { paddr + lo } else { paddr };
                let Some(j) = self.blocks.iter().position(|b| {
                    b.addr == baddr && b.lineage == me.lineage && matches!(b.state, State::Free { .. })
                }) else {
                    break;
                };
                self.blocks.remove(j);
                let i = self.idx(addr);
                let mut merged = self.blocks.remove(i);
                merged.lineage.pop();
                merged.addr = paddr;
                merged.size = psize;
                self.insert(merged);
                self.m.coalesces += 1;
                self.m.sim_time += 3;
                addr = paddr;
            }
        }
        self.release(addr);
    }
}

/// Metrics by brute-force replay; panics on traces the spec cannot serve.
pub fn oracle_replay(spec: &DmmSpec, trace: &[AllocEvent]) -> DmmMetrics {
    let mut o = Oracle {
        spec,
        blocks: Vec::new(),
        brk: 0,
        stamp: 0,
        m: DmmMetrics::default(),
    };
    for ev in trace {
        match *ev {
            AllocEvent::Alloc { id, size } => o.alloc(id, size),
            AllocEvent::Free { id } => o.free(id),
        }
    }
    o.m.sim_time += o.m.accesses;
    o.m
}

/// Random well-formed heap trace of exactly `events` records.
pub fn random_alloc_trace(rng: &mut ChaCha8Rng, events: usize, max_size: u64) -> Vec<AllocEvent> {
    let mut out = Vec::with_capacity(events);
    let mut live: Vec<u64> = Vec::new();
    let mut next = 1u64;
    while out.len() < events {
        let left = events - out.len();
        let must_free = left <= live.len();
        if !live.is_empty() && (must_free || rng.random_bool(0.45)) {
            let k = rng.random_range(0..live.len());
            out.push(AllocEvent::Free { id: live.swap_remove(k) });
        } else {
            let size = if rng.random_bool(0.7) {
                [8u64, 16, 24, 32, 64, 100][rng.random_range(0..6)]
            } else {
                rng.random_range(1..=max_size)
            };
            out.push(AllocEvent::Alloc { id: next, size });
            live.push(next);
            next += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Statistics: Wilcoxon p-value by enumerating all sign assignments.

pub fn wilcoxon_sign_flip_p(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut rank = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[idx[j + 1]].abs() == d[idx[i]].abs() {
            j += 1;
        }
        for k in i..=j {
            rank[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    let total: f64 = rank.iter().sum();
    let wplus: f64 = (0..n).filter(|&k| d[k] > 0.0).map(|k| rank[k]).sum();
    let w = wplus.min(total - wplus);
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|&k| mask >> k & 1 == 1).map(|k| rank[k]).sum();
        if s.min(total - s) <= w + 1e-9 {
            extreme += 1;
        }
    }
    (w, (extreme as f64 / (1u64 << n) as f64).min(1.0))
}

// ---------------------------------------------------------------------------
// Dominance and exhaustive search.

pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Front index of every point by repeated peeling, O(n^3).
pub fn peel_ranks(points: &[Vec<f64>]) -> Vec<usize> {
    let n = points.len();
    let mut rank = vec![usize::MAX; n];
    let mut level = 0;
    while rank.iter().any(|&r| r == usize::MAX) {
        let current: Vec<usize> = (0..n)
            .filter(|&i| rank[i] == usize::MAX)
            .filter(|&i| {
                !(0..n).any(|j| rank[j] == usize::MAX && j != i && dominates(&points[j], &points[i]))
            })
            .collect();
        for i in current {
            rank[i] = level;
        }
        level += 1;
    }
    rank
}

pub fn nondominated(points: &[Vec<f64>]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}

/// Placement fitness computed from slot geometry: sum over logical pairs of
/// `dp_i dp_j / distance` in microns.
pub fn placement_cost(fp: &Floorplan, dp: &[f64], assignment: &[usize]) -> f64 {
    let c: Vec<(f64, f64)> = fp
        .registers
        .iter()
        .map(|r| {
            (
                (r.x as f64 + r.w as f64 / 2.0) * fp.cell_size_um,
                (r.y as f64 + r.h as f64 / 2.0) * fp.cell_size_um,
            )
        })
        .collect();
    let mut f = 0.0;
    for i in 0..dp.len() {
        for j in i + 1..dp.len() {
            let (a, b) = (c[assignment[i]], c[assignment[j]]);
            f += dp[i] * dp[j] / ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        }
    }
    f
}

/// Minimum placement cost over all permutations (Heap's algorithm).
pub fn brute_force_placement(fp: &Floorplan, dp: &[f64]) -> f64 {
    let n = dp.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut best = placement_cost(fp, dp, &perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(placement_cost(fp, dp, &perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}
