//! Split instruction/data cache simulation and the execution-time and energy
//! models built on its hit/miss counts.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traces::{AccessKind, MemRef};

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("invalid cache configuration: {0}")]
    Config(String),
    #[error("technology table has no entry for {0}")]
    MissingEntry(TechKey),
    #[error("technology table line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate technology entry {0}")]
    Duplicate(TechKey),
    #[error("technology table not monotone: {larger} is not costlier than {smaller}")]
    NotMonotone { smaller: TechKey, larger: TechKey },
    #[error("invalid DRAM parameters: {0}")]
    Dram(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Replacement {
    Lru,
    Fifo,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Prefetch {
    OnDemand,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WritePolicy {
    CopyBack,
    WriteThrough,
}

impl fmt::Display for Replacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Replacement::Lru => "LRU",
            Replacement::Fifo => "FIFO",
            Replacement::Random => "RANDOM",
        })
    }
}

impl fmt::Display for Prefetch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Prefetch::OnDemand => "ON_DEMAND",
            Prefetch::Always => "ALWAYS",
        })
    }
}

impl fmt::Display for WritePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WritePolicy::CopyBack => "COPY_BACK",
            WritePolicy::WriteThrough => "WRITE_THROUGH",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheParams {
    pub size_bytes: u64,
    pub block_bytes: u64,
    pub associativity: u64,
    pub replacement: Replacement,
    pub prefetch: Prefetch,
}

impl CacheParams {
    pub fn num_sets(&self) -> u64 {
        self.size_bytes / (self.block_bytes * self.associativity)
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        if !self.size_bytes.is_power_of_two() || !self.block_bytes.is_power_of_two() {
            return Err(CacheError::Config(format!(
                "size {} and block {} must be powers of two",
                self.size_bytes, self.block_bytes
            )));
        }
        if self.associativity == 0 {
            return Err(CacheError::Config("associativity must be at least 1".into()));
        }
        if self.block_bytes.checked_mul(self.associativity).is_none_or(|w| w > self.size_bytes) {
            return Err(CacheError::Config(format!(
                "{} B cannot hold {} ways of {} B blocks",
                self.size_bytes, self.associativity, self.block_bytes
            )));
        }
        if !self.num_sets().is_power_of_two() {
            return Err(CacheError::Config(format!(
                "associativity {} gives a non power-of-two set count",
                self.associativity
            )));
        }
        Ok(())
    }

    pub fn tech_key(&self) -> TechKey {
        TechKey {
            size_bytes: self.size_bytes,
            associativity: self.associativity,
            block_bytes: self.block_bytes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheConfig {
    pub icache: CacheParams,
    pub dcache: CacheParams,
    pub write_policy: WritePolicy,
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        self.icache.validate()?;
        self.dcache.validate()
    }
}

impl fmt::Display for CacheConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |p: &CacheParams| {
            format!(
                "{}B/{}B/{}-way/{}/{}",
                p.size_bytes, p.block_bytes, p.associativity, p.replacement, p.prefetch
            )
        };
        write!(
            f,
            "I[{}] D[{}] {}",
            side(&self.icache),
            side(&self.dcache),
            self.write_policy
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub i_access: u64,
    pub i_miss: u64,
    pub d_access: u64,
    pub d_miss: u64,
    pub prefetch_fetches: u64,
    pub writebacks: u64,
    pub writethroughs: u64,
}

#[derive(Debug, Clone, Copy)]
struct Line {
    tag: u64,
    dirty: bool,
    stamp: u64,
}

/// One cache side. Sets hold their filled ways in way order; a set fills its
/// ways in order before any replacement.
struct Side {
    params: CacheParams,
    sets: Vec<Vec<Line>>,
    clock: u64,
}

enum Fill {
    Clean,
    Dirty,
}

impl Side {
    fn new(params: CacheParams) -> Self {
        Self {
            params,
            sets: vec![Vec::new(); params.num_sets() as usize],
            clock: 0,
        }
    }

    fn locate(&self, block: u64) -> (usize, u64) {
        let n = self.sets.len() as u64;
        ((block % n) as usize, block / n)
    }

    fn contains(&self, block: u64) -> bool {
        let (s, tag) = self.locate(block);
        self.sets[s].iter().any(|l| l.tag == tag)
    }

    /// Demand access; returns whether it hit. Misses allocate.
    fn access(&mut self, block: u64, write: bool, rng: &mut ChaCha8Rng, stats: &mut CacheStats) -> bool {
        self.clock += 1;
        let (s, tag) = self.locate(block);
        let lru = self.params.replacement == Replacement::Lru;
        if let Some(line) = self.sets[s].iter_mut().find(|l| l.tag == tag) {
            if lru {
                line.stamp = self.clock;
            }
            line.dirty |= write;
            return true;
        }
        self.insert(s, tag, if write { Fill::Dirty } else { Fill::Clean }, rng, stats);
        false
    }

    fn prefetch(&mut self, block: u64, rng: &mut ChaCha8Rng, stats: &mut CacheStats) {
        if self.contains(block) {
            return;
        }
        self.clock += 1;
        stats.prefetch_fetches += 1;
        let (s, tag) = self.locate(block);
        self.insert(s, tag, Fill::Clean, rng, stats);
    }

    fn insert(&mut self, s: usize, tag: u64, fill: Fill, rng: &mut ChaCha8Rng, stats: &mut CacheStats) {
        let line = Line {
            tag,
            dirty: matches!(fill, Fill::Dirty),
            stamp: self.clock,
        };
        let assoc = self.params.associativity as usize;
        let set = &mut self.sets[s];
        if set.len() < assoc {
            set.push(line);
            return;
        }
        let victim = match self.params.replacement {
            Replacement::Random => rng.random_range(0..assoc),
            Replacement::Lru | Replacement::Fifo => set
                .iter()
                .enumerate()
                .min_by_key(|(_, l)| l.stamp)
                .map(|(i, _)| i)
                .expect("full set is nonempty"),
        };
        if set[victim].dirty {
            stats.writebacks += 1;
        }
        set[victim] = line;
    }
}

/// Runs a trace through a split cache. `seed` drives RANDOM replacement.
///
/// Write misses allocate under both write policies; copy-back lines become
/// dirty on writes and count a writeback when evicted dirty. Lines still
/// dirty at the end of the trace are not flushed.
pub fn simulate<'a, I>(trace: I, config: &CacheConfig, seed: u64) -> Result<CacheStats, CacheError>
where
    I: IntoIterator<Item = &'a MemRef>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut icache = Side::new(config.icache);
    let mut dcache = Side::new(config.dcache);
    let copy_back = config.write_policy == WritePolicy::CopyBack;
    let mut st = CacheStats::default();
    for r in trace {
        let (side, write) = match r.kind {
            AccessKind::InstructionFetch => (&mut icache, false),
            AccessKind::DataRead => (&mut dcache, false),
            AccessKind::DataWrite => (&mut dcache, true),
        };
        let block = r.address / side.params.block_bytes;
        let hit = side.access(block, write && copy_back, &mut rng, &mut st);
        match r.kind {
            AccessKind::InstructionFetch => {
                st.i_access += 1;
                st.i_miss += u64::from(!hit);
            }
            _ => {
                st.d_access += 1;
                st.d_miss += u64::from(!hit);
            }
        }
        if write && !copy_back {
            st.writethroughs += 1;
        }
        if side.params.prefetch == Prefetch::Always {
            side.prefetch(block.wrapping_add(1), &mut rng, &mut st);
        }
    }
    Ok(st)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TechKey {
    pub size_bytes: u64,
    pub associativity: u64,
    pub block_bytes: u64,
}

impl fmt::Display for TechKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(size {}, assoc {}, block {})",
            self.size_bytes, self.associativity, self.block_bytes
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TechEntry {
    pub access_time_s: f64,
    pub access_energy_j: f64,
}

/// Per-access time and energy for each cache geometry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TechnologyTable {
    entries: BTreeMap<TechKey, TechEntry>,
}

#[derive(Deserialize)]
struct TechRow {
    size: u64,
    assoc: u64,
    block: u64,
    access_time_s: f64,
    access_energy_j: f64,
}

impl TechnologyTable {
    /// Builds a table, rejecting duplicates and non-monotone rows.
    pub fn from_entries(
        rows: impl IntoIterator<Item = (TechKey, TechEntry)>,
    ) -> Result<Self, CacheError> {
        let mut entries = BTreeMap::new();
        for (k, e) in rows {
            if entries.insert(k, e).is_some() {
                return Err(CacheError::Duplicate(k));
            }
        }
        let t = Self { entries };
        t.check_monotone()?;
        Ok(t)
    }

    /// CSV with header `size,assoc,block,access_time_s,access_energy_j`.
    pub fn load<R: Read>(reader: R) -> Result<Self, CacheError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| CacheError::Parse { line: 1, msg: e.to_string() })?
            .clone();
        let expected = ["size", "assoc", "block", "access_time_s", "access_energy_j"];
        if headers.iter().ne(expected) {
            return Err(CacheError::Parse {
                line: 1,
                msg: format!("expected header `{}`", expected.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<TechRow>().enumerate() {
            let line = i + 2;
            let r = rec.map_err(|e| CacheError::Parse { line, msg: e.to_string() })?;
            let ok = r.access_time_s.is_finite()
                && r.access_time_s > 0.0
                && r.access_energy_j.is_finite()
                && r.access_energy_j > 0.0;
            if !ok {
                return Err(CacheError::Parse {
                    line,
                    msg: "access time and energy must be positive".into(),
                });
            }
            rows.push((
                TechKey {
                    size_bytes: r.size,
                    associativity: r.assoc,
                    block_bytes: r.block,
                },
                TechEntry {
                    access_time_s: r.access_time_s,
                    access_energy_j: r.access_energy_j,
                },
            ));
        }
        Self::from_entries(rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("size,assoc,block,access_time_s,access_energy_j\n");
        for (k, e) in &self.entries {
            out.push_str(&format!(
                "{},{},{},{:e},{:e}\n",
                k.size_bytes, k.associativity, k.block_bytes, e.access_time_s, e.access_energy_j
            ));
        }
        out
    }

    fn check_monotone(&self) -> Result<(), CacheError> {
        // Consecutive entries along each axis suffice: strictness is transitive.
        let mut by_size: BTreeMap<(u64, u64), Vec<(TechKey, TechEntry)>> = BTreeMap::new();
        let mut by_assoc: BTreeMap<(u64, u64), Vec<(TechKey, TechEntry)>> = BTreeMap::new();
        for (&k, &e) in &self.entries {
            by_size.entry((k.associativity, k.block_bytes)).or_default().push((k, e));
            by_assoc.entry((k.size_bytes, k.block_bytes)).or_default().push((k, e));
        }
        for chain in by_size.values_mut().chain(by_assoc.values_mut()) {
            chain.sort_by_key(|(k, _)| (k.size_bytes, k.associativity));
            for w in chain.windows(2) {
                let ((ks, es), (kl, el)) = (w[0], w[1]);
                if !(el.access_time_s > es.access_time_s && el.access_energy_j > es.access_energy_j) {
                    return Err(CacheError::NotMonotone {
                        smaller: ks,
                        larger: kl,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &TechKey) -> Result<&TechEntry, CacheError> {
        self.entries.get(key).ok_or(CacheError::MissingEntry(*key))
    }

    pub fn contains(&self, key: &TechKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TechKey, &TechEntry)> {
        self.entries.iter()
    }

    /// Synthetic monotone table over 1-128 KB, 8-64 B blocks and 1-16 ways.
    /// Values are placeholders of realistic magnitude, not characterized data.
    pub fn synthetic_default() -> Self {
        let mut rows = Vec::new();
        for size_kb in (0..8).map(|i| 1u64 << i) {
            for block in [8u64, 16, 32, 64] {
                for assoc in [1u64, 2, 4, 8, 16] {
                    if block * assoc > size_kb * 1024 {
                        continue;
                    }
                    let ls = (size_kb as f64).log2();
                    let la = (assoc as f64).log2();
                    let lb = (block as f64 / 8.0).log2();
                    let time = 0.5e-9 * (1.0 + 0.1 * ls) * (1.0 + 0.08 * la) * (1.0 + 0.02 * lb);
                    let energy =
                        5e-11 * (size_kb as f64).sqrt() * (1.0 + 0.2 * la) * (1.0 + 0.1 * lb);
                    rows.push((
                        TechKey {
                            size_bytes: size_kb * 1024,
                            associativity: assoc,
                            block_bytes: block,
                        },
                        TechEntry {
                            access_time_s: time,
                            access_energy_j: energy,
                        },
                    ));
                }
            }
        }
        Self::from_entries(rows).expect("synthetic table is monotone")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DramParams {
    pub access_time_s: f64,
    pub access_power_w: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl Default for DramParams {
    fn default() -> Self {
        Self {
            access_time_s: 1e-7,
            access_power_w: 0.5,
            bandwidth_bytes_per_s: 1e9,
        }
    }
}

impl DramParams {
    pub fn validate(&self) -> Result<(), CacheError> {
        let all = [self.access_time_s, self.access_power_w, self.bandwidth_bytes_per_s];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(CacheError::Dram("all parameters must be positive".into()))
        }
    }
}

/// Time and energy model over a technology table.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheModel {
    pub tech: TechnologyTable,
    pub dram: DramParams,
    /// Charge DRAM time and energy for writebacks and writethroughs, which the
    /// base model ignores.
    pub extended_writes: bool,
}

impl CacheModel {
    pub fn new(tech: TechnologyTable, dram: DramParams) -> Self {
        Self {
            tech,
            dram,
            extended_writes: false,
        }
    }

    pub fn exec_time(&self, stats: &CacheStats, config: &CacheConfig) -> Result<f64, CacheError> {
        let t = exec_time(stats, config, &self.tech, &self.dram)?;
        if self.extended_writes {
            Ok(t + (stats.writebacks + stats.writethroughs) as f64 * self.dram.access_time_s)
        } else {
            Ok(t)
        }
    }

    pub fn energy(&self, stats: &CacheStats, config: &CacheConfig) -> Result<f64, CacheError> {
        let e = energy(stats, config, &self.tech, &self.dram)?;
        if self.extended_writes {
            let per = self.dram.access_power_w * self.dram.access_time_s;
            Ok(e + (stats.writebacks + stats.writethroughs) as f64 * per)
        } else {
            Ok(e)
        }
    }
}

/// `T = Ia*It + Im*Td + Im*Ib/bw + Da*Dt + Dm*Td + Dm*Db/bw`.
pub fn exec_time(
    stats: &CacheStats,
    config: &CacheConfig,
    tech: &TechnologyTable,
    dram: &DramParams,
) -> Result<f64, CacheError> {
    let it = tech.get(&config.icache.tech_key())?.access_time_s;
    let dt = tech.get(&config.dcache.tech_key())?.access_time_s;
    let (ia, im) = (stats.i_access as f64, stats.i_miss as f64);
    let (da, dm) = (stats.d_access as f64, stats.d_miss as f64);
    let ib = config.icache.block_bytes as f64;
    let db = config.dcache.block_bytes as f64;
    let bw = dram.bandwidth_bytes_per_s;
    Ok(ia * it
        + im * dram.access_time_s
        + im * ib / bw
        + da * dt
        + dm * dram.access_time_s
        + dm * db / bw)
}

/// `E = Ia*Ie + Da*De + Im*Ie*Ib + Dm*De*Db + Im*P*(Td + Ib/bw) + Dm*P*(Td + Db/bw)`.
pub fn energy(
    stats: &CacheStats,
    config: &CacheConfig,
    tech: &TechnologyTable,
    dram: &DramParams,
) -> Result<f64, CacheError> {
    let ie = tech.get(&config.icache.tech_key())?.access_energy_j;
    let de = tech.get(&config.dcache.tech_key())?.access_energy_j;
    let (ia, im) = (stats.i_access as f64, stats.i_miss as f64);
    let (da, dm) = (stats.d_access as f64, stats.d_miss as f64);
    let ib = config.icache.block_bytes as f64;
    let db = config.dcache.block_bytes as f64;
    let (p, td, bw) = (dram.access_power_w, dram.access_time_s, dram.bandwidth_bytes_per_s);
    Ok(ia * ie
        + da * de
        + im * ie * ib
        + dm * de * db
        + im * p * (td + ib / bw)
        + dm * p * (td + db / bw))
}
