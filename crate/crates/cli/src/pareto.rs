//! Plot-ready Pareto front reports.
//!
//! CSV layout: `objective1,objective2,<genome fields...>,series`. Front rows
//! come first, sorted by `objective1`, and carry `series = front`; baseline
//! rows follow in input order with their name as `series`.

use anyhow::{bail, Context, Result};
use memdse::cacheopt::FrontMember;
use memdse::cache::CacheConfig;
use memdse::regfile::PlacementSolution;
use serde::{Deserialize, Serialize};

pub const FRONT_SERIES: &str = "front";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub objective1: f64,
    pub objective2: f64,
    pub genome: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub name: String,
    #[serde(flatten)]
    pub row: ParetoRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub objectives: [String; 2],
    pub genome_fields: Vec<String>,
    pub front: Vec<ParetoRow>,
    pub baselines: Vec<BaselineRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl ParetoReport {
    /// Sorts the front by `objective1`, then `objective2`, then genome.
    pub fn normalize(&mut self) {
        self.front.sort_by(|a, b| {
            a.objective1
                .total_cmp(&b.objective1)
                .then(a.objective2.total_cmp(&b.objective2))
                .then_with(|| a.genome.cmp(&b.genome))
        });
    }

    fn check(&self) -> Result<()> {
        if self.front.is_empty() {
            bail!("empty Pareto front");
        }
        let n = self.genome_fields.len();
        let rows = self.front.iter().chain(self.baselines.iter().map(|b| &b.row));
        for r in rows {
            if r.genome.len() != n {
                bail!("row has {} genome fields, header has {n}", r.genome.len());
            }
        }
        Ok(())
    }
}

const CACHE_FIELDS: [&str; 11] = [
    "i_size",
    "i_block",
    "i_assoc",
    "i_repl",
    "i_prefetch",
    "d_size",
    "d_block",
    "d_assoc",
    "d_repl",
    "d_prefetch",
    "d_write_policy",
];

fn cache_genome(c: &CacheConfig) -> Vec<String> {
    let (i, d) = (&c.icache, &c.dcache);
    vec![
        i.size_bytes.to_string(),
        i.block_bytes.to_string(),
        i.associativity.to_string(),
        i.replacement.to_string(),
        i.prefetch.to_string(),
        d.size_bytes.to_string(),
        d.block_bytes.to_string(),
        d.associativity.to_string(),
        d.replacement.to_string(),
        d.prefetch.to_string(),
        c.write_policy.to_string(),
    ]
}

/// Cache front with `(time, energy)` objectives. Baselines carry their own
/// evaluated objectives.
pub fn from_cache_front(front: &[FrontMember], baselines: &[(String, FrontMember)]) -> ParetoReport {
    let row = |m: &FrontMember| ParetoRow {
        objective1: m.time_s,
        objective2: m.energy_j,
        genome: cache_genome(&m.config),
    };
    let mut r = ParetoReport {
        objectives: ["time_s".into(), "energy_j".into()],
        genome_fields: CACHE_FIELDS.iter().map(|s| s.to_string()).collect(),
        front: front.iter().map(row).collect(),
        baselines: baselines
            .iter()
            .map(|(name, m)| BaselineRow {
                name: name.clone(),
                row: row(m),
            })
            .collect(),
    };
    r.normalize();
    r
}

/// Placement front with `(thermal fitness, area violation)` objectives; the
/// genome lists the slot of each logical register.
pub fn from_placement_front(front: &[PlacementSolution]) -> ParetoReport {
    let n = front.first().map_or(0, |s| s.placement.assignment.len());
    let mut r = ParetoReport {
        objectives: ["thermal_fitness".into(), "area_violation".into()],
        genome_fields: (0..n).map(|i| format!("r{i}")).collect(),
        front: front
            .iter()
            .map(|s| ParetoRow {
                objective1: s.objectives.thermal_fitness,
                objective2: s.objectives.area_violation,
                genome: s.placement.assignment.iter().map(|a| a.to_string()).collect(),
            })
            .collect(),
        baselines: Vec::new(),
    };
    r.normalize();
    r
}

pub fn emit(report: &ParetoReport, format: Format) -> Result<Vec<u8>> {
    report.check()?;
    let mut report = report.clone();
    report.normalize();
    match format {
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(&report)?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["objective1".to_string(), "objective2".to_string()];
            header.extend(report.genome_fields.iter().cloned());
            header.push("series".into());
            w.write_record(&header)?;
            let rows = report
                .front
                .iter()
                .map(|r| (FRONT_SERIES, r))
                .chain(report.baselines.iter().map(|b| (b.name.as_str(), &b.row)));
            for (series, r) in rows {
                let mut rec = vec![r.objective1.to_string(), r.objective2.to_string()];
                rec.extend(r.genome.iter().cloned());
                rec.push(series.to_string());
                w.write_record(&rec)?;
            }
            Ok(w.into_inner().context("flushing CSV")?)
        }
    }
}

/// Parses either format. CSV loses the objective names, which come back as
/// `objective1` and `objective2`.
pub fn parse(bytes: &[u8], format: Format) -> Result<ParetoReport> {
    let report = match format {
        Format::Json => serde_json::from_slice(bytes)?,
        Format::Csv => {
            let mut rd = csv::Reader::from_reader(bytes);
            let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
            let n = header.len();
            if n < 3 || header[0] != "objective1" || header[1] != "objective2" || header[n - 1] != "series" {
                bail!("expected header `objective1,objective2,...,series`");
            }
            let mut report = ParetoReport {
                objectives: ["objective1".into(), "objective2".into()],
                genome_fields: header[2..n - 1].to_vec(),
                front: Vec::new(),
                baselines: Vec::new(),
            };
            for (i, rec) in rd.records().enumerate() {
                let rec = rec?;
                let num = |k: usize| -> Result<f64> {
                    rec[k]
                        .parse()
                        .with_context(|| format!("row {}: bad number `{}`", i + 1, &rec[k]))
                };
                let row = ParetoRow {
                    objective1: num(0)?,
                    objective2: num(1)?,
                    genome: rec.iter().skip(2).take(n - 3).map(str::to_string).collect(),
                };
                match &rec[n - 1] {
                    FRONT_SERIES => report.front.push(row),
                    name => report.baselines.push(BaselineRow {
                        name: name.to_string(),
                        row,
                    }),
                }
            }
            report
        }
    };
    report.check()?;
    Ok(report)
}
