use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use memdse::cache::{simulate, CacheConfig, CacheModel, DramParams, TechnologyTable};
use memdse::cacheopt::{self, DesignSpace, FrontMember};
use memdse::dmm::{build_reference, replay_with, CostWeights, DmmSpec, Reference, ReplayOptions};
use memdse::dmmopt::{self, DmmOptSettings, GrammarLimits};
use memdse::evolve::EvolutionConfig;
use memdse::regfile::{self, EnergyParams, Placement};
use memdse::stats;
use memdse::thermal::{self, MaterialParams, Preset, SolverKind};
use memdse::traces::{self, AllocTraceSpec, MemTraceSpec};
use memdse_cli::pareto::{self, Format};
use memdse_cli::settings::{overlay, RunSettings};

#[derive(Parser)]
#[command(name = "memdse", version, about = "Evolutionary design-space exploration of the memory subsystem")]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration; a cache configuration for `cache sim|model`, run
    /// settings otherwise.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Run directory for artifacts and the manifest.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for evaluation.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic trace generation.
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Cache simulation, modelling and optimization.
    #[command(subcommand)]
    Cache(CacheCmd),
    /// Steady-state thermal analysis.
    #[command(subcommand)]
    Thermal(ThermalCmd),
    /// Register file placement.
    #[command(subcommand)]
    Regfile(RegfileCmd),
    /// Heap allocator replay and synthesis.
    #[command(subcommand)]
    Dmm(DmmCmd),
    /// Statistics and report formatting.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand)]
enum TraceCmd {
    /// Memory reference trace on standard output.
    GenMem {
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        instr_share: Option<f64>,
        #[arg(long)]
        working_set: Option<u64>,
        #[arg(long)]
        stride_share: Option<f64>,
    },
    /// Heap event trace on standard output.
    GenAlloc {
        #[arg(long)]
        events: Option<usize>,
        /// Comma separated `size:weight` pairs.
        #[arg(long)]
        classes: Option<String>,
        #[arg(long)]
        mean_lifetime: Option<f64>,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Technology table CSV; a synthetic table is used when absent.
    #[arg(long)]
    tech: Option<PathBuf>,
    /// Charge DRAM time and energy for writebacks and writethroughs.
    #[arg(long)]
    extended_writes: bool,
    #[arg(long)]
    dram_time: Option<f64>,
    #[arg(long)]
    dram_power: Option<f64>,
    #[arg(long)]
    dram_bandwidth: Option<f64>,
}

#[derive(Args)]
struct EvoArgs {
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    crossover_rate: Option<f64>,
    #[arg(long)]
    mutation_rate: Option<f64>,
    #[arg(long)]
    tournament_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceName {
    Default,
    Toy,
}

#[derive(Subcommand)]
enum CacheCmd {
    /// Hit and miss counts as JSON.
    Sim {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Counts plus execution time and energy.
    Model {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// NSGA-II over the cache design space; Pareto CSV on standard output.
    Opt {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        evo: EvoArgs,
        /// Built-in design space, unless the config supplies one.
        #[arg(long, value_enum, default_value = "default")]
        space: SpaceName,
    },
}

#[derive(Args)]
struct MaterialArgs {
    #[arg(long)]
    conductivity: Option<f64>,
    #[arg(long)]
    thickness_um: Option<f64>,
    #[arg(long)]
    boundary_conductance: Option<f64>,
    #[arg(long)]
    ambient: Option<f64>,
    #[arg(long)]
    read_energy: Option<f64>,
    #[arg(long)]
    write_energy: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Auto,
    Direct,
    Iterative,
}

#[derive(Subcommand)]
enum ThermalCmd {
    /// Temperature rise of a register file under a profile.
    Solve {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, value_parser = parse_preset)]
        topology: Preset,
        /// JSON array: slot of each logical register. Identity when absent.
        #[arg(long)]
        placement: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "auto")]
        solver: Solver,
        #[command(flatten)]
        material: MaterialArgs,
    },
}

#[derive(Subcommand)]
enum RegfileCmd {
    /// Thermal-aware register placement.
    Opt {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, value_parser = parse_preset)]
        topology: Preset,
        #[command(flatten)]
        evo: EvoArgs,
        #[command(flatten)]
        material: MaterialArgs,
    },
}

#[derive(Subcommand)]
enum DmmCmd {
    /// Replay a heap trace through an allocator.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Allocator spec as JSON.
        #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
        dmm: Option<PathBuf>,
        #[arg(long, value_parser = parse_reference)]
        reference: Option<Reference>,
        /// Check heap invariants after every event.
        #[arg(long)]
        debug: bool,
    },
    /// Grammatical evolution of an allocator for a trace.
    Opt {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        evo: EvoArgs,
        #[arg(long)]
        max_wraps: Option<usize>,
        #[arg(long)]
        chromosome_length: Option<usize>,
        #[arg(long)]
        max_regions: Option<usize>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TestChoice {
    Both,
    T,
    Wilcoxon,
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Paired tests on two samples, one number per line or comma separated.
    Stats {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        test: TestChoice,
    },
    /// Reformat a Pareto report (CSV or JSON, chosen by extension).
    Pareto {
        #[arg(long)]
        front: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: thermal::ThermalError| e.to_string())
}

fn parse_reference(s: &str) -> Result<Reference, String> {
    s.parse().map_err(|e: memdse::dmm::DmmError| e.to_string())
}

/// A command's results: the primary output goes to standard output and, with
/// `--out`, also into the run directory next to the artifacts.
struct Output {
    primary_name: &'static str,
    primary: Vec<u8>,
    artifacts: Vec<(String, Vec<u8>)>,
    inputs: Vec<PathBuf>,
}

impl Output {
    fn new(primary_name: &'static str, primary: Vec<u8>) -> Self {
        Self {
            primary_name,
            primary,
            artifacts: Vec::new(),
            inputs: Vec::new(),
        }
    }

    fn artifact(mut self, name: &str, bytes: impl Into<Vec<u8>>) -> Self {
        self.artifacts.push((name.to_string(), bytes.into()));
        self
    }

    fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("{}: cannot read", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("{}: invalid JSON", path.display()))
}

fn load_mem_trace(path: &Path) -> Result<Vec<traces::MemRef>> {
    let r = traces::open_trace(path).with_context(|| format!("{}: cannot open", path.display()))?;
    traces::parse_mem_trace(r).with_context(|| format!("{}: bad memory trace", path.display()))
}

fn load_alloc_trace(path: &Path) -> Result<Vec<traces::AllocEvent>> {
    let r = traces::open_trace(path).with_context(|| format!("{}: cannot open", path.display()))?;
    let t = traces::parse_alloc_trace(r).with_context(|| format!("{}: bad heap trace", path.display()))?;
    traces::validate_alloc_trace(&t).with_context(|| format!("{}: inconsistent heap trace", path.display()))?;
    Ok(t)
}

fn load_profile(path: &Path) -> Result<traces::RegisterProfile> {
    let r = traces::open_trace(path).with_context(|| format!("{}: cannot open", path.display()))?;
    traces::parse_register_profile(r).with_context(|| format!("{}: bad register profile", path.display()))
}

fn load_numbers(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v: f64 = tok
                .parse()
                .with_context(|| format!("{}: line {}: bad number `{tok}`", path.display(), i + 1))?;
            out.push(v);
        }
    }
    Ok(out)
}

struct Ctx {
    seed: u64,
    settings: RunSettings,
    config_path: Option<PathBuf>,
}

impl Ctx {
    fn evolution(&self, defaults: EvolutionConfig, args: &EvoArgs) -> Result<EvolutionConfig> {
        let mut c = overlay(defaults, self.settings.evolution.as_ref(), "evolution")?;
        if let Some(v) = args.generations {
            c.generations = v;
        }
        if let Some(v) = args.population {
            c.population_size = v;
        }
        if let Some(v) = args.crossover_rate {
            c.crossover_rate = v;
        }
        if let Some(v) = args.mutation_rate {
            c.mutation_rate = v;
        }
        if let Some(v) = args.tournament_size {
            c.tournament_size = v;
        }
        c.seed = self.seed;
        c.validate().map_err(anyhow::Error::msg).context("evolution settings")?;
        Ok(c)
    }

    fn model(&self, args: &ModelArgs) -> Result<CacheModel> {
        let tech = match &args.tech {
            Some(p) => {
                let f = fs::File::open(p).with_context(|| format!("{}: cannot open", p.display()))?;
                TechnologyTable::load(f).with_context(|| format!("{}: bad technology table", p.display()))?
            }
            None => TechnologyTable::synthetic_default(),
        };
        let mut dram = overlay(DramParams::default(), self.settings.dram.as_ref(), "dram")?;
        if let Some(v) = args.dram_time {
            dram.access_time_s = v;
        }
        if let Some(v) = args.dram_power {
            dram.access_power_w = v;
        }
        if let Some(v) = args.dram_bandwidth {
            dram.bandwidth_bytes_per_s = v;
        }
        dram.validate()?;
        let mut m = CacheModel::new(tech, dram);
        m.extended_writes = args.extended_writes;
        Ok(m)
    }

    fn material(&self, args: &MaterialArgs) -> Result<(MaterialParams, EnergyParams)> {
        let mut m = overlay(MaterialParams::default(), self.settings.material.as_ref(), "material")?;
        let mut e = overlay(EnergyParams::default(), self.settings.energy.as_ref(), "energy")?;
        for (dst, src) in [
            (&mut m.conductivity, args.conductivity),
            (&mut m.thickness_um, args.thickness_um),
            (&mut m.boundary_conductance, args.boundary_conductance),
            (&mut m.ambient, args.ambient),
            (&mut e.read, args.read_energy),
            (&mut e.write, args.write_energy),
        ] {
            if let Some(v) = src {
                *dst = v;
            }
        }
        Ok((m, e))
    }

    /// The `--config` file as a cache configuration.
    fn cache_config(&self) -> Result<CacheConfig> {
        let Some(p) = &self.config_path else {
            bail!("a cache configuration is required (--config <json>)");
        };
        let c: CacheConfig = read_json(p)?;
        c.validate().with_context(|| format!("{}: invalid cache configuration", p.display()))?;
        Ok(c)
    }
}

fn parse_classes(text: &str) -> Result<Vec<(u64, f64)>> {
    text.split(',')
        .map(|pair| {
            let (s, w) = pair
                .split_once(':')
                .with_context(|| format!("size class `{pair}` is not `size:weight`"))?;
            Ok((s.trim().parse()?, w.trim().parse()?))
        })
        .collect()
}

fn run_trace(ctx: &Ctx, cmd: &TraceCmd) -> Result<Output> {
    match cmd {
        TraceCmd::GenMem {
            length,
            instr_share,
            working_set,
            stride_share,
        } => {
            let mut spec = overlay(MemTraceSpec::default(), ctx.settings.mem_trace.as_ref(), "mem_trace")?;
            spec.seed = ctx.seed;
            if let Some(v) = length {
                spec.length = *v;
            }
            if let Some(v) = instr_share {
                spec.instr_share = *v;
            }
            if let Some(v) = working_set {
                spec.working_set_bytes = *v;
            }
            if let Some(v) = stride_share {
                spec.stride_share = *v;
            }
            let t = traces::gen_synthetic_mem_trace(&spec)?;
            let mut buf = Vec::new();
            traces::write_mem_trace(&mut buf, &t)?;
            Ok(Output::new("trace.din", buf))
        }
        TraceCmd::GenAlloc {
            events,
            classes,
            mean_lifetime,
        } => {
            let defaults = AllocTraceSpec {
                events: 10_000,
                size_classes: vec![(32, 0.6), (128, 0.3), (1024, 0.1)],
                mean_lifetime: 50.0,
                seed: 1,
            };
            let mut spec = overlay(defaults, ctx.settings.alloc_trace.as_ref(), "alloc_trace")?;
            spec.seed = ctx.seed;
            if let Some(v) = events {
                spec.events = *v;
            }
            if let Some(v) = classes {
                spec.size_classes = parse_classes(v)?;
            }
            if let Some(v) = mean_lifetime {
                spec.mean_lifetime = *v;
            }
            let t = traces::gen_synthetic_alloc_trace(&spec)?;
            let mut buf = Vec::new();
            traces::write_alloc_trace(&mut buf, &t)?;
            Ok(Output::new("trace.alloc", buf))
        }
    }
}

fn run_cache(ctx: &Ctx, cmd: &CacheCmd) -> Result<Output> {
    match cmd {
        CacheCmd::Sim { trace } => {
            let config = ctx.cache_config()?;
            let t = load_mem_trace(trace)?;
            let stats = simulate(&t, &config, ctx.seed)?;
            Ok(Output::new("stats.json", to_json(&stats)?).input(trace))
        }
        CacheCmd::Model { trace, model } => {
            let config = ctx.cache_config()?;
            let model = ctx.model(model)?;
            let t = load_mem_trace(trace)?;
            let stats = simulate(&t, &config, ctx.seed)?;
            let body = json!({
                "stats": stats,
                "exec_time_s": model.exec_time(&stats, &config)?,
                "energy_j": model.energy(&stats, &config)?,
            });
            Ok(Output::new("model.json", to_json(&body)?).input(trace))
        }
        CacheCmd::Opt {
            trace,
            model,
            evo,
            space,
        } => {
            let model = ctx.model(model)?;
            let builtin = match space {
                SpaceName::Default => DesignSpace::default(),
                SpaceName::Toy => DesignSpace::toy(),
            };
            let space = overlay(builtin, ctx.settings.design_space.as_ref(), "design_space")?;
            space.validate()?;
            let evo = ctx.evolution(EvolutionConfig::nsga2(1.0 / cacheopt::NUM_GENES as f64), evo)?;
            let t = load_mem_trace(trace)?;
            let front = cacheopt::optimize(&t, &space, &model, &evo, ctx.seed)?;
            let bases = cacheopt::baselines();
            let report = cacheopt::improvement_report(&front, &bases, &t, &model, ctx.seed)?;
            let base_rows: Vec<(String, FrontMember)> = report
                .summary
                .iter()
                .zip(&bases)
                .map(|(s, (name, cfg))| {
                    (
                        name.clone(),
                        FrontMember {
                            config: *cfg,
                            time_s: s.time_s,
                            energy_j: s.energy_j,
                        },
                    )
                })
                .collect();
            let pr = pareto::from_cache_front(&front, &base_rows);
            Ok(Output::new("front.csv", pareto::emit(&pr, Format::Csv)?)
                .artifact("front.json", pareto::emit(&pr, Format::Json)?)
                .artifact("improvement.json", to_json(&report)?)
                .artifact("improvement.csv", cacheopt::report_to_csv(&report))
                .input(trace))
        }
    }
}

fn run_thermal(ctx: &Ctx, cmd: &ThermalCmd) -> Result<Output> {
    let ThermalCmd::Solve {
        profile,
        topology,
        placement,
        solver,
        material,
    } = cmd;
    let (mat, energy) = ctx.material(material)?;
    let prof = load_profile(profile)?;
    let fp = topology.floorplan();
    let mut out_inputs = vec![profile.clone()];
    let pl = match placement {
        Some(p) => {
            let assignment: Vec<usize> = read_json(p)?;
            out_inputs.push(p.clone());
            Placement::new(assignment, &fp).with_context(|| format!("{}: invalid placement", p.display()))?
        }
        None => Placement::identity(fp.num_registers()),
    };
    let power = regfile::slot_power(&pl, &prof, &energy)?;
    let system = thermal::assemble_system(&fp, &power, &mat)?;
    let kind = match solver {
        Solver::Auto => SolverKind::Auto,
        Solver::Direct => SolverKind::Direct,
        Solver::Iterative => SolverKind::Iterative,
    };
    let field = thermal::solve_with(&system, kind)?;
    let body = json!({
        "topology": topology.name(),
        "placement": pl.assignment,
        "ambient": field.ambient,
        "avg_rise": field.avg_rise(),
        "max_rise": field.max_rise(),
        "per_register": field.per_register,
    });
    let mut out = Output::new("thermal.json", to_json(&body)?).artifact("heatmap.csv", field.to_csv_heatmap());
    out.inputs = out_inputs;
    Ok(out)
}

fn run_regfile(ctx: &Ctx, cmd: &RegfileCmd) -> Result<Output> {
    let RegfileCmd::Opt {
        profile,
        topology,
        evo,
        material,
    } = cmd;
    let (mat, energy) = ctx.material(material)?;
    let prof = load_profile(profile)?;
    let fp = topology.floorplan();
    let n = fp.num_registers();
    let evo = ctx.evolution(EvolutionConfig::nsga2(1.0 / n as f64), evo)?;
    let front = regfile::optimize_placement(&prof, &energy, &fp, &evo)?;
    let best = front
        .iter()
        .find(|s| s.objectives.area_violation == 0.0)
        .or(front.first())
        .context("empty placement front")?;
    let report = regfile::temperature_report(&best.placement, &prof, &energy, &fp, &mat)?;
    let base = regfile::solve_placement(&Placement::identity(n), &prof, &energy, &fp, &mat)?;
    let opt = regfile::solve_placement(&best.placement, &prof, &energy, &fp, &mat)?;
    let body = json!({
        "topology": topology.name(),
        "placement": best.placement.assignment,
        "fitness": best.objectives.thermal_fitness,
        "area_violation": best.objectives.area_violation,
        "avg_rise": report.avg_rise,
        "max_rise": report.max_rise,
        "baseline_avg_rise": report.baseline_avg_rise,
        "baseline_max_rise": report.baseline_max_rise,
        "avg_improvement_pct": report.avg_improvement_pct,
        "max_improvement_pct": report.max_improvement_pct,
    });
    let pr = pareto::from_placement_front(&front);
    Ok(Output::new("placement.json", to_json(&body)?)
        .artifact("front.csv", pareto::emit(&pr, Format::Csv)?)
        .artifact("front.json", pareto::emit(&pr, Format::Json)?)
        .artifact("heatmap_baseline.csv", base.to_csv_heatmap())
        .artifact("heatmap_optimized.csv", opt.to_csv_heatmap())
        .input(profile))
}

fn run_dmm(ctx: &Ctx, cmd: &DmmCmd) -> Result<Output> {
    match cmd {
        DmmCmd::Replay {
            trace,
            dmm,
            reference,
            debug,
        } => {
            let spec: DmmSpec = match (dmm, reference) {
                (Some(p), _) => read_json(p)?,
                (None, Some(r)) => build_reference(*r),
                (None, None) => bail!("either --dmm or --reference is required"),
            };
            let t = load_alloc_trace(trace)?;
            let opts = ReplayOptions {
                costs: overlay(CostWeights::default(), ctx.settings.costs.as_ref(), "costs")?,
                debug: *debug,
                log: true,
            };
            let o = replay_with(&spec, &t, &opts).with_context(|| format!("{}: replay failed", trace.display()))?;
            let body = json!({"metrics": o.metrics, "fragmentation": o.fragmentation});
            let mut out = Output::new("replay.json", to_json(&body)?)
                .artifact("heap_log.csv", o.log.unwrap_or_default())
                .input(trace);
            if let Some(p) = dmm {
                out = out.input(p);
            }
            Ok(out)
        }
        DmmCmd::Opt {
            trace,
            evo,
            max_wraps,
            chromosome_length,
            max_regions,
        } => {
            let mut evo = ctx.evolution(EvolutionConfig::ge(), evo)?;
            if let Some(v) = max_wraps {
                evo.max_wraps = *v;
            }
            let mut settings = DmmOptSettings {
                limits: overlay(GrammarLimits::default(), ctx.settings.grammar.as_ref(), "grammar")?,
                ..DmmOptSettings::default()
            };
            if let Some(v) = chromosome_length {
                settings.chromosome_length = *v;
            }
            if let Some(v) = max_regions {
                settings.limits.max_regions = *v;
            }
            let t = load_alloc_trace(trace)?;
            let profile = dmmopt::profile_trace(&t)?;
            let grammar = dmmopt::generate_grammar(&profile, &settings.limits)?;
            let o = dmmopt::optimize_dmm(&t, &evo, &settings)?;
            let body = json!({
                "best_spec": o.best_spec,
                "fitness": o.fitness,
                "metrics": o.metrics,
                "comparison": o.comparison,
                "evaluations": o.evaluations,
            });
            Ok(Output::new("dmm_opt.json", to_json(&body)?)
                .artifact("dmm.json", to_json(&o.best_spec)?)
                .artifact("comparison.csv", dmmopt::comparison_to_csv(&o.comparison))
                .artifact("history.csv", dmmopt::history_to_csv(&o.history))
                .artifact("profile.json", to_json(&profile)?)
                .artifact("grammar.bnf", grammar.to_bnf())
                .input(trace))
        }
    }
}

fn run_report(cmd: &ReportCmd) -> Result<Output> {
    match cmd {
        ReportCmd::Stats { a, b, test } => {
            let (xa, xb) = (load_numbers(a)?, load_numbers(b)?);
            let mut results = Vec::new();
            if matches!(test, TestChoice::Both | TestChoice::T) {
                results.push(stats::paired_t_test(&xa, &xb).context("paired t test")?);
            }
            if matches!(test, TestChoice::Both | TestChoice::Wilcoxon) {
                results.push(stats::wilcoxon_signed_rank(&xa, &xb).context("Wilcoxon signed-rank test")?);
            }
            Ok(Output::new("stats.json", to_json(&results)?).input(a).input(b))
        }
        ReportCmd::Pareto { front, format } => {
            let bytes = fs::read(front).with_context(|| format!("{}: cannot read", front.display()))?;
            let input = if front.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                Format::Csv
            } else {
                Format::Json
            };
            let r = pareto::parse(&bytes, input).with_context(|| format!("{}: bad Pareto report", front.display()))?;
            let name = match format {
                Format::Csv => "pareto.csv",
                Format::Json => "pareto.json",
            };
            Ok(Output::new(name, pareto::emit(&r, *format)?).input(front))
        }
    }
}

fn write_run_dir(dir: &Path, out: &Output, seed: u64, wall: f64) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("{}: cannot create", dir.display()))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).with_context(|| format!("{}: cannot write", p.display()))
    };
    write(out.primary_name, &out.primary)?;
    for (name, bytes) in &out.artifacts {
        write(name, bytes)?;
    }
    let manifest = json!({
        "command": std::env::args().skip(1).collect::<Vec<_>>(),
        "inputs": out.inputs,
        "seed": seed,
        "versions": {"memdse": env!("CARGO_PKG_VERSION")},
        "wall_time_s": wall,
        "outputs": std::iter::once(out.primary_name.to_string())
            .chain(out.artifacts.iter().map(|a| a.0.clone()))
            .collect::<Vec<_>>(),
    });
    write("manifest.json", &to_json(&manifest)?)
}

fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .context("starting worker pool")?;
    }
    let is_cache_config = matches!(cli.command, Command::Cache(CacheCmd::Sim { .. } | CacheCmd::Model { .. }));
    let settings = match (&cli.config, is_cache_config) {
        (Some(p), false) => RunSettings::from_json(&read_text(p)?).with_context(|| format!("{}: invalid run settings", p.display()))?,
        _ => RunSettings::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(1),
        settings,
        config_path: cli.config.clone(),
    };
    let mut out = match &cli.command {
        Command::Trace(c) => run_trace(&ctx, c)?,
        Command::Cache(c) => run_cache(&ctx, c)?,
        Command::Thermal(c) => run_thermal(&ctx, c)?,
        Command::Regfile(c) => run_regfile(&ctx, c)?,
        Command::Dmm(c) => run_dmm(&ctx, c)?,
        Command::Report(c) => run_report(c)?,
    };
    if let Some(p) = &cli.config {
        out.inputs.insert(0, p.clone());
    }
    std::io::stdout().lock().write_all(&out.primary)?;
    if let Some(dir) = &cli.out {
        write_run_dir(dir, &out, ctx.seed, start.elapsed().as_secs_f64())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
