//! Register-file energy, the pairwise power-density placement fitness and the
//! NSGA-II search over register-to-slot assignments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolve::{nsga2_run, EvoRng, EvolutionConfig, Genome, Problem};
use crate::thermal::{
    assemble_system, solve_steady_state, Floorplan, MaterialParams, Rect, TemperatureField,
    ThermalError,
};
use crate::traces::RegisterProfile;

#[derive(Debug, Error, PartialEq)]
pub enum RegfileError {
    #[error("registers {0} and {1} share a center")]
    CoincidentCenters(usize, usize),
    #[error("invalid placement: {0}")]
    Placement(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
}

/// Dynamic energy per register access, joules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub read: f64,
    pub write: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            read: 2e-12,
            write: 3e-12,
        }
    }
}

/// Logical register `i` occupies physical slot `assignment[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub assignment: Vec<usize>,
}

impl Placement {
    pub fn identity(n: usize) -> Self {
        Self {
            assignment: (0..n).collect(),
        }
    }

    pub fn new(assignment: Vec<usize>, floorplan: &Floorplan) -> Result<Self, RegfileError> {
        let n = floorplan.num_registers();
        let mut seen = vec![false; n];
        if assignment.len() != n {
            return Err(RegfileError::Placement(format!(
                "{} entries for {} slots",
                assignment.len(),
                n
            )));
        }
        for &s in &assignment {
            if s >= n || std::mem::replace(&mut seen[s], true) {
                return Err(RegfileError::Placement(
                    "assignment is not a permutation of the slots".into(),
                ));
            }
        }
        Ok(Self { assignment })
    }

    /// Rectangles of the logical registers, in logical order.
    pub fn rects(&self, floorplan: &Floorplan) -> Vec<Rect> {
        self.assignment.iter().map(|&s| floorplan.registers[s]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementObjectives {
    pub thermal_fitness: f64,
    pub area_violation: f64,
}

/// `E[i] = reads[i] * read + writes[i] * write`.
pub fn register_energy(profile: &RegisterProfile, params: &EnergyParams) -> Vec<f64> {
    profile
        .reads
        .iter()
        .zip(&profile.writes)
        .map(|(&r, &w)| r as f64 * params.read + w as f64 * params.write)
        .collect()
}

/// Power density per register in W/um^2, using `window_seconds` to turn
/// energy into power.
pub fn power_densities(
    profile: &RegisterProfile,
    params: &EnergyParams,
    floorplan: &Floorplan,
    window_seconds: f64,
) -> Result<Vec<f64>, RegfileError> {
    if !(window_seconds > 0.0 && window_seconds.is_finite()) {
        return Err(RegfileError::Param("window must be positive".into()));
    }
    if profile.num_registers() != floorplan.num_registers() {
        return Err(RegfileError::Param(format!(
            "profile has {} registers, floorplan {}",
            profile.num_registers(),
            floorplan.num_registers()
        )));
    }
    let cell_area = floorplan.cell_size_um * floorplan.cell_size_um;
    Ok(register_energy(profile, params)
        .iter()
        .zip(&floorplan.registers)
        .map(|(e, r)| (e / window_seconds) / (r.area() as f64 * cell_area))
        .collect())
}

/// Sum over unordered pairs of `dp_i * dp_j / d_ij`, distances in microns
/// between the slots the placement assigns.
pub fn placement_fitness(
    placement: &Placement,
    floorplan: &Floorplan,
    dp: &[f64],
) -> Result<f64, RegfileError> {
    let centers: Vec<(f64, f64)> = placement
        .assignment
        .iter()
        .map(|&s| {
            let (x, y) = floorplan.registers[s].center();
            (x * floorplan.cell_size_um, y * floorplan.cell_size_um)
        })
        .collect();
    pairwise_fitness(&centers, dp)
}

pub(crate) fn pairwise_fitness(centers: &[(f64, f64)], dp: &[f64]) -> Result<f64, RegfileError> {
    if centers.len() != dp.len() {
        return Err(RegfileError::Param(format!(
            "{} power densities for {} registers",
            dp.len(),
            centers.len()
        )));
    }
    let mut f = 0.0;
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            let d = (centers[i].0 - centers[j].0).hypot(centers[i].1 - centers[j].1);
            if d == 0.0 {
                return Err(RegfileError::CoincidentCenters(i, j));
            }
            f += dp[i] * dp[j] / d;
        }
    }
    Ok(f)
}

/// Out-of-grid area plus pairwise overlap area, in cells.
pub fn area_violation(rects: &[Rect], grid_width: usize, grid_height: usize) -> f64 {
    let inside = |r: &Rect| {
        let w = (r.x + r.w).min(grid_width).saturating_sub(r.x);
        let h = (r.y + r.h).min(grid_height).saturating_sub(r.y);
        w * h
    };
    let mut v: usize = rects.iter().map(|r| r.area() - inside(r)).sum();
    for i in 0..rects.len() {
        for j in (i + 1)..rects.len() {
            let (a, b) = (&rects[i], &rects[j]);
            let w = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x));
            let h = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y));
            v += w * h;
        }
    }
    v as f64
}

pub fn area_viability(placement: &Placement, floorplan: &Floorplan) -> f64 {
    area_violation(
        &placement.rects(floorplan),
        floorplan.grid_width,
        floorplan.grid_height,
    )
}

/// Placement search over permutations, minimizing (fitness, area violation).
pub struct PlacementProblem<'a> {
    pub floorplan: &'a Floorplan,
    pub dp: Vec<f64>,
}

impl PlacementProblem<'_> {
    pub fn objectives(&self, placement: &Placement) -> Result<PlacementObjectives, RegfileError> {
        Ok(PlacementObjectives {
            thermal_fitness: placement_fitness(placement, self.floorplan, &self.dp)?,
            area_violation: area_viability(placement, self.floorplan),
        })
    }
}

impl Problem for PlacementProblem<'_> {
    fn num_objectives(&self) -> usize {
        2
    }

    fn random_genome(&self, rng: &mut EvoRng) -> Genome {
        Genome::random_permutation(self.dp.len(), rng)
    }

    fn evaluate(&self, genome: &Genome) -> Option<Vec<f64>> {
        let order = genome.as_permutation()?;
        let p = Placement {
            assignment: order.to_vec(),
        };
        let o = self.objectives(&p).ok()?;
        Some(vec![o.thermal_fitness, o.area_violation])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSolution {
    pub placement: Placement,
    pub objectives: PlacementObjectives,
}

/// NSGA-II over placements for given power densities. The front is sorted by
/// fitness, then assignment.
pub fn optimize_placement_dp(
    dp: &[f64],
    floorplan: &Floorplan,
    config: &EvolutionConfig,
) -> Result<Vec<PlacementSolution>, RegfileError> {
    config.validate().map_err(RegfileError::Param)?;
    if dp.len() != floorplan.num_registers() {
        return Err(RegfileError::Param(format!(
            "{} power densities for {} slots",
            dp.len(),
            floorplan.num_registers()
        )));
    }
    if dp.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(RegfileError::Param(
            "power densities must be finite and nonnegative".into(),
        ));
    }
    // Fail early on geometry the search could never evaluate.
    placement_fitness(&Placement::identity(dp.len()), floorplan, dp)?;
    let problem = PlacementProblem {
        floorplan,
        dp: dp.to_vec(),
    };
    let front = nsga2_run(&problem, config);
    let mut out: Vec<PlacementSolution> = front
        .members
        .iter()
        .filter_map(|ind| {
            let order = ind.genome.as_permutation()?;
            Some(PlacementSolution {
                placement: Placement {
                    assignment: order.to_vec(),
                },
                objectives: PlacementObjectives {
                    thermal_fitness: ind.objectives[0],
                    area_violation: ind.objectives[1],
                },
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.objectives
            .thermal_fitness
            .total_cmp(&b.objectives.thermal_fitness)
            .then_with(|| a.placement.assignment.cmp(&b.placement.assignment))
    });
    Ok(out)
}

/// Profiles the register file and searches placements. The profile window
/// converts energy to power.
pub fn optimize_placement(
    profile: &RegisterProfile,
    params: &EnergyParams,
    floorplan: &Floorplan,
    config: &EvolutionConfig,
) -> Result<Vec<PlacementSolution>, RegfileError> {
    let dp = power_densities(profile, params, floorplan, profile.window_seconds)?;
    optimize_placement_dp(&dp, floorplan, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureReport {
    pub baseline_avg_rise: f64,
    pub baseline_max_rise: f64,
    pub avg_rise: f64,
    pub max_rise: f64,
    pub avg_improvement_pct: f64,
    pub max_improvement_pct: f64,
}

pub fn improvement_pct(baseline: f64, optimized: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        100.0 * (baseline - optimized) / baseline
    }
}

/// Per-slot power of a placement, W.
pub fn slot_power(
    placement: &Placement,
    profile: &RegisterProfile,
    params: &EnergyParams,
) -> Result<Vec<f64>, RegfileError> {
    let w = profile.window_seconds;
    if !(w > 0.0 && w.is_finite()) {
        return Err(RegfileError::Param("window must be positive".into()));
    }
    let e = register_energy(profile, params);
    if e.len() != placement.assignment.len() {
        return Err(RegfileError::Param(
            "profile and placement sizes differ".into(),
        ));
    }
    let mut p = vec![0.0; e.len()];
    for (i, &s) in placement.assignment.iter().enumerate() {
        p[s] = e[i] / w;
    }
    Ok(p)
}

pub fn solve_placement(
    placement: &Placement,
    profile: &RegisterProfile,
    params: &EnergyParams,
    floorplan: &Floorplan,
    material: &MaterialParams,
) -> Result<TemperatureField, RegfileError> {
    let p = slot_power(placement, profile, params)?;
    Ok(solve_steady_state(&assemble_system(floorplan, &p, material)?)?)
}

/// Thermal comparison of a placement against the identity placement.
pub fn temperature_report(
    placement: &Placement,
    profile: &RegisterProfile,
    params: &EnergyParams,
    floorplan: &Floorplan,
    material: &MaterialParams,
) -> Result<TemperatureReport, RegfileError> {
    let base = solve_placement(
        &Placement::identity(placement.assignment.len()),
        profile,
        params,
        floorplan,
        material,
    )?;
    let opt = solve_placement(placement, profile, params, floorplan, material)?;
    let (ba, bm, oa, om) = (base.avg_rise(), base.max_rise(), opt.avg_rise(), opt.max_rise());
    Ok(TemperatureReport {
        baseline_avg_rise: ba,
        baseline_max_rise: bm,
        avg_rise: oa,
        max_rise: om,
        avg_improvement_pct: improvement_pct(ba, oa),
        max_improvement_pct: improvement_pct(bm, om),
    })
}
