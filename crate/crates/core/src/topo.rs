//! SIMP compliance minimization with optimality-criteria updates.

use serde::{Deserialize, Serialize};

use crate::catalog::{self, SupportCondition, SupportSpec};
use crate::error::{Error, Result};
use crate::fem::{FemSolution, FemSystem, MaterialModel};
use crate::filter::SensitivityFilter;
use crate::grid::{mirror_average, DensityField, GridSpec};
use crate::otsu;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub filter_radius: f64,
    pub move_limit: f64,
    /// Stop once the largest per-element change drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            filter_radius: 1.5,
            move_limit: 0.2,
            tolerance: 0.01,
            max_iterations: 300,
        }
    }
}

/// A fully specified compliance-minimization problem for one support
/// condition and volume fraction.
#[derive(Debug)]
pub struct Problem {
    pub grid: GridSpec,
    pub condition: SupportCondition,
    pub material: MaterialModel,
    pub volume_fraction: f64,
    /// `g_bar`: allowed material volume over the designable elements.
    pub volume_bound: f64,
    pub settings: OptimizerSettings,
    fem: FemSystem,
    filter: SensitivityFilter,
}

/// Uniform downward roadway load with unit total magnitude, shared equally
/// by every node of the roadway elements.
pub fn roadway_load(grid: &GridSpec) -> Vec<f64> {
    let mut f = vec![0.0; 2 * grid.n_nodes()];
    let rows = [grid.roadway_row, grid.roadway_row + 1];
    let share = 1.0 / (rows.len() * (grid.width + 1)) as f64;
    for node_row in rows {
        for node_col in 0..=grid.width {
            f[2 * grid.node(node_col, node_row) + 1] = -share;
        }
    }
    f
}

/// Default 80x80 problem from the default catalog.
pub fn build_problem(condition_id: &str, volume_fraction: f64) -> Result<Problem> {
    let grid = GridSpec::default();
    let specs = catalog::default_catalog(&grid);
    let spec = catalog::find(&specs, condition_id)?;
    Problem::new(
        grid,
        spec,
        MaterialModel::default(),
        volume_fraction,
        OptimizerSettings::default(),
    )
}

impl Problem {
    pub fn new(
        grid: GridSpec,
        spec: &SupportSpec,
        material: MaterialModel,
        volume_fraction: f64,
        settings: OptimizerSettings,
    ) -> Result<Self> {
        Self::with_load(grid, spec, material, volume_fraction, settings, roadway_load(&grid))
    }

    pub fn with_load(
        grid: GridSpec,
        spec: &SupportSpec,
        material: MaterialModel,
        volume_fraction: f64,
        settings: OptimizerSettings,
        load: Vec<f64>,
    ) -> Result<Self> {
        if !(volume_fraction > 0.0 && volume_fraction <= 1.0) {
            return Err(Error::InvalidVolumeFraction(volume_fraction));
        }
        material.validate()?;
        if !(settings.move_limit > 0.0) {
            return Err(Error::Invalid(format!("move limit {} must be positive", settings.move_limit)));
        }
        let condition = SupportCondition::from_spec(spec, &grid)?;
        let fem = FemSystem::new(grid, material.nu, &condition.fixed_dofs(&grid), load)?;
        let filter = SensitivityFilter::new(&grid, &condition.design_mask, settings.filter_radius);
        let volume_bound = volume_fraction * condition.n_designable() as f64 * grid.element_size;
        Ok(Self {
            grid,
            condition,
            material,
            volume_fraction,
            volume_bound,
            settings,
            fem,
            filter,
        })
    }

    pub fn design_mask(&self) -> &[bool] {
        &self.condition.design_mask
    }

    pub fn fem(&self) -> &FemSystem {
        &self.fem
    }

    pub fn filter(&self) -> &SensitivityFilter {
        &self.filter
    }

    /// Uniform start: designable elements at the volume fraction, roadway
    /// solid, remaining non-design elements void.
    pub fn initial_field(&self) -> DensityField {
        let mut field = DensityField::filled(self.grid, 0.0);
        for (v, &d) in field.values.iter_mut().zip(self.design_mask()) {
            if d {
                *v = self.volume_fraction;
            }
        }
        field.fix_roadway();
        field
    }

    /// Material volume `g(x) = sum x_i s_i` over designable elements.
    pub fn volume(&self, field: &DensityField) -> f64 {
        designable_volume(&field.values, self.design_mask()) * self.grid.element_size
    }

    pub fn mean_density(&self, field: &DensityField) -> f64 {
        designable_volume(&field.values, self.design_mask()) / self.condition.n_designable() as f64
    }

    pub fn analyze(&self, field: &DensityField) -> Result<FemSolution> {
        self.fem.analyze(field, &self.material)
    }
}

fn designable_volume(values: &[f64], mask: &[bool]) -> f64 {
    values.iter().zip(mask).filter(|(_, &d)| d).map(|(v, _)| v).sum()
}

pub fn analyze(field: &DensityField, problem: &Problem) -> Result<FemSolution> {
    problem.analyze(field)
}

/// Raw adjoint sensitivity `dC/dx_i = -p x_i^(p-1) (E0 - Emin) u_i^T k0 u_i`
/// on designable elements, zero elsewhere.
pub fn raw_compliance_gradient(field: &DensityField, problem: &Problem, solution: &FemSolution) -> Vec<f64> {
    field
        .values
        .iter()
        .zip(&solution.unit_energies)
        .zip(problem.design_mask())
        .map(|((&x, &energy), &d)| {
            if d {
                -problem.material.youngs_derivative(x) * energy
            } else {
                0.0
            }
        })
        .collect()
}

/// Filtered sensitivities used by the optimality-criteria update.
pub fn compliance_gradient(field: &DensityField, problem: &Problem, solution: &FemSolution) -> Vec<f64> {
    let raw = raw_compliance_gradient(field, problem, solution);
    problem.filter.apply(&field.values, &raw)
}

/// One optimality-criteria step with a bisected Lagrange multiplier.
///
/// The result satisfies the volume bound to 1e-4 in mean designable
/// density, respects the move limit, and is mirror symmetric with the
/// roadway solid.
pub fn oc_update(
    field: &DensityField,
    gradient: &[f64],
    problem: &Problem,
    move_limit: f64,
) -> Result<DensityField> {
    if !(move_limit > 0.0) {
        return Err(Error::Invalid(format!("move limit {move_limit} must be positive")));
    }
    let mask = problem.design_mask();
    let n_design = problem.condition.n_designable() as f64;
    if let Some((i, g)) = gradient
        .iter()
        .enumerate()
        .find(|&(i, g)| mask[i] && !(*g <= 0.0))
    {
        return Err(Error::Bisection(format!(
            "sensitivity {g} at element {i} is not non-positive; compliance gradient signs are inconsistent"
        )));
    }

    let x = &field.values;
    let dv = problem.grid.element_size;
    let mut candidate = x.clone();
    let trial = |lambda: f64, out: &mut Vec<f64>| -> f64 {
        let mut total = 0.0;
        for i in 0..x.len() {
            if !mask[i] {
                continue;
            }
            let lo = (x[i] - move_limit).max(0.0);
            let hi = (x[i] + move_limit).min(1.0);
            let b = x[i] * (-gradient[i] / (lambda * dv)).sqrt();
            let v = b.clamp(lo, hi);
            out[i] = v;
            total += v;
        }
        total / n_design
    };

    let target = problem.volume_fraction;
    // volume is non-increasing in lambda; bracket geometrically
    let mut hi = 1.0f64;
    while trial(hi, &mut candidate) > target {
        hi *= 10.0;
        if hi > 1e300 {
            return Err(Error::Bisection("cannot reach the volume bound from above".into()));
        }
    }
    let mut lo = hi;
    while trial(lo, &mut candidate) < target {
        lo *= 0.1;
        if lo < 1e-300 {
            return Err(Error::Bisection(format!(
                "volume bound {target} unreachable within move limit {move_limit}"
            )));
        }
    }
    for _ in 0..500 {
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
        let mid = (lo * hi).sqrt();
        if trial(mid, &mut candidate) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mean_lo = trial(lo, &mut candidate);
    let mut values = candidate.clone();
    let mean_hi = trial(hi, &mut candidate);
    if (mean_hi - target).abs() < (mean_lo - target).abs() {
        values.copy_from_slice(&candidate);
    }

    let mut next = DensityField {
        grid: field.grid,
        values,
    };
    next.symmetrize();
    next.fix_roadway();
    let achieved = problem.mean_density(&next);
    if (achieved - target).abs() > 1e-4 {
        return Err(Error::Bisection(format!(
            "volume fraction {achieved} misses target {target}"
        )));
    }
    Ok(next)
}

/// One generated design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Alternative {
    pub id: String,
    pub condition_id: String,
    pub volume_fraction: f64,
    pub raw_field: DensityField,
    pub binary_field: DensityField,
    pub iterations: usize,
    pub converged: bool,
    /// Compliance of the final raw field under its own condition.
    pub compliance: f64,
}

pub fn alternative_id(condition_id: &str, volume_fraction: f64) -> String {
    format!("{condition_id}-{volume_fraction:.2}")
}

/// Run the optimizer loop to convergence or the iteration cap, then
/// binarize the result.
pub fn optimize(problem: &Problem) -> Result<Alternative> {
    let settings = problem.settings;
    let mut field = problem.initial_field();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iterations {
        let solution = problem.analyze(&field)?;
        let mut raw = raw_compliance_gradient(&field, problem, &solution);
        mirror_average(&problem.grid, &mut raw);
        let mut gradient = problem.filter.apply(&field.values, &raw);
        mirror_average(&problem.grid, &mut gradient);
        let next = oc_update(&field, &gradient, problem, settings.move_limit)?;
        let change = field
            .values
            .iter()
            .zip(&next.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        field = next;
        iterations += 1;
        log::trace!(
            "{} vf={:.2} it={iterations} c={:.6e} change={change:.4}",
            problem.condition.id,
            problem.volume_fraction,
            solution.compliance
        );
        if change < settings.tolerance {
            converged = true;
            break;
        }
    }
    let compliance = problem.analyze(&field)?.compliance;
    let binary_field = otsu::otsu_binarize_masked(&field, problem.design_mask())?;
    Ok(Alternative {
        id: alternative_id(&problem.condition.id, problem.volume_fraction),
        condition_id: problem.condition.id.clone(),
        volume_fraction: problem.volume_fraction,
        raw_field: field,
        binary_field,
        iterations,
        converged,
        compliance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::DesignRegion;

    fn small_problem(n: usize, vf: f64) -> Problem {
        let grid = GridSpec::square(n);
        let spec = SupportSpec {
            id: "T".into(),
            node_rows: (grid.roadway_row - 2, grid.roadway_row),
            region: DesignRegion::Full,
        };
        Problem::new(grid, &spec, MaterialModel::default(), vf, OptimizerSettings::default()).unwrap()
    }

    #[test]
    fn build_problem_volume_bound() {
        let p = build_problem("B5", 0.10).unwrap();
        assert!((p.volume_bound - 0.10 * p.condition.n_designable() as f64).abs() < 1e-9);
        let a0 = build_problem("A0", 0.02).unwrap();
        let lower = a0.grid.index(60, 10);
        assert!(!a0.design_mask()[lower]);
        assert!(matches!(build_problem("Z9", 0.1), Err(Error::UnknownCondition(_))));
        assert!(matches!(build_problem("B5", 0.0), Err(Error::InvalidVolumeFraction(_))));
        assert!(matches!(build_problem("B5", 1.2), Err(Error::InvalidVolumeFraction(_))));
    }

    #[test]
    fn zero_density_has_zero_raw_gradient() {
        let p = small_problem(8, 0.3);
        let mut f = p.initial_field();
        f.values[3] = 0.0;
        let sol = p.analyze(&f).unwrap();
        let g = raw_compliance_gradient(&f, &p, &sol);
        assert_eq!(g[3], 0.0);
        assert!(g.iter().all(|v| *v <= 0.0));
    }

    #[test]
    fn oc_fixed_point_under_uniform_sensitivity() {
        let p = small_problem(8, 0.3);
        let f = p.initial_field();
        let g: Vec<f64> = p.design_mask().iter().map(|&d| if d { -2.5 } else { 0.0 }).collect();
        let next = oc_update(&f, &g, &p, 0.2).unwrap();
        for (a, b) in f.values.iter().zip(&next.values) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn oc_respects_move_limit_and_volume() {
        let p = small_problem(8, 0.5);
        let f = p.initial_field();
        let g: Vec<f64> = (0..64)
            .map(|i| if p.design_mask()[i] { -((i * 37 % 11) as f64 + 0.5) } else { 0.0 })
            .collect();
        let mut g = g;
        mirror_average(&p.grid, &mut g);
        let next = oc_update(&f, &g, &p, 0.2).unwrap();
        assert!((p.mean_density(&next) - 0.5).abs() <= 1e-4);
        for (i, v) in next.values.iter().enumerate() {
            if p.design_mask()[i] {
                assert!((0.3 - 1e-12..=0.7 + 1e-12).contains(v));
            }
        }
        assert!(next.is_mirror_symmetric());
    }

    #[test]
    fn oc_rejects_positive_sensitivity() {
        let p = small_problem(6, 0.4);
        let f = p.initial_field();
        let mut g = vec![-1.0; 36];
        g[0] = 3.0;
        assert!(matches!(oc_update(&f, &g, &p, 0.2), Err(Error::Bisection(_))));
    }

    #[test]
    fn iteration_cap_yields_unconverged_alternative() {
        let grid = GridSpec::square(12);
        let spec = catalog::default_catalog(&grid)[1].clone();
        let settings = OptimizerSettings {
            max_iterations: 2,
            tolerance: 0.0,
            ..Default::default()
        };
        let p = Problem::new(grid, &spec, MaterialModel::default(), 0.3, settings).unwrap();
        let alt = optimize(&p).unwrap();
        assert_eq!(alt.iterations, 2);
        assert!(!alt.converged);
        assert!(alt.raw_field.is_mirror_symmetric());
    }

    #[test]
    fn mirrored_field_has_identical_compliance() {
        let p = small_problem(8, 0.4);
        let values: Vec<f64> = (0..64).map(|i| 0.2 + 0.7 * ((i * 13 % 17) as f64 / 17.0)).collect();
        let f = DensityField::new(p.grid, values).unwrap();
        let c = p.analyze(&f).unwrap().compliance;
        let cm = p.analyze(&f.mirrored()).unwrap().compliance;
        assert!((c - cm).abs() <= 1e-10 * c, "{c} vs {cm}");
    }
}
