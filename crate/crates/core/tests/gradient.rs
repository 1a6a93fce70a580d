mod support;

use dci_core::fem::MaterialModel;
use dci_core::topo::{self, Problem};
use dci_core::{catalog, DensityField, GridSpec};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem() -> Problem {
    let g = GridSpec::square(10);
    let specs = catalog::default_catalog(&g);
    let spec = catalog::find(&specs, "B2").unwrap();
    Problem::new(g, spec, MaterialModel::default(), 0.4, Default::default()).unwrap()
}

fn random_field(p: &Problem, rng: &mut ChaCha8Rng) -> DensityField {
    let mut f = DensityField::new(p.grid, (0..p.grid.n_elements()).map(|_| rng.random_range(0.2..0.9)).collect()).unwrap();
    f.fix_roadway();
    f
}

/// Finite-difference sensitivity of element `e`. The step scales with the
/// density; a fixed tiny step drowns small sensitivities in cancellation.
fn finite_difference(p: &Problem, field: &DensityField, e: usize) -> f64 {
    let compliance = |x: f64| {
        let mut f = field.clone();
        f.values[e] = x;
        topo::analyze(&f, p).unwrap().compliance
    };
    let x = field.values[e];
    support::five_point_derivative(compliance, x, 0.02 * x)
}

#[test]
fn adjoint_sensitivities_match_finite_differences() {
    let p = problem();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let designable: Vec<usize> = (0..p.grid.n_elements()).filter(|&i| p.design_mask()[i]).collect();
    let mut probes = 0;
    let mut worst = 0.0f64;
    for _ in 0..4 {
        let field = random_field(&p, &mut rng);
        let sol = topo::analyze(&field, &p).unwrap();
        let adjoint = topo::raw_compliance_gradient(&field, &p, &sol);
        for &e in designable.choose_multiple(&mut rng, 6) {
            let fd = finite_difference(&p, &field, e);
            let rel = (adjoint[e] - fd).abs() / fd.abs();
            worst = worst.max(rel);
            assert!(rel < 1e-4, "element {e}: adjoint {} vs fd {fd} (rel {rel:e})", adjoint[e]);
            probes += 1;
        }
    }
    assert!(probes >= 20);
    eprintln!("{probes} probes, worst relative error {worst:e}");
}

/// The filtered sensitivity of an element is the filter applied to the
/// finite-difference gradient over its neighbourhood.
#[test]
fn filtered_sensitivities_match_filtered_differences() {
    let p = problem();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let field = random_field(&p, &mut rng);
    let sol = topo::analyze(&field, &p).unwrap();
    let filtered = topo::compliance_gradient(&field, &p, &sol);
    let designable: Vec<usize> = (0..p.grid.n_elements()).filter(|&i| p.design_mask()[i]).collect();
    let mut fd = vec![0.0; p.grid.n_elements()];
    for &e in &designable {
        fd[e] = finite_difference(&p, &field, e);
    }
    for &e in designable.choose_multiple(&mut rng, 20) {
        let want = p.filter().apply_at(e, &field.values, &fd);
        let rel = (filtered[e] - want).abs() / want.abs();
        assert!(rel < 1e-4, "element {e}: filtered {} vs {want} (rel {rel:e})", filtered[e]);
    }
}
