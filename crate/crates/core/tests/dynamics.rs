//! Backward-Euler stepping of corotated tissue: conservation, dissipation,
//! stability and constrained steps.

use cutfem::constraints::{dirichlet_block, ConstraintBlock};
use cutfem::dynamics::{Damping, StepLoads, Stepper, SystemState, TissueModel};
use cutfem::classify::AccelGrid;
use cutfem::fem::Material;
use cutfem::mesh::generate_box_mesh;
use cutfem::Point3;
use nalgebra::Vector3;

fn block(counts: [usize; 3]) -> TissueModel {
    let mesh = generate_box_mesh([2.0, 1.0, 1.0], counts).unwrap();
    TissueModel::homogeneous(mesh, &Material::new(1000.0, 0.3, 1.0).unwrap()).unwrap()
}

fn momentum(tissue: &TissueModel, state: &SystemState) -> Vector3<f64> {
    tissue.mass.iter().zip(&state.tissue.v).map(|(m, v)| v * *m).sum()
}

fn total_energy(tissue: &TissueModel, state: &SystemState) -> f64 {
    tissue.kinetic_energy(&state.tissue) + tissue.elastic_energy(&state.tissue)
}

/// A twisting, stretching initial velocity field.
fn spin_up(tissue: &TissueModel, state: &mut SystemState, scale: f64) {
    for (v, p) in state.tissue.v.iter_mut().zip(&tissue.mesh.nodes) {
        *v = Vector3::new(0.3 * p.x, -p.z, p.y) * scale + Vector3::new(0.1, 0.0, -0.05);
    }
}

#[test]
fn free_body_conserves_linear_momentum() {
    let tissue = block([5, 3, 3]);
    let mut state = SystemState::new(tissue.rest_state(), None, 0.01).unwrap();
    spin_up(&tissue, &mut state, 2.0);
    let p0 = momentum(&tissue, &state);
    let mut stepper = Stepper::new(Damping::NONE);
    for _ in 0..100 {
        stepper.step(&tissue, None, &mut state, &[], &StepLoads::default()).unwrap();
    }
    let p = momentum(&tissue, &state);
    assert!((p - p0).norm() <= 1e-10 * p0.norm(), "{p:?} vs {p0:?}");
}

#[test]
fn undamped_energy_does_not_grow() {
    let tissue = block([5, 3, 3]);
    let mut state = SystemState::new(tissue.rest_state(), None, 0.005).unwrap();
    spin_up(&tissue, &mut state, 0.5);
    let mut stepper = Stepper::new(Damping::NONE);
    let mut last = total_energy(&tissue, &state);
    for step in 0..200 {
        stepper.step(&tissue, None, &mut state, &[], &StepLoads::default()).unwrap();
        let e = total_energy(&tissue, &state);
        assert!(e <= last * (1.0 + 1e-6), "step {step}: {e} > {last}");
        last = e;
    }
}

#[test]
fn large_steps_stay_bounded_under_damping() {
    let mut tissue = block([7, 3, 3]);
    tissue.fix_nodes(|p| p.x <= 1e-12);
    for &tau in &[0.01, 0.1, 1.0] {
        let mut state = SystemState::new(tissue.rest_state(), None, tau).unwrap();
        // stretch the free end, then let go
        for (x, p) in state.tissue.x.iter_mut().zip(&tissue.mesh.nodes) {
            *x = p + Vector3::new(0.1 * p.x, 0.0, 0.2 * p.x * p.x);
        }
        state.tissue.rotations = tissue.rotations(&state.tissue.x);
        let e0 = total_energy(&tissue, &state);
        let mut stepper = Stepper::new(Damping { mass: 0.5, stiffness: 0.01 });
        for _ in 0..200 {
            stepper.step(&tissue, None, &mut state, &[], &StepLoads::default()).unwrap();
        }
        let e = total_energy(&tissue, &state);
        assert!(e.is_finite() && e < 0.05 * e0, "τ = {tau}: {e} vs {e0}");
    }
}

#[test]
fn clamped_block_under_load_settles_to_the_static_solution() {
    let mut tissue = block([7, 3, 3]);
    tissue.fix_nodes(|p| p.x <= 1e-12);
    let mut f = vec![0.0; tissue.num_dofs()];
    for (i, p) in tissue.mesh.nodes.iter().enumerate() {
        if p.x >= 2.0 - 1e-12 {
            f[3 * i + 2] = -0.2;
        }
    }
    let static_u = tissue.solve_static(&f, &[]).unwrap().x;
    let mut state = SystemState::new(tissue.rest_state(), None, 0.05).unwrap();
    let mut stepper = Stepper::new(Damping { mass: 2.0, stiffness: 0.0 });
    let loads = StepLoads {
        tissue_force: Some(&f),
        ..Default::default()
    };
    for _ in 0..600 {
        stepper.step(&tissue, None, &mut state, &[], &loads).unwrap();
    }
    let u = state.tissue.displacement(&tissue.mesh.nodes);
    let scale = static_u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = u.iter().zip(&static_u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    // small deflection: corotated and linear solutions agree to a few percent
    assert!(diff <= 0.03 * scale, "{diff} vs {scale}");
}

#[test]
fn immersed_dirichlet_points_hold_a_free_body() {
    let tissue = block([5, 3, 3]);
    let grid = AccelGrid::build(&tissue.mesh, None, 0.3, 0.0).unwrap();
    let points = vec![Point3::new(0.1, 0.2, 0.3), Point3::new(0.15, 0.8, 0.4), Point3::new(0.12, 0.5, 0.9)];
    let (dirichlet, map) = dirichlet_block(&points, &[Vector3::zeros(); 3], &tissue.mesh, &grid, 0).unwrap();
    let mut state = SystemState::new(tissue.rest_state(), None, 0.01).unwrap();
    let mut f = vec![0.0; tissue.num_dofs()];
    for (i, p) in tissue.mesh.nodes.iter().enumerate() {
        if p.x >= 2.0 - 1e-12 {
            f[3 * i + 1] = 0.1;
        }
    }
    let loads = StepLoads {
        tissue_force: Some(&f),
        ..Default::default()
    };
    let mut stepper = Stepper::new(Damping::default());
    for _ in 0..50 {
        let u = state.tissue.displacement(&tissue.mesh.nodes);
        let blocks: Vec<ConstraintBlock> = vec![dirichlet.to_velocity_level(&u, &state.tissue.velocity(), state.tau)];
        let report = stepper.step(&tissue, None, &mut state, &blocks, &loads).unwrap();
        assert!(report.within_bound(), "{report:?}");
    }
    for (p, q) in map.evaluate(&state.tissue.x).iter().zip(&points) {
        assert!((p - q).norm() < 1e-8, "{p:?} drifted from {q:?}");
    }
    let moved = state.tissue.x.iter().zip(&tissue.mesh.nodes).map(|(x, p)| (x - p).norm()).fold(0.0, f64::max);
    assert!(moved > 1e-4);
}
