//! Cross-module identities on the exact tree backend: transposition,
//! operator adjoints, linear state decomposition, the quadratic cost
//! expansion, solver stationarity, and the tree/ensemble agreement on
//! deterministic dynamics. Everything here is seeded and deterministic.

use slq_core::backward::{duality_gap, solve_backward, verify_transposition};
use slq_core::forward::{decompose_linear, solve_forward};
use slq_core::instances::{
    random_control, random_problem, random_process, random_terminal, InstanceParams,
};
use slq_core::lq::{cost, frechet_gradient, optimality_residual, solve_open_loop, OperatorBundle};
use slq_core::mc::{mc_cost, mc_solve_open_loop, McBasis, McControl, McEnsemble, McProblem};
use slq_core::model::{CoeffTable, LqProblemSpec};
use slq_core::scalar::rel_gap;
use slq_core::tree::{pair_processes, pair_terminal, process_norm};

fn instance(seed: u64, standard: bool) -> LqProblemSpec<f64> {
    let modes = 1 + (seed % 3) as usize;
    let controls = 1 + (seed % 2) as usize;
    let steps = 2 + (seed % 3) as usize;
    let params = if standard {
        InstanceParams::standard(modes, controls, steps)
    } else {
        InstanceParams::general(modes, controls, steps)
    };
    random_problem(seed, &params).expect("random instance is well formed")
}

#[test]
fn transposition_identity_holds_on_random_instances() {
    for seed in 0..10u64 {
        let spec = instance(seed, seed % 2 == 0);
        let n = spec.state_dim();
        let first = spec.init_level;
        let last = spec.last_running_level();
        let y_terminal = random_terminal(seed + 100, spec.tree.depth(), n);
        let xi = random_process(seed + 200, first, last, n);
        let test_eta: Vec<f64> = (0..n).map(|i| 0.3 + 0.2 * i as f64).collect();
        let v1 = random_process(seed + 300, first, last, n);
        let v2 = random_process(seed + 400, first, last, n);
        let report = verify_transposition(&spec, &y_terminal, &xi, &test_eta, &v1, &v2)
            .expect("transposition check runs");
        assert!(
            report.gap_rel <= 1e-12,
            "seed {seed}: transposition gap {:e}",
            report.gap_rel
        );
    }
}

#[test]
fn duality_identity_holds_on_random_instances() {
    for seed in 0..10u64 {
        let spec = instance(seed + 50, seed % 2 == 1);
        let n = spec.state_dim();
        let u = random_control(seed + 500, &spec);
        let y_terminal = random_terminal(seed + 600, spec.tree.depth(), n);
        let xi = random_process(seed + 700, spec.init_level, spec.last_running_level(), n);
        let report = duality_gap(&spec, &u, &y_terminal, &xi).expect("duality check runs");
        assert!(
            report.gap_rel <= 1e-12,
            "seed {seed}: duality gap {:e}",
            report.gap_rel
        );
    }
}

#[test]
fn all_four_operator_adjoints_match_their_pairings() {
    for seed in 0..10u64 {
        let spec = instance(seed + 90, seed % 2 == 0);
        let n = spec.state_dim();
        let first = spec.init_level;
        let last = spec.last_running_level();
        let bundle = OperatorBundle::new(&spec);
        let tree = &spec.tree;

        let u = random_control(seed + 1, &spec);
        let xi = random_process(seed + 2, first, last, n);
        let y_terminal = random_terminal(seed + 3, tree.depth(), n);
        let eta: Vec<f64> = (0..n).map(|i| 0.4 - 0.3 * i as f64).collect();

        // <M u, xi> = <u, M* xi> over the running levels.
        let mu = bundle.apply_m(&u).unwrap().restricted(first, last).unwrap();
        let lhs = pair_processes(&mu, &xi, tree).unwrap();
        let rhs = pair_processes(&u, &bundle.apply_m_star(&xi).unwrap(), tree).unwrap();
        assert!(
            rel_gap(lhs, rhs) <= 1e-12,
            "seed {seed}: M adjoint {:e}",
            rel_gap(lhs, rhs)
        );

        // <N eta, xi> = <eta, N* xi> (Euclidean on the right).
        let neta = bundle
            .apply_n(&eta)
            .unwrap()
            .restricted(first, last)
            .unwrap();
        let lhs = pair_processes(&neta, &xi, tree).unwrap();
        let nstar = bundle.apply_n_star(&xi).unwrap();
        let rhs: f64 = eta.iter().zip(nstar.iter()).map(|(a, b)| a * b).sum();
        assert!(
            rel_gap(lhs, rhs) <= 1e-12,
            "seed {seed}: N adjoint {:e}",
            rel_gap(lhs, rhs)
        );

        // E<Mhat u, yT> = <u, Mhat* yT>.
        let mhat = bundle.apply_hat_m(&u).unwrap();
        let lhs = pair_terminal(&mhat, &y_terminal, tree).unwrap();
        let rhs = pair_processes(&u, &bundle.apply_hat_m_star(&y_terminal).unwrap(), tree).unwrap();
        assert!(
            rel_gap(lhs, rhs) <= 1e-12,
            "seed {seed}: Mhat adjoint {:e}",
            rel_gap(lhs, rhs)
        );

        // E<Nhat eta, yT> = <eta, Nhat* yT>.
        let nhat = bundle.apply_hat_n(&eta).unwrap();
        let lhs = pair_terminal(&nhat, &y_terminal, tree).unwrap();
        let nhat_star = bundle.apply_hat_n_star(&y_terminal).unwrap();
        let rhs: f64 = eta.iter().zip(nhat_star.iter()).map(|(a, b)| a * b).sum();
        assert!(
            rel_gap(lhs, rhs) <= 1e-12,
            "seed {seed}: Nhat adjoint {:e}",
            rel_gap(lhs, rhs)
        );
    }
}

#[test]
fn state_splits_exactly_into_control_initial_and_inhomogeneous_parts() {
    for seed in 0..10u64 {
        let spec = instance(seed + 130, seed % 2 == 1);
        let u = random_control(seed + 4, &spec);
        let full = solve_forward(&spec, &u).unwrap();
        let parts = decompose_linear(&spec, &u).unwrap();
        let mut gap = parts.sum();
        gap.add_scaled(&full, -1.0);
        assert!(
            gap.max_abs() <= 1e-14,
            "seed {seed}: decomposition gap {:e}",
            gap.max_abs()
        );

        // The controlled part is the control-to-state operator applied to u.
        let bundle = OperatorBundle::new(&spec);
        let mut mu = bundle.apply_m(&u).unwrap();
        mu.add_scaled(&parts.controlled, -1.0);
        assert!(mu.max_abs() == 0.0);
    }
}

#[test]
fn cost_expands_exactly_to_second_order() {
    for seed in 0..8u64 {
        let spec = instance(seed + 170, seed % 2 == 0);
        let hom = spec.homogenized();
        let u = random_control(seed + 5, &spec);
        let v = random_control(seed + 6, &spec);
        let base = cost(&spec, &u).unwrap();
        let grad = frechet_gradient(&spec, &u).unwrap();
        let slope = pair_processes(&grad, &v, &spec.tree).unwrap();
        let curvature = cost(&hom, &v).unwrap();
        for eps in [1e-3, 1e-2, 1e-1, 1.0] {
            let mut shifted = u.clone();
            shifted.add_scaled(&v, eps);
            let lhs = cost(&spec, &shifted).unwrap();
            let rhs = base + eps * slope + eps * eps * curvature;
            assert!(
                rel_gap(lhs, rhs) <= 1e-11,
                "seed {seed}, eps {eps}: expansion gap {:e}",
                rel_gap(lhs, rhs)
            );
        }
    }
}

#[test]
fn solver_output_is_stationary_and_unimprovable() {
    for seed in 0..6u64 {
        let spec = instance(seed + 210, true);
        let (u_star, diag) = solve_open_loop(&spec).unwrap();
        assert!(
            diag.gradient_norm <= 1e-9,
            "seed {seed}: residual {:e}",
            diag.gradient_norm
        );
        assert!(optimality_residual(&spec, &u_star).unwrap() <= 1e-9);
        let base = cost(&spec, &u_star).unwrap();
        for probe in 0..20u64 {
            let dir = random_control(1000 * seed + probe, &spec);
            let amp = [1.0, 0.3, 0.05, 0.01][(probe % 4) as usize];
            let mut shifted = u_star.clone();
            shifted.add_scaled(&dir, amp);
            let perturbed = cost(&spec, &shifted).unwrap();
            assert!(
                perturbed >= base - 1e-12 * base.abs().max(1.0),
                "seed {seed}, probe {probe}: cost dropped from {base} to {perturbed}"
            );
        }
    }
}

#[test]
fn adjoint_pre_drift_gap_shrinks_linearly_with_the_step_count() {
    // Same continuous data posed at K = 2, 4, 8: constant tables repose
    // verbatim, and the gap between the full and pre-drift adjoints is a
    // dt-sized correction, so halving dt should roughly halve it.
    let mut gaps = Vec::new();
    for steps in [2usize, 4, 8] {
        let params = InstanceParams {
            level_tables: false,
            ..InstanceParams::general(2, 1, steps)
        };
        let spec: LqProblemSpec<f64> = random_problem(77, &params).unwrap();
        let n = spec.state_dim();
        let y_terminal = slq_core::tree::NodeArray::from_fn(spec.tree.depth(), n, 1, |_, out| {
            for (i, v) in out.iter_mut().enumerate() {
                *v = 0.7 - 0.4 * i as f64;
            }
        });
        let xi = CoeffTable::Constant(
            slq_core::linalg::Mat::from_rows(&[vec![0.3], vec![-0.2]]).unwrap(),
        )
        .to_process(spec.init_level, spec.last_running_level())
        .unwrap();
        let pair = solve_backward(&spec, &y_terminal, Some(&xi)).unwrap();
        gaps.push(pair.pre_drift_gap());
    }
    assert!(
        gaps[0] > gaps[1] && gaps[1] > gaps[2],
        "gaps not decreasing: {gaps:?}"
    );
    assert!(
        gaps[0] / gaps[1] > 1.5,
        "halving dt barely helped: {gaps:?}"
    );
    assert!(
        gaps[1] / gaps[2] > 1.5,
        "halving dt barely helped: {gaps:?}"
    );
}

#[test]
fn tree_and_ensemble_optimise_deterministic_dynamics_identically() {
    // With no noise terms the optimal adapted control is deterministic, so
    // both backends minimise the same function and must agree.
    let mut spec: LqProblemSpec<f64> =
        random_problem(301, &InstanceParams::standard(2, 1, 3)).unwrap();
    spec.coeffs.c = CoeffTable::zero(2, 2);
    spec.coeffs.d_ctrl = CoeffTable::zero(2, 1);
    spec.coeffs.diffusion = CoeffTable::zero(2, 1);

    let (u_tree, diag_tree) = solve_open_loop(&spec).unwrap();
    let problem = McProblem::from_tree_spec(&spec).unwrap();
    let ensemble = McEnsemble::generate(problem.grid.clone(), 2, 0, McBasis::Mean).unwrap();
    let (u_mc, diag_mc) = mc_solve_open_loop(&problem, &ensemble).unwrap();

    assert!((diag_tree.cost - diag_mc.cost).abs() <= 1e-10);
    for k in 0..3 {
        let level = u_tree.level(k);
        for node in 0..level.nodes() {
            assert!(
                (level.node(node)[0] - u_mc.level(k)[0]).abs() <= 1e-8,
                "level {k}, node {node}"
            );
        }
    }
    // Cross-check the cost functionals on a non-optimal control too.
    let mut probe = McControl::zeros(3, 1);
    for k in 0..3 {
        probe.level_mut(k)[0] = 0.1 + 0.2 * k as f64;
    }
    let tree_probe = slq_core::tree::AdaptedProcess::from_fn(0, 2, 1, 1, |k, _, out| {
        out[0] = 0.1 + 0.2 * k as f64;
    });
    let mc_val = mc_cost(&problem, &ensemble, &probe).unwrap().mean;
    let tree_val = cost(&spec, &tree_probe).unwrap();
    assert!(rel_gap(mc_val, tree_val) <= 1e-13);
}

#[test]
fn the_kernels_run_in_single_precision_too() {
    use slq_core::model::{CoefficientSet, LqOptions, SpectralOperator, TerminalTable, WeightSet};
    use slq_core::tree::{TimeGrid, TreeSpace};

    let generator = SpectralOperator::new(vec![0.0f32]).unwrap();
    let mut coeffs = CoefficientSet::zero(1, 1);
    coeffs.b_ctrl = CoeffTable::identity(1);
    let mut weights = WeightSet::default_for(1, 1);
    weights.g = TerminalTable::Constant(slq_core::linalg::Mat::identity(1));
    let tree = TreeSpace::new(TimeGrid::new(0.0f32, 1.0, 4).unwrap()).unwrap();
    let options = LqOptions {
        cg_tol: 1e-6,
        ..LqOptions::default()
    };
    let spec =
        LqProblemSpec::new(generator, coeffs, weights, tree, 0, vec![1.0f32], options).unwrap();
    let (u, diag) = solve_open_loop(&spec).unwrap();
    assert!(
        (diag.cost - 0.25).abs() <= 1e-5,
        "f32 benchmark cost {}",
        diag.cost
    );
    assert!(process_norm(&u, &spec.tree) > 0.0);
}
