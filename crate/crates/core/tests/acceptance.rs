//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured quantities (run with `--nocapture` to see them).

use std::f64::consts::PI;

use maxwell_fem::assembly::{
    assemble_curl_coupling, assemble_curl_coupling_direct, assemble_mass_nedelec,
    assemble_mass_nedelec_with_rule, assemble_mass_rt, assemble_mass_rt_with_rule,
    assemble_mass_sigma, l2_error_field, l2_norm_field, QuadratureRule, SourceField, Space,
    TensorField, VectorField,
};
use maxwell_fem::derham::{build_complex, DeRhamComplex};
use maxwell_fem::experiments::{convergence_study, BInitMode, CavitySolution, DtPolicy};
use maxwell_fem::mesh::{generate_box_mesh, reference_tet, two_tet_mesh, BoxExtents, TetMesh};
use maxwell_fem::projections::{constrained_project_rt, l2_project_rt, riesz_project_nedelec};
use maxwell_fem::semidiscrete::{build_system, initial_state, run, step_crank_nicolson, Stepper};
use maxwell_fem::sparse::{schur_solve, CsrMatrix, DenseVector};

fn pseudo(i: usize) -> f64 {
    (((i as f64) + 1.0) * 43.1234).sin() * 0.5
}

fn static_complex(n: usize) -> &'static DeRhamComplex<'static> {
    let mesh: &'static TetMesh = Box::leak(Box::new(
        generate_box_mesh(n, BoxExtents::unit_cube()).unwrap(),
    ));
    Box::leak(Box::new(build_complex(mesh)))
}

fn max_entry_gap(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
    CsrMatrix::linear_combination(&[(1.0, a), (-1.0, b)])
        .unwrap()
        .max_abs()
}

/// Criterion 1: D*C and C*G vanish exactly (integer arithmetic, zero
/// tolerance) on the single-tet, two-tet, and box meshes n = 1..4.
#[test]
fn acceptance_1_derham_exactness() {
    let mut meshes: Vec<(String, TetMesh)> = vec![
        ("single-tet".into(), reference_tet()),
        ("two-tet".into(), two_tet_mesh()),
    ];
    for n in 1..=4usize {
        meshes.push((
            format!("box n={n}"),
            generate_box_mesh(n, BoxExtents::unit_cube()).unwrap(),
        ));
    }
    for (name, mesh) in &meshes {
        let cx = build_complex(mesh);
        let dc = cx.div_matrix().matmul(cx.curl_matrix()).unwrap().max_abs();
        let cg = cx.curl_matrix().matmul(cx.grad_matrix()).unwrap().max_abs();
        assert_eq!(dc, 0.0, "D*C not exactly zero on {name}");
        assert_eq!(cg, 0.0, "C*G not exactly zero on {name}");
    }
    println!(
        "criterion 1 PASS: de Rham exactness integer-exact on {} meshes",
        meshes.len()
    );
}

/// Criterion 2: projector laws at n = 4 -- idempotence to 1e-12,
/// contractivity to 1e-10, Pythagoras to 1e-10 relative, and reproduction of
/// discrete fields by the Riesz projection to 1e-11.
#[test]
fn acceptance_2_projector_laws() {
    let cx = static_complex(4);
    let tol = 1e-12;

    // Smooth non-polynomial target.
    let u = VectorField::new(|x| {
        [
            (PI * x[0]).sin() * (PI * x[1]).cos(),
            x[2] * x[2],
            (PI * x[2]).sin() * x[0],
        ]
    });
    let first = l2_project_rt(cx, &u, tol).unwrap();

    // Idempotence: re-project the projected field.
    let coeffs = first.coefficients.clone();
    let uh = VectorField::new(move |x| {
        let (cell, _) = cx.locate(x).expect("inside mesh");
        cx.eval_rt(cell, &coeffs, x)
    });
    let second = l2_project_rt(cx, &uh, tol).unwrap();
    let scale = first.coefficients.max_abs().max(1.0);
    let mut idem: f64 = 0.0;
    for i in 0..first.coefficients.len() {
        idem = idem.max((first.coefficients[i] - second.coefficients[i]).abs());
    }
    assert!(idem <= 1e-12 * scale, "idempotence residual {idem:.3e}");

    // Contractivity and Pythagoras in the shared degree-4 inner product.
    let m_rt = assemble_mass_rt(cx, &TensorField::identity()).unwrap();
    let proj_sq = first
        .coefficients
        .dot(&m_rt.spmv(&first.coefficients).unwrap());
    let u_norm = l2_norm_field(cx, &u, 4).unwrap();
    assert!(
        proj_sq.sqrt() <= u_norm * (1.0 + 1e-10),
        "contractivity violated"
    );
    let pyth = (u_norm * u_norm - first.l2_error * first.l2_error - proj_sq).abs();
    assert!(
        pyth <= 1e-10 * u_norm * u_norm,
        "Pythagoras residual {pyth:.3e}"
    );

    // Riesz projection restricted to the discrete space is the identity.
    let target =
        DenseVector::from_vec((0..cx.interior_edge_count()).map(pseudo).collect()).unwrap();
    let vals = target.clone();
    let w = VectorField::new(move |x| {
        let (cell, lambda) = cx.locate(x).expect("inside mesh");
        cx.eval_nedelec(cell, &vals, &lambda)
    });
    let curls = target.clone();
    let w_curl = VectorField::new(move |x| {
        let (cell, _) = cx.locate(x).expect("inside mesh");
        cx.eval_nedelec_curl(cell, &curls)
    });
    // The curl-curl block conditions like h^-2, so the identity check needs a
    // solver residual below the 1e-11 reproduction bound.
    let riesz = riesz_project_nedelec(cx, &w, &w_curl, 1e-13).unwrap();
    let rscale = target.max_abs().max(1.0);
    let mut reproduction: f64 = 0.0;
    for i in 0..target.len() {
        reproduction = reproduction.max((riesz.coefficients[i] - target[i]).abs());
    }
    assert!(
        reproduction <= 1e-11 * rscale,
        "Riesz identity residual {reproduction:.3e}"
    );

    // Riesz contractivity in the H(curl) norm.
    let a0 = CavitySolution::potential_field(0.25);
    let b0 = CavitySolution::magnetic_field(0.25);
    let rp = riesz_project_nedelec(cx, &a0, &b0, tol).unwrap();
    let a_l2 = l2_norm_field(cx, &a0, 4).unwrap();
    let c_l2 = l2_norm_field(cx, &b0, 4).unwrap();
    let hcurl = (a_l2 * a_l2 + c_l2 * c_l2).sqrt();
    // |R_h u|_a <= |u|_a: compare through the assembled a-inner product.
    let m_e = assemble_mass_nedelec(cx, &TensorField::identity()).unwrap();
    let k = maxwell_fem::assembly::assemble_curl_stiffness(cx).unwrap();
    let a_mat = CsrMatrix::linear_combination(&[(1.0, &m_e), (1.0, &k)]).unwrap();
    let rp_norm = rp
        .coefficients
        .dot(&a_mat.spmv(&rp.coefficients).unwrap())
        .sqrt();
    assert!(
        rp_norm <= hcurl * (1.0 + 1e-10),
        "Riesz contractivity violated"
    );

    println!(
        "criterion 2 PASS: idempotence {idem:.2e}, Pythagoras {pyth:.2e}, Riesz identity {reproduction:.2e}"
    );
}

/// Criterion 3: constrained projection at n = 4 -- KKT residuals and
/// projected divergence at 1e-10, minimizer property against 20 sampled
/// divergence-free members.
#[test]
fn acceptance_3_constrained_projection() {
    let cx = static_complex(4);
    let b0 = VectorField::new(|x| [x[1] * x[2], -x[0], (PI * x[2]).cos() + x[0] * x[0]]);

    // Raw saddle-point solve for the KKT residuals.
    let m = assemble_mass_rt(cx, &TensorField::identity()).unwrap();
    let rhs = maxwell_fem::assembly::assemble_rt_load(cx, &b0, &QuadratureRule::degree4()).unwrap();
    let zeros = DenseVector::zeros(cx.cell_dofs());
    let sol = schur_solve(&m, cx.div_matrix(), &rhs, &zeros, 1e-11).unwrap();
    assert!(
        sol.primal_residual <= 1e-10,
        "primal residual {:.3e}",
        sol.primal_residual
    );
    assert!(
        sol.constraint_residual <= 1e-10,
        "constraint residual {:.3e}",
        sol.constraint_residual
    );

    // Projection wrapper: divergence of the projected field.
    let report = constrained_project_rt(cx, &b0, 1e-11).unwrap();
    let div = report.div_residual.unwrap();
    assert!(div <= 1e-10, "projected divergence {div:.3e}");

    // Minimizer against 20 sampled members of the constraint kernel.
    for trial in 0..20 {
        let alpha = DenseVector::from_vec(
            (0..cx.interior_edge_count())
                .map(|i| pseudo(i + 131 * trial + 1))
                .collect(),
        )
        .unwrap();
        let z = cx.curl_interior_matrix().spmv(&alpha).unwrap();
        let dist = l2_error_field(cx, &z, Space::Rt, &b0, 4).unwrap();
        assert!(
            report.l2_error <= dist * (1.0 + 1e-10),
            "sample {trial} beats the projection"
        );
    }
    println!(
        "criterion 3 PASS: KKT ({:.2e}, {:.2e}), divergence {div:.2e}, minimizer over 20 samples",
        sol.primal_residual, sol.constraint_residual
    );
}

/// Criterion 4: discrete Gauss law over a 512-step cavity run at n = 4 --
/// per-step drift of D*beta at 1e-12, cumulative at 1e-10, and an exactly
/// zero initial divergence under the potential initialization (B(0) = 0 for
/// the cavity, so the potential is identically zero and beta(0) = 0).
#[test]
fn acceptance_4_discrete_gauss_law() {
    let cx = static_complex(4);
    let sys = build_system(
        cx,
        &TensorField::identity(),
        &TensorField::identity(),
        &TensorField::scalar(0.0),
    )
    .unwrap();
    let dt = 1.0 / 512.0;
    let mut summary = Vec::new();
    for mode in [BInitMode::Potential, BInitMode::Constrained] {
        let state0 = initial_state(
            &sys,
            &CavitySolution::electric_field(0.0),
            &CavitySolution::b_init(mode, 0.0),
            0.0,
            1e-12,
        )
        .unwrap();
        let g0 = cx.div_matrix().spmv(&state0.beta).unwrap();
        if mode == BInitMode::Potential {
            assert_eq!(
                g0.max_abs(),
                0.0,
                "potential initialization must give exactly zero divergence at t = 0"
            );
        }
        let mut state = state0;
        let mut g_prev = g0.clone();
        let mut per_step: f64 = 0.0;
        let mut cumulative: f64 = 0.0;
        for _ in 0..512 {
            let (next, _) =
                step_crank_nicolson(&sys, &state, dt, &SourceField::zero(), 1e-12).unwrap();
            let g = cx.div_matrix().spmv(&next.beta).unwrap();
            per_step = per_step.max(g.subtract(&g_prev).max_abs());
            cumulative = cumulative.max(g.subtract(&g0).max_abs());
            g_prev = g;
            state = next;
        }
        assert!(
            per_step <= 1e-12,
            "{}: per-step drift {per_step:.3e}",
            mode.name()
        );
        assert!(
            cumulative <= 1e-10,
            "{}: cumulative drift {cumulative:.3e}",
            mode.name()
        );
        summary.push(format!(
            "{}: step {per_step:.2e}, cumulative {cumulative:.2e}",
            mode.name()
        ));
    }
    println!("criterion 4 PASS: {}", summary.join("; "));
}

/// Criterion 5: energy identity -- conservation to 1e-10 relative over 512
/// steps without conductivity or sources, monotone decay with per-step slack
/// 1e-12 for sigma = I, and trapezoidal balance residual at 1e-10 per step
/// with forcing.
#[test]
fn acceptance_5_energy_identity() {
    let cx = static_complex(2);
    let dt = 1.0 / 512.0;

    // Conservative case.
    let sys0 = build_system(
        cx,
        &TensorField::identity(),
        &TensorField::identity(),
        &TensorField::scalar(0.0),
    )
    .unwrap();
    let state0 = initial_state(
        &sys0,
        &CavitySolution::electric_field(0.0),
        &CavitySolution::b_init(BInitMode::Potential, 0.0),
        0.0,
        1e-12,
    )
    .unwrap();
    let result = run(
        &sys0,
        &state0,
        1.0,
        dt,
        &SourceField::zero(),
        Stepper::CrankNicolson,
        1e-12,
    )
    .unwrap();
    let e0 = result.initial_energy;
    let drift = result
        .records
        .iter()
        .fold(0.0_f64, |m, r| m.max((r.energy - e0).abs()))
        / e0;
    assert!(drift <= 1e-10, "relative energy drift {drift:.3e}");

    // Conductive case: monotone non-increase with 1e-12 per-step slack.
    let sys1 = build_system(
        cx,
        &TensorField::identity(),
        &TensorField::identity(),
        &TensorField::identity(),
    )
    .unwrap();
    let state1 = initial_state(
        &sys1,
        &CavitySolution::electric_field(0.0),
        &CavitySolution::b_init(BInitMode::Potential, 0.0),
        0.0,
        1e-12,
    )
    .unwrap();
    let damped = run(
        &sys1,
        &state1,
        1.0,
        dt,
        &SourceField::zero(),
        Stepper::CrankNicolson,
        1e-12,
    )
    .unwrap();
    let mut prev = damped.initial_energy;
    for r in &damped.records {
        assert!(
            r.energy <= prev + 1e-12 * damped.initial_energy,
            "energy increased at t = {}",
            r.t
        );
        prev = r.energy;
    }

    // Forced case: per-step trapezoidal balance.
    let forced = run(
        &sys1,
        &state1,
        1.0,
        dt,
        &CavitySolution::sigma_compensating_source(),
        Stepper::CrankNicolson,
        1e-12,
    )
    .unwrap();
    let residual = forced.max_energy_identity_residual();
    assert!(
        residual <= 1e-10,
        "per-step balance residual {residual:.3e}"
    );

    println!("criterion 5 PASS: drift {drift:.2e}, monotone decay, forced balance {residual:.2e}");
}

/// Criterion 6: initial-data convergence for the phase-shifted cavity
/// (t0 = 1/(4 sqrt 2), where B is nonzero): both field errors strictly
/// decrease over n = 2, 4, 8 for both initializations.
#[test]
fn acceptance_6_initial_data_convergence() {
    let t0 = 1.0 / (4.0 * std::f64::consts::SQRT_2);
    let mut lines = Vec::new();
    for mode in [BInitMode::Potential, BInitMode::Constrained] {
        let mut errs_e = Vec::new();
        let mut errs_b = Vec::new();
        for n in [2usize, 4, 8] {
            let mesh = generate_box_mesh(n, BoxExtents::unit_cube()).unwrap();
            let cx = build_complex(&mesh);
            let sys = build_system(
                &cx,
                &TensorField::identity(),
                &TensorField::identity(),
                &TensorField::scalar(0.0),
            )
            .unwrap();
            let state = initial_state(
                &sys,
                &CavitySolution::electric_field(t0),
                &CavitySolution::b_init(mode, t0),
                t0,
                1e-12,
            )
            .unwrap();
            let err_e = l2_error_field(
                &cx,
                &state.alpha,
                Space::Nedelec,
                &CavitySolution::electric_field(t0),
                4,
            )
            .unwrap();
            let err_b = l2_error_field(
                &cx,
                &state.beta,
                Space::Rt,
                &CavitySolution::magnetic_field(t0),
                4,
            )
            .unwrap();
            errs_e.push(err_e);
            errs_b.push(err_b);
        }
        for w in errs_e.windows(2) {
            assert!(
                w[1] < w[0],
                "{}: E error not decreasing: {errs_e:?}",
                mode.name()
            );
        }
        for w in errs_b.windows(2) {
            assert!(
                w[1] < w[0],
                "{}: B error not decreasing: {errs_b:?}",
                mode.name()
            );
        }
        lines.push(format!(
            "{}: E {:.2e}->{:.2e}->{:.2e}, B {:.2e}->{:.2e}->{:.2e}",
            mode.name(),
            errs_e[0],
            errs_e[1],
            errs_e[2],
            errs_b[0],
            errs_b[1],
            errs_b[2]
        ));
    }
    println!("criterion 6 PASS: {}", lines.join("; "));
}

/// Criterion 7: qualitative convergence of the scheme -- L-infinity-in-time
/// L2 errors strictly decrease over n = 2, 4, 8 with dt = h/8 and T = 0.25,
/// and the observed orders sit inside the engineering band [0.8, 1.6].
#[test]
fn acceptance_7_scheme_convergence() {
    let table = convergence_study(&[2, 4, 8], 0.25, DtPolicy::HOverEight).unwrap();
    for w in table.rows.windows(2) {
        assert!(w[1].err_e < w[0].err_e, "E errors not decreasing");
        assert!(w[1].err_b < w[0].err_b, "B errors not decreasing");
    }
    for row in table.rows.iter().skip(1) {
        let oe = row.order_e.unwrap();
        let ob = row.order_b.unwrap();
        assert!(
            (0.8..=1.6).contains(&oe),
            "order_E {oe:.3} outside [0.8, 1.6] at n = {}",
            row.n
        );
        assert!(
            (0.8..=1.6).contains(&ob),
            "order_B {ob:.3} outside [0.8, 1.6] at n = {}",
            row.n
        );
    }
    let last = table.rows.last().unwrap();
    println!(
        "criterion 7 PASS: err_E {:.3e} (order {:.2}), err_B {:.3e} (order {:.2})",
        last.err_e,
        last.order_e.unwrap(),
        last.err_b,
        last.order_b.unwrap()
    );
}

/// Criterion 8: oracle equivalence -- the factorized coupling equals direct
/// quadrature entrywise to 1e-12 at n = 2, and the degree-2 mass assembly
/// matches the degree-4 oracle to 1e-12 for constant coefficients.
#[test]
fn acceptance_8_oracle_equivalence() {
    let cx = static_complex(2);
    let anisotropic = TensorField::constant([[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.0]]);

    let product = assemble_curl_coupling(cx, &anisotropic).unwrap();
    let direct = assemble_curl_coupling_direct(cx, &anisotropic).unwrap();
    let coupling_gap = max_entry_gap(&product, &direct);
    assert!(
        coupling_gap <= 1e-12,
        "coupling dual-path gap {coupling_gap:.3e}"
    );

    let rule4 = QuadratureRule::degree4();
    let m_e2 = assemble_mass_nedelec(cx, &anisotropic).unwrap();
    let m_e4 = assemble_mass_nedelec_with_rule(cx, &anisotropic, &rule4).unwrap();
    let gap_e = max_entry_gap(&m_e2, &m_e4);
    assert!(gap_e <= 1e-12, "Nedelec mass oracle gap {gap_e:.3e}");

    let m_b2 = assemble_mass_rt(cx, &anisotropic).unwrap();
    let m_b4 = assemble_mass_rt_with_rule(cx, &anisotropic, &rule4).unwrap();
    let gap_b = max_entry_gap(&m_b2, &m_b4);
    assert!(gap_b <= 1e-12, "RT mass oracle gap {gap_b:.3e}");

    let k_e2 = assemble_mass_sigma(cx, &anisotropic).unwrap();
    let k_e4 = assemble_mass_nedelec_with_rule(cx, &anisotropic, &rule4).unwrap();
    let gap_k = max_entry_gap(&k_e2, &k_e4);
    assert!(gap_k <= 1e-12, "conductivity mass oracle gap {gap_k:.3e}");

    println!(
        "criterion 8 PASS: coupling {coupling_gap:.2e}, masses ({gap_e:.2e}, {gap_b:.2e}, {gap_k:.2e})"
    );
}

/// Criterion 9: two executions of the criterion-7 study produce byte-identical
/// CSV artifacts.
#[test]
fn acceptance_9_determinism() {
    let a = convergence_study(&[2, 4, 8], 0.25, DtPolicy::HOverEight)
        .unwrap()
        .to_csv();
    let b = convergence_study(&[2, 4, 8], 0.25, DtPolicy::HOverEight)
        .unwrap()
        .to_csv();
    assert_eq!(
        a.as_bytes(),
        b.as_bytes(),
        "convergence CSVs differ between runs"
    );
    println!(
        "criterion 9 PASS: byte-identical CSV over {} bytes",
        a.len()
    );
}
