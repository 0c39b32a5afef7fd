use num_complex::Complex64;
use oseen_core::adaptivity::mark_max_strategy;
use oseen_core::assembly::{assemble_forms, build_dual_pencil, build_primal_pencil, restrict_free, OseenParams};
use oseen_core::eigensolver::{dense_solve, shift_invert_solve, verify_residuals, SolverConfig};
use oseen_core::estimator::primal_indicators;
use oseen_core::fem::{build_dofmap, eval_basis, AffineMap, ElementKind, Role};
use oseen_core::mesh::{generate_lshape, generate_square, MarkedSet, Mesh};
use oseen_core::sparse::CsrMatrix;
use proptest::prelude::*;

fn element() -> impl Strategy<Value = ElementKind> {
    prop_oneof![Just(ElementKind::Mini), Just(ElementKind::TaylorHood)]
}

fn beta() -> impl Strategy<Value = [f64; 2]> {
    (-20.0..20.0f64, -20.0..20.0f64).prop_map(|(a, b)| [a, b])
}

/// A square or L-shaped mesh with a few random local refinements.
fn mesh() -> impl Strategy<Value = Mesh> {
    (any::<bool>(), 1usize..4, prop::collection::vec(any::<u32>(), 0..3)).prop_map(|(lshape, n, seeds)| {
        let mut m = if lshape { generate_lshape(n) } else { generate_square(n + 1) }.unwrap();
        for s in seeds {
            let c = s as usize % m.n_cells();
            m = m.bisect_refine(&[c].into_iter().collect()).unwrap();
        }
        m
    })
}

fn barycentric() -> impl Strategy<Value = [f64; 3]> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b)| {
        let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
        [1.0 - a - b, a, b]
    })
}

fn sorted_spectrum(mut v: Vec<Complex64>) -> Vec<Complex64> {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marking_is_scale_invariant_and_keeps_argmax(
        values in prop::collection::vec(0.0..10.0f64, 1..60),
        scale in 1e-6..1e6f64,
        fraction in 0.05..1.0f64,
    ) {
        let a = mark_max_strategy(&values, fraction).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        let b = mark_max_strategy(&scaled, fraction).unwrap();
        let argmax = values.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        prop_assert!(a.contains(argmax));
        // Only cells within rounding of the threshold may differ.
        let max = values.iter().cloned().fold(0.0, f64::max).sqrt();
        for (i, v) in values.iter().enumerate() {
            if (v.sqrt() - fraction * max).abs() > 1e-9 * max.max(1e-300) {
                prop_assert_eq!(a.contains(i), b.contains(i));
            }
        }
    }

    #[test]
    fn smaller_fraction_marks_a_superset(values in prop::collection::vec(0.0..10.0f64, 1..60), f in 0.05..1.0f64) {
        let wide = mark_max_strategy(&values, f * 0.5).unwrap();
        let narrow = mark_max_strategy(&values, f).unwrap();
        prop_assert!(narrow.cell_ids.is_subset(&wide.cell_ids));
    }

    #[test]
    fn csr_matches_dense(
        entries in prop::collection::vec((0usize..7, 0usize..5, -10.0..10.0f64), 0..40),
        x in prop::collection::vec(-5.0..5.0f64, 5),
    ) {
        let a = CsrMatrix::from_triplets(7, 5, entries.clone());
        let mut dense = vec![vec![0.0; 5]; 7];
        for &(r, c, v) in &entries {
            dense[r][c] += v;
        }
        for (r, row) in dense.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                prop_assert!((a.get(r, c) - v).abs() <= 1e-12);
            }
        }
        let y = a.matvec(&x);
        for (r, row) in dense.iter().enumerate() {
            let expect: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            prop_assert!((y[r] - expect).abs() <= 1e-10);
        }
        prop_assert_eq!(a.transpose().transpose().to_dense(), a.to_dense());
        let back = CsrMatrix::from_matrix_market(&a.to_matrix_market()).unwrap();
        prop_assert_eq!(back.to_dense(), a.to_dense());
    }

    #[test]
    fn basis_partition_of_unity_and_gradients(kind in element(), l in barycentric(), h in 1e-7..1e-5f64) {
        let map = AffineMap::new([[0.3, -0.2], [1.4, 0.1], [0.5, 0.9]]);
        let g = map.grad_lambda();
        for role in [Role::Velocity, Role::Pressure] {
            let b = eval_basis(kind, role, l, &g, 1.0);
            let nodal = if role == Role::Velocity && kind == ElementKind::Mini { 3 } else { b.len() };
            let sum: f64 = b.values[..nodal].iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-13, "sum {}", sum);
            let grad_sum: [f64; 2] = b.gradients[..nodal].iter().fold([0.0; 2], |s, g| [s[0] + g[0], s[1] + g[1]]);
            prop_assert!(grad_sum[0].abs() <= 1e-12 && grad_sum[1].abs() <= 1e-12);
            // Central differences in physical coordinates through the barycentric map.
            for d in 0..2 {
                let shift = [g[0][d] * h, g[1][d] * h, g[2][d] * h];
                let plus = eval_basis(kind, role, [l[0] + shift[0], l[1] + shift[1], l[2] + shift[2]], &g, 1.0);
                let minus = eval_basis(kind, role, [l[0] - shift[0], l[1] - shift[1], l[2] - shift[2]], &g, 1.0);
                for i in 0..b.len() {
                    let fd = (plus.values[i] - minus.values[i]) / (2.0 * h);
                    prop_assert!((fd - b.gradients[i][d]).abs() <= 1e-6 * (1.0 + b.gradients[i][d].abs()), "{:?} {} {}", role, i, d);
                    let fdh = (plus.gradients[i][0] - minus.gradients[i][0]) / (2.0 * h);
                    prop_assert!((fdh - b.hessians[i][0][d]).abs() <= 1e-5 * (1.0 + b.hessians[i][0][d].abs()));
                }
            }
        }
    }

    #[test]
    fn random_refinements_stay_conforming(seeds in prop::collection::vec(prop::collection::vec(any::<u32>(), 1..6), 10)) {
        let mut m = generate_lshape(2).unwrap();
        let min_angle0 = m.min_angle_overall();
        for step in seeds {
            let marked: MarkedSet = step.iter().map(|s| *s as usize % m.n_cells()).collect();
            let before = m.n_cells();
            m = m.bisect_refine(&marked).unwrap();
            prop_assert!(m.conformity_audit().is_ok());
            prop_assert!(m.n_cells() > before);
            prop_assert!((0..m.n_cells()).all(|c| m.signed_area(c) > 0.0));
            prop_assert!((m.area() - 3.0).abs() < 1e-12);
        }
        // Newest-vertex bisection produces finitely many similarity classes.
        prop_assert!(m.min_angle_overall() >= 0.5 * min_angle0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convection_is_skew_and_divergence_annihilates_constants(m in mesh(), kind in element(), b in beta()) {
        let dofmap = build_dofmap(&m, kind);
        let forms = assemble_forms(&m, &dofmap, &OseenParams::new(1.0, b).unwrap()).unwrap();
        let c = restrict_free(&forms.convection, &dofmap);
        let sum = c.add_scaled(1.0, &c.transpose()).unwrap();
        prop_assert!(sum.max_abs() <= 1e-12, "{}", sum.max_abs());
        prop_assert!(forms.stiffness.is_symmetric(0.0) && forms.mass.is_symmetric(0.0));
        // B^T 1 on free velocity columns: the integral of div v vanishes for v in H^1_0.
        for bc in &forms.divergence {
            let colsum = bc.transpose().matvec(&vec![1.0; bc.nrows()]);
            for &dof in &dofmap.free_dofs {
                prop_assert!(colsum[dof].abs() <= 1e-12, "{}", colsum[dof]);
            }
        }
        prop_assert!((forms.pressure_mean.iter().sum::<f64>() - m.area()).abs() <= 1e-12);
    }

    #[test]
    fn estimator_decomposes(kind in element(), b in beta(), n in 2usize..5) {
        let m = generate_square(n).unwrap();
        let dofmap = build_dofmap(&m, kind);
        let params = OseenParams::new(1.0, b).unwrap();
        let forms = assemble_forms(&m, &dofmap, &params).unwrap();
        let pencil = build_primal_pencil(&forms, &dofmap).unwrap();
        let pairs = shift_invert_solve(&pencil, &SolverConfig::with_nev(1)).unwrap();
        let rep = primal_indicators(&m, &dofmap, &params, &pairs[0]).unwrap();
        prop_assert!((rep.eta2 - (rep.r + rep.d + rep.j)).abs() <= 1e-12 * rep.eta2);
        for c in 0..rep.n_cells() {
            let parts = rep.per_cell_r[c] + rep.per_cell_d[c] + rep.per_cell_j[c];
            prop_assert!((rep.per_cell[c] - parts).abs() <= 1e-12 * rep.per_cell[c].max(1e-300));
        }
        prop_assert!((rep.per_cell.iter().sum::<f64>() - rep.eta2).abs() <= 1e-10 * rep.eta2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dual_spectrum_is_conjugate(kind in element(), b in beta(), n in 2usize..5) {
        let m = generate_square(n).unwrap();
        let dofmap = build_dofmap(&m, kind);
        let forms = assemble_forms(&m, &dofmap, &OseenParams::new(1.0, b).unwrap()).unwrap();
        let primal = build_primal_pencil(&forms, &dofmap).unwrap();
        prop_assume!(primal.dim() <= 800);
        let dual = build_dual_pencil(&forms, &dofmap).unwrap();
        let a = sorted_spectrum(dense_solve(&primal).unwrap().iter().map(|p| p.lambda.conj()).collect());
        let d = sorted_spectrum(dense_solve(&dual).unwrap().iter().map(|p| p.lambda).collect());
        prop_assert_eq!(a.len(), d.len());
        for (x, y) in a.iter().zip(&d) {
            prop_assert!((x - y).norm() <= 1e-8 * x.norm().max(1.0), "{} vs {}", x, y);
        }
    }

    #[test]
    fn shift_invert_agrees_with_dense_oracle(kind in element(), b in beta(), nev in 1usize..7) {
        let m = generate_square(4).unwrap();
        let dofmap = build_dofmap(&m, kind);
        let forms = assemble_forms(&m, &dofmap, &OseenParams::new(1.0, b).unwrap()).unwrap();
        let pencil = build_primal_pencil(&forms, &dofmap).unwrap();
        let config = SolverConfig::with_nev(nev);
        prop_assert!(pencil.dim() > config.max_krylov + 1, "must exercise Arnoldi");
        let iterative = shift_invert_solve(&pencil, &config).unwrap();
        let dense = dense_solve(&pencil).unwrap();
        let report = verify_residuals(&pencil, &iterative, config.tol);
        prop_assert!(report.ok(), "{:?}", report);
        for p in &iterative {
            let nearest = dense.iter().map(|q| (q.lambda - p.lambda).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(nearest <= 1e-8 * p.lambda.norm(), "{} off by {}", p.lambda, nearest);
        }
        // The returned eigenvalues are the nev closest to the shift.
        let mut by_modulus: Vec<f64> = dense.iter().map(|q| q.lambda.norm()).collect();
        by_modulus.sort_by(f64::total_cmp);
        let largest_returned = iterative[..nev].iter().map(|p| p.lambda.norm()).fold(0.0, f64::max);
        prop_assert!(largest_returned <= by_modulus[nev - 1] * (1.0 + 1e-8));
    }

    #[test]
    fn complex_eigenvalues_come_in_conjugate_pairs(kind in element(), bx in 30.0..80.0f64, by in -30.0..30.0f64, nev in 2usize..9) {
        let m = generate_square(6).unwrap();
        let dofmap = build_dofmap(&m, kind);
        let forms = assemble_forms(&m, &dofmap, &OseenParams::new(1.0, [bx, by]).unwrap()).unwrap();
        let pencil = build_primal_pencil(&forms, &dofmap).unwrap();
        let pairs = shift_invert_solve(&pencil, &SolverConfig::with_nev(nev)).unwrap();
        let report = verify_residuals(&pencil, &pairs, 1e-9);
        prop_assert!(report.unpaired.is_empty(), "{:?}", pairs.iter().map(|p| p.lambda).collect::<Vec<_>>());
        prop_assert!(pairs.len() >= nev);
    }

    #[test]
    fn eigenvalues_ignore_bubble_scaling(b in beta(), scale in prop_oneof![Just(5.0), 0.1..10.0f64]) {
        let m = generate_square(5).unwrap();
        let params = OseenParams::new(1.0, b).unwrap();
        let solve = |s: f64| {
            let dofmap = build_dofmap(&m, ElementKind::Mini).with_bubble_scale(s);
            let forms = assemble_forms(&m, &dofmap, &params).unwrap();
            shift_invert_solve(&build_primal_pencil(&forms, &dofmap).unwrap(), &SolverConfig::with_nev(3)).unwrap()
        };
        let (a, c) = (solve(1.0), solve(scale));
        for (x, y) in a.iter().zip(&c) {
            prop_assert!((x.lambda - y.lambda).norm() <= 1e-9 * x.lambda.norm(), "{} vs {}", x.lambda, y.lambda);
        }
    }

    #[test]
    fn computed_pressures_have_zero_mean(m in mesh(), kind in element(), b in beta()) {
        let dofmap = build_dofmap(&m, kind);
        let forms = assemble_forms(&m, &dofmap, &OseenParams::new(1.0, b).unwrap()).unwrap();
        let Ok(pencil) = build_primal_pencil(&forms, &dofmap) else { return Ok(()) };
        for p in shift_invert_solve(&pencil, &SolverConfig::with_nev(2)).unwrap() {
            prop_assert!(p.pressure_mean(&dofmap, &forms).norm() <= 1e-10);
        }
    }
}
