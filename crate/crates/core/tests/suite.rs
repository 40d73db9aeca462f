use stiffkit::analysis::{analyze, nominal_solution, AnalysisOptions};
use stiffkit::linalg::eigenvalues;
use stiffkit::problem::ProblemKind;
use stiffkit::suite::{load_case, run_sweep, CASES};

#[test]
fn nominal_solutions_satisfy_their_boundary_data() {
    let opts = AnalysisOptions::default();
    for name in CASES {
        let case = load_case(name).unwrap();
        let p = &case.problem;
        let sol = nominal_solution(p, &opts).unwrap();
        let y0 = sol.state(0);
        let yt = sol.final_state();
        let residual = &p.boundary.b0 * &y0 + &p.boundary.b1 * &yt - &p.eta;
        let tol = match p.kind {
            ProblemKind::Ivp => 1e-14,
            ProblemKind::Bvp => 1e-8,
        };
        assert!(residual.amax() <= tol * (1.0 + p.eta.amax()), "{name}: {}", residual.amax());
    }
}

#[test]
fn kreiss_spectra_are_fixed_in_time() {
    for name in ["kreiss", "modified-kreiss"] {
        for eps in [0.5, 1e-3] {
            let p = load_case(name).unwrap().at(eps).unwrap();
            let a = p.linear.as_ref().unwrap();
            for k in 0..50 {
                let t = 4.0 * std::f64::consts::PI * k as f64 / 49.0;
                let mut ev: Vec<f64> = eigenvalues(&a.at(t)).iter().map(|z| z.re).collect();
                ev.sort_by(f64::total_cmp);
                assert!((ev[0] + 1.0 / eps).abs() < 1e-8 / eps, "{name} {eps} t={t}: {ev:?}");
                assert!((ev[1] + 1.0).abs() < 1e-8, "{name} {eps} t={t}: {ev:?}");
            }
        }
    }
}

#[test]
fn sweep_rows_follow_the_grid() {
    let case = load_case("diag2").unwrap();
    let grid = [-1000.0, -10.0, -100.0];
    let table = run_sweep(&case, Some(&grid), &AnalysisOptions::default());
    let params: Vec<f64> = table.rows.iter().map(|r| r.param).collect();
    assert_eq!(params, grid);
    // sigma of diag(l1, -1) on [0, 1] tracks |l1|
    for r in &table.rows {
        assert!(r.ok());
        assert!(r.sigma > 0.85 * r.param.abs() && r.sigma < 1.15 * r.param.abs(), "{r:?}");
    }
}

#[test]
fn failing_points_stay_in_their_rows() {
    let case = load_case("scalar").unwrap();
    let table = run_sweep(&case, Some(&[-2.0, f64::NAN, -20.0]), &AnalysisOptions::default());
    assert!(table.rows[0].ok() && table.rows[2].ok());
    assert!(!table.rows[1].ok());
    assert!(table.rows[1].sigma.is_nan());
}

#[test]
fn lambert_is_stiff_even_from_a_silent_start() {
    let case = load_case("lambert").unwrap();
    let mut p = case.at(1000.0).unwrap();
    p.eta = case.mode_silencing.clone().unwrap();
    let r = analyze(&p, &AnalysisOptions::default()).unwrap().report;
    assert!(r.sigma > 500.0 && r.sigma < 2000.0, "{}", r.sigma);
}

#[test]
fn troesch_continuation_reaches_mu_twenty() {
    let case = load_case("troesch").unwrap();
    let table = run_sweep(&case, Some(&[1.0, 2.0, 5.0, 10.0, 20.0]), &AnalysisOptions::default());
    assert!(table.rows.iter().all(|r| r.ok()));
    assert!(table.sigmas().windows(2).all(|w| w[1] > w[0]));
}
