use stiffkit::analysis::AnalysisOptions;
use stiffkit::integrate::Mesh;
use stiffkit::meshsel::{select_mesh, MeshSelection};
use stiffkit::suite::builtin;

fn run(name: &str, param: &str, value: f64, n: usize) -> MeshSelection {
    let params = if param.is_empty() { Default::default() } else { [(param.to_string(), value)].into() };
    let p = builtin(name, &params).unwrap();
    let mesh = Mesh::uniform(p.t_end, n).unwrap();
    select_mesh(&p, &mesh, 2.0, 12, &AnalysisOptions::default()).unwrap()
}

/// Midpoints of the shortest tenth of the intervals.
fn densest_decile(mesh: &Mesh) -> Vec<f64> {
    let nodes = mesh.nodes();
    let mut iv: Vec<(f64, f64)> = nodes.windows(2).map(|w| (w[1] - w[0], 0.5 * (w[0] + w[1]))).collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = (iv.len() / 10).max(1);
    iv[..k].iter().map(|x| x.1).collect()
}

fn nodes_within(mesh: &Mesh, centre: f64, radius: f64) -> usize {
    mesh.nodes().iter().filter(|&&t| (t - centre).abs() <= radius).count()
}

fn assert_growth_bounded(s: &MeshSelection) {
    for w in s.history.windows(2) {
        assert!(w[1].intervals <= 2 * w[0].intervals, "{} -> {}", w[0].intervals, w[1].intervals);
    }
}

#[test]
fn turning_point_mesh_gathers_at_the_turning_point() {
    let eps = 1e-6;
    let s = run("turning-point", "eps", eps, 64);
    assert!(s.converged);
    assert!(s.history.last().unwrap().verdict.pass());
    assert!(s.history.iter().all(|r| r.monotone));
    assert_growth_bounded(&s);
    // the turning point t = 0 sits at 1 on the shifted interval [0, 2]
    let r = 10.0 * eps.sqrt();
    let local = nodes_within(&s.mesh, 1.0, r) as f64 / (2.0 * r);
    let global = s.mesh.nodes().len() as f64 / 2.0;
    assert!(local > 5.0 * global, "{local} vs {global}");
    assert!(densest_decile(&s.mesh).iter().all(|t| (t - 1.0).abs() <= r));
}

#[test]
fn boundary_layer_mesh_gathers_near_zero() {
    let s = run("boundary-layer", "eps", 1e-4, 64);
    assert!(s.converged);
    assert_growth_bounded(&s);
    assert!(densest_decile(&s.mesh).iter().all(|&t| t <= 0.1));
}

#[test]
fn troesch_mesh_gathers_near_one() {
    let s = run("troesch", "mu", 10.0, 64);
    assert!(s.converged);
    assert_growth_bounded(&s);
    assert!(densest_decile(&s.mesh).iter().all(|&t| t >= 0.9));
}

#[test]
fn smooth_problem_needs_at_most_two_rounds() {
    let s = run("smooth", "", 0.0, 16);
    assert!(s.converged);
    assert!(s.history.len() <= 2);
}

#[test]
fn rejected_rounds_are_flagged() {
    let s = run("boundary-layer", "eps", 1e-4, 64);
    let flagged = s.history.iter().filter(|r| !r.monotone).count();
    assert!(flagged == 0 || s.rollbacks >= flagged);
    for w in s.history.windows(2) {
        if w[1].monotone {
            assert!(w[1].mismatch() <= w[0].mismatch() || w[1].verdict.pass());
        }
    }
}
