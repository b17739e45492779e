use std::f64::consts::PI;

use almost_poisson::chaplygin::ChaplyginSystem;
use almost_poisson::expr::Expr;
use almost_poisson::field::ScalarField;
use almost_poisson::integrate::{self, Trajectory};
use almost_poisson::systems::{rolling_ball, rolling_ball_with_inertia};
use almost_poisson::torsion;
use nalgebra::DVector;

fn exprs(rows: &[&[&str]]) -> Vec<Vec<Expr>> {
    rows.iter().map(|r| r.iter().map(|s| Expr::parse(s).unwrap()).collect()).collect()
}

fn names(n: &[&str]) -> Vec<String> {
    n.iter().map(|s| s.to_string()).collect()
}

/// Knife-edge-like system with a potential: `ż = u ẇ`, metric with a
/// configuration-dependent entry.
fn skate() -> ChaplyginSystem {
    ChaplyginSystem::new(
        names(&["u", "w", "z"]),
        1,
        exprs(&[&["0"], &["u"]]),
        exprs(&[&["2 + sin(w)", "0", "0"], &["0", "1", "0"], &["0", "0", "1.5"]]),
        Expr::parse("u^2/2 + 0.3*cos(w)").unwrap(),
    )
    .unwrap()
}

fn ball_x0() -> DVector<f64> {
    DVector::from_vec(vec![0.3, PI / 3.0, -0.4, 0.5, -0.3, 0.8])
}

fn run(sys: &ChaplyginSystem, x0: &DVector<f64>, t1: f64, h: f64) -> Trajectory {
    integrate::rk4(&|x| sys.vector_field(x.as_slice()), x0, 0.0, t1, h).unwrap()
}

fn final_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    (a.last_state().unwrap() - b.last_state().unwrap()).amax()
}

#[test]
fn oracle_agrees_on_a_system_with_potential() {
    let sys = skate();
    let (q, p) = ([0.4, -0.2], [0.3, 0.7]);
    let x0 = DVector::from_vec(q.iter().chain(&p).copied().collect());
    let reduced = run(&sys, &x0, 3.0, 1e-3);
    let full0 = integrate::oracle_initial_state(&sys, &q, &[0.1], &p).unwrap();
    let oracle = integrate::multiplier_oracle(&sys, &full0, 0.0, 3.0, 1e-3).unwrap();
    let dev = reduced
        .max_deviation(&oracle, |x| Ok(x.clone()), |x| integrate::project_oracle_state(&sys, x))
        .unwrap();
    assert!(dev <= 1e-8, "{dev}");
    let e0 = integrate::oracle_energy(&sys, &full0).unwrap();
    let e1 = integrate::oracle_energy(&sys, oracle.last_state().unwrap()).unwrap();
    assert!((e1 - e0).abs() <= 1e-9);
    let h0 = sys.hamiltonian_field().value(x0.as_slice()).unwrap();
    assert!((h0 - e0).abs() <= 1e-14);
}

#[test]
fn oracle_rejects_states_off_the_constraint() {
    let sys = skate();
    let mut x0 = integrate::oracle_initial_state(&sys, &[0.4, -0.2], &[0.0], &[0.3, 0.7]).unwrap();
    x0[5] += 1e-3;
    assert!(integrate::multiplier_oracle(&sys, &x0, 0.0, 1.0, 1e-2).is_err());
}

#[test]
fn split_integrator_converges_at_second_order() {
    let ball = rolling_ball(1.0, 1.0).unwrap();
    let reference = run(&ball, &ball_x0(), 1.0, 1e-3);
    let split = |h: f64| {
        integrate::split(
            &|x| ball.canonical_vector_field(x.as_slice()),
            &|x| ball.almost_vector_field(x.as_slice()),
            &ball_x0(),
            0.0,
            1.0,
            h,
        )
        .unwrap()
    };
    let e1 = final_gap(&split(0.02), &reference);
    let e2 = final_gap(&split(0.01), &reference);
    let ratio = e1 / e2;
    assert!((3.0..=5.0).contains(&ratio), "ratio {ratio} ({e1:e}, {e2:e})");
}

#[test]
fn canonical_and_almost_parts_add_up_to_the_flow() {
    let ball = rolling_ball(0.8, 1.3).unwrap();
    let x = ball_x0();
    let full = ball.vector_field(x.as_slice()).unwrap();
    let parts = ball.canonical_vector_field(x.as_slice()).unwrap() + ball.almost_vector_field(x.as_slice()).unwrap();
    assert!((full - parts).amax() <= 1e-15);
}

#[test]
fn induced_torsion_flow_is_the_chaplygin_flow() {
    for sys in [rolling_ball(1.2, 0.7).unwrap(), skate()] {
        let k = sys.base_dim();
        let x: Vec<f64> = if k == 3 { ball_x0().iter().copied().collect() } else { vec![0.4, -0.2, 0.3, 0.7] };
        let space = sys.induced_affine_space();
        let via_torsion = torsion::vector_field(&space, &x).unwrap();
        let direct = sys.vector_field(&x).unwrap();
        assert!((via_torsion - direct).amax() <= 1e-12);
        // autoparallels of the induced space solve Chaplygin's equations
        let v = sys.legendre_inverse(&x[..k], &x[k..]).unwrap();
        let acc = torsion::autoparallel_rhs(&space, &x[..k], v.as_slice()).unwrap();
        let r = sys.chaplygin_equation_residual(&x[..k], v.as_slice(), acc.as_slice()).unwrap();
        assert!(r.amax() <= 1e-12, "{}", r.amax());
    }
}

#[test]
fn shrinking_radius_at_fixed_inertia_removes_the_almost_part() {
    let (q, p) = ([0.3, 1.0, -0.4], [0.5, -0.3, 0.8]);
    let mut prev = f64::INFINITY;
    for a in [1e-1, 1e-2, 1e-3, 1e-4] {
        let ball = rolling_ball_with_inertia(1.0, a, 0.4).unwrap();
        let k = ball.almost_block(&q, &p).unwrap().amax();
        assert!(k < prev);
        assert!(k <= 10.0 * a * a, "a = {a}: {k}");
        prev = k;
    }
}

#[test]
fn energy_is_conserved_on_a_system_with_potential() {
    let sys = skate();
    let x0 = DVector::from_vec(vec![0.4, -0.2, 0.3, 0.7]);
    let mut t = run(&sys, &x0, 10.0, 1e-3);
    t.record_energy(|x| sys.hamiltonian_field().value(x.as_slice())).unwrap();
    assert!(t.relative_energy_drift().unwrap() <= 1e-10);
}

#[test]
fn integration_stops_with_the_last_good_time_when_leaving_the_chart() {
    let ball = rolling_ball(1.0, 1.0).unwrap();
    // fast tumbling drives theta out of [0.2, π − 0.2]
    let x0 = DVector::from_vec(vec![0.0, 0.3, 0.0, 0.0, -5.0, 0.0]);
    match integrate::rk4(&|x| ball.vector_field(x.as_slice()), &x0, 0.0, 1.0, 1e-3) {
        Err(almost_poisson::Error::Integration { time, source }) => {
            assert!(time > 0.0 && time < 1.0);
            assert!(matches!(*source, almost_poisson::Error::OutsideChart { .. }));
        }
        other => panic!("expected a chart error, got {other:?}"),
    }
}
