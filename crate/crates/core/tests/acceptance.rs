//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! measured quantities and the pinned tolerance.

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use orbitlab::dynamics::{integrate, PhaseState, SystemSpec, Tolerances};
use orbitlab::expr::dual::seed;
use orbitlab::geometry::{MetricModel, Space};
use orbitlab::intersect::{
    mutual_intersections, self_intersections, Detector, IntersectionSettings,
};
use orbitlab::jacobi::JacobiMetric;
use orbitlab::orbits::{
    find_brake, monodromy, orbit_from_initial_state, OrbitKind, ShootingSettings,
};
use orbitlab::perturb::{
    identity_residual, perturbed_potential, verify_removal, ConformalPerturbation, DisplacedCurve,
    TubeFrame,
};
use orbitlab::reference::OscillatorSpec;
use orbitlab::{parse, ExprNode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: &str, pass: bool, elapsed: Duration, budget: f64, detail: String) {
    let ok = pass && elapsed.as_secs_f64() < budget;
    // Written to the raw stderr handle so the line survives output capture.
    let _ = writeln!(
        std::io::stderr().lock(),
        "{} {id}: {detail}; {:.2}s (limit {budget}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(ok, "{id} failed: {detail}");
}

fn oscillator3() -> OscillatorSpec {
    OscillatorSpec::new(vec![1.0, SQRT_2, 3f64.sqrt()], 0.5).unwrap()
}

fn axis_seed(o: &OscillatorSpec, j: usize) -> Vec<f64> {
    let mut x = vec![0.0; o.dimension()];
    x[j] = o.amplitude(j);
    x
}

#[test]
fn c1_brake_orbits_of_the_oscillator() {
    let start = Instant::now();
    let o = oscillator3();
    let spec = o.system().unwrap();
    let s = ShootingSettings::default();
    let mut worst_period: f64 = 0.0;
    let mut worst_amp: f64 = 0.0;
    for j in 0..3 {
        // Perturbed seed so that the search has to work.
        let mut seed = axis_seed(&o, j);
        seed[(j + 1) % 3] += 0.02;
        let orbit = find_brake(&spec, &seed, &s).unwrap();
        worst_period = worst_period.max((orbit.period - 2.0 * PI / o.alpha[j]).abs());
        let amp = orbit.rest_points[0].x[j].abs();
        worst_amp = worst_amp.max((amp - (2.0 * o.energy).sqrt() / o.alpha[j]).abs());
        for (i, xi) in orbit.rest_points[0].x.iter().enumerate() {
            if i != j {
                worst_amp = worst_amp.max(xi.abs());
            }
        }
    }
    report(
        "C1",
        worst_period < 1e-8 && worst_amp < 1e-8,
        start.elapsed(),
        5.0,
        format!(
            "max period error {worst_period:.2e}, max amplitude error {worst_amp:.2e} (tol 1e-8)"
        ),
    );
}

fn match_spectrum(got: &[[f64; 2]], want: &[[f64; 2]]) -> f64 {
    let mut left: Vec<[f64; 2]> = got.to_vec();
    let mut worst: f64 = 0.0;
    for w in want {
        let (k, d) = left
            .iter()
            .enumerate()
            .map(|(k, g)| (k, (g[0] - w[0]).hypot(g[1] - w[1])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        worst = worst.max(d);
        left.remove(k);
    }
    worst
}

#[test]
fn c2_monodromy_spectrum() {
    let start = Instant::now();
    let o = oscillator3();
    let spec = o.system().unwrap();
    let s = ShootingSettings::default();
    let mut worst_full: f64 = 0.0;
    let mut worst_transverse: f64 = 0.0;
    let mut all_nondegenerate = true;
    for j in 0..3 {
        let orbit = find_brake(&spec, &axis_seed(&o, j), &s).unwrap();
        let rep = monodromy(&spec, &orbit, &s).unwrap();
        let mut rot = Vec::new();
        for i in (0..3).filter(|&i| i != j) {
            let a = 2.0 * PI * o.alpha[i] / o.alpha[j];
            rot.push([a.cos(), a.sin()]);
            rot.push([a.cos(), -a.sin()]);
        }
        let mut full = vec![[1.0, 0.0], [1.0, 0.0]];
        full.extend(rot.iter().copied());
        worst_full = worst_full.max(match_spectrum(&rep.eigenvalues, &full));
        worst_transverse = worst_transverse.max(match_spectrum(&rep.transverse_eigenvalues, &rot));
        all_nondegenerate &= rep.nondegenerate;
    }
    // Resonant Lissajous member: the transverse map has eigenvalue 1.
    let r = OscillatorSpec::resonant([1, 2], 1.0, &[], 1.0).unwrap();
    let a = [1.0, 0.5];
    let rspec = r.system().unwrap().with_energy(r.lissajous_energy(a));
    let orbit = orbit_from_initial_state(
        &rspec,
        &r.lissajous(a, 0.0, 0.0).unwrap(),
        r.lissajous_period().unwrap(),
        &s,
    )
    .unwrap();
    let rrep = monodromy(&rspec, &orbit, &s).unwrap();
    report(
        "C2",
        worst_full < 1e-6
            && worst_transverse < 1e-6
            && all_nondegenerate
            && rrep.trivial_multiplicity >= 4
            && !rrep.nondegenerate,
        start.elapsed(),
        10.0,
        format!(
            "non-resonant: spectrum error {worst_full:.2e}, transverse error {worst_transverse:.2e} \
             (tol 1e-6), nondegenerate {all_nondegenerate}; resonant (1,2): trivial multiplicity {}",
            rrep.trivial_multiplicity
        ),
    );
}

fn random_interior_state(
    rng: &mut ChaCha8Rng,
    spec: &SystemSpec,
    box_half: &[f64],
    margin: f64,
) -> PhaseState {
    let n = spec.dimension();
    loop {
        let x: Vec<f64> = box_half.iter().map(|h| rng.gen_range(-h..*h)).collect();
        let u = spec.potential.value(&x).unwrap();
        if spec.energy - u < margin {
            continue;
        }
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = spec.metric.norm(&x, &d).unwrap();
        if f < 0.1 {
            continue;
        }
        let speed = (2.0 * (spec.energy - u)).sqrt() / f;
        return PhaseState::new(x, d.iter().map(|c| c * speed).collect());
    }
}

#[test]
fn c3_jacobi_correspondence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tol = Tolerances::new(1e-12, 1e-14);
    let osc = OscillatorSpec::new(vec![1.0, SQRT_2], 0.5)
        .unwrap()
        .system()
        .unwrap();
    let torus = SystemSpec::new(
        MetricModel::euclidean(
            2,
            Space::Torus {
                periods: vec![2.0 * PI, 2.0 * PI],
            },
        )
        .unwrap(),
        parse("0.1*cos(x1)", 2).unwrap(),
        1.0,
    )
    .unwrap();
    let mut worst = [0.0f64; 2];
    for (k, (spec, half)) in [(&osc, [0.9, 0.6]), (&torus, [PI, PI])]
        .into_iter()
        .enumerate()
    {
        let jm = JacobiMetric::new(spec).unwrap();
        for _ in 0..50 {
            let ic = random_interior_state(&mut rng, spec, &half, 0.1);
            worst[k] = worst[k].max(jm.proposition_check(&ic, 1.0, &tol).unwrap());
        }
    }
    report(
        "C3",
        worst[0] < 1e-6 && worst[1] < 1e-6,
        start.elapsed(),
        30.0,
        format!(
            "max deviation oscillator {:.2e}, torus {:.2e} over 50 ICs each (tol 1e-6)",
            worst[0], worst[1]
        ),
    );
}

#[test]
fn c4_conservation_and_identities() {
    let start = Instant::now();
    let tol = Tolerances::new(1e-10, 1e-12);
    // Energy drift: oscillator and a quartic Finsler model with a potential.
    let osc = oscillator3().system().unwrap();
    let ic = PhaseState::new(vec![0.3, -0.2, 0.1], vec![0.5, 0.4, -0.3]);
    let osc = osc.with_energy(orbitlab::dynamics::total_energy(&osc, &ic.x, &ic.v).unwrap());
    let drift_osc = integrate(&osc, &ic, (0.0, 100.0), &tol, &[])
        .unwrap()
        .energy_drift;
    let quartic = MetricModel::finsler(
        2,
        parse("sqrt(v1^4 + v2^4 + v1^2*v2^2)", 2).unwrap(),
        Space::Euclidean,
    )
    .unwrap();
    let fspec =
        SystemSpec::new(quartic.clone(), parse("0.5*x1^2 + x2^2", 2).unwrap(), 1.0).unwrap();
    let fic = PhaseState::new(vec![0.2, 0.1], vec![0.7, -0.4]);
    let drift_fin = integrate(&fspec, &fic, (0.0, 100.0), &tol, &[])
        .unwrap()
        .energy_drift;

    // Cartan contraction and Legendre round trip on random points.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let quartic3 = MetricModel::finsler(
        3,
        parse(
            "sqrt(v1^4 + 2*v2^4 + v3^4 + (1 + 0.3*sin(x1))*v1^2*v3^2) + 0.5*v2^2*exp(0.2*x3)",
            3,
        )
        .unwrap(),
        Space::Euclidean,
    )
    .unwrap();
    let mut cartan: f64 = 0.0;
    let mut legendre: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = quartic3.cartan_tensor(&x, &v).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let s: f64 = (0..3).map(|i| c[(i, j, k)] * v[i]).sum();
                cartan = cartan.max(s.abs());
            }
        }
        let y = quartic3.legendre(&x, &v).unwrap();
        let back = quartic3.legendre_inverse(&x, &y).unwrap();
        let err = back
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        legendre = legendre.max(err);
    }

    // Monodromy determinant of each brake orbit.
    let o = oscillator3();
    let spec = o.system().unwrap();
    let s = ShootingSettings::default();
    let mut det: f64 = 0.0;
    for j in 0..3 {
        let orbit = find_brake(&spec, &axis_seed(&o, j), &s).unwrap();
        det = det.max((monodromy(&spec, &orbit, &s).unwrap().determinant - 1.0).abs());
    }
    let drift = drift_osc.max(drift_fin);
    report(
        "C4",
        drift <= 1e-9 && cartan <= 1e-8 && legendre <= 1e-10 && det <= 1e-6,
        start.elapsed(),
        60.0,
        format!(
            "energy drift {drift:.2e} (tol 1e-9), Cartan contraction {cartan:.2e} (tol 1e-8), \
             Legendre round trip {legendre:.2e} (tol 1e-10), |det M − 1| {det:.2e} (tol 1e-6)"
        ),
    );
}

#[test]
fn c5_intersection_classification() {
    let start = Instant::now();
    let hash = IntersectionSettings::default();
    let brute = IntersectionSettings {
        detector: Detector::BruteForce,
        ..hash
    };
    let o = oscillator3();
    let spec = o.system().unwrap();
    let s = ShootingSettings::default();
    let orbits: Vec<_> = (0..3)
        .map(|j| find_brake(&spec, &axis_seed(&o, j), &s).unwrap())
        .collect();
    let mut ok = true;
    let mut agree = true;
    let mut dp_brake = 0;
    for orbit in &orbits {
        let a = self_intersections(orbit, &hash).unwrap();
        agree &= a == self_intersections(orbit, &brute).unwrap();
        dp_brake += a.dp_count;
    }
    ok &= dp_brake == 0;
    let mut origin_err: f64 = 0.0;
    for i in 0..3 {
        for j in i + 1..3 {
            let a = mutual_intersections(&orbits[i], &orbits[j], &hash).unwrap();
            agree &= a == mutual_intersections(&orbits[i], &orbits[j], &brute).unwrap();
            ok &= a.pairs.len() == 1 && a.dp_count == 1;
            for p in &a.pairs {
                origin_err = origin_err.max(p.point.iter().map(|c| c.abs()).fold(0.0, f64::max));
                ok &= p.point.iter().all(|c| c.abs() <= a.tol_space);
            }
        }
    }
    // Lissajous (1,2), amplitudes (1, 0.5): figure-eight member.
    let r = OscillatorSpec::resonant([1, 2], 1.0, &[], 1.0).unwrap();
    let amp = [1.0, 0.5];
    let rspec = r.system().unwrap().with_energy(r.lissajous_energy(amp));
    let eight = orbit_from_initial_state(
        &rspec,
        &r.lissajous(amp, FRAC_PI_4, 0.0).unwrap(),
        r.lissajous_period().unwrap(),
        &s,
    )
    .unwrap();
    let liss = self_intersections(&eight, &hash).unwrap();
    agree &= liss == self_intersections(&eight, &brute).unwrap();
    ok &= eight.kind == OrbitKind::Rotation && liss.dp_count == 1;
    report(
        "C5",
        ok && agree,
        start.elapsed(),
        20.0,
        format!(
            "brake dp_count total {dp_brake}, pairwise crossings at origin (max |x| {origin_err:.1e}), \
             Lissajous dp_count {}, hash == brute force: {agree}",
            liss.dp_count
        ),
    );
}

#[test]
fn c6_perturbation_pipeline() {
    let start = Instant::now();
    let tol = Tolerances::new(1e-12, 1e-14);
    let spec = SystemSpec::new(
        MetricModel::euclidean(3, Space::Euclidean).unwrap(),
        parse("0", 3).unwrap(),
        0.5,
    )
    .unwrap();
    let jm = JacobiMetric::new(&spec).unwrap();
    let tube = TubeFrame::new(
        &jm,
        &[0.0, 0.0, 0.0],
        &[1.0, 0.0, 0.0],
        &[0.0, 0.0, 1.0],
        1.0,
        0.1,
        &tol,
    )
    .unwrap();
    let s = 0.05;
    let curve = DisplacedCurve::new(Arc::new(tube), s).unwrap();
    let phi = Arc::new(ConformalPerturbation::solve(curve).unwrap());

    let mut residual: f64 = 0.0;
    let mut on_curve: f64 = 0.0;
    for k in 0..=1000 {
        let t = -2.0 + 4.0 * k as f64 / 1000.0;
        residual = residual.max(phi.geodesic_residual(t).unwrap());
        let x = phi.curve().point(t).unwrap();
        on_curve = on_curve.max(
            orbitlab::dynamics::ScalarField::value(&*phi, &x)
                .unwrap()
                .abs(),
        );
    }

    let perturbed = perturbed_potential(&spec, phi.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut outside: f64 = 0.0;
    let mut samples = Vec::new();
    let mut inside = 0;
    for k in 0..1000 {
        let x: Vec<f64> = if k % 2 == 0 {
            vec![
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.06..0.11),
            ]
        } else {
            // Near the curve inside a transition piece.
            let (a, b) = phi.curve().transition_intervals()[k % 4 / 2];
            let c = phi.curve().point(rng.gen_range(a..b)).unwrap();
            c.iter()
                .map(|ci| ci + rng.gen_range(-0.5..0.5) * phi.rho)
                .collect()
        };
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if phi.declared_support_contains(&x).unwrap() {
            inside += 1;
        } else {
            let val = orbitlab::dynamics::ScalarField::value(&*phi, &x).unwrap();
            let du = perturbed.potential.value(&x).unwrap() - spec.potential.value(&x).unwrap();
            outside = outside.max(val.abs()).max(du.abs());
        }
        samples.push((x, v));
    }
    let identity = identity_residual(&spec, &perturbed, &phi, &samples).unwrap();
    let other = jm
        .integrate_geodesic(&[0.0, -1.0, 0.0], &[0.0, 1.0, 0.0], 2.0, &tol, true)
        .unwrap();
    let removal = verify_removal(phi.clone(), &other, &IntersectionSettings::default(), &tol);
    let (gap, removal_ok, shot) = match &removal {
        Ok(r) => (
            r.gap,
            r.intersections.pairs.is_empty(),
            r.shooting_max_deviation,
        ),
        Err(_) => (0.0, false, f64::INFINITY),
    };
    report(
        "C6",
        residual < 1e-6
            && on_curve < 1e-10
            && outside < 1e-10
            && identity < 1e-12
            && inside > 100
            && gap >= 0.5 * s
            && removal_ok
            && shot < 1e-6,
        start.elapsed(),
        30.0,
        format!(
            "geodesic residual {residual:.2e} (tol 1e-6), |φ| on curve {on_curve:.1e} and outside \
             support {outside:.1e} (tol 1e-10), identity {identity:.1e} at 1000 points, {inside} in the support (tol 1e-12), gap {gap:.4} \
             (need ≥ {:.3}), perturbed orbit stays within {shot:.1e} of the curve",
            0.5 * s
        ),
    );
}

/// Random expression in `x1..x3` with smooth, finite derivatives on `[-1, 1]³`.
fn random_expr(rng: &mut ChaCha8Rng, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.25) {
        return match rng.gen_range(0..4) {
            0 => format!("{:.3}", rng.gen_range(-2.0..2.0)),
            k => format!("x{k}"),
        };
    }
    let a = random_expr(rng, depth - 1);
    let b = random_expr(rng, depth - 1);
    match rng.gen_range(0..10) {
        0 => format!("({a} + {b})"),
        1 => format!("({a} - {b})"),
        2 | 3 => format!("({a} * {b})"),
        4 => format!("({a} / (2 + sin({b})))"),
        5 => format!("sin({a})"),
        6 => format!("cos({a})"),
        7 => format!("exp(0.5*sin({a}))"),
        8 => format!("log(1.5 + cos({a}))"),
        _ => format!("sqrt(1 + ({a})^2)"),
    }
}

#[test]
fn c7_dual_numbers_against_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    while count < 500 {
        let src = random_expr(&mut rng, 4);
        let e: ExprNode = parse(&src, 3).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for k in 0..3 {
            let d = e.eval(&seed(&x, Some(k)), &[]).unwrap().eps;
            let f = |dx: f64| {
                let mut y = x.clone();
                y[k] += dx;
                e.eval(&y, &[]).unwrap()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            worst = worst.max((d - fd).abs() / d.abs().max(1.0));
        }
        count += 1;
    }
    report(
        "C7",
        worst < 1e-6,
        start.elapsed(),
        30.0,
        format!(
            "max relative difference {worst:.2e} over {count} expression/point samples (tol 1e-6)"
        ),
    );
}
