//! Fixtures shared by the benchmarks.

use std::f64::consts::SQRT_2;

use orbitlab::orbits::{find_brake, ShootingSettings};
use orbitlab::{parse, MetricModel, OscillatorSpec, PeriodicOrbit, Space, SystemSpec};

/// Non-resonant planar oscillator at `E = 0.5`.
pub fn oscillator() -> (OscillatorSpec, SystemSpec) {
    let osc = OscillatorSpec::new(vec![1.0, SQRT_2], 0.5).expect("valid oscillator");
    let spec = osc.system().expect("valid system");
    (osc, spec)
}

/// Oscillator potential with a quartic Finsler kinetic energy.
pub fn finsler_oscillator() -> SystemSpec {
    let f2 = parse("sqrt(v1^4 + v2^4 + v1^2*v2^2)", 2).expect("valid F²");
    let metric = MetricModel::finsler(2, f2, Space::Euclidean).expect("valid metric");
    SystemSpec::new(
        metric,
        parse("0.5*(x1^2 + 2*x2^2)", 2).expect("valid U"),
        0.5,
    )
    .expect("valid system")
}

/// Brake orbit of `oscillator()` along axis `j`.
pub fn brake_orbit(j: usize) -> PeriodicOrbit {
    let (osc, spec) = oscillator();
    let mut seed = vec![0.0; 2];
    seed[j] = osc.amplitude(j);
    find_brake(&spec, &seed, &ShootingSettings::default()).expect("brake orbit")
}
