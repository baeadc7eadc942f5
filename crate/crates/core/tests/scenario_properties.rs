use std::f64::consts::PI;

use central_spin::geometry::DecayTime;
use central_spin::scenarios::{self, DecoherenceRun, TransferRun, WorkingPoint};
use central_spin::spinmodel::InteractionKind;
use central_spin::units;

fn ratio(a: f64, b: f64) -> f64 {
    (a / b).max(b / a)
}

fn finite(t: DecayTime) -> f64 {
    match t {
        DecayTime::Finite(t) => t,
        DecayTime::NoDecay => panic!("expected a finite decay time"),
    }
}

#[test]
fn identical_inputs_give_bit_identical_series() {
    let c = WorkingPoint::k_caf().ring_couplings(8, 0.25 * PI).unwrap();
    let run = DecoherenceRun::new(8, 0.25 * PI, 17);
    let a = scenarios::run_decoherence(&run, &c).unwrap();
    let b = scenarios::run_decoherence(&run, &c).unwrap();
    assert_eq!(a.series, b.series);
    assert_eq!(a.report, b.report);
    let other = scenarios::run_decoherence(&DecoherenceRun::new(8, 0.25 * PI, 18), &c).unwrap();
    assert_ne!(a.series, other.series);
}

#[test]
fn decay_time_is_seed_independent() {
    let beta = 0.25 * PI;
    let c = WorkingPoint::k_caf().ring_couplings(12, beta).unwrap();
    let tau = finite(central_spin::geometry::coupling_spread(&c).unwrap().tau);
    let times: Vec<f64> = (1..=5)
        .map(|seed| {
            let r = scenarios::run_decoherence(&DecoherenceRun::new(12, beta, seed), &c).unwrap();
            finite(r.report.measured_decay_time)
        })
        .collect();
    for &t in &times {
        assert!(ratio(t, tau) <= 2.0, "t = {t}, tau = {tau}");
        for &u in &times {
            assert!(ratio(t, u) <= 2.0, "{times:?}");
        }
    }
}

#[test]
fn transfer_time_symmetric_under_site_swap() {
    let beta = 0.12 * PI;
    let c = WorkingPoint::k_caf().ring_couplings(8, beta).unwrap();
    let forward = scenarios::run_transfer(&TransferRun::new(8, beta, 3, 7), &c).unwrap();
    let backward = scenarios::run_transfer(&TransferRun::new(8, beta, 7, 3), &c).unwrap();
    let dt = forward.series.times()[1] - forward.series.times()[0];
    let (a, b) = (
        forward.report.tau_transf.unwrap(),
        backward.report.tau_transf.unwrap(),
    );
    assert!((a - b).abs() <= dt, "{a} vs {b}");
    assert!((forward.report.max_output - backward.report.max_output).abs() < 1e-9);
}

#[test]
fn higher_polarization_decays_less() {
    let beta = 0.25 * PI;
    let c = WorkingPoint::k_caf().ring_couplings(8, beta).unwrap();
    let seeds = 1..=5;
    let mean_fraction = |up_count: usize| {
        let total: f64 = seeds
            .clone()
            .map(|seed| {
                let mut run = DecoherenceRun::new(8, beta, seed);
                run.up_count = up_count;
                scenarios::run_decoherence(&run, &c)
                    .unwrap()
                    .report
                    .decayed_fraction
            })
            .sum();
        total / 5.0
    };
    let fractions: Vec<f64> = (1..=4).map(mean_fraction).collect();
    for w in fractions.windows(2) {
        assert!(
            w[1] >= w[0],
            "decayed fraction not monotone in up_count: {fractions:?}"
        );
    }
}

#[test]
fn no_bath_excitation_means_no_dynamics() {
    let c = WorkingPoint::k_caf().ring_couplings(6, 0.3 * PI).unwrap();
    let mut run = DecoherenceRun::new(6, 0.3 * PI, 4);
    run.up_count = 0;
    run.times = scenarios::linspace(0.0, 1e-4, 200);
    let r = scenarios::run_decoherence(&run, &c).unwrap();
    assert!(r.report.decayed_fraction < 1e-12);
}

#[test]
fn xx_and_xxx_agree_for_small_detuning() {
    let beta = 0.1 * PI;
    let c = WorkingPoint::k_caf().ring_couplings(8, beta).unwrap();
    for seed in 1..=3 {
        let mut xx = DecoherenceRun::new(8, beta, seed);
        xx.c_delta = units::khz_2pi(1.0);
        let mut xxx = xx.clone();
        xxx.kind = InteractionKind::Xxx;
        let a = scenarios::run_decoherence(&xx, &c).unwrap().report;
        let b = scenarios::run_decoherence(&xxx, &c).unwrap().report;
        assert!(
            (a.late_time_mean - b.late_time_mean).abs() < 0.1,
            "seed {seed}: {a:?} {b:?}"
        );
        let (ta, tb) = (finite(a.measured_decay_time), finite(b.measured_decay_time));
        assert!(ratio(ta, tb) <= 2.0, "seed {seed}: {ta} vs {tb}");
    }
}

#[test]
fn xxx_records_coercion_of_signed_couplings() {
    let c = WorkingPoint::k_caf().ring_couplings(4, 0.4 * PI).unwrap();
    assert!(c.iter().any(|c| c.re < 0.0));
    let mut run = DecoherenceRun::new(4, 0.4 * PI, 1);
    run.kind = InteractionKind::Xxx;
    run.times = scenarios::linspace(0.0, 5e-5, 100);
    assert!(
        scenarios::run_decoherence(&run, &c)
            .unwrap()
            .report
            .couplings_coerced
    );
    run.kind = InteractionKind::Xx;
    assert!(
        !scenarios::run_decoherence(&run, &c)
            .unwrap()
            .report
            .couplings_coerced
    );
}
