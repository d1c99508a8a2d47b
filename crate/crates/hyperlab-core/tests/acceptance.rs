//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with the measured quantities (run with `--nocapture` to see them all).
//!
//! Criterion 1 is known not to hold for this scheme family: the boundary
//! reflection cancels exactly, but the in-domain coupling cancellation is
//! limited by the first-order commutation of the discrete transform with the
//! discrete dynamics, leaving an O(1/n) floor right after t = tau that only
//! then decays geometrically. The test asserts the stated bound verbatim and
//! reports the measured floor.

use std::time::Instant;

use hyperlab_core::kernel::{
    compute_feedback_gains, solve_inverse_kernels, solve_kernels, verify_kernel_residual,
};
use hyperlab_core::model::{PlantConfig, Profile};
use hyperlab_core::neutral::{reduce_closed_loop, simulate_neutral, History};
use hyperlab_core::sim::{simulate, transform_state, ControlLaw, PdeState, TraceRecord};
use hyperlab_core::spectral::{
    count_rhp_roots, theorem_certificate, winding_count, CharacteristicFunction, Rect,
    ScanOptions,
};

fn benchmark_plant() -> PlantConfig<f64> {
    PlantConfig::new(
        1.0,
        1.0,
        1.0,
        0.85,
        Profile::Constant(1.0),
        Profile::Constant(1.0),
    )
    .unwrap()
}

fn run_benchmark(law: ControlLaw<f64>, delta: f64, horizon: f64, n: usize) -> TraceRecord<f64> {
    let plant = benchmark_plant();
    let kernels = solve_kernels(&plant, n).unwrap();
    simulate(
        &plant,
        law,
        Some(&kernels),
        delta,
        &Profile::Constant(1.0),
        &Profile::Constant(1.0),
        horizon,
        n,
    )
    .unwrap()
}

fn report(criterion: u32, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

#[test]
fn criterion_1_finite_time_convergence_without_delay() {
    let started = Instant::now();
    let n = 200;
    let trace = run_benchmark(ControlLaw::FullCancellation, 0.0, 8.0, n);
    let elapsed = started.elapsed();

    let dt = 1.0 / n as f64;
    let threshold_t = 2.0 + 5.0 * dt;
    let bound = 1e-6 * trace.l2[0];
    let floor = trace
        .t
        .iter()
        .zip(&trace.l2)
        .filter(|(t, _)| **t >= threshold_t)
        .map(|(_, l2)| *l2)
        .fold(0.0f64, f64::max);
    let pass = floor <= bound && elapsed.as_secs() <= 10;
    report(
        1,
        pass,
        &format!(
            "sup L2(t >= {threshold_t}) = {floor:.3e} vs bound {bound:.3e} \
             (L2 reaches the bound only near t = 6.5; floor is O(1/n)), runtime {:.2?}",
            elapsed
        ),
    );
    assert!(
        elapsed.as_secs() <= 10,
        "runtime budget exceeded: {elapsed:.2?}"
    );
    assert!(
        floor <= bound,
        "L2 stays at {floor:.3e} > {bound:.3e} for t just above {threshold_t}; \
         the first-order scheme family pinned by the oracle-equivalence and kernel-residual \
         criteria cannot reach 1e-6 by tau + 5 dt at n = 200 (see the measured O(1/n) floors)"
    );
}

#[test]
fn criterion_2_full_cancellation_is_delay_unstable() {
    let started = Instant::now();
    let trace = run_benchmark(ControlLaw::FullCancellation, 0.01, 40.0, 200);
    let elapsed = started.elapsed();
    let ratio = trace.l2_at(40.0) / trace.l2_at(5.0);
    let pass = ratio >= 10.0 && elapsed.as_secs() <= 60;
    report(
        2,
        pass,
        &format!("L2(40)/L2(5) = {ratio:.3e} (>= 10 required), runtime {elapsed:.2?}"),
    );
    assert!(elapsed.as_secs() <= 60);
    assert!(ratio >= 10.0);
}

#[test]
fn criterion_3_partial_cancellation_is_delay_robust() {
    let started = Instant::now();
    let trace = run_benchmark(ControlLaw::PartialCancellation { k: 0.1 }, 0.1, 40.0, 200);
    let elapsed = started.elapsed();
    let l2_0 = trace.l2[0];
    let final_ok = trace.l2_at(40.0) <= 0.1 * l2_0;
    let peak_ok = trace.max_l2() <= 10.0 * l2_0;
    let pass = final_ok && peak_ok && elapsed.as_secs() <= 60;
    report(
        3,
        pass,
        &format!(
            "L2(40) = {:.3e} (bound {:.3e}), peak = {:.3} (bound {:.3}), runtime {elapsed:.2?}",
            trace.l2_at(40.0),
            0.1 * l2_0,
            trace.max_l2(),
            10.0 * l2_0
        ),
    );
    assert!(elapsed.as_secs() <= 60);
    assert!(final_ok && peak_ok);
}

#[test]
fn criterion_4_robustness_costs_convergence_rate() {
    let full = run_benchmark(ControlLaw::FullCancellation, 0.0, 6.0, 200);
    let partial = run_benchmark(ControlLaw::PartialCancellation { k: 0.1 }, 0.0, 6.0, 200);
    let (a, b) = (full.l2_at(6.0), partial.l2_at(6.0));
    let pass = b > a;
    report(
        4,
        pass,
        &format!("L2(6): full cancellation {a:.3e} < partial (K = 0.1) {b:.3e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_closed_form_pole_check() {
    let started = Instant::now();
    let f = CharacteristicFunction::<f64>::constant(1.0).with_point(-1.2, 2.0);
    let rect = Rect::new(0.01, 1.0, -10.0, 10.0).unwrap();
    let scan = count_rhp_roots(&f, &rect, &ScanOptions::default()).unwrap();
    let elapsed = started.elapsed();

    let re = 1.2f64.ln() / 2.0;
    let expected: Vec<num_complex::Complex<f64>> = (-3..=3)
        .map(|k| num_complex::Complex::new(re, k as f64 * std::f64::consts::PI))
        .collect();
    let mut max_dev: f64 = 0.0;
    let mut matched = 0;
    for want in &expected {
        if let Some(best) = scan
            .roots
            .iter()
            .map(|r| (r.location - want).norm())
            .min_by(|a, b| a.partial_cmp(b).unwrap())
        {
            if best <= 1e-6 {
                matched += 1;
            }
            max_dev = max_dev.max(best);
        }
    }
    let pass = scan.count == 7 && matched == 7 && elapsed.as_secs() <= 5;
    report(
        5,
        pass,
        &format!(
            "{} roots found (7 expected), max deviation from ln(1.2)/2 + k pi i: {max_dev:.2e}, \
             runtime {elapsed:.2?}",
            scan.count
        ),
    );
    assert!(elapsed.as_secs() <= 5);
    assert_eq!(scan.count, 7);
    assert_eq!(matched, 7);
}

#[test]
fn criterion_6_spectral_witnesses_for_theorems() {
    // Full cancellation with a 0.01 delay: at least one RHP root below 2000.
    let unstable = CharacteristicFunction::<f64>::constant(1.0)
        .with_point(-0.85, 2.0)
        .with_point(0.85, 2.01);
    let band = Rect::new(0.01, 0.5, 0.0, 2000.0).unwrap();
    let (count_unstable, _) = winding_count(&unstable, &band, &ScanOptions::default()).unwrap();

    // Partial cancellation within the gain bound: no RHP roots below 2000,
    // certified by the positivity margin.
    let stable = CharacteristicFunction::<f64>::constant(1.0)
        .with_point(-0.85, 2.0)
        .with_point(0.1, 2.1);
    let (count_stable, _) = winding_count(&stable, &band, &ScanOptions::default()).unwrap();
    let transport = PlantConfig::transport(1.0, 1.0, 1.0, 0.85).unwrap();
    let (margin, sup_i) = theorem_certificate(&stable, &transport, 0.1, 2000.0);

    let pass = count_unstable >= 1
        && count_stable == 0
        && (margin - 0.05).abs() < 1e-12
        && sup_i < margin;
    report(
        6,
        pass,
        &format!(
            "delayed full cancellation: {count_unstable} roots below cap 2000 (>= 1 required); \
             partial law: {count_stable} roots, certificate margin {margin:.3} > sup|I| = {sup_i:.3}"
        ),
    );
    assert!(count_unstable >= 1);
    assert_eq!(count_stable, 0);
    assert!((margin - 0.05).abs() < 1e-12 && sup_i < margin);
}

#[test]
fn criterion_7_oracle_equivalence() {
    let beta_discrepancy = |plant: &PlantConfig<f64>, n: usize| -> f64 {
        let law = ControlLaw::PartialCancellation { k: 0.1 };
        let delta = 0.1;
        let horizon = 10.0;
        let kernels = solve_kernels(plant, n).unwrap();
        let inverse = solve_inverse_kernels(&kernels).unwrap();
        let gains = compute_feedback_gains(&kernels, &inverse, plant).unwrap();
        let trace = simulate(
            plant,
            law,
            Some(&kernels),
            delta,
            &Profile::Constant(1.0),
            &Profile::Constant(1.0),
            horizon,
            n,
        )
        .unwrap();
        let initial = PdeState::<f64>::from_profiles(
            &Profile::Constant(1.0),
            &Profile::Constant(1.0),
            n,
            0.0,
        );
        let (alpha0, beta0) = transform_state(&initial, &kernels).unwrap();
        let history = History::from_initial_state(&alpha0, &beta0, plant, 1.0 / n as f64).unwrap();
        let spec = reduce_closed_loop(plant, Some(&gains), &law, delta).unwrap();
        let neutral = simulate_neutral(&spec, &history, horizon, 1.0 / n as f64).unwrap();
        trace
            .beta1
            .as_ref()
            .unwrap()
            .iter()
            .zip(&neutral.beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    };

    let plant = benchmark_plant();
    let e100 = beta_discrepancy(&plant, 100);
    let e200 = beta_discrepancy(&plant, 200);
    let e400 = beta_discrepancy(&plant, 400);
    let fitted_c = (e100 * 100.0).max(e200 * 200.0).max(e400 * 400.0);
    let (r1, r2) = (e100 / e200, e200 / e400);
    let ratios_ok = (1.7..=2.3).contains(&r1) && (1.7..=2.3).contains(&r2);
    let bound_ok = e100 <= fitted_c / 100.0 && e200 <= fitted_c / 200.0 && e400 <= fitted_c / 400.0;

    let transport = PlantConfig::transport(1.0, 1.0, 1.0, 0.85).unwrap();
    let e_transport = beta_discrepancy(&transport, 100);
    let transport_ok = e_transport <= 1e-12;

    let pass = ratios_ok && bound_ok && transport_ok;
    report(
        7,
        pass,
        &format!(
            "errors {e100:.3e}/{e200:.3e}/{e400:.3e}, fitted C = {fitted_c:.2}, \
             ratios {r1:.3}, {r2:.3} (in [1.7, 2.3]); pure transport discrepancy {e_transport:.2e}"
        ),
    );
    assert!(ratios_ok, "ratios {r1}, {r2}");
    assert!(bound_ok);
    assert!(transport_ok, "transport discrepancy {e_transport:e}");
}

#[test]
fn criterion_8_kernel_solver_convergence() {
    let plant = benchmark_plant();
    let probe = |n: usize| {
        let k = solve_kernels(&plant, n).unwrap();
        let vals = [
            k.kuu().sample(1.0, 0.5),
            k.kuv().sample(1.0, 0.5),
            k.kvu().sample(1.0, 0.5),
            k.kvv().sample(1.0, 0.5),
        ];
        (k, vals)
    };
    let (_, v64) = probe(64);
    let (_, v128) = probe(128);
    let (k256, v256) = probe(256);

    let mut min_order = f64::INFINITY;
    for f in 0..4 {
        let d1 = (v64[f] - v128[f]).abs();
        let d2 = (v128[f] - v256[f]).abs();
        min_order = min_order.min((d1 / d2).log2());
    }

    // Boundary data on the finest solve.
    let mut boundary_defect = 0.0f64;
    for i in 0..=256 {
        let x = i as f64 / 256.0;
        boundary_defect = boundary_defect
            .max((k256.kvu().get(i, i) + plant.sigma_mp().eval(x) / 2.0).abs())
            .max((k256.kuv().get(i, i) - plant.sigma_pm().eval(x) / 2.0).abs())
            .max((k256.kuv().get(i, 0) - k256.kuu().get(i, 0)).abs())
            .max((k256.kvv().get(i, 0) - k256.kvu().get(i, 0)).abs());
    }
    let residual = verify_kernel_residual(&k256, &plant).max();

    let transport = PlantConfig::transport(1.0, 1.0, 1.0, 0.85).unwrap();
    let zero = solve_kernels(&transport, 64).unwrap();
    let zero_exact = zero.kuu().values().iter().all(|&v| v == 0.0)
        && zero.kuv().values().iter().all(|&v| v == 0.0)
        && zero.kvu().values().iter().all(|&v| v == 0.0)
        && zero.kvv().values().iter().all(|&v| v == 0.0);

    let pass = min_order >= 1.0 && boundary_defect <= 1e-8 && residual <= 1e-8 && zero_exact;
    report(
        8,
        pass,
        &format!(
            "self-convergence order >= {min_order:.2} (>= 1 required), boundary defect \
             {boundary_defect:.2e}, integral-equation residual {residual:.2e}, \
             zero profiles give exactly zero kernels: {zero_exact}"
        ),
    );
    assert!(min_order >= 1.0, "order {min_order}");
    assert!(boundary_defect <= 1e-8);
    assert!(residual <= 1e-8);
    assert!(zero_exact);
}
