//! Cross-module checks: each verdict computed one way is confirmed another way.

use std::f64::consts::PI;

use cml_core::hamflow::{
    completeness_probe, default_seed_grid, detect_blowup, Direction, FlowOptions, ProbeVerdict, Seed,
};
use cml_core::microlocal::{build_escape, default_eps, escape_derivative_check, EscapeGrid};
use cml_core::spectral::{deficiency_probe, shoot, spectrum, Operator, ShootDirection, ShootOptions, SpectrumOptions};
use cml_core::symbols::{
    classify_esa, radial_sets, survey, Completeness, EsaVerdict, Fiber, PrincipalSymbol, RootOptions, TrigPoly,
};
use cml_core::wkb::{local_data, solve_amplitude, synthesize, SynthesisOptions, WkbOptions};
use cml_core::{Complex64, Error};

fn sym(m: f64, a: TrigPoly) -> PrincipalSymbol {
    PrincipalSymbol::symmetric(m, a).unwrap()
}

#[test]
fn analytic_rule_matches_flow_and_shooting_for_sin_2x() {
    let roots = RootOptions::default();
    for m in [1.0, 2.0] {
        let p = sym(m, TrigPoly::sin_mode(2, 1.0));
        let report = classify_esa(&p, None, &roots).unwrap();
        let seeds = default_seed_grid(&p, &roots).unwrap();
        let probe = completeness_probe(&p, &seeds, &FlowOptions::default(), &roots).unwrap();
        let deficiency = deficiency_probe(&Operator::quantized(p.clone()), m, &ShootOptions::default()).unwrap();
        let esa = report.esa_verdict == Some(EsaVerdict::Esa);
        assert_eq!(esa, report.completeness_verdict == Completeness::Complete);
        assert_eq!(probe.verdict == ProbeVerdict::Complete, esa, "m = {m}");
        assert_eq!(deficiency.esa_consistent, esa, "m = {m}");
    }
}

#[test]
fn blowup_witness_from_survey_blows_up() {
    let roots = RootOptions::default();
    let p = sym(3.0, TrigPoly::sin_mode(1, 1.0).pow(2));
    let report = survey(&p, &roots).unwrap();
    assert!(!report.is_principal_type);
    let (seed, dir) = report.completeness_witness.expect("m > k has a witness");
    let t = detect_blowup(&p, seed, dir, &FlowOptions::default()).unwrap();
    assert!(t.is_some_and(|t| dir.sign() * t > 0.0), "{t:?}");
}

#[test]
fn sin_sources_and_sinks_alternate_by_fiber() {
    let rs = radial_sets(&sym(2.0, TrigPoly::sin_mode(1, 1.0)), &RootOptions::default()).unwrap();
    assert!(rs.is_source(0.0, Fiber::Plus, 1e-9));
    assert!(rs.is_source(PI, Fiber::Minus, 1e-9));
    assert!(!rs.is_source(PI, Fiber::Plus, 1e-9));
    assert_eq!(rs.sources.len(), 2);
    assert_eq!(rs.sinks.len(), 2);
}

#[test]
fn escape_holds_at_default_eps() {
    let roots = RootOptions::default();
    let p = sym(2.0, TrigPoly::sin_mode(2, 1.0));
    let eps = default_eps(&p, &roots).unwrap();
    assert!(eps > 0.0 && eps < PI / 4.0);
    let e = build_escape(&p, eps, 10.0, &roots).unwrap();
    let r = escape_derivative_check(&p, &e, &EscapeGrid { nx: 64, nxi: 32, ..Default::default() }).unwrap();
    assert!(r.constant.unwrap() > 0.5, "{r:?}");
}

#[test]
fn quasimode_frequencies_sit_on_the_source_fiber() {
    let op = Operator::divergence(TrigPoly::sin_mode(1, 1.0));
    let local = local_data(&op, PI, Complex64::new(0.0, 0.0), &WkbOptions::default()).unwrap();
    let amp = solve_amplitude(&local).unwrap();
    let state = synthesize(&local, &amp, &SynthesisOptions { n_syn: 8192, ..Default::default() }).unwrap();
    let pos: f64 = (1..4096).map(|n| state.coeff(n).norm_sqr()).sum();
    let neg: f64 = (1..4096).map(|n| state.coeff(-n).norm_sqr()).sum();
    assert!(neg < 1e-12 * pos, "{neg} vs {pos}");
}

#[test]
fn wkb_rejects_sinks_and_regular_points() {
    let op = Operator::divergence(TrigPoly::sin_mode(1, 1.0));
    let z = Complex64::new(0.0, 0.0);
    assert!(matches!(local_data(&op, 1.0, z, &WkbOptions::default()), Err(Error::NotCharacteristic { .. })));
    let elliptic = Operator::divergence(TrigPoly::new(vec![2.0], vec![1.0]));
    assert!(local_data(&elliptic, 0.0, z, &WkbOptions::default()).is_err());
}

#[test]
fn shooting_reflects_between_half_lines() {
    let op = Operator::divergence(TrigPoly::sin_mode(1, 1.0));
    let opts = ShootOptions { k_max: 1024, ..Default::default() };
    let plus = shoot(&op, Complex64::new(0.0, 1.0), ShootDirection::Positive, &opts).unwrap();
    let minus = shoot(&op, Complex64::new(0.0, 1.0), ShootDirection::Negative, &opts).unwrap();
    assert_eq!(plus.summable_count(), 1);
    assert_eq!(minus.summable_count(), 1);
}

#[test]
fn elliptic_truncations_converge() {
    let op = Operator::quantized(sym(2.0, TrigPoly::new(vec![2.0], vec![1.0])));
    let rep = spectrum(&op, &SpectrumOptions { n_list: vec![32, 64, 128], ..Default::default() }).unwrap();
    assert!(rep.label.is_none());
    let (a, b) = (&rep.eigenvalues[1], &rep.eigenvalues[2]);
    let smallest = |v: &Vec<f64>| v.iter().cloned().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    assert!((smallest(a) - smallest(b)).abs() < 1e-8);
}

#[test]
fn flow_directions_are_mirror_images() {
    let p = sym(2.0, TrigPoly::sin_mode(1, 1.0));
    let opts = FlowOptions::default();
    let f = detect_blowup(&p, Seed { x: PI, xi: 2.0 }, Direction::Forward, &opts).unwrap().unwrap();
    let b = detect_blowup(&p, Seed { x: 0.0, xi: 2.0 }, Direction::Backward, &opts).unwrap().unwrap();
    assert!((f + b).abs() < 1e-6);
}
