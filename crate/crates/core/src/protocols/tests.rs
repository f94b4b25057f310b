use super::*;
use crate::channels::transcript_cardinality;
use crate::models::{make_dense_alternative, PanelConfig, PanelDirections, PanelMember, RatioClass, Construction};
use crate::rng;

fn q0(d: usize) -> SimplexVector {
    SimplexVector::uniform(d)
}

fn local_bits_spec() -> ProtocolSpec {
    ProtocolSpec::new(
        Model::Multinomial,
        Constraint::Bandwidth { b: 4 },
        Randomness::Local,
        Aggregator::SumOfBits,
        8,
        1000,
        4,
    )
}

#[test]
fn infinite_thresholds() {
    let mut spec = ProtocolSpec::new(Model::Multinomial, Constraint::None, Randomness::Local, Aggregator::SumOfSquares, 3, 10, 4);
    let truth = Truth::Multinomial(q0(4));
    assert!(matches!(run_once(&spec, &q0(4), &truth, 1), Err(Error::Uncalibrated)));
    spec.threshold = Some(f64::INFINITY);
    assert!(!run_once(&spec, &q0(4), &truth, 1).unwrap());
    spec.threshold = Some(f64::NEG_INFINITY);
    for s in 0..20 {
        assert!(run_once(&spec, &q0(4), &truth, s).unwrap());
    }
}

#[test]
fn calibration_definition_and_determinism() {
    let spec = ProtocolSpec::new(Model::Gaussian, Constraint::None, Randomness::Local, Aggregator::SumOfSquares, 4, 50, 6);
    let ex = Exec::serial();
    let a = calibrate(&spec, &q0(6), 0.5, 1000, 9, &ex).unwrap();
    let b = calibrate(&spec, &q0(6), 0.5, 1000, 9, &ex).unwrap();
    assert_eq!(a.threshold, b.threshold);
    let mut s = null_statistics(&spec, &q0(6), 1000, 9, &ex).unwrap();
    s.sort_by(f64::total_cmp);
    assert_eq!(a.threshold.unwrap(), s[499]);
    assert!(matches!(calibrate(&spec, &q0(6), 0.05, 1000, 9, &ex), Err(Error::Calibration(_))));
    assert!(calibrate(&spec, &q0(6), 1.0, 1000, 9, &ex).is_err());
}

#[test]
fn quantile_index_is_ceiling_order_statistic() {
    assert_eq!(quantile_index(0.05, 10_000), 9499);
    assert_eq!(quantile_index(0.5, 1000), 499);
    assert_eq!(quantile_index(0.5, 3), 1);
}

#[test]
fn run_once_level_matches_calibrated_level() {
    let ex = Exec::serial();
    let spec = calibrate(&local_bits_spec(), &q0(4), 0.05, 10_000, 21, &ex).unwrap();
    let t = spec.threshold.unwrap();
    let cal = null_statistics(&spec, &q0(4), 10_000, 21, &ex).unwrap();
    let achieved = cal.iter().filter(|&&x| x > t).count() as f64 / 1e4;
    let truth = Truth::Multinomial(q0(4));
    let rej = (0..10_000u64).filter(|s| run_once(&spec, &q0(4), &truth, 1_000_000 + s).unwrap()).count() as f64 / 1e4;
    let se = (2.0 * achieved * (1.0 - achieved) / 1e4).sqrt();
    assert!((rej - achieved).abs() < 3.0 * se, "{rej} vs {achieved}");
    assert!(achieved <= 0.05);
}

#[test]
fn extreme_separation_is_detected() {
    let d = 4;
    let ex = Exec::serial();
    let spec = ProtocolSpec::new(Model::Multinomial, Constraint::None, Randomness::Local, Aggregator::SumOfSquares, 8, 200, d);
    let spec = calibrate(&spec, &q0(d), 0.05, 2000, 1, &ex).unwrap();
    let eps = 1e-6;
    let q = SimplexVector::new(vec![1.0 - 3.0 * eps, eps, eps, eps]).unwrap();
    let rc = RatioClass::new(1e7).unwrap();
    let rho = crate::models::separation_l1(&q, &q0(d)).unwrap();
    let panel = AlternativePanel::new(
        vec![PanelMember {
            truth: Truth::Multinomial(q),
            construction: Construction::DensePm,
        }],
        rho,
        &q0(d),
        &rc,
    )
    .unwrap();
    let r = testing_risk(&spec, &q0(d), &panel, 2000, 2, &ex).unwrap();
    assert_eq!(r.worst_type_two, 0.0, "{r:?}");
    assert!(r.type_one < 0.05 + 4.0 * (0.05f64 * 0.95 / 2000.0).sqrt(), "{r:?}");
    assert!((r.risk - r.type_one - r.worst_type_two).abs() < 1e-15);
}

#[test]
fn single_bit_single_server_is_powerless_below_rate() {
    let d = 256;
    let ex = Exec::serial();
    let spec = ProtocolSpec::new(Model::Gaussian, Constraint::Bandwidth { b: 1 }, Randomness::Shared, Aggregator::SumOfBits, 1, 100, d);
    let spec = calibrate(&spec, &q0(d), 0.05, 2000, 3, &ex).unwrap();
    // √d/(√m n) = 0.16, so ρ = 0.1 sits well below the rate
    let dirs = PanelDirections::new(d, PanelConfig::default(), 4).unwrap();
    let panel = dirs.at(0.1, &RatioClass::new(4.0).unwrap()).unwrap();
    let r = testing_risk(&spec, &q0(d), &panel, 2000, 5, &ex).unwrap();
    assert!(r.risk >= 0.9, "{r:?}");
}

#[test]
fn power_is_monotone_along_a_ray() {
    let d = 8;
    let ex = Exec::serial();
    let spec = ProtocolSpec::new(Model::Multinomial, Constraint::None, Randomness::Local, Aggregator::SumOfSquares, 4, 64, d);
    let spec = calibrate(&spec, &q0(d), 0.05, 2000, 7, &ex).unwrap();
    let f = [0.1, -0.05, 0.08, 0.02];
    let reps = 3000;
    let mut prev: Option<f64> = None;
    for t in [0.25, 0.5, 0.75, 1.0] {
        let g: Vec<f64> = f.iter().map(|x| x * t).collect();
        let q = make_dense_alternative(&g, d).unwrap();
        let power = 1.0 - type_two_error(&spec, &q0(d), &Truth::Multinomial(q), 0, reps, 8, &ex).unwrap();
        if let Some(p) = prev {
            let se = (p * (1.0 - p) / reps as f64).sqrt().max(1.0 / reps as f64);
            assert!(power >= p - 2.0 * se, "{power} < {p}");
        }
        prev = Some(power);
    }
}

#[test]
fn server_order_does_not_change_the_aggregate() {
    let d = 6;
    let q = make_dense_alternative(&[0.05, -0.02, 0.04], d).unwrap();
    let truth = Truth::Multinomial(q);
    let specs = [
        ProtocolSpec::new(Model::Multinomial, Constraint::None, Randomness::Local, Aggregator::SumOfSquares, 5, 30, d),
        ProtocolSpec::new(Model::Multinomial, Constraint::Bandwidth { b: 2 }, Randomness::Local, Aggregator::SumOfBits, 5, 30, d),
        ProtocolSpec::new(Model::Multinomial, Constraint::Bandwidth { b: 3 }, Randomness::Shared, Aggregator::SumOfBits, 5, 30, d),
        ProtocolSpec::new(Model::Multinomial, Constraint::Bandwidth { b: 1 }, Randomness::Local, Aggregator::LocalVote, 5, 30, d),
        raw_forwarding_protocol(d, 30, 5),
    ];
    for spec in &specs {
        let prep = Prepared::new(spec, &q0(d), &truth).unwrap();
        for s in 0..20 {
            let (mut ts, shared) = server_transcripts(&prep, s, &[1]).unwrap();
            let a = aggregate(spec, &q0(d), &ts, shared).unwrap();
            ts.reverse();
            ts.swap(0, 2);
            let b = aggregate(spec, &q0(d), &ts, shared).unwrap();
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{spec:?}");
        }
    }
}

#[test]
fn unconstrained_matches_pooled_oracle() {
    let d = 8;
    let ex = Exec::serial();
    let spec = ProtocolSpec::new(Model::Multinomial, Constraint::None, Randomness::Local, Aggregator::SumOfSquares, 8, 64, d);
    let oracle = pooled_oracle_spec(&spec);
    let dirs = PanelDirections::new(d, PanelConfig { dense: 2, prior: 2 }, 3).unwrap();
    let panel = dirs.at(0.2, &RatioClass::new(4.0).unwrap()).unwrap();
    let reps = 10_000;
    let a = calibrate(&spec, &q0(d), 0.05, 10_000, 31, &ex).unwrap();
    let b = calibrate(&oracle, &q0(d), 0.05, 10_000, 31, &ex).unwrap();
    let ra = testing_risk(&a, &q0(d), &panel, reps, 32, &ex).unwrap();
    let rb = testing_risk(&b, &q0(d), &panel, reps, 33, &ex).unwrap();
    let se = (ra.mc_stderr.powi(2) + rb.mc_stderr.powi(2)).sqrt();
    assert!((ra.risk - rb.risk).abs() < 3.0 * se, "{} vs {} (se {se})", ra.risk, rb.risk);
}

#[test]
fn bit_decisions_replay_from_transcripts() {
    let d = 8;
    let ex = Exec::serial();
    let spec = ProtocolSpec::new(Model::Gaussian, Constraint::Bandwidth { b: 3 }, Randomness::Shared, Aggregator::SumOfBits, 6, 40, d);
    let spec = ProtocolSpec { sampler: Sampler::Full, ..spec };
    let spec = calibrate(&spec, &q0(d), 0.1, 1000, 2, &ex).unwrap();
    let q = make_dense_alternative(&[0.1, 0.1, -0.1, 0.05], d).unwrap();
    let prep = Prepared::new(&spec, &q0(d), &Truth::Multinomial(q)).unwrap();
    for s in 0..30 {
        let (ts, shared) = server_transcripts(&prep, s, &[4]).unwrap();
        let total: usize = ts.iter().map(|t| t.as_bits().unwrap().len()).sum();
        assert!(total <= spec.m * 3);
        for t in &ts {
            assert!(transcript_cardinality(t).unwrap() <= 8);
        }
        let bytes: Vec<Vec<u8>> = ts.iter().map(|t| t.as_bits().unwrap().to_bytes()).collect();
        let replayed: Vec<crate::channels::Transcript> = bytes
            .iter()
            .enumerate()
            .map(|(j, b)| crate::channels::Transcript::bits(crate::channels::BitString::from_bytes(b).unwrap(), j))
            .collect();
        let direct = prep.sample(s, &[4]).unwrap() > spec.threshold.unwrap();
        assert_eq!(decide_from_transcripts(&spec, &q0(d), &replayed, shared, tie_uniform(s, &[4])).unwrap(), direct);
    }
}

fn ks_distance(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut best) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    best
}

#[test]
fn aggregate_route_matches_server_simulation() {
    let d = 8;
    let q = make_dense_alternative(&[0.12, -0.08, 0.1, 0.05], d).unwrap();
    let truth = Truth::Multinomial(q);
    let rr = Constraint::Dp {
        epsilon: 0.8,
        delta: 0.0,
        clip_bound: 3.0,
        mechanism: Some(Mechanism::RandomizedResponse),
    };
    let mut specs = vec![
        ProtocolSpec::new(Model::Gaussian, Constraint::None, Randomness::Local, Aggregator::SumOfSquares, 6, 50, d),
        ProtocolSpec::new(Model::Gaussian, Constraint::Bandwidth { b: 1 }, Randomness::Local, Aggregator::LocalVote, 30, 50, d),
        ProtocolSpec::new(Model::Gaussian, rr, Randomness::Local, Aggregator::LocalVote, 30, 50, d),
        ProtocolSpec::new(Model::Gaussian, Constraint::Bandwidth { b: 3 }, Randomness::Local, Aggregator::SumOfBits, 7, 50, d),
        ProtocolSpec::new(Model::Gaussian, Constraint::Bandwidth { b: 3 }, Randomness::Shared, Aggregator::SumOfBits, 7, 50, d),
        ProtocolSpec::new(Model::Gaussian, rr, Randomness::Local, Aggregator::SumOfBits, 20, 50, d),
    ];
    let mut grouped = ProtocolSpec::new(Model::Gaussian, rr, Randomness::Shared, Aggregator::SumOfBits, 20, 50, d);
    grouped.groups = 2;
    specs.push(grouped);
    let reps = 4000;
    // 0.1% two-sample KS critical value
    let crit = 1.95 * (2.0 / reps as f64).sqrt();
    for (i, spec) in specs.iter().enumerate() {
        let fast = Prepared::new(spec, &q0(d), &truth).unwrap();
        assert!(fast.uses_fast_route(), "{spec:?}");
        let full_spec = ProtocolSpec { sampler: Sampler::Full, ..spec.clone() };
        let full = Prepared::new(&full_spec, &q0(d), &truth).unwrap();
        assert!(!full.uses_fast_route());
        let a: Vec<f64> = (0..reps).map(|r| fast.sample(100 + i as u64, &[r]).unwrap()).collect();
        let b: Vec<f64> = (0..reps).map(|r| full.sample(200 + i as u64, &[r]).unwrap()).collect();
        let ks = ks_distance(a, b);
        assert!(ks < crit, "{spec:?}: KS {ks} >= {crit}");
    }
}

#[test]
fn validation_rejects_mismatched_channels() {
    let bad = [
        ProtocolSpec::new(Model::Gaussian, Constraint::Bandwidth { b: 2 }, Randomness::Local, Aggregator::SumOfSquares, 2, 5, 4),
        ProtocolSpec::new(Model::Gaussian, Constraint::None, Randomness::Local, Aggregator::SumOfBits, 2, 5, 4),
        ProtocolSpec::new(Model::Gaussian, Constraint::None, Randomness::Local, Aggregator::PooledChiSquare, 2, 5, 4),
        ProtocolSpec::new(Model::Multinomial, Constraint::Bandwidth { b: 1 }, Randomness::Local, Aggregator::PooledChiSquare, 2, 5, 4),
        ProtocolSpec::new(Model::Gaussian, Constraint::Bandwidth { b: 0 }, Randomness::Local, Aggregator::SumOfBits, 2, 5, 4),
        ProtocolSpec::new(Model::Gaussian, Constraint::None, Randomness::Local, Aggregator::SumOfSquares, 0, 5, 4),
    ];
    for s in &bad {
        assert!(s.validate().is_err(), "{s:?}");
    }
    let mut g = ProtocolSpec::new(Model::Gaussian, Constraint::Bandwidth { b: 3 }, Randomness::Shared, Aggregator::SumOfBits, 8, 5, 4);
    g.groups = 2;
    assert!(g.validate().is_err());
}

#[test]
fn raw_forwarding_examples() {
    let s = raw_forwarding_protocol(1024, 8, 4);
    assert_eq!(s.constraint, Constraint::Bandwidth { b: 80 });
    s.validate().unwrap();
    let s = raw_forwarding_protocol(2, 1, 3);
    assert_eq!(s.constraint, Constraint::Bandwidth { b: 1 });
    let prep = Prepared::new(&s, &q0(2), &Truth::Multinomial(q0(2))).unwrap();
    let (ts, _) = server_transcripts(&prep, 0, &[]).unwrap();
    assert!(ts.iter().all(|t| t.as_bits().unwrap().len() == 1));
}

#[test]
fn spec_json_roundtrip() {
    let mut s = ProtocolSpec::new(
        Model::Gaussian,
        Constraint::Dp {
            epsilon: 0.5,
            delta: 0.0,
            clip_bound: 2.0,
            mechanism: Some(Mechanism::RandomizedResponse),
        },
        Randomness::Shared,
        Aggregator::SumOfBits,
        10,
        100,
        16,
    );
    s.groups = 2;
    s.threshold = Some(1.5);
    let j = serde_json::to_string(&s).unwrap();
    let back: ProtocolSpec = serde_json::from_str(&j).unwrap();
    assert_eq!(back, s);
    let _ = rng::derive(0, &[]);
}
