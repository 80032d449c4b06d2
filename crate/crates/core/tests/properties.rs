use faircert::fixtures::{
    integer_domain, random_network, real_domain, running_example_domain, running_example_network,
};
use faircert::forward::pinned_bounds;
use faircert::oracle::{check_partition_unfair, enumerate, DEFAULT_PAIR_LIMIT};
use faircert::quantifier::domain_measure;
use faircert::{
    backward_gradient, bisect, certify, check_partition_fair, decide, forward_pass, partition_measure,
    symbolic_forward, ActivationState, EngineConfig, Interval, LeafOutcome, Network, Partition, RefineConfig, Verdict,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box<R: Rng>(rng: &mut R, dim: usize) -> Vec<Interval<f64>> {
    (0..dim)
        .map(|_| {
            let a = rng.random_range(-3.0..3.0);
            let w = rng.random_range(0.0..2.0);
            Interval::new(a, a + w)
        })
        .collect()
}

fn sample_in<R: Rng>(rng: &mut R, b: &[Interval<f64>]) -> Vec<f64> {
    b.iter()
        .map(|i| {
            if i.lo == i.hi {
                i.lo
            } else {
                rng.random_range(i.lo..=i.hi)
            }
        })
        .collect()
}

fn random_hidden<R: Rng>(rng: &mut R) -> Vec<usize> {
    let layers = rng.random_range(1..=3);
    (0..layers).map(|_| rng.random_range(1..=16)).collect()
}

#[test]
fn output_bounds_contain_samples_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..60 {
        let dim = rng.random_range(1..=5);
        let hidden = random_hidden(&mut rng);
        let net = random_network(&mut rng, dim, &hidden, 2.0);
        let b = random_box(&mut rng, dim);
        let pass = forward_pass(&net, &b).unwrap();
        for _ in 0..1000 {
            let x = sample_in(&mut rng, &b);
            let s = net.evaluate(&x).unwrap().score;
            assert!(pass.output.lo.eval(&x) <= s + 1e-9);
            assert!(s <= pass.output.up.eval(&x) + 1e-9);
            assert!(pass.concrete.lo <= s + 1e-9 && s <= pass.concrete.hi + 1e-9);
        }
    }
}

#[test]
fn output_bounds_contain_samples_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let dim = rng.random_range(1..=4);
        let hidden = random_hidden(&mut rng);
        let net: Network<f32> = random_network(&mut rng, dim, &hidden, 2.0).cast();
        let b64 = random_box(&mut rng, dim);
        let b: Vec<Interval<f32>> = b64.iter().map(|i| Interval::new(i.lo as f32, i.hi as f32)).collect();
        let pass = forward_pass(&net, &b).unwrap();
        let slack = 1e-3 * (1.0 + pass.concrete.hi.abs().max(pass.concrete.lo.abs()));
        for _ in 0..500 {
            let x: Vec<f32> = b
                .iter()
                .map(|i| {
                    if i.lo == i.hi {
                        i.lo
                    } else {
                        rng.random_range(i.lo..=i.hi)
                    }
                })
                .collect();
            let s = net.evaluate(&x).unwrap().score;
            assert!(pass.concrete.lo <= s + slack && s <= pass.concrete.hi + slack);
        }
    }
}

#[test]
fn shrinking_the_box_tightens_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let dim = rng.random_range(1..=4);
        let hidden = random_hidden(&mut rng);
        let net = random_network(&mut rng, dim, &hidden, 2.0);
        let outer = random_box(&mut rng, dim);
        let inner: Vec<Interval<f64>> = outer
            .iter()
            .map(|i| {
                let a = rng.random_range(i.lo..=i.hi);
                let b = rng.random_range(a..=i.hi);
                Interval::new(a, b)
            })
            .collect();
        let big = forward_pass(&net, &outer).unwrap().concrete;
        let small = forward_pass(&net, &inner).unwrap().concrete;
        assert!(
            big.lo <= small.lo + 1e-9 && small.hi <= big.hi + 1e-9,
            "{small} not in {big}"
        );
    }
}

/// Central finite differences of the network score.
fn fd_gradient(net: &Network, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (net.evaluate(&a).unwrap().score - net.evaluate(&b).unwrap().score) / (2.0 * h)
        })
        .collect()
}

#[test]
fn fully_active_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let dim = rng.random_range(1..=5);
        let width = rng.random_range(1..=8);
        let net = random_network(&mut rng, dim, &[width], 2.0);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pre = net.hidden_preactivations(&x).unwrap();
        if pre.iter().flatten().any(|z| z.abs() < 1e-3) {
            continue;
        }
        // Mask equal to the activation pattern at x; with every neuron active
        // this is the all-[1,1] case.
        let masks: Vec<Vec<ActivationState>> = pre
            .iter()
            .map(|l| {
                l.iter()
                    .map(|&z| {
                        if z > 0.0 {
                            ActivationState::Active
                        } else {
                            ActivationState::Inactive
                        }
                    })
                    .collect()
            })
            .collect();
        let g = backward_gradient(&net, &masks).unwrap();
        let fd = fd_gradient(&net, &x, 1e-6);
        for (gi, fi) in g.iter().zip(&fd) {
            assert_eq!(gi.lo, gi.hi);
            assert!((gi.lo - fi).abs() < 1e-6, "{gi} vs {fi}");
        }
    }
}

#[test]
fn gradient_intervals_cover_sampled_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..80 {
        let dim = rng.random_range(1..=4);
        let hidden = random_hidden(&mut rng);
        let net = random_network(&mut rng, dim, &hidden, 2.0);
        let b = random_box(&mut rng, dim);
        let pass = forward_pass(&net, &b).unwrap();
        let g = backward_gradient(&net, &pass.masks).unwrap();
        for _ in 0..100 {
            let x = sample_in(&mut rng, &b);
            let pre = net.hidden_preactivations(&x).unwrap();
            // every sampled point's pattern is consistent with the mask
            for (layer, states) in pre.iter().zip(&pass.masks) {
                for (&z, s) in layer.iter().zip(states) {
                    match s {
                        ActivationState::Active => assert!(z >= -1e-9),
                        ActivationState::Inactive => assert!(z <= 1e-9),
                        ActivationState::Unknown => {}
                    }
                }
            }
            if pre.iter().flatten().any(|z| z.abs() < 1e-4) {
                continue;
            }
            let fd = fd_gradient(&net, &x, 1e-7);
            for (gi, fi) in g.iter().zip(&fd) {
                let tol = 1e-6 * (1.0 + fi.abs());
                assert!(gi.lo - tol <= *fi && *fi <= gi.hi + tol, "{fi} outside {gi}");
            }
        }
    }
}

#[test]
fn verdict_is_symmetric_in_the_two_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..2000 {
        let mut iv = || {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            Interval::new(a.min(b), a.max(b))
        };
        let (o, op) = (iv(), iv());
        assert_eq!(decide(o, op, 0.0), decide(op, o, 0.0));
    }
}

#[test]
fn symbolic_verdicts_agree_with_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut fair = 0;
    for _ in 0..150 {
        let unprotected = rng.random_range(1..=3);
        let values: Vec<u32> = (0..unprotected).map(|_| rng.random_range(1..=5)).collect();
        let protected = rng.random_range(0..=unprotected);
        let domain = integer_domain(&values, protected);
        let hidden = random_hidden(&mut rng);
        let net = random_network(&mut rng, unprotected + 1, &hidden, 2.0);
        let p = Partition::root(&domain, 0);
        let out = symbolic_forward(&net, protected, &p).unwrap();
        match out.verdict {
            Verdict::Fair => {
                fair += 1;
                assert!(check_partition_fair(&net, &domain, &p).unwrap());
            }
            Verdict::Unfair => {
                assert!(check_partition_unfair(&net, &domain, &p).unwrap());
            }
            Verdict::Undecided => {}
        }
    }
    assert!(fair > 0, "suite never exercised the fair branch");
}

#[test]
fn pinned_protected_attribute_has_no_symbolic_coefficient() {
    let net = running_example_network();
    let root = Partition::root(&running_example_domain(), 0);
    for v in [0.0, 1.0] {
        let pass = forward_pass(&net, &pinned_bounds::<f64>(&root, 1, v)).unwrap();
        assert_eq!(pass.output.lo.coeffs[1], 0.0);
        assert_eq!(pass.output.up.coeffs[1], 0.0);
    }
}

#[test]
fn leaves_tile_the_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let values: Vec<u32> = (0..3).map(|_| rng.random_range(1..=8)).collect();
        let domain = integer_domain(&values, 1);
        let hidden = random_hidden(&mut rng);
        let net = random_network(&mut rng, 4, &hidden, 2.0);
        let cfg = EngineConfig {
            record_partitions: true,
            ..EngineConfig::default()
        };
        let r = certify(&net, &domain, &cfg).unwrap();
        let total: f64 = r.partitions.iter().map(|p| p.measure).sum();
        assert_eq!(total, domain_measure(&domain));
        let points: u64 = r
            .partitions
            .iter()
            .map(|p| {
                enumerate(&net, &domain, &p.partition(), DEFAULT_PAIR_LIMIT)
                    .unwrap()
                    .total_pairs
            })
            .sum();
        assert_eq!(points as f64, domain_measure(&domain));
        assert!(r.partitions_processed < (1u64 << 21));
    }
}

#[test]
fn engine_soundness_on_random_discrete_domains() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..40 {
        let unprotected = rng.random_range(1..=3);
        let values: Vec<u32> = (0..unprotected).map(|_| rng.random_range(1..=6)).collect();
        let domain = integer_domain(&values, 0);
        let hidden = random_hidden(&mut rng);
        let net = random_network(&mut rng, unprotected + 1, &hidden, 2.0);
        let cfg = EngineConfig {
            record_partitions: true,
            refine: RefineConfig {
                max_refinement_depth: 8,
                min_sample_depth: 4,
                ..RefineConfig::default()
            },
            ..EngineConfig::default()
        };
        let r = certify(&net, &domain, &cfg).unwrap();
        for rec in &r.partitions {
            match rec.outcome {
                LeafOutcome::Fair => assert!(check_partition_fair(&net, &domain, &rec.partition()).unwrap()),
                LeafOutcome::Unfair => assert!(check_partition_unfair(&net, &domain, &rec.partition()).unwrap()),
                _ => {}
            }
        }
        for c in &r.counterexamples {
            assert!(c.verify(&net));
        }
    }
}

#[test]
fn real_domains_certify_and_conserve() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let domain = real_domain(&[(0.0, 1.0), (-1.0, 1.0)], 2);
        let net = random_network(&mut rng, 3, &[6], 1.0);
        let cfg = EngineConfig {
            refine: RefineConfig {
                max_refinement_depth: 12,
                min_sample_depth: 10,
                ..RefineConfig::default()
            },
            record_partitions: true,
            ..EngineConfig::default()
        };
        let r = certify(&net, &domain, &cfg).unwrap();
        let sum = r.rates.certified + r.rates.falsified + r.rates.undecided;
        assert!((sum - 1.0).abs() < 1e-9);
        let total: f64 = r.partitions.iter().map(|p| p.measure).sum();
        assert!((total - domain_measure(&domain)).abs() < 1e-12);
        assert!(r.max_depth_reached <= 12);
    }
}

#[test]
fn parallel_rates_match_sequential() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let values: Vec<u32> = (0..3).map(|_| rng.random_range(2..=8)).collect();
        let domain = integer_domain(&values, 2);
        let hidden = random_hidden(&mut rng);
        let net = random_network(&mut rng, 4, &hidden, 2.0);
        let seq = certify(&net, &domain, &EngineConfig::default()).unwrap();
        for workers in [2, 4] {
            let par = certify(
                &net,
                &domain,
                &EngineConfig {
                    workers,
                    ..EngineConfig::default()
                },
            )
            .unwrap();
            assert!(!par.timed_out);
            assert!((seq.rates.certified - par.rates.certified).abs() < 1e-9);
            assert!((seq.rates.falsified - par.rates.falsified).abs() < 1e-9);
            assert!((seq.rates.undecided - par.rates.undecided).abs() < 1e-9);
            assert_eq!(seq.cex_count, par.cex_count);
        }
    }
}

#[test]
fn tiny_timeout_leaves_work_undecided() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let domain = real_domain(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)], 0);
    let net = random_network(&mut rng, 4, &[16, 16], 2.0);
    let cfg = EngineConfig {
        timeout: std::time::Duration::from_nanos(1),
        ..EngineConfig::default()
    };
    let r = certify(&net, &domain, &cfg).unwrap();
    assert!(r.timed_out);
    assert_eq!(r.rates.undecided, 1.0);
    assert_eq!(r.verdict, faircert::OverallVerdict::Undecided);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bisection_children_partition_parent(lb in -20i32..20, w in 1i32..40, depth in 0u32..10) {
        let d = faircert::DomainSpec::new(vec![
            faircert::AttributeSpec::new("p", faircert::AttributeKind::Binary, 0.0, 1.0),
            faircert::AttributeSpec::new("a", faircert::AttributeKind::Integer, f64::from(lb), f64::from(lb + w)),
        ], "p").unwrap();
        let mut p = Partition::root(&d, 0);
        p.depth = depth;
        let (l, u) = bisect(&p, 1, &d).unwrap();
        prop_assert_eq!(l.depth, depth + 1);
        prop_assert_eq!(u.depth, depth + 1);
        prop_assert_eq!(l.bounds[1].hi + 1.0, u.bounds[1].lo);
        prop_assert_eq!(l.bounds[1].lo, p.bounds[1].lo);
        prop_assert_eq!(u.bounds[1].hi, p.bounds[1].hi);
        prop_assert_eq!(partition_measure(&l, &d) + partition_measure(&u, &d), partition_measure(&p, &d));
    }
}
