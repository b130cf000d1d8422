use herbnmt_core::balance::*;
use herbnmt_core::corpus::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn planar(points: &[(f64, f64)]) -> DistanceMatrix {
    let n = points.len();
    let data = points
        .iter()
        .flat_map(|a| points.iter().map(move |b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()))
        .collect();
    DistanceMatrix::from_dense(n, data)
}

fn exhaustive(d: &DistanceMatrix, k: usize) -> f64 {
    fn rec(d: &DistanceMatrix, k: usize, start: usize, chosen: &mut Vec<usize>, best: &mut f64) {
        if chosen.len() == k {
            *best = best.min(medoid_cost(d, chosen));
            return;
        }
        for i in start..d.len() {
            chosen.push(i);
            rec(d, k, i + 1, chosen, best);
            chosen.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(d, k, 0, &mut Vec::new(), &mut best);
    best
}

#[test]
fn pam_against_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut optimal, mut worst) = (0, 1.0f64);
    for _ in 0..100 {
        let n = rng.random_range(4..=12);
        let k = rng.random_range(1..=3);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
        let d = planar(&pts);
        let pam = k_medoids(&d, k).unwrap();
        let best = exhaustive(&d, k);
        if pam.cost <= best + 1e-12 {
            optimal += 1;
        }
        worst = worst.max(pam.cost / best);
        // No single medoid/non-medoid swap improves the result.
        for slot in 0..k {
            for o in (0..n).filter(|o| !pam.indices.contains(o)) {
                let mut t = pam.indices.clone();
                t[slot] = o;
                assert!(medoid_cost(&d, &t) >= pam.cost - 1e-12);
            }
        }
    }
    assert!(optimal >= 90, "optimal on {optimal}/100");
    assert!(worst <= 1.2, "worst ratio {worst}");
}

#[test]
fn planted_clusters_each_get_a_medoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let centers: [&[u16]; 3] = [&[1, 2, 3, 4], &[100, 101, 102], &[500, 600, 700, 710, 711]];
    let mut records = Vec::new();
    let mut cluster = Vec::new();
    let code: IcdCode = "250".parse().unwrap();
    for i in 0..90 {
        let c = i % 3;
        let ids = centers[c];
        let comps = ids
            .iter()
            .enumerate()
            .map(|(r, &id)| {
                let base = 47 - 8 * r as i32;
                let jitter = rng.random_range(-2..=2);
                (ComponentId::new(id).unwrap(), Dose::from_decigrams((base + jitter) as u8).unwrap())
            })
            .collect();
        let p = Prescription::new(comps, None, 3, 7).unwrap();
        let ph = Phenotype::new(code, None, None, Sex::Female, 40, 5, Some(1)).unwrap();
        records.push(Record { phenotype: ph, prescription: p });
        cluster.push(c);
    }
    let cfg = BalanceConfig { per_class_cap: 3, presample_ceiling: 1000, seed: 0 };
    let (out, report) = balance_corpus(&records, &cfg).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(report.classes, vec![(code, 90, 3)]);
    let mut hit: Vec<usize> = out.iter().map(|r| cluster[records.iter().position(|x| x == r).unwrap()]).collect();
    hit.sort_unstable();
    assert_eq!(hit, vec![0, 1, 2]);
}

#[test]
fn desk_corpus_flattens_without_losing_classes() {
    let records = generate_corpus(&GeneratorConfig { records_per_profile: 150, noise_rate: 0.3, ..GeneratorConfig::desk(1) }).unwrap();
    let cfg = BalanceConfig { per_class_cap: 120, presample_ceiling: 200, seed: 9 };
    let (out, report) = balance_corpus(&records, &cfg).unwrap();
    assert_eq!(report.classes.len(), 40);
    for (_, before, after) in &report.classes {
        assert!(*after >= 1 && *after <= 120);
        assert_eq!(*after, (*before).min(120));
    }
    for r in &out {
        assert!(records.contains(r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn medoids_are_distinct_members(seed in 0u64..10_000, n in 1usize..30, k_frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0))).collect();
        let d = planar(&pts);
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let m = k_medoids(&d, k).unwrap();
        prop_assert_eq!(m.indices.len(), k);
        prop_assert!(m.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(m.indices.iter().all(|&i| i < n));
        prop_assert!((m.cost - medoid_cost(&d, &m.indices)).abs() < 1e-9);
        prop_assert_eq!(k_medoids(&d, k).unwrap(), m);
    }

    #[test]
    fn distance_matrix_is_a_metric_table(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs: Vec<EncodedVector> = (0..6)
            .map(|_| {
                let id = ComponentId::new(rng.random_range(1..=718)).unwrap();
                let p = Prescription::new(vec![(id, Dose::from_decigrams(rng.random_range(1..=50)).unwrap())], None, rng.random_range(1..=27), rng.random_range(1..=90)).unwrap();
                encode_prescription(&p)
            })
            .collect();
        let d = pairwise_distance(&vs).unwrap();
        for i in 0..6 {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..6 {
                prop_assert!(d.get(i, j) >= 0.0);
                prop_assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }
}
