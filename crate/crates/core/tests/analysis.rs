use herbnmt_core::analysis::*;
use herbnmt_core::corpus::*;
use herbnmt_core::rcnn::{self, record_labels, Rcnn, RcnnConfig, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `sizes.len()` dense random blocks, `coupling` between consecutive blocks,
/// self-affinities up to `diagonal`.
fn blocks(rng: &mut ChaCha8Rng, sizes: &[usize], coupling: f64, diagonal: f64) -> (SymmetricAffinity, Vec<usize>) {
    let n: usize = sizes.iter().sum();
    let cat: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = if cat[i] == cat[j] { rng.random_range(1.0..5.0) } else if cat[i] + 1 == cat[j] { coupling } else { 0.0 };
            m.set(i, j, v);
            m.set(j, i, v);
        }
        m.set(i, i, rng.random_range(0.0..=diagonal));
    }
    (SymmetricAffinity::new(m).unwrap(), cat)
}

#[test]
fn component_count_equals_zero_eigenvalue_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for c in 1..=6 {
        let sizes: Vec<usize> = (0..c).map(|_| rng.random_range(1..9)).collect();
        let (w, _) = blocks(&mut rng, &sizes, 0.0, 50.0);
        let e = laplacian_spectrum(&w).unwrap();
        assert_eq!(e.values.iter().filter(|v| v.abs() < 1e-9).count(), c, "{sizes:?} {:?}", e.values);
        assert!(e.values[0] >= -1e-9);
    }
}

#[test]
fn weakly_coupled_blocks_separate_in_the_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, cat) = blocks(&mut rng, &[12, 9], 1e-3, 50.0);
    let coords = spectral_embed(&w, 1).unwrap();
    let d = category_distances(&coords, &cat).unwrap();
    let centroid = |c: usize| coords.iter().zip(&cat).filter(|(_, &k)| k == c).map(|(p, _)| p[0]).sum::<f64>() / cat.iter().filter(|&&k| k == c).count() as f64;
    let spread = coords.iter().zip(&cat).map(|(p, &k)| (p[0] - centroid(k)).abs()).fold(0.0, f64::max);
    assert!(d.get(0, 1) > 10.0 * spread, "{} vs {spread}", d.get(0, 1));
}

#[test]
fn duplicated_categories_share_a_centroid() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, _) = blocks(&mut rng, &[5, 5], 0.5, 50.0);
    let coords = spectral_embed(&w, 3).unwrap();
    let doubled: Vec<Vec<f64>> = coords.iter().chain(&coords).cloned().collect();
    let cats: Vec<usize> = (0..20).map(|i| i / 10).collect();
    let d = category_distances(&doubled, &cats).unwrap();
    assert!(d.get(0, 1) < 1e-12);
}

#[test]
fn planted_blocks_come_apart_at_the_dendrogram_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, cat) = blocks(&mut rng, &[6, 7], 0.01, 1.0);
    let rows: Vec<Vec<u64>> = w.matrix().rows().iter().map(|r| r.iter().map(|v| (v * 100.0).round() as u64).collect()).collect();
    let cm = rcnn::ConfusionMatrix::from_counts(13, rows.concat()).unwrap();
    let labels: Vec<String> = (0..13).map(|i| format!("D{i}")).collect();
    for (input, dims) in [(ClusterInput::Spectral, 1), (ClusterInput::Rows, 8)] {
        let cfg = AnalysisConfig {
            spectral_dims: dims,
            cluster_input: input,
            ..AnalysisConfig::default()
        };
        let a = analyze_confusion(&cm, labels.clone(), &cfg).unwrap();
        let (left, right) = a.dendrogram.root_split().unwrap();
        let want: Vec<usize> = (0..13).filter(|&i| cat[i] == 0).collect();
        assert!(left == want || right == want, "{input:?}: {left:?} {right:?}");
        assert!(a.dendrogram.heights_monotone());
        assert!(a.dendrogram.newick().ends_with(';'));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]
    #[test]
    fn laplacian_invariants(n in 2usize..14, seed in 0u64..10_000, density in 0.1f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(density) {
                    let v = rng.random_range(0.0..3.0);
                    m.set(i, j, v);
                    m.set(j, i, v);
                }
            }
        }
        let l = unnormalized_laplacian(&m).unwrap();
        let e = eigendecompose(&l).unwrap();
        prop_assert!(e.values[0] >= -1e-9);
        for i in 0..n {
            prop_assert!(l.row(i).iter().sum::<f64>().abs() < 1e-9);
        }
        prop_assert!(e.reconstruct().max_abs_diff(&l) < 1e-8);
    }
}

#[test]
fn probe_rows_are_distributions_and_templates_cluster() {
    let cfg = GeneratorConfig {
        n_diseases: 6,
        n_categories: 3,
        records_per_profile: 100,
        class_skew: 0.0,
        ..GeneratorConfig::desk(21)
    };
    let generator = Generator::new(cfg).unwrap();
    let records = generator.generate().unwrap();
    let table = DiseaseTable::from_records(&records);
    let xs: Vec<EncodedVector> = records.iter().map(|r| encode_prescription(&r.prescription)).collect();
    let ys = record_labels(&records, &table).unwrap();
    let mut model = Rcnn::new(RcnnConfig::desk(table.len(), 5)).unwrap();
    rcnn::train(&mut model, &xs, &ys, &[], &[], &TrainConfig { epochs: 4, ..TrainConfig::default() }, |_| {}).unwrap();

    let truth = generator.ground_truth();
    let comps = truth.components.clone();
    let probe = single_component_probe(&model, &comps, Linkage::Average).unwrap();
    assert_eq!(probe.probabilities.len(), comps.len());
    for row in &probe.probabilities {
        assert_eq!(row.len(), table.len());
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    // Monarchs are unique to their template; pair each with its template mates.
    let idx = |c: ComponentId| comps.iter().position(|&x| x == c).unwrap();
    let (mut same, mut other) = (Vec::new(), Vec::new());
    for (d, prof) in truth.diseases.iter().enumerate() {
        let monarch = idx(prof.components[0]);
        for (e, q) in truth.diseases.iter().enumerate() {
            for &c in &q.components[1..] {
                if truth.diseases.iter().filter(|x| x.components.contains(&c)).count() != 1 {
                    continue;
                }
                let h = probe.dendrogram.cophenetic(monarch, idx(c));
                if d == e { same.push(h) } else { other.push(h) }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&same) < mean(&other), "{} vs {}", mean(&same), mean(&other));
}
