use herbnmt_core::corpus::*;
use herbnmt_core::rcnn::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_inputs(n: usize, seed: u64) -> Vec<EncodedVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut comps: Vec<(ComponentId, Dose)> = Vec::new();
            while comps.len() < rng.random_range(1..10) {
                let id = ComponentId::new(rng.random_range(1..=718)).unwrap();
                if !comps.iter().any(|c| c.0 == id) {
                    comps.push((id, Dose::from_decigrams(rng.random_range(1..=50)).unwrap()));
                }
            }
            encode_prescription(&Prescription::new(comps, None, rng.random_range(1..=27), rng.random_range(1..=90)).unwrap())
        })
        .collect()
}

fn random_labels(n: usize, sizes: &[usize], seed: u64) -> Vec<[usize; N_HEADS]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut l = [0; N_HEADS];
            for (x, &s) in l.iter_mut().zip(sizes) {
                *x = rng.random_range(0..s);
            }
            l
        })
        .collect()
}

#[test]
fn parameter_count_closed_form() {
    // groups 20 + 30 + 80, trunk 14*13*5 + 14, two blocks of 2 * (14*14*3 + 14),
    // shared 1470*128 + 128, heads 128*251 + 251.
    let cfg = RcnnConfig::desk(40, 0);
    assert_eq!(cfg.parameter_count(), 130 + 924 + 2408 + 188_288 + 32_379);
    assert_eq!(Rcnn::new(cfg.clone()).unwrap().params().element_count(), cfg.parameter_count());
    let gap = RcnnConfig { pool: TrunkPool::GlobalAverage, ..cfg };
    assert_eq!(Rcnn::new(gap.clone()).unwrap().params().element_count(), gap.parameter_count());
    let paper = RcnnConfig::paper(0);
    assert_eq!(paper.head_sizes, vec![909, 909, 909, 2, 105, 12, 10]);
    assert_eq!(paper.parameter_count(), 130 + 924 + 2408 + 188_288 + 128 * 2856 + 2856);
}

#[test]
fn heads_are_distributions_and_start_near_uniform() {
    let model = Rcnn::new(RcnnConfig::desk(40, 3)).unwrap();
    let xs = random_inputs(64, 1);
    let preds = model.predict_all(&xs, 32).unwrap();
    for p in &preds {
        assert_eq!(p.heads.len(), N_HEADS);
        for h in &p.heads {
            assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
    for (h, &size) in model.config().head_sizes.iter().enumerate() {
        let labels = random_labels(64, &model.config().head_sizes, 2);
        let ce: f64 = preds.iter().zip(&labels).map(|(p, l)| -p.heads[h][l[h]].ln()).sum::<f64>() / 64.0;
        let target = (size as f64).ln();
        assert!((ce - target).abs() <= 0.2 * target, "head {h}: {ce} vs ln {size} = {target}");
    }
}

#[test]
fn wrong_input_length_is_an_error() {
    let cfg = RcnnConfig { input_len: 420, ..RcnnConfig::desk(5, 0) };
    let model = Rcnn::new(cfg).unwrap();
    assert!(model.predict(&random_inputs(1, 0)[0]).is_err());
}

#[test]
fn argmax_invariant_under_final_layer_temperature() {
    let mut model = Rcnn::new(RcnnConfig::desk(10, 4)).unwrap();
    let xs = random_inputs(20, 5);
    let before: Vec<_> = model.predict_all(&xs, 8).unwrap().iter().map(|p| p.classes()).collect();
    let ids: Vec<_> = model.params().ids().filter(|&id| model.params().name(id).starts_with("head.")).collect();
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v *= 0.37;
        }
    }
    let after: Vec<_> = model.predict_all(&xs, 8).unwrap().iter().map(|p| p.classes()).collect();
    assert_eq!(before, after);
}

#[test]
fn zero_epochs_leave_the_model_unchanged_and_labels_are_checked() {
    let mut model = Rcnn::new(RcnnConfig::desk(4, 0)).unwrap();
    let xs = random_inputs(8, 6);
    let ys = random_labels(8, &model.config().head_sizes, 7);
    let before = model.params().clone();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let rep = train(&mut model, &xs, &ys, &[], &[], &cfg, |_| {}).unwrap();
    assert!(rep.epochs.is_empty());
    assert_eq!(model.params(), &before);
    let mut bad = ys.clone();
    bad[3][0] = 4;
    let err = train(&mut model, &xs, &bad, &[], &[], &TrainConfig::default(), |_| {});
    assert!(matches!(err, Err(herbnmt_core::nn::NnError::LabelOutOfRange { label: 4, classes: 4 })));
}

#[test]
fn training_is_deterministic_and_lowers_loss() {
    let cfg = RcnnConfig { group_pool: 4, ..RcnnConfig::desk(3, 9) };
    let xs = random_inputs(48, 8);
    let mut ys = random_labels(48, &cfg.head_sizes, 9);
    for (y, x) in ys.iter_mut().zip(&xs) {
        // A learnable primary label: which third of the catalogue the top component is in.
        let top = x.values()[..718].iter().enumerate().fold((0, 0.0f32), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0;
        y[0] = top * 3 / 718;
    }
    let tc = TrainConfig { epochs: 6, batch_size: 8, learning_rate: 3e-3, ..TrainConfig::default() };
    let run = || {
        let mut m = Rcnn::new(cfg.clone()).unwrap();
        let r = train(&mut m, &xs, &ys, &xs, &ys, &tc, |_| {}).unwrap();
        (m.params().clone(), r)
    };
    let (pa, ra) = run();
    let (pb, rb) = run();
    assert_eq!(pa, pb);
    assert_eq!(ra, rb);
    let losses: Vec<f64> = ra.epochs.iter().map(|e| e.train_loss).collect();
    assert!(losses.last().unwrap() < &ra.initial_loss);
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
}

#[test]
fn evaluation_examples() {
    let sizes = [3, 4, 4, 2, 105, 12, 10];
    let labels = random_labels(30, &sizes, 11);
    let perfect = evaluate_classes(&labels, &labels, &sizes).unwrap();
    assert_eq!(perfect.accuracy, [1.0; N_HEADS]);
    let c = &perfect.confusion[0];
    for t in 0..3 {
        for p in 0..3 {
            assert!(t == p || c.get(t, p) == 0);
        }
    }
    let constant: Vec<[usize; N_HEADS]> = labels.iter().map(|_| [1, 0, 0, 0, 0, 0, 0]).collect();
    let ev = evaluate_classes(&constant, &labels, &sizes).unwrap();
    let prevalence = labels.iter().filter(|l| l[0] == 1).count() as f64 / 30.0;
    assert_eq!(ev.accuracy[0], prevalence);
    let cm = &ev.confusion[0];
    for t in 0..3 {
        assert_eq!(cm.get(t, 0) + cm.get(t, 2), 0);
        assert_eq!(cm.row(t).iter().sum::<u64>() as usize, labels.iter().filter(|l| l[0] == t).count());
    }
    assert!(evaluate_classes(&[], &[], &sizes).is_err());
}

#[test]
fn knn_examples() {
    let train = random_inputs(100, 12);
    let labels: Vec<u32> = (0..100).map(|i| i % 7).collect();
    assert_eq!(knn_baseline(&train, &labels, &train[40..41], 1).unwrap(), vec![labels[40]]);
    assert_eq!(knn_baseline(&train[..1], &labels[..1], &train, 1).unwrap(), vec![labels[0]; 100]);
    let test = random_inputs(100, 13);
    let got = knn_baseline(&train, &labels, &test, 1).unwrap();
    for (t, &g) in test.iter().zip(&got) {
        let mut best = (f64::INFINITY, 0);
        for (i, x) in train.iter().enumerate() {
            let d: f64 = t.values().iter().zip(x.values()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        assert_eq!(g, labels[best.1]);
    }
    assert_eq!(majority_baseline(&[3, 1, 3, 1, 2]), Some(1));
}

#[test]
fn labels_follow_head_layout() {
    let table = DiseaseTable::new(vec!["010".parse().unwrap(), "020".parse().unwrap(), "030".parse().unwrap()]);
    let ph = Phenotype::new("020".parse().unwrap(), Some("010".parse().unwrap()), None, Sex::Female, 65, 3, Some(9)).unwrap();
    assert_eq!(phenotype_labels(&ph, &table).unwrap(), [1, 1, 0, 1, 65, 2, 9]);
    let no_year = Phenotype::new("020".parse().unwrap(), None, None, Sex::Male, 0, 12, None).unwrap();
    assert!(phenotype_labels(&no_year, &table).is_err());
}
