//! Pipeline stages. Each reads its inputs from the run directory and writes
//! its outputs there; a failed stage leaves none of its outputs behind.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use herbnmt_core::analysis::{
    adjusted_rand_index, analyze_confusion, category_distances, cosine_distances, hierarchical_cluster, single_component_probe, tsne, Dendrogram,
};
use herbnmt_core::arnn::{self, Arnn, PerplexityReport};
use herbnmt_core::balance::balance_corpus;
use herbnmt_core::corpus::{
    encode_prescription, tokenize_source, tokenize_target, ComponentId, DiseaseTable, Generator, GroundTruth, Phenotype, Record, Sex, Symbol, Vocabulary,
};
use herbnmt_core::rcnn::{self, evaluate, knn_baseline, majority_baseline, record_labels, Rcnn, HEAD_NAMES};
use herbnmt_core::roundtrip::{roundtrip_check, ArnnTranslator, RcnnClassifier, COMPARED};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_arnn, load_rcnn, read_manifest, save_arnn, save_rcnn};
use crate::config::ExperimentConfig;
use crate::error::{io_err, Error, Result};
use crate::io::{read_corpus, read_phenotypes, write_corpus};
use crate::manifest::RunManifest;
use crate::report::{write_csv, write_matrix, write_text};

pub const CORPUS: &str = "corpus.jsonl";
pub const BALANCED: &str = "balanced.jsonl";
pub const TRAIN: &str = "train.jsonl";
pub const TEST: &str = "test.jsonl";
pub const RCNN: &str = "rcnn";
pub const ARNN: &str = "arnn";
pub const CONFIG: &str = "config.toml";

/// Subcommands that form the full pipeline, in order.
pub const PIPELINE: [&str; 11] = [
    "gen-corpus",
    "balance",
    "train-rcnn",
    "train-arnn",
    "classify",
    "translate",
    "perplexity",
    "analyze",
    "probe",
    "tsne",
    "roundtrip",
];

/// Heads whose confusion matrices are analyzed.
const ANALYZED_HEADS: [usize; 4] = [0, 4, 5, 6];

pub struct Run {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    created: Vec<PathBuf>,
    log: bool,
}

/// Stage inputs that are not in the run directory.
#[derive(Clone, Debug, Default)]
pub struct StageArgs {
    /// Record or phenotype JSONL read instead of the held-out split.
    pub input: Option<PathBuf>,
    /// Phenotypes given on the command line.
    pub cases: Vec<Phenotype>,
}

impl Run {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let dir = cfg.out.clone();
        Run { cfg, dir, created: Vec::new(), log: true }
    }

    pub fn quiet(mut self) -> Self {
        self.log = false;
        self
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Registers an output of the running stage.
    fn out(&mut self, name: &str) -> PathBuf {
        let p = self.path(name);
        self.created.push(p.clone());
        p
    }

    fn say(&self, msg: impl AsRef<str>) {
        if self.log {
            println!("{}", msg.as_ref());
        }
    }

    fn input(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingInput(p))
        }
    }

    /// Checkpoint base path, checked through its manifest file.
    fn checkpoint_input(&self, name: &str) -> Result<PathBuf> {
        self.input(&format!("{name}.json")).map(|p| p.with_extension(""))
    }

    /// Runs one stage; on failure removes whatever it wrote.
    pub fn stage(&mut self, name: &str, args: &StageArgs) -> Result<()> {
        self.cfg.validate()?;
        std::fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        self.created.clear();
        let result = self.dispatch(name, args).and_then(|summary| {
            let p = self.out(&format!("{name}.txt"));
            write_text(&p, &summary)?;
            self.cfg.save(&self.path(CONFIG))?;
            RunManifest::scan(&self.dir, &self.cfg)?.write(&self.dir)
        });
        if result.is_err() {
            for p in self.created.drain(..) {
                let _ = std::fs::remove_file(p);
            }
        }
        result
    }

    pub fn pipeline(&mut self) -> Result<()> {
        for name in PIPELINE {
            self.say(format!("== {name}"));
            self.stage(name, &StageArgs::default())?;
        }
        Ok(())
    }

    fn dispatch(&mut self, name: &str, args: &StageArgs) -> Result<String> {
        match name {
            "gen-corpus" => self.gen_corpus(),
            "balance" => self.balance(),
            "train-rcnn" => self.train_rcnn(),
            "train-arnn" => self.train_arnn(),
            "classify" => self.classify(args),
            "translate" => self.translate(args),
            "perplexity" => self.perplexity(),
            "analyze" => self.analyze(args),
            "probe" => self.probe(),
            "tsne" => self.tsne(),
            "roundtrip" => self.roundtrip(args),
            other => Err(Error::Usage(format!("unknown stage {other}"))),
        }
    }

    fn truth(&self) -> Result<GroundTruth> {
        Ok(Generator::new(self.cfg.generator.clone())?.ground_truth().clone())
    }

    fn gen_corpus(&mut self) -> Result<String> {
        let generator = Generator::new(self.cfg.generator.clone())?;
        let records = generator.generate()?;
        write_corpus(&self.out(CORPUS), &records)?;
        let truth = generator.ground_truth();
        let p = self.out("ground_truth.csv");
        write_csv(
            &p,
            &["code", "category", "zipf_token", "schedule", "duration_days", "records", "components"],
            truth.diseases.iter().map(|d| {
                vec![
                    d.code.to_string(),
                    d.category.to_string(),
                    d.zipf_token.to_string(),
                    d.schedule.to_string(),
                    d.duration_days.to_string(),
                    d.record_count.to_string(),
                    d.components.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "),
                ]
            }),
        )?;
        let comorbid = records.iter().filter(|r| r.phenotype.is_comorbid()).count();
        Ok(format!(
            "records {}\ndiseases {}\ncomponents {}\ncomorbid {comorbid}\nnoise_rate {}\n",
            records.len(),
            truth.diseases.len(),
            truth.components.len(),
            self.cfg.generator.noise_rate
        ))
    }

    fn balance(&mut self) -> Result<String> {
        let records = read_corpus(&self.input(CORPUS)?)?;
        let (balanced, report) = balance_corpus(&records, &self.cfg.balance)?;
        write_corpus(&self.out(BALANCED), &balanced)?;
        let p = self.out("balance.csv");
        write_csv(&p, &["code", "before", "after"], report.classes.iter().map(|(c, b, a)| [c.to_string(), b.to_string(), a.to_string()]))?;
        let (train, test) = split(&balanced, self.cfg.split.test_fraction, self.cfg.split_seed());
        write_corpus(&self.out(TRAIN), &train)?;
        write_corpus(&self.out(TEST), &test)?;
        Ok(format!("records {} -> {}\ntrain {}\ntest {}\n", records.len(), balanced.len(), train.len(), test.len()))
    }

    /// Keeps the records whose primary disease lies in `rcnn.categories`.
    fn category_filter(&self, train: Vec<Record>, test: Vec<Record>) -> Result<(Vec<Record>, Vec<Record>)> {
        let cats = &self.cfg.rcnn.categories;
        if cats.is_empty() {
            return Ok((train, test));
        }
        let truth = self.truth()?;
        let keep = |r: &Record| truth.disease_index(r.phenotype.primary()).is_some_and(|i| cats.contains(&truth.diseases[i].category));
        let (train, test): (Vec<Record>, Vec<Record>) = (train.into_iter().filter(keep).collect(), test.into_iter().filter(keep).collect());
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config(format!("rcnn.categories {cats:?} leaves no train or test records")));
        }
        Ok((train, test))
    }

    fn train_rcnn(&mut self) -> Result<String> {
        let train = read_corpus(&self.input(TRAIN)?)?;
        let test = read_corpus(&self.input(TEST)?)?;
        let table = DiseaseTable::from_records(&train.iter().chain(&test).cloned().collect::<Vec<_>>());
        let (train, test) = self.category_filter(train, test)?;
        let (trx, try_) = encode(&train, &table)?;
        let (tex, tey) = encode(&test, &table)?;
        let mut model = Rcnn::new(self.cfg.rcnn.model.clone())?;
        let log = self.log;
        let report = rcnn::train(&mut model, &trx, &try_, &tex, &tey, &self.cfg.rcnn.train, |s| {
            if log {
                println!("epoch {} train loss {:.4} test loss {:.4} primary {:.4}", s.epoch, s.train_loss, s.test_loss, s.test_accuracy[0]);
            }
        })?;
        let base = self.path(RCNN);
        self.created.extend([base.with_extension("json"), base.with_extension("bin")]);
        save_rcnn(&base, &model, &table)?;

        let mut header = vec!["epoch", "train_loss", "test_loss"];
        let acc: Vec<String> = HEAD_NAMES.iter().map(|h| format!("test_accuracy_{h}")).collect();
        header.extend(acc.iter().map(String::as_str));
        let p = self.out("rcnn_train.csv");
        write_csv(
            &p,
            &header,
            report.epochs.iter().map(|e| {
                let mut r = vec![e.epoch.to_string(), e.train_loss.to_string(), e.test_loss.to_string()];
                r.extend(e.test_accuracy.iter().map(ToString::to_string));
                r
            }),
        )?;

        let primary: Vec<usize> = try_.iter().map(|y| y[0]).collect();
        let knn = knn_baseline(&trx, &primary, &tex, self.cfg.rcnn.knn_k)?;
        let knn_acc = accuracy(knn.iter().copied(), tey.iter().map(|y| y[0]));
        let majority = majority_baseline(&primary).unwrap_or(0);
        let maj_acc = accuracy(tey.iter().map(|_| majority), tey.iter().map(|y| y[0]));
        let final_acc = report.epochs.last().map_or_else(|| evaluate(&model, &tex, &tey).map(|e| e.accuracy[0]), |e| Ok(e.test_accuracy[0]))?;
        let p = self.out("rcnn_baselines.csv");
        write_csv(
            &p,
            &["method", "primary_accuracy"],
            [
                ["rcnn".to_string(), final_acc.to_string()],
                [format!("{}-nn", self.cfg.rcnn.knn_k), knn_acc.to_string()],
                ["majority".to_string(), maj_acc.to_string()],
            ],
        )?;
        Ok(format!(
            "train {}\ntest {}\nparameters {}\ninitial_loss {:.6}\nprimary_accuracy rcnn {final_acc:.4} knn {knn_acc:.4} majority {maj_acc:.4}\n",
            trx.len(),
            tex.len(),
            model.params().element_count(),
            report.initial_loss
        ))
    }

    fn vocabularies(train: &[Record], test: &[Record]) -> (Vocabulary, Vocabulary) {
        let table = DiseaseTable::from_records(&train.iter().chain(test).cloned().collect::<Vec<_>>());
        let source = Vocabulary::source(table.codes().iter().copied());
        let target = Vocabulary::target(train.iter().chain(test).map(|r| &r.prescription));
        (source, target)
    }

    fn train_arnn(&mut self) -> Result<String> {
        let train = read_corpus(&self.input(TRAIN)?)?;
        let test = read_corpus(&self.input(TEST)?)?;
        let (source, target) = Self::vocabularies(&train, &test);
        let mut model = Arnn::new(self.cfg.arnn.model.clone(), source, target)?;
        let max = model.config().max_len();
        let (trp, _, dropped_train) = arnn::make_pairs(&train, model.source_vocab(), model.target_vocab(), max);
        let (tep, _, dropped_test) = arnn::make_pairs(&test, model.source_vocab(), model.target_vocab(), max);
        let log = self.log;
        let report = arnn::train(&mut model, &trp, &tep, &self.cfg.arnn.train, |e| {
            if log {
                let t = e.test.as_ref().map_or(f64::NAN, |t| t.perplexity);
                println!("epoch {} train perplexity {:.4} test perplexity {t:.4}", e.epoch, e.train.perplexity);
            }
        })?;
        let base = self.path(ARNN);
        self.created.extend([base.with_extension("json"), base.with_extension("bin")]);
        save_arnn(&base, &model)?;

        let mut rows = perplexity_rows(0, "train", &report.initial);
        if let Some(t) = &report.initial_test {
            rows.extend(perplexity_rows(0, "test", t));
        }
        for e in &report.epochs {
            rows.extend(perplexity_rows(e.epoch, "train", &e.train));
            if let Some(t) = &e.test {
                rows.extend(perplexity_rows(e.epoch, "test", t));
            }
        }
        let p = self.out("perplexity.csv");
        write_csv(&p, &["epoch", "split", "bucket", "perplexity"], rows)?;
        let p = self.out("arnn_curve.csv");
        write_csv(&p, &["point", "train_perplexity"], report.curve.iter().enumerate().map(|(i, v)| [(i + 1).to_string(), v.to_string()]))?;
        let last = report.epochs.last().and_then(|e| e.test.as_ref()).map_or(report.initial_test.as_ref().map_or(f64::NAN, |t| t.perplexity), |t| t.perplexity);
        Ok(format!(
            "train_pairs {}\ntest_pairs {}\ndropped {}\nsource_vocab {}\ntarget_vocab {}\nparameters {}\ninitial_perplexity {:.4}\ntest_perplexity {last:.4}\n",
            trp.len(),
            tep.len(),
            dropped_train + dropped_test,
            model.source_vocab().len(),
            model.target_vocab().len(),
            model.params().element_count(),
            report.initial.perplexity
        ))
    }

    fn held_out(&self, args: &StageArgs) -> Result<Vec<Record>> {
        match &args.input {
            Some(p) => read_corpus(p),
            None => read_corpus(&self.input(TEST)?),
        }
    }

    fn classify(&mut self, args: &StageArgs) -> Result<String> {
        let (model, table) = load_rcnn(&self.checkpoint_input(RCNN)?)?;
        let records = self.held_out(args)?;
        let (xs, ys) = encode(&records, &table)?;
        let preds = model.predict_all(&xs, self.cfg.rcnn.batch)?;
        let classes: Vec<_> = preds.iter().map(|p| p.classes()).collect();
        let eval = rcnn::evaluate_classes(&classes, &ys, &model.config().head_sizes)?;
        let mut header = vec!["row".to_string()];
        for h in HEAD_NAMES {
            header.push(format!("true_{h}"));
            header.push(format!("predicted_{h}"));
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let p = self.out("classify.csv");
        write_csv(
            &p,
            &header,
            classes.iter().zip(&ys).enumerate().map(|(i, (c, y))| {
                let mut r = vec![i.to_string()];
                for h in 0..HEAD_NAMES.len() {
                    r.push(y[h].to_string());
                    r.push(c[h].to_string());
                }
                r
            }),
        )?;
        let labels = disease_labels(&table);
        let confusion = &eval.confusion[0];
        let p = self.out("confusion_primary.csv");
        write_matrix(&p, "true\\predicted", &labels, labels.iter().enumerate().map(|(i, l)| (l.clone(), confusion.row(i).to_vec())))?;
        let mut s = format!("records {}\n", records.len());
        for (h, a) in HEAD_NAMES.iter().zip(eval.accuracy) {
            let _ = writeln!(s, "accuracy_{h} {a:.4}");
        }
        Ok(s)
    }

    fn phenotypes(&self, args: &StageArgs) -> Result<Vec<Phenotype>> {
        if !args.cases.is_empty() {
            return Ok(args.cases.clone());
        }
        match &args.input {
            Some(p) => read_phenotypes(p),
            None => read_phenotypes(&self.input(TEST)?),
        }
    }

    fn translate(&mut self, args: &StageArgs) -> Result<String> {
        let model = load_arnn(&self.checkpoint_input(ARNN)?)?;
        let phenotypes = self.phenotypes(args)?;
        let truth = self.truth()?;
        let results = model.translate_all(&phenotypes, self.cfg.arnn.batch)?;
        let mut text = String::from("case\tdiagnoses\tprescription\n");
        let mut rows = Vec::with_capacity(phenotypes.len());
        let (mut failures, mut exact, mut scored) = (0, 0, 0);
        for (i, (ph, r)) in phenotypes.iter().zip(&results).enumerate() {
            let unknown = tokenize_source(ph, model.source_vocab()).1;
            let expected = truth.disease_index(ph.primary()).and_then(|_| truth.expected_prescription(ph).ok());
            let expected_tokens = expected.as_ref().map(|p| tokenize_target(p, model.target_vocab()).0.tokens);
            let (rendered, matched) = match r {
                Ok(t) => (t.prescription.to_string(), expected_tokens.as_ref().map(|e| *e == t.tokens.tokens)),
                Err(e) => {
                    failures += 1;
                    (format!("GRAMMAR ERROR: {e}"), expected_tokens.as_ref().map(|_| false))
                }
            };
            if let Some(m) = matched {
                scored += 1;
                exact += m as usize;
            }
            let _ = writeln!(text, "{}\t{}\t{rendered}", i + 1, diagnoses(ph));
            rows.push([
                (i + 1).to_string(),
                describe(ph),
                r.is_ok().to_string(),
                matched.map_or(String::new(), |m| m.to_string()),
                unknown.to_string(),
                rendered,
            ]);
        }
        write_text(&self.out("translate_table.txt"), &text)?;
        let p = self.out("translate.csv");
        write_csv(&p, &["case", "phenotype", "parsed", "exact_match", "unknown_source_tokens", "prescription"], rows)?;
        let rate = if scored > 0 { exact as f64 / scored as f64 } else { f64::NAN };
        Ok(format!("cases {}\ngrammar_failures {failures}\nexact_match {exact}/{scored} ({rate:.4})\n", phenotypes.len()))
    }

    fn perplexity(&mut self) -> Result<String> {
        let model = load_arnn(&self.checkpoint_input(ARNN)?)?;
        let epochs = self.cfg.arnn.train.epochs;
        let mut rows = Vec::new();
        let mut s = String::new();
        for (split, file) in [("train", TRAIN), ("test", TEST)] {
            let records = read_corpus(&self.input(file)?)?;
            let (pairs, _, _) = arnn::make_pairs(&records, model.source_vocab(), model.target_vocab(), model.config().max_len());
            let report = arnn::perplexity(&model, &pairs)?;
            let _ = writeln!(s, "{split} {:.4} over {} tokens", report.perplexity, report.tokens);
            rows.extend(perplexity_rows(epochs, split, &report));
        }
        let p = self.out("perplexity_eval.csv");
        write_csv(&p, &["epoch", "split", "bucket", "perplexity"], rows)?;
        Ok(s)
    }

    fn analyze(&mut self, args: &StageArgs) -> Result<String> {
        let (model, table) = load_rcnn(&self.checkpoint_input(RCNN)?)?;
        let records = self.held_out(args)?;
        let (xs, ys) = encode(&records, &table)?;
        let eval = evaluate(&model, &xs, &ys)?;
        let truth = self.truth()?;
        let mut s = String::new();
        for h in ANALYZED_HEADS {
            let name = HEAD_NAMES[h];
            let labels = head_labels(h, &table, model.config().head_sizes[h]);
            let a = analyze_confusion(&eval.confusion[h], labels.clone(), &self.cfg.analysis)?;
            let p = self.out(&format!("analysis_{name}_eigenvalues.csv"));
            write_csv(&p, &["index", "eigenvalue"], a.eigenvalues.iter().enumerate().map(|(i, v)| [i.to_string(), v.to_string()]))?;
            let dims: Vec<String> = (1..=a.coords.first().map_or(0, Vec::len)).map(|k| format!("v{k}")).collect();
            let p = self.out(&format!("analysis_{name}_coords.csv"));
            write_matrix(&p, "class", &dims, labels.iter().cloned().zip(a.coords.iter().cloned()))?;
            write_text(&self.out(&format!("analysis_{name}.nwk")), &(a.dendrogram.newick() + "\n"))?;
            let zero = a.eigenvalues.iter().filter(|&&v| v < herbnmt_core::analysis::ZERO_EIGENVALUE).count();
            let _ = writeln!(s, "{name}: {} classes, {zero} zero eigenvalues, {} spectral dimensions", labels.len(), dims.len());
            if h == 0 && !dims.is_empty() {
                let cats: Vec<usize> = table.codes().iter().map(|&c| truth.disease_index(c).map_or(0, |d| truth.diseases[d].category)).collect();
                if let Ok(d) = category_distances(&a.coords, &cats) {
                    let names: Vec<String> = (0..d.len()).map(|c| format!("category{c}")).collect();
                    let p = self.out("analysis_primary_category_distances.csv");
                    write_matrix(&p, "category", &names, names.iter().cloned().zip(d.rows()))?;
                }
            }
        }
        Ok(s)
    }

    fn probe(&mut self) -> Result<String> {
        let (model, table) = load_rcnn(&self.checkpoint_input(RCNN)?)?;
        let truth = self.truth()?;
        let components = truth.components.clone();
        let probe = single_component_probe(&model, &components, self.cfg.analysis.linkage)?;
        let labels = disease_labels(&table);
        let p = self.out("probe.csv");
        write_matrix(&p, "component", &labels, components.iter().map(ToString::to_string).zip(probe.probabilities.iter().cloned()))?;
        write_text(&self.out("probe.nwk"), &(probe.dendrogram.newick() + "\n"))?;
        let mut s = format!("components {}\nclasses {}\n", components.len(), labels.len());
        let arnn_base = self.path(ARNN);
        if arnn_base.with_extension("json").exists() {
            let arnn = load_arnn(&arnn_base)?;
            let agreement = agreement(&arnn, &truth, &components, &probe.probabilities, &self.cfg)?;
            write_text(&self.out("embedding.nwk"), &(agreement.embedding.newick() + "\n"))?;
            let p = self.out("agreement.csv");
            write_csv(
                &p,
                &["k", "ari_probe_embedding", "ari_probe_category", "ari_embedding_category"],
                agreement.rows.iter().map(|r| [r.k.to_string(), r.probe_embedding.to_string(), r.probe_category.to_string(), r.embedding_category.to_string()]),
            )?;
            for r in &agreement.rows {
                let _ = writeln!(s, "k {}: ari probe/embedding {:.4}", r.k, r.probe_embedding);
            }
        }
        Ok(s)
    }

    fn tsne(&mut self) -> Result<String> {
        let model = load_arnn(&self.checkpoint_input(ARNN)?)?;
        let emb = model.export_decoder_embeddings();
        let vocab = model.target_vocab();
        let rows: Vec<Vec<f64>> = (0..vocab.len()).map(|i| emb.row(i).iter().map(|&v| v as f64).collect()).collect();
        let mut cfg = self.cfg.analysis.tsne.clone();
        // Perplexity must stay below the point count for small vocabularies.
        cfg.perplexity = cfg.perplexity.min((rows.len() as f64 - 1.0) / 3.0);
        let result = tsne(&rows, &cfg)?;
        let labels: Vec<String> = vocab.symbols().iter().map(ToString::to_string).collect();
        let dims: Vec<String> = (1..=cfg.dims).map(|k| format!("x{k}")).collect();
        let p = self.out("tsne.csv");
        write_matrix(&p, "token", &dims, labels.into_iter().zip(result.coords.iter().cloned()))?;
        let p = self.out("tsne_objective.csv");
        write_csv(&p, &["iteration", "kl"], result.objective.iter().map(|(i, kl)| [i.to_string(), kl.to_string()]))?;
        let post = result.post_exaggeration();
        let monotone = post.windows(2).all(|w| w[1] <= w[0]);
        Ok(format!(
            "points {}\nperplexity {}\nfinal_kl {:.6}\npost_exaggeration_non_increasing {monotone}\n",
            rows.len(),
            cfg.perplexity,
            result.objective.last().map_or(f64::NAN, |o| o.1)
        ))
    }

    fn roundtrip(&mut self, args: &StageArgs) -> Result<String> {
        let (rcnn, table) = load_rcnn(&self.checkpoint_input(RCNN)?)?;
        let arnn = load_arnn(&self.checkpoint_input(ARNN)?)?;
        let mut phenotypes = self.phenotypes(args)?;
        phenotypes.truncate(self.cfg.roundtrip.max_phenotypes);
        let translator = ArnnTranslator { model: &arnn, batch: self.cfg.arnn.batch };
        let classifier = RcnnClassifier::new(&rcnn, &table, self.cfg.rcnn.batch)?;
        let report = roundtrip_check(&translator, &classifier, &phenotypes)?;
        let mut header = vec!["row", "phenotype", "prescription", "predicted"];
        let flags: Vec<String> = COMPARED.iter().map(|h| format!("match_{h}")).collect();
        header.extend(flags.iter().map(String::as_str));
        let p = self.out("roundtrip.csv");
        write_csv(
            &p,
            &header,
            report.rows.iter().enumerate().map(|(i, r)| {
                let mut rec = vec![
                    (i + 1).to_string(),
                    describe(&r.source),
                    r.prescription.as_ref().map_or_else(|| "GRAMMAR ERROR".to_string(), ToString::to_string),
                    r.predicted.map_or(String::new(), |p| {
                        format!("{} {} age {} month {} year {}", p.primary, sex_text(p.sex), p.age, p.month, p.year)
                    }),
                ];
                rec.extend(r.matches.iter().map(ToString::to_string));
                rec
            }),
        )?;
        let rc = &self.cfg.roundtrip;
        let rate = report.primary_rate();
        let pass = rate >= rc.min_primary_rate && rate >= rc.min_chance_multiple * report.chance;
        let mut s = format!("phenotypes {}\ngrammar_failures {}\nchance {:.4}\n", report.rows.len(), report.grammar_failures, report.chance);
        for (h, r) in COMPARED.iter().zip(report.rates) {
            let _ = writeln!(s, "match_rate_{h} {r:.4}");
        }
        let _ = writeln!(s, "primary_threshold {} and {}x chance: {}", rc.min_primary_rate, rc.min_chance_multiple, if pass { "PASS" } else { "FAIL" });
        Ok(s)
    }
}

/// Shuffled held-out split; both halves keep their corpus order.
pub fn split(records: &[Record], test_fraction: f64, seed: u64) -> (Vec<Record>, Vec<Record>) {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((records.len() as f64 * test_fraction).round() as usize).clamp(1.min(records.len()), records.len().saturating_sub(1).max(1));
    let mut test: Vec<usize> = idx[..n_test.min(idx.len())].to_vec();
    test.sort_unstable();
    let is_test: BTreeSet<usize> = test.iter().copied().collect();
    let train = (0..records.len()).filter(|i| !is_test.contains(i)).map(|i| records[i].clone()).collect();
    (train, test.iter().map(|&i| records[i].clone()).collect())
}

fn encode(records: &[Record], table: &DiseaseTable) -> Result<(Vec<herbnmt_core::corpus::EncodedVector>, Vec<[usize; 7]>)> {
    Ok((records.iter().map(|r| encode_prescription(&r.prescription)).collect(), record_labels(records, table)?))
}

/// CSV rows for one report: the pooled value, then each bucket.
fn perplexity_rows(epoch: usize, split: &str, r: &PerplexityReport) -> Vec<[String; 4]> {
    let mut rows = vec![[epoch.to_string(), split.to_string(), "all".to_string(), r.perplexity.to_string()]];
    for b in &r.buckets {
        rows.push([epoch.to_string(), split.to_string(), b.bucket.to_string(), b.perplexity.map_or(String::new(), |p| p.to_string())]);
    }
    rows
}

fn accuracy(pred: impl Iterator<Item = usize>, truth: impl Iterator<Item = usize>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (p, t) in pred.zip(truth) {
        hit += (p == t) as usize;
        n += 1;
    }
    hit as f64 / n.max(1) as f64
}

fn disease_labels(table: &DiseaseTable) -> Vec<String> {
    table.codes().iter().map(ToString::to_string).collect()
}

fn head_labels(head: usize, table: &DiseaseTable, size: usize) -> Vec<String> {
    match head {
        0 => disease_labels(table),
        5 => (1..=size).map(|m| format!("month{m}")).collect(),
        6 => (0..size).map(|y| format!("{}", herbnmt_core::corpus::types::FIRST_YEAR as usize + y)).collect(),
        _ => (0..size).map(|a| format!("age{a}")).collect(),
    }
}

fn sex_text(s: Sex) -> &'static str {
    match s {
        Sex::Male => "male",
        Sex::Female => "female",
    }
}

fn diagnoses(ph: &Phenotype) -> String {
    let code = |c: Option<herbnmt_core::corpus::IcdCode>| c.map_or_else(|| "NA (0)".to_string(), |c| format!("ICD-9 {c} ({c})"));
    format!("{}, {}, {}", code(Some(ph.primary())), code(ph.secondary()), code(ph.tertiary()))
}

fn describe(ph: &Phenotype) -> String {
    let year = ph.year().map_or_else(|| "year NA".to_string(), |y| format!("{}", herbnmt_core::corpus::types::FIRST_YEAR + y as u16));
    format!("{}; {}; age {}; month {}; {year}", diagnoses(ph), sex_text(ph.sex()), ph.age(), ph.month())
}

pub struct AgreementRow {
    pub k: usize,
    pub probe_embedding: f64,
    pub probe_category: f64,
    pub embedding_category: f64,
}

pub struct Agreement {
    pub embedding: Dendrogram,
    pub rows: Vec<AgreementRow>,
}

/// Partitions components by the probe dendrogram and by a cosine dendrogram
/// of the decoder embeddings, and compares them at each configured `k`.
/// Components missing from the target vocabulary are left out; components
/// outside every category pool get their own category each.
pub fn agreement(model: &Arnn, truth: &GroundTruth, components: &[ComponentId], probabilities: &[Vec<f64>], cfg: &ExperimentConfig) -> Result<Agreement> {
    let vocab = model.target_vocab();
    let emb = model.export_decoder_embeddings();
    let mut kept = Vec::new();
    let mut rows = Vec::new();
    for (i, &c) in components.iter().enumerate() {
        if let Some(t) = vocab.index_of(&Symbol::Component(c)) {
            kept.push(i);
            rows.push(emb.row(t).iter().map(|&v| v as f64).collect::<Vec<f64>>());
        }
    }
    let labels: Vec<String> = kept.iter().map(|&i| components[i].to_string()).collect();
    let probe_rows: Vec<Vec<f64>> = kept.iter().map(|&i| probabilities[i].clone()).collect();
    let linkage = cfg.analysis.linkage;
    let probe = hierarchical_cluster(&herbnmt_core::analysis::pairwise_euclidean(&probe_rows), linkage, labels.clone())?;
    let embedding = hierarchical_cluster(&cosine_distances(&rows), linkage, labels)?;
    let pools = truth.pools.len();
    let categories: Vec<usize> = kept.iter().enumerate().map(|(j, &i)| truth.category_of(components[i]).unwrap_or(pools + j)).collect();
    let mut out = Vec::new();
    for &k in &cfg.probe.agreement_k {
        let k = k.min(kept.len());
        let a = probe.cut(k)?;
        let b = embedding.cut(k)?;
        out.push(AgreementRow {
            k,
            probe_embedding: adjusted_rand_index(&a, &b)?,
            probe_category: adjusted_rand_index(&a, &categories)?,
            embedding_category: adjusted_rand_index(&b, &categories)?,
        });
    }
    Ok(Agreement { embedding, rows: out })
}

/// Summary of a checkpoint without loading its tensors.
pub fn inspect_checkpoint(base: &Path) -> Result<String> {
    let m = read_manifest(base)?;
    let mut s = format!("kind {}\nformat {} v{}\nblob {} ({} bytes, sha256 {})\nparameters {}\n", m.kind, m.format, m.version, m.blob, m.blob_bytes, m.blob_sha256, m.parameter_count());
    for t in &m.tensors {
        let _ = writeln!(s, "  {} {:?} @{}", t.name, t.shape, t.offset);
    }
    Ok(s)
}
