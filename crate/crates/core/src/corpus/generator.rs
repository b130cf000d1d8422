//! Seeded synthetic corpus with inspectable ground truth.
//!
//! Each disease owns a template: a ranked list of components from its
//! category's pool, a Zipf token, a schedule and a duration. A record's
//! prescription is its primary template, merged with the secondary template
//! for comorbid records (with the Zipf token lowered by two), adjusted by a
//! fixed phenotype rule table:
//!
//! | condition   | effect                                     |
//! |-------------|--------------------------------------------|
//! | male        | append the male modifier                   |
//! | age < 14    | append the child modifier                  |
//! | age >= 60   | append the elder modifier                  |
//! | winter      | append the winter modifier                 |
//! | summer      | append the summer modifier                 |
//! | year >= 7   | swap each planted synonym for its twin     |
//!
//! Doses follow `5 * r^(-z)` on the 0.1 g grid. A `noise_rate` fraction of
//! records has one component replaced by a random absent one.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::types::{ComponentId, IcdCode, Phenotype, Prescription, Record, Season, Sex, N_ACUPUNCTURE, N_COMPONENTS, N_FORMULAS, N_YEARS};
use super::zipf::{model_doses, token_center};
use super::CorpusError;

/// Components kept from a comorbid merge before modifiers are appended.
pub const MAX_MERGED: usize = 10;
/// Year offset from which synonyms are substituted.
pub const SYNONYM_YEAR: u8 = 7;
pub const CHILD_BELOW: u8 = 14;
pub const ELDER_FROM: u8 = 60;
const N_MODIFIERS: usize = 5;
const N_SYNONYMS: usize = 3;
const PROFILE_TOKENS: core::ops::RangeInclusive<u8> = 2..=7;
const COMORBID_TOKEN_DROP: u8 = 2;
const SCHEDULES: [u8; 6] = [1, 2, 3, 4, 12, 14];
const DURATIONS: [u8; 5] = [5, 6, 7, 10, 14];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct GeneratorConfig {
    pub preset: Preset,
    pub n_components: usize,
    pub n_diseases: usize,
    pub n_categories: usize,
    pub comorbidity_rate: f64,
    pub tertiary_rate: f64,
    pub acupuncture_rate: f64,
    pub noise_rate: f64,
    /// Mean records per disease.
    pub records_per_profile: usize,
    /// Per-disease record counts spread linearly over `mean * (1 +- skew)`.
    pub class_skew: f64,
    pub min_template: usize,
    pub max_template: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn desk(seed: u64) -> Self {
        GeneratorConfig {
            preset: Preset::Desk,
            n_components: 60,
            n_diseases: 40,
            n_categories: 8,
            comorbidity_rate: 0.2,
            tertiary_rate: 0.3,
            acupuncture_rate: 0.1,
            noise_rate: 0.0,
            records_per_profile: 650,
            class_skew: 0.5,
            min_template: 4,
            max_template: 8,
            seed,
        }
    }

    pub fn paper(seed: u64) -> Self {
        GeneratorConfig {
            preset: Preset::Paper,
            n_components: N_COMPONENTS,
            n_diseases: 909,
            n_categories: 18,
            records_per_profile: 50,
            ..GeneratorConfig::desk(seed)
        }
    }

    pub fn for_preset(preset: Preset, seed: u64) -> Self {
        match preset {
            Preset::Desk => GeneratorConfig::desk(seed),
            Preset::Paper => GeneratorConfig::paper(seed),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Config(m.into()));
        if self.n_components > N_COMPONENTS {
            return bad("n_components exceeds 718");
        }
        if self.min_template == 0 || self.min_template > self.max_template {
            return bad("need 1 <= min_template <= max_template");
        }
        if self.n_components < self.max_template {
            return Err(CorpusError::Config(format!(
                "n_components {} is smaller than the largest template ({})",
                self.n_components, self.max_template
            )));
        }
        if self.n_diseases == 0 || self.n_diseases > 999 {
            return bad("n_diseases must lie in 1..=999");
        }
        if self.n_categories == 0 || self.n_categories > self.n_diseases {
            return bad("need 1 <= n_categories <= n_diseases");
        }
        let pooled = self.n_components.saturating_sub(N_MODIFIERS + N_SYNONYMS);
        if pooled / self.n_categories < self.min_template {
            return Err(CorpusError::Config(format!(
                "{} pooled components over {} categories leave a pool smaller than min_template {}",
                pooled, self.n_categories, self.min_template
            )));
        }
        for (name, r) in [
            ("comorbidity_rate", self.comorbidity_rate),
            ("tertiary_rate", self.tertiary_rate),
            ("acupuncture_rate", self.acupuncture_rate),
            ("noise_rate", self.noise_rate),
            ("class_skew", self.class_skew),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(CorpusError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.records_per_profile == 0 {
            return bad("records_per_profile must be positive");
        }
        Ok(())
    }
}

/// Components appended by the phenotype rule table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modifiers {
    pub male: ComponentId,
    pub child: ComponentId,
    pub elder: ComponentId,
    pub winter: ComponentId,
    pub summer: ComponentId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiseaseProfile {
    pub code: IcdCode,
    pub category: usize,
    /// Rank order; the first is the monarch.
    pub components: Vec<ComponentId>,
    pub zipf_token: u8,
    pub schedule: u8,
    pub duration_days: u8,
    pub record_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    /// The component ids in use, ascending.
    pub components: Vec<ComponentId>,
    pub modifiers: Modifiers,
    /// `(original, twin)`: the twin replaces the original from [`SYNONYM_YEAR`].
    pub synonyms: Vec<(ComponentId, ComponentId)>,
    /// Per-category component pools.
    pub pools: Vec<Vec<ComponentId>>,
    pub diseases: Vec<DiseaseProfile>,
}

impl GroundTruth {
    pub fn disease_index(&self, code: IcdCode) -> Option<usize> {
        self.diseases.iter().position(|d| d.code == code)
    }

    /// Category of a pooled component.
    pub fn category_of(&self, c: ComponentId) -> Option<usize> {
        self.pools.iter().position(|p| p.contains(&c))
    }

    /// Noise-free prescription for a phenotype, without acupuncture.
    pub fn expected_prescription(&self, ph: &Phenotype) -> Result<Prescription, CorpusError> {
        let unknown = |c: IcdCode| CorpusError::Config(format!("disease {c} is not in the ground truth"));
        let primary = &self.diseases[self.disease_index(ph.primary()).ok_or_else(|| unknown(ph.primary()))?];
        let mut ids = primary.components.clone();
        let mut token = primary.zipf_token;
        if let Some(code) = ph.secondary() {
            let sec = &self.diseases[self.disease_index(code).ok_or_else(|| unknown(code))?];
            for &c in &sec.components {
                if !ids.contains(&c) {
                    ids.push(c);
                }
            }
            ids.truncate(MAX_MERGED);
            token = token.saturating_sub(COMORBID_TOKEN_DROP);
        }
        if ph.year().is_some_and(|y| y >= SYNONYM_YEAR) {
            for &(orig, twin) in &self.synonyms {
                if !ids.contains(&twin) {
                    if let Some(slot) = ids.iter_mut().find(|c| **c == orig) {
                        *slot = twin;
                    }
                }
            }
        }
        let m = &self.modifiers;
        let mut extra = Vec::new();
        if ph.sex() == Sex::Male {
            extra.push(m.male);
        }
        if ph.age() < CHILD_BELOW {
            extra.push(m.child);
        } else if ph.age() >= ELDER_FROM {
            extra.push(m.elder);
        }
        match ph.season() {
            Season::Winter => extra.push(m.winter),
            Season::Summer => extra.push(m.summer),
            _ => {}
        }
        ids.extend(extra);
        let doses = model_doses(token_center(token), ids.len());
        Prescription::new(ids.into_iter().zip(doses).collect(), None, primary.schedule, primary.duration_days)
    }

    /// The bare template of disease `d`: a single-disease, modifier-free prescription.
    pub fn template_prescription(&self, d: usize) -> Result<Prescription, CorpusError> {
        let p = &self.diseases[d];
        let doses = model_doses(token_center(p.zipf_token), p.components.len());
        Prescription::new(p.components.iter().copied().zip(doses).collect(), None, p.schedule, p.duration_days)
    }
}

/// Component ids split between formulas and herbs in the full-catalogue ratio.
fn component_ids(n: usize) -> Vec<ComponentId> {
    let formulas = (n * N_FORMULAS + N_COMPONENTS / 2) / N_COMPONENTS;
    let ids = (1..=formulas).chain(N_FORMULAS + 1..=N_FORMULAS + n - formulas);
    ids.map(|i| ComponentId::new(i as u16).unwrap_or_else(|_| unreachable!())).collect()
}

pub fn disease_code(d: usize, n_diseases: usize) -> IcdCode {
    format!("{:03}", 1 + d * 999 / n_diseases).parse().unwrap_or_else(|_| unreachable!())
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

pub struct Generator {
    cfg: GeneratorConfig,
    truth: GroundTruth,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self, CorpusError> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, 0);
        let components = component_ids(cfg.n_components);
        let mut shuffled = components.clone();
        shuffled.shuffle(&mut rng);
        let modifiers = Modifiers {
            male: shuffled[0],
            child: shuffled[1],
            elder: shuffled[2],
            winter: shuffled[3],
            summer: shuffled[4],
        };
        let twins = &shuffled[N_MODIFIERS..N_MODIFIERS + N_SYNONYMS];
        let mut pools = alloc::vec![Vec::new(); cfg.n_categories];
        for (i, &c) in shuffled[N_MODIFIERS + N_SYNONYMS..].iter().enumerate() {
            pools[i % cfg.n_categories].push(c);
        }

        let mut order: Vec<usize> = (0..cfg.n_diseases).collect();
        order.shuffle(&mut rng);
        let mut rank = alloc::vec![0usize; cfg.n_diseases];
        for (r, &d) in order.iter().enumerate() {
            rank[d] = r;
        }
        let mut diseases = Vec::with_capacity(cfg.n_diseases);
        let mut first_in_category = alloc::vec![usize::MAX; cfg.n_categories];
        for d in 0..cfg.n_diseases {
            let category = d * cfg.n_categories / cfg.n_diseases;
            if first_in_category[category] == usize::MAX {
                first_in_category[category] = d;
            }
            let pool = &pools[category];
            let monarch = pool[(d - first_in_category[category]) % pool.len()];
            let mut rest: Vec<ComponentId> = pool.iter().copied().filter(|&c| c != monarch).collect();
            rest.shuffle(&mut rng);
            let size = rng.random_range(cfg.min_template..=cfg.max_template).min(pool.len());
            let mut comps = alloc::vec![monarch];
            comps.extend_from_slice(&rest[..size - 1]);
            let q = if cfg.n_diseases > 1 { rank[d] as f64 / (cfg.n_diseases - 1) as f64 } else { 0.5 };
            let count = libm::round(cfg.records_per_profile as f64 * (1.0 - cfg.class_skew + 2.0 * cfg.class_skew * q)) as usize;
            diseases.push(DiseaseProfile {
                code: disease_code(d, cfg.n_diseases),
                category,
                components: comps,
                zipf_token: rng.random_range(PROFILE_TOKENS),
                schedule: SCHEDULES[rng.random_range(0..SCHEDULES.len())],
                duration_days: DURATIONS[rng.random_range(0..DURATIONS.len())],
                record_count: count.max(1),
            });
        }
        // Each original is the second-ranked component of its category's first disease.
        let synonyms = twins
            .iter()
            .enumerate()
            .filter_map(|(i, &twin)| {
                let d = *first_in_category.get(i % cfg.n_categories)?;
                diseases[d].components.get(1).map(|&orig| (orig, twin))
            })
            .collect();
        Ok(Generator {
            truth: GroundTruth {
                components,
                modifiers,
                synonyms,
                pools,
                diseases,
            },
            cfg,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.truth
    }

    fn sample_phenotype(&self, d: usize, rng: &mut ChaCha8Rng) -> Result<Phenotype, CorpusError> {
        let n = self.cfg.n_diseases;
        let code = |i: usize| self.truth.diseases[i].code;
        let other = |rng: &mut ChaCha8Rng, taken: &[usize]| loop {
            let i = rng.random_range(0..n);
            if !taken.contains(&i) {
                break i;
            }
        };
        let mut secondary = None;
        let mut tertiary = None;
        if n >= 2 && rng.random_bool(self.cfg.comorbidity_rate) {
            let s = other(rng, &[d]);
            secondary = Some(code(s));
            if n >= 3 && rng.random_bool(self.cfg.tertiary_rate) {
                tertiary = Some(code(other(rng, &[d, s])));
            }
        }
        let sex = if rng.random_bool(0.4) { Sex::Male } else { Sex::Female };
        let u: f64 = rng.random();
        let age = if u < 0.10 {
            rng.random_range(0..CHILD_BELOW)
        } else if u < 0.75 {
            rng.random_range(CHILD_BELOW..ELDER_FROM)
        } else {
            rng.random_range(ELDER_FROM..=104)
        };
        let month = rng.random_range(1..=12);
        let year = rng.random_range(0..N_YEARS);
        Phenotype::new(code(d), secondary, tertiary, sex, age, month, Some(year))
    }

    fn perturb(&self, p: Prescription, rng: &mut ChaCha8Rng) -> Result<Prescription, CorpusError> {
        let acupuncture = if rng.random_bool(self.cfg.acupuncture_rate) { Some(rng.random_range(1..=N_ACUPUNCTURE)) } else { None };
        let mut comps = p.components().to_vec();
        if rng.random_bool(self.cfg.noise_rate) {
            let at = rng.random_range(0..comps.len());
            let absent: Vec<ComponentId> = self.truth.components.iter().copied().filter(|c| !p.contains(*c)).collect();
            if !absent.is_empty() {
                comps[at].0 = absent[rng.random_range(0..absent.len())];
            }
        }
        Prescription::new(comps, acupuncture, p.schedule(), p.duration_days())
    }

    /// Records for one primary disease, from that disease's own stream.
    pub fn disease_records(&self, d: usize) -> Result<Vec<Record>, CorpusError> {
        let mut rng = stream(self.cfg.seed, d as u64 + 1);
        let mut out = Vec::with_capacity(self.truth.diseases[d].record_count);
        for _ in 0..self.truth.diseases[d].record_count {
            let phenotype = self.sample_phenotype(d, &mut rng)?;
            let expected = self.truth.expected_prescription(&phenotype)?;
            let prescription = self.perturb(expected, &mut rng)?;
            out.push(Record { phenotype, prescription });
        }
        Ok(out)
    }

    pub fn generate(&self) -> Result<Vec<Record>, CorpusError> {
        let mut all = Vec::new();
        for d in 0..self.cfg.n_diseases {
            all.extend(self.disease_records(d)?);
        }
        all.shuffle(&mut stream(self.cfg.seed, self.cfg.n_diseases as u64 + 1));
        Ok(all)
    }
}

pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<Vec<Record>, CorpusError> {
    Generator::new(cfg.clone())?.generate()
}
