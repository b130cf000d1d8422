//! Source/target vocabularies, sentence tokenization and length buckets.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use super::types::{ComponentId, Dose, IcdCode, Phenotype, Prescription, Season, Sex, N_AGES, N_DURATIONS, N_SCHEDULES, N_YEARS};
use super::zipf::{fit_zipf_exponent, model_doses, token_center, zipf_token, N_ZIPF_TOKENS};
use super::CorpusError;

pub const PAD: usize = 0;
pub const GO: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const N_SPECIALS: usize = 4;

/// Source sentences always have this many tokens.
pub const SOURCE_LEN: usize = 7;
/// Target length classes, counting the trailing EOS.
pub const BUCKETS: [usize; 4] = [8, 10, 12, 18];

/// Vocabulary entry. The derived order fixes index assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Symbol {
    Pad,
    Go,
    Eos,
    Unk,
    Icd(IcdCode),
    IcdAbsent,
    Sex(Sex),
    Age(u8),
    Season(Season),
    Year(u8),
    YearAbsent,
    Zipf(u8),
    Component(ComponentId),
    Schedule(u8),
    Duration(u8),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Pad => f.write_str("<pad>"),
            Symbol::Go => f.write_str("<go>"),
            Symbol::Eos => f.write_str("<eos>"),
            Symbol::Unk => f.write_str("<unk>"),
            Symbol::Icd(c) => write!(f, "icd:{c}"),
            Symbol::IcdAbsent => f.write_str("icd:NA"),
            Symbol::Sex(Sex::Male) => f.write_str("sex:male"),
            Symbol::Sex(Sex::Female) => f.write_str("sex:female"),
            Symbol::Age(a) => write!(f, "age:{a}"),
            Symbol::Season(s) => write!(f, "season:{s:?}"),
            Symbol::Year(y) => write!(f, "year:{y}"),
            Symbol::YearAbsent => f.write_str("year:NA"),
            Symbol::Zipf(t) => write!(f, "zipf:{t}"),
            Symbol::Component(c) => write!(f, "{c}"),
            Symbol::Schedule(s) => write!(f, "schedule:{s}"),
            Symbol::Duration(d) => write!(f, "days:{d}"),
        }
    }
}

const SPECIALS: [Symbol; N_SPECIALS] = [Symbol::Pad, Symbol::Go, Symbol::Eos, Symbol::Unk];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Role {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub role: Role,
    pub tokens: Vec<usize>,
}

/// Token/index bijection with PAD, GO, EOS, UNK at 0..4 and the remaining
/// symbols in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    role: Role,
    symbols: Vec<Symbol>,
    index: BTreeMap<Symbol, usize>,
}

impl Vocabulary {
    pub fn new(role: Role, domain: impl IntoIterator<Item = Symbol>) -> Self {
        let mut rest: Vec<Symbol> = domain.into_iter().filter(|s| !SPECIALS.contains(s)).collect();
        rest.sort_unstable();
        rest.dedup();
        let symbols: Vec<Symbol> = SPECIALS.iter().copied().chain(rest).collect();
        let index = symbols.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Vocabulary { role, symbols, index }
    }

    /// Every structural source token plus the given ICD-9 codes.
    pub fn source(codes: impl IntoIterator<Item = IcdCode>) -> Self {
        let mut domain: Vec<Symbol> = codes.into_iter().map(Symbol::Icd).collect();
        domain.push(Symbol::IcdAbsent);
        domain.extend(Sex::ALL.map(Symbol::Sex));
        domain.extend((0..N_AGES).map(Symbol::Age));
        domain.extend(Season::ALL.map(Symbol::Season));
        domain.extend((0..N_YEARS).map(Symbol::Year));
        domain.push(Symbol::YearAbsent);
        Vocabulary::new(Role::Source, domain)
    }

    /// Tokens occurring in the target sentences of `prescriptions`.
    pub fn target<'a>(prescriptions: impl IntoIterator<Item = &'a Prescription>) -> Self {
        let mut domain = Vec::new();
        for p in prescriptions {
            domain.extend(target_symbols(p));
        }
        Vocabulary::new(Role::Target, domain)
    }

    /// Every possible target token.
    pub fn full_target() -> Self {
        let mut domain: Vec<Symbol> = (0..N_ZIPF_TOKENS).map(Symbol::Zipf).collect();
        domain.extend((1..=super::types::N_COMPONENTS as u16).map(|i| Symbol::Component(ComponentId::new(i).unwrap_or_else(|_| unreachable!()))));
        domain.extend((1..=N_SCHEDULES).map(Symbol::Schedule));
        domain.extend((1..=N_DURATIONS).map(Symbol::Duration));
        Vocabulary::new(Role::Target, domain)
    }

    pub fn from_symbols(role: Role, symbols: Vec<Symbol>) -> Result<Self, CorpusError> {
        if symbols.len() < N_SPECIALS || symbols[..N_SPECIALS] != SPECIALS {
            return Err(CorpusError::BadVocabulary("specials missing from indices 0..4"));
        }
        let index: BTreeMap<Symbol, usize> = symbols.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        if index.len() != symbols.len() {
            return Err(CorpusError::BadVocabulary("duplicate symbol"));
        }
        Ok(Vocabulary { role, symbols, index })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn index_of(&self, s: &Symbol) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn symbol(&self, index: usize) -> Option<Symbol> {
        self.symbols.get(index).copied()
    }

    /// Maps symbols to indices; unknown ones become UNK and are counted.
    pub fn encode(&self, symbols: &[Symbol]) -> (TokenSequence, usize) {
        let mut unknown = 0;
        let tokens = symbols
            .iter()
            .map(|s| {
                self.index_of(s).unwrap_or_else(|| {
                    unknown += 1;
                    UNK
                })
            })
            .collect();
        (TokenSequence { role: self.role, tokens }, unknown)
    }

    pub fn decode(&self, tokens: &[usize]) -> Vec<Symbol> {
        tokens.iter().map(|&t| self.symbol(t).unwrap_or(Symbol::Unk)).collect()
    }
}

pub fn source_symbols(ph: &Phenotype) -> [Symbol; SOURCE_LEN] {
    let icd = |c: Option<IcdCode>| c.map_or(Symbol::IcdAbsent, Symbol::Icd);
    [
        Symbol::Icd(ph.primary()),
        icd(ph.secondary()),
        icd(ph.tertiary()),
        Symbol::Sex(ph.sex()),
        Symbol::Age(ph.age()),
        Symbol::Season(ph.season()),
        ph.year().map_or(Symbol::YearAbsent, Symbol::Year),
    ]
}

/// Seven source tokens and the number of UNK substitutions.
pub fn tokenize_source(ph: &Phenotype, vocab: &Vocabulary) -> (TokenSequence, usize) {
    vocab.encode(&source_symbols(ph))
}

/// `[zipf][component..][schedule][duration][EOS]`.
pub fn target_symbols(p: &Prescription) -> Vec<Symbol> {
    let weights = p.weights();
    // Canonical order keeps weights non-increasing and positive, so the fit cannot fail.
    let z = fit_zipf_exponent(&weights).unwrap_or(0.0);
    let token = zipf_token(z).unwrap_or(0);
    let mut out = Vec::with_capacity(p.components().len() + 4);
    out.push(Symbol::Zipf(token));
    out.extend(p.components().iter().map(|c| Symbol::Component(c.0)));
    out.push(Symbol::Schedule(p.schedule()));
    out.push(Symbol::Duration(p.duration_days()));
    out.push(Symbol::Eos);
    out
}

pub fn tokenize_target(p: &Prescription, vocab: &Vocabulary) -> (TokenSequence, usize) {
    vocab.encode(&target_symbols(p))
}

/// Parses `[zipf][component+][schedule][duration]` with an optional final
/// EOS. Doses come from the token's interval center with a 5 g anchor.
pub fn parse_target(symbols: &[Symbol]) -> Result<Prescription, CorpusError> {
    let err = |position, expected| Err(CorpusError::Grammar { position, expected });
    let body = match symbols.iter().position(|s| *s == Symbol::Eos) {
        Some(i) if i + 1 == symbols.len() => &symbols[..i],
        Some(i) => return err(i + 1, "end of sentence after EOS"),
        None => symbols,
    };
    let token = match body.first() {
        Some(Symbol::Zipf(t)) => *t,
        _ => return err(0, "zipf token"),
    };
    let mut ids = Vec::new();
    let mut pos = 1;
    while let Some(Symbol::Component(c)) = body.get(pos) {
        ids.push(*c);
        pos += 1;
    }
    if ids.is_empty() {
        return err(pos, "component token");
    }
    let schedule = match body.get(pos) {
        Some(Symbol::Schedule(s)) => *s,
        _ => return err(pos, "schedule token"),
    };
    let duration = match body.get(pos + 1) {
        Some(Symbol::Duration(d)) => *d,
        _ => return err(pos + 1, "duration token"),
    };
    if body.len() > pos + 2 {
        return err(pos + 2, "end of sentence");
    }
    let doses = model_doses(token_center(token), ids.len());
    let components: Vec<(ComponentId, Dose)> = ids.into_iter().zip(doses).collect();
    Prescription::new(components, None, schedule, duration)
}

pub fn detokenize_target(seq: &TokenSequence, vocab: &Vocabulary) -> Result<Prescription, CorpusError> {
    parse_target(&vocab.decode(&seq.tokens))
}

/// Smallest bucket holding `len` tokens, or `None` past the largest.
pub fn bucket_for_len(len: usize) -> Option<usize> {
    BUCKETS.iter().copied().find(|&b| len <= b)
}

pub fn bucket_of(seq: &TokenSequence) -> Option<usize> {
    bucket_for_len(seq.tokens.len())
}

/// Sequences grouped by bucket; overlong ones are dropped and counted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bucketed {
    /// Indices into the input, one list per entry of [`BUCKETS`].
    pub members: [Vec<usize>; 4],
    pub dropped: usize,
}

pub fn bucketize(seqs: &[TokenSequence]) -> Bucketed {
    let mut out = Bucketed::default();
    for (i, s) in seqs.iter().enumerate() {
        match bucket_of(s).and_then(|b| BUCKETS.iter().position(|&x| x == b)) {
            Some(k) => out.members[k].push(i),
            None => out.dropped += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn icd(s: &str) -> IcdCode {
        s.parse().unwrap()
    }

    fn rx(ids: &[u16], z: f64, schedule: u8, days: u8) -> Prescription {
        let doses = model_doses(z, ids.len());
        let comps = ids.iter().map(|&i| ComponentId::new(i).unwrap()).zip(doses).collect();
        Prescription::new(comps, None, schedule, days).unwrap()
    }

    #[test]
    fn specials_are_fixed() {
        let v = Vocabulary::source([icd("250"), icd("001")]);
        assert_eq!(v.symbols()[..4], [Symbol::Pad, Symbol::Go, Symbol::Eos, Symbol::Unk]);
        assert_eq!(v.index_of(&Symbol::Icd(icd("001"))), Some(4));
        assert_eq!(v.len(), 4 + 2 + 1 + 2 + 105 + 4 + 10 + 1);
        for (i, s) in v.symbols().iter().enumerate() {
            assert_eq!(v.index_of(s), Some(i));
        }
    }

    #[test]
    fn table_header_phenotype() {
        let ph = Phenotype::new(icd("43401"), None, None, Sex::Male, 65, 3, None).unwrap();
        let v = Vocabulary::source([icd("43401")]);
        let (seq, unk) = tokenize_source(&ph, &v);
        assert_eq!(unk, 0);
        assert_eq!(seq.tokens.len(), SOURCE_LEN);
        assert_eq!(
            v.decode(&seq.tokens),
            vec![
                Symbol::Icd(icd("43401")),
                Symbol::IcdAbsent,
                Symbol::IcdAbsent,
                Symbol::Sex(Sex::Male),
                Symbol::Age(65),
                Symbol::Season(Season::Spring),
                Symbol::YearAbsent,
            ]
        );
        assert_eq!(tokenize_source(&ph, &v), tokenize_source(&ph, &v));
    }

    #[test]
    fn unknown_icd_becomes_unk() {
        let ph = Phenotype::new(icd("999"), Some(icd("43401")), None, Sex::Female, 3, 12, Some(2)).unwrap();
        let v = Vocabulary::source([icd("43401")]);
        let (seq, unk) = tokenize_source(&ph, &v);
        assert_eq!(unk, 1);
        assert_eq!(seq.tokens[0], UNK);
    }

    #[test]
    fn single_formula_is_four_tokens_plus_eos() {
        let p = rx(&[1], 0.0, 3, 7);
        let sym = target_symbols(&p);
        assert_eq!(sym.len(), 5);
        assert_eq!(sym[1..], [Symbol::Component(ComponentId::new(1).unwrap()), Symbol::Schedule(3), Symbol::Duration(7), Symbol::Eos]);
        assert_eq!(parse_target(&sym).unwrap(), p);
    }

    #[test]
    fn model_consistent_doses_round_trip_exactly() {
        // Above token 11 the 0.1 g grid moves a six-dose refit into a lower interval.
        for t in 0..12u8 {
            let p = rx(&[5, 300, 17, 404, 650, 2], token_center(t), 12, 90);
            let v = Vocabulary::target([&p]);
            let (seq, unk) = tokenize_target(&p, &v);
            assert_eq!(unk, 0);
            let back = detokenize_target(&seq, &v).unwrap();
            assert_eq!(back, p, "token {t}");
        }
    }

    #[test]
    fn grammar_errors_carry_position() {
        let c = Symbol::Component(ComponentId::new(4).unwrap());
        let cases: [(Vec<Symbol>, usize); 6] = [
            (vec![], 0),
            (vec![c], 0),
            (vec![Symbol::Zipf(2), Symbol::Schedule(1)], 1),
            (vec![Symbol::Zipf(2), c, Symbol::Duration(1)], 2),
            (vec![Symbol::Zipf(2), c, Symbol::Schedule(1)], 3),
            (vec![Symbol::Zipf(2), c, Symbol::Schedule(1), Symbol::Duration(1), Symbol::Eos, c], 5),
        ];
        for (sym, at) in cases {
            match parse_target(&sym) {
                Err(CorpusError::Grammar { position, .. }) => assert_eq!(position, at, "{sym:?}"),
                other => panic!("{sym:?} -> {other:?}"),
            }
        }
        let dup = [Symbol::Zipf(2), c, c, Symbol::Schedule(1), Symbol::Duration(1)];
        assert!(matches!(parse_target(&dup), Err(CorpusError::DuplicateComponent(4))));
    }

    #[test]
    fn buckets() {
        assert_eq!(bucket_for_len(5), Some(8));
        assert_eq!(bucket_for_len(8), Some(8));
        assert_eq!(bucket_for_len(10), Some(10));
        assert_eq!(bucket_for_len(13), Some(18));
        assert_eq!(bucket_for_len(19), None);
        let mk = |n| TokenSequence { role: Role::Target, tokens: vec![4; n] };
        let b = bucketize(&[mk(5), mk(10), mk(19), mk(18)]);
        assert_eq!(b.members, [vec![0], vec![1], vec![], vec![3]]);
        assert_eq!(b.dropped, 1);
    }

    #[test]
    fn full_target_size() {
        assert_eq!(Vocabulary::full_target().len(), 4 + 15 + 718 + 27 + 90);
    }
}
