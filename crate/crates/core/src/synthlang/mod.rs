//! Synthetic language families with known lexical overlap and word-order
//! agreement, used as ground truth for desk-scale experiments.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, LanguageId};
use crate::typology::FeatureVectors;

pub const LATIN_INVENTORY: &str = "abdegiklmnoprstuvz";
pub const CYRILLIC_INVENTORY: &str = "абвгдеиклмнопрстуя";

const STEM_LEN: std::ops::RangeInclusive<usize> = 3..=6;
const ADJECTIVE_PROB: f64 = 0.3;
const NOUN_SUFFIX_PROB: f64 = 0.3;
const VERB_SUFFIX_PROB: f64 = 0.5;
const MIN_CORPUS_TOKENS: usize = 100;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("rate {0} is outside [0, 1]")]
    InvalidRate(f64),
    #[error("invalid genome: {0}")]
    InvalidGenome(String),
    #[error("n_tokens must be at least {MIN_CORPUS_TOKENS}, got {0}")]
    TooFewTokens(usize),
    #[error("genome file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constituent {
    S,
    V,
    O,
}

/// Constituent order, serialized as e.g. `"SOV"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WordOrder(pub [Constituent; 3]);

impl WordOrder {
    pub const SVO: WordOrder = WordOrder([Constituent::S, Constituent::V, Constituent::O]);
    pub const SOV: WordOrder = WordOrder([Constituent::S, Constituent::O, Constituent::V]);

    fn position(&self, c: Constituent) -> usize {
        self.0.iter().position(|&x| x == c).expect("permutation")
    }

    /// Precedence bits: S before V, S before O, V before O.
    pub fn precedence(&self) -> [bool; 3] {
        use Constituent::*;
        [
            self.position(S) < self.position(V),
            self.position(S) < self.position(O),
            self.position(V) < self.position(O),
        ]
    }

    /// The order with the given precedence bits, if they are transitive.
    pub fn from_precedence([sv, so, vo]: [bool; 3]) -> Option<WordOrder> {
        use Constituent::*;
        let rank = [(S, !sv as usize + !so as usize), (V, sv as usize + !vo as usize), (O, so as usize + vo as usize)];
        let mut order = [S; 3];
        let mut filled = [false; 3];
        for (c, r) in rank {
            if filled[r] {
                return None;
            }
            filled[r] = true;
            order[r] = c;
        }
        Some(WordOrder(order))
    }
}

impl fmt::Display for WordOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.0 {
            write!(f, "{c:?}")?;
        }
        Ok(())
    }
}

impl FromStr for WordOrder {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SynthError::InvalidGenome(format!("word order {s:?}"));
        let cs: Vec<Constituent> = s
            .chars()
            .map(|ch| match ch {
                'S' => Ok(Constituent::S),
                'V' => Ok(Constituent::V),
                'O' => Ok(Constituent::O),
                _ => Err(bad()),
            })
            .collect::<Result<_, _>>()?;
        let distinct: HashSet<_> = cs.iter().collect();
        if cs.len() != 3 || distinct.len() != 3 {
            return Err(bad());
        }
        Ok(WordOrder([cs[0], cs[1], cs[2]]))
    }
}

impl Serialize for WordOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WordOrder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageGenome {
    pub seed: u64,
    /// Word class of stem `i` is [`WordClass::of_index`]`(i)`.
    pub vocab: Vec<String>,
    pub zipf_exponent: f64,
    pub word_order: WordOrder,
    pub adjective_before_noun: bool,
    pub suffixes: Vec<String>,
    pub char_inventory: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordClass {
    Noun,
    Verb,
    Adjective,
}

impl WordClass {
    /// Half the stems are nouns, a quarter verbs, a quarter adjectives.
    pub fn of_index(i: usize) -> WordClass {
        match i % 4 {
            0 | 1 => WordClass::Noun,
            2 => WordClass::Verb,
            _ => WordClass::Adjective,
        }
    }
}

fn random_stem(rng: &mut ChaCha8Rng, inventory: &[char]) -> String {
    let len = rng.gen_range(STEM_LEN);
    (0..len).map(|_| *inventory.choose(rng).expect("non-empty inventory")).collect()
}

impl LanguageGenome {
    /// A fresh genome with `vocab_size` distinct random stems.
    pub fn random(seed: u64, vocab_size: usize, inventory: &str, zipf_exponent: f64) -> Result<Self, SynthError> {
        let chars: Vec<char> = inventory.chars().collect();
        if chars.len() < 2 || vocab_size == 0 || !(zipf_exponent > 0.0) {
            return Err(SynthError::InvalidGenome("need ≥ 2 characters, ≥ 1 stem, positive exponent".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut vocab = Vec::with_capacity(vocab_size);
        while vocab.len() < vocab_size {
            let s = random_stem(&mut rng, &chars);
            if seen.insert(s.clone()) {
                vocab.push(s);
            }
        }
        let suffixes = (0..3)
            .map(|_| (0..rng.gen_range(1..=2)).map(|_| *chars.choose(&mut rng).unwrap()).collect())
            .collect();
        let order = loop {
            let bits = [rng.gen(), rng.gen(), rng.gen()];
            if let Some(o) = WordOrder::from_precedence(bits) {
                break o;
            }
        };
        Ok(Self {
            seed,
            vocab,
            zipf_exponent,
            word_order: order,
            adjective_before_noun: rng.gen(),
            suffixes,
            char_inventory: inventory.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidGenome(m.to_string()));
        if self.vocab.is_empty() {
            return bad("empty vocabulary");
        }
        if self.vocab.iter().collect::<HashSet<_>>().len() != self.vocab.len() {
            return bad("duplicate stems");
        }
        let inv: HashSet<char> = self.char_inventory.chars().collect();
        if self.vocab.iter().any(|s| s.is_empty() || s.chars().any(|c| !inv.contains(&c))) {
            return bad("stem outside the character inventory");
        }
        if !(self.zipf_exponent > 0.0) {
            return bad("zipf exponent must be positive");
        }
        Ok(())
    }

    /// Word-order parameters: three precedence bits and adjective order.
    pub fn syntax_parameters(&self) -> [bool; 4] {
        let [a, b, c] = self.word_order.precedence();
        [a, b, c, self.adjective_before_noun]
    }

    /// The parameters as a ±1 vector, the synthetic stand-in for a
    /// typological feature vector.
    pub fn syntactic_vector(&self) -> Vec<f64> {
        self.syntax_parameters().iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
    }

    fn class_stems(&self, class: WordClass) -> Vec<&str> {
        self.vocab
            .iter()
            .enumerate()
            .filter(|(i, _)| WordClass::of_index(*i) == class)
            .map(|(_, s)| s.as_str())
            .collect()
    }
}

fn check_rate(r: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(SynthError::InvalidRate(r))
    }
}

/// Child genome: each stem is independently replaced with probability
/// `lex_mutation` by a fresh stem from the parent's inventory, and each
/// word-order parameter flips with probability `syntax_flip_prob`.
/// Precedence flips that would make the order cyclic are redrawn.
pub fn derive_language(
    parent: &LanguageGenome,
    lex_mutation: f64,
    syntax_flip_prob: f64,
    seed: u64,
) -> Result<LanguageGenome, SynthError> {
    check_rate(lex_mutation)?;
    check_rate(syntax_flip_prob)?;
    parent.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chars: Vec<char> = parent.char_inventory.chars().collect();
    let mut taken: HashSet<String> = parent.vocab.iter().cloned().collect();
    let mut vocab = parent.vocab.clone();
    for stem in vocab.iter_mut() {
        if rng.gen_bool(lex_mutation) {
            *stem = loop {
                let s = random_stem(&mut rng, &chars);
                if taken.insert(s.clone()) {
                    break s;
                }
            };
        }
    }
    let bits = parent.word_order.precedence();
    let word_order = loop {
        let flipped = bits.map(|b| b ^ rng.gen_bool(syntax_flip_prob));
        if let Some(o) = WordOrder::from_precedence(flipped) {
            break o;
        }
    };
    Ok(LanguageGenome {
        seed,
        vocab,
        word_order,
        adjective_before_noun: parent.adjective_before_noun ^ rng.gen_bool(syntax_flip_prob),
        ..parent.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenomeDistance {
    /// Shared stems over the larger vocabulary size.
    pub lexical_overlap: f64,
    /// Fraction of the four word-order parameters that agree.
    pub syntax_agreement: f64,
}

pub fn genome_distance(a: &LanguageGenome, b: &LanguageGenome) -> GenomeDistance {
    let sa: HashSet<&String> = a.vocab.iter().collect();
    let shared = b.vocab.iter().filter(|s| sa.contains(s)).count();
    let denom = a.vocab.len().max(b.vocab.len());
    let (pa, pb) = (a.syntax_parameters(), b.syntax_parameters());
    GenomeDistance {
        lexical_overlap: if denom == 0 { 0.0 } else { shared as f64 / denom as f64 },
        syntax_agreement: pa.iter().zip(&pb).filter(|(x, y)| x == y).count() as f64 / 4.0,
    }
}

/// Deterministic sentence source. Sentence `i` depends only on the genome,
/// the seed and `i`, so generation can resume at any index.
pub struct SentenceStream<'a> {
    genome: &'a LanguageGenome,
    nouns: Vec<&'a str>,
    verbs: Vec<&'a str>,
    adjectives: Vec<&'a str>,
    seed: u64,
    next: u64,
}

impl<'a> SentenceStream<'a> {
    pub fn new(genome: &'a LanguageGenome, seed: u64) -> Result<Self, SynthError> {
        genome.validate()?;
        let (nouns, verbs, adjectives) = (
            genome.class_stems(WordClass::Noun),
            genome.class_stems(WordClass::Verb),
            genome.class_stems(WordClass::Adjective),
        );
        if verbs.is_empty() {
            return Err(SynthError::InvalidGenome("need at least three stems".into()));
        }
        Ok(Self {
            genome,
            nouns,
            verbs,
            adjectives,
            seed,
            next: 0,
        })
    }

    pub fn starting_at(mut self, index: u64) -> Self {
        self.next = index;
        self
    }

    fn pick(&self, stems: &[&'a str], rng: &mut ChaCha8Rng) -> &'a str {
        let z = Zipf::new(stems.len() as u64, self.genome.zipf_exponent).expect("valid zipf");
        stems[z.sample(rng) as usize - 1]
    }

    fn inflect(&self, stem: &str, prob: f64, rng: &mut ChaCha8Rng) -> String {
        match self.genome.suffixes.choose(rng) {
            Some(sfx) if rng.gen_bool(prob) => format!("{stem}{sfx}"),
            _ => stem.to_string(),
        }
    }

    fn noun_phrase(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let noun = self.inflect(self.pick(&self.nouns, rng), NOUN_SUFFIX_PROB, rng);
        if self.adjectives.is_empty() || !rng.gen_bool(ADJECTIVE_PROB) {
            return vec![noun];
        }
        let adj = self.pick(&self.adjectives, rng).to_string();
        if self.genome.adjective_before_noun {
            vec![adj, noun]
        } else {
            vec![noun, adj]
        }
    }

    /// Sentence `index` as its constituents in surface order.
    pub fn constituents(&self, index: u64) -> Vec<(Constituent, Vec<String>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let subject = self.noun_phrase(&mut rng);
        let verb = vec![self.inflect(self.pick(&self.verbs, &mut rng), VERB_SUFFIX_PROB, &mut rng)];
        let object = self.noun_phrase(&mut rng);
        let mut parts = [Some(subject), Some(verb), Some(object)];
        self.genome
            .word_order
            .0
            .iter()
            .map(|&c| {
                let slot = match c {
                    Constituent::S => 0,
                    Constituent::V => 1,
                    Constituent::O => 2,
                };
                (c, parts[slot].take().expect("each constituent once"))
            })
            .collect()
    }
}

impl Iterator for SentenceStream<'_> {
    type Item = String;

    fn next(&mut self) -> Option<String> {
        let words: Vec<String> = self.constituents(self.next).into_iter().flat_map(|(_, w)| w).collect();
        self.next += 1;
        Some(words.join(" "))
    }
}

/// Whole sentences, one per line, until at least `n_tokens` whitespace
/// tokens have been emitted.
pub fn generate_corpus(
    language: LanguageId,
    genome: &LanguageGenome,
    n_tokens: usize,
    seed: u64,
) -> Result<Corpus, SynthError> {
    if n_tokens < MIN_CORPUS_TOKENS {
        return Err(SynthError::TooFewTokens(n_tokens));
    }
    let mut lines = Vec::new();
    let mut count = 0;
    for sentence in SentenceStream::new(genome, seed)? {
        count += sentence.split_whitespace().count();
        lines.push(sentence);
        if count >= n_tokens {
            break;
        }
    }
    Ok(Corpus::new(language, lines, format!("synthlang seed={seed} genome={}", genome.seed))?)
}

/// One member of a generated family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeRecord {
    pub language: LanguageId,
    pub genome: LanguageGenome,
    /// Synthetic geographic coordinates; family members cluster together.
    pub geo: [f64; 2],
}

impl GenomeRecord {
    pub fn geographic_vector(&self) -> Vec<f64> {
        self.geo.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub n_similar: usize,
    /// Stem replacement rate from the target to each similar language.
    pub similar_mutation: f64,
    pub similar_syntax_flip: f64,
    /// Dissimilar languages descend from an independent Cyrillic root.
    pub n_dissimilar: usize,
    pub dissimilar_mutation: f64,
    pub dissimilar_syntax_flip: f64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            vocab_size: 1000,
            zipf_exponent: 1.1,
            n_similar: 10,
            similar_mutation: 0.3,
            similar_syntax_flip: 0.1,
            n_dissimilar: 10,
            dissimilar_mutation: 0.3,
            dissimilar_syntax_flip: 0.1,
        }
    }
}

/// Codes from the ISO 639-3 local-use range `qaa`..`qtz`.
pub fn synthetic_code(i: usize) -> String {
    assert!(i < 20 * 26, "synthetic code range exhausted");
    let second = (b'a' + (i / 26) as u8) as char;
    let third = (b'a' + (i % 26) as u8) as char;
    format!("q{second}{third}")
}

/// Target first (`qaa_Latn`), then similar (Latin) and dissimilar
/// (Cyrillic) languages. Geographic points sit on a small lattice around
/// a per-branch direction.
pub fn generate_family(spec: &FamilySpec, seed: u64) -> Result<Vec<GenomeRecord>, SynthError> {
    check_rate(spec.similar_mutation)?;
    check_rate(spec.dissimilar_mutation)?;
    let target = LanguageGenome::random(seed, spec.vocab_size, LATIN_INVENTORY, spec.zipf_exponent)?;
    let far_root =
        LanguageGenome::random(seed ^ 0x9e37_79b9_7f4a_7c15, spec.vocab_size, CYRILLIC_INVENTORY, spec.zipf_exponent)?;
    let lattice = |branch_angle: f64, k: usize| {
        let (dx, dy) = ((k % 4) as f64 - 1.5, (k / 4) as f64 - 1.0);
        let (r, a) = (10.0, branch_angle.to_radians());
        [r * a.cos() + 0.5 * dx, r * a.sin() + 0.5 * dy]
    };
    let mut out = vec![GenomeRecord {
        language: LanguageId::new(&synthetic_code(0), "Latn")?,
        genome: target.clone(),
        geo: lattice(20.0, 0),
    }];
    for k in 0..spec.n_similar {
        let child_seed = seed.wrapping_add(1 + k as u64);
        out.push(GenomeRecord {
            language: LanguageId::new(&synthetic_code(out.len()), "Latn")?,
            genome: derive_language(&target, spec.similar_mutation, spec.similar_syntax_flip, child_seed)?,
            geo: lattice(20.0, k + 1),
        });
    }
    for k in 0..spec.n_dissimilar {
        let child_seed = seed.wrapping_add(1001 + k as u64);
        out.push(GenomeRecord {
            language: LanguageId::new(&synthetic_code(out.len()), "Cyrl")?,
            genome: derive_language(&far_root, spec.dissimilar_mutation, spec.dissimilar_syntax_flip, child_seed)?,
            geo: lattice(70.0, k),
        });
    }
    Ok(out)
}

/// Syntactic and geographic vectors of a family, ready for the similarity
/// matrix or a feature file.
pub fn family_feature_vectors(records: &[GenomeRecord]) -> FeatureVectors {
    let mut v = FeatureVectors::default();
    for r in records {
        v.syntactic.insert(r.language.clone(), r.genome.syntactic_vector());
        v.geographic.insert(r.language.clone(), r.geographic_vector());
    }
    v
}

/// JSON lines, one [`GenomeRecord`] each.
pub fn write_genomes(path: &Path, records: &[GenomeRecord]) -> Result<(), SynthError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| SynthError::InvalidGenome(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_genomes(path: &Path) -> Result<Vec<GenomeRecord>, SynthError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GenomeRecord = serde_json::from_str(&line).map_err(|e| SynthError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        rec.genome.validate()?;
        out.push(rec);
    }
    Ok(out)
}
