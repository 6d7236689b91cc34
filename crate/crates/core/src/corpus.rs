//! Corpus data model: normalization, TSV loading, stratified splitting,
//! synthetic corpus generation, and distribution stats.
//!
//! Preprocessing drops digits and punctuation, collapses whitespace, and
//! (in uncased mode) applies Turkish-aware lowercasing. Splitting and
//! generation are deterministic functions of their seeds.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use unicode_properties::{GeneralCategory, GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::numerics::Rng;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corpus is empty")]
    Empty,
    #[error("label set needs at least 2 distinct labels, found {0}")]
    TooFewLabels(usize),
    #[error("stratified split requires >= 2 records per label; singleton labels: {}", .0.join(", "))]
    SingletonLabels(Vec<String>),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

/// One (sentence, tag) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub text: String,
    pub label: String,
}

/// Ordered label set; ids follow first appearance in the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn from_records(records: &[LabeledSentence]) -> Result<Self, CorpusError> {
        Self::from_labels(records.iter().map(|r| r.label.as_str()))
    }

    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Self, CorpusError> {
        let mut vocab = LabelVocab {
            labels: Vec::new(),
            index: HashMap::new(),
        };
        for label in labels {
            if !vocab.index.contains_key(label) {
                vocab.index.insert(label.to_string(), vocab.labels.len());
                vocab.labels.push(label.to_string());
            }
        }
        if vocab.labels.len() < 2 {
            return Err(CorpusError::TooFewLabels(vocab.labels.len()));
        }
        Ok(vocab)
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }
}

/// Whether casing is preserved or folded during preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseMode {
    Cased,
    Uncased,
}

impl Default for CaseMode {
    fn default() -> Self {
        CaseMode::Uncased
    }
}

impl fmt::Display for CaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseMode::Cased => write!(f, "cased"),
            CaseMode::Uncased => write!(f, "uncased"),
        }
    }
}

impl std::str::FromStr for CaseMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cased" => Ok(CaseMode::Cased),
            "uncased" => Ok(CaseMode::Uncased),
            other => Err(format!("unknown case mode '{other}' (expected cased|uncased)")),
        }
    }
}

/// Train/test split parameters. Default fraction is 0.7, stratified.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            seed: 0,
            stratified: true,
        }
    }
}

/// Parameters of the synthetic corpus generator. Class supports follow a
/// Zipf-like law `support(c) ~ (c+1)^(-imbalance_exponent)`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub total_sentences: usize,
    pub imbalance_exponent: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 46,
            total_sentences: 4600,
            imbalance_exponent: 1.0,
            min_words: 2,
            max_words: 30,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.num_classes < 2 {
            return Err(CorpusError::InvalidSpec(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.total_sentences < 2 * self.num_classes {
            return Err(CorpusError::InvalidSpec(format!(
                "total_sentences must be >= 2 * num_classes so every class keeps >= 2 \
                 records, got {} for {} classes",
                self.total_sentences, self.num_classes
            )));
        }
        if self.min_words < 2 || self.min_words > self.max_words {
            return Err(CorpusError::InvalidSpec(format!(
                "word bounds must satisfy 2 <= min_words <= max_words, got {}..{}",
                self.min_words, self.max_words
            )));
        }
        if !self.imbalance_exponent.is_finite() || self.imbalance_exponent < 0.0 {
            return Err(CorpusError::InvalidSpec(format!(
                "imbalance_exponent must be finite and >= 0, got {}",
                self.imbalance_exponent
            )));
        }
        Ok(())
    }
}

fn is_dropped(ch: char) -> bool {
    // Digits (Nd), Unicode punctuation, plus an explicit ASCII set.
    const ASCII_DROPPED: &str = "?!.,;:'\"()-/\\";
    ch.general_category() == GeneralCategory::DecimalNumber
        || ch.general_category_group() == GeneralCategoryGroup::Punctuation
        || ASCII_DROPPED.contains(ch)
}

fn push_lower_turkish(out: &mut String, ch: char) {
    // Turkish casing: dotted capital lowers to plain i, dotless stays dotless.
    match ch {
        'İ' => out.push('i'),
        'I' => out.push('ı'),
        _ => out.extend(ch.to_lowercase()),
    }
}

/// Strip digits and punctuation, collapse whitespace, and lowercase when
/// `mode` is uncased. An empty result is legal; callers drop such records.
pub fn normalize(text: &str, mode: CaseMode) -> String {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars() {
        if is_dropped(ch) {
            continue;
        }
        match mode {
            CaseMode::Cased => cleaned.push(ch),
            CaseMode::Uncased => push_lower_turkish(&mut cleaned, ch),
        }
    }
    let mut out = String::with_capacity(cleaned.len());
    for word in cleaned.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// A loaded corpus: normalized records, the label set, and how many rows
/// normalized to the empty string and were dropped.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub records: Vec<LabeledSentence>,
    pub label_vocab: LabelVocab,
    pub dropped: usize,
}

/// Read a UTF-8 TSV with header `text<TAB>label`, normalizing every row.
pub fn load_corpus(path: &Path, mode: CaseMode) -> Result<LoadedCorpus, CorpusError> {
    let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&content, mode)
}

/// TSV parsing behind `load_corpus`, usable on in-memory content.
pub fn parse_corpus(content: &str, mode: CaseMode) -> Result<LoadedCorpus, CorpusError> {
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == "text\tlabel" => {}
        Some((_, header)) => {
            return Err(CorpusError::Parse {
                line: 1,
                message: format!("expected header 'text\\tlabel', found '{header}'"),
            })
        }
        None => return Err(CorpusError::Empty),
    }

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (text, label) = match (fields.next(), fields.next(), fields.next()) {
            (Some(t), Some(l), None) => (t, l),
            _ => {
                return Err(CorpusError::Parse {
                    line: i + 1,
                    message: "expected exactly 2 tab-separated fields".to_string(),
                })
            }
        };
        if label.is_empty() {
            return Err(CorpusError::Parse {
                line: i + 1,
                message: "empty label".to_string(),
            });
        }
        let text = normalize(text, mode);
        if text.is_empty() {
            dropped += 1;
            continue;
        }
        records.push(LabeledSentence {
            text,
            label: label.to_string(),
        });
    }
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let label_vocab = LabelVocab::from_records(&records)?;
    Ok(LoadedCorpus {
        records,
        label_vocab,
        dropped,
    })
}

/// Serialize records back to the TSV format `load_corpus` reads.
pub fn to_tsv(records: &[LabeledSentence]) -> String {
    let mut out = String::from("text\tlabel\n");
    for r in records {
        out.push_str(&r.text);
        out.push('\t');
        out.push_str(&r.label);
        out.push('\n');
    }
    out
}

// floor(n * fraction) with a scale-relative nudge so products that are exact
// in decimal (e.g. 10 * 0.7) do not land one below the intended integer.
fn floor_fraction(n: usize, fraction: f64) -> usize {
    let nudge = 1e-9 * (n as f64).max(1.0);
    ((n as f64) * fraction + nudge).floor() as usize
}

/// Partition records into train/test. Stratified mode takes
/// `floor(support * train_fraction)` of every label for train and sends the
/// remainder to test; both sides are then shuffled by the seed.
pub fn split_dataset(
    records: Vec<LabeledSentence>,
    spec: &SplitSpec,
) -> Result<(Vec<LabeledSentence>, Vec<LabeledSentence>), CorpusError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CorpusError::InvalidSpec(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }

    let mut rng = Rng::seed_from_u64(spec.seed);
    let mut train_idx: Vec<usize> = Vec::new();
    let mut test_idx: Vec<usize> = Vec::new();

    if spec.stratified {
        // Group record indices per label in first-appearance order.
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            let entry = groups.entry(r.label.as_str()).or_default();
            if entry.is_empty() {
                order.push(r.label.as_str());
            }
            entry.push(i);
        }
        let singletons: Vec<String> = order
            .iter()
            .filter(|l| groups[**l].len() < 2)
            .map(|l| l.to_string())
            .collect();
        if !singletons.is_empty() {
            return Err(CorpusError::SingletonLabels(singletons));
        }
        for label in order {
            let mut idx = groups.remove(label).expect("label group exists");
            rng.shuffle(&mut idx);
            let take = floor_fraction(idx.len(), spec.train_fraction);
            test_idx.extend(idx.split_off(take));
            train_idx.extend(idx);
        }
    } else {
        let mut idx: Vec<usize> = (0..records.len()).collect();
        rng.shuffle(&mut idx);
        let take = floor_fraction(idx.len(), spec.train_fraction);
        test_idx = idx.split_off(take);
        train_idx = idx;
    }

    rng.shuffle(&mut train_idx);
    rng.shuffle(&mut test_idx);

    let mut slots: Vec<Option<LabeledSentence>> = records.into_iter().map(Some).collect();
    let take_all = |idx: &[usize], slots: &mut Vec<Option<LabeledSentence>>| {
        idx.iter()
            .map(|&i| slots[i].take().expect("each index moved once"))
            .collect::<Vec<_>>()
    };
    let train = take_all(&train_idx, &mut slots);
    let test = take_all(&test_idx, &mut slots);
    Ok((train, test))
}

/// Per-class sentence counts for a spec: Zipf-like quotas, largest-remainder
/// rounding, and a minimum of 2 per class. Non-increasing by class id.
pub fn class_supports(spec: &SyntheticSpec) -> Result<Vec<usize>, CorpusError> {
    spec.validate()?;
    let c = spec.num_classes;
    let weights: Vec<f64> = (0..c)
        .map(|i| ((i + 1) as f64).powf(-spec.imbalance_exponent))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| spec.total_sentences as f64 * w / wsum)
        .collect();
    let mut supports: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = supports.iter().sum();

    // Largest remainder first; ties go to the lower class id, which keeps the
    // allocation non-increasing because quotas are non-increasing.
    let mut by_frac: Vec<usize> = (0..c).collect();
    by_frac.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in by_frac.iter().take(spec.total_sentences - assigned) {
        supports[i] += 1;
    }

    // Lift starved tail classes to 2, paying from the currently largest
    // class (highest id among ties, so the non-increasing shape survives).
    let mut deficit = 0usize;
    for s in supports.iter_mut() {
        if *s < 2 {
            deficit += 2 - *s;
            *s = 2;
        }
    }
    while deficit > 0 {
        let donor = (0..c)
            .rev()
            .max_by_key(|&i| supports[i])
            .expect("at least one class");
        debug_assert!(supports[donor] > 2);
        supports[donor] -= 1;
        deficit -= 1;
    }
    debug_assert_eq!(supports.iter().sum::<usize>(), spec.total_sentences);
    Ok(supports)
}

const KEYWORDS_PER_CLASS: usize = 3;
const FILLER_POOL: usize = 50;

// Letters-only word code: no digits or punctuation, so normalization is the
// identity on generated text.
fn word_code(prefix: char, mut n: usize) -> String {
    let mut tail = ['a'; 3];
    for slot in tail.iter_mut().rev() {
        *slot = (b'a' + (n % 26) as u8) as char;
        n /= 26;
    }
    let mut s = String::with_capacity(4);
    s.push(prefix);
    s.extend(tail);
    s
}

fn keyword(class: usize, j: usize) -> String {
    word_code('q', class * KEYWORDS_PER_CLASS + j)
}

fn filler(j: usize) -> String {
    word_code('f', j)
}

fn class_label(class: usize) -> String {
    format!("label_{class:02}")
}

/// Generate a labeled corpus. Every sentence of class `c` contains at least
/// one keyword from `c`'s disjoint pool; the remaining words come from a
/// shared filler pool. Byte-identical output for identical specs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<LabeledSentence>, CorpusError> {
    let supports = class_supports(spec)?;
    let mut rng = Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.total_sentences);
    for (class, &support) in supports.iter().enumerate() {
        let label = class_label(class);
        for _ in 0..support {
            let len = rng.int_in(spec.min_words, spec.max_words);
            let kw_pos = rng.below(len);
            let kw = keyword(class, rng.below(KEYWORDS_PER_CLASS));
            let mut words = Vec::with_capacity(len);
            for pos in 0..len {
                if pos == kw_pos {
                    words.push(kw.clone());
                } else {
                    words.push(filler(rng.below(FILLER_POOL)));
                }
            }
            records.push(LabeledSentence {
                text: words.join(" "),
                label: label.clone(),
            });
        }
    }
    Ok(records)
}

/// Word-count and label histograms of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    /// (word_count, count) sorted by word_count.
    pub lengths: Vec<(usize, usize)>,
    /// (label, count) in first-appearance order.
    pub labels: Vec<(String, usize)>,
}

pub fn corpus_stats(records: &[LabeledSentence]) -> Result<CorpusStats, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut lengths = std::collections::BTreeMap::new();
    let mut label_order: Vec<String> = Vec::new();
    let mut label_counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *lengths.entry(r.text.split_whitespace().count()).or_insert(0) += 1;
        if !label_counts.contains_key(r.label.as_str()) {
            label_order.push(r.label.clone());
        }
        *label_counts.entry(r.label.as_str()).or_insert(0) += 1;
    }
    let labels = label_order
        .into_iter()
        .map(|l| {
            let count = label_counts[l.as_str()];
            (l, count)
        })
        .collect();
    Ok(CorpusStats {
        lengths: lengths.into_iter().collect(),
        labels,
    })
}

impl CorpusStats {
    /// CSV with columns `word_count,count`.
    pub fn lengths_csv(&self) -> String {
        let mut out = String::from("word_count,count\n");
        for (len, count) in &self.lengths {
            out.push_str(&format!("{len},{count}\n"));
        }
        out
    }

    /// CSV with columns `label,count`; labels are quoted when needed.
    pub fn labels_csv(&self) -> String {
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        wtr.write_record(["label", "count"]).expect("in-memory csv");
        for (label, count) in &self.labels {
            wtr.write_record([label.as_str(), &count.to_string()])
                .expect("in-memory csv");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}
