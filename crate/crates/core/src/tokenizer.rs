//! Word-level tokenizer: a frequency-capped vocabulary built from the train
//! split, plus fixed-length encoding with attention masks.
//!
//! Six special tokens occupy ids 0..=5 for both architectures. Encoder input
//! is wrapped as `[CLS] w.. [SEP]`, decoder input as `[BOS] w.. [EOS]`;
//! overlong sentences keep their left context and always keep the trailing
//! separator.

use std::collections::HashMap;
use std::path::Path;

use crate::corpus::LabeledSentence;
use crate::model::ArchKind;
use crate::util::fnv1a_64;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const BOS_ID: u32 = 4;
pub const EOS_ID: u32 = 5;

pub const SPECIAL_TOKENS: [&str; 6] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"];

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocabulary cap must be >= 7 (6 specials + at least 1 word), got {0}")]
    CapTooSmall(usize),
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("max_seq_len must be >= 3, got {0}")]
    SeqLenTooSmall(usize),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad vocabulary file: {0}")]
    BadVocabFile(String),
}

/// Immutable token vocabulary. Ids 0..=5 are the specials; the remaining
/// tokens are sorted by descending frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl TokenizerVocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self, TokenizerError> {
        if tokens.len() < SPECIAL_TOKENS.len() + 1 {
            return Err(TokenizerError::BadVocabFile(format!(
                "expected at least 7 tokens, found {}",
                tokens.len()
            )));
        }
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *expected {
                return Err(TokenizerError::BadVocabFile(format!(
                    "line {} must be the special token {expected}, found '{}'",
                    i + 1,
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(TokenizerError::BadVocabFile(format!(
                    "duplicate token '{tok}'"
                )));
            }
        }
        Ok(TokenizerVocab { tokens, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    /// FNV-1a over the newline-terminated token list; equals the hash of the
    /// vocabulary file this vocab round-trips through.
    pub fn content_hash(&self) -> u64 {
        fnv1a_64(self.to_file_string().as_bytes())
    }

    /// File format: one token per line, line number = id.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_file_string()).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let content = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tokens(content.lines().map(str::to_string).collect())
    }
}

/// Count whitespace-token frequencies over the train corpus and keep the top
/// `cap - 6` words. Ties break lexicographically.
pub fn build_vocab(
    train_corpus: &[LabeledSentence],
    cap: usize,
) -> Result<TokenizerVocab, TokenizerError> {
    if cap < SPECIAL_TOKENS.len() + 1 {
        return Err(TokenizerError::CapTooSmall(cap));
    }
    if train_corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for r in train_corpus {
        for word in r.text.split_whitespace() {
            *freq.entry(word).or_insert(0) += 1;
        }
    }
    if freq.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut words: Vec<(&str, u64)> = freq.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    words.truncate(cap - SPECIAL_TOKENS.len());

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(words.into_iter().map(|(w, _)| w.to_string()));
    TokenizerVocab::from_tokens(tokens)
}

/// A sentence encoded to `max_seq_len` ids with a 1s-then-0s attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub label_id: u32,
    /// Index of the final non-pad token (= number of mask 1s minus one).
    pub last_real_pos: usize,
}

/// Encode a normalized sentence. Encoder wraps words as `[CLS] .. [SEP]`,
/// decoder as `[BOS] .. [EOS]`; out-of-vocabulary words map to `[UNK]`, and
/// words beyond `max_seq_len - 2` are cut from the right so the trailing
/// separator always survives.
pub fn encode(
    sentence: &str,
    vocab: &TokenizerVocab,
    max_seq_len: usize,
    arch: ArchKind,
) -> Result<EncodedExample, TokenizerError> {
    if max_seq_len < 3 {
        return Err(TokenizerError::SeqLenTooSmall(max_seq_len));
    }
    let (open, close) = match arch {
        ArchKind::Encoder => (CLS_ID, SEP_ID),
        ArchKind::Decoder => (BOS_ID, EOS_ID),
    };
    let mut ids = Vec::with_capacity(max_seq_len);
    ids.push(open);
    for word in sentence.split_whitespace().take(max_seq_len - 2) {
        ids.push(vocab.id(word).unwrap_or(UNK_ID));
    }
    ids.push(close);
    let real = ids.len();
    let mut mask = vec![1u8; real];
    ids.resize(max_seq_len, PAD_ID);
    mask.resize(max_seq_len, 0);
    Ok(EncodedExample {
        ids,
        mask,
        label_id: 0,
        last_real_pos: real - 1,
    })
}

/// Inverse of the encode layout for debugging: specials are omitted and
/// words joined by single spaces.
pub fn decode(ids: &[u32], vocab: &TokenizerVocab) -> Result<String, TokenizerError> {
    let mut words: Vec<&str> = Vec::new();
    for &id in ids {
        if id as usize >= vocab.size() {
            return Err(TokenizerError::IdOutOfRange {
                id,
                size: vocab.size(),
            });
        }
        if id > EOS_ID {
            words.push(vocab.token(id).expect("id checked above"));
        }
    }
    Ok(words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_of(sentences: &[&str]) -> Vec<LabeledSentence> {
        sentences
            .iter()
            .map(|s| LabeledSentence {
                text: s.to_string(),
                label: "x".to_string(),
            })
            .collect()
    }

    #[test]
    fn vocab_keeps_top_words_by_frequency() {
        // a x5, b x3, c x1; cap 8 leaves room for two words.
        let corpus = corpus_of(&["a a a", "a a b", "b b c"]);
        let vocab = build_vocab(&corpus, 8).unwrap();
        assert_eq!(vocab.size(), 8);
        assert_eq!(vocab.token(6), Some("a"));
        assert_eq!(vocab.token(7), Some("b"));
        assert_eq!(vocab.id("c"), None);
    }

    #[test]
    fn vocab_breaks_frequency_ties_lexicographically() {
        let corpus = corpus_of(&["b a", "a b"]);
        let vocab = build_vocab(&corpus, 7).unwrap();
        assert_eq!(vocab.size(), 7);
        assert_eq!(vocab.token(6), Some("a"));
    }

    #[test]
    fn vocab_rejects_cap_below_seven() {
        let corpus = corpus_of(&["a"]);
        assert!(matches!(
            build_vocab(&corpus, 6),
            Err(TokenizerError::CapTooSmall(6))
        ));
    }

    #[test]
    fn vocab_rejects_empty_corpus() {
        assert!(matches!(
            build_vocab(&[], 10),
            Err(TokenizerError::EmptyCorpus)
        ));
    }

    #[test]
    fn specials_occupy_first_six_ids() {
        let vocab = build_vocab(&corpus_of(&["a"]), 7).unwrap();
        for (i, tok) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(vocab.token(i as u32), Some(*tok));
        }
    }

    #[test]
    fn encode_encoder_layout() {
        let vocab = build_vocab(&corpus_of(&["a b"]), 8).unwrap();
        let (a, b) = (vocab.id("a").unwrap(), vocab.id("b").unwrap());
        let ex = encode("a b", &vocab, 5, ArchKind::Encoder).unwrap();
        assert_eq!(ex.ids, vec![CLS_ID, a, b, SEP_ID, PAD_ID]);
        assert_eq!(ex.mask, vec![1, 1, 1, 1, 0]);
        assert_eq!(ex.last_real_pos, 3);
    }

    #[test]
    fn encode_decoder_layout() {
        let vocab = build_vocab(&corpus_of(&["a b"]), 8).unwrap();
        let (a, b) = (vocab.id("a").unwrap(), vocab.id("b").unwrap());
        let ex = encode("a b", &vocab, 5, ArchKind::Decoder).unwrap();
        assert_eq!(ex.ids, vec![BOS_ID, a, b, EOS_ID, PAD_ID]);
        assert_eq!(ex.last_real_pos, 3);
    }

    #[test]
    fn encode_truncates_from_the_right_keeping_separator() {
        let vocab = build_vocab(&corpus_of(&["a b c d"]), 10).unwrap();
        let (a, b) = (vocab.id("a").unwrap(), vocab.id("b").unwrap());
        let ex = encode("a b c d", &vocab, 4, ArchKind::Encoder).unwrap();
        assert_eq!(ex.ids, vec![CLS_ID, a, b, SEP_ID]);
        assert_eq!(ex.last_real_pos, 3);
    }

    #[test]
    fn encode_maps_oov_to_unk() {
        let vocab = build_vocab(&corpus_of(&["a"]), 7).unwrap();
        let ex = encode("a zzz", &vocab, 5, ArchKind::Encoder).unwrap();
        assert_eq!(ex.ids[2], UNK_ID);
    }

    #[test]
    fn encode_rejects_tiny_max_seq_len() {
        let vocab = build_vocab(&corpus_of(&["a"]), 7).unwrap();
        assert!(matches!(
            encode("a", &vocab, 2, ArchKind::Encoder),
            Err(TokenizerError::SeqLenTooSmall(2))
        ));
    }

    #[test]
    fn decode_omits_specials() {
        let vocab = build_vocab(&corpus_of(&["a b"]), 8).unwrap();
        let ex = encode("a b", &vocab, 5, ArchKind::Encoder).unwrap();
        assert_eq!(decode(&ex.ids, &vocab).unwrap(), "a b");
        assert_eq!(decode(&[CLS_ID, SEP_ID, PAD_ID], &vocab).unwrap(), "");
    }

    #[test]
    fn decode_rejects_out_of_range_id() {
        let vocab = build_vocab(&corpus_of(&["a"]), 7).unwrap();
        assert!(matches!(
            decode(&[99], &vocab),
            Err(TokenizerError::IdOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn vocab_file_roundtrip_preserves_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = build_vocab(&corpus_of(&["a b c a"]), 10).unwrap();
        vocab.save(&path).unwrap();
        let loaded = TokenizerVocab::load(&path).unwrap();
        assert_eq!(vocab, loaded);
        assert_eq!(vocab.content_hash(), loaded.content_hash());
        assert_eq!(
            vocab.content_hash(),
            crate::util::fnv1a_64(&std::fs::read(&path).unwrap())
        );
    }

    #[test]
    fn vocab_file_rejects_tampered_specials() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "[PAD]\n[UNK]\nwrong\n[SEP]\n[BOS]\n[EOS]\na\n").unwrap();
        assert!(matches!(
            TokenizerVocab::load(&path),
            Err(TokenizerError::BadVocabFile(_))
        ));
    }

    #[test]
    fn tokens_only_in_test_split_encode_to_unk() {
        let train = corpus_of(&["merhaba fiyat", "merhaba destek"]);
        let vocab = build_vocab(&train, 20).unwrap();
        let ex = encode("merhaba kampanya", &vocab, 6, ArchKind::Encoder).unwrap();
        assert_eq!(ex.ids[1], vocab.id("merhaba").unwrap());
        assert_eq!(ex.ids[2], UNK_ID);
    }

    proptest! {
        #[test]
        fn encode_ids_in_range_and_mask_monotone(
            words in proptest::collection::vec("[a-e]{1,3}", 0..12),
            max_len in 3usize..16,
            decoder in any::<bool>(),
        ) {
            let vocab = build_vocab(&corpus_of(&["a b c d e"]), 11).unwrap();
            let arch = if decoder { ArchKind::Decoder } else { ArchKind::Encoder };
            let sentence = words.join(" ");
            let ex = encode(&sentence, &vocab, max_len, arch).unwrap();
            prop_assert_eq!(ex.ids.len(), max_len);
            prop_assert_eq!(ex.mask.len(), max_len);
            prop_assert!(ex.ids.iter().all(|&id| (id as usize) < vocab.size()));
            // Mask must be a prefix of 1s followed by 0s, with pads aligned.
            let ones = ex.mask.iter().take_while(|&&m| m == 1).count();
            prop_assert!(ex.mask[ones..].iter().all(|&m| m == 0));
            prop_assert_eq!(ex.last_real_pos, ones - 1);
            for (i, &m) in ex.mask.iter().enumerate() {
                if m == 0 {
                    prop_assert_eq!(ex.ids[i], PAD_ID);
                }
            }
        }

        #[test]
        fn decode_inverts_encode_for_in_vocab_sentences(
            words in proptest::collection::vec("[a-e]", 1..6),
            decoder in any::<bool>(),
        ) {
            let vocab = build_vocab(&corpus_of(&["a b c d e"]), 11).unwrap();
            let arch = if decoder { ArchKind::Decoder } else { ArchKind::Encoder };
            let sentence = words.join(" ");
            let ex = encode(&sentence, &vocab, 8, arch).unwrap();
            prop_assert_eq!(decode(&ex.ids, &vocab).unwrap(), sentence);
        }
    }
}
