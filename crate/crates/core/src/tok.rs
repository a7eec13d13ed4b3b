//! Tokenizer abstraction with a special-token registry and a loadable
//! vocabulary file.
//!
//! Two deterministic schemes are provided:
//!
//! * `ReferenceSubword` — greedy longest match over the vocabulary's token
//!   strings, with `'\n'` acting as a hard match barrier so no token ever
//!   spans a line boundary. This is the scheme that exhibits sub-token
//!   boundary artifacts while keeping line-start encodings independent of
//!   the text that precedes them.
//! * `WhitespaceDebug` — splits on single spaces (the space is implied
//!   between consecutive tokens on decode). Readable in tests; not used
//!   where sub-token behavior matters.
//!
//! Special tokens are registered out of band and never produced by encoding
//! ordinary text; they are concatenated as ids by the format assembly layer.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The six reserved markers used by the sample layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpecialToken {
    Pre,
    Suf,
    Start,
    End,
    Mid,
    Eot,
}

impl SpecialToken {
    pub const ALL: [SpecialToken; 6] = [
        SpecialToken::Pre,
        SpecialToken::Suf,
        SpecialToken::Start,
        SpecialToken::End,
        SpecialToken::Mid,
        SpecialToken::Eot,
    ];

    /// Name used in vocabulary files.
    pub fn name(self) -> &'static str {
        match self {
            SpecialToken::Pre => "PRE",
            SpecialToken::Suf => "SUF",
            SpecialToken::Start => "START",
            SpecialToken::End => "END",
            SpecialToken::Mid => "MID",
            SpecialToken::Eot => "EOT",
        }
    }

    /// Marker string the token decodes to.
    pub fn marker(self) -> &'static str {
        match self {
            SpecialToken::Pre => "<PRE>",
            SpecialToken::Suf => "<SUF>",
            SpecialToken::Start => "<START>",
            SpecialToken::End => "<END>",
            SpecialToken::Mid => "<MID>",
            SpecialToken::Eot => "<EOT>",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        SpecialToken::ALL.iter().copied().find(|s| s.name() == name)
    }
}

#[derive(Debug, Error)]
pub enum TokError {
    #[error("failed to read vocabulary file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse vocabulary file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid vocabulary: {0}")]
    Validation(String),
    #[error("text embeds reserved special-token marker {marker:?}")]
    SpecialMarkerInText { marker: String },
    #[error("no vocabulary token matches text at character {char_pos}: {snippet:?}")]
    Unencodable { char_pos: usize, snippet: String },
    #[error("token id {0} is out of range")]
    InvalidTokenId(TokenId),
}

/// On-disk shape of a vocabulary file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    merges: Option<Vec<(String, String)>>,
    special: BTreeMap<String, u32>,
}

/// Validated token inventory: ordinary token strings, optional merge pairs,
/// and the six reserved special-token ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
    special: BTreeMap<SpecialToken, TokenId>,
}

impl Vocabulary {
    /// Builds and validates a vocabulary. Special ids must all be distinct
    /// and at least `tokens.len()`, so they can never collide with ordinary
    /// ids.
    pub fn new(
        tokens: Vec<String>,
        merges: Vec<(String, String)>,
        special: BTreeMap<SpecialToken, TokenId>,
    ) -> Result<Self, TokError> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if let Some(prev) = seen.insert(t.as_str(), i) {
                return Err(TokError::Validation(format!(
                    "duplicate token {t:?} at indices {prev} and {i}"
                )));
            }
            if SpecialToken::ALL.iter().any(|s| s.marker() == t) {
                return Err(TokError::Validation(format!(
                    "ordinary token {t:?} collides with a special-token marker"
                )));
            }
        }
        for s in SpecialToken::ALL {
            match special.get(&s) {
                None => {
                    return Err(TokError::Validation(format!(
                        "special token {} is not registered",
                        s.name()
                    )))
                }
                Some(id) if (id.0 as usize) < tokens.len() => {
                    return Err(TokError::Validation(format!(
                        "special token {} id {} collides with ordinary ids (must be >= {})",
                        s.name(),
                        id,
                        tokens.len()
                    )))
                }
                Some(_) => {}
            }
        }
        let mut ids: Vec<TokenId> = special.values().copied().collect();
        ids.sort();
        ids.dedup();
        if ids.len() != SpecialToken::ALL.len() {
            return Err(TokError::Validation(
                "special-token ids are not distinct".to_string(),
            ));
        }
        for (l, r) in &merges {
            let joined = format!("{l}{r}");
            if !seen.contains_key(joined.as_str()) {
                return Err(TokError::Validation(format!(
                    "merge ({l:?}, {r:?}) produces {joined:?}, which is not in the token list"
                )));
            }
        }
        Ok(Self {
            tokens,
            merges,
            special,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_str(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.0 as usize).map(|s| s.as_str())
    }

    pub fn token_id(&self, s: &str) -> Option<TokenId> {
        self.tokens
            .iter()
            .position(|t| t == s)
            .map(|i| TokenId(i as u32))
    }

    /// Ordinary tokens in id order.
    pub fn tokens(&self) -> impl Iterator<Item = (TokenId, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (TokenId(i as u32), t.as_str()))
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn special_id(&self, s: SpecialToken) -> TokenId {
        self.special[&s]
    }

    pub fn special_of(&self, id: TokenId) -> Option<SpecialToken> {
        self.special
            .iter()
            .find(|(_, v)| **v == id)
            .map(|(k, _)| *k)
    }

    pub fn specials(&self) -> &BTreeMap<SpecialToken, TokenId> {
        &self.special
    }

    /// Serializes to the vocabulary file format.
    pub fn to_json(&self) -> String {
        let file = VocabFile {
            tokens: self.tokens.clone(),
            merges: if self.merges.is_empty() {
                None
            } else {
                Some(self.merges.clone())
            },
            special: self
                .special
                .iter()
                .map(|(k, v)| (k.name().to_string(), v.0))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }
}

/// Loads and validates a vocabulary file (JSON with `tokens`, optional
/// `merges`, and the six-name `special` map).
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary, TokError> {
    let raw = std::fs::read_to_string(path)?;
    parse_vocabulary(&raw)
}

/// Parses the vocabulary file format from a string.
pub fn parse_vocabulary(raw: &str) -> Result<Vocabulary, TokError> {
    let file: VocabFile = serde_json::from_str(raw)?;
    let mut special = BTreeMap::new();
    for (name, id) in &file.special {
        let s = SpecialToken::from_name(name)
            .ok_or_else(|| TokError::Validation(format!("unknown special-token name {name:?}")))?;
        special.insert(s, TokenId(*id));
    }
    Vocabulary::new(file.tokens, file.merges.unwrap_or_default(), special)
}

/// Encoding scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ReferenceSubword,
    WhitespaceDebug,
}

/// Immutable tokenizer: a vocabulary plus a scheme. Safe to share across
/// threads; encode and decode are pure functions of `(vocabulary, input)`.
#[derive(Debug, Clone)]
pub struct TokenizerHandle {
    vocab: Vocabulary,
    scheme: Scheme,
    by_string: HashMap<String, TokenId>,
    max_token_chars: usize,
}

impl TokenizerHandle {
    pub fn new(vocab: Vocabulary, scheme: Scheme) -> Self {
        let by_string: HashMap<String, TokenId> =
            vocab.tokens().map(|(id, s)| (s.to_string(), id)).collect();
        let max_token_chars = vocab
            .tokens()
            .map(|(_, s)| s.chars().count())
            .max()
            .unwrap_or(0);
        Self {
            vocab,
            scheme,
            by_string,
            max_token_chars,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn special_id(&self, s: SpecialToken) -> TokenId {
        self.vocab.special_id(s)
    }

    fn reject_markers(&self, text: &str) -> Result<(), TokError> {
        for s in SpecialToken::ALL {
            if text.contains(s.marker()) {
                return Err(TokError::SpecialMarkerInText {
                    marker: s.marker().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Encodes ordinary text. Errors if the text embeds a reserved marker
    /// string or contains a stretch no vocabulary token covers.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokError> {
        self.reject_markers(text)?;
        if text.is_empty() {
            return Ok(Vec::new());
        }
        match self.scheme {
            Scheme::ReferenceSubword => self.encode_subword(text),
            Scheme::WhitespaceDebug => self.encode_whitespace(text),
        }
    }

    fn encode_subword(&self, text: &str) -> Result<Vec<TokenId>, TokError> {
        let mut out = Vec::new();
        let mut chars_before = 0usize;
        // '\n' is a merge barrier: matching never continues past a newline.
        for segment in text.split_inclusive('\n') {
            let bounds: Vec<usize> = segment
                .char_indices()
                .map(|(b, _)| b)
                .chain(std::iter::once(segment.len()))
                .collect();
            let n_chars = bounds.len() - 1;
            let mut i = 0usize;
            while i < n_chars {
                let max = self.max_token_chars.min(n_chars - i);
                let mut matched = None;
                for l in (1..=max).rev() {
                    let cand = &segment[bounds[i]..bounds[i + l]];
                    if let Some(&id) = self.by_string.get(cand) {
                        matched = Some((id, l));
                        break;
                    }
                }
                match matched {
                    Some((id, l)) => {
                        out.push(id);
                        i += l;
                    }
                    None => {
                        let tail: String = segment[bounds[i]..].chars().take(8).collect();
                        return Err(TokError::Unencodable {
                            char_pos: chars_before + i,
                            snippet: tail,
                        });
                    }
                }
            }
            chars_before += n_chars;
        }
        Ok(out)
    }

    fn encode_whitespace(&self, text: &str) -> Result<Vec<TokenId>, TokError> {
        let mut out = Vec::new();
        let mut char_pos = 0usize;
        for seg in text.split(' ') {
            match self.by_string.get(seg) {
                Some(&id) => out.push(id),
                None => {
                    return Err(TokError::Unencodable {
                        char_pos,
                        snippet: seg.chars().take(8).collect(),
                    })
                }
            }
            char_pos += seg.chars().count() + 1;
        }
        Ok(out)
    }

    /// Decodes ids back to text. Special ids decode to their marker strings.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokError> {
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            if let Some(s) = self.vocab.token_str(id) {
                parts.push(s);
            } else if let Some(sp) = self.vocab.special_of(id) {
                parts.push(sp.marker());
            } else {
                return Err(TokError::InvalidTokenId(id));
            }
        }
        Ok(match self.scheme {
            Scheme::ReferenceSubword => parts.concat(),
            Scheme::WhitespaceDebug => parts.join(" "),
        })
    }
}

#[cfg(test)]
pub(crate) mod test_vocab {
    use super::*;

    /// Character-level base plus a few multi-character tokens, enough to
    /// exhibit boundary artifacts in tests.
    pub fn subword() -> Vocabulary {
        let mut tokens: Vec<String> = Vec::new();
        for c in ' '..='~' {
            tokens.push(c.to_string());
        }
        for c in ['\n', '\t', '\r', 'é', 'ü', '日', '本', '🦀'] {
            tokens.push(c.to_string());
        }
        for t in [
            " f", " fi", "ine", "ine ", "ne ", "day", "day.", "def", " so", " sort", " s", "arr",
            "add", "deli", "delim", "meter", "ter",
        ] {
            tokens.push(t.to_string());
        }
        let merges = vec![
            (" s".to_string(), "o".to_string()),
            (" so".to_string(), "rt".to_string()),
            ("i".to_string(), "ne".to_string()),
            ("d".to_string(), "ay".to_string()),
            ("day".to_string(), ".".to_string()),
        ];
        let base = tokens.len() as u32;
        let special = SpecialToken::ALL
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, TokenId(base + i as u32)))
            .collect();
        Vocabulary::new(tokens, merges, special).expect("fixture vocabulary is valid")
    }

    pub fn subword_tokenizer() -> TokenizerHandle {
        TokenizerHandle::new(subword(), Scheme::ReferenceSubword)
    }

    /// Small word-level vocabulary for readable tests.
    pub fn whitespace() -> Vocabulary {
        let tokens: Vec<String> = ["", "A", "fine", "day.", "hello", "world", "foo", "bar"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let base = tokens.len() as u32;
        let special = SpecialToken::ALL
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, TokenId(base + i as u32)))
            .collect();
        Vocabulary::new(tokens, Vec::new(), special).expect("fixture vocabulary is valid")
    }

    pub fn whitespace_tokenizer() -> TokenizerHandle {
        TokenizerHandle::new(whitespace(), Scheme::WhitespaceDebug)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture_path(name: &str) -> String {
        format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
    }

    #[test]
    fn whitespace_scheme_splits_words() {
        let t = test_vocab::whitespace_tokenizer();
        let ids = t.encode("A fine day.").unwrap();
        let words: Vec<&str> = ids
            .iter()
            .map(|&id| t.vocab().token_str(id).unwrap())
            .collect();
        assert_eq!(words, vec!["A", "fine", "day."]);
        assert_eq!(t.decode(&ids).unwrap(), "A fine day.");
    }

    #[test]
    fn empty_input_encodes_to_nothing() {
        for t in [
            test_vocab::whitespace_tokenizer(),
            test_vocab::subword_tokenizer(),
        ] {
            assert_eq!(t.encode("").unwrap(), Vec::<TokenId>::new());
            assert_eq!(t.decode(&[]).unwrap(), "");
        }
    }

    #[test]
    fn subword_prefers_longest_match() {
        let t = test_vocab::subword_tokenizer();
        let ids = t.encode("def so").unwrap();
        let toks: Vec<&str> = ids
            .iter()
            .map(|&id| t.vocab().token_str(id).unwrap())
            .collect();
        assert_eq!(toks, vec!["def", " so"]);
    }

    #[test]
    fn subword_round_trips_newlines() {
        let t = test_vocab::subword_tokenizer();
        let ids = t.encode("ab\ncd").unwrap();
        assert_eq!(t.decode(&ids).unwrap(), "ab\ncd");
    }

    #[test]
    fn decode_concatenates_token_strings() {
        let t = test_vocab::subword_tokenizer();
        let ids: Vec<TokenId> = ["def", " sort", "(", "arr", ")"]
            .iter()
            .map(|s| t.vocab().token_id(s).unwrap())
            .collect();
        assert_eq!(t.decode(&ids).unwrap(), "def sort(arr)");
    }

    #[test]
    fn marker_text_is_rejected() {
        let t = test_vocab::subword_tokenizer();
        let err = t.encode("x<MID>y").unwrap_err();
        assert!(matches!(err, TokError::SpecialMarkerInText { .. }));
    }

    #[test]
    fn unknown_id_is_rejected() {
        let t = test_vocab::whitespace_tokenizer();
        assert!(matches!(
            t.decode(&[TokenId(9999)]),
            Err(TokError::InvalidTokenId(_))
        ));
    }

    #[test]
    fn uncovered_text_is_unencodable() {
        let t = test_vocab::whitespace_tokenizer();
        assert!(matches!(
            t.encode("A strange day."),
            Err(TokError::Unencodable { .. })
        ));
    }

    #[test]
    fn specials_decode_to_markers() {
        let t = test_vocab::subword_tokenizer();
        let mid = t.special_id(SpecialToken::Mid);
        assert_eq!(t.decode(&[mid]).unwrap(), "<MID>");
    }

    #[test]
    fn shared_handle_encodes_from_many_threads() {
        let t = std::sync::Arc::new(test_vocab::subword_tokenizer());
        let texts: Vec<String> = (0..64)
            .map(|i| format!("fn f{i}(x):\n    x + {i}\n"))
            .collect();
        let expected: Vec<Vec<TokenId>> = texts.iter().map(|s| t.encode(s).unwrap()).collect();
        let handles: Vec<_> = (0..8)
            .map(|w| {
                let t = t.clone();
                let texts = texts.clone();
                std::thread::spawn(move || {
                    texts
                        .iter()
                        .skip(w)
                        .map(|s| t.encode(s).unwrap())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for (w, h) in handles.into_iter().enumerate() {
            assert_eq!(h.join().unwrap(), expected[w..]);
        }
    }

    #[test]
    fn bundled_vocab_file_registers_six_specials() {
        let v = load_vocabulary(fixture_path("subword_vocab.json")).unwrap();
        assert_eq!(v.specials().len(), 6);
        for s in SpecialToken::ALL {
            assert!(v.special_id(s).0 as usize >= v.len());
        }
    }

    #[test]
    fn duplicate_token_fails_validation() {
        let raw = r#"{"tokens":["a","b","a"],"special":{"PRE":3,"SUF":4,"START":5,"END":6,"MID":7,"EOT":8}}"#;
        let err = parse_vocabulary(raw).unwrap_err();
        assert!(err.to_string().contains("duplicate token"), "{err}");
    }

    #[test]
    fn merges_are_optional() {
        let v = load_vocabulary(fixture_path("ws_vocab.json")).unwrap();
        assert!(v.merges().is_empty());
    }

    #[test]
    fn vocabulary_round_trips_through_the_file_format() {
        let v = test_vocab::subword();
        let again = parse_vocabulary(&v.to_json()).unwrap();
        assert_eq!(again.len(), v.len());
        assert_eq!(again.merges(), v.merges());
        assert_eq!(again.specials(), v.specials());
        for (id, s) in v.tokens() {
            assert_eq!(again.token_str(id), Some(s));
        }
    }

    #[test]
    fn special_id_collision_fails_validation() {
        let raw =
            r#"{"tokens":["a","b"],"special":{"PRE":1,"SUF":4,"START":5,"END":6,"MID":7,"EOT":8}}"#;
        assert!(parse_vocabulary(raw).is_err());
    }

    #[test]
    fn merge_without_joined_token_fails_validation() {
        let raw = r#"{"tokens":["a","b"],"merges":[["a","b"]],"special":{"PRE":2,"SUF":3,"START":4,"END":5,"MID":6,"EOT":7}}"#;
        assert!(parse_vocabulary(raw).is_err());
    }

    fn covered_text() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                proptest::char::range('a', 'z').prop_map(|c| c.to_string()),
                proptest::char::range('A', 'Z').prop_map(|c| c.to_string()),
                proptest::char::range('0', '9').prop_map(|c| c.to_string()),
                Just(" ".to_string()),
                Just("\n".to_string()),
                Just(".".to_string()),
                Just("(".to_string()),
                Just("日".to_string()),
                Just("🦀".to_string()),
            ],
            0..80,
        )
        .prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn subword_encode_is_lossless(text in covered_text()) {
            let t = test_vocab::subword_tokenizer();
            let ids = t.encode(&text).unwrap();
            prop_assert_eq!(t.decode(&ids).unwrap(), text);
        }

        #[test]
        fn whitespace_encode_is_lossless(words in proptest::collection::vec(
            prop_oneof![
                Just("A"), Just("fine"), Just("day."), Just("hello"), Just("world"), Just(""),
            ],
            0..12,
        )) {
            let text = words.join(" ");
            let t = test_vocab::whitespace_tokenizer();
            let ids = t.encode(&text).unwrap();
            prop_assert_eq!(t.decode(&ids).unwrap(), text);
        }

        #[test]
        fn line_start_encoding_is_context_free(
            head in covered_text(),
            tail in covered_text(),
        ) {
            // a token never spans '\n', so encoding after a line break is
            // independent of what came before it
            let t = test_vocab::subword_tokenizer();
            let joined = format!("{head}\n{tail}");
            let mut expect = t.encode(&format!("{head}\n")).unwrap();
            expect.extend(t.encode(&tail).unwrap());
            prop_assert_eq!(t.encode(&joined).unwrap(), expect);
        }
    }
}
