//! Character-level document splitting and line-level refinement.
//!
//! A document is first cut into three pieces at two character positions,
//! then the cut is refined so that the span to be predicted covers whole
//! lines: the partial last line of the prefix (`l_prefix`) and the partial
//! first line of the suffix (`f_suffix`) are peeled off and become explicit
//! constraints, while `r_prefix`/`r_suffix` keep the remaining whole lines.
//!
//! All positions are indices over Unicode scalar values, never bytes, so a
//! split can never land inside a multi-byte character. Only `'\n'` is a
//! line terminator; `'\r'` stays attached to the preceding line content.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A raw text unit flowing through the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Three-piece character-level split of a document.
///
/// Invariant: `prefix + middle + suffix` equals the original text, with
/// `prefix == text[..a]`, `middle == text[a..b]`, `suffix == text[b..]`
/// in character positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSplit {
    pub prefix: String,
    pub middle: String,
    pub suffix: String,
    /// The sorted character positions `(a, b)` the split was taken at.
    pub split_points: (usize, usize),
}

impl CharSplit {
    /// Reassembles the original document text.
    pub fn reassemble(&self) -> String {
        let mut s =
            String::with_capacity(self.prefix.len() + self.middle.len() + self.suffix.len());
        s.push_str(&self.prefix);
        s.push_str(&self.middle);
        s.push_str(&self.suffix);
        s
    }
}

/// Five-section decomposition used by the start/end constrained format.
///
/// `r_prefix + l_prefix + middle + f_suffix + r_suffix` equals the original
/// text. `l_prefix` never contains a newline; `f_suffix` contains at most
/// one, and only as its final character.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedSplit {
    pub r_prefix: String,
    pub l_prefix: String,
    pub middle: String,
    pub f_suffix: String,
    pub r_suffix: String,
}

impl RefinedSplit {
    /// The span the model is trained to produce: `l_prefix + middle + f_suffix`.
    ///
    /// It begins at a line start and, whenever `r_suffix` is nonempty, ends
    /// with a newline.
    pub fn target(&self) -> String {
        let mut s =
            String::with_capacity(self.l_prefix.len() + self.middle.len() + self.f_suffix.len());
        s.push_str(&self.l_prefix);
        s.push_str(&self.middle);
        s.push_str(&self.f_suffix);
        s
    }
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("split points ({a}, {b}) out of range for text of {len} characters")]
    OutOfRange { a: usize, b: usize, len: usize },
}

/// Byte offset of the `char_idx`-th character (== `text.len()` at the end).
fn byte_at(text: &str, char_idx: usize) -> Option<usize> {
    if char_idx == 0 {
        return Some(0);
    }
    text.char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()))
        .nth(char_idx)
}

/// Splits `text` at character positions `a <= b`.
pub fn split_at(text: &str, a: usize, b: usize) -> Result<CharSplit, SplitError> {
    let len = text.chars().count();
    if a > b || b > len {
        return Err(SplitError::OutOfRange { a, b, len });
    }
    let ba = byte_at(text, a).expect("validated index");
    let bb = byte_at(text, b).expect("validated index");
    Ok(CharSplit {
        prefix: text[..ba].to_string(),
        middle: text[ba..bb].to_string(),
        suffix: text[bb..].to_string(),
        split_points: (a, b),
    })
}

/// Draws two independent uniform character positions over `[0, len]`, sorts
/// them, and splits there. An empty document yields three empty pieces; an
/// empty middle (`a == b`) is allowed.
pub fn split_random<R: Rng + ?Sized>(doc: &Document, rng: &mut R) -> CharSplit {
    let len = doc.text.chars().count();
    let x = rng.random_range(0..=len);
    let y = rng.random_range(0..=len);
    let (a, b) = if x <= y { (x, y) } else { (y, x) };
    split_at(&doc.text, a, b).expect("indices drawn in range")
}

/// Refines a three-piece split into the five-section decomposition.
///
/// The newline terminating the prefix's second-to-last line stays with
/// `r_prefix`; the newline terminating the suffix's first line stays with
/// `f_suffix`. This is what makes the target span whole lines.
pub fn refine(split: &CharSplit) -> RefinedSplit {
    let (r_prefix, l_prefix) = match split.prefix.rfind('\n') {
        Some(i) => {
            let cut = i + 1;
            (
                split.prefix[..cut].to_string(),
                split.prefix[cut..].to_string(),
            )
        }
        None => (String::new(), split.prefix.clone()),
    };
    let (f_suffix, r_suffix) = match split.suffix.find('\n') {
        Some(i) => {
            let cut = i + 1;
            (
                split.suffix[..cut].to_string(),
                split.suffix[cut..].to_string(),
            )
        }
        None => (split.suffix.clone(), String::new()),
    };
    RefinedSplit {
        r_prefix,
        l_prefix,
        middle: split.middle.clone(),
        f_suffix,
        r_suffix,
    }
}

/// Concatenates the five sections back into the original document text.
pub fn reconstruct(refined: &RefinedSplit) -> String {
    let mut s = String::with_capacity(
        refined.r_prefix.len()
            + refined.l_prefix.len()
            + refined.middle.len()
            + refined.f_suffix.len()
            + refined.r_suffix.len(),
    );
    s.push_str(&refined.r_prefix);
    s.push_str(&refined.l_prefix);
    s.push_str(&refined.middle);
    s.push_str(&refined.f_suffix);
    s.push_str(&refined.r_suffix);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sorts_draws_before_slicing() {
        // draws (3, 1) sort to (1, 3)
        let s = split_at("abcd", 1, 3).unwrap();
        assert_eq!(
            (s.prefix.as_str(), s.middle.as_str(), s.suffix.as_str()),
            ("a", "bc", "d")
        );
    }

    #[test]
    fn empty_document_yields_empty_pieces() {
        let doc = Document::new("d0", "");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = split_random(&doc, &mut rng);
        assert_eq!(
            (s.prefix.as_str(), s.middle.as_str(), s.suffix.as_str()),
            ("", "", "")
        );
        assert_eq!(s.split_points, (0, 0));
    }

    #[test]
    fn splits_short_sentence_at_fixed_points() {
        let s = split_at("A fine day.", 3, 7).unwrap();
        assert_eq!(s.prefix, "A f");
        assert_eq!(s.middle, "ine ");
        assert_eq!(s.suffix, "day.");
    }

    #[test]
    fn refine_assigns_newline_ownership() {
        let s = split_at("ab\ncd\nef\ngh\n", 4, 7).unwrap();
        assert_eq!(
            (s.prefix.as_str(), s.middle.as_str(), s.suffix.as_str()),
            ("ab\nc", "d\ne", "f\ngh\n")
        );
        let r = refine(&s);
        assert_eq!(r.r_prefix, "ab\n");
        assert_eq!(r.l_prefix, "c");
        assert_eq!(r.middle, "d\ne");
        assert_eq!(r.f_suffix, "f\n");
        assert_eq!(r.r_suffix, "gh\n");
    }

    #[test]
    fn refine_with_empty_boundary_pieces() {
        let s = CharSplit {
            prefix: String::new(),
            middle: "xyz".to_string(),
            suffix: String::new(),
            split_points: (0, 3),
        };
        let r = refine(&s);
        assert_eq!(r.r_prefix, "");
        assert_eq!(r.l_prefix, "");
        assert_eq!(r.middle, "xyz");
        assert_eq!(r.f_suffix, "");
        assert_eq!(r.r_suffix, "");
    }

    #[test]
    fn refine_without_newlines_keeps_whole_pieces() {
        let s = split_at("A fine day.", 3, 7).unwrap();
        let r = refine(&s);
        assert_eq!(r.r_prefix, "");
        assert_eq!(r.l_prefix, "A f");
        assert_eq!(r.f_suffix, "day.");
        assert_eq!(r.r_suffix, "");
    }

    #[test]
    fn reconstruct_is_concatenation() {
        let s = split_at("ab\ncd\nef\ngh\n", 4, 7).unwrap();
        assert_eq!(reconstruct(&refine(&s)), "ab\ncd\nef\ngh\n");
        let empty = refine(&split_at("", 0, 0).unwrap());
        assert_eq!(reconstruct(&empty), "");
        let day = refine(&split_at("A fine day.", 3, 7).unwrap());
        assert_eq!(reconstruct(&day), "A fine day.");
    }

    #[test]
    fn crlf_is_two_characters_and_r_stays_with_line() {
        let s = split_at("ab\r\ncd", 4, 5).unwrap();
        assert_eq!(s.prefix, "ab\r\n");
        let r = refine(&s);
        // '\r' belongs to the terminated first line, inside r_prefix
        assert_eq!(r.r_prefix, "ab\r\n");
        assert_eq!(r.l_prefix, "");
    }

    #[test]
    fn split_indices_are_character_positions() {
        // 2 scalar values before the split even though 'é' is 2 bytes
        let s = split_at("éa日b", 2, 3).unwrap();
        assert_eq!(s.prefix, "éa");
        assert_eq!(s.middle, "日");
        assert_eq!(s.suffix, "b");
    }

    #[test]
    fn out_of_range_split_is_rejected() {
        assert!(split_at("abc", 2, 1).is_err());
        assert!(split_at("abc", 0, 4).is_err());
    }

    fn arb_doc() -> impl Strategy<Value = String> {
        // mixes ASCII, CRLF and multi-byte characters
        proptest::collection::vec(
            prop_oneof![
                proptest::char::range('a', 'z').prop_map(|c| c.to_string()),
                Just("\n".to_string()),
                Just("\r\n".to_string()),
                Just("é".to_string()),
                Just("日".to_string()),
                Just("🦀".to_string()),
                Just(" ".to_string()),
            ],
            0..64,
        )
        .prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn round_trips_any_document(text in arb_doc(), seed in any::<u64>()) {
            let doc = Document::new("p", text.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let split = split_random(&doc, &mut rng);
            prop_assert_eq!(split.reassemble(), text.clone());
            let refined = refine(&split);
            prop_assert_eq!(reconstruct(&refined), text);
        }

        #[test]
        fn newline_ownership_holds(text in arb_doc(), seed in any::<u64>()) {
            let doc = Document::new("p", text);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let refined = refine(&split_random(&doc, &mut rng));
            prop_assert!(!refined.l_prefix.contains('\n'));
            prop_assert!(refined.r_prefix.is_empty() || refined.r_prefix.ends_with('\n'));
            // f_suffix holds a newline only as its final character
            if let Some(i) = refined.f_suffix.find('\n') {
                prop_assert_eq!(i + 1, refined.f_suffix.len());
            } else {
                prop_assert!(refined.r_suffix.is_empty());
            }
            if !refined.r_suffix.is_empty() {
                prop_assert!(refined.f_suffix.ends_with('\n'));
            }
        }

        #[test]
        fn document_text_survives_serialization(text in arb_doc()) {
            let doc = Document::new("p", text);
            let json = serde_json::to_string(&doc).unwrap();
            let back: Document = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back.text.as_bytes(), doc.text.as_bytes());
        }
    }
}
