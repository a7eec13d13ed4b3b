//! Tokenization-aware toolkit for fill-in-the-middle training data.
//!
//! The toolkit covers the full loop around infilling with start/end line
//! constraints: character-level splitting with line-level refinement
//! ([`text_split`]), a deterministic reference tokenizer with reserved
//! markers ([`tok`]), every studied sample layout ([`formats`]), a
//! deterministic corpus transformation pipeline ([`pipeline`]), infilling
//! benchmark generation ([`mod@bench`]), a post-checked inference and
//! evaluation harness ([`infer`]), trie-based token healing ([`heal`]),
//! and a small numerical lab for the conflicting-label effect
//! ([`labdemo`]).
//!
//! ```
//! use fimse_core::formats::{assemble_training, FormatMode};
//! use fimse_core::text_split::{refine, split_at};
//! use fimse_core::tok::{parse_vocabulary, Scheme, TokenizerHandle};
//!
//! let vocab = parse_vocabulary(
//!     r#"{
//!         "tokens": ["a", "b", "c", "d", "\n"],
//!         "special": {"PRE": 5, "SUF": 6, "START": 7, "END": 8, "MID": 9, "EOT": 10}
//!     }"#,
//! )?;
//! let tokenizer = TokenizerHandle::new(vocab, Scheme::ReferenceSubword);
//!
//! // cut "ab\ncd\n" mid-line and refine to the five-section view
//! let refined = refine(&split_at("ab\ncd\n", 4, 5)?);
//! assert_eq!(refined.l_prefix, "c");
//! assert_eq!(refined.f_suffix, "\n");
//!
//! let sample = assemble_training(&refined, FormatMode::FimsePsm, &tokenizer, false)?;
//! // loss is confined to the constrained target plus the end marker
//! assert_eq!(sample.ids.len(), sample.loss_mask.len());
//! assert_eq!(sample.trainable_tokens(), 4);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod bench;
pub mod formats;
pub mod heal;
pub mod infer;
pub mod labdemo;
pub mod pipeline;
pub mod text_split;
pub mod tok;

pub use formats::{FormatMode, TrainingSample};
pub use text_split::{CharSplit, Document, RefinedSplit};
pub use tok::{Scheme, SpecialToken, TokenId, TokenizerHandle, Vocabulary};
