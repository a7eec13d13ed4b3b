//! Token-level sample layouts for every studied training format.
//!
//! A sample is assembled by encoding each text section individually and
//! concatenating the encodings with reserved special-token ids, so markers
//! can never be cut or merged by the tokenizer. The one deliberate
//! exception: text that sits adjacent in a layout with no marker between
//! (such as the constrained target `l_prefix + middle + f_suffix`, or the
//! joined `prefix + middle` of the variant SPM format) is encoded as a
//! single string, which is exactly what removes sub-token boundaries at
//! the seams.
//!
//! Layouts, with `|` marking where the inference prompt ends:
//!
//! ```text
//! FIM_PSM         <PRE> pre <SUF> suf <MID> | mid <EOT>
//! FIM_SPM         <SUF> suf <PRE> pre <MID> | mid <EOT>
//! FIM_SPM_VARIANT <PRE> <SUF> suf <MID> | pre+mid <EOT>
//! FIMSE_PSM       <PRE> R-Pre <SUF> R-Suf <START> L-Pre <END> F-Suf <MID> | L-Pre+Mid+F-Suf <EOT>
//! FIMSE_SPM_V1    <SUF> R-Suf <PRE> R-Pre <START> L-Pre <END> F-Suf <MID> | L-Pre+Mid+F-Suf <EOT>
//! FIMSE_SPM_V2    <PRE> <SUF> R-Suf <START> L-Pre <END> F-Suf <MID> | R-Pre+L-Pre+Mid+F-Suf <EOT>
//! FIMSE_SPM_V3    <PRE> <SUF> R-Suf <MID> R-Pre | <START> L-Pre+Mid <END> F-Suf <EOT>
//! PLAIN_L2R       | text <EOT>
//! ```

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text_split::RefinedSplit;
use crate::tok::{SpecialToken, TokError, TokenId, TokenizerHandle};

/// Sample layout selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FormatMode {
    #[serde(rename = "FIM_PSM")]
    FimPsm,
    #[serde(rename = "FIM_SPM")]
    FimSpm,
    #[serde(rename = "FIM_SPM_VARIANT")]
    FimSpmVariant,
    #[serde(rename = "FIMSE_PSM")]
    FimsePsm,
    #[serde(rename = "FIMSE_SPM_V1")]
    FimseSpmV1,
    #[serde(rename = "FIMSE_SPM_V2")]
    FimseSpmV2,
    #[serde(rename = "FIMSE_SPM_V3")]
    FimseSpmV3,
    #[serde(rename = "PLAIN_L2R")]
    PlainL2r,
}

impl FormatMode {
    pub const ALL: [FormatMode; 8] = [
        FormatMode::FimPsm,
        FormatMode::FimSpm,
        FormatMode::FimSpmVariant,
        FormatMode::FimsePsm,
        FormatMode::FimseSpmV1,
        FormatMode::FimseSpmV2,
        FormatMode::FimseSpmV3,
        FormatMode::PlainL2r,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FormatMode::FimPsm => "FIM_PSM",
            FormatMode::FimSpm => "FIM_SPM",
            FormatMode::FimSpmVariant => "FIM_SPM_VARIANT",
            FormatMode::FimsePsm => "FIMSE_PSM",
            FormatMode::FimseSpmV1 => "FIMSE_SPM_V1",
            FormatMode::FimseSpmV2 => "FIMSE_SPM_V2",
            FormatMode::FimseSpmV3 => "FIMSE_SPM_V3",
            FormatMode::PlainL2r => "PLAIN_L2R",
        }
    }

    /// Modes that carry the start/end line constraints in the prompt.
    pub fn is_constrained(self) -> bool {
        matches!(
            self,
            FormatMode::FimsePsm
                | FormatMode::FimseSpmV1
                | FormatMode::FimseSpmV2
                | FormatMode::FimseSpmV3
        )
    }
}

impl std::fmt::Display for FormatMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FormatMode {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FormatMode::ALL
            .iter()
            .copied()
            .find(|m| m.tag() == s)
            .ok_or_else(|| FormatError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("unknown format mode {0:?}")]
    UnknownMode(String),
    #[error(transparent)]
    Tok(#[from] TokError),
}

/// Split points in character positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPoints {
    pub a: usize,
    pub b: usize,
}

/// Provenance carried along with a sample.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub doc_id: String,
    pub split: Option<SplitPoints>,
    pub seed: u64,
}

/// A token-id sequence with a per-position loss mask, ready for a trainer.
///
/// `loss_mask[i] == 1` exactly on the trainable region (the span after the
/// prompt) plus the closing `<EOT>`; with the LF mask enabled, positions
/// whose decoded characters fall inside `l_prefix` or `f_suffix` are
/// cleared back to 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub ids: Vec<TokenId>,
    pub loss_mask: Vec<u8>,
    pub mode: FormatMode,
    pub meta: SampleMeta,
}

impl TrainingSample {
    pub fn with_meta(mut self, meta: SampleMeta) -> Self {
        self.meta = meta;
        self
    }

    /// Number of loss-active positions.
    pub fn trainable_tokens(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// One text stretch of a layout; `mask_spans` are character ranges to clear
/// when the LF loss mask is requested.
struct TextSeg {
    text: String,
    mask_spans: Vec<(usize, usize)>,
}

impl TextSeg {
    fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            mask_spans: Vec::new(),
        }
    }

    fn spanned(text: impl Into<String>, mask_spans: Vec<(usize, usize)>) -> Self {
        Self {
            text: text.into(),
            mask_spans,
        }
    }
}

enum Seg {
    Marker(SpecialToken),
    Text(TextSeg),
}

struct Layout {
    prompt: Vec<Seg>,
    trainable: Vec<Seg>,
}

fn lf_target(r: &RefinedSplit) -> TextSeg {
    let l = r.l_prefix.chars().count();
    let m = r.middle.chars().count();
    let f = r.f_suffix.chars().count();
    TextSeg::spanned(r.target(), vec![(0, l), (l + m, l + m + f)])
}

fn layout(mode: FormatMode, r: &RefinedSplit) -> Layout {
    use FormatMode::*;
    use Seg::{Marker, Text};
    use SpecialToken::{End, Mid, Pre, Start, Suf};

    let prefix = || format!("{}{}", r.r_prefix, r.l_prefix);
    let suffix = || format!("{}{}", r.f_suffix, r.r_suffix);

    match mode {
        FimPsm => Layout {
            prompt: vec![
                Marker(Pre),
                Text(TextSeg::plain(prefix())),
                Marker(Suf),
                Text(TextSeg::plain(suffix())),
                Marker(Mid),
            ],
            trainable: vec![Text(TextSeg::plain(r.middle.clone()))],
        },
        FimSpm => Layout {
            prompt: vec![
                Marker(Suf),
                Text(TextSeg::plain(suffix())),
                Marker(Pre),
                Text(TextSeg::plain(prefix())),
                Marker(Mid),
            ],
            trainable: vec![Text(TextSeg::plain(r.middle.clone()))],
        },
        FimSpmVariant => Layout {
            prompt: vec![
                Marker(Pre),
                Marker(Suf),
                Text(TextSeg::plain(suffix())),
                Marker(Mid),
            ],
            trainable: vec![Text(TextSeg::plain(format!("{}{}", prefix(), r.middle)))],
        },
        FimsePsm => Layout {
            prompt: vec![
                Marker(Pre),
                Text(TextSeg::plain(r.r_prefix.clone())),
                Marker(Suf),
                Text(TextSeg::plain(r.r_suffix.clone())),
                Marker(Start),
                Text(TextSeg::plain(r.l_prefix.clone())),
                Marker(End),
                Text(TextSeg::plain(r.f_suffix.clone())),
                Marker(Mid),
            ],
            trainable: vec![Text(lf_target(r))],
        },
        FimseSpmV1 => Layout {
            prompt: vec![
                Marker(Suf),
                Text(TextSeg::plain(r.r_suffix.clone())),
                Marker(Pre),
                Text(TextSeg::plain(r.r_prefix.clone())),
                Marker(Start),
                Text(TextSeg::plain(r.l_prefix.clone())),
                Marker(End),
                Text(TextSeg::plain(r.f_suffix.clone())),
                Marker(Mid),
            ],
            trainable: vec![Text(lf_target(r))],
        },
        FimseSpmV2 => {
            // No separator between R-Prefix and the constrained target, so
            // the whole stretch after <MID> is one jointly encoded string.
            let rp = r.r_prefix.chars().count();
            let l = r.l_prefix.chars().count();
            let m = r.middle.chars().count();
            let f = r.f_suffix.chars().count();
            let joined = format!("{}{}", r.r_prefix, r.target());
            Layout {
                prompt: vec![
                    Marker(Pre),
                    Marker(Suf),
                    Text(TextSeg::plain(r.r_suffix.clone())),
                    Marker(Start),
                    Text(TextSeg::plain(r.l_prefix.clone())),
                    Marker(End),
                    Text(TextSeg::plain(r.f_suffix.clone())),
                    Marker(Mid),
                ],
                trainable: vec![Text(TextSeg::spanned(
                    joined,
                    vec![(rp, rp + l), (rp + l + m, rp + l + m + f)],
                ))],
            }
        }
        FimseSpmV3 => {
            // Constraints come after the prefix: the prompt runs through the
            // encoded R-Prefix and the trainable region opens with <START>.
            let l = r.l_prefix.chars().count();
            let lm = format!("{}{}", r.l_prefix, r.middle);
            let f_chars = r.f_suffix.chars().count();
            Layout {
                prompt: vec![
                    Marker(Pre),
                    Marker(Suf),
                    Text(TextSeg::plain(r.r_suffix.clone())),
                    Marker(Mid),
                    Text(TextSeg::plain(r.r_prefix.clone())),
                ],
                trainable: vec![
                    Marker(Start),
                    Text(TextSeg::spanned(lm, vec![(0, l)])),
                    Marker(End),
                    Text(TextSeg::spanned(r.f_suffix.clone(), vec![(0, f_chars)])),
                ],
            }
        }
        PlainL2r => Layout {
            prompt: Vec::new(),
            trainable: vec![Text(TextSeg::plain(crate::text_split::reconstruct(r)))],
        },
    }
}

fn encode_seg(
    seg: &Seg,
    t: &TokenizerHandle,
    active: u8,
    mask_lf_loss: bool,
    ids: &mut Vec<TokenId>,
    mask: &mut Vec<u8>,
) -> Result<(), FormatError> {
    match seg {
        Seg::Marker(s) => {
            ids.push(t.special_id(*s));
            mask.push(active);
        }
        Seg::Text(ts) => {
            let toks = t.encode(&ts.text)?;
            if active == 1 && mask_lf_loss && !ts.mask_spans.is_empty() {
                let mut offset = 0usize;
                for &id in &toks {
                    let len = t
                        .vocab()
                        .token_str(id)
                        .map(|s| s.chars().count())
                        .unwrap_or(0);
                    let overlaps = ts
                        .mask_spans
                        .iter()
                        .any(|&(s, e)| offset < e && offset + len > s);
                    ids.push(id);
                    mask.push(if overlaps { 0 } else { 1 });
                    offset += len;
                }
            } else {
                for &id in &toks {
                    ids.push(id);
                    mask.push(active);
                }
            }
        }
    }
    Ok(())
}

/// Assembles a full training sample for `mode`.
///
/// With `mask_lf_loss` set (meaningful for the constrained modes), trainable
/// tokens whose decoded characters fall inside `l_prefix` or `f_suffix` are
/// masked out; `<EOT>` always stays loss-active.
pub fn assemble_training(
    refined: &RefinedSplit,
    mode: FormatMode,
    t: &TokenizerHandle,
    mask_lf_loss: bool,
) -> Result<TrainingSample, FormatError> {
    let layout = layout(mode, refined);
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    for seg in &layout.prompt {
        encode_seg(seg, t, 0, false, &mut ids, &mut mask)?;
    }
    for seg in &layout.trainable {
        encode_seg(seg, t, 1, mask_lf_loss, &mut ids, &mut mask)?;
    }
    ids.push(t.special_id(SpecialToken::Eot));
    mask.push(1);
    Ok(TrainingSample {
        ids,
        loss_mask: mask,
        mode,
        meta: SampleMeta::default(),
    })
}

/// Assembles the inference prompt for `mode`: the training layout truncated
/// where the trainable region begins. The `middle` field of `refined` is
/// ignored. For `PLAIN_L2R` the prompt is the bare encoded prefix text.
pub fn assemble_inference_prompt(
    refined: &RefinedSplit,
    mode: FormatMode,
    t: &TokenizerHandle,
) -> Result<Vec<TokenId>, FormatError> {
    if mode == FormatMode::PlainL2r {
        let prefix = format!("{}{}", refined.r_prefix, refined.l_prefix);
        return Ok(t.encode(&prefix)?);
    }
    let layout = layout(mode, refined);
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    for seg in &layout.prompt {
        encode_seg(seg, t, 0, false, &mut ids, &mut mask)?;
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text_split::{refine, split_at};
    use crate::tok::test_vocab;
    use proptest::prelude::*;

    fn refined_fixture() -> RefinedSplit {
        refine(&split_at("ab\ncd\nef\ngh\n", 4, 7).unwrap())
    }

    /// Expected ids spelled as marker names and token strings.
    fn expect_ids(t: &TokenizerHandle, spec: &[&str]) -> Vec<TokenId> {
        spec.iter()
            .map(|s| match *s {
                "<PRE>" => t.special_id(SpecialToken::Pre),
                "<SUF>" => t.special_id(SpecialToken::Suf),
                "<START>" => t.special_id(SpecialToken::Start),
                "<END>" => t.special_id(SpecialToken::End),
                "<MID>" => t.special_id(SpecialToken::Mid),
                "<EOT>" => t.special_id(SpecialToken::Eot),
                tok => t
                    .vocab()
                    .token_id(tok)
                    .unwrap_or_else(|| panic!("token {tok:?} missing")),
            })
            .collect()
    }

    #[test]
    fn constrained_psm_layout_and_joint_target() {
        let t = test_vocab::subword_tokenizer();
        let s = assemble_training(&refined_fixture(), FormatMode::FimsePsm, &t, false).unwrap();
        let want = expect_ids(
            &t,
            &[
                "<PRE>", "a", "b", "\n", "<SUF>", "g", "h", "\n", "<START>", "c", "<END>", "f",
                "\n", "<MID>", "c", "d", "\n", "e", "f", "\n", "<EOT>",
            ],
        );
        assert_eq!(s.ids, want);
        // loss only after <MID>, including <EOT>
        let mid_pos = 13;
        for (i, m) in s.loss_mask.iter().enumerate() {
            assert_eq!(*m, u8::from(i > mid_pos), "position {i}");
        }
    }

    #[test]
    fn vanilla_psm_layout_encodes_pieces_separately() {
        let t = test_vocab::subword_tokenizer();
        let r = refine(&split_at("A fine day.", 3, 7).unwrap());
        let s = assemble_training(&r, FormatMode::FimPsm, &t, false).unwrap();
        let want = expect_ids(
            &t,
            &[
                "<PRE>", "A", " f", "<SUF>", "day.", "<MID>", "ine ", "<EOT>",
            ],
        );
        assert_eq!(s.ids, want);
    }

    #[test]
    fn plain_l2r_is_text_then_eot_with_full_loss() {
        let t = test_vocab::subword_tokenizer();
        let r = refine(&split_at("ab\ncd", 1, 3).unwrap());
        let s = assemble_training(&r, FormatMode::PlainL2r, &t, false).unwrap();
        let want = expect_ids(&t, &["a", "b", "\n", "c", "d", "<EOT>"]);
        assert_eq!(s.ids, want);
        assert!(s.loss_mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn inference_prompt_for_constrained_psm() {
        let t = test_vocab::subword_tokenizer();
        let ids = assemble_inference_prompt(&refined_fixture(), FormatMode::FimsePsm, &t).unwrap();
        let want = expect_ids(
            &t,
            &[
                "<PRE>", "a", "b", "\n", "<SUF>", "g", "h", "\n", "<START>", "c", "<END>", "f",
                "\n", "<MID>",
            ],
        );
        assert_eq!(ids, want);
    }

    #[test]
    fn inference_prompt_for_constrained_spm_v1() {
        let t = test_vocab::subword_tokenizer();
        let ids =
            assemble_inference_prompt(&refined_fixture(), FormatMode::FimseSpmV1, &t).unwrap();
        let want = expect_ids(
            &t,
            &[
                "<SUF>", "g", "h", "\n", "<PRE>", "a", "b", "\n", "<START>", "c", "<END>", "f",
                "\n", "<MID>",
            ],
        );
        assert_eq!(ids, want);
    }

    #[test]
    fn inference_prompt_for_constrained_spm_v3_includes_r_prefix() {
        let t = test_vocab::subword_tokenizer();
        let ids =
            assemble_inference_prompt(&refined_fixture(), FormatMode::FimseSpmV3, &t).unwrap();
        let want = expect_ids(
            &t,
            &["<PRE>", "<SUF>", "g", "h", "\n", "<MID>", "a", "b", "\n"],
        );
        assert_eq!(ids, want);
    }

    #[test]
    fn empty_document_prompt_is_markers_only() {
        let t = test_vocab::subword_tokenizer();
        let r = refine(&split_at("", 0, 0).unwrap());
        let ids = assemble_inference_prompt(&r, FormatMode::FimsePsm, &t).unwrap();
        let want = expect_ids(&t, &["<PRE>", "<SUF>", "<START>", "<END>", "<MID>"]);
        assert_eq!(ids, want);
        let s = assemble_training(&r, FormatMode::FimsePsm, &t, false).unwrap();
        let want = expect_ids(
            &t,
            &["<PRE>", "<SUF>", "<START>", "<END>", "<MID>", "<EOT>"],
        );
        assert_eq!(s.ids, want);
    }

    #[test]
    fn marker_in_section_text_is_rejected() {
        let t = test_vocab::subword_tokenizer();
        let r = refine(&split_at("no <EOT> here", 3, 5).unwrap());
        assert!(matches!(
            assemble_training(&r, FormatMode::FimsePsm, &t, false),
            Err(FormatError::Tok(TokError::SpecialMarkerInText { .. }))
        ));
    }

    #[test]
    fn lf_mask_clears_constraint_tokens_only() {
        let t = test_vocab::subword_tokenizer();
        let r = refined_fixture(); // target "cd\nef\n", l_prefix "c", f_suffix "f\n"
        let s = assemble_training(&r, FormatMode::FimsePsm, &t, true).unwrap();
        let trainable: Vec<(String, u8)> = s
            .ids
            .iter()
            .zip(&s.loss_mask)
            .skip(14)
            .map(|(&id, &m)| (t.decode(&[id]).unwrap(), m))
            .collect();
        let want: Vec<(String, u8)> = [
            ("c", 0), // inside l_prefix
            ("d", 1),
            ("\n", 1),
            ("e", 1),
            ("f", 0), // inside f_suffix
            ("\n", 0),
            ("<EOT>", 1),
        ]
        .iter()
        .map(|(s, m)| (s.to_string(), *m))
        .collect();
        assert_eq!(trainable, want);
    }

    #[test]
    fn lf_mask_clears_straddling_tokens() {
        // target "A fine day." with l_prefix "A f": the token " fi" straddles
        // the l_prefix/middle boundary and is masked.
        let t = test_vocab::subword_tokenizer();
        let r = refine(&split_at("A fine day.", 3, 7).unwrap());
        let s = assemble_training(&r, FormatMode::FimsePsm, &t, true).unwrap();
        let pairs: Vec<(String, u8)> = s
            .ids
            .iter()
            .zip(&s.loss_mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&id, &m)| (t.decode(&[id]).unwrap(), m))
            .collect();
        for (tok, _) in &pairs {
            assert!(
                !tok.contains('f') || *tok == "<EOT>" || !tok.starts_with(" f"),
                "constraint-overlapping token {tok:?} kept loss-active"
            );
        }
        // the straddling " fi" is present in the ids but masked
        let fi = t.vocab().token_id(" fi").unwrap();
        let pos = s.ids.iter().rposition(|&id| id == fi).unwrap();
        assert_eq!(s.loss_mask[pos], 0);
    }

    #[test]
    fn trainable_region_decodes_to_declared_string() {
        let t = test_vocab::subword_tokenizer();
        let r = refined_fixture();
        for (mode, want) in [
            (FormatMode::FimsePsm, r.target()),
            (FormatMode::FimseSpmV1, r.target()),
            (FormatMode::FimPsm, r.middle.clone()),
            (FormatMode::FimSpm, r.middle.clone()),
        ] {
            let s = assemble_training(&r, mode, &t, false).unwrap();
            let mid = t.special_id(SpecialToken::Mid);
            let eot = t.special_id(SpecialToken::Eot);
            let mid_pos = s.ids.iter().position(|&id| id == mid).unwrap();
            let eot_pos = s.ids.iter().position(|&id| id == eot).unwrap();
            let region = t.decode(&s.ids[mid_pos + 1..eot_pos]).unwrap();
            assert_eq!(region, want, "mode {mode}");
        }
    }

    #[test]
    fn unknown_mode_tag_is_rejected() {
        assert!(matches!(
            "FIMSE".parse::<FormatMode>(),
            Err(FormatError::UnknownMode(_))
        ));
        assert_eq!(
            "FIMSE_SPM_V3".parse::<FormatMode>().unwrap(),
            FormatMode::FimseSpmV3
        );
    }

    fn arb_refined() -> impl Strategy<Value = RefinedSplit> {
        (
            proptest::collection::vec(
                prop_oneof![
                    proptest::char::range('a', 'z').prop_map(|c| c.to_string()),
                    Just("\n".to_string()),
                    Just(" ".to_string()),
                    Just("日".to_string()),
                ],
                0..40,
            )
            .prop_map(|v| v.concat()),
            any::<(u16, u16)>(),
        )
            .prop_map(|(text, (x, y))| {
                let len = text.chars().count();
                let (mut a, mut b) = ((x as usize) % (len + 1), (y as usize) % (len + 1));
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                refine(&split_at(&text, a, b).unwrap())
            })
    }

    proptest! {
        #[test]
        fn prompt_is_strict_prefix_of_training(r in arb_refined()) {
            // holds for every layout-built prompt (v3 truncates after the
            // encoded r_prefix rather than at <MID>, but still mid-layout)
            let t = test_vocab::subword_tokenizer();
            for mode in [
                FormatMode::FimPsm,
                FormatMode::FimSpm,
                FormatMode::FimSpmVariant,
                FormatMode::FimsePsm,
                FormatMode::FimseSpmV1,
                FormatMode::FimseSpmV2,
                FormatMode::FimseSpmV3,
            ] {
                let prompt = assemble_inference_prompt(&r, mode, &t).unwrap();
                let sample = assemble_training(&r, mode, &t, false).unwrap();
                prop_assert!(prompt.len() < sample.ids.len());
                prop_assert_eq!(&sample.ids[..prompt.len()], &prompt[..]);
                // mask flips from 0 to 1 exactly at the prompt boundary
                prop_assert!(sample.loss_mask[..prompt.len()].iter().all(|&m| m == 0));
                prop_assert!(sample.loss_mask[prompt.len()..].iter().all(|&m| m == 1));
            }
        }

        #[test]
        fn mask_and_ids_stay_aligned(r in arb_refined(), mask_lf in any::<bool>()) {
            let t = test_vocab::subword_tokenizer();
            for mode in FormatMode::ALL {
                let s = assemble_training(&r, mode, &t, mask_lf).unwrap();
                prop_assert_eq!(s.ids.len(), s.loss_mask.len());
                // <EOT> is always loss-active
                prop_assert_eq!(*s.loss_mask.last().unwrap(), 1u8);
            }
        }

        #[test]
        fn markers_appear_only_at_layout_slots(r in arb_refined()) {
            let t = test_vocab::subword_tokenizer();
            let s = assemble_training(&r, FormatMode::FimsePsm, &t, false).unwrap();
            let count_of = |sp: SpecialToken| {
                s.ids.iter().filter(|&&id| id == t.special_id(sp)).count()
            };
            for sp in SpecialToken::ALL {
                prop_assert_eq!(count_of(sp), 1, "marker {}", sp.marker());
            }
        }
    }
}
