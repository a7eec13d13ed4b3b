//! Token healing: roll back the last tokens of a prompt, then re-decode
//! under a trie constraint until the regenerated text covers the
//! rolled-back characters, after which decoding runs free.
//!
//! While the rolled-back tail is nonempty, a token is admissible when its
//! string and the tail stand in a prefix relation either way round: the
//! token may consume part of the tail, or cover all of it and spill over
//! into fresh generation. Decoding inside the constrained phase is greedy;
//! healing is a determinization step, so no sampling happens here.
//!
//! Dead ends (no admissible token while the tail is nonempty) are reported
//! as errors rather than silently falling back; the caller decides whether
//! to pay for a deeper rollback.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::infer::GeneratorConfig;
use crate::tok::{TokError, TokenId, TokenizerHandle, Vocabulary};

#[derive(Debug, Default)]
struct TrieNode {
    children: BTreeMap<char, TrieNode>,
    terminal: Option<TokenId>,
}

/// Character trie over the ordinary vocabulary (specials excluded).
#[derive(Debug, Default)]
pub struct VocabTrie {
    root: TrieNode,
}

impl VocabTrie {
    fn insert(&mut self, s: &str, id: TokenId) {
        let mut node = &mut self.root;
        for c in s.chars() {
            node = node.children.entry(c).or_default();
        }
        node.terminal = Some(id);
    }

    fn walk(&self, s: &str) -> Option<&TrieNode> {
        let mut node = &self.root;
        for c in s.chars() {
            node = node.children.get(&c)?;
        }
        Some(node)
    }

    fn collect_subtree(node: &TrieNode, out: &mut Vec<TokenId>) {
        if let Some(id) = node.terminal {
            out.push(id);
        }
        for child in node.children.values() {
            Self::collect_subtree(child, out);
        }
    }

    /// All tokens whose string extends `prefix` (including an exact match).
    pub fn tokens_with_prefix(&self, prefix: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        if let Some(node) = self.walk(prefix) {
            Self::collect_subtree(node, &mut out);
        }
        out.sort();
        out
    }
}

/// Builds the trie over all ordinary tokens of a vocabulary.
pub fn build_trie(v: &Vocabulary) -> VocabTrie {
    let mut trie = VocabTrie::default();
    for (id, s) in v.tokens() {
        if !s.is_empty() {
            trie.insert(s, id);
        }
    }
    trie
}

/// Admissible next tokens under a (possibly empty) required tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AllowedNext {
    /// Empty tail: any token may follow.
    Unconstrained,
    /// Tokens standing in a prefix relation with the tail, sorted by id.
    Tokens(Vec<TokenId>),
}

/// Tokens `t` such that `t`'s string is a prefix of `required_tail` or
/// `required_tail` is a prefix of `t`'s string.
pub fn allowed_next(trie: &VocabTrie, required_tail: &str) -> AllowedNext {
    if required_tail.is_empty() {
        return AllowedNext::Unconstrained;
    }
    let mut out = Vec::new();
    let mut node = &trie.root;
    // terminals on the path are prefixes of the tail
    for c in required_tail.chars() {
        match node.children.get(&c) {
            Some(child) => {
                node = child;
                if let Some(id) = node.terminal {
                    out.push(id);
                }
            }
            None => {
                out.sort();
                return AllowedNext::Tokens(out);
            }
        }
    }
    // the subtree under the tail holds every extension; the exact match sits
    // in both views, so dedup after collecting
    VocabTrie::collect_subtree(node, &mut out);
    out.sort();
    out.dedup();
    AllowedNext::Tokens(out)
}

/// Per-call state of a healing run.
#[derive(Debug, Clone)]
pub struct HealingState {
    /// Decoded rolled-back text not yet regenerated; shrinks monotonically.
    pub required_tail: String,
    pub rollback_depth: usize,
    pub emitted: Vec<TokenId>,
}

#[derive(Debug, Error)]
pub enum HealError {
    #[error("rollback depth {depth} exceeds prompt length {prompt_len}")]
    RollbackTooDeep { depth: usize, prompt_len: usize },
    #[error("healing dead end: no token is admissible for tail {tail:?}")]
    DeadEnd { tail: String },
    #[error(transparent)]
    Tok(#[from] TokError),
}

/// Next-token scores over the local vocabulary. `context` is the kept
/// prompt followed by everything emitted so far; `emitted` is just the
/// emitted part. Absent ids score 0.
pub trait TokenScorer {
    fn score_next(&self, context: &[TokenId], emitted: &[TokenId]) -> Vec<(TokenId, f64)>;
}

/// Scores along a fixed intended token sequence: while the emitted tokens
/// follow the plan, the next planned token is preferred; once derailed (or
/// after the plan is exhausted) the end marker is preferred. This mimics a
/// model committed to one continuation of the surrounding code.
#[derive(Debug, Clone)]
pub struct PlanScorer {
    plan: Vec<TokenId>,
    eot: TokenId,
}

impl PlanScorer {
    pub fn new(plan: Vec<TokenId>, eot: TokenId) -> Self {
        Self { plan, eot }
    }

    /// Builds the plan from token strings looked up in the vocabulary.
    pub fn from_strings(v: &Vocabulary, plan: &[&str], eot: TokenId) -> Result<Self, HealError> {
        let ids = plan
            .iter()
            .map(|s| {
                v.token_id(s).ok_or_else(|| {
                    HealError::Tok(TokError::Validation(format!(
                        "plan token {s:?} is not in the vocabulary"
                    )))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(ids, eot))
    }
}

impl TokenScorer for PlanScorer {
    fn score_next(&self, _context: &[TokenId], emitted: &[TokenId]) -> Vec<(TokenId, f64)> {
        let on_plan = emitted.len() <= self.plan.len() && self.plan[..emitted.len()] == *emitted;
        if on_plan && emitted.len() < self.plan.len() {
            vec![(self.plan[emitted.len()], 1.0)]
        } else {
            vec![(self.eot, 1.0)]
        }
    }
}

fn pick_best(candidates: &[TokenId], scores: &[(TokenId, f64)]) -> TokenId {
    let lookup = |id: TokenId| {
        scores
            .iter()
            .find(|(s, _)| *s == id)
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    };
    let mut best = candidates[0];
    let mut best_score = lookup(best);
    for &c in &candidates[1..] {
        let s = lookup(c);
        if s > best_score || (s == best_score && c < best) {
            best = c;
            best_score = s;
        }
    }
    best
}

/// Removes the last `rollback_depth` prompt tokens and greedily re-decodes:
/// constrained to admissible tokens until the rolled-back text is covered,
/// unconstrained afterwards, stopping at the end marker or the token
/// budget. Returns the emitted tokens (end marker excluded); their decoded
/// text always starts with the rolled-back text.
pub fn heal_generate(
    prompt_ids: &[TokenId],
    rollback_depth: usize,
    scorer: &dyn TokenScorer,
    trie: &VocabTrie,
    t: &TokenizerHandle,
    cfg: &GeneratorConfig,
) -> Result<Vec<TokenId>, HealError> {
    if rollback_depth == 0 || prompt_ids.len() < rollback_depth {
        return Err(HealError::RollbackTooDeep {
            depth: rollback_depth,
            prompt_len: prompt_ids.len(),
        });
    }
    let keep = prompt_ids.len() - rollback_depth;
    let mut state = HealingState {
        required_tail: t.decode(&prompt_ids[keep..])?,
        rollback_depth,
        emitted: Vec::new(),
    };
    let mut context: Vec<TokenId> = prompt_ids[..keep].to_vec();
    let all_ordinary: Vec<TokenId> = t.vocab().tokens().map(|(id, _)| id).collect();

    while state.emitted.len() < cfg.max_new_tokens {
        let chosen = if state.required_tail.is_empty() {
            let mut candidates = all_ordinary.clone();
            candidates.push(cfg.stop_on);
            let scores = scorer.score_next(&context, &state.emitted);
            pick_best(&candidates, &scores)
        } else {
            let candidates = match allowed_next(trie, &state.required_tail) {
                AllowedNext::Unconstrained => unreachable!("tail is nonempty"),
                AllowedNext::Tokens(c) => c,
            };
            if candidates.is_empty() {
                return Err(HealError::DeadEnd {
                    tail: state.required_tail.clone(),
                });
            }
            let scores = scorer.score_next(&context, &state.emitted);
            pick_best(&candidates, &scores)
        };

        if chosen == cfg.stop_on {
            break;
        }
        if !state.required_tail.is_empty() {
            let s = t
                .vocab()
                .token_str(chosen)
                .expect("constrained tokens are ordinary");
            if s.len() <= state.required_tail.len() {
                debug_assert!(state.required_tail.starts_with(s));
                state.required_tail = state.required_tail[s.len()..].to_string();
            } else {
                // the token covers the whole tail; the excess is fresh output
                debug_assert!(s.starts_with(&state.required_tail));
                state.required_tail.clear();
            }
        }
        state.emitted.push(chosen);
        context.push(chosen);
    }
    Ok(state.emitted)
}

/// A canned rollback scenario: a prompt, the continuation the surrounding
/// code calls for, and the token plan a committed model would follow.
#[derive(Debug, Clone)]
pub struct DemoCase {
    pub name: &'static str,
    pub prompt_text: &'static str,
    pub plan: &'static [&'static str],
    pub label: &'static str,
}

/// The two bundled healing scenarios: a partial word the constraint can
/// finish (`sort`), and a boundary the tokenizer merged so deeply that a
/// single-token rollback cannot recover it (`delim`).
pub const DEMO_CASES: [DemoCase; 2] = [
    DemoCase {
        name: "sort",
        prompt_text: "def so",
        plan: &[" sort", "(", "arr", ")"],
        label: "def sort(arr)",
    },
    DemoCase {
        name: "delim",
        prompt_text: "r.add(delim",
        plan: &["(", "deli", "meter", ")"],
        label: "r.add(delimeter)",
    },
];

pub fn demo_case(name: &str) -> Option<&'static DemoCase> {
    DEMO_CASES.iter().find(|c| c.name == name)
}
