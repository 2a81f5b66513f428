//! Subword tokenization with source-token alignment.
//!
//! Each source token is segmented on its own by greedy longest match, so
//! every subtoken belongs to exactly one source token. Sequences are
//! assembled as `[CLS] a.. [EOS]` for single inputs and
//! `[CLS] a.. [SEP] b.. [EOS]` for pairs, then padded.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::code::CodeUnit;

pub const CLS: u32 = 0;
pub const SEP: u32 = 1;
pub const EOS: u32 = 2;
pub const MASK: u32 = 3;
pub const PAD: u32 = 4;
pub const UNK: u32 = 5;
pub const NUM_SPECIALS: usize = 6;

pub const SPECIALS: [&str; NUM_SPECIALS] = ["[CLS]", "[SEP]", "[EOS]", "[MASK]", "[PAD]", "[UNK]"];

/// Longest multi-character piece considered when building a vocabulary.
pub const MAX_PIECE_CHARS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubtokError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("max_size {got} is below the {need} entries needed for specials and alphabet")]
    VocabTooSmall { need: usize, got: usize },
    #[error("weight vector has length {got}, sequence has length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("malformed vocabulary file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_entries(entries: Vec<String>) -> Result<Self, SubtokError> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if entries.get(i).map(String::as_str) != Some(*s) {
                return Err(SubtokError::Malformed(format!("entry {i} must be {s}")));
            }
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.clone(), i as u32).is_some() {
                return Err(SubtokError::Malformed(format!("duplicate entry {e:?}")));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// One entry per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(e);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SubtokError> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        Self::from_entries(body.split('\n').map(str::to_string).collect())
    }

    /// Greedy longest-match segmentation of one lexeme.
    pub fn segment(&self, lexeme: &str) -> Vec<u32> {
        let chars: Vec<char> = lexeme.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        let mut buf = String::new();
        while i < chars.len() {
            let longest = MAX_PIECE_CHARS.min(chars.len() - i);
            let mut matched = None;
            for len in (1..=longest).rev() {
                buf.clear();
                buf.extend(&chars[i..i + len]);
                if let Some(id) = self.id(&buf) {
                    matched = Some((id, len));
                    break;
                }
            }
            let (id, len) = matched.unwrap_or((UNK, 1));
            out.push(id);
            i += len;
        }
        out
    }
}

/// Builds a vocabulary: specials, every character seen, then the most
/// frequent multi-character substrings of lexemes (frequency descending,
/// ties broken lexicographically) until `max_size` entries.
pub fn build_vocab(corpus: &[CodeUnit], max_size: usize) -> Result<Vocab, SubtokError> {
    if corpus.is_empty() {
        return Err(SubtokError::EmptyCorpus);
    }
    let mut alphabet = BTreeSet::new();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for tok in corpus.iter().flat_map(|u| &u.tokens) {
        let chars: Vec<char> = tok.lexeme.chars().collect();
        alphabet.extend(chars.iter().copied());
        for len in 2..=MAX_PIECE_CHARS.min(chars.len()) {
            for window in chars.windows(len) {
                *counts.entry(window.iter().collect()).or_default() += 1;
            }
        }
    }
    let need = NUM_SPECIALS + alphabet.len();
    if max_size < need {
        return Err(SubtokError::VocabTooSmall {
            need,
            got: max_size,
        });
    }
    let mut ranked: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(s, _)| !SPECIALS.contains(&s.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut entries: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    entries.extend(alphabet.into_iter().map(String::from));
    entries.extend(ranked.into_iter().take(max_size - need).map(|(s, _)| s));
    Vocab::from_entries(entries)
}

/// A model-ready sequence with its subtoken-to-source alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedSequence {
    pub unit_id: String,
    /// Length `max_len`, padded with [`PAD`].
    pub ids: Vec<u32>,
    /// Source-token index per position; `None` for specials and padding.
    pub alignment: Vec<Option<usize>>,
    /// Number of non-pad positions.
    pub real_len: usize,
    /// Token count of the originating unit (or pair), including any tokens
    /// dropped by truncation.
    pub num_source_tokens: usize,
    pub sep_pos: Option<usize>,
}

impl AlignedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions holding the subtokens of source token `src`.
    pub fn positions_of(&self, src: usize) -> impl Iterator<Item = usize> + '_ {
        self.alignment
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == Some(src))
            .map(|(p, _)| p)
    }

    /// Source tokens that survived truncation.
    pub fn kept_source_tokens(&self) -> BTreeSet<usize> {
        self.alignment.iter().flatten().copied().collect()
    }
}

fn segment_unit(unit: &CodeUnit, vocab: &Vocab) -> Vec<Vec<u32>> {
    unit.tokens.iter().map(|t| vocab.segment(&t.lexeme)).collect()
}

fn assemble(
    unit_id: String,
    segments: &[(&[Vec<u32>], usize)],
    num_source_tokens: usize,
    max_len: usize,
) -> AlignedSequence {
    let mut ids = vec![CLS];
    let mut alignment = vec![None];
    let mut sep_pos = None;
    for (k, (pieces, offset)) in segments.iter().enumerate() {
        if k > 0 {
            sep_pos = Some(ids.len());
            ids.push(SEP);
            alignment.push(None);
        }
        for (i, sub) in pieces.iter().enumerate() {
            ids.extend(sub);
            alignment.extend(std::iter::repeat_n(Some(offset + i), sub.len()));
        }
    }
    ids.push(EOS);
    alignment.push(None);
    let real_len = ids.len();
    debug_assert!(real_len <= max_len);
    ids.resize(max_len, PAD);
    alignment.resize(max_len, None);
    AlignedSequence {
        unit_id,
        ids,
        alignment,
        real_len,
        num_source_tokens,
        sep_pos,
    }
}

/// Whole source tokens that fit in `budget` subtoken slots, from the front.
fn fitting_prefix(pieces: &[Vec<u32>], budget: usize) -> usize {
    let mut used = 0;
    pieces
        .iter()
        .take_while(|p| {
            used += p.len();
            used <= budget
        })
        .count()
}

/// Encodes a single unit as `[CLS] .. [EOS]` padded to `max_len`.
/// Source tokens that do not fit are dropped whole from the tail.
pub fn encode(unit: &CodeUnit, vocab: &Vocab, max_len: usize) -> AlignedSequence {
    assert!(max_len >= 3, "max_len must be at least 3");
    let pieces = segment_unit(unit, vocab);
    let keep = fitting_prefix(&pieces, max_len - 2);
    assemble(
        unit.id.clone(),
        &[(&pieces[..keep], 0)],
        unit.tokens.len(),
        max_len,
    )
}

/// Encodes a pair as `[CLS] a.. [SEP] b.. [EOS]`. Source indices of `second`
/// are offset by the token count of `first`, matching [`CodeUnit::concat`].
/// When over length, tail tokens are dropped from whichever segment is
/// currently longer.
pub fn encode_pair(first: &CodeUnit, second: &CodeUnit, vocab: &Vocab, max_len: usize) -> AlignedSequence {
    assert!(max_len >= 4, "max_len must be at least 4 for pairs");
    let a = segment_unit(first, vocab);
    let b = segment_unit(second, vocab);
    let (mut ka, mut kb) = (a.len(), b.len());
    let size = |p: &[Vec<u32>]| p.iter().map(Vec::len).sum::<usize>();
    let budget = max_len - 3;
    while size(&a[..ka]) + size(&b[..kb]) > budget {
        if size(&a[..ka]) >= size(&b[..kb]) {
            ka -= 1;
        } else {
            kb -= 1;
        }
    }
    assemble(
        crate::code::pair_id(&first.id, &second.id),
        &[(&a[..ka], 0), (&b[..kb], first.tokens.len())],
        first.tokens.len() + second.tokens.len(),
        max_len,
    )
}

/// Attention mass per source token, with the mass on specials and padding
/// kept apart.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceWeights {
    pub per_token: Vec<f64>,
    pub special: f64,
}

/// Sums per-position weights into their source tokens.
pub fn aggregate_to_source(weights: &[f64], seq: &AlignedSequence) -> Result<SourceWeights, SubtokError> {
    if weights.len() != seq.len() {
        return Err(SubtokError::LengthMismatch {
            expected: seq.len(),
            got: weights.len(),
        });
    }
    let mut per_token = vec![0.0; seq.num_source_tokens];
    let mut special = 0.0;
    for (w, a) in weights.iter().zip(&seq.alignment) {
        match a {
            Some(src) => per_token[*src] += w,
            None => special += w,
        }
    }
    Ok(SourceWeights { per_token, special })
}
