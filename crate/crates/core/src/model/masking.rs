//! Masked-language-model input corruption.

use rand::Rng;

use crate::subtok::{AlignedSequence, MASK, NUM_SPECIALS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInput {
    pub ids: Vec<u32>,
    /// `(position, original id)` for every selected position.
    pub targets: Vec<(usize, u32)>,
}

/// What happened to one selected position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Corruption {
    Mask,
    Keep,
    Random,
}

fn corrupt<R: Rng>(rng: &mut R) -> Corruption {
    let u: f64 = rng.random();
    if u < 0.8 {
        Corruption::Mask
    } else if u < 0.9 {
        Corruption::Keep
    } else {
        Corruption::Random
    }
}

/// Selects each maskable position (non-special, non-pad) with probability
/// `rate`. Selected positions become `[MASK]` 80% of the time, stay
/// unchanged 10%, and take a uniformly random non-special id 10%. When the
/// draw selects nothing, one maskable position is selected uniformly.
pub fn apply_mlm_mask<R: Rng>(seq: &AlignedSequence, vocab_size: usize, rate: f64, rng: &mut R) -> MaskedInput {
    let maskable: Vec<usize> = (0..seq.real_len)
        .filter(|&p| seq.alignment[p].is_some())
        .collect();
    let mut selected: Vec<usize> = maskable
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < rate)
        .collect();
    if selected.is_empty() && !maskable.is_empty() {
        selected.push(maskable[rng.random_range(0..maskable.len())]);
    }
    let mut ids = seq.ids.clone();
    let mut targets = Vec::with_capacity(selected.len());
    for p in selected {
        targets.push((p, ids[p]));
        match corrupt(rng) {
            Corruption::Mask => ids[p] = MASK,
            Corruption::Keep => {}
            Corruption::Random => ids[p] = rng.random_range(NUM_SPECIALS as u32..vocab_size as u32),
        }
    }
    MaskedInput { ids, targets }
}

/// Replaces every subtoken of source token `src` with `[MASK]` (cloze
/// evaluation); returns `None` if the token was truncated away.
pub fn mask_source_token(seq: &AlignedSequence, src: usize) -> Option<MaskedInput> {
    let positions: Vec<usize> = seq.positions_of(src).collect();
    if positions.is_empty() {
        return None;
    }
    let mut ids = seq.ids.clone();
    let targets = positions
        .into_iter()
        .map(|p| {
            let orig = ids[p];
            ids[p] = MASK;
            (p, orig)
        })
        .collect();
    Some(MaskedInput { ids, targets })
}
