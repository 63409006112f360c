use std::collections::{BTreeMap, HashMap};

use super::{split_words, Scheme, TokenizerError, Vocabulary, CONTINUATION, NUM_RESERVED};
use crate::ingest::HexUnit;

const HEX_DIGITS: &[u8; 16] = b"0123456789abcdef";

/// Trains a WordPiece vocabulary of exactly `target_size` entries (reserved
/// block included) over the 4-digit words of `corpus`.
///
/// Without `predefined` the inventory starts from the single hex characters
/// seen in the corpus (`##`-prefixed when not word-initial) and grows by
/// repeatedly merging the pair with the highest `freq(ab) / (freq(a) * freq(b))`.
/// If the merges run out first, the unseen single characters are added.
///
/// With `predefined`, its regular tokens form the word inventory: the 32 single
/// characters are always kept, then predefined words are admitted in order of
/// corpus frequency (ties by their predefined id) until the target is reached.
pub fn train_wordpiece<'a>(
    corpus: impl IntoIterator<Item = &'a HexUnit>,
    target_size: usize,
    predefined: Option<&Vocabulary>,
    seed: u64,
) -> Result<Vocabulary, TokenizerError> {
    if target_size <= NUM_RESERVED {
        return Err(TokenizerError::CorpusTooSmall {
            target: target_size,
            available: NUM_RESERVED,
        });
    }
    let counts = count_words(corpus)?;
    if counts.is_empty() {
        return Err(TokenizerError::CorpusTooSmall {
            target: target_size,
            available: NUM_RESERVED,
        });
    }
    let regular = match predefined {
        None => train_from_characters(&counts, target_size - NUM_RESERVED),
        Some(pd) => select_predefined(&counts, pd, target_size - NUM_RESERVED),
    };
    if regular.len() < target_size - NUM_RESERVED {
        return Err(TokenizerError::CorpusTooSmall {
            target: target_size,
            available: NUM_RESERVED + regular.len(),
        });
    }
    let scheme = if predefined.is_some() {
        Scheme::WordpiecePd
    } else {
        Scheme::WordpieceWord
    };
    Vocabulary::from_regular_tokens(regular, scheme, seed)
}

fn count_words<'a>(
    corpus: impl IntoIterator<Item = &'a HexUnit>,
) -> Result<BTreeMap<String, u64>, TokenizerError> {
    let mut counts = BTreeMap::new();
    for unit in corpus {
        for p in &unit.packets {
            for region in [&p.header, &p.payload] {
                for w in split_words(region)? {
                    *counts.entry(w).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(counts)
}

fn all_characters() -> impl Iterator<Item = String> {
    let initial = HEX_DIGITS.iter().map(|&c| (c as char).to_string());
    let cont = HEX_DIGITS
        .iter()
        .map(|&c| format!("{CONTINUATION}{}", c as char));
    initial.chain(cont)
}

fn train_from_characters(counts: &BTreeMap<String, u64>, budget: usize) -> Vec<String> {
    let mut pieces: Vec<String> = Vec::new();
    let mut piece_ids: HashMap<String, u32> = HashMap::new();
    fn intern(s: String, pieces: &mut Vec<String>, ids: &mut HashMap<String, u32>) -> u32 {
        *ids.entry(s.clone()).or_insert_with(|| {
            pieces.push(s);
            (pieces.len() - 1) as u32
        })
    }

    // Alphabet in sorted order so ids do not depend on word iteration order.
    let mut alphabet: BTreeMap<String, u64> = BTreeMap::new();
    for (w, &c) in counts {
        for (i, ch) in w.char_indices() {
            let sym = if i == 0 {
                ch.to_string()
            } else {
                format!("{CONTINUATION}{ch}")
            };
            *alphabet.entry(sym).or_insert(0) += c;
        }
    }
    let mut alpha_sorted: Vec<(String, u64)> = alphabet.into_iter().collect();
    // Initial characters before continuations, then lexicographic.
    alpha_sorted.sort_by(|a, b| {
        a.0.starts_with(CONTINUATION)
            .cmp(&b.0.starts_with(CONTINUATION))
            .then_with(|| a.0.cmp(&b.0))
    });
    if alpha_sorted.len() > budget {
        alpha_sorted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        alpha_sorted.truncate(budget);
        return alpha_sorted.into_iter().map(|(s, _)| s).collect();
    }
    for (s, _) in alpha_sorted {
        intern(s, &mut pieces, &mut piece_ids);
    }

    let mut words: Vec<(Vec<u32>, u64)> = counts
        .iter()
        .map(|(w, &c)| {
            let syms = w
                .char_indices()
                .map(|(i, ch)| {
                    let s = if i == 0 {
                        ch.to_string()
                    } else {
                        format!("{CONTINUATION}{ch}")
                    };
                    piece_ids[&s]
                })
                .collect();
            (syms, c)
        })
        .collect();

    while pieces.len() < budget {
        let mut pair_freq: HashMap<(u32, u32), u64> = HashMap::new();
        let mut sym_freq: HashMap<u32, u64> = HashMap::new();
        for (syms, c) in &words {
            for &s in syms {
                *sym_freq.entry(s).or_insert(0) += c;
            }
            for w in syms.windows(2) {
                *pair_freq.entry((w[0], w[1])).or_insert(0) += c;
            }
        }
        let best = pair_freq
            .iter()
            .map(|(&(a, b), &f)| {
                let score = f as f64 / (sym_freq[&a] as f64 * sym_freq[&b] as f64);
                (score, f, merged(&pieces[a as usize], &pieces[b as usize]), (a, b))
            })
            .max_by(|x, y| {
                x.0.total_cmp(&y.0)
                    .then_with(|| x.1.cmp(&y.1))
                    .then_with(|| y.2.cmp(&x.2))
                    .then_with(|| y.3.cmp(&x.3))
            });
        let Some((_, _, new_piece, (a, b))) = best else {
            break;
        };
        let new_id = intern(new_piece, &mut pieces, &mut piece_ids);
        for (syms, _) in &mut words {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == a && syms[i + 1] == b {
                    syms[i] = new_id;
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
    }

    for s in all_characters() {
        if pieces.len() >= budget {
            break;
        }
        intern(s, &mut pieces, &mut piece_ids);
    }
    pieces
}

fn merged(a: &str, b: &str) -> String {
    let mut s = a.to_string();
    s.push_str(b.strip_prefix(CONTINUATION).unwrap_or(b));
    s
}

fn select_predefined(counts: &BTreeMap<String, u64>, pd: &Vocabulary, budget: usize) -> Vec<String> {
    let mut out: Vec<String> = all_characters().take(budget).collect();
    let mut ranked: Vec<(u64, usize, &String)> = pd
        .regular_tokens()
        .iter()
        .enumerate()
        .filter(|(_, t)| !out.contains(t))
        .map(|(i, t)| (counts.get(t).copied().unwrap_or(0), i, t))
        .collect();
    ranked.sort_by(|x, y| y.0.cmp(&x.0).then_with(|| x.1.cmp(&y.1)));
    out.extend(ranked.into_iter().take(budget.saturating_sub(out.len())).map(|(_, _, t)| t.clone()));
    out
}
