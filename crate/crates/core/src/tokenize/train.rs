use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use super::{apply_merge, pretokenize, TokenizeError, Tokenizer, BYTE_OFFSET, MIN_VOCAB};
use crate::corpus::LanguageId;

type Pair = (u32, u32);

/// Greedy pair-merge training over whitespace-pretokenized chunks.
///
/// Each round merges the most frequent adjacent pair; ties go to the
/// lexicographically smallest `(left bytes, right bytes)`. A pair whose
/// concatenation is already a token is skipped so every token string stays
/// unique. Training stops at `max_vocab` ids or when no pair occurs twice.
pub fn train_tokenizer<S: AsRef<str>>(lines: &[S], max_vocab: usize) -> Result<Tokenizer, TokenizeError> {
    if max_vocab < MIN_VOCAB {
        return Err(TokenizeError::VocabTooSmall {
            got: max_vocab,
            min: MIN_VOCAB,
        });
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for line in lines {
        for chunk in pretokenize(line.as_ref()) {
            *counts.entry(chunk).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(TokenizeError::EmptyTrainingText);
    }
    let mut words: Vec<(&str, u64)> = counts.into_iter().collect();
    words.sort_unstable();
    let freq: Vec<u64> = words.iter().map(|w| w.1).collect();
    let mut syms: Vec<Vec<u32>> = words
        .iter()
        .map(|(w, _)| w.bytes().map(|b| BYTE_OFFSET + b as u32).collect())
        .collect();

    let mut tok = Tokenizer::base(max_vocab);
    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut occurs: HashMap<Pair, Vec<usize>> = HashMap::new();
    for (idx, word) in syms.iter().enumerate() {
        for w in word.windows(2) {
            let p = (w[0], w[1]);
            *pair_counts.entry(p).or_default() += freq[idx];
            let list = occurs.entry(p).or_default();
            if list.last() != Some(&idx) {
                list.push(idx);
            }
        }
    }

    let mut heap = BinaryHeap::new();
    for (&p, &c) in &pair_counts {
        heap.push(entry(&tok, p, c));
    }

    while tok.num_ids() < max_vocab {
        let Some((count, _, pair)) = heap.pop() else { break };
        if pair_counts.get(&pair).copied().unwrap_or(0) != count {
            continue;
        }
        if count < 2 {
            break;
        }
        let mut joined = tok.tokens[pair.0 as usize].clone();
        joined.extend_from_slice(&tok.tokens[pair.1 as usize]);
        if tok.id_of(&joined).is_some() {
            continue;
        }
        let id = tok.push_merge(pair.0, pair.1);

        let mut affected = occurs.remove(&pair).unwrap_or_default();
        affected.sort_unstable();
        affected.dedup();
        let mut delta: HashMap<Pair, i64> = HashMap::new();
        for idx in affected {
            let word = &mut syms[idx];
            if !word.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            let f = freq[idx] as i64;
            for w in word.windows(2) {
                *delta.entry((w[0], w[1])).or_default() -= f;
            }
            apply_merge(word, pair, id);
            for w in word.windows(2) {
                let p = (w[0], w[1]);
                *delta.entry(p).or_default() += f;
                if p.0 == id || p.1 == id {
                    let list = occurs.entry(p).or_default();
                    if list.last() != Some(&idx) {
                        list.push(idx);
                    }
                }
            }
        }
        let mut changed: Vec<(Pair, i64)> = delta.into_iter().filter(|&(_, d)| d != 0).collect();
        changed.sort_unstable();
        for (p, d) in changed {
            let c = pair_counts.entry(p).or_default();
            *c = (*c as i64 + d) as u64;
            let c = *c;
            if c == 0 {
                pair_counts.remove(&p);
            } else {
                heap.push(entry(&tok, p, c));
            }
        }
    }
    Ok(tok)
}

type HeapEntry = (u64, Reverse<(Vec<u8>, Vec<u8>)>, Pair);

fn entry(tok: &Tokenizer, p: Pair, count: u64) -> HeapEntry {
    (
        count,
        Reverse((tok.tokens[p.0 as usize].clone(), tok.tokens[p.1 as usize].clone())),
        p,
    )
}

/// Trains on equal-sized samples from each language, concatenated in
/// `LanguageId` order. Larger samples are truncated to the smallest one.
pub fn train_multilingual_tokenizer<S: AsRef<str>>(
    samples: &BTreeMap<LanguageId, Vec<S>>,
    max_vocab: usize,
) -> Result<Tokenizer, TokenizeError> {
    let Some(n) = samples.values().map(Vec::len).min() else {
        return Err(TokenizeError::NoLanguages);
    };
    if n == 0 {
        return Err(TokenizeError::EmptyTrainingText);
    }
    let joined: Vec<&str> = samples
        .values()
        .flat_map(|lines| lines[..n].iter().map(AsRef::as_ref))
        .collect();
    train_tokenizer(&joined, max_vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::FIRST_MERGE_ID;

    fn lines(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Textbook BPE: recount every pair over every word from scratch each
    /// round.
    fn naive_bpe(text: &[String], max_vocab: usize) -> Vec<Vec<u8>> {
        let mut words: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
        for l in text {
            for c in pretokenize(l) {
                *words.entry(c.as_bytes().to_vec()).or_default() += 1;
            }
        }
        let mut segs: Vec<(Vec<Vec<u8>>, u64)> = words
            .into_iter()
            .map(|(w, c)| (w.iter().map(|&b| vec![b]).collect(), c))
            .collect();
        let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        while vocab.len() + 3 < max_vocab {
            let mut counts: BTreeMap<(Vec<u8>, Vec<u8>), u64> = BTreeMap::new();
            for (s, c) in &segs {
                for w in s.windows(2) {
                    *counts.entry((w[0].clone(), w[1].clone())).or_default() += c;
                }
            }
            let best = counts
                .into_iter()
                .filter(|((a, b), _)| {
                    let j = [a.as_slice(), b.as_slice()].concat();
                    !vocab.contains(&j)
                })
                .max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)));
            let Some(((a, b), c)) = best else { break };
            if c < 2 {
                break;
            }
            let j = [a.as_slice(), b.as_slice()].concat();
            vocab.push(j.clone());
            for (s, _) in segs.iter_mut() {
                let mut out = Vec::new();
                let mut i = 0;
                while i < s.len() {
                    if i + 1 < s.len() && s[i] == a && s[i + 1] == b {
                        out.push(j.clone());
                        i += 2;
                    } else {
                        out.push(s[i].clone());
                        i += 1;
                    }
                }
                *s = out;
            }
        }
        vocab
    }

    #[test]
    fn ab_is_merged() {
        let t = train_tokenizer(&lines(&["ab ab ab"]), 300).unwrap();
        assert_eq!(t.token_bytes(FIRST_MERGE_ID), Some(&b"ab"[..]));
        assert!(t.id_of(b"ab").is_some());
        assert_eq!(t.encode("ab"), vec![FIRST_MERGE_ID]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            train_tokenizer(&lines(&["x"]), 299),
            Err(TokenizeError::VocabTooSmall { got: 299, min: 300 })
        ));
        assert!(matches!(
            train_tokenizer(&Vec::<String>::new(), 300),
            Err(TokenizeError::EmptyTrainingText)
        ));
        assert!(matches!(
            train_tokenizer(&lines(&["", ""]), 300),
            Err(TokenizeError::EmptyTrainingText)
        ));
    }

    #[test]
    fn matches_naive_trainer() {
        let text = lines(&[
            "the cat sat on the mat with the other cat",
            "a cat and a hat and a bat that sat",
            "theta then there these those they",
            "aaaa aaa aa a aaaa",
        ]);
        for max_vocab in [300, 320, 360, 420] {
            let t = train_tokenizer(&text, max_vocab).unwrap();
            let got: Vec<Vec<u8>> = t.token_strings().map(|(_, s)| s.to_vec()).collect();
            assert_eq!(got, naive_bpe(&text, max_vocab), "max_vocab {max_vocab}");
            assert!(t.num_ids() <= max_vocab);
        }
    }

    #[test]
    fn deterministic_files() {
        let text = lines(&["some words repeat some words do not", "words words words"]);
        let a = train_tokenizer(&text, 330).unwrap();
        let b = train_tokenizer(&text, 330).unwrap();
        assert_eq!(a.to_vocab_string(), b.to_vocab_string());
    }

    #[test]
    fn multilingual_canonical_order() {
        let eng = LanguageId::new("eng", "Latn").unwrap();
        let rus = LanguageId::new("rus", "Cyrl").unwrap();
        let e = lines(&["the house is big", "the dog runs", "a third line"]);
        let r = lines(&["дом большой", "собака бежит"]);
        let mut one = BTreeMap::new();
        one.insert(eng.clone(), e.clone());
        assert_eq!(
            train_multilingual_tokenizer(&one, 340).unwrap(),
            train_tokenizer(&e, 340).unwrap()
        );

        let mut m1 = BTreeMap::new();
        m1.insert(rus.clone(), r.clone());
        m1.insert(eng.clone(), e.clone());
        let mut m2 = BTreeMap::new();
        m2.insert(eng.clone(), e.clone());
        m2.insert(rus.clone(), r.clone());
        let t = train_multilingual_tokenizer(&m1, 400).unwrap();
        assert_eq!(t, train_multilingual_tokenizer(&m2, 400).unwrap());

        let has_latin = t.token_strings().any(|(_, s)| s.len() > 1 && s.is_ascii());
        let has_cyrillic = t
            .token_strings()
            .any(|(_, s)| std::str::from_utf8(s).is_ok_and(|s| s.chars().any(|c| ('а'..='я').contains(&c))));
        assert!(has_latin && has_cyrillic);
    }
}
