//! Exact substring deduplication over a suffix array.
//!
//! Lines are joined into one byte stream, each followed by
//! [`DOCUMENT_SEPARATOR`]. A position starts a repeat when the `min_bytes`
//! window there (stopped at separators) also starts at an earlier position.
//! In suffix-array order such windows form runs of adjacent suffixes with
//! LCP >= `min_bytes`; every member of a run except the earliest position is
//! flagged. The union of flagged windows is excised and the earliest
//! occurrence stays.
//!
//! Excision can splice bytes into a fresh repeat. Any such repeat involves a
//! window that crosses a cut, so after each pass those windows are hashed and
//! looked up across the whole text; only a possible match triggers another
//! full pass.
//!
//! For thresholds of at least [`PREFILTER_MIN_BYTES`] only candidate lines
//! enter the suffix array. Equal windows share their minimizer (the
//! smallest-hash k-mer at the same offset), so a line can hold or source a
//! repeat only if one of its minimizers occurs at two positions.

use std::collections::{HashMap, VecDeque};

use fixedbitset::FixedBitSet;
use libsais::SuffixArrayConstruction;

use super::{Corpus, CorpusError};

/// Terminates every line in the joined stream. `0xFF` never occurs in UTF-8.
pub const DOCUMENT_SEPARATOR: u8 = 0xFF;
pub const MIN_DEDUP_BYTES: usize = 8;
pub const DEFAULT_MIN_BYTES: usize = 100;

/// Thresholds from here on use the minimizer prefilter.
pub const PREFILTER_MIN_BYTES: usize = 64;
const KMER: usize = 32;

pub fn dedup_sequences(corpus: &Corpus, min_bytes: usize) -> Result<Corpus, CorpusError> {
    if min_bytes < MIN_DEDUP_BYTES {
        return Err(CorpusError::MinBytesTooSmall {
            got: min_bytes,
            min: MIN_DEDUP_BYTES,
        });
    }
    let lines = dedup_lines(corpus.lines(), min_bytes, min_bytes >= PREFILTER_MIN_BYTES)?;
    log::debug!("dedup of {} done", corpus.language());
    Ok(corpus.with_lines(lines))
}

fn dedup_lines(input: &[String], min_bytes: usize, prefilter: bool) -> Result<Vec<String>, CorpusError> {
    let mut lines: Vec<Vec<u8>> = input.iter().map(|l| l.as_bytes().to_vec()).collect();
    // lines emptied by excision go; originally empty lines stay
    let mut emptied = FixedBitSet::with_capacity(lines.len());
    loop {
        let subset: Vec<usize> = if prefilter {
            candidate_lines(&lines, min_bytes)
        } else {
            (0..lines.len()).filter(|&i| lines[i].len() >= min_bytes).collect()
        };
        let (stream, starts) = join(subset.iter().map(|&i| lines[i].as_slice()));
        let spans = later_repeats(&stream, min_bytes)?;
        drop(stream);
        if spans.is_empty() {
            break;
        }
        let mut cuts = Vec::new();
        for (i, kept, joins) in excise(&lines, &subset, &starts, &spans) {
            emptied.set(i, kept.is_empty());
            lines[i] = kept;
            cuts.push((i, joins));
        }
        if !may_repeat_across_cuts(&lines, &cuts, min_bytes) {
            break;
        }
    }
    Ok(lines
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !emptied.contains(*i))
        .map(|(_, l)| String::from_utf8(l).expect("excised spans are widened to char boundaries"))
        .collect())
}

fn join<'a>(lines: impl Iterator<Item = &'a [u8]> + Clone) -> (Vec<u8>, Vec<usize>) {
    let total: usize = lines.clone().map(|l| l.len() + 1).sum();
    let mut stream = Vec::with_capacity(total);
    let mut starts = Vec::new();
    for line in lines {
        starts.push(stream.len());
        stream.extend_from_slice(line);
        stream.push(DOCUMENT_SEPARATOR);
    }
    (stream, starts)
}

fn mix(mut h: u64) -> u64 {
    // splitmix64 finalizer; polynomial hashes order k-mers poorly
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Indices of lines whose minimizers include one seen at two positions.
fn candidate_lines(lines: &[Vec<u8>], min_bytes: usize) -> Vec<usize> {
    let span = min_bytes - KMER + 1;
    let mut minimizers: Vec<u64> = Vec::new();
    let mut ranges: Vec<(usize, usize, usize)> = Vec::new();
    let mut window: VecDeque<(usize, u64)> = VecDeque::new();
    for (i, line) in lines.iter().enumerate() {
        if line.len() < min_bytes {
            continue;
        }
        let from = minimizers.len();
        window.clear();
        let mut last = usize::MAX;
        for (pos, h) in window_hashes(line, KMER) {
            let h = mix(h);
            while window.back().is_some_and(|&(_, b)| b > h) {
                window.pop_back();
            }
            window.push_back((pos, h));
            if window[0].0 + span <= pos {
                window.pop_front();
            }
            if pos + 1 >= span && window[0].0 != last {
                last = window[0].0;
                minimizers.push(window[0].1);
            }
        }
        ranges.push((i, from, minimizers.len()));
    }
    let mut seen: HashMap<u64, bool> = HashMap::with_capacity(minimizers.len());
    for &m in &minimizers {
        seen.entry(m).and_modify(|twice| *twice = true).or_insert(false);
    }
    ranges
        .into_iter()
        .filter(|&(_, a, b)| minimizers[a..b].iter().any(|m| seen[m]))
        .map(|(i, _, _)| i)
        .collect()
}

/// Sorted, disjoint `[start, end)` ranges of the stream that repeat an
/// earlier occurrence of at least `min_bytes` bytes.
fn later_repeats(stream: &[u8], min_bytes: usize) -> Result<Vec<(usize, usize)>, CorpusError> {
    let n = stream.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > i32::MAX as usize {
        return Err(CorpusError::TooLarge(n));
    }
    let (sa, mut plcp) = suffix_array_with_plcp(stream)?;

    // Cap each PLCP entry at the distance to the next separator so matches
    // never run through a line boundary.
    let mut next_sep = n;
    for i in (0..n).rev() {
        if stream[i] == DOCUMENT_SEPARATOR {
            next_sep = i;
        }
        let cap = (next_sep - i) as i32;
        if plcp[i] > cap {
            plcp[i] = cap;
        }
    }
    let t = min_bytes as i32;
    let mut flagged = FixedBitSet::with_capacity(n);
    // earliest position of the current run of suffixes sharing a window
    let mut run_min: Option<usize> = None;
    for r in 1..n {
        let (prev, cur) = (sa[r - 1] as usize, sa[r] as usize);
        if plcp[cur] >= t {
            let m = run_min.unwrap_or_else(|| {
                flagged.insert(prev);
                prev
            });
            flagged.insert(cur);
            run_min = Some(m.min(cur));
        } else if let Some(m) = run_min.take() {
            flagged.set(m, false);
        }
    }
    if let Some(m) = run_min {
        flagged.set(m, false);
    }
    drop(sa);
    drop(plcp);

    let mut spans: Vec<(usize, usize)> = Vec::new();
    for i in flagged.ones() {
        match spans.last_mut() {
            Some(last) if i <= last.1 => last.1 = i + min_bytes,
            _ => spans.push((i, i + min_bytes)),
        }
    }
    Ok(spans)
}

fn suffix_array_with_plcp(stream: &[u8]) -> Result<(Vec<i32>, Vec<i32>), CorpusError> {
    let sa = SuffixArrayConstruction::for_text(stream)
        .in_owned_buffer32()
        .single_threaded()
        .run()
        .map_err(|e| CorpusError::SuffixArray(format!("{e:?}")))?;
    let with_plcp = sa
        .plcp_construction()
        .single_threaded()
        .run()
        .map_err(|e| CorpusError::SuffixArray(format!("{e:?}")))?;
    let (sa, plcp, _) = with_plcp.into_parts();
    Ok((sa, plcp))
}

fn is_continuation(b: u8) -> bool {
    b & 0xC0 == 0x80
}

/// The subset lines touched by the spans, after removing the spans widened
/// to char boundaries, with the offsets where bytes were removed from their
/// interior.
fn excise(
    lines: &[Vec<u8>],
    subset: &[usize],
    starts: &[usize],
    spans: &[(usize, usize)],
) -> Vec<(usize, Vec<u8>, Vec<usize>)> {
    let mut out = Vec::new();
    let mut spans = spans.iter().peekable();
    for (k, &idx) in subset.iter().enumerate() {
        let line = &lines[idx];
        let base = starts[k];
        let end_of_line = base + line.len();
        let mut cuts: Vec<(usize, usize)> = Vec::new();
        while let Some(&&(s, e)) = spans.peek() {
            if s >= end_of_line {
                break;
            }
            spans.next();
            let mut a = s - base;
            let mut b = e - base;
            while a > 0 && is_continuation(line[a]) {
                a -= 1;
            }
            while b < line.len() && is_continuation(line[b]) {
                b += 1;
            }
            cuts.push((a, b));
        }
        if cuts.is_empty() {
            continue;
        }
        let mut kept = Vec::with_capacity(line.len());
        let mut joins = Vec::new();
        let mut cursor = 0;
        for (a, b) in cuts {
            if a > cursor {
                kept.extend_from_slice(&line[cursor..a]);
            }
            cursor = cursor.max(b);
            if joins.last() != Some(&kept.len()) {
                joins.push(kept.len());
            }
        }
        if cursor < line.len() {
            kept.extend_from_slice(&line[cursor..]);
        }
        joins.retain(|&j| j > 0 && j < kept.len());
        out.push((idx, kept, joins));
    }
    out
}

const HASH_BASE: u64 = 0x0100_0000_01b3;
/// log2 of the prefilter size in bits.
const FILTER_BITS: u32 = 26;

/// Polynomial hashes of every `w`-byte window of `line`, by start offset.
fn window_hashes(line: &[u8], w: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
    let top = HASH_BASE.wrapping_pow(w as u32 - 1);
    let mut h = 0u64;
    line.iter().enumerate().filter_map(move |(i, &byte)| {
        if i >= w {
            h = h.wrapping_sub(top.wrapping_mul(line[i - w] as u64));
        }
        h = h.wrapping_mul(HASH_BASE).wrapping_add(byte as u64);
        (i + 1 >= w).then(|| (i + 1 - w, h))
    })
}

/// False only if no window crossing a cut can occur twice in the text, in
/// which case a full pass would find nothing. Hash collisions only cost a
/// spare pass.
fn may_repeat_across_cuts(lines: &[Vec<u8>], cuts: &[(usize, Vec<usize>)], w: usize) -> bool {
    let mut spliced: HashMap<u64, u32> = HashMap::new();
    for (i, joins) in cuts {
        let line = &lines[*i];
        if joins.is_empty() || line.len() < w {
            continue;
        }
        let mut joins = joins.iter().peekable();
        for (start, h) in window_hashes(line, w) {
            while joins.next_if(|&&j| j <= start).is_some() {}
            if joins.peek().is_some_and(|&&j| j < start + w) {
                spliced.insert(h, 0);
            }
        }
    }
    if spliced.is_empty() {
        return false;
    }
    let mut filter = FixedBitSet::with_capacity(1 << FILTER_BITS);
    for &h in spliced.keys() {
        filter.insert((h >> (64 - FILTER_BITS)) as usize);
    }
    for line in lines {
        if line.len() < w {
            continue;
        }
        for (_, h) in window_hashes(line, w) {
            if !filter.contains((h >> (64 - FILTER_BITS)) as usize) {
                continue;
            }
            if let Some(count) = spliced.get_mut(&h) {
                *count += 1;
                if *count > 1 {
                    return true;
                }
            }
        }
    }
    false
}
