//! Vocabulary file: a header line, then one token per line as
//! `escaped<TAB>id<TAB>rank`, with `<TAB>left<TAB>right` appended for merged
//! tokens. Rank is the merge order (1-based); base tokens have rank 0.
//! Printable ASCII other than `\` is literal, everything else is `\xHH`, and
//! specials are written `\s{NAME}`.

use super::{TokenizeError, Tokenizer, BYTE_OFFSET, FIRST_MERGE_ID, NUM_SPECIALS, SPECIAL_NAMES};

const HEADER: &str = "lingolab-vocab 1";

pub(crate) fn write_vocab(tok: &Tokenizer) -> String {
    let mut s = format!("{HEADER} max_vocab={}\n", tok.max_vocab);
    for (id, name) in SPECIAL_NAMES.iter().enumerate() {
        s.push_str(&format!("\\s{{{name}}}\t{id}\t0\n"));
    }
    for (id, bytes) in tok.token_strings() {
        s.push_str(&escape(bytes));
        if id < FIRST_MERGE_ID {
            s.push_str(&format!("\t{id}\t0\n"));
        } else {
            let rank = id - FIRST_MERGE_ID;
            let (l, r) = tok.merges[rank as usize];
            s.push_str(&format!("\t{id}\t{}\t{l}\t{r}\n", rank + 1));
        }
    }
    s
}

fn escape(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => s.push_str("\\\\"),
            0x21..=0x7E => s.push(b as char),
            _ => s.push_str(&format!("\\x{b:02x}")),
        }
    }
    s
}

fn unescape(s: &str) -> Option<Vec<u8>> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        match bytes.get(i + 1)? {
            b'\\' => {
                out.push(b'\\');
                i += 2;
            }
            b'x' => {
                let hex = s.get(i + 2..i + 4)?;
                out.push(u8::from_str_radix(hex, 16).ok()?);
                i += 4;
            }
            _ => return None,
        }
    }
    Some(out)
}

/// `first_line` offsets reported line numbers when the vocabulary is a
/// section of a larger file.
pub(crate) fn parse_vocab(text: &str, first_line: usize) -> Result<Tokenizer, TokenizeError> {
    let err = |k: usize, msg: &str| TokenizeError::Parse {
        line: first_line + k + 1,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(0, "empty vocabulary file"))?;
    let max_vocab: usize = header
        .strip_prefix(HEADER)
        .and_then(|rest| rest.trim().strip_prefix("max_vocab="))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| err(0, "bad header"))?;
    let mut tok = Tokenizer::base(max_vocab);
    for (k, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 && fields.len() != 5 {
            return Err(err(k, "expected 3 or 5 tab-separated fields"));
        }
        let id: u32 = fields[1].parse().map_err(|_| err(k, "bad id"))?;
        let rank: u32 = fields[2].parse().map_err(|_| err(k, "bad rank"))?;
        let expected_id = (k - 1) as u32;
        if id != expected_id {
            return Err(err(k, "ids must be dense and ascending"));
        }
        if id < NUM_SPECIALS {
            let name = SPECIAL_NAMES[id as usize];
            if fields[0] != format!("\\s{{{name}}}") || fields.len() != 3 || rank != 0 {
                return Err(err(k, "bad special token"));
            }
            continue;
        }
        let bytes = unescape(fields[0]).ok_or_else(|| err(k, "bad escape"))?;
        if id < FIRST_MERGE_ID {
            if bytes != [(id - BYTE_OFFSET) as u8] || fields.len() != 3 || rank != 0 {
                return Err(err(k, "bad byte token"));
            }
            continue;
        }
        if fields.len() != 5 || rank != id - FIRST_MERGE_ID + 1 {
            return Err(err(k, "merged token needs rank, left and right"));
        }
        let l: u32 = fields[3].parse().map_err(|_| err(k, "bad left id"))?;
        let r: u32 = fields[4].parse().map_err(|_| err(k, "bad right id"))?;
        if l >= id || r >= id || l < NUM_SPECIALS || r < NUM_SPECIALS {
            return Err(err(k, "merge refers to an unknown id"));
        }
        if tok.id_of(&bytes).is_some() {
            return Err(err(k, "duplicate token string"));
        }
        let got = tok.push_merge(l, r);
        if tok.tokens[got as usize] != bytes {
            return Err(err(k, "token string does not match its merge"));
        }
    }
    if tok.num_ids() > max_vocab.max(FIRST_MERGE_ID as usize) {
        return Err(err(0, "more tokens than max_vocab"));
    }
    Ok(tok)
}
