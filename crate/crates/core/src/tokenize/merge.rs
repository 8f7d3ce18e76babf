use std::path::Path;

use super::{file, TokenizeError, Tokenizer, NUM_SPECIALS};

/// Target tokenizer plus a multilingual tokenizer whose ids are remapped so
/// that every string shared with the target uses the target's id. Strings
/// unique to `added` get ids after the target's, in added-id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedTokenizer {
    target: Tokenizer,
    added: Tokenizer,
    remap: Vec<u32>,
    /// Byte strings of the novel ids, in order.
    novel: Vec<Vec<u8>>,
}

pub fn merge_tokenizers(target: &Tokenizer, added: &Tokenizer) -> MergedTokenizer {
    let mut remap = Vec::with_capacity(added.num_ids());
    let mut novel = Vec::new();
    remap.extend(0..NUM_SPECIALS);
    for (_, bytes) in added.token_strings() {
        match target.id_of(bytes) {
            Some(id) => remap.push(id),
            None => {
                remap.push((target.num_ids() + novel.len()) as u32);
                novel.push(bytes.to_vec());
            }
        }
    }
    MergedTokenizer {
        target: target.clone(),
        added: added.clone(),
        remap,
        novel,
    }
}

/// Routing is by provenance: target-language text always goes through the
/// target tokenizer unchanged.
pub fn encode_routed(m: &MergedTokenizer, text: &str, source_is_target: bool) -> Vec<u32> {
    if source_is_target {
        m.target.encode(text)
    } else {
        m.remap_ids(&m.added.encode(text))
    }
}

impl MergedTokenizer {
    pub fn target(&self) -> &Tokenizer {
        &self.target
    }

    pub fn added(&self) -> &Tokenizer {
        &self.added
    }

    pub fn remap(&self) -> &[u32] {
        &self.remap
    }

    /// Token strings in the merged vocabulary (specials excluded).
    pub fn merged_vocab_size(&self) -> usize {
        self.target.vocab_size() + self.novel.len()
    }

    /// Embedding rows a model over the merged ids needs.
    pub fn num_ids(&self) -> usize {
        self.target.num_ids() + self.novel.len()
    }

    pub fn remap_ids(&self, ids: &[u32]) -> Vec<u32> {
        ids.iter().map(|&i| self.remap[i as usize]).collect()
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        let t = self.target.num_ids() as u32;
        if id < t {
            self.target.token_bytes(id)
        } else {
            self.novel.get((id - t) as usize).map(Vec::as_slice)
        }
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = Vec::new();
        for &id in ids {
            if let Some(b) = self.token_bytes(id) {
                out.extend_from_slice(b);
            }
        }
        String::from_utf8_lossy(&out).into_owned()
    }

    /// Evaluation on target text is comparable with the monolingual
    /// tokenizer, so the merged tokenizer reports the target's digest.
    pub fn digest(&self) -> String {
        self.target.digest()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::from("lingolab-merged 1\n[target]\n");
        s.push_str(&self.target.to_vocab_string());
        s.push_str("[added]\n");
        s.push_str(&self.added.to_vocab_string());
        s.push_str("[remap]\n");
        for (from, to) in self.remap.iter().enumerate() {
            s.push_str(&format!("{from}\t{to}\n"));
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self, TokenizeError> {
        let err = |line: usize, msg: &str| TokenizeError::Parse {
            line,
            msg: msg.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&"lingolab-merged 1") {
            return Err(err(1, "missing merged tokenizer header"));
        }
        let find = |name: &str| {
            lines
                .iter()
                .position(|l| *l == name)
                .ok_or_else(|| err(0, &format!("missing section {name}")))
        };
        let (t, a, r) = (find("[target]")?, find("[added]")?, find("[remap]")?);
        if !(t < a && a < r) {
            return Err(err(t + 1, "sections out of order"));
        }
        let section = |from: usize, to: usize| lines[from + 1..to].join("\n") + "\n";
        let target = file::parse_vocab(&section(t, a), t + 1)?;
        let added = file::parse_vocab(&section(a, r), a + 1)?;
        let merged = merge_tokenizers(&target, &added);
        for (k, line) in lines[r + 1..].iter().enumerate() {
            let lineno = r + 2 + k;
            let (from, to) = line.split_once('\t').ok_or_else(|| err(lineno, "expected two fields"))?;
            let from: usize = from.parse().map_err(|_| err(lineno, "bad id"))?;
            let to: u32 = to.parse().map_err(|_| err(lineno, "bad id"))?;
            if merged.remap.get(from) != Some(&to) {
                return Err(err(lineno, "remap entry disagrees with the vocabularies"));
            }
        }
        if lines.len() - r - 1 != merged.remap.len() {
            return Err(err(lines.len(), "remap table has the wrong length"));
        }
        Ok(merged)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizeError> {
        Self::from_file_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{train_tokenizer, vocab_overlap};
    use proptest::prelude::*;

    fn tok(v: &[&str], n: usize) -> Tokenizer {
        let lines: Vec<String> = v.iter().map(|s| s.to_string()).collect();
        train_tokenizer(&lines, n).unwrap()
    }

    fn pair() -> (Tokenizer, Tokenizer) {
        (
            tok(&["hola amigo hola casa", "la casa grande", "hola hola"], 340),
            tok(&["ola amigo ola casa", "hola mundo hola", "hola ciao ciao"], 360),
        )
    }

    #[test]
    fn self_merge_is_identity() {
        let (t, _) = pair();
        let m = merge_tokenizers(&t, &t);
        assert_eq!(m.merged_vocab_size(), t.vocab_size());
        assert!(m.remap().iter().enumerate().all(|(i, &j)| i as u32 == j));
    }

    #[test]
    fn size_identity() {
        let (t, a) = pair();
        let m = merge_tokenizers(&t, &a);
        assert_eq!(
            m.merged_vocab_size(),
            t.vocab_size() + a.vocab_size() - vocab_overlap(&t, &a)
        );
        for (id, bytes) in a.token_strings() {
            if let Some(tid) = t.id_of(bytes) {
                assert_eq!(m.remap()[id as usize], tid);
            }
        }
    }

    #[test]
    fn disjoint_merge_size() {
        let t = tok(&["abc abc abd abd"; 10], 300 + 20);
        let a = tok(&["где где дом дом"; 10], 300 + 20);
        let m = merge_tokenizers(&t, &a);
        assert_eq!(m.merged_vocab_size(), t.vocab_size() + a.vocab_size() - 256);
    }

    #[test]
    fn shared_token_routes_to_target_id() {
        let (t, a) = pair();
        let m = merge_tokenizers(&t, &a);
        let hola_t = t.encode("hola");
        assert_eq!(hola_t.len(), 1);
        assert_eq!(a.encode("hola").len(), 1);
        assert_ne!(a.encode("hola"), hola_t, "fixture should need remapping");
        assert_eq!(encode_routed(&m, "hola", true), hola_t);
        assert_eq!(encode_routed(&m, "hola", false), hola_t);
    }

    #[test]
    fn file_round_trip() {
        let (t, a) = pair();
        let m = merge_tokenizers(&t, &a);
        let text = m.to_file_string();
        let back = MergedTokenizer::from_file_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_file_string(), text);
        let corrupted = text.replacen("[remap]\n0\t0", "[remap]\n0\t1", 1);
        assert!(MergedTokenizer::from_file_str(&corrupted).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn routes_round_trip(s in "\\PC*") {
            let (t, a) = pair();
            let m = merge_tokenizers(&t, &a);
            prop_assert_eq!(encode_routed(&m, &s, true), t.encode(&s));
            prop_assert_eq!(m.decode(&encode_routed(&m, &s, true)), s.clone());
            prop_assert_eq!(m.decode(&encode_routed(&m, &s, false)), s);
        }
    }
}
