//! Word-level tokenizer and vocabulary.
//!
//! Text is split on whitespace; `. , ? ! : ;` and the possessive `'s` are
//! split off as their own tokens, and a line break is the token `"\n"`.
//! Decoding joins with single spaces and reattaches punctuation to the left,
//! which inverts encoding on canonically spaced text.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::render::Passage;
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const NEWLINE: &str = "\n";

const PUNCT: [char; 6] = ['.', ',', '?', '!', ':', ';'];
const POSSESSIVE: &str = "'s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
    pub unk: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    special: SpecialIds,
    index: BTreeMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    special: SpecialIds,
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = String;

    fn try_from(f: VocabFile) -> std::result::Result<Self, String> {
        Vocabulary::from_tokens(f.tokens, f.special).map_err(|e| e.to_string())
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            tokens: v.tokens,
            special: v.special,
        }
    }
}

/// Splits text into word-level pieces.
pub fn pretokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (li, line) in text.split('\n').enumerate() {
        if li > 0 {
            out.push(NEWLINE.to_string());
        }
        for chunk in line.split_whitespace() {
            split_chunk(chunk, &mut out);
        }
    }
    out
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let mut word = String::new();
    let mut chars = chunk.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if PUNCT.contains(&c) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(c.to_string());
        } else if c == '\'' && chunk[i..].starts_with(POSSESSIVE) && !word.is_empty() {
            let next_is_boundary = chunk[i + POSSESSIVE.len()..]
                .chars()
                .next()
                .is_none_or(|n| PUNCT.contains(&n));
            if next_is_boundary {
                out.push(std::mem::take(&mut word));
                out.push(POSSESSIVE.to_string());
                chars.next();
            } else {
                word.push(c);
            }
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
}

fn attaches_left(tok: &str) -> bool {
    tok == POSSESSIVE || (tok.len() == 1 && tok.chars().all(|c| PUNCT.contains(&c)))
}

/// Joins pieces back into text.
pub fn detokenize<S: AsRef<str>>(pieces: &[S]) -> String {
    let mut out = String::new();
    let mut at_line_start = true;
    for p in pieces {
        let p = p.as_ref();
        if p == NEWLINE {
            out.push('\n');
            at_line_start = true;
            continue;
        }
        if !at_line_start && !attaches_left(p) {
            out.push(' ');
        }
        out.push_str(p);
        at_line_start = false;
    }
    out
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>, special: SpecialIds) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        for id in [special.pad, special.bos, special.eos, special.unk] {
            if id as usize >= tokens.len() {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: tokens.len(),
                });
            }
        }
        Ok(Vocabulary {
            tokens,
            special,
            index,
        })
    }

    /// Specials first (`<pad>`=0, `<bos>`=1, `<eos>`=2, `<unk>`=3), then the
    /// newline token, then every observed piece in sorted order.
    pub fn build(corpora: &[Passage], extra_text: &[String]) -> Result<Self> {
        if corpora.is_empty() {
            return Err(Error::Empty("vocabulary corpora"));
        }
        let mut seen = BTreeSet::new();
        for text in corpora.iter().map(|p| p.text.as_str()).chain(extra_text.iter().map(String::as_str)) {
            seen.extend(pretokenize(text));
        }
        let mut tokens: Vec<String> = [PAD, BOS, EOS, UNK, NEWLINE].iter().map(|s| s.to_string()).collect();
        tokens.extend(seen.into_iter().filter(|t| t != NEWLINE));
        Self::from_tokens(
            tokens,
            SpecialIds {
                pad: 0,
                bos: 1,
                eos: 2,
                unk: 3,
            },
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn newline(&self) -> Option<u32> {
        self.id(NEWLINE)
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange {
                id,
                size: self.tokens.len(),
            })
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Unseen pieces map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        pretokenize(text)
            .iter()
            .map(|p| self.id(p).unwrap_or(self.special.unk))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let pieces = ids.iter().map(|&i| self.token(i)).collect::<Result<Vec<_>>>()?;
        Ok(detokenize(&pieces))
    }

    /// Encodes a training sequence as `<bos> text <eos>`.
    pub fn encode_sequence(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::with_capacity(text.len() / 4 + 2);
        ids.push(self.special.bos);
        ids.extend(self.encode(text));
        ids.push(self.special.eos);
        ids
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_builtin_facts, render_narrative};
    use proptest::prelude::*;

    fn narrative_vocab() -> Vocabulary {
        let ps = render_narrative(&load_builtin_facts(), 0).unwrap();
        Vocabulary::build(&ps, &["Copperton is colored in green.".to_string()]).unwrap()
    }

    #[test]
    fn round_trip_sentence() {
        let v = narrative_vocab();
        let s = "Copperton is colored in green.";
        let ids = v.encode(s);
        assert!(!ids.contains(&v.special().unk));
        assert_eq!(v.decode(&ids).unwrap(), s);
    }

    #[test]
    fn multiword_entity_and_possessive() {
        assert_eq!(pretokenize("king snake"), vec!["king", "snake"]);
        assert_eq!(
            pretokenize("Andoria's capital city is Copperton."),
            vec!["Andoria", "'s", "capital", "city", "is", "Copperton", "."]
        );
        assert_eq!(
            pretokenize("A. Copperton B. Salton Answer: B\nnext"),
            vec!["A", ".", "Copperton", "B", ".", "Salton", "Answer", ":", "B", "\n", "next"]
        );
    }

    #[test]
    fn vocabulary_contains_all_cities() {
        let v = narrative_vocab();
        for (_, city) in crate::corpus::facts::BUILTIN_CAPITALS {
            assert!(v.contains(city), "{city}");
        }
        assert_eq!(v.id(PAD), Some(0));
        assert_eq!(v.id(BOS), Some(1));
        assert_eq!(v.id(EOS), Some(2));
        assert_eq!(v.id(UNK), Some(3));
    }

    #[test]
    fn unknown_maps_to_unk_and_bad_id_errors() {
        let v = narrative_vocab();
        assert_eq!(v.encode("Zanzibar"), vec![v.special().unk]);
        assert!(matches!(
            v.decode(&[v.len() as u32]),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn build_requires_corpus() {
        assert!(Vocabulary::build(&[], &[]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let v = narrative_vocab();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        let json: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!(json["tokens"].is_array());
        assert_eq!(json["special"]["bos"], 1);
    }

    fn canonical_line() -> impl Strategy<Value = String> {
        let word = "[A-Za-z][a-z]{0,7}";
        let suffix = prop_oneof![Just(""), Just("."), Just(","), Just("?"), Just(":"), Just("'s")];
        prop::collection::vec((word, suffix), 1..8).prop_map(|ws| {
            ws.into_iter()
                .map(|(w, s)| format!("{w}{s}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
    }

    proptest! {
        #[test]
        fn detokenize_inverts_pretokenize(lines in prop::collection::vec(canonical_line(), 1..4)) {
            let text = lines.join("\n");
            prop_assert_eq!(detokenize(&pretokenize(&text)), text);
        }
    }
}
