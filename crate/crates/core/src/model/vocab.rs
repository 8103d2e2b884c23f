use crate::error::{Error, Result};
use crate::scene::COMMAND_WORDS;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Fixed command vocabulary: four special tokens followed by the 16 words.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        let words = SPECIALS
            .iter()
            .chain(COMMAND_WORDS.iter())
            .map(|w| w.to_string())
            .collect();
        Self { words }
    }
}

/// Token ids padded to a fixed length, with `keep[i]` false on padding.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTokens {
    pub ids: Vec<usize>,
    pub keep: Vec<bool>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.words
            .iter()
            .skip(SPECIALS.len())
            .position(|w| w == word)
            .map_or(UNK, |i| i + SPECIALS.len())
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// `[BOS, words..., EOS]` padded with PAD to `max_len`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<TextTokens> {
        let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        if words.is_empty() {
            return Err(Error::Input("empty command text".into()));
        }
        if words.len() + 2 > max_len {
            return Err(Error::Input(format!(
                "command has {} words; at most {} fit with BOS/EOS",
                words.len(),
                max_len.saturating_sub(2)
            )));
        }
        let mut ids = vec![BOS];
        ids.extend(words.iter().map(|w| self.id(w)));
        ids.push(EOS);
        let used = ids.len();
        ids.resize(max_len, PAD);
        let keep = (0..max_len).map(|i| i < used).collect();
        Ok(TextTokens { ids, keep })
    }

    /// One word per line; the line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let words: Vec<String> = text.lines().map(str::to_string).collect();
        let vocab = Self { words };
        if vocab != Self::default() {
            return Err(Error::parse("vocab", "does not match the built-in command vocabulary"));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_and_bijective() {
        let v = Vocab::default();
        assert_eq!(v.len(), 20);
        for id in SPECIALS.len()..v.len() {
            assert_eq!(v.id(v.word(id).unwrap()), id);
        }
    }

    #[test]
    fn tokenizes_with_bos_eos_and_padding() {
        let v = Vocab::default();
        let t = v.tokenize("stop ahead pedestrian", 8).unwrap();
        let expect: Vec<usize> = vec![BOS, v.id("stop"), v.id("ahead"), v.id("pedestrian"), EOS, PAD, PAD, PAD];
        assert_eq!(t.ids, expect);
        assert_eq!(t.keep, vec![true, true, true, true, true, false, false, false]);
        assert_eq!(v.tokenize("zebra", 8).unwrap().ids[1], UNK);
        assert!(v.tokenize("   ", 8).is_err());
        assert!(v.tokenize("a b c d e f g", 8).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocab::default();
        assert_eq!(Vocab::from_file_str(&v.to_file_string()).unwrap(), v);
        assert!(Vocab::from_file_str("<pad>\n").is_err());
    }
}
