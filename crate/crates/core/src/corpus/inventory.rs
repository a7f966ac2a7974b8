use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ordered phoneme alphabet plus the four special tokens.
///
/// Token indices: symbols occupy `0..n`, then blank `n`, sos `n+1`,
/// eos `n+2`, pad `n+3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    special_names: [String; 4],
}

/// Token indices into a [`PhonemeInventory`]'s symbol range.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PhonemeSequence(pub Vec<usize>);

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for PhonemeSequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

const DEFAULT_SPECIALS: [&str; 4] = ["<blank>", "<sos>", "<eos>", "<pad>"];

impl PhonemeInventory {
    pub fn new<S: AsRef<str>>(symbols: &[S]) -> Result<Self> {
        Self::with_specials(symbols, DEFAULT_SPECIALS)
    }

    pub fn with_specials<S: AsRef<str>>(symbols: &[S], specials: [&str; 4]) -> Result<Self> {
        let mut index = HashMap::new();
        let mut syms = Vec::with_capacity(symbols.len());
        for s in symbols {
            let s = s.as_ref().trim();
            if s.is_empty() || s.contains(char::is_whitespace) {
                return Err(Error::Validation(format!("bad phoneme symbol {s:?}")));
            }
            if index.insert(s.to_string(), syms.len()).is_some() {
                return Err(Error::Validation(format!("duplicate phoneme symbol {s:?}")));
            }
            syms.push(s.to_string());
        }
        for (i, sp) in specials.iter().enumerate() {
            if index.contains_key(*sp) {
                return Err(Error::Validation(format!("special token {sp:?} is also a symbol")));
            }
            if specials[..i].contains(sp) {
                return Err(Error::Validation(format!("special token {sp:?} declared twice")));
            }
        }
        if syms.is_empty() {
            return Err(Error::Validation("inventory has no symbols".into()));
        }
        Ok(Self {
            symbols: syms,
            index,
            special_names: specials.map(str::to_string),
        })
    }

    /// Parses the inventory file: a `#specials blank sos eos pad` header
    /// followed by one symbol per line. Other `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut specials: Option<Vec<String>> = None;
        let mut symbols = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#specials") {
                let names: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
                if names.len() != 4 {
                    return Err(Error::Validation(
                        "#specials header needs exactly: blank sos eos pad".into(),
                    ));
                }
                specials = Some(names);
            } else if !line.starts_with('#') {
                symbols.push(line.to_string());
            }
        }
        match specials {
            Some(n) => Self::with_specials(&symbols, [&n[0], &n[1], &n[2], &n[3]]),
            None => Self::new(&symbols),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#specials {}\n", self.special_names.join(" "));
        for s in &self.symbols {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    /// Symbols plus specials.
    pub fn vocab_size(&self) -> usize {
        self.symbols.len() + 4
    }

    pub fn blank(&self) -> usize {
        self.symbols.len()
    }

    pub fn sos(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn eos(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn pad(&self) -> usize {
        self.symbols.len() + 3
    }

    pub fn symbol_index(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn symbol(&self, idx: usize) -> Option<&str> {
        self.symbols.get(idx).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, syms: &[S]) -> Result<PhonemeSequence> {
        syms.iter()
            .map(|s| {
                self.symbol_index(s.as_ref())
                    .ok_or_else(|| Error::Validation(format!("unknown phoneme {:?}", s.as_ref())))
            })
            .collect::<Result<Vec<_>>>()
            .map(PhonemeSequence)
    }

    pub fn decode(&self, seq: &PhonemeSequence) -> Vec<&str> {
        seq.0.iter().map(|&i| self.symbol(i).unwrap_or("<unk>")).collect()
    }

    pub fn check(&self, seq: &PhonemeSequence) -> Result<()> {
        match seq.0.iter().find(|&&i| i >= self.n_symbols()) {
            Some(i) => Err(Error::InvalidInput(format!("token {i} outside the symbol range"))),
            None => Ok(()),
        }
    }

    /// Stable digest binding checkpoints to an inventory.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_text_round_trip() {
        let inv = PhonemeInventory::new(&["a", "b", "sil"]).unwrap();
        assert_eq!((inv.blank(), inv.sos(), inv.eos(), inv.pad()), (3, 4, 5, 6));
        let again = PhonemeInventory::parse(&inv.to_text()).unwrap();
        assert_eq!(inv, again);
        assert_eq!(inv.hash(), again.hash());
        let seq = inv.encode(&["b", "sil", "a"]).unwrap();
        assert_eq!(seq.0, vec![1, 2, 0]);
        assert_eq!(inv.decode(&seq), vec!["b", "sil", "a"]);
    }

    #[test]
    fn rejects_duplicates_and_clashing_specials() {
        assert!(PhonemeInventory::new(&["a", "a"]).is_err());
        assert!(PhonemeInventory::new(&["a", "<eos>"]).is_err());
        let text = "#specials _ ^ $ ~\nx\ny\n";
        let inv = PhonemeInventory::parse(text).unwrap();
        assert_eq!(inv.n_symbols(), 2);
        assert!(PhonemeInventory::parse("#specials _ ^ $\nx\n").is_err());
    }
}
