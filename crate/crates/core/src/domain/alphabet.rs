use crate::error::{FssError, Result};

/// The fixed fingerspelling symbol set: 26 letters, five punctuation
/// symbols, then the non-fingerspelling marker `<x>` and the CTC blank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Alphabet;

const CHARS: [char; 31] = [
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R',
    'S', 'T', 'U', 'V', 'W', 'X', 'Y', 'Z', ' ', '\'', '&', '.', '@',
];

impl Alphabet {
    /// Number of real characters.
    pub const N_CHARS: usize = CHARS.len();
    /// Index of the non-fingerspelling symbol `<x>`.
    pub const X: usize = CHARS.len();
    /// Index of the CTC blank.
    pub const BLANK: usize = CHARS.len() + 1;
    /// Characters plus `<x>` and blank.
    pub const N_LABELS: usize = CHARS.len() + 2;

    pub fn chars() -> &'static [char] {
        &CHARS
    }

    /// Index of `c`; lowercase ASCII letters map to their uppercase symbol.
    pub fn index(c: char) -> Option<usize> {
        let c = c.to_ascii_uppercase();
        CHARS.iter().position(|&x| x == c)
    }

    pub fn symbol(i: usize) -> Option<char> {
        CHARS.get(i).copied()
    }

    pub fn encode(text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| Self::index(c).ok_or(FssError::UnknownSymbol(c)))
            .collect()
    }

    /// Renders labels, writing `<x>` for the marker and skipping blanks.
    pub fn decode(labels: &[usize]) -> String {
        let mut out = String::new();
        for &l in labels {
            match l {
                Self::X => out.push_str("<x>"),
                Self::BLANK => {}
                _ => out.push(CHARS[l]),
            }
        }
        out
    }

    pub fn label_name(i: usize) -> String {
        match i {
            Self::X => "<x>".into(),
            Self::BLANK => "<blank>".into(),
            _ => CHARS[i].to_string(),
        }
    }
}
