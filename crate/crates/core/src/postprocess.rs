//! Language-specific punctuation for translation output.
//!
//! cs/de/is: straight double quotes become German-style pairs („…“).
//! zh/ja: ASCII punctuation becomes its full-width form, and spaces right
//! after a converted mark are removed.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuoteStyle {
    GermanDouble,
    None,
}

pub const GERMAN_OPEN: char = '\u{201E}';
pub const GERMAN_CLOSE: char = '\u{201C}';

const CJK_RULES: &[(char, char)] = &[
    (',', '\u{FF0C}'),
    ('.', '\u{3002}'),
    ('?', '\u{FF1F}'),
    ('!', '\u{FF01}'),
    (':', '\u{FF1A}'),
    (';', '\u{FF1B}'),
    ('(', '\u{FF08}'),
    (')', '\u{FF09}'),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PunctTable {
    pub lang: String,
    pub rules: Vec<(char, char)>,
    pub quote_style: QuoteStyle,
}

impl PunctTable {
    pub fn for_lang(lang: &str) -> Self {
        let (rules, quote_style) = match lang {
            "cs" | "de" | "is" => (Vec::new(), QuoteStyle::GermanDouble),
            "zh" | "ja" => (CJK_RULES.to_vec(), QuoteStyle::None),
            _ => (Vec::new(), QuoteStyle::None),
        };
        Self {
            lang: lang.to_string(),
            rules,
            quote_style,
        }
    }

    pub fn is_passthrough(&self) -> bool {
        self.rules.is_empty() && self.quote_style == QuoteStyle::None
    }

    /// `from<TAB>to<TAB>condition` rows with `U+XXXX` codepoints.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("from\tto\tcondition\n");
        if self.quote_style == QuoteStyle::GermanDouble {
            let _ = writeln!(out, "U+0022\tU+{:04X}\topening quote", GERMAN_OPEN as u32);
            let _ = writeln!(out, "U+0022\tU+{:04X}\tclosing quote", GERMAN_CLOSE as u32);
        }
        for &(from, to) in &self.rules {
            let cond = if from == '.' {
                "before whitespace or end of line, not between digits"
            } else {
                "always"
            };
            let _ = writeln!(out, "U+{:04X}\tU+{:04X}\t{cond}", from as u32, to as u32);
        }
        out
    }

    pub fn apply(&self, text: &str) -> String {
        let quoted = match self.quote_style {
            QuoteStyle::GermanDouble => german_quotes(text),
            QuoteStyle::None => text.to_string(),
        };
        if self.rules.is_empty() {
            quoted
        } else {
            self.full_width(&quoted)
        }
    }

    fn full_width(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len() + 8);
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let mapped = self
                .rules
                .iter()
                .find(|(from, _)| *from == c)
                .map(|&(_, to)| to)
                .filter(|_| c != '.' || is_sentence_period(&chars, i));
            match mapped {
                Some(to) => {
                    out.push(to);
                    i += 1;
                    while chars.get(i) == Some(&' ') {
                        i += 1;
                    }
                }
                None => {
                    out.push(c);
                    i += 1;
                }
            }
        }
        out
    }
}

fn is_sentence_period(chars: &[char], i: usize) -> bool {
    let prev = i.checked_sub(1).map(|p| chars[p]);
    let next = chars.get(i + 1).copied();
    let decimal =
        prev.is_some_and(|c| c.is_ascii_digit()) && next.is_some_and(|c| c.is_ascii_digit());
    !decimal && next.is_none_or(char::is_whitespace)
}

/// Pairs straight double quotes left to right; an unmatched last quote is
/// left as is.
fn german_quotes(text: &str) -> String {
    let total = text.matches('"').count();
    let convertible = total - total % 2;
    let mut seen = 0;
    text.chars()
        .map(|c| {
            if c != '"' || seen >= convertible {
                return c;
            }
            seen += 1;
            if seen % 2 == 1 {
                GERMAN_OPEN
            } else {
                GERMAN_CLOSE
            }
        })
        .collect()
}

/// Applies the punctuation conventions of `lang`; unknown languages pass
/// through unchanged.
pub fn postprocess(text: &str, lang: &str) -> String {
    PunctTable::for_lang(lang).apply(text)
}
