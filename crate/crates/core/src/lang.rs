//! Language codes and script helpers shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Two-letter lowercase language identifier (`en`, `fr`, `hi`, ...).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LanguageCode([u8; 2]);

impl LanguageCode {
    pub const EN: LanguageCode = LanguageCode(*b"en");
    pub const HI: LanguageCode = LanguageCode(*b"hi");

    pub fn new(code: &str) -> Result<Self> {
        match code.as_bytes() {
            [a, b] if a.is_ascii_lowercase() && b.is_ascii_lowercase() => {
                Ok(LanguageCode([*a, *b]))
            }
            _ => Err(Error::InvalidLanguageCode(code.to_string())),
        }
    }

    pub fn as_str(&self) -> &str {
        // Only ASCII lowercase bytes are ever stored.
        std::str::from_utf8(&self.0).expect("ascii")
    }
}

/// Table ordering used by every report: en, fr, de, hi, it, pt, es.
pub fn default_order() -> Vec<LanguageCode> {
    ["en", "fr", "de", "hi", "it", "pt", "es"]
        .iter()
        .map(|c| LanguageCode::new(c).expect("static code"))
        .collect()
}

/// Sort `langs` by the default table order; unknown codes go last alphabetically.
pub fn sort_by_default_order(langs: &mut [LanguageCode]) {
    let order = default_order();
    langs.sort_by_key(|l| {
        (
            order.iter().position(|o| o == l).unwrap_or(usize::MAX),
            *l,
        )
    });
}

pub fn display_name(lang: LanguageCode) -> &'static str {
    match lang.as_str() {
        "en" => "English",
        "fr" => "French",
        "de" => "German",
        "hi" => "Hindi",
        "it" => "Italian",
        "pt" => "Portuguese",
        "es" => "Spanish",
        "ar" => "Arabic",
        "ja" => "Japanese",
        _ => "",
    }
}

impl FromStr for LanguageCode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LanguageCode::new(s)
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_str())
    }
}

impl Serialize for LanguageCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LanguageCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        LanguageCode::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Writing system a language is expected to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Script {
    Latin,
    Devanagari,
    Other,
}

pub fn char_script(c: char) -> Script {
    match c as u32 {
        0x0900..=0x097F | 0xA8E0..=0xA8FF => Script::Devanagari,
        0x0041..=0x005A | 0x0061..=0x007A | 0x00C0..=0x024F | 0x1E00..=0x1EFF => Script::Latin,
        _ => Script::Other,
    }
}

pub fn expected_script(lang: LanguageCode) -> Script {
    match lang.as_str() {
        "hi" | "mr" | "ne" => Script::Devanagari,
        "ar" | "ja" | "zh" | "ru" | "ko" | "el" | "he" => Script::Other,
        _ => Script::Latin,
    }
}

/// Fraction of letters written in Devanagari; `None` if there are no letters.
pub fn devanagari_share(text: &str) -> Option<f64> {
    script_share(text, Script::Devanagari)
}

/// Share of letters in `text` that belong to `script`.
pub fn script_share(text: &str, script: Script) -> Option<f64> {
    let mut letters = 0usize;
    let mut hits = 0usize;
    for c in text.chars() {
        let s = char_script(c);
        // Devanagari vowel signs are marks, not alphabetic, but still belong to the script.
        if c.is_alphabetic() || s == Script::Devanagari {
            letters += 1;
            if s == script {
                hits += 1;
            }
        }
    }
    (letters > 0).then(|| hits as f64 / letters as f64)
}
