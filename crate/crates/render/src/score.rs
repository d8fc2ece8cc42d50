//! A crude syllable plan derived from sentence text: one syllable per vowel
//! group, a falling declination line and an accent on word-initial
//! syllables.

use serde::{Deserialize, Serialize};

use crate::error::{RenderError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VowelClass {
    A,
    E,
    I,
    O,
    U,
}

impl VowelClass {
    fn of(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'a' => Some(VowelClass::A),
            'e' => Some(VowelClass::E),
            'i' | 'y' => Some(VowelClass::I),
            'o' => Some(VowelClass::O),
            'u' => Some(VowelClass::U),
            _ => None,
        }
    }

    /// First three formant frequencies in Hz.
    pub fn formants(self) -> [f64; 3] {
        match self {
            VowelClass::A => [730.0, 1090.0, 2440.0],
            VowelClass::E => [530.0, 1840.0, 2480.0],
            VowelClass::I => [270.0, 2290.0, 3010.0],
            VowelClass::O => [570.0, 840.0, 2410.0],
            VowelClass::U => [300.0, 870.0, 2240.0],
        }
    }
}

pub const FORMANT_BANDWIDTHS: [f64; 3] = [60.0, 90.0, 120.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Syllable {
    /// Seconds at rate 1.
    pub base_duration: f64,
    /// Semitones relative to the speaker's mean F0.
    pub base_pitch_offset: f64,
    pub vowel: VowelClass,
    pub word_initial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub sentence_id: String,
    pub syllables: Vec<Syllable>,
}

const SYLLABLE_SECS: f64 = 0.16;
const ACCENTED_SECS: f64 = 0.20;
const FINAL_LENGTHENING: f64 = 1.3;
const DECLINATION_ST: f64 = 2.0;
const ACCENT_ST: f64 = 1.5;

impl SentenceScore {
    pub fn from_text(text: &str) -> Result<Self> {
        let words: Vec<Vec<VowelClass>> = text
            .split_whitespace()
            .map(|w| w.chars().filter(|c| c.is_ascii_alphabetic()).collect::<String>())
            .filter(|w| !w.is_empty())
            .map(|w| {
                let mut groups = Vec::new();
                let mut in_vowel = false;
                for c in w.chars() {
                    match VowelClass::of(c) {
                        Some(v) if !in_vowel => {
                            groups.push(v);
                            in_vowel = true;
                        }
                        Some(_) => {}
                        None => in_vowel = false,
                    }
                }
                if groups.is_empty() {
                    groups.push(VowelClass::E);
                }
                groups
            })
            .collect();
        let n: usize = words.iter().map(Vec::len).sum();
        if n == 0 {
            return Err(RenderError::EmptySentence(text.to_string()));
        }
        let mut syllables = Vec::with_capacity(n);
        for (wi, word) in words.iter().enumerate() {
            let last_word = wi + 1 == words.len();
            for (si, &vowel) in word.iter().enumerate() {
                let idx = syllables.len();
                let frac = if n > 1 { idx as f64 / (n - 1) as f64 } else { 0.5 };
                let word_initial = si == 0;
                let mut base_duration = if word_initial { ACCENTED_SECS } else { SYLLABLE_SECS };
                if last_word {
                    base_duration *= FINAL_LENGTHENING;
                }
                let accent = if word_initial { ACCENT_ST } else { 0.0 };
                syllables.push(Syllable {
                    base_duration,
                    base_pitch_offset: DECLINATION_ST * (1.0 - 2.0 * frac) + accent,
                    vowel,
                    word_initial,
                });
            }
        }
        Ok(SentenceScore {
            sentence_id: text.to_string(),
            syllables,
        })
    }
}
