//! Rule-based sentence segmentation and the synthetic query quality filters.
//!
//! The segmenter splits after `.`, `!` or `?` (plus any closing quotes or
//! brackets) when the next character is whitespace or the end of the text.
//! A period directly after a listed abbreviation, or after a single-letter
//! initial, is not a boundary. Fragments shorter than
//! [`SegmenterConfig::min_sentence_chars`] are merged into the previous
//! sentence.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{QueryKind, SyntheticQuery};

const ABBREV_EN: &str = include_str!("../data/abbrev_en.txt");
const ABBREV_DE: &str = include_str!("../data/abbrev_de.txt");

#[derive(Debug, Error)]
pub enum TextError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("abbreviation list line {line}: {reason} ({entry:?})")]
    InvalidAbbreviation {
        line: usize,
        entry: String,
        reason: &'static str,
    },
    #[error("minimum sentence length must be positive")]
    ZeroMinLength,
    #[error("cannot read abbreviation list {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmenterConfig {
    abbreviations: BTreeSet<String>,
    min_sentence_chars: usize,
    initials: bool,
}

impl Default for SegmenterConfig {
    /// English and German abbreviations, two-character minimum, initials off.
    fn default() -> Self {
        let mut abbreviations = parse_abbreviations(ABBREV_EN).expect("bundled list is valid");
        abbreviations.extend(parse_abbreviations(ABBREV_DE).expect("bundled list is valid"));
        Self {
            abbreviations,
            min_sentence_chars: 2,
            initials: false,
        }
    }
}

impl SegmenterConfig {
    pub fn new(
        abbreviations: BTreeSet<String>,
        min_sentence_chars: usize,
    ) -> Result<Self, TextError> {
        if min_sentence_chars == 0 {
            return Err(TextError::ZeroMinLength);
        }
        for entry in &abbreviations {
            validate_abbreviation(entry).map_err(|reason| TextError::InvalidAbbreviation {
                line: 0,
                entry: entry.clone(),
                reason,
            })?;
        }
        Ok(Self {
            abbreviations,
            min_sentence_chars,
            initials: false,
        })
    }

    pub fn english() -> Self {
        Self {
            abbreviations: parse_abbreviations(ABBREV_EN).expect("bundled list is valid"),
            ..Self::default()
        }
    }

    pub fn german() -> Self {
        Self {
            abbreviations: parse_abbreviations(ABBREV_DE).expect("bundled list is valid"),
            ..Self::default()
        }
    }

    /// Loads abbreviations from a file with one entry per line. Blank lines
    /// and lines starting with `#` are ignored.
    pub fn from_abbreviation_file(path: impl AsRef<Path>) -> Result<Self, TextError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| TextError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self {
            abbreviations: parse_abbreviations(&raw)?,
            ..Self::default()
        })
    }

    /// Treat a lone letter followed by a period ("E. coli") as an initial.
    pub fn with_initials(mut self, initials: bool) -> Self {
        self.initials = initials;
        self
    }

    pub fn with_min_sentence_chars(mut self, min: usize) -> Result<Self, TextError> {
        if min == 0 {
            return Err(TextError::ZeroMinLength);
        }
        self.min_sentence_chars = min;
        Ok(self)
    }

    pub fn abbreviations(&self) -> &BTreeSet<String> {
        &self.abbreviations
    }

    pub fn min_sentence_chars(&self) -> usize {
        self.min_sentence_chars
    }

    fn is_abbreviation(&self, token: &str) -> bool {
        let token = token.trim_start_matches(|c: char| OPENERS.contains(&c));
        if token.is_empty() {
            return false;
        }
        if self.initials {
            let mut chars = token.chars();
            if let (Some(c), None) = (chars.next(), chars.next()) {
                if c.is_alphabetic() {
                    return true;
                }
            }
        }
        self.abbreviations.contains(&token.to_lowercase())
    }
}

fn validate_abbreviation(entry: &str) -> Result<(), &'static str> {
    if entry.is_empty() || entry.chars().any(char::is_whitespace) {
        Err("entry must be a single non-empty token")
    } else if entry.ends_with('.') {
        Err("entry must not end with a period")
    } else if entry.chars().any(char::is_uppercase) {
        Err("entry must be lowercase")
    } else {
        Ok(())
    }
}

pub fn parse_abbreviations(raw: &str) -> Result<BTreeSet<String>, TextError> {
    let mut out = BTreeSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let entry = line.trim();
        if entry.is_empty() || entry.starts_with('#') {
            continue;
        }
        validate_abbreviation(entry).map_err(|reason| TextError::InvalidAbbreviation {
            line: idx + 1,
            entry: entry.to_string(),
            reason,
        })?;
        out.insert(entry.to_string());
    }
    Ok(out)
}

const TERMINATORS: [char; 3] = ['.', '!', '?'];
const CLOSERS: [char; 8] = ['"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}', '\u{00bb}'];
const OPENERS: [char; 8] = ['"', '\'', '(', '[', '{', '\u{201c}', '\u{2018}', '\u{00ab}'];

/// Splits `text` into sentences. Each returned sentence is a trimmed slice
/// of the input, so internal whitespace is preserved.
pub fn segment_sentences(text: &str, config: &SegmenterConfig) -> Result<Vec<String>, TextError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(TextError::EmptyInput);
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i].1;
        if !TERMINATORS.contains(&c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && TERMINATORS.contains(&chars[j].1) {
            j += 1;
        }
        let single_period = c == '.' && j == i + 1;
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        let at_gap = j == chars.len() || chars[j].1.is_whitespace();
        let suppressed = single_period && {
            let token_start = text[..chars[i].0]
                .rfind(char::is_whitespace)
                .map_or(0, |p| p + text[p..].chars().next().map_or(1, char::len_utf8));
            config.is_abbreviation(&text[token_start..chars[i].0])
        };
        if at_gap && !suppressed {
            spans.push((start, byte_at(j)));
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            start = byte_at(k);
        }
        i = j;
    }
    if start < text.len() {
        spans.push((start, text.len()));
    }

    let merged = merge_short(spans, text, config.min_sentence_chars);
    Ok(merged.into_iter().map(|(s, e)| text[s..e].to_string()).collect())
}

fn merge_short(spans: Vec<(usize, usize)>, text: &str, min_chars: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    let mut carry: Option<usize> = None;
    for (s, e) in spans {
        let s = carry.take().unwrap_or(s);
        let short = text[s..e].chars().count() < min_chars;
        match (short, out.last_mut()) {
            (true, Some(prev)) => prev.1 = e,
            // a short leading fragment joins the sentence after it
            (true, None) => carry = Some(s),
            (false, _) => out.push((s, e)),
        }
    }
    if let Some(s) = carry {
        out.push((s, text.len()));
    }
    out
}

/// Number of non-empty comma-separated entries in a keyword list.
pub fn count_keywords(text: &str) -> Result<usize, TextError> {
    match text.split(',').filter(|s| !s.trim().is_empty()).count() {
        0 => Err(TextError::EmptyInput),
        n => Ok(n),
    }
}

/// How the keyword bound "fewer than half the sentence count" is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordBound {
    /// `count < sentences / 2` with a real-valued half.
    #[default]
    RealHalf,
    /// `count < floor(sentences / 2)`.
    FloorHalf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterConfig {
    pub keyword_bound: KeywordBound,
}

/// Quality gate for a generated query. Questions must end with `?`;
/// keyword lists must have fewer entries than half the passage's sentences.
pub fn filter_synthetic(query: &SyntheticQuery, passage_sentence_count: usize) -> bool {
    filter_synthetic_with(query, passage_sentence_count, &FilterConfig::default())
}

pub fn filter_synthetic_with(
    query: &SyntheticQuery,
    passage_sentence_count: usize,
    config: &FilterConfig,
) -> bool {
    match query.kind() {
        QueryKind::Question => query.text().trim_end().ends_with('?'),
        QueryKind::Keywords => {
            let Ok(count) = count_keywords(query.text()) else {
                return false;
            };
            match config.keyword_bound {
                KeywordBound::RealHalf => (count as f64) < passage_sentence_count as f64 / 2.0,
                KeywordBound::FloorHalf => count < passage_sentence_count / 2,
            }
        }
    }
}

/// Runs the filter and records the verdict on the query.
pub fn apply_filter(
    query: SyntheticQuery,
    passage_sentence_count: usize,
    config: &FilterConfig,
) -> SyntheticQuery {
    let passed = filter_synthetic_with(&query, passage_sentence_count, config);
    query.with_filter_verdict(passed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(text: &str) -> Vec<String> {
        segment_sentences(text, &SegmenterConfig::default()).unwrap()
    }

    fn collapse(s: &str) -> String {
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn plain_terminators() {
        assert_eq!(seg("A b. C d?"), vec!["A b.", "C d?"]);
    }

    #[test]
    fn abbreviation_suppresses_boundary() {
        let cfg = SegmenterConfig::new(["dr".to_string()].into(), 2).unwrap();
        assert_eq!(
            segment_sentences("Dr. Smith ran. He won.", &cfg).unwrap(),
            vec!["Dr. Smith ran.", "He won."]
        );
        let none = SegmenterConfig::new(BTreeSet::new(), 2).unwrap();
        assert_eq!(
            segment_sentences("Dr. Smith ran. He won.", &none).unwrap(),
            vec!["Dr.", "Smith ran.", "He won."]
        );
    }

    #[test]
    fn end_of_text_terminates() {
        assert_eq!(seg("one sentence no period"), vec!["one sentence no period"]);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            segment_sentences("  \n\t ", &SegmenterConfig::default()),
            Err(TextError::EmptyInput)
        ));
    }

    #[test]
    fn initials_and_dotted_abbreviations() {
        let text = "Fluorometric titration of E. coli protein. Values e.g. pH were fixed. Done!";
        let initials = SegmenterConfig::default().with_initials(true);
        assert_eq!(
            segment_sentences(text, &initials).unwrap(),
            vec![
                "Fluorometric titration of E. coli protein.",
                "Values e.g. pH were fixed.",
                "Done!"
            ]
        );
        assert_eq!(seg(text).len(), 4);
    }

    #[test]
    fn closers_and_runs() {
        assert_eq!(
            seg("He said \"stop!\" Then (it ended.) Really?! Yes"),
            vec!["He said \"stop!\"", "Then (it ended.)", "Really?!", "Yes"]
        );
        // no whitespace after the period: not a boundary
        assert_eq!(seg("version 1.2 shipped. ok go"), vec!["version 1.2 shipped.", "ok go"]);
    }

    #[test]
    fn short_fragments_merge() {
        let cfg = SegmenterConfig::default().with_min_sentence_chars(5).unwrap();
        assert_eq!(
            segment_sentences("First one here. Ok. Last sentence.", &cfg).unwrap(),
            vec!["First one here. Ok.", "Last sentence."]
        );
        assert_eq!(
            segment_sentences("Hi. Second sentence here.", &cfg).unwrap(),
            vec!["Hi. Second sentence here."]
        );
        assert_eq!(segment_sentences("Hi.", &cfg).unwrap(), vec!["Hi."]);
    }

    #[test]
    fn german_text() {
        let cfg = SegmenterConfig::german();
        assert_eq!(
            segment_sentences("Das gilt z.B. für Berlin. Vgl. Abb. 3 unten.", &cfg).unwrap(),
            vec!["Das gilt z.B. für Berlin.", "Vgl. Abb. 3 unten."]
        );
    }

    #[test]
    fn abbreviation_file_validation() {
        assert!(parse_abbreviations("dr\n# comment\n\nprof\n").unwrap().contains("prof"));
        assert!(matches!(
            parse_abbreviations("dr\nDr\n"),
            Err(TextError::InvalidAbbreviation { line: 2, .. })
        ));
        assert!(parse_abbreviations("etc.\n").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abbr.txt");
        std::fs::write(&path, "dr\nprof\n").unwrap();
        let cfg = SegmenterConfig::from_abbreviation_file(&path).unwrap();
        assert_eq!(cfg.abbreviations().len(), 2);
        assert!(SegmenterConfig::from_abbreviation_file(dir.path().join("missing")).is_err());
    }

    #[test]
    fn keyword_counting() {
        assert_eq!(count_keywords("mRNA, protein, titration").unwrap(), 3);
        assert_eq!(count_keywords("semantic space").unwrap(), 1);
        assert_eq!(count_keywords("a,,b").unwrap(), 2);
        assert!(count_keywords("").is_err());
        assert!(count_keywords(" , ").is_err());
    }

    fn kw(text: &str) -> SyntheticQuery {
        SyntheticQuery::new(QueryKind::Keywords, text, 0.5).unwrap()
    }

    fn question(text: &str) -> SyntheticQuery {
        SyntheticQuery::new(QueryKind::Question, text, 0.5).unwrap()
    }

    #[test]
    fn question_filter() {
        assert!(filter_synthetic(&question("What is the purpose of the ESC?"), 1));
        assert!(filter_synthetic(&question("What is it?  \n"), 1));
        assert!(!filter_synthetic(&question("Summarize the passage"), 1));
        assert!(!filter_synthetic(&question("Is it? no"), 1));
    }

    #[test]
    fn keyword_filter_strict_half() {
        assert!(!filter_synthetic(&kw("mRNA, protein, titration"), 4));
        assert!(filter_synthetic(&kw("semantic space"), 4));
        // 2 < 2 fails, 2 < 2.5 passes
        assert!(!filter_synthetic(&kw("a, b"), 4));
        assert!(filter_synthetic(&kw("a, b"), 5));
        let floor = FilterConfig {
            keyword_bound: KeywordBound::FloorHalf,
        };
        assert!(!filter_synthetic_with(&kw("a, b"), 5, &floor));
        assert!(apply_filter(kw("x"), 3, &FilterConfig::default()).passed_filter());
        assert!(!apply_filter(kw("x"), 2, &FilterConfig::default()).passed_filter());
    }

    proptest! {
        #[test]
        fn segmentation_is_lossless(
            words in proptest::collection::vec("[A-Za-z]{1,6}[.!?,]?", 1..40),
            gaps in proptest::collection::vec("[ \t\n]{1,3}", 40),
        ) {
            let mut text = String::new();
            for (w, g) in words.iter().zip(&gaps) {
                text.push_str(w);
                text.push_str(g);
            }
            let cfg = SegmenterConfig::default();
            let out = segment_sentences(&text, &cfg).unwrap();
            prop_assert_eq!(collapse(&out.join(" ")), collapse(&text));
            let concat: String = out.concat().split_whitespace().collect();
            let input: String = text.split_whitespace().collect();
            prop_assert_eq!(concat, input);
            prop_assert_eq!(&out, &segment_sentences(&text, &cfg).unwrap());
            for s in &out {
                prop_assert_eq!(s.trim(), s.as_str());
            }
        }

        #[test]
        fn question_verdict_depends_on_last_char(prefix in ".{0,30}", last in "[a-z?.!]") {
            let text = format!("x{prefix}{last}");
            let q = question(&text);
            prop_assert_eq!(filter_synthetic(&q, 1), last == "?");
        }

        #[test]
        fn keyword_verdict_monotone(k in 1usize..12, n in 1usize..40) {
            let text = (0..k).map(|i| format!("w{i}")).collect::<Vec<_>>().join(", ");
            let q = kw(&text);
            if filter_synthetic(&q, n) {
                prop_assert!(filter_synthetic(&q, n + 1));
            }
        }
    }
}
