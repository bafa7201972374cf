//! Rule-based sentence boundary detection.
//!
//! A boundary follows a run of `.`, `!` or `?` (plus any closing quotes or
//! brackets) when the run is followed by whitespace and then an uppercase
//! letter, or by the end of the text. A `.` that ends one of
//! [`ABBREVIATIONS`] never closes a sentence. Sentences are trimmed of
//! surrounding whitespace; everything between two sentences is whitespace, so
//! the spans plus the gaps reproduce the input byte for byte.

use std::ops::Range;

pub const ABBREVIATIONS: [&str; 10] = [
    "Dr.", "Mr.", "Mrs.", "Ms.", "St.", "vs.", "etc.", "e.g.", "i.e.", "U.S.",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// Byte ranges of the sentences of `body`, in order. Never yields an empty
/// range.
pub fn sentence_spans(body: &str) -> Vec<Range<usize>> {
    let chars: Vec<(usize, char)> = body.char_indices().collect();
    let mut cuts = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        // terminator run, then closers
        let mut j = i;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        let single = j == i + 1;
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let end = chars.get(j).map_or(body.len(), |&(p, _)| p);
        let closes = if j == chars.len() {
            true
        } else if chars[j].1.is_whitespace() {
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            k == chars.len() || chars[k].1.is_uppercase()
        } else {
            false
        };
        if closes && !(c == '.' && single && ends_abbreviation(body, pos)) {
            cuts.push(end);
        }
        i = j.max(i + 1);
    }

    let mut spans = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for cut in cuts.into_iter().chain(std::iter::once(body.len())) {
        if let Some(span) = trimmed(body, start..cut) {
            spans.push(span);
        }
        start = cut;
    }
    spans
}

/// Sentence texts of `body`; empty input yields no sentences.
pub fn split_sentences(body: &str) -> Vec<&str> {
    sentence_spans(body)
        .into_iter()
        .map(|r| &body[r])
        .collect()
}

// `dot` is the byte offset of a '.'; the word it closes starts after the
// preceding whitespace.
fn ends_abbreviation(body: &str, dot: usize) -> bool {
    let head = &body[..dot + 1];
    let word_start = head
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map_or(0, |(p, c)| p + c.len_utf8());
    let word = &head[word_start..];
    // allow an opening quote or bracket before the abbreviation
    let word = word.trim_start_matches(['"', '\'', '(', '[', '\u{201c}', '\u{2018}']);
    ABBREVIATIONS.contains(&word)
}

fn trimmed(body: &str, range: Range<usize>) -> Option<Range<usize>> {
    let slice = &body[range.clone()];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead + trail >= slice.len() {
        return None;
    }
    Some(range.start + lead..range.end - trail)
}
