//! Answer normalization used by every correctness check: lowercase, strip
//! ASCII punctuation, drop the articles "a", "an", "the", collapse whitespace.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    let mut out = String::with_capacity(stripped.len());
    for tok in stripped
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Whitespace tokens of the normalized text.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// True iff `needle` occurs as a contiguous run of whole tokens in `haystack`.
/// An empty needle never matches.
pub fn contains_token_run<S: AsRef<str>>(haystack: &[S], needle: &[S]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| {
        w.iter()
            .zip(needle)
            .all(|(a, b)| a.as_ref() == b.as_ref())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn applies_each_rule() {
        assert_eq!(normalize_answer("The Answer!"), "answer");
        assert_eq!(normalize_answer("a  an the"), "");
        assert_eq!(normalize_answer("Alfred, Lord Tennyson"), "alfred lord tennyson");
        assert_eq!(normalize_answer("  Theory   of\tthe  Atom "), "theory of atom");
        // punctuation inside a token joins the pieces
        assert_eq!(normalize_answer("U.S."), "us");
    }

    #[test]
    fn token_runs_respect_word_boundaries() {
        let hay = normalized_tokens("Paris, France is large");
        assert!(contains_token_run(&hay, &normalized_tokens("Paris")));
        assert!(contains_token_run(&hay, &normalized_tokens("france is")));
        assert!(!contains_token_run(&hay, &normalized_tokens("Par")));
        assert!(!contains_token_run(&hay, &normalized_tokens("is france")));
        assert!(!contains_token_run(&hay, &normalized_tokens("the")));
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn normalization_is_idempotent_on_wordy_input(
            words in proptest::collection::vec("(?i)(a|an|the|[a-z]{1,6})[.,!?']?", 0..10)
        ) {
            let s = words.join(" ");
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }
    }
}
