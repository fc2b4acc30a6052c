//! Small text helpers shared by the validator, the scorer and the corpus.

/// Number of whitespace-delimited tokens (Unicode whitespace).
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Collapse every run of Unicode whitespace into a single space and trim the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Apply the declared normalization steps in a fixed order: case folding first,
/// then whitespace collapsing.
pub fn normalize(text: &str, case_fold: bool, collapse: bool) -> String {
    let folded = if case_fold {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    if collapse {
        collapse_whitespace(&folded)
    } else {
        folded
    }
}

/// Byte offset just past the `max_words`-th word, or `None` when the text has
/// no more than `max_words` words.
pub fn word_prefix_end(text: &str, max_words: usize) -> Option<usize> {
    let mut words = 0;
    let mut in_word = false;
    for (idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_word {
                in_word = false;
                if words == max_words {
                    return Some(idx);
                }
            }
        } else if !in_word {
            in_word = true;
            words += 1;
            if words > max_words {
                return Some(idx);
            }
        }
    }
    None
}
