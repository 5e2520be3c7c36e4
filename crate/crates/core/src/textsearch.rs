//! Tokenization and misspelling-tolerant keyword matching over informal
//! scene descriptions.

use crate::ontology::NegationRule;

/// Lowercase alphanumeric runs of `text`, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Levenshtein distance with unit costs, over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Keywords shorter than this only match exactly.
pub const MIN_FUZZY_KEYWORD_LEN: usize = 4;

/// True when some token matches `keyword` and is not negated.
///
/// A token matches when it shares the keyword's first character and lies
/// within the effective edit distance (`max_dist`, or 0 for keywords
/// shorter than four characters). It is negated when one of the rule's
/// words occurs among the `window` tokens right before it.
pub fn keyword_match_with(
    tokens: &[String],
    keyword: &str,
    max_dist: usize,
    negation: &NegationRule,
) -> bool {
    let effective = if keyword.chars().count() < MIN_FUZZY_KEYWORD_LEN {
        0
    } else {
        max_dist
    };
    let first = keyword.chars().next();
    tokens.iter().enumerate().any(|(i, token)| {
        if token.chars().next() != first || edit_distance(token, keyword) > effective {
            return false;
        }
        let start = i.saturating_sub(negation.window);
        !tokens[start..i]
            .iter()
            .any(|prev| negation.words.iter().any(|w| w == prev))
    })
}

/// [`keyword_match_with`] using the default negation words `no`, `not`,
/// `without` over a two-token window.
pub fn keyword_match(tokens: &[String], keyword: &str, max_dist: usize) -> bool {
    keyword_match_with(tokens, keyword, max_dist, &NegationRule::default())
}
