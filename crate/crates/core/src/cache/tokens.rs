use std::collections::BTreeSet;

/// Lowercased alphanumeric runs of `text`, as a set.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    token_iter(text).collect()
}

fn token_iter(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Canonical form of a query: its token multiset, sorted and space-joined.
pub fn normalize_query(text: &str) -> String {
    let mut toks: Vec<String> = token_iter(text).collect();
    toks.sort();
    toks.join(" ")
}

pub(crate) fn jaccard_sets(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Token-level Jaccard similarity; zero when both queries are empty.
pub fn jaccard_tokens(q1: &str, q2: &str) -> f64 {
    jaccard_sets(&tokenize(q1), &tokenize(q2))
}
