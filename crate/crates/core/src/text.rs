//! Text normalization shared by the graph, the mock providers and the metrics.

/// Function words ignored when comparing queries against triples or sentences.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
    "before", "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has",
    "have", "he", "her", "his", "how", "if", "in", "into", "is", "it", "its", "of", "on", "or",
    "she", "so", "than", "that", "the", "their", "them", "then", "there", "these", "they",
    "this", "those", "to", "was", "were", "what", "when", "where", "which", "who", "whom",
    "whose", "why", "will", "with", "would",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Node dedup key: case-fold, trim, collapse internal whitespace.
pub fn normalize_phrase(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Lowercased alphanumeric tokens, in order.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Lowercased tokens with stopwords removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// SQuAD-style answer normalization: lowercase, strip ASCII punctuation,
/// drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn phrase_normalization() {
        assert_eq!(normalize_phrase("  Erik   Hort "), "erik hort");
        assert_eq!(normalize_phrase("I. P. Paul"), "i. p. paul");
        assert_eq!(normalize_phrase(" \t "), "");
        let once = normalize_phrase("Thrissur  Municipal\tCorporation");
        assert_eq!(normalize_phrase(&once), once);
    }

    #[test]
    fn answer_normalization() {
        assert_eq!(normalize_answer("The City of Thrissur!"), "city of thrissur");
        assert_eq!(normalize_answer("Thrissur"), "thrissur");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("An apple, a day"), "apple day");
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokens("I.P. Paul born?"), vec!["i", "p", "paul", "born"]);
        assert_eq!(content_tokens("In what city was I.P. Paul born?"), vec!["city", "i", "p", "paul", "born"]);
    }
}
