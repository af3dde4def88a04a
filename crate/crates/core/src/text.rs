//! Word-level helpers shared by function naming and task routing.

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "my", "me", "i", "to", "for", "of", "and", "then", "with", "at", "in", "on", "please", "some",
    "from", "into", "as", "by", "it", "this", "that", "under",
];

const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

/// Lowercased alphanumeric words in order.
pub fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn is_stopword(w: &str) -> bool {
    STOPWORDS.contains(&w)
}

/// Digits, or a number word from "zero" to "twenty".
pub fn numeral_value(w: &str) -> Option<u64> {
    if !w.is_empty() && w.bytes().all(|b| b.is_ascii_digit()) {
        return w.parse().ok();
    }
    NUMBER_WORDS.iter().position(|n| *n == w).map(|i| i as u64)
}

/// Crude plural folding: "lattes" → "latte", "brews" → "brew",
/// "glasses" → "glass".
pub fn stem(w: &str) -> String {
    if w.len() > 4 && w.ends_with("sses") {
        return w[..w.len() - 2].to_string();
    }
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
        return w[..w.len() - 1].to_string();
    }
    w.to_string()
}

/// Occurrences of `phrase` in `tokens`, as `(start, end)` token ranges.
/// Matching is case-insensitive and the last word may carry a plural
/// "s"/"es".
pub fn find_phrase(tokens: &[String], phrase: &str) -> Vec<(usize, usize)> {
    let want = words(phrase);
    if want.is_empty() || want.len() > tokens.len() {
        return Vec::new();
    }
    let last = want.len() - 1;
    (0..=tokens.len() - want.len())
        .filter(|&start| {
            want.iter().enumerate().all(|(i, w)| {
                let t = &tokens[start + i];
                t == w || (i == last && (*t == format!("{w}s") || *t == format!("{w}es")))
            })
        })
        .map(|start| (start, start + want.len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerals() {
        assert_eq!(numeral_value("10"), Some(10));
        assert_eq!(numeral_value("twenty"), Some(20));
        assert_eq!(numeral_value("one"), Some(1));
        assert_eq!(numeral_value("a"), None);
        assert_eq!(numeral_value("1a"), None);
    }

    #[test]
    fn phrases_allow_plurals() {
        let t = words("Order 3 Cold Brews and two Lattes, one Flat White");
        assert_eq!(find_phrase(&t, "Cold Brew"), vec![(2, 4)]);
        assert_eq!(find_phrase(&t, "Latte"), vec![(6, 7)]);
        assert_eq!(find_phrase(&t, "flat white"), vec![(8, 10)]);
        assert_eq!(find_phrase(&t, "Drive-thru"), vec![]);
        assert_eq!(find_phrase(&words("for Drive-thru pickup"), "Drive-thru"), vec![(1, 3)]);
    }

    #[test]
    fn stems() {
        assert_eq!(stem("lattes"), "latte");
        assert_eq!(stem("guests"), "guest");
        assert_eq!(stem("glasses"), "glass");
        assert_eq!(stem("bus"), "bus");
    }
}
