//! Identifier sub-tokenization.

/// Splits an identifier on underscores and lower-to-upper camel-case
/// boundaries, lowercasing each piece. Digits and acronyms get no special
/// treatment: `parseHTTPRequest` yields `["parse", "httprequest"]`.
pub fn split_subtokens(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    for part in name.split('_') {
        let mut current = String::new();
        let mut prev_lower = false;
        for ch in part.chars() {
            if ch.is_uppercase() && prev_lower && !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            prev_lower = ch.is_lowercase() || ch.is_ascii_digit();
            current.extend(ch.to_lowercase());
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}
