/// Word-level tokenizer: lowercases, removes HTML line-break markers,
/// drops punctuation and splits on whitespace. Deterministic; empty input
/// yields an empty list.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut cleaned = text.to_lowercase();
    for marker in ["<br />", "<br/>", "<br>"] {
        if cleaned.contains(marker) {
            cleaned = cleaned.replace(marker, " ");
        }
    }
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in cleaned.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.push(ch);
        }
        // punctuation and symbols are stripped in place
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}
