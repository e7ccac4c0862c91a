//! Turning a raw completion into candidate JSON text.
//!
//! Single repair pass only: reasoning blocks, Markdown fences and trailing
//! commas. Anything else is reported as unparseable rather than guessed at.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("no balanced JSON object found in model output")]
pub struct ExtractParseError {
    /// The unmodified completion, kept for audit.
    pub raw: String,
}

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Drops `<think>…</think>` spans. A dangling close tag drops everything
/// before it; a dangling open tag drops everything after it.
pub fn strip_think_blocks(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    loop {
        let open = rest.find(THINK_OPEN);
        let close = rest.find(THINK_CLOSE);
        match (open, close) {
            (Some(o), Some(c)) if o < c => {
                out.push_str(&rest[..o]);
                rest = &rest[c + THINK_CLOSE.len()..];
            }
            (_, Some(c)) => {
                // Close tag without a preceding open tag.
                out.clear();
                rest = &rest[c + THINK_CLOSE.len()..];
            }
            (Some(o), None) => {
                out.push_str(&rest[..o]);
                return out;
            }
            (None, None) => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

/// Removes ``` fence markers together with an immediately following language tag.
pub fn strip_code_fences(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find("```") {
        out.push_str(&rest[..i]);
        rest = &rest[i + 3..];
        rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    }
    out.push_str(rest);
    out
}

/// Byte range of the first `{` that closes to depth zero, honouring JSON strings.
fn first_balanced_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let begin = start + off;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(begin) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[begin..=i]);
                    }
                }
                _ => {}
            }
        }
        start = begin + 1;
    }
    None
}

/// Drops a `,` that is followed (after whitespace) by `}` or `]`, outside strings.
pub fn remove_trailing_commas(json: &str) -> String {
    let chars: Vec<char> = json.chars().collect();
    let mut out = String::with_capacity(json.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Extracts the candidate JSON object from a completion.
pub fn parse_model_output(raw: &str, strip_think: bool) -> Result<String, ExtractParseError> {
    let text = if strip_think {
        strip_think_blocks(raw)
    } else {
        raw.to_string()
    };
    let text = strip_code_fences(&text);
    let object = first_balanced_object(&text).ok_or_else(|| ExtractParseError {
        raw: raw.to_string(),
    })?;
    Ok(remove_trailing_commas(object))
}
