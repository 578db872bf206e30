//! Text helpers shared by the agents: fenced-block and JSON extraction,
//! digests and slugs.

use core::fmt::Write;

use sha2::{Digest, Sha256};

use crate::prelude::*;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// A fenced code block located in a larger reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fence<'a> {
    pub info: &'a str,
    pub body: &'a str,
    /// Byte range of the block including both fences.
    pub outer: core::ops::Range<usize>,
}

/// Fenced code blocks in order of appearance.
pub fn fenced_blocks(text: &str) -> Vec<Fence<'_>> {
    let mut out = Vec::new();
    let mut at = 0;
    while let Some(rel) = text[at..].find("```") {
        let open = at + rel;
        let after = open + 3;
        let Some(nl) = text[after..].find('\n') else { break };
        let info = text[after..after + nl].trim();
        let body_start = after + nl + 1;
        // the closing fence must start a line
        let mut search = body_start;
        let mut close = None;
        while let Some(pos) = text[search..].find("```") {
            let abs = search + pos;
            if abs == body_start || text.as_bytes()[abs - 1] == b'\n' {
                close = Some(abs);
                break;
            }
            search = abs + 3;
        }
        let Some(close) = close else {
            out.push(Fence { info, body: &text[body_start..], outer: open..text.len() });
            break;
        };
        let end = text[close + 3..].find('\n').map(|n| close + 3 + n).unwrap_or(text.len());
        out.push(Fence { info, body: &text[body_start..close], outer: open..end });
        at = end;
    }
    out
}

/// The last fenced block whose info string is empty or one of `langs`.
pub fn last_code_block<'a>(text: &'a str, langs: &[&str]) -> Option<&'a str> {
    fenced_blocks(text)
        .into_iter()
        .rev()
        .find(|f| f.info.is_empty() || langs.iter().any(|l| f.info.eq_ignore_ascii_case(l)))
        .map(|f| f.body)
}

/// Locates the JSON object in an agent reply: the last fenced `json` (or
/// bare) block if present, else the outermost `{...}` span. Returns the JSON
/// text and the surrounding prose.
pub fn extract_json_object(text: &str) -> Option<(&str, String)> {
    for f in fenced_blocks(text).into_iter().rev() {
        if (f.info.is_empty() || f.info.eq_ignore_ascii_case("json")) && f.body.trim_start().starts_with('{') {
            return Some((f.body.trim(), join_prose(&text[..f.outer.start], &text[f.outer.end..])));
        }
    }
    let start = text.find('{')?;
    let end = matching_brace(text, start)?;
    Some((&text[start..=end], join_prose(&text[..start], &text[end + 1..])))
}

fn join_prose(before: &str, after: &str) -> String {
    let (before, after) = (before.trim(), after.trim());
    let mut out = String::from(before);
    if !after.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(after);
    }
    out
}

fn matching_brace(text: &str, open: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_str = false;
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Filesystem-safe identifier: ASCII alphanumerics, `_`, `-` and `.`.
pub fn slug(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') {
            out.push(c);
        } else {
            out.push('_');
        }
    }
    out
}
