//! Python tokenizer producing byte-addressed tokens with INDENT/DEDENT
//! bookkeeping, close enough to CPython's `tokenize` for structural work.

use crate::prelude::*;

use super::SyntaxError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Name,
    Number,
    String,
    Op,
    Newline,
    Indent,
    Dedent,
    EndMarker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub end_line: u32,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }
}

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "!=", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%", "@", "&", "|",
    "^", "~", "<", ">", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";", "=",
];

pub const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue",
    "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in",
    "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while", "with",
    "yield",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: u32,
    indents: Vec<usize>,
    brackets: Vec<(u8, u32)>,
    tokens: Vec<Token>,
    line_has_tokens: bool,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let mut lx = Lexer {
        src,
        bytes: src.as_bytes(),
        pos: 0,
        line: 1,
        indents: vec![0],
        brackets: Vec::new(),
        tokens: Vec::new(),
        line_has_tokens: false,
    };
    lx.run()?;
    Ok(lx.tokens)
}

impl<'a> Lexer<'a> {
    fn err(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError { line: self.line, message: message.into() }
    }

    fn push(&mut self, kind: TokenKind, start: usize, end: usize, line: u32) {
        self.tokens.push(Token { kind, start, end, line, end_line: self.line });
        if !matches!(kind, TokenKind::Indent | TokenKind::Dedent) {
            self.line_has_tokens = true;
        }
    }

    fn peek(&self, off: usize) -> Option<u8> {
        self.bytes.get(self.pos + off).copied()
    }

    fn run(&mut self) -> Result<(), SyntaxError> {
        // skip a UTF-8 BOM
        if self.src.starts_with('\u{feff}') {
            self.pos = 3;
        }
        let mut at_line_start = true;
        loop {
            if at_line_start && self.brackets.is_empty() {
                if !self.handle_indentation()? {
                    break;
                }
                at_line_start = false;
            }
            let Some(c) = self.peek(0) else { break };
            match c {
                b' ' | b'\t' | b'\x0c' => self.pos += 1,
                b'#' => {
                    while let Some(c) = self.peek(0) {
                        if c == b'\n' || c == b'\r' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                b'\\' => {
                    let n = match (self.peek(1), self.peek(2)) {
                        (Some(b'\n'), _) => 2,
                        (Some(b'\r'), Some(b'\n')) => 3,
                        (Some(b'\r'), _) => 2,
                        _ => return Err(self.err("unexpected character after line continuation")),
                    };
                    self.pos += n;
                    self.line += 1;
                }
                b'\n' | b'\r' => {
                    let start = self.pos;
                    self.pos += if c == b'\r' && self.peek(1) == Some(b'\n') { 2 } else { 1 };
                    if self.brackets.is_empty() {
                        if self.line_has_tokens {
                            self.push(TokenKind::Newline, start, start, self.line);
                            self.line_has_tokens = false;
                        }
                        at_line_start = true;
                    }
                    self.line += 1;
                }
                b'"' | b'\'' => self.string(self.pos)?,
                b'0'..=b'9' => self.number(),
                b'.' if matches!(self.peek(1), Some(b'0'..=b'9')) => self.number(),
                c if c == b'_' || c.is_ascii_alphabetic() || c >= 0x80 => {
                    if let Some(plen) = self.string_prefix_len() {
                        let start = self.pos;
                        self.pos += plen;
                        self.string(start)?;
                    } else {
                        self.name();
                    }
                }
                _ => self.operator()?,
            }
        }
        if let Some(&(_, line)) = self.brackets.last() {
            return Err(SyntaxError { line, message: "unclosed bracket".into() });
        }
        let end = self.bytes.len();
        if self.line_has_tokens {
            self.push(TokenKind::Newline, end, end, self.line);
            self.line_has_tokens = false;
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(TokenKind::Dedent, end, end, self.line);
        }
        self.push(TokenKind::EndMarker, end, end, self.line);
        Ok(())
    }

    /// Returns false at end of input.
    fn handle_indentation(&mut self) -> Result<bool, SyntaxError> {
        loop {
            let mut col = 0usize;
            let mut p = self.pos;
            while let Some(&c) = self.bytes.get(p) {
                match c {
                    b' ' => col += 1,
                    b'\t' => col = (col / 8 + 1) * 8,
                    b'\x0c' => col = 0,
                    _ => break,
                }
                p += 1;
            }
            match self.bytes.get(p) {
                None => {
                    self.pos = p;
                    return Ok(false);
                }
                Some(b'\n') | Some(b'\r') | Some(b'#') => {
                    // blank or comment-only line
                    self.pos = p;
                    while let Some(c) = self.peek(0) {
                        if c == b'\n' || c == b'\r' {
                            break;
                        }
                        self.pos += 1;
                    }
                    match self.peek(0) {
                        None => return Ok(false),
                        Some(b'\r') if self.peek(1) == Some(b'\n') => self.pos += 2,
                        Some(_) => self.pos += 1,
                    }
                    self.line += 1;
                }
                Some(_) => {
                    self.pos = p;
                    let top = *self.indents.last().unwrap_or(&0);
                    if col > top {
                        self.indents.push(col);
                        self.push(TokenKind::Indent, p, p, self.line);
                    } else if col < top {
                        while *self.indents.last().unwrap_or(&0) > col {
                            self.indents.pop();
                            self.push(TokenKind::Dedent, p, p, self.line);
                        }
                        if *self.indents.last().unwrap_or(&0) != col {
                            return Err(self.err("unindent does not match any outer indentation level"));
                        }
                    }
                    return Ok(true);
                }
            }
        }
    }

    fn string_prefix_len(&self) -> Option<usize> {
        let is_prefix_char = |c: u8| matches!(c.to_ascii_lowercase(), b'r' | b'b' | b'u' | b'f' | b't');
        let a = self.peek(0)?;
        if !is_prefix_char(a) {
            return None;
        }
        match self.peek(1)? {
            b'"' | b'\'' => Some(1),
            b if is_prefix_char(b) && matches!(self.peek(2), Some(b'"') | Some(b'\'')) => {
                let pair = [a.to_ascii_lowercase(), b.to_ascii_lowercase()];
                let ok = matches!(
                    &pair,
                    b"rb" | b"br" | b"rf" | b"fr" | b"rt" | b"tr"
                );
                ok.then_some(2)
            }
            _ => None,
        }
    }

    fn string(&mut self, start: usize) -> Result<(), SyntaxError> {
        let line = self.line;
        let q = self.bytes[self.pos];
        let triple = self.peek(1) == Some(q) && self.peek(2) == Some(q);
        self.pos += if triple { 3 } else { 1 };
        loop {
            let Some(c) = self.peek(0) else {
                return Err(SyntaxError { line, message: "unterminated string literal".into() });
            };
            match c {
                b'\\' => {
                    match self.peek(1) {
                        Some(b'\n') => self.line += 1,
                        Some(b'\r') => {
                            self.line += 1;
                            if self.peek(2) == Some(b'\n') {
                                self.pos += 1;
                            }
                        }
                        _ => {}
                    }
                    self.pos += 2;
                }
                b'\n' | b'\r' => {
                    if !triple {
                        return Err(SyntaxError { line, message: "unterminated string literal".into() });
                    }
                    if !(c == b'\r' && self.peek(1) == Some(b'\n')) {
                        self.line += 1;
                    }
                    self.pos += 1;
                }
                c if c == q => {
                    if !triple {
                        self.pos += 1;
                        break;
                    }
                    if self.peek(1) == Some(q) && self.peek(2) == Some(q) {
                        self.pos += 3;
                        break;
                    }
                    self.pos += 1;
                }
                _ => self.pos += 1,
            }
        }
        if self.pos > self.bytes.len() {
            return Err(SyntaxError { line, message: "unterminated string literal".into() });
        }
        self.push(TokenKind::String, start, self.pos, line);
        Ok(())
    }

    fn number(&mut self) {
        let start = self.pos;
        let hex = self.peek(0) == Some(b'0') && matches!(self.peek(1), Some(b'x') | Some(b'X'));
        while let Some(c) = self.peek(0) {
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' {
                self.pos += 1;
            } else if (c == b'+' || c == b'-')
                && !hex
                && matches!(self.bytes.get(self.pos - 1), Some(b'e') | Some(b'E'))
            {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.push(TokenKind::Number, start, self.pos, self.line);
    }

    fn name(&mut self) {
        let start = self.pos;
        while let Some(c) = self.peek(0) {
            if c == b'_' || c.is_ascii_alphanumeric() || c >= 0x80 {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.push(TokenKind::Name, start, self.pos, self.line);
    }

    fn operator(&mut self) -> Result<(), SyntaxError> {
        let rest = &self.src[self.pos..];
        let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(**op)) else {
            let ch = rest.chars().next().unwrap_or('?');
            return Err(self.err(format!("invalid character {ch:?}")));
        };
        let start = self.pos;
        match *op {
            "(" | "[" | "{" => self.brackets.push((op.as_bytes()[0], self.line)),
            ")" | "]" | "}" => {
                let want = match *op {
                    ")" => b'(',
                    "]" => b'[',
                    _ => b'{',
                };
                match self.brackets.pop() {
                    Some((open, _)) if open == want => {}
                    _ => return Err(self.err(format!("unmatched '{op}'"))),
                }
            }
            _ => {}
        }
        self.pos += op.len();
        self.push(TokenKind::Op, start, self.pos, self.line);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src)
            .unwrap()
            .iter()
            .map(|t| (t.kind, t.text(src).to_string()))
            .collect()
    }

    #[test]
    fn indents_and_dedents() {
        let toks = kinds("if x:\n    y = 1\nz\n");
        let k: Vec<_> = toks.iter().map(|t| t.0).collect();
        use TokenKind::*;
        assert_eq!(
            k,
            vec![Name, Name, Op, Newline, Indent, Name, Op, Number, Newline, Dedent, Name, Newline, EndMarker]
        );
    }

    #[test]
    fn brackets_join_lines() {
        let toks = kinds("f(1,\n  2)\n");
        assert_eq!(toks.iter().filter(|t| t.0 == TokenKind::Newline).count(), 1);
    }

    #[test]
    fn strings_with_prefixes_and_triple_quotes() {
        let src = "x = rb'a\\'b' + f\"{y}\" + '''multi\nline'''\n";
        let toks = kinds(src);
        let strs: Vec<_> = toks.iter().filter(|t| t.0 == TokenKind::String).map(|t| t.1.clone()).collect();
        assert_eq!(strs, vec!["rb'a\\'b'", "f\"{y}\"", "'''multi\nline'''"]);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let toks = kinds("# hi\n\nx = 1  # trailing\n\n   # indented comment\ny\n");
        assert_eq!(toks.iter().filter(|t| t.0 == TokenKind::Indent).count(), 0);
    }

    #[test]
    fn errors() {
        assert!(tokenize("x = 'abc\n").is_err());
        assert!(tokenize("f(1, 2\n").is_err());
        assert!(tokenize("f(1]\n").is_err());
        assert!(tokenize("if x:\n    a\n  b\n").is_err());
        assert!(tokenize("x = $\n").is_err());
    }

    #[test]
    fn exponent_numbers() {
        let toks = kinds("1e-5 + 0x1e-1\n");
        let nums: Vec<_> = toks.iter().filter(|t| t.0 == TokenKind::Number).map(|t| t.1.clone()).collect();
        assert_eq!(nums, vec!["1e-5", "0x1e", "1"]);
    }
}
