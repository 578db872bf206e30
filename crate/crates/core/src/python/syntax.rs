//! Statement-level structure of a Python module: logical lines grouped into
//! compound statements and their blocks.

use core::ops::Range;

use crate::prelude::*;

use super::lexer::{is_keyword, tokenize, Token, TokenKind};
use super::SyntaxError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clause {
    If,
    Elif,
    Else,
    For,
    While,
    Try,
    Except,
    Finally,
    With,
    Def,
    Class,
    Match,
    Case,
}

impl Clause {
    fn from_keyword(kw: &str) -> Option<Self> {
        Some(match kw {
            "if" => Clause::If,
            "elif" => Clause::Elif,
            "else" => Clause::Else,
            "for" => Clause::For,
            "while" => Clause::While,
            "try" => Clause::Try,
            "except" => Clause::Except,
            "finally" => Clause::Finally,
            "with" => Clause::With,
            "def" => Clause::Def,
            "class" => Clause::Class,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    /// `None` for simple statements.
    pub clause: Option<Clause>,
    /// Token indices of a simple statement, or of a compound header
    /// (keyword through the block colon, inclusive).
    pub tokens: Range<usize>,
    /// Byte range of the statement text, body included, decorators excluded.
    pub span: Range<usize>,
    /// Byte offset of the first decorator, if any.
    pub decorated_start: Option<usize>,
    pub line: u32,
    pub end_line: u32,
    pub body: Vec<Stmt>,
    /// True when the body follows the colon on the same logical line.
    pub inline_body: bool,
    pub is_async: bool,
}

impl Stmt {
    pub fn outer_start(&self) -> usize {
        self.decorated_start.unwrap_or(self.span.start)
    }

    /// Token index of the first significant header token (skips `async`).
    pub fn keyword_token(&self) -> usize {
        self.tokens.start + usize::from(self.is_async)
    }
}

#[derive(Debug, Clone)]
pub struct Module<'a> {
    pub src: &'a str,
    pub tokens: Vec<Token>,
    pub body: Vec<Stmt>,
}

impl<'a> Module<'a> {
    pub fn tok(&self, i: usize) -> &Token {
        &self.tokens[i]
    }

    pub fn text(&self, i: usize) -> &'a str {
        self.tokens[i].text(self.src)
    }

    pub fn slice(&self, range: Range<usize>) -> &'a str {
        &self.src[range]
    }

    /// Source text covered by a token range.
    pub fn tokens_text(&self, r: Range<usize>) -> &'a str {
        if r.is_empty() {
            return "";
        }
        &self.src[self.tokens[r.start].start..self.tokens[r.end - 1].end]
    }

    /// Depth-first walk over every statement, including nested bodies.
    pub fn walk(&self, mut f: impl FnMut(&Stmt, usize)) {
        fn go(stmts: &[Stmt], depth: usize, f: &mut impl FnMut(&Stmt, usize)) {
            for s in stmts {
                f(s, depth);
                go(&s.body, depth + 1, f);
            }
        }
        go(&self.body, 0, &mut f);
    }
}

pub fn parse(src: &str) -> Result<Module<'_>, SyntaxError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { src, toks: &tokens, pos: 0 };
    let body = p.block(true)?;
    check_clause_order(&body, src, &tokens)?;
    Ok(Module { src, tokens, body })
}

/// Returns `Ok(())` iff the source is structurally valid Python.
pub fn check(src: &str) -> Result<(), SyntaxError> {
    parse(src).map(|_| ())
}

struct Parser<'t> {
    src: &'t str,
    toks: &'t [Token],
    pos: usize,
}

fn is_open(s: &str) -> bool {
    matches!(s, "(" | "[" | "{")
}

fn is_close(s: &str) -> bool {
    matches!(s, ")" | "]" | "}")
}

impl<'t> Parser<'t> {
    fn text(&self, i: usize) -> &'t str {
        self.toks[i].text(self.src)
    }

    fn kind(&self, i: usize) -> TokenKind {
        self.toks[i].kind
    }

    fn err(&self, i: usize, message: impl Into<String>) -> SyntaxError {
        SyntaxError { line: self.toks[i.min(self.toks.len() - 1)].line, message: message.into() }
    }

    fn block(&mut self, top: bool) -> Result<Vec<Stmt>, SyntaxError> {
        let mut out = Vec::new();
        let mut decorators: Option<usize> = None;
        loop {
            match self.kind(self.pos) {
                TokenKind::EndMarker => {
                    if !top {
                        return Err(self.err(self.pos, "unexpected end of input"));
                    }
                    break;
                }
                TokenKind::Dedent => {
                    if top {
                        return Err(self.err(self.pos, "unexpected dedent"));
                    }
                    break;
                }
                TokenKind::Indent => return Err(self.err(self.pos, "unexpected indent")),
                TokenKind::Newline => {
                    self.pos += 1;
                    continue;
                }
                _ => {}
            }
            let line_start = self.pos;
            let mut line_end = self.pos;
            while self.kind(line_end) != TokenKind::Newline {
                line_end += 1;
            }
            if self.text(line_start) == "@" && self.kind(line_start) == TokenKind::Op {
                if line_end == line_start + 1 {
                    return Err(self.err(line_start, "empty decorator"));
                }
                self.check_expr(line_start + 1..line_end)?;
                decorators.get_or_insert(self.toks[line_start].start);
                self.pos = line_end + 1;
                continue;
            }
            let stmts = self.logical_line(line_start, line_end)?;
            if let Some(d) = decorators.take() {
                match stmts.first() {
                    Some(s) if matches!(s.clause, Some(Clause::Def) | Some(Clause::Class)) => {}
                    _ => return Err(self.err(line_start, "decorator must precede a def or class")),
                }
                let mut stmts = stmts;
                stmts[0].decorated_start = Some(d);
                out.extend(stmts);
            } else {
                out.extend(stmts);
            }
        }
        if decorators.is_some() {
            return Err(self.err(self.pos, "dangling decorator"));
        }
        Ok(out)
    }

    fn compound_clause(&self, start: usize, end: usize) -> Option<(Clause, bool)> {
        let first = self.text(start);
        if self.kind(start) != TokenKind::Name {
            return None;
        }
        if first == "async" && start + 1 < end {
            let c = Clause::from_keyword(self.text(start + 1))?;
            return matches!(c, Clause::Def | Clause::For | Clause::With).then_some((c, true));
        }
        if let Some(c) = Clause::from_keyword(first) {
            return Some((c, false));
        }
        if matches!(first, "match" | "case") && start + 1 < end {
            let next = self.text(start + 1);
            let next_is_op = self.kind(start + 1) == TokenKind::Op;
            if next_is_op && !matches!(next, "(" | "[" | "{" | "-" | "*") {
                return None;
            }
            self.header_colon(start, end)?;
            let c = if first == "match" { Clause::Match } else { Clause::Case };
            return Some((c, false));
        }
        None
    }

    /// Top-level block colon, skipping colons consumed by `lambda`.
    fn header_colon(&self, start: usize, end: usize) -> Option<usize> {
        let mut depth = 0i32;
        let mut lambdas = 0;
        for i in start..end {
            let t = self.text(i);
            match self.kind(i) {
                TokenKind::Op if is_open(t) => depth += 1,
                TokenKind::Op if is_close(t) => depth -= 1,
                TokenKind::Op if t == ":" && depth == 0 => {
                    if lambdas > 0 {
                        lambdas -= 1;
                    } else {
                        return Some(i);
                    }
                }
                TokenKind::Name if t == "lambda" && depth == 0 => lambdas += 1,
                _ => {}
            }
        }
        None
    }

    fn logical_line(&mut self, start: usize, end: usize) -> Result<Vec<Stmt>, SyntaxError> {
        let Some((clause, is_async)) = self.compound_clause(start, end) else {
            let stmts = self.simple_statements(start, end)?;
            self.pos = end + 1;
            if self.kind(self.pos) == TokenKind::Indent {
                return Err(self.err(self.pos, "unexpected indent"));
            }
            return Ok(stmts);
        };
        let colon = self
            .header_colon(start, end)
            .ok_or_else(|| self.err(start, "expected ':'"))?;
        self.check_header(clause, start + usize::from(is_async), colon)?;
        let mut stmt = Stmt {
            clause: Some(clause),
            tokens: start..colon + 1,
            span: self.toks[start].start..self.toks[colon].end,
            decorated_start: None,
            line: self.toks[start].line,
            end_line: self.toks[colon].end_line,
            body: Vec::new(),
            inline_body: false,
            is_async,
        };
        if colon + 1 < end {
            stmt.body = self.simple_statements(colon + 1, end)?;
            stmt.inline_body = true;
            self.pos = end + 1;
            if self.kind(self.pos) == TokenKind::Indent {
                return Err(self.err(self.pos, "unexpected indent"));
            }
        } else {
            self.pos = end + 1;
            if self.kind(self.pos) != TokenKind::Indent {
                return Err(self.err(self.pos, "expected an indented block"));
            }
            self.pos += 1;
            stmt.body = self.block(false)?;
            if stmt.body.is_empty() {
                return Err(self.err(self.pos, "expected an indented block"));
            }
            // consume the Dedent
            self.pos += 1;
        }
        if let Some(last) = stmt.body.last() {
            stmt.span.end = last.span.end;
            stmt.end_line = last.end_line;
        }
        Ok(vec![stmt])
    }

    fn check_header(&self, clause: Clause, kw: usize, colon: usize) -> Result<(), SyntaxError> {
        let inner = kw + 1..colon;
        match clause {
            Clause::Else | Clause::Try | Clause::Finally => {
                if !inner.is_empty() {
                    return Err(self.err(kw, "unexpected tokens before ':'"));
                }
            }
            Clause::Def => {
                if self.kind(kw + 1) != TokenKind::Name
                    || is_keyword(self.text(kw + 1))
                    || self.text(kw + 2) != "("
                {
                    return Err(self.err(kw, "invalid function definition"));
                }
                self.check_expr(kw + 2..colon)?;
            }
            Clause::Class => {
                if self.kind(kw + 1) != TokenKind::Name || is_keyword(self.text(kw + 1)) {
                    return Err(self.err(kw, "invalid class definition"));
                }
                if kw + 2 < colon && self.text(kw + 2) != "(" && self.text(kw + 2) != "[" {
                    return Err(self.err(kw, "invalid class definition"));
                }
                self.check_expr(kw + 2..colon)?;
            }
            Clause::Except => {
                if !inner.is_empty() {
                    self.check_expr(inner)?;
                }
            }
            _ => {
                if inner.is_empty() {
                    return Err(self.err(kw, "expected expression before ':'"));
                }
                self.check_expr(inner)?;
            }
        }
        Ok(())
    }

    fn simple_statements(&self, start: usize, end: usize) -> Result<Vec<Stmt>, SyntaxError> {
        let mut out = Vec::new();
        let mut depth = 0i32;
        let mut seg = start;
        for i in start..=end {
            let boundary = i == end || (depth == 0 && self.kind(i) == TokenKind::Op && self.text(i) == ";");
            if boundary {
                if seg == i {
                    // allow a single trailing ';'
                    if i == end && i > start && self.text(i - 1) == ";" {
                        break;
                    }
                    return Err(self.err(i, "invalid syntax"));
                }
                self.check_simple(seg, i)?;
                out.push(Stmt {
                    clause: None,
                    tokens: seg..i,
                    span: self.toks[seg].start..self.toks[i - 1].end,
                    decorated_start: None,
                    line: self.toks[seg].line,
                    end_line: self.toks[i - 1].end_line,
                    body: Vec::new(),
                    inline_body: false,
                    is_async: false,
                });
                seg = i + 1;
                continue;
            }
            let t = self.text(i);
            if self.kind(i) == TokenKind::Op {
                if is_open(t) {
                    depth += 1;
                } else if is_close(t) {
                    depth -= 1;
                }
            }
        }
        Ok(out)
    }

    fn check_simple(&self, start: usize, end: usize) -> Result<(), SyntaxError> {
        let first = self.text(start);
        if self.kind(start) == TokenKind::Name
            && matches!(
                first,
                "elif" | "else" | "except" | "finally" | "def" | "class" | "in" | "is" | "and" | "or" | "as"
            )
        {
            return Err(self.err(start, format!("invalid syntax near '{first}'")));
        }
        if first == "import" || first == "from" {
            return self.check_import(start, end);
        }
        self.check_expr(start..end)
    }

    fn check_import(&self, start: usize, end: usize) -> Result<(), SyntaxError> {
        let has_import = (start..end).any(|i| self.text(i) == "import" && self.kind(i) == TokenKind::Name);
        if !has_import || end == start + 1 {
            return Err(self.err(start, "invalid import statement"));
        }
        for i in start..end {
            let ok = match self.kind(i) {
                TokenKind::Name => true,
                TokenKind::Op => matches!(self.text(i), "." | "," | "(" | ")" | "*" | "..."),
                _ => false,
            };
            if !ok {
                return Err(self.err(i, "invalid import statement"));
            }
        }
        Ok(())
    }

    /// Coarse expression sanity: catches adjacent operands and dangling
    /// operators, which is how truncated or prose-contaminated code fails.
    fn check_expr(&self, r: Range<usize>) -> Result<(), SyntaxError> {
        let ends_operand = |i: usize| -> bool {
            let t = self.text(i);
            match self.kind(i) {
                TokenKind::Name => !is_keyword(t) || matches!(t, "None" | "True" | "False"),
                TokenKind::Number | TokenKind::String => true,
                TokenKind::Op => is_close(t),
                _ => false,
            }
        };
        let starts_operand = |i: usize| -> bool {
            let t = self.text(i);
            match self.kind(i) {
                TokenKind::Name => !is_keyword(t) || matches!(t, "None" | "True" | "False"),
                TokenKind::Number | TokenKind::String => true,
                _ => false,
            }
        };
        let binary_only = |i: usize| {
            self.kind(i) == TokenKind::Op
                && matches!(
                    self.text(i),
                    "=" | "==" | "!=" | "<=" | ">=" | "<" | ">" | "+=" | "-=" | "*=" | "/=" | "//=" | "%=" | ":=" | "->"
                )
        };
        for i in r.clone() {
            if i > r.start
                && binary_only(i)
                && self.kind(i - 1) == TokenKind::Op
                && !is_close(self.text(i - 1))
                && self.text(i - 1) != "..."
            {
                return Err(self.err(i, "invalid syntax"));
            }
            if i > r.start && ends_operand(i - 1) && starts_operand(i) {
                let both_strings = self.kind(i - 1) == TokenKind::String && self.kind(i) == TokenKind::String;
                let soft_keyword_lead = i - 1 == r.start && matches!(self.text(i - 1), "type" | "print" | "exec");
                if !both_strings && !(soft_keyword_lead && self.text(i - 1) == "type") {
                    return Err(self.err(i, "invalid syntax"));
                }
            }
        }
        if r.is_empty() {
            return Ok(());
        }
        let first = self.text(r.start);
        if self.kind(r.start) == TokenKind::Op && matches!(first, "=" | "==" | "," | ")" | "]" | "}" | ":" | "!=" | "->") {
            return Err(self.err(r.start, "invalid syntax"));
        }
        let last = r.end - 1;
        let lt = self.text(last);
        let dangling_op = self.kind(last) == TokenKind::Op
            && matches!(
                lt,
                "=" | "+" | "-" | "/" | "." | "==" | "!=" | "<" | ">" | "<=" | ">=" | "%" | "**" | "//" | "->"
                    | "+=" | "-=" | "*=" | "/=" | "|" | "&" | "^" | "<<" | ">>" | "@" | ":="
            );
        let dangling_kw = self.kind(last) == TokenKind::Name && matches!(lt, "and" | "or" | "not" | "in" | "is" | "if" | "else" | "lambda");
        if dangling_op || dangling_kw {
            return Err(self.err(last, "invalid syntax"));
        }
        Ok(())
    }
}

fn check_clause_order(stmts: &[Stmt], src: &str, toks: &[Token]) -> Result<(), SyntaxError> {
    let mut prev: Option<Clause> = None;
    let mut try_state: Option<(bool, bool)> = None; // (seen except, seen else)
    for s in stmts {
        let err = |m: &str| SyntaxError { line: s.line, message: m.into() };
        match s.clause {
            Some(Clause::Elif) if !matches!(prev, Some(Clause::If) | Some(Clause::Elif)) => {
                return Err(err("'elif' without 'if'"));
            }
            Some(Clause::Else) => {
                let ok = match prev {
                    Some(Clause::If | Clause::Elif | Clause::For | Clause::While) => true,
                    Some(Clause::Except) => try_state.map(|(e, el)| e && !el).unwrap_or(false),
                    _ => false,
                };
                if !ok {
                    return Err(err("'else' without a matching statement"));
                }
                if let Some(st) = try_state.as_mut() {
                    st.1 = true;
                }
            }
            Some(Clause::Except) => {
                if !matches!(prev, Some(Clause::Try) | Some(Clause::Except)) {
                    return Err(err("'except' without 'try'"));
                }
                if let Some(st) = try_state.as_mut() {
                    st.0 = true;
                }
            }
            Some(Clause::Finally) => {
                if try_state.is_none() {
                    return Err(err("'finally' without 'try'"));
                }
            }
            _ => {}
        }
        if let Some(Clause::Try) = prev {
            if !matches!(s.clause, Some(Clause::Except) | Some(Clause::Finally)) {
                return Err(SyntaxError { line: s.line, message: "'try' without 'except' or 'finally'".into() });
            }
        }
        match s.clause {
            Some(Clause::Try) => try_state = Some((false, false)),
            Some(Clause::Except) | Some(Clause::Finally) => {}
            Some(Clause::Else) if matches!(prev, Some(Clause::Except)) => {}
            _ => try_state = None,
        }
        prev = s.clause;
        if s.clause == Some(Clause::Finally) {
            try_state = None;
        }
        check_clause_order(&s.body, src, toks)?;
    }
    if let Some(Clause::Try) = prev {
        let line = stmts.last().map(|s| s.line).unwrap_or(0);
        return Err(SyntaxError { line, message: "'try' without 'except' or 'finally'".into() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_blocks() {
        let src = "class A(B):\n    x = 1\n\n    def f(self, y):\n        if y: return 1\n        return 2\n";
        let m = parse(src).unwrap();
        assert_eq!(m.body.len(), 1);
        let class = &m.body[0];
        assert_eq!(class.clause, Some(Clause::Class));
        assert_eq!(class.body.len(), 2);
        let f = &class.body[1];
        assert_eq!(f.clause, Some(Clause::Def));
        assert_eq!((f.line, f.end_line), (4, 6));
        assert!(f.body[0].inline_body);
        assert_eq!(m.slice(f.span.clone()).lines().count(), 3);
    }

    #[test]
    fn decorators_attach_to_definitions() {
        let src = "@dec\n@other(1)\ndef f():\n    pass\n";
        let m = parse(src).unwrap();
        assert_eq!(m.body[0].outer_start(), 0);
        assert_eq!(m.body[0].line, 3);
    }

    #[test]
    fn lambda_colons_in_headers() {
        parse("if (lambda: 1)():\n    pass\nwhile lambda: 0:\n    pass\n").unwrap();
        parse("f = lambda x: x\nd = {1: 2}\nx: int = 3\n").unwrap();
    }

    #[test]
    fn semicolons_split_statements() {
        let m = parse("a = 1; b = 2;\n").unwrap();
        assert_eq!(m.body.len(), 2);
    }

    #[test]
    fn rejects_broken_code() {
        for bad in [
            "def f(:\n    pass\n",
            "if x\n    pass\n",
            "def f():\nreturn 1\n",
            "x = = 1\n",
            "print 'hello'\n",
            "else:\n    pass\n",
            "try:\n    pass\nx = 1\n",
            "Here is the test:\nimport os\n",
            "x = 1 +\n",
            "a b\n",
        ] {
            assert!(check(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn accepts_common_constructs() {
        let src = r#"
import os, sys
from .x import (a,
    b as c)
from m import *

@decorator
async def g(x, *args, y=1, **kw) -> "T":
    async with ctx() as c, other():
        await c
    async for i in aiter():
        yield i

try:
    pass
except (A, B) as e:
    raise
except C:
    pass
else:
    pass
finally:
    pass

for i in range(3):
    continue
else:
    pass

match command:
    case [x, y]:
        pass
    case _:
        pass

x = [i for i in range(3) if i not in y]
z = "a" "b"
w = a if b else c
del x[0]
global q
"#;
        check(src).unwrap();
    }
}
