//! Assertion stripping for generated tests.
//!
//! Only assertion statements, framework assertion calls and `raises`-style
//! context-manager items are rewritten; every other byte of the file is
//! left alone. Evaluated operands survive as expression statements so the
//! code under test still runs.

use core::ops::Range;

use crate::diag::Diagnostic;
use crate::prelude::*;
use crate::python::lexer::TokenKind;
use crate::python::syntax::{parse, Clause, Module, Stmt};

const STAGE: &str = "sanitize";

/// Names recognized as assertion calls when they are the final attribute
/// (or the bare name) of a call statement.
pub const DEFAULT_ASSERT_CALLS: &[&str] = &[
    // unittest
    "assertEqual", "assertNotEqual", "assertTrue", "assertFalse", "assertIs", "assertIsNot", "assertIsNone",
    "assertIsNotNone", "assertIn", "assertNotIn", "assertIsInstance", "assertNotIsInstance", "assertAlmostEqual",
    "assertNotAlmostEqual", "assertGreater", "assertGreaterEqual", "assertLess", "assertLessEqual", "assertRegex",
    "assertNotRegex", "assertCountEqual", "assertMultiLineEqual", "assertSequenceEqual", "assertListEqual",
    "assertTupleEqual", "assertSetEqual", "assertDictEqual", "assertRaises", "assertRaisesRegex", "assertWarns",
    "assertWarnsRegex", "assertLogs", "assertNoLogs", "fail",
    // deprecated unittest aliases
    "assertEquals", "assertNotEquals", "assert_", "failUnless", "failIf", "failUnlessEqual", "failIfEqual",
    "assertAlmostEquals", "assertRegexpMatches", "assertRaisesRegexp", "assertItemsEqual",
    // pytest call forms
    "raises", "warns",
    // numpy.testing / pandas.testing
    "assert_equal", "assert_array_equal", "assert_almost_equal", "assert_array_almost_equal", "assert_allclose",
    "assert_approx_equal", "assert_array_less", "assert_string_equal", "assert_raises", "assert_warns",
    "assert_frame_equal", "assert_series_equal", "assert_index_equal", "assert_extension_array_equal",
    "assert_numpy_array_equal", "assert_produces_warning",
];

/// Context managers whose `with` item is removed.
pub const DEFAULT_ASSERT_CONTEXTS: &[&str] = &[
    "raises", "warns", "deprecated_call", "assertRaises", "assertRaisesRegex", "assertRaisesRegexp", "assertWarns",
    "assertWarnsRegex", "assertLogs", "assertNoLogs", "assert_raises", "assert_produces_warning",
];

/// Calls whose second positional argument is a callable invoked with the
/// remaining arguments, e.g. `assertRaises(E, f, *a)`.
const CALLABLE_FORMS: &[(&str, usize)] = &[
    ("assertRaises", 1),
    ("assertWarns", 1),
    ("raises", 1),
    ("warns", 1),
    ("assert_raises", 1),
    ("assert_warns", 1),
    ("assertRaisesRegex", 2),
    ("assertRaisesRegexp", 2),
    ("assertWarnsRegex", 2),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertNames {
    pub calls: BTreeSet<String>,
    pub contexts: BTreeSet<String>,
}

impl Default for AssertNames {
    fn default() -> Self {
        AssertNames {
            calls: DEFAULT_ASSERT_CALLS.iter().map(|s| s.to_string()).collect(),
            contexts: DEFAULT_ASSERT_CONTEXTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sanitized {
    pub source: String,
    /// Number of statements or `with` items rewritten.
    pub rewrites: usize,
    pub diagnostics: Vec<Diagnostic>,
}

/// Removes assertions from `src`. Unparseable input is returned unchanged
/// with a diagnostic.
pub fn strip_assertions(src: &str, names: &AssertNames) -> Sanitized {
    let module = match parse(src) {
        Ok(m) => m,
        Err(e) => {
            return Sanitized {
                source: src.to_string(),
                rewrites: 0,
                diagnostics: vec![Diagnostic::warning(STAGE, format!("test does not parse, left as is: {e}"))],
            }
        }
    };
    let mut edits: Vec<(Range<usize>, String)> = Vec::new();
    let cx = Cx { m: &module, names };
    module.walk(|stmt, _| cx.visit(stmt, &mut edits));
    edits.sort_by_key(|(r, _)| r.start);
    let mut out = String::with_capacity(src.len());
    let mut at = 0;
    for (r, text) in &edits {
        out.push_str(&src[at..r.start]);
        out.push_str(text);
        at = r.end;
    }
    out.push_str(&src[at..]);
    let mut diagnostics = Vec::new();
    if let Err(e) = parse(&out) {
        // should not happen; fall back rather than emit a broken file
        diagnostics.push(Diagnostic::error(STAGE, format!("sanitized test failed to parse, kept original: {e}")));
        return Sanitized { source: src.to_string(), rewrites: 0, diagnostics };
    }
    Sanitized { source: out, rewrites: edits.len(), diagnostics }
}

enum Kept {
    Expr(Range<usize>),
    /// `assertRaises(E, f, *a)` style: the callable and its arguments.
    Call(Vec<Range<usize>>),
}

struct Cx<'a, 'm> {
    m: &'a Module<'m>,
    names: &'a AssertNames,
}

impl Cx<'_, '_> {
    fn text(&self, i: usize) -> &str {
        self.m.text(i)
    }

    fn kind(&self, i: usize) -> TokenKind {
        self.m.tok(i).kind
    }

    fn visit(&self, stmt: &Stmt, edits: &mut Vec<(Range<usize>, String)>) {
        match stmt.clause {
            None => {
                let r = stmt.tokens.clone();
                if r.is_empty() {
                    return;
                }
                let is_assert = self.text(r.start) == "assert" && self.kind(r.start) == TokenKind::Name;
                if is_assert || self.assert_call(r.clone()).is_some() {
                    let body = if is_assert { self.assert_expr(r) } else { r };
                    let kept = self.reduce(body);
                    edits.push((self.byte_range(stmt.tokens.clone()), self.render(&kept)));
                }
            }
            Some(Clause::With) => self.visit_with(stmt, edits),
            Some(_) => {}
        }
    }

    fn byte_range(&self, r: Range<usize>) -> Range<usize> {
        self.m.tok(r.start).start..self.m.tok(r.end - 1).end
    }

    /// Tokens of `assert <expr>[, <msg>]` minus the keyword and message.
    fn assert_expr(&self, r: Range<usize>) -> Range<usize> {
        let inner = r.start + 1..r.end;
        match self.split_top(inner.clone(), &[","]).into_iter().next() {
            Some(first) => first,
            None => inner,
        }
    }

    /// If `r` is exactly `name(...)` or `a.b.name(...)` with `name` in the
    /// assertion list, returns `(name, argument token range)`.
    fn assert_call(&self, r: Range<usize>) -> Option<(&str, Range<usize>)> {
        let (name, open) = self.dotted_callee(r.clone())?;
        if !self.names.calls.contains(name) {
            return None;
        }
        let close = self.matching(open)?;
        (close + 1 == r.end).then_some((name, open + 1..close))
    }

    /// Parses a leading `a.b.c(` and returns `(c, index of "(")`.
    fn dotted_callee(&self, r: Range<usize>) -> Option<(&str, usize)> {
        let mut i = r.start;
        let last = loop {
            if i >= r.end || self.kind(i) != TokenKind::Name {
                return None;
            }
            let name = i;
            i += 1;
            if i < r.end && self.text(i) == "." {
                i += 1;
                continue;
            }
            break name;
        };
        (i < r.end && self.text(i) == "(").then(|| (self.text(last), i))
    }

    fn matching(&self, open: usize) -> Option<usize> {
        let mut depth = 0usize;
        for i in open..self.m.tokens.len() {
            if self.kind(i) != TokenKind::Op {
                continue;
            }
            match self.text(i) {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => {
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

    /// Splits `r` at top-level occurrences of `seps` (token texts).
    fn split_top(&self, r: Range<usize>, seps: &[&str]) -> Vec<Range<usize>> {
        let mut parts = Vec::new();
        let mut depth = 0i32;
        let mut start = r.start;
        for i in r.clone() {
            let t = self.text(i);
            if self.kind(i) == TokenKind::Op {
                match t {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth -= 1,
                    _ => {}
                }
            }
            if depth == 0 && seps.contains(&t) && self.kind(i) == TokenKind::Op {
                parts.push(start..i);
                start = i + 1;
            }
        }
        parts.push(start..r.end);
        parts.into_iter().filter(|p| !p.is_empty()).collect()
    }

    fn top_level_has(&self, r: Range<usize>, words: &[&str]) -> bool {
        let mut depth = 0i32;
        for i in r {
            let t = self.text(i);
            match (self.kind(i), t) {
                (TokenKind::Op, "(" | "[" | "{") => depth += 1,
                (TokenKind::Op, ")" | "]" | "}") => depth -= 1,
                (TokenKind::Name, w) if depth == 0 && words.contains(&w) => return true,
                _ => {}
            }
        }
        false
    }

    /// Splits at top-level comparison operators, including `in`, `not in`,
    /// `is` and `is not`.
    fn split_comparison(&self, r: Range<usize>) -> Vec<Range<usize>> {
        let mut parts = Vec::new();
        let mut depth = 0i32;
        let mut start = r.start;
        let mut i = r.start;
        while i < r.end {
            let t = self.text(i);
            let k = self.kind(i);
            if k == TokenKind::Op {
                match t {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth -= 1,
                    _ => {}
                }
            }
            let width = if depth != 0 {
                0
            } else if k == TokenKind::Op && matches!(t, "==" | "!=" | "<" | ">" | "<=" | ">=" | "<>") {
                1
            } else if k == TokenKind::Name && t == "in" {
                1
            } else if k == TokenKind::Name && t == "is" {
                if i + 1 < r.end && self.text(i + 1) == "not" {
                    2
                } else {
                    1
                }
            } else if k == TokenKind::Name && t == "not" && i + 1 < r.end && self.text(i + 1) == "in" && i > start {
                2
            } else {
                0
            };
            if width > 0 {
                parts.push(start..i);
                start = i + width;
                i += width;
                continue;
            }
            i += 1;
        }
        parts.push(start..r.end);
        parts
    }

    fn is_literal(&self, r: Range<usize>) -> bool {
        !r.is_empty()
            && r.clone().all(|i| match self.kind(i) {
                TokenKind::Number | TokenKind::String => true,
                TokenKind::Name => matches!(self.text(i), "True" | "False" | "None" | "Ellipsis"),
                TokenKind::Op => matches!(self.text(i), "-" | "+" | "~" | "(" | ")" | "[" | "]" | "{" | "}" | "," | ":" | "..."),
                _ => false,
            })
    }

    /// Expressions worth keeping from an asserted expression.
    fn reduce(&self, mut r: Range<usize>) -> Vec<Kept> {
        while !r.is_empty() && self.text(r.start) == "not" && self.kind(r.start) == TokenKind::Name {
            r.start += 1;
        }
        if r.is_empty() || self.is_literal(r.clone()) {
            return Vec::new();
        }
        // a fully parenthesized non-tuple expression
        if self.text(r.start) == "(" && self.matching(r.start) == Some(r.end - 1) {
            let inner = r.start + 1..r.end - 1;
            if self.split_top(inner.clone(), &[","]).len() == 1 && !self.top_level_has(inner.clone(), &["for"]) {
                return self.reduce(inner);
            }
        }
        if let Some((name, args)) = self.assert_call(r.clone()) {
            return self.reduce_call(name, args);
        }
        if self.top_level_has(r.clone(), &["and", "or", "if", "lambda"]) {
            return vec![Kept::Expr(r)];
        }
        let parts = self.split_comparison(r.clone());
        if parts.len() == 1 {
            return vec![Kept::Expr(r)];
        }
        parts.into_iter().flat_map(|p| self.reduce(p)).collect()
    }

    fn reduce_call(&self, name: &str, args: Range<usize>) -> Vec<Kept> {
        let items = self.split_top(args, &[","]);
        if let Some(&(_, at)) = CALLABLE_FORMS.iter().find(|(n, _)| *n == name) {
            if items.len() > at && !self.is_keyword_arg(items[at].clone()) {
                return vec![Kept::Call(items[at..].to_vec())];
            }
        }
        items
            .into_iter()
            .filter(|a| !self.is_keyword_arg(a.clone()) && !matches!(self.text(a.start), "*" | "**"))
            .flat_map(|a| self.reduce(a))
            .collect()
    }

    fn is_keyword_arg(&self, r: Range<usize>) -> bool {
        r.len() >= 2 && self.kind(r.start) == TokenKind::Name && self.text(r.start + 1) == "="
    }

    fn render(&self, kept: &[Kept]) -> String {
        if kept.is_empty() {
            return "pass".into();
        }
        let parts: Vec<String> = kept
            .iter()
            .map(|k| match k {
                Kept::Call(items) => {
                    let callee = self.m.tokens_text(items[0].clone());
                    let args: Vec<&str> = items[1..]
                        .iter()
                        .filter(|a| !(self.is_keyword_arg((*a).clone()) && self.text(a.start) == "msg"))
                        .map(|a| self.m.tokens_text(a.clone()))
                        .collect();
                    format!("{}({})", paren_if_needed(callee), args.join(", "))
                }
                Kept::Expr(r) => {
                    let text = self.m.tokens_text(r.clone());
                    let bracketed = self.text(r.start) == "(" && self.matching(r.start) == Some(r.end - 1);
                    if text.contains('\n') && !bracketed {
                        format!("({text})")
                    } else {
                        text.to_string()
                    }
                }
            })
            .collect();
        parts.join("; ")
    }

    fn visit_with(&self, stmt: &Stmt, edits: &mut Vec<(Range<usize>, String)>) {
        let kw = stmt.keyword_token();
        let colon = stmt.tokens.end - 1;
        let mut items_range = kw + 1..colon;
        if self.text(items_range.start) == "(" && self.matching(items_range.start) == Some(colon - 1) {
            let inner = items_range.start + 1..colon - 1;
            if self.split_top(inner.clone(), &[","]).len() > 1 || self.top_level_has(inner.clone(), &["as"]) {
                items_range = inner;
            }
        }
        let items = self.split_top(items_range, &[","]);
        let is_assert_item: Vec<bool> = items
            .iter()
            .map(|it| {
                let expr = self.split_top_word(it.clone(), "as");
                match self.dotted_callee(expr.clone()) {
                    Some((name, open)) => {
                        self.names.contexts.contains(name) && self.matching(open).is_some_and(|c| c + 1 == expr.end)
                    }
                    None => false,
                }
            })
            .collect();
        let removed = is_assert_item.iter().filter(|b| **b).count();
        if removed == 0 {
            return;
        }
        if removed == items.len() {
            let start = self.m.tok(stmt.tokens.start).start;
            let end = self.m.tok(colon).end;
            edits.push((start..end, "if True:".into()));
            return;
        }
        // drop each assertion item together with one adjacent comma
        let mut local: Vec<Range<usize>> = Vec::new();
        for (idx, it) in items.iter().enumerate() {
            if !is_assert_item[idx] {
                continue;
            }
            let (from, to) = if idx + 1 < items.len() {
                (self.m.tok(it.start).start, self.m.tok(items[idx + 1].start).start)
            } else {
                (self.m.tok(items[idx - 1].end - 1).end, self.m.tok(it.end - 1).end)
            };
            local.push(from..to);
        }
        // removing the last item and its predecessor can overlap
        let mut merged: Vec<Range<usize>> = Vec::new();
        for r in local {
            match merged.last_mut() {
                Some(last) if r.start < last.end => last.end = last.end.max(r.end),
                _ => merged.push(r),
            }
        }
        edits.extend(merged.into_iter().map(|r| (r, String::new())));
    }

    /// Part of `r` before a top-level keyword `word`.
    fn split_top_word(&self, r: Range<usize>, word: &str) -> Range<usize> {
        let mut depth = 0i32;
        for i in r.clone() {
            match (self.kind(i), self.text(i)) {
                (TokenKind::Op, "(" | "[" | "{") => depth += 1,
                (TokenKind::Op, ")" | "]" | "}") => depth -= 1,
                (TokenKind::Name, w) if depth == 0 && w == word => return r.start..i,
                _ => {}
            }
        }
        r
    }
}

fn paren_if_needed(callee: &str) -> String {
    let simple = callee.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.');
    if simple {
        callee.to_string()
    } else {
        format!("({callee})")
    }
}
