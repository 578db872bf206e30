//! Definitions, imports and call sites of one Python source file.

use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::prelude::*;

use super::lexer::{is_keyword, TokenKind};
use super::syntax::{parse, Clause, Module, Stmt};
use super::SyntaxError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Positional,
    VarArgs,
    KeywordOnly,
    VarKeyword,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
}

/// Statically visible shape of a call expression.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum CallTarget {
    /// `f(...)`
    Name(String),
    /// `self.m(...)` where `self` is the method's receiver parameter.
    SelfAttr(String),
    /// `super().m(...)`
    Super(String),
    /// `a.b.f(...)` with a plain dotted receiver.
    Dotted(Vec<String>),
    /// Anything else: calls on call results, subscripts, attribute chains
    /// rooted at the receiver's fields.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallSite {
    pub target: CallTarget,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub name: String,
    pub qualified_name: String,
    pub class_name: Option<String>,
    pub params: Vec<Param>,
    /// 1-based inclusive, decorators included.
    pub line_span: (u32, u32),
    /// Byte range, decorators included.
    pub span: Range<usize>,
    /// Byte range of the `def` header through its colon.
    pub header: Range<usize>,
    pub is_async: bool,
    pub calls: Vec<CallSite>,
}

impl FunctionDef {
    pub fn is_method(&self) -> bool {
        self.class_name.is_some()
    }

    /// Receiver parameter of a method (`self`/`cls` by position), if any.
    pub fn receiver(&self) -> Option<&str> {
        if !self.is_method() {
            return None;
        }
        self.params
            .first()
            .filter(|p| p.kind == ParamKind::Positional)
            .map(|p| p.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub name: String,
    pub qualified_name: String,
    /// Base expressions as written, keyword arguments excluded.
    pub bases: Vec<String>,
    pub line_span: (u32, u32),
    pub span: Range<usize>,
    pub header: Range<usize>,
    /// Class-level assignment statements.
    pub fields: Vec<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImportBinding {
    /// Name bound in the importing module (`*` for star imports).
    pub local: String,
    /// Module path as written; relative imports keep their leading dots.
    pub module: String,
    /// Imported attribute for `from m import attr`.
    pub attr: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportStmt {
    pub span: Range<usize>,
    pub bindings: Vec<ImportBinding>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleInfo {
    pub imports: Vec<ImportStmt>,
    /// Module-level assignment statements.
    pub globals: Vec<Range<usize>>,
    pub classes: Vec<ClassDef>,
    pub functions: Vec<FunctionDef>,
    /// Qualified names defined more than once; the last definition wins.
    pub redefined: Vec<String>,
}

impl ModuleInfo {
    pub fn function(&self, qualified_name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.qualified_name == qualified_name)
    }

    pub fn class(&self, qualified_name: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.qualified_name == qualified_name)
    }
}

pub fn analyze(src: &str) -> Result<ModuleInfo, SyntaxError> {
    let m = parse(src)?;
    let mut info = ModuleInfo::default();
    for s in &m.body {
        match s.clause {
            None => {
                let first = m.text(s.tokens.start);
                if first == "import" || first == "from" {
                    info.imports.push(ImportStmt { span: s.span.clone(), bindings: import_bindings(&m, s) });
                } else if is_assignment(&m, s) {
                    info.globals.push(s.span.clone());
                }
            }
            Some(Clause::Def) => push_function(&mut info, function_def(&m, s, None)),
            Some(Clause::Class) => collect_class(&m, s, None, &mut info),
            _ => {}
        }
    }
    Ok(info)
}

fn push_function(info: &mut ModuleInfo, f: FunctionDef) {
    if let Some(pos) = info.functions.iter().position(|g| g.qualified_name == f.qualified_name) {
        info.functions.remove(pos);
        if !info.redefined.contains(&f.qualified_name) {
            info.redefined.push(f.qualified_name.clone());
        }
    }
    info.functions.push(f);
}

pub(crate) fn line_of(src: &str, offset: usize) -> u32 {
    1 + src.as_bytes()[..offset].iter().filter(|&&b| b == b'\n').count() as u32
}

fn collect_class(m: &Module<'_>, s: &Stmt, outer: Option<&str>, info: &mut ModuleInfo) {
    let kw = s.keyword_token();
    let name = m.text(kw + 1).to_string();
    let qualified_name = match outer {
        Some(o) => format!("{o}.{name}"),
        None => name.clone(),
    };
    let mut bases = Vec::new();
    if m.text(kw + 2) == "(" {
        for arg in split_top_level(m, kw + 3..s.tokens.end - 2) {
            let has_kw = arg.clone().any(|i| m.text(i) == "=" && m.tok(i).kind == TokenKind::Op);
            if !arg.is_empty() && !has_kw {
                bases.push(m.tokens_text(arg).to_string());
            }
        }
    }
    let header_end = m.tok(s.tokens.end - 1).end;
    let outer_start = s.outer_start();
    let mut fields = Vec::new();
    for child in &s.body {
        if child.clause.is_none() && is_assignment(m, child) {
            fields.push(child.span.clone());
        }
    }
    info.classes.push(ClassDef {
        name,
        qualified_name: qualified_name.clone(),
        bases,
        line_span: (line_of(m.src, outer_start), s.end_line),
        span: outer_start..s.span.end,
        header: outer_start..header_end,
        fields,
    });
    for child in &s.body {
        match child.clause {
            Some(Clause::Def) => push_function(info, function_def(m, child, Some(&qualified_name))),
            Some(Clause::Class) => collect_class(m, child, Some(&qualified_name), info),
            _ => {}
        }
    }
}

fn split_top_level(m: &Module<'_>, r: Range<usize>) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut seg = r.start;
    for i in r.clone() {
        let t = m.text(i);
        if m.tok(i).kind == TokenKind::Op {
            match t {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                "," if depth == 0 => {
                    out.push(seg..i);
                    seg = i + 1;
                }
                _ => {}
            }
        }
    }
    if seg < r.end {
        out.push(seg..r.end);
    }
    out
}

fn is_assignment(m: &Module<'_>, s: &Stmt) -> bool {
    let mut depth = 0i32;
    for i in s.tokens.clone() {
        if m.tok(i).kind != TokenKind::Op {
            continue;
        }
        match m.text(i) {
            "(" | "[" | "{" => depth += 1,
            ")" | "]" | "}" => depth -= 1,
            "=" | ":" if depth == 0 => return true,
            _ => {}
        }
    }
    false
}

fn function_def(m: &Module<'_>, s: &Stmt, class: Option<&str>) -> FunctionDef {
    let kw = s.keyword_token();
    let name = m.text(kw + 1).to_string();
    let qualified_name = match class {
        Some(c) => format!("{c}.{name}"),
        None => name.clone(),
    };
    // parameters live between the '(' at kw+2 and its matching ')'
    let open = kw + 2;
    let mut depth = 0i32;
    let mut close = open;
    for i in open..s.tokens.end {
        match m.text(i) {
            "(" | "[" | "{" if m.tok(i).kind == TokenKind::Op => depth += 1,
            ")" | "]" | "}" if m.tok(i).kind == TokenKind::Op => {
                depth -= 1;
                if depth == 0 {
                    close = i;
                    break;
                }
            }
            _ => {}
        }
    }
    let mut params = Vec::new();
    let mut after_star = false;
    for seg in split_top_level(m, open + 1..close) {
        if seg.is_empty() {
            continue;
        }
        let first = m.text(seg.start);
        let (kind, name_idx) = match first {
            "*" => {
                after_star = true;
                (ParamKind::VarArgs, seg.start + 1)
            }
            "**" => (ParamKind::VarKeyword, seg.start + 1),
            "/" => continue,
            _ if after_star => (ParamKind::KeywordOnly, seg.start),
            _ => (ParamKind::Positional, seg.start),
        };
        if name_idx < seg.end && m.tok(name_idx).kind == TokenKind::Name {
            params.push(Param { name: m.text(name_idx).to_string(), kind });
        }
    }
    let outer_start = s.outer_start();
    let header_end = m.tok(s.tokens.end - 1).end;
    let body_tokens = s.tokens.end..token_index_at(m, s.span.end);
    let receiver = if class.is_some() {
        params.first().filter(|p| p.kind == ParamKind::Positional).map(|p| p.name.clone())
    } else {
        None
    };
    let calls = scan_calls(m, body_tokens, receiver.as_deref());
    FunctionDef {
        name,
        qualified_name,
        class_name: class.map(ToString::to_string),
        params,
        line_span: (line_of(m.src, outer_start), s.end_line),
        span: outer_start..s.span.end,
        header: s.span.start..header_end,
        is_async: s.is_async,
        calls,
    }
}

fn token_index_at(m: &Module<'_>, byte: usize) -> usize {
    m.tokens.partition_point(|t| t.start < byte)
}

fn scan_calls(m: &Module<'_>, r: Range<usize>, receiver: Option<&str>) -> Vec<CallSite> {
    let is_name = |i: usize| m.tok(i).kind == TokenKind::Name;
    let is_op = |i: usize, s: &str| m.tok(i).kind == TokenKind::Op && m.text(i) == s;
    let mut out = Vec::new();
    for i in r.clone() {
        if !is_op(i, "(") || i == r.start {
            continue;
        }
        let j = i - 1;
        let line = m.tok(i).line;
        if is_name(j) {
            let name = m.text(j);
            if is_keyword(name) {
                continue;
            }
            let mut parts = vec![name.to_string()];
            let mut k = j;
            while k >= r.start + 2 && is_op(k - 1, ".") && is_name(k - 2) && !is_keyword(m.text(k - 2)) {
                parts.insert(0, m.text(k - 2).to_string());
                k -= 2;
            }
            if k > r.start && (is_name(k - 1) && matches!(m.text(k - 1), "def" | "class")) {
                continue;
            }
            let target = if k > r.start && is_op(k - 1, ".") {
                // `super().m(` or a call on a complex receiver
                if parts.len() == 1
                    && k >= r.start + 4
                    && is_op(k - 2, ")")
                    && is_op(k - 3, "(")
                    && m.text(k - 4) == "super"
                {
                    CallTarget::Super(parts.remove(0))
                } else {
                    CallTarget::Dynamic
                }
            } else if parts.len() == 1 {
                CallTarget::Name(parts.remove(0))
            } else if Some(parts[0].as_str()) == receiver {
                if parts.len() == 2 {
                    CallTarget::SelfAttr(parts.remove(1))
                } else {
                    CallTarget::Dynamic
                }
            } else {
                CallTarget::Dotted(parts)
            };
            out.push(CallSite { target, line });
        } else if is_op(j, ")") || is_op(j, "]") {
            out.push(CallSite { target: CallTarget::Dynamic, line });
        }
    }
    out
}

fn import_bindings(m: &Module<'_>, s: &Stmt) -> Vec<ImportBinding> {
    let r = s.tokens.clone();
    let mut out = Vec::new();
    let dotted = |range: Range<usize>| -> String {
        range.map(|i| m.text(i)).collect::<Vec<_>>().concat()
    };
    if m.text(r.start) == "import" {
        for seg in split_top_level(m, r.start + 1..r.end) {
            let as_pos = seg.clone().find(|&i| m.text(i) == "as");
            match as_pos {
                Some(a) => out.push(ImportBinding {
                    local: m.text(a + 1).to_string(),
                    module: dotted(seg.start..a),
                    attr: None,
                }),
                None => {
                    let root = m.text(seg.start).to_string();
                    out.push(ImportBinding { local: root.clone(), module: root, attr: None });
                }
            }
        }
    } else {
        let Some(imp) = r.clone().find(|&i| m.text(i) == "import" && m.tok(i).kind == TokenKind::Name) else {
            return out;
        };
        let module = dotted(r.start + 1..imp);
        let names: Vec<usize> = (imp + 1..r.end).filter(|&i| !matches!(m.text(i), "(" | ")")).collect();
        let mut it = names.split(|&i| m.text(i) == ",");
        for seg in &mut it {
            if seg.is_empty() {
                continue;
            }
            let attr = m.text(seg[0]).to_string();
            let local = if seg.len() >= 3 && m.text(seg[1]) == "as" { m.text(seg[2]).to_string() } else { attr.clone() };
            out.push(ImportBinding { local, module: module.clone(), attr: Some(attr) });
        }
    }
    out
}
