//! Test generation: intra-file context, memory assembly, the two-stage
//! summarize-then-generate exchange, and self-debugging.

use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::analysis::{request_text, AnalysisStepRecord, FocalRecord, Session};
use crate::constraint::Mode;
use crate::diag::Diagnostic;
use crate::llm::{ChatError, Conversation};
use crate::outcome::RunResult;
use crate::prelude::*;
use crate::project::{FunctionRef, SourceIndex};
use crate::prompts::{self, Agent};
use crate::python::{self, CallTarget};
use crate::sanitize::{strip_assertions, AssertNames};
use crate::text::last_code_block;

const STAGE: &str = "testgen";

/// Default character budget of the rendered intra-file context.
pub const DEFAULT_CONTEXT_BUDGET: usize = 12_000;

/// File name of the generated test inside its per-method directory.
pub const TEST_FILE_NAME: &str = "test_gen.py";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    /// Byte offset in the host file; rendering follows file order.
    pub offset: usize,
    /// Leading whitespace of the snippet's first line.
    pub indent: String,
    /// Verbatim slice of the host file.
    pub text: String,
    /// `def` line(s) through the colon, for methods that may be shortened.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntraFileContext {
    pub module_path: String,
    pub entry: FunctionRef,
    pub imports: Vec<Snippet>,
    pub global_fields: Vec<Snippet>,
    /// Headers and class-level fields of the entry's class.
    pub class_defs: Vec<Snippet>,
    /// The entry method itself.
    pub method_defs: Vec<Snippet>,
    pub constructor: Option<Snippet>,
    /// Same-class methods the entry calls through `self`.
    pub invoked_class_methods: Vec<Snippet>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("file {0} is not indexed")]
    MissingFile(String),
    #[error("{0} is not defined in its file")]
    MissingFunction(String),
}

fn indent_at(src: &str, offset: usize) -> String {
    let line_start = src[..offset].rfind('\n').map_or(0, |i| i + 1);
    src[line_start..offset].chars().take_while(|c| c.is_whitespace()).collect()
}

fn snippet(src: &str, r: Range<usize>) -> Snippet {
    Snippet { offset: r.start, indent: indent_at(src, r.start), text: src[r].to_string(), signature: None }
}

pub fn collect_intra_file_context(entry: &FunctionRef, index: &SourceIndex) -> Result<IntraFileContext, ContextError> {
    let file = index.file(&entry.module_path).ok_or_else(|| ContextError::MissingFile(entry.module_path.clone()))?;
    let src = file.source.as_str();
    let info = &file.info;
    let def = info.function(&entry.qualified_name).ok_or_else(|| ContextError::MissingFunction(entry.id()))?;
    let method = |f: &python::FunctionDef| Snippet {
        signature: Some(src[f.header.clone()].to_string()),
        ..snippet(src, f.span.clone())
    };
    let mut cx = IntraFileContext {
        module_path: entry.module_path.clone(),
        entry: entry.clone(),
        imports: info.imports.iter().map(|i| snippet(src, i.span.clone())).collect(),
        global_fields: info.globals.iter().map(|g| snippet(src, g.clone())).collect(),
        class_defs: Vec::new(),
        method_defs: vec![snippet(src, def.span.clone())],
        constructor: None,
        invoked_class_methods: Vec::new(),
    };
    if let Some(class) = def.class_name.as_deref().and_then(|c| info.class(c)) {
        cx.class_defs.push(snippet(src, class.header.clone()));
        cx.class_defs.extend(class.fields.iter().map(|f| snippet(src, f.clone())));
        if def.name != "__init__" {
            cx.constructor = info.function(&format!("{}.__init__", class.qualified_name)).map(method);
        }
        let mut seen = BTreeSet::new();
        for call in &def.calls {
            if let CallTarget::SelfAttr(name) = &call.target {
                if name == "__init__" || name == &def.name || !seen.insert(name.clone()) {
                    continue;
                }
                if let Some(m) = info.function(&format!("{}.{name}", class.qualified_name)) {
                    cx.invoked_class_methods.push(method(m));
                }
            }
        }
        cx.invoked_class_methods.sort_by_key(|s| s.offset);
    }
    Ok(cx)
}

impl IntraFileContext {
    fn ordered(&self) -> Vec<(&Snippet, bool)> {
        let mut all: Vec<(&Snippet, bool)> = Vec::new();
        all.extend(self.imports.iter().map(|s| (s, false)));
        all.extend(self.global_fields.iter().map(|s| (s, false)));
        all.extend(self.class_defs.iter().map(|s| (s, false)));
        all.extend(self.method_defs.iter().map(|s| (s, false)));
        all.extend(self.constructor.iter().map(|s| (s, true)));
        all.extend(self.invoked_class_methods.iter().map(|s| (s, true)));
        all.sort_by_key(|(s, _)| s.offset);
        all
    }

    /// Renders the snippets in file order with their original indentation.
    /// Over `budget` characters, method bodies farthest from the entry are
    /// replaced by their signatures until the text fits.
    pub fn render(&self, budget: usize) -> String {
        let entry_offset = self.method_defs.first().map_or(0, |s| s.offset);
        let items = self.ordered();
        let mut shortened = vec![false; items.len()];
        let mut by_distance: Vec<usize> = (0..items.len()).filter(|&i| items[i].1).collect();
        by_distance.sort_by_key(|&i| core::cmp::Reverse(items[i].0.offset.abs_diff(entry_offset)));
        let mut text = render_items(&items, &shortened);
        for i in by_distance {
            if text.len() <= budget {
                break;
            }
            shortened[i] = true;
            text = render_items(&items, &shortened);
        }
        text
    }
}

fn render_items(items: &[(&Snippet, bool)], shortened: &[bool]) -> String {
    let mut out = String::new();
    let mut prev_kind_import = false;
    for (i, (s, _)) in items.iter().enumerate() {
        let is_import = s.text.starts_with("import ") || s.text.starts_with("from ");
        if !out.is_empty() {
            out.push_str(if is_import && prev_kind_import { "\n" } else { "\n\n" });
        }
        out.push_str(&s.indent);
        match (&s.signature, shortened[i]) {
            (Some(sig), true) => {
                out.push_str(sig);
                out.push('\n');
                out.push_str(&s.indent);
                out.push_str("    ...");
            }
            _ => out.push_str(s.text.trim_end()),
        }
        prev_kind_import = is_import;
    }
    out
}

/// Chat memory for generation: one user/assistant pair per propagation
/// step (F_n → F_1), or the focal-constraint exchange for single-method
/// chains, followed by the intra-file context.
pub fn assemble_memory(steps: &[&AnalysisStepRecord], focal: Option<&FocalRecord>, entry: &FunctionRef, context: &str) -> Conversation {
    let mut conv = Conversation::with_system(prompts::system_prompt(Agent::TestGeneration));
    if steps.is_empty() {
        if let Some(f) = focal {
            push_pair(&mut conv, request_text(&f.prompt), &f.response);
        }
    }
    for s in steps {
        push_pair(&mut conv, request_text(&s.prompt), &s.response);
    }
    conv.user(prompts::context_user(&entry.qualified_name, context));
    conv
}

fn push_pair(conv: &mut Conversation, user: &str, assistant: &str) {
    conv.user(if user.trim().is_empty() { "(empty request)" } else { user });
    conv.assistant(if assistant.trim().is_empty() { "(empty response)" } else { assistant });
}

/// Asks for a functionality summary. On success the conversation grows by
/// exactly two turns; an empty answer is retried once, then the summary is
/// skipped and the conversation left untouched.
pub fn summarize_method(
    session: &mut Session<'_>,
    conv: &mut Conversation,
    entry: &FunctionRef,
    entry_source: &str,
) -> Result<Option<String>, ChatError> {
    let mut attempt = conv.clone();
    attempt.user(prompts::summarize_user(&entry.qualified_name, entry_source));
    for _ in 0..2 {
        let text = session.ask(&attempt)?;
        if !text.trim().is_empty() {
            attempt.assistant(text.clone());
            *conv = attempt;
            return Ok(Some(text));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedTest {
    /// Sanitized source that is executed.
    pub source: String,
    /// Code block as returned by the model.
    pub raw_source: String,
    pub entry: FunctionRef,
    pub chain_id: String,
    pub mode: Mode,
    /// 0 initial, 1 self-debugged, 2 and up refined after reflection.
    pub iteration: u32,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
}

/// What the caller needs to identify and sanitize a generated test.
pub struct GenSpec<'a> {
    pub entry: &'a FunctionRef,
    pub focal: &'a FunctionRef,
    pub chain_id: &'a str,
    pub mode: Mode,
    pub names: &'a AssertNames,
}

/// Python module path for imports in the generated test.
pub fn import_hint(entry: &FunctionRef) -> String {
    let module = crate::project::module_name_for(&entry.module_path);
    match &entry.class_name {
        Some(c) => format!("The test runs from the project root; import `{c}` from module `{module}`."),
        None => format!("The test runs from the project root; import `{}` from module `{module}`.", entry.name()),
    }
}

fn has_test_function(src: &str) -> bool {
    src.lines().any(|l| {
        let t = l.trim_start();
        t.starts_with("def test") || t.starts_with("async def test") || (t.starts_with("class Test") && t.ends_with(':'))
    })
}

/// Checks a code block; `Err` explains what is wrong.
fn usable_test(code: Option<&str>) -> Result<&str, String> {
    let code = code.ok_or_else(|| "no fenced python block".to_string())?;
    python::check(code).map_err(|e| format!("the code does not parse ({e})"))?;
    if !has_test_function(code) {
        return Err("the code defines no test function".into());
    }
    Ok(code)
}

/// Sends `request`, accepting the last fenced python block. One re-prompt
/// when the block is missing or unusable. On success the exchange is kept
/// in `conv`.
pub fn request_test(
    session: &mut Session<'_>,
    conv: &mut Conversation,
    request: String,
    spec: &GenSpec<'_>,
    iteration: u32,
) -> Result<Result<GeneratedTest, String>, ChatError> {
    let mut attempt = conv.clone();
    attempt.user(request);
    let mut last_err = String::new();
    for round in 0..2 {
        let text = session.ask(&attempt)?;
        match usable_test(last_code_block(&text, &["python", "py", "python3"])) {
            Ok(code) => {
                let code = code.to_string();
                attempt.assistant(text.clone());
                *conv = attempt;
                return Ok(Ok(build_test(code, spec, iteration)));
            }
            Err(e) => {
                last_err = e;
                if round == 0 {
                    attempt.assistant(if text.trim().is_empty() { "(empty response)" } else { text.as_str() });
                    attempt.user(prompts::no_code_reprompt());
                }
            }
        }
    }
    Ok(Err(last_err))
}

fn build_test(raw: String, spec: &GenSpec<'_>, iteration: u32) -> GeneratedTest {
    let sanitized = strip_assertions(&raw, spec.names);
    let mut diagnostics = sanitized.diagnostics;
    let name = spec.entry.name();
    let invokes = if python::is_dunder(name) {
        true
    } else {
        raw.contains(name)
    };
    if !invokes {
        diagnostics.push(Diagnostic::warning(STAGE, format!("generated test never mentions `{name}`")));
    }
    GeneratedTest {
        source: sanitized.source,
        raw_source: raw,
        entry: spec.entry.clone(),
        chain_id: spec.chain_id.to_string(),
        mode: spec.mode,
        iteration,
        diagnostics,
    }
}

pub fn generate_test(
    session: &mut Session<'_>,
    conv: &mut Conversation,
    spec: &GenSpec<'_>,
) -> Result<Result<GeneratedTest, String>, ChatError> {
    let request =
        prompts::generate_user(&spec.entry.qualified_name, &spec.focal.qualified_name, spec.mode, &import_hint(spec.entry));
    request_test(session, conv, request, spec, 0)
}

/// One revision of an initial test that failed without a type error.
pub fn self_debug(
    session: &mut Session<'_>,
    conv: &mut Conversation,
    test: &GeneratedTest,
    run: &RunResult,
    spec: &GenSpec<'_>,
) -> Result<Result<GeneratedTest, String>, ChatError> {
    assert_eq!(test.iteration, 0, "self-debugging applies to initial tests only");
    let request = prompts::self_debug_user(&run.exception_class, &run.message, &run.traceback());
    request_test(session, conv, request, spec, 1)
}

/// A new test following reviewer suggestions.
pub fn refine(
    session: &mut Session<'_>,
    conv: &mut Conversation,
    test: &GeneratedTest,
    suggestions: &str,
    spec: &GenSpec<'_>,
) -> Result<Result<GeneratedTest, String>, ChatError> {
    let iteration = (test.iteration + 1).max(2);
    request_test(session, conv, prompts::refine_user(suggestions), spec, iteration)
}
