//! Project model: the source index, the static call graph and the
//! invocation chains that end at a focal method.

use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::prelude::*;
use crate::python::{self, FunctionDef, ModuleInfo};
use crate::text::sha256_hex;
use crate::SCHEMA_VERSION;

mod chains;
mod graph;

pub use chains::{extract_chains, sample_representative_chain, InvocationChain, NoChains, DEFAULT_MAX_DEPTH};
pub use graph::{build_call_graph, find_entry_points, CallGraph, Edge, GraphDiagnostics, GraphDocument};

/// An addressable top-level function or class-level method.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionRef {
    pub module_path: String,
    pub qualified_name: String,
    pub line_span: (u32, u32),
    pub is_method: bool,
    pub class_name: Option<String>,
    pub is_public: bool,
}

impl FunctionRef {
    pub fn new(module_path: &str, def: &FunctionDef) -> Self {
        FunctionRef {
            module_path: module_path.to_string(),
            qualified_name: def.qualified_name.clone(),
            line_span: def.line_span,
            is_method: def.is_method(),
            class_name: def.class_name.clone(),
            is_public: is_public_name(&def.name),
        }
    }

    /// `path/to/file.py::Class.method`
    pub fn id(&self) -> String {
        format!("{}::{}", self.module_path, self.qualified_name)
    }

    /// Unqualified function name.
    pub fn name(&self) -> &str {
        self.qualified_name.rsplit('.').next().unwrap_or(&self.qualified_name)
    }

    /// File-name friendly identifier, e.g. `pkg.indexing._LocIndexer._validate_key`.
    pub fn slug(&self) -> String {
        let module = self.module_path.trim_end_matches(".py").replace('/', ".");
        crate::text::slug(&format!("{module}.{}", self.qualified_name))
    }
}

impl fmt::Display for FunctionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}::{}", self.module_path, self.qualified_name)
    }
}

impl Ord for FunctionRef {
    fn cmp(&self, other: &Self) -> Ordering {
        self.module_path
            .cmp(&other.module_path)
            .then(self.line_span.cmp(&other.line_span))
            .then_with(|| self.qualified_name.cmp(&other.qualified_name))
            .then_with(|| self.class_name.cmp(&other.class_name))
            .then(self.is_method.cmp(&other.is_method))
            .then(self.is_public.cmp(&other.is_public))
    }
}

impl PartialOrd for FunctionRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Names without a leading underscore are public; dunder methods are
/// treated as public entry points as well.
pub fn is_public_name(name: &str) -> bool {
    !name.starts_with('_') || python::is_dunder(name)
}

/// One indexed source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub module_name: String,
    pub source: String,
    pub sha256: String,
    pub info: ModuleInfo,
}

impl SourceFile {
    pub fn is_package_init(&self) -> bool {
        self.path == "__init__.py" || self.path.ends_with("/__init__.py")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

/// Parsed view of a project tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceIndex {
    pub root: String,
    pub files: BTreeMap<String, SourceFile>,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LookupError {
    #[error("no function matches `{0}`")]
    NotFound(String),
    #[error("`{selector}` is ambiguous: {}", candidates.join(", "))]
    Ambiguous { selector: String, candidates: Vec<String> },
}

/// Dotted module name for a project-relative path.
pub fn module_name_for(path: &str) -> String {
    let stem = path.strip_suffix(".py").unwrap_or(path);
    let dotted = stem.replace('/', ".");
    match dotted.strip_suffix(".__init__") {
        Some(pkg) => pkg.to_string(),
        None if dotted == "__init__" => String::new(),
        None => dotted,
    }
}

/// Builds the index from `(relative path, contents)` pairs. Files that fail
/// to parse are recorded in `skipped` rather than aborting.
pub fn index_project<I, P, S>(root: &str, files: I) -> SourceIndex
where
    I: IntoIterator<Item = (P, S)>,
    P: Into<String>,
    S: Into<String>,
{
    let mut index = SourceIndex { root: root.to_string(), files: BTreeMap::new(), skipped: Vec::new() };
    for (path, source) in files {
        let path = path.into().replace('\\', "/");
        let source = source.into();
        match python::analyze(&source) {
            Ok(info) => {
                let file = SourceFile {
                    module_name: module_name_for(&path),
                    sha256: sha256_hex(source.as_bytes()),
                    path: path.clone(),
                    source,
                    info,
                };
                index.files.insert(path, file);
            }
            Err(e) => index.skipped.push(SkippedFile { path, reason: e.to_string() }),
        }
    }
    index.skipped.sort_by(|a, b| a.path.cmp(&b.path));
    index
}

impl SourceIndex {
    /// Every indexed function, in `(module_path, line)` order.
    pub fn functions(&self) -> BTreeSet<FunctionRef> {
        self.files
            .values()
            .flat_map(|f| f.info.functions.iter().map(move |d| FunctionRef::new(&f.path, d)))
            .collect()
    }

    pub fn file(&self, path: &str) -> Option<&SourceFile> {
        self.files.get(path)
    }

    pub fn def(&self, f: &FunctionRef) -> Option<&FunctionDef> {
        self.files.get(&f.module_path)?.info.function(&f.qualified_name)
    }

    /// Verbatim source of a function, decorators included.
    pub fn source_of(&self, f: &FunctionRef) -> Option<&str> {
        let file = self.files.get(&f.module_path)?;
        let def = file.info.function(&f.qualified_name)?;
        Some(&file.source[def.span.clone()])
    }

    /// Resolves `path.py::Qual.name`, `Qual.name` or a bare name.
    pub fn resolve(&self, selector: &str) -> Result<FunctionRef, LookupError> {
        let all = self.functions();
        let matches: Vec<&FunctionRef> = if let Some((path, qual)) = selector.split_once("::") {
            all.iter().filter(|f| f.module_path == path && f.qualified_name == qual).collect()
        } else {
            let exact: Vec<_> = all.iter().filter(|f| f.qualified_name == selector).collect();
            if exact.is_empty() {
                all.iter().filter(|f| f.name() == selector).collect()
            } else {
                exact
            }
        };
        match matches.as_slice() {
            [] => Err(LookupError::NotFound(selector.to_string())),
            [one] => Ok((*one).clone()),
            many => Err(LookupError::Ambiguous {
                selector: selector.to_string(),
                candidates: many.iter().map(|f| f.id()).collect(),
            }),
        }
    }

    pub fn document(&self) -> IndexDocument {
        let files = self
            .files
            .values()
            .map(|f| {
                let doc = FileDocument {
                    module: f.module_name.clone(),
                    sha256: f.sha256.clone(),
                    imports: f.info.imports.iter().flat_map(|i| i.bindings.iter().cloned()).collect(),
                    globals: f.info.globals.len(),
                    classes: f
                        .info
                        .classes
                        .iter()
                        .map(|c| ClassDocument {
                            qualified_name: c.qualified_name.clone(),
                            bases: c.bases.clone(),
                            line_span: c.line_span,
                        })
                        .collect(),
                    functions: f
                        .info
                        .functions
                        .iter()
                        .map(|d| FunctionDocument {
                            function: FunctionRef::new(&f.path, d),
                            params: d.params.clone(),
                        })
                        .collect(),
                    redefined: f.info.redefined.clone(),
                };
                (f.path.clone(), doc)
            })
            .collect();
        IndexDocument { schema_version: SCHEMA_VERSION, root: self.root.clone(), files, skipped: self.skipped.clone() }
    }
}

/// Serialized form of [`SourceIndex`] (`index.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexDocument {
    pub schema_version: u32,
    pub root: String,
    pub files: BTreeMap<String, FileDocument>,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDocument {
    pub module: String,
    pub sha256: String,
    pub imports: Vec<python::ImportBinding>,
    pub globals: usize,
    pub classes: Vec<ClassDocument>,
    pub functions: Vec<FunctionDocument>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub redefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDocument {
    pub qualified_name: String,
    pub bases: Vec<String>,
    pub line_span: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDocument {
    pub function: FunctionRef,
    pub params: Vec<python::Param>,
}
