//! Name-based, flow-insensitive call graph over the indexed functions.

use serde::{Deserialize, Serialize};

use crate::prelude::*;
use crate::python::CallTarget;
use crate::SCHEMA_VERSION;

use super::{FunctionRef, SourceFile, SourceIndex};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub caller: FunctionRef,
    pub callee: FunctionRef,
    pub call_site_line: u32,
}

/// Counts of call sites that produced no edge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDiagnostics {
    pub resolved: usize,
    /// Calls to names that are not defined in the project (builtins,
    /// stdlib, third-party packages).
    pub external: usize,
    /// Calls whose receiver cannot be determined statically.
    pub unresolved_dynamic: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallGraph {
    nodes: BTreeSet<FunctionRef>,
    edges: BTreeSet<Edge>,
    callers: BTreeMap<FunctionRef, BTreeSet<FunctionRef>>,
    callees: BTreeMap<FunctionRef, BTreeSet<FunctionRef>>,
    pub diagnostics: GraphDiagnostics,
}

impl CallGraph {
    /// Edges whose endpoints are not in `nodes` are dropped.
    pub fn new(nodes: BTreeSet<FunctionRef>, edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut g = CallGraph { nodes, ..Default::default() };
        for e in edges {
            if g.nodes.contains(&e.caller) && g.nodes.contains(&e.callee) {
                g.callers.entry(e.callee.clone()).or_default().insert(e.caller.clone());
                g.callees.entry(e.caller.clone()).or_default().insert(e.callee.clone());
                g.edges.insert(e);
            }
        }
        g
    }

    pub fn nodes(&self) -> &BTreeSet<FunctionRef> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn contains(&self, f: &FunctionRef) -> bool {
        self.nodes.contains(f)
    }

    pub fn has_edge(&self, caller: &FunctionRef, callee: &FunctionRef) -> bool {
        self.callees.get(caller).is_some_and(|c| c.contains(callee))
    }

    pub fn callers_of(&self, f: &FunctionRef) -> impl Iterator<Item = &FunctionRef> {
        self.callers.get(f).into_iter().flatten()
    }

    pub fn callees_of(&self, f: &FunctionRef) -> impl Iterator<Item = &FunctionRef> {
        self.callees.get(f).into_iter().flatten()
    }

    pub fn find(&self, qualified_name: &str) -> Option<&FunctionRef> {
        self.nodes.iter().find(|f| f.qualified_name == qualified_name)
    }

    pub fn document(&self) -> GraphDocument {
        GraphDocument {
            schema_version: SCHEMA_VERSION,
            nodes: self.nodes.iter().cloned().collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDocument { caller: e.caller.id(), callee: e.callee.id(), call_site_line: e.call_site_line })
                .collect(),
            diagnostics: self.diagnostics,
        }
    }
}

/// Serialized form of [`CallGraph`] (`graph.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub schema_version: u32,
    pub nodes: Vec<FunctionRef>,
    pub edges: Vec<EdgeDocument>,
    pub diagnostics: GraphDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDocument {
    pub caller: String,
    pub callee: String,
    pub call_site_line: u32,
}

#[derive(Debug, Clone)]
enum Symbol<'a> {
    Function(FunctionRef),
    Class(&'a SourceFile, String),
    Module(String),
}

enum Resolution {
    Edge(FunctionRef),
    External,
    Dynamic,
}

struct Resolver<'a> {
    index: &'a SourceIndex,
    modules: BTreeMap<&'a str, &'a SourceFile>,
}

const MAX_HOPS: usize = 8;

impl<'a> Resolver<'a> {
    fn new(index: &'a SourceIndex) -> Self {
        let modules = index.files.values().map(|f| (f.module_name.as_str(), f)).collect();
        Resolver { index, modules }
    }

    fn module_file(&self, name: &str) -> Option<&'a SourceFile> {
        self.modules.get(name).copied()
    }

    fn is_project_module(&self, name: &str) -> bool {
        if self.modules.contains_key(name) {
            return true;
        }
        let prefix = format!("{name}.");
        self.modules.keys().any(|m| m.starts_with(&prefix))
    }

    /// Absolute module name for an import as written in `from`.
    fn absolute_module(&self, from: &SourceFile, written: &str) -> Option<String> {
        let dots = written.chars().take_while(|&c| c == '.').count();
        let rest = &written[dots..];
        if dots == 0 {
            // tolerate imports that include the project directory itself
            let parts: Vec<&str> = rest.split('.').collect();
            for skip in 0..parts.len() {
                let candidate = parts[skip..].join(".");
                if self.is_project_module(&candidate) {
                    return Some(candidate);
                }
            }
            return Some(rest.to_string());
        }
        let mut base: Vec<&str> = if from.module_name.is_empty() {
            Vec::new()
        } else {
            from.module_name.split('.').collect()
        };
        if !from.is_package_init() {
            base.pop();
        }
        for _ in 1..dots {
            base.pop()?;
        }
        if !rest.is_empty() {
            base.extend(rest.split('.'));
        }
        Some(base.join("."))
    }

    fn lookup(&self, file: &'a SourceFile, name: &str, hops: usize) -> Option<Symbol<'a>> {
        if hops > MAX_HOPS {
            return None;
        }
        if let Some(def) = file.info.function(name) {
            if !def.is_method() {
                return Some(Symbol::Function(FunctionRef::new(&file.path, def)));
            }
        }
        if file.info.class(name).is_some() {
            return Some(Symbol::Class(file, name.to_string()));
        }
        let bindings = file.info.imports.iter().flat_map(|i| i.bindings.iter());
        let mut star = Vec::new();
        for b in bindings {
            if b.local == "*" {
                star.push(b);
                continue;
            }
            if b.local != name {
                continue;
            }
            let module = self.absolute_module(file, &b.module)?;
            return match &b.attr {
                None => Some(Symbol::Module(module)),
                Some(attr) => {
                    let sub = if module.is_empty() { attr.clone() } else { format!("{module}.{attr}") };
                    if self.is_project_module(&sub) {
                        Some(Symbol::Module(sub))
                    } else if let Some(target) = self.module_file(&module) {
                        self.lookup(target, attr, hops + 1)
                    } else {
                        None
                    }
                }
            };
        }
        for b in star {
            if let Some(target) = self.absolute_module(file, &b.module).and_then(|m| self.module_file(&m)) {
                if let Some(sym) = self.lookup(target, name, hops + 1) {
                    return Some(sym);
                }
            }
        }
        None
    }

    /// Looks up `method` on a class, then depth-first through its in-project bases.
    fn find_method(&self, file: &'a SourceFile, class: &str, method: &str, hops: usize) -> Option<FunctionRef> {
        if hops > MAX_HOPS {
            return None;
        }
        let qual = format!("{class}.{method}");
        if let Some(def) = file.info.function(&qual) {
            return Some(FunctionRef::new(&file.path, def));
        }
        let cdef = file.info.class(class)?;
        cdef.bases
            .iter()
            .find_map(|base| match self.dotted_symbol(file, base, hops + 1)? {
                Symbol::Class(bf, bc) => self.find_method(bf, &bc, method, hops + 1),
                _ => None,
            })
    }

    fn dotted_symbol(&self, file: &'a SourceFile, dotted: &str, hops: usize) -> Option<Symbol<'a>> {
        let parts: Vec<&str> = dotted.split('.').map(str::trim).collect();
        let mut sym = self.lookup(file, parts[0], hops)?;
        for p in &parts[1..] {
            sym = match sym {
                Symbol::Module(m) => {
                    let sub = format!("{m}.{p}");
                    if self.is_project_module(&sub) {
                        Symbol::Module(sub)
                    } else {
                        self.lookup(self.module_file(&m)?, p, hops + 1)?
                    }
                }
                Symbol::Class(f, c) => {
                    let nested = format!("{c}.{p}");
                    if f.info.class(&nested).is_some() {
                        Symbol::Class(f, nested)
                    } else {
                        return None;
                    }
                }
                Symbol::Function(_) => return None,
            };
        }
        Some(sym)
    }

    fn constructor(&self, file: &'a SourceFile, class: &str) -> Resolution {
        match self.find_method(file, class, "__init__", 0) {
            Some(f) => Resolution::Edge(f),
            None => Resolution::External,
        }
    }

    fn resolve(&self, file: &'a SourceFile, caller_class: Option<&str>, target: &CallTarget) -> Resolution {
        match target {
            CallTarget::Name(n) => match self.lookup(file, n, 0) {
                Some(Symbol::Function(f)) => Resolution::Edge(f),
                Some(Symbol::Class(f, c)) => self.constructor(f, &c),
                Some(Symbol::Module(_)) => Resolution::Dynamic,
                None => Resolution::External,
            },
            CallTarget::SelfAttr(m) => match caller_class.and_then(|c| self.find_method(file, c, m, 0)) {
                Some(f) => Resolution::Edge(f),
                None => Resolution::Dynamic,
            },
            CallTarget::Super(m) => {
                let found = caller_class.and_then(|c| file.info.class(c)).and_then(|cdef| {
                    cdef.bases.iter().find_map(|base| match self.dotted_symbol(file, base, 0)? {
                        Symbol::Class(bf, bc) => self.find_method(bf, &bc, m, 1),
                        _ => None,
                    })
                });
                match found {
                    Some(f) => Resolution::Edge(f),
                    None => Resolution::Dynamic,
                }
            }
            CallTarget::Dotted(parts) => {
                let (last, receiver) = parts.split_last().expect("dotted call has at least two parts");
                match self.dotted_symbol(file, &receiver.join("."), 0) {
                    Some(Symbol::Module(m)) => {
                        if let Some(mf) = self.module_file(&m) {
                            match self.lookup(mf, last, 1) {
                                Some(Symbol::Function(f)) => Resolution::Edge(f),
                                Some(Symbol::Class(cf, c)) => self.constructor(cf, &c),
                                _ => Resolution::External,
                            }
                        } else if self.is_project_module(&m) {
                            Resolution::Dynamic
                        } else {
                            Resolution::External
                        }
                    }
                    Some(Symbol::Class(cf, c)) => match self.find_method(cf, &c, last, 0) {
                        Some(f) => Resolution::Edge(f),
                        None => Resolution::Dynamic,
                    },
                    Some(Symbol::Function(_)) => Resolution::Dynamic,
                    None => {
                        // a receiver that is an import of a non-project module is external
                        let root_is_foreign_import = file
                            .info
                            .imports
                            .iter()
                            .flat_map(|i| i.bindings.iter())
                            .any(|b| b.local == parts[0]);
                        if root_is_foreign_import {
                            Resolution::External
                        } else {
                            Resolution::Dynamic
                        }
                    }
                }
            }
            CallTarget::Dynamic => Resolution::Dynamic,
        }
    }
}

/// Resolves every call site in the index into intra-project edges.
pub fn build_call_graph(index: &SourceIndex) -> CallGraph {
    let resolver = Resolver::new(index);
    let nodes = index.functions();
    let mut edges = Vec::new();
    let mut diag = GraphDiagnostics::default();
    for file in index.files.values() {
        for def in &file.info.functions {
            let caller = FunctionRef::new(&file.path, def);
            for call in &def.calls {
                match resolver.resolve(file, def.class_name.as_deref(), &call.target) {
                    Resolution::Edge(callee) => {
                        diag.resolved += 1;
                        edges.push(Edge { caller: caller.clone(), callee, call_site_line: call.line });
                    }
                    Resolution::External => diag.external += 1,
                    Resolution::Dynamic => diag.unresolved_dynamic += 1,
                }
            }
        }
    }
    let _ = resolver.index;
    let mut g = CallGraph::new(nodes, edges);
    g.diagnostics = diag;
    g
}

/// Public functions whose strongly connected component has no caller
/// outside itself, ordered by `(module_path, line)`.
///
/// For acyclic graphs these are exactly the public functions without
/// intra-project callers; a closed cycle contributes all of its members.
pub fn find_entry_points(graph: &CallGraph) -> Vec<FunctionRef> {
    let comp = strongly_connected_components(graph);
    let mut has_external_caller: BTreeSet<usize> = BTreeSet::new();
    for e in graph.edges() {
        let (a, b) = (comp[&e.caller], comp[&e.callee]);
        if a != b {
            has_external_caller.insert(b);
        }
    }
    graph
        .nodes()
        .iter()
        .filter(|f| f.is_public && !has_external_caller.contains(&comp[*f]))
        .cloned()
        .collect()
}

/// Tarjan's algorithm, iterative. Returns node -> component id.
pub(crate) fn strongly_connected_components(graph: &CallGraph) -> BTreeMap<FunctionRef, usize> {
    let nodes: Vec<&FunctionRef> = graph.nodes().iter().collect();
    let pos: BTreeMap<&FunctionRef, usize> = nodes.iter().enumerate().map(|(i, f)| (*f, i)).collect();
    let succ: Vec<Vec<usize>> = nodes.iter().map(|f| graph.callees_of(f).map(|c| pos[c]).collect()).collect();
    let n = nodes.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![usize::MAX; n];
    let mut next_index = 0;
    let mut next_comp = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&mut (v, ref mut child)) = work.last_mut() {
            if *child == 0 && index[v] == usize::MAX {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&w) = succ[v].get(*child) {
                *child += 1;
                if index[w] == usize::MAX {
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                while let Some(w) = stack.pop() {
                    on_stack[w] = false;
                    comp[w] = next_comp;
                    if w == v {
                        break;
                    }
                }
                next_comp += 1;
            }
        }
    }
    nodes.into_iter().cloned().zip(comp).collect()
}
