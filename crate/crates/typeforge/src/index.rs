//! Reads a project tree from disk into a [`SourceIndex`] and caches the
//! index and call graph as JSON.

use std::path::Path;

use anyhow::{bail, Context};
use globset::{Glob, GlobSet, GlobSetBuilder};
use typeforge_core::project::{build_call_graph, index_project, CallGraph, SourceIndex};

/// Directories never worth indexing.
const ALWAYS_EXCLUDED: &[&str] = &["**/.git/**", "**/__pycache__/**", "**/.typeforge/**", "**/.venv/**", "**/venv/**"];

fn globset(patterns: &[String]) -> anyhow::Result<GlobSet> {
    let mut b = GlobSetBuilder::new();
    for p in patterns {
        b.add(Glob::new(p).with_context(|| format!("bad glob `{p}`"))?);
    }
    Ok(b.build()?)
}

/// Indexes every file under `root` that matches `include` and none of
/// `exclude`. Paths in the index are relative with `/` separators, and
/// iteration order does not depend on the file system.
pub fn index_dir(root: &Path, include: &[String], exclude: &[String]) -> anyhow::Result<SourceIndex> {
    if !root.is_dir() {
        bail!("project root {} is not a readable directory", root.display());
    }
    let include = globset(include)?;
    let mut excluded: Vec<String> = ALWAYS_EXCLUDED.iter().map(|s| s.to_string()).collect();
    excluded.extend(exclude.iter().cloned());
    let exclude = globset(&excluded)?;
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", root.display()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walkdir stays under root");
        let rel = rel.to_string_lossy().replace('\\', "/");
        if !include.is_match(&rel) || exclude.is_match(&rel) {
            continue;
        }
        let text = std::fs::read(entry.path()).with_context(|| format!("reading {}", entry.path().display()))?;
        files.push((rel, String::from_utf8_lossy(&text).into_owned()));
    }
    let name = root.canonicalize().ok().and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()));
    Ok(index_project(&name.unwrap_or_else(|| ".".into()), files))
}

/// Writes `<out>/.typeforge/index.json` and `graph.json`.
pub fn write_cache(out: &Path, index: &SourceIndex, graph: &CallGraph) -> anyhow::Result<()> {
    let dir = out.join(".typeforge");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index.document())? + "\n")?;
    std::fs::write(dir.join("graph.json"), serde_json::to_string_pretty(&graph.document())? + "\n")?;
    Ok(())
}

pub fn load(root: &Path, include: &[String], exclude: &[String]) -> anyhow::Result<(SourceIndex, CallGraph)> {
    let index = index_dir(root, include, exclude)?;
    let graph = build_call_graph(&index);
    Ok((index, graph))
}
