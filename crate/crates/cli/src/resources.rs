//! Graph, lexicon and parse-file loading.

use std::path::{Path, PathBuf};

use anyhow::Result;
use radgraph_core::chestkg::DEFAULT_GRAPH_SPEC;
use radgraph_core::reportnlp::{read_conllu, ParsedSentence, DEFAULT_LEXICON};
use radgraph_core::{ChestGraph, Lexicon};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::input_error;

/// Environment variable naming a graph definition used when `--graph` is absent.
pub const GRAPH_ENV: &str = "RADGRAPH_EVAL_GRAPH";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Where a resource came from and a hash of its content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    /// File path, or `"default"` for the built-in definition.
    pub source: String,
    pub sha256: String,
}

fn read_text(path: &Path, what: &str) -> Result<String> {
    match std::fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) => input_error(format!("cannot read {what} {}: {e}", path.display())),
    }
}

/// Picks the graph path: the flag, then [`GRAPH_ENV`], then the built-in graph.
pub fn graph_path(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(GRAPH_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

pub fn load_graph(flag: Option<&Path>) -> Result<(ChestGraph, Provenance)> {
    match graph_path(flag) {
        None => Ok((
            ChestGraph::default_graph(),
            Provenance {
                source: "default".into(),
                sha256: sha256_hex(DEFAULT_GRAPH_SPEC.as_bytes()),
            },
        )),
        Some(path) => {
            let text = read_text(&path, "graph file")?;
            let graph = match ChestGraph::from_toml(&text) {
                Ok(g) => g,
                Err(e) => return input_error(format!("graph file {}: {e}", path.display())),
            };
            Ok((
                graph,
                Provenance {
                    source: path.display().to_string(),
                    sha256: sha256_hex(text.as_bytes()),
                },
            ))
        }
    }
}

pub fn load_lexicon(flag: Option<&Path>, graph: &ChestGraph) -> Result<(Lexicon, Provenance)> {
    let (text, source) = match flag {
        None => (DEFAULT_LEXICON.to_string(), "default".to_string()),
        Some(path) => (read_text(path, "lexicon file")?, path.display().to_string()),
    };
    let lexicon = match Lexicon::parse(&text, &source, graph) {
        Ok(l) => l,
        Err(e) => return input_error(format!("lexicon {source}: {e}")),
    };
    Ok((
        lexicon,
        Provenance {
            source,
            sha256: sha256_hex(text.as_bytes()),
        },
    ))
}

pub fn load_conllu(path: &Path) -> Result<Vec<ParsedSentence>> {
    let text = read_text(path, "parse file")?;
    match read_conllu(&text) {
        Ok(p) => Ok(p),
        Err(e) => input_error(format!("parse file {}: {e}", path.display())),
    }
}
