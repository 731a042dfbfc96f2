//! Prompt templates.
//!
//! Templates are plain-text assets under `prompts/` with `{name}` placeholders.
//! Every template can be overridden by a file of the same name in a
//! configured directory. Sections are delimited by `=== NAME ===` lines, which
//! keeps rendered prompts readable and lets [`section`] pull them back out.

use std::path::{Path, PathBuf};

pub const CONTEXT: &str = "CONTEXT";
pub const TARGET: &str = "TARGET";
pub const PREVIOUS_OUTPUT: &str = "PREVIOUS OUTPUT";
pub const ENTITY: &str = "ENTITY";
pub const ENTITIES: &str = "ENTITIES";
pub const ANCHOR: &str = "ANCHOR";
pub const EVIDENCE: &str = "EVIDENCE";
pub const QUERY: &str = "QUERY";
pub const QUESTION: &str = "QUESTION";
pub const EDGES: &str = "EDGES";
pub const HYPEREDGES: &str = "HYPEREDGES";
pub const CLUSTERS: &str = "CLUSTERS";

/// Output-format instructions substituted for `{format}` in extraction prompts.
pub const EXTRACTION_FORMAT: &str = "Respond with a JSON array. Each element is an object with the keys \
\"statement\" (the fact as one self-contained sentence), \"source_span\" (the passage text that supports it, \
copied character for character) and \"entities\" (the names of every entity the fact involves).";

pub const EXTRACTION_SYSTEM: &str =
    "You are a careful information extraction system. You only report facts stated in the text.";
pub const SUMMARY_SYSTEM: &str = "You write short, faithful entity summaries.";
pub const EDGE_SYSTEM: &str = "You identify explicit binary relations between named entities.";
pub const QUERY_SYSTEM: &str = "You identify named entities in questions.";
pub const GENERATION_SYSTEM: &str =
    "You answer questions from the supplied evidence. Say so when the evidence is insufficient.";

/// Placeholder text for an empty section.
pub const NONE: &str = "(none)";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    source: String,
}

impl Template {
    pub fn new(source: impl Into<String>) -> Self {
        Template { source: source.into() }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Substitutes `{key}` placeholders in a single pass. Substituted values are
    /// not rescanned, and unknown placeholders are left untouched.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let src = &self.source;
        let mut out = String::with_capacity(src.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
        let mut rest = src.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let replaced = after.find('}').and_then(|close| {
                let key = &after[..close];
                vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
            });
            match replaced {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompts {
    pub extraction: Template,
    pub extraction_repair: Template,
    pub summarization: Template,
    pub edge_extraction: Template,
    pub query_entities: Template,
    pub generation: Template,
}

const FILES: [&str; 6] = [
    "extraction.txt",
    "extraction_repair.txt",
    "summarization.txt",
    "edge_extraction.txt",
    "query_entities.txt",
    "generation.txt",
];

impl Default for Prompts {
    fn default() -> Self {
        Prompts {
            extraction: Template::new(include_str!("../prompts/extraction.txt")),
            extraction_repair: Template::new(include_str!("../prompts/extraction_repair.txt")),
            summarization: Template::new(include_str!("../prompts/summarization.txt")),
            edge_extraction: Template::new(include_str!("../prompts/edge_extraction.txt")),
            query_entities: Template::new(include_str!("../prompts/query_entities.txt")),
            generation: Template::new(include_str!("../prompts/generation.txt")),
        }
    }
}

impl Prompts {
    /// Defaults, with any same-named file in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, (PathBuf, std::io::Error)> {
        let mut prompts = Prompts::default();
        for name in FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| (path.clone(), e))?;
            let slot = match name {
                "extraction.txt" => &mut prompts.extraction,
                "extraction_repair.txt" => &mut prompts.extraction_repair,
                "summarization.txt" => &mut prompts.summarization,
                "edge_extraction.txt" => &mut prompts.edge_extraction,
                "query_entities.txt" => &mut prompts.query_entities,
                _ => &mut prompts.generation,
            };
            *slot = Template::new(text);
        }
        Ok(prompts)
    }
}

fn header_name(line: &str) -> Option<&str> {
    line.strip_prefix("=== ")?.strip_suffix(" ===")
}

/// Returns the body of section `name` in a rendered prompt, without its
/// trailing newline.
pub fn section<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let mut offset = 0;
    let mut body_start = None;
    for line in prompt.split_inclusive('\n') {
        let bare = line.trim_end_matches(['\n', '\r']);
        if let Some(found) = header_name(bare) {
            if let Some(start) = body_start {
                return Some(
                    prompt[start..offset]
                        .strip_suffix('\n')
                        .unwrap_or(&prompt[start..offset]),
                );
            }
            if found == name {
                body_start = Some(offset + line.len());
            }
        }
        offset += line.len();
    }
    body_start.map(|start| prompt[start..].trim_end_matches('\n'))
}
