//! Human oversight guides and decision gates.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::stages;
use crate::project::{ProjectStatus, SiftProject};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogEntry {
    pub question: String,
    pub answer: String,
    /// `"<pipeline>/<stage>"` identifiers from the stage table.
    pub stages: Vec<String>,
    pub tags: Vec<String>,
}

impl HogEntry {
    pub fn applies_to(&self, pipeline: &str, stage: &str) -> bool {
        self.stages.iter().any(|s| s.split_once('/') == Some((pipeline, stage)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogDocument {
    pub sme_field: String,
    pub revision: u32,
    pub author: String,
    pub entries: Vec<HogEntry>,
}

impl HogDocument {
    /// Applies an edit and bumps the revision.
    pub fn revise(&mut self, author: &str, edit: impl FnOnce(&mut Vec<HogEntry>)) -> Result<()> {
        let mut entries = self.entries.clone();
        edit(&mut entries);
        check_entries(&entries)?;
        self.entries = entries;
        self.author = author.to_string();
        self.revision += 1;
        Ok(())
    }

    pub fn to_hog_string(&self) -> String {
        let mut out = format!("sme_field: {}\nrevision: {}\nauthor: {}\n", self.sme_field, self.revision, self.author);
        for e in &self.entries {
            out.push_str("\n[entry]\n");
            out.push_str(&format!("question: {}\n", e.question));
            if !e.answer.is_empty() {
                out.push_str(&format!("answer: {}\n", e.answer));
            }
            out.push_str(&format!("stages: {}\n", e.stages.join("; ")));
            if !e.tags.is_empty() {
                out.push_str(&format!("tags: {}\n", e.tags.join(", ")));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<HogDocument> {
        let bad = |line: usize, msg: &str| Error::MalformedHog(format!("line {line}: {msg}"));
        // (key, value, line) triples per block; block 0 is the header
        let mut blocks: Vec<Vec<(String, String, usize)>> = vec![Vec::new()];
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            if raw.trim_start().starts_with('#') || raw.trim().is_empty() {
                continue;
            }
            if raw.trim() == "[entry]" {
                blocks.push(Vec::new());
                continue;
            }
            if let Some(cont) = raw.strip_prefix("  ") {
                let block = blocks.last_mut().unwrap();
                let Some(last) = block.last_mut() else {
                    return Err(bad(n, "continuation without a key"));
                };
                last.1.push(' ');
                last.1.push_str(cont);
                continue;
            }
            let Some((key, value)) = raw.split_once(':') else {
                return Err(bad(n, "expected `key: value`"));
            };
            let key = key.trim().to_string();
            if blocks.last().unwrap().iter().any(|(k, _, _)| *k == key) {
                return Err(bad(n, &format!("duplicate key {key}")));
            }
            blocks.last_mut().unwrap().push((key, value.strip_prefix(' ').unwrap_or(value).to_string(), n));
        }

        let header = &blocks[0];
        let get = |key: &str| header.iter().find(|(k, _, _)| k == key).map(|(_, v, _)| v.trim().to_string());
        if let Some((k, _, n)) = header.iter().find(|(k, _, _)| !["sme_field", "revision", "author"].contains(&k.as_str())) {
            return Err(bad(*n, &format!("unknown header key {k}")));
        }
        let sme_field = get("sme_field").filter(|s| !s.is_empty()).ok_or_else(|| Error::MalformedHog("missing sme_field".into()))?;
        let revision = match get("revision") {
            Some(r) => r.parse().map_err(|_| Error::MalformedHog(format!("bad revision {r:?}")))?,
            None => 1,
        };
        let author = get("author").unwrap_or_default();

        let mut entries = Vec::new();
        for block in &blocks[1..] {
            let mut entry = HogEntry { question: String::new(), answer: String::new(), stages: Vec::new(), tags: Vec::new() };
            for (key, value, n) in block {
                match key.as_str() {
                    "question" => entry.question = value.trim().to_string(),
                    "answer" => entry.answer = value.trim().to_string(),
                    "stages" => entry.stages = split_list(value, ';'),
                    "tags" => entry.tags = split_list(value, ','),
                    other => return Err(bad(*n, &format!("unknown entry key {other}"))),
                }
            }
            entries.push(entry);
        }
        check_entries(&entries)?;
        Ok(HogDocument { sme_field, revision, author, entries })
    }
}

fn split_list(value: &str, sep: char) -> Vec<String> {
    value.split(sep).map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn check_entries(entries: &[HogEntry]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::MalformedHog("document has no entries".into()));
    }
    for (i, e) in entries.iter().enumerate() {
        if e.question.is_empty() {
            return Err(Error::MalformedHog(format!("entry {i} has no question")));
        }
        if e.stages.is_empty() {
            return Err(Error::MalformedHog(format!("entry {i} lists no stages")));
        }
        for s in &e.stages {
            let canonical = s.split_once('/').is_some_and(|(p, st)| stages::is_canonical(p, st));
            if !canonical {
                return Err(Error::MalformedHog(format!("entry {i}: unknown stage {s:?}")));
            }
        }
    }
    Ok(())
}

const SEED_FILES: [&str; 5] = [
    include_str!("../data/hog/hr.hog"),
    include_str!("../data/hog/pr.hog"),
    include_str!("../data/hog/legal.hog"),
    include_str!("../data/hog/privacy.hog"),
    include_str!("../data/hog/compliance.hog"),
];

/// The starter guides, one per SME field.
pub fn load_hog_seed() -> Result<Vec<HogDocument>> {
    SEED_FILES.iter().map(|t| HogDocument::parse(t)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogRef {
    pub sme_field: String,
    pub entry: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevantEntry {
    pub sme_field: String,
    pub index: usize,
    pub entry: HogEntry,
}

/// Entries tagged with the stage, ordered by SME field then position.
pub fn relevant_hog_entries(docs: &[HogDocument], pipeline: &str, stage: &str) -> Result<Vec<RelevantEntry>> {
    if !stages::is_canonical(pipeline, stage) {
        return Err(Error::UnknownStage { pipeline: pipeline.into(), stage: stage.into() });
    }
    let mut order: Vec<&HogDocument> = docs.iter().collect();
    order.sort_by(|a, b| a.sme_field.cmp(&b.sme_field));
    Ok(order
        .into_iter()
        .flat_map(|d| {
            d.entries.iter().enumerate().filter(|(_, e)| e.applies_to(pipeline, stage)).map(|(index, e)| RelevantEntry {
                sme_field: d.sme_field.clone(),
                index,
                entry: e.clone(),
            })
        })
        .collect())
}

pub fn resolve_hog_ref<'a>(docs: &'a [HogDocument], r: &HogRef) -> Option<&'a HogEntry> {
    docs.iter().find(|d| d.sme_field == r.sme_field)?.entries.get(r.entry)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingGate {
    pub gate_id: String,
    pub project_id: String,
    pub pipeline: String,
    pub stage: String,
    pub prompt: String,
    pub options: Vec<String>,
    pub hog_refs: Vec<HogRef>,
    pub requires_rationale: bool,
    pub opened_at: DateTime<Utc>,
    /// Stage-specific material for the reviewer (search hits, detection reports).
    #[serde(default)]
    pub context: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanDecision {
    pub gate_id: String,
    pub decision: String,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub decider: String,
    #[serde(default = "Utc::now")]
    pub timestamp: DateTime<Utc>,
    /// Chosen items for gates that take a selection (hit ids, features).
    #[serde(default)]
    pub selection: Vec<String>,
    /// New data location for the prepare-data gate.
    #[serde(default)]
    pub data_location: Option<String>,
    /// Filled in when the decision is recorded.
    #[serde(default)]
    pub pipeline: String,
    #[serde(default)]
    pub stage: String,
}

impl HumanDecision {
    pub fn new(gate_id: &str, decision: &str, rationale: &str, decider: &str) -> HumanDecision {
        HumanDecision {
            gate_id: gate_id.into(),
            decision: decision.into(),
            rationale: rationale.into(),
            decider: decider.into(),
            timestamp: Utc::now(),
            selection: Vec::new(),
            data_location: None,
            pipeline: String::new(),
            stage: String::new(),
        }
    }

    pub fn with_selection(mut self, selection: Vec<String>) -> Self {
        self.selection = selection;
        self
    }
}

pub struct GateSpec<'a> {
    pub pipeline: &'a str,
    pub stage: &'a str,
    pub prompt: String,
    pub options: Vec<String>,
    pub hog_refs: Vec<HogRef>,
    pub requires_rationale: bool,
    pub context: serde_json::Value,
}

/// Blocks the project at a human gate.
pub fn open_gate(project: &mut SiftProject, spec: GateSpec<'_>) -> Result<PendingGate> {
    if project.gate.is_some() {
        return Err(Error::AlreadyGated(project.project_id.clone()));
    }
    if project.status != ProjectStatus::Active {
        return Err(Error::NotActive(project.project_id.clone()));
    }
    if !stages::is_canonical(spec.pipeline, spec.stage) {
        return Err(Error::UnknownStage { pipeline: spec.pipeline.into(), stage: spec.stage.into() });
    }
    let gate = PendingGate {
        gate_id: format!("{}-g{}", project.project_id, project.decisions.len() + 1),
        project_id: project.project_id.clone(),
        pipeline: spec.pipeline.into(),
        stage: spec.stage.into(),
        prompt: spec.prompt,
        options: spec.options,
        hog_refs: spec.hog_refs,
        requires_rationale: spec.requires_rationale,
        opened_at: Utc::now(),
        context: spec.context,
    };
    project.gate = Some(gate.clone());
    Ok(gate)
}

/// Checks a decision against the open gate without changing anything.
pub fn validate_decision<'a>(project: &'a SiftProject, decision: &HumanDecision) -> Result<&'a PendingGate> {
    let gate = project.gate.as_ref().ok_or_else(|| Error::NoOpenGate(project.project_id.clone()))?;
    if decision.gate_id != gate.gate_id {
        return Err(Error::InvalidDecision(format!("gate id {} does not match open gate {}", decision.gate_id, gate.gate_id)));
    }
    if !gate.options.contains(&decision.decision) {
        return Err(Error::InvalidOption { decision: decision.decision.clone(), options: gate.options.clone() });
    }
    if gate.requires_rationale && decision.rationale.trim().is_empty() {
        return Err(Error::MissingRationale);
    }
    Ok(gate)
}

/// Closes the open gate and appends the decision to the project's log.
/// Stage effects are applied by the pipeline engine.
pub fn close_gate(project: &mut SiftProject, decision: &HumanDecision) -> Result<PendingGate> {
    validate_decision(project, decision)?;
    let gate = project.gate.take().expect("validated");
    let mut logged = decision.clone();
    logged.pipeline = gate.pipeline.clone();
    logged.stage = gate.stage.clone();
    project.decisions.push(logged);
    Ok(gate)
}
