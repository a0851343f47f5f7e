use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, EntityMention, Relation, RelationAnnotation, TypeCompatibility};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub event_id: String,
    pub relation: Relation,
    pub argument_id: String,
    pub confidence: f64,
}

impl Edge {
    pub fn triple(&self) -> RelationAnnotation {
        RelationAnnotation::new(self.event_id.clone(), self.relation, self.argument_id.clone())
    }
}

/// Events of one sentence linked to their extracted arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventArgumentGraph {
    pub sentence_id: String,
    pub nodes: Vec<EntityMention>,
    pub edges: Vec<Edge>,
}

impl EventArgumentGraph {
    /// The gold graph of an annotated sentence, every edge at confidence 1.
    pub fn from_gold(sentence: &AnnotatedSentence) -> Self {
        let mut graph = EventArgumentGraph {
            sentence_id: sentence.sentence_id.clone(),
            nodes: sentence.entities.clone(),
            edges: sentence
                .relations
                .iter()
                .map(|r| Edge {
                    event_id: r.event_id.clone(),
                    relation: r.relation,
                    argument_id: r.argument_id.clone(),
                    confidence: 1.0,
                })
                .collect(),
        };
        graph.sort_edges();
        graph
    }

    pub fn sort_edges(&mut self) {
        self.edges.sort_by(|a, b| {
            (&a.event_id, a.relation, &a.argument_id).cmp(&(&b.event_id, b.relation, &b.argument_id))
        });
    }

    pub fn triples(&self) -> impl Iterator<Item = RelationAnnotation> + '_ {
        self.edges.iter().map(Edge::triple)
    }

    pub fn node(&self, id: &str) -> Option<&EntityMention> {
        self.nodes.iter().find(|n| n.entity_id == id)
    }

    /// Checks that edges are type-compatible, reference nodes of the graph,
    /// and clear `threshold`.
    pub fn validate(&self, threshold: f64) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.edges {
            let ev = self
                .node(&e.event_id)
                .ok_or_else(|| Error::UnknownEntity(e.event_id.clone()))?;
            let arg = self
                .node(&e.argument_id)
                .ok_or_else(|| Error::UnknownEntity(e.argument_id.clone()))?;
            if !ev.is_event() || !TypeCompatibility::allows(e.relation, arg.entity_type) {
                return Err(Error::IncompatibleType {
                    entity_id: arg.entity_id.clone(),
                    entity_type: arg.entity_type.to_string(),
                    relation: e.relation.to_string(),
                });
            }
            if e.confidence < threshold {
                return Err(Error::InvalidInput(format!(
                    "edge {} has confidence {} below threshold {threshold}",
                    e.triple(),
                    e.confidence
                )));
            }
            if !seen.insert(e.triple()) {
                return Err(Error::InvalidInput(format!("duplicate edge {}", e.triple())));
            }
        }
        Ok(())
    }
}

pub fn write_graphs<W: Write>(graphs: &[EventArgumentGraph], mut writer: W) -> Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut writer, g).map_err(|e| Error::Protocol(e.to_string()))?;
        writer.write_all(b"\n").map_err(|e| Error::io("<graph writer>", e))?;
    }
    Ok(())
}

pub fn read_graphs<R: BufRead>(reader: R) -> Result<Vec<EventArgumentGraph>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(format!("line {}", idx + 1), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(format!("line {}", idx + 1), e.to_string()))?);
    }
    Ok(out)
}
