//! Relation templates that turn an (event, entity) pair into a hypothesis.
//!
//! Each relation has a small set of verbalized patterns. All of them are used
//! to augment training data; exactly one per relation is used at test time
//! and by the extraction pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityMention, EntityType, Relation, TypeCompatibility};
use crate::error::{Error, Result};

pub const EVENT_PLACEHOLDER: &str = "{event}";
pub const ENTITY_PLACEHOLDER: &str = "{entity}";

const DEFAULT_TEMPLATES: &str = include_str!("../assets/templates.toml");

/// Dataset split; also selects which templates apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// When a template is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
    Both,
}

impl Phase {
    pub fn applies_to(self, split: Split) -> bool {
        matches!(
            (self, split),
            (Phase::Both, _) | (Phase::Train, Split::Train) | (Phase::Test, Split::Test)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub relation: Relation,
    pub index: u8,
    pub phase: Phase,
    pub pattern: String,
    #[serde(default)]
    pub gloss: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reconstructed: bool,
}

impl Template {
    pub fn new(relation: Relation, index: u8, phase: Phase, pattern: impl Into<String>) -> Result<Self> {
        let t = Template {
            id: format!("{relation}/t{index}"),
            relation,
            index,
            phase,
            pattern: pattern.into(),
            gloss: String::new(),
            reconstructed: false,
        };
        t.check_pattern()?;
        Ok(t)
    }

    fn check_pattern(&self) -> Result<()> {
        for marker in [EVENT_PLACEHOLDER, ENTITY_PLACEHOLDER] {
            let n = self.pattern.matches(marker).count();
            if n != 1 {
                return Err(Error::Config(format!(
                    "template {} must contain {marker} exactly once (found {n})",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Substitutes surfaces into the pattern without touching anything else.
    pub fn fill(&self, event_surface: &str, entity_surface: &str) -> Result<String> {
        let ev = self.pattern.find(EVENT_PLACEHOLDER);
        let en = self.pattern.find(ENTITY_PLACEHOLDER);
        let (ev, en) = match (ev, en) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Config(format!(
                    "template {} is missing a placeholder",
                    self.id
                )))
            }
        };
        let mut slots = [
            (ev, EVENT_PLACEHOLDER.len(), event_surface),
            (en, ENTITY_PLACEHOLDER.len(), entity_surface),
        ];
        slots.sort_by_key(|s| s.0);
        let mut out = String::with_capacity(self.pattern.len() + event_surface.len() + entity_surface.len());
        let mut cursor = 0;
        for (pos, len, value) in slots {
            out.push_str(&self.pattern[cursor..pos]);
            out.push_str(value);
            cursor = pos + len;
        }
        out.push_str(&self.pattern[cursor..]);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    pub relation: Relation,
    pub event_id: String,
    pub entity_id: String,
    pub template_id: String,
}

/// Fills `template` with an event mention and a candidate argument mention.
pub fn instantiate(template: &Template, event: &EntityMention, entity: &EntityMention) -> Result<Hypothesis> {
    if !event.is_event() {
        return Err(Error::InvalidInput(format!(
            "`{}` has type {}, expected EVENT",
            event.entity_id, event.entity_type
        )));
    }
    if !TypeCompatibility::allows(template.relation, entity.entity_type) {
        return Err(Error::IncompatibleType {
            entity_id: entity.entity_id.clone(),
            entity_type: entity.entity_type.to_string(),
            relation: template.relation.to_string(),
        });
    }
    Ok(Hypothesis {
        text: template.fill(&event.surface, &entity.surface)?,
        relation: template.relation,
        event_id: event.entity_id.clone(),
        entity_id: entity.entity_id.clone(),
        template_id: template.id.clone(),
    })
}

/// The relation an argument of this type would take, if any.
pub fn relation_for_entity_type(entity_type: EntityType) -> Option<Relation> {
    TypeCompatibility::relation_for(entity_type)
}

#[derive(Debug, Deserialize, Serialize)]
struct TemplateFile {
    template: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: Vec<Template>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        TemplateRegistry::from_toml_str(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl TemplateRegistry {
    pub fn new(templates: Vec<Template>) -> Result<Self> {
        let registry = TemplateRegistry { templates };
        registry.validate()?;
        Ok(registry)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TemplateFile =
            toml::from_str(text).map_err(|e| Error::parse("template config", e.to_string()))?;
        TemplateRegistry::new(file.template)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TemplateRegistry::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&TemplateFile {
            template: self.templates.clone(),
        })
        .expect("templates serialize")
    }

    fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for t in &self.templates {
            t.check_pattern()?;
            if !ids.insert(t.id.as_str()) {
                return Err(Error::Config(format!("duplicate template id {}", t.id)));
            }
        }
        for &rel in Relation::ALL {
            let train = self.select(rel, Split::Train).count();
            let test = self.select(rel, Split::Test).count();
            if train == 0 {
                return Err(Error::Config(format!("no training templates for {rel}")));
            }
            if test != 1 {
                return Err(Error::Config(format!(
                    "{rel} needs exactly one test template, found {test}"
                )));
            }
        }
        Ok(())
    }

    fn select(&self, relation: Relation, split: Split) -> impl Iterator<Item = &Template> {
        self.templates
            .iter()
            .filter(move |t| t.relation == relation && t.phase.applies_to(split))
    }

    pub fn all(&self) -> &[Template] {
        &self.templates
    }

    /// Templates used for `relation` in `split`, ordered by index.
    pub fn templates_for(&self, relation: Relation, split: Split) -> Vec<&Template> {
        let mut out: Vec<_> = self.select(relation, split).collect();
        out.sort_by_key(|t| t.index);
        out
    }

    /// Same as [`templates_for`](Self::templates_for) for a relation given by name.
    pub fn templates_for_name(&self, relation: &str, split: Split) -> Result<Vec<&Template>> {
        Ok(self.templates_for(relation.parse()?, split))
    }

    pub fn test_template(&self, relation: Relation) -> &Template {
        self.select(relation, Split::Test)
            .next()
            .expect("registry validated: one test template per relation")
    }

    /// Returns a copy where template `index` of every relation is the test
    /// template. Every template stays available for training.
    pub fn with_test_template(&self, index: u8) -> Result<Self> {
        let mut templates = self.templates.clone();
        for &rel in Relation::ALL {
            if !templates.iter().any(|t| t.relation == rel && t.index == index) {
                return Err(Error::Config(format!("{rel} has no template t{index}")));
            }
        }
        for t in &mut templates {
            t.phase = if t.index == index { Phase::Both } else { Phase::Train };
        }
        TemplateRegistry::new(templates)
    }

    pub fn summary(&self) -> BTreeMap<Relation, (usize, usize)> {
        Relation::ALL
            .iter()
            .map(|&r| {
                (
                    r,
                    (
                        self.select(r, Split::Train).count(),
                        self.select(r, Split::Test).count(),
                    ),
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedSentence, EntityType};

    fn mention(id: &str, ty: EntityType, surface: &str) -> EntityMention {
        EntityMention {
            entity_id: id.into(),
            sentence_id: "s".into(),
            surface: surface.into(),
            span: crate::corpus::CharSpan::new(0, surface.chars().count()),
            entity_type: ty,
        }
    }

    const SIEGE: &str = "الحصار الشامل على قطاع غزة";

    #[test]
    fn date_test_template_matches_reference_example() {
        let reg = TemplateRegistry::default();
        let t = reg.test_template(Relation::HasDate);
        assert_eq!(t.index, 2);
        let h = instantiate(
            t,
            &mention("ev", EntityType::Event, SIEGE),
            &mention("d", EntityType::Date, "9 أكتوبر 2023"),
        )
        .unwrap();
        assert_eq!(h.text, "9 أكتوبر 2023 تاريخ حدوث الحصار الشامل على قطاع غزة");
        assert_eq!(h.template_id, "hasDate/t2");
    }

    #[test]
    fn location_test_template_matches_reference_example() {
        let reg = TemplateRegistry::default();
        let h = instantiate(
            reg.test_template(Relation::HasLocation),
            &mention("ev", EntityType::Event, SIEGE),
            &mention("g", EntityType::Gpe, "قطاع غزة"),
        )
        .unwrap();
        assert_eq!(h.text, format!("قطاع غزة مكان حدوث {SIEGE}"));
    }

    #[test]
    fn substitution_identity() {
        let t = Template::new(Relation::HasAgent, 9, Phase::Both, "{entity} X {event}").unwrap();
        let h = instantiate(&t, &mention("b", EntityType::Event, "b"), &mention("a", EntityType::Pers, "a")).unwrap();
        assert_eq!(h.text, "a X b");
    }

    #[test]
    fn placeholders_inside_surfaces_are_not_re_expanded() {
        let t = Template::new(Relation::HasAgent, 1, Phase::Both, "{event} by {entity}").unwrap();
        assert_eq!(t.fill("{entity}", "x").unwrap(), "{entity} by x");
    }

    #[test]
    fn incompatible_entity_and_non_event_are_rejected() {
        let reg = TemplateRegistry::default();
        let t = reg.test_template(Relation::HasDate);
        let ev = mention("ev", EntityType::Event, "war");
        assert!(matches!(
            instantiate(t, &ev, &mention("p", EntityType::Pers, "Ali")),
            Err(Error::IncompatibleType { .. })
        ));
        assert!(instantiate(t, &mention("x", EntityType::Gpe, "Gaza"), &mention("d", EntityType::Date, "1967")).is_err());
    }

    #[test]
    fn pattern_without_placeholder_is_a_config_error() {
        assert!(matches!(
            Template::new(Relation::HasDate, 1, Phase::Train, "{event} only"),
            Err(Error::Config(_))
        ));
        assert!(Template::new(Relation::HasDate, 1, Phase::Train, "{event}{event}{entity}").is_err());
    }

    #[test]
    fn registry_counts_per_phase() {
        let reg = TemplateRegistry::default();
        for &rel in Relation::ALL {
            assert_eq!(reg.templates_for(rel, Split::Train).len(), 4, "{rel}");
            let test = reg.templates_for(rel, Split::Test);
            assert_eq!(test.len(), 1);
            assert_eq!(test[0].index, 2);
        }
        assert!(matches!(
            reg.templates_for_name("hasCause", Split::Train),
            Err(Error::UnknownRelation(_))
        ));
    }

    #[test]
    fn relation_for_type() {
        assert_eq!(relation_for_entity_type(EntityType::Gpe), Some(Relation::HasLocation));
        assert_eq!(relation_for_entity_type(EntityType::Date), Some(Relation::HasDate));
        assert_eq!(relation_for_entity_type(EntityType::Norp), Some(Relation::HasAgent));
        assert_eq!(relation_for_entity_type(EntityType::Event), None);
        assert_eq!(relation_for_entity_type(EntityType::Money), None);
    }

    #[test]
    fn swapping_the_test_template() {
        let reg = TemplateRegistry::default().with_test_template(3).unwrap();
        for &rel in Relation::ALL {
            assert_eq!(reg.test_template(rel).index, 3);
            assert_eq!(reg.templates_for(rel, Split::Train).len(), 4);
        }
        assert!(TemplateRegistry::default().with_test_template(7).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let reg = TemplateRegistry::default();
        let again = TemplateRegistry::from_toml_str(&reg.to_toml_string()).unwrap();
        assert_eq!(reg, again);
    }

    #[test]
    fn registry_requires_one_test_template_per_relation() {
        let mut templates = TemplateRegistry::default().all().to_vec();
        templates.retain(|t| !(t.relation == Relation::HasAgent && t.phase == Phase::Both));
        assert!(matches!(TemplateRegistry::new(templates), Err(Error::Config(_))));
    }

    #[test]
    fn hypothesis_mentions_appear_in_premise() {
        let s = AnnotatedSentence::new("s", "قصف غزة")
            .with_entity("ev", EntityType::Event, 0, 3)
            .with_entity("g", EntityType::Gpe, 4, 7);
        let reg = TemplateRegistry::default();
        for t in reg.templates_for(Relation::HasLocation, Split::Train) {
            let h = instantiate(t, &s.entities[0], &s.entities[1]).unwrap();
            assert!(h.text.contains("قصف") && h.text.contains("غزة"));
        }
    }
}
