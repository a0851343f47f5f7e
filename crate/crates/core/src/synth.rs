//! Seeded synthetic corpora for tests and desk-scale runs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedSentence, Corpus, EntityType, Relation, TypeCompatibility};
use crate::error::Result;
use crate::pairgen::{Label, NliPair};
use crate::templates::{Split, TemplateRegistry};

const FILLER: &[&str] = &["قال", "أن", "بعد", "خلال", "حيث", "كما", "وقد", "التي", "على", "من"];
const EVENTS: &[&str] = &["اجتماع", "انفجار", "مؤتمر", "زلزال", "انتخابات", "اشتباكات", "مهرجان", "قصف"];

fn surfaces(ty: EntityType) -> &'static [&'static str] {
    match ty {
        EntityType::Pers => &["أحمد", "سارة", "محمود عباس", "ليلى"],
        EntityType::Org => &["الأمم المتحدة", "وزارة الصحة", "البنك الدولي"],
        EntityType::Occ => &["الطبيب", "الصحفي", "المهندس"],
        EntityType::Norp => &["الفلسطينيون", "العرب"],
        EntityType::Gpe => &["غزة", "القدس", "رام الله", "عمان"],
        EntityType::Loc => &["البحر الميت", "نهر الأردن"],
        EntityType::Fac => &["مطار القدس", "جامعة بيرزيت"],
        EntityType::Date => &["الاثنين", "عام 2020", "أمس"],
        EntityType::Time => &["صباحا", "الساعة العاشرة"],
        EntityType::Cardinal => &["ثلاثة", "مئة"],
        EntityType::Money => &["ألف دولار"],
        _ => &["شيء"],
    }
}

const ARGUMENT_TYPES: &[EntityType] = &[
    EntityType::Pers,
    EntityType::Org,
    EntityType::Occ,
    EntityType::Norp,
    EntityType::Gpe,
    EntityType::Loc,
    EntityType::Fac,
    EntityType::Date,
    EntityType::Time,
];

const OTHER_TYPES: &[EntityType] = &[EntityType::Cardinal, EntityType::Money];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub max_events: usize,
    pub max_arguments: usize,
    /// Chance that a candidate argument is linked to an event.
    pub link_probability: f64,
    /// Chance that a sentence has no event at all.
    pub eventless_probability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 40,
            max_events: 2,
            max_arguments: 4,
            link_probability: 0.5,
            eventless_probability: 0.1,
            seed: 7,
        }
    }
}

struct Builder {
    text: String,
    len: usize,
}

impl Builder {
    fn push(&mut self, word: &str) -> (usize, usize) {
        if self.len > 0 {
            self.text.push(' ');
            self.len += 1;
        }
        let start = self.len;
        self.text.push_str(word);
        self.len += word.chars().count();
        (start, self.len)
    }
}

/// One random sentence with typed mentions and gold relations. Arguments of
/// type GPE are sometimes nested inside an ORG mention.
pub fn synth_sentence(rng: &mut impl Rng, sentence_id: &str, cfg: &SynthConfig) -> AnnotatedSentence {
    let mut b = Builder { text: String::new(), len: 0 };
    let mut mentions: Vec<(EntityType, usize, usize)> = Vec::new();

    let n_events = if rng.random_bool(cfg.eventless_probability) {
        0
    } else {
        rng.random_range(1..=cfg.max_events.max(1))
    };
    let n_args = rng.random_range(0..=cfg.max_arguments);
    let mut slots: Vec<Option<EntityType>> = vec![None; n_events];
    for _ in 0..n_args {
        slots.push(Some(*ARGUMENT_TYPES.choose(rng).expect("non-empty")));
    }
    if rng.random_bool(0.3) {
        slots.push(Some(*OTHER_TYPES.choose(rng).expect("non-empty")));
    }
    // Events first keeps at least one event before its arguments; then
    // shuffle the tail for variety.
    let tail = &mut slots[n_events.min(1)..];
    rand::seq::SliceRandom::shuffle(tail, rng);

    // Surfaces are unique per sentence so text-level pairs stay unambiguous.
    let mut used: std::collections::HashSet<&str> = std::collections::HashSet::new();
    let mut pick = |pool: &[&'static str], rng: &mut _| -> Option<&'static str> {
        let free: Vec<&'static str> = pool.iter().copied().filter(|w| !used.contains(w)).collect();
        let w = *free.choose(rng)?;
        used.insert(w);
        Some(w)
    };
    b.push(FILLER.choose(rng).expect("non-empty"));
    for slot in slots {
        match slot {
            None => {
                if let Some(w) = pick(EVENTS, rng) {
                    let (s, e) = b.push(w);
                    mentions.push((EntityType::Event, s, e));
                }
            }
            Some(EntityType::Org) if rng.random_bool(0.3) => {
                if let Some(w) = pick(surfaces(EntityType::Gpe), rng) {
                    let (s, _) = b.push("بلدية");
                    let (gs, ge) = b.push(w);
                    mentions.push((EntityType::Org, s, ge));
                    mentions.push((EntityType::Gpe, gs, ge));
                }
            }
            Some(ty) => {
                if let Some(w) = pick(surfaces(ty), rng) {
                    let (s, e) = b.push(w);
                    mentions.push((ty, s, e));
                }
            }
        }
        if rng.random_bool(0.5) {
            b.push(FILLER.choose(rng).expect("non-empty"));
        }
    }

    let mut sentence = AnnotatedSentence::new(sentence_id, b.text.clone());
    for (n, (ty, s, e)) in mentions.into_iter().enumerate() {
        sentence = sentence.with_entity(format!("{sentence_id}-T{}", n + 1), ty, s, e);
    }
    let events: Vec<String> = sentence.events().map(|e| e.entity_id.clone()).collect();
    let args: Vec<(String, Relation)> = sentence
        .entities
        .iter()
        .filter_map(|e| TypeCompatibility::relation_for(e.entity_type).map(|r| (e.entity_id.clone(), r)))
        .collect();
    for ev in &events {
        for (arg, rel) in &args {
            if rng.random_bool(cfg.link_probability) {
                sentence = sentence.with_relation(ev.clone(), *rel, arg.clone());
            }
        }
    }
    sentence
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sentences = (0..cfg.sentences)
        .map(|i| synth_sentence(&mut rng, &format!("syn{i:04}"), cfg))
        .collect();
    Corpus::new(format!("synthetic-{}", cfg.seed), sentences)
}

/// Location pairs whose label is decided by the hypothesis alone: a
/// positive hypothesis names the place in the premise, a negative one names
/// a place from a pool that never occurs in any premise. Classes alternate,
/// so `n` even is balanced.
pub fn separable_pairs(n: usize, seed: u64) -> Vec<NliPair> {
    const PLACES: &[&str] = &["غزة", "القدس", "رام الله", "عمان", "القاهرة"];
    const ABSENT: &[&str] = &["بيروت", "دمشق", "بغداد", "تونس", "الرباط"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = TemplateRegistry::default().test_template(Relation::HasLocation).clone();
    (0..n)
        .map(|i| {
            let event = *EVENTS.choose(&mut rng).expect("non-empty");
            let place = *PLACES.choose(&mut rng).expect("non-empty");
            let positive = i % 2 == 0;
            let named = if positive { place } else { *ABSENT.choose(&mut rng).expect("non-empty") };
            let premise = format!(
                "{} {event} في {place} {}",
                FILLER.choose(&mut rng).expect("non-empty"),
                FILLER.choose(&mut rng).expect("non-empty")
            );
            NliPair {
                premise,
                hypothesis: template.fill(event, named).expect("template has both slots"),
                label: Label::from_bool(positive),
                split: Split::Train,
                relation: Relation::HasLocation,
                template_id: template.id.clone(),
                sentence_id: format!("sep{i:04}"),
                event_id: format!("sep{i:04}-E"),
                entity_id: format!("sep{i:04}-L"),
            }
        })
        .collect()
}
