use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Vocab, OBJECT_SEP, PAD, RELATION_SEP};

/// Attribute slots per object record in the serialized observation.
pub const ATTRIBUTE_SLOTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub noun: String,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(u32, String, u32)", into = "(u32, String, u32)")]
pub struct Relation {
    pub subject: u32,
    pub predicate: String,
    pub object: u32,
}

impl From<(u32, String, u32)> for Relation {
    fn from((subject, predicate, object): (u32, String, u32)) -> Self {
        Self {
            subject,
            predicate,
            object,
        }
    }
}

impl From<Relation> for (u32, String, u32) {
    fn from(r: Relation) -> Self {
        (r.subject, r.predicate, r.object)
    }
}

/// Ground-truth world for one sample; stands in for the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub scene_id: String,
    pub objects: Vec<SceneObject>,
    pub relations: Vec<Relation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneLimits {
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_attributes: usize,
    pub max_attributes: usize,
    pub min_relations: usize,
    pub max_relations: usize,
}

impl Default for SceneLimits {
    fn default() -> Self {
        Self {
            min_objects: 2,
            max_objects: 5,
            min_attributes: 0,
            max_attributes: 2,
            min_relations: 0,
            max_relations: 4,
        }
    }
}

impl SceneLimits {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return bad(format!(
                "object bounds [{}, {}] are invalid",
                self.min_objects, self.max_objects
            ));
        }
        if self.max_objects > vocab.nouns().len() {
            return bad(format!(
                "max objects {} exceeds noun vocabulary size {}",
                self.max_objects,
                vocab.nouns().len()
            ));
        }
        if self.min_attributes > self.max_attributes {
            return bad("attribute bounds are inverted".into());
        }
        if self.max_attributes > vocab.attributes().len() {
            return bad(format!(
                "max attributes {} exceeds attribute vocabulary size {}",
                self.max_attributes,
                vocab.attributes().len()
            ));
        }
        if self.min_relations > self.max_relations {
            return bad("relation bounds are inverted".into());
        }
        let n = self.min_objects;
        let capacity = n * (n - 1) * vocab.predicates().len();
        if self.min_relations > capacity {
            return bad(format!(
                "min relations {} cannot be met by {} objects",
                self.min_relations, n
            ));
        }
        Ok(())
    }
}

impl SceneGraph {
    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn has_noun(&self, noun: &str) -> bool {
        self.objects.iter().any(|o| o.noun == noun)
    }

    /// Attributes held by any object carrying `noun`.
    pub fn attributes_of(&self, noun: &str) -> BTreeSet<&str> {
        self.objects
            .iter()
            .filter(|o| o.noun == noun)
            .flat_map(|o| o.attributes.iter().map(String::as_str))
            .collect()
    }

    /// Noun-level relation triples realized by some object pair.
    pub fn noun_triples(&self) -> BTreeSet<(&str, &str, &str)> {
        self.relations
            .iter()
            .filter_map(|r| {
                let s = self.object(r.subject)?;
                let o = self.object(r.object)?;
                Some((s.noun.as_str(), r.predicate.as_str(), o.noun.as_str()))
            })
            .collect()
    }

    pub fn distinct_nouns(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.objects
            .iter()
            .filter(|o| seen.insert(o.noun.as_str()))
            .map(|o| o.noun.as_str())
            .collect()
    }

    /// Checks the structural invariants plus the given size limits.
    pub fn validate(&self, vocab: &Vocab, limits: Option<&SceneLimits>) -> Result<()> {
        let invalid = |msg: String| Err(Error::Validation(format!("{}: {msg}", self.scene_id)));
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return invalid(format!("duplicate object id {}", o.id));
            }
            if !vocab.is_noun(&o.noun) {
                return invalid(format!("unknown noun {:?}", o.noun));
            }
            let mut attrs = BTreeSet::new();
            for a in &o.attributes {
                if !vocab.is_attribute(a) {
                    return invalid(format!("unknown attribute {a:?}"));
                }
                if !attrs.insert(a) {
                    return invalid(format!("object {} repeats attribute {a:?}", o.id));
                }
            }
        }
        let mut triples = BTreeSet::new();
        for r in &self.relations {
            if !ids.contains(&r.subject) || !ids.contains(&r.object) {
                return invalid(format!("relation endpoint missing in {r:?}"));
            }
            if r.subject == r.object {
                return invalid(format!("self relation {r:?}"));
            }
            if !vocab.is_predicate(&r.predicate) {
                return invalid(format!("unknown predicate {:?}", r.predicate));
            }
            if !triples.insert(r.clone()) {
                return invalid(format!("duplicate relation {r:?}"));
            }
        }
        if let Some(l) = limits {
            let n = self.objects.len();
            if n < l.min_objects || n > l.max_objects {
                return invalid(format!(
                    "{n} objects outside [{}, {}]",
                    l.min_objects, l.max_objects
                ));
            }
            for o in &self.objects {
                let k = o.attributes.len();
                if k < l.min_attributes || k > l.max_attributes {
                    return invalid(format!("object {} has {k} attributes", o.id));
                }
            }
            let k = self.relations.len();
            if k > l.max_relations {
                return invalid(format!("{k} relations above {}", l.max_relations));
            }
        }
        Ok(())
    }

    /// Serialized observation shown to models in place of pixels.
    ///
    /// Objects become fixed-width records `noun attr|- attr|- ,` and
    /// relations become `subject predicate object ;`.
    pub fn observation(&self) -> String {
        let mut words: Vec<&str> = Vec::new();
        for o in &self.objects {
            words.push(&o.noun);
            let slots = o.attributes.len().max(ATTRIBUTE_SLOTS);
            for i in 0..slots {
                words.push(o.attributes.get(i).map(String::as_str).unwrap_or(PAD));
            }
            words.push(OBJECT_SEP);
        }
        for r in &self.relations {
            let (Some(s), Some(o)) = (self.object(r.subject), self.object(r.object)) else {
                continue;
            };
            words.extend([
                s.noun.as_str(),
                r.predicate.as_str(),
                o.noun.as_str(),
                RELATION_SEP,
            ]);
        }
        words.join(" ")
    }
}

/// Per-noun sampling weight: a Zipf-like popularity times a theme boost.
/// Nouns are grouped into themes of five consecutive vocabulary entries so
/// that co-occurrence statistics carry structure for adversarial probing.
fn noun_weight(rank: usize, theme: usize) -> f64 {
    let popularity = 1.0 / ((rank + 1) as f64).powf(0.7);
    let boost = if rank / THEME_SIZE == theme { 4.0 } else { 1.0 };
    popularity * boost
}

const THEME_SIZE: usize = 5;

pub fn generate_scene(seed: u64, vocab: &Vocab, limits: &SceneLimits) -> Result<SceneGraph> {
    limits.validate(vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nouns = vocab.nouns();
    let n_themes = nouns.len().div_ceil(THEME_SIZE);
    let theme = rng.random_range(0..n_themes);
    let n_objects = rng.random_range(limits.min_objects..=limits.max_objects);

    let mut pool: Vec<usize> = (0..nouns.len()).collect();
    let mut objects = Vec::with_capacity(n_objects);
    for id in 0..n_objects {
        let total: f64 = pool.iter().map(|&r| noun_weight(r, theme)).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = pool.len() - 1;
        for (i, &r) in pool.iter().enumerate() {
            pick -= noun_weight(r, theme);
            if pick < 0.0 {
                chosen = i;
                break;
            }
        }
        let rank = pool.remove(chosen);

        let n_attrs = rng.random_range(limits.min_attributes..=limits.max_attributes);
        let mut attr_pool: Vec<usize> = (0..vocab.attributes().len()).collect();
        let mut attrs = Vec::with_capacity(n_attrs);
        for _ in 0..n_attrs {
            let i = rng.random_range(0..attr_pool.len());
            attrs.push(attr_pool.remove(i));
        }
        attrs.sort_unstable();
        objects.push(SceneObject {
            id: id as u32,
            noun: nouns[rank].clone(),
            attributes: attrs
                .iter()
                .map(|&a| vocab.attributes()[a].clone())
                .collect(),
        });
    }

    let capacity = n_objects * (n_objects - 1) * vocab.predicates().len();
    let n_rel = rng
        .random_range(limits.min_relations..=limits.max_relations)
        .min(capacity);
    let mut relations: Vec<Relation> = Vec::with_capacity(n_rel);
    while relations.len() < n_rel {
        let s = rng.random_range(0..n_objects) as u32;
        let o = rng.random_range(0..n_objects) as u32;
        let p = rng.random_range(0..vocab.predicates().len());
        if s == o {
            continue;
        }
        let rel = Relation {
            subject: s,
            predicate: vocab.predicates()[p].clone(),
            object: o,
        };
        if !relations.contains(&rel) {
            relations.push(rel);
        }
    }

    Ok(SceneGraph {
        scene_id: format!("scene-{seed:08}"),
        objects,
        relations,
    })
}

/// Generates `count` scenes from consecutive seeds starting at `base_seed`.
pub fn generate_corpus(
    base_seed: u64,
    count: usize,
    vocab: &Vocab,
    limits: &SceneLimits,
) -> Result<Vec<SceneGraph>> {
    (0..count as u64)
        .map(|i| generate_scene(base_seed.wrapping_add(i), vocab, limits))
        .collect()
}

pub fn write_scenes(scenes: &[SceneGraph], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in scenes {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scenes(path: &Path) -> Result<Vec<SceneGraph>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scene = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(scene);
    }
    Ok(out)
}
