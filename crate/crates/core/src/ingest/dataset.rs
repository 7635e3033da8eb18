use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rdf::{parse_ntriples, Term, Triple};
use super::vocab::normalize_literal;
use super::IngestError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "dbpedia")]
    DBpedia,
    #[serde(rename = "linkedmdb")]
    LinkedMDB,
}

impl Source {
    pub const ALL: [Source; 2] = [Source::DBpedia, Source::LinkedMDB];

    pub fn label(self) -> &'static str {
        match self {
            Source::DBpedia => "DBpedia",
            Source::LinkedMDB => "LinkedMDB",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dbpedia" => Some(Source::DBpedia),
            "lmdb" | "linkedmdb" => Some(Source::LinkedMDB),
            _ => None,
        }
    }
}

/// All statements about one entity, in file order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityDescription {
    pub entity_id: String,
    pub subject: String,
    pub source: Source,
    pub triples: Vec<Triple>,
}

impl EntityDescription {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// The term describing the entity in triple `i`: the object, or the
    /// subject for a statement that points at the entity.
    pub fn value_term(&self, i: usize) -> Term {
        value_term(&self.subject, &self.triples[i])
    }
}

pub(crate) fn value_term(entity: &str, t: &Triple) -> Term {
    match &t.object {
        Term::Iri { value } if value == entity && t.subject != entity => Term::iri(t.subject.as_str()),
        other => other.clone(),
    }
}

/// Identity used to match gold lines against a description.
fn triple_key(t: &Triple) -> (String, String, String) {
    (
        t.subject.clone(),
        t.predicate.clone(),
        normalize_literal(t.object.lexical()),
    )
}

/// Per-user gold selections and the derived gold attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub entity_id: String,
    /// One sorted index set per user.
    pub top5: Vec<Vec<usize>>,
    pub top10: Vec<Vec<usize>>,
    /// Selections per triple pooled over users and both tasks.
    pub counts: Vec<u32>,
    pub gold_attention: Vec<f64>,
}

impl GoldAnnotation {
    pub fn for_k(&self, k: usize) -> Option<&[Vec<usize>]> {
        match k {
            5 => Some(&self.top5),
            10 => Some(&self.top10),
            _ => None,
        }
    }

    /// Builds an annotation, pooling top-5 and top-10 hits into the counts.
    pub fn from_selections(
        entity_id: &str,
        n: usize,
        top5: Vec<Vec<usize>>,
        top10: Vec<Vec<usize>>,
    ) -> Result<Self, IngestError> {
        let mut counts = vec![0u32; n];
        for set in top5.iter().chain(&top10) {
            for &i in set {
                if i >= n {
                    return Err(IngestError::Integrity {
                        entity: entity_id.to_string(),
                        message: format!("gold index {i} out of range for {n} triples"),
                    });
                }
                counts[i] += 1;
            }
        }
        let gold_attention = gold_attention(&counts).map_err(|_| IngestError::Integrity {
            entity: entity_id.to_string(),
            message: "gold annotation selects no triple".into(),
        })?;
        Ok(Self {
            entity_id: entity_id.to_string(),
            top5,
            top10,
            counts,
            gold_attention,
        })
    }
}

/// Normalized selection frequencies `c_i / Σ c`.
pub fn gold_attention(counts: &[u32]) -> Result<Vec<f64>, IngestError> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return Err(IngestError::EmptyGold);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub entities: Vec<EntityDescription>,
    pub gold: Vec<GoldAnnotation>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn position(&self, entity_id: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.entity_id == entity_id)
    }

    /// Looks an entity up by id or by subject IRI.
    pub fn find(&self, key: &str) -> Option<usize> {
        self.position(key)
            .or_else(|| self.entities.iter().position(|e| e.subject == key))
    }

    pub fn count_by_source(&self, source: Source) -> usize {
        self.entities.iter().filter(|e| e.source == source).count()
    }

    pub fn triples_by_source(&self, source: Source) -> usize {
        self.entities
            .iter()
            .filter(|e| e.source == source)
            .map(EntityDescription::len)
            .sum()
    }

    pub fn max_triples(&self) -> usize {
        self.entities.iter().map(EntityDescription::len).max().unwrap_or(0)
    }

    pub fn dump(&self) -> Vec<EntityDump<'_>> {
        self.entities
            .iter()
            .zip(&self.gold)
            .map(|(e, g)| EntityDump {
                entity_id: &e.entity_id,
                subject: &e.subject,
                source: e.source,
                triples: &e.triples,
                gold: g,
            })
            .collect()
    }

    /// Inspection dump: `[{entity_id, subject, source, triples[], gold{}}]`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("dataset serializes")
    }

    /// SHA-256 of the canonical JSON dump.
    pub fn corpus_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.dump()).expect("dataset serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Serialize)]
pub struct EntityDump<'a> {
    pub entity_id: &'a str,
    pub subject: &'a str,
    pub source: Source,
    pub triples: &'a [Triple],
    pub gold: &'a GoldAnnotation,
}

/// On-disk layout of an ESBM-style corpus.
///
/// The entity list is tab-separated with at least `eid`, `dataset` and
/// `euri` columns (an optional header row starting with `eid` is skipped).
/// `{eid}`, `{k}` and `{user}` are substituted in the file patterns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entity_list: String,
    pub dbpedia_dir: String,
    pub linkedmdb_dir: String,
    pub description_file: String,
    pub gold_file: String,
    pub users: usize,
}

impl Manifest {
    /// The ESBM v1.1 release layout.
    pub fn esbm() -> Self {
        Self {
            entity_list: "elist.txt".into(),
            dbpedia_dir: "dbpedia_data".into(),
            linkedmdb_dir: "lmdb_data".into(),
            description_file: "{eid}_desc.nt".into(),
            gold_file: "{eid}_gold_top{k}_{user}.nt".into(),
            users: 5,
        }
    }

    fn entity_dir(&self, root: &Path, source: Source, eid: &str) -> PathBuf {
        let dir = match source {
            Source::DBpedia => &self.dbpedia_dir,
            Source::LinkedMDB => &self.linkedmdb_dir,
        };
        root.join(dir).join(eid)
    }

    pub fn description_path(&self, root: &Path, source: Source, eid: &str) -> PathBuf {
        self.entity_dir(root, source, eid)
            .join(self.description_file.replace("{eid}", eid))
    }

    pub fn gold_path(&self, root: &Path, source: Source, eid: &str, k: usize, user: usize) -> PathBuf {
        let name = self
            .gold_file
            .replace("{eid}", eid)
            .replace("{k}", &k.to_string())
            .replace("{user}", &user.to_string());
        self.entity_dir(root, source, eid).join(name)
    }
}

impl Default for Manifest {
    fn default() -> Self {
        Self::esbm()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityListEntry {
    pub entity_id: String,
    pub source: Source,
    pub iri: String,
}

pub fn parse_entity_list(text: &str) -> Result<Vec<EntityListEntry>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if i == 0 && cols[0].eq_ignore_ascii_case("eid") {
            continue;
        }
        if cols.len() < 3 {
            return Err(IngestError::EntityList {
                line: i + 1,
                message: "expected at least 3 tab-separated columns (eid, dataset, euri)".into(),
            });
        }
        let source = Source::parse(cols[1]).ok_or_else(|| IngestError::EntityList {
            line: i + 1,
            message: format!("unknown dataset `{}`", cols[1]),
        })?;
        out.push(EntityListEntry {
            entity_id: cols[0].to_string(),
            source,
            iri: cols[2].trim_matches(['<', '>']).to_string(),
        });
    }
    Ok(out)
}

pub fn load_dataset(root: &Path) -> Result<Dataset, IngestError> {
    load_dataset_with(root, &Manifest::esbm())
}

pub fn load_dataset_with(root: &Path, manifest: &Manifest) -> Result<Dataset, IngestError> {
    let list_path = root.join(&manifest.entity_list);
    let list = fs::read_to_string(&list_path).map_err(|e| IngestError::Load {
        entity: None,
        path: list_path.display().to_string(),
        message: e.to_string(),
    })?;
    let entries = parse_entity_list(&list)?;
    if entries.is_empty() {
        return Err(IngestError::Load {
            entity: None,
            path: list_path.display().to_string(),
            message: "entity list is empty".into(),
        });
    }
    let mut entities = Vec::with_capacity(entries.len());
    let mut gold = Vec::with_capacity(entries.len());
    for entry in &entries {
        let (d, g) = load_entity(root, manifest, entry)?;
        entities.push(d);
        gold.push(g);
    }
    Ok(Dataset { entities, gold })
}

fn read_nt(path: &Path, entity: &str) -> Result<Vec<Triple>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::Load {
        entity: Some(entity.to_string()),
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_ntriples(&text).map_err(|e| match e {
        IngestError::Parse { line, message } => IngestError::Load {
            entity: Some(entity.to_string()),
            path: path.display().to_string(),
            message: format!("line {line}: {message}"),
        },
        other => other,
    })
}

fn load_entity(
    root: &Path,
    manifest: &Manifest,
    entry: &EntityListEntry,
) -> Result<(EntityDescription, GoldAnnotation), IngestError> {
    let eid = entry.entity_id.as_str();
    let desc_path = manifest.description_path(root, entry.source, eid);
    let raw = read_nt(&desc_path, eid)?;
    if raw.is_empty() {
        return Err(IngestError::Integrity {
            entity: eid.to_string(),
            message: "description has no triples".into(),
        });
    }
    let mut triples = Vec::with_capacity(raw.len());
    let mut index: HashMap<(String, String, String), usize> = HashMap::new();
    for t in raw {
        let key = triple_key(&t);
        if index.contains_key(&key) {
            log::warn!("entity {eid}: dropping duplicate statement {t}");
            continue;
        }
        index.insert(key, triples.len());
        triples.push(t);
    }
    let description = EntityDescription {
        entity_id: eid.to_string(),
        subject: entry.iri.clone(),
        source: entry.source,
        triples,
    };

    let mut sets: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for k in [5, 10] {
        for user in 0..manifest.users {
            let path = manifest.gold_path(root, entry.source, eid, k, user);
            let mut selected = Vec::new();
            for t in read_nt(&path, eid)? {
                let i = *index.get(&triple_key(&t)).ok_or_else(|| IngestError::Integrity {
                    entity: eid.to_string(),
                    message: format!("gold triple not in description: {t}"),
                })?;
                if !selected.contains(&i) {
                    selected.push(i);
                }
            }
            selected.sort_unstable();
            sets.entry(k).or_default().push(selected);
        }
    }
    let top5 = sets.remove(&5).unwrap_or_default();
    let top10 = sets.remove(&10).unwrap_or_default();
    let gold = GoldAnnotation::from_selections(eid, description.len(), top5, top10)?;
    Ok((description, gold))
}
