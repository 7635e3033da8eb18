//! Seeded corpora in the ESBM on-disk layout, for exercising the whole
//! pipeline without the real benchmark.
//!
//! Each predicate carries a hidden salience. Simulated annotators pick
//! triples with probability growing with that salience, so gold summaries
//! are learnable but noisy.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{Dataset, EntityDescription, GoldAnnotation, Manifest, Source, Term, Triple};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dbpedia: usize,
    pub linkedmdb: usize,
    /// Triples per description, inclusive bounds. The minimum must be at
    /// least 10 so every annotator can pick a top-10.
    pub min_triples: usize,
    pub max_triples: usize,
    pub predicates: usize,
    pub resources: usize,
    pub users: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dbpedia: 25,
            linkedmdb: 10,
            min_triples: 12,
            max_triples: 20,
            predicates: 16,
            resources: 40,
            users: 5,
            seed: 1,
        }
    }
}

fn base(source: Source) -> (&'static str, &'static str, &'static str) {
    match source {
        Source::DBpedia => (
            "http://dbpedia.org/resource/",
            "http://dbpedia.org/ontology/",
            "dbpedia",
        ),
        Source::LinkedMDB => (
            "http://data.linkedmdb.org/resource/film/",
            "http://data.linkedmdb.org/resource/movie/",
            "lmdb",
        ),
    }
}

fn subject(source: Source, i: usize) -> String {
    format!("{}Entity_{i}", base(source).0)
}

/// Sequential draws without replacement, each item picked with probability
/// proportional to its weight among those left.
fn draw(weights: &[f64], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut left: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count && !left.is_empty() {
        let total: f64 = left.iter().map(|&i| weights[i]).sum();
        let mut x = rng.random::<f64>() * total;
        let mut pick = left.len() - 1;
        for (j, &i) in left.iter().enumerate() {
            x -= weights[i];
            if x < 0.0 {
                pick = j;
                break;
            }
        }
        out.push(left.swap_remove(pick));
    }
    out.sort_unstable();
    out
}

/// Builds the corpus in memory. Entity ids are `1..` in entity-list order,
/// DBpedia first.
pub fn generate(spec: &SyntheticSpec) -> Dataset {
    assert!(spec.min_triples >= 10 && spec.max_triples >= spec.min_triples);
    assert!(spec.predicates >= 2 && spec.resources >= 1 && spec.users >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let salience: Vec<f64> = (0..spec.predicates).map(|_| rng.random::<f64>().powi(2) + 0.02).collect();
    let literal_valued: Vec<bool> = (0..spec.predicates).map(|p| p % 3 == 2).collect();
    let total = spec.dbpedia + spec.linkedmdb;
    let mut entities = Vec::with_capacity(total);
    let mut gold = Vec::with_capacity(total);
    for e in 0..total {
        let source = if e < spec.dbpedia {
            Source::DBpedia
        } else {
            Source::LinkedMDB
        };
        let (res, ont, _) = base(source);
        let s = subject(source, e + 1);
        let n = rng.random_range(spec.min_triples..=spec.max_triples);
        let mut triples: Vec<Triple> = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        while triples.len() < n {
            let p = rng.random_range(0..spec.predicates);
            let pred = format!("{ont}p{p}");
            let incoming = total > 1 && rng.random::<f64>() < 0.05;
            let t = if incoming {
                let mut other = rng.random_range(0..total);
                if other == e {
                    other = (other + 1) % total;
                }
                let other_source = if other < spec.dbpedia {
                    Source::DBpedia
                } else {
                    Source::LinkedMDB
                };
                Triple::new(subject(other_source, other + 1), pred, Term::iri(&s))
            } else if literal_valued[p] {
                let v = rng.random_range(0..200);
                let obj = match v % 3 {
                    0 => Term::lang_literal(format!("label {v}"), "en"),
                    1 => Term::typed_literal(v.to_string(), "http://www.w3.org/2001/XMLSchema#integer"),
                    _ => Term::literal(format!("value {v}")),
                };
                Triple::new(&s, pred, obj)
            } else {
                let obj = if rng.random::<f64>() < 0.3 {
                    subject(Source::ALL[rng.random_range(0..2)], rng.random_range(1..=total))
                } else {
                    format!("{res}R{}", rng.random_range(0..spec.resources))
                };
                Triple::new(&s, pred, Term::iri(obj))
            };
            if triples.contains(&t) {
                continue;
            }
            triples.push(t);
            weights.push(salience[p]);
        }
        let mut pick = |k: usize| -> Vec<Vec<usize>> {
            (0..spec.users)
                .map(|_| {
                    let noisy: Vec<f64> = weights
                        .iter()
                        .map(|w| (w * (0.5 + rng.random::<f64>())).powi(3))
                        .collect();
                    draw(&noisy, k, &mut rng)
                })
                .collect()
        };
        let top5 = pick(5);
        let top10 = pick(10);
        let entity_id = (e + 1).to_string();
        gold.push(GoldAnnotation::from_selections(&entity_id, n, top5, top10).expect("indices are in range"));
        entities.push(EntityDescription {
            entity_id,
            subject: s,
            source,
            triples,
        });
    }
    Dataset { entities, gold }
}

/// Writes `dataset` under `root` in the layout `manifest` describes.
pub fn write_dataset(dataset: &Dataset, root: &Path, manifest: &Manifest) -> io::Result<()> {
    let mut list = String::from("eid\tdataset\teuri\n");
    for (d, g) in dataset.entities.iter().zip(&dataset.gold) {
        list.push_str(&format!("{}\t{}\t<{}>\n", d.entity_id, base(d.source).2, d.subject));
        let desc_path = manifest.description_path(root, d.source, &d.entity_id);
        fs::create_dir_all(desc_path.parent().expect("entity directory"))?;
        let lines = |idx: &mut dyn Iterator<Item = usize>| -> String {
            idx.map(|i| d.triples[i].to_ntriples() + "\n").collect()
        };
        fs::write(&desc_path, lines(&mut (0..d.len())))?;
        for k in [5, 10] {
            let sets = g.for_k(k).expect("k is 5 or 10");
            for (user, set) in sets.iter().enumerate() {
                let path = manifest.gold_path(root, d.source, &d.entity_id, k, user);
                fs::write(path, lines(&mut set.iter().copied()))?;
            }
        }
    }
    fs::create_dir_all(root)?;
    fs::write(root.join(&manifest.entity_list), list)
}

/// Generates a corpus and writes it in the ESBM layout.
pub fn write_corpus(spec: &SyntheticSpec, root: &Path) -> io::Result<Dataset> {
    let d = generate(spec);
    write_dataset(&d, root, &Manifest::esbm())?;
    Ok(d)
}
