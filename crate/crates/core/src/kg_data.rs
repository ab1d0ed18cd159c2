//! Triple files, vocabularies, the filtered-ranking index and relation
//! cardinality classes.
//!
//! Files hold one fact per line as `head<TAB>relation<TAB>tail`. Names are
//! mapped to dense ids in first-seen order, so loading `train`, `valid` and
//! `test` in that order always yields the same id assignment.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fact `(head, relation, tail)` over dense integer ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, rel: usize, tail: usize) -> Self {
        Self { head, rel, tail }
    }
}

/// Which end of a triple is replaced when corrupting or ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Head,
    Tail,
}

impl Triple {
    /// The triple with `side` replaced by `entity`.
    pub fn with(self, side: Side, entity: usize) -> Self {
        match side {
            Side::Head => Triple { head: entity, ..self },
            Side::Tail => Triple { tail: entity, ..self },
        }
    }

    pub fn entity(&self, side: Side) -> usize {
        match side {
            Side::Head => self.head,
            Side::Tail => self.tail,
        }
    }
}

/// Bidirectional name <-> dense id map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for name in names {
            vocab.intern(&name.into());
        }
        vocab
    }

    /// Returns the id for `name`, assigning the next free id if unseen.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Reads a tab-separated triple file, extending both vocabularies.
///
/// Lines keep file order; exact duplicate lines are dropped with a warning.
/// Blank lines are skipped.
pub fn load_triples(
    path: impl AsRef<Path>,
    entities: &mut Vocab,
    relations: &mut Vocab,
) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    let mut duplicates = 0usize;
    for (idx, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: idx + 1,
                found: fields.len(),
            });
        }
        let head = entities.intern(fields[0]);
        let rel = relations.intern(fields[1]);
        let tail = entities.intern(fields[2]);
        let triple = Triple { head, rel, tail };
        if seen.insert(triple) {
            triples.push(triple);
        } else {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        warn!("{}: dropped {duplicates} duplicate triple(s)", path.display());
    }
    Ok(triples)
}

/// Writes `id<TAB>name` lines.
pub fn write_dictionary(path: impl AsRef<Path>, vocab: &Vocab) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (id, name) in vocab.names().iter().enumerate() {
        writeln!(out, "{id}\t{name}").expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Known-true heads and tails over every split, for filtered ranking.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails: HashMap<(usize, usize), HashSet<usize>>,
    heads: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterIndex {
    pub fn build<'a, I>(splits: I) -> Self
    where
        I: IntoIterator<Item = &'a [Triple]>,
    {
        let mut index = Self::default();
        for split in splits {
            for t in split {
                index.tails.entry((t.head, t.rel)).or_default().insert(t.tail);
                index.heads.entry((t.rel, t.tail)).or_default().insert(t.head);
            }
        }
        index
    }

    pub fn true_tails(&self, head: usize, rel: usize) -> Option<&HashSet<usize>> {
        self.tails.get(&(head, rel))
    }

    pub fn true_heads(&self, rel: usize, tail: usize) -> Option<&HashSet<usize>> {
        self.heads.get(&(rel, tail))
    }

    /// Known-true entities for the corrupted side of `triple`.
    pub fn known(&self, triple: &Triple, side: Side) -> Option<&HashSet<usize>> {
        match side {
            Side::Head => self.true_heads(triple.rel, triple.tail),
            Side::Tail => self.true_tails(triple.head, triple.rel),
        }
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.true_tails(triple.head, triple.rel)
            .is_some_and(|tails| tails.contains(&triple.tail))
    }

    pub fn is_empty(&self) -> bool {
        self.tails.is_empty()
    }

    /// Number of distinct triples indexed.
    pub fn len(&self) -> usize {
        self.tails.values().map(HashSet::len).sum()
    }
}

/// Builds the filter index over the union of the three splits.
pub fn build_filter_index(train: &[Triple], valid: &[Triple], test: &[Triple]) -> FilterIndex {
    FilterIndex::build([train, valid, test])
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub filter: FilterIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::config("split", format!("unknown split {other:?}"))),
        }
    }
}

impl KnowledgeGraph {
    /// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let train = load_triples(dir.join("train.txt"), &mut entities, &mut relations)?;
        let valid = load_triples(dir.join("valid.txt"), &mut entities, &mut relations)?;
        let test = load_triples(dir.join("test.txt"), &mut entities, &mut relations)?;
        Self::new(entities, relations, train, valid, test)
    }

    /// Assembles a graph from already-numbered splits, checking id bounds
    /// and dropping duplicates within each split.
    pub fn new(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let (ne, nr) = (entities.len(), relations.len());
        let clean = |name: &str, split: Vec<Triple>| -> Result<Vec<Triple>> {
            let mut seen = HashSet::with_capacity(split.len());
            let mut out = Vec::with_capacity(split.len());
            for t in split {
                if t.head >= ne || t.tail >= ne || t.rel >= nr {
                    return Err(Error::Data(format!(
                        "{name} triple {t:?} out of bounds ({ne} entities, {nr} relations)"
                    )));
                }
                if seen.insert(t) {
                    out.push(t);
                }
            }
            Ok(out)
        };
        let train = clean("train", train)?;
        let valid = clean("valid", valid)?;
        let test = clean("test", test)?;
        let filter = build_filter_index(&train, &valid, &test);
        Ok(Self {
            entities,
            relations,
            train,
            valid,
            test,
            filter,
        })
    }

    /// A graph with anonymous names `e0..`, `r0..`.
    pub fn from_ids(
        num_entities: usize,
        num_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let entities = Vocab::from_names((0..num_entities).map(|i| format!("e{i}")));
        let relations = Vocab::from_names((0..num_relations).map(|i| format!("r{i}")));
        Self::new(entities, relations, train, valid, test)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

pub fn dataset_stats(kg: &KnowledgeGraph) -> DatasetStats {
    DatasetStats {
        entities: kg.num_entities(),
        relations: kg.num_relations(),
        train: kg.train.len(),
        valid: kg.valid.len(),
        test: kg.test.len(),
    }
}

/// Mapping-cardinality class of a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "1-to-1")]
    OneToOne,
    #[serde(rename = "1-to-N")]
    OneToN,
    #[serde(rename = "N-to-1")]
    NToOne,
    #[serde(rename = "N-to-N")]
    NToN,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::OneToOne,
        Category::OneToN,
        Category::NToOne,
        Category::NToN,
    ];

    /// `hco`: mean heads per tail, `tcs`: mean tails per head.
    pub fn from_fanout(hco: f64, tcs: f64, eta: f64) -> Self {
        match (hco >= eta, tcs >= eta) {
            (false, false) => Category::OneToOne,
            (true, false) => Category::NToOne,
            (false, true) => Category::OneToN,
            (true, true) => Category::NToN,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::OneToOne => "1-to-1",
            Category::OneToN => "1-to-N",
            Category::NToOne => "N-to-1",
            Category::NToN => "N-to-N",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationCategory {
    pub category: Category,
    /// Average number of heads per distinct tail.
    pub hco: f64,
    /// Average number of tails per distinct head.
    pub tcs: f64,
}

/// Classifies every relation present in `train` by its head/tail fan-out.
pub fn classify_relations(train: &[Triple], eta: f64) -> Result<BTreeMap<usize, RelationCategory>> {
    if train.is_empty() {
        return Err(Error::Data("cannot classify relations of an empty split".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::config("eta", "must be > 0"));
    }
    #[derive(Default)]
    struct Counts {
        triples: usize,
        heads: HashSet<usize>,
        tails: HashSet<usize>,
    }
    let mut per_rel: BTreeMap<usize, Counts> = BTreeMap::new();
    for t in train {
        let c = per_rel.entry(t.rel).or_default();
        c.triples += 1;
        c.heads.insert(t.head);
        c.tails.insert(t.tail);
    }
    Ok(per_rel
        .into_iter()
        .map(|(rel, c)| {
            let n = c.triples as f64;
            let hco = n / c.tails.len() as f64;
            let tcs = n / c.heads.len() as f64;
            let category = Category::from_fanout(hco, tcs, eta);
            (rel, RelationCategory { category, hco, tcs })
        })
        .collect())
}

/// Uniform minibatch drawn with replacement.
pub fn sample_batch<R: Rng + ?Sized>(
    train: &[Triple],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Triple>> {
    if train.is_empty() {
        return Err(Error::Data("cannot sample from an empty training set".into()));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be >= 1"));
    }
    Ok((0..batch_size)
        .map(|_| train[rng.gen_range(0..train.len())])
        .collect())
}
