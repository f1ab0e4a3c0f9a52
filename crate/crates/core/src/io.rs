//! JSON corpus files, checkpoints and epoch logs.
//!
//! A corpus file is `{schema_version, task, split, documents}` where every
//! document is an [`EssayDocument`] or a [`ThreadDocument`] according to
//! `task`. Features are dense arrays; there is no text anywhere.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::{labels, Assignment, FactorGraph, GraphOptions, Label, Layout, ParagraphInput, PostInput, Task};
use crate::learning::{Corpus, EpochRecord, Split};
use crate::scorer::{BankSchema, ScorerBank};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentLabel {
    MajorClaim,
    Claim,
    Premise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationLabel {
    Support,
    Attack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StanceLabel {
    Pro,
    Con,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementLabel {
    Agree,
    Disagree,
}

impl ComponentLabel {
    pub fn label(self) -> Label {
        match self {
            ComponentLabel::MajorClaim => labels::MAJOR_CLAIM,
            ComponentLabel::Claim => labels::CLAIM,
            ComponentLabel::Premise => labels::PREMISE,
        }
    }

    pub fn from_label(l: Label) -> Self {
        match l {
            labels::MAJOR_CLAIM => ComponentLabel::MajorClaim,
            labels::CLAIM => ComponentLabel::Claim,
            _ => ComponentLabel::Premise,
        }
    }
}

impl RelationLabel {
    pub fn label(self) -> Label {
        match self {
            RelationLabel::Support => labels::SUPPORT,
            RelationLabel::Attack => labels::ATTACK,
        }
    }

    pub fn from_label(l: Label) -> Self {
        if l == labels::ATTACK {
            RelationLabel::Attack
        } else {
            RelationLabel::Support
        }
    }
}

impl StanceLabel {
    pub fn label(self) -> Label {
        match self {
            StanceLabel::Pro => labels::PRO,
            StanceLabel::Con => labels::CON,
        }
    }

    pub fn from_label(l: Label) -> Self {
        if l == labels::CON {
            StanceLabel::Con
        } else {
            StanceLabel::Pro
        }
    }
}

impl AgreementLabel {
    pub fn label(self) -> Label {
        match self {
            AgreementLabel::Agree => labels::AGREE,
            AgreementLabel::Disagree => labels::DISAGREE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proposition {
    pub id: String,
    pub features: Vec<f64>,
    pub label: ComponentLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFeatures {
    pub src: String,
    pub dst: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paragraph {
    pub propositions: Vec<Proposition>,
    /// One entry per ordered pair of distinct propositions.
    #[serde(default)]
    pub pairs: Vec<PairFeatures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub src: String,
    pub dst: String,
    pub stance: RelationLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssayDocument {
    pub id: String,
    pub paragraphs: Vec<Paragraph>,
    #[serde(default)]
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Post {
    pub id: String,
    pub author: String,
    pub parent: Option<String>,
    pub features: Vec<f64>,
    pub stance: StanceLabel,
    /// Gold label of the reply edge to the parent; derived from the two
    /// stances when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreadDocument {
    pub id: String,
    #[serde(default)]
    pub topic: String,
    pub posts: Vec<Post>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Document {
    Essay(EssayDocument),
    Thread(ThreadDocument),
}

impl Document {
    pub fn id(&self) -> &str {
        match self {
            Document::Essay(d) => &d.id,
            Document::Thread(d) => &d.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub schema_version: u32,
    pub task: Task,
    pub split: Split,
    pub documents: Vec<Document>,
}

#[derive(Deserialize)]
struct RawCorpus {
    schema_version: u32,
    task: Task,
    split: Split,
    documents: Vec<Value>,
}

impl CorpusFile {
    /// Parses and schema-checks a corpus. Syntax errors carry the line and
    /// column; document errors carry the document index and id.
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let raw: RawCorpus = serde_json::from_str(text).map_err(|e| Error::parse(context, e.to_string()))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(Error::parse(
                context,
                format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", raw.schema_version),
            ));
        }
        let mut documents = Vec::with_capacity(raw.documents.len());
        for (i, v) in raw.documents.into_iter().enumerate() {
            let id = v.get("id").and_then(Value::as_str).unwrap_or("?").to_string();
            let doc = match raw.task {
                Task::ArgMining => serde_json::from_value(v).map(Document::Essay),
                Task::Stance => serde_json::from_value(v).map(Document::Thread),
            }
            .map_err(|e| Error::parse(format!("{context}: document {i} (`{id}`)"), e.to_string()))?;
            documents.push(doc);
        }
        Ok(CorpusFile {
            schema_version: raw.schema_version,
            task: raw.task,
            split: raw.split,
            documents,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Builds the factor graphs and gold assignments.
    pub fn to_corpus(&self, opts: GraphOptions) -> Result<Corpus> {
        if self.documents.is_empty() {
            return Err(Error::parse(self.split.name(), "corpus has no documents"));
        }
        let mut graphs = Vec::with_capacity(self.documents.len());
        let mut gold = Vec::with_capacity(self.documents.len());
        for doc in &self.documents {
            let (g, y) = match (self.task, doc) {
                (Task::ArgMining, Document::Essay(d)) => essay_graph(d, opts)?,
                (Task::Stance, Document::Thread(d)) => thread_graph(d)?,
                _ => return Err(Error::parse(doc.id(), format!("document does not match task {}", self.task))),
            };
            graphs.push(g);
            gold.push(y);
        }
        Corpus::new(self.split, graphs, gold)
    }
}

/// Reads a corpus file into graphs, checking that it holds `task`.
pub fn load_corpus(path: &Path, task: Task) -> Result<Corpus> {
    let file = CorpusFile::load(path)?;
    if file.task != task {
        return Err(Error::parse(path.display().to_string(), format!("corpus task is {}, expected {task}", file.task)));
    }
    file.to_corpus(GraphOptions::default())
}

fn dup_check<'a>(doc: &str, ids: impl Iterator<Item = &'a String>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::structural(format!("document `{doc}` declares `{id}` twice")));
        }
    }
    Ok(())
}

pub fn essay_graph(d: &EssayDocument, opts: GraphOptions) -> Result<(FactorGraph, Assignment)> {
    dup_check(&d.id, d.paragraphs.iter().flat_map(|p| p.propositions.iter().map(|q| &q.id)))?;
    // proposition id -> (paragraph, position)
    let mut where_: HashMap<&str, (usize, usize)> = HashMap::new();
    for (p, para) in d.paragraphs.iter().enumerate() {
        for (k, q) in para.propositions.iter().enumerate() {
            where_.insert(&q.id, (p, k));
        }
    }
    let locate = |id: &str| {
        where_
            .get(id)
            .copied()
            .ok_or_else(|| Error::structural(format!("document `{}` references unknown proposition `{id}`", d.id)))
    };

    let mut inputs = Vec::with_capacity(d.paragraphs.len());
    for (p, para) in d.paragraphs.iter().enumerate() {
        let n = para.propositions.len();
        let mut pair_features: Vec<Option<Vec<f64>>> = vec![None; n * n];
        for pf in &para.pairs {
            let (ps, s) = locate(&pf.src)?;
            let (pd, t) = locate(&pf.dst)?;
            if ps != p || pd != p || s == t {
                return Err(Error::structural(format!(
                    "document `{}`: pair `{}`->`{}` is not an ordered pair within paragraph {p}",
                    d.id, pf.src, pf.dst
                )));
            }
            if pair_features[s * n + t].replace(pf.features.clone()).is_some() {
                return Err(Error::structural(format!("document `{}`: pair `{}`->`{}` listed twice", d.id, pf.src, pf.dst)));
            }
        }
        let pair_features = if n > 1 {
            (0..n * n)
                .map(|k| {
                    let (s, t) = (k / n, k % n);
                    if s == t {
                        return Ok(Vec::new());
                    }
                    pair_features[k].take().ok_or_else(|| {
                        Error::parse(
                            d.id.clone(),
                            format!(
                                "paragraph {p} is missing pair features for `{}`->`{}`",
                                para.propositions[s].id, para.propositions[t].id
                            ),
                        )
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        inputs.push(ParagraphInput {
            propositions: para.propositions.iter().map(|q| q.features.clone()).collect(),
            pair_features,
        });
    }
    let g = FactorGraph::essay(d.id.clone(), inputs, opts)?;
    let essay = g.essay_layout().expect("essay graph");
    let mut y = Assignment::zeros(&g);
    for (p, para) in d.paragraphs.iter().enumerate() {
        for (k, q) in para.propositions.iter().enumerate() {
            y.set(essay.paragraphs[p].nodes[k], q.label.label());
        }
    }
    let mut has_parent = HashSet::new();
    for l in &d.links {
        let (ps, s) = locate(&l.src)?;
        let (pd, t) = locate(&l.dst)?;
        if ps != pd {
            return Err(Error::structural(format!(
                "document `{}`: link `{}`->`{}` crosses paragraphs",
                d.id, l.src, l.dst
            )));
        }
        let slot = essay.paragraphs[ps]
            .pair(s, t)
            .ok_or_else(|| Error::structural(format!("document `{}`: self link on `{}`", d.id, l.src)))?;
        if !has_parent.insert((ps, s)) {
            return Err(Error::structural(format!("document `{}`: `{}` has two outgoing links", d.id, l.src)));
        }
        y.set(slot.indicator, labels::ON);
        y.set(slot.label, l.stance.label());
    }
    Ok((g, y))
}

pub fn thread_graph(d: &ThreadDocument) -> Result<(FactorGraph, Assignment)> {
    dup_check(&d.id, d.posts.iter().map(|p| &p.id))?;
    let index: HashMap<&str, usize> = d.posts.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let posts = d
        .posts
        .iter()
        .map(|p| {
            let parent = match &p.parent {
                None => None,
                Some(q) => Some(*index.get(q.as_str()).ok_or_else(|| {
                    Error::structural(format!("document `{}`: post `{}` replies to unknown post `{q}`", d.id, p.id))
                })?),
            };
            Ok(PostInput {
                parent,
                author: p.author.clone(),
                features: p.features.clone(),
                reply_features: p.reply_features.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let g = FactorGraph::thread(d.id.clone(), posts)?;
    let t = g.thread_layout().expect("thread graph");
    let mut y = Assignment::zeros(&g);
    for (i, p) in d.posts.iter().enumerate() {
        y.set(t.posts[i], p.stance.label());
    }
    for (i, p) in d.posts.iter().enumerate() {
        if let (Some(e), Some(q)) = (t.edges[i], t.parent[i]) {
            let label = match p.agreement {
                Some(a) => a.label(),
                None if d.posts[q].stance == p.stance => labels::AGREE,
                None => labels::DISAGREE,
            };
            y.set(e, label);
        }
    }
    Ok((g, y))
}

/// Copy of `doc` whose labels and links are read from `a`, an assignment of
/// the graph built from `doc`.
pub fn predicted_document(doc: &Document, g: &FactorGraph, a: &Assignment) -> Result<Document> {
    a.validate(g)?;
    match (doc, g.layout()) {
        (Document::Essay(d), Layout::Essay(essay)) => {
            let mut out = d.clone();
            out.links.clear();
            for (para, layout) in out.paragraphs.iter_mut().zip(&essay.paragraphs) {
                for (q, &v) in para.propositions.iter_mut().zip(&layout.nodes) {
                    q.label = ComponentLabel::from_label(a.get(v));
                }
                for (s, t, slot) in layout.pair_slots() {
                    if a.get(slot.indicator) == labels::ON {
                        out.links.push(Link {
                            src: para.propositions[s].id.clone(),
                            dst: para.propositions[t].id.clone(),
                            stance: RelationLabel::from_label(a.get(slot.label)),
                        });
                    }
                }
            }
            Ok(Document::Essay(out))
        }
        (Document::Thread(d), Layout::Thread(t)) => {
            let mut out = d.clone();
            for (i, p) in out.posts.iter_mut().enumerate() {
                p.stance = StanceLabel::from_label(a.get(t.posts[i]));
                p.agreement = t.edges[i].map(|e| {
                    if a.get(e) == labels::AGREE {
                        AgreementLabel::Agree
                    } else {
                        AgreementLabel::Disagree
                    }
                });
            }
            Ok(Document::Thread(out))
        }
        _ => Err(Error::structural(format!("document `{}` does not match graph `{}`", doc.id(), g.id()))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub task: Task,
    pub bank: ScorerBank,
}

pub fn save_checkpoint(path: &Path, task: Task, bank: &ScorerBank) -> Result<()> {
    let ck = Checkpoint {
        schema_version: SCHEMA_VERSION,
        task,
        bank: bank.clone(),
    };
    fs::write(path, serde_json::to_string(&ck)? + "\n")?;
    Ok(())
}

/// Loads a checkpoint and checks it against the scorer shapes `schema` needs.
pub fn load_checkpoint(path: &Path, task: Task, schema: &BankSchema) -> Result<ScorerBank> {
    let text = fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    if ck.schema_version != SCHEMA_VERSION {
        return Err(Error::parse(path.display().to_string(), format!("schema_version {} is not supported", ck.schema_version)));
    }
    if ck.task != task {
        return Err(Error::parse(path.display().to_string(), format!("checkpoint task is {}, expected {task}", ck.task)));
    }
    ck.bank.validate(schema)?;
    Ok(ck.bank)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{check, ConstraintSet};
    use crate::graph::FactorType;

    fn three_proposition_essay() -> EssayDocument {
        let ids = ["a", "b", "c"];
        let mut pairs = Vec::new();
        for s in ids {
            for t in ids {
                if s != t {
                    pairs.push(PairFeatures {
                        src: s.into(),
                        dst: t.into(),
                        features: vec![0.1, 0.2],
                    });
                }
            }
        }
        EssayDocument {
            id: "e1".into(),
            paragraphs: vec![Paragraph {
                propositions: vec![
                    Proposition {
                        id: "a".into(),
                        features: vec![1.0, 0.0],
                        label: ComponentLabel::MajorClaim,
                    },
                    Proposition {
                        id: "b".into(),
                        features: vec![0.0, 1.0],
                        label: ComponentLabel::Claim,
                    },
                    Proposition {
                        id: "c".into(),
                        features: vec![0.5, 0.5],
                        label: ComponentLabel::Premise,
                    },
                ],
                pairs,
            }],
            links: vec![
                Link {
                    src: "b".into(),
                    dst: "a".into(),
                    stance: RelationLabel::Support,
                },
                Link {
                    src: "c".into(),
                    dst: "b".into(),
                    stance: RelationLabel::Attack,
                },
            ],
        }
    }

    fn essay_file(docs: Vec<EssayDocument>) -> CorpusFile {
        CorpusFile {
            schema_version: SCHEMA_VERSION,
            task: Task::ArgMining,
            split: Split::Train,
            documents: docs.into_iter().map(Document::Essay).collect(),
        }
    }

    #[test]
    fn three_proposition_counts() {
        let (g, y) = essay_graph(&three_proposition_essay(), GraphOptions::default()).unwrap();
        let count = |t: FactorType| g.factors().iter().filter(|f| f.ftype == t).count();
        assert_eq!(count(FactorType::Node), 3);
        assert_eq!(count(FactorType::Link), 6);
        assert_eq!(count(FactorType::Stance), 6);
        // brute-force scan over pairs of ordered links
        let pairs: Vec<(usize, usize)> = (0..3).flat_map(|s| (0..3).filter(move |&t| t != s).map(move |t| (s, t))).collect();
        let (mut gp, mut cp) = (0, 0);
        for &(a, b) in &pairs {
            for &(c, d) in &pairs {
                if b == c && a != d {
                    gp += 1;
                }
                if b == d && a < c {
                    cp += 1;
                }
            }
        }
        assert_eq!(count(FactorType::Grandparent), gp);
        assert_eq!(gp, 6);
        assert_eq!(cp, 3);
        // each unordered co-parent pair appears in both orders
        assert_eq!(count(FactorType::Coparent), 2 * cp);
        assert!(check(&g, &y, &ConstraintSet::arg_mining()).is_empty());
        // writing the gold back reproduces the document
        let doc = Document::Essay(three_proposition_essay());
        assert_eq!(predicted_document(&doc, &g, &y).unwrap(), doc);
    }

    #[test]
    fn round_trip_is_identity() {
        let file = essay_file(vec![three_proposition_essay()]);
        let text = file.to_json().unwrap();
        let back = CorpusFile::from_json(&text, "mem").unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_json().unwrap(), text);

        let thread = CorpusFile {
            schema_version: SCHEMA_VERSION,
            task: Task::Stance,
            split: Split::Dev,
            documents: vec![Document::Thread(ThreadDocument {
                id: "t".into(),
                topic: "x".into(),
                posts: vec![
                    Post {
                        id: "1".into(),
                        author: "ann".into(),
                        parent: None,
                        features: vec![1.0],
                        stance: StanceLabel::Pro,
                        agreement: None,
                        reply_features: None,
                    },
                    Post {
                        id: "2".into(),
                        author: "bo".into(),
                        parent: Some("1".into()),
                        features: vec![0.0],
                        stance: StanceLabel::Con,
                        agreement: Some(AgreementLabel::Disagree),
                        reply_features: Some(vec![0.5, 0.5]),
                    },
                ],
            })],
        };
        let text = thread.to_json().unwrap();
        assert_eq!(CorpusFile::from_json(&text, "mem").unwrap(), thread);
        let c = thread.to_corpus(GraphOptions::default()).unwrap();
        assert!(check(&c.graphs[0], &c.gold[0], &ConstraintSet::stance(true)).is_empty());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let err = essay_file(vec![]).to_corpus(GraphOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn malformed_document_names_its_id() {
        let text = r#"{"schema_version": 1, "task": "arg_mining", "split": "train",
            "documents": [{"id": "broken", "paragraphs": [{"propositions": [{"id": "a", "label": "claim"}]}]}]}"#;
        let msg = CorpusFile::from_json(text, "mem").unwrap_err().to_string();
        assert!(msg.contains("broken") && msg.contains("features"), "{msg}");
        let syntax = CorpusFile::from_json("{\n\"schema_version\": 1,\n oops}", "mem").unwrap_err().to_string();
        assert!(syntax.contains("line 3"), "{syntax}");
    }

    #[test]
    fn dangling_link_is_structural() {
        let mut d = three_proposition_essay();
        d.links.push(Link {
            src: "zz".into(),
            dst: "a".into(),
            stance: RelationLabel::Support,
        });
        let err = essay_graph(&d, GraphOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn checkpoint_round_trip_checks_shapes() {
        use crate::scorer::{Init, ScorerKind};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let (g, _) = essay_graph(&three_proposition_essay(), GraphOptions::default()).unwrap();
        let schema = BankSchema::of_graph(&g).unwrap();
        let bank = ScorerBank::new(&schema, ScorerKind::Linear, Init::Uniform { scale: 0.3, seed: 1 });
        save_checkpoint(&path, Task::ArgMining, &bank).unwrap();
        assert_eq!(load_checkpoint(&path, Task::ArgMining, &schema).unwrap(), bank);
        let mut other = schema.clone();
        other.entries.get_mut(&FactorType::Node).unwrap().dim += 1;
        assert!(load_checkpoint(&path, Task::ArgMining, &other).is_err());
    }
}
