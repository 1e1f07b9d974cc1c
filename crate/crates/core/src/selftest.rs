//! Built-in invariant suite over a small synthetic corpus. Everything is
//! seeded, so two runs produce byte-identical reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, PublicationRecord};
use crate::embedding::{document_text, DeterministicEmbedder, EmbeddingVector};
use crate::index::{cosine_similarity, IndexError, ScoredDocument, VectorIndex};
use crate::pipeline::Snapshot;
use crate::rag::{build_prompt, PromptTemplate};
use crate::recommend::aggregate_collaborators;
use crate::storage::DataDir;

const DIM: usize = 128;
const SEED: u64 = 0x5eed_2025;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "ok  " } else { "FAIL" };
            let _ = writeln!(out, "{status} {:<22} {}", c.name, c.detail);
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(
            out,
            "selftest: {passed}/{} checks passed",
            self.checks.len()
        );
        out
    }
}

/// The 10-record corpus the suite runs on.
pub fn synthetic_corpus() -> Vec<PublicationRecord> {
    let rows: [(&str, &str, &[&str], &[&str]); 10] = [
        (
            "Deep learning prediction of TERT promoter mutation status in thyroid cancer",
            "Histologic whole-slide images were used to train a convolutional network.",
            &["Kim, Ji Hoon", "Park, Soo"],
            &["thyroid cancer", "deep learning", "pathology"],
        ),
        (
            "Ultrasound radiomics for thyroid nodule risk stratification",
            "Texture features from ultrasound predicted malignancy.",
            &["Park, Soo", "Lee, Hana"],
            &["thyroid", "radiomics", "ultrasound"],
        ),
        (
            "Laparoscopic gastrectomy outcomes in elderly patients",
            "",
            &["Choi, Young"],
            &["gastric cancer", "surgery"],
        ),
        (
            "Transformer models for chest radiograph triage",
            "A vision transformer flagged urgent findings on chest films.",
            &["Jung, Min", "Kim, Ji Hoon"],
            &["deep learning", "radiology"],
        ),
        (
            "Gut microbiome shifts after antibiotic exposure",
            "Sequencing revealed persistent loss of commensal diversity.",
            &["Kang, Dae"],
            &["microbiome", "antibiotics"],
        ),
        (
            "Endocrine oncology outcomes for medullary carcinoma",
            "Calcitonin kinetics predicted recurrence after thyroidectomy.",
            &["Lee, Hana", "Yoon, Eun"],
            &["endocrine oncology", "thyroid"],
        ),
        (
            "Retinal fundus screening with ensemble classifiers",
            "Diabetic retinopathy grading matched specialist agreement.",
            &["Jung, Min"],
            &["ophthalmology", "deep learning"],
        ),
        (
            "Hip fracture rehabilitation and functional recovery",
            "Early mobilization shortened inpatient stay.",
            &["Shin, Woo"],
            &["orthopedics", "rehabilitation"],
        ),
        (
            "BRAF V600E immunohistochemistry in papillary carcinoma",
            "Antibody staining agreed with sequencing in most cases.",
            &["Park, Soo", "Yoon, Eun"],
            &["pathology", "thyroid cancer"],
        ),
        (
            "Sleep apnea and perioperative cardiac events",
            "Untreated apnea raised postoperative arrhythmia risk.",
            &["Han, Ji"],
            &["anesthesia", "cardiology"],
        ),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, (title, abs, authors, keywords))| {
            PublicationRecord::new(format!("{}", 1001 + i), *title)
                .with_abstract(*abs)
                .with_authors(authors.iter().copied())
                .with_keywords(keywords.iter().copied())
                .with_year(2015 + i as u16)
        })
        .collect()
}

fn check(name: &str, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check {
            name: name.into(),
            passed: true,
            detail,
        },
        Err(detail) => Check {
            name: name.into(),
            passed: false,
            detail,
        },
    }
}

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

fn random_unit(rng: &mut StdRng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(u) = EmbeddingVector::normalized(v) {
            return u;
        }
    }
}

fn build_snapshot() -> Result<Snapshot, String> {
    let embedder = DeterministicEmbedder::new(DIM).map_err(|e| e.to_string())?;
    let records = synthetic_corpus();
    let mut index = VectorIndex::new(DIM);
    for r in &records {
        let v = embedder
            .embed(&document_text(r))
            .map_err(|e| e.to_string())?;
        index.add(&r.pmid, v).map_err(|e| e.to_string())?;
    }
    let mut store = CorpusStore::new();
    store.upsert_records(records);
    Ok(Snapshot { store, index })
}

fn cosine_oracle(rng: &mut StdRng) -> Result<String, String> {
    let pairs = 1000;
    for i in 0..pairs {
        let dim = rng.random_range(2..=64);
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = cosine_similarity(&a, &b).map_err(|e| format!("pair {i}: {e}"))?;
        let want = naive_cosine(&a, &b);
        if (got - want).abs() > 1e-9 {
            return Err(format!("pair {i}: {got} vs oracle {want}"));
        }
    }
    Ok(format!("{pairs} random pairs within 1e-9"))
}

fn self_retrieval(snap: &Snapshot) -> Result<String, String> {
    for (pmid, v) in snap.index.entries() {
        let hits = snap.index.top_k(v, 1).map_err(|e| e.to_string())?;
        match hits.first() {
            Some(h) if h.pmid == pmid && h.score >= 1.0 - 1e-6 => {}
            other => return Err(format!("pmid {pmid}: got {other:?}")),
        }
    }
    Ok(format!(
        "{} of {} records at rank 1",
        snap.index.len(),
        snap.index.len()
    ))
}

fn topk_oracle(snap: &Snapshot, rng: &mut StdRng) -> Result<String, String> {
    let n = snap.index.len();
    let mut queries: Vec<EmbeddingVector> = snap.index.entries().map(|(_, v)| v.clone()).collect();
    queries.extend((0..5).map(|_| random_unit(rng, DIM)));
    let mut compared = 0;
    for (qi, q) in queries.iter().enumerate() {
        let mut oracle: Vec<(String, f64)> = snap
            .index
            .entries()
            .map(|(p, v)| (p.to_string(), naive_cosine(q.values(), v.values())))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        for k in 1..=n + 2 {
            let got = snap.index.top_k(q, k).map_err(|e| e.to_string())?;
            let want = &oracle[..k.min(n)];
            if got.len() != want.len()
                || got
                    .iter()
                    .zip(want)
                    .any(|(g, (p, s))| &g.pmid != p || (g.score - s).abs() > 1e-9)
            {
                return Err(format!("query {qi}, k {k}: result differs from full sort"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} (query, k) cases match full sort"))
}

fn prompt_order(snap: &Snapshot) -> Result<String, String> {
    let template = PromptTemplate::default();
    let mut truncated_cases = 0;
    for (i, (_, v)) in snap.index.entries().enumerate() {
        let hits = snap.index.top_k(v, 5).map_err(|e| e.to_string())?;
        let ranked = snap.resolve(&hits);
        let query = format!("selftest question {i}: who studies this?");
        for budget in [12_000, 1_200] {
            let p = match build_prompt(&query, &ranked, budget, &template) {
                Ok(p) => p,
                Err(e) => return Err(format!("query {i}, budget {budget}: {e}")),
            };
            if p.rendered_prompt.chars().count() > budget {
                return Err(format!("query {i}: prompt exceeds budget {budget}"));
            }
            if p.rendered_prompt.matches(&query).count() != 1 {
                return Err(format!("query {i}: question does not appear exactly once"));
            }
            let mut last = 0;
            for hit in hits.iter().take(p.context_blocks.len()) {
                let marker = format!("(PMID {}", hit.pmid);
                match p.rendered_prompt.find(&marker) {
                    Some(pos) if pos >= last => last = pos,
                    _ => {
                        return Err(format!(
                            "query {i}: context order broken at pmid {}",
                            hit.pmid
                        ))
                    }
                }
            }
            truncated_cases += usize::from(p.truncated);
        }
    }
    Ok(format!(
        "rank order kept in {} prompts ({truncated_cases} truncated)",
        snap.index.len() * 2
    ))
}

fn aggregation_sums(snap: &Snapshot) -> Result<String, String> {
    let mut cases = 0;
    for (_, v) in snap.index.entries() {
        let hits: Vec<ScoredDocument> = snap.index.top_k(v, 5).map_err(|e| e.to_string())?;
        let ranked = snap.resolve(&hits);
        let out = aggregate_collaborators(&ranked, usize::MAX);
        let mut oracle: BTreeMap<String, f64> = BTreeMap::new();
        for (doc, record) in &ranked {
            if doc.score <= 0.0 {
                continue;
            }
            let mut keys: Vec<_> = record
                .authors
                .iter()
                .map(|a| a.canonical_key.clone())
                .collect();
            keys.sort();
            keys.dedup();
            for key in keys {
                *oracle.entry(key).or_default() += doc.score;
            }
        }
        if out.len() != oracle.len() {
            return Err(format!("{} authors vs oracle {}", out.len(), oracle.len()));
        }
        for c in &out {
            let want = oracle.get(&c.canonical_key).copied().unwrap_or(f64::NAN);
            let listed: f64 = c.supporting_pmids.iter().map(|s| s.score).sum();
            if (c.aggregate_score - want).abs() > 1e-9 || (listed - c.aggregate_score).abs() > 1e-9
            {
                return Err(format!("author {}: sum mismatch", c.canonical_key));
            }
        }
        cases += 1;
    }
    Ok(format!(
        "per-author sums match oracle in {cases} result sets"
    ))
}

fn persistence(snap: &Snapshot, rng: &mut StdRng) -> Result<String, String> {
    let bytes = snap.index.to_bytes();
    let back = VectorIndex::from_bytes(&bytes).map_err(|e| e.to_string())?;
    if back != snap.index || back.to_bytes() != bytes {
        return Err("round trip is not byte-identical".into());
    }
    for i in 0..20 {
        let q = random_unit(rng, DIM);
        if back.top_k(&q, 5).ok() != snap.index.top_k(&q, 5).ok() {
            return Err(format!("query {i}: results differ after reload"));
        }
    }
    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x40;
    match VectorIndex::from_bytes(&corrupt) {
        Err(IndexError::Corrupt {
            field: "checksum", ..
        }) => {}
        other => return Err(format!("flipped byte not caught by checksum: {other:?}")),
    }
    Ok(format!(
        "{} bytes round-trip; corruption rejected",
        bytes.len()
    ))
}

/// Runs the suite. When `data_dir` holds committed state, its files are
/// loaded and verified as a final check.
pub fn run(data_dir: Option<&DataDir>) -> SelftestReport {
    let mut rng = StdRng::seed_from_u64(SEED);
    let mut checks = vec![check("cosine-oracle", cosine_oracle(&mut rng))];
    match build_snapshot() {
        Ok(snap) => {
            checks.push(check("self-retrieval", self_retrieval(&snap)));
            checks.push(check("topk-oracle", topk_oracle(&snap, &mut rng)));
            checks.push(check("prompt-order", prompt_order(&snap)));
            checks.push(check("aggregation-sums", aggregation_sums(&snap)));
            checks.push(check("persistence-roundtrip", persistence(&snap, &mut rng)));
        }
        Err(e) => checks.push(check("synthetic-corpus", Err(e))),
    }
    if let Some(dir) = data_dir {
        let result = match dir.manifest() {
            Ok(None) => None,
            Ok(Some(_)) => Some(
                dir.load()
                    .map(|state| {
                        let (store, index) = state.expect("manifest exists");
                        format!(
                            "revision {} with {} vectors loads",
                            store.revision(),
                            index.len()
                        )
                    })
                    .map_err(|e| e.to_string()),
            ),
            Err(e) => Some(Err(e.to_string())),
        };
        if let Some(result) = result {
            checks.push(check("persisted-index", result));
        }
    }
    SelftestReport { checks }
}
