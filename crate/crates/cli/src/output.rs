//! Human-readable renderings. `--json` bypasses all of this.

use std::fmt::Write as _;

use scholar_rag::eval::{EvalReport, MethodScores};
use scholar_rag::pipeline::{IngestReport, QueryResponse};

fn truncate(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        return s.to_string();
    }
    let mut out: String = s.chars().take(max.saturating_sub(3)).collect();
    out.push_str("...");
    out
}

pub fn ingest_report(r: &IngestReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "inserted: {}", r.inserted);
    let _ = writeln!(out, "replaced: {}", r.replaced);
    let _ = writeln!(out, "rejected: {}", r.rejected);
    for rej in &r.rejections {
        let _ = writeln!(out, "  {rej}");
    }
    let _ = writeln!(out, "embedded: {}", r.embedded);
    let _ = writeln!(out, "revision: {}", r.revision);
    let _ = writeln!(out, "index_count: {}", r.index_count);
    out
}

pub fn query_response(r: &QueryResponse) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4}  {:>9}  {:>10}  {:>4}  title",
        "rank", "score", "pmid", "year"
    );
    for d in &r.documents {
        let year = d.year.map_or_else(|| "-".to_string(), |y| y.to_string());
        let _ = writeln!(
            out,
            "{:>4}  {:>9.7}  {:>10}  {:>4}  {}",
            d.rank,
            d.score,
            d.pmid,
            year,
            truncate(&d.title, 80)
        );
    }
    if r.documents.is_empty() {
        let _ = writeln!(out, "(no documents)");
    }

    let _ = writeln!(out, "\ncollaborators:");
    for (i, c) in r.collaborators.iter().enumerate() {
        let pmids: Vec<&str> = c.supporting_pmids.iter().map(|s| s.pmid.as_str()).collect();
        let _ = write!(
            out,
            "{:>4}. {}  {:.7}  pmids {}",
            i + 1,
            c.display_name,
            c.aggregate_score,
            pmids.join(",")
        );
        if !c.topic_terms.is_empty() {
            let _ = write!(out, "  topics: {}", c.topic_terms.join(", "));
        }
        out.push('\n');
    }
    if r.collaborators.is_empty() {
        let _ = writeln!(out, "  (none)");
    }

    if let Some(g) = &r.generation {
        let _ = writeln!(
            out,
            "\nmodel output ({}, {} ms):",
            g.model_id,
            g.latency.as_millis()
        );
        let _ = writeln!(out, "{}", g.raw_text.trim_end());
    }
    let _ = writeln!(out);
    if let Some(hash) = &r.prompt_hash {
        let _ = writeln!(out, "prompt_hash: {hash}");
    }
    let _ = writeln!(out, "corpus_revision: {}", r.corpus_revision);
    let _ = writeln!(out, "total_ms: {:.1}", r.timings.total_ms);
    out
}

fn method_row(out: &mut String, name: &str, m: &MethodScores, queries: usize) {
    let _ = writeln!(
        out,
        "{name:<10} {:>5}/{:<5} {:>7.2}%  {:>8.4}  {:>4}",
        m.top1_hits,
        queries,
        m.top1_rate * 100.0,
        m.mrr,
        m.tied_queries
    );
}

pub fn eval_report(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "queries: {} ({} not indexed)",
        r.queries, r.not_indexed
    );
    let _ = writeln!(
        out,
        "{:<10} {:>11} {:>8}  {:>8}  {:>4}",
        "method", "top-1", "rate", "mrr", "ties"
    );
    method_row(&mut out, "embedding", &r.embedding, r.queries);
    method_row(&mut out, "keyword", &r.keyword, r.queries);
    let _ = writeln!(out, "tie rule: {}", r.tie_rule);
    out
}
