use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::Serialize;
use truegrade_core::ablation::{ablation_csv, run_ablation_seeds};
use truegrade_core::audit::AuditLog;
use truegrade_core::corpus::{
    read_jsonl, read_responses, write_jsonl, Corpus, GradeRecord, HumanScore, FACTS_FILE, HUMAN_FILE, QUESTIONS_FILE,
    REFERENCES_FILE, RESPONSES_FILE,
};
use truegrade_core::evaluation::category_for_score;
use truegrade_core::metrics::{AgreementReport, KappaWeighting, ScorePair};
use truegrade_core::synthetic::{generate_synthetic, SyntheticSpec};
use truegrade_core::{EngineConfig, GradingEngine, PipelineMode};
use truegrade_server::{ProviderConfig, Providers};

#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub mode: Option<PipelineMode>,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
}

pub fn load_config(path: Option<&Path>, overrides: Overrides) -> anyhow::Result<EngineConfig> {
    let mut config: EngineConfig = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => EngineConfig::default(),
    };
    if let Some(m) = overrides.mode {
        config.pipeline.mode = m;
    }
    if let Some(t) = overrides.threshold {
        config.pipeline.threshold = t;
    }
    if let Some(s) = overrides.seed {
        config.embedder.seed = s;
    }
    config.pipeline.validate()?;
    Ok(config)
}

fn load_spec(path: Option<&Path>) -> anyhow::Result<SyntheticSpec> {
    let Some(p) = path else {
        return Ok(SyntheticSpec::default());
    };
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    questions: usize,
    references: usize,
    facts: usize,
    topics: usize,
}

pub fn ingest(references: &Path, facts: &Path, questions: Option<&Path>, out: Option<&Path>) -> anyhow::Result<()> {
    let corpus = Corpus::load(references, facts, questions)?;
    // Building an engine runs every cross-file check: ids, marks, topics, cache seeding.
    let config = EngineConfig::default();
    let providers =
        Providers::build(&ProviderConfig::default(), &config.embedder, &config.weights).map_err(anyhow::Error::msg)?;
    GradingEngine::new(
        &corpus,
        providers.embedder,
        providers.evaluator,
        config.pipeline,
        config.cache,
        Arc::new(AuditLog::new()),
    )?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(REFERENCES_FILE), &corpus.references)?;
        write_jsonl(&dir.join(FACTS_FILE), &corpus.facts)?;
        if questions.is_some() {
            write_jsonl(&dir.join(QUESTIONS_FILE), &corpus.questions)?;
        }
    }
    let mut topics: Vec<&str> = corpus.facts.iter().map(|f| f.topic.as_str()).collect();
    topics.sort_unstable();
    topics.dedup();
    let summary = IngestSummary {
        questions: corpus.questions.len(),
        references: corpus.references.len(),
        facts: corpus.facts.len(),
        topics: topics.len(),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

pub fn gen(spec: Option<&Path>, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let mut spec = load_spec(spec)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let s = generate_synthetic(&spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_jsonl(&out.join(QUESTIONS_FILE), &s.corpus.questions)?;
    write_jsonl(&out.join(REFERENCES_FILE), &s.corpus.references)?;
    write_jsonl(&out.join(FACTS_FILE), &s.corpus.facts)?;
    write_jsonl(&out.join(RESPONSES_FILE), &s.responses)?;
    write_jsonl(&out.join(HUMAN_FILE), &s.oracle_scores)?;
    println!(
        "generated {} questions, {} facts, {} responses in {}",
        s.corpus.questions.len(),
        s.corpus.facts.len(),
        s.responses.len(),
        out.display()
    );
    Ok(())
}

/// `grades.jsonl` → `grades.audit.jsonl`, `grades.audit.head`.
pub fn audit_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.with_extension("audit.jsonl"), out.with_extension("audit.head"))
}

pub fn grade(
    responses: &Path,
    corpus_dir: Option<&Path>,
    config: Option<&Path>,
    overrides: Overrides,
    out: &Path,
) -> anyhow::Result<()> {
    let config = load_config(config, overrides)?;
    let dir = match corpus_dir {
        Some(d) => d.to_path_buf(),
        None => responses.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let corpus = Corpus::load_dir(&dir).with_context(|| format!("loading corpus from {}", dir.display()))?;
    let responses = read_responses(responses)?;
    let providers = Providers::build(
        &ProviderConfig::from_env().map_err(anyhow::Error::msg)?,
        &config.embedder,
        &config.weights,
    )
    .map_err(anyhow::Error::msg)?;

    create_parent(out)?;
    let (audit_path, head_path) = audit_paths(out);
    let audit = Arc::new(AuditLog::with_file(&audit_path)?);
    let engine = GradingEngine::new(
        &corpus,
        providers.embedder,
        providers.evaluator,
        config.pipeline.clone(),
        config.cache.clone(),
        audit.clone(),
    )?;

    let mut grades = Vec::with_capacity(responses.len());
    let mut stages: BTreeMap<String, usize> = BTreeMap::new();
    let mut unresolved = 0usize;
    for r in &responses {
        match engine.grade(r) {
            Ok(o) => {
                *stages.entry(o.result.stage.to_string()).or_default() += 1;
                grades.push(GradeRecord {
                    response_id: r.response_id.clone(),
                    question_id: r.question_id.clone(),
                    grade: o.result,
                });
            }
            Err(f) => {
                unresolved += 1;
                eprintln!("warning: {} unresolved: {}", r.response_id, f.error);
            }
        }
    }
    write_jsonl(out, &grades)?;
    audit.export_head(&head_path)?;
    let flagged = grades.iter().filter(|g| g.grade.confidence_flag).count();
    let stages: Vec<String> = stages.iter().map(|(s, n)| format!("{s}={n}")).collect();
    println!(
        "graded {} of {} responses ({} unresolved, {} flagged) [{}]; mode {}, threshold {}",
        grades.len(),
        responses.len(),
        unresolved,
        flagged,
        stages.join(" "),
        config.pipeline.mode.as_str(),
        config.pipeline.threshold
    );
    if grades.is_empty() && !responses.is_empty() {
        bail!("no response could be graded");
    }
    Ok(())
}

pub fn ablate(
    spec: Option<&Path>,
    seeds: usize,
    config: Option<&Path>,
    out: &Path,
    per_seed: Option<&Path>,
) -> anyhow::Result<()> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let spec = load_spec(spec)?;
    let config = load_config(config, Overrides::default())?;
    let summary = run_ablation_seeds(&spec, seeds, &config)?;
    create_parent(out)?;
    fs::write(out, ablation_csv(&summary.mean))?;
    if let Some(p) = per_seed {
        let mut text = String::from("seed,mode,n,pearson\n");
        for (seed, points) in &summary.per_seed {
            for line in ablation_csv(points).lines().skip(1) {
                text.push_str(&format!("{seed},{line}\n"));
            }
        }
        create_parent(p)?;
        fs::write(p, text)?;
    }
    let total = spec.total_responses();
    let at = |mode| summary.mean_at(mode, total).unwrap_or(f64::NAN);
    println!("mean pearson at n={total} over {seeds} seeds:");
    for mode in PipelineMode::ALL {
        println!("  {:<14} {:.4}", mode.as_str(), at(mode));
    }
    Ok(())
}

fn human_category_pairs(
    grades: &[GradeRecord],
    human: &HashMap<&str, f64>,
    bounds: &[f64; 3],
) -> (Vec<ScorePair>, usize) {
    let mut missing = 0;
    let pairs = grades
        .iter()
        .filter_map(|g| {
            let Some(&h) = human.get(g.response_id.as_str()) else {
                missing += 1;
                return None;
            };
            Some(ScorePair {
                item_id: g.response_id.clone(),
                score_a: g.grade.score,
                score_b: h,
                category_a: g.grade.category,
                category_b: category_for_score(h, g.grade.max_marks, bounds),
            })
        })
        .collect();
    (pairs, missing)
}

pub fn metrics(
    grades: &Path,
    human: &Path,
    out: &Path,
    confusion: Option<&Path>,
    weighting: KappaWeighting,
    config: Option<&Path>,
) -> anyhow::Result<()> {
    let config = load_config(config, Overrides::default())?;
    let grades: Vec<GradeRecord> = read_jsonl(grades)?;
    let human: Vec<HumanScore> = read_jsonl(human)?;
    let human: HashMap<&str, f64> = human.iter().map(|h| (h.response_id.as_str(), h.score)).collect();
    let (pairs, missing) = human_category_pairs(&grades, &human, &config.weights.category_bounds);
    if missing > 0 {
        eprintln!("warning: {missing} graded responses have no human score");
    }
    let report = AgreementReport::from_pairs(&pairs, weighting)
        .with_context(|| format!("agreement over {} pairs", pairs.len()))?;
    create_parent(out)?;
    write_json(out, &report)?;
    if let Some(p) = confusion {
        create_parent(p)?;
        fs::write(p, report.confusion_csv())?;
    }
    println!(
        "n={} pearson={:.4} spearman={:.4} kappa={:.4}",
        report.n, report.pearson, report.spearman, report.kappa
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_sidecars() {
        let (a, h) = audit_paths(Path::new("out/grades.jsonl"));
        assert_eq!(a, Path::new("out/grades.audit.jsonl"));
        assert_eq!(h, Path::new("out/grades.audit.head"));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let c = load_config(
            None,
            Overrides {
                mode: Some(PipelineMode::LlmOnly),
                threshold: Some(0.35),
                seed: Some(9),
            },
        )
        .unwrap();
        assert_eq!(c.pipeline.mode, PipelineMode::LlmOnly);
        assert_eq!(c.pipeline.threshold, 0.35);
        assert_eq!(c.embedder.seed, 9);
        let bad = Overrides {
            threshold: Some(1.5),
            ..Default::default()
        };
        assert!(load_config(None, bad).is_err());
    }
}
