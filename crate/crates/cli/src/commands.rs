use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use pude_core::baselines::{bm25_classify, bm25_rank, default_cutoff, Bm25Index, NnpuModel};
use pude_core::bench::{
    emit_table, evaluate_transductive, run_methods, sweep_ratio, EvalReport, ExperimentSpec, Labeling, Method,
    MethodConfigs,
};
use pude_core::corpus::{
    ingest_jsonl, labels_of, load_embeddings, make_pu_split, vectorize_tfidf, write_jsonl, SplitManifest,
};
use pude_core::ebm::EnergyPair;
use pude_core::kde::KdeClassifier;
use pude_core::{Document, FeatureMatrix, Label, LabelingConfig, PUDataset};
use serde::{Deserialize, Serialize};

use crate::config::{read_json, write_json, write_text, CliError, CliResult, RunConfig};
use crate::{ExperimentArgs, LpArgs};

pub fn ingest(input: &Path, vocab_size: usize, embeddings: Option<&Path>, out: &Path) -> CliResult<()> {
    let docs = ingest_jsonl(input)?;
    let features = match embeddings {
        Some(p) => load_embeddings(p, &docs)?,
        None => vectorize_tfidf(&docs, vocab_size)?,
    };
    std::fs::create_dir_all(out).map_err(|e| pude_core::Error::io(out, e))?;
    features.save(out.join("features.json"))?;
    write_jsonl(&docs, out.join("documents.jsonl"))?;
    println!(
        "{} documents, {} features, {} empty rows -> {}",
        features.len(),
        features.dim(),
        features.zero_rows.len(),
        out.display()
    );
    Ok(())
}

fn load_aligned(corpus: &Path, features: &Path) -> CliResult<(Vec<Document>, FeatureMatrix)> {
    let docs = ingest_jsonl(corpus)?;
    let features = FeatureMatrix::load(features)?;
    let same = docs.len() == features.len() && docs.iter().zip(features.doc_ids()).all(|(d, id)| &d.id == id);
    if !same {
        return Err(pude_core::Error::Validation("corpus and feature matrix list different documents".into()).into());
    }
    Ok((docs, features))
}

#[allow(clippy::too_many_arguments)]
pub fn split(
    corpus: &Path,
    features: &Path,
    lp: &LpArgs,
    seed: u64,
    labeling: &str,
    bias_weights: Vec<f64>,
    temperature: f64,
    out: &Path,
) -> CliResult<()> {
    let (docs, features) = load_aligned(corpus, features)?;
    let labels = labels_of(&docs)?;
    let k = match (lp.lp_count.as_slice(), lp.lp_ratio) {
        ([k], None) => *k,
        // one corpus: |LP| = r |U| with |LP| + |U| = N
        ([], Some(r)) if r > 0.0 && r <= 1.0 => (r * docs.len() as f64 / (1.0 + r)).round() as usize,
        ([], Some(r)) => return Err(CliError::Usage(format!("--lp-ratio must lie in (0, 1], got {r}"))),
        _ => return Err(CliError::Usage("give one --lp-count or --lp-ratio".into())),
    };
    let config = match labeling {
        "scar" => LabelingConfig::scar(k, seed),
        "biased" => {
            if bias_weights.is_empty() {
                return Err(CliError::Usage("biased labeling needs --bias-weights".into()));
            }
            LabelingConfig::biased(bias_weights, temperature, k, seed)
        }
        other => return Err(CliError::Usage(format!("unknown labeling {other:?}"))),
    };
    let ds = make_pu_split(features, &labels, &config)?;
    write_json(out, &ds.manifest())?;
    println!("|LP| = {}, |U| = {} -> {}", ds.meta().n_lp, ds.meta().n_u, out.display());
    Ok(())
}

/// BM25 "model": the unlabeled-set index and the seed documents.
#[derive(Debug, Serialize, Deserialize)]
struct Bm25Model {
    index: Bm25Index,
    seeds: Vec<Document>,
    cutoff: Option<usize>,
}

pub fn train(
    method: Method,
    features: &Path,
    split: &Path,
    corpus: Option<&Path>,
    config: Option<&Path>,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let manifest: SplitManifest = read_json(split)?;
    let configs: MethodConfigs = match config {
        Some(p) => read_json(p)?,
        None => MethodConfigs::default(),
    };
    let (docs, features) = match corpus {
        Some(c) => {
            let (d, f) = load_aligned(c, features)?;
            (Some(d), f)
        }
        None => (None, FeatureMatrix::load(features)?),
    };
    let labels = match &docs {
        Some(d) if d.iter().all(|x| x.true_label.is_some()) => Some(labels_of(d)?),
        _ => None,
    };
    let ds = PUDataset::from_manifest(features, labels, &manifest)?;
    let view = ds.train_view();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| pude_core::Error::io(dir, e))?;
    }
    match method {
        Method::PudeKde => KdeClassifier::fit(&view, &configs.kde, seed)?.save(out)?,
        Method::PudeEm => EnergyPair::fit(&view, &configs.em, seed)?.save(out)?,
        Method::NnpuTrans => {
            let cfg = configs.nnpu.resolve(ds.meta().unlabeled_prior)?;
            NnpuModel::fit(&view, &cfg, seed)?.save(out)?;
        }
        Method::Bm25 => {
            let docs = docs.ok_or_else(|| CliError::Usage("bm25 needs --corpus for document text".into()))?;
            let text = |idx: &[usize]| -> Vec<Document> {
                idx.iter().map(|&i| Document::new(docs[i].id.clone(), docs[i].text.clone(), None)).collect()
            };
            let model = Bm25Model {
                index: Bm25Index::with_params(&text(ds.u_indices()), configs.bm25.k1, configs.bm25.b)?,
                seeds: text(ds.lp_indices()),
                cutoff: configs.bm25.cutoff,
            };
            write_json(out, &model)?;
        }
    }
    println!("trained {method} on |LP| = {}, |U| = {} -> {}", view.n_lp(), view.n_u(), out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Prediction {
    id: String,
    score: f64,
    label: Label,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionFile {
    method: Method,
    predictions: Vec<Prediction>,
}

pub fn predict(method: Method, model: &Path, features: &Path, split: &Path, out: &Path) -> CliResult<()> {
    let manifest: SplitManifest = read_json(split)?;
    let ds = PUDataset::from_manifest(FeatureMatrix::load(features)?, None, &manifest)?;
    let view = ds.train_view();
    let ids: Vec<String> = view.u_ids().into_iter().map(String::from).collect();
    let (scores, labels): (Vec<f64>, Vec<Label>) = match method {
        Method::PudeKde => {
            let m = KdeClassifier::load(model)?;
            let s = m.score(&view.u_rows())?;
            (s.to_vec(), s.iter().map(|&v| Label::from_bool(v >= m.threshold)).collect())
        }
        Method::PudeEm => {
            let s = EnergyPair::load(model)?.score(&view.u_rows())?;
            (s.to_vec(), s.iter().map(|&v| Label::from_bool(v >= 0.0)).collect())
        }
        Method::NnpuTrans => {
            let s = NnpuModel::load(model)?.score(&view.u_rows())?;
            (s.to_vec(), s.iter().map(|&v| Label::from_bool(v >= 0.0)).collect())
        }
        Method::Bm25 => {
            let m: Bm25Model = read_json(model)?;
            let ranked = bm25_rank(&m.seeds, &m.index)?;
            let k = m.cutoff.unwrap_or_else(|| default_cutoff(&ranked, m.seeds.len()));
            let by_id: HashMap<String, (f64, Label)> = bm25_classify(&ranked, k)
                .into_iter()
                .zip(&ranked)
                .map(|((id, l), (_, s))| (id, (*s, l)))
                .collect();
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id)
                        .copied()
                        .ok_or_else(|| pude_core::Error::Validation(format!("document {id} is not in the BM25 index")))
                })
                .collect::<pude_core::Result<Vec<_>>>()?
                .into_iter()
                .unzip()
        }
    };
    let predictions = ids
        .into_iter()
        .zip(scores.into_iter().zip(labels))
        .map(|(id, (score, label))| Prediction { id, score, label })
        .collect::<Vec<_>>();
    let positives = predictions.iter().filter(|p| p.label.is_positive()).count();
    write_json(out, &PredictionFile { method, predictions })?;
    println!("{positives} documents labeled positive -> {}", out.display());
    Ok(())
}

pub fn eval(predictions: &Path, corpus: &Path, split: &Path, out: Option<&Path>) -> CliResult<()> {
    let file: PredictionFile = read_json(predictions)?;
    let manifest: SplitManifest = read_json(split)?;
    let docs = ingest_jsonl(corpus)?;
    let labels = labels_of(&docs)?;
    let ids = docs.iter().map(|d| d.id.clone()).collect();
    // labels are all eval needs; features are a one-column placeholder
    let placeholder = FeatureMatrix::new(ndarray::Array2::zeros((docs.len(), 1)), ids)?;
    let ds = PUDataset::from_manifest(placeholder, Some(labels), &manifest)?;
    let by_id: HashMap<&str, &Prediction> = file.predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    if by_id.len() != manifest.u.len() {
        return Err(pude_core::Error::Validation(format!(
            "{} predictions for {} unlabeled documents",
            by_id.len(),
            manifest.u.len()
        ))
        .into());
    }
    let mut labels_u = Vec::with_capacity(manifest.u.len());
    let mut scores_u = Vec::with_capacity(manifest.u.len());
    for id in ds.train_view().u_ids() {
        let p = by_id
            .get(id)
            .ok_or_else(|| pude_core::Error::Validation(format!("no prediction for document {id}")))?;
        labels_u.push(p.label);
        scores_u.push(p.score);
    }
    let mut report = evaluate_transductive(&labels_u, Some(&scores_u), &ds)?;
    report.method = file.method.name().into();
    report.dataset = corpus.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    report.seed = manifest.meta.seed;
    let json = report.to_json()?;
    match out {
        Some(p) => write_text(p, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn report_file_name(r: &EvalReport) -> String {
    let clean: String = r
        .dataset
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{clean}-lp{}-{}-seed{}.json", r.lp_count, r.method, r.seed)
}

fn write_reports(dir: &Path, reports: &[EvalReport]) -> CliResult<()> {
    for r in reports {
        write_text(&dir.join(report_file_name(r)), &r.to_json()?)?;
    }
    write_json(&dir.join("reports.json"), &reports)?;
    // wall-clock lives outside the reports so that replays compare equal
    let timings: Vec<BTreeMap<&str, serde_json::Value>> = reports
        .iter()
        .map(|r| {
            BTreeMap::from([
                ("file", report_file_name(r).into()),
                ("wall_clock_secs", r.wall_clock_secs.into()),
            ])
        })
        .collect();
    write_json(&dir.join("timings.json"), &timings)
}

fn write_table(dir: &Path, reports: &[EvalReport]) -> CliResult<String> {
    let table = emit_table(reports);
    let text = table.to_text();
    write_text(&dir.join("table.txt"), &text)?;
    write_text(&dir.join("table.csv"), &table.to_csv()?)?;
    write_text(&dir.join("table.json"), &table.to_json()?)?;
    Ok(text)
}

fn template(cfg: &RunConfig, lp_count: Option<usize>, lp_ratio: Option<f64>) -> ExperimentSpec {
    ExperimentSpec {
        method: cfg.methods[0],
        data: cfg.data().clone(),
        dataset: cfg.dataset.clone(),
        lp_count,
        lp_ratio,
        labeling: cfg.labeling.clone().unwrap_or(Labeling::Scar),
        configs: cfg.configs.clone(),
        seeds: cfg.seeds.clone(),
    }
}

/// Per `|LP|` x dataset: the all-positive F1 and, for Gaussian data, the
/// Bayes-optimal F1, both as medians over seeds.
fn diagnostics(reports: &[EvalReport]) -> Vec<String> {
    let mut groups: BTreeMap<(usize, &str), BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in reports {
        for key in ["all_positive_f1", "bayes_f1"] {
            if let Some(v) = r.details.get(key) {
                groups
                    .entry((r.lp_count, r.dataset.as_str()))
                    .or_default()
                    .entry(key)
                    .or_default()
                    .push(*v);
            }
        }
    }
    groups
        .into_iter()
        .map(|((lp, ds), vals)| {
            let parts: Vec<String> = vals
                .into_iter()
                .map(|(k, v)| format!("{k} = {:.2}", pude_core::bench::quantile(&v, 0.5)))
                .collect();
            format!("diagnostic |LP| = {lp} {ds}: {}", parts.join(", "))
        })
        .collect()
}

pub fn run(exp: &ExperimentArgs, lp: &LpArgs) -> CliResult<()> {
    let cfg = RunConfig::resolve(exp)?;
    let settings: Vec<(Option<usize>, Option<f64>)> = if !lp.lp_count.is_empty() {
        lp.lp_count.iter().map(|&k| (Some(k), None)).collect()
    } else if let Some(r) = lp.lp_ratio {
        vec![(None, Some(r))]
    } else if !cfg.lp_counts.is_empty() {
        cfg.lp_counts.iter().map(|&k| (Some(k), None)).collect()
    } else if let Some(r) = cfg.lp_ratio {
        vec![(None, Some(r))]
    } else {
        return Err(CliError::Usage("give --lp-count or --lp-ratio (or set them in --config)".into()));
    };
    let mut reports = Vec::new();
    for (count, ratio) in settings {
        let spec = template(&cfg, count, ratio);
        reports.extend(run_methods(&spec, &cfg.methods)?);
    }
    let text = match &exp.out {
        Some(dir) => {
            write_reports(dir, &reports)?;
            write_table(dir, &reports)?
        }
        None => emit_table(&reports).to_text(),
    };
    print!("{text}");
    for line in diagnostics(&reports) {
        println!("{line}");
    }
    Ok(())
}

pub fn sweep(exp: &ExperimentArgs, ratios: &[f64]) -> CliResult<()> {
    let cfg = RunConfig::resolve(exp)?;
    let spec = template(&cfg, Some(1), None);
    let result = sweep_ratio(&spec, ratios, &cfg.methods)?;
    let csv = result.to_csv()?;
    if let Some(dir) = &exp.out {
        write_text(&dir.join("sweep.csv"), &csv)?;
        write_json(&dir.join("sweep.json"), &result.rows)?;
        write_reports(dir, &result.reports)?;
    }
    print!("{csv}");
    for (ratio, reason) in &result.skipped {
        eprintln!("skipped ratio {ratio}: {reason}");
    }
    Ok(())
}

fn read_reports(path: &Path) -> CliResult<Vec<EvalReport>> {
    let file = if path.is_dir() { path.join("reports.json") } else { path.to_path_buf() };
    let value: serde_json::Value = read_json(&file)?;
    Ok(if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    })
}

pub fn report(inputs: &[std::path::PathBuf], out: Option<&Path>) -> CliResult<()> {
    let mut reports = Vec::new();
    for p in inputs {
        reports.extend(read_reports(p)?);
    }
    let text = match out {
        Some(dir) => write_table(dir, &reports)?,
        None => emit_table(&reports).to_text(),
    };
    print!("{text}");
    for line in diagnostics(&reports) {
        println!("{line}");
    }
    Ok(())
}
