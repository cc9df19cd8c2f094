use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use defend_core::checkpoint::{config_hash, load_checkpoint, save_checkpoint};
use defend_core::graph::{load_dataset, save_dataset, DatasetMeta};
use defend_core::metrics::{abs_pearson, evaluate};
use defend_core::training::{
    score, train_baseline_with_regularizer, train_phase1, train_phase2, GraphContext, Phase1Result,
};
use defend_core::{
    generate_graph, AttributedGraph, EvalReport, ModelParams, Regularizer, TrainConfig,
    TrainedModel, Variant,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{expand_sweep, RunConfig, SweepSpec};
use crate::error::{CliError, CliResult};
use crate::output::{
    cell, history_rows, pareto_front, read_scores, write_csv, write_json, write_scores,
    HISTORY_HEADER,
};

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))
}

/// The dataset at `data`, or a freshly generated one from the config.
pub fn dataset(cfg: &RunConfig, data: Option<&Path>) -> CliResult<AttributedGraph> {
    match data {
        Some(dir) => Ok(load_dataset(dir)?.0),
        None => Ok(generate_graph(&cfg.generator)?.0),
    }
}

fn require_labels(g: &AttributedGraph, what: &str) -> CliResult<Vec<u8>> {
    g.labels()
        .map(<[u8]>::to_vec)
        .ok_or_else(|| CliError::Input(format!("{what} needs a labelled dataset")))
}

#[derive(Debug, Serialize)]
pub struct GenerateSummary {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_attrs: usize,
    /// Share of nodes in the minority group.
    pub gamma_g: f64,
    /// Share of nodes labelled anomalous.
    pub gamma_a: f64,
}

pub fn generate(cfg: &RunConfig, out: &Path) -> CliResult<GenerateSummary> {
    cfg.generator
        .validate()
        .map_err(|e| CliError::Config(format!("generator: {e}")))?;
    let (g, _) = generate_graph(&cfg.generator)?;
    create_dir(out)?;
    let mut meta = DatasetMeta::for_graph(&g);
    meta.seed = Some(cfg.generator.seed);
    meta.generator_config = serde_json::to_value(&cfg.generator)?;
    save_dataset(&g, &meta, out)?;
    let n = g.n_nodes() as f64;
    let ones = |v: &[u8]| v.iter().filter(|&&x| x == 1).count() as f64;
    Ok(GenerateSummary {
        n_nodes: g.n_nodes(),
        n_edges: g.n_edges(),
        n_attrs: g.n_attrs(),
        gamma_g: ones(g.sensitive()) / n,
        gamma_a: g.labels().map_or(0.0, ones) / n,
    })
}

fn context_for(g: &AttributedGraph, configs: &[&TrainConfig]) -> CliResult<GraphContext> {
    let structure = configs
        .iter()
        .any(|c| c.structure_reconstruction || c.variant == Variant::WithStruct);
    Ok(GraphContext::new(g, structure)?)
}

/// Trains each config, running phase 1 once per distinct phase-1 signature.
pub fn train_group(ctx: &GraphContext, configs: &[TrainConfig]) -> Vec<CliResult<TrainedModel>> {
    let mut cache: HashMap<String, Arc<Phase1Result>> = HashMap::new();
    configs
        .iter()
        .map(|cfg| {
            cfg.validate()?;
            let key = cfg.phase1_signature();
            let p1 = match cache.get(&key) {
                Some(p) => Arc::clone(p),
                None => {
                    let p = Arc::new(train_phase1(ctx, cfg)?);
                    cache.insert(key, Arc::clone(&p));
                    p
                }
            };
            let p2 = train_phase2(ctx, &p1.params, cfg)?;
            Ok(TrainedModel::from_phases(cfg.variant, &p1, p2))
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub variant: Variant,
    pub config_hash: String,
    pub best_epoch: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    /// `|Pearson(o, s)|` of the final scores.
    pub score_sensitive_pearson: f64,
    #[serde(flatten)]
    pub metrics: EvalReport,
}

pub fn train(cfg: &RunConfig, data: Option<&Path>, out: &Path) -> CliResult<Option<RunReport>> {
    cfg.validate()?;
    let g = dataset(cfg, data)?;
    let ctx = context_for(&g, &[&cfg.train])?;
    let model = train_group(&ctx, std::slice::from_ref(&cfg.train))
        .pop()
        .expect("one config in, one result out")?;
    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let hash = config_hash(cfg)?;
    save_checkpoint(&out.join("model.json"), &model.params, &hash)?;
    let mut rows = history_rows("phase1", &model.phase1_history);
    rows.extend(history_rows("phase2", &model.phase2_history));
    write_csv(&out.join("history.csv"), &HISTORY_HEADER, &rows)?;
    write_scores(&out.join("scores.csv"), &model.scores)?;
    let Some(y) = g.labels() else {
        return Ok(None);
    };
    let s: Vec<f64> = g.sensitive().iter().map(|&v| f64::from(v)).collect();
    let report = RunReport {
        variant: cfg.train.variant,
        config_hash: hash,
        best_epoch: model.best_epoch,
        phase1_epochs: model.epochs_run()[0],
        phase2_epochs: model.epochs_run()[1],
        score_sensitive_pearson: abs_pearson(&model.scores, &s),
        metrics: evaluate(
            &model.scores,
            y,
            g.sensitive(),
            cfg.eval.contamination,
            Some(cfg.train.seed),
        )?,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(Some(report))
}

/// Re-scores a dataset with the checkpoint in `run` and evaluates it.
pub fn eval(data: Option<&Path>, run: &Path) -> CliResult<EvalReport> {
    let cfg_path = run.join("config.json");
    let cfg: RunConfig = serde_json::from_str(
        &std::fs::read_to_string(&cfg_path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", cfg_path.display())))?,
    )
    .map_err(|e| CliError::Config(format!("{}: {e}", cfg_path.display())))?;
    let g = dataset(&cfg, data)?;
    let y = require_labels(&g, "eval")?;
    let template = ModelParams::zeros(
        g.n_attrs(),
        &cfg.train.model,
        cfg.train.variant.has_sensitive_head(),
    );
    let ck = load_checkpoint(&run.join("model.json"), &template)?;
    let ctx = context_for(&g, &[&cfg.train])?;
    let scores = score(&ctx, &ck.params, &cfg.train)?;
    let report = evaluate(
        &scores,
        &y,
        g.sensitive(),
        cfg.eval.contamination,
        Some(cfg.train.seed),
    )?;
    write_json(&run.join("eval.json"), &report)?;
    Ok(report)
}

fn metric_values(r: &EvalReport) -> [Option<f64>; 4] {
    [
        Some(r.auc_roc),
        Some(r.auc_pr),
        Some(r.delta_dp),
        r.delta_eo,
    ]
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some(var.sqrt()))
}

fn status(r: &CliResult<EvalReport>) -> String {
    match r {
        Ok(_) => "ok".into(),
        Err(e) => format!("error: {e}"),
    }
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Input(format!("cannot start worker pool: {e}")))
}

/// Trains `configs` per seed on `g` in a pool of `jobs` workers and
/// evaluates each run. Results come back in `(seed, config)` order.
fn run_grid(
    g: &AttributedGraph,
    configs: &[TrainConfig],
    seeds: &[u64],
    contamination: Option<f64>,
    jobs: usize,
) -> CliResult<Vec<Vec<CliResult<(EvalReport, f64)>>>> {
    let y = require_labels(g, "this command")?;
    let ctx = context_for(g, &configs.iter().collect::<Vec<_>>())?;
    let s: Vec<f64> = g.sensitive().iter().map(|&v| f64::from(v)).collect();
    let pool = thread_pool(jobs)?;
    Ok(pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let seeded: Vec<TrainConfig> = configs
                    .iter()
                    .map(|c| TrainConfig { seed, ..c.clone() })
                    .collect();
                train_group(&ctx, &seeded)
                    .into_iter()
                    .map(|m| {
                        let m = m?;
                        let r = evaluate(&m.scores, &y, g.sensitive(), contamination, Some(seed))?;
                        Ok((r, abs_pearson(&m.scores, &s)))
                    })
                    .collect()
            })
            .collect()
    }))
}

pub const ABLATION_HEADER: [&str; 12] = [
    "kind",
    "variant",
    "seed",
    "auc_roc",
    "auc_pr",
    "delta_dp",
    "delta_eo",
    "auc_roc_std",
    "auc_pr_std",
    "delta_dp_std",
    "delta_eo_std",
    "status",
];

pub fn ablate(cfg: &RunConfig, data: Option<&Path>, out: &Path, jobs: usize) -> CliResult<PathBuf> {
    cfg.validate()?;
    let g = dataset(cfg, data)?;
    let configs: Vec<TrainConfig> = Variant::ALL
        .iter()
        .map(|&v| TrainConfig {
            variant: v,
            ..cfg.train.clone()
        })
        .collect();
    log::info!(
        "ablation: {} variants x {} seeds",
        configs.len(),
        cfg.seeds.len()
    );
    let results = run_grid(&g, &configs, &cfg.seeds, cfg.eval.contamination, jobs)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (vi, v) in Variant::ALL.iter().enumerate() {
        let mut columns: [Vec<f64>; 4] = Default::default();
        for (si, seed) in cfg.seeds.iter().enumerate() {
            let r = results[si][vi]
                .as_ref()
                .map(|(r, _)| r.clone())
                .map_err(|e| CliError::Input(e.to_string()));
            let vals = r.as_ref().map(metric_values).unwrap_or([None; 4]);
            for (k, val) in vals.iter().enumerate() {
                if let Some(x) = val {
                    columns[k].push(*x);
                }
            }
            let mut row = vec!["run".to_string(), v.name().to_string(), seed.to_string()];
            row.extend(vals.iter().map(|&x| cell(x)));
            row.extend(std::iter::repeat_n(String::new(), 4));
            row.push(status(&r));
            rows.push(row);
        }
        let stats: Vec<_> = columns.iter().map(|c| mean_std(c)).collect();
        let mut row = vec!["summary".to_string(), v.name().to_string(), String::new()];
        row.extend(stats.iter().map(|s| cell(s.0)));
        row.extend(stats.iter().map(|s| cell(s.1)));
        let ok = columns[0].len();
        row.push(if ok == cfg.seeds.len() {
            "ok".into()
        } else {
            format!(
                "{} of {} runs failed",
                cfg.seeds.len() - ok,
                cfg.seeds.len()
            )
        });
        summary.push(row);
    }
    rows.extend(summary);
    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let path = out.join("ablation_table.csv");
    write_csv(&path, &ABLATION_HEADER, &rows)?;
    Ok(path)
}

pub fn sweep(spec: &SweepSpec, data: Option<&Path>, out: &Path, jobs: usize) -> CliResult<usize> {
    spec.base.validate()?;
    let points = expand_sweep(spec)?;
    let seeds = spec
        .seeds
        .clone()
        .unwrap_or_else(|| spec.base.seeds.clone());
    let total = points.len() * seeds.len();
    eprintln!(
        "sweep: {} points x {} seeds = {total} runs",
        points.len(),
        seeds.len()
    );
    let g = dataset(&spec.base, data)?;
    let configs: Vec<TrainConfig> = points.iter().map(|p| p.config.train.clone()).collect();
    let results = run_grid(&g, &configs, &seeds, spec.base.eval.contamination, jobs)?;

    let axis_names: Vec<String> = points
        .first()
        .map(|p| p.assignment.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut header: Vec<&str> = axis_names.iter().map(String::as_str).collect();
    header.extend([
        "seed",
        "auc_roc",
        "auc_pr",
        "delta_dp",
        "delta_eo",
        "score_sensitive_pearson",
        "status",
    ]);
    let mut rows = Vec::new();
    let mut front_input = Vec::new();
    for (pi, p) in points.iter().enumerate() {
        let axis_cells: Vec<String> = p.assignment.iter().map(|(_, v)| value_cell(v)).collect();
        let (mut aucs, mut eos) = (Vec::new(), Vec::new());
        for (si, seed) in seeds.iter().enumerate() {
            let mut row = axis_cells.clone();
            row.push(seed.to_string());
            match &results[si][pi] {
                Ok((r, pearson)) => {
                    row.extend(metric_values(r).iter().map(|&x| cell(x)));
                    row.push(pearson.to_string());
                    row.push("ok".into());
                    aucs.push(r.auc_roc);
                    if let Some(e) = r.delta_eo {
                        eos.push(e);
                    }
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), 5));
                    row.push(format!("error: {e}"));
                }
            }
            rows.push(row);
        }
        if let (Some(a), Some(e)) = (mean_std(&aucs).0, mean_std(&eos).0) {
            front_input.push((pi, a, e));
        }
    }
    create_dir(out)?;
    write_json(&out.join("sweep.json"), spec)?;
    write_csv(&out.join("tradeoff.csv"), &header, &rows)?;

    let pts: Vec<(f64, f64)> = front_input.iter().map(|&(_, a, e)| (a, e)).collect();
    let mut pareto_header: Vec<&str> = axis_names.iter().map(String::as_str).collect();
    pareto_header.extend(["auc_roc_mean", "delta_eo_mean"]);
    let pareto_rows: Vec<Vec<String>> = pareto_front(&pts)
        .into_iter()
        .map(|i| {
            let (pi, a, e) = front_input[i];
            let mut row: Vec<String> = points[pi]
                .assignment
                .iter()
                .map(|(_, v)| value_cell(v))
                .collect();
            row.push(a.to_string());
            row.push(e.to_string());
            row
        })
        .collect();
    write_csv(&out.join("pareto.csv"), &pareto_header, &pareto_rows)?;
    Ok(total)
}

fn value_cell(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn baseline(
    cfg: &RunConfig,
    data: Option<&Path>,
    reg: &str,
    out: &Path,
) -> CliResult<EvalReport> {
    let reg: Regularizer = reg.parse()?;
    let mut bcfg = cfg.baseline.clone();
    bcfg.regularizer = reg;
    cfg.validate()?;
    let g = dataset(cfg, data)?;
    let y = require_labels(&g, "baseline")?;
    let base_path = out.join(Regularizer::None.name()).join("scores.csv");
    let base = match reg {
        Regularizer::Fairod | Regularizer::Hin if base_path.exists() => Some(read_scores(&base_path)?),
        Regularizer::Fairod => {
            return Err(CliError::Input(format!(
                "fairod needs the unregularized scores at {}; run `defend baseline --reg none` with the same --out first",
                base_path.display()
            )))
        }
        _ => None,
    };
    let ctx = GraphContext::new(&g, true)?;
    let m = train_baseline_with_regularizer(&ctx, &bcfg, base.as_deref())?;
    let dir = out.join(reg.name());
    create_dir(&dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    write_csv(
        &dir.join("history.csv"),
        &HISTORY_HEADER,
        &history_rows("baseline", &m.history),
    )?;
    write_scores(&dir.join("scores.csv"), &m.scores)?;
    let report = evaluate(
        &m.scores,
        &y,
        g.sensitive(),
        cfg.eval.contamination,
        Some(bcfg.seed),
    )?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}
