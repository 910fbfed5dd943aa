use std::path::{Path, PathBuf};

use condscope::io::{read_npy, read_report, sidecar_path, write_csv, write_npy, write_report, EmbeddingKind, EmbeddingMeta, IoError};
use condscope::metrics::{analyze_matrix, mean_abs_vector, AnalysisMode, AnalyzeOptions, PrMode};
use condscope::pruning::{prune_in_place, removed_count, PruneConfig, PruneSchedule, RemovedCount};
use condscope::sampler::{auto_tail_tau, eval_mixture, sample_classes, MixtureEval, PruneHook};
use condscope::sparse::{bench, bench_csv_row, BenchParams, BENCH_CSV_HEADER};
use condscope::toydit::{
    class_conditions, load_checkpoint, save_checkpoint, train_observed, DiffusionSchedule, Mixture, ModelParams, Precision, Real,
    ToyConfig, ToyError,
};
use condscope::{DType, Tensor};
use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::error::{usage, CliError};
use crate::parse::{parse_prune, parse_schedule, PruneSpec};
use crate::{ModeArg, PruneModeArg};

/// Missing inputs are a usage problem, not a data problem.
fn require_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{}: no such file or directory", path.display())))
    }
}

/// Rank-1 files are read as a single row.
fn load_matrix(path: &Path) -> Result<(Tensor, Array2<f64>), CliError> {
    require_exists(path)?;
    let t = read_npy(path)?;
    let m = match t.rank() {
        1 => Array2::from_shape_vec((1, t.len()), t.to_f64_vec()).expect("length matches"),
        2 => t.to_array2().map_err(|e| CliError::Data(e.to_string()))?,
        r => return Err(CliError::Data(format!("{}: expected a vector or matrix, got rank {r}", path.display()))),
    };
    Ok((t, m))
}

fn load_meta(path: &Path, kind: EmbeddingKind) -> Result<EmbeddingMeta, CliError> {
    let side = sidecar_path(path);
    if side.exists() {
        return Ok(read_report(&side)?);
    }
    Ok(EmbeddingMeta {
        model_name: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        kind,
        timestep_value: None,
        notes: String::new(),
    })
}

pub struct AnalyzeArgs {
    pub emb: PathBuf,
    pub timestep_emb: Option<PathBuf>,
    pub mode: Option<ModeArg>,
    pub taus: Vec<f64>,
    pub per_row: bool,
    pub exclude_row: Option<usize>,
    pub out: PathBuf,
}

pub fn analyze(a: &AnalyzeArgs) -> Result<String, CliError> {
    if a.taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(usage("every --tau must be positive and finite"));
    }
    let (_, emb) = load_matrix(&a.emb)?;
    let meta = load_meta(&a.emb, EmbeddingKind::ClassTable)?;
    let t = match &a.timestep_emb {
        Some(p) => Some((load_matrix(p)?.1, load_meta(p, EmbeddingKind::TimestepGrid)?)),
        None => None,
    };
    let mode = match a.mode {
        Some(ModeArg::Y) => AnalysisMode::ClassOnly,
        Some(ModeArg::T) => AnalysisMode::TimestepOnly,
        Some(ModeArg::YPlusT) => AnalysisMode::Combined,
        None if t.is_some() => AnalysisMode::Combined,
        None => AnalysisMode::for_kind(meta.kind),
    };
    let (matrix, timestep_value) = match (mode, t) {
        (AnalysisMode::ClassOnly, _) => (emb, meta.timestep_value),
        (AnalysisMode::TimestepOnly, Some((t, tm))) => (t, tm.timestep_value),
        (AnalysisMode::TimestepOnly, None) => (emb, meta.timestep_value),
        (AnalysisMode::Combined, Some((t, tm))) => {
            if t.ncols() != emb.ncols() || !(t.nrows() == 1 || t.nrows() == emb.nrows()) {
                return Err(CliError::Data(format!(
                    "timestep embeddings {:?} do not broadcast against {:?}",
                    t.dim(),
                    emb.dim()
                )));
            }
            (&emb + &t, tm.timestep_value.or(meta.timestep_value))
        }
        (AnalysisMode::Combined, None) if meta.kind == EmbeddingKind::Condition => (emb, meta.timestep_value),
        (AnalysisMode::Combined, None) => return Err(usage("mode y+t needs --timestep-emb")),
    };
    let matrix = match a.exclude_row {
        Some(r) if r >= matrix.nrows() => {
            return Err(CliError::Data(format!("row {r} out of range for {} rows", matrix.nrows())));
        }
        Some(r) => {
            let keep: Vec<usize> = (0..matrix.nrows()).filter(|&i| i != r).collect();
            matrix.select(Axis(0), &keep)
        }
        None => matrix,
    };
    let opts = AnalyzeOptions {
        pr_mode: if a.per_row { PrMode::PerRow } else { PrMode::MeanAbs },
        exclude_row: a.exclude_row,
        mode: Some(mode),
    };
    let report = analyze_matrix(matrix.view(), &a.taus, &opts, mode, &meta.model_name, timestep_value)?;
    write_report(&report, &a.out)?;
    let cosine = report.cosine.map_or("n/a".to_string(), |c| format!("{:.4}", c.mean));
    Ok(format!("mode={} cosine_mean={cosine} npr={:.4}", mode.as_str(), report.npr))
}

pub fn prune(emb: &Path, mode: PruneModeArg, tau: Option<f64>, k: Option<usize>, out: Option<&Path>, count_only: bool) -> Result<String, CliError> {
    let cfg = match (mode, tau, k) {
        (PruneModeArg::Tail, Some(tau), None) => PruneConfig::Tail { tau },
        (PruneModeArg::Head, Some(tau), None) => PruneConfig::Head { tau },
        (PruneModeArg::KeepTopK, None, Some(k)) => PruneConfig::KeepTopK { k },
        (PruneModeArg::ZeroTopK, None, Some(k)) => PruneConfig::ZeroTopK { k },
        (PruneModeArg::Tail | PruneModeArg::Head, _, _) => return Err(usage("tail and head modes take --tau")),
        _ => return Err(usage("top-k modes take --k")),
    };
    cfg.validate()?;
    let (tensor, mut m) = load_matrix(emb)?;
    let (mut removed, mut total) = (0, 0);
    for mut row in m.rows_mut() {
        let row = row.as_slice_mut().expect("standard layout");
        let r = removed_count(row, &cfg)?;
        removed += r.removed;
        total += r.total;
        prune_in_place(row, &cfg)?;
    }
    let count = RemovedCount {
        removed,
        total,
        fraction: removed as f64 / total as f64,
    };
    if !count_only {
        let out = out.ok_or_else(|| usage("--out is required unless --count-only"))?;
        let pruned = Tensor::from_f64(tensor.shape().to_vec(), m.into_iter().collect()).expect("shape preserved");
        let pruned = if tensor.dtype() == DType::F32 { pruned.cast(DType::F32) } else { pruned };
        write_npy(&pruned, out)?;
    }
    Ok(count.to_string())
}

fn read_config(path: Option<&Path>) -> Result<ToyConfig, CliError> {
    let Some(path) = path else {
        return Ok(ToyConfig::default());
    };
    require_exists(path)?;
    read_report(path).map_err(|e| match e {
        IoError::Json { .. } => usage(format!("bad config: {e}")),
        e => e.into(),
    })
}

pub fn train_toy(config: Option<&Path>, seed: Option<u64>, trace_path: &Path, ckpt: &Path) -> Result<String, CliError> {
    let mut cfg = read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let total = cfg.train_steps;
    let result = train_observed(&cfg, |r| {
        eprintln!("step {:>6}/{total}  loss {:.5}  cosine {:.4}  npr {:.4}", r.step, r.loss, r.cosine, r.npr);
    });
    let (params, trace) = match result {
        Ok(v) => v,
        Err(ToyError::NonFiniteLoss { step, trace }) => {
            trace.write_csv(trace_path)?;
            return Err(CliError::Data(format!("loss became non-finite at step {step}; partial trace written")));
        }
        Err(e) => return Err(e.into()),
    };
    trace.write_csv(trace_path)?;
    save_checkpoint(ckpt, &cfg, &params, cfg.train_steps)?;
    let (first, last) = (trace.first().expect("initial row"), trace.last().expect("initial row"));
    Ok(format!(
        "steps={} rows={} loss={:.5} cosine={:.4}->{:.4} npr={:.4}->{:.4}",
        cfg.train_steps,
        trace.rows.len(),
        last.loss,
        first.cosine,
        last.cosine,
        first.npr,
        last.npr
    ))
}

/// Everything `sample --eval` records.
#[derive(Debug, Serialize)]
struct SampleReport {
    per_class: usize,
    n_classes: usize,
    n_timesteps: usize,
    seed: u64,
    /// Sample rows are grouped by class in ascending class order.
    layout: &'static str,
    prune: Option<PruneConfig>,
    schedule: Option<PruneSchedule>,
    schedule_label: Option<String>,
    /// Target removal fraction when the threshold was chosen automatically.
    auto_fraction: Option<f64>,
    /// Coordinates of the mean |c| over classes at t = T that the prune removes.
    removed_at_first_step: Option<RemovedCount>,
    mean_error: f64,
    cov_error: f64,
    eval: MixtureEval,
}

pub fn sample(ckpt: &Path, per_class: usize, prune: Option<&str>, schedule: Option<&str>, seed: u64, out: &Path, eval_path: &Path) -> Result<String, CliError> {
    if per_class < 2 {
        return Err(usage("--per-class must be at least 2"));
    }
    require_exists(ckpt)?;
    let (manifest, params) = load_checkpoint(ckpt)?;
    let n_steps = manifest.config.n_timesteps;
    let spec = prune.map(parse_prune).transpose()?;
    let sched = match schedule {
        Some(s) => parse_schedule(s, n_steps)?,
        None => PruneSchedule::EveryStep,
    };
    match manifest.config.precision {
        Precision::F32 => sample_with(&params.cast::<f32>(), &manifest.config, per_class, spec, sched, seed, out, eval_path),
        Precision::F64 => sample_with(&params, &manifest.config, per_class, spec, sched, seed, out, eval_path),
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_with<T: Real>(
    params: &ModelParams<T>,
    cfg: &ToyConfig,
    per_class: usize,
    spec: Option<PruneSpec>,
    schedule: PruneSchedule,
    seed: u64,
    out: &Path,
    eval_path: &Path,
) -> Result<String, CliError> {
    let n_steps = cfg.n_timesteps;
    let diffusion = DiffusionSchedule::new(n_steps, cfg.beta_min, cfg.beta_max)?;
    let hook = match spec {
        Some(s) => {
            if matches!(s, PruneSpec::Head(_)) && s.auto_fraction().is_some() {
                return Err(usage("AUTO thresholds are only defined for tail pruning"));
            }
            let config = s.resolve(|f| Ok(auto_tail_tau(params, n_steps, f)?))?;
            Some(PruneHook { config, schedule })
        }
        None => None,
    };
    let removed_at_first_step = match &hook {
        Some(h) => {
            let c = class_conditions(params, n_steps)?.mapv(T::as_f64);
            Some(removed_count(&mean_abs_vector(c.view()), &h.config)?)
        }
        None => None,
    };
    let run = sample_classes(params, per_class, &diffusion, hook.as_ref(), seed)?;
    write_npy(&Tensor::from_array2(&run.samples), out)?;
    let mixture = Mixture::new(cfg.n_classes)?;
    let eval = eval_mixture(run.samples.view(), &run.labels, &mixture)?;
    let report = SampleReport {
        per_class,
        n_classes: cfg.n_classes,
        n_timesteps: n_steps,
        seed,
        layout: "class_major",
        prune: hook.map(|h| h.config),
        schedule: hook.map(|h| h.schedule),
        schedule_label: hook.map(|h| h.schedule.label()),
        auto_fraction: spec.and_then(|s| s.auto_fraction()),
        removed_at_first_step,
        mean_error: eval.mean_error(),
        cov_error: eval.cov_error(),
        eval,
    };
    write_report(&report, eval_path)?;
    let mut line = format!(
        "accuracy={:.4} mean_error={:.4} cov_error={:.4}",
        report.eval.class_accuracy, report.mean_error, report.cov_error
    );
    match report.prune {
        Some(PruneConfig::Tail { tau } | PruneConfig::Head { tau }) => line.push_str(&format!(" tau={tau}")),
        Some(PruneConfig::KeepTopK { k } | PruneConfig::ZeroTopK { k }) => line.push_str(&format!(" k={k}")),
        None => {}
    }
    Ok(line)
}

pub fn bench_sparse(d: usize, out_dim: Option<usize>, sparsities: &[f64], iters: usize, seed: u64, out: &Path) -> Result<String, CliError> {
    if sparsities.is_empty() {
        return Err(usage("--sparsity needs at least one value"));
    }
    let mut reports = Vec::with_capacity(sparsities.len());
    for &sparsity in sparsities {
        let p = BenchParams {
            d,
            out_dim: out_dim.unwrap_or(2 * d),
            sparsity,
            iters,
            seed,
        };
        reports.push(bench(&p)?);
    }
    if reports.len() == 1 {
        write_report(&reports[0], out)?;
    } else {
        let rows: Vec<Vec<String>> = reports.iter().map(bench_csv_row).collect();
        write_csv(out, &BENCH_CSV_HEADER, &rows)?;
    }
    if let Some(r) = reports.iter().find(|r| !r.outputs_identical) {
        return Err(CliError::Data(format!(
            "sparse and dense outputs differ at sparsity {} (checksums {} vs {})",
            r.sparsity, r.checksum_sparse, r.checksum_dense
        )));
    }
    let best = reports.iter().map(|r| r.speedup).fold(f64::NEG_INFINITY, f64::max);
    Ok(if reports.len() == 1 {
        let r = &reports[0];
        format!(
            "speedup={:.2} dense_ns={:.0} sparse_ns={:.0} checksums_equal=true",
            r.speedup, r.dense_ns_per_op, r.sparse_ns_per_op
        )
    } else {
        format!("rows={} max_speedup={best:.2} checksums_equal=true", reports.len())
    })
}
