use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use rnnmotion::cells::{CellKind, Dims, Params};
use rnnmotion::engine::{self, FD_EPS_RANGE};
use rnnmotion::motion::{self, NormStats};
use rnnmotion::numerics::{DenseMatrix, Rng};
use rnnmotion::plot::{LineChart, Series};
use rnnmotion::toytask::{self, Sequence, SeriesDataset};
use rnnmotion::training::{self, TrainConfig, TrainReport};
use rnnmotion::{persistence, Error};

use crate::{CompareArgs, GenerateArgs, GradcheckArgs, MotionArgs, OptimArgs, PlotArgs, ToyArgs, ToyDataArgs};

/// Gradient-check pass threshold on the max symmetric relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Lib {
        context: String,
        #[source]
        source: Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Lib { source, .. } if source.is_numerical() => 2,
            CliError::Lib { source, .. } if source.is_io() => 3,
            CliError::Lib { .. } => 1,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for rnnmotion::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Lib {
            context: what(),
            source,
        })
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Lib {
        context: "writing output".into(),
        source: Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn report_json(report: &TrainReport, timing: bool) -> TrainReport {
    if timing {
        report.clone()
    } else {
        report.without_timing()
    }
}

fn build_config(base: TrainConfig, optim: &OptimArgs, hidden: usize, seed: u64) -> CliResult<TrainConfig> {
    let cfg = TrainConfig {
        learning_rate: optim.lr.unwrap_or(base.learning_rate),
        epochs: optim.epochs.unwrap_or(base.epochs),
        clip_threshold: optim.clip.unwrap_or(base.clip_threshold),
        seed,
        hidden,
        init_scale: optim.init_scale.unwrap_or(if hidden == base.hidden {
            base.init_scale
        } else {
            Params::default_scale(hidden)
        }),
        log_every: optim.log_every,
        ..base
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn banner(what: &str, cfg: &TrainConfig) {
    eprintln!(
        "{what}: cell={} hidden={} epochs={} lr={} clip={} init_scale={} seed={}",
        cfg.cell, cfg.hidden, cfg.epochs, cfg.learning_rate, cfg.clip_threshold, cfg.init_scale, cfg.seed
    );
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult {
    let dims = Dims::new(a.d_in, a.hidden, a.d_out).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.t_len == 0 {
        return Err(CliError::Usage("t-len must be >= 1".into()));
    }
    if !(a.eps > 0.0) {
        return Err(CliError::Usage(format!("eps must be > 0, got {}", a.eps)));
    }
    if a.eps < FD_EPS_RANGE.0 || a.eps > FD_EPS_RANGE.1 {
        eprintln!(
            "warning: eps={} is outside the validated range [{:e}, {:e}]; the check may fail for numerical reasons",
            a.eps, FD_EPS_RANGE.0, FD_EPS_RANGE.1
        );
    }

    let mut rng = Rng::new(a.seed);
    let p = Params::init(a.cell, dims, 0.8, &mut rng).context(|| "initializing model".into())?;
    let xs = DenseMatrix::from_vec(a.t_len, a.d_in, (0..a.t_len * a.d_in).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
        .context(|| "drawing inputs".into())?;
    let ys = DenseMatrix::from_vec(a.t_len, a.d_out, (0..a.t_len * a.d_out).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
        .context(|| "drawing targets".into())?;
    let mask = vec![true; a.t_len];

    let ctx = || "gradient check".to_string();
    let trace = engine::forward_sequence(&p, &xs, &ys, &mask).context(ctx)?;
    let analytic = engine::backward_sequence(&p, &trace, &xs, &ys, &mask).context(ctx)?;
    let numeric = engine::finite_difference_grads(&p, &xs, &ys, &mask, a.eps).context(ctx)?;
    let err = engine::max_relative_error(&analytic, &numeric).context(ctx)?;

    let pass = err < GRADCHECK_TOLERANCE;
    println!(
        "gradcheck cell={} dims={} t_len={} eps={:e} params={} max_rel_err={err:.3e} tolerance={GRADCHECK_TOLERANCE:e} {}",
        a.cell,
        dims,
        a.t_len,
        a.eps,
        p.num_params(),
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("max relative error {err:.3e} exceeds {GRADCHECK_TOLERANCE:e}")))
    }
}

fn toy_dataset(d: &ToyDataArgs) -> CliResult<SeriesDataset> {
    toytask::generate_toy_dataset(d.n_seq, d.t_len, &Rng::new(d.seed)).map_err(|e| CliError::Usage(e.to_string()))
}

fn predictions(p: &Params, seq: &Sequence) -> CliResult<Vec<f64>> {
    let trace = engine::forward_sequence(p, &seq.inputs, &seq.targets, &seq.mask).context(|| "evaluating model".into())?;
    Ok(trace.steps.iter().map(|s| s.y[0]).collect())
}

/// CSV of one toy sequence with the model outputs next to the target.
fn write_fit_csv(path: &Path, seq: &Sequence, outputs: &[(&str, Vec<f64>)]) -> CliResult {
    let cols = 4 + outputs.len();
    let mut header: Vec<String> = ["t", "x0", "x1", "target"].iter().map(|s| s.to_string()).collect();
    header.extend(outputs.iter().map(|(name, _)| format!("{name}_output")));
    let mut data = Vec::with_capacity(seq.len() * cols);
    for t in 0..seq.len() {
        data.extend([t as f64, seq.inputs[(t, 0)], seq.inputs[(t, 1)], seq.targets[(t, 0)]]);
        data.extend(outputs.iter().map(|(_, ys)| ys[t]));
    }
    let m = DenseMatrix::from_vec(seq.len(), cols, data).context(|| "assembling fit table".into())?;
    motion::write_csv(path, &m, Some(&header)).context(|| "writing fit CSV".into())
}

fn fit_chart(seq: &Sequence, outputs: &[(&str, Vec<f64>, &str)]) -> LineChart {
    let first = toytask::FIRST_TARGET_STEP;
    let target: Vec<(f64, f64)> = (first..seq.len()).map(|t| (t as f64, seq.targets[(t, 0)])).collect();
    let mut chart = LineChart::new("Delayed sum: target vs model output (sequence 0)", "time step", "value")
        .with_series(Series::from_values("x0", &seq.inputs.column(0), 0.0, "#bbbbbb"))
        .with_series(Series::from_values("x1", &seq.inputs.column(1), 0.0, "#888888"))
        .with_series(Series::new("target", target, "black"));
    for (name, ys, color) in outputs {
        let pts = (first..seq.len()).map(|t| (t as f64, ys[t])).collect();
        chart = chart.with_series(Series::new(*name, pts, *color).dashed());
    }
    chart
}

fn write_loss_csv(path: &Path, curves: &[(&str, &[f64])]) -> CliResult {
    let epochs = curves[0].1.len();
    let mut header = vec!["epoch".to_string()];
    header.extend(curves.iter().map(|(n, _)| n.to_string()));
    let mut data = Vec::new();
    for e in 0..epochs {
        data.push(e as f64);
        data.extend(curves.iter().map(|(_, c)| c[e]));
    }
    let m = DenseMatrix::from_vec(epochs, curves.len() + 1, data).context(|| "assembling loss table".into())?;
    motion::write_csv(path, &m, Some(&header)).context(|| "writing loss CSV".into())
}

fn save_svg(chart: &LineChart, path: &Path) -> CliResult {
    chart.save(path).context(|| "writing chart".into())
}

pub fn train_toy(a: &ToyArgs) -> CliResult {
    let cfg = build_config(TrainConfig::toy(a.cell), &a.optim, a.data.hidden, a.data.seed)?;
    banner("train-toy", &cfg);
    let data = toy_dataset(&a.data)?;
    let (params, report) = training::train(&data, &cfg).context(|| format!("training {} on the delayed-sum task", cfg.cell))?;

    let dir = &a.data.out_dir;
    ensure_dir(dir)?;
    write_loss_csv(&dir.join("loss_curve.csv"), &[(cfg.cell.as_str(), &report.loss_curve)])?;
    write_json(&dir.join("report.json"), &report_json(&report, a.optim.timing))?;
    persistence::save_checkpoint(&params, None, cfg.seed, &dir.join("checkpoint.json")).context(|| "saving checkpoint".into())?;

    let seq = &data.sequences()[0];
    let out = predictions(&params, seq)?;
    write_fit_csv(&dir.join("fit.csv"), seq, &[(cfg.cell.as_str(), out.clone())])?;
    save_svg(&fit_chart(seq, &[(cfg.cell.as_str(), out, "green")]), &dir.join("fit.svg"))?;
    save_svg(
        &LineChart::new("Training loss", "epoch", "masked MSE")
            .log_y()
            .with_series(Series::from_values(cfg.cell.as_str(), &report.loss_curve, 0.0, "green")),
        &dir.join("loss_curve.svg"),
    )?;
    println!("final_loss={:.6e} out_dir={}", report.final_loss, dir.display());
    Ok(())
}

pub fn compare(a: &CompareArgs) -> CliResult {
    let cfg = build_config(TrainConfig::toy(CellKind::Gru), &a.optim, a.data.hidden, a.data.seed)?;
    banner("compare-cells", &cfg);
    let data = toy_dataset(&a.data)?;
    let cmp = training::compare_cells(&data, &cfg).context(|| "comparing cells".into())?;

    let dir = &a.data.out_dir;
    ensure_dir(dir)?;
    write_loss_csv(&dir.join("loss_curves.csv"), &[("gru", &cmp.gru.loss_curve), ("tanh", &cmp.tanh.loss_curve)])?;
    save_svg(
        &LineChart::new("Delayed-sum training loss: GRU vs Tanh", "epoch", "masked MSE")
            .log_y()
            .with_series(Series::from_values("GRU", &cmp.gru.loss_curve, 0.0, "green"))
            .with_series(Series::from_values("Tanh", &cmp.tanh.loss_curve, 0.0, "blue").dashed()),
        &dir.join("loss_curves.svg"),
    )?;
    write_json(&dir.join("gru_report.json"), &report_json(&cmp.gru, a.optim.timing))?;
    write_json(&dir.join("tanh_report.json"), &report_json(&cmp.tanh, a.optim.timing))?;
    persistence::save_checkpoint(&cmp.gru_params, None, cfg.seed, &dir.join("gru_checkpoint.json")).context(|| "saving checkpoint".into())?;
    persistence::save_checkpoint(&cmp.tanh_params, None, cfg.seed, &dir.join("tanh_checkpoint.json")).context(|| "saving checkpoint".into())?;

    let seq = &data.sequences()[0];
    let gru_out = predictions(&cmp.gru_params, seq)?;
    let tanh_out = predictions(&cmp.tanh_params, seq)?;
    write_fit_csv(&dir.join("fit.csv"), seq, &[("gru", gru_out.clone()), ("tanh", tanh_out.clone())])?;
    save_svg(&fit_chart(seq, &[("GRU", gru_out, "green"), ("Tanh", tanh_out, "blue")]), &dir.join("fit.svg"))?;

    let summary = json!({
        "config": cfg,
        "dataset": { "n_seq": a.data.n_seq, "t_len": a.data.t_len, "seed": a.data.seed },
        "final_loss_gru": cmp.gru.final_loss,
        "final_loss_tanh": cmp.tanh.final_loss,
        "ratio": cmp.ratio,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "final_loss_gru={:.6e} final_loss_tanh={:.6e} ratio={:.4} out_dir={}",
        cmp.gru.final_loss,
        cmp.tanh.final_loss,
        cmp.ratio,
        dir.display()
    );
    Ok(())
}

/// Where `train-motion` keeps a copy of the raw training frames.
fn training_csv_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into());
    checkpoint.with_file_name(format!("{stem}.train.csv"))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train_motion(a: &MotionArgs) -> CliResult {
    let raw = match (&a.input_csv, a.synthetic) {
        (Some(_), true) | (None, false) => {
            return Err(CliError::Usage("give exactly one of --input-csv or --synthetic".into()));
        }
        (Some(path), false) => motion::load_csv(path).context(|| "loading motion data".into())?,
        (None, true) => motion::synthesize_benchmark_motion(a.frames, a.features, &mut Rng::new(a.seed))
            .map_err(|e| CliError::Usage(e.to_string()))?,
    };
    let cfg = build_config(TrainConfig::motion(), &a.optim, a.hidden, a.seed)?;
    banner("train-motion", &cfg);
    eprintln!("data: {} frames x {} features", raw.n_frames(), raw.n_features());

    let stats = motion::fit_normalizer(&raw).context(|| "fitting normalizer".into())?;
    let normalized = motion::normalize(&raw, &stats).context(|| "normalizing".into())?;
    let seq = motion::next_frame_sequence(&normalized.frames).context(|| "building next-frame targets".into())?;
    let data = SeriesDataset::new(vec![seq]).context(|| "building dataset".into())?;
    let (params, report) = training::train(&data, &cfg).context(|| "training motion model".into())?;

    if let Some(dir) = a.checkpoint_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    persistence::save_checkpoint(&params, Some(&stats), cfg.seed, &a.checkpoint_out).context(|| "saving checkpoint".into())?;
    motion::write_csv(&training_csv_path(&a.checkpoint_out), &raw.frames, None).context(|| "writing training data copy".into())?;
    let report_path = a.checkpoint_out.with_extension("report.json");
    write_json(&report_path, &report_json(&report, a.optim.timing))?;
    println!(
        "final_loss={:.6e} dims={} checkpoint={} report={}",
        report.final_loss,
        params.dims(),
        a.checkpoint_out.display(),
        report_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GenerationSidecar<'a> {
    checkpoint: String,
    seed_source: String,
    seed_frames: usize,
    gen_len: usize,
    seed: u64,
    norm: Option<&'a NormStats>,
}

pub fn generate(a: &GenerateArgs) -> CliResult {
    let (params, norm) = persistence::load_checkpoint(&a.checkpoint).context(|| format!("loading {}", a.checkpoint.display()))?;
    let dims = params.dims();
    if dims.d_in != dims.d_out {
        return Err(CliError::Usage(format!("checkpoint model is not generative: d_in {} != d_out {}", dims.d_in, dims.d_out)));
    }
    if a.seed_frames == 0 || a.gen_len == 0 {
        return Err(CliError::Usage("seed-frames and gen-len must be >= 1".into()));
    }

    let source_path = match (&a.seed_csv, a.use_training_prefix) {
        (Some(p), false) => p.clone(),
        (None, true) => a.training_csv.clone().unwrap_or_else(|| training_csv_path(&a.checkpoint)),
        _ => return Err(CliError::Usage("give exactly one of --seed-csv or --use-training-prefix".into())),
    };
    let source = motion::read_matrix_csv(&source_path).context(|| "loading seed frames".into())?;
    if source.cols() != dims.d_in {
        return Err(CliError::Usage(format!(
            "{} has {} columns, checkpoint expects {}",
            source_path.display(),
            source.cols(),
            dims.d_in
        )));
    }
    if source.rows() < a.seed_frames {
        return Err(CliError::Usage(format!(
            "{} has {} rows, need at least --seed-frames {}",
            source_path.display(),
            source.rows(),
            a.seed_frames
        )));
    }
    let seed_raw = source.slice_rows(0, a.seed_frames).context(|| "slicing seed".into())?;
    let to_model = |m: &DenseMatrix| match &norm {
        Some(s) => s.normalize(m),
        None => Ok(m.clone()),
    };
    let from_model = |m: &DenseMatrix| match &norm {
        Some(s) => s.denormalize(m),
        None => Ok(m.clone()),
    };

    let seed = to_model(&seed_raw).context(|| "normalizing seed".into())?;
    let run = motion::seed_and_generate(&params, &seed, a.gen_len).context(|| "generating".into())?;
    let generated = from_model(&run.generated).context(|| "denormalizing output".into())?;

    if let Some(dir) = a.out_prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let csv_path = with_suffix(&a.out_prefix, ".csv");
    motion::write_csv(&csv_path, &generated, None).context(|| "writing generated frames".into())?;
    write_json(
        &with_suffix(&a.out_prefix, ".json"),
        &GenerationSidecar {
            checkpoint: a.checkpoint.display().to_string(),
            seed_source: source_path.display().to_string(),
            seed_frames: a.seed_frames,
            gen_len: a.gen_len,
            seed: a.seed,
            norm: norm.as_ref(),
        },
    )?;

    let seed_trace = motion::feature_average_trace(&seed_raw);
    let gen_trace = motion::feature_average_trace(&generated);
    let n_seed = seed_trace.len() as f64;
    // Join the generated line to the last seed frame so the two segments meet.
    let mut gen_points = vec![(n_seed - 1.0, *seed_trace.last().expect("seed_frames >= 1"))];
    gen_points.extend(gen_trace.iter().enumerate().map(|(i, &y)| (n_seed + i as f64, y)));
    let seeded_path = with_suffix(&a.out_prefix, "_seeded.svg");
    save_svg(
        &LineChart::new("Seeded generation: feature average", "frame", "mean over features")
            .with_series(Series::from_values("seed (real)", &seed_trace, 0.0, "blue"))
            .with_series(Series::new("generated", gen_points, "green").dashed()),
        &seeded_path,
    )?;

    // Reference: explicit file, or the rows following the seed in the source.
    let reference = match &a.reference_csv {
        Some(p) => Some(motion::read_matrix_csv(p).context(|| "loading reference".into())?),
        None if source.rows() > a.seed_frames => {
            let end = source.rows().min(a.seed_frames + a.gen_len);
            Some(source.slice_rows(a.seed_frames, end).context(|| "slicing reference".into())?)
        }
        None => None,
    };
    let mut written = vec![csv_path.display().to_string(), seeded_path.display().to_string()];
    if let Some(reference) = reference {
        if reference.cols() != generated.cols() {
            return Err(CliError::Usage(format!(
                "reference has {} columns, generated frames have {}",
                reference.cols(),
                generated.cols()
            )));
        }
        let path = with_suffix(&a.out_prefix, "_vs_reference.svg");
        save_svg(
            &LineChart::new("Generated vs real: feature average", "generated frame", "mean over features")
                .with_series(Series::from_values("real", &motion::feature_average_trace(&reference), 0.0, "black"))
                .with_series(Series::from_values("generated", &gen_trace, 0.0, "green").dashed()),
            &path,
        )?;
        written.push(path.display().to_string());
    }
    println!("generated {}x{} frames: {}", generated.rows(), generated.cols(), written.join(", "));
    Ok(())
}

fn read_header(path: &Path) -> CliResult<Option<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Lib {
        context: "reading CSV".into(),
        source: Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let first = text.lines().next().unwrap_or("");
    let cells: Vec<String> = first.split(',').map(|s| s.trim().to_string()).collect();
    Ok(cells.iter().any(|c| c.parse::<f64>().is_err()).then_some(cells))
}

pub fn plot(a: &PlotArgs) -> CliResult {
    let m = motion::read_matrix_csv(&a.csv).context(|| "loading CSV".into())?;
    let header = read_header(&a.csv)?;
    let names: Vec<String> = header.clone().unwrap_or_else(|| (0..m.cols()).map(|j| format!("col{j}")).collect());
    let selected: Vec<usize> = if a.columns.is_empty() {
        (0..m.cols()).collect()
    } else {
        a.columns
            .iter()
            .map(|c| {
                names
                    .iter()
                    .position(|n| n == c)
                    .or_else(|| c.parse::<usize>().ok().filter(|&j| j < m.cols()))
                    .ok_or_else(|| CliError::Usage(format!("unknown column {c:?}")))
            })
            .collect::<CliResult<_>>()?
    };
    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
    let mut chart = LineChart::new(a.title.clone(), "row", "value");
    if a.average {
        let sub = DenseMatrix::from_vec(
            m.rows(),
            selected.len(),
            (0..m.rows()).flat_map(|i| selected.iter().map(move |&j| (i, j))).map(|(i, j)| m[(i, j)]).collect(),
        )
        .context(|| "selecting columns".into())?;
        chart = chart.with_series(Series::from_values("average", &motion::feature_average_trace(&sub), 0.0, palette[0]));
    } else {
        for (k, &j) in selected.iter().enumerate() {
            chart = chart.with_series(Series::from_values(names[j].clone(), &m.column(j), 0.0, palette[k % palette.len()]));
        }
    }
    if a.log_y {
        chart = chart.log_y();
    }
    save_svg(&chart, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
