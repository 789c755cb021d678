//! File-based stages. Each reads its inputs from the output directory, writes
//! its artifacts there, and never depends on anything held in memory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use softsensor::delay::DelayProfile;
use softsensor::ec_model::{EcElmModel, Mode, PredictionTrace, TraceStep};
use softsensor::metrics::{
    abs_error_histogram, evaluate, read_metrics_csv, write_histogram_csv, write_metrics_csv, LabeledHistogram, MetricsRow,
};
use softsensor::pipeline::{
    self, align_split, estimate_delays, metrics_rows, predict_variant, render_report, select_features, train_variant,
    variant_inputs, PipelineConfig, PipelineError, Result, Tuning, Variant, STAGE_BASE, STAGE_CORRECTED,
};
use softsensor::select::FeatureSet;
use softsensor::synth::generate;
use softsensor::timeseries::{load_table, read_table, NormParams, TimeSeriesTable};

pub const DATA: &str = "data.csv";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const OUTLIERS: &str = "outliers.csv";
pub const NORM: &str = "norm.json";
pub const TRAIN: &str = "train.csv";
pub const TEST: &str = "test.csv";
pub const DELAYS_CSV: &str = "delays.csv";
pub const DELAYS_JSON: &str = "delays.json";
pub const RANKING_LASSO: &str = "ranking_lasso.csv";
pub const RANKING_RELIEFF: &str = "ranking_relieff.csv";
pub const FEATURE_SET_JSON: &str = "feature_set.json";
pub const FEATURE_SET_CSV: &str = "feature_set.csv";
pub const SELECTION_REPORT: &str = "selection_report.txt";
pub const METRICS: &str = "metrics.csv";
pub const HISTOGRAM: &str = "abs_error_hist.csv";
pub const REPORT: &str = "report.txt";

pub fn model_file(v: Variant) -> String {
    format!("model_{}.json", v.as_str())
}

pub fn tuning_file(v: Variant) -> String {
    format!("tuning_{}.json", v.as_str())
}

pub fn trace_file(v: Variant) -> String {
    format!("trace_{}.csv", v.as_str())
}

/// Resolved configuration plus the variant list for this invocation.
pub struct Context {
    pub cfg: PipelineConfig,
    pub variants: Vec<Variant>,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn input(&self, name: &str) -> Result<PathBuf> {
        let path = self.out(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(PipelineError::MissingArtifact(path))
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        fs::create_dir_all(&self.cfg.out_dir)?;
        Ok(BufWriter::new(File::create(self.out(name))?))
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        Ok(serde_json::from_reader(BufReader::new(File::open(self.input(name)?)?))?)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        fs::create_dir_all(&self.cfg.out_dir)?;
        fs::write(self.out(name), text)?;
        Ok(())
    }

    fn table(&self, name: &str) -> Result<TimeSeriesTable> {
        Ok(load_table(self.input(name)?, &[], &self.cfg.target)?)
    }

    fn splits(&self) -> Result<(TimeSeriesTable, TimeSeriesTable)> {
        Ok((self.table(TRAIN)?, self.table(TEST)?))
    }
}

pub fn simulate(ctx: &Context) -> Result<()> {
    let mut scenario = ctx.cfg.simulate.clone();
    scenario.target_tag = ctx.cfg.target.clone();
    let (table, truth) = generate(&scenario)?;
    let mut w = ctx.create(DATA)?;
    table.write_csv(&mut w)?;
    w.flush()?;
    let mut w = ctx.create(GROUND_TRUTH)?;
    truth.to_writer(&mut w)?;
    w.flush()?;
    log::info!("simulated {} rows x {} inputs", table.len(), table.input_tags().len());
    Ok(())
}

pub fn preprocess(ctx: &Context, input: Option<&Path>) -> Result<()> {
    let path = match input.map(Path::to_path_buf).or_else(|| ctx.cfg.input.clone()) {
        Some(p) if p.is_file() => p,
        Some(p) => return Err(PipelineError::MissingArtifact(p)),
        None => ctx.input(DATA)?,
    };
    let raw = read_table(BufReader::new(File::open(&path)?), &[], &ctx.cfg.target)?;
    let prepared = pipeline::prepare(&raw, &ctx.cfg)?;
    let mut w = ctx.create(OUTLIERS)?;
    prepared.outliers.write_csv(&mut w)?;
    w.flush()?;
    ctx.write_json(NORM, &prepared.norm)?;
    for (name, table) in [(TRAIN, &prepared.train), (TEST, &prepared.test)] {
        let mut w = ctx.create(name)?;
        table.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn delays(ctx: &Context) -> Result<()> {
    let train = ctx.table(TRAIN)?;
    let profile = estimate_delays(&train, &ctx.cfg.delay, ctx.cfg.seed)?;
    let mut w = ctx.create(DELAYS_CSV)?;
    profile.write_csv(&mut w)?;
    w.flush()?;
    ctx.write_json(DELAYS_JSON, &profile)
}

pub fn select(ctx: &Context) -> Result<()> {
    let (train, test) = ctx.splits()?;
    let norm: NormParams = ctx.read_json(NORM)?;
    let profile: DelayProfile = ctx.read_json(DELAYS_JSON)?;
    let aligned = align_split(&train, &test, &profile)?;
    let selection = select_features(&aligned.train, &norm, &ctx.cfg)?;
    for (name, ranking) in [(RANKING_LASSO, &selection.lasso), (RANKING_RELIEFF, &selection.relieff)] {
        let mut w = ctx.create(name)?;
        ranking.write_csv(&mut w)?;
        w.flush()?;
    }
    ctx.write_json(FEATURE_SET_JSON, &selection.feature_set)?;
    let mut w = ctx.create(FEATURE_SET_CSV)?;
    selection.feature_set.write_csv(&mut w)?;
    w.flush()?;
    ctx.write_text(SELECTION_REPORT, &selection.feature_set.report())
}

pub fn train(ctx: &Context) -> Result<()> {
    let (train, test) = ctx.splits()?;
    let norm: NormParams = ctx.read_json(NORM)?;
    let profile: DelayProfile = ctx.read_json(DELAYS_JSON)?;
    let feature_set: FeatureSet = ctx.read_json(FEATURE_SET_JSON)?;
    let all_tags = train.input_tags();
    for &v in &ctx.variants {
        let (p, fs) = variant_inputs(v, &all_tags, &profile, &feature_set);
        let (model, tuning): (EcElmModel, Tuning) = train_variant(&train, &test, &norm, p, fs, &ctx.cfg)?;
        let mut w = ctx.create(&model_file(v))?;
        model.to_writer(&mut w)?;
        w.flush()?;
        ctx.write_json(&tuning_file(v), &tuning)?;
        log::info!("trained {}: hidden {}, ridge {:e}", v.as_str(), tuning.hidden, tuning.ridge);
    }
    Ok(())
}

pub fn predict(ctx: &Context) -> Result<()> {
    let (train, test) = ctx.splits()?;
    for &v in &ctx.variants {
        let model = EcElmModel::from_reader(BufReader::new(File::open(ctx.input(&model_file(v))?)?))?;
        let trace: PredictionTrace = predict_variant(&model, &train, &test, ctx.cfg.ec.mode)?;
        let mut w = ctx.create(&trace_file(v))?;
        trace.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn measured(steps: &[TraceStep], path: &Path) -> Result<Vec<f64>> {
    steps
        .iter()
        .map(|s| s.y_measured)
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| PipelineError::Config(format!("{}: trace lacks measured values", path.display())))
}

pub fn evaluate_traces(ctx: &Context) -> Result<()> {
    let mut reports = Vec::new();
    let mut hists = Vec::new();
    let width = ctx.cfg.report.histogram_bin_width;
    for &v in &ctx.variants {
        let path = ctx.input(&trace_file(v))?;
        let steps = PredictionTrace::read_steps(BufReader::new(File::open(&path)?))?;
        let y = measured(&steps, &path)?;
        let initial: Vec<f64> = steps.iter().map(|s| s.y_initial).collect();
        let corrected: Vec<f64> = steps.iter().map(|s| s.y_final).collect();
        reports.push((v, evaluate(&y, &initial)?, evaluate(&y, &corrected)?));
        for (stage, pred) in [(STAGE_BASE, &initial), (STAGE_CORRECTED, &corrected)] {
            hists.push(LabeledHistogram {
                model: v.as_str().to_string(),
                stage: stage.to_string(),
                bins: abs_error_histogram(&y, pred, width)?,
            });
        }
    }
    let rows = metrics_rows(&ctx.cfg.report.dataset, reports);
    let mut w = ctx.create(METRICS)?;
    write_metrics_csv(&rows, &mut w)?;
    w.flush()?;
    let mut w = ctx.create(HISTOGRAM)?;
    write_histogram_csv(&hists, width, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Metrics of one predicted column against one measured column; returns the
/// CSV text (header plus one row).
pub fn evaluate_files(ctx: &Context, measured: &Path, predicted: &Path, column: Option<&str>) -> Result<String> {
    let column = column.unwrap_or(&ctx.cfg.target).to_string();
    let load = |p: &Path| -> Result<Vec<f64>> {
        if !p.is_file() {
            return Err(PipelineError::MissingArtifact(p.to_path_buf()));
        }
        Ok(load_table(p, &[], &column)?.target().to_vec())
    };
    let report = evaluate(&load(measured)?, &load(predicted)?)?;
    let row = MetricsRow { dataset: ctx.cfg.report.dataset.clone(), model: "file".into(), stage: column, report };
    let mut buf = Vec::new();
    write_metrics_csv(&[row], &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn report(ctx: &Context) -> Result<String> {
    let rows = read_metrics_csv(BufReader::new(File::open(ctx.input(METRICS)?)?))?;
    let text = render_report(&rows);
    ctx.write_text(REPORT, &text)?;
    Ok(text)
}

pub fn run_all(ctx: &Context, input: Option<&Path>) -> Result<String> {
    if input.is_none() && ctx.cfg.input.is_none() && !ctx.out(DATA).is_file() {
        simulate(ctx)?;
    }
    preprocess(ctx, input)?;
    delays(ctx)?;
    select(ctx)?;
    train(ctx)?;
    predict(ctx)?;
    evaluate_traces(ctx)?;
    report(ctx)
}

pub fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "measured" | "measured_feedback" => Ok(Mode::MeasuredFeedback),
        "recursive" => Ok(Mode::Recursive),
        other => Err(format!("unknown mode {other:?}; expected measured or recursive")),
    }
}

pub fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}; expected full, no_delay or no_selection"))
}
