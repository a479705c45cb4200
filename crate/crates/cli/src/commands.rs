//! Subcommand implementations.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use geohead::features::{
    compose_feature, encode_stub, filter_bots, load_embeddings, load_jsonl, record_to_json, write_embeddings,
    EmbeddingHeader, FeatureSet, IngestStats, LoadMode, TweetReader, TweetRecord,
};
use geohead::gmm::{gmm_density, GaussianPeak, Prediction};
use geohead::head::{load_checkpoint, save_checkpoint, EncoderSpec, ModelBundle, TrainReport, TrainSample};
use geohead::metrics::{format_table, MetricsAccumulator, MetricsReport};
use geohead::useragg::estimate_user_with_grid;
use geohead::{GeoPoint, GmmPrediction};

use crate::config::{GroupBy, RunConfig};
use crate::error::CliError;

/// Inputs whose density grids are written by `--plot`.
const PLOT_LIMIT: usize = 10;
const DENSITY_STEP_DEG: f64 = 2.0;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json_file(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn report_ingest(what: &str, stats: &IngestStats) {
    log::info!("{what}: {} records from {} lines", stats.records, stats.lines);
    if stats.malformed > 0 || stats.unlabeled > 0 {
        log::warn!(
            "{what}: skipped {} malformed and {} unlabeled lines; first problems: {}",
            stats.malformed,
            stats.unlabeled,
            stats.diagnostics.join("; ")
        );
    }
}

/// Embedding dim, provenance and rows by tweet id.
type EmbeddingFile = (usize, String, HashMap<String, Vec<f64>>);

fn embedding_values(path: &Path) -> Result<EmbeddingFile, CliError> {
    let table = load_embeddings(path)?;
    let dim = table.header.dim;
    let provenance = table.header.provenance.clone();
    let rows = table.rows.into_iter().map(|(id, v)| (id, v.into_values())).collect();
    Ok((dim, provenance, rows))
}

/// Where key-feature embeddings come from at evaluation and prediction time.
enum KeySource<'a> {
    Encoder(&'a EncoderSpec),
    Table(HashMap<String, Vec<f64>>),
}

impl<'a> KeySource<'a> {
    fn new(bundle: &'a ModelBundle, embeddings: Option<&Path>) -> Result<Self, CliError> {
        match (embeddings, &bundle.encoder) {
            (Some(p), _) => {
                let (dim, _, rows) = embedding_values(p)?;
                if dim != bundle.config.embedding_dim {
                    return Err(CliError::Data(format!(
                        "embeddings in {} have dim {dim}, model expects {}",
                        p.display(),
                        bundle.config.embedding_dim
                    )));
                }
                Ok(KeySource::Table(rows))
            }
            (None, EncoderSpec::Imported { provenance, .. }) => Err(CliError::Usage(format!(
                "model was trained on imported embeddings ({provenance}); pass --embeddings"
            ))),
            (None, encoder) => Ok(KeySource::Encoder(encoder)),
        }
    }

    /// Embedding for a record, or the reason it has none.
    fn embed(&self, record: &TweetRecord, feature: FeatureSet) -> Result<Result<Vec<f64>, String>, CliError> {
        match self {
            KeySource::Table(rows) => {
                Ok(rows.get(&record.tweet_id).cloned().ok_or_else(|| format!("no embedding for {}", record.tweet_id)))
            }
            KeySource::Encoder(encoder) => {
                let text = compose_feature(record, feature);
                if text.trim().is_empty() {
                    return Ok(Err(format!("{} has an empty {feature} feature", record.tweet_id)));
                }
                Ok(Ok(encoder.encode(&text)?))
            }
        }
    }
}

fn group_key(record: &TweetRecord, by: GroupBy) -> Option<String> {
    let or_unknown = |f: &Option<String>| f.clone().filter(|s| !s.is_empty()).unwrap_or_else(|| "unknown".into());
    match by {
        GroupBy::None => None,
        GroupBy::Country => Some(or_unknown(&record.place_country)),
        GroupBy::Place => Some(or_unknown(&record.place_full_name)),
        GroupBy::User => Some(record.user_id.clone()),
    }
}

fn model_summary(bundle: &ModelBundle) -> Value {
    json!({
        "kind": bundle.config.kind,
        "outcomes": bundle.config.outcomes,
        "embedding_dim": bundle.config.embedding_dim,
        "key_feature": bundle.key_feature,
        "minor_features": bundle.minor_feature_sets,
        "encoder": bundle.encoder,
    })
}

fn model_label(bundle: &ModelBundle, feature: FeatureSet) -> String {
    let kind = bundle.config.kind;
    if kind.is_single() {
        format!("{kind} {feature}")
    } else {
        format!("{kind}-{} {feature}", bundle.config.outcomes)
    }
}

pub struct IngestPaths {
    pub input: PathBuf,
    pub output: PathBuf,
    pub embeddings: Option<PathBuf>,
}

pub fn ingest(cfg: &mut RunConfig, paths: IngestPaths, allow_unlabeled: bool, keep_bots: bool) -> Result<(), CliError> {
    cfg.record_path("input", &paths.input);
    cfg.record_path("output", &paths.output);
    if let Some(p) = &paths.embeddings {
        cfg.record_path("embeddings", p);
    }
    let mode = if allow_unlabeled { LoadMode::Predict } else { LoadMode::Train };
    let (records, stats) = load_jsonl(&paths.input, mode)?;
    report_ingest("ingest", &stats);

    let cleaned: Vec<TweetRecord> = records.iter().map(TweetRecord::cleaned).collect();
    let before = cleaned.len();
    let usable: Vec<TweetRecord> =
        cleaned.into_iter().filter(|r| !compose_feature(r, cfg.kf).trim().is_empty()).collect();
    let empty = before - usable.len();
    let kept = if keep_bots { usable.clone() } else { filter_bots(usable.clone()) };
    let bots_removed = usable.len() - kept.len();

    let mut out = create(&paths.output)?;
    for r in &kept {
        writeln!(out, "{}", record_to_json(r))?;
    }
    out.flush()?;

    if let Some(path) = &paths.embeddings {
        let rows = kept
            .iter()
            .map(|r| Ok((r.tweet_id.clone(), encode_stub(&compose_feature(r, cfg.kf), cfg.embedding_dim, cfg.seed, geohead::features::MAX_TOKENS)?)))
            .collect::<Result<Vec<_>, geohead::GeoError>>()?;
        let header = EmbeddingHeader {
            dim: cfg.embedding_dim,
            count: rows.len(),
            provenance: format!("hashing-stub seed={} feature={}", cfg.seed, cfg.kf),
        };
        let mut out = create(path)?;
        write_embeddings(&mut out, &header, &rows)?;
        out.flush()?;
    }

    let meta = json!({
        "config": cfg.to_json(),
        "ingest": stats,
        "empty_feature_dropped": empty,
        "bot_records_dropped": bots_removed,
        "written": kept.len(),
    });
    write_json_file(&sidecar(&paths.output, ".meta.json"), &meta)?;
    eprintln!(
        "ingest: wrote {} records ({} malformed, {} unlabeled, {} empty, {} bot records dropped)",
        kept.len(),
        stats.malformed,
        stats.unlabeled,
        empty,
        bots_removed
    );
    Ok(())
}

pub struct TrainPaths {
    pub input: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_log: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub minor_embeddings: Vec<PathBuf>,
}

pub fn train(cfg: &mut RunConfig, paths: TrainPaths) -> Result<(), CliError> {
    cfg.record_path("input", &paths.input);
    cfg.record_path("checkpoint", &paths.checkpoint);
    if let Some(p) = &paths.loss_log {
        cfg.record_path("loss_log", p);
    }
    if let Some(p) = &paths.embeddings {
        cfg.record_path("embeddings", p);
    }
    for (i, p) in paths.minor_embeddings.iter().enumerate() {
        cfg.record_path(&format!("minor_embeddings_{i}"), p);
    }
    if !paths.minor_embeddings.is_empty() {
        if paths.embeddings.is_none() {
            return Err(CliError::Usage("--minor-embeddings needs --embeddings for the key feature".into()));
        }
        if paths.minor_embeddings.len() != cfg.mf.len() {
            return Err(CliError::Usage(format!(
                "{} minor embedding files for {} minor features",
                paths.minor_embeddings.len(),
                cfg.mf.len()
            )));
        }
    }

    let (records, stats) = load_jsonl(&paths.input, LoadMode::Train)?;
    report_ingest("train", &stats);
    let records: Vec<TweetRecord> = records.iter().map(TweetRecord::cleaned).collect();
    if !records.iter().any(TweetRecord::has_place) {
        for fs in std::iter::once(&cfg.kf).chain(&cfg.mf) {
            if fs.uses_place() && paths.embeddings.is_none() {
                return Err(CliError::Usage(format!("feature {fs} reads place metadata, but no training record has any")));
            }
        }
    }

    let mut key_table = None;
    let mut minor_tables = Vec::new();
    let encoder = match &paths.embeddings {
        Some(p) => {
            let (dim, provenance, rows) = embedding_values(p)?;
            if dim != cfg.embedding_dim {
                log::warn!("using embedding dim {dim} from {} instead of {}", p.display(), cfg.embedding_dim);
                cfg.embedding_dim = dim;
            }
            for mp in &paths.minor_embeddings {
                let (mdim, _, mrows) = embedding_values(mp)?;
                if mdim != dim {
                    return Err(CliError::Data(format!("{} has dim {mdim}, key embeddings have {dim}", mp.display())));
                }
                minor_tables.push(mrows);
            }
            key_table = Some(rows);
            EncoderSpec::Imported { dim, provenance }
        }
        None => EncoderSpec::stub(cfg.embedding_dim, cfg.seed),
    };

    let mut samples = Vec::with_capacity(records.len());
    let mut skipped = 0usize;
    for r in &records {
        let label = r.label.expect("train mode yields labeled records");
        let key = match &key_table {
            Some(t) => t.get(&r.tweet_id).cloned(),
            None => {
                let text = compose_feature(r, cfg.kf);
                if text.trim().is_empty() {
                    None
                } else {
                    Some(encoder.encode(&text)?)
                }
            }
        };
        let Some(key) = key else {
            skipped += 1;
            continue;
        };
        let mut minor = Vec::with_capacity(cfg.mf.len());
        for (i, fs) in cfg.mf.iter().enumerate() {
            minor.push(match minor_tables.get(i) {
                Some(t) => t.get(&r.tweet_id).cloned(),
                None => {
                    let text = compose_feature(r, *fs);
                    if text.trim().is_empty() {
                        None
                    } else {
                        Some(encode_stub(&text, cfg.embedding_dim, cfg.seed, geohead::features::MAX_TOKENS)?.into_values())
                    }
                }
            });
        }
        samples.push(TrainSample { label, key, minor });
    }
    if skipped > 0 {
        log::warn!("train: {skipped} records had no key-feature input and were skipped");
    }
    if samples.is_empty() {
        return Err(CliError::Data("no usable training records".into()));
    }

    let (bundle, report) =
        geohead::head::train(&samples, &cfg.head_config(), encoder, cfg.kf, cfg.mf.clone(), &cfg.train_options())?;
    save_checkpoint(&bundle, &paths.checkpoint)?;
    if let Some(p) = &paths.loss_log {
        write_loss_log(p, cfg, &report)?;
    }
    for e in &report.epochs {
        eprintln!(
            "epoch {}: train loss {:.5}{}",
            e.epoch,
            e.train_loss,
            e.dev_median_sae_km.map(|m| format!(", dev median SAE {m:.1} km")).unwrap_or_default()
        );
    }
    let run = json!({
        "config": cfg.to_json(),
        "ingest": stats,
        "skipped_records": skipped,
        "train_samples": report.train_samples,
        "dev_samples": report.dev_samples,
        "epochs": report.epochs,
    });
    write_json_file(&sidecar(&paths.checkpoint, ".run.json"), &run)?;
    Ok(())
}

fn write_loss_log(path: &Path, cfg: &RunConfig, report: &TrainReport) -> Result<(), CliError> {
    let with_mf = !cfg.mf.is_empty();
    let with_prob = cfg.kind.is_probabilistic();
    let mut out = create(path)?;
    writeln!(out, "# config: {}", serde_json::to_string(&cfg.to_json())?)?;
    let mut header = vec!["step", "kf_spat"];
    if with_mf {
        header.push("mf_spat");
    }
    if with_prob {
        header.push("prob");
    }
    header.push("total");
    writeln!(out, "{}", header.join(","))?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &report.steps {
        let mut row = vec![s.step.to_string(), s.kf_spatial.to_string()];
        if with_mf {
            row.push(cell(s.mf_spatial));
        }
        if with_prob {
            row.push(cell(s.prob));
        }
        row.push(s.total.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn evaluate(
    cfg: &mut RunConfig,
    input: &Path,
    checkpoint: &Path,
    output_path: Option<&Path>,
    embeddings: Option<&Path>,
) -> Result<(), CliError> {
    cfg.record_path("input", input);
    cfg.record_path("checkpoint", checkpoint);
    if let Some(p) = output_path {
        cfg.record_path("output", p);
    }
    if let Some(p) = embeddings {
        cfg.record_path("embeddings", p);
    }
    let bundle = load_checkpoint(checkpoint)?;
    cfg.adopt_model(&bundle);
    let vf = cfg.eval_feature(bundle.key_feature)?;
    let source = KeySource::new(&bundle, embeddings)?;
    let (records, stats) = load_jsonl(input, LoadMode::Eval)?;
    report_ingest("evaluate", &stats);

    let opts = cfg.eval_options();
    let mut overall = MetricsAccumulator::new(opts)?;
    let mut groups: Vec<(String, MetricsAccumulator)> = Vec::new();
    let mut group_index: HashMap<String, usize> = HashMap::new();
    let mut skipped = Vec::new();
    let mut clamped = 0usize;
    for r in records.iter().map(TweetRecord::cleaned) {
        let embedding = match source.embed(&r, vf)? {
            Ok(e) => e,
            Err(reason) => {
                skipped.push(reason);
                continue;
            }
        };
        let (pred, moved) = bundle.predict_embedding(&embedding)?.clamped();
        clamped += moved;
        let label = r.label.expect("eval mode yields labeled records");
        overall.push(&r.tweet_id, &label, &pred)?;
        if let Some(g) = group_key(&r, cfg.group_by) {
            let idx = *group_index.entry(g.clone()).or_insert_with(|| {
                groups.push((g, MetricsAccumulator::new(opts).expect("alpha validated")));
                groups.len() - 1
            });
            groups[idx].1.push(&r.tweet_id, &label, &pred)?;
        }
    }
    if overall.is_empty() {
        return Err(CliError::Data(format!("no usable evaluation records; {}", skipped.join("; "))));
    }
    if !skipped.is_empty() {
        log::warn!("evaluate: skipped {} records; first: {}", skipped.len(), skipped[0]);
    }
    if clamped > 0 {
        log::warn!("evaluate: clamped {clamped} predicted points into coordinate ranges");
    }

    let mut rows: Vec<(String, MetricsReport)> = vec![(model_label(&bundle, vf), overall.finish()?)];
    for (g, acc) in groups {
        rows.push((g, acc.finish()?));
    }
    print!("{}", format_table(&rows));
    let report = json!({
        "config": cfg.to_json(),
        "model": model_summary(&bundle),
        "eval_feature": vf,
        "overall": rows[0].1,
        "groups": rows[1..].iter().map(|(g, r)| json!({"group": g, "metrics": r})).collect::<Vec<_>>(),
        "skipped_records": skipped.len(),
        "clamped_points": clamped,
        "ingest": stats,
    });
    if let Some(p) = output_path {
        write_json_file(p, &report)?;
    }
    Ok(())
}

fn peaks_json(pred: &Prediction) -> Value {
    match pred {
        Prediction::Mixture { mixture } => mixture
            .peaks()
            .iter()
            .map(|p| json!({"lon": p.mu.lon, "lat": p.mu.lat, "weight": p.weight, "sigma": p.sigma}))
            .collect(),
        Prediction::Points { points } => {
            points.iter().map(|w| json!({"lon": w.point.lon, "lat": w.point.lat, "weight": w.weight})).collect()
        }
    }
}

/// One predict input: a tweet object or raw text.
fn parse_input_line(line: &str, id: &str) -> Result<TweetRecord, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Err("empty input".into());
    }
    if trimmed.starts_with('{') {
        let mut reader = TweetReader::new(trimmed.as_bytes(), LoadMode::Predict);
        return match reader.next() {
            Some(Ok(r)) => Ok(r),
            Some(Err(e)) => Err(e.to_string()),
            None => Err(reader.stats().diagnostics.first().cloned().unwrap_or_else(|| "malformed record".into())),
        };
    }
    Ok(TweetRecord { tweet_id: id.to_string(), text: trimmed.to_string(), ..TweetRecord::default() })
}

struct PlotWriter {
    dir: PathBuf,
    peaks: BufWriter<File>,
    densities: usize,
}

impl PlotWriter {
    fn new(dir: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        let mut peaks = create(&dir.join("peaks.csv"))?;
        writeln!(peaks, "# config: {}", serde_json::to_string(&cfg.to_json())?)?;
        writeln!(peaks, "tweet_id,rank,lon,lat,weight,sigma")?;
        Ok(Self { dir: dir.to_path_buf(), peaks, densities: 0 })
    }

    fn add(&mut self, id: &str, pred: &Prediction) -> Result<(), CliError> {
        match pred {
            Prediction::Mixture { mixture } => {
                for (rank, p) in mixture.peaks().iter().enumerate() {
                    writeln!(self.peaks, "{id},{rank},{},{},{},{}", p.mu.lon, p.mu.lat, p.weight, p.sigma)?;
                }
                if self.densities < PLOT_LIMIT {
                    self.write_density(id, mixture)?;
                    self.densities += 1;
                }
            }
            Prediction::Points { points } => {
                for (rank, w) in points.iter().enumerate() {
                    writeln!(self.peaks, "{id},{rank},{},{},{},", w.point.lon, w.point.lat, w.weight)?;
                }
            }
        }
        Ok(())
    }

    fn write_density(&self, id: &str, mixture: &GmmPrediction) -> Result<(), CliError> {
        let mut out = create(&self.dir.join(format!("density_{:03}.csv", self.densities)))?;
        writeln!(out, "# tweet_id: {id}")?;
        writeln!(out, "lon,lat,density")?;
        let steps_lon = (360.0 / DENSITY_STEP_DEG) as usize;
        let steps_lat = (180.0 / DENSITY_STEP_DEG) as usize;
        for i in 0..=steps_lon {
            let lon = -180.0 + i as f64 * DENSITY_STEP_DEG;
            for j in 0..=steps_lat {
                let lat = -90.0 + j as f64 * DENSITY_STEP_DEG;
                writeln!(out, "{lon},{lat},{}", gmm_density(&GeoPoint::raw(lon, lat), mixture)?)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.peaks.flush()?;
        Ok(())
    }
}

pub fn predict(
    cfg: &mut RunConfig,
    checkpoint: &Path,
    input: Option<&Path>,
    texts: &[String],
    output_path: Option<&Path>,
    embeddings: Option<&Path>,
    plot: Option<&Path>,
) -> Result<(), CliError> {
    cfg.record_path("checkpoint", checkpoint);
    if let Some(p) = input {
        cfg.record_path("input", p);
    }
    if let Some(p) = output_path {
        cfg.record_path("output", p);
    }
    if let Some(p) = embeddings {
        cfg.record_path("embeddings", p);
    }
    if input.is_none() && texts.is_empty() {
        return Err(CliError::Usage("predict needs --input or at least one --text".into()));
    }
    let bundle = load_checkpoint(checkpoint)?;
    cfg.adopt_model(&bundle);
    let vf = cfg.eval_feature(bundle.key_feature)?;
    let source = KeySource::new(&bundle, embeddings)?;

    let mut lines: Vec<(String, String)> =
        texts.iter().enumerate().map(|(i, t)| (format!("text-{}", i + 1), t.clone())).collect();
    if let Some(p) = input {
        let file = File::open(p).map_err(|e| CliError::Data(format!("cannot open {}: {e}", p.display())))?;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            lines.push((format!("line-{}", n + 1), line?));
        }
    }

    let mut out = output(output_path)?;
    let mut plots = plot.map(|d| PlotWriter::new(d, cfg)).transpose()?;
    writeln!(out, "{}", json!({"record": "header", "config": cfg.to_json(), "model": model_summary(&bundle)}))?;
    let (mut ok, mut failed) = (0usize, 0usize);
    for (source_id, line) in &lines {
        let result = parse_input_line(line, source_id).and_then(|r| {
            let r = r.cleaned();
            source.embed(&r, vf).map_err(|e| e.to_string())?.map(|e| (r, e))
        });
        let record = match result {
            Ok((r, embedding)) => {
                let (pred, moved) = bundle.predict_embedding(&embedding)?.clamped();
                if let Some(p) = plots.as_mut() {
                    p.add(&r.tweet_id, &pred)?;
                }
                ok += 1;
                json!({
                    "record": "prediction",
                    "input": source_id,
                    "tweet_id": r.tweet_id,
                    "user_id": r.user_id,
                    "kind": bundle.config.kind,
                    "peaks": peaks_json(&pred),
                    "clamped_points": moved,
                })
            }
            Err(message) => {
                failed += 1;
                json!({"record": "error", "input": source_id, "message": message})
            }
        };
        writeln!(out, "{record}")?;
    }
    out.flush()?;
    if let Some(p) = plots {
        p.finish()?;
    }
    eprintln!("predict: {ok} predictions, {failed} errors");
    Ok(())
}

/// Parses a prediction record written by `predict` into a mixture.
fn mixture_from_record(value: &Value) -> Result<GmmPrediction, String> {
    let peaks = value.get("peaks").and_then(Value::as_array).ok_or("record has no peaks")?;
    let field = |p: &Value, k: &str| p.get(k).and_then(Value::as_f64).ok_or(format!("peak lacks {k}"));
    let peaks = peaks
        .iter()
        .map(|p| {
            let sigma = p
                .get("sigma")
                .and_then(Value::as_f64)
                .ok_or("peak lacks sigma; user location needs probabilistic predictions")?;
            let mu = GeoPoint::new(field(p, "lon")?, field(p, "lat")?).map_err(|e| e.to_string())?;
            Ok(GaussianPeak { mu, sigma, weight: field(p, "weight")? })
        })
        .collect::<Result<Vec<_>, String>>()?;
    GmmPrediction::new(peaks).map_err(|e| e.to_string())
}

struct UserTweets {
    user_id: String,
    mixtures: Vec<GmmPrediction>,
    problems: usize,
}

fn push_user(users: &mut Vec<UserTweets>, index: &mut HashMap<String, usize>, user: &str) -> usize {
    *index.entry(user.to_string()).or_insert_with(|| {
        users.push(UserTweets { user_id: user.to_string(), mixtures: Vec::new(), problems: 0 });
        users.len() - 1
    })
}

pub fn user_locate(
    cfg: &mut RunConfig,
    input: &Path,
    checkpoint: Option<&Path>,
    output_path: Option<&Path>,
    embeddings: Option<&Path>,
    plot: Option<&Path>,
) -> Result<(), CliError> {
    cfg.record_path("input", input);
    if let Some(p) = checkpoint {
        cfg.record_path("checkpoint", p);
    }
    if let Some(p) = output_path {
        cfg.record_path("output", p);
    }
    let mut users: Vec<UserTweets> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    match checkpoint {
        Some(ckpt) => {
            let bundle = load_checkpoint(ckpt)?;
            cfg.adopt_model(&bundle);
            if !bundle.config.kind.is_probabilistic() {
                return Err(CliError::Usage(format!("user location needs a probabilistic head, model is {}", bundle.config.kind)));
            }
            let vf = cfg.eval_feature(bundle.key_feature)?;
            let source = KeySource::new(&bundle, embeddings)?;
            let (records, stats) = load_jsonl(input, LoadMode::Predict)?;
            report_ingest("user-locate", &stats);
            for r in records.iter().map(TweetRecord::cleaned) {
                let u = push_user(&mut users, &mut index, &r.user_id);
                match source.embed(&r, vf)? {
                    Ok(e) => {
                        let (pred, _) = bundle.predict_embedding(&e)?.clamped();
                        users[u].mixtures.push(pred.mixture().expect("probabilistic head").clone());
                    }
                    Err(_) => users[u].problems += 1,
                }
            }
        }
        None => {
            let file = File::open(input).map_err(|e| CliError::Data(format!("cannot open {}: {e}", input.display())))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: Value = serde_json::from_str(&line)
                    .map_err(|e| CliError::Data(format!("{} line {}: {e}", input.display(), n + 1)))?;
                let user = value.get("user_id").and_then(Value::as_str).unwrap_or("");
                match value.get("record").and_then(Value::as_str) {
                    Some("prediction") => {
                        let u = push_user(&mut users, &mut index, user);
                        let mixture = mixture_from_record(&value)
                            .map_err(|e| CliError::Data(format!("{} line {}: {e}", input.display(), n + 1)))?;
                        users[u].mixtures.push(mixture);
                    }
                    Some("error") if !user.is_empty() => {
                        let u = push_user(&mut users, &mut index, user);
                        users[u].problems += 1;
                    }
                    _ => {}
                }
            }
        }
    }

    let mut out = output(output_path)?;
    writeln!(out, "{}", json!({"record": "header", "config": cfg.to_json()}))?;
    let mut grid_files = 0usize;
    let (mut located, mut skipped) = (0usize, 0usize);
    for user in &users {
        if user.mixtures.is_empty() {
            log::warn!("user {}: no usable tweets", user.user_id);
            skipped += 1;
            writeln!(out, "{}", json!({"record": "skipped", "user_id": user.user_id, "reason": "no usable tweets"}))?;
            continue;
        }
        match estimate_user_with_grid(&user.mixtures, cfg.top_k) {
            Ok((estimate, grid)) => {
                located += 1;
                let mut record = json!({
                    "record": "user",
                    "user_id": user.user_id,
                    "tweets": user.mixtures.len(),
                    "unusable_tweets": user.problems,
                    "points": estimate.points.iter().map(|p| json!({"lon": p.lon, "lat": p.lat})).collect::<Vec<_>>(),
                    "scores": estimate.scores,
                });
                if let Some(w) = &estimate.weights {
                    record["weights"] = json!(w);
                }
                writeln!(out, "{record}")?;
                if let Some(dir) = plot.filter(|_| grid_files < PLOT_LIMIT) {
                    let mut g = create(&dir.join(format!("grid_{grid_files:03}.csv")))?;
                    writeln!(g, "# user_id: {}", user.user_id)?;
                    writeln!(g, "lon,lat,score")?;
                    for (i, lon) in grid.lon_values.iter().enumerate() {
                        for (j, lat) in grid.lat_values.iter().enumerate() {
                            writeln!(g, "{lon},{lat},{}", grid.z[i][j])?;
                        }
                    }
                    g.flush()?;
                    grid_files += 1;
                }
            }
            Err(e) => {
                log::warn!("user {}: {e}", user.user_id);
                skipped += 1;
                writeln!(out, "{}", json!({"record": "skipped", "user_id": user.user_id, "reason": e.to_string()}))?;
            }
        }
    }
    out.flush()?;
    eprintln!("user-locate: {located} users located, {skipped} skipped");
    Ok(())
}
