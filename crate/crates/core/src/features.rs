//! Tweet ingestion and text features.
//!
//! A [`TweetRecord`] carries the tweet text, the author's profile fields and
//! the `place` description Twitter attaches to geo-tagged tweets. The five
//! [`FeatureSet`] compositions join those fields into single strings. Each
//! feature is encoded separately; the key and minor features of a tweet are
//! never concatenated.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, GeoError, Result};
use crate::geo::GeoPoint;

/// Token placed between the fields of a composed feature.
pub const FIELD_SEPARATOR: &str = "⟂";

/// Default token cap of the encoder.
pub const MAX_TOKENS: usize = 512;

/// More than this many posts on one UTC day marks a user as a bot.
pub const BOT_DAILY_LIMIT: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: Option<i64>,
    pub text: String,
    pub user_location: Option<String>,
    pub user_description: Option<String>,
    pub user_name: Option<String>,
    pub user_screen_name: Option<String>,
    pub place_country: Option<String>,
    pub place_type: Option<String>,
    pub place_location: Option<String>,
    pub place_name: Option<String>,
    pub place_full_name: Option<String>,
    pub label: Option<GeoPoint>,
}

impl TweetRecord {
    pub fn user_fields(&self) -> [&str; 4] {
        [
            opt(&self.user_location),
            opt(&self.user_description),
            opt(&self.user_name),
            opt(&self.user_screen_name),
        ]
    }

    pub fn place_fields(&self) -> [&str; 5] {
        [
            opt(&self.place_country),
            opt(&self.place_type),
            opt(&self.place_location),
            opt(&self.place_name),
            opt(&self.place_full_name),
        ]
    }

    pub fn has_place(&self) -> bool {
        self.place_fields().iter().any(|f| !f.trim().is_empty())
    }

    /// Applies [`clean_text`] to every free-text field.
    pub fn cleaned(&self) -> TweetRecord {
        let c = |f: &Option<String>| f.as_deref().map(clean_text);
        TweetRecord {
            text: clean_text(&self.text),
            user_location: c(&self.user_location),
            user_description: c(&self.user_description),
            user_name: c(&self.user_name),
            user_screen_name: c(&self.user_screen_name),
            place_country: c(&self.place_country),
            place_type: c(&self.place_type),
            place_location: c(&self.place_location),
            place_name: c(&self.place_name),
            place_full_name: c(&self.place_full_name),
            ..self.clone()
        }
    }
}

fn opt(f: &Option<String>) -> &str {
    f.as_deref().unwrap_or("")
}

/// Which record fields make up a text feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureSet {
    TextOnly,
    UserOnly,
    GeoOnly,
    NonGeo,
    All,
}

impl FeatureSet {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::TextOnly => "TEXT_ONLY",
            FeatureSet::UserOnly => "USER_ONLY",
            FeatureSet::GeoOnly => "GEO_ONLY",
            FeatureSet::NonGeo => "NON_GEO",
            FeatureSet::All => "ALL",
        }
    }

    /// Whether the feature reads `place` metadata.
    pub fn uses_place(self) -> bool {
        matches!(self, FeatureSet::GeoOnly | FeatureSet::All)
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSet {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "TEXT_ONLY" | "TO" => Ok(FeatureSet::TextOnly),
            "USER_ONLY" | "UO" => Ok(FeatureSet::UserOnly),
            "GEO_ONLY" | "GO" => Ok(FeatureSet::GeoOnly),
            "NON_GEO" | "NG" => Ok(FeatureSet::NonGeo),
            "ALL" | "A" => Ok(FeatureSet::All),
            other => invalid(format!("unknown feature set {other:?}")),
        }
    }
}

/// Joins the feature's fields in table order: text, then user location,
/// description, name, screen name, then place country, type, location,
/// name, full name.
///
/// Fields are trimmed and separated by ` ⟂ `; an empty field still takes
/// its slot (`"a ⟂ ⟂ b"`), so the string splits back into fields with
/// [`split_feature`]. A feature whose fields are all empty is `""`.
pub fn compose_feature(record: &TweetRecord, fs: FeatureSet) -> String {
    let text = [record.text.as_str()];
    let user = record.user_fields();
    let place = record.place_fields();
    let fields: Vec<&str> = match fs {
        FeatureSet::TextOnly => text.to_vec(),
        FeatureSet::UserOnly => user.to_vec(),
        FeatureSet::GeoOnly => place.to_vec(),
        FeatureSet::NonGeo => text.iter().chain(&user).copied().collect(),
        FeatureSet::All => text.iter().chain(&user).chain(&place).copied().collect(),
    };
    join_fields(&fields)
}

fn join_fields(fields: &[&str]) -> String {
    if fields.iter().all(|f| f.trim().is_empty()) {
        return String::new();
    }
    let mut parts: Vec<&str> = Vec::with_capacity(fields.len() * 2);
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            parts.push(FIELD_SEPARATOR);
        }
        let f = f.trim();
        if !f.is_empty() {
            parts.push(f);
        }
    }
    parts.join(" ")
}

/// Inverse of [`compose_feature`] for field contents without the separator.
pub fn split_feature(composed: &str) -> Vec<String> {
    if composed.is_empty() {
        return Vec::new();
    }
    composed.split(FIELD_SEPARATOR).map(|f| f.trim().to_string()).collect()
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c, '\u{2010}'..='\u{2027}' | '\u{3001}'..='\u{3003}' | '\u{FF01}'..='\u{FF0F}' | '¡' | '¿')
}

fn is_url(token: &str) -> bool {
    let lower = token.to_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Removes URL tokens, collapses runs of three or more identical
/// punctuation characters to one, and normalizes whitespace.
pub fn clean_text(s: &str) -> String {
    let kept: Vec<&str> = s.split_whitespace().filter(|t| !is_url(t)).collect();
    let joined = kept.join(" ");

    let chars: Vec<char> = joined.chars().collect();
    let mut out = String::with_capacity(joined.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let mut run = 1;
        while i + run < chars.len() && chars[i + run] == c {
            run += 1;
        }
        if is_punct(c) && run >= 3 {
            out.push(c);
        } else {
            out.extend(std::iter::repeat_n(c, run));
        }
        i += run;
    }
    out
}

/// Drops every record of any user who posted more than
/// [`BOT_DAILY_LIMIT`] times on a single UTC calendar day. Records without a
/// timestamp count toward no day. Order is preserved.
pub fn filter_bots(records: Vec<TweetRecord>) -> Vec<TweetRecord> {
    let mut per_day: HashMap<(&str, i64), usize> = HashMap::new();
    for r in &records {
        if let Some(ts) = r.timestamp {
            *per_day.entry((r.user_id.as_str(), ts.div_euclid(86_400))).or_default() += 1;
        }
    }
    let bots: HashSet<String> = per_day
        .into_iter()
        .filter(|(_, n)| *n > BOT_DAILY_LIMIT)
        .map(|((user, _), _)| user.to_string())
        .collect();
    records.into_iter().filter(|r| !bots.contains(&r.user_id)).collect()
}

/// Fixed-length finite embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("embedding has no values");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("embedding contains non-finite values");
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let na = self.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = other.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Lowercased tokens split on whitespace and non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

// splitmix64 finalizer; decorrelates the sign bit from the bucket index
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic hashed bag-of-tokens encoder.
///
/// Each of the first `max_tokens` tokens hashes to a bucket and a sign; the
/// signed counts are L2-normalized. Empty text encodes to the zero vector.
pub fn encode_stub(text: &str, dim: usize, seed: u64, max_tokens: usize) -> Result<EmbeddingVector> {
    if dim < 8 {
        return invalid(format!("encoder dim must be at least 8, got {dim}"));
    }
    let tokens = tokenize(text);
    if tokens.len() > max_tokens {
        log::warn!("input has {} tokens, truncated to {max_tokens}", tokens.len());
    }
    let mut values = vec![0.0; dim];
    for token in tokens.iter().take(max_tokens) {
        let h = fnv1a(seed, token.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if mix(h) >> 63 == 1 { -1.0 } else { 1.0 };
        values[bucket] += sign;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(EmbeddingVector(values))
}

/// What a loaded record will be used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Records must be labeled.
    Train,
    /// Records must be labeled.
    Eval,
    /// Labels are optional.
    Predict,
}

impl LoadMode {
    fn needs_label(self) -> bool {
        matches!(self, LoadMode::Train | LoadMode::Eval)
    }
}

#[derive(Debug, Deserialize, Serialize, Default)]
struct RawUser {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    screen_name: Option<String>,
}

#[derive(Debug, Deserialize, Serialize, Default)]
struct RawPlace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    place_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    full_name: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawCoordinates {
    lon: f64,
    lat: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawTweet {
    #[serde(default)]
    tweet_id: Option<Value>,
    #[serde(default)]
    user_id: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user: Option<RawUser>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    place: Option<RawPlace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coordinates: Option<RawCoordinates>,
}

fn id_string(v: Option<Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses ISO-8601 / RFC 3339 timestamps, and Twitter's legacy
/// `Wed Oct 10 20:19:24 +0000 2018` form.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    DateTime::parse_from_rfc3339(s)
        .or_else(|_| DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y"))
        .ok()
        .map(|d| d.with_timezone(&Utc).timestamp())
}

fn format_timestamp(ts: i64) -> Option<String> {
    DateTime::<Utc>::from_timestamp(ts, 0).map(|d| d.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

/// Why a line was skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Skip {
    Malformed,
    Unlabeled,
}

fn parse_record(line: &str, mode: LoadMode) -> std::result::Result<TweetRecord, (Skip, String)> {
    let raw: RawTweet = serde_json::from_str(line).map_err(|e| (Skip::Malformed, format!("invalid JSON: {e}")))?;
    let text = raw.text.unwrap_or_default();
    if text.trim().is_empty() {
        return Err((Skip::Malformed, "missing or empty \"text\"".into()));
    }
    let label = match raw.coordinates {
        Some(c) => Some(GeoPoint::new(c.lon, c.lat).map_err(|e| (Skip::Malformed, format!("bad coordinates: {e}")))?),
        None if mode.needs_label() => return Err((Skip::Unlabeled, "missing \"coordinates\"".into())),
        None => None,
    };
    let timestamp = match raw.created_at {
        Some(s) => Some(parse_timestamp(&s).ok_or((Skip::Malformed, format!("unparseable created_at {s:?}")))?),
        None => None,
    };
    let user = raw.user.unwrap_or_default();
    let place = raw.place.unwrap_or_default();
    Ok(TweetRecord {
        tweet_id: id_string(raw.tweet_id).unwrap_or_default(),
        user_id: id_string(raw.user_id).unwrap_or_default(),
        timestamp,
        text,
        user_location: user.location,
        user_description: user.description,
        user_name: user.name,
        user_screen_name: user.screen_name,
        place_country: place.country,
        place_type: place.place_type,
        place_location: place.location,
        place_name: place.name,
        place_full_name: place.full_name,
        label,
    })
}

/// Serializes a record in the JSONL schema [`TweetReader`] reads.
pub fn record_to_json(record: &TweetRecord) -> String {
    let user = RawUser {
        location: record.user_location.clone(),
        description: record.user_description.clone(),
        name: record.user_name.clone(),
        screen_name: record.user_screen_name.clone(),
    };
    let place = RawPlace {
        country: record.place_country.clone(),
        place_type: record.place_type.clone(),
        location: record.place_location.clone(),
        name: record.place_name.clone(),
        full_name: record.place_full_name.clone(),
    };
    let raw = RawTweet {
        tweet_id: Some(Value::String(record.tweet_id.clone())),
        user_id: Some(Value::String(record.user_id.clone())),
        created_at: record.timestamp.and_then(format_timestamp),
        text: Some(record.text.clone()),
        user: Some(user),
        place: record.has_place().then_some(place),
        coordinates: record.label.map(|p| RawCoordinates { lon: p.lon, lat: p.lat }),
    };
    serde_json::to_string(&raw).expect("tweet records always serialize")
}

/// Counters collected while reading a JSONL stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestStats {
    /// Non-blank lines seen.
    pub lines: usize,
    pub records: usize,
    pub malformed: usize,
    pub unlabeled: usize,
    /// The first few skip reasons, with line numbers.
    pub diagnostics: Vec<String>,
}

const MAX_DIAGNOSTICS: usize = 20;
const MAX_MALFORMED_FRACTION: f64 = 0.10;

impl IngestStats {
    /// Fails when more than 10% of non-blank lines were malformed.
    pub fn check(&self) -> Result<()> {
        if self.lines > 0 && self.malformed as f64 > MAX_MALFORMED_FRACTION * self.lines as f64 {
            return Err(GeoError::Data(format!(
                "{} of {} lines malformed (limit 10%); first problems: {}",
                self.malformed,
                self.lines,
                self.diagnostics.join("; ")
            )));
        }
        Ok(())
    }
}

/// Streaming reader over tweet JSONL. Malformed and (in train/eval mode)
/// unlabeled lines are skipped and counted; only I/O failures surface as
/// errors.
pub struct TweetReader<R> {
    lines: std::io::Lines<R>,
    mode: LoadMode,
    line_no: usize,
    stats: IngestStats,
}

impl<R: BufRead> TweetReader<R> {
    pub fn new(reader: R, mode: LoadMode) -> Self {
        Self { lines: reader.lines(), mode, line_no: 0, stats: IngestStats::default() }
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn into_stats(self) -> IngestStats {
        self.stats
    }
}

impl<R: BufRead> Iterator for TweetReader<R> {
    type Item = Result<TweetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            self.stats.lines += 1;
            match parse_record(&line, self.mode) {
                Ok(r) => {
                    self.stats.records += 1;
                    return Some(Ok(r));
                }
                Err((kind, reason)) => {
                    match kind {
                        Skip::Malformed => self.stats.malformed += 1,
                        Skip::Unlabeled => self.stats.unlabeled += 1,
                    }
                    log::debug!("line {}: {reason}", self.line_no);
                    if self.stats.diagnostics.len() < MAX_DIAGNOSTICS {
                        self.stats.diagnostics.push(format!("line {}: {reason}", self.line_no));
                    }
                }
            }
        }
    }
}

/// Reads a whole tweet JSONL file.
pub fn load_jsonl(path: impl AsRef<Path>, mode: LoadMode) -> Result<(Vec<TweetRecord>, IngestStats)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GeoError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    read_jsonl(BufReader::new(file), mode)
}

pub fn read_jsonl<R: BufRead>(reader: R, mode: LoadMode) -> Result<(Vec<TweetRecord>, IngestStats)> {
    let mut it = TweetReader::new(reader, mode);
    let records = it.by_ref().collect::<Result<Vec<_>>>()?;
    let stats = it.into_stats();
    stats.check()?;
    Ok((records, stats))
}

/// First line of an embedding file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub dim: usize,
    pub count: usize,
    #[serde(default)]
    pub provenance: String,
}

/// Embeddings keyed by tweet id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub header: EmbeddingHeader,
    pub rows: Vec<(String, EmbeddingVector)>,
}

impl EmbeddingTable {
    pub fn by_id(&self) -> HashMap<&str, &EmbeddingVector> {
        self.rows.iter().map(|(id, v)| (id.as_str(), v)).collect()
    }
}

/// Writes `{"dim","count","provenance"}` then `tweet_id,v_1,...,v_dim`
/// rows. Values use the shortest decimal that parses back to the same
/// `f64`, so a write/read cycle is bit-exact.
pub fn write_embeddings<W: Write>(mut out: W, header: &EmbeddingHeader, rows: &[(String, EmbeddingVector)]) -> Result<()> {
    if header.count != rows.len() {
        return invalid(format!("header count {} but {} rows", header.count, rows.len()));
    }
    writeln!(out, "{}", serde_json::to_string(header).expect("header serializes"))?;
    for (id, v) in rows {
        if id.contains(',') || id.contains('\n') {
            return invalid(format!("tweet id {id:?} contains a comma or newline"));
        }
        if v.dim() != header.dim {
            return invalid(format!("embedding for {id} has dim {}, header says {}", v.dim(), header.dim));
        }
        write!(out, "{id}")?;
        for x in v.values() {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingTable> {
    let mut lines = reader.lines();
    let first = lines.next().ok_or_else(|| GeoError::Data("embedding file is empty".into()))??;
    let header: EmbeddingHeader =
        serde_json::from_str(&first).map_err(|e| GeoError::Data(format!("line 1: bad embedding header: {e}")))?;
    if header.dim == 0 {
        return Err(GeoError::Data("line 1: embedding dim must be positive".into()));
    }
    let mut rows = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id = parts.next().unwrap_or_default().to_string();
        let values = parts
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| GeoError::Data(format!("line {line_no}: bad float: {e}")))?;
        if values.len() != header.dim {
            return Err(GeoError::Data(format!(
                "line {line_no}: embedding has {} values, header says dim {}",
                values.len(),
                header.dim
            )));
        }
        let v = EmbeddingVector::new(values).map_err(|e| GeoError::Data(format!("line {line_no}: {e}")))?;
        rows.push((id, v));
    }
    if rows.len() != header.count {
        return Err(GeoError::Data(format!("header count {} but {} rows", header.count, rows.len())));
    }
    Ok(EmbeddingTable { header, rows })
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    read_embeddings(BufReader::new(File::open(path)?))
}
