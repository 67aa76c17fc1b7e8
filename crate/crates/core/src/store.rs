//! Append-only, partitioned time-series store.
//!
//! Layout: `<root>/<patient>/<YYYY-MM-DD>/<kind>.ndjson`, one record per line
//! as `<json>#<crc32 hex>`. Each partition keeps a `<kind>.batches` sidecar
//! listing the upload batch ids already applied to it. Lines failing their
//! checksum (torn writes) are skipped on read.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::domain::{ms_of_day, utc_date, SnapshotRef, Validate, ValidationError, VitalKind, VitalSample};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown patient {0}")]
    UnknownPatient(String),
    #[error("storage full")]
    StorageFull,
    #[error("corrupt partition {path}: {reason}")]
    CorruptPartition { path: PathBuf, reason: String },
    #[error("invalid batch: {0}")]
    Invalid(#[from] ValidationError),
    #[error("io: {0}")]
    Io(io::Error),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::StorageFull {
            StoreError::StorageFull
        } else {
            StoreError::Io(e)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Vitals,
    Snapshots,
}

impl Kind {
    pub const ALL: [Kind; 2] = [Kind::Vitals, Kind::Snapshots];

    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Vitals => "vitals",
            Kind::Snapshots => "snapshots",
        }
    }
}

impl FromStr for Kind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vitals" => Ok(Kind::Vitals),
            "snapshots" => Ok(Kind::Snapshots),
            other => Err(format!("unknown record kind '{other}'")),
        }
    }
}

/// Half-open minute-of-day range `[from, to)`; `to` may be 24:00.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeRange {
    pub from_min: u16,
    pub to_min: u16,
}

pub const MINUTES_PER_DAY: u16 = 24 * 60;

impl TimeRange {
    pub fn new(from_min: u16, to_min: u16) -> Result<Self, String> {
        if to_min > MINUTES_PER_DAY || from_min > to_min {
            return Err(format!("bad time range {}..{}", fmt_hhmm(from_min), fmt_hhmm(to_min)));
        }
        Ok(Self { from_min, to_min })
    }

    pub fn parse(from: &str, to: &str) -> Result<Self, String> {
        Self::new(parse_hhmm(from)?, parse_hhmm(to)?)
    }

    pub fn contains(&self, t: i64) -> bool {
        let m = ms_of_day(t);
        i64::from(self.from_min) * 60_000 <= m && m < i64::from(self.to_min) * 60_000
    }
}

pub fn parse_hhmm(s: &str) -> Result<u16, String> {
    let bad = || format!("bad time '{s}', expected hh:mm");
    let (h, m) = s.split_once(':').ok_or_else(bad)?;
    if h.len() != 2 || m.len() != 2 {
        return Err(bad());
    }
    let h: u16 = h.parse().map_err(|_| bad())?;
    let m: u16 = m.parse().map_err(|_| bad())?;
    if m >= 60 || h > 24 || (h == 24 && m != 0) {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

pub fn fmt_hhmm(min: u16) -> String {
    format!("{:02}:{:02}", min / 60, min % 60)
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", fmt_hhmm(self.from_min), fmt_hhmm(self.to_min))
    }
}

impl Serialize for TimeRange {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [fmt_hhmm(self.from_min), fmt_hhmm(self.to_min)].serialize(s)
    }
}

impl<'de> Deserialize<'de> for TimeRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [from, to] = <[String; 2]>::deserialize(d)?;
        TimeRange::parse(&from, &to).map_err(serde::de::Error::custom)
    }
}

/// Vitals and snapshots for one patient over `[t_from, t_to)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadBatch {
    pub batch_id: String,
    pub patient_id: String,
    pub t_from: i64,
    pub t_to: i64,
    #[serde(default)]
    pub vitals: Vec<VitalSample>,
    #[serde(default)]
    pub snapshots: Vec<SnapshotRef>,
}

impl UploadBatch {
    pub fn new(patient_id: &str, t_from: i64, t_to: i64) -> Self {
        Self {
            batch_id: format!("{patient_id}:{t_from}-{t_to}"),
            patient_id: patient_id.into(),
            t_from,
            t_to,
            vitals: Vec::new(),
            snapshots: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vitals.len() + self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Validate for UploadBatch {
    fn validate(&self) -> Result<(), ValidationError> {
        if self.batch_id.is_empty() {
            return Err(ValidationError::new("batch_id", "empty"));
        }
        if self.patient_id.is_empty() {
            return Err(ValidationError::new("patient_id", "empty"));
        }
        if self.t_from > self.t_to {
            return Err(ValidationError::new("t_from", "after t_to"));
        }
        let in_span = |t: i64| self.t_from <= t && t < self.t_to;
        for v in &self.vitals {
            v.validate()?;
            if !in_span(v.t) {
                return Err(ValidationError::new("vitals", format!("t={} outside [t_from, t_to)", v.t)));
            }
        }
        for s in &self.snapshots {
            s.validate()?;
            if s.patient_id != self.patient_id {
                return Err(ValidationError::new("snapshots", "patient_id differs from batch"));
            }
            if !in_span(s.t) {
                return Err(ValidationError::new("snapshots", format!("t={} outside [t_from, t_to)", s.t)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Record {
    Vitals(VitalSample),
    Snapshot(SnapshotRef),
}

impl Record {
    pub fn t(&self) -> i64 {
        match self {
            Record::Vitals(v) => v.t,
            Record::Snapshot(s) => s.t,
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            Record::Vitals(_) => Kind::Vitals,
            Record::Snapshot(_) => Kind::Snapshots,
        }
    }

    fn parse(kind: Kind, json: &str) -> Option<Self> {
        match kind {
            Kind::Vitals => serde_json::from_str(json).ok().map(Record::Vitals),
            Kind::Snapshots => serde_json::from_str(json).ok().map(Record::Snapshot),
        }
    }

    /// JSON rendering; with a sign set, vitals keep only `t` and that sign's
    /// fields.
    pub fn project(&self, sign: Option<VitalKind>) -> Value {
        match (self, sign) {
            (Record::Vitals(v), Some(k)) => {
                let mut m = Map::new();
                m.insert("t".into(), json!(v.t));
                for &s in k.signs() {
                    m.insert(s.as_str().into(), json!(v.get(s)));
                }
                Value::Object(m)
            }
            _ => serde_json::to_value(self).expect("records serialize"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub patient_id: String,
    pub dates: Vec<NaiveDate>,
    /// Empty means the whole day.
    pub time_ranges: Vec<TimeRange>,
    pub kind: Kind,
}

impl Query {
    pub fn matches(&self, t: i64) -> bool {
        self.dates.contains(&utc_date(t))
            && (self.time_ranges.is_empty() || self.time_ranges.iter().any(|r| r.contains(t)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendReport {
    pub records_written: usize,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn patient_dir(&self, patient_id: &str) -> PathBuf {
        self.root.join(encode_component(patient_id))
    }

    fn partition(&self, patient_id: &str, date: NaiveDate, kind: Kind) -> PathBuf {
        self.patient_dir(patient_id)
            .join(date.format("%Y-%m-%d").to_string())
            .join(format!("{}.ndjson", kind.as_str()))
    }

    pub fn has_patient(&self, patient_id: &str) -> bool {
        self.patient_dir(patient_id).is_dir()
    }

    pub fn patients(&self) -> Vec<String> {
        let mut out: Vec<String> = fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.path().is_dir())
            .filter_map(|e| decode_component(&e.file_name().to_string_lossy()))
            .collect();
        out.sort();
        out
    }

    /// Partition dates present for a patient, ascending.
    pub fn dates(&self, patient_id: &str) -> Vec<NaiveDate> {
        let mut out: Vec<NaiveDate> = fs::read_dir(self.patient_dir(patient_id))
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| NaiveDate::parse_from_str(&e.file_name().to_string_lossy(), "%Y-%m-%d").ok())
            .collect();
        out.sort();
        out
    }

    /// Routes records to date partitions. Replaying a batch id, or records
    /// already present verbatim, writes nothing. Returns after fsync.
    pub fn append(&self, batch: &UploadBatch) -> Result<AppendReport, StoreError> {
        batch.validate()?;
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut groups: std::collections::BTreeMap<(NaiveDate, Kind), Vec<Record>> = Default::default();
        for v in &batch.vitals {
            groups.entry((utc_date(v.t), Kind::Vitals)).or_default().push(Record::Vitals(*v));
        }
        for s in &batch.snapshots {
            groups
                .entry((utc_date(s.t), Kind::Snapshots))
                .or_default()
                .push(Record::Snapshot(s.clone()));
        }
        let mut written = 0;
        for ((date, kind), mut records) in groups {
            let path = self.partition(&batch.patient_id, date, kind);
            let sidecar = path.with_extension("batches");
            if read_batch_ids(&sidecar)?.contains(&batch.batch_id) {
                continue;
            }
            fs::create_dir_all(path.parent().expect("partition has a parent"))?;
            records.sort_by_key(Record::t);
            written += append_partition(&path, kind, &records)?;
            let mut f = OpenOptions::new().create(true).append(true).open(&sidecar)?;
            writeln!(f, "{}", batch.batch_id)?;
            f.sync_data()?;
        }
        if written > 0 {
            log::debug!("store: {} wrote {written} records", batch.batch_id);
        }
        Ok(AppendReport {
            records_written: written,
        })
    }

    /// Time-ordered records in the requested dates intersected with the
    /// time ranges. Ties keep append order.
    pub fn query(&self, q: &Query) -> Result<Vec<Record>, StoreError> {
        if !self.has_patient(&q.patient_id) {
            return Err(StoreError::UnknownPatient(q.patient_id.clone()));
        }
        let dates: BTreeSet<NaiveDate> = q.dates.iter().copied().collect();
        let mut out = Vec::new();
        for date in dates {
            let path = self.partition(&q.patient_id, date, q.kind);
            out.extend(
                read_partition(&path, q.kind)?
                    .into_iter()
                    .map(|(r, _)| r)
                    .filter(|r| q.matches(r.t())),
            );
        }
        Ok(out)
    }

    /// Maximum-timestamp record of a kind; ties go to the later append.
    pub fn latest(&self, patient_id: &str, kind: Kind) -> Result<Option<Record>, StoreError> {
        for date in self.dates(patient_id).into_iter().rev() {
            let records = read_partition(&self.partition(patient_id, date, kind), kind)?;
            if let Some((r, _)) = records.into_iter().last() {
                return Ok(Some(r));
            }
        }
        Ok(None)
    }

    /// Lines in a partition that fail their checksum or do not parse.
    pub fn verify(&self, patient_id: &str, date: NaiveDate, kind: Kind) -> Result<Vec<usize>, StoreError> {
        let path = self.partition(patient_id, date, kind);
        let text = read_text(&path)?;
        Ok(text
            .split('\n')
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .filter(|(_, l)| check_line(l).and_then(|j| Record::parse(kind, j)).is_none())
            .map(|(i, _)| i + 1)
            .collect())
    }
}

pub fn format_line(json: &str) -> String {
    format!("{json}#{:08x}", crc32fast::hash(json.as_bytes()))
}

/// The JSON part of a line whose checksum matches.
pub fn check_line(line: &str) -> Option<&str> {
    let (json, crc) = line.rsplit_once('#')?;
    let crc = u32::from_str_radix(crc, 16).ok()?;
    (crc32fast::hash(json.as_bytes()) == crc).then_some(json)
}

fn read_text(path: &Path) -> Result<String, StoreError> {
    match File::open(path) {
        Ok(mut f) => {
            let mut bytes = Vec::new();
            f.read_to_end(&mut bytes)?;
            Ok(String::from_utf8_lossy(&bytes).into_owned())
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(String::new()),
        Err(e) => Err(e.into()),
    }
}

fn read_batch_ids(path: &Path) -> Result<HashSet<String>, StoreError> {
    Ok(read_text(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Valid records with their canonical JSON, in file order.
fn read_partition(path: &Path, kind: Kind) -> Result<Vec<(Record, String)>, StoreError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        match check_line(line).and_then(|j| Some((Record::parse(kind, j)?, j))) {
            Some((r, j)) => out.push((r, j.to_string())),
            None => log::warn!("store: skipping corrupt line {} in {}", i + 1, path.display()),
        }
    }
    Ok(out)
}

fn append_partition(path: &Path, kind: Kind, records: &[Record]) -> Result<usize, StoreError> {
    let existing = read_partition(path, kind)?;
    let seen: HashSet<&str> = existing.iter().map(|(_, j)| j.as_str()).collect();
    let mut fresh: Vec<(Record, String)> = Vec::new();
    let mut batch_seen = HashSet::new();
    for r in records {
        let j = serde_json::to_string(r).expect("records serialize");
        if !seen.contains(j.as_str()) && batch_seen.insert(j.clone()) {
            fresh.push((r.clone(), j));
        }
    }
    if fresh.is_empty() {
        return Ok(0);
    }
    let last_t = existing.last().map(|(r, _)| r.t());
    let in_order = last_t.is_none_or(|t| fresh[0].0.t() >= t);
    if in_order {
        let torn = fs::read(path).map(|b| b.last().is_some_and(|&c| c != b'\n')).unwrap_or(false);
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut buf = String::new();
        if torn {
            buf.push('\n');
        }
        for (_, j) in &fresh {
            buf.push_str(&format_line(j));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        f.sync_data()?;
    } else {
        let mut all = existing;
        all.extend(fresh.iter().cloned());
        all.sort_by_key(|(r, _)| r.t());
        let tmp = path.with_extension("ndjson.tmp");
        {
            let mut f = File::create(&tmp)?;
            let mut buf = String::new();
            for (_, j) in &all {
                buf.push_str(&format_line(j));
                buf.push('\n');
            }
            f.write_all(buf.as_bytes())?;
            f.sync_data()?;
        }
        fs::rename(&tmp, path)?;
    }
    Ok(fresh.len())
}

fn encode_component(id: &str) -> String {
    let mut out = String::new();
    for (i, b) in id.bytes().enumerate() {
        let plain = b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || (b == b'.' && i > 0);
        if plain {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn decode_component(name: &str) -> Option<String> {
    let bytes = name.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = name.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}
