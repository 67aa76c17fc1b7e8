//! Store against an in-memory model: every record ever appended, in append
//! order, without verbatim duplicates. A query is that list filtered by the
//! query predicate and stably sorted by time.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;

use chrono::{Duration, NaiveDate};
use proptest::prelude::*;
use remoni_core::store::{Kind, Query, Record, Store, StoreError, TimeRange, UploadBatch};
use remoni_core::{SnapshotRef, VitalSample};

use super::{ensure, runner, Check};

const DAY_MS: i64 = 86_400_000;

fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2025, 1, 10).unwrap()
}

fn day0_ms() -> i64 {
    day0().and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp_millis()
}

#[derive(Debug, Clone)]
enum Item {
    Vital { t: i64, hr: f64 },
    Snap { t: i64, byte: u8 },
}

#[derive(Debug, Clone)]
struct GenBatch {
    patient: usize,
    items: Vec<Item>,
}

const PATIENTS: [&str; 2] = ["7", "ward 3/b"];

fn item() -> impl Strategy<Value = Item> {
    // A coarse grid so equal timestamps and verbatim repeats are common.
    let t = (0i64..3 * 24 * 12).prop_map(|slot| day0_ms() + slot * 5 * 60_000);
    prop_oneof![
        4 => (t.clone(), prop::sample::select(vec![61.0, 72.5, 90.0])).prop_map(|(t, hr)| Item::Vital { t, hr }),
        1 => (t, 0u8..3).prop_map(|(t, byte)| Item::Snap { t, byte }),
    ]
}

fn batch_strategy() -> impl Strategy<Value = GenBatch> {
    (0usize..2, prop::collection::vec(item(), 0..14)).prop_map(|(patient, items)| GenBatch { patient, items })
}

fn range_strategy() -> impl Strategy<Value = TimeRange> {
    (0u16..=1440, 0u16..=1440).prop_map(|(a, b)| TimeRange::new(a.min(b), a.max(b)).unwrap())
}

fn query_strategy() -> impl Strategy<Value = (usize, Vec<NaiveDate>, Vec<TimeRange>, bool)> {
    (
        0usize..2,
        prop::collection::vec((-1i64..4).prop_map(|d| day0() + Duration::days(d)), 0..4),
        prop::collection::vec(range_strategy(), 0..3),
        any::<bool>(),
    )
        .prop_map(|(p, dates, ranges, vitals)| (p, dates, ranges, vitals))
}

fn vital(t: i64, hr: f64) -> VitalSample {
    VitalSample {
        t,
        temp: 36.8,
        hr,
        rr: 16.0,
        sys: 115.0,
        dia: 75.0,
        spo2: 97.0,
    }
}

fn to_upload(i: usize, b: &GenBatch) -> UploadBatch {
    let patient = PATIENTS[b.patient];
    let ts: Vec<i64> = b
        .items
        .iter()
        .map(|it| match it {
            Item::Vital { t, .. } | Item::Snap { t, .. } => *t,
        })
        .collect();
    let t_from = ts.iter().copied().min().unwrap_or(day0_ms());
    let t_to = ts.iter().copied().max().map_or(t_from, |t| t + 1);
    let mut up = UploadBatch::new(patient, t_from, t_to);
    up.batch_id = format!("gen-{i}");
    for it in &b.items {
        match *it {
            Item::Vital { t, hr } => up.vitals.push(vital(t, hr)),
            Item::Snap { t, byte } => up.snapshots.push(SnapshotRef {
                t,
                patient_id: patient.into(),
                mime: "image/png".into(),
                media: vec![byte, 1, 2],
            }),
        }
    }
    up
}

/// Append-ordered record lists per (patient, kind), verbatim duplicates
/// dropped, in the order the batch lists them (vitals before snapshots).
#[derive(Default)]
struct Model {
    records: BTreeMap<(String, Kind), Vec<Record>>,
    seen: HashSet<String>,
}

impl Model {
    fn append(&mut self, up: &UploadBatch) -> usize {
        let mut written = 0;
        let items = up
            .vitals
            .iter()
            .map(|v| Record::Vitals(*v))
            .chain(up.snapshots.iter().cloned().map(Record::Snapshot));
        for r in items {
            let key = format!("{}|{}", up.patient_id, serde_json::to_string(&r).unwrap());
            if self.seen.insert(key) {
                self.records.entry((up.patient_id.clone(), r.kind())).or_default().push(r);
                written += 1;
            }
        }
        written
    }

    fn known(&self, patient: &str) -> bool {
        self.records.keys().any(|(p, _)| p == patient)
    }

    fn query(&self, patient: &str, kind: Kind, dates: &[NaiveDate], ranges: &[TimeRange]) -> Vec<Record> {
        let in_dates = |t: i64| {
            let d = day0() + Duration::days((t - day0_ms()).div_euclid(DAY_MS));
            dates.contains(&d)
        };
        let in_ranges = |t: i64| {
            let minute_ms = (t - day0_ms()).rem_euclid(DAY_MS);
            ranges.is_empty()
                || ranges
                    .iter()
                    .any(|r| minute_ms >= r.from_min as i64 * 60_000 && minute_ms < r.to_min as i64 * 60_000)
        };
        let mut out: Vec<Record> = self
            .records
            .get(&(patient.to_string(), kind))
            .into_iter()
            .flatten()
            .filter(|r| in_dates(r.t()) && in_ranges(r.t()))
            .cloned()
            .collect();
        out.sort_by_key(Record::t);
        out
    }

    fn latest(&self, patient: &str, kind: Kind) -> Option<Record> {
        let list = self.records.get(&(patient.to_string(), kind))?;
        let max_t = list.iter().map(Record::t).max()?;
        list.iter().rev().find(|r| r.t() == max_t).cloned()
    }
}

fn store_dir() -> tempfile::TempDir {
    // tmpfs keeps the per-append fsyncs cheap when it is available.
    let shm = std::path::Path::new("/dev/shm");
    if shm.is_dir() {
        if let Ok(d) = tempfile::tempdir_in(shm) {
            return d;
        }
    }
    tempfile::tempdir().unwrap()
}

type QueryCase = (usize, Vec<NaiveDate>, Vec<TimeRange>, bool);

fn compare(store: &Store, model: &Model, queries: &[QueryCase]) -> Result<(), TestCaseError> {
    for (p, dates, ranges, vitals) in queries {
        let patient = PATIENTS[*p];
        let kind = if *vitals { Kind::Vitals } else { Kind::Snapshots };
        let q = Query {
            patient_id: patient.into(),
            dates: dates.clone(),
            time_ranges: ranges.clone(),
            kind,
        };
        match store.query(&q) {
            Ok(got) => {
                ensure(model.known(patient), || format!("query for unwritten patient {patient} succeeded"))?;
                let want = model.query(patient, kind, dates, ranges);
                ensure(got == want, || format!("{q:?}: store {} records, model {}", got.len(), want.len()))?;
            }
            Err(StoreError::UnknownPatient(_)) => {
                ensure(!model.known(patient), || format!("known patient {patient} reported unknown"))?;
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
        for kind in Kind::ALL {
            let got = store.latest(patient, kind).map_err(|e| TestCaseError::fail(e.to_string()))?;
            ensure(got == model.latest(patient, kind), || format!("latest {patient} {kind:?} differs"))?;
        }
    }
    Ok(())
}

/// Query equivalence over generated record sets, plus idempotent re-append.
pub fn check_query_equivalence(cases: u32) -> Check {
    let strat = (
        prop::collection::vec(batch_strategy(), 1..6),
        prop::collection::vec(query_strategy(), 1..5),
    );
    runner(cases)
        .run(&strat, |(batches, queries)| {
            let dir = store_dir();
            let store = Store::open(dir.path()).unwrap();
            let mut model = Model::default();
            let uploads: Vec<_> = batches.iter().enumerate().map(|(i, b)| to_upload(i, b)).collect();
            for up in &uploads {
                let report = store.append(up).map_err(|e| TestCaseError::fail(e.to_string()))?;
                let expected = model.append(up);
                ensure(report.records_written == expected, || {
                    format!("{} wrote {}, model {expected}", up.batch_id, report.records_written)
                })?;
            }
            compare(&store, &model, &queries)?;
            for (i, up) in uploads.iter().enumerate() {
                let again = store.append(up).map_err(|e| TestCaseError::fail(e.to_string()))?;
                ensure(again.records_written == 0, || "replayed batch wrote records".into())?;
                let mut renamed = up.clone();
                renamed.batch_id = format!("copy-{i}");
                let copy = store.append(&renamed).map_err(|e| TestCaseError::fail(e.to_string()))?;
                ensure(copy.records_written == 0, || "verbatim records under a new batch id were written".into())?;
            }
            compare(&store, &model, &queries)?;
            Ok(())
        })
        .map_err(|e| e.to_string().chars().take(600).collect::<String>())?;
    Ok(format!("{cases} record sets match the model; re-append writes nothing"))
}

/// A torn final line and a checksum-damaged line are skipped by reads and
/// do not block later appends.
pub fn check_crash_lines() -> Check {
    let dir = store_dir();
    let store = Store::open(dir.path()).unwrap();
    let t = |min: i64| day0_ms() + min * 60_000;
    let mut first = UploadBatch::new("7", t(0), t(10));
    first.vitals = (0..5).map(|i| vital(t(2 * i), 70.0 + i as f64)).collect();
    store.append(&first).map_err(|e| e.to_string())?;
    let path = dir.path().join("7").join("2025-01-10").join("vitals.ndjson");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    // Flip one digit inside the second line's JSON so its checksum fails.
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[1] = lines[1].replacen("71", "79", 1);
    let damaged = lines.join("\n") + "\n";
    std::fs::write(&path, damaged).map_err(|e| e.to_string())?;
    let mut f = OpenOptions::new().append(true).open(&path).map_err(|e| e.to_string())?;
    f.write_all(b"{\"t\":1736467").map_err(|e| e.to_string())?;
    drop(f);
    let q = Query {
        patient_id: "7".into(),
        dates: vec![day0()],
        time_ranges: vec![],
        kind: Kind::Vitals,
    };
    let hrs = |rs: Vec<Record>| -> Vec<f64> {
        rs.into_iter()
            .map(|r| match r {
                Record::Vitals(v) => v.hr,
                Record::Snapshot(_) => f64::NAN,
            })
            .collect()
    };
    let got = hrs(store.query(&q).map_err(|e| e.to_string())?);
    if got != [70.0, 72.0, 73.0, 74.0] {
        return Err(format!("after damage: {got:?}"));
    }
    let bad = store.verify("7", day0(), Kind::Vitals).map_err(|e| e.to_string())?;
    if bad != [2, 6] {
        return Err(format!("verify reported lines {bad:?}"));
    }
    let mut later = UploadBatch::new("7", t(20), t(30));
    later.vitals = vec![vital(t(20), 80.0)];
    let mut earlier = UploadBatch::new("7", t(1), t(2));
    earlier.vitals = vec![vital(t(1), 81.0)];
    store.append(&later).map_err(|e| e.to_string())?;
    store.append(&earlier).map_err(|e| e.to_string())?;
    let got = hrs(store.query(&q).map_err(|e| e.to_string())?);
    if got != [70.0, 81.0, 72.0, 73.0, 74.0, 80.0] {
        return Err(format!("after later appends: {got:?}"));
    }
    Ok("torn and damaged lines skipped, appends continue".into())
}
