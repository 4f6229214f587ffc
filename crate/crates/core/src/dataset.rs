//! Two-arm survival records: ingestion, validation, risk sets and the
//! nonparametric reference curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: observed time `min(T, C)`, failure flag and arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    pub event: bool,
    pub group: u8,
}

/// Validated, ordered two-arm data.
///
/// Records are sorted by time; at equal times events precede censorings and
/// otherwise input order is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    records: Vec<SurvivalRecord>,
    rows: Vec<usize>,
    events: usize,
    group_counts: [usize; 2],
    group_events: [usize; 2],
}

impl TrialData {
    /// Builds from records in input order. Row numbers are 1-based positions.
    pub fn new(records: Vec<SurvivalRecord>) -> Result<Self> {
        let rows = (1..=records.len()).collect();
        Self::with_rows(records, rows)
    }

    fn with_rows(records: Vec<SurvivalRecord>, rows: Vec<usize>) -> Result<Self> {
        for (r, row) in records.iter().zip(&rows) {
            if !r.time.is_finite() {
                return Err(Error::MalformedRow {
                    row: *row,
                    reason: "time is not finite".into(),
                });
            }
            if r.time <= 0.0 {
                return Err(Error::NonPositiveTime { row: *row });
            }
            if r.group > 1 {
                return Err(Error::InvalidGroup { row: *row });
            }
        }
        if records.len() < 2 {
            return Err(Error::TooFewRecords(records.len()));
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        // Stable sort: ties in (time, event-first) keep input order.
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&records[a], &records[b]);
            ra.time
                .total_cmp(&rb.time)
                .then_with(|| rb.event.cmp(&ra.event))
        });
        let sorted: Vec<SurvivalRecord> = order.iter().map(|&i| records[i]).collect();
        let rows = order.iter().map(|&i| rows[i]).collect();
        let mut group_counts = [0; 2];
        let mut group_events = [0; 2];
        for r in &sorted {
            group_counts[r.group as usize] += 1;
            if r.event {
                group_events[r.group as usize] += 1;
            }
        }
        Ok(Self {
            records: sorted,
            rows,
            events: group_events[0] + group_events[1],
            group_counts,
            group_events,
        })
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    /// Original row number of each sorted record.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Number of failures `d`.
    pub fn events(&self) -> usize {
        self.events
    }

    pub fn group_count(&self, group: u8) -> usize {
        self.group_counts[group as usize]
    }

    pub fn group_events(&self, group: u8) -> usize {
        self.group_events[group as usize]
    }

    /// Applies a strictly increasing map to every time.
    pub fn map_times(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| SurvivalRecord {
                time: f(r.time),
                ..*r
            })
            .collect();
        Self::with_rows(records, self.rows.clone())
    }

    /// Swaps the group labels 0 and 1.
    pub fn relabeled(&self) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| SurvivalRecord {
                group: 1 - r.group,
                ..*r
            })
            .collect();
        Self::with_rows(records, self.rows.clone()).expect("relabeling preserves validity")
    }

    /// Records in the selected stratum (all when `group` is `None`).
    pub fn stratum(&self, group: Option<u8>) -> impl Iterator<Item = &SurvivalRecord> {
        self.records
            .iter()
            .filter(move |r| group.is_none_or(|g| r.group == g))
    }

    /// Canonical CSV serialization; parsing it back yields equal data.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,event,group\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.time, r.event as u8, r.group);
        }
        out
    }
}

/// Parses `time,event,group` CSV text.
pub fn parse_csv(bytes: &[u8]) -> Result<TrialData> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::MalformedRow {
        row: 0,
        reason: format!("not UTF-8: {e}"),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or(Error::EmptyInput)?;
    let header: Vec<&str> = header.split(',').map(str::trim).collect();
    if header != ["time", "event", "group"] {
        return Err(Error::BadHeader);
    }
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (row, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let time: f64 = fields[0].parse().map_err(|_| Error::MalformedRow {
            row,
            reason: format!("cannot parse time `{}`", fields[0]),
        })?;
        if time.is_finite() && time <= 0.0 {
            return Err(Error::NonPositiveTime { row });
        }
        let event = match fields[1] {
            "0" => false,
            "1" => true,
            _ => return Err(Error::InvalidEvent { row }),
        };
        let group = match fields[2] {
            "0" => 0,
            "1" => 1,
            _ => return Err(Error::InvalidGroup { row }),
        };
        records.push(SurvivalRecord { time, event, group });
        rows.push(row);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    TrialData::with_rows(records, rows)
}

/// Data-quality warnings; none of them is fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code")]
pub enum ValidationFlag {
    NoEvents,
    SingleArm { present: u8 },
    NoEventsInGroup { group: u8 },
    NoOverlap,
    FewEvents { events: usize },
    HeavyTies { tied_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub flags: Vec<ValidationFlag>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Below this many events the diagnostics are unreliable.
pub const MIN_RELIABLE_EVENTS: usize = 10;
/// Fraction of events sharing their time with another event.
pub const HEAVY_TIE_FRACTION: f64 = 0.2;

pub fn validate(data: &TrialData) -> ValidationReport {
    let mut flags = Vec::new();
    let d = data.events();
    if d == 0 {
        flags.push(ValidationFlag::NoEvents);
    }
    let single_arm = (0..2).find(|&g| data.group_count(g) == 0).map(|g| 1 - g);
    if let Some(present) = single_arm {
        flags.push(ValidationFlag::SingleArm { present });
    } else {
        for g in 0..2 {
            if d > 0 && data.group_events(g) == 0 {
                flags.push(ValidationFlag::NoEventsInGroup { group: g });
            }
        }
        if d > 0 && informative_failures(data) == 0 {
            flags.push(ValidationFlag::NoOverlap);
        }
    }
    if d > 0 && d < MIN_RELIABLE_EVENTS {
        flags.push(ValidationFlag::FewEvents { events: d });
    }
    if d > 0 {
        let tied = tied_event_count(data);
        let fraction = tied as f64 / d as f64;
        if fraction > HEAVY_TIE_FRACTION {
            flags.push(ValidationFlag::HeavyTies {
                tied_fraction: fraction,
            });
        }
    }
    ValidationReport { flags }
}

fn informative_failures(data: &TrialData) -> usize {
    let mut at_risk = [data.group_count(0), data.group_count(1)];
    let recs = data.records();
    let mut count = 0;
    let mut i = 0;
    while i < recs.len() {
        let t = recs[i].time;
        let mut j = i;
        let mut d = 0;
        while j < recs.len() && recs[j].time == t {
            d += recs[j].event as usize;
            j += 1;
        }
        if at_risk[0] > 0 && at_risk[1] > 0 {
            count += d;
        }
        for r in &recs[i..j] {
            at_risk[r.group as usize] -= 1;
        }
        i = j;
    }
    count
}

fn tied_event_count(data: &TrialData) -> usize {
    let recs = data.records();
    let mut tied = 0;
    let mut i = 0;
    while i < recs.len() {
        let t = recs[i].time;
        let mut j = i;
        let mut d = 0;
        while j < recs.len() && recs[j].time == t {
            d += recs[j].event as usize;
            j += 1;
        }
        if d > 1 {
            tied += d;
        }
        i = j;
    }
    tied
}

/// Indices (into the sorted records) of subjects with `X >= t`.
pub fn risk_set(data: &TrialData, t: f64) -> Vec<usize> {
    let start = data.records().partition_point(|r| r.time < t);
    (start..data.n()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Survival,
    CumulativeHazard,
}

/// Right-continuous step function with jumps at `times`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    pub kind: CurveKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepCurve {
    pub fn initial(&self) -> f64 {
        match self.kind {
            CurveKind::Survival => 1.0,
            CurveKind::CumulativeHazard => 0.0,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            self.initial()
        } else {
            self.values[k - 1]
        }
    }

    /// Maps a cumulative hazard to `exp(-Λ)`; survival curves are unchanged.
    pub fn to_survival(&self) -> StepCurve {
        match self.kind {
            CurveKind::Survival => self.clone(),
            CurveKind::CumulativeHazard => StepCurve {
                kind: CurveKind::Survival,
                times: self.times.clone(),
                values: self.values.iter().map(|v| (-v).exp()).collect(),
            },
        }
    }

    /// Largest absolute difference over the union of jump points.
    pub fn sup_distance(&self, other: &StepCurve) -> f64 {
        let mut d = (self.initial() - other.initial()).abs();
        for &t in self.times.iter().chain(&other.times) {
            d = d.max((self.eval(t) - other.eval(t)).abs());
        }
        d
    }

    /// `t<TAB>value` rows, starting at the origin.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("t\tvalue\n");
        let _ = writeln!(out, "0\t{}", self.initial());
        for (t, v) in self.times.iter().zip(&self.values) {
            let _ = writeln!(out, "{t}\t{v}");
        }
        out
    }
}

/// Distinct event times of a stratum with (events, at risk).
fn event_table(data: &TrialData, group: Option<u8>) -> Result<Vec<(f64, usize, usize)>> {
    let recs: Vec<&SurvivalRecord> = data.stratum(group).collect();
    if recs.is_empty() {
        return Err(Error::EmptyStratum);
    }
    let mut table = Vec::new();
    let mut at_risk = recs.len();
    let mut i = 0;
    while i < recs.len() {
        let t = recs[i].time;
        let mut j = i;
        let mut d = 0;
        while j < recs.len() && recs[j].time == t {
            d += recs[j].event as usize;
            j += 1;
        }
        if d > 0 {
            table.push((t, d, at_risk));
        }
        at_risk -= j - i;
        i = j;
    }
    Ok(table)
}

/// Product-limit survival estimate.
pub fn kaplan_meier(data: &TrialData, group: Option<u8>) -> Result<StepCurve> {
    let table = event_table(data, group)?;
    let mut s = 1.0;
    let mut times = Vec::with_capacity(table.len());
    let mut values = Vec::with_capacity(table.len());
    for (t, d, n) in table {
        s *= 1.0 - d as f64 / n as f64;
        times.push(t);
        values.push(s);
    }
    Ok(StepCurve {
        kind: CurveKind::Survival,
        times,
        values,
    })
}

/// Nelson–Aalen cumulative hazard `Σ d/n`.
pub fn nelson_aalen(data: &TrialData, group: Option<u8>) -> Result<StepCurve> {
    let table = event_table(data, group)?;
    let mut h = 0.0;
    let mut times = Vec::with_capacity(table.len());
    let mut values = Vec::with_capacity(table.len());
    for (t, d, n) in table {
        h += d as f64 / n as f64;
        times.push(t);
        values.push(h);
    }
    Ok(StepCurve {
        kind: CurveKind::CumulativeHazard,
        times,
        values,
    })
}
