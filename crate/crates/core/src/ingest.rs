//
// Copyright 2026 The hatdp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

//! CSV record parsing and bucketing into hexagon-and-timeslot datasets.
//!
//! Input is UTF-8 CSV with a header row naming at least the columns
//! `user_id,region_key,timestamp,speed` (any order; extra columns are
//! ignored). `timestamp` is integer epoch seconds (UTC), `speed` a decimal.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::Serialize;

use crate::dataset::{HatDataset, HatKey, UserSeries};
use crate::error::{Error, Result};

pub const SECONDS_PER_SLOT: i64 = 3600;

const COLUMNS: [&str; 4] = ["user_id", "region_key", "timestamp", "speed"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawRecord {
    pub user_id: String,
    pub region_key: String,
    pub timestamp: i64,
    pub speed: f64,
}

/// Dialect knobs for the record reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordFormat {
    pub delimiter: u8,
}

impl Default for RecordFormat {
    fn default() -> Self {
        RecordFormat { delimiter: b',' }
    }
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    parse_error(line, err.to_string())
}

/// Parses every data row into a [`RawRecord`], preserving row order.
pub fn parse_records<R: Read>(source: R, format: RecordFormat) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(true)
        .from_reader(source);

    let headers = reader.headers().map_err(csv_error)?.clone();
    let mut index = [0usize; 4];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_error(1, format!("missing required column `{name}`")))?;
    }

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| {
            row.get(index[i])
                .map(str::trim)
                .ok_or_else(|| parse_error(line, format!("missing field `{}`", COLUMNS[i])))
        };
        let user_id = field(0)?;
        if user_id.is_empty() {
            return Err(parse_error(line, "empty user_id"));
        }
        let region_key = field(1)?.to_string();
        let timestamp: i64 = field(2)?
            .parse()
            .map_err(|_| parse_error(line, format!("timestamp `{}` is not an integer", field(2).unwrap_or(""))))?;
        let raw_speed = field(3)?;
        let speed: f64 = raw_speed
            .parse()
            .map_err(|_| parse_error(line, format!("speed `{raw_speed}` is not a number")))?;
        if !speed.is_finite() || speed < 0.0 {
            return Err(parse_error(line, format!("speed `{raw_speed}` must be finite and non-negative")));
        }
        out.push(RawRecord { user_id: user_id.to_string(), region_key, timestamp, speed });
    }
    Ok(out)
}

/// Writes records in the same CSV layout [`parse_records`] accepts.
pub fn write_records<W: Write>(sink: W, records: &[RawRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(COLUMNS)?;
    for r in records {
        writer.write_record([
            r.user_id.as_str(),
            r.region_key.as_str(),
            &r.timestamp.to_string(),
            &r.speed.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Hour index of an epoch timestamp (UTC).
pub fn timeslot_of(timestamp: i64) -> i64 {
    timestamp.div_euclid(SECONDS_PER_SLOT)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub records: usize,
    pub accepted: usize,
    pub zero_dropped: usize,
    pub over_bound_rejected: usize,
}

#[derive(Debug, Clone)]
pub struct Bucketed {
    pub hats: BTreeMap<HatKey, HatDataset>,
    pub summary: IngestSummary,
}

/// Groups records by (region, hour). Zero speeds are dropped when `drop_zero`
/// is set; speeds above `upper_bound` are rejected and counted. Within a HAT,
/// users appear in order of first occurrence and keep their file order.
pub fn bucket_into_hats(records: &[RawRecord], upper_bound: f64, drop_zero: bool) -> Result<Bucketed> {
    if !(upper_bound.is_finite() && upper_bound > 0.0) {
        return Err(Error::domain(format!("upper bound must be positive, got {upper_bound}")));
    }
    let mut summary = IngestSummary { records: records.len(), ..Default::default() };
    let mut staging: BTreeMap<HatKey, (HashMap<&str, usize>, Vec<UserSeries>)> = BTreeMap::new();

    for r in records {
        if drop_zero && r.speed == 0.0 {
            summary.zero_dropped += 1;
            continue;
        }
        if r.speed > upper_bound {
            summary.over_bound_rejected += 1;
            continue;
        }
        summary.accepted += 1;
        let key = HatKey::new(r.region_key.clone(), timeslot_of(r.timestamp));
        let (index, users) = staging.entry(key).or_default();
        let slot = *index.entry(r.user_id.as_str()).or_insert_with(|| {
            users.push(UserSeries::new(r.user_id.clone(), Vec::new()));
            users.len() - 1
        });
        users[slot].samples.push(r.speed);
    }
    if summary.over_bound_rejected > 0 {
        log::warn!(
            "rejected {} record(s) with speed above the bound {upper_bound}",
            summary.over_bound_rejected
        );
    }

    let mut hats = BTreeMap::new();
    for (key, (_, users)) in staging {
        let dataset = HatDataset::new(key.clone(), upper_bound, users)?;
        hats.insert(key, dataset);
    }
    Ok(Bucketed { hats, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<RawRecord>> {
        parse_records(text.as_bytes(), RecordFormat::default())
    }

    fn rec(user: &str, region: &str, t: i64, speed: f64) -> RawRecord {
        RawRecord { user_id: user.into(), region_key: region.into(), timestamp: t, speed }
    }

    #[test]
    fn header_and_one_row() {
        let rows = parse("user_id,region_key,timestamp,speed\nbus1,8a2a,7200,31.5\n").unwrap();
        assert_eq!(rows, vec![rec("bus1", "8a2a", 7200, 31.5)]);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("user_id,region_key,timestamp,speed\n").unwrap().is_empty());
    }

    #[test]
    fn non_numeric_speed_names_line() {
        let err = parse("user_id,region_key,timestamp,speed\na,r,1,2\nb,r,1,fast\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("fast"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_columns_ignored_and_order_free() {
        let rows = parse("speed,extra,timestamp,user_id,region_key\n12,zzz,5,u,r\n").unwrap();
        assert_eq!(rows, vec![rec("u", "r", 5, 12.0)]);
    }

    #[test]
    fn missing_column_and_bad_values() {
        assert!(matches!(parse("user_id,timestamp,speed\n"), Err(Error::Parse { line: 1, .. })));
        assert!(parse("user_id,region_key,timestamp,speed\na,r,1.5,2\n").is_err());
        assert!(parse("user_id,region_key,timestamp,speed\na,r,1,-2\n").is_err());
        assert!(parse("user_id,region_key,timestamp,speed\na,r,1,NaN\n").is_err());
        assert!(parse("user_id,region_key,timestamp,speed\na,r,1\n").is_err());
    }

    #[test]
    fn timeslot_floor() {
        assert_eq!(timeslot_of(7200), 2);
        assert_eq!(timeslot_of(7199), 1);
        assert_eq!(timeslot_of(-1), -1);
    }

    #[test]
    fn zero_filter_and_partition() {
        let recs = vec![rec("a", "r1", 10, 0.0), rec("a", "r1", 20, 30.0), rec("b", "r2", 30, 5.0)];
        let out = bucket_into_hats(&recs, 65.0, true).unwrap();
        assert_eq!(out.hats.len(), 2);
        let r1 = &out.hats[&HatKey::new("r1", 0)];
        assert_eq!(r1.users(), &[UserSeries::new("a", vec![30.0])]);
        assert_eq!(out.summary.zero_dropped, 1);
        assert_eq!(out.summary.accepted, 2);

        let kept = bucket_into_hats(&recs, 65.0, false).unwrap();
        assert_eq!(kept.hats[&HatKey::new("r1", 0)].users()[0].samples, vec![0.0, 30.0]);
    }

    #[test]
    fn over_bound_rejected_and_user_dropped() {
        let recs = vec![rec("a", "r", 0, 70.0), rec("b", "r", 0, 10.0), rec("c", "q", 0, 80.0)];
        let out = bucket_into_hats(&recs, 65.0, true).unwrap();
        assert_eq!(out.summary.over_bound_rejected, 2);
        assert_eq!(out.hats.len(), 1);
        assert_eq!(out.hats[&HatKey::new("r", 0)].num_users(), 1);
    }

    #[test]
    fn users_keep_first_appearance_order() {
        let recs = vec![rec("b", "r", 0, 1.0), rec("a", "r", 1, 2.0), rec("b", "r", 2, 3.0)];
        let out = bucket_into_hats(&recs, 65.0, true).unwrap();
        let d = &out.hats[&HatKey::new("r", 0)];
        assert_eq!(d.users()[0], UserSeries::new("b", vec![1.0, 3.0]));
        assert_eq!(d.users()[1].user_id, "a");
    }

    #[test]
    fn write_then_parse() {
        let recs = vec![rec("a", "r", 3601, 0.1 + 0.2), rec("b", "q", 0, 64.999)];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), recs);
    }
}
