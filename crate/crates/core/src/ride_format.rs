//! Two-section ride files: an incident CSV and a sensor CSV, each preceded by
//! a version header line and separated by a line of `=` characters.
//!
//! ```text
//! android#84#1
//! key,lat,lon,ts,incident,desc
//! 0,52.52,13.40,1600000012345,1,
//! =========================
//! android#84#1
//! lat,lon,X,Y,Z,timeStamp,acc,a,b,c
//! 52.52,13.40,0.1,0.2,9.8,1600000012345,4.5,0.01,0.02,0.03
//! ,,0.1,0.3,9.7,1600000012600,,0.01,0.02,0.04
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator written between the two sections.
pub const SEPARATOR: &str = "=========================";
/// Shortest run of `=` accepted as a separator.
pub const MIN_SEPARATOR_LEN: usize = 10;

pub const INCIDENT_COLUMNS: [&str; 6] = ["key", "lat", "lon", "ts", "incident", "desc"];
pub const RIDE_COLUMNS: [&str; 10] = ["lat", "lon", "X", "Y", "Z", "timeStamp", "acc", "a", "b", "c"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetPartition {
    AndroidOld,
    AndroidNew,
    Ios,
}

impl DatasetPartition {
    pub const ALL: [DatasetPartition; 3] = [Self::AndroidOld, Self::AndroidNew, Self::Ios];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AndroidOld => "android-old",
            Self::AndroidNew => "android-new",
            Self::Ios => "ios",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl std::fmt::Display for DatasetPartition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Android,
    Ios,
}

/// `platform#app_version#file_version`; the legacy two-field form
/// `app_version#file_version` is read as Android.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionHeader {
    pub platform: Platform,
    pub app_version: u32,
    pub file_version: u32,
}

impl VersionHeader {
    pub fn parse(line: &str) -> Option<Self> {
        let parts: Vec<&str> = line.trim().split('#').collect();
        let (platform, app, file) = match parts.as_slice() {
            [p, a, f] => {
                let platform = match p.to_ascii_lowercase().as_str() {
                    "android" => Platform::Android,
                    "ios" => Platform::Ios,
                    _ => return None,
                };
                (platform, a, f)
            }
            [a, f] => (Platform::Android, a, f),
            _ => return None,
        };
        Some(Self {
            platform,
            app_version: app.trim().parse().ok()?,
            file_version: file.trim().parse().ok()?,
        })
    }

    pub fn partition(&self, cfg: &FormatConfig) -> DatasetPartition {
        match self.platform {
            Platform::Ios => DatasetPartition::Ios,
            Platform::Android if self.app_version >= cfg.android_new_min_app_version => DatasetPartition::AndroidNew,
            Platform::Android => DatasetPartition::AndroidOld,
        }
    }
}

impl std::fmt::Display for VersionHeader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = match self.platform {
            Platform::Android => "android",
            Platform::Ios => "ios",
        };
        write!(f, "{p}#{}#{}", self.app_version, self.file_version)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub lat: f64,
    pub lon: f64,
    /// Meters.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorRecord {
    /// Milliseconds since the epoch, positive.
    pub timestamp: i64,
    pub gps: Option<GpsFix>,
    /// m/s², device frame.
    pub acc: [f64; 3],
    /// rad/s.
    pub gyr: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub incident_type: i32,
    pub description: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawRide {
    pub ride_id: String,
    pub version: VersionHeader,
    pub partition: DatasetPartition,
    pub incidents: Vec<IncidentRecord>,
    /// Non-empty; file order, not necessarily sorted.
    pub records: Vec<SensorRecord>,
}

/// Column aliases and partition rule, loadable from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormatConfig {
    /// Alternative incident column name → canonical name.
    pub incident_aliases: BTreeMap<String, String>,
    /// Alternative sensor column name → canonical name.
    pub ride_aliases: BTreeMap<String, String>,
    /// Android rides from this app version on are the newer partition.
    pub android_new_min_app_version: u32,
    /// Incidents farther than this from every sensor row are dropped.
    pub incident_match_ms: i64,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self {
            incident_aliases: BTreeMap::new(),
            ride_aliases: BTreeMap::new(),
            android_new_min_app_version: 30,
            incident_match_ms: 10_000,
        }
    }
}

impl FormatConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Incidents,
    Ride,
}

impl std::fmt::Display for Section {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Section::Incidents => "incident section",
            Section::Ride => "ride section",
        })
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("no separator line of at least {MIN_SEPARATOR_LEN} '=' characters")]
    MissingSeparator,
    #[error("{section}: {detail}")]
    MissingHeader { section: Section, detail: String },
    #[error("line {line}: {detail}")]
    UnparsableRow { line: usize, detail: String },
    #[error("ride section has no usable sensor rows")]
    EmptyRide,
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("directory not found: {0}")]
    DirNotFound(PathBuf),
}

/// Non-fatal findings of a successful parse.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseReport {
    /// Rows that failed to parse; the rest of the file is still used.
    pub unparsable: Vec<FormatError>,
    /// Sensor rows without a complete accelerometer triple.
    pub missing_accelerometer: usize,
    /// Header columns that are neither canonical nor aliased.
    pub unknown_columns: Vec<String>,
    /// Incidents with no sensor row within the match window.
    pub unmatched_incidents: Vec<IncidentRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedRide {
    pub ride: RawRide,
    pub report: ParseReport,
}

fn is_separator(line: &str) -> bool {
    let t = line.trim();
    t.len() >= MIN_SEPARATOR_LEN && t.bytes().all(|b| b == b'=')
}

struct SectionText<'a> {
    section: Section,
    version: VersionHeader,
    header: &'a str,
    /// `(1-based file line, text)`.
    rows: Vec<(usize, &'a str)>,
}

fn split_section<'a>(section: Section, lines: &[(usize, &'a str)]) -> Result<SectionText<'a>, FormatError> {
    let mut it = lines.iter().filter(|(_, l)| !l.trim().is_empty());
    let missing = |detail: &str| FormatError::MissingHeader {
        section,
        detail: detail.to_string(),
    };
    let (_, version_line) = it.next().ok_or_else(|| missing("no version header"))?;
    let version = VersionHeader::parse(version_line)
        .ok_or_else(|| missing(&format!("invalid version header `{}`", version_line.trim())))?;
    let (_, header) = it.next().ok_or_else(|| missing("no CSV header"))?;
    Ok(SectionText {
        section,
        version,
        header,
        rows: it.copied().collect(),
    })
}

fn parse_csv_line(line: &str) -> Result<Vec<String>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(line.as_bytes());
    match rdr.records().next() {
        Some(Ok(rec)) => Ok(rec.iter().map(|s| s.trim().to_string()).collect()),
        Some(Err(e)) => Err(e.to_string()),
        None => Ok(Vec::new()),
    }
}

/// Maps canonical column names to positions in a header.
struct ColumnMap {
    index: BTreeMap<&'static str, usize>,
}

impl ColumnMap {
    fn build(
        header: &str,
        canonical: &[&'static str],
        aliases: &BTreeMap<String, String>,
        section: Section,
        unknown: &mut Vec<String>,
    ) -> Result<Self, FormatError> {
        let cols = parse_csv_line(header).map_err(|e| FormatError::MissingHeader {
            section,
            detail: e,
        })?;
        let mut index = BTreeMap::new();
        for (i, col) in cols.iter().enumerate() {
            let name = aliases.get(col).map(String::as_str).unwrap_or(col);
            match canonical.iter().find(|c| **c == name) {
                Some(c) => {
                    index.entry(*c).or_insert(i);
                }
                None => unknown.push(col.clone()),
            }
        }
        Ok(Self { index })
    }

    fn require(&self, names: &[&str], section: Section) -> Result<(), FormatError> {
        for n in names {
            if !self.index.contains_key(n) {
                return Err(FormatError::MissingHeader {
                    section,
                    detail: format!("missing column `{n}`"),
                });
            }
        }
        Ok(())
    }

    fn cell<'r>(&self, row: &'r [String], name: &str) -> &'r str {
        self.index
            .get(name)
            .and_then(|&i| row.get(i))
            .map(String::as_str)
            .unwrap_or("")
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, col: &str, line: usize) -> Result<T, FormatError> {
    s.parse().map_err(|_| FormatError::UnparsableRow {
        line,
        detail: format!("column `{col}`: `{s}` is not a number"),
    })
}

fn opt_num(s: &str, col: &str, line: usize) -> Result<Option<f64>, FormatError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_num::<f64>(s, col, line).and_then(|v| {
            if v.is_finite() {
                Ok(Some(v))
            } else {
                Err(FormatError::UnparsableRow {
                    line,
                    detail: format!("column `{col}`: non-finite value"),
                })
            }
        })
    }
}

/// `None` if all cells are empty, an error if only some are.
fn all_or_none<const N: usize>(
    cols: [&str; N],
    map: &ColumnMap,
    row: &[String],
    line: usize,
) -> Result<Option<[f64; N]>, FormatError> {
    let mut out = [0.0; N];
    let mut present = 0;
    for (k, c) in cols.iter().enumerate() {
        if let Some(v) = opt_num(map.cell(row, c), c, line)? {
            out[k] = v;
            present += 1;
        }
    }
    match present {
        0 => Ok(None),
        p if p == N => Ok(Some(out)),
        _ => Err(FormatError::UnparsableRow {
            line,
            detail: format!("incomplete group {cols:?}"),
        }),
    }
}

enum RowOutcome<T> {
    Row(T),
    Skip,
}

fn parse_sensor_row(map: &ColumnMap, row: &[String], line: usize) -> Result<RowOutcome<SensorRecord>, FormatError> {
    let timestamp: i64 = parse_num(map.cell(row, "timeStamp"), "timeStamp", line)?;
    if timestamp <= 0 {
        return Err(FormatError::UnparsableRow {
            line,
            detail: format!("non-positive timestamp {timestamp}"),
        });
    }
    let acc = ["X", "Y", "Z"];
    if acc.iter().any(|c| map.cell(row, c).is_empty()) {
        return Ok(RowOutcome::Skip);
    }
    let acc = all_or_none(acc, map, row, line)?.expect("all accelerometer cells present");
    let gps = all_or_none(["lat", "lon", "acc"], map, row, line)?.map(|[lat, lon, accuracy]| GpsFix {
        lat,
        lon,
        accuracy,
    });
    let gyr = all_or_none(["a", "b", "c"], map, row, line)?;
    Ok(RowOutcome::Row(SensorRecord {
        timestamp,
        gps,
        acc,
        gyr,
    }))
}

fn parse_incident_row(map: &ColumnMap, row: &[String], line: usize) -> Result<IncidentRecord, FormatError> {
    let desc = map.cell(row, "desc");
    let incident = map.cell(row, "incident");
    Ok(IncidentRecord {
        timestamp: parse_num(map.cell(row, "ts"), "ts", line)?,
        lat: parse_num(map.cell(row, "lat"), "lat", line)?,
        lon: parse_num(map.cell(row, "lon"), "lon", line)?,
        incident_type: if incident.is_empty() {
            0
        } else {
            parse_num(incident, "incident", line)?
        },
        description: (!desc.is_empty()).then(|| desc.to_string()),
    })
}

/// Parses ride bytes; invalid UTF-8 is an error rather than a panic.
pub fn parse_ride_bytes(ride_id: &str, bytes: &[u8], cfg: &FormatConfig) -> Result<ParsedRide, FormatError> {
    let text = std::str::from_utf8(bytes).map_err(|_| FormatError::InvalidUtf8)?;
    parse_ride(ride_id, text, cfg)
}

pub fn parse_ride(ride_id: &str, text: &str, cfg: &FormatConfig) -> Result<ParsedRide, FormatError> {
    let lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect();
    let sep = lines
        .iter()
        .position(|(_, l)| is_separator(l))
        .ok_or(FormatError::MissingSeparator)?;
    let inc = split_section(Section::Incidents, &lines[..sep])?;
    let ride = split_section(Section::Ride, &lines[sep + 1..])?;

    let mut report = ParseReport::default();
    let inc_map = ColumnMap::build(
        inc.header,
        &INCIDENT_COLUMNS,
        &cfg.incident_aliases,
        inc.section,
        &mut report.unknown_columns,
    )?;
    inc_map.require(&["lat", "lon", "ts"], inc.section)?;
    let ride_map = ColumnMap::build(
        ride.header,
        &RIDE_COLUMNS,
        &cfg.ride_aliases,
        ride.section,
        &mut report.unknown_columns,
    )?;
    ride_map.require(&["X", "Y", "Z", "timeStamp"], ride.section)?;

    let mut records = Vec::with_capacity(ride.rows.len());
    for (line, text) in &ride.rows {
        let row = match parse_csv_line(text) {
            Ok(r) => r,
            Err(detail) => {
                report.unparsable.push(FormatError::UnparsableRow { line: *line, detail });
                continue;
            }
        };
        match parse_sensor_row(&ride_map, &row, *line) {
            Ok(RowOutcome::Row(r)) => records.push(r),
            Ok(RowOutcome::Skip) => report.missing_accelerometer += 1,
            Err(e) => report.unparsable.push(e),
        }
    }
    if records.is_empty() {
        return Err(FormatError::EmptyRide);
    }

    let mut stamps: Vec<i64> = records.iter().map(|r| r.timestamp).collect();
    stamps.sort_unstable();
    let mut incidents = Vec::new();
    for (line, text) in &inc.rows {
        let parsed = parse_csv_line(text)
            .map_err(|detail| FormatError::UnparsableRow { line: *line, detail })
            .and_then(|row| parse_incident_row(&inc_map, &row, *line));
        match parsed {
            Ok(i) if nearest_gap(&stamps, i.timestamp) <= cfg.incident_match_ms => incidents.push(i),
            Ok(i) => {
                log::warn!(
                    "{ride_id}: incident at {} has no sensor row within {} ms; dropped",
                    i.timestamp,
                    cfg.incident_match_ms
                );
                report.unmatched_incidents.push(i);
            }
            Err(e) => report.unparsable.push(e),
        }
    }

    Ok(ParsedRide {
        ride: RawRide {
            ride_id: ride_id.to_string(),
            version: ride.version,
            partition: ride.version.partition(cfg),
            incidents,
            records,
        },
        report,
    })
}

/// Distance from `t` to the closest entry of sorted, non-empty `stamps`.
fn nearest_gap(stamps: &[i64], t: i64) -> i64 {
    let i = stamps.partition_point(|&s| s < t);
    let mut best = i64::MAX;
    if i < stamps.len() {
        best = best.min(stamps[i].saturating_sub(t));
    }
    if i > 0 {
        best = best.min(t.saturating_sub(stamps[i - 1]));
    }
    best
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_line(cells: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(cells).expect("writing to memory");
    let bytes = w.into_inner().expect("writing to memory");
    String::from_utf8(bytes).expect("csv output is UTF-8")
}

/// Canonical text of a ride; the output parses back to an equal ride.
/// Line breaks inside descriptions are replaced by spaces.
pub fn write_ride(ride: &RawRide) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", ride.version);
    let _ = writeln!(out, "{}", INCIDENT_COLUMNS.join(","));
    for (key, i) in ride.incidents.iter().enumerate() {
        let desc = i
            .description
            .as_deref()
            .unwrap_or("")
            .replace(['\r', '\n'], " ");
        out.push_str(&csv_line(&[
            key.to_string(),
            i.lat.to_string(),
            i.lon.to_string(),
            i.timestamp.to_string(),
            i.incident_type.to_string(),
            desc,
        ]));
    }
    let _ = writeln!(out, "{SEPARATOR}");
    let _ = writeln!(out, "{}", ride.version);
    let _ = writeln!(out, "{}", RIDE_COLUMNS.join(","));
    for r in &ride.records {
        let g = r.gps;
        let gy = r.gyr;
        let cells = [
            opt_cell(g.map(|g| g.lat)),
            opt_cell(g.map(|g| g.lon)),
            r.acc[0].to_string(),
            r.acc[1].to_string(),
            r.acc[2].to_string(),
            r.timestamp.to_string(),
            opt_cell(g.map(|g| g.accuracy)),
            opt_cell(gy.map(|v| v[0])),
            opt_cell(gy.map(|v| v[1])),
            opt_cell(gy.map(|v| v[2])),
        ];
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RideEntry {
    pub ride_id: String,
    pub partition: DatasetPartition,
    pub path: PathBuf,
}

#[derive(Debug, Default)]
pub struct ScanReport {
    /// Sorted by path.
    pub rides: Vec<RideEntry>,
    pub unreadable: Vec<(PathBuf, String)>,
}

impl ScanReport {
    pub fn counts(&self) -> BTreeMap<DatasetPartition, usize> {
        let mut m = BTreeMap::new();
        for r in &self.rides {
            *m.entry(r.partition).or_insert(0) += 1;
        }
        m
    }
}

/// Whether `rel` (relative to the scan root) passes a region filter: some
/// directory component equals `tag` or the file name starts with it.
fn matches_filter(rel: &Path, tag: &str) -> bool {
    let dir_match = rel
        .parent()
        .map(|p| p.components().any(|c| c.as_os_str() == tag))
        .unwrap_or(false);
    let name_match = rel
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.starts_with(tag))
        .unwrap_or(false);
    dir_match || name_match
}

pub fn ride_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_ride(path: &Path, cfg: &FormatConfig) -> Result<ParsedRide, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    parse_ride_bytes(&ride_id_of(path), &bytes, cfg).map_err(|e| e.to_string())
}

/// Parses every regular, non-hidden file below `dir` and reports its
/// partition.
pub fn partition_dataset(dir: &Path, filter: Option<&str>, cfg: &FormatConfig) -> Result<ScanReport, FormatError> {
    if !dir.is_dir() {
        return Err(FormatError::DirNotFound(dir.to_path_buf()));
    }
    let mut paths = Vec::new();
    let mut unreadable = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let p = e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf());
                unreadable.push((p, e.to_string()));
                continue;
            }
        };
        if !entry.file_type().is_file() || entry.file_name().to_string_lossy().starts_with('.') {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).unwrap_or(entry.path());
        if filter.is_none_or(|tag| matches_filter(rel, tag)) {
            paths.push(entry.into_path());
        }
    }
    let results: Vec<_> = paths
        .par_iter()
        .map(|p| (p.clone(), load_ride(p, cfg)))
        .collect();
    let mut rides = Vec::new();
    for (path, res) in results {
        match res {
            Ok(parsed) => rides.push(RideEntry {
                ride_id: parsed.ride.ride_id,
                partition: parsed.ride.partition,
                path,
            }),
            Err(e) => unreadable.push((path, e)),
        }
    }
    Ok(ScanReport { rides, unreadable })
}
