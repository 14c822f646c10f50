//! CSV ingestion and emission for the three input files.
//!
//! Detection files have a fixed prefix (`route_id,segment_start_m,
//! segment_end_m,year,pci`) followed by one column per disease code; the code
//! vocabulary is open, so unknown codes are kept and only warned about.
//! Writers emit records in canonical order so that emit(load(f)) is a fixed
//! point.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{DataError, DetectionRecord, MaintenanceRecord, RouteMeta, TrafficVolume};

const DETECTION_PREFIX: [&str; 5] = ["route_id", "segment_start_m", "segment_end_m", "year", "pci"];
const MAINTENANCE_HEADER: [&str; 11] = [
    "route_id",
    "segment_start_m",
    "segment_end_m",
    "year",
    "treatment_code",
    "measure",
    "location",
    "cost_per_km",
    "pre_pci",
    "post_pci",
    "next_year_pci",
];
const ROUTE_META_HEADER: [&str; 10] = [
    "route_id",
    "road_grade",
    "pavement_type",
    "base_type",
    "traffic_volume",
    "department",
    "unit",
    "area",
    "special_section",
    "admin_grade",
];

/// Result of loading a detection file.
#[derive(Debug, Clone)]
pub struct DetectionFile {
    pub records: Vec<DetectionRecord>,
    /// Disease codes in file column order.
    pub disease_codes: Vec<String>,
    pub warnings: Vec<String>,
}

/// Result of loading a maintenance file.
#[derive(Debug, Clone)]
pub struct MaintenanceFile {
    pub records: Vec<MaintenanceRecord>,
    pub warnings: Vec<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, row: usize, message: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.display().to_string(),
        row,
        message: message.into(),
    }
}

fn bad_field(path: &Path, row: usize, column: &str, message: impl Into<String>) -> DataError {
    DataError::BadField {
        path: path.display().to_string(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(path, source),
            other => malformed(path, 1, format!("{other:?}")),
        })
}

fn parse_f64(path: &Path, row: usize, column: &str, raw: &str) -> Result<f64, DataError> {
    let v: f64 = raw
        .parse()
        .map_err(|_| bad_field(path, row, column, format!("`{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(bad_field(path, row, column, "value must be finite"));
    }
    Ok(v)
}

fn parse_year(path: &Path, row: usize, raw: &str) -> Result<i32, DataError> {
    raw.parse()
        .map_err(|_| bad_field(path, row, "year", format!("`{raw}` is not a year")))
}

fn parse_pci(path: &Path, row: usize, column: &str, raw: &str) -> Result<f64, DataError> {
    let v = parse_f64(path, row, column, raw)?;
    if !(0.0..=100.0).contains(&v) {
        return Err(bad_field(
            path,
            row,
            column,
            format!("PCI {v} outside the valid range 0..=100"),
        ));
    }
    Ok(v)
}

fn check_span(path: &Path, row: usize, start: f64, end: f64) -> Result<(), DataError> {
    if start < 0.0 {
        return Err(bad_field(
            path,
            row,
            "segment_start_m",
            "segment start must be non-negative",
        ));
    }
    if end <= start {
        return Err(bad_field(
            path,
            row,
            "segment_end_m",
            format!("segment end {end} must exceed segment start {start}"),
        ));
    }
    Ok(())
}

/// Loads a detection CSV. `declared_codes`, when given, is the configured
/// disease vocabulary; codes outside it are kept but reported as warnings.
pub fn load_detection(
    path: &Path,
    declared_codes: Option<&[String]>,
) -> Result<DetectionFile, DataError> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    if headers.len() < DETECTION_PREFIX.len() {
        return Err(malformed(
            path,
            1,
            format!(
                "expected at least the columns {:?}, found {} column(s)",
                DETECTION_PREFIX,
                headers.len()
            ),
        ));
    }
    for (i, expected) in DETECTION_PREFIX.iter().enumerate() {
        if &headers[i] != *expected {
            return Err(malformed(
                path,
                1,
                format!("column {} must be `{expected}`, found `{}`", i + 1, &headers[i]),
            ));
        }
    }
    let disease_codes: Vec<String> = headers
        .iter()
        .skip(DETECTION_PREFIX.len())
        .map(|s| s.to_string())
        .collect();
    let mut seen = BTreeSet::new();
    for code in &disease_codes {
        if code.is_empty() {
            return Err(malformed(path, 1, "empty disease column name"));
        }
        if !seen.insert(code.clone()) {
            return Err(malformed(path, 1, format!("duplicate disease column `{code}`")));
        }
    }

    let mut warnings = Vec::new();
    if let Some(declared) = declared_codes {
        for code in &disease_codes {
            if !declared.contains(code) {
                warnings.push(format!(
                    "detection column `{code}` is not in the configured disease vocabulary; kept as-is"
                ));
            }
        }
    }

    let mut records = Vec::new();
    for (idx, result) in reader.records().enumerate() {
        let row = idx + 2;
        let record = result.map_err(|e| malformed(path, row, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(malformed(
                path,
                row,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let start = parse_f64(path, row, "segment_start_m", &record[1])?;
        let end = parse_f64(path, row, "segment_end_m", &record[2])?;
        check_span(path, row, start, end)?;
        let mut diseases = BTreeMap::new();
        for (i, code) in disease_codes.iter().enumerate() {
            let raw = &record[DETECTION_PREFIX.len() + i];
            let quantity = if raw.is_empty() {
                0.0
            } else {
                parse_f64(path, row, code, raw)?
            };
            if quantity < 0.0 {
                return Err(bad_field(
                    path,
                    row,
                    code,
                    "disease quantity must be non-negative",
                ));
            }
            diseases.insert(code.clone(), quantity);
        }
        records.push(DetectionRecord {
            route_id: require_non_empty(path, row, "route_id", &record[0])?,
            segment_start_m: start,
            segment_end_m: end,
            year: parse_year(path, row, &record[3])?,
            pci: parse_pci(path, row, "pci", &record[4])?,
            diseases,
        });
    }
    Ok(DetectionFile {
        records,
        disease_codes,
        warnings,
    })
}

fn require_non_empty(
    path: &Path,
    row: usize,
    column: &str,
    raw: &str,
) -> Result<String, DataError> {
    if raw.is_empty() {
        return Err(bad_field(path, row, column, "value must not be empty"));
    }
    Ok(raw.to_string())
}

/// Loads a maintenance CSV. `treatment_vocab`, when given, is the configured
/// treatment vocabulary; unknown codes are kept with a warning.
pub fn load_maintenance(
    path: &Path,
    treatment_vocab: Option<&[String]>,
) -> Result<MaintenanceFile, DataError> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    let expected: Vec<&str> = MAINTENANCE_HEADER.to_vec();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(malformed(
            path,
            1,
            format!("header must be exactly {expected:?}"),
        ));
    }

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (idx, result) in reader.records().enumerate() {
        let row = idx + 2;
        let record = result.map_err(|e| malformed(path, row, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(malformed(
                path,
                row,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let start = parse_f64(path, row, "segment_start_m", &record[1])?;
        let end = parse_f64(path, row, "segment_end_m", &record[2])?;
        check_span(path, row, start, end)?;
        let cost = parse_f64(path, row, "cost_per_km", &record[7])?;
        if cost < 0.0 {
            return Err(bad_field(
                path,
                row,
                "cost_per_km",
                "cost must be non-negative",
            ));
        }
        let treatment_code = require_non_empty(path, row, "treatment_code", &record[4])?;
        if let Some(vocab) = treatment_vocab {
            if !vocab.contains(&treatment_code) {
                warnings.push(format!(
                    "{path}:{row}: treatment code `{treatment_code}` is not in the configured vocabulary; record kept",
                    path = path.display()
                ));
            }
        }
        let next_year_pci = if record[10].is_empty() {
            None
        } else {
            Some(parse_pci(path, row, "next_year_pci", &record[10])?)
        };
        records.push(MaintenanceRecord {
            route_id: require_non_empty(path, row, "route_id", &record[0])?,
            segment_start_m: start,
            segment_end_m: end,
            year: parse_year(path, row, &record[3])?,
            treatment_code,
            measure: require_non_empty(path, row, "measure", &record[5])?,
            location: require_non_empty(path, row, "location", &record[6])?,
            cost_per_km: cost,
            pre_pci: parse_pci(path, row, "pre_pci", &record[8])?,
            post_pci: parse_pci(path, row, "post_pci", &record[9])?,
            next_year_pci,
        });
    }
    Ok(MaintenanceFile { records, warnings })
}

/// Loads the route register (one row per route).
pub fn load_route_meta(path: &Path) -> Result<Vec<RouteMeta>, DataError> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    let expected: Vec<&str> = ROUTE_META_HEADER.to_vec();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(malformed(
            path,
            1,
            format!("header must be exactly {expected:?}"),
        ));
    }

    let mut metas: Vec<RouteMeta> = Vec::new();
    for (idx, result) in reader.records().enumerate() {
        let row = idx + 2;
        let record = result.map_err(|e| malformed(path, row, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(malformed(
                path,
                row,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let route_id = require_non_empty(path, row, "route_id", &record[0])?;
        if metas.iter().any(|m| m.route_id == route_id) {
            return Err(bad_field(
                path,
                row,
                "route_id",
                format!("duplicate route `{route_id}`"),
            ));
        }
        let traffic_volume = TrafficVolume::parse(&record[4]).ok_or_else(|| {
            bad_field(
                path,
                row,
                "traffic_volume",
                format!("`{}` must be one of H, M, L", &record[4]),
            )
        })?;
        let special_section = match &record[8] {
            "0" => false,
            "1" => true,
            other => {
                return Err(bad_field(
                    path,
                    row,
                    "special_section",
                    format!("`{other}` must be 0 or 1"),
                ))
            }
        };
        metas.push(RouteMeta {
            route_id,
            road_grade: require_non_empty(path, row, "road_grade", &record[1])?,
            pavement_type: require_non_empty(path, row, "pavement_type", &record[2])?,
            base_type: require_non_empty(path, row, "base_type", &record[3])?,
            traffic_volume,
            department: record[5].to_string(),
            unit: record[6].to_string(),
            area: require_non_empty(path, row, "area", &record[7])?,
            special_section,
            admin_grade: require_non_empty(path, row, "admin_grade", &record[9])?,
        });
    }
    Ok(metas)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn make_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, DataError> {
    csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(path, source),
            other => malformed(path, 0, format!("{other:?}")),
        })
}

fn flush_writer(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<(), DataError> {
    w.flush().map_err(|e| io_err(path, e))
}

fn write_err(path: &Path, e: csv::Error) -> DataError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => malformed(path, 0, format!("{other:?}")),
    }
}

/// Writes detection records in canonical order (route, start, end, year) with
/// the union of disease codes as sorted columns.
pub fn write_detection(path: &Path, records: &[DetectionRecord]) -> Result<(), DataError> {
    let mut codes: BTreeSet<String> = BTreeSet::new();
    for r in records {
        codes.extend(r.diseases.keys().cloned());
    }
    let codes: Vec<String> = codes.into_iter().collect();

    let mut order: Vec<&DetectionRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        (&a.route_id, a.year, a.segment_start_m, a.segment_end_m)
            .partial_cmp(&(&b.route_id, b.year, b.segment_start_m, b.segment_end_m))
            .expect("finite segment bounds")
    });

    let mut w = make_writer(path)?;
    let mut header: Vec<&str> = DETECTION_PREFIX.to_vec();
    header.extend(codes.iter().map(|s| s.as_str()));
    w.write_record(&header).map_err(|e| write_err(path, e))?;
    for r in order {
        let mut row = vec![
            r.route_id.clone(),
            fmt_f64(r.segment_start_m),
            fmt_f64(r.segment_end_m),
            r.year.to_string(),
            fmt_f64(r.pci),
        ];
        for code in &codes {
            row.push(fmt_f64(r.diseases.get(code).copied().unwrap_or(0.0)));
        }
        w.write_record(&row).map_err(|e| write_err(path, e))?;
    }
    flush_writer(path, w)
}

/// Writes maintenance records in canonical order (route, year, start).
pub fn write_maintenance(path: &Path, records: &[MaintenanceRecord]) -> Result<(), DataError> {
    let mut order: Vec<&MaintenanceRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        (&a.route_id, a.year, a.segment_start_m, &a.treatment_code)
            .partial_cmp(&(&b.route_id, b.year, b.segment_start_m, &b.treatment_code))
            .expect("finite segment bounds")
    });

    let mut w = make_writer(path)?;
    w.write_record(MAINTENANCE_HEADER)
        .map_err(|e| write_err(path, e))?;
    for r in order {
        w.write_record(&[
            r.route_id.clone(),
            fmt_f64(r.segment_start_m),
            fmt_f64(r.segment_end_m),
            r.year.to_string(),
            r.treatment_code.clone(),
            r.measure.clone(),
            r.location.clone(),
            fmt_f64(r.cost_per_km),
            fmt_f64(r.pre_pci),
            fmt_f64(r.post_pci),
            r.next_year_pci.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(|e| write_err(path, e))?;
    }
    flush_writer(path, w)
}

/// Writes the route register sorted by route id.
pub fn write_route_meta(path: &Path, metas: &[RouteMeta]) -> Result<(), DataError> {
    let mut order: Vec<&RouteMeta> = metas.iter().collect();
    order.sort_by(|a, b| a.route_id.cmp(&b.route_id));

    let mut w = make_writer(path)?;
    w.write_record(ROUTE_META_HEADER)
        .map_err(|e| write_err(path, e))?;
    for m in order {
        w.write_record(&[
            m.route_id.clone(),
            m.road_grade.clone(),
            m.pavement_type.clone(),
            m.base_type.clone(),
            m.traffic_volume.as_str().to_string(),
            m.department.clone(),
            m.unit.clone(),
            m.area.clone(),
            if m.special_section { "1" } else { "0" }.to_string(),
            m.admin_grade.clone(),
        ])
        .map_err(|e| write_err(path, e))?;
    }
    flush_writer(path, w)
}
