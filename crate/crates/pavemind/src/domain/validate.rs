//! Input hygiene report: year gaps, overlapping survey spans, and
//! maintenance records that reference unknown routes. The report never
//! aborts a run; callers decide what to do with the findings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{DetectionRecord, MaintenanceRecord};

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    /// A year missing between the first and last surveyed year of a route
    /// (filled by interpolation when the series is built).
    MissingYear { route_id: String, year: i32 },
    /// Two survey spans of the same route and year overlap.
    OverlappingSegments {
        route_id: String,
        year: i32,
        first: (f64, f64),
        second: (f64, f64),
    },
    /// A maintenance record references a route with no detection data.
    OrphanMaintenance { route_id: String, year: i32 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::MissingYear { route_id, year } => {
                write!(f, "route {route_id}: no detection rows for {year}; values will be interpolated")
            }
            ValidationIssue::OverlappingSegments {
                route_id,
                year,
                first,
                second,
            } => write!(
                f,
                "route {route_id}, year {year}: spans {:?} and {:?} overlap",
                first, second
            ),
            ValidationIssue::OrphanMaintenance { route_id, year } => write!(
                f,
                "maintenance record for route {route_id} ({year}) has no detection data"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks detection and maintenance data for gaps, overlaps and orphans.
pub fn validate(
    detection: &[DetectionRecord],
    maintenance: &[MaintenanceRecord],
) -> ValidationReport {
    let mut issues = Vec::new();

    let mut years_by_route: BTreeMap<&str, BTreeSet<i32>> = BTreeMap::new();
    for r in detection {
        years_by_route
            .entry(r.route_id.as_str())
            .or_default()
            .insert(r.year);
    }
    for (route_id, years) in &years_by_route {
        let first = *years.iter().next().expect("non-empty");
        let last = *years.iter().last().expect("non-empty");
        for year in first..=last {
            if !years.contains(&year) {
                issues.push(ValidationIssue::MissingYear {
                    route_id: route_id.to_string(),
                    year,
                });
            }
        }
    }

    let mut spans: BTreeMap<(&str, i32), Vec<(f64, f64)>> = BTreeMap::new();
    for r in detection {
        spans
            .entry((r.route_id.as_str(), r.year))
            .or_default()
            .push((r.segment_start_m, r.segment_end_m));
    }
    for ((route_id, year), mut list) in spans {
        list.sort_by(|a, b| a.partial_cmp(b).expect("finite bounds"));
        for pair in list.windows(2) {
            if pair[1].0 < pair[0].1 {
                issues.push(ValidationIssue::OverlappingSegments {
                    route_id: route_id.to_string(),
                    year,
                    first: pair[0],
                    second: pair[1],
                });
            }
        }
    }

    for m in maintenance {
        if !years_by_route.contains_key(m.route_id.as_str()) {
            issues.push(ValidationIssue::OrphanMaintenance {
                route_id: m.route_id.clone(),
                year: m.year,
            });
        }
    }

    ValidationReport { issues }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn det(route: &str, start: f64, end: f64, year: i32) -> DetectionRecord {
        DetectionRecord {
            route_id: route.into(),
            segment_start_m: start,
            segment_end_m: end,
            year,
            pci: 80.0,
            diseases: BTreeMap::new(),
        }
    }

    fn mnt(route: &str, year: i32) -> MaintenanceRecord {
        MaintenanceRecord {
            route_id: route.into(),
            segment_start_m: 0.0,
            segment_end_m: 10.0,
            year,
            treatment_code: "T1".into(),
            measure: "patch".into(),
            location: "surface".into(),
            cost_per_km: 100.0,
            pre_pci: 70.0,
            post_pci: 85.0,
            next_year_pci: None,
        }
    }

    #[test]
    fn clean_inputs_produce_empty_report() {
        let detection = vec![det("R1", 0.0, 10.0, 2019), det("R1", 0.0, 10.0, 2020)];
        let maintenance = vec![mnt("R1", 2019)];
        assert!(validate(&detection, &maintenance).is_empty());
    }

    #[test]
    fn interior_gap_is_reported() {
        let detection = vec![
            det("R1", 0.0, 10.0, 2015),
            det("R1", 0.0, 10.0, 2017),
            det("R1", 0.0, 10.0, 2018),
        ];
        let report = validate(&detection, &[]);
        assert_eq!(
            report.issues,
            vec![ValidationIssue::MissingYear {
                route_id: "R1".into(),
                year: 2016
            }]
        );
    }

    #[test]
    fn overlapping_spans_are_reported() {
        let detection = vec![
            det("R1", 0.0, 12.0, 2019),
            det("R1", 10.0, 20.0, 2019),
            det("R1", 0.0, 10.0, 2020),
            det("R1", 10.0, 20.0, 2020),
        ];
        let report = validate(&detection, &[]);
        assert_eq!(report.issues.len(), 1);
        assert!(matches!(
            report.issues[0],
            ValidationIssue::OverlappingSegments { year: 2019, .. }
        ));
    }

    #[test]
    fn touching_spans_do_not_overlap() {
        let detection = vec![det("R1", 0.0, 10.0, 2019), det("R1", 10.0, 20.0, 2019)];
        assert!(validate(&detection, &[]).is_empty());
    }

    #[test]
    fn orphan_maintenance_is_reported() {
        let detection = vec![det("R1", 0.0, 10.0, 2019)];
        let maintenance = vec![mnt("R9", 2018)];
        let report = validate(&detection, &maintenance);
        assert_eq!(
            report.issues,
            vec![ValidationIssue::OrphanMaintenance {
                route_id: "R9".into(),
                year: 2018
            }]
        );
    }
}
