//! Aggregation of raw detection rows into route-level yearly series and
//! re-bucketing of arbitrary segment spans onto the fixed evaluation grid.

use std::collections::{BTreeMap, BTreeSet};

use super::{DataError, DetectionRecord, RouteSeries};

/// Width of one evaluation unit in metres. Segment-level work (ranking,
/// planning) happens on this grid regardless of the granularity of the raw
/// survey rows.
pub const EVALUATION_UNIT_M: f64 = 10.0;

/// Builds the yearly series for one route: length-weighted mean PCI and
/// summed disease quantities per year. Interior missing years are filled by
/// linear interpolation (they are separately reported by `validate`).
pub fn build_series(records: &[DetectionRecord], route_id: &str) -> Result<RouteSeries, DataError> {
    let rows: Vec<&DetectionRecord> = records.iter().filter(|r| r.route_id == route_id).collect();
    if rows.is_empty() {
        return Err(DataError::UnknownRoute {
            route_id: route_id.to_string(),
        });
    }

    let mut codes: BTreeSet<String> = BTreeSet::new();
    for r in &rows {
        codes.extend(r.diseases.keys().cloned());
    }

    // Aggregate per observed year.
    let mut per_year: BTreeMap<i32, (f64, f64, BTreeMap<String, f64>)> = BTreeMap::new();
    for r in &rows {
        let entry = per_year
            .entry(r.year)
            .or_insert_with(|| (0.0, 0.0, BTreeMap::new()));
        let len = r.length_m();
        entry.0 += r.pci * len;
        entry.1 += len;
        for (code, q) in &r.diseases {
            *entry.2.entry(code.clone()).or_insert(0.0) += q;
        }
    }
    if per_year.len() < 2 {
        return Err(DataError::InsufficientYears {
            route_id: route_id.to_string(),
            years: per_year.len(),
        });
    }

    let observed_years: Vec<i32> = per_year.keys().copied().collect();
    let first = observed_years[0];
    let last = *observed_years.last().expect("non-empty");

    let mut years = Vec::new();
    let mut pci = Vec::new();
    let mut diseases: BTreeMap<String, Vec<f64>> =
        codes.iter().map(|c| (c.clone(), Vec::new())).collect();

    // Walk the contiguous year range, interpolating between observed years.
    let mut prev_observed = first;
    for year in first..=last {
        years.push(year);
        if let Some((wsum, wlen, dis)) = per_year.get(&year) {
            pci.push(wsum / wlen);
            for code in &codes {
                diseases
                    .get_mut(code)
                    .expect("code present")
                    .push(dis.get(code).copied().unwrap_or(0.0));
            }
            prev_observed = year;
        } else {
            let next_observed = *observed_years
                .iter()
                .find(|y| **y > year)
                .expect("gap is interior");
            let frac = (year - prev_observed) as f64 / (next_observed - prev_observed) as f64;
            let (pw, pl, pd) = &per_year[&prev_observed];
            let (nw, nl, nd) = &per_year[&next_observed];
            let p_pci = pw / pl;
            let n_pci = nw / nl;
            pci.push(p_pci + (n_pci - p_pci) * frac);
            for code in &codes {
                let pv = pd.get(code).copied().unwrap_or(0.0);
                let nv = nd.get(code).copied().unwrap_or(0.0);
                diseases
                    .get_mut(code)
                    .expect("code present")
                    .push(pv + (nv - pv) * frac);
            }
        }
    }

    Ok(RouteSeries {
        route_id: route_id.to_string(),
        years,
        pci,
        diseases,
    })
}

/// Re-buckets raw detection rows onto the fixed evaluation grid.
///
/// For every (route, year), units of `unit_m` metres are laid out on the
/// grid (boundaries at multiples of `unit_m`) across the surveyed extent.
/// Each unit takes the overlap-length-weighted mean PCI of the rows covering
/// it and a proportional share of their disease quantities, so total
/// quantities are conserved when rows align with the grid. Units with no
/// coverage are omitted.
pub fn to_evaluation_units(records: &[DetectionRecord], unit_m: f64) -> Vec<DetectionRecord> {
    assert!(unit_m > 0.0, "unit width must be positive");

    let mut by_route_year: BTreeMap<(&str, i32), Vec<&DetectionRecord>> = BTreeMap::new();
    for r in records {
        by_route_year
            .entry((r.route_id.as_str(), r.year))
            .or_default()
            .push(r);
    }

    let mut units = Vec::new();
    for ((route_id, year), rows) in by_route_year {
        let min_start = rows
            .iter()
            .map(|r| r.segment_start_m)
            .fold(f64::INFINITY, f64::min);
        let max_end = rows
            .iter()
            .map(|r| r.segment_end_m)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut cursor = (min_start / unit_m).floor() * unit_m;
        while cursor < max_end {
            let unit_start = cursor;
            let unit_end = cursor + unit_m;
            cursor = unit_end;

            let mut covered = 0.0;
            let mut pci_weighted = 0.0;
            let mut diseases: BTreeMap<String, f64> = BTreeMap::new();
            for r in &rows {
                let overlap =
                    (r.segment_end_m.min(unit_end) - r.segment_start_m.max(unit_start)).max(0.0);
                if overlap <= 0.0 {
                    continue;
                }
                covered += overlap;
                pci_weighted += r.pci * overlap;
                let share = overlap / r.length_m();
                for (code, q) in &r.diseases {
                    *diseases.entry(code.clone()).or_insert(0.0) += q * share;
                }
            }
            if covered <= 0.0 {
                continue;
            }
            units.push(DetectionRecord {
                route_id: route_id.to_string(),
                segment_start_m: unit_start,
                segment_end_m: unit_end,
                year,
                pci: pci_weighted / covered,
                diseases,
            });
        }
    }
    units.sort_by(|a, b| {
        (&a.route_id, a.year, a.segment_start_m)
            .partial_cmp(&(&b.route_id, b.year, b.segment_start_m))
            .expect("finite bounds")
    });
    units
}
