//! Deterministic synthetic survey generator for demos and tests.
//!
//! Condition is a fixed per-route linear function of the disease quantities,
//! which grow between treatments and fall back after one, so the generated
//! history has exactly the structure the pipeline assumes: diseases strongly
//! anti-correlated with condition, visible condition jumps the year after a
//! treatment, and maintenance records whose costs vary by treatment code.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{
    write_detection, write_maintenance, write_route_meta, DetectionRecord, MaintenanceRecord,
    RouteMeta, TrafficVolume,
};

use super::PipelineError;

const DISEASES: [&str; 3] = ["crack", "pothole", "rut"];
const MEASURES: [&str; 3] = ["overlay", "patch", "seal"];
const LOCATIONS: [&str; 2] = ["surface", "base"];
const SEGMENT_M: f64 = 30.0;
/// Last generated survey year.
const FINAL_YEAR: i32 = 2021;
/// Per-year growth of each disease relative to its base quantity.
const GROWTH: f64 = 0.3;

/// A generated data set, ready to write or to feed straight into the
/// pipeline's loaders.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub detection: Vec<DetectionRecord>,
    pub maintenance: Vec<MaintenanceRecord>,
    pub routes: Vec<RouteMeta>,
}

/// Generates `routes` x `segments` histories over `years` survey years ending
/// in 2021, with `treatments` distinct treatment codes. Identical inputs give
/// identical output. Fails on zero counts or a single year (nothing could be
/// forecast from one observation).
pub fn gen_synthetic(
    seed: u64,
    routes: usize,
    segments: usize,
    years: usize,
    treatments: usize,
) -> Result<Synthetic, PipelineError> {
    if routes == 0 || segments == 0 || treatments == 0 {
        return Err(PipelineError::Config {
            message: "synthetic counts must be at least 1".to_string(),
        });
    }
    if years < 2 {
        return Err(PipelineError::Config {
            message: format!("synthetic history needs at least two years, got {years}"),
        });
    }
    let first_year = FINAL_YEAR - (years as i32 - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Synthetic {
        detection: Vec::new(),
        maintenance: Vec::new(),
        routes: Vec::new(),
    };

    for r in 0..routes {
        let route_id = format!("R{r:03}");
        out.routes.push(route_meta(&route_id, r));
        // Shared per-route weights keep route-level condition an exact linear
        // function of the route's summed disease quantities.
        let weights: Vec<f64> = DISEASES.iter().map(|_| rng.gen_range(2.5..5.0)).collect();

        for s in 0..segments {
            let start_m = s as f64 * SEGMENT_M;
            let end_m = start_m + SEGMENT_M;
            let healthy = rng.gen_range(86.0..94.0);
            let bases: Vec<f64> = DISEASES.iter().map(|_| rng.gen_range(0.5..1.8)).collect();

            let mut quantities = vec![vec![0.0; DISEASES.len()]; years];
            let mut pci = vec![0.0; years];
            let mut treated = vec![false; years];
            let mut growth = 0.0;
            for j in 0..years {
                let mut load = 0.0;
                for (d, base) in bases.iter().enumerate() {
                    let q = base * (1.0 + GROWTH * growth) + rng.gen_range(0.0..0.15);
                    quantities[j][d] = q;
                    load += weights[d] * q;
                }
                pci[j] = (healthy - load - rng.gen_range(0.0..0.4)).clamp(0.0, 100.0);
                growth += 1.0;
                // Sparse schedule: at most a couple of repairs per segment,
                // staggered across segments and routes.
                if j >= 2 && (j + r + s) % 5 == 0 {
                    treated[j] = true;
                    growth = 0.0;
                }
            }

            for j in 0..years {
                out.detection.push(DetectionRecord {
                    route_id: route_id.clone(),
                    segment_start_m: start_m,
                    segment_end_m: end_m,
                    year: first_year + j as i32,
                    pci: pci[j],
                    diseases: DISEASES
                        .iter()
                        .enumerate()
                        .map(|(d, code)| (code.to_string(), quantities[j][d]))
                        .collect(),
                });
                if treated[j] {
                    let idx = (r + s + j) % treatments;
                    let repaired_load: f64 =
                        weights.iter().zip(&bases).map(|(w, b)| w * b).sum();
                    out.maintenance.push(MaintenanceRecord {
                        route_id: route_id.clone(),
                        segment_start_m: start_m,
                        segment_end_m: end_m,
                        year: first_year + j as i32,
                        treatment_code: format!("T{:02}", idx + 1),
                        measure: MEASURES[idx % MEASURES.len()].to_string(),
                        location: LOCATIONS[idx % LOCATIONS.len()].to_string(),
                        cost_per_km: 20.0 + 15.0 * idx as f64 + rng.gen_range(-2.0..2.0),
                        pre_pci: pci[j],
                        post_pci: (healthy - repaired_load).clamp(0.0, 100.0),
                        next_year_pci: pci.get(j + 1).copied(),
                    });
                }
            }
        }
    }
    Ok(out)
}

fn route_meta(route_id: &str, r: usize) -> RouteMeta {
    RouteMeta {
        route_id: route_id.to_string(),
        road_grade: ["G1", "G2"][r % 2].to_string(),
        pavement_type: ["asphalt", "concrete"][r % 2].to_string(),
        base_type: ["gravel", "cement", "lime"][r % 3].to_string(),
        traffic_volume: [TrafficVolume::High, TrafficVolume::Medium, TrafficVolume::Low][r % 3],
        department: format!("D{}", 1 + r % 2),
        unit: format!("U{}", 1 + r % 3),
        area: ["north", "south", "east"][r % 3].to_string(),
        special_section: r % 5 == 0,
        admin_grade: ["A1", "A2"][(r / 2) % 2].to_string(),
    }
}

/// Writes a generated set as `detection.csv`, `maintenance.csv`, and
/// `routes.csv` under `dir`, creating the directory if needed.
pub fn write_synthetic(dir: &Path, data: &Synthetic) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    write_detection(&dir.join("detection.csv"), &data.detection)?;
    write_maintenance(&dir.join("maintenance.csv"), &data.maintenance)?;
    write_route_meta(&dir.join("routes.csv"), &data.routes)?;
    Ok(())
}
