//! Stage driver: forecast, route ranking, treatment recommendation, and the
//! budget-cut plan, each writing its artifacts under the output directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::domain::{
    build_series, load_detection, load_maintenance, load_route_meta, pci_band, pci_band_label,
    to_evaluation_units, validate, Budget, BudgetScope, DetectionRecord, MaintenanceRecord,
    Discretizer, RouteMeta, SegmentId, EVALUATION_UNIT_M,
};
use crate::forecast::{
    fit_mlr, forecast_diseases, predict_pci, select_features, train_lstm, Forecast,
    ForecastError, HiddenChoice, LstmTrainConfig,
};
use crate::priority::{
    bayes_opt, encode_features, fit_logistic, learn_maintenance_net, priority_list, rank_routes,
    segment_maintenance_prob, BayesOptConfig, FeatureVocab, LogisticConfig, SegmentFeatures,
};
use crate::recommend::{
    action_set, dqn_train, greedy_plan, learn_decision_nets, location_prob, measure_prob,
    reachable_states, treatment_prob, DecisionExample, DqnConfig, EffectivenessTable, MdpState,
    NetworkEnv, PlanEntry, StateContext, StateEncoder,
};

use super::seed::stage_seed;
use super::{PipelineConfig, PipelineError};

/// The four pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Predict,
    RankRoutes,
    Recommend,
    Plan,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Predict => "predict",
            Stage::RankRoutes => "rank-routes",
            Stage::Recommend => "recommend",
            Stage::Plan => "plan",
        }
    }
}

/// Wall-clock timing of one executed stage.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub name: &'static str,
    pub seconds: f64,
}

/// One row of the route ranking.
#[derive(Debug, Clone)]
pub struct RouteRank {
    pub rank: usize,
    pub route_id: String,
    pub predicted_pci: f64,
    pub p_route: f64,
    pub p_segment_assign: f64,
    pub priority: f64,
}

/// Outcome of the final budget cut.
#[derive(Debug, Clone)]
pub struct PlanSummary {
    pub segments: usize,
    pub selected: usize,
    pub selected_cost: f64,
    pub budget: f64,
}

/// Everything a run learned, stage by stage. Each executed stage appears
/// exactly once in `stages`.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub stages: Vec<StageReport>,
    /// Route -> (disease code, correlation) pairs that entered its forecast.
    pub selected_features: BTreeMap<String, Vec<(String, f64)>>,
    pub route_table: Vec<RouteRank>,
    pub plan: Option<PlanSummary>,
    /// Per-epoch training loss of the treatment policy.
    pub dqn_loss: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Runs every stage. See [`run_until`].
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    run_until(cfg, Stage::Plan)
}

/// Runs the pipeline up to and including `last`, writing each stage's
/// artifacts and a final `report.txt`. Deterministic for a given
/// configuration: all randomness derives from the master seed.
pub fn run_until(cfg: &PipelineConfig, last: Stage) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| PipelineError::Write {
        path: cfg.out_dir.display().to_string(),
        source,
    })?;
    let mut report = RunReport::default();
    report.warnings.extend(inputs.warnings.iter().cloned());

    let t = Instant::now();
    let forecasts = stage_predict(cfg, &inputs, &mut report)?;
    report.stages.push(StageReport {
        name: Stage::Predict.name(),
        seconds: t.elapsed().as_secs_f64(),
    });
    if last == Stage::Predict {
        write_report_text(cfg, &report)?;
        return Ok(report);
    }

    let units = prepare_units(cfg, &inputs)?;
    let t = Instant::now();
    let ranked = stage_rank_routes(cfg, &inputs, &units, &forecasts, &mut report)?;
    report.stages.push(StageReport {
        name: Stage::RankRoutes.name(),
        seconds: t.elapsed().as_secs_f64(),
    });
    if last == Stage::RankRoutes {
        write_report_text(cfg, &report)?;
        return Ok(report);
    }

    let t = Instant::now();
    let recommended = stage_recommend(cfg, &inputs, &units, &forecasts, &ranked, &mut report)?;
    report.stages.push(StageReport {
        name: Stage::Recommend.name(),
        seconds: t.elapsed().as_secs_f64(),
    });
    if last == Stage::Recommend {
        write_report_text(cfg, &report)?;
        return Ok(report);
    }

    let t = Instant::now();
    let summary = stage_plan(cfg, &inputs, &ranked, &recommended, &mut report)?;
    report.stages.push(StageReport {
        name: Stage::Plan.name(),
        seconds: t.elapsed().as_secs_f64(),
    });
    report.plan = Some(summary);
    write_report_text(cfg, &report)?;
    Ok(report)
}

struct Inputs {
    /// All detection rows, uncut; stages apply their own year cuts.
    detection: Vec<DetectionRecord>,
    maintenance: Vec<MaintenanceRecord>,
    metas: BTreeMap<String, RouteMeta>,
    /// Sorted routes with detection data inside the modeling window.
    route_ids: Vec<String>,
    warnings: Vec<String>,
}

fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs, PipelineError> {
    let detection = load_detection(&cfg.detection_path, None)?;
    let maintenance = load_maintenance(&cfg.maintenance_path, None)?;
    let metas_vec = load_route_meta(&cfg.routes_path)?;

    let mut warnings = detection.warnings.clone();
    warnings.extend(maintenance.warnings.iter().cloned());
    for issue in validate(&detection.records, &maintenance.records).issues {
        warnings.push(issue.to_string());
    }

    let mut route_ids: Vec<String> = Vec::new();
    for rec in &detection.records {
        if rec.year <= cfg.dqn.end_year && !route_ids.contains(&rec.route_id) {
            route_ids.push(rec.route_id.clone());
        }
    }
    route_ids.sort();
    if route_ids.is_empty() {
        return Err(PipelineError::BadInput {
            message: format!(
                "{} has no detection rows in or before {}",
                cfg.detection_path.display(),
                cfg.dqn.end_year
            ),
        });
    }
    let metas: BTreeMap<String, RouteMeta> = metas_vec
        .into_iter()
        .map(|m| (m.route_id.clone(), m))
        .collect();
    for id in &route_ids {
        if !metas.contains_key(id) {
            return Err(PipelineError::BadInput {
                message: format!(
                    "route {id} has no row in {}",
                    cfg.routes_path.display()
                ),
            });
        }
    }
    Ok(Inputs {
        detection: detection.records,
        maintenance: maintenance.records,
        metas,
        route_ids,
        warnings,
    })
}

/// Detection rows within the modeling window (years up to `dqn.end_year`).
fn detection_cut<'a>(cfg: &PipelineConfig, inputs: &'a Inputs) -> Vec<&'a DetectionRecord> {
    inputs
        .detection
        .iter()
        .filter(|r| r.year <= cfg.dqn.end_year)
        .collect()
}

/// Maintenance rows within the modeling window.
fn maintenance_cut<'a>(cfg: &PipelineConfig, inputs: &'a Inputs) -> Vec<&'a MaintenanceRecord> {
    inputs
        .maintenance
        .iter()
        .filter(|r| r.year <= cfg.dqn.end_year)
        .collect()
}

/// Any treatment overlapping the span strictly before `year`.
fn treated_before(
    maintenance: &[MaintenanceRecord],
    route: &str,
    start_m: f64,
    end_m: f64,
    year: i32,
) -> bool {
    maintenance.iter().any(|m| {
        m.route_id == route
            && m.year < year
            && m.segment_start_m < end_m
            && m.segment_end_m > start_m
    })
}

/// Any treatment overlapping the span within `years` (inclusive).
fn treated_within(
    maintenance: &[MaintenanceRecord],
    route: &str,
    start_m: f64,
    end_m: f64,
    years: std::ops::RangeInclusive<i32>,
) -> bool {
    maintenance.iter().any(|m| {
        m.route_id == route
            && years.contains(&m.year)
            && m.segment_start_m < end_m
            && m.segment_end_m > start_m
    })
}

// ---------------------------------------------------------------- predict

fn stage_predict(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    report: &mut RunReport,
) -> Result<BTreeMap<String, Forecast>, PipelineError> {
    let stage = Stage::Predict.name();
    let predict_seed = stage_seed(cfg.seed, stage);
    let cut: Vec<DetectionRecord> = detection_cut(cfg, inputs).into_iter().cloned().collect();

    let mut forecasts = BTreeMap::new();
    for route in &inputs.route_ids {
        let series = build_series(&cut, route).map_err(PipelineError::stage(stage))?;
        let base_year = *series.years.last().expect("non-empty series");
        let horizon = (cfg.dqn.end_year + 1 - base_year).max(1) as usize;

        let selection = match select_features(&series, cfg.corr_threshold) {
            Ok(sel) => sel,
            // A route whose condition never moved has nothing to regress on;
            // fall through to persistence rather than abort the whole run.
            Err(ForecastError::ZeroVariance { .. }) => {
                report.warnings.push(format!(
                    "{route}: constant series, using persistence forecast"
                ));
                forecasts.insert(route.clone(), persistence(&series, horizon));
                continue;
            }
            Err(e) => return Err(PipelineError::stage(stage)(e)),
        };
        let mut codes = selection.codes();
        report.selected_features.insert(
            route.clone(),
            selection
                .ranked
                .iter()
                .map(|f| (f.code.clone(), f.correlation))
                .collect(),
        );
        if codes.is_empty() {
            report.warnings.push(format!(
                "{route}: no disease correlates with condition at |r| >= {}, using persistence forecast",
                cfg.corr_threshold
            ));
            forecasts.insert(route.clone(), persistence(&series, horizon));
            continue;
        }
        // The condition regression solves normal equations over one row per
        // surveyed year; keep enough rows above the feature count.
        let max_features = series.years.len().saturating_sub(2);
        if max_features == 0 {
            report.warnings.push(format!(
                "{route}: {} survey years cannot support the condition regression, using persistence forecast",
                series.years.len()
            ));
            forecasts.insert(route.clone(), persistence(&series, horizon));
            continue;
        }
        if codes.len() > max_features {
            report.warnings.push(format!(
                "{route}: keeping {max_features} of {} selected diseases to fit the regression",
                codes.len()
            ));
            codes.truncate(max_features);
        }
        if series.years.len() < cfg.lstm.window + 1 {
            report.warnings.push(format!(
                "{route}: {} survey years are too few for window {}, using persistence forecast",
                series.years.len(),
                cfg.lstm.window
            ));
            forecasts.insert(route.clone(), persistence(&series, horizon));
            continue;
        }

        let lstm_cfg = LstmTrainConfig {
            learning_rate: cfg.lstm.learning_rate,
            window: cfg.lstm.window,
            epochs: cfg.lstm.epochs,
            hidden: HiddenChoice::Select(cfg.lstm.hidden_candidates.clone()),
            seed: stage_seed(predict_seed, route),
            ..LstmTrainConfig::default()
        };
        let model =
            train_lstm::<f64>(&series, &codes, &lstm_cfg).map_err(PipelineError::stage(stage))?;
        let diseases =
            forecast_diseases(&model, &series, horizon).map_err(PipelineError::stage(stage))?;

        let rows: Vec<Vec<f64>> = (0..series.years.len())
            .map(|i| codes.iter().map(|c| series.diseases[c][i]).collect())
            .collect();
        let mlr = fit_mlr(&rows, &series.pci).map_err(PipelineError::stage(stage))?;
        let pci = predict_pci(&mlr, &codes, &diseases).map_err(PipelineError::stage(stage))?;

        forecasts.insert(
            route.clone(),
            Forecast {
                route_id: route.clone(),
                base_year,
                years: (1..=horizon as i32).map(|k| base_year + k).collect(),
                diseases,
                pci,
            },
        );
    }

    let mut rows = Vec::new();
    for forecast in forecasts.values() {
        for (i, year) in forecast.years.iter().enumerate() {
            for (code, values) in &forecast.diseases {
                rows.push(vec![
                    forecast.route_id.clone(),
                    year.to_string(),
                    "disease".to_string(),
                    code.clone(),
                    values[i].to_string(),
                ]);
            }
            rows.push(vec![
                forecast.route_id.clone(),
                year.to_string(),
                "pci".to_string(),
                String::new(),
                forecast.pci[i].to_string(),
            ]);
        }
    }
    write_csv(
        &cfg.out_dir.join("forecast.csv"),
        &["route_id", "year", "kind", "code", "value"],
        &rows,
    )?;
    Ok(forecasts)
}

/// Flat forecast holding the last observed condition, with no diseases.
fn persistence(series: &crate::domain::RouteSeries, horizon: usize) -> Forecast {
    let base_year = *series.years.last().expect("non-empty series");
    let last = *series.pci.last().expect("non-empty series");
    Forecast {
        route_id: series.route_id.clone(),
        base_year,
        years: (1..=horizon as i32).map(|k| base_year + k).collect(),
        diseases: BTreeMap::new(),
        pci: vec![last; horizon],
    }
}

// ------------------------------------------------------------ rank-routes

/// Evaluation units and the disease discretizers shared by later stages.
struct Units {
    /// 10 m unit rows for all years in the modeling window.
    rows: Vec<DetectionRecord>,
    /// Per route: latest surveyed year in the window.
    base_year: BTreeMap<String, i32>,
    /// Total disease quantity per km, quartile bins.
    dd: Discretizer,
    /// Worst single disease per km, quartile bins.
    sd: Discretizer,
}

fn prepare_units(cfg: &PipelineConfig, inputs: &Inputs) -> Result<Units, PipelineError> {
    let cut: Vec<DetectionRecord> = detection_cut(cfg, inputs).into_iter().cloned().collect();
    let rows = to_evaluation_units(&cut, EVALUATION_UNIT_M);
    if rows.is_empty() {
        return Err(PipelineError::BadInput {
            message: "no survey span covers a full evaluation unit".to_string(),
        });
    }
    let mut base_year = BTreeMap::new();
    for r in &rows {
        let entry = base_year.entry(r.route_id.clone()).or_insert(r.year);
        *entry = (*entry).max(r.year);
    }
    let totals: Vec<f64> = rows.iter().map(unit_total_per_km).collect();
    let maxes: Vec<f64> = rows.iter().map(unit_max_per_km).collect();
    let dd = Discretizer::from_quantiles(&totals, 4, "D").expect("rows checked non-empty");
    let sd = Discretizer::from_quantiles(&maxes, 4, "S").expect("rows checked non-empty");
    Ok(Units {
        rows,
        base_year,
        dd,
        sd,
    })
}

fn unit_len_km(rec: &DetectionRecord) -> f64 {
    (rec.segment_end_m - rec.segment_start_m) / 1000.0
}

fn unit_total_per_km(rec: &DetectionRecord) -> f64 {
    rec.diseases.values().sum::<f64>() / unit_len_km(rec)
}

fn unit_max_per_km(rec: &DetectionRecord) -> f64 {
    rec.diseases.values().fold(0.0f64, |a, b| a.max(*b)) / unit_len_km(rec)
}

fn unit_segment_id(rec: &DetectionRecord) -> SegmentId {
    SegmentId {
        route_id: rec.route_id.clone(),
        start_m: rec.segment_start_m.round() as i64,
        end_m: rec.segment_end_m.round() as i64,
    }
}

fn unit_features(
    unit: &DetectionRecord,
    meta: &RouteMeta,
    dd: &Discretizer,
    treated: bool,
) -> SegmentFeatures {
    SegmentFeatures {
        base_type: meta.base_type.clone(),
        pavement_type: meta.pavement_type.clone(),
        road_grade: meta.road_grade.clone(),
        disease_degree: dd.label(unit_total_per_km(unit)).to_string(),
        treated_before: flag(treated),
        admin_grade: meta.admin_grade.clone(),
        area: meta.area.clone(),
        special_section: if meta.special_section { "1" } else { "0" }.to_string(),
    }
}

fn flag(yes: bool) -> String {
    if yes { "yes" } else { "no" }.to_string()
}

/// Stage-two context carried into recommendation and planning.
struct Ranked {
    /// Route ids in priority order.
    order: Vec<String>,
    vocab: FeatureVocab,
    /// Historical (features, was maintained in the window) pairs.
    training: Vec<(SegmentFeatures, bool)>,
    /// Per route: current unit rows with their features, in span order.
    scoring: BTreeMap<String, Vec<(DetectionRecord, SegmentFeatures)>>,
}

fn stage_rank_routes(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    units: &Units,
    forecasts: &BTreeMap<String, Forecast>,
    report: &mut RunReport,
) -> Result<Ranked, PipelineError> {
    let stage = Stage::RankRoutes.name();
    let start = cfg.dqn.start_year;
    let end = cfg.dqn.end_year;

    let mut training = Vec::new();
    let mut scoring: BTreeMap<String, Vec<(DetectionRecord, SegmentFeatures)>> = BTreeMap::new();
    for route in &inputs.route_ids {
        let meta = &inputs.metas[route];
        let years: Vec<i32> = {
            let mut ys: Vec<i32> = units
                .rows
                .iter()
                .filter(|u| &u.route_id == route)
                .map(|u| u.year)
                .collect();
            ys.sort_unstable();
            ys.dedup();
            ys
        };
        // Snapshot the network as it looked before the maintenance window to
        // pair unit features with what was subsequently maintained.
        let feature_year = match years.iter().rev().find(|y| **y < start) {
            Some(y) => *y,
            None => {
                let earliest = years[0];
                report.warnings.push(format!(
                    "{route}: no survey precedes {start}; training features use {earliest}"
                ));
                earliest
            }
        };
        for unit in units.rows.iter().filter(|u| &u.route_id == route) {
            if unit.year == feature_year {
                let htr = treated_before(
                    &inputs.maintenance,
                    route,
                    unit.segment_start_m,
                    unit.segment_end_m,
                    start,
                );
                let label = treated_within(
                    &inputs.maintenance,
                    route,
                    unit.segment_start_m,
                    unit.segment_end_m,
                    start..=end,
                );
                training.push((unit_features(unit, meta, &units.dd, htr), label));
            }
            if unit.year == units.base_year[route] {
                let htr = treated_before(
                    &inputs.maintenance,
                    route,
                    unit.segment_start_m,
                    unit.segment_end_m,
                    end + 1,
                );
                scoring
                    .entry(route.clone())
                    .or_default()
                    .push((unit.clone(), unit_features(unit, meta, &units.dd, htr)));
            }
        }
        if !scoring.contains_key(route) {
            return Err(PipelineError::BadInput {
                message: format!("route {route} has no scorable evaluation units"),
            });
        }
    }

    let vocab = FeatureVocab::from_features(
        training
            .iter()
            .map(|(f, _)| f)
            .chain(scoring.values().flatten().map(|(_, f)| f)),
    );
    let net = learn_maintenance_net(&training, &vocab, 1.0, None)
        .map_err(PipelineError::stage(stage))?;

    let mut entries: Vec<(String, f64, f64)> = Vec::new();
    for route in &inputs.route_ids {
        let feats = &scoring[route];
        let mut p_sum = 0.0;
        for (_, f) in feats {
            p_sum += segment_maintenance_prob(&net, f).map_err(PipelineError::stage(stage))?;
        }
        let p_seg = p_sum / feats.len() as f64;
        let predicted = *forecasts[route].pci.last().expect("horizon >= 1");
        entries.push((route.clone(), predicted, p_seg));
    }
    let ranking = rank_routes(&entries).map_err(PipelineError::stage(stage))?;

    let mut rows = Vec::new();
    for (i, r) in ranking.iter().enumerate() {
        rows.push(vec![
            (i + 1).to_string(),
            r.route_id.clone(),
            r.predicted_pci.to_string(),
            r.p_route.to_string(),
            r.p_segment_assign.to_string(),
            r.priority.to_string(),
        ]);
        report.route_table.push(RouteRank {
            rank: i + 1,
            route_id: r.route_id.clone(),
            predicted_pci: r.predicted_pci,
            p_route: r.p_route,
            p_segment_assign: r.p_segment_assign,
            priority: r.priority,
        });
    }
    write_csv(
        &cfg.out_dir.join("route_priority.csv"),
        &[
            "rank",
            "route_id",
            "predicted_pci",
            "p_route",
            "p_segment_assign",
            "priority",
        ],
        &rows,
    )?;

    Ok(Ranked {
        order: ranking.into_iter().map(|r| r.route_id).collect(),
        vocab,
        training,
        scoring,
    })
}

// -------------------------------------------------------------- recommend

/// Stage-three context: the greedy recommendation per unit, in plan order.
struct Recommended {
    by_segment: BTreeMap<SegmentId, PlanEntry>,
}

fn stage_recommend(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    units: &Units,
    forecasts: &BTreeMap<String, Forecast>,
    ranked: &Ranked,
    report: &mut RunReport,
) -> Result<Recommended, PipelineError> {
    let stage = Stage::Recommend.name();
    let history: Vec<MaintenanceRecord> =
        maintenance_cut(cfg, inputs).into_iter().cloned().collect();

    let actions = action_set(&history).map_err(PipelineError::stage(stage))?;
    let effectiveness =
        EffectivenessTable::from_history(&history, 1.0).map_err(PipelineError::stage(stage))?;
    let costs: Vec<f64> = history.iter().map(|m| m.cost_per_km).collect();
    let co = Discretizer::from_quantiles(&costs, 3, "C").expect("history checked non-empty");

    // Decision examples: the categorical context each historical treatment
    // was chosen in, for the measure/location/treatment posteriors.
    let mut examples = Vec::new();
    for rec in &history {
        let Some((dd, sd)) = disease_bands_at(units, rec) else {
            report.warnings.push(format!(
                "no detection units overlap {} [{}, {}] by {}; decision example skipped",
                rec.route_id, rec.segment_start_m, rec.segment_end_m, rec.year
            ));
            continue;
        };
        let meta = match inputs.metas.get(&rec.route_id) {
            Some(meta) => meta,
            None => {
                report.warnings.push(format!(
                    "route {} appears only in maintenance; decision example skipped",
                    rec.route_id
                ));
                continue;
            }
        };
        examples.push(DecisionExample {
            measure: rec.measure.clone(),
            location: rec.location.clone(),
            treatment: rec.treatment_code.clone(),
            htr: flag(treated_before(
                &inputs.maintenance,
                &rec.route_id,
                rec.segment_start_m,
                rec.segment_end_m,
                rec.year,
            )),
            pt: meta.pavement_type.clone(),
            bt: meta.base_type.clone(),
            pi: pci_band_label(pci_band(rec.pre_pci)),
            dd,
            sd,
            co: co.label(rec.cost_per_km).to_string(),
        });
    }
    let nets = if examples.is_empty() {
        report
            .warnings
            .push("no usable decision examples; historical probabilities omitted".to_string());
        None
    } else {
        Some(learn_decision_nets(&examples, 1.0).map_err(PipelineError::stage(stage))?)
    };

    // Route-level cost band for plan states: mean historical cost, falling
    // back to the network mean where a route has no history.
    let network_mean = costs.iter().sum::<f64>() / costs.len() as f64;
    let mut route_co: BTreeMap<&str, String> = BTreeMap::new();
    for route in &inputs.route_ids {
        let route_costs: Vec<f64> = history
            .iter()
            .filter(|m| &m.route_id == route)
            .map(|m| m.cost_per_km)
            .collect();
        let mean = if route_costs.is_empty() {
            network_mean
        } else {
            route_costs.iter().sum::<f64>() / route_costs.len() as f64
        };
        route_co.insert(route, co.label(mean).to_string());
    }

    let mut states = Vec::new();
    for route in &ranked.order {
        let forecast = &forecasts[route];
        let meta = &inputs.metas[route];
        for (unit, _) in &ranked.scoring[route] {
            let context = StateContext {
                htr: flag(treated_before(
                    &inputs.maintenance,
                    route,
                    unit.segment_start_m,
                    unit.segment_end_m,
                    cfg.dqn.end_year + 1,
                )),
                pt: meta.pavement_type.clone(),
                bt: meta.base_type.clone(),
                dd: units.dd.label(unit_total_per_km(unit)).to_string(),
                sd: units.sd.label(unit_max_per_km(unit)).to_string(),
                co: route_co[route.as_str()].clone(),
            };
            states.push(MdpState::new(
                unit_segment_id(unit),
                unit.pci,
                forecast.next_year_pci(),
                context,
                cfg.dqn.start_year,
            ));
        }
    }

    let closure = reachable_states(&states, &actions, &effectiveness, forecasts)
        .map_err(PipelineError::stage(stage))?;
    let encoder = StateEncoder::from_states(&closure);
    let network_km: f64 = states.iter().map(|s| s.segment.length_km()).sum();
    let mut env = NetworkEnv::new(
        &states,
        &actions,
        &effectiveness,
        forecasts,
        &encoder,
        network_km,
        cfg.dqn.start_year,
        cfg.dqn.end_year,
    )
    .map_err(PipelineError::stage(stage))?;
    let dqn_cfg = DqnConfig {
        gamma: cfg.dqn.gamma,
        learning_rate: cfg.dqn.learning_rate,
        epochs: cfg.dqn.epochs,
        seed: stage_seed(cfg.seed, stage),
        ..DqnConfig::default()
    };
    let trained = dqn_train::<f64, _>(&mut env, &dqn_cfg).map_err(PipelineError::stage(stage))?;
    report.dqn_loss = trained.loss_trace.clone();

    let plan = greedy_plan(
        &trained.network,
        &states,
        &encoder,
        &actions,
        &effectiveness,
        forecasts,
    )
    .map_err(PipelineError::stage(stage))?;

    let mut rows = Vec::new();
    let mut prob_warned = false;
    for (state, entry) in states.iter().zip(&plan) {
        let history_prob = match (&nets, entry.action.is_no_action()) {
            (Some(nets), false) => {
                match historical_prob(nets, state, &entry.action, &co) {
                    Ok(p) => p.to_string(),
                    Err(e) => {
                        if !prob_warned {
                            report.warnings.push(format!(
                                "historical treatment probability unavailable: {e}"
                            ));
                            prob_warned = true;
                        }
                        String::new()
                    }
                }
            }
            _ => String::new(),
        };
        rows.push(vec![
            state.segment.route_id.clone(),
            state.segment.start_m.to_string(),
            state.segment.end_m.to_string(),
            state.pci.to_string(),
            state.predicted_next_pci.to_string(),
            entry.action.code.clone(),
            entry.action.measure.clone(),
            entry.action.location.clone(),
            entry.q_value.to_string(),
            entry.expected_effectiveness.to_string(),
            history_prob,
        ]);
    }
    write_csv(
        &cfg.out_dir.join("recommendations.csv"),
        &[
            "route_id",
            "segment_start_m",
            "segment_end_m",
            "pci",
            "predicted_next_pci",
            "action_code",
            "measure",
            "location",
            "q_value",
            "expected_effectiveness",
            "history_prob",
        ],
        &rows,
    )?;

    Ok(Recommended {
        by_segment: plan
            .into_iter()
            .map(|entry| (entry.segment.clone(), entry))
            .collect(),
    })
}

/// Disease bands at the latest survey at or before the record's year,
/// preferring units overlapping the treated span, else the whole route.
fn disease_bands_at(units: &Units, rec: &MaintenanceRecord) -> Option<(String, String)> {
    let pick = |overlap_only: bool| -> Option<Vec<&DetectionRecord>> {
        let candidates: Vec<&DetectionRecord> = units
            .rows
            .iter()
            .filter(|u| {
                u.route_id == rec.route_id
                    && u.year <= rec.year
                    && (!overlap_only
                        || (u.segment_start_m < rec.segment_end_m
                            && u.segment_end_m > rec.segment_start_m))
            })
            .collect();
        let year = candidates.iter().map(|u| u.year).max()?;
        Some(candidates.into_iter().filter(|u| u.year == year).collect())
    };
    let chosen = pick(true).or_else(|| pick(false))?;
    let n = chosen.len() as f64;
    let total = chosen.iter().map(|u| unit_total_per_km(u)).sum::<f64>() / n;
    let worst = chosen.iter().map(|u| unit_max_per_km(u)).sum::<f64>() / n;
    Some((
        units.dd.label(total).to_string(),
        units.sd.label(worst).to_string(),
    ))
}

/// P(this treatment | most likely location and measure, its cost band) under
/// the decision networks.
fn historical_prob(
    nets: &crate::recommend::DecisionNets,
    state: &MdpState,
    action: &crate::recommend::TreatmentAction,
    co: &Discretizer,
) -> Result<f64, crate::recommend::RecommendError> {
    let measures = measure_prob(nets, &state.htr, &state.pt, &state.bt, &state.pi, &state.dd)?;
    let locations = location_prob(nets, &state.dd, &state.sd)?;
    let best = |dist: &[(String, f64)]| {
        dist.iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite probabilities"))
            .expect("non-empty domain")
            .0
            .clone()
    };
    let treatments = treatment_prob(
        nets,
        &best(&locations),
        &best(&measures),
        co.label(action.cost_per_km),
    )?;
    Ok(treatments
        .iter()
        .find(|(code, _)| code == &action.code)
        .map(|(_, p)| *p)
        .unwrap_or(0.0))
}

// ------------------------------------------------------------------- plan

fn stage_plan(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    ranked: &Ranked,
    recommended: &Recommended,
    report: &mut RunReport,
) -> Result<PlanSummary, PipelineError> {
    let stage = Stage::Plan.name();

    let labels: Vec<bool> = ranked.training.iter().map(|(_, l)| *l).collect();
    let rows: Vec<Vec<f64>> = ranked
        .training
        .iter()
        .map(|(f, _)| encode_features(f, &ranked.vocab))
        .collect::<Result<_, _>>()
        .map_err(PipelineError::stage(stage))?;
    let logistic_cfg = LogisticConfig {
        seed: stage_seed(cfg.seed, stage),
        ..LogisticConfig::default()
    };
    let model =
        fit_logistic::<f64>(&rows, &labels, &logistic_cfg).map_err(PipelineError::stage(stage))?;

    // Score every current unit; the optimizer then searches the whole input
    // cube as a sanity anchor for the achievable maximum.
    let mut scored: BTreeMap<&str, Vec<(SegmentId, Vec<f64>, f64)>> = BTreeMap::new();
    let mut best_real = f64::NEG_INFINITY;
    for route in &ranked.order {
        let mut segs = Vec::new();
        for (unit, feats) in &ranked.scoring[route] {
            let encoded =
                encode_features(feats, &ranked.vocab).map_err(PipelineError::stage(stage))?;
            let id = unit_segment_id(unit);
            let entry = recommended
                .by_segment
                .get(&id)
                .expect("recommendation exists for every scored unit");
            let cost = entry.action.cost_per_km * id.length_km();
            best_real = best_real.max(
                model
                    .score(&encoded)
                    .map_err(PipelineError::stage(stage))?,
            );
            segs.push((id, encoded, cost));
        }
        scored.insert(route, segs);
    }
    let bounds = vec![(0.0, 1.0); ranked.vocab.encoded_width()];
    let bo_cfg = BayesOptConfig {
        seed: stage_seed(cfg.seed, "plan-anchor"),
        ..BayesOptConfig::default()
    };
    let anchor = bayes_opt(
        |x: &[f64]| model.score(x).expect("bounds match the encoded width"),
        &bounds,
        &bo_cfg,
    )
    .map_err(PipelineError::stage(stage))?;
    if best_real < 0.99 * anchor.value {
        report.warnings.push(format!(
            "best scored unit ({best_real:.4}) sits well under the searched optimum ({:.4}); scores may be poorly calibrated",
            anchor.value
        ));
    }

    // Per-route ordering first; a network-scoped budget is then one greedy
    // prefix over the concatenated ranking.
    let per_route_amount = match cfg.budget_scope {
        BudgetScope::PerRoute => cfg.budget,
        BudgetScope::Network => f64::INFINITY,
    };
    let budget = Budget {
        amount: per_route_amount,
        scope: cfg.budget_scope,
    };
    let mut priority_rows = Vec::new();
    let mut plan_rows = Vec::new();
    let mut plot_files: Vec<(String, Vec<Vec<String>>, bool)> = Vec::new();
    let next_year = cfg.dqn.end_year + 1;
    let actual = actual_next_pci(inputs, next_year);
    let mut rank = 0usize;
    let mut selected_count = 0usize;
    let mut selected_cost = 0.0f64;
    let mut network_total = 0.0f64;
    let mut network_open = true;
    let mut segments = 0usize;

    for route in &ranked.order {
        let list = priority_list(&scored[route.as_str()], &model, &budget)
            .map_err(PipelineError::stage(stage))?;
        let pci_now: BTreeMap<SegmentId, f64> = ranked.scoring[route]
            .iter()
            .map(|(u, _)| (unit_segment_id(u), u.pci))
            .collect();
        let route_has_actual = list
            .entries
            .iter()
            .any(|e| actual.contains_key(&e.segment));
        if !route_has_actual {
            report.warnings.push(format!(
                "{route}: no {next_year} survey; plot omits the actual column"
            ));
        }
        let mut plot_rows = Vec::new();

        for (i, entry) in list.entries.iter().enumerate() {
            rank += 1;
            segments += 1;
            // Same prefix rule as within a route: cumulative cost runs over
            // every ranked entry, selection stops at the first overflow.
            let (cumulative, selected) = match cfg.budget_scope {
                BudgetScope::PerRoute => (entry.cumulative_cost, i < list.selected_prefix_len),
                BudgetScope::Network => {
                    network_total += entry.cost;
                    let take = network_open && network_total <= cfg.budget;
                    network_open = take;
                    (network_total, take)
                }
            };
            if selected {
                selected_count += 1;
                selected_cost += entry.cost;
            }

            priority_rows.push(vec![
                rank.to_string(),
                entry.segment.route_id.clone(),
                entry.segment.start_m.to_string(),
                entry.segment.end_m.to_string(),
                entry.score.to_string(),
                entry.cost.to_string(),
                cumulative.to_string(),
                selected.to_string(),
            ]);

            let rec = &recommended.by_segment[&entry.segment];
            plan_rows.push(vec![
                rank.to_string(),
                entry.segment.route_id.clone(),
                entry.segment.start_m.to_string(),
                entry.segment.end_m.to_string(),
                rec.action.code.clone(),
                rec.action.measure.clone(),
                rec.action.location.clone(),
                rec.action.cost_per_km.to_string(),
                rec.q_value.to_string(),
                rec.expected_effectiveness.to_string(),
            ]);

            let mut plot_row = vec![
                (i + 1).to_string(),
                pci_now[&entry.segment].to_string(),
            ];
            if route_has_actual {
                plot_row.push(
                    actual
                        .get(&entry.segment)
                        .map(|v| v.to_string())
                        .unwrap_or_default(),
                );
            }
            plot_row.push(rec.expected_effectiveness.to_string());
            plot_rows.push(plot_row);
        }
        plot_files.push((route.clone(), plot_rows, route_has_actual));
    }

    write_csv(
        &cfg.out_dir.join("priority.csv"),
        &[
            "rank",
            "route_id",
            "segment_start_m",
            "segment_end_m",
            "score",
            "cost",
            "cumulative_cost",
            "selected",
        ],
        &priority_rows,
    )?;
    write_csv(
        &cfg.out_dir.join("plan.csv"),
        &[
            "priority_index",
            "route_id",
            "segment_start_m",
            "segment_end_m",
            "action_code",
            "measure",
            "location",
            "cost_per_km",
            "q_value",
            "expected_effectiveness",
        ],
        &plan_rows,
    )?;

    let plots_dir = cfg.out_dir.join("plots");
    std::fs::create_dir_all(&plots_dir).map_err(|source| PipelineError::Write {
        path: plots_dir.display().to_string(),
        source,
    })?;
    let pci_col = format!("pci_{}", cfg.dqn.end_year);
    let actual_col = format!("pci_{next_year}_actual");
    for (route, rows, has_actual) in plot_files {
        let mut header = vec!["priority_index", pci_col.as_str()];
        if has_actual {
            header.push(actual_col.as_str());
        }
        header.push("recommended_effectiveness");
        write_csv(&plots_dir.join(format!("{route}.csv")), &header, &rows)?;
    }

    Ok(PlanSummary {
        segments,
        selected: selected_count,
        selected_cost,
        budget: cfg.budget,
    })
}

/// Unit-level condition surveyed the year after the modeling window, keyed by
/// segment, for plotting predictions against what actually happened.
fn actual_next_pci(inputs: &Inputs, year: i32) -> BTreeMap<SegmentId, f64> {
    let next: Vec<DetectionRecord> = inputs
        .detection
        .iter()
        .filter(|r| r.year == year)
        .cloned()
        .collect();
    to_evaluation_units(&next, EVALUATION_UNIT_M)
        .iter()
        .map(|u| (unit_segment_id(u), u.pci))
        .collect()
}

// ------------------------------------------------------------------ output

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), PipelineError> {
    let wrap = |source: std::io::Error| PipelineError::Write {
        path: path.display().to_string(),
        source,
    };
    let as_io = |e: csv::Error| std::io::Error::new(std::io::ErrorKind::Other, e);
    let file = std::fs::File::create(path).map_err(wrap)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(as_io).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(as_io).map_err(wrap)?;
    }
    w.flush().map_err(wrap)
}

fn write_report_text(cfg: &PipelineConfig, report: &RunReport) -> Result<(), PipelineError> {
    use std::fmt::Write as _;
    let mut text = String::from("pipeline report\n\nstages:\n");
    for s in &report.stages {
        let _ = writeln!(text, "  {:<12} {:>8.2}s", s.name, s.seconds);
    }
    if !report.selected_features.is_empty() {
        text.push_str("\nforecast features:\n");
        for (route, feats) in &report.selected_features {
            let list = feats
                .iter()
                .map(|(code, r)| format!("{code} (r={r:.3})"))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(text, "  {route}: {list}");
        }
    }
    if !report.route_table.is_empty() {
        text.push_str("\nroute ranking:\n");
        for r in &report.route_table {
            let _ = writeln!(
                text,
                "  {}. {}  predicted {:.1}  P(route) {:.4}  P(assign) {:.4}  priority {:.4}",
                r.rank, r.route_id, r.predicted_pci, r.p_route, r.p_segment_assign, r.priority
            );
        }
    }
    if !report.dqn_loss.is_empty() {
        let n = report.dqn_loss.len();
        let tenth = (n / 10).max(1);
        let mean = |slice: &[f64]| slice.iter().sum::<f64>() / slice.len() as f64;
        let _ = writeln!(
            text,
            "\npolicy training loss: first {:.3}, last {:.3} ({n} epochs)",
            mean(&report.dqn_loss[..tenth]),
            mean(&report.dqn_loss[n - tenth..])
        );
    }
    if let Some(plan) = &report.plan {
        let budget = if plan.budget.is_finite() {
            format!("{:.1}", plan.budget)
        } else {
            "unlimited".to_string()
        };
        let _ = writeln!(
            text,
            "\nplan: {} of {} units selected, cost {:.1}, budget {budget}",
            plan.selected, plan.segments, plan.selected_cost
        );
    }
    if !report.warnings.is_empty() {
        text.push_str("\nwarnings:\n");
        for w in &report.warnings {
            let _ = writeln!(text, "  - {w}");
        }
    }
    let path = cfg.out_dir.join("report.txt");
    std::fs::write(&path, text).map_err(|source| PipelineError::Write {
        path: path.display().to_string(),
        source,
    })
}
