//! Runs a scenario through fusion with and without map priors.

use std::sync::Arc;

use serde::Serialize;

use super::{generate, Scenario, SimError, SimOutput};
use crate::eval::{evaluate, AteReport, DelocMetric, EvalOptions, Trajectory};
use crate::fusion::{FusionConfig, FusionSession, OutputMode, SessionStats, StepRecord};
use crate::geom::Pose;
use crate::mapgraph::MapGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Gps,
    Map,
    Cap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorEvent {
    pub t: f64,
    pub kind: PriorKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmReport {
    pub map_priors: bool,
    /// Errors after the best rigid alignment.
    pub aligned: AteReport,
    /// Errors in the map frame as estimated, no alignment.
    pub global: AteReport,
    pub stats: SessionStats,
    pub degraded: bool,
    pub priors: Vec<PriorEvent>,
    #[serde(skip)]
    pub records: Vec<StepRecord>,
    #[serde(skip)]
    pub trajectory: Vec<(f64, Pose)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub with_map: ArmReport,
    pub without_map: ArmReport,
    #[serde(skip)]
    pub sim: SimOutput,
}

impl ScenarioReport {
    /// Aligned RMSE with map priors over aligned RMSE without.
    pub fn rmse_ratio(&self) -> f64 {
        self.with_map.aligned.rmse / self.without_map.aligned.rmse
    }
}

fn priors(records: &[StepRecord]) -> Vec<PriorEvent> {
    let mut out = Vec::new();
    for r in records {
        for (fired, kind) in [(r.gps_prior, PriorKind::Gps), (r.map_prior, PriorKind::Map), (r.cap_prior, PriorKind::Cap)] {
            if fired {
                out.push(PriorEvent { t: r.t, kind });
            }
        }
    }
    out
}

/// Fuses one simulated stream and scores the result against truth.
pub fn run_arm(
    map: Option<Arc<MapGraph>>,
    sim: &SimOutput,
    cfg: &FusionConfig,
    mode: OutputMode,
    metric: DelocMetric,
) -> Result<ArmReport, SimError> {
    let map_priors = cfg.map_priors && map.is_some();
    let mut session = FusionSession::new(map, cfg.clone())?;
    let records = session.run(sim.frames())?;
    if !session.is_initialized() {
        return Err(SimError::NotInitialized {
            samples: session.initializer().samples().len(),
            required: cfg.init.samples_required,
        });
    }
    let trajectory = session.trajectory(mode);
    let est = Trajectory::new(trajectory.clone())?;
    let gt = Trajectory::new(sim.truth.clone())?;
    let opts = EvalOptions {
        metric,
        ..EvalOptions::default()
    };
    let aligned = evaluate(&est, &gt, &opts)?;
    let global = evaluate(&est, &gt, &EvalOptions { align: false, ..opts })?;
    Ok(ArmReport {
        map_priors,
        aligned,
        global,
        stats: session.stats().clone(),
        degraded: session.is_degraded(),
        priors: priors(&records),
        records,
        trajectory,
    })
}

/// Simulates `scenario` on `map` and fuses it twice, with map priors as in
/// `cfg` forced on and then off. Online trajectories are scored.
pub fn evaluate_scenario(map: Arc<MapGraph>, scenario: &Scenario, cfg: &FusionConfig) -> Result<ScenarioReport, SimError> {
    let sim = generate(&map, scenario)?;
    let on = FusionConfig {
        map_priors: true,
        ..cfg.clone()
    };
    let off = FusionConfig {
        map_priors: false,
        ..cfg.clone()
    };
    let with_map = run_arm(Some(map.clone()), &sim, &on, OutputMode::Online, DelocMetric::Max)?;
    let without_map = run_arm(Some(map), &sim, &off, OutputMode::Online, DelocMetric::Max)?;
    Ok(ScenarioReport {
        with_map,
        without_map,
        sim,
    })
}
