//! Running a scenario end to end and writing its artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use trussbot::controller::{xavier_init, ControllerParams};
use trussbot::design::{binarization_penalties, hard_snap, volume_fractions, DesignMatrix, Projection};
use trussbot::optimizer::{write_history_jsonl, CodesignRun, HistoryRecord};
use trussbot::sim::{
    rollout, rollout_grad, write_trajectory_csv, GradRequest, RolloutRecord, Scene, TrajectorySummary,
};
use trussbot::verify::{finite_diff_grad, relative_error, FDConfig};

use crate::ablation::{apply_ablation, trial_flags};
use crate::config::ScenarioConfig;
use crate::heuristics::init_heuristic;
use crate::metrics::{export_metrics, FinalEval, Metrics};
use crate::render::{render_frames, Trajectory};
use crate::{ExperimentError, Result};

pub const METRICS_FILE: &str = "metrics.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const DESIGN_FILE: &str = "design.json";
pub const CONTROLLER_FILE: &str = "controller.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ERROR_FILE: &str = "error.json";

/// The final design together with the config that places it in the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub config: ScenarioConfig,
    pub z: DesignMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub metrics: Metrics,
    /// Loss of the initial design and controller over the full rollout.
    pub initial_loss: f64,
    pub history: Vec<HistoryRecord>,
    pub metrics_path: PathBuf,
    pub history_path: PathBuf,
    pub trajectory_path: PathBuf,
    pub design_path: PathBuf,
    pub controller_path: PathBuf,
    pub summary_path: PathBuf,
    pub frames: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
}

impl RunArtifacts {
    /// Every file the run claims to have written.
    pub fn files(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![
            &self.metrics_path,
            &self.history_path,
            &self.trajectory_path,
            &self.design_path,
            &self.controller_path,
            &self.summary_path,
        ];
        v.extend(self.frames.iter().map(PathBuf::as_path));
        v.extend(self.checkpoints.iter().map(PathBuf::as_path));
        v
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    scenario: &'a str,
    error: String,
    exit_code: i32,
}

/// Rollout projection for a design that may already be discrete.
fn eval_ratios(z: &DesignMatrix, beta: f64) -> Result<Vec<[f64; 3]>> {
    let p = if z.is_one_hot() { Projection::Discrete } else { Projection::Performance { beta } };
    Ok(p.project(z)?)
}

fn write_history(path: &Path, history: &[HistoryRecord]) -> Result<()> {
    write_history_jsonl(history, BufWriter::new(File::create(path)?))?;
    Ok(())
}

/// Runs `cfg`, writing artifacts into `out_dir`. On failure an `error.json`
/// (and the history so far, if any) is left in `out_dir`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    let result = run_inner(cfg, out_dir);
    if let Err(e) = &result {
        let rec = ErrorRecord { scenario: &cfg.name, error: e.to_string(), exit_code: e.exit_code() };
        if let Ok(text) = serde_json::to_string_pretty(&rec) {
            let _ = std::fs::write(out_dir.join(ERROR_FILE), text + "\n");
        }
    }
    result
}

fn run_inner(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    let clock = Instant::now();
    let scene = cfg.scene()?;
    let lattice = scene.lattice.clone();
    let z0 = init_heuristic(cfg.init_heuristic, &lattice, &cfg.heuristic, cfg.seed)?;
    let ck_dir = (cfg.optimizer.checkpoint_every > 0).then(|| out_dir.join("checkpoints"));
    if let Some(d) = &ck_dir {
        std::fs::create_dir_all(d)?;
    }
    let (z, ccfg) = apply_ablation(
        cfg.ablation,
        cfg.init_heuristic,
        z0,
        &lattice,
        &cfg.optimizer,
        cfg.codesign_config(ck_dir.as_deref()),
    )?;
    let beta = ccfg.projection.beta;
    let theta0 = xavier_init(cfg.seed, scene.controller_dims(cfg.physics.hidden))?;
    let initial_loss = rollout(&scene, &eval_ratios(&z, beta)?, &theta0)?.loss;
    let history_path = out_dir.join(HISTORY_FILE);

    let (z_final, theta, history) = if cfg.optimizes_anything() {
        let mut run = CodesignRun::new(scene.clone(), z, theta0, ccfg)?;
        if let Err(e) = run.run() {
            write_history(&history_path, &run.history)?;
            return Err(e.into());
        }
        let r = run.into_result();
        (r.z, r.theta, r.history)
    } else {
        (z, theta0, Vec::new())
    };
    write_history(&history_path, &history)?;

    let z_eval = if z_final.is_one_hot() { z_final } else { hard_snap(&z_final) };
    let ratios = eval_ratios(&z_eval, beta)?;
    let record = rollout(&scene, &ratios, &theta)?;
    let (v, v_act) = volume_fractions(&ratios);
    let g_bin = binarization_penalties(&ratios, 1e-6).g_bin;
    let final_eval = FinalEval { loss: record.loss, v, v_act, g_bin };

    let trajectory_path = out_dir.join(TRAJECTORY_FILE);
    write_trajectory_csv(&record, scene.sim.dt, BufWriter::new(File::create(&trajectory_path)?))?;
    let design_path = out_dir.join(DESIGN_FILE);
    let design = DesignFile { config: cfg.clone(), z: z_eval.clone() };
    std::fs::write(&design_path, serde_json::to_string_pretty(&design)? + "\n")?;
    let controller_path = out_dir.join(CONTROLLER_FILE);
    std::fs::write(&controller_path, serde_json::to_string(&theta)? + "\n")?;
    let summary_path = out_dir.join(SUMMARY_FILE);
    write_summary(&summary_path, &record, &final_eval, initial_loss)?;

    let frames = if cfg.render_stride > 0 {
        let traj = Trajectory::from_record(&record);
        render_frames(&traj, &z_eval, &lattice, &scene.sim.ground, &out_dir.join("frames"), cfg.render_stride)?
    } else {
        Vec::new()
    };
    let checkpoints = match &ck_dir {
        Some(d) => {
            let mut v: Vec<PathBuf> = std::fs::read_dir(d)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
            v.sort();
            v
        }
        None => Vec::new(),
    };

    let metrics =
        export_metrics(&cfg.name, cfg.seed, &history, &final_eval, clock.elapsed().as_secs_f64(), HISTORY_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);
    std::fs::write(&metrics_path, metrics.to_json())?;
    log::info!("{}: final displacement {:.4} m", cfg.name, metrics.final_displacement_m);
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        metrics,
        initial_loss,
        history,
        metrics_path,
        history_path,
        trajectory_path,
        design_path,
        controller_path,
        summary_path,
        frames,
        checkpoints,
    })
}

fn write_summary(path: &Path, record: &RolloutRecord, eval: &FinalEval, initial_loss: f64) -> Result<()> {
    let head = record.head_index;
    let start = record.states[0].x[head];
    let end = record.final_state.x[head];
    let extra = BTreeMap::from([
        ("V".to_string(), eval.v),
        ("V_act".to_string(), eval.v_act),
        ("g_bin".to_string(), eval.g_bin),
        ("initial_loss".to_string(), initial_loss),
        ("head_travel_x_m".to_string(), end.x - start.x),
        ("head_elevation_m".to_string(), end.y - start.y),
    ]);
    let summary = TrajectorySummary::from_record(record, extra);
    std::fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

/// Worker cap from `TRUSSBOT_WORKERS`, defaulting to the available cores.
pub fn worker_count() -> usize {
    std::env::var("TRUSSBOT_WORKERS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Config of a lettered trial derived from `base`.
pub fn trial_config(base: &ScenarioConfig, trial: char) -> Result<ScenarioConfig> {
    let mut cfg = base.clone();
    cfg.ablation = trial_flags(trial)?;
    cfg.name = format!("{}_trial_{trial}", base.name);
    Ok(cfg)
}

/// Runs the given trials into `out_dir/trial_<x>` on at most `workers`
/// threads. Results come back in the order of `trials`.
pub fn run_trials(
    base: &ScenarioConfig,
    trials: &[char],
    out_dir: &Path,
    workers: usize,
) -> Vec<(char, Result<RunArtifacts>)> {
    let jobs: Vec<(char, Result<ScenarioConfig>)> = trials.iter().map(|&t| (t, trial_config(base, t))).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<RunArtifacts>>>> = jobs.iter().map(|_| Default::default()).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some((t, cfg)) = jobs.get(i) else { break };
                let res = match cfg {
                    Ok(cfg) => run_scenario(cfg, &out_dir.join(format!("trial_{t}"))),
                    Err(e) => Err(ExperimentError::Config(e.to_string())),
                };
                *slots[i].lock().unwrap() = Some(res);
            });
        }
    });
    jobs.iter().zip(slots).map(|((t, _), s)| (*t, s.into_inner().unwrap().unwrap())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckEntry {
    pub param: &'static str,
    pub index: usize,
    pub adjoint: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub steps: usize,
    pub h: f64,
    pub entries: Vec<GradcheckEntry>,
    pub max_rel_error: f64,
}

/// Adjoint against central differences for the scenario's initial design
/// and controller over `steps` steps, on randomly sampled coordinates.
pub fn gradcheck(cfg: &ScenarioConfig, steps: usize, n_theta: usize, n_z: usize, h: f64) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mut scene: Scene = cfg.scene()?;
    scene.sim.total_steps = steps;
    scene.sim.grad_steps = steps;
    let z = init_heuristic(cfg.init_heuristic, &scene.lattice, &cfg.heuristic, cfg.seed)?;
    let theta = xavier_init(cfg.seed, scene.controller_dims(cfg.physics.hidden))?;
    let proj = Projection::Performance { beta: cfg.codesign_config(None).projection.beta };
    let g = rollout_grad(&scene, &z, &proj, &theta, GradRequest::default())?;
    let loss = |z: &DesignMatrix, th: &ControllerParams| -> trussbot::Result<f64> {
        Ok(rollout(&scene, &proj.project(z)?, th)?.loss)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let th0 = theta.to_flat();
    let z0 = z.to_flat();
    let ti: Vec<usize> = (0..n_theta).map(|_| rng.gen_range(0..th0.len())).collect();
    let zi: Vec<usize> = (0..n_z).map(|_| rng.gen_range(0..z0.len())).collect();
    let fd_t = finite_diff_grad(|p| loss(&z, &theta.with_flat(p)?), &th0, &FDConfig::indices(h, ti))?;
    let fd_z = finite_diff_grad(|p| loss(&DesignMatrix::from_flat(p), &theta), &z0, &FDConfig::indices(h, zi))?;
    let an_t = g.dtheta.to_flat();
    let an_z: Vec<f64> = g.dz.iter().flatten().copied().collect();

    let mut entries = Vec::new();
    for (param, fd, an) in [("theta", &fd_t, &an_t), ("z", &fd_z, &an_z)] {
        let scale = fd.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
        for &(i, f) in fd.iter() {
            let rel = relative_error(an[i], f, 1e-6 * scale);
            entries.push(GradcheckEntry { param, index: i, adjoint: an[i], finite_difference: f, rel_error: rel });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport { steps, h, entries, max_rel_error })
}
