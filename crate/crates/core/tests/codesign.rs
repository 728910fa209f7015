use trussbot::controller::xavier_init;
use trussbot::design::{DesignMatrix, ACTUATOR, SKELETON, VOID};
use trussbot::error::Error;
use trussbot::lattice::{build_grid, Vec2};
use trussbot::optimizer::{
    run_codesign, schedule_pass, CodesignConfig, CodesignRun, MaterialLock, PassKind, ScheduleConfig,
};
use trussbot::sim::{Scene, SimConfig};

fn small_scene(steps: usize) -> Scene {
    let lattice = build_grid(3, 3, 0.1, Vec2::new(0.1, 0.0)).unwrap();
    Scene::new(lattice, SimConfig { total_steps: steps, grad_steps: steps, ..SimConfig::default() })
}

/// Starts in the air: with infinite friction a grounded head is pinned and
/// every gradient of `x_head(T)` vanishes.
fn airborne_scene(steps: usize) -> Scene {
    let lattice = build_grid(3, 3, 0.1, Vec2::new(0.1, 1.0)).unwrap();
    Scene::new(lattice, SimConfig { total_steps: steps, grad_steps: steps, ..SimConfig::default() })
}

fn start(scene: &Scene, seed: u64) -> (DesignMatrix, trussbot::controller::ControllerParams) {
    let z = DesignMatrix::uniform(scene.lattice.num_edges());
    (z, xavier_init(seed, scene.controller_dims(8)).unwrap())
}

fn config(iters: usize) -> CodesignConfig {
    CodesignConfig { schedule: ScheduleConfig::scaled(iters), ..CodesignConfig::default() }
}

#[test]
fn zero_budget_returns_inputs() {
    let scene = small_scene(16);
    let (z, theta) = start(&scene, 1);
    let out = run_codesign(scene, z.clone(), theta.clone(), config(0)).unwrap();
    assert_eq!(out.z, z);
    assert_eq!(out.theta, theta);
    assert!(out.history.is_empty());
}

#[test]
fn full_schedule_conformance() {
    let scene = small_scene(24);
    let (z, theta) = start(&scene, 2);
    let cfg = config(300);
    let sched = cfg.schedule;
    let out = run_codesign(scene, z, theta, cfg).unwrap();
    let h = &out.history;
    assert_eq!(h.len(), 300);

    assert_eq!(h[0].t_grad, 2048);
    assert_eq!(h[80].t_grad, 2048);
    assert_eq!(h[115].t_grad, 3072);
    assert!(h[150..].iter().all(|r| r.t_grad == 4096));
    assert!(h.windows(2).all(|w| w[1].t_grad >= w[0].t_grad));

    assert!(h[..=110].iter().all(|r| r.delta_v == 0.0));
    assert!(h[150..].iter().all(|r| (r.delta_v - 0.03).abs() < 1e-15));
    assert!(h.windows(2).all(|w| w[1].delta_v >= w[0].delta_v));

    for r in &h[..240] {
        let cycle = r.iter % 5;
        let expected_design = cycle < 3;
        assert_eq!(r.pass != PassKind::Controller, expected_design, "iter {}", r.iter);
        assert_eq!(r.pass, schedule_pass(r.iter, &sched));
    }
    assert!(h[..240].iter().any(|r| r.pass == PassKind::Stability));
    assert!(h[..240].iter().any(|r| r.pass == PassKind::Performance));
    assert!(h[240..].iter().all(|r| r.pass == PassKind::Controller));

    let frozen = &h[240].z_sha256;
    assert!(h[240..].iter().all(|r| &r.z_sha256 == frozen));
    assert!(h[240..].iter().all(|r| r.g_bin == 0.0));
    assert!(out.z.is_one_hot());
    assert_eq!(trussbot::optimizer::design_sha256(&out.z), *frozen);
    // the design did move before the snap
    assert_ne!(h[0].z_sha256, h[239].z_sha256);
}

#[test]
fn resume_is_bit_exact() {
    let scene = small_scene(24);
    let (z, theta) = start(&scene, 3);
    let cfg = config(30);

    let straight = run_codesign(scene.clone(), z.clone(), theta.clone(), cfg.clone()).unwrap();

    // stop once before the snap and once after it
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let mut run = CodesignRun::new(scene.clone(), z, theta, cfg.clone()).unwrap();
    for stop in [13, 26] {
        while run.state.iter < stop {
            run.step().unwrap();
        }
        run.checkpoint().save(&path).unwrap();
        drop(run);
        let ck = trussbot::optimizer::Checkpoint::load(&path).unwrap();
        run = CodesignRun::resume(scene.clone(), cfg.clone(), ck).unwrap();
    }
    run.run().unwrap();
    let resumed = run.into_result();
    assert_eq!(resumed.history, straight.history);
    assert_eq!(resumed.z, straight.z);
    assert_eq!(resumed.theta.to_flat(), straight.theta.to_flat());
}

#[test]
fn frozen_entities_do_not_change() {
    let scene = airborne_scene(24);
    let (z, theta) = start(&scene, 4);

    let cfg = CodesignConfig { freeze_design: true, ..config(15) };
    let out = run_codesign(scene.clone(), z.clone(), theta.clone(), cfg).unwrap();
    assert!(out.history.iter().all(|r| r.pass == PassKind::Controller && r.z_sha256 == out.history[0].z_sha256));
    assert_eq!(out.z, z);
    assert_ne!(out.history[0].theta_sha256, out.history[14].theta_sha256);

    let cfg = CodesignConfig { freeze_controller: true, ..config(15) };
    let out = run_codesign(scene, z.clone(), theta.clone(), cfg).unwrap();
    assert!(out.history.iter().all(|r| r.theta_sha256 == theta.sha256()));
    assert!(out.history.iter().filter(|r| r.pass == PassKind::Controller).all(|r| r.frozen));
    assert_eq!(out.theta, theta);
    assert_ne!(out.z, z);
}

#[test]
fn material_lock_holds_through_the_snap() {
    let scene = small_scene(24);
    let (z, theta) = start(&scene, 7);
    let ne = scene.lattice.num_edges();
    let dominant: Vec<usize> = (0..ne).map(|e| if e % 3 == 0 { ACTUATOR } else { SKELETON }).collect();
    let cfg =
        CodesignConfig { material_lock: Some(MaterialLock { dominant: dominant.clone(), shift: 0.05 }), ..config(20) };
    let out = run_codesign(scene, z, theta, cfg).unwrap();
    assert!(out.history.iter().all(|r| !r.diverged));
    assert!(out.z.is_one_hot());
    for (state, want) in out.z.argmax_rows().into_iter().zip(dominant) {
        assert!(state == VOID || state == want);
    }
    // post-snap passes evaluate the one-hot rows themselves
    let snapped = out.history.iter().rev().find(|r| r.pass == PassKind::Controller).unwrap();
    assert_eq!(snapped.g_bin, 0.0);
}

#[test]
fn repeated_divergence_aborts_with_history() {
    // a step far beyond the stability limit of the skeleton springs
    let lattice = build_grid(3, 3, 0.1, Vec2::new(0.1, 0.0)).unwrap();
    let scene = Scene::new(lattice, SimConfig { dt: 0.1, total_steps: 50, grad_steps: 50, ..SimConfig::default() });
    let (z, theta) = start(&scene, 5);
    let mut run = CodesignRun::new(scene, z.clone(), theta, config(10)).unwrap();
    let err = run.run().unwrap_err();
    assert!(matches!(err, Error::Aborted { iter: 2, count: 3, .. }), "{err}");
    assert_eq!(run.history.len(), 3);
    assert!(run.history.iter().all(|r| r.diverged));
    assert_eq!(run.state.move_scale, 0.125);
    assert_eq!(run.state.z, z);
}

#[test]
fn inconsistent_inputs_are_rejected() {
    let scene = small_scene(16);
    let (_, theta) = start(&scene, 6);
    let wrong = DesignMatrix::uniform(scene.lattice.num_edges() + 1);
    assert!(matches!(CodesignRun::new(scene.clone(), wrong, theta.clone(), config(5)), Err(Error::InvalidArgument(_))));
    let cfg = CodesignConfig { design_grad_clip: 0.0, ..config(5) };
    let z = DesignMatrix::uniform(scene.lattice.num_edges());
    assert!(CodesignRun::new(scene, z, theta, cfg).is_err());
}
