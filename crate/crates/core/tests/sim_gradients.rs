use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trussbot::controller::{xavier_init, ControllerParams};
use trussbot::design::{DesignMatrix, Projection};
use trussbot::lattice::{build_grid, Vec2};
use trussbot::sim::{rollout, rollout_grad, AdjointStorage, Friction, GradRequest, GroundModel, Scene, SimConfig};
use trussbot::verify::{finite_diff_grad, relative_error, FDConfig};

fn airborne_scene(steps: usize) -> Scene {
    let lattice = build_grid(3, 3, 0.1, Vec2::new(0.1, 1.0)).unwrap();
    let sim = SimConfig {
        total_steps: steps,
        grad_steps: steps,
        damping: 0.0,
        ground: GroundModel::flat(-100.0),
        ..SimConfig::default()
    };
    Scene::new(lattice, sim)
}

fn random_design(n: usize, seed: u64) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DesignMatrix::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect())
}

fn lively_theta(scene: &Scene, seed: u64) -> ControllerParams {
    let mut theta = xavier_init(seed, scene.controller_dims(8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for b in theta.b2.iter_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    theta
}

fn loss_at(scene: &Scene, z: &DesignMatrix, proj: &Projection, theta: &ControllerParams) -> f64 {
    rollout(scene, &proj.project(z).unwrap(), theta).unwrap().loss
}

#[test]
fn contact_free_gradients_match_finite_differences() {
    let scene = airborne_scene(64);
    let z = random_design(scene.lattice.num_edges(), 3);
    let theta = lively_theta(&scene, 5);
    let proj = Projection::Performance { beta: 20.0 };
    let g = rollout_grad(&scene, &z, &proj, &theta, GradRequest::default()).unwrap();
    assert_eq!(g.record.contact_events, 0);

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let th0 = theta.to_flat();
    let idx: Vec<usize> = (0..20).map(|_| rng.gen_range(0..th0.len())).collect();
    let fd = finite_diff_grad(
        |p| Ok(loss_at(&scene, &z, &proj, &theta.with_flat(p).unwrap())),
        &th0,
        &FDConfig::indices(1e-5, idx),
    )
    .unwrap();
    let an = g.dtheta.to_flat();
    let scale = fd.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    for (i, f) in fd {
        let err = relative_error(an[i], f, 1e-6 * scale);
        assert!(err < 1e-4, "theta[{i}]: adjoint {} fd {f} rel {err}", an[i]);
    }

    let z0 = z.to_flat();
    let idx: Vec<usize> = (0..10).map(|_| rng.gen_range(0..z0.len())).collect();
    let fd = finite_diff_grad(
        |p| Ok(loss_at(&scene, &DesignMatrix::from_flat(p), &proj, &theta)),
        &z0,
        &FDConfig::indices(1e-4, idx),
    )
    .unwrap();
    let an: Vec<f64> = g.dz.iter().flatten().copied().collect();
    let scale = fd.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    for (i, f) in fd {
        let err = relative_error(an[i], f, 1e-6 * scale);
        assert!(err < 1e-4, "z[{i}]: adjoint {} fd {f} rel {err}", an[i]);
    }
}

#[test]
fn void_edge_gradient_flows_through_leakage_terms() {
    let scene = airborne_scene(64);
    let ne = scene.lattice.num_edges();
    let mut z = random_design(ne, 9);
    z.rows[4] = [1.0, 0.0, 0.0];
    let theta = lively_theta(&scene, 2);
    let proj = Projection::Performance { beta: 20.0 };
    let g = rollout_grad(&scene, &z, &proj, &theta, GradRequest::default()).unwrap();
    let fd = finite_diff_grad(
        |p| Ok(loss_at(&scene, &DesignMatrix::from_flat(p), &proj, &theta)),
        &z.to_flat(),
        &FDConfig::indices(1e-4, vec![12, 13, 14]),
    )
    .unwrap();
    for (i, f) in fd {
        let a = g.dz[i / 3][i % 3];
        assert!(relative_error(a, f, 1e-12) < 1e-3, "z[{i}]: {a} vs {f}");
    }
}

#[test]
fn stability_projection_uses_straight_through_gradient() {
    let scene = airborne_scene(32);
    let z = random_design(scene.lattice.num_edges(), 4);
    let theta = lively_theta(&scene, 8);
    let stab = Projection::Stability { beta_stab: 500.0, beta_ste: 20.0 };
    let g = rollout_grad(&scene, &z, &stab, &theta, GradRequest::default()).unwrap();
    assert_eq!(g.dz, stab.vjp(&z, &g.dratios));
    assert!(g.dz.iter().flatten().any(|v| v.abs() > 0.0));
}

#[test]
fn checkpoint_mode_gives_identical_gradients() {
    let mut scene = airborne_scene(200);
    scene.sim.grad_steps = 150;
    let z = random_design(scene.lattice.num_edges(), 1);
    let theta = lively_theta(&scene, 3);
    let proj = Projection::Performance { beta: 20.0 };
    let full = rollout_grad(&scene, &z, &proj, &theta, GradRequest::default()).unwrap();
    for every in [1, 7, 64, 200, 500] {
        scene.sim.storage = AdjointStorage::Checkpoint { every };
        let ck = rollout_grad(&scene, &z, &proj, &theta, GradRequest::default()).unwrap();
        assert_eq!(ck.dz, full.dz, "every = {every}");
        assert_eq!(ck.dtheta, full.dtheta);
        assert_eq!(ck.loss.to_bits(), full.loss.to_bits());
    }
}

#[test]
fn gradient_requests_are_independent() {
    let scene = airborne_scene(40);
    let z = random_design(scene.lattice.num_edges(), 6);
    let theta = lively_theta(&scene, 1);
    let proj = Projection::Performance { beta: 20.0 };
    let both = rollout_grad(&scene, &z, &proj, &theta, GradRequest::default()).unwrap();
    let d = rollout_grad(&scene, &z, &proj, &theta, GradRequest { design: true, controller: false }).unwrap();
    let c = rollout_grad(&scene, &z, &proj, &theta, GradRequest { design: false, controller: true }).unwrap();
    assert_eq!(d.dz, both.dz);
    assert_eq!(c.dtheta, both.dtheta);
    assert!(d.dtheta.to_flat().iter().all(|&v| v == 0.0));
}

#[test]
fn truncated_window_differs_and_full_window_is_deterministic() {
    let mut scene = airborne_scene(64);
    let z = random_design(scene.lattice.num_edges(), 2);
    let theta = lively_theta(&scene, 4);
    let proj = Projection::Performance { beta: 20.0 };
    let a = rollout_grad(&scene, &z, &proj, &theta, GradRequest::default()).unwrap();
    let b = rollout_grad(&scene, &z, &proj, &theta, GradRequest::default()).unwrap();
    assert_eq!(a, b);
    scene.sim.grad_steps = 16;
    let t = rollout_grad(&scene, &z, &proj, &theta, GradRequest::default()).unwrap();
    assert_eq!(t.loss, a.loss);
    assert_ne!(t.dtheta, a.dtheta);
}

#[test]
fn contact_rich_gradients_match_away_from_branch_switches() {
    // Dropped from a small height with sliding friction so impacts, sticking
    // and sliding all occur and the head node actually moves.
    let lattice = build_grid(4, 4, 0.1, Vec2::new(0.1, 0.02)).unwrap();
    let sim = SimConfig {
        total_steps: 256,
        grad_steps: 256,
        friction: Friction::Coulomb { mu: 2.5 },
        ..SimConfig::default()
    };
    let scene = Scene::new(lattice, sim);
    let z = random_design(scene.lattice.num_edges(), 21);
    let theta = lively_theta(&scene, 22);
    let proj = Projection::Performance { beta: 20.0 };
    let g = rollout_grad(&scene, &z, &proj, &theta, GradRequest::default()).unwrap();
    assert!(g.record.contact_events > 0);
    let sig = g.record.contact_signature;

    let th0 = theta.to_flat();
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let an = g.dtheta.to_flat();
    let mut checked = 0;
    let mut tries = 0;
    while checked < 10 && tries < 400 {
        tries += 1;
        let i = rng.gen_range(0..th0.len());
        let eval = |delta: f64| {
            let mut p = th0.clone();
            p[i] += delta;
            rollout(&scene, &proj.project(&z).unwrap(), &theta.with_flat(&p).unwrap()).unwrap()
        };
        let (rp, rm) = (eval(h), eval(-h));
        if rp.contact_signature != sig || rm.contact_signature != sig {
            continue;
        }
        let f = (rp.loss - rm.loss) / (2.0 * h);
        if f.abs() < 1e-6 {
            continue;
        }
        let err = relative_error(an[i], f, 1e-9);
        assert!(err < 1e-3, "theta[{i}]: adjoint {} fd {f} rel {err}", an[i]);
        checked += 1;
    }
    assert_eq!(checked, 10, "too few coordinates away from contact switches");
}
