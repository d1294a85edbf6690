//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantity next to its threshold.
//!
//! Criteria 4 and 11 run real training and are the slow ones (minutes on one
//! core); everything else completes in seconds.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simplicits::elastic::{
    psi, psi_gradient, psi_hessian, psi_linear, psi_neohookean, psi_stable_neohookean,
    EnergyKind, HandleTransforms,
};
use simplicits::linalg::DenseMatrix;
use simplicits::mlp::SkinningField;
use simplicits::occupancy::{self, build_occupancy_with_materials, OccupancyField};
use simplicits::scene::SceneConfig;
use simplicits::sim::{self, SimState, Stepper};
use simplicits::training;

fn parse_scene(text: &str) -> SceneConfig {
    SceneConfig::parse_str(text, std::path::Path::new("."), "acceptance").expect("valid scene")
}

fn field_of(scene: &SceneConfig) -> OccupancyField {
    build_occupancy_with_materials(&scene.geometry, scene.materials.clone()).expect("geometry")
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    values[values.len() / 2]
}

// ---------------------------------------------------------------------------
// 1. Gradient oracles

#[test]
fn criterion_01a_mlp_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let n = rng.random_range(1..4);
        let depth = rng.random_range(1..4);
        let width = rng.random_range(2..9);
        let net = SkinningField::init(n, depth, width, 9000 + trial).unwrap();
        let m = rng.random_range(2..6);
        let xs: Vec<Vector3<f64>> = (0..m)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let upstream = DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let grad = net.backward(&xs, &upstream).unwrap();
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-12);
        let scalar = |net: &SkinningField| {
            let out = net.forward_batch(&xs);
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..n {
                    s += upstream[(i, j)] * out[(i, j)];
                }
            }
            s
        };
        let h = 1e-5;
        for p in 0..net.params().len() {
            let mut plus = net.clone();
            plus.params_mut()[p] += h;
            let mut minus = net.clone();
            minus.params_mut()[p] -= h;
            let fd = (scalar(&plus) - scalar(&minus)) / (2.0 * h);
            worst = worst.max((fd - grad[p]).abs() / gnorm);
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
    println!("ACCEPTANCE 1a (mlp backward vs FD): PASS - worst rel err {worst:.2e} < 1e-5");
}

#[test]
fn criterion_01b_step_gradient_matches_finite_differences() {
    let scene = parse_scene(
        "geometry.kind = box\n\
         geometry.min = 0 0 0\n\
         geometry.max = 1 1 1\n\
         sim.barrier_dhat = 0.5\n\
         sim.cubature = 50\n\
         pins.0.region = box\n\
         pins.0.min = 0 0 0\n\
         pins.0.max = 0.3 1 1\n\
         pins.0.stiffness = 2e4\n\
         colliders.0.kind = ground\n\
         colliders.0.height = -0.4\n",
    );
    let field = field_of(&scene);
    let net = SkinningField::init(2, 2, 8, 77).unwrap();
    let cub = sim::build_cubature(&field, &net, 50, 5).unwrap();
    let stepper = Stepper::new(&cub, &scene.sim, field.bbox().diagonal()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    let fd_h = 1e-6;
    for _ in 0..20 {
        let z: Vec<f64> = (0..24).map(|_| rng.random_range(-0.02..0.02)).collect();
        let z_prev: Vec<f64> = (0..24).map(|_| rng.random_range(-0.01..0.01)).collect();
        let zdot: Vec<f64> = (0..24).map(|_| rng.random_range(-0.05..0.05)).collect();
        let t = rng.random_range(0.0..1.0);
        let kappa = 1e3;
        let grad = stepper.step_gradient(&z, &z_prev, &zdot, t, kappa);
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1.0);
        for d in 0..24 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[d] += fd_h;
            zm[d] -= fd_h;
            let fd = (stepper.step_objective(&zp, &z_prev, &zdot, t, kappa)
                - stepper.step_objective(&zm, &z_prev, &zdot, t, kappa))
                / (2.0 * fd_h);
            worst = worst.max((fd - grad[d]).abs() / gnorm);
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
    println!("ACCEPTANCE 1b (step gradient vs FD): PASS - worst rel err {worst:.2e} < 1e-5");
}

#[test]
fn criterion_01c_energy_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let kinds = [EnergyKind::Linear, EnergyKind::Neohookean, EnergyKind::StableNeohookean];
    let mut worst_grad: f64 = 0.0;
    let mut worst_hess: f64 = 0.0;
    for _ in 0..100 {
        let f = Matrix3::identity()
            + Matrix3::from_fn(|_, _| rng.random_range(-0.4..0.4));
        let (lambda, mu) = (rng.random_range(0.5..3.0), rng.random_range(0.2..2.0));
        for kind in kinds {
            let grad = psi_gradient(kind, &f, lambda, mu);
            let gscale = grad.norm().max(1.0);
            let h = 1e-6;
            for r in 0..3 {
                for c in 0..3 {
                    let mut fp = f;
                    let mut fm = f;
                    fp[(r, c)] += h;
                    fm[(r, c)] -= h;
                    let fd =
                        (psi(kind, &fp, lambda, mu) - psi(kind, &fm, lambda, mu)) / (2.0 * h);
                    worst_grad = worst_grad.max((fd - grad[(r, c)]).abs() / gscale);
                }
            }
            let hess = psi_hessian(kind, &f, lambda, mu);
            let hscale = hess.norm().max(1.0);
            let h2 = 1e-5;
            for m in 0..9 {
                let (r, c) = (m % 3, m / 3);
                let mut fp = f;
                let mut fm = f;
                fp[(r, c)] += h2;
                fm[(r, c)] -= h2;
                let gp = psi_gradient(kind, &fp, lambda, mu);
                let gm = psi_gradient(kind, &fm, lambda, mu);
                for cc in 0..3 {
                    for rr in 0..3 {
                        let fd = (gp[(rr, cc)] - gm[(rr, cc)]) / (2.0 * h2);
                        worst_hess =
                            worst_hess.max((fd - hess[(3 * cc + rr, m)]).abs() / hscale);
                    }
                }
            }
        }
    }
    assert!(worst_grad < 1e-6, "worst gradient rel err {worst_grad}");
    assert!(worst_hess < 1e-5, "worst hessian rel err {worst_hess}");
    println!(
        "ACCEPTANCE 1c (psi grad/hess vs FD): PASS - grad {worst_grad:.2e} < 1e-6, hess {worst_hess:.2e} < 1e-5"
    );
}

// ---------------------------------------------------------------------------
// 2. Monte-Carlo volume

#[test]
fn criterion_02_unit_sphere_volume() {
    let field = occupancy::build_occupancy(&occupancy::SourceSpec::Sphere {
        center: Vector3::zeros(),
        radius: 1.0,
    })
    .unwrap();
    let est = occupancy::estimate_volume(&field, 1_000_000, 202);
    let truth = 4.0 * std::f64::consts::PI / 3.0;
    let err = (est.volume - truth).abs();
    assert!(
        err <= 3.0 * est.std_error,
        "volume {} +- {} vs {truth}",
        est.volume,
        est.std_error
    );
    println!(
        "ACCEPTANCE 2 (unit sphere volume): PASS - {:.5} +- {:.5} vs {truth:.5} (|err| = {err:.5} <= 3 sigma)",
        est.volume, est.std_error
    );
}

// ---------------------------------------------------------------------------
// 3. Energy identities

#[test]
fn criterion_03_energy_identities() {
    let id = Matrix3::<f64>::identity();
    for (name, value) in [
        ("linear", psi_linear(&id, 1.3, 0.7)),
        ("neohookean", psi_neohookean(&id, 1.3, 0.7)),
        ("stable", psi_stable_neohookean(&id, 1.3, 0.7)),
    ] {
        assert!(value.abs() < 1e-15, "{name} psi(I) = {value}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let f = Matrix3::identity() + Matrix3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let r = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            rng.random_range(-3.0..3.0),
        )
        .into_inner();
        let rf = r * f;
        for kind in [EnergyKind::Linear, EnergyKind::Neohookean, EnergyKind::StableNeohookean]
        {
            let a = psi(kind, &f, 1.7, 0.9);
            let b = psi(kind, &rf, 1.7, 0.9);
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    assert!(worst < 1e-10, "rotation invariance error {worst}");
    let stretch = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
    let lin = psi_linear(&stretch, 1.0, 1.0);
    let neo = psi_neohookean(&stretch, 1.0, 1.0);
    assert!((lin - 3.375).abs() < 1e-12, "psi_lin hand value {lin}");
    assert!((neo - 2.0).abs() < 1e-12, "psi_neo hand value {neo}");
    println!(
        "ACCEPTANCE 3 (energy identities): PASS - psi(I)=0, rotation invariance {worst:.2e} < 1e-10, hand values {lin} / {neo}"
    );
}

// ---------------------------------------------------------------------------
// 4. Training sanity on the unit bar (slow: full 10k-step run)

#[test]
fn criterion_04_bar_training_gram_and_loss_trend() {
    let start = std::time::Instant::now();
    let scene = parse_scene(
        "geometry.kind = beam\n\
         geometry.origin = 0 0 0\n\
         geometry.size = 2 0.5 0.5\n\
         train.handles = 4\n\
         train.depth = 6\n\
         train.width = 64\n\
         train.steps = 10000\n\
         train.lr_start = 1e-3\n\
         train.lr_end = 1e-4\n\
         train.sigma = 0.1\n\
         train.cubature_per_step = 500\n\
         train.seed = 4\n",
    );
    let field = field_of(&scene);
    let (_, report) = training::train(&field, scene.train.clone()).unwrap();
    let deviation = report.gram_deviation();
    let steps = report.records.len();
    let tenth = steps / 10;
    let mut early: Vec<f64> =
        report.records[..tenth].iter().map(|r| r.ortho_loss).collect();
    let mut late: Vec<f64> =
        report.records[steps - tenth..].iter().map(|r| r.ortho_loss).collect();
    let early_median = median(&mut early);
    let late_median = median(&mut late);
    assert!(deviation < 0.2, "gram deviation {deviation}");
    assert!(
        late_median < early_median,
        "ortho loss did not decrease: early {early_median}, late {late_median}"
    );
    println!(
        "ACCEPTANCE 4 (bar training): PASS - |G-I|_inf = {deviation:.4} < 0.2, ortho median {early_median:.3e} -> {late_median:.3e} ({:.1} min)",
        start.elapsed().as_secs_f64() / 60.0
    );
}

// ---------------------------------------------------------------------------
// 5. Ballistic free fall

#[test]
fn criterion_05_free_fall_matches_backward_euler_closed_form() {
    let scene = parse_scene(
        "geometry.kind = box\n\
         geometry.min = 0 0 0\n\
         geometry.max = 1 1 1\n\
         sim.newton_tol = 1e-12\n\
         sim.cubature = 200\n",
    );
    let field = field_of(&scene);
    let net = SkinningField::constant(1, &[1.0]);
    let cub = sim::build_cubature(&field, &net, 200, 11).unwrap();
    let stepper = Stepper::new(&cub, &scene.sim, field.bbox().diagonal()).unwrap();
    let mut state = SimState::rest(1, scene.sim.barrier_kappa0);
    let steps = 100;
    for _ in 0..steps {
        let (next, _) = stepper.step(&state).unwrap();
        state = next;
    }
    let transforms = HandleTransforms::from_flat(state.z.clone());
    let translation = transforms.translation(0);
    let h = scene.sim.timestep;
    let n = steps as f64;
    let expected = scene.sim.gravity * h * h * n * (n + 1.0) / 2.0;
    let rel = (translation - expected).norm() / expected.norm();
    assert!(rel < 1e-8, "relative error {rel}: {translation:?} vs {expected:?}");
    assert!(transforms.linear_block(0).norm() < 1e-9, "linear block should stay zero");
    println!(
        "ACCEPTANCE 5 (ballistic free fall): PASS - translation {:.6} vs closed form {:.6}, rel err {rel:.2e} < 1e-8",
        translation.z, expected.z
    );
}

// ---------------------------------------------------------------------------
// 6. Static uniaxial stretch vs 1D oracle

#[test]
fn criterion_06_uniaxial_stretch_energy_matches_scan() {
    let start = std::time::Instant::now();
    let stretch = 1.2;
    let scene = parse_scene(
        "geometry.kind = beam\n\
         geometry.origin = 0 0 0\n\
         geometry.size = 2 0.5 0.5\n\
         material.0.region = whole\n\
         material.0.density = 1000\n\
         material.0.youngs = 5e6\n\
         material.0.poisson = 0.45\n\
         sim.gravity = 0 0 0\n\
         sim.energy = stable_neohookean\n\
         sim.newton_tol = 1e-8\n\
         sim.newton_max_iters = 12\n\
         sim.cubature = 4000\n\
         sim.pin_stiffness = 2.6e7\n\
         pins.0.region = box\n\
         pins.0.min = 0 0.19 0.19\n\
         pins.0.max = 0.15 0.31 0.31\n\
         script.0.region = box\n\
         script.0.min = 1.85 0.19 0.19\n\
         script.0.max = 2 0.31 0.31\n\
         script.0.center = 2 0.25 0.25\n\
         script.0.key.0 = 0 0 0 0 0 0 0\n\
         script.0.key.1 = 1 0.373 0 0 0 0 0\n",
    );
    // Pin centers sit at x = 0.075 and 1.925, so a far-end translation of
    // (s - 1) * 1.85 = 0.37 yields stretch s between them; 0.373 adds a hair
    // of slack for the penalty springs.
    let field = field_of(&scene);
    let net = SkinningField::constant(1, &[1.0]);
    let cub = sim::build_cubature(&field, &net, scene.sim.cubature_count, 21).unwrap();
    let stepper = Stepper::new(&cub, &scene.sim, field.bbox().diagonal()).unwrap();
    let mut state = SimState::rest(1, scene.sim.barrier_kappa0);
    for _ in 0..400 {
        let (next, _) = stepper.step(&state).unwrap();
        state = next;
    }
    let measured = cub.elastic_energy(EnergyKind::StableNeohookean, &state.z);

    // Oracle: V * min_t psi(diag(s, t, t)) by 1D scan over lateral stretch.
    let (lambda, mu) = cub.lame(0);
    let mut best = f64::INFINITY;
    let mut t = 0.5;
    while t <= 1.2 {
        let f = Matrix3::from_diagonal(&Vector3::new(stretch, t, t));
        best = best.min(psi_stable_neohookean(&f, lambda, mu));
        t += 1e-4;
    }
    let oracle = cub.volume() * best;
    let rel = (measured - oracle).abs() / oracle;
    assert!(
        rel < 0.10,
        "equilibrium energy {measured} vs oracle {oracle} (rel {rel})"
    );
    println!(
        "ACCEPTANCE 6 (uniaxial stretch): PASS - energy {measured:.1} J vs oracle {oracle:.1} J, rel {rel:.3} < 0.10 ({:.1} s)",
        start.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 7. Contact feasibility in a drop test

#[test]
fn criterion_07_drop_test_stays_feasible() {
    let scene = parse_scene(
        "geometry.kind = box\n\
         geometry.min = 0 0 0\n\
         geometry.max = 1 1 1\n\
         material.0.region = whole\n\
         material.0.youngs = 1e5\n\
         material.0.poisson = 0.4\n\
         sim.cubature = 1500\n\
         colliders.0.kind = ground\n\
         colliders.0.height = -0.05\n",
    );
    let field = field_of(&scene);
    let net = SkinningField::constant(1, &[1.0]);
    let cub = sim::build_cubature(&field, &net, scene.sim.cubature_count, 23).unwrap();
    let stepper = Stepper::new(&cub, &scene.sim, field.bbox().diagonal()).unwrap();
    let mut state = SimState::rest(1, scene.sim.barrier_kappa0);
    assert!(sim::initial_penetration(&cub, &scene.sim.colliders, &state.z).is_none());
    let mut min_distance = f64::INFINITY;
    for frame in 0..150 {
        let (next, report) = stepper.step(&state).unwrap();
        for newton in &report.newton {
            for pair in newton.objectives.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0),
                    "objective increased within a solve at frame {frame}"
                );
            }
        }
        state = next;
        for i in 0..cub.len() {
            let x = cub.deformed(i, &state.z);
            for collider in &scene.sim.colliders {
                min_distance = min_distance.min(collider.distance(&x));
            }
        }
        assert!(min_distance >= 0.0, "penetration at frame {frame}: {min_distance}");
    }
    println!(
        "ACCEPTANCE 7 (drop test): PASS - min signed distance {min_distance:.3e} >= 0 over 150 steps, Newton monotone"
    );
}

// ---------------------------------------------------------------------------
// 8. Momentum conservation

#[test]
fn criterion_08_linear_momentum_is_conserved() {
    let scene = parse_scene(
        "geometry.kind = box\n\
         geometry.min = 0 0 0\n\
         geometry.max = 1 1 1\n\
         material.0.region = whole\n\
         material.0.youngs = 1e5\n\
         material.0.poisson = 0.4\n\
         sim.gravity = 0 0 0\n\
         sim.newton_tol = 1e-12\n\
         sim.newton_max_iters = 30\n\
         sim.cubature = 400\n",
    );
    let field = field_of(&scene);
    // Constant handle plus a genuinely spatial one: momentum lives in the
    // constant direction, the affine handle makes the dynamics non-trivial.
    let net = SkinningField::affine(
        &[[0.0, 0.0, 0.0], [0.5, 0.25, -0.25]],
        &[1.0, 0.0],
        Vector3::new(0.5, 0.5, 0.5),
        1.0,
    );
    let cub = sim::build_cubature(&field, &net, scene.sim.cubature_count, 31).unwrap();
    let stepper = Stepper::new(&cub, &scene.sim, field.bbox().diagonal()).unwrap();
    let mut state = SimState::rest(2, scene.sim.barrier_kappa0);
    {
        let mut zdot = HandleTransforms::zeros(2);
        zdot.set_handle(0, &Matrix3::zeros(), &Vector3::new(0.1, -0.05, 0.2));
        zdot.set_handle(
            1,
            &Matrix3::from_diagonal(&Vector3::new(0.05, -0.03, 0.02)),
            &Vector3::zeros(),
        );
        state.zdot = zdot.as_flat().to_vec();
    }
    let p0 = cub.linear_momentum(&state.zdot);
    assert!(p0.norm() > 1.0, "initial momentum too small to measure drift");
    let mut worst_drift: f64 = 0.0;
    for _ in 0..100 {
        let (next, _) = stepper.step(&state).unwrap();
        state = next;
        let p = cub.linear_momentum(&state.zdot);
        worst_drift = worst_drift.max((p - p0).norm() / p0.norm());
    }
    assert!(worst_drift < 1e-6, "momentum drift {worst_drift}");
    println!(
        "ACCEPTANCE 8 (momentum): PASS - relative drift {worst_drift:.2e} < 1e-6 over 100 steps (|p0| = {:.2})",
        p0.norm()
    );
}

// ---------------------------------------------------------------------------
// 9. Gaussian splat transforms

#[test]
fn criterion_09_splat_covariance_transforms() {
    use simplicits::export::transform_gaussians;
    use simplicits::formats::{GaussianSplat, GaussianSplatSet};
    let net = SkinningField::constant(1, &[1.0]);
    let cov = Matrix3::new(2.0, 0.5, 0.0, 0.5, 1.0, 0.25, 0.0, 0.25, 3.0);
    // Rotation field: Z = [R - I | 0] with constant weight gives F = R.
    let r = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), 0.9).into_inner();
    let mut zr = HandleTransforms::zeros(1);
    zr.set_handle(0, &(r - Matrix3::identity()), &Vector3::zeros());
    let set = GaussianSplatSet {
        splats: vec![GaussianSplat {
            mean: Vector3::new(0.5, 0.25, 0.75),
            covariance: cov,
            opacity: 1.0,
            payload: vec![1, 2, 3],
        }],
    };
    let rotated = transform_gaussians(&set, &net, &zr);
    let mut before: Vec<f64> = cov.symmetric_eigenvalues().as_slice().to_vec();
    let mut after: Vec<f64> =
        rotated.splats[0].covariance.symmetric_eigenvalues().as_slice().to_vec();
    before.sort_by(|a, b| a.partial_cmp(b).unwrap());
    after.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut worst: f64 = 0.0;
    for (a, b) in before.iter().zip(&after) {
        worst = worst.max((a - b).abs());
    }
    assert!(worst < 1e-10, "eigenvalue drift {worst}");

    // Uniform scale: Z = [I | 0] gives F = 2I and Sigma' = 4 Sigma exactly.
    let mut zs = HandleTransforms::zeros(1);
    zs.set_handle(0, &Matrix3::identity(), &Vector3::zeros());
    let scaled = transform_gaussians(&set, &net, &zs);
    assert_eq!(scaled.splats[0].covariance, 4.0 * cov);
    assert_eq!(scaled.splats[0].payload, vec![1, 2, 3]);
    println!(
        "ACCEPTANCE 9 (splat transform): PASS - rotation eigenvalue drift {worst:.2e} < 1e-10, scale quadruples exactly"
    );
}

// ---------------------------------------------------------------------------
// 10. End-to-end determinism

#[test]
fn criterion_10_train_and_simulate_are_byte_deterministic() {
    use simplicits::cli::{cmd_simulate, cmd_train};
    let dir = tempfile::tempdir().unwrap();
    let scene_path = dir.path().join("scene.scene");
    std::fs::write(
        &scene_path,
        "geometry.kind = beam\n\
         geometry.origin = 0 0 0\n\
         geometry.size = 2 0.5 0.5\n\
         train.handles = 2\n\
         train.depth = 2\n\
         train.width = 16\n\
         train.steps = 150\n\
         train.cubature_per_step = 200\n\
         train.sigma = 0.1\n\
         train.seed = 12\n\
         sim.cubature = 300\n\
         sim.steps = 12\n\
         colliders.0.kind = ground\n\
         colliders.0.height = -3\n\
         export.formats = points\n\
         export.stride = 4\n",
    )
    .unwrap();
    let mut artifacts: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for run in 0..2 {
        let run_dir = dir.path().join(format!("run{run}"));
        std::fs::create_dir_all(&run_dir).unwrap();
        let ckpt = run_dir.join("weights.swgt");
        cmd_train(&scene_path, &ckpt, None).unwrap();
        let frames = run_dir.join("frames");
        cmd_simulate(&scene_path, &ckpt, &frames, None, None).unwrap();
        let mut files = vec![
            ("weights.swgt".to_string(), std::fs::read(&ckpt).unwrap()),
            ("weights.csv".to_string(), std::fs::read(run_dir.join("weights.csv")).unwrap()),
        ];
        let mut names: Vec<_> = std::fs::read_dir(&frames)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        for name in names {
            files.push((name.clone(), std::fs::read(frames.join(&name)).unwrap()));
        }
        artifacts.push(files);
    }
    let (a, b) = (&artifacts[0], &artifacts[1]);
    assert_eq!(a.len(), b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "file {name_a} differs between runs");
    }
    let n_files = a.len();
    println!(
        "ACCEPTANCE 10 (determinism): PASS - {n_files} artifacts byte-identical across two train+simulate runs"
    );
}

// ---------------------------------------------------------------------------
// 11. Expressivity trend on the twist scene (slow: six training runs)

fn twist_scene(handles: usize, seed: u64) -> SceneConfig {
    parse_scene(&format!(
        "geometry.kind = beam\n\
         geometry.origin = 0 0 0\n\
         geometry.size = 2 0.5 0.5\n\
         material.0.region = whole\n\
         material.0.youngs = 1e5\n\
         material.0.poisson = 0.4\n\
         train.handles = {handles}\n\
         train.depth = 3\n\
         train.width = 32\n\
         train.steps = 1500\n\
         train.cubature_per_step = 300\n\
         train.sigma = 0.1\n\
         train.seed = {seed}\n\
         sim.gravity = 0 0 0\n\
         sim.energy = stable_neohookean\n\
         sim.cubature = 800\n\
         sim.cubature_seed = 3\n\
         pins.0.region = box\n\
         pins.0.min = 0 0 0\n\
         pins.0.max = 0.15 0.5 0.5\n\
         script.0.region = box\n\
         script.0.min = 1.85 0 0\n\
         script.0.max = 2 0.5 0.5\n\
         script.0.center = 2 0.25 0.25\n\
         script.0.key.0 = 0 0 0 0 0 0 0\n\
         script.0.key.1 = 0.5 0 0 0 1.5707963267948966 0 0\n"
    ))
}

fn twist_equilibrium_energy(handles: usize, seed: u64) -> f64 {
    let scene = twist_scene(handles, seed);
    let field = field_of(&scene);
    let (net, _) = training::train(&field, scene.train.clone()).unwrap();
    let cub =
        sim::build_cubature(&field, &net, scene.sim.cubature_count, scene.sim.cubature_seed)
            .unwrap();
    let stepper = Stepper::new(&cub, &scene.sim, field.bbox().diagonal()).unwrap();
    let mut state = SimState::rest(handles, scene.sim.barrier_kappa0);
    for _ in 0..120 {
        let (next, _) = stepper.step(&state).unwrap();
        state = next;
    }
    cub.elastic_energy(scene.sim.energy, &state.z)
}

#[test]
fn criterion_11_more_handles_reach_lower_twist_energy() {
    let start = std::time::Instant::now();
    let seeds = [1u64, 2, 3];
    let mut one: Vec<f64> = seeds.iter().map(|&s| twist_equilibrium_energy(1, s)).collect();
    let mut eight: Vec<f64> = seeds.iter().map(|&s| twist_equilibrium_energy(8, s)).collect();
    let median_one = median(&mut one);
    let median_eight = median(&mut eight);
    assert!(
        median_eight <= median_one,
        "8 handles ({median_eight}) should not exceed 1 handle ({median_one})"
    );
    println!(
        "ACCEPTANCE 11 (expressivity): PASS - twist energy median n=8: {median_eight:.1} J <= n=1: {median_one:.1} J ({:.1} min)",
        start.elapsed().as_secs_f64() / 60.0
    );
}
