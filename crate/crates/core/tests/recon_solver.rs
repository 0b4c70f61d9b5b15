//! End-to-end checks of the PWLS image solver against independent oracles.

use mrstct::ctsim::{
    fbp, forward_project, majorizer_diag, make_phantom, simulate_lowdose, Geometry, NoiseConfig,
    PhantomKind, SinogramSet, HU_TO_MU,
};
use mrstct::imaging::{Image, PatchConfig};
use mrstct::metrics::{rmse, RoiMask};
use mrstct::mrst::init_model;
use mrstct::recon::{
    hessian_r2_diag, pwls_image_update, reconstruct, reconstruct_single_layer, reconstruct_with,
    OsLalmState, ReconConfig, DEFAULT_ALPHA, DEFAULT_RHO_MIN,
};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

fn base_cfg(beta: f64, gammas: Vec<f64>) -> ReconConfig {
    ReconConfig {
        beta,
        gammas,
        outer_iters: 1,
        inner_iters: 1,
        subsets: 1,
        alpha: DEFAULT_ALPHA,
        rho_min: DEFAULT_RHO_MIN,
        patch: PatchConfig::new(2, 1),
    }
}

/// With beta = 0 and noiseless consistent data the solver must reproduce the
/// nonnegative least-squares solution. The system is built so the
/// unconstrained least-squares solution is strictly positive (and the ray
/// matrix has full column rank), making the dense normal-equations solve an
/// exact oracle.
#[test]
fn oslalm_matches_dense_least_squares() {
    let (w, h) = (8, 8);
    let geo = Geometry::new(16, 16, 1.0);
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let x_true = Image::from_vec(
        w,
        h,
        1.0,
        (0..w * h).map(|_| rng.random_range(0.5..2.0)).collect(),
    )
    .unwrap();
    let y = forward_project(&x_true, &geo).unwrap();

    // dense system matrix, one basis image per column
    let n_rays = geo.n_rays();
    let mut a = nalgebra::DMatrix::<f64>::zeros(n_rays, w * h);
    for j in 0..w * h {
        let mut basis = Image::zeros(w, h, 1.0);
        basis.as_mut_slice()[j] = 1.0;
        let col = forward_project(&basis, &geo).unwrap();
        for i in 0..n_rays {
            a[(i, j)] = col[i];
        }
    }
    let yv = nalgebra::DVector::from_column_slice(&y);
    let ata = a.transpose() * &a;
    let aty = a.transpose() * &yv;
    let x_ls = ata
        .cholesky()
        .expect("normal equations should be positive definite")
        .solve(&aty);
    for j in 0..w * h {
        assert!(
            (x_ls[j] - x_true.as_slice()[j]).abs() < 1e-8,
            "least-squares oracle disagrees with the generating image at {j}"
        );
    }

    let sino = SinogramSet {
        y,
        weights: vec![1.0; n_rays],
        geometry: geo.clone(),
    };
    let model = init_model(1, 4).unwrap();
    let mut cfg = base_cfg(0.0, vec![0.0]);
    cfg.inner_iters = 100;
    let codes = mrstct::mrst::SparseCodeStack::zeros(1, 4, cfg.patch.n_patches(w, h));
    let d_a = majorizer_diag(&geo, &sino.weights, w, h, 1.0).unwrap();
    let d_r2 = hessian_r2_diag(&cfg, &cfg.patch, w, h, 1).unwrap();
    // run update phases exactly as the outer loop would, re-initializing
    // the momentum state each phase
    let mut state = OsLalmState::new(Image::zeros(w, h, 1.0));
    for _ in 0..40 {
        state = pwls_image_update(state, &sino, &model, &codes, &cfg, &d_a, &d_r2).unwrap();
    }

    let roi = RoiMask::full(w, h);
    let err = rmse(&x_true, &state.x, &roi).unwrap();
    assert!(err < 1e-8, "solver RMSE vs least squares: {err}");
}

/// A one-layer model run through the generic multi-layer driver must be
/// indistinguishable, bit for bit, from the dedicated single-layer path.
#[test]
fn single_layer_paths_bit_identical() {
    let x_true = make_phantom(PhantomKind::SheppLogan, 16, 16, 1.0).unwrap();
    let geo = Geometry::new(24, 24, 1.0);
    let sino = simulate_lowdose(
        &x_true,
        &geo,
        &NoiseConfig {
            i0: Some(1e4),
            seed: 11,
        },
    )
    .unwrap();
    let init = fbp(&sino, 16, 16, 1.0).unwrap();
    let model = init_model(1, 4).unwrap();
    let mut cfg = base_cfg(50.0, vec![40.0]);
    cfg.outer_iters = 4;
    cfg.inner_iters = 2;
    cfg.subsets = 4;

    let (x_multi, trace_multi) = reconstruct(&sino, &model, &cfg, &init).unwrap();
    let (x_single, trace_single) = reconstruct_single_layer(&sino, &model, &cfg, &init).unwrap();

    assert_eq!(x_multi.as_slice(), x_single.as_slice());
    assert_eq!(trace_multi.len(), trace_single.len());
    for (a, b) in trace_multi.iter().zip(&trace_single) {
        assert_eq!(a.iteration, b.iteration);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.rmse_hu, b.rmse_hu);
    }
}

/// Full pipeline smoke test: simulate, FBP, then PWLS with a two-layer
/// model. The iterative reconstruction must improve on its FBP starting
/// point and report a sensible trace.
#[test]
fn reconstruct_improves_on_fbp() {
    let (w, h) = (16, 16);
    let x_true = make_phantom(PhantomKind::Disk, w, h, 1.0).unwrap();
    let geo = Geometry::new(24, 24, 1.0);
    let sino = simulate_lowdose(&x_true, &geo, &NoiseConfig { i0: None, seed: 0 }).unwrap();
    let init = fbp(&sino, w, h, 1.0).unwrap();
    let model = init_model(2, 4).unwrap();
    let mut cfg = base_cfg(0.1, vec![25.0, 25.0]);
    cfg.outer_iters = 20;
    cfg.inner_iters = 2;
    cfg.subsets = 4;

    let mut seen = 0usize;
    let (x, trace) = reconstruct_with(&sino, &model, &cfg, &init, Some(&x_true), |rec| {
        assert!(rec.objective.is_finite());
        seen += 1;
    })
    .unwrap();

    assert_eq!(seen, cfg.outer_iters);
    assert_eq!(trace.len(), cfg.outer_iters);
    for (i, rec) in trace.iter().enumerate() {
        assert_eq!(rec.iteration, i + 1);
        assert!(rec.objective.is_finite());
        assert!(rec.rmse_hu.is_some());
        assert!(rec.elapsed_s >= 0.0);
    }
    assert!(x.as_slice().iter().all(|&v| v >= 0.0 && v.is_finite()));

    let roi = RoiMask::full(w, h);
    let err_fbp = rmse(&x_true, &init, &roi).unwrap();
    let err_pwls = rmse(&x_true, &x, &roi).unwrap();
    assert!(
        err_pwls < err_fbp,
        "PWLS RMSE {err_pwls} did not improve on FBP RMSE {err_fbp}"
    );
    assert_eq!(trace.last().unwrap().rmse_hu, Some(err_pwls));

    // the objective the solver reports matches an independent recomputation
    // at a consistent (x, codes) pair is exercised in the unit tests; here
    // just confirm the trace is finite and not exploding
    let first = trace.first().unwrap().objective;
    let last = trace.last().unwrap().objective;
    assert!(last <= first, "objective rose from {first} to {last}");
    let _ = HU_TO_MU; // units constant re-exported for downstream users
}
