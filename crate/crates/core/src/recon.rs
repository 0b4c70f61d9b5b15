//! Penalized weighted least squares reconstruction with a pre-learned MRST
//! regularizer:
//!
//! ```text
//! min_{x >= 0}  1/2 ||y - A x||^2_W
//!               + beta * sum_l { ||Omega_l R_l - Z_l||_F^2 + gamma_l^2 ||Z_l||_0 }
//! ```
//!
//! where R_1 holds the overlapping patches of x and deeper residual maps
//! follow the layer recursion. The outer block coordinate descent alternates
//! an image update (relaxed OS-LALM over ordered angle subsets, with the
//! diagonal data majorizer D_A and the exact regularizer Hessian D_R2) and a
//! closed-form sparse coding step per layer.
//!
//! The solver works in the image's modified-HU scale: measurements are
//! divided by [`HU_TO_MU`] up front so patch values and line integrals share
//! units, while the statistical weights stay in raw counts. Beta values are
//! tuned for this scaling.

use std::time::Instant;

use ndarray::Array2;

use crate::ctsim::{
    back_project_angles, forward_project, forward_project_angles, majorizer_diag, SinogramSet,
};
use crate::error::{Error, Result};
use crate::imaging::{
    accumulate_patches, extract_patches, overlap_counts, Image, PatchConfig, PatchMatrix,
};
use crate::metrics::{rmse, RoiMask};
use crate::mrst::{
    backprop_sum, hard_threshold, learn_objective, refresh_residuals, residual_stack,
    sparse_code_step, MrstModel, SparseCodeStack,
};

pub use crate::ctsim::HU_TO_MU;

/// Relaxation parameter of the OS-LALM recursion.
pub const DEFAULT_ALPHA: f64 = 1.999;

/// Lower clamp of the decreasing rho schedule.
pub const DEFAULT_RHO_MIN: f64 = 1e-3;

/// Settings for [`reconstruct`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    /// Regularizer strength beta (>= 0; zero turns the prior off).
    pub beta: f64,
    /// Per-layer reconstruction thresholds gamma_l; length = model layers.
    pub gammas: Vec<f64>,
    /// Outer BCD iterations T_O.
    pub outer_iters: usize,
    /// Inner OS-LALM iterations N per image update.
    pub inner_iters: usize,
    /// Ordered subsets M (angles are dealt round-robin).
    pub subsets: usize,
    /// Over-relaxation alpha in (1, 2).
    pub alpha: f64,
    /// Floor of the decreasing rho schedule, in (0, 1].
    pub rho_min: f64,
    /// Patch geometry of the regularizer.
    pub patch: PatchConfig,
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::Config(format!(
                "beta must be finite and nonnegative, got {}",
                self.beta
            )));
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::Config(
                "gammas must be a nonempty list of finite nonnegative values".into(),
            ));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::Config("iteration counts must be >= 1".into()));
        }
        if self.subsets == 0 {
            return Err(Error::Config("subset count must be >= 1".into()));
        }
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (1, 2), got {}",
                self.alpha
            )));
        }
        if !(self.rho_min > 0.0 && self.rho_min <= 1.0) {
            return Err(Error::Config(format!(
                "rho_min must lie in (0, 1], got {}",
                self.rho_min
            )));
        }
        Ok(())
    }
}

/// Working state of the relaxed OS-LALM image update. `g`, `zeta`, and `h`
/// are image-space vectors re-initialized from `x` at the start of every
/// image-update phase.
#[derive(Debug, Clone)]
pub struct OsLalmState {
    pub x: Image,
    pub g: Vec<f64>,
    pub zeta: Vec<f64>,
    pub h: Vec<f64>,
    pub rho: f64,
}

impl OsLalmState {
    pub fn new(x: Image) -> Self {
        let n = x.len();
        OsLalmState {
            x,
            g: vec![0.0; n],
            zeta: vec![0.0; n],
            h: vec![0.0; n],
            rho: 1.0,
        }
    }
}

/// Decreasing rho schedule: rho_0 = 1 and
/// `rho_r = pi/(alpha (r+1)) * sqrt(1 - (pi/(2 alpha (r+1)))^2)` for r >= 1,
/// clamped to [rho_min, 1].
fn rho_schedule(r: usize, alpha: f64, rho_min: f64) -> f64 {
    if r == 0 {
        return 1.0;
    }
    let t = std::f64::consts::PI / (alpha * (r as f64 + 1.0));
    let inner = 1.0 - (t / 2.0) * (t / 2.0);
    (t * inner.max(0.0).sqrt()).clamp(rho_min, 1.0)
}

/// Subset visiting order: indices 0..m in bit-reversed order, the standard
/// ordered-subsets shuffle that decorrelates consecutive angle blocks.
fn bit_reversal_order(m: usize) -> Vec<usize> {
    if m <= 1 {
        return vec![0; m];
    }
    let bits = usize::BITS - (m - 1).leading_zeros();
    let mut order = Vec::with_capacity(m);
    for i in 0..1usize << bits {
        let mut rev = 0usize;
        for b in 0..bits {
            if i & (1 << b) != 0 {
                rev |= 1 << (bits - 1 - b);
            }
        }
        if rev < m {
            order.push(rev);
        }
    }
    order
}

/// Deal angles round-robin onto m subsets: angle k goes to subset k mod m,
/// so subset sizes differ by at most one.
fn round_robin_subsets(n_angles: usize, m: usize) -> Vec<Vec<usize>> {
    let mut subsets = vec![Vec::with_capacity(n_angles.div_ceil(m)); m];
    for k in 0..n_angles {
        subsets[k % m].push(k);
    }
    subsets
}

/// Regularizer gradient at `x` given a precomputed code backpropagation sum
/// (None stands for the all-zero sum, e.g. zero codes or beta = 0):
///
/// ```text
/// grad R2(x) = 2 beta * P^T ( L P x - sum_{k=1}^{L} B_0^k )
/// ```
///
/// applied patch-wise and accumulated back onto the image grid.
fn grad_r2_with(
    x: &Image,
    bsum: Option<&PatchMatrix>,
    layers: usize,
    beta: f64,
    patch: &PatchConfig,
) -> Result<Image> {
    if beta == 0.0 {
        return Ok(Image::zeros(x.width(), x.height(), x.pixel_size_mm()));
    }
    let lf = layers as f64;
    let mut pm = extract_patches(x, patch)?;
    match bsum {
        Some(b) => {
            if b.dim() != pm.dim() {
                return Err(Error::Dimension(format!(
                    "backpropagation sum is {}x{}, patches are {}x{}",
                    b.nrows(),
                    b.ncols(),
                    pm.nrows(),
                    pm.ncols()
                )));
            }
            pm.zip_mut_with(b, |t, &bb| *t = lf * *t - bb);
        }
        None => pm.mapv_inplace(|v| lf * v),
    }
    let acc = accumulate_patches(&pm, patch, x.width(), x.height())?;
    Ok(acc.map(|v| 2.0 * beta * v))
}

/// Gradient of the regularizer `beta R2(x)` with the codes held fixed.
pub fn grad_r2(
    x: &Image,
    model: &MrstModel,
    codes: &SparseCodeStack,
    cfg: &ReconConfig,
    patch: &PatchConfig,
) -> Result<Image> {
    patch.validate(x.width(), x.height())?;
    codes.validate(model, patch.n_patches(x.width(), x.height()))?;
    let bsum = backprop_sum_or_none(model, codes, cfg.beta)?;
    grad_r2_with(x, bsum.as_ref(), model.layers(), cfg.beta, patch)
}

/// `sum_{k=1}^{L} B_0^k`, skipped entirely when beta = 0.
fn backprop_sum_or_none(
    model: &MrstModel,
    codes: &SparseCodeStack,
    beta: f64,
) -> Result<Option<PatchMatrix>> {
    if beta == 0.0 {
        Ok(None)
    } else {
        Ok(Some(backprop_sum(model, codes, 0)?))
    }
}

/// Exact Hessian of the fixed-codes regularizer: `2 L beta P^T P`, a
/// diagonal matrix whose entries are the patch overlap counts.
pub fn hessian_r2_diag(
    cfg: &ReconConfig,
    patch: &PatchConfig,
    width: usize,
    height: usize,
    layers: usize,
) -> Result<Image> {
    let counts = overlap_counts(patch, width, height)?;
    let scale = 2.0 * layers as f64 * cfg.beta;
    Ok(counts.map(|c| scale * c))
}

/// Closed-form layer-l code update during reconstruction: the learning
/// machinery applied to R_1 = patches of `x` with the gamma thresholds.
pub fn sparse_code_recon(
    x: &Image,
    model: &MrstModel,
    codes: &SparseCodeStack,
    cfg: &ReconConfig,
    patch: &PatchConfig,
    l: usize,
) -> Result<PatchMatrix> {
    if cfg.gammas.len() != model.layers() {
        return Err(Error::Dimension(format!(
            "{} gammas for a {}-layer model",
            cfg.gammas.len(),
            model.layers()
        )));
    }
    let r1 = extract_patches(x, patch)?;
    let residuals = residual_stack(&r1, model, codes)?;
    sparse_code_step(model, codes, &residuals, &cfg.gammas, l)
}

/// Update every layer's codes in place (Z_1 .. Z_L, residuals refreshed
/// after each), returning the regularizer value before and after. Each layer
/// update is the exact minimizer of its block, so the value never increases.
fn sparse_code_all(
    x: &Image,
    model: &MrstModel,
    codes: &mut SparseCodeStack,
    cfg: &ReconConfig,
) -> Result<(f64, f64)> {
    let r1 = extract_patches(x, &cfg.patch)?;
    let mut residuals = residual_stack(&r1, model, codes)?;
    let before = cfg.beta * learn_objective(model, codes, &residuals, &cfg.gammas);
    let layers = model.layers();
    for l in 1..=layers {
        codes.codes[l - 1] = sparse_code_step(model, codes, &residuals, &cfg.gammas, l)?;
        refresh_residuals(&mut residuals, model, codes, l);
    }
    let after = cfg.beta * learn_objective(model, codes, &residuals, &cfg.gammas);
    Ok((before, after))
}

/// `1/2 ||y - A x||^2_W` with `sino` already in the solver's units.
fn weighted_data_term(x: &Image, sino: &SinogramSet) -> Result<f64> {
    let proj = forward_project(x, &sino.geometry)?;
    let mut total = 0.0;
    for ((&p, &y), &w) in proj.iter().zip(&sino.y).zip(&sino.weights) {
        let d = y - p;
        total += w * d * d;
    }
    Ok(0.5 * total)
}

/// Convert physical post-log measurements to the solver's HU-scaled units.
fn to_solver_units(sino: &SinogramSet) -> SinogramSet {
    SinogramSet {
        y: sino.y.iter().map(|v| v / HU_TO_MU).collect(),
        weights: sino.weights.clone(),
        geometry: sino.geometry.clone(),
    }
}

fn pwls_objective_units(
    x: &Image,
    codes: &SparseCodeStack,
    sino: &SinogramSet,
    model: &MrstModel,
    cfg: &ReconConfig,
    patch: &PatchConfig,
) -> Result<f64> {
    let data = weighted_data_term(x, sino)?;
    let r1 = extract_patches(x, patch)?;
    let residuals = residual_stack(&r1, model, codes)?;
    Ok(data + cfg.beta * learn_objective(model, codes, &residuals, &cfg.gammas))
}

/// Full reconstruction objective at (x, codes): the weighted data term plus
/// `beta * sum_l { ||Omega_l R_l - Z_l||^2 + gamma_l^2 ||Z_l||_0 }`.
/// `sino` holds physical measurements; they are rescaled to HU internally,
/// matching [`reconstruct`].
pub fn pwls_objective(
    x: &Image,
    codes: &SparseCodeStack,
    sino: &SinogramSet,
    model: &MrstModel,
    cfg: &ReconConfig,
    patch: &PatchConfig,
) -> Result<f64> {
    pwls_objective_units(x, codes, &to_solver_units(sino), model, cfg, patch)
}

/// One full image-update phase of Algorithm-style relaxed OS-LALM: starting
/// from `state.x`, re-initialize (rho = 1, g = zeta = the scaled gradient of
/// the last subset, h = D_A x - zeta) and run `inner_iters` passes over all
/// `subsets` sub-iterations of the five-step recursion
///
/// ```text
/// s     = rho (D_A x - h) + (1 - rho) g
/// x     = [ x - (rho D_A + D_R2)^{-1} (s + grad R2(x)) ]_+
/// zeta  = M A_m^T W_m (A_m x - y_m)
/// g     = rho/(rho+1) (alpha zeta + (1-alpha) g) + g/(rho+1)
/// h     = alpha (D_A x - zeta) + (1-alpha) h
/// ```
///
/// with rho decreasing after every sub-iteration. `sino` must be in the
/// solver's units; `d_a` and `d_r2` are the precomputed diagonals. Pixels
/// where both diagonals vanish (no ray coverage and beta = 0) are left
/// untouched.
pub fn pwls_image_update(
    mut state: OsLalmState,
    sino: &SinogramSet,
    model: &MrstModel,
    codes: &SparseCodeStack,
    cfg: &ReconConfig,
    d_a: &Image,
    d_r2: &Image,
) -> Result<OsLalmState> {
    cfg.validate()?;
    sino.validate()?;
    let geo = &sino.geometry;
    let (w, h, px) = (state.x.width(), state.x.height(), state.x.pixel_size_mm());
    if !state.x.all_finite() {
        return Err(Error::Numeric(
            "initial image contains non-finite values".into(),
        ));
    }
    if !d_a.same_grid(&state.x) || !d_r2.same_grid(&state.x) {
        return Err(Error::Dimension(
            "majorizer diagonals do not match the image grid".into(),
        ));
    }
    cfg.patch.validate(w, h)?;
    codes.validate(model, cfg.patch.n_patches(w, h))?;
    if cfg.subsets > geo.n_angles {
        return Err(Error::Config(format!(
            "{} subsets but only {} angles",
            cfg.subsets, geo.n_angles
        )));
    }

    let m_count = cfg.subsets;
    let mf = m_count as f64;
    let subsets = round_robin_subsets(geo.n_angles, m_count);
    let visit = bit_reversal_order(m_count);
    let nd = geo.n_detectors;
    let n_p = w * h;
    // the code term of grad R2 is fixed for the whole phase
    let bsum = backprop_sum_or_none(model, codes, cfg.beta)?;

    // zeta(x, m) = M A_m^T W_m (A_m x - y_m), as an image-space vector
    let zeta_of = |x_img: &Image, subset: &[usize]| -> Result<Vec<f64>> {
        let proj = forward_project_angles(x_img, geo, subset)?;
        let mut vals = vec![0.0; proj.len()];
        for (i, &a) in subset.iter().enumerate() {
            for k in 0..nd {
                let ray = a * nd + k;
                vals[i * nd + k] = sino.weights[ray] * (proj[i * nd + k] - sino.y[ray]);
            }
        }
        let bp = back_project_angles(&vals, geo, subset, w, h, px)?;
        Ok(bp.as_slice().iter().map(|v| mf * v).collect())
    };

    // phase initialization, gradient taken on the last subset
    state.rho = 1.0;
    state.zeta = zeta_of(&state.x, &subsets[m_count - 1])?;
    state.g = state.zeta.clone();
    state.h = (0..n_p)
        .map(|i| d_a.as_slice()[i] * state.x.as_slice()[i] - state.zeta[i])
        .collect();

    let mut r = 0usize;
    for _ in 0..cfg.inner_iters {
        for &m in &visit {
            let rho = state.rho;
            let grad = grad_r2_with(
                &state.x,
                bsum.as_ref(),
                model.layers(),
                cfg.beta,
                &cfg.patch,
            )?;
            {
                let da = d_a.as_slice();
                let dr = d_r2.as_slice();
                let gr = grad.as_slice();
                let xs = state.x.as_mut_slice();
                for i in 0..n_p {
                    let s = rho * (da[i] * xs[i] - state.h[i]) + (1.0 - rho) * state.g[i];
                    let denom = rho * da[i] + dr[i];
                    if denom > 0.0 {
                        xs[i] = (xs[i] - (s + gr[i]) / denom).max(0.0);
                    }
                }
            }
            if !state.x.all_finite() {
                return Err(Error::Numeric(format!(
                    "image went non-finite at sub-iteration {r}"
                )));
            }
            state.zeta = zeta_of(&state.x, &subsets[m])?;
            {
                let da = d_a.as_slice();
                let xs = state.x.as_slice();
                for i in 0..n_p {
                    state.g[i] = rho / (rho + 1.0)
                        * (cfg.alpha * state.zeta[i] + (1.0 - cfg.alpha) * state.g[i])
                        + state.g[i] / (rho + 1.0);
                    state.h[i] = cfg.alpha * (da[i] * xs[i] - state.zeta[i])
                        + (1.0 - cfg.alpha) * state.h[i];
                }
            }
            r += 1;
            state.rho = rho_schedule(r, cfg.alpha, cfg.rho_min);
        }
    }
    Ok(state)
}

/// One per-outer-iteration progress record.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconTraceRecord {
    /// 1-based outer iteration.
    pub iteration: usize,
    /// Objective value after the iteration's sparse coding step.
    pub objective: f64,
    /// Full-image RMSE against the reference, when one was provided.
    pub rmse_hu: Option<f64>,
    /// Wall-clock seconds since the reconstruction started.
    pub elapsed_s: f64,
}

/// Reconstruct from physical measurements with a pre-learned model. `init`
/// is typically the FBP image. Runs `cfg.outer_iters` outer iterations of
/// image update then per-layer sparse coding, returning the final image and
/// the per-iteration trace.
pub fn reconstruct(
    sino: &SinogramSet,
    model: &MrstModel,
    cfg: &ReconConfig,
    init: &Image,
) -> Result<(Image, Vec<ReconTraceRecord>)> {
    reconstruct_with(sino, model, cfg, init, None, |_| {})
}

/// [`reconstruct`] with an optional reference image for the RMSE trace and
/// an observer called after every outer iteration.
pub fn reconstruct_with(
    sino: &SinogramSet,
    model: &MrstModel,
    cfg: &ReconConfig,
    init: &Image,
    reference: Option<&Image>,
    mut observer: impl FnMut(&ReconTraceRecord),
) -> Result<(Image, Vec<ReconTraceRecord>)> {
    let setup = ReconSetup::prepare(sino, model, cfg, init, reference)?;
    let n_patches = cfg.patch.n_patches(init.width(), init.height());
    let mut codes = SparseCodeStack::zeros(model.layers(), model.patch_len(), n_patches);
    let mut state = OsLalmState::new(init.clone());
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    let start = Instant::now();

    for t in 0..cfg.outer_iters {
        state = pwls_image_update(
            state,
            &setup.solver_sino,
            model,
            &codes,
            cfg,
            &setup.d_a,
            &setup.d_r2,
        )?;
        let data = weighted_data_term(&state.x, &setup.solver_sino)?;
        let (reg_before, reg_after) = sparse_code_all(&state.x, model, &mut codes, cfg)?;
        check_sparse_coding_descent(t, data, reg_before, reg_after)?;
        let record = make_record(t, data + reg_after, &state.x, reference, &start);
        observer(&record);
        trace.push(record);
    }
    Ok((state.x, trace))
}

/// Single-layer (ST) reconstruction written directly against the one-layer
/// formulas: Z = H_gamma(Omega P x) for the sparse coding step and the
/// plain transform-fit regularizer, sharing only the generic OS-LALM image
/// update. A one-layer MRST reconstruction must match this path bit for bit.
pub fn reconstruct_single_layer(
    sino: &SinogramSet,
    model: &MrstModel,
    cfg: &ReconConfig,
    init: &Image,
) -> Result<(Image, Vec<ReconTraceRecord>)> {
    if model.layers() != 1 {
        return Err(Error::Config(format!(
            "single-layer path needs a 1-layer model, got {} layers",
            model.layers()
        )));
    }
    let setup = ReconSetup::prepare(sino, model, cfg, init, None)?;
    let omega = model.transform(1);
    let gamma = cfg.gammas[0];
    let n_patches = cfg.patch.n_patches(init.width(), init.height());
    let mut codes = SparseCodeStack::zeros(1, model.patch_len(), n_patches);
    let mut state = OsLalmState::new(init.clone());
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    let start = Instant::now();

    // beta * ( ||Omega R - Z||_F^2 + gamma^2 ||Z||_0 )
    let reg_value = |target_diff: &Array2<f64>, z: &Array2<f64>| -> f64 {
        let fit: f64 = target_diff.iter().map(|v| v * v).sum();
        let nnz = z.iter().filter(|&&v| v != 0.0).count();
        cfg.beta * (fit + gamma * gamma * nnz as f64)
    };

    for t in 0..cfg.outer_iters {
        state = pwls_image_update(
            state,
            &setup.solver_sino,
            model,
            &codes,
            cfg,
            &setup.d_a,
            &setup.d_r2,
        )?;
        let data = weighted_data_term(&state.x, &setup.solver_sino)?;
        let r1 = extract_patches(&state.x, &cfg.patch)?;
        let target = omega.dot(&r1);
        let reg_before = reg_value(&(&target - &codes.codes[0]), &codes.codes[0]);
        let z = target.map(|&v| hard_threshold(v, gamma));
        let reg_after = reg_value(&(&target - &z), &z);
        codes.codes[0] = z;
        check_sparse_coding_descent(t, data, reg_before, reg_after)?;
        let record = make_record(t, data + reg_after, &state.x, None, &start);
        trace.push(record);
    }
    Ok((state.x, trace))
}

/// Shared validation and precomputation for the reconstruction drivers.
struct ReconSetup {
    solver_sino: SinogramSet,
    d_a: Image,
    d_r2: Image,
}

impl ReconSetup {
    fn prepare(
        sino: &SinogramSet,
        model: &MrstModel,
        cfg: &ReconConfig,
        init: &Image,
        reference: Option<&Image>,
    ) -> Result<ReconSetup> {
        sino.validate()?;
        cfg.validate()?;
        if cfg.gammas.len() != model.layers() {
            return Err(Error::Dimension(format!(
                "{} gammas for a {}-layer model",
                cfg.gammas.len(),
                model.layers()
            )));
        }
        if cfg.patch.patch_len() != model.patch_len() {
            return Err(Error::Dimension(format!(
                "patch config implies dimension {}, model expects {}",
                cfg.patch.patch_len(),
                model.patch_len()
            )));
        }
        cfg.patch.validate(init.width(), init.height())?;
        if let Some(r) = reference {
            if !r.same_grid(init) {
                return Err(Error::Dimension(
                    "reference image does not match the reconstruction grid".into(),
                ));
            }
        }
        let solver_sino = to_solver_units(sino);
        let d_a = majorizer_diag(
            &sino.geometry,
            &sino.weights,
            init.width(),
            init.height(),
            init.pixel_size_mm(),
        )?;
        let d_r2 = hessian_r2_diag(cfg, &cfg.patch, init.width(), init.height(), model.layers())?;
        Ok(ReconSetup {
            solver_sino,
            d_a,
            d_r2,
        })
    }
}

/// The sparse coding step minimizes its block exactly, so the regularizer
/// value must not increase (up to relative rounding slack).
fn check_sparse_coding_descent(t: usize, data: f64, before: f64, after: f64) -> Result<()> {
    let obj_before = data + before;
    let obj_after = data + after;
    if obj_after > obj_before + 1e-9 * obj_before.abs() {
        return Err(Error::Numeric(format!(
            "sparse coding increased the objective at outer iteration {}: {obj_before} -> {obj_after}",
            t + 1
        )));
    }
    Ok(())
}

fn make_record(
    t: usize,
    objective: f64,
    x: &Image,
    reference: Option<&Image>,
    start: &Instant,
) -> ReconTraceRecord {
    let rmse_hu = reference
        .map(|r| rmse(r, x, &RoiMask::full(r.width(), r.height())).expect("grids validated"));
    ReconTraceRecord {
        iteration: t + 1,
        objective,
        rmse_hu,
        elapsed_s: start.elapsed().as_secs_f64(),
    }
}
