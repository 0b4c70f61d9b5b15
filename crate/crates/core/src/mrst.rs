//! Multi-layer residual sparsifying transform (MRST) model and its exact
//! block coordinate descent learning algorithm.
//!
//! An MRST with L layers holds unitary p x p transforms {Omega_l} and
//! thresholds {eta_l}. Layer inputs are residual maps defined recursively,
//!
//! ```text
//! R_1 = training patches,   R_l = Omega_{l-1} R_{l-1} - Z_{l-1}   (2 <= l <= L)
//! ```
//!
//! and learning minimizes
//!
//! ```text
//! sum_l { ||Omega_l R_l - Z_l||_F^2 + eta_l^2 ||Z_l||_0 }
//! ```
//!
//! over all codes Z_l and unitary Omega_l. Both block updates have closed
//! forms: hard thresholding for the codes and an SVD-based Procrustes
//! solution for the transforms, so the objective never increases.

use ndarray::linalg::kron;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::imaging::{PatchConfig, PatchMatrix};

/// Learned multi-layer model: L unitary p x p transforms plus the per-layer
/// thresholds they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct MrstModel {
    pub(crate) transforms: Vec<Array2<f64>>,
    pub(crate) learn_thresholds: Vec<f64>,
}

/// Frobenius distance from Omega^T Omega to the identity.
pub fn unitarity_defect(m: &Array2<f64>) -> f64 {
    let p = m.nrows();
    let gram = m.t().dot(m);
    let mut sq = 0.0;
    for i in 0..p {
        for j in 0..p {
            let d = gram[(i, j)] - if i == j { 1.0 } else { 0.0 };
            sq += d * d;
        }
    }
    sq.sqrt()
}

impl MrstModel {
    /// Build a model from explicit transforms and thresholds, validating
    /// shapes, finiteness, and unitarity (defect <= 1e-8 per matrix).
    pub fn new(transforms: Vec<Array2<f64>>, learn_thresholds: Vec<f64>) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if transforms.len() != learn_thresholds.len() {
            return Err(Error::Dimension(format!(
                "{} transforms but {} thresholds",
                transforms.len(),
                learn_thresholds.len()
            )));
        }
        let p = transforms[0].nrows();
        for (i, t) in transforms.iter().enumerate() {
            if t.nrows() != p || t.ncols() != p {
                return Err(Error::Dimension(format!(
                    "transform {} is {}x{}, expected {p}x{p}",
                    i + 1,
                    t.nrows(),
                    t.ncols()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "transform {} contains non-finite entries",
                    i + 1
                )));
            }
            let defect = unitarity_defect(t);
            if defect > 1e-8 {
                return Err(Error::Numeric(format!(
                    "transform {} is not unitary (defect {defect:.3e})",
                    i + 1
                )));
            }
        }
        if learn_thresholds.iter().any(|&e| !e.is_finite() || e < 0.0) {
            return Err(Error::Config(
                "thresholds must be finite and nonnegative".into(),
            ));
        }
        Ok(MrstModel {
            transforms,
            learn_thresholds,
        })
    }

    /// Number of layers L.
    pub fn layers(&self) -> usize {
        self.transforms.len()
    }

    /// Patch dimension p.
    pub fn patch_len(&self) -> usize {
        self.transforms[0].nrows()
    }

    /// Transform Omega_l, `l` 1-based.
    pub fn transform(&self, l: usize) -> &Array2<f64> {
        &self.transforms[l - 1]
    }

    pub fn transforms(&self) -> &[Array2<f64>] {
        &self.transforms
    }

    pub fn learn_thresholds(&self) -> &[f64] {
        &self.learn_thresholds
    }
}

/// Per-layer sparse code matrices Z_l, each p x N.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodeStack {
    pub(crate) codes: Vec<PatchMatrix>,
}

impl SparseCodeStack {
    /// All-zero codes for an L-layer model over N patches.
    pub fn zeros(layers: usize, patch_len: usize, n_patches: usize) -> Self {
        SparseCodeStack {
            codes: (0..layers)
                .map(|_| Array2::zeros((patch_len, n_patches)))
                .collect(),
        }
    }

    /// Build a stack from explicit per-layer code matrices, e.g. when
    /// driving the block updates manually. All layers must share one shape
    /// and contain only finite values.
    pub fn from_codes(codes: Vec<PatchMatrix>) -> Result<Self> {
        let first = codes
            .first()
            .ok_or_else(|| Error::Config("code stack needs at least one layer".into()))?;
        let shape = first.dim();
        for (l, code) in codes.iter().enumerate() {
            if code.dim() != shape {
                return Err(Error::Dimension(format!(
                    "layer {} codes are {:?}, layer 1's are {:?}",
                    l + 1,
                    code.dim(),
                    shape
                )));
            }
            if code.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "layer {} codes contain non-finite values",
                    l + 1
                )));
            }
        }
        Ok(SparseCodeStack { codes })
    }

    pub fn layers(&self) -> usize {
        self.codes.len()
    }

    /// Code Z_l, `l` 1-based.
    pub fn code(&self, l: usize) -> &PatchMatrix {
        &self.codes[l - 1]
    }

    pub fn codes(&self) -> &[PatchMatrix] {
        &self.codes
    }

    /// Check dimensions against a model and patch count.
    pub fn validate(&self, model: &MrstModel, n_patches: usize) -> Result<()> {
        if self.codes.len() != model.layers() {
            return Err(Error::Dimension(format!(
                "{} code layers for a {}-layer model",
                self.codes.len(),
                model.layers()
            )));
        }
        let p = model.patch_len();
        for (i, z) in self.codes.iter().enumerate() {
            if z.nrows() != p || z.ncols() != n_patches {
                return Err(Error::Dimension(format!(
                    "code {} is {}x{}, expected {}x{}",
                    i + 1,
                    z.nrows(),
                    z.ncols(),
                    p,
                    n_patches
                )));
            }
        }
        Ok(())
    }

    /// Total number of nonzero entries across all layers.
    pub fn nnz(&self) -> usize {
        self.codes
            .iter()
            .map(|z| z.iter().filter(|&&v| v != 0.0).count())
            .sum()
    }
}

/// Settings for [`learn`].
#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    /// Outer BCD iterations.
    pub iterations: usize,
    /// Per-layer thresholds eta_l; the length sets the layer count L.
    pub thresholds: Vec<f64>,
    /// Patch geometry the training matrix was extracted with.
    pub patch: PatchConfig,
    /// Seed for assembling the training set (patch subsampling). The BCD
    /// iterations themselves are deterministic and do not consume randomness.
    pub seed: u64,
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.thresholds.is_empty() {
            return Err(Error::Config(
                "at least one layer threshold required".into(),
            ));
        }
        if self.thresholds.iter().any(|&e| !e.is_finite() || e < 0.0) {
            return Err(Error::Config(
                "thresholds must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Orthonormal DCT-II matrix of size n: row k holds
/// `s_k cos(pi (2j+1) k / (2n))` with `s_0 = sqrt(1/n)`, `s_k = sqrt(2/n)`.
fn dct_matrix(n: usize) -> Array2<f64> {
    let nf = n as f64;
    Array2::from_shape_fn((n, n), |(k, j)| {
        let s = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        s * (std::f64::consts::PI * (2 * j + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    })
}

/// Fresh L-layer model: Omega_1 is the 2D DCT (Kronecker product of two 1D
/// orthonormal DCT-II matrices, matching row-major patch vectorization) and
/// Omega_l = I for l >= 2. Thresholds start at zero; [`learn`] fills them in
/// from its config.
pub fn init_model(layers: usize, patch_len: usize) -> Result<MrstModel> {
    if layers == 0 {
        return Err(Error::Config("layer count must be >= 1".into()));
    }
    let side = (patch_len as f64).sqrt().round() as usize;
    if side * side != patch_len || side == 0 {
        return Err(Error::Config(format!(
            "patch dimension {patch_len} is not a perfect square"
        )));
    }
    let c = dct_matrix(side);
    let mut transforms = Vec::with_capacity(layers);
    transforms.push(kron(&c, &c));
    for _ in 1..layers {
        transforms.push(Array2::eye(patch_len));
    }
    Ok(MrstModel {
        transforms,
        learn_thresholds: vec![0.0; layers],
    })
}

/// Residual maps [R_1 ... R_L] under the recursion
/// `R_l = Omega_{l-1} R_{l-1} - Z_{l-1}` with R_1 = `r1`.
pub fn residual_stack(
    r1: &PatchMatrix,
    model: &MrstModel,
    codes: &SparseCodeStack,
) -> Result<Vec<PatchMatrix>> {
    let p = model.patch_len();
    if r1.nrows() != p {
        return Err(Error::Dimension(format!(
            "data has {} rows, model expects {p}",
            r1.nrows()
        )));
    }
    codes.validate(model, r1.ncols())?;
    let l_total = model.layers();
    let mut out = Vec::with_capacity(l_total);
    out.push(r1.clone());
    for l in 1..l_total {
        let next = model.transforms[l - 1].dot(&out[l - 1]) - &codes.codes[l - 1];
        out.push(next);
    }
    Ok(out)
}

/// Recompute residuals R_{from+1} ... R_L in place after block `from`
/// (a Z or Omega of that 1-based layer) changed. R_1 ... R_from are
/// unaffected by construction.
pub(crate) fn refresh_residuals(
    residuals: &mut [PatchMatrix],
    model: &MrstModel,
    codes: &SparseCodeStack,
    from: usize,
) {
    for l in from..model.layers() {
        residuals[l] = model.transforms[l - 1].dot(&residuals[l - 1]) - &codes.codes[l - 1];
    }
}

/// Backpropagation matrix from layer `q_idx` down to layer `p_idx`:
///
/// ```text
/// B_p^q = sum_{k=p+1}^{q} (Omega_{p+1}^T ... Omega_k^T) Z_k,   0 <= p < q <= L.
/// ```
///
/// Evaluated right-to-left: with T_q = Z_q and T_k = Z_k + Omega_{k+1}^T T_{k+1},
/// B_p^q = Omega_{p+1}^T T_{p+1}.
pub fn backprop_matrix(
    model: &MrstModel,
    codes: &SparseCodeStack,
    p_idx: usize,
    q_idx: usize,
) -> Result<PatchMatrix> {
    let l_total = model.layers();
    if p_idx >= q_idx || q_idx > l_total {
        return Err(Error::Config(format!(
            "backprop indices need 0 <= p < q <= {l_total}, got p={p_idx} q={q_idx}"
        )));
    }
    let mut t = codes.codes[q_idx - 1].clone();
    for k in (p_idx + 1..q_idx).rev() {
        t = &codes.codes[k - 1] + &model.transforms[k].t().dot(&t);
    }
    Ok(model.transforms[p_idx].t().dot(&t))
}

/// `sum_{i=l+1}^{L} B_l^i`, the accumulated backpropagation term that both
/// block updates of layer l < L need. Equal to
/// `sum_{k=l+1}^{L} (L-k+1) (Omega_{l+1}^T ... Omega_k^T) Z_k`, computed with
/// one transpose-multiply per layer instead of one per (i, k) pair.
pub fn backprop_sum(model: &MrstModel, codes: &SparseCodeStack, l: usize) -> Result<PatchMatrix> {
    let l_total = model.layers();
    if l >= l_total {
        return Err(Error::Config(format!(
            "backprop sum needs layer < {l_total}, got {l}"
        )));
    }
    // S_k = (L-k+1) Z_k + Omega_{k+1}^T S_{k+1}; result is Omega_{l+1}^T S_{l+1}.
    let mut s = codes.codes[l_total - 1].clone();
    for k in (l + 1..l_total).rev() {
        let weight = (l_total - k + 1) as f64;
        s = &codes.codes[k - 1].map(|v| weight * v) + &model.transforms[k].t().dot(&s);
    }
    Ok(model.transforms[l].t().dot(&s))
}

/// Hard threshold: entries with |v| < tau are zeroed, entries with
/// |v| >= tau (including exact ties) are kept.
#[inline]
pub fn hard_threshold(v: f64, tau: f64) -> f64 {
    if v.abs() < tau {
        0.0
    } else {
        v
    }
}

/// Shared closed-form code update for layer `l` (1-based): hard thresholding
/// of the layer-l target at a scaled threshold,
///
/// ```text
/// Z_l = H_{tau_l / sqrt(m)} ( Omega_l R_l - (1/m) sum_{i=l+1}^{L} B_l^i ),   m = L - l + 1,
/// ```
///
/// with an empty backprop sum for l = L. Used for learning (tau = eta) and
/// reconstruction (tau = gamma).
pub(crate) fn sparse_code_step(
    model: &MrstModel,
    codes: &SparseCodeStack,
    residuals: &[PatchMatrix],
    thresholds: &[f64],
    l: usize,
) -> Result<PatchMatrix> {
    let l_total = model.layers();
    if l == 0 || l > l_total {
        return Err(Error::Config(format!(
            "layer index {l} outside 1..={l_total}"
        )));
    }
    if residuals.len() != l_total || thresholds.len() != l_total {
        return Err(Error::Dimension(
            "residuals/thresholds length does not match model layers".into(),
        ));
    }
    let m = (l_total - l + 1) as f64;
    let mut target = model.transforms[l - 1].dot(&residuals[l - 1]);
    if l < l_total {
        let bsum = backprop_sum(model, codes, l)?;
        target.zip_mut_with(&bsum, |t, &b| *t -= b / m);
    }
    let tau = thresholds[l - 1] / m.sqrt();
    target.mapv_inplace(|v| hard_threshold(v, tau));
    Ok(target)
}

/// Exact minimizer of the layer-l code block during learning, with the
/// model's training thresholds. `residuals` must be current for `codes`
/// (callers refresh after every block update).
pub fn sparse_code_learn(
    model: &MrstModel,
    codes: &SparseCodeStack,
    residuals: &[PatchMatrix],
    l: usize,
) -> Result<PatchMatrix> {
    sparse_code_step(model, codes, residuals, &model.learn_thresholds, l)
}

/// Exact minimizer of the layer-l transform block: the orthogonal Procrustes
/// solution `Omega = V U^T` from a full SVD `G_l = U S V^T` of
///
/// ```text
/// G_l = R_l (Z_l + (1/m) sum_{i=l+1}^{L} B_l^i)^T,   m = L - l + 1,
/// ```
///
/// (empty sum for l = L). G = 0 leaves every unitary matrix optimal; the
/// identity is returned for determinism.
pub fn transform_update(
    model: &MrstModel,
    codes: &SparseCodeStack,
    residuals: &[PatchMatrix],
    l: usize,
) -> Result<Array2<f64>> {
    let l_total = model.layers();
    if l == 0 || l > l_total {
        return Err(Error::Config(format!(
            "layer index {l} outside 1..={l_total}"
        )));
    }
    let m = (l_total - l + 1) as f64;
    let mut coef = codes.codes[l - 1].clone();
    if l < l_total {
        let bsum = backprop_sum(model, codes, l)?;
        coef.zip_mut_with(&bsum, |c, &b| *c += b / m);
    }
    let g = residuals[l - 1].dot(&coef.t());
    procrustes(&g)
}

/// `argmax_{Omega unitary} tr(Omega G)` via full SVD: G = U S V^T gives
/// Omega = V U^T. Zero G returns the identity.
fn procrustes(g: &Array2<f64>) -> Result<Array2<f64>> {
    let p = g.nrows();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "transform update target contains non-finite entries".into(),
        ));
    }
    if g.iter().all(|&v| v == 0.0) {
        return Ok(Array2::eye(p));
    }
    let gm = nalgebra::DMatrix::from_fn(p, p, |i, j| g[(i, j)]);
    let svd = gm
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("SVD did not converge in transform update".into()))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    // V U^T = (U V^T)^T
    let uvt = u * v_t;
    Ok(Array2::from_shape_fn((p, p), |(i, j)| uvt[(j, i)]))
}

/// Learning objective
/// `sum_l { ||Omega_l R_l - Z_l||_F^2 + tau_l^2 ||Z_l||_0 }` for the given
/// thresholds (eta during learning, gamma during reconstruction).
pub fn learn_objective(
    model: &MrstModel,
    codes: &SparseCodeStack,
    residuals: &[PatchMatrix],
    thresholds: &[f64],
) -> f64 {
    let mut total = 0.0;
    for l in 0..model.layers() {
        let diff = model.transforms[l].dot(&residuals[l]) - &codes.codes[l];
        let fit: f64 = diff.iter().map(|v| v * v).sum();
        let nnz = codes.codes[l].iter().filter(|&&v| v != 0.0).count();
        total += fit + thresholds[l] * thresholds[l] * nnz as f64;
    }
    total
}

/// Run exact block coordinate descent on the training patches: each
/// iteration updates Z_1..Z_L then Omega_1..Omega_L, recomputing downstream
/// residuals after every block update so each step minimizes its block
/// exactly. Returns the model, final codes, and the objective trace (entry 0
/// is the objective at initialization, entry i the value after iteration i).
pub fn learn(
    training: &PatchMatrix,
    cfg: &LearnConfig,
) -> Result<(MrstModel, SparseCodeStack, Vec<f64>)> {
    cfg.validate()?;
    let p = cfg.patch.patch_len();
    if training.nrows() != p {
        return Err(Error::Dimension(format!(
            "training matrix has {} rows, patch config implies {p}",
            training.nrows()
        )));
    }
    if training.ncols() == 0 {
        return Err(Error::Config("training matrix has no patches".into()));
    }
    if training.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "training data contains non-finite values".into(),
        ));
    }

    let l_total = cfg.thresholds.len();
    let n = training.ncols();
    let mut model = init_model(l_total, p)?;
    model.learn_thresholds = cfg.thresholds.clone();
    let mut codes = SparseCodeStack::zeros(l_total, p, n);
    let mut residuals = residual_stack(training, &model, &codes)?;

    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(learn_objective(&model, &codes, &residuals, &cfg.thresholds));

    for _ in 0..cfg.iterations {
        for l in 1..=l_total {
            codes.codes[l - 1] = sparse_code_learn(&model, &codes, &residuals, l)?;
            refresh_residuals(&mut residuals, &model, &codes, l);
        }
        for l in 1..=l_total {
            model.transforms[l - 1] = transform_update(&model, &codes, &residuals, l)?;
            refresh_residuals(&mut residuals, &model, &codes, l);
        }
        trace.push(learn_objective(&model, &codes, &residuals, &cfg.thresholds));
    }
    Ok((model, codes, trace))
}
