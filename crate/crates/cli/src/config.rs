//! TOML run-configuration file: sections mirror the library's domain
//! configs. Unknown keys are rejected and validation reports every problem
//! at once, each tagged with its key path.

use std::path::Path;

use serde::Deserialize;

use mrstct::ctsim::{Geometry, NoiseConfig};
use mrstct::error::{Error, Result};
use mrstct::imaging::PatchConfig;
use mrstct::mrst::LearnConfig;
use mrstct::recon::{ReconConfig, DEFAULT_ALPHA, DEFAULT_RHO_MIN};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub patch: Option<PatchSection>,
    pub learn: Option<LearnSection>,
    pub geometry: Option<GeometrySection>,
    pub noise: Option<NoiseSection>,
    pub recon: Option<ReconSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSection {
    pub patch_side: usize,
    pub stride: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    pub iterations: usize,
    /// Per-layer training thresholds; the length sets the layer count.
    pub thresholds: Vec<f64>,
    /// Patches sampled per training image (absent = use every patch).
    pub patches_per_image: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub n_angles: usize,
    pub n_detectors: usize,
    pub detector_spacing_mm: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Incident photon count; absent = noiseless measurements.
    pub i0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconSection {
    pub beta: f64,
    pub gammas: Vec<f64>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub subsets: usize,
    pub alpha: Option<f64>,
    pub rho_min: Option<f64>,
}

/// Read and structurally validate a config file. Field-level validation
/// happens here too, so a bad file is reported with every problem and its
/// key path in one message.
pub fn load_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let cfg: FileConfig = toml::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "{}: {}",
            path.display(),
            e.to_string().replace('\n', " ").trim()
        ))
    })?;
    validate(&cfg)
        .map_err(|msgs| Error::Config(format!("{}: {}", path.display(), msgs.join("; "))))?;
    Ok(cfg)
}

fn check(errs: &mut Vec<String>, ok: bool, msg: &str) {
    if !ok {
        errs.push(msg.to_string());
    }
}

fn validate(cfg: &FileConfig) -> std::result::Result<(), Vec<String>> {
    let mut errs = Vec::new();

    if let Some(p) = &cfg.patch {
        check(
            &mut errs,
            p.patch_side >= 1,
            "patch.patch_side: must be >= 1",
        );
        check(&mut errs, p.stride >= 1, "patch.stride: must be >= 1");
        check(
            &mut errs,
            p.patch_side == 0 || p.stride <= p.patch_side,
            "patch.stride: must not exceed patch.patch_side",
        );
    }
    if let Some(l) = &cfg.learn {
        check(
            &mut errs,
            l.iterations >= 1,
            "learn.iterations: must be >= 1",
        );
        check(
            &mut errs,
            !l.thresholds.is_empty(),
            "learn.thresholds: must not be empty",
        );
        for (i, t) in l.thresholds.iter().enumerate() {
            if !(t.is_finite() && *t >= 0.0) {
                errs.push(format!(
                    "learn.thresholds[{i}]: must be finite and nonnegative, got {t}"
                ));
            }
        }
        if let Some(n) = l.patches_per_image {
            check(&mut errs, n >= 1, "learn.patches_per_image: must be >= 1");
        }
    }
    if let Some(g) = &cfg.geometry {
        check(
            &mut errs,
            g.n_angles >= 1,
            "geometry.n_angles: must be >= 1",
        );
        check(
            &mut errs,
            g.n_detectors >= 1,
            "geometry.n_detectors: must be >= 1",
        );
        check(
            &mut errs,
            g.detector_spacing_mm.is_finite() && g.detector_spacing_mm > 0.0,
            "geometry.detector_spacing_mm: must be finite and positive",
        );
    }
    if let Some(n) = &cfg.noise {
        if let Some(i0) = n.i0 {
            check(
                &mut errs,
                i0.is_finite() && i0 > 0.0,
                "noise.i0: must be finite and positive",
            );
        }
    }
    if let Some(r) = &cfg.recon {
        check(
            &mut errs,
            r.beta.is_finite() && r.beta >= 0.0,
            "recon.beta: must be finite and nonnegative",
        );
        check(
            &mut errs,
            !r.gammas.is_empty(),
            "recon.gammas: must not be empty",
        );
        for (i, g) in r.gammas.iter().enumerate() {
            if !(g.is_finite() && *g >= 0.0) {
                errs.push(format!(
                    "recon.gammas[{i}]: must be finite and nonnegative, got {g}"
                ));
            }
        }
        check(
            &mut errs,
            r.outer_iters >= 1,
            "recon.outer_iters: must be >= 1",
        );
        check(
            &mut errs,
            r.inner_iters >= 1,
            "recon.inner_iters: must be >= 1",
        );
        check(&mut errs, r.subsets >= 1, "recon.subsets: must be >= 1");
        if let Some(a) = r.alpha {
            check(
                &mut errs,
                a > 1.0 && a < 2.0,
                "recon.alpha: must lie in (1, 2)",
            );
        }
        if let Some(rm) = r.rho_min {
            check(
                &mut errs,
                rm > 0.0 && rm <= 1.0,
                "recon.rho_min: must lie in (0, 1]",
            );
        }
    }

    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

fn missing(section: &str) -> Error {
    Error::Config(format!(
        "config is missing the required [{section}] section"
    ))
}

impl FileConfig {
    pub fn patch_config(&self) -> Result<PatchConfig> {
        let p = self.patch.as_ref().ok_or_else(|| missing("patch"))?;
        Ok(PatchConfig::new(p.patch_side, p.stride))
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let g = self.geometry.as_ref().ok_or_else(|| missing("geometry"))?;
        Ok(Geometry::new(
            g.n_angles,
            g.n_detectors,
            g.detector_spacing_mm,
        ))
    }

    /// Noise settings; `i0_override` (a CLI flag) wins over the file, and
    /// the seed always comes from the mandatory CLI flag.
    pub fn noise(&self, i0_override: Option<f64>, seed: u64) -> NoiseConfig {
        let i0 = i0_override.or_else(|| self.noise.as_ref().and_then(|n| n.i0));
        NoiseConfig { i0, seed }
    }

    pub fn learn_config(&self) -> Result<LearnConfig> {
        let l = self.learn.as_ref().ok_or_else(|| missing("learn"))?;
        Ok(LearnConfig {
            iterations: l.iterations,
            thresholds: l.thresholds.clone(),
            patch: self.patch_config()?,
            seed: l.seed,
        })
    }

    pub fn recon_config(&self) -> Result<ReconConfig> {
        let r = self.recon.as_ref().ok_or_else(|| missing("recon"))?;
        Ok(ReconConfig {
            beta: r.beta,
            gammas: r.gammas.clone(),
            outer_iters: r.outer_iters,
            inner_iters: r.inner_iters,
            subsets: r.subsets,
            alpha: r.alpha.unwrap_or(DEFAULT_ALPHA),
            rho_min: r.rho_min.unwrap_or(DEFAULT_RHO_MIN),
            patch: self.patch_config()?,
        })
    }
}
