//! Command implementations: thin, deterministic compositions of library
//! operations. Every resolved parameter is echoed in a run header on
//! standard error; results go to files or standard output.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use mrstct::ctsim::{fbp, make_phantom, simulate_lowdose, PhantomKind};
use mrstct::error::Result;
use mrstct::imaging::extract_patches;
use mrstct::io::{load_image, load_model, load_sinogram, save_image, save_model, save_sinogram};
use mrstct::metrics::{circular_roi, psnr, rmse, ssim};
use mrstct::mrst::learn;
use mrstct::recon::{reconstruct_single_layer, reconstruct_with};

use crate::config::load_config;
use crate::Solver;

fn header(command: &str, params: &[(&str, String)]) {
    eprintln!("# command = {command}");
    for (k, v) in params {
        eprintln!("# {k} = {v}");
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn cmd_phantom(
    kind: &str,
    width: usize,
    height: usize,
    pixel_size_mm: f64,
    out: &Path,
) -> Result<()> {
    let kind: PhantomKind = kind.parse()?;
    header(
        "phantom",
        &[
            ("kind", kind.to_string()),
            ("width", width.to_string()),
            ("height", height.to_string()),
            ("pixel_size_mm", pixel_size_mm.to_string()),
            ("out", path_str(out)),
        ],
    );
    let img = make_phantom(kind, width, height, pixel_size_mm)?;
    save_image(&img, out)
}

pub fn cmd_simulate(
    image: &Path,
    config: &Path,
    i0_override: Option<f64>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let geometry = cfg.geometry()?;
    geometry.validate()?;
    let noise = cfg.noise(i0_override, seed);
    noise.validate()?;
    header(
        "simulate",
        &[
            ("image", path_str(image)),
            ("config", path_str(config)),
            ("n_angles", geometry.n_angles.to_string()),
            ("n_detectors", geometry.n_detectors.to_string()),
            (
                "detector_spacing_mm",
                geometry.detector_spacing_mm.to_string(),
            ),
            (
                "i0",
                noise
                    .i0
                    .map_or("none (noiseless)".into(), |v| v.to_string()),
            ),
            ("seed", noise.seed.to_string()),
            ("out", path_str(out)),
        ],
    );
    let img = load_image(image)?;
    let sino = simulate_lowdose(&img, &geometry, &noise)?;
    save_sinogram(&sino, out)
}

pub fn cmd_fbp(
    sino: &Path,
    width: usize,
    height: usize,
    pixel_size_mm: f64,
    out: &Path,
) -> Result<()> {
    header(
        "fbp",
        &[
            ("sino", path_str(sino)),
            ("width", width.to_string()),
            ("height", height.to_string()),
            ("pixel_size_mm", pixel_size_mm.to_string()),
            ("out", path_str(out)),
        ],
    );
    let sinogram = load_sinogram(sino)?;
    let img = fbp(&sinogram, width, height, pixel_size_mm)?;
    save_image(&img, out)
}

pub fn cmd_learn(images: &[PathBuf], config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let learn_cfg = cfg.learn_config()?;
    let per_image = cfg.learn.as_ref().and_then(|l| l.patches_per_image);
    header(
        "learn",
        &[
            (
                "images",
                images
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
            ("config", path_str(config)),
            ("iterations", learn_cfg.iterations.to_string()),
            ("thresholds", format!("{:?}", learn_cfg.thresholds)),
            ("patch_side", learn_cfg.patch.patch_side.to_string()),
            ("stride", learn_cfg.patch.stride.to_string()),
            (
                "patches_per_image",
                per_image.map_or("all".into(), |n| n.to_string()),
            ),
            ("seed", learn_cfg.seed.to_string()),
            ("out", path_str(out)),
        ],
    );

    // assemble the training matrix: patches of every image, optionally a
    // seeded random subset per image
    let mut rng = ChaCha12Rng::seed_from_u64(learn_cfg.seed);
    let mut blocks: Vec<Array2<f64>> = Vec::new();
    for path in images {
        let img = load_image(path)?;
        let all = extract_patches(&img, &learn_cfg.patch)?;
        let block = match per_image {
            Some(n) if n < all.ncols() => {
                let picks = rand::seq::index::sample(&mut rng, all.ncols(), n);
                let mut sel = Array2::zeros((all.nrows(), n));
                for (j, src) in picks.iter().enumerate() {
                    sel.column_mut(j).assign(&all.column(src));
                }
                sel
            }
            _ => all,
        };
        eprintln!("# {}: {} patches", path.display(), block.ncols());
        blocks.push(block);
    }
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let p = learn_cfg.patch.patch_len();
    let mut training = Array2::zeros((p, total));
    let mut offset = 0;
    for b in &blocks {
        training
            .slice_mut(s![.., offset..offset + b.ncols()])
            .assign(b);
        offset += b.ncols();
    }

    let (model, codes, trace) = learn(&training, &learn_cfg)?;
    for (i, v) in trace.iter().enumerate() {
        eprintln!("# objective[{i}] = {v}");
    }
    let entries = model.layers() * p * total;
    eprintln!(
        "# code_sparsity = {:.4} ({} of {} entries nonzero)",
        codes.nnz() as f64 / entries as f64,
        codes.nnz(),
        entries
    );
    save_model(&model, out)
}

pub fn cmd_reconstruct(
    sino: &Path,
    model_path: &Path,
    config: &Path,
    init: &Path,
    solver: Solver,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let recon_cfg = cfg.recon_config()?;
    let sinogram = load_sinogram(sino)?;
    let model = load_model(model_path)?;
    let init_img = load_image(init)?;
    let use_single = match solver {
        Solver::Auto => model.layers() == 1,
        Solver::Single => true,
        Solver::Multi => false,
    };
    header(
        "reconstruct",
        &[
            ("sino", path_str(sino)),
            ("model", path_str(model_path)),
            ("config", path_str(config)),
            ("init", path_str(init)),
            ("layers", model.layers().to_string()),
            (
                "solver",
                if use_single {
                    "single".into()
                } else {
                    "multi".into()
                },
            ),
            ("beta", recon_cfg.beta.to_string()),
            ("gammas", format!("{:?}", recon_cfg.gammas)),
            ("outer_iters", recon_cfg.outer_iters.to_string()),
            ("inner_iters", recon_cfg.inner_iters.to_string()),
            ("subsets", recon_cfg.subsets.to_string()),
            ("alpha", recon_cfg.alpha.to_string()),
            ("rho_min", recon_cfg.rho_min.to_string()),
            ("patch_side", recon_cfg.patch.patch_side.to_string()),
            ("stride", recon_cfg.patch.stride.to_string()),
            ("out", path_str(out)),
        ],
    );

    let x = if use_single {
        let (x, trace) = reconstruct_single_layer(&sinogram, &model, &recon_cfg, &init_img)?;
        for rec in &trace {
            eprintln!(
                "# iter = {} objective = {} elapsed_s = {:.3}",
                rec.iteration, rec.objective, rec.elapsed_s
            );
        }
        x
    } else {
        let (x, _) = reconstruct_with(&sinogram, &model, &recon_cfg, &init_img, None, |rec| {
            eprintln!(
                "# iter = {} objective = {} elapsed_s = {:.3}",
                rec.iteration, rec.objective, rec.elapsed_s
            );
        })?;
        x
    };
    save_image(&x, out)
}

pub fn cmd_evaluate(
    recon: &Path,
    reference: &Path,
    roi_fraction: f64,
    out: Option<&Path>,
) -> Result<()> {
    header(
        "evaluate",
        &[
            ("recon", path_str(recon)),
            ("reference", path_str(reference)),
            ("roi_fraction", roi_fraction.to_string()),
            ("out", out.map_or("(stdout only)".into(), path_str)),
        ],
    );
    let test = load_image(recon)?;
    let refi = load_image(reference)?;
    let roi = circular_roi(refi.width(), refi.height(), roi_fraction)?;
    let rows = format!(
        "rmse_hu = {}\npsnr_db = {}\nssim = {}\n",
        rmse(&refi, &test, &roi)?,
        psnr(&refi, &test, &roi)?,
        ssim(&refi, &test, &roi)?
    );
    print!("{rows}");
    if let Some(path) = out {
        std::fs::write(path, rows.as_bytes()).map_err(|e| mrstct::error::Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}
