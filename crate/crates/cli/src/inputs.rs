//! Locating and decoding input images.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drnet_core::dataset::load_manifest;
use drnet_core::imageproc::{extract_green, load_rgb, normalize, preprocess_plane, Plane8, PreprocConfig};
use drnet_core::Tensor;
use rayon::prelude::*;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "pgm", "ppm", "pnm"];

/// An input image with its stage label, when known.
#[derive(Clone, Debug)]
pub struct Input {
    pub path: PathBuf,
    pub label: Option<u8>,
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// A directory (its image files in name order), a `path,label` manifest, or
/// a single image.
pub fn collect(path: &Path) -> Result<Vec<Input>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.is_file() && is_image(p));
        files.sort();
        return Ok(files.into_iter().map(|path| Input { path, label: None }).collect());
    }
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let m = load_manifest(path).with_context(|| format!("reading manifest {}", path.display()))?;
        return Ok(m
            .records()
            .iter()
            .map(|(p, l)| Input {
                path: p.clone(),
                label: Some(*l),
            })
            .collect());
    }
    if !path.is_file() {
        bail!("input {} does not exist", path.display());
    }
    Ok(vec![Input {
        path: path.to_path_buf(),
        label: None,
    }])
}

/// Decodes one image into the network input plane. Raw photographs go
/// through the full preprocessing pipeline; already preprocessed files only
/// have their green channel taken.
pub fn load_plane(path: &Path, raw: bool, cfg: &PreprocConfig) -> Result<Plane8> {
    let img = load_rgb(path).with_context(|| format!("reading {}", path.display()))?;
    if raw {
        return preprocess_plane(&img, cfg).with_context(|| format!("preprocessing {}", path.display()));
    }
    Ok(extract_green(&img))
}

/// Loads network inputs of side `side`, in input order, on `pool`.
pub fn load_tensors(
    pool: &rayon::ThreadPool,
    inputs: &[Input],
    raw: bool,
    cfg: &PreprocConfig,
    side: usize,
) -> Result<Vec<Tensor<f32>>> {
    pool.install(|| {
        inputs
            .par_iter()
            .map(|i| {
                let p = load_plane(&i.path, raw, cfg)?;
                if p.width() != side || p.height() != side {
                    bail!(
                        "{} is {}x{}, the model expects {}x{} (pass --raw for unprocessed photographs)",
                        i.path.display(),
                        p.width(),
                        p.height(),
                        side,
                        side
                    );
                }
                Ok(normalize(&p))
            })
            .collect()
    })
}

pub fn labels(inputs: &[Input]) -> Result<Vec<usize>> {
    inputs
        .iter()
        .map(|i| match i.label {
            Some(l) => Ok(l as usize),
            None => bail!("{} has no label; pass a manifest", i.path.display()),
        })
        .collect()
}
