//! Manifest ingestion, class-balanced splits and a synthetic fixture
//! generator.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imageproc::RgbImage;
use crate::NUM_CLASSES;

/// Labelled image list. Labels are stages 0..=4; paths are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    records: Vec<(PathBuf, u8)>,
    pub note: String,
}

impl Manifest {
    pub fn new(records: Vec<(PathBuf, u8)>, note: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (p, l) in &records {
            if *l as usize >= NUM_CLASSES {
                return invalid(format!("label {} out of range for {}", l, p.display()));
            }
            if !seen.insert(p) {
                return invalid(format!("duplicate path {}", p.display()));
            }
        }
        Ok(Manifest {
            records,
            note: note.into(),
        })
    }

    pub fn records(&self) -> &[(PathBuf, u8)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.1 as usize).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for (_, l) in &self.records {
            c[*l as usize] += 1;
        }
        c
    }

    /// Drops records whose path appears in `excluded`.
    pub fn exclude(&self, excluded: &HashSet<PathBuf>) -> Manifest {
        Manifest {
            records: self
                .records
                .iter()
                .filter(|(p, _)| !excluded.contains(p))
                .cloned()
                .collect(),
            note: self.note.clone(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path", "label"])?;
        for (p, l) in &self.records {
            w.write_record([p.to_string_lossy().as_ref(), &l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn base_dir(file: &Path) -> Result<PathBuf> {
    let parent = file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Ok(std::path::absolute(parent)?)
}

/// Reads a `path,label` CSV. Relative paths resolve against the manifest's
/// directory; every stored path is absolute.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let base = base_dir(path)?;
    let err = |line: u64, detail: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["path", "label"] {
        return Err(err(1, "header must be `path,label`".into()));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 2 {
            return Err(err(line, format!("expected 2 fields, found {}", row.len())));
        }
        let label: u8 = row[1]
            .parse()
            .map_err(|_| err(line, format!("bad label `{}`", &row[1])))?;
        if label as usize >= NUM_CLASSES {
            return Err(err(line, format!("label {} out of range 0-4", label)));
        }
        if row[0].is_empty() {
            return Err(err(line, "empty path".into()));
        }
        let p = base.join(&row[0]);
        if !seen.insert(p.clone()) {
            return Err(err(line, format!("duplicate path {}", p.display())));
        }
        records.push((p, label));
    }
    if records.is_empty() {
        log::warn!("manifest {} has no records", path.display());
    }
    let m = Manifest {
        records,
        note: format!("loaded from {}", path.display()),
    };
    log::info!("manifest {}: class counts {:?}", path.display(), m.class_counts());
    Ok(m)
}

/// Reads an exclusion list: one path per line, blank lines and `#` comments
/// ignored. Relative paths resolve against the list's directory.
pub fn load_exclusions(path: &Path) -> Result<HashSet<PathBuf>> {
    let base = base_dir(path)?;
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// Per-class counts for each split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 1600,
            val: 119,
            test: 191,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn per_class(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

impl Split {
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.train.write_csv(&dir.join("train.csv"))?;
        self.val.write_csv(&dir.join("val.csv"))?;
        self.test.write_csv(&dir.join("test.csv"))?;
        Ok(())
    }
}

/// Shuffles each class with a seeded generator, then assigns contiguous
/// runs to train, val and test. Records beyond the requested counts are
/// left out.
pub fn balanced_split(m: &Manifest, spec: &SplitSpec) -> Result<Split> {
    let need = spec.per_class();
    let mut by_class: Vec<Vec<&(PathBuf, u8)>> = vec![Vec::new(); NUM_CLASSES];
    for r in &m.records {
        by_class[r.1 as usize].push(r);
    }
    for (c, v) in by_class.iter().enumerate() {
        if v.len() < need {
            return Err(Error::InsufficientClass {
                class: c as u8,
                needed: need,
                available: v.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for v in &mut by_class {
        v.shuffle(&mut rng);
        tr.extend(v[..spec.train].iter().map(|r| (*r).clone()));
        va.extend(v[spec.train..spec.train + spec.val].iter().map(|r| (*r).clone()));
        te.extend(v[spec.train + spec.val..need].iter().map(|r| (*r).clone()));
    }
    let note = |s: &str| format!("{} split (seed {}) of: {}", s, spec.seed, m.note);
    Ok(Split {
        train: Manifest { records: tr, note: note("train") },
        val: Manifest { records: va, note: note("val") },
        test: Manifest { records: te, note: note("test") },
    })
}

/// Fraction of records in each class.
pub fn class_weights(m: &Manifest) -> Result<[f64; NUM_CLASSES]> {
    if m.is_empty() {
        return invalid("class weights of an empty manifest");
    }
    let n = m.len() as f64;
    Ok(m.class_counts().map(|c| c as f64 / n))
}

/// Synthetic fundus-like image, for tests only; it carries no clinical
/// meaning. A reddish disc on black, with a bright optic disc, and a number
/// of dark lesion blobs and bright exudate spots that grows with `class`.
pub fn synthetic_fundus(side: usize, class: u8, seed: u64) -> Result<RgbImage> {
    if side < 8 {
        return invalid("synthetic images need side >= 8");
    }
    if class as usize >= NUM_CLASSES {
        return invalid(format!("class {} out of range", class));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64) << 56));
    let s = side as f64;
    let c = s / 2.0;
    let r = s * rng.random_range(0.42..0.48);
    let base = rng.random_range(0.8..1.0);
    let od = (
        c + r * rng.random_range(-0.5..-0.3),
        c + r * rng.random_range(-0.1..0.1),
        r * 0.15,
    );
    let k = class as usize;
    let lesions: Vec<(f64, f64, f64, bool)> = (0..k * k * 2 + k)
        .map(|i| {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let d = r * rng.random_range(0.0..0.85f64).sqrt();
            let rad = s * rng.random_range(0.01..0.02) * (1.0 + 0.3 * k as f64);
            (c + d * a.cos(), c + d * a.sin(), rad, i % 3 == 2)
        })
        .collect();
    let mut px = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let dr = ((fx - c).powi(2) + (fy - c).powi(2)).sqrt() / r;
            if dr > 1.0 {
                px.push([0, 0, 0]);
                continue;
            }
            let shade = base * (1.0 - 0.35 * dr * dr);
            let mut rgb = [190.0 * shade, 90.0 * shade, 40.0 * shade];
            let dod = ((fx - od.0).powi(2) + (fy - od.1).powi(2)).sqrt() / od.2;
            if dod < 1.0 {
                let t = 1.0 - dod;
                rgb = [rgb[0] + 60.0 * t, rgb[1] + 120.0 * t, rgb[2] + 80.0 * t];
            }
            for &(lx, ly, lr, bright) in &lesions {
                let dl = ((fx - lx).powi(2) + (fy - ly).powi(2)).sqrt() / lr;
                if dl < 1.0 {
                    let t = 1.0 - dl * dl;
                    if bright {
                        rgb = [rgb[0] + 40.0 * t, rgb[1] + 110.0 * t, rgb[2] + 30.0 * t];
                    } else {
                        rgb = [rgb[0] * (1.0 - 0.5 * t), rgb[1] * (1.0 - 0.8 * t), rgb[2] * (1.0 - 0.6 * t)];
                    }
                }
            }
            px.push(rgb.map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    RgbImage::new(side, side, px)
}
