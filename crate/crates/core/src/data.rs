//! Datasets, labeled/unlabeled splits and synthetic data.

use std::collections::HashSet;
use std::path::Path;

use crate::augment::{read_pnm, Image};
use crate::rng::{Purpose, RngStream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    images: Vec<Image>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<Image>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let name = name.into();
        if images.len() != labels.len() {
            return Err(Error::data(format!(
                "{name}: {} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::data(format!(
                "{name}: label {l} of sample {i} is not below the class count {num_classes}"
            )));
        }
        if let Some(first) = images.first() {
            if let Some(i) = images.iter().position(|im| !im.same_shape(first)) {
                return Err(Error::data(format!("{name}: sample {i} differs in shape from sample 0")));
            }
        }
        Ok(Self {
            name,
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `(height, width, channels)` of the samples, if any.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|im| (im.height(), im.width(), im.channels()))
    }

    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        Dataset {
            name: name.into(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Sample indices grouped by class, each group ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_labels: usize,
    pub balanced: bool,
    pub seed: u64,
    pub include_labeled_in_unlabeled: bool,
}

/// A labeled / unlabeled partition of a source dataset.
///
/// The unlabeled set keeps the true labels for diagnostics only (pseudo-label
/// accuracy); training never reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    /// Source indices of the labeled samples.
    pub labeled_indices: Vec<usize>,
    /// Source indices of samples that are only in the unlabeled pool.
    pub unlabeled_only_indices: Vec<usize>,
}

fn shuffled(indices: &[usize], rng: &mut RngStream) -> Vec<usize> {
    let mut v = indices.to_vec();
    rng.shuffle(&mut v);
    v
}

pub fn make_split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    if spec.n_labels > ds.len() {
        return Err(Error::param(format!(
            "{} labels requested from a dataset of {}",
            spec.n_labels,
            ds.len()
        )));
    }
    let labeled_indices: Vec<usize> = if spec.balanced {
        let classes = ds.num_classes();
        if classes == 0 || spec.n_labels % classes != 0 {
            return Err(Error::param(format!(
                "balanced split needs n_labels divisible by {classes}, got {}",
                spec.n_labels
            )));
        }
        let per_class = spec.n_labels / classes;
        let mut chosen = Vec::with_capacity(spec.n_labels);
        for (class, members) in ds.class_indices().iter().enumerate() {
            if members.len() < per_class {
                return Err(Error::data(format!(
                    "class {class} has {} examples, {per_class} needed",
                    members.len()
                )));
            }
            let mut rng = RngStream::derive(spec.seed, Purpose::Split, &[class as u64]);
            chosen.extend_from_slice(&shuffled(members, &mut rng)[..per_class]);
        }
        chosen
    } else {
        let all: Vec<usize> = (0..ds.len()).collect();
        let mut rng = RngStream::derive(spec.seed, Purpose::Split, &[u64::MAX]);
        shuffled(&all, &mut rng)[..spec.n_labels].to_vec()
    };
    let taken: HashSet<usize> = labeled_indices.iter().copied().collect();
    let unlabeled_only_indices: Vec<usize> = (0..ds.len()).filter(|i| !taken.contains(i)).collect();
    let mut pool = unlabeled_only_indices.clone();
    if spec.include_labeled_in_unlabeled {
        pool.extend_from_slice(&labeled_indices);
    }
    Ok(Split {
        labeled: ds.subset(format!("{}-labeled", ds.name), &labeled_indices),
        unlabeled: ds.subset(format!("{}-unlabeled", ds.name), &pool),
        labeled_indices,
        unlabeled_only_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongTailSpec {
    /// Imbalance ratio between the head and the tail class.
    pub lambda_imb: f64,
    /// Head-class count.
    pub n1: usize,
    pub num_classes: usize,
    /// Labeled fraction per class.
    pub beta: f64,
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_imb > 1.0) || !self.lambda_imb.is_finite() {
            return Err(Error::param(format!("imbalance ratio must exceed 1, got {}", self.lambda_imb)));
        }
        if self.n1 == 0 || self.num_classes == 0 {
            return Err(Error::param("long-tail head count and class count must be positive"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::param(format!("labeled fraction must lie in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// `N_k = round(N1 * lambda^(-(k-1)/(L-1)))`, at least 1, for `k = 1..=L`.
pub fn long_tail_counts(spec: &LongTailSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let l = spec.num_classes;
    Ok((0..l)
        .map(|k| {
            let exponent = if l == 1 { 0.0 } else { -(k as f64) / (l as f64 - 1.0) };
            let n = (spec.n1 as f64 * spec.lambda_imb.powf(exponent)).round() as usize;
            n.max(1)
        })
        .collect())
}

/// Subsamples class `k` to `N_k` examples and labels `round(beta * N_k)` (at
/// least 1) of them; the rest of the `N_k` form the unlabeled pool.
pub fn make_long_tail(ds: &Dataset, spec: &LongTailSpec, seed: u64) -> Result<Split> {
    if spec.num_classes != ds.num_classes() {
        return Err(Error::param(format!(
            "long-tail spec has {} classes, dataset {}",
            spec.num_classes,
            ds.num_classes()
        )));
    }
    let counts = long_tail_counts(spec)?;
    let mut labeled_indices = Vec::new();
    let mut unlabeled_only_indices = Vec::new();
    for (class, members) in ds.class_indices().iter().enumerate() {
        let n_k = counts[class];
        if members.len() < n_k {
            return Err(Error::data(format!(
                "class {class} has {} examples, long-tail count {n_k} needed",
                members.len()
            )));
        }
        let mut rng = RngStream::derive(seed, Purpose::Split, &[class as u64, 1]);
        let picked = shuffled(members, &mut rng);
        let n_lab = ((spec.beta * n_k as f64).round() as usize).clamp(1, n_k);
        labeled_indices.extend_from_slice(&picked[..n_lab]);
        unlabeled_only_indices.extend_from_slice(&picked[n_lab..n_k]);
    }
    Ok(Split {
        labeled: ds.subset(format!("{}-lt-labeled", ds.name), &labeled_indices),
        unlabeled: ds.subset(format!("{}-lt-unlabeled", ds.name), &unlabeled_only_indices),
        labeled_indices,
        unlabeled_only_indices,
    })
}

/// Foreground / background intensities of the blob templates.
const BLOB_ON: u8 = 200;
const BLOB_OFF: u8 = 50;
const MIN_SIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Texture {
    Rows(usize),
    Cols(usize),
    Checker(usize),
    Flat(f64),
}

impl Texture {
    fn render(self, side: usize) -> Vec<u8> {
        let mut pixels = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let on = match self {
                    Texture::Rows(b) => (y / b) % 2 == 0,
                    Texture::Cols(b) => (x / b) % 2 == 0,
                    Texture::Checker(b) => (y / b + x / b) % 2 == 0,
                    Texture::Flat(level) => {
                        pixels.push(level.round() as u8);
                        continue;
                    }
                };
                pixels.push(if on { BLOB_ON } else { BLOB_OFF });
            }
        }
        pixels
    }
}

/// Texture of every class. Classes are block textures (row stripes, column
/// stripes, checkerboard) at several block sizes plus flat gray fields, so
/// identity survives translation, flips, cutout and intensity inversion.
fn textures(classes: usize, side: usize) -> Vec<Texture> {
    let base = (side / 4).max(1);
    let mut blocks = Vec::new();
    let mut b = base;
    while b < side {
        blocks.push(b);
        b *= 2;
    }
    let mut b = base / 2;
    while b >= 1 {
        blocks.push(b);
        b /= 2;
    }
    let mut patterns = Vec::new();
    let mut seen: Vec<Vec<u8>> = Vec::new();
    for (i, &b) in blocks.iter().enumerate() {
        for t in [Texture::Rows(b), Texture::Cols(b), Texture::Checker(b)] {
            let pixels = t.render(side);
            if pixels.iter().all(|&p| p == pixels[0]) || seen.contains(&pixels) {
                continue;
            }
            seen.push(pixels);
            patterns.push(t);
        }
        if i == 0 {
            patterns.push(Texture::Flat(0.0));
        }
    }
    patterns.truncate(classes);
    let flats = patterns.iter().filter(|t| matches!(t, Texture::Flat(_))).count() + classes - patterns.len();
    patterns.resize(classes, Texture::Flat(0.0));
    let span = f64::from(BLOB_ON - BLOB_OFF);
    let mut j = 0;
    for t in &mut patterns {
        if let Texture::Flat(level) = t {
            j += 1;
            *level = f64::from(BLOB_OFF) + span * j as f64 / (flats + 1) as f64;
        }
    }
    patterns
}

/// Noise-free template of `class` among `classes` on a `side`x`side` grid.
/// Templates depend only on `(class, classes, side)`, never on a seed.
pub fn blob_template(class: usize, classes: usize, side: usize) -> Result<Image> {
    if side < MIN_SIDE {
        return Err(Error::param(format!("blob images need side >= {MIN_SIDE}, got {side}")));
    }
    if class >= classes {
        return Err(Error::param(format!("class {class} out of range for {classes} classes")));
    }
    Image::new(side, side, 1, textures(classes, side)[class].render(side))
}

/// Grayscale `side`x`side` images: class template plus Gaussian noise with
/// standard deviation `noise * 255`, rounded and clamped. Samples are ordered
/// class-major.
pub fn synth_blobs(classes: usize, per_class: usize, side: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::param(format!("noise must be finite and >= 0, got {noise}")));
    }
    if side < MIN_SIDE {
        return Err(Error::param(format!("blob images need side >= {MIN_SIDE}, got {side}")));
    }
    let templates = (0..classes)
        .map(|k| blob_template(k, classes, side))
        .collect::<Result<Vec<_>>>()?;
    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (k, template) in templates.iter().enumerate() {
        for i in 0..per_class {
            let mut rng = RngStream::derive(seed, Purpose::Synth, &[k as u64, i as u64]);
            let pixels = template
                .pixels()
                .iter()
                .map(|&p| {
                    let v = f64::from(p) + noise * 255.0 * rng.normal();
                    v.round().clamp(0.0, 255.0) as u8
                })
                .collect();
            images.push(Image::new(side, side, 1, pixels)?);
            labels.push(k);
        }
    }
    Dataset::new(format!("blobs-{classes}x{side}"), images, labels, classes)
}

const LABELS_FILE: &str = "labels.tsv";

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ppm" | "pgm" | "pnm")
    )
}

/// Loads PGM/PPM files listed in `labels.tsv` (`#classes=<L>` header, then
/// `filename<TAB>label` rows). Every image file in the directory must have a
/// row.
pub fn load_directory(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let labels_path = dir.join(LABELS_FILE);
    let text = std::fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let name = dir
        .file_name()
        .map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned());

    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut num_classes = None;
    let mut rows = Vec::new();
    if let Some((_, first)) = lines.next() {
        let header = first
            .trim()
            .strip_prefix("#classes=")
            .ok_or_else(|| Error::data(format!("{}: first line must be `#classes=<L>`", labels_path.display())))?;
        num_classes = Some(header.trim().parse::<usize>().map_err(|_| {
            Error::data(format!("{}: bad class count `{header}`", labels_path.display()))
        })?);
    }
    for (lineno, line) in lines {
        let (file, label) = line.split_once('\t').ok_or_else(|| {
            Error::data(format!("{}:{}: expected `filename<TAB>label`", labels_path.display(), lineno + 1))
        })?;
        let label: usize = label.trim().parse().map_err(|_| {
            Error::data(format!("{}:{}: bad label `{label}`", labels_path.display(), lineno + 1))
        })?;
        rows.push((lineno + 1, file.to_string(), label));
    }
    let num_classes = num_classes.unwrap_or(0);

    let listed: HashSet<&str> = rows.iter().map(|(_, f, _)| f.as_str()).collect();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut unlisted = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if is_pnm(&path) {
            let fname = path.file_name().unwrap().to_string_lossy().into_owned();
            if !listed.contains(fname.as_str()) {
                unlisted.push(fname);
            }
        }
    }
    if !unlisted.is_empty() {
        unlisted.sort();
        return Err(Error::data(format!(
            "{}: missing label for {}",
            labels_path.display(),
            unlisted.join(", ")
        )));
    }

    let mut images = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (lineno, file, label) in rows {
        if label >= num_classes {
            return Err(Error::data(format!(
                "{}:{lineno}: label {label} of {file} is not below #classes={num_classes}",
                labels_path.display()
            )));
        }
        let img = read_pnm(dir.join(&file)).map_err(|e| Error::data(format!("{file}: {e}")))?;
        if let Some(first) = images.first() {
            if !img.same_shape(first) {
                return Err(Error::data(format!(
                    "{file}: {}x{}x{} differs from the first image",
                    img.height(),
                    img.width(),
                    img.channels()
                )));
            }
        }
        images.push(img);
        labels.push(label);
    }
    Dataset::new(name, images, labels, num_classes)
}
