//! Vocabularies, composition space, split generation, synthetic image
//! rendering, triplet sampling, and dataset directory I/O.

pub mod embeddings;
pub mod manifest;
pub mod render;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use render::{ATTR_WORDS, OBJ_WORDS};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("no valid {kind} partner for anchor pair ({attr}, {obj})")]
    PartnerNotFound { kind: &'static str, attr: usize, obj: usize },
    #[error("{path} line {line}: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

/// Attribute and object vocabularies plus the seen/unseen pair split.
/// Pairs are indexed attribute-major: `pair_index(a, o) = a * |O| + o`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionSpace {
    pub attrs: Vec<String>,
    pub objs: Vec<String>,
    pub seen: BTreeSet<usize>,
    pub unseen: BTreeSet<usize>,
}

impl CompositionSpace {
    pub fn n_attrs(&self) -> usize {
        self.attrs.len()
    }

    pub fn n_objs(&self) -> usize {
        self.objs.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.attrs.len() * self.objs.len()
    }

    pub fn pair_index(&self, attr: usize, obj: usize) -> usize {
        attr * self.objs.len() + obj
    }

    pub fn pair_of(&self, pair: usize) -> (usize, usize) {
        (pair / self.objs.len(), pair % self.objs.len())
    }

    pub fn is_seen(&self, pair: usize) -> bool {
        self.seen.contains(&pair)
    }

    pub fn attr_of_name(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a == name)
    }

    pub fn obj_of_name(&self, name: &str) -> Option<usize> {
        self.objs.iter().position(|o| o == name)
    }

    /// Seen and unseen must be disjoint subsets of the full pair grid, and
    /// every attribute and object must occur in at least one seen pair.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.seen.intersection(&self.unseen).next().is_some() {
            return Err(DataError::InvalidArgument("seen and unseen pair sets overlap".into()));
        }
        if let Some(&p) = self.seen.union(&self.unseen).find(|&&p| p >= self.n_pairs()) {
            return Err(DataError::InvalidArgument(format!("pair index {p} out of range")));
        }
        let mut attr_covered = vec![false; self.n_attrs()];
        let mut obj_covered = vec![false; self.n_objs()];
        for &p in &self.seen {
            let (a, o) = self.pair_of(p);
            attr_covered[a] = true;
            obj_covered[o] = true;
        }
        if let Some(a) = attr_covered.iter().position(|&c| !c) {
            return Err(DataError::InfeasibleSplit(format!("attribute {:?} has no seen pair", self.attrs[a])));
        }
        if let Some(o) = obj_covered.iter().position(|&c| !c) {
            return Err(DataError::InfeasibleSplit(format!("object {:?} has no seen pair", self.objs[o])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitKind::Train),
            "val" => Some(SplitKind::Val),
            "test" => Some(SplitKind::Test),
            _ => None,
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Square RGB image, row-major (y, x, channel), values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(size: usize, value: f32) -> Self {
        Image { size, data: vec![value; size * size * 3] }
    }

    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.size + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u32,
    pub image: Image,
    pub y_attr: usize,
    pub y_obj: usize,
    pub split: SplitKind,
}

impl Sample {
    pub fn pair(&self, space: &CompositionSpace) -> usize {
        space.pair_index(self.y_attr, self.y_obj)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub n_attrs: usize,
    pub n_objs: usize,
    pub unseen_frac: f64,
    pub samples_per_pair: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { n_attrs: 6, n_objs: 8, unseen_frac: 0.2, samples_per_pair: 40, image_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub space: CompositionSpace,
    pub image_size: usize,
    pub samples: Vec<Sample>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Generate the composition space and rendered samples. Pure function of the
/// configuration; unseen pairs are drawn uniformly among splits that keep
/// every attribute and object covered by at least one seen pair.
pub fn generate_dataset(cfg: &GenConfig) -> Result<(CompositionSpace, Vec<Sample>), DataError> {
    if cfg.n_attrs < 2 || cfg.n_objs < 2 {
        return Err(DataError::InvalidArgument("need at least 2 attributes and 2 objects".into()));
    }
    if cfg.n_attrs > ATTR_WORDS.len() || cfg.n_objs > OBJ_WORDS.len() {
        return Err(DataError::InvalidArgument(format!(
            "vocabulary supports up to {} attributes and {} objects",
            ATTR_WORDS.len(),
            OBJ_WORDS.len()
        )));
    }
    if !(0.0..1.0).contains(&cfg.unseen_frac) {
        return Err(DataError::InvalidArgument("unseen_frac must be in [0, 1)".into()));
    }
    if cfg.samples_per_pair == 0 || cfg.image_size < 8 {
        return Err(DataError::InvalidArgument("need samples_per_pair >= 1 and image_size >= 8".into()));
    }

    let attrs: Vec<String> = ATTR_WORDS[..cfg.n_attrs].iter().map(|s| s.to_string()).collect();
    let objs: Vec<String> = OBJ_WORDS[..cfg.n_objs].iter().map(|s| s.to_string()).collect();
    let n_pairs = cfg.n_attrs * cfg.n_objs;
    let n_unseen = (cfg.unseen_frac * n_pairs as f64).round() as usize;
    if n_pairs - n_unseen < cfg.n_attrs.max(cfg.n_objs) {
        return Err(DataError::InfeasibleSplit(format!(
            "{} seen pairs cannot cover {} attributes and {} objects",
            n_pairs - n_unseen,
            cfg.n_attrs,
            cfg.n_objs
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x5eed_0511));
    let mut space = None;
    let all: Vec<usize> = (0..n_pairs).collect();
    for _ in 0..10_000 {
        let mut pool = all.clone();
        pool.shuffle(&mut rng);
        let unseen: BTreeSet<usize> = pool[..n_unseen].iter().copied().collect();
        let seen: BTreeSet<usize> = pool[n_unseen..].iter().copied().collect();
        let candidate = CompositionSpace { attrs: attrs.clone(), objs: objs.clone(), seen, unseen };
        if candidate.validate().is_ok() {
            space = Some(candidate);
            break;
        }
    }
    let space = space.ok_or_else(|| {
        DataError::InfeasibleSplit("could not draw a split covering every attribute and object".into())
    })?;

    // Per-pair split sizes. Seen pairs hold out a tenth each for val and test
    // (so the test split contains seen-labelled samples); unseen pairs go half
    // to val, the remainder (rounded up, so at least one) to test.
    let spp = cfg.samples_per_pair;
    let seen_holdout = if spp >= 5 { (spp / 10).max(1) } else { 0 };

    struct Spec {
        pair: usize,
        k: usize,
        split: SplitKind,
        seed: u64,
    }
    let mut specs = Vec::with_capacity(n_pairs * spp);
    for pair in 0..n_pairs {
        let is_seen = space.is_seen(pair);
        for k in 0..spp {
            let split = if is_seen {
                if k < seen_holdout {
                    SplitKind::Val
                } else if k < 2 * seen_holdout {
                    SplitKind::Test
                } else {
                    SplitKind::Train
                }
            } else if k < spp / 2 {
                SplitKind::Val
            } else {
                SplitKind::Test
            };
            let seed = splitmix64(cfg.seed ^ splitmix64((pair as u64) << 20 | k as u64));
            specs.push(Spec { pair, k, split, seed });
        }
    }

    let samples: Vec<Sample> = specs
        .par_iter()
        .enumerate()
        .map(|(id, spec)| {
            let (attr, obj) = space.pair_of(spec.pair);
            let mut srng = ChaCha8Rng::seed_from_u64(spec.seed);
            let image = render::render_sample(attr, obj, cfg.image_size, &mut srng);
            let _ = spec.k;
            Sample { id: id as u32, image, y_attr: attr, y_obj: obj, split: spec.split }
        })
        .collect();

    Ok((space, samples))
}

// ── Dataset directory I/O ────────────────────────────────────────────

const SPACE_MAGIC: &str = "#owczsl-space v1";

impl Dataset {
    /// Write `space.txt`, `manifest.tsv`, and one raw little-endian f32 blob
    /// per sample under `images/`.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let space_path = dir.join("space.txt");
        let mut text = String::new();
        text.push_str(SPACE_MAGIC);
        text.push('\n');
        text.push_str(&format!("image_size {}\n", self.image_size));
        text.push_str(&format!("attrs {}\n", self.space.attrs.join(" ")));
        text.push_str(&format!("objs {}\n", self.space.objs.join(" ")));
        let join = |set: &BTreeSet<usize>| set.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ");
        text.push_str(&format!("seen {}\n", join(&self.space.seen)));
        text.push_str(&format!("unseen {}\n", join(&self.space.unseen)));
        fs::write(&space_path, text).map_err(|e| io_err(&space_path, e))?;

        manifest::write_manifest(&dir.join("manifest.tsv"), &self.space, &self.samples)?;

        let img_dir = dir.join("images");
        fs::create_dir_all(&img_dir).map_err(|e| io_err(&img_dir, e))?;
        for s in &self.samples {
            let path = img_dir.join(format!("{}.f32", s.id));
            let mut bytes = Vec::with_capacity(s.image.data.len() * 4);
            for v in &s.image.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let mut f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            f.write_all(&bytes).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let space_path = dir.join("space.txt");
        let text = fs::read_to_string(&space_path).map_err(|e| io_err(&space_path, e))?;
        let pathstr = space_path.display().to_string();
        let mut lines = text.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| DataError::Parse { path: pathstr.clone(), line: 1, detail: "empty file".into() })?;
        if first != SPACE_MAGIC {
            return Err(DataError::Parse { path: pathstr.clone(), line: 1, detail: format!("bad magic {first:?}") });
        }
        let mut image_size = None;
        let mut attrs = None;
        let mut objs = None;
        let mut seen = None;
        let mut unseen = None;
        for (i, line) in lines {
            let lineno = i + 1;
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let perr = |detail: String| DataError::Parse { path: pathstr.clone(), line: lineno, detail };
            let parse_set = |rest: &str| -> Result<BTreeSet<usize>, DataError> {
                rest.split_whitespace().map(|t| t.parse().map_err(|e| perr(format!("bad pair index: {e}")))).collect()
            };
            match key {
                "image_size" => image_size = Some(rest.trim().parse().map_err(|e| perr(format!("bad size: {e}")))?),
                "attrs" => attrs = Some(rest.split_whitespace().map(String::from).collect::<Vec<_>>()),
                "objs" => objs = Some(rest.split_whitespace().map(String::from).collect::<Vec<_>>()),
                "seen" => seen = Some(parse_set(rest)?),
                "unseen" => unseen = Some(parse_set(rest)?),
                other => return Err(perr(format!("unknown key {other:?}"))),
            }
        }
        let missing = |what: &str| DataError::Parse { path: pathstr.clone(), line: 0, detail: format!("missing {what}") };
        let space = CompositionSpace {
            attrs: attrs.ok_or_else(|| missing("attrs"))?,
            objs: objs.ok_or_else(|| missing("objs"))?,
            seen: seen.ok_or_else(|| missing("seen"))?,
            unseen: unseen.ok_or_else(|| missing("unseen"))?,
        };
        space.validate()?;
        let image_size: usize = image_size.ok_or_else(|| missing("image_size"))?;

        let rows = manifest::read_manifest(&dir.join("manifest.tsv"), &space)?;
        let mut samples = Vec::with_capacity(rows.len());
        for row in rows {
            let path = dir.join("images").join(format!("{}.f32", row.id));
            let mut bytes = Vec::new();
            fs::File::open(&path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(|e| io_err(&path, e))?;
            let expect = image_size * image_size * 3 * 4;
            if bytes.len() != expect {
                return Err(DataError::Parse {
                    path: path.display().to_string(),
                    line: 0,
                    detail: format!("expected {expect} bytes, got {}", bytes.len()),
                });
            }
            let data: Vec<f32> =
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            samples.push(Sample {
                id: row.id,
                image: Image { size: image_size, data },
                y_attr: row.y_attr,
                y_obj: row.y_obj,
                split: row.split,
            });
        }
        Ok(Dataset { space, image_size, samples })
    }

    pub fn split(&self, kind: SplitKind) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == kind)
    }

    /// Unseen pairs that occur among val-split samples (the calibration set).
    pub fn val_unseen_pairs(&self) -> BTreeSet<usize> {
        self.split(SplitKind::Val)
            .map(|s| s.pair(&self.space))
            .filter(|p| self.space.unseen.contains(p))
            .collect()
    }
}

// ── Triplet sampling ─────────────────────────────────────────────────

/// Indices into a sample slice: anchor, same-attribute partner (different
/// object), same-object partner (different attribute).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub x: usize,
    pub x_attr: usize,
    pub x_obj: usize,
}

/// Per-attribute and per-object indices over the train split.
#[derive(Debug)]
pub struct TrainIndex {
    by_attr: Vec<Vec<usize>>,
    by_obj: Vec<Vec<usize>>,
}

impl TrainIndex {
    pub fn build(space: &CompositionSpace, samples: &[Sample]) -> Self {
        let mut by_attr = vec![Vec::new(); space.n_attrs()];
        let mut by_obj = vec![Vec::new(); space.n_objs()];
        for (i, s) in samples.iter().enumerate() {
            if s.split == SplitKind::Train {
                by_attr[s.y_attr].push(i);
                by_obj[s.y_obj].push(i);
            }
        }
        TrainIndex { by_attr, by_obj }
    }
}

/// Draw a triplet for the anchor, uniformly among valid partners.
pub fn sample_triplet(
    samples: &[Sample],
    index: &TrainIndex,
    anchor: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Triplet, DataError> {
    let a = &samples[anchor];
    let pick = |pool: &[usize], differs: &dyn Fn(&Sample) -> bool, kind: &'static str, rng: &mut ChaCha8Rng| {
        let candidates: Vec<usize> = pool.iter().copied().filter(|&i| differs(&samples[i])).collect();
        if candidates.is_empty() {
            Err(DataError::PartnerNotFound { kind, attr: a.y_attr, obj: a.y_obj })
        } else {
            Ok(candidates[rng.gen_range(0..candidates.len())])
        }
    };
    let x_attr = pick(&index.by_attr[a.y_attr], &|s: &Sample| s.y_obj != a.y_obj, "same-attribute", rng)?;
    let x_obj = pick(&index.by_obj[a.y_obj], &|s: &Sample| s.y_attr != a.y_attr, "same-object", rng)?;
    Ok(Triplet { x: anchor, x_attr, x_obj })
}
