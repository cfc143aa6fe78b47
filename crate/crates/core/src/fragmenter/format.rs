//! Dataset directory layout: `manifest.json` plus `episodes/NNNNNN.ep`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetConfig};
use super::partition::{Episode, EpisodeFragment};
use super::shapes::{mode_str, parse_mode, Split};
use super::{FragmentError, Result};
use crate::files::write_atomic;
use crate::geometry::Polygon;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "shape-assembly-dataset";
const EPISODE_MAGIC: &str = "shape-assembly-episode";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub format_version: u32,
    pub config: DatasetConfig,
    /// Episode files relative to the dataset directory, indexed by episode id.
    pub episodes: Vec<String>,
    pub splits: SplitLists,
}

fn episode_file(id: usize) -> String {
    format!("episodes/{id:06}.ep")
}

pub fn episode_to_text(ep: &Episode) -> String {
    let mut s = String::new();
    let mut line = |l: String| {
        s.push_str(&l);
        s.push('\n');
    };
    line(format!("{EPISODE_MAGIC} {DATASET_FORMAT_VERSION}"));
    line(format!("id {}", ep.id));
    line(format!("shape {}", ep.shape));
    line(format!("resolution {}", ep.resolution));
    line(format!("k {}", ep.k));
    line(format!("bins {}", ep.num_bins));
    line(format!("mode {}", mode_str(ep.mode)));
    line(format!("scenario {}", ep.scenario));
    line(format!("split {}", ep.split));
    line(format!("seed {}", ep.seed));
    line(format!("target {}", ep.target.to_text()));
    line(format!("fragments {}", ep.fragments.len()));
    for (i, f) in ep.fragments.iter().enumerate() {
        line(format!("fragment {i} {} {} {}", f.gt_center.0, f.gt_center.1, f.gt_bin));
        line(f.canonical.to_text());
    }
    s
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> FragmentError {
        FragmentError::Format { path: self.path.to_path_buf(), line: self.line, msg: msg.into() }
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim()),
            _ => Err(self.err(format!("expected field {key:?}"))),
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.field(key)?;
        v.parse().map_err(|e: T::Err| self.err(format!("{key}: {e}")))
    }

    fn polygon(&self, text: &str) -> Result<Polygon<f64>> {
        Polygon::parse_text(text).map_err(|e| self.err(e.to_string()))
    }
}

pub fn episode_from_text(text: &str, path: &Path) -> Result<Episode> {
    let mut r = Lines { path, inner: text.lines().enumerate(), line: 0 };
    let header = r.next()?;
    let version = match header.split_once(' ') {
        Some((EPISODE_MAGIC, v)) => v.trim().parse::<u32>().map_err(|_| r.err("bad version"))?,
        _ => return Err(r.err("not an episode file")),
    };
    if version != DATASET_FORMAT_VERSION {
        return Err(FragmentError::Version { found: version, expected: DATASET_FORMAT_VERSION });
    }
    let id = r.parsed("id")?;
    let shape = r.parsed("shape")?;
    let resolution = r.parsed("resolution")?;
    let k = r.parsed("k")?;
    let num_bins: usize = r.parsed("bins")?;
    let mode = parse_mode(r.field("mode")?).map_err(|e| r.err(e))?;
    let scenario = r.parsed("scenario")?;
    let split = r.parsed("split")?;
    let seed = r.parsed("seed")?;
    let target_text = r.field("target")?;
    let target = r.polygon(target_text)?;
    let n: usize = r.parsed("fragments")?;
    let mut fragments = Vec::with_capacity(n);
    for i in 0..n {
        let rec = r.field("fragment")?;
        let nums: Vec<i64> = rec
            .split_whitespace()
            .map(|t| t.parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| r.err(format!("fragment record: {e}")))?;
        let [order, row, col, bin] = nums[..] else {
            return Err(r.err("fragment record needs order row col bin"));
        };
        if order != i as i64 {
            return Err(r.err(format!("fragment order {order}, expected {i}")));
        }
        if bin < 0 || bin as usize >= num_bins {
            return Err(r.err(format!("bin {bin} out of range for {num_bins} bins")));
        }
        let poly_text = r.next()?;
        let canonical = r.polygon(poly_text)?;
        fragments.push(EpisodeFragment { canonical, gt_center: (row, col), gt_bin: bin as usize });
    }
    Ok(Episode { id, shape, resolution, k, num_bins, mode, scenario, split, seed, target, fragments })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FragmentError + '_ {
    move |source| FragmentError::Io { path: path.to_path_buf(), source }
}

pub fn write_episode(path: &Path, ep: &Episode) -> Result<()> {
    write_atomic(path, episode_to_text(ep).as_bytes()).map_err(io_err(path))
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    episode_from_text(&text, path)
}

pub fn manifest_for(ds: &Dataset) -> Manifest {
    Manifest {
        format: FORMAT_NAME.into(),
        format_version: DATASET_FORMAT_VERSION,
        config: ds.config.clone(),
        episodes: ds.episodes.iter().map(|e| episode_file(e.id)).collect(),
        splits: SplitLists {
            train: ds.split_ids(Split::Train),
            val: ds.split_ids(Split::Val),
            test: ds.split_ids(Split::Test),
        },
    }
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let ep_dir = dir.join("episodes");
    fs::create_dir_all(&ep_dir).map_err(io_err(&ep_dir))?;
    for ep in &ds.episodes {
        write_episode(&dir.join(episode_file(ep.id)), ep)?;
    }
    let mut json = serde_json::to_string_pretty(&manifest_for(ds))?;
    json.push('\n');
    let mpath = dir.join("manifest.json");
    write_atomic(&mpath, json.as_bytes()).map_err(io_err(&mpath))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mpath: PathBuf = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT_NAME {
        return Err(FragmentError::Format { path: mpath, line: 1, msg: format!("unknown format {:?}", m.format) });
    }
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(FragmentError::Version { found: m.format_version, expected: DATASET_FORMAT_VERSION });
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let episodes = m
        .episodes
        .iter()
        .map(|rel| read_episode(&dir.join(rel)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { config: m.config, episodes })
}
