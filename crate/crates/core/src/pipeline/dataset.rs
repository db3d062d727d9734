//! On-disk dataset layout:
//!
//! ```text
//! DIR/manifest.toml      seed and counts
//! DIR/shapes/<id>.pts    one "x y z label" line per point
//! DIR/captions.tsv       shape_id<TAB>caption
//! DIR/splits.tsv         shape_id<TAB>train|test
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{read_point_cloud, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub points: usize,
    pub shapes: usize,
    pub captions_per_shape: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Caption {
    /// Index into [`Dataset::shape_ids`].
    pub shape: usize,
    pub text: String,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub shape_ids: Vec<String>,
    pub splits: Vec<Split>,
    pub captions: Vec<Caption>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest: Manifest = toml::from_str(&read(&root.join("manifest.toml"))?)
            .map_err(|e| Error::Data(format!("manifest.toml: {}", e.message())))?;

        let mut shape_ids = Vec::new();
        let mut splits = Vec::new();
        let mut index = BTreeMap::new();
        for (n, line) in read(&root.join("splits.tsv"))?.lines().enumerate() {
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("splits.tsv line {}: expected two fields", n + 1)))?;
            let split: Split = split
                .parse()
                .map_err(|_| Error::Data(format!("splits.tsv line {}: bad split `{split}`", n + 1)))?;
            if index.insert(id.to_string(), shape_ids.len()).is_some() {
                return Err(Error::Data(format!("shape `{id}` appears in more than one split entry")));
            }
            shape_ids.push(id.to_string());
            splits.push(split);
        }
        if shape_ids.is_empty() {
            return Err(Error::Data("dataset has no shapes".into()));
        }

        let mut captions = Vec::new();
        for (n, line) in read(&root.join("captions.tsv"))?.lines().enumerate() {
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("captions.tsv line {}: expected two fields", n + 1)))?;
            let shape = *index
                .get(id)
                .ok_or_else(|| Error::Data(format!("captions.tsv line {}: unknown shape `{id}`", n + 1)))?;
            captions.push(Caption {
                shape,
                text: text.to_string(),
            });
        }
        let mut counts = vec![0usize; shape_ids.len()];
        for c in &captions {
            counts[c.shape] += 1;
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!("shape `{}` has no caption", shape_ids[i])));
        }

        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            shape_ids,
            splits,
            captions,
        })
    }

    pub fn num_shapes(&self) -> usize {
        self.shape_ids.len()
    }

    pub fn shapes_in(&self, split: Split) -> Vec<usize> {
        (0..self.num_shapes()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Caption indices belonging to `shape`, in file order.
    pub fn captions_of(&self, shape: usize) -> Vec<usize> {
        (0..self.captions.len()).filter(|&j| self.captions[j].shape == shape).collect()
    }

    pub fn shape_path(&self, shape: usize) -> PathBuf {
        self.root.join("shapes").join(format!("{}.pts", self.shape_ids[shape]))
    }

    pub fn load_cloud(&self, shape: usize) -> Result<PointCloud> {
        read_point_cloud(&self.shape_path(shape), Some(self.manifest.points))
    }
}
