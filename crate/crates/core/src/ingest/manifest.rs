//! Dataset manifests and chronological splits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use super::iq::parse_key_values;
use super::render::Norm;
use crate::error::{Error, Result};
use crate::tensor::{io, Tensor};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (train, val, test)"))),
        }
    }
}

/// Contiguous train/val/test ranges over `n` chronologically ordered items.
///
/// Boundaries are the rounded cumulative ratio, clamped so that no split is
/// empty.
pub fn chronological_split(n: usize, ratio: [usize; 3]) -> Result<[Range<usize>; 3]> {
    if ratio.contains(&0) {
        return Err(Error::Config(format!("split ratio parts must be positive, got {ratio:?}")));
    }
    if n < 3 {
        return Err(Error::Data(format!("{n} clips cannot fill three splits")));
    }
    let total = ratio.iter().sum::<usize>() as f64;
    let cut = |parts: usize| (n as f64 * parts as f64 / total).round() as usize;
    let a = cut(ratio[0]).clamp(1, n - 2);
    let b = cut(ratio[0] + ratio[1]).clamp(a + 1, n - 1);
    Ok([0..a, a..b, b..n])
}

/// Fails unless timestamps strictly increase.
pub fn check_chronological(timestamps: &[i64]) -> Result<()> {
    for (i, w) in timestamps.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::Data(format!(
                "records out of chronological order: timestamp {} at position {} follows {}",
                w[1],
                i + 1,
                w[0]
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipEntry {
    /// Relative to the manifest directory.
    pub path: String,
    /// Timestamp of the first frame.
    pub timestamp: i64,
}

/// Clip list, split boundaries and rendering settings of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub clips: Vec<ClipEntry>,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub input_length: usize,
    pub horizon: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub norm: Norm,
    pub frame_period_s: f64,
    pub source: String,
    /// Directory the manifest was read from or written to.
    pub root: PathBuf,
}

fn range_str(r: &Range<usize>) -> String {
    format!("{}..{}", r.start, r.end)
}

fn parse_range(s: &str) -> Option<Range<usize>> {
    let (a, b) = s.split_once("..")?;
    Some(a.parse().ok()?..b.parse().ok()?)
}

impl Manifest {
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    /// Clip shape `(T + K, H, W, ch)`.
    pub fn clip_shape(&self) -> [usize; 4] {
        [self.input_length + self.horizon, self.height, self.width, self.channels]
    }

    pub fn clip_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.clips[i].path)
    }

    pub fn load_clip(&self, i: usize) -> Result<Tensor> {
        let t = io::load(self.clip_path(i)).map_err(|e| Error::Data(format!("clip {i}: {e}")))?;
        if t.shape() != self.clip_shape() {
            return Err(Error::Data(format!(
                "clip {i} has shape {:?}, manifest says {:?}",
                t.shape(),
                self.clip_shape()
            )));
        }
        Ok(t)
    }

    /// `(input, target)` pairs of one split, in chronological order.
    pub fn samples(&self, split: Split) -> Result<Vec<(Tensor, Tensor)>> {
        let r = self.range(split);
        if r.is_empty() {
            return Err(Error::Config(format!("{} split is empty", split.as_str())));
        }
        r.map(|i| {
            let clip = self.load_clip(i)?;
            let t = self.input_length;
            Ok((clip.slice_axis0(0, t)?, clip.slice_axis0(t, t + self.horizon)?))
        })
        .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("source", self.source.clone());
        kv("input_length", self.input_length.to_string());
        kv("horizon", self.horizon.to_string());
        kv("height", self.height.to_string());
        kv("width", self.width.to_string());
        kv("channels", self.channels.to_string());
        kv("frame_period_s", format!("{}", self.frame_period_s));
        kv("norm.db_min", format!("{:?}", self.norm.db_min));
        kv("norm.db_max", format!("{:?}", self.norm.db_max));
        kv("split.train", range_str(&self.train));
        kv("split.val", range_str(&self.val));
        kv("split.test", range_str(&self.test));
        kv("clip.count", self.clips.len().to_string());
        for (i, c) in self.clips.iter().enumerate() {
            kv(&format!("clip.{i}.path"), c.path.clone());
            kv(&format!("clip.{i}.timestamp"), c.timestamp.to_string());
        }
        s
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads `manifest.txt` from a directory, or the given file.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", file.display())))?;
        let kv = parse_key_values(&text, &file)?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_map(&kv, root).map_err(|e| Error::Data(format!("{}: {e}", file.display())))
    }

    fn from_map(kv: &BTreeMap<String, String>, root: PathBuf) -> std::result::Result<Self, String> {
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| format!("missing {k}"));
        fn num<T: std::str::FromStr>(k: &str, v: String) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("{k}={v} is not a number"))
        }
        let range = |k: &str| get(k).and_then(|v| parse_range(&v).ok_or(format!("{k}={v} is not a range a..b")));
        let count: usize = num("clip.count", get("clip.count")?)?;
        let clips = (0..count)
            .map(|i| {
                Ok(ClipEntry {
                    path: get(&format!("clip.{i}.path"))?,
                    timestamp: num("timestamp", get(&format!("clip.{i}.timestamp"))?)?,
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let m = Manifest {
            clips,
            train: range("split.train")?,
            val: range("split.val")?,
            test: range("split.test")?,
            input_length: num("input_length", get("input_length")?)?,
            horizon: num("horizon", get("horizon")?)?,
            height: num("height", get("height")?)?,
            width: num("width", get("width")?)?,
            channels: num("channels", get("channels")?)?,
            norm: Norm {
                db_min: num("norm.db_min", get("norm.db_min")?)?,
                db_max: num("norm.db_max", get("norm.db_max")?)?,
            },
            frame_period_s: num("frame_period_s", get("frame_period_s")?)?,
            source: get("source")?,
            root,
        };
        let ordered = m.train.start == 0
            && m.train.end == m.val.start
            && m.val.end == m.test.start
            && m.test.end == count
            && m.train.start <= m.train.end
            && m.val.start <= m.val.end
            && m.test.start <= m.test.end;
        if !ordered {
            return Err("splits must be contiguous and cover every clip in order".into());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let sizes = |n| chronological_split(n, [4, 1, 1]).unwrap().map(|r| r.len());
        assert_eq!(chronological_split(6, [4, 1, 1]).unwrap(), [0..4, 4..5, 5..6]);
        assert_eq!(sizes(10), [7, 1, 2]);
        assert_eq!(sizes(12), [8, 2, 2]);
        assert_eq!(sizes(16), [11, 2, 3]);
        assert_eq!(sizes(3), [1, 1, 1]);
        assert!(chronological_split(2, [4, 1, 1]).is_err());
        assert!(chronological_split(6, [4, 0, 1]).is_err());
    }

    #[test]
    fn out_of_order_timestamps_rejected() {
        assert!(check_chronological(&[1, 2, 3]).is_ok());
        assert!(check_chronological(&[1, 3, 2]).is_err());
        assert!(check_chronological(&[1, 1]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            clips: (0..6)
                .map(|i| ClipEntry {
                    path: format!("clips/clip_{i:04}.spt"),
                    timestamp: 100 + 8 * i as i64,
                })
                .collect(),
            train: 0..4,
            val: 4..5,
            test: 5..6,
            input_length: 4,
            horizon: 4,
            height: 8,
            width: 8,
            channels: 3,
            norm: Norm {
                db_min: -31.25,
                db_max: 7.1,
            },
            frame_period_s: 1.0,
            source: "synth:fm_like".into(),
            root: dir.path().to_path_buf(),
        };
        m.write().unwrap();
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
    }
}
