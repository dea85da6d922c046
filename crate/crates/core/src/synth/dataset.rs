//! On-disk dataset layout.
//!
//! ```text
//! root/
//!   manifest.txt      one id per line
//!   images/<id>.ppm
//!   gts/<id>.pgm
//!   walls/<id>.pgm    optional wall masks
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};
use super::Sample;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    ids: Vec<String>,
}

fn check_id(id: &str) -> Result<()> {
    let bad = id.is_empty()
        || id.starts_with('.')
        || id.chars().any(|c| c == '/' || c == '\\' || c.is_whitespace());
    if bad {
        return Err(Error::Data(format!("invalid sample id `{id}`")));
    }
    Ok(())
}

impl Dataset {
    /// Reads the manifest of a dataset directory. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut ids = Vec::new();
        for line in text.lines() {
            let id = line.trim();
            if id.is_empty() || id.starts_with('#') {
                continue;
            }
            check_id(id)?;
            if ids.iter().any(|x| x == id) {
                return Err(Error::Data(format!("duplicate id `{id}` in {}", path.display())));
            }
            ids.push(id.to_string());
        }
        if ids.is_empty() {
            return Err(Error::Data(format!("{} lists no samples", path.display())));
        }
        Ok(Self { root, ids })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.ppm"))
    }

    pub fn gt_path(&self, id: &str) -> PathBuf {
        self.root.join("gts").join(format!("{id}.pgm"))
    }

    pub fn walls_path(&self, id: &str) -> PathBuf {
        self.root.join("walls").join(format!("{id}.pgm"))
    }

    pub fn load(&self, id: &str) -> Result<Sample> {
        let need = |p: PathBuf| -> Result<PathBuf> {
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::Data(format!("id `{id}` has no file {}", p.display())))
            }
        };
        let image = read_ppm(&need(self.image_path(id))?)?;
        let gt = read_pgm(&need(self.gt_path(id))?)?;
        let wp = self.walls_path(id);
        let walls = if wp.is_file() { Some(read_pgm(&wp)?) } else { None };
        let sample = Sample {
            id: id.to_string(),
            image,
            gt,
            walls,
        };
        sample.check()?;
        Ok(sample)
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        self.ids.iter().map(|id| self.load(id)).collect()
    }
}

/// Writes samples and a manifest under `root`, creating directories.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    let mkdir = |p: PathBuf| fs::create_dir_all(&p).map_err(|e| Error::io(&p, e));
    mkdir(root.join("images"))?;
    mkdir(root.join("gts"))?;
    if samples.iter().any(|s| s.walls.is_some()) {
        mkdir(root.join("walls"))?;
    }
    let mut manifest = String::new();
    for s in samples {
        check_id(&s.id)?;
        s.check()?;
        write_ppm(&root.join("images").join(format!("{}.ppm", s.id)), &s.image)?;
        write_pgm(&root.join("gts").join(format!("{}.pgm", s.id)), &s.gt)?;
        if let Some(w) = &s.walls {
            write_pgm(&root.join("walls").join(format!("{}.pgm", s.id)), w)?;
        }
        manifest.push_str(&s.id);
        manifest.push('\n');
    }
    let path = root.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}
