//! Dataset manifests: one JSON file listing image/mask/class triples.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Image path, relative to the manifest's directory.
    pub image: String,
    pub mask: String,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub entries: Vec<ManifestEntry>,
    /// Working resolution suggested for this dataset; the run config decides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_files()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    fn check_files(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Manifest("manifest has no entries".into()));
        }
        for e in &self.entries {
            for p in [&e.image, &e.mask] {
                if !self.root.join(p).is_file() {
                    return Err(Error::Manifest(format!("missing file {p}")));
                }
            }
        }
        Ok(())
    }

    /// Entry indices per class, classes in lexicographic order.
    pub fn by_class(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            out.entry(e.class.as_str()).or_default().push(i);
        }
        out
    }

    pub fn load_entry(&self, i: usize) -> Result<(Image, Mask)> {
        let e = &self.entries[i];
        let image = Image::load(self.root.join(&e.image))?;
        let mask = Mask::load(self.root.join(&e.mask))?;
        mask.ensure_same_dims(image.dims())?;
        Ok((image, mask))
    }
}
