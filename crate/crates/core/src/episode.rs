//! Episodes: annotated references plus the target image to segment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_image, resize_mask, resize_pair, Image, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub image: Image,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub references: Vec<Reference>,
    pub target: Image,
    pub target_gt: Option<Mask>,
    pub class_id: String,
    pub dataset_id: String,
}

impl Episode {
    pub fn new(
        id: impl Into<String>,
        references: Vec<Reference>,
        target: Image,
        target_gt: Option<Mask>,
        class_id: impl Into<String>,
        dataset_id: impl Into<String>,
    ) -> Result<Self> {
        let ep = Self {
            id: id.into(),
            references,
            target,
            target_gt,
            class_id: class_id.into(),
            dataset_id: dataset_id.into(),
        };
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::input("episode needs at least one reference"));
        }
        for (k, r) in self.references.iter().enumerate() {
            r.mask.ensure_same_dims(r.image.dims())?;
            if r.mask.is_empty() {
                return Err(Error::input(format!("reference {k} has an empty mask")));
            }
        }
        if let Some(gt) = &self.target_gt {
            gt.ensure_same_dims(self.target.dims())?;
        }
        Ok(())
    }

    pub fn shots(&self) -> usize {
        self.references.len()
    }

    /// Resizes every image and mask to the working resolution.
    pub fn at_resolution(&self, size: (usize, usize)) -> Result<Episode> {
        let references = self
            .references
            .iter()
            .map(|r| {
                let (image, mask) = resize_pair(&r.image, &r.mask, size)?;
                if mask.is_empty() {
                    return Err(Error::input("reference mask vanished at working resolution"));
                }
                Ok(Reference { image, mask })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Episode {
            id: self.id.clone(),
            references,
            target: resize_image(&self.target, size)?,
            target_gt: self.target_gt.as_ref().map(|m| resize_mask(m, size)).transpose()?,
            class_id: self.class_id.clone(),
            dataset_id: self.dataset_id.clone(),
        })
    }
}

/// On-disk episode description: paths relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeFile {
    #[serde(default)]
    pub id: Option<String>,
    pub references: Vec<ReferencePaths>,
    pub target: String,
    #[serde(default)]
    pub target_gt: Option<String>,
    #[serde(default)]
    pub class_id: Option<String>,
    #[serde(default)]
    pub dataset_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePaths {
    pub image: String,
    pub mask: String,
}

impl EpisodeFile {
    pub fn load(path: &std::path::Path) -> Result<Episode> {
        let text = std::fs::read_to_string(path)?;
        let file: EpisodeFile = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
        let references = file
            .references
            .iter()
            .map(|r| {
                Ok(Reference {
                    image: Image::load(base.join(&r.image))?,
                    mask: Mask::load(base.join(&r.mask))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let target = Image::load(base.join(&file.target))?;
        let target_gt = file.target_gt.as_ref().map(|p| Mask::load(base.join(p))).transpose()?;
        Episode::new(
            file.id.unwrap_or_else(|| "episode".into()),
            references,
            target,
            target_gt,
            file.class_id.unwrap_or_default(),
            file.dataset_id.unwrap_or_default(),
        )
    }
}
