use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use trifuse::imaging::{list_images, load_image, DatasetManifest, Split};
use trifuse::{Error, ImageTensor, Result};

use crate::file_stem;

/// A low/high pair named after its low-light file.
#[derive(Debug, Clone)]
pub struct Pair {
    pub name: String,
    pub low: ImageTensor,
    pub high: ImageTensor,
}

/// Loads every referenced pair of `split`, in manifest order.
pub fn load_pairs(manifest_path: &Path, split: Split) -> Result<Vec<Pair>> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest.resolve_root(manifest_path);
    let entries: Vec<_> = manifest.pairs(split).collect();
    let loaded = trifuse::par::map_slice(&entries, |e| -> Result<Pair> {
        let high = e.high.as_deref().ok_or_else(|| Error::Internal("pair without reference".into()))?;
        Ok(Pair { name: e.low.clone(), low: load_image(root.join(&e.low))?, high: load_image(root.join(high))? })
    });
    loaded.into_iter().collect()
}

/// Matches files of two directories by stem, sorted by stem. Any name present
/// on one side only is an error listing the missing names.
pub fn pair_by_stem(pred: &Path, reference: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let index = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        let mut m = BTreeMap::new();
        for p in list_images(dir)? {
            let stem = file_stem(&p)?;
            if let Some(prev) = m.insert(stem.clone(), p.clone()) {
                return Err(Error::Argument(format!("{} and {} share the name `{stem}`", prev.display(), p.display())));
            }
        }
        Ok(m)
    };
    let (p, r) = (index(pred)?, index(reference)?);
    let no_ref: Vec<&str> = p.keys().filter(|k| !r.contains_key(*k)).map(String::as_str).collect();
    let no_pred: Vec<&str> = r.keys().filter(|k| !p.contains_key(*k)).map(String::as_str).collect();
    if !no_ref.is_empty() || !no_pred.is_empty() {
        let mut msg = String::from("prediction and reference names differ;");
        if !no_ref.is_empty() {
            msg.push_str(&format!(" missing in {}: {}", reference.display(), no_ref.join(", ")));
        }
        if !no_pred.is_empty() {
            msg.push_str(&format!(" missing in {}: {}", pred.display(), no_pred.join(", ")));
        }
        return Err(Error::Config(msg));
    }
    Ok(p.into_iter().map(|(k, pp)| (k.clone(), pp, r[&k].clone())).collect())
}
