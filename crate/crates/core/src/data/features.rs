//! Image feature file, little-endian: magic `IMF1`, u32 count, u32 dim, then
//! per record a u16 id length, the UTF-8 id and `dim` f32 values.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"IMF1";

#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeature {
    pub id: String,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    features: Vec<ImageFeature>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn from_features(dim: usize, features: Vec<ImageFeature>) -> Result<Self> {
        let mut store = Self::new(dim);
        for f in features {
            store.push(f)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, feature: ImageFeature) -> Result<()> {
        if feature.vector.len() != self.dim {
            return Err(Error::input(format!(
                "feature `{}` has {} values, expected {}",
                feature.id,
                feature.vector.len(),
                self.dim
            )));
        }
        if !feature.vector.iter().all(|x| x.is_finite()) {
            return Err(Error::input(format!("feature `{}` has non-finite values", feature.id)));
        }
        if self.index.contains_key(&feature.id) {
            return Err(Error::input(format!("duplicate feature id `{}`", feature.id)));
        }
        self.index.insert(feature.id.clone(), self.features.len());
        self.features.push(feature);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[ImageFeature] {
        &self.features
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|i| self.features[i].vector.as_slice())
    }

    /// Looks up every id, reporting all missing ones at once.
    pub fn resolve<'a, I>(&self, ids: I) -> Result<Vec<usize>>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut found = Vec::new();
        let mut missing = BTreeSet::new();
        for id in ids {
            match self.position(id) {
                Some(i) => found.push(i),
                None => {
                    missing.insert(id.to_string());
                }
            }
        }
        if missing.is_empty() {
            Ok(found)
        } else {
            Err(Error::Resolution(missing.into_iter().collect()))
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + self.len() * (self.dim * 4 + 16));
        out.extend_from_slice(FEATURE_MAGIC);
        let count = u32::try_from(self.len()).map_err(|_| Error::input("too many features"))?;
        let dim = u32::try_from(self.dim).map_err(|_| Error::input("feature dim too large"))?;
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        for f in &self.features {
            let len = u16::try_from(f.id.len())
                .map_err(|_| Error::input(format!("feature id `{}` too long", f.id)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(f.id.as_bytes());
            for &v in &f.vector {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos + n;
            if end > bytes.len() {
                return Err(Error::input("truncated feature file"));
            }
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4)? != FEATURE_MAGIC {
            return Err(Error::input("not a feature file (bad magic)"));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let dim = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut store = Self::new(dim);
        for _ in 0..count {
            let len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
            let id = String::from_utf8(take(len)?.to_vec())
                .map_err(|_| Error::input("feature id is not UTF-8"))?;
            let vector = take(dim * 4)?
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
                .collect();
            store.push(ImageFeature { id, vector })?;
        }
        if take(1).is_ok() {
            return Err(Error::input("trailing bytes after feature records"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> FeatureStore {
        FeatureStore::from_features(
            3,
            vec![
                ImageFeature { id: "a".into(), vector: vec![0.5, -1.0, 2.25] },
                ImageFeature { id: "图b".into(), vector: vec![0.0, 1.0, -0.125] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let s = store();
        let bytes = s.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"IMF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(FeatureStore::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn damaged_files_rejected() {
        let bytes = store().to_bytes().unwrap();
        assert!(FeatureStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(FeatureStore::from_bytes(&extra).is_err());
        assert!(FeatureStore::from_bytes(b"IMF2").is_err());
    }

    #[test]
    fn resolve_lists_every_missing_id() {
        let s = store();
        assert_eq!(s.resolve(["图b", "a"]).unwrap(), vec![1, 0]);
        match s.resolve(["z", "a", "y", "z"]) {
            Err(Error::Resolution(ids)) => assert_eq!(ids, vec!["y", "z"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_features_rejected() {
        let mut s = store();
        assert!(s.push(ImageFeature { id: "c".into(), vector: vec![1.0] }).is_err());
        assert!(s.push(ImageFeature { id: "a".into(), vector: vec![1.0; 3] }).is_err());
        assert!(s.push(ImageFeature { id: "d".into(), vector: vec![f64::NAN; 3] }).is_err());
    }
}
