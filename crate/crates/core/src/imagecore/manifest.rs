use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Group, RegionImage};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Image path, resolved against the manifest's directory when relative.
    pub path: PathBuf,
    pub id: String,
    pub group: Group,
}

impl ManifestEntry {
    pub fn load(&self) -> Result<RegionImage> {
        RegionImage::load(&self.path, self.id.clone(), self.group)
    }
}

/// Ordered list of region tiles with their cohort labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CohortManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct Row {
    path: String,
    id: String,
    group: String,
}

impl CohortManifest {
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(CohortManifest { entries })
    }

    pub fn has_both_groups(&self) -> bool {
        Group::ALL
            .iter()
            .all(|g| self.entries.iter().any(|e| e.group == *g))
    }

    /// Write as `path,id,group`, with paths relative to `dir` when possible.
    pub fn write_csv(&self, out: impl std::io::Write, dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "id", "group"])?;
        for e in &self.entries {
            let p = e.path.strip_prefix(dir).unwrap_or(&e.path);
            w.write_record([p.to_string_lossy().as_ref(), &e.id, e.group.as_str()])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        Ok(())
    }
}

/// Read a `path,id,group` CSV manifest. Rows keep file order.
pub fn load_manifest(path: &Path) -> Result<CohortManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut entries = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        let p = PathBuf::from(&row.path);
        let path = if p.is_absolute() { p } else { base.join(p) };
        entries.push(ManifestEntry {
            path,
            id: row.id,
            group: row.group.parse()?,
        });
    }
    CohortManifest::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn manifest_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_two_rows_in_order() {
        let f = manifest_file("path,id,group\na.png,a,MUT\nb.png,b,WT\n");
        let m = load_manifest(f.path()).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].id, "a");
        assert_eq!(m.entries[0].group, Group::Mut);
        assert_eq!(m.entries[1].group, Group::Wt);
        assert!(m.entries[0].path.ends_with("a.png"));
        assert!(m.has_both_groups());
        // idempotent
        assert_eq!(load_manifest(f.path()).unwrap(), m);
    }

    #[test]
    fn lowercase_group() {
        let f = manifest_file("path,id,group\na.png,a,mut\n");
        let m = load_manifest(f.path()).unwrap();
        assert_eq!(m.entries[0].group, Group::Mut);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = manifest_file("path,id,group\na.png,a,MUT\nb.png,a,WT\n");
        assert!(matches!(load_manifest(f.path()), Err(Error::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn unknown_group_rejected() {
        let f = manifest_file("path,id,group\na.png,a,codel\n");
        assert!(matches!(load_manifest(f.path()), Err(Error::BadLabel(_))));
    }

    #[test]
    fn missing_image_on_load() {
        let f = manifest_file("path,id,group\nnope.png,a,WT\n");
        let m = load_manifest(f.path()).unwrap();
        assert!(matches!(m.entries[0].load(), Err(Error::MissingImage(_))));
    }
}
