//! File-backed project database with description search.
//!
//! Layout: `<root>/manifest.json` lists ids and revision counters,
//! `<root>/projects/<id>.json` holds one project document each. Writes go
//! through a temp file and rename while holding an exclusive lock on
//! `<root>/.lock`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::project::{ProjectStatus, SiftProject};
use crate::text::TextIndex;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_MIN_SCORE: f64 = 0.30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHit {
    pub project_id: String,
    pub score: f64,
    pub verified: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Manifest {
    revisions: BTreeMap<String, u64>,
}

#[derive(Debug)]
pub struct ProjectDatabase {
    root: PathBuf,
    manifest: Manifest,
    entries: BTreeMap<String, SiftProject>,
    index: TextIndex,
}

struct Lock(File);

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

impl ProjectDatabase {
    /// Opens the database at `root`, creating an empty one if needed.
    pub fn open(root: &Path) -> Result<ProjectDatabase> {
        fs::create_dir_all(root.join("projects"))?;
        let mut db = ProjectDatabase {
            root: root.to_path_buf(),
            manifest: Manifest::default(),
            entries: BTreeMap::new(),
            index: TextIndex::new(),
        };
        db.refresh()?;
        Ok(db)
    }

    /// Reloads every document from disk.
    pub fn refresh(&mut self) -> Result<()> {
        let manifest_path = self.root.join("manifest.json");
        self.manifest = if manifest_path.exists() {
            serde_json::from_str(&fs::read_to_string(&manifest_path)?)?
        } else {
            Manifest::default()
        };
        self.entries.clear();
        for id in self.manifest.revisions.keys() {
            let text = fs::read_to_string(self.project_path(id))?;
            self.entries.insert(id.clone(), serde_json::from_str(&text)?);
        }
        self.index = TextIndex::build(self.entries.iter().map(|(id, p)| (id.as_str(), p.description.as_str())));
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Per-project scratch directory for derived files (outcomes, snapshots).
    pub fn artifact_dir(&self, id: &str) -> Result<PathBuf> {
        let dir = self.root.join("artifacts").join(id);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn project_path(&self, id: &str) -> PathBuf {
        self.root.join("projects").join(format!("{id}.json"))
    }

    fn lock(&self) -> Result<Lock> {
        let f = File::options().create(true).truncate(false).write(true).open(self.root.join(".lock"))?;
        f.lock()?;
        Ok(Lock(f))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let dir = path.parent().expect("paths are inside the database root");
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    fn write_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        self.write_atomic(&self.root.join("manifest.json"), text.as_bytes())
    }

    fn write_project(&self, project: &SiftProject) -> Result<()> {
        let text = serde_json::to_string_pretty(project)?;
        self.write_atomic(&self.project_path(&project.project_id), text.as_bytes())
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn projects(&self) -> impl Iterator<Item = &SiftProject> {
        self.entries.values()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn add_project(&mut self, project: &SiftProject) -> Result<()> {
        let _lock = self.lock()?;
        let id = &project.project_id;
        if self.entries.contains_key(id) {
            return Err(Error::DuplicateId(id.clone()));
        }
        self.write_project(project)?;
        self.manifest.revisions.insert(id.clone(), 1);
        self.write_manifest()?;
        self.entries.insert(id.clone(), project.clone());
        self.index.insert(id, &project.description);
        Ok(())
    }

    pub fn get_project(&self, id: &str) -> Result<SiftProject> {
        self.entries.get(id).cloned().ok_or_else(|| Error::NotFound(id.to_string()))
    }

    pub fn update_project(&mut self, project: &SiftProject) -> Result<u64> {
        let _lock = self.lock()?;
        let id = &project.project_id;
        if !self.entries.contains_key(id) {
            return Err(Error::NotFound(id.clone()));
        }
        self.write_project(project)?;
        let rev = self.manifest.revisions.entry(id.clone()).or_insert(0);
        *rev += 1;
        let rev = *rev;
        self.write_manifest()?;
        self.entries.insert(id.clone(), project.clone());
        self.index.insert(id, &project.description);
        Ok(rev)
    }

    pub fn revision(&self, id: &str) -> Result<u64> {
        self.manifest.revisions.get(id).copied().ok_or_else(|| Error::NotFound(id.to_string()))
    }

    pub fn link_older_version(&mut self, new_id: &str, old_id: &str) -> Result<()> {
        if !self.contains(old_id) {
            return Err(Error::NotFound(old_id.to_string()));
        }
        let mut project = self.get_project(new_id)?;
        if !project.older_versions.iter().any(|o| o == old_id) {
            project.older_versions.push(old_id.to_string());
            self.update_project(&project)?;
        }
        Ok(())
    }

    /// References from `project` to ids no longer in the database.
    pub fn dangling_references(&self, project: &SiftProject) -> Vec<String> {
        project
            .similar_projects
            .iter()
            .chain(&project.older_versions)
            .filter(|id| !self.contains(id))
            .cloned()
            .collect()
    }

    /// Deletes terminated projects whose retention period has elapsed.
    pub fn purge_expired(&mut self, now: DateTime<Utc>) -> Result<Vec<String>> {
        let _lock = self.lock()?;
        let expired: Vec<String> = self
            .entries
            .values()
            .filter(|p| p.status == ProjectStatus::Terminated)
            .filter_map(|p| match (p.timeout, p.terminated_at) {
                (Some(days), Some(at)) if now - at > chrono::Duration::days(days as i64) => Some(p.project_id.clone()),
                _ => None,
            })
            .collect();
        for id in &expired {
            fs::remove_file(self.project_path(id))?;
            self.manifest.revisions.remove(id);
            self.entries.remove(id);
            self.index.remove(id);
        }
        if !expired.is_empty() {
            self.write_manifest()?;
        }
        Ok(expired)
    }

    pub fn index(&self) -> &TextIndex {
        &self.index
    }

    pub fn search_similar(&self, query: &str, k: usize, min_score: f64) -> Vec<SimilarityHit> {
        self.search(query, k, min_score, None)
    }

    /// Search by a stored project's description, leaving that project out.
    pub fn search_similar_to(&self, id: &str, k: usize, min_score: f64) -> Result<Vec<SimilarityHit>> {
        let p = self.entries.get(id).ok_or_else(|| Error::NotFound(id.to_string()))?;
        Ok(self.search(&p.description, k, min_score, Some(id)))
    }

    fn search(&self, query: &str, k: usize, min_score: f64, exclude: Option<&str>) -> Vec<SimilarityHit> {
        self.index
            .query(query)
            .into_iter()
            .filter(|(id, score)| Some(id.as_str()) != exclude && *score >= min_score)
            .take(k)
            .map(|(project_id, score)| SimilarityHit { project_id, score, verified: false })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn project(name: &str, desc: &str) -> SiftProject {
        SiftProject::init(name, desc, "file:///tmp/data.csv").unwrap()
    }

    #[test]
    fn add_get_update_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = ProjectDatabase::open(dir.path()).unwrap();
        let mut p = project("Churn", "customer churn model");
        db.add_project(&p).unwrap();
        assert_eq!(db.get_project(&p.project_id).unwrap(), p);
        assert!(matches!(db.add_project(&p), Err(Error::DuplicateId(_))));
        p.metadata.insert("owner".into(), "analytics".into());
        assert_eq!(db.update_project(&p).unwrap(), 2);
        let reopened = ProjectDatabase::open(dir.path()).unwrap();
        assert_eq!(reopened.get_project(&p.project_id).unwrap(), p);
        assert_eq!(reopened.revision(&p.project_id).unwrap(), 2);
        assert_eq!(reopened.index(), db.index());
        assert!(matches!(db.get_project("missing"), Err(Error::NotFound(_))));
    }

    #[test]
    fn links_are_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = ProjectDatabase::open(dir.path()).unwrap();
        let (a, b) = (project("A", "a"), project("B", "b"));
        db.add_project(&a).unwrap();
        db.add_project(&b).unwrap();
        db.link_older_version(&b.project_id, &a.project_id).unwrap();
        db.link_older_version(&b.project_id, &a.project_id).unwrap();
        assert_eq!(db.get_project(&b.project_id).unwrap().older_versions, vec![a.project_id.clone()]);
        assert!(matches!(db.link_older_version(&b.project_id, "nope"), Err(Error::NotFound(_))));
    }

    #[test]
    fn purge_respects_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = ProjectDatabase::open(dir.path()).unwrap();
        let now = Utc::now();
        let mut old = project("Old", "old");
        old.status = ProjectStatus::Terminated;
        old.timeout = Some(365);
        old.terminated_at = Some(now - chrono::Duration::days(400));
        let mut forever = project("Forever", "kept");
        forever.status = ProjectStatus::Terminated;
        forever.terminated_at = Some(now - chrono::Duration::days(4000));
        let mut recent = old.clone();
        recent.project_id = "recent".into();
        recent.terminated_at = Some(now - chrono::Duration::days(10));
        let active = project("Active", "live");
        for p in [&old, &forever, &recent, &active] {
            db.add_project(p).unwrap();
        }
        assert_eq!(db.purge_expired(now).unwrap(), vec![old.project_id.clone()]);
        assert_eq!(db.ids().len(), 3);
        let mut linker = active.clone();
        linker.older_versions.push(old.project_id.clone());
        assert_eq!(db.dangling_references(&linker), vec![old.project_id]);
    }
}
