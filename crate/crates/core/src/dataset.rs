//! On-disk dataset layout: `<id>.manifest.json` and `<id>.annotation.json`
//! per episode, plus an `index.json` listing the manifests in order.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::episode::{load_episode, Episode, EpisodeError, EpisodeManifest};

pub const INDEX_FILE: &str = "index.json";
pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub episodes: Vec<String>,
}

/// Writes `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Writes every episode and the index. Returns the manifest paths.
pub fn write_dataset(episodes: &[Episode], dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(episodes.len());
    for episode in episodes {
        let annotation_name = format!("{}.annotation.json", episode.id);
        let manifest_name = format!("{}{MANIFEST_SUFFIX}", episode.id);
        write_atomic(
            &dir.join(&annotation_name),
            episode.annotation.to_json_string().as_bytes(),
        )?;
        let manifest = EpisodeManifest::for_episode(episode, annotation_name);
        let body = serde_json::to_vec_pretty(&manifest).map_err(io::Error::other)?;
        write_atomic(&dir.join(&manifest_name), &body)?;
        names.push(manifest_name);
    }
    let index = DatasetIndex { episodes: names.clone() };
    write_atomic(
        &dir.join(INDEX_FILE),
        &serde_json::to_vec_pretty(&index).map_err(io::Error::other)?,
    )?;
    Ok(names.into_iter().map(|n| dir.join(n)).collect())
}

/// Manifest paths of a dataset: from `index.json` when present, otherwise
/// every `*.manifest.json` in the directory, sorted by name.
pub fn manifest_paths(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let index_path = dir.join(INDEX_FILE);
    if index_path.is_file() {
        let index: DatasetIndex = serde_json::from_slice(&fs::read(&index_path)?)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        return Ok(index.episodes.into_iter().map(|n| dir.join(n)).collect());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(MANIFEST_SUFFIX))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every manifest, keeping per-file outcomes.
pub fn load_dataset(dir: &Path) -> io::Result<Vec<(PathBuf, Result<Episode, EpisodeError>)>> {
    Ok(manifest_paths(dir)?
        .into_iter()
        .map(|p| {
            let episode = load_episode(&p);
            (p, episode)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorSpec};

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let eps = generate(&GeneratorSpec { n_episodes: 5, ..GeneratorSpec::default() }).unwrap();
        write_dataset(&eps, dir.path()).unwrap();
        let loaded: Vec<Episode> = load_dataset(dir.path())
            .unwrap()
            .into_iter()
            .map(|(_, e)| e.unwrap())
            .collect();
        assert_eq!(loaded, eps);

        fs::remove_file(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(manifest_paths(dir.path()).unwrap().len(), 5);
    }
}
