//! On-disk interchange format for generated worlds.
//!
//! A "world directory" holds four files:
//!
//! * `queries.tsv` — `query_id  user_id  language  features` (features are
//!   comma-joined decimal floats),
//! * `candidates.tsv` — `candidate_id  language  popularity  features`,
//! * `interactions.tsv` — `query_id  candidate_id  label  provenance  weight`,
//!   one row per served-log record, per query in rank order,
//! * `world.meta` — the generating [`WorldConfig`] and [`PolicyConfig`] as
//!   TOML, sufficient to regenerate the full world bit for bit.
//!
//! Floats are written with Rust's shortest round-trip formatting, so loading
//! reproduces the exact bit patterns and rewriting produces identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::traffic::{PolicyConfig, ServedLog};
use crate::dataset::types::{Candidate, Interaction, Provenance, Query};
use crate::dataset::world::WorldConfig;
use crate::error::{Error, Result};

pub const QUERIES_FILE: &str = "queries.tsv";
pub const CANDIDATES_FILE: &str = "candidates.tsv";
pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const META_FILE: &str = "world.meta";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldMeta {
    pub world: WorldConfig,
    pub policy: PolicyConfig,
}

/// Everything a pipeline needs from a world directory.
#[derive(Debug, Clone)]
pub struct LoadedWorld {
    pub meta: WorldMeta,
    pub queries: Vec<Query>,
    pub candidates: Vec<Candidate>,
    pub log: ServedLog,
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn join_features(features: &[f64]) -> String {
    let mut s = String::new();
    for (i, f) in features.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{f}");
    }
    s
}

pub fn render_queries(queries: &[Query]) -> String {
    let mut out = String::from("query_id\tuser_id\tlanguage\tfeatures\n");
    for q in queries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            q.query_id,
            q.user_id,
            q.primary_language,
            join_features(&q.features)
        );
    }
    out
}

pub fn render_candidates(candidates: &[Candidate]) -> String {
    let mut out = String::from("candidate_id\tlanguage\tpopularity\tfeatures\n");
    for c in candidates {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            c.candidate_id,
            c.language,
            c.popularity,
            join_features(&c.features)
        );
    }
    out
}

pub fn render_interactions(records: &[Interaction]) -> String {
    let mut out = String::from("query_id\tcandidate_id\tlabel\tprovenance\tweight\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.query_id,
            r.candidate_id,
            r.label as u8,
            r.provenance,
            r.weight
        );
    }
    out
}

/// Writes the four world files into `dir` (which must exist).
pub fn write_world_dir(
    dir: &Path,
    meta: &WorldMeta,
    queries: &[Query],
    candidates: &[Candidate],
    log: &ServedLog,
) -> Result<()> {
    let meta_toml =
        toml::to_string_pretty(meta).map_err(|e| Error::config(format!("meta encode: {e}")))?;
    let meta_text = format!(
        "# Generated world: configuration needed to rebuild it deterministically.\n{meta_toml}"
    );
    write_file(&dir.join(META_FILE), &meta_text)?;
    write_file(&dir.join(QUERIES_FILE), &render_queries(queries))?;
    write_file(&dir.join(CANDIDATES_FILE), &render_candidates(candidates))?;
    write_file(
        &dir.join(INTERACTIONS_FILE),
        &render_interactions(&log.records),
    )?;
    Ok(())
}

struct TsvReader {
    path: PathBuf,
    text: String,
}

impl TsvReader {
    fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(TsvReader {
            path: path.to_path_buf(),
            text,
        })
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    /// Applies `f` to every data line, after checking the header line.
    fn for_each_row<F: FnMut(usize, &[&str]) -> Result<()>>(
        &self,
        header: &str,
        mut f: F,
    ) -> Result<()> {
        let mut lines = self.text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == header => {}
            Some((_, h)) => {
                return Err(self.err(1, format!("bad header {h:?}, expected {header:?}")))
            }
            None => return Err(self.err(1, "empty file, expected a header line")),
        }
        let n_cols = header.split('\t').count();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != n_cols {
                return Err(self.err(
                    idx + 1,
                    format!("expected {n_cols} columns, got {}", fields.len()),
                ));
            }
            f(idx + 1, &fields)?;
        }
        Ok(())
    }
}

fn parse_features(reader: &TsvReader, line: usize, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| reader.err(line, format!("bad feature value {t:?}: {e}")))
        })
        .collect()
}

pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let reader = TsvReader::open(path)?;
    let mut out = Vec::new();
    reader.for_each_row("query_id\tuser_id\tlanguage\tfeatures", |line, f| {
        out.push(Query {
            query_id: f[0]
                .parse()
                .map_err(|e| reader.err(line, format!("bad query_id: {e}")))?,
            user_id: f[1]
                .parse()
                .map_err(|e| reader.err(line, format!("bad user_id: {e}")))?,
            primary_language: f[2]
                .parse()
                .map_err(|e| reader.err(line, format!("bad language: {e}")))?,
            features: parse_features(&reader, line, f[3])?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn load_candidates(path: &Path) -> Result<Vec<Candidate>> {
    let reader = TsvReader::open(path)?;
    let mut out = Vec::new();
    reader.for_each_row("candidate_id\tlanguage\tpopularity\tfeatures", |line, f| {
        out.push(Candidate {
            candidate_id: f[0]
                .parse()
                .map_err(|e| reader.err(line, format!("bad candidate_id: {e}")))?,
            language: f[1]
                .parse()
                .map_err(|e| reader.err(line, format!("bad language: {e}")))?,
            popularity: f[2]
                .parse()
                .map_err(|e| reader.err(line, format!("bad popularity: {e}")))?,
            features: parse_features(&reader, line, f[3])?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn load_interactions(path: &Path) -> Result<Vec<Interaction>> {
    let reader = TsvReader::open(path)?;
    let mut out = Vec::new();
    reader.for_each_row(
        "query_id\tcandidate_id\tlabel\tprovenance\tweight",
        |line, f| {
            let label = match f[2] {
                "0" => false,
                "1" => true,
                other => return Err(reader.err(line, format!("bad label {other:?}"))),
            };
            let provenance: Provenance = f[3]
                .parse()
                .map_err(|_| reader.err(line, format!("bad provenance {:?}", f[3])))?;
            let it = Interaction::from_parts(
                f[0].parse()
                    .map_err(|e| reader.err(line, format!("bad query_id: {e}")))?,
                f[1].parse()
                    .map_err(|e| reader.err(line, format!("bad candidate_id: {e}")))?,
                label,
                provenance,
                f[4].parse()
                    .map_err(|e| reader.err(line, format!("bad weight: {e}")))?,
            )
            .map_err(|e| reader.err(line, e.to_string()))?;
            out.push(it);
            Ok(())
        },
    )?;
    Ok(out)
}

pub fn load_world_meta(path: &Path) -> Result<WorldMeta> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })
}

/// Rebuilds the per-query served sets from a record stream that lists each
/// query's served items contiguously in rank order.
pub fn served_log_from_records(records: Vec<Interaction>) -> ServedLog {
    let mut served: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for r in &records {
        served.entry(r.query_id).or_default().push(r.candidate_id);
    }
    ServedLog { records, served }
}

/// Loads a complete world directory.
pub fn load_world_dir(dir: &Path) -> Result<LoadedWorld> {
    let meta = load_world_meta(&dir.join(META_FILE))?;
    let queries = load_queries(&dir.join(QUERIES_FILE))?;
    let candidates = load_candidates(&dir.join(CANDIDATES_FILE))?;
    let records = load_interactions(&dir.join(INTERACTIONS_FILE))?;
    Ok(LoadedWorld {
        meta,
        queries,
        candidates,
        log: served_log_from_records(records),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::traffic::simulate_served_traffic;
    use crate::dataset::world::generate_world;

    fn sample() -> (WorldMeta, LoadedWorld) {
        let meta = WorldMeta {
            world: WorldConfig {
                n_users: 25,
                n_items: 60,
                ..WorldConfig::default()
            },
            policy: PolicyConfig {
                served_size: 10,
                ..PolicyConfig::default()
            },
        };
        let world = generate_world(&meta.world).unwrap();
        let log = simulate_served_traffic(&world, &meta.policy).unwrap();
        let loaded = LoadedWorld {
            meta: meta.clone(),
            queries: world.queries.clone(),
            candidates: world.candidates.clone(),
            log,
        };
        (meta, loaded)
    }

    #[test]
    fn world_dir_round_trips_bit_exactly() {
        let (meta, original) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_world_dir(
            dir.path(),
            &meta,
            &original.queries,
            &original.candidates,
            &original.log,
        )
        .unwrap();

        let loaded = load_world_dir(dir.path()).unwrap();
        assert_eq!(loaded.meta, meta);
        assert_eq!(loaded.queries, original.queries);
        assert_eq!(loaded.candidates, original.candidates);
        assert_eq!(loaded.log, original.log);

        // Rewriting loaded data must reproduce identical bytes.
        let dir2 = tempfile::tempdir().unwrap();
        write_world_dir(
            dir2.path(),
            &loaded.meta,
            &loaded.queries,
            &loaded.candidates,
            &loaded.log,
        )
        .unwrap();
        for name in [QUERIES_FILE, CANDIDATES_FILE, INTERACTIONS_FILE, META_FILE] {
            let a = std::fs::read(dir.path().join(name)).unwrap();
            let b = std::fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} not byte-stable");
        }
    }

    #[test]
    fn loader_reports_bad_rows_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(INTERACTIONS_FILE);
        std::fs::write(
            &path,
            "query_id\tcandidate_id\tlabel\tprovenance\tweight\n1\t2\t1\texplicit_positive\t1\n1\t2\t7\texplicit_positive\t1\n",
        )
        .unwrap();
        match load_interactions(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn loader_rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(QUERIES_FILE);
        std::fs::write(&path, "id\tuser\n").unwrap();
        match load_queries(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected header error, got {other:?}"),
        }
    }

    #[test]
    fn missing_files_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_world_dir(dir.path()),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn meta_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(META_FILE);
        std::fs::write(
            &path,
            "[world]\nn_users = 5\nbogus_key = 1\n[policy]\nserved_size = 3\n",
        )
        .unwrap();
        let err = load_world_meta(&path).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }
}
