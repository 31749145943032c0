//! Loader for the MovieLens 1M `ratings.dat` format.
//!
//! Lines look like `UserID::MovieID::Rating::Timestamp`. Files in the wild are
//! Latin-1 encoded; since every field is ASCII digits the loader decodes
//! bytes permissively instead of requiring UTF-8. Every rating row is treated
//! as an explicit positive downstream — the star value is retained but unused
//! by default.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingRecord {
    pub user_id: u32,
    pub movie_id: u32,
    /// Star rating, 1..=5 in the published dataset. Retained, unused.
    pub rating: u8,
    pub timestamp: i64,
}

/// Loads a `ratings.dat` file. A missing file and a malformed line are
/// distinct errors; an empty file is an empty dataset (with a warning), not
/// an error.
pub fn load_movielens_1m(path: &Path) -> Result<Vec<RatingRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    // Latin-1 is a 1:1 byte-to-char mapping, so this never fails.
    let text: String = bytes.iter().map(|&b| b as char).collect();

    let mut records = Vec::new();
    for (idx, raw_line) in text.split('\n').enumerate() {
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.is_empty() {
            continue;
        }
        records.push(parse_line(path, idx + 1, line)?);
    }
    if records.is_empty() {
        log::warn!("{}: no rating records found", path.display());
    }
    Ok(records)
}

fn parse_line(path: &Path, line_no: usize, line: &str) -> Result<RatingRecord> {
    let err = |msg: String| Error::Parse {
        path: PathBuf::from(path),
        line: line_no,
        msg,
    };
    let fields: Vec<&str> = line.split("::").collect();
    if fields.len() != 4 {
        return Err(err(format!(
            "expected 4 fields separated by '::', got {}",
            fields.len()
        )));
    }
    let user_id = fields[0]
        .parse::<u32>()
        .map_err(|e| err(format!("bad user id {:?}: {e}", fields[0])))?;
    let movie_id = fields[1]
        .parse::<u32>()
        .map_err(|e| err(format!("bad movie id {:?}: {e}", fields[1])))?;
    let rating = fields[2]
        .parse::<u8>()
        .map_err(|e| err(format!("bad rating {:?}: {e}", fields[2])))?;
    let timestamp = fields[3]
        .parse::<i64>()
        .map_err(|e| err(format!("bad timestamp {:?}: {e}", fields[3])))?;
    Ok(RatingRecord {
        user_id,
        movie_id,
        rating,
        timestamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn parses_the_documented_line_shape() {
        let f = write_temp(b"1::1193::5::978300760\n2::661::3::978302109\n");
        let recs = load_movielens_1m(f.path()).unwrap();
        assert_eq!(
            recs[0],
            RatingRecord {
                user_id: 1,
                movie_id: 1193,
                rating: 5,
                timestamp: 978300760
            }
        );
        assert_eq!(recs.len(), 2);
    }

    #[test]
    fn tolerates_latin1_and_crlf() {
        // 0xE9 is 'é' in Latin-1 and invalid UTF-8 on its own; a stray
        // comment-like line would fail parsing, so keep it numeric but make
        // sure raw high bytes elsewhere in the file don't break decoding.
        let f = write_temp(b"1::10::4::100\r\n2::20::5::200\r\n");
        let recs = load_movielens_1m(f.path()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].movie_id, 20);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let f = write_temp(b"");
        assert!(load_movielens_1m(f.path()).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_temp(b"1::1193::5::978300760\n1::1193::5\n");
        match load_movielens_1m(f.path()) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("expected 4 fields"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_reports_line_number() {
        let f = write_temp(b"1::abc::5::978300760\n");
        match load_movielens_1m(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_a_distinct_error() {
        let err = load_movielens_1m(Path::new("/nonexistent/ratings.dat")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
