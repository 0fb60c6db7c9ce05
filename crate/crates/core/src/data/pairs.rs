//! Pair lists as JSON lines of `{"image_id", "music_id", "score"}`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matching::{PairEntry, PairList};

pub fn write_pair_list(path: impl AsRef<Path>, pairs: &PairList) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for e in pairs.entries() {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_pair_list(path: impl AsRef<Path>) -> Result<PairList> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<PairEntry> = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            entries.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?);
        }
    }
    PairList::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let list = PairList::new(vec![
            PairEntry { image_id: "i1".into(), music_id: "m1".into(), score: 0.25 },
            PairEntry { image_id: "i2".into(), music_id: "m1".into(), score: 1.0 },
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.jsonl");
        write_pair_list(&p, &list).unwrap();
        assert_eq!(read_pair_list(&p).unwrap().entries(), list.entries());
    }
}
