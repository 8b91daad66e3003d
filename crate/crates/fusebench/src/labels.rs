//! Label and prediction CSVs: header `id,labels`, then `ID,<space-separated
//! 0-based class indices>` per row. An empty label field is an empty set.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use fusebench_core::data::LabelMatrix;

use crate::error::{read_file, write_atomic, Error, Result};

pub const HEADER: &str = "id,labels";

/// Rows as `(id, sorted class set)`, validated against `k` classes.
pub fn parse_label_rows(text: &str, k: usize, what: &str) -> Result<Vec<(u32, Vec<usize>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r').trim() == HEADER => {}
        _ => return Err(Error::line(what, 1, format!("expected header `{HEADER}`"))),
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, labels) = line
            .split_once(',')
            .ok_or_else(|| Error::line(what, line_no, "expected `id,labels`"))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| Error::line(what, line_no, format!("bad sample id `{}`", id.trim())))?;
        if !seen.insert(id) {
            return Err(Error::line(what, line_no, format!("duplicate id {id}")));
        }
        let mut set = Vec::new();
        for tok in labels.split_whitespace() {
            let c: usize = tok
                .parse()
                .map_err(|_| Error::line(what, line_no, format!("bad class index `{tok}`")))?;
            if c >= k {
                return Err(Error::line(
                    what,
                    line_no,
                    format!("class index {c} out of range for {k} classes"),
                ));
            }
            set.push(c);
        }
        set.sort_unstable();
        set.dedup();
        rows.push((id, set));
    }
    Ok(rows)
}

pub fn parse_labels(text: &str, k: usize, what: &str) -> Result<LabelMatrix> {
    let rows = parse_label_rows(text, k, what)?;
    let (ids, sets): (Vec<u32>, Vec<Vec<usize>>) = rows.into_iter().unzip();
    Ok(LabelMatrix::from_sets(ids, &sets, k)?)
}

pub fn read_labels(path: &Path, k: usize) -> Result<LabelMatrix> {
    let bytes = read_file(path)?;
    let what = path.display().to_string();
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::format(&what, e.valid_up_to() as u64, "not UTF-8"))?;
    parse_labels(text, k, &what)
}

pub fn format_label_rows(ids: &[u32], sets: &[Vec<usize>]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (id, set) in ids.iter().zip(sets) {
        let _ = write!(out, "{id},");
        for (j, c) in set.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{c}");
        }
        out.push('\n');
    }
    out
}

pub fn write_label_rows(path: &Path, ids: &[u32], sets: &[Vec<usize>]) -> Result<()> {
    write_atomic(path, format_label_rows(ids, sets).as_bytes())
}

pub fn write_labels(path: &Path, labels: &LabelMatrix) -> Result<()> {
    write_label_rows(path, labels.ids(), &labels.sets())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_empty_sets() {
        let m = parse_labels("id,labels\n7,0 2\n3,\n", 18, "t").unwrap();
        assert_eq!(m.ids(), &[7, 3]);
        assert_eq!(m.sets(), vec![vec![0, 2], vec![]]);
        assert_eq!(m.targets().row(0)[..3], [1.0, 0.0, 1.0]);
    }

    #[test]
    fn range_error_names_the_line() {
        let err = parse_labels("id,labels\n0,1\n1,18\n", 18, "t").unwrap_err();
        assert!(matches!(err, Error::Line { line: 3, .. }), "{err}");
    }

    #[test]
    fn duplicate_ids_and_bad_headers() {
        assert!(matches!(
            parse_labels("id,labels\n1,0\n1,2\n", 4, "t"),
            Err(Error::Line { line: 3, .. })
        ));
        assert!(parse_labels("ids,label\n", 4, "t").is_err());
        assert!(parse_labels("id,labels\n1 0\n", 4, "t").is_err());
    }

    #[test]
    fn format_round_trip() {
        let text = format_label_rows(&[4, 9], &[vec![1, 3], vec![]]);
        assert_eq!(text, "id,labels\n4,1 3\n9,\n");
        let back = parse_label_rows(&text, 4, "t").unwrap();
        assert_eq!(back, vec![(4, vec![1, 3]), (9, vec![])]);
    }
}
