//! Plain-text heatmap of a [`FrequencyMatrix`]:
//!
//! ```text
//! dmac-heatmap 1
//! 3
//! null 1 2
//! 1 null 3
//! 2 3 null
//! ```

use std::fmt::Write as _;
use std::path::Path;

use dmac_core::comm::n_channels;
use dmac_core::comm::ChannelId;
use dmac_core::eval::FrequencyMatrix;

use crate::error::LabError;

const HEADER: &str = "dmac-heatmap 1";

pub fn render_heatmap(m: &FrequencyMatrix) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(out, "{}", m.n_agents()).unwrap();
    for row in m.rows() {
        let cells: Vec<String> = row
            .iter()
            .map(|v| match v {
                Some(x) => format!("{x}"),
                None => "null".to_string(),
            })
            .collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
    out
}

pub fn export_heatmap(m: &FrequencyMatrix, path: &Path) -> Result<(), LabError> {
    std::fs::write(path, render_heatmap(m)).map_err(|e| LabError::io(path, e))
}

pub fn parse_heatmap(text: &str) -> Result<FrequencyMatrix, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(format!("missing `{HEADER}` header"));
    }
    let n: usize = lines
        .next()
        .ok_or("missing size line")?
        .trim()
        .parse()
        .map_err(|e| format!("bad size: {e}"))?;
    let mut grid = vec![vec![None; n]; n];
    for (i, row) in grid.iter_mut().enumerate() {
        let line = lines.next().ok_or_else(|| format!("missing row {i}"))?;
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.len() != n {
            return Err(format!("row {i} has {} cells, expected {n}", cells.len()));
        }
        for (j, c) in cells.iter().enumerate() {
            row[j] = match (*c, i == j) {
                ("null", true) => None,
                (_, true) => return Err(format!("diagonal cell {i} must be null")),
                (v, false) => Some(v.parse::<f64>().map_err(|e| format!("cell ({i},{j}): {e}"))?),
            };
        }
    }
    if lines.next().is_some() {
        return Err("trailing rows".into());
    }
    let mut values = vec![0.0; n_channels(n)];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (grid[i][j].unwrap(), grid[j][i].unwrap());
            if a.to_bits() != b.to_bits() {
                return Err(format!("cells ({i},{j}) and ({j},{i}) differ"));
            }
            values[ChannelId::new(i, j).unwrap().index(n)] = a;
        }
    }
    FrequencyMatrix::from_channel_values(n, values).map_err(|e| e.to_string())
}

pub fn read_heatmap(path: &Path) -> Result<FrequencyMatrix, LabError> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_heatmap(&text).map_err(|detail| LabError::Artifact {
        path: path.to_path_buf(),
        detail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_agents_mirror_a_single_value() {
        let m = FrequencyMatrix::from_channel_values(2, vec![5.0]).unwrap();
        let text = render_heatmap(&m);
        assert_eq!(text, "dmac-heatmap 1\n2\nnull 5\n5 null\n");
        let off: Vec<&str> = text.lines().skip(2).flat_map(str::split_whitespace).filter(|c| *c != "null").collect();
        assert_eq!(off, ["5", "5"]);
    }

    #[test]
    fn parse_back_is_exact() {
        let m = FrequencyMatrix::from_channel_values(4, vec![0.1, 1.0 / 3.0, 2.5e-9, 7.0, 0.0, 123.456]).unwrap();
        assert_eq!(parse_heatmap(&render_heatmap(&m)).unwrap(), m);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.txt");
        export_heatmap(&m, &p).unwrap();
        assert_eq!(read_heatmap(&p).unwrap(), m);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_heatmap("2\nnull 5\n5 null\n").is_err());
        assert!(parse_heatmap("dmac-heatmap 1\n2\nnull 5\n4 null\n").is_err());
        assert!(parse_heatmap("dmac-heatmap 1\n2\n1 5\n5 null\n").is_err());
        assert!(parse_heatmap("dmac-heatmap 1\n2\nnull -5\n-5 null\n").is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            export_heatmap(&FrequencyMatrix::from_channel_values(2, vec![1.0]).unwrap(), &dir.path().join("no/such/dir/h.txt")),
            Err(LabError::Io { .. })
        ));
    }
}
