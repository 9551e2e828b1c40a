//! Dataset readers for interaction lists, node features and node labels.
//!
//! Two interaction formats are accepted:
//!
//! * **edge list**: one interaction per line, fields separated by
//!   whitespace or commas. Three fields are `src dst t`; four or more are
//!   `src dst weight t [features…]`, where the weight is read but unused.
//!   Lines starting with `%` or `#` are comments.
//! * **csv**: `src,dst,t[,features…]`, with an optional header line.
//!
//! Node ids must be non-negative integers. Any malformed line is reported
//! with its 1-based line number.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{NodeFeatures, RawEdge, TemporalGraph};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DatasetFormat {
    #[default]
    EdgeList,
    Csv,
}

impl DatasetFormat {
    /// `.csv` files are read as csv, everything else as an edge list.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::EdgeList,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "edge_list" | "edge-list" => Ok(DatasetFormat::EdgeList),
            "csv" | "csv_with_features" => Ok(DatasetFormat::Csv),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

struct Lines<'a> {
    path: &'a Path,
}

impl Lines<'_> {
    fn err(&self, line: usize, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            reason: reason.into(),
        }
    }

    fn id(&self, line: usize, field: &str) -> Result<u64> {
        field
            .parse()
            .map_err(|_| self.err(line, format!("`{field}` is not a node id")))
    }

    fn num(&self, line: usize, field: &str) -> Result<f64> {
        match field.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(self.err(line, format!("`{field}` is not a finite number"))),
        }
    }
}

fn fields(line: &str, csv: bool) -> Vec<&str> {
    if csv {
        line.split(',').map(str::trim).collect()
    } else {
        line.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect()
    }
}

fn is_comment(line: &str) -> bool {
    line.is_empty() || line.starts_with('%') || line.starts_with('#')
}

/// Parses interaction records from text. `path` is only used in errors.
pub fn parse_edges(text: &str, format: DatasetFormat, path: &Path) -> Result<Vec<RawEdge>> {
    let ctx = Lines { path };
    let csv = format == DatasetFormat::Csv;
    let mut edges = Vec::new();
    let mut width: Option<usize> = None;
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if is_comment(line) {
            continue;
        }
        let f = fields(line, csv);
        // A csv header is a first line whose leading field is not a number.
        let header = csv && first && f[0].parse::<f64>().is_err();
        first = false;
        if header {
            continue;
        }
        let (src, dst, t, feat) = match (format, f.len()) {
            (_, n) if n < 3 => return Err(ctx.err(line_no, format!("expected at least 3 fields, found {n}"))),
            (DatasetFormat::EdgeList, 3) | (DatasetFormat::Csv, _) => (f[0], f[1], f[2], &f[3..]),
            (DatasetFormat::EdgeList, _) => {
                ctx.num(line_no, f[2])?;
                (f[0], f[1], f[3], &f[4..])
            }
        };
        if let Some(w) = width {
            if w != f.len() {
                return Err(ctx.err(line_no, format!("expected {w} fields like the first record, found {}", f.len())));
            }
        }
        width = Some(f.len());
        let t = ctx.num(line_no, t)?;
        if t < 0.0 {
            return Err(ctx.err(line_no, format!("negative timestamp {t}")));
        }
        let feat = feat.iter().map(|x| ctx.num(line_no, x)).collect::<Result<Vec<_>>>()?;
        edges.push(RawEdge::new(ctx.id(line_no, src)?, ctx.id(line_no, dst)?, t).with_feat(feat));
    }
    if edges.is_empty() {
        return Err(Error::Empty(format!("{} contains no interactions", path.display())));
    }
    Ok(edges)
}

/// `node_id,f1,…,fk` per line; a non-numeric first line is a header.
pub fn parse_node_features(text: &str, path: &Path) -> Result<NodeFeatures> {
    let ctx = Lines { path };
    let mut out = HashMap::new();
    let mut width = None;
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if is_comment(line) {
            continue;
        }
        let f = fields(line, true);
        if std::mem::replace(&mut first, false) && f[0].parse::<u64>().is_err() {
            continue;
        }
        let id = ctx.id(i + 1, f[0])?;
        let feat = f[1..].iter().map(|x| ctx.num(i + 1, x)).collect::<Result<Vec<_>>>()?;
        match width {
            Some(w) if w != feat.len() => {
                return Err(ctx.err(i + 1, format!("expected {w} features, found {}", feat.len())))
            }
            _ => width = Some(feat.len()),
        }
        if out.insert(id, feat).is_some() {
            return Err(ctx.err(i + 1, format!("node {id} listed twice")));
        }
    }
    Ok(out)
}

/// One dynamic node label: the state of `node` at `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeLabel {
    pub node: u64,
    pub t: f64,
    pub label: bool,
}

/// `node_id,timestamp,label` per line, returned in chronological order.
/// Labels are `0`/`1` or `true`/`false`.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<NodeLabel>> {
    let ctx = Lines { path };
    let mut out = Vec::new();
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if is_comment(line) {
            continue;
        }
        let f = fields(line, true);
        if std::mem::replace(&mut first, false) && f[0].parse::<u64>().is_err() {
            continue;
        }
        if f.len() != 3 {
            return Err(ctx.err(i + 1, format!("expected 3 fields, found {}", f.len())));
        }
        let label = match f[2] {
            "1" | "true" | "1.0" => true,
            "0" | "false" | "0.0" => false,
            other => return Err(ctx.err(i + 1, format!("`{other}` is not a binary label"))),
        };
        out.push(NodeLabel {
            node: ctx.id(i + 1, f[0])?,
            t: ctx.num(i + 1, f[1])?,
            label,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("{} contains no labels", path.display())));
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })
}

/// Where to find a dataset and its optional side files.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub format: Option<DatasetFormat>,
    pub node_features: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        DatasetSpec {
            path: path.into(),
            ..Default::default()
        }
    }
}

/// Reads and indexes a dataset.
pub fn load_dataset(spec: &DatasetSpec) -> Result<TemporalGraph> {
    let format = spec.format.unwrap_or_else(|| DatasetFormat::from_path(&spec.path));
    let edges = parse_edges(&read(&spec.path)?, format, &spec.path)?;
    let feats = match &spec.node_features {
        Some(p) => Some(parse_node_features(&read(p)?, p)?),
        None => None,
    };
    TemporalGraph::build(edges, None, feats)
}

pub fn load_labels(path: &Path) -> Result<Vec<NodeLabel>> {
    parse_labels(&read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("toy.txt")
    }

    #[test]
    fn four_line_toy_file() {
        let text = "1 2 10\n2 3 11\n3 1 12\n1 4 13\n";
        let g = TemporalGraph::build(parse_edges(text, DatasetFormat::EdgeList, p()).unwrap(), None, None).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (4, 4));
    }

    #[test]
    fn percent_header_is_skipped() {
        let text = "% sym unweighted\n% 3 3 3\n1 2 1 100\n2 3 1 200\n# trailing comment\n3 1 1 300\n";
        let e = parse_edges(text, DatasetFormat::EdgeList, p()).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e[1].t, 200.0);
        assert!(e[0].feat.is_empty());
    }

    #[test]
    fn edge_list_features_follow_the_timestamp() {
        let e = parse_edges("1,2,1,5,0.5,0.25\n", DatasetFormat::EdgeList, p()).unwrap();
        assert_eq!(e[0].t, 5.0);
        assert_eq!(e[0].feat, vec![0.5, 0.25]);
    }

    #[test]
    fn csv_with_header_and_features() {
        let text = "user,item,ts,f0\n0,10,1.5,0.1\n1,11,2.5,0.2\n";
        let e = parse_edges(text, DatasetFormat::Csv, Path::new("x.csv")).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[1].src, e[1].dst, e[1].t, e[1].feat.clone()), (1, 11, 2.5, vec![0.2]));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let err = parse_edges("1 2 3\n4 five 6\n", DatasetFormat::EdgeList, p()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
        let err = parse_edges("1 2 3\n4 5\n", DatasetFormat::EdgeList, p()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        let err = parse_edges("1 2 1 3\n4 5 1 nan\n", DatasetFormat::EdgeList, p()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn ragged_feature_rows_are_rejected() {
        let err = parse_edges("1 2 1 3 0.1\n4 5 1 6\n", DatasetFormat::EdgeList, p()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(parse_edges("", DatasetFormat::EdgeList, p()), Err(Error::Empty(_))));
        assert!(matches!(parse_edges("% only\n", DatasetFormat::EdgeList, p()), Err(Error::Empty(_))));
    }

    #[test]
    fn labels_sorted_and_validated() {
        let l = parse_labels("node,t,label\n3,5.0,1\n1,2.0,0\n", p()).unwrap();
        assert_eq!(l[0], NodeLabel { node: 1, t: 2.0, label: false });
        assert!(parse_labels("1,2.0,maybe\n", p()).is_err());
    }

    #[test]
    fn node_features_table() {
        let f = parse_node_features("id,a,b\n1,0.5,1\n2,0,0\n", p()).unwrap();
        assert_eq!(f[&1], vec![0.5, 1.0]);
        assert!(parse_node_features("1,0.5\n1,0.5\n", p()).is_err());
        assert!(parse_node_features("1,0.5\n2,0.5,1\n", p()).is_err());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(DatasetFormat::from_path(Path::new("a/b.CSV")), DatasetFormat::Csv);
        assert_eq!(DatasetFormat::from_path(Path::new("out.ia-workplace")), DatasetFormat::EdgeList);
    }
}
