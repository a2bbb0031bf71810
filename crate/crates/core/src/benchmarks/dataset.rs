use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// `train_frac` of `0..n` for training, the rest for validation, no test.
    pub fn fractions(n: usize, train_frac: f64) -> Self {
        let a = ((n as f64) * train_frac).round() as usize;
        Self {
            train: 0..a.min(n),
            val: a.min(n)..n,
            test: n..n,
        }
    }

    fn ranges(&self) -> [(&'static str, &Range<usize>); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let rs = self.ranges();
        for (name, r) in rs {
            if r.start > r.end || r.end > n {
                return Err(Error::InvalidInput(format!("{name} range {r:?} outside 0..{n}")));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let (a, b) = (rs[i].1, rs[j].1);
                if !a.is_empty() && !b.is_empty() && a.start < b.end && b.start < a.end {
                    return Err(Error::InvalidInput(format!(
                        "{} range {a:?} overlaps {} range {b:?}",
                        rs[i].0, rs[j].0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One SISO record, possibly several concatenated segments addressed by
/// `split`.
#[derive(Clone, Debug, PartialEq)]
pub struct IoDataset {
    pub name: String,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub y_clean: Option<Vec<f64>>,
    pub seed: u64,
    pub split: Split,
    /// Generator parameters, written to the sidecar file.
    pub meta: BTreeMap<String, String>,
}

impl IoDataset {
    pub fn new(name: impl Into<String>, u: Vec<f64>, y: Vec<f64>, y_clean: Option<Vec<f64>>, seed: u64, split: Split) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            u,
            y,
            y_clean,
            seed,
            split,
            meta: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.u.len();
        if self.y.len() != n || self.y_clean.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::InvalidInput(format!(
                "series lengths differ: u {n}, y {}, y_clean {:?}",
                self.y.len(),
                self.y_clean.as_ref().map(Vec::len)
            )));
        }
        self.split.validate(n)
    }

    /// Reference output for scoring: `y_clean` when present.
    pub fn reference(&self, clean: bool) -> &[f64] {
        match (&self.y_clean, clean) {
            (Some(c), true) => c,
            _ => &self.y,
        }
    }
}

/// Sidecar metadata path: `<path>.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn fmt_range(r: &Range<usize>) -> String {
    format!("{}..{}", r.start, r.end)
}

fn parse_range(s: &str) -> Option<Range<usize>> {
    let (a, b) = s.split_once("..")?;
    Some(a.trim().parse().ok()?..b.trim().parse().ok()?)
}

/// Writes `k,u,y[,y_clean]` plus the `key=value` sidecar.
pub fn save_csv_dataset(ds: &IoDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["k", "u", "y"];
    if ds.y_clean.is_some() {
        header.push("y_clean");
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for k in 0..ds.len() {
        let mut row = vec![k.to_string(), ds.u[k].to_string(), ds.y[k].to_string()];
        if let Some(c) = &ds.y_clean {
            row.push(c[k].to_string());
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let mut meta = format!(
        "benchmark={}\nseed={}\ntrain={}\nval={}\ntest={}\n",
        ds.name,
        ds.seed,
        fmt_range(&ds.split.train),
        fmt_range(&ds.split.val),
        fmt_range(&ds.split.test)
    );
    for (k, v) in &ds.meta {
        meta.push_str(&format!("{k}={v}\n"));
    }
    let mp = meta_path(path);
    fs::write(&mp, meta).map_err(|e| Error::io(mp, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.to_owned(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Reads a dataset. Without a sidecar the series is split 80/20 into training
/// and validation with no test range.
pub fn load_csv_dataset(path: &Path) -> Result<IoDataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_owned(),
        line,
        msg,
    };
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_owned())
        .collect();
    let has_clean = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["k", "u", "y"] => false,
        ["k", "u", "y", "y_clean"] => true,
        _ => return Err(parse_err(1, format!("expected header k,u,y[,y_clean], got {}", header.join(",")))),
    };
    let (mut u, mut y, mut yc) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        let field = |j: usize, name: &str| -> Result<f64> {
            rec.get(j)
                .ok_or_else(|| parse_err(line, format!("missing column {name}")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("column {name}: {e}")))
        };
        let k = field(0, "k")?;
        if k != i as f64 {
            return Err(parse_err(line, format!("expected k = {i}, got {k}")));
        }
        u.push(field(1, "u")?);
        y.push(field(2, "y")?);
        if has_clean {
            yc.push(field(3, "y_clean")?);
        }
    }
    let n = u.len();
    let y_clean = has_clean.then_some(yc);

    let mp = meta_path(path);
    if !mp.exists() {
        return IoDataset::new("external", u, y, y_clean, 0, Split::fractions(n, 0.8));
    }
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let mut name = None;
    let mut seed = 0;
    let mut split = Split::fractions(n, 0.8);
    let mut meta = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: mp.clone(),
            line: i + 1,
            msg,
        };
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "benchmark" => name = Some(v.to_owned()),
            "seed" => seed = v.parse().map_err(|e| err(format!("seed: {e}")))?,
            "train" | "val" | "test" => {
                let r = parse_range(v).ok_or_else(|| err(format!("{k}: expected start..end, got {v:?}")))?;
                match k {
                    "train" => split.train = r,
                    "val" => split.val = r,
                    _ => split.test = r,
                }
            }
            _ => {
                meta.insert(k.to_owned(), v.to_owned());
            }
        }
    }
    let mut ds = IoDataset::new(name.unwrap_or_else(|| "external".into()), u, y, y_clean, seed, split)?;
    ds.meta = meta;
    Ok(ds)
}
