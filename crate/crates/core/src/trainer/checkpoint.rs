//! Checkpoint container.
//!
//! ```text
//! tsid-checkpoint 1
//! seed <u64>
//! best_epoch <n>
//! config <bytes>
//! <TOML snapshot of the model spec and training config>
//! params <count>
//! <name> <rows> <cols> <byte offset>      one line per array
//! data <bytes>
//! <f64 little-endian, row-major, arrays back to back>
//! ```
//!
//! Besides the network parameters the array list holds `scaler` (`1 × 4`) and
//! `history` (`epochs × 5`, absent values stored as NaN).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, History, Model, ModelSpec, Scaler, TrainConfig, TrainedPair};
use crate::error::{Error, Result};

const MAGIC: &str = "tsid-checkpoint 1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Snapshot {
    model: ModelSpec,
    train: TrainConfig,
}

fn history_array(h: &History) -> Array2<f64> {
    let mut a = Array2::zeros((h.epochs.len(), 5));
    for (mut row, e) in a.rows_mut().into_iter().zip(&h.epochs) {
        row[0] = e.epoch as f64;
        row[1] = e.train_loss;
        row[2] = e.val_loss;
        row[3] = e.val_nelbo.unwrap_or(f64::NAN);
        row[4] = e.val_align.unwrap_or(f64::NAN);
    }
    a
}

fn history_from(a: &Array2<f64>, best_epoch: usize) -> History {
    let opt = |v: f64| (!v.is_nan()).then_some(v);
    History {
        epochs: a
            .rows()
            .into_iter()
            .map(|r| EpochRecord {
                epoch: r[0] as usize,
                train_loss: r[1],
                val_loss: r[2],
                val_nelbo: opt(r[3]),
                val_align: opt(r[4]),
            })
            .collect(),
        best_epoch,
    }
}

pub fn save_checkpoint(pair: &TrainedPair, path: &Path) -> Result<()> {
    let snapshot = toml::to_string(&Snapshot {
        model: pair.model.spec.clone(),
        train: pair.config.clone(),
    })
    .map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))?;

    let s = &pair.scaler;
    let scaler = Array2::from_shape_vec((1, 4), vec![s.u_mean, s.u_std, s.y_mean, s.y_std]).expect("1x4");
    let history = history_array(&pair.history);
    let mut arrays: Vec<(&str, &Array2<f64>)> = pair.model.store.iter().collect();
    arrays.push(("scaler", &scaler));
    arrays.push(("history", &history));

    let mut manifest = String::new();
    let mut data: Vec<u8> = Vec::new();
    for (name, a) in &arrays {
        if name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("parameter name {name:?} contains whitespace")));
        }
        manifest.push_str(&format!("{name} {} {} {}\n", a.nrows(), a.ncols(), data.len()));
        for v in a.iter() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = format!(
        "{MAGIC}\nseed {}\nbest_epoch {}\nconfig {}\n{snapshot}params {}\n{manifest}data {}\n",
        pair.seed,
        pair.history.best_epoch,
        snapshot.len(),
        arrays.len(),
        data.len()
    )
    .into_bytes();
    out.extend_from_slice(&data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated payload".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.line()?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::Checkpoint(format!("expected `{key} ...`, got {line:?}")))
    }
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad {what}: {s:?}")))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedPair> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { buf: &bytes, pos: 0 };
    if c.line()? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let seed: u64 = num(c.keyed("seed")?, "seed")?;
    let best_epoch: usize = num(c.keyed("best_epoch")?, "best_epoch")?;
    let config_len: usize = num(c.keyed("config")?, "config length")?;
    let snapshot = std::str::from_utf8(c.take(config_len)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let snapshot: Snapshot = toml::from_str(snapshot).map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))?;
    let count: usize = num(c.keyed("params")?, "parameter count")?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = c.line()?;
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 4 {
            return Err(Error::Checkpoint(format!("bad manifest line {line:?}")));
        }
        entries.push((
            f[0].to_owned(),
            num::<usize>(f[1], "rows")?,
            num::<usize>(f[2], "cols")?,
            num::<usize>(f[3], "offset")?,
        ));
    }
    let data_len: usize = num(c.keyed("data")?, "data length")?;
    let data = c.take(data_len)?;
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    let read = |rows: usize, cols: usize, offset: usize| -> Result<Array2<f64>> {
        let n = rows * cols;
        let end = offset + 8 * n;
        if end > data.len() {
            return Err(Error::Checkpoint(format!("array at offset {offset} runs past the payload")));
        }
        let vals = data[offset..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("sized"))
    };

    let mut model = Model::init(&snapshot.model, seed)?;
    let mut scaler = None;
    let mut history = None;
    let mut seen = vec![false; model.store.len()];
    for (name, rows, cols, offset) in entries {
        let a = read(rows, cols, offset)?;
        match name.as_str() {
            "scaler" => {
                let v = a.as_slice().filter(|v| v.len() == 4).ok_or_else(|| Error::Checkpoint("scaler must be 1 x 4".into()))?;
                scaler = Some(Scaler {
                    u_mean: v[0],
                    u_std: v[1],
                    y_mean: v[2],
                    y_std: v[3],
                });
            }
            "history" => history = Some(history_from(&a, best_epoch)),
            _ => {
                let id = model
                    .store
                    .id(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
                let target = model.store.get_mut(id);
                if target.dim() != a.dim() {
                    return Err(Error::Checkpoint(format!(
                        "{name}: stored shape {:?}, model expects {:?}",
                        a.dim(),
                        target.dim()
                    )));
                }
                *target = a;
                seen[id.index()] = true;
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let id = model.store.ids().nth(i).expect("index in range");
        return Err(Error::Checkpoint(format!("missing parameter {}", model.store.name(id))));
    }
    Ok(TrainedPair {
        model,
        scaler: scaler.ok_or_else(|| Error::Checkpoint("missing scaler".into()))?,
        history: history.unwrap_or(History {
            epochs: Vec::new(),
            best_epoch,
        }),
        config: TrainConfig { seed, ..snapshot.train },
        seed,
    })
}
