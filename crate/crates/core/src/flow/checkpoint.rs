//! Checkpoint files: a short text header terminated by a `data` line,
//! followed by the flat parameter vector as little-endian `f64`.
//!
//! ```text
//! qflow-checkpoint 1
//! dim 2
//! layers 3
//! hidden 5
//! s_cap 5.0
//! prior diagonal-gaussian mean=-1.0,-1.0 var=0.5,0.5
//! seed 7
//! time 0.0
//! params 156
//! data
//! <156 × 8 bytes>
//! ```

use std::io::{BufRead, Write};

use super::{FlowArch, FlowModel, Prior};
use crate::error::{Error, Result};

const MAGIC: &str = "qflow-checkpoint";
const VERSION: u32 = 1;

/// A model together with the simulation time it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FlowModel,
    pub time: f64,
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &FlowModel, time: f64) -> Result<()> {
    let arch = model.arch();
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(w, "dim {}", model.dim())?;
    writeln!(w, "layers {}", model.n_layers())?;
    writeln!(w, "hidden {}", arch.hidden)?;
    writeln!(w, "s_cap {:?}", arch.s_cap)?;
    writeln!(w, "prior {}", model.prior().header())?;
    writeln!(w, "seed {}", model.seed())?;
    writeln!(w, "time {time:?}")?;
    writeln!(w, "params {}", model.n_params())?;
    writeln!(w, "data")?;
    let mut buf = Vec::with_capacity(8 * model.n_params());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Checkpoint> {
    let mut fields = std::collections::HashMap::new();
    let mut first = true;
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("checkpoint header ended early".into()));
        }
        let line = line.trim_end_matches(['\n', '\r']);
        if first {
            let ok = line
                .strip_prefix(MAGIC)
                .map(|v| v.trim() == VERSION.to_string())
                .unwrap_or(false);
            if !ok {
                return Err(Error::Format(format!("not a checkpoint header: `{line}`")));
            }
            first = false;
            continue;
        }
        if line == "data" {
            break;
        }
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("missing header field `{k}`")))
    };
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("bad `{k}`")))
    };
    let parse_f64 = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("bad `{k}`")))
    };
    let dim = parse_usize("dim")?;
    let layers = parse_usize("layers")?;
    let arch = FlowArch {
        hidden: parse_usize("hidden")?,
        s_cap: parse_f64("s_cap")?,
    };
    let prior = Prior::parse_header(&get("prior")?, dim)?;
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| Error::Format("bad `seed`".into()))?;
    let time = parse_f64("time")?;
    let n = parse_usize("params")?;
    let mut model = FlowModel::zeroed(dim, prior, layers, arch, seed)?;
    if model.n_params() != n {
        return Err(Error::DimensionMismatch {
            expected: model.n_params(),
            found: n,
        });
    }
    let mut bytes = vec![0u8; 8 * n];
    r.read_exact(&mut bytes)?;
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    model.set_params(&params)?;
    Ok(Checkpoint { model, time })
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(&mut f, &self.model, self.time)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        read_checkpoint(&mut f)
    }
}
