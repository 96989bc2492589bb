//! Text checkpoints: one header line with the model configuration, then one
//! line per named parameter (`name<TAB>dims<TAB>values`), reals at 17
//! significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ModelConfig, VqaModel};
use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

const MAGIC: &str = "lpf-checkpoint";
const VERSION: &str = "1";

pub fn encode_checkpoint(model: &VqaModel) -> String {
    let config = serde_json::to_string(&model.config).expect("config serializes");
    let mut out = format!("{MAGIC}\tversion={VERSION}\tconfig={config}\n");
    for p in model.params.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        write!(out, "{}\t{}\t", p.name, dims.join(",")).unwrap();
        for (i, v) in p.value.data().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn decode_checkpoint(text: &str, path: &str) -> Result<VqaModel> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let mut fields = header.splitn(3, '\t');
    if fields.next() != Some(MAGIC) {
        return Err(err(1, format!("missing `{MAGIC}` header")));
    }
    match fields.next().and_then(|f| f.strip_prefix("version=")) {
        Some(VERSION) => {}
        Some(other) => {
            return Err(Error::VersionMismatch {
                found: other.to_string(),
                expected: VERSION.to_string(),
            })
        }
        None => return Err(err(1, "missing version".into())),
    }
    let config_json = fields
        .next()
        .and_then(|f| f.strip_prefix("config="))
        .ok_or_else(|| err(1, "missing config".into()))?;
    let config: ModelConfig =
        serde_json::from_str(config_json).map_err(|e| err(1, format!("bad config: {e}")))?;
    let mut model = VqaModel::init(config).map_err(|e| err(1, e.to_string()))?;

    let expected = model.params.len();
    let mut seen = 0;
    for (offset, line) in lines.enumerate() {
        let lineno = offset + 2;
        if seen == expected {
            return Err(err(lineno, "more tensors than the model has".into()));
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(lineno, format!("expected 3 fields, found {}", cols.len())));
        }
        let param = model.params.iter_mut().nth(seen).expect("bounded above");
        if cols[0] != param.name {
            return Err(err(lineno, format!("expected tensor `{}`, found `{}`", param.name, cols[0])));
        }
        let shape = cols[1]
            .split(',')
            .map(|d| d.parse::<usize>().map_err(|_| err(lineno, format!("bad dimension `{d}`"))))
            .collect::<Result<Vec<_>>>()?;
        if shape != param.value.shape() {
            return Err(err(
                lineno,
                format!("`{}` has shape {shape:?}, model expects {:?}", param.name, param.value.shape()),
            ));
        }
        let data = cols[2]
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|_| err(lineno, format!("bad value `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        param.value = Tensor::new(shape, data).map_err(|e| err(lineno, e.to_string()))?;
        seen += 1;
    }
    if seen != expected {
        return Err(err(seen + 2, format!("file ends after {seen} of {expected} tensors")));
    }
    Ok(model)
}

pub fn write_checkpoint(model: &VqaModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<VqaModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&text, &path.display().to_string())
}
