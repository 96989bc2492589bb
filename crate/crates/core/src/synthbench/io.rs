//! Line-oriented split files.
//!
//! ```text
//! lpf-split<TAB>version=1<TAB>role=train<TAB>fingerprint=..<TAB>vocab=25<TAB>v_in_dim=16<TAB>samples=N<TAB>prior=r0c0,r0c1,..;r1c0,..
//! <qtype><TAB><tok>,<tok>,..<TAB><answer><TAB><f0>,<f1>,..
//! ```
//!
//! Reals are written with 17 significant digits, which round-trips every `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Sample, Split, SplitRole};
use crate::error::{Error, Result};
use crate::objectives::PriorTable;

pub const FORMAT_VERSION: &str = "1";
const MAGIC: &str = "lpf-split";

pub(crate) fn fmt_real(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("writing to a String");
}

fn join_reals(out: &mut String, xs: &[f64]) {
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        fmt_real(out, x);
    }
}

pub fn encode_split(split: &Split) -> String {
    let mut out = String::new();
    write!(
        out,
        "{MAGIC}\tversion={FORMAT_VERSION}\trole={}\tfingerprint={}\tvocab={}\tv_in_dim={}\tsamples={}\tprior=",
        split.role,
        split.fingerprint,
        split.vocab_size,
        split.v_in_dim,
        split.samples.len()
    )
    .unwrap();
    for (k, row) in split.prior.rows().iter().enumerate() {
        if k > 0 {
            out.push(';');
        }
        join_reals(&mut out, row);
    }
    out.push('\n');
    for s in &split.samples {
        let tokens: Vec<String> = s.question_tokens.iter().map(usize::to_string).collect();
        write!(out, "{}\t{}\t{}\t", s.qtype_id, tokens.join(","), s.answer_id).unwrap();
        join_reals(&mut out, &s.visual_feature);
        out.push('\n');
    }
    out
}

pub fn write_split(split: &Split, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_split(split)).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: impl AsRef<Path>) -> Result<Split> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_split(&text, &path.display().to_string())
}

struct LineErr<'a> {
    path: &'a str,
    line: usize,
}

impl LineErr<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, what: &str, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("bad {what} `{s}`")))
    }

    fn list<T: std::str::FromStr>(&self, what: &str, s: &str) -> Result<Vec<T>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|x| self.num(what, x)).collect()
    }
}

pub fn decode_split(text: &str, path: &str) -> Result<Split> {
    let mut lines = text.lines();
    let at = LineErr { path, line: 1 };
    let header = lines.next().ok_or_else(|| at.err("empty file"))?;
    let mut fields = header.split('\t');
    if fields.next() != Some(MAGIC) {
        return Err(at.err(format!("missing `{MAGIC}` header")));
    }
    let mut get = |key: &str| -> Result<&str> {
        let field = fields.next().ok_or_else(|| at.err(format!("missing header field `{key}`")))?;
        field
            .strip_prefix(key)
            .and_then(|v| v.strip_prefix('='))
            .ok_or_else(|| at.err(format!("expected `{key}=...`, found `{field}`")))
    };
    let version = get("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let role: SplitRole = get("role")?.parse().map_err(|_| at.err("bad role"))?;
    let fingerprint = get("fingerprint")?.to_string();
    let vocab_size: usize = at.num("vocab", get("vocab")?)?;
    let v_in_dim: usize = at.num("v_in_dim", get("v_in_dim")?)?;
    let n: usize = at.num("samples", get("samples")?)?;
    let prior_rows = get("prior")?
        .split(';')
        .map(|row| at.list::<f64>("prior entry", row))
        .collect::<Result<Vec<_>>>()?;
    let prior = PriorTable::new(prior_rows).map_err(|e| at.err(e.to_string()))?;
    let (num_qtypes, num_answers) = (prior.num_qtypes(), prior.num_answers());

    let mut samples = Vec::with_capacity(n);
    for (offset, line) in lines.enumerate() {
        let at = LineErr { path, line: offset + 2 };
        if samples.len() == n {
            return Err(at.err(format!("more sample lines than the {n} declared")));
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(at.err(format!("expected 4 tab-separated fields, found {}", cols.len())));
        }
        let qtype_id: usize = at.num("qtype", cols[0])?;
        let question_tokens: Vec<usize> = at.list("token", cols[1])?;
        let answer_id: usize = at.num("answer", cols[2])?;
        let visual_feature: Vec<f64> = at.list("feature", cols[3])?;
        if qtype_id >= num_qtypes || answer_id >= num_answers {
            return Err(at.err(format!("qtype {qtype_id} / answer {answer_id} outside the prior table")));
        }
        if question_tokens.is_empty() || question_tokens.iter().any(|&t| t >= vocab_size) {
            return Err(at.err("token ids empty or outside the vocabulary"));
        }
        if visual_feature.len() != v_in_dim {
            return Err(at.err(format!(
                "visual feature has {} values, expected {v_in_dim}",
                visual_feature.len()
            )));
        }
        samples.push(Sample {
            qtype_id,
            question_tokens,
            visual_feature,
            answer_id,
        });
    }
    if samples.len() != n {
        let last = samples.len() + 2;
        return Err(LineErr { path, line: last }.err(format!(
            "file ends after {} of {n} declared samples",
            samples.len()
        )));
    }
    Ok(Split {
        samples,
        prior,
        role,
        fingerprint,
        vocab_size,
        v_in_dim,
    })
}
