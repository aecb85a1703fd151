//! Loading, validating, writing, and subsampling abductive NLI data.
//!
//! The on-disk format is UTF-8 JSONL, one instance per line, with keys
//! `obs1`, `obs2`, `hyp1`, `hyp2`, an optional `id`, and an optional
//! `label` that must be the string `"1"` or `"2"`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two candidate hypotheses is the explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    H1,
    H2,
}

impl Label {
    pub fn other(self) -> Label {
        match self {
            Label::H1 => Label::H2,
            Label::H2 => Label::H1,
        }
    }

    /// The on-disk encoding: `"1"` or `"2"`.
    pub fn as_digit(self) -> &'static str {
        match self {
            Label::H1 => "1",
            Label::H2 => "2",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::H1 => write!(f, "H1"),
            Label::H2 => write!(f, "H2"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "H1" | "h1" => Ok(Label::H1),
            "2" | "H2" | "h2" => Ok(Label::H2),
            other => Err(Error::InvalidArgument(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    Leaderboard,
    Synthetic,
}

/// One abductive NLI example: two observations, two candidate hypotheses,
/// and (for labeled splits) the gold hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub obs1: String,
    pub obs2: String,
    pub hyp1: String,
    pub hyp2: String,
    pub label: Option<Label>,
}

impl Instance {
    /// The hypothesis text selected by `label`.
    pub fn hypothesis(&self, label: Label) -> &str {
        match label {
            Label::H1 => &self.hyp1,
            Label::H2 => &self.hyp2,
        }
    }

    fn validate(&self, line: usize) -> Result<()> {
        for (key, text) in [
            ("obs1", &self.obs1),
            ("obs2", &self.obs2),
            ("hyp1", &self.hyp1),
            ("hyp2", &self.hyp2),
        ] {
            if text.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "line {line}: field {key:?} is empty"
                )));
            }
        }
        Ok(())
    }
}

/// An ordered, immutable collection of instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub split: Split,
    pub instances: Vec<Instance>,
    /// Source path or generator description, for provenance in reports.
    pub provenance: String,
}

impl Dataset {
    pub fn new(split: Split, instances: Vec<Instance>, provenance: impl Into<String>) -> Result<Self> {
        let ds = Dataset {
            split,
            instances,
            provenance: provenance.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// True when every instance carries a gold label.
    pub fn is_labeled(&self) -> bool {
        !self.instances.is_empty() && self.instances.iter().all(|i| i.label.is_some())
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.instances.len());
        for inst in &self.instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::Validation(format!("duplicate instance id {:?}", inst.id)));
            }
        }
        // Labels are all-or-nothing within a dataset.
        let labeled = self.instances.iter().filter(|i| i.label.is_some()).count();
        if labeled != 0 && labeled != self.instances.len() {
            return Err(Error::Validation(format!(
                "{} of {} instances are labeled; labels must be present on all instances or none",
                labeled,
                self.instances.len()
            )));
        }
        Ok(())
    }
}

/// Raw JSONL record. Extra keys in the file are tolerated; missing required
/// keys surface as schema errors naming the line and key.
#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    obs1: String,
    obs2: String,
    hyp1: String,
    hyp2: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// Loads a JSONL dataset, preserving line order. Labels `"1"`/`"2"` map to
/// [`Label::H1`]/[`Label::H2`]; instances without an `id` get one derived
/// from their (1-based) line number.
pub fn load_art(path: impl AsRef<Path>) -> Result<Dataset> {
    load_split(path, Split::Train)
}

/// [`load_art`] with an explicit split tag.
pub fn load_split(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| classify_json_error(&line, line_no, e))?;
        let label = match record.label.as_deref() {
            None => None,
            Some("1") => Some(Label::H1),
            Some("2") => Some(Label::H2),
            Some(_) => {
                return Err(Error::Schema {
                    line: line_no,
                    key: "label".to_string(),
                })
            }
        };
        let inst = Instance {
            id: record.id.unwrap_or_else(|| format!("line-{line_no:06}")),
            obs1: record.obs1,
            obs2: record.obs2,
            hyp1: record.hyp1,
            hyp2: record.hyp2,
            label,
        };
        inst.validate(line_no)?;
        instances.push(inst);
    }
    Dataset::new(split, instances, path.display().to_string())
}

/// A serde line failure is a schema error when the JSON itself is
/// well-formed but a required key is missing or mistyped.
fn classify_json_error(line: &str, line_no: usize, err: serde_json::Error) -> Error {
    if serde_json::from_str::<serde_json::Value>(line).is_ok() {
        let msg = err.to_string();
        let key = ["obs1", "obs2", "hyp1", "hyp2", "label", "id"]
            .iter()
            .find(|k| msg.contains(*k))
            .copied()
            .unwrap_or("unknown")
            .to_string();
        Error::Schema { line: line_no, key }
    } else {
        Error::Parse {
            line: line_no,
            message: err.to_string(),
        }
    }
}

/// Writes a dataset in the JSONL format accepted by [`load_art`].
pub fn write(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for inst in &dataset.instances {
        let record = Record {
            id: Some(inst.id.clone()),
            obs1: inst.obs1.clone(),
            obs2: inst.obs2.clone(),
            hyp1: inst.hyp1.clone(),
            hyp2: inst.hyp2.clone(),
            label: inst.label.map(|l| l.as_digit().to_string()),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::Validation(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Uniform sample of `k` instances without replacement, preserving the
/// source order of the survivors. Identical `(dataset, k, seed)` inputs
/// produce identical outputs.
///
/// The index selection is a partial Fisher-Yates shuffle over a seeded
/// ChaCha8 stream, so results do not depend on `rand`'s own sampler
/// internals staying stable across versions.
pub fn subsample(dataset: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    let n = dataset.len();
    if k > n {
        return Err(Error::SampleSize { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }
    let mut chosen = indices[..k].to_vec();
    chosen.sort_unstable();
    let instances = chosen.iter().map(|&i| dataset.instances[i].clone()).collect();
    Dataset::new(
        dataset.split,
        instances,
        format!("{} [subsample k={k} seed={seed}]", dataset.provenance),
    )
}
