use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetKind, Diagnosis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(DataError::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DataError> {
        let all = [train, val, test];
        let ok = all.iter().all(|r| r.is_finite() && *r >= 0.0)
            && ((train + val + test) - 1.0).abs() < 1e-9;
        if !ok {
            return Err(DataError::InvalidRatios(all));
        }
        Ok(Self { train, val, test })
    }
}

/// Paths are relative to the manifest root, `/`-separated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image: String,
    pub disc: String,
    pub cup: String,
    pub diagnosis: Diagnosis,
    pub split: Option<Split>,
}

/// A sample that was discovered but could not be ingested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset: DatasetKind,
    pub root: PathBuf,
    pub seed: Option<u64>,
    pub ratios: Option<SplitRatios>,
    pub records: Vec<SampleRecord>,
    pub rejected: Vec<Rejection>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn in_split(&self, split: Split) -> Vec<&SampleRecord> {
        self.records
            .iter()
            .filter(|r| r.split == Some(split))
            .collect()
    }

    pub fn count_diagnosis(&self, diagnosis: Diagnosis) -> usize {
        self.records
            .iter()
            .filter(|r| r.diagnosis == diagnosis)
            .count()
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Line-oriented text: `#`-prefixed header entries, then one tab-separated
    /// record per sample (`id image disc cup diagnosis split`).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# dataset\t{}\n", self.dataset));
        out.push_str(&format!("# root\t{}\n", self.root.display()));
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed\t{seed}\n"));
        }
        if let Some(r) = self.ratios {
            out.push_str(&format!("# ratios\t{}\t{}\t{}\n", r.train, r.val, r.test));
        }
        for rej in &self.rejected {
            out.push_str(&format!(
                "# rejected\t{}\t{}\n",
                rej.id,
                rej.reason.replace(['\t', '\n'], " ")
            ));
        }
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(Vec::new());
        w.write_record(["id", "image", "disc", "cup", "diagnosis", "split"])
            .expect("in-memory write");
        for r in &self.records {
            let split = r.split.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
            w.write_record([
                r.id.as_str(),
                &r.image,
                &r.disc,
                &r.cup,
                &r.diagnosis.to_string(),
                &split,
            ])
            .expect("in-memory write");
        }
        out.push_str(std::str::from_utf8(&w.into_inner().expect("flush")).expect("utf8 fields"));
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut dataset = None;
        let mut root = None;
        let mut seed = None;
        let mut ratios = None;
        let mut rejected = Vec::new();
        for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["dataset", v] => dataset = Some(v.parse::<DatasetKind>()?),
                ["root", v] => root = Some(PathBuf::from(v)),
                ["seed", v] => {
                    seed = Some(
                        v.parse()
                            .map_err(|_| DataError::Manifest(format!("bad seed `{v}`")))?,
                    )
                }
                ["ratios", a, b, c] => {
                    let p = |s: &str| {
                        s.parse::<f64>()
                            .map_err(|_| DataError::Manifest(format!("bad ratio `{s}`")))
                    };
                    ratios = Some(SplitRatios::new(p(a)?, p(b)?, p(c)?)?);
                }
                ["rejected", id, reason] => rejected.push(Rejection {
                    id: id.to_string(),
                    reason: reason.to_string(),
                }),
                _ => return Err(DataError::Manifest(format!("unrecognised header `{line}`"))),
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| DataError::Manifest(e.to_string()))?;
            if row.len() != 6 {
                return Err(DataError::Manifest(format!(
                    "record with {} fields",
                    row.len()
                )));
            }
            records.push(SampleRecord {
                id: row[0].to_string(),
                image: row[1].to_string(),
                disc: row[2].to_string(),
                cup: row[3].to_string(),
                diagnosis: row[4].parse()?,
                split: match &row[5] {
                    "-" => None,
                    s => Some(s.parse()?),
                },
            });
        }
        Ok(Self {
            dataset: dataset.ok_or_else(|| DataError::Manifest("missing dataset header".into()))?,
            root: root.ok_or_else(|| DataError::Manifest("missing root header".into()))?,
            seed,
            ratios,
            records,
            rejected,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Seeded assignment stratified by diagnosis. Within each stratum the train and
/// val counts are floored and the remainder goes to test.
pub fn split(
    manifest: &DatasetManifest,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    let ratios = SplitRatios::new(ratios.train, ratios.val, ratios.test)?;
    let mut strata: BTreeMap<Diagnosis, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        strata.entry(r.diagnosis).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    for members in strata.values_mut() {
        members.sort_by(|&a, &b| manifest.records[a].id.cmp(&manifest.records[b].id));
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_train = (n * ratios.train + 1e-9).floor() as usize;
        let n_val = (n * ratios.val + 1e-9).floor() as usize;
        for (k, &i) in members.iter().enumerate() {
            out.records[i].split = Some(if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    out.seed = Some(seed);
    out.ratios = Some(ratios);
    Ok(out)
}
