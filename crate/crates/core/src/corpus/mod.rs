//! Recruitment corpora: line-delimited records, cleaning, labels, splits and
//! a synthetic generator.
//!
//! One JSON object per line, discriminated by `kind`:
//!
//! ```text
//! {"kind":"job","id":"j1","requirements":["5+ years of rust", "..."]}
//! {"kind":"resume","id":"r1","experiences":["built a compiler", "..."]}
//! {"kind":"application","job":"j1","resume":"r1","browsed":true,"delivered":true,"satisfied":false}
//! ```

mod split;
mod synth;

pub use split::{history_pieces_for_ratio, make_split, SplitPlan, PIECES};
pub use synth::{synth_generate, synth_generate_planted, PlantedSkills, SynthConfig};

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const MIN_RESUME_WORDS: usize = 15;
pub const MIN_JOB_WORDS: usize = 50;
pub const MAX_JOB_WORDS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub requirements: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resume {
    pub id: String,
    pub experiences: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Application {
    pub job: String,
    pub resume: String,
    #[serde(default)]
    pub browsed: bool,
    #[serde(default)]
    pub delivered: bool,
    #[serde(default)]
    pub satisfied: bool,
}

impl Application {
    pub fn label(&self) -> Option<u8> {
        derive_label(self.browsed, self.delivered, self.satisfied)
    }
}

/// Satisfied applications are successes, delivered-but-unsatisfied ones are
/// failures, anything short of delivery carries no label.
pub fn derive_label(browsed: bool, delivered: bool, satisfied: bool) -> Option<u8> {
    let _ = browsed;
    if satisfied {
        Some(1)
    } else if delivered {
        Some(0)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Job(Job),
    Resume(Resume),
    Application(Application),
}

/// A labeled (job, resume) pair, by index into the corpus' entity lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledPair {
    pub job: usize,
    pub resume: usize,
    pub label: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub jobs: Vec<Job>,
    pub resumes: Vec<Resume>,
    pub applications: Vec<Application>,
}

fn word_count(sentences: &[String]) -> usize {
    sentences.iter().map(|s| s.split_whitespace().count()).sum()
}

/// Keeps the first `limit` words, cutting inside the sentence that crosses it.
fn truncate_words(sentences: &[String], limit: usize) -> Vec<String> {
    let mut left = limit;
    let mut out = Vec::new();
    for s in sentences {
        if left == 0 {
            break;
        }
        let words = tokenize(s);
        if words.len() <= left {
            left -= words.len();
            out.push(s.clone());
        } else {
            out.push(s.split_whitespace().take(left).collect::<Vec<_>>().join(" "));
            left = 0;
        }
    }
    out
}

impl Corpus {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<corpus>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            match record {
                Record::Job(j) => corpus.jobs.push(j),
                Record::Resume(r) => corpus.resumes.push(r),
                Record::Application(a) => corpus.applications.push(a),
            }
        }
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<corpus>", e);
        for j in &self.jobs {
            serde_json::to_writer(&mut w, &Record::Job(j.clone()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        for r in &self.resumes {
            serde_json::to_writer(&mut w, &Record::Resume(r.clone()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        for a in &self.applications {
            serde_json::to_writer(&mut w, &Record::Application(a.clone()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Unique entity ids, no dangling references, one application per pair.
    pub fn validate(&self) -> Result<()> {
        let mut jobs = HashSet::new();
        for j in &self.jobs {
            if !jobs.insert(j.id.as_str()) {
                return Err(Error::Infeasible(format!("duplicate job id {}", j.id)));
            }
        }
        let mut resumes = HashSet::new();
        for r in &self.resumes {
            if !resumes.insert(r.id.as_str()) {
                return Err(Error::Infeasible(format!("duplicate resume id {}", r.id)));
            }
        }
        let mut pairs = HashSet::new();
        for a in &self.applications {
            if !jobs.contains(a.job.as_str()) {
                return Err(Error::DanglingReference {
                    kind: "job",
                    id: a.job.clone(),
                });
            }
            if !resumes.contains(a.resume.as_str()) {
                return Err(Error::DanglingReference {
                    kind: "resume",
                    id: a.resume.clone(),
                });
            }
            if !pairs.insert((a.job.as_str(), a.resume.as_str())) {
                return Err(Error::DuplicatePair(a.job.clone(), a.resume.clone()));
            }
        }
        Ok(())
    }

    /// Drops incomplete documents, truncates long job postings and removes
    /// entities that never took part in a successful application.
    pub fn filter(&self) -> Corpus {
        let jobs: Vec<Job> = self
            .jobs
            .iter()
            .filter(|j| word_count(&j.requirements) >= MIN_JOB_WORDS)
            .map(|j| Job {
                id: j.id.clone(),
                requirements: truncate_words(&j.requirements, MAX_JOB_WORDS),
            })
            .collect();
        let resumes: Vec<Resume> = self
            .resumes
            .iter()
            .filter(|r| word_count(&r.experiences) >= MIN_RESUME_WORDS)
            .cloned()
            .collect();
        let job_ids: HashSet<&str> = jobs.iter().map(|j| j.id.as_str()).collect();
        let resume_ids: HashSet<&str> = resumes.iter().map(|r| r.id.as_str()).collect();
        let apps: Vec<&Application> = self
            .applications
            .iter()
            .filter(|a| job_ids.contains(a.job.as_str()) && resume_ids.contains(a.resume.as_str()))
            .collect();

        let mut hired_jobs = HashSet::new();
        let mut hired_resumes = HashSet::new();
        for a in apps.iter().filter(|a| a.satisfied) {
            hired_jobs.insert(a.job.clone());
            hired_resumes.insert(a.resume.clone());
        }
        Corpus {
            jobs: jobs.into_iter().filter(|j| hired_jobs.contains(&j.id)).collect(),
            resumes: resumes.into_iter().filter(|r| hired_resumes.contains(&r.id)).collect(),
            applications: apps
                .into_iter()
                .filter(|a| hired_jobs.contains(&a.job) && hired_resumes.contains(&a.resume))
                .cloned()
                .collect(),
        }
    }

    pub fn job_index(&self) -> HashMap<&str, usize> {
        self.jobs.iter().enumerate().map(|(i, j)| (j.id.as_str(), i)).collect()
    }

    pub fn resume_index(&self) -> HashMap<&str, usize> {
        self.resumes
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }

    /// Every application that carries a label, in file order.
    pub fn labeled_pairs(&self) -> Vec<LabeledPair> {
        let jobs = self.job_index();
        let resumes = self.resume_index();
        self.applications
            .iter()
            .filter_map(|a| {
                Some(LabeledPair {
                    job: *jobs.get(a.job.as_str())?,
                    resume: *resumes.get(a.resume.as_str())?,
                    label: a.label()?,
                })
            })
            .collect()
    }

    /// Hex SHA-256 of the serialized corpus.
    pub fn hash(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        hex::encode(Sha256::digest(&buf))
    }
}
