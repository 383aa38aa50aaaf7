//! Synthetic recruitment corpora with a planted ground truth.
//!
//! Every skill owns a pool of surface tokens. Jobs require a few skills,
//! resumes hold a few, and a pair is a success when they share at least
//! `threshold` skills (then flipped with probability `noise`). A fraction of
//! the skills is *hidden*: resumes describe them with tokens from one pool that
//! all hidden skills share and no job ever uses, so only the history of who was
//! hired where tells which hidden skill a resume holds.

use std::collections::HashSet;

use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Application, Corpus, Job, Resume, MIN_JOB_WORDS, MIN_RESUME_WORDS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub skills: usize,
    pub jobs: usize,
    pub resumes: usize,
    /// Labeled applications to emit (browse-only records come on top).
    pub applications: usize,
    pub skills_per_job: usize,
    pub skills_per_resume: usize,
    pub threshold: usize,
    pub noise: f64,
    /// Fraction of skills written with uninformative tokens on resumes.
    pub hidden_skill_fraction: f64,
    pub tokens_per_skill: usize,
    pub filler_tokens: usize,
    /// Sentences written per held or required skill.
    pub sentences_per_skill: usize,
    pub sentence_len: usize,
    /// Share of each sentence taken by skill tokens.
    pub skill_token_share: f64,
    /// Extra browse-only applications, as a fraction of `applications`.
    pub browse_only_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            skills: 4,
            jobs: 120,
            resumes: 400,
            applications: 16000,
            skills_per_job: 1,
            skills_per_resume: 1,
            threshold: 1,
            noise: 0.05,
            hidden_skill_fraction: 0.0,
            tokens_per_skill: 6,
            filler_tokens: 40,
            sentences_per_skill: 2,
            sentence_len: 8,
            skill_token_share: 1.0,
            browse_only_fraction: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Three quarters of the skills are hidden on resumes, so the text alone
    /// cannot settle a match for them.
    pub fn history_dependent() -> Self {
        Self {
            hidden_skill_fraction: 0.75,
            ..Self::default()
        }
    }
}

/// The ground truth behind a generated corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantedSkills {
    pub job_skills: Vec<Vec<usize>>,
    pub resume_skills: Vec<Vec<usize>>,
    pub hidden: Vec<bool>,
}

impl PlantedSkills {
    pub fn overlap(&self, job: usize, resume: usize) -> usize {
        self.job_skills[job]
            .iter()
            .filter(|s| self.resume_skills[resume].contains(s))
            .count()
    }
}

impl SynthConfig {
    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Infeasible(msg));
        if self.skills < 2 {
            return bad("at least 2 skills are needed".into());
        }
        if self.skills_per_job == 0 || self.skills_per_resume == 0 {
            return bad("jobs and resumes need at least one skill".into());
        }
        if self.skills_per_job > self.skills || self.skills_per_resume > self.skills {
            return bad("more skills per entity than skills".into());
        }
        if self.threshold == 0 || self.threshold > self.skills_per_job.min(self.skills_per_resume) {
            return bad(format!(
                "threshold {} unreachable with {} skills per job and {} per resume",
                self.threshold, self.skills_per_job, self.skills_per_resume
            ));
        }
        if self.jobs == 0 || self.resumes == 0 {
            return bad("empty entity set".into());
        }
        let extra = (self.applications as f64 * self.browse_only_fraction).round() as usize;
        if self.applications + extra > self.jobs * self.resumes {
            return bad("more applications than distinct pairs".into());
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.hidden_skill_fraction) {
            return bad("noise and hidden fraction must lie in [0, 1]".into());
        }
        if self.tokens_per_skill == 0 || self.filler_tokens == 0 || self.sentence_len < 2 {
            return bad("token pools and sentences must be nonempty".into());
        }
        Ok(())
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Corpus> {
    Ok(synth_generate_planted(cfg)?.0)
}

/// Generates a corpus together with its planted skills.
pub fn synth_generate_planted(cfg: &SynthConfig) -> Result<(Corpus, PlantedSkills)> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_hidden = (cfg.hidden_skill_fraction * cfg.skills as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.skills).collect();
    order.shuffle(&mut rng);
    let mut hidden = vec![false; cfg.skills];
    for &s in &order[..n_hidden] {
        hidden[s] = true;
    }

    let pick = |rng: &mut ChaCha8Rng, k: usize| {
        let mut v = sample(rng, cfg.skills, k).into_vec();
        v.sort_unstable();
        v
    };
    let job_skills: Vec<Vec<usize>> = (0..cfg.jobs).map(|_| pick(&mut rng, cfg.skills_per_job)).collect();
    let resume_skills: Vec<Vec<usize>> = (0..cfg.resumes)
        .map(|_| pick(&mut rng, cfg.skills_per_resume))
        .collect();

    let writer = Writer { cfg };
    let jobs = job_skills
        .iter()
        .enumerate()
        .map(|(i, skills)| Job {
            id: format!("job{i:05}"),
            requirements: writer.document(&mut rng, skills, |_| false, "jf", MIN_JOB_WORDS),
        })
        .collect();
    let resumes = resume_skills
        .iter()
        .enumerate()
        .map(|(i, skills)| Resume {
            id: format!("cv{i:05}"),
            experiences: writer.document(&mut rng, skills, |s| hidden[s], "rf", MIN_RESUME_WORDS),
        })
        .collect();

    let planted = PlantedSkills {
        job_skills,
        resume_skills,
        hidden,
    };

    let extra = (cfg.applications as f64 * cfg.browse_only_fraction).round() as usize;
    let total = cfg.applications + extra;
    let mut seen = HashSet::with_capacity(total);
    let mut pairs = Vec::with_capacity(total);
    if total * 2 > cfg.jobs * cfg.resumes {
        // dense request: sample directly from the full grid
        for flat in sample(&mut rng, cfg.jobs * cfg.resumes, total).into_iter() {
            pairs.push((flat / cfg.resumes, flat % cfg.resumes));
        }
    } else {
        while pairs.len() < total {
            let p = (rng.gen_range(0..cfg.jobs), rng.gen_range(0..cfg.resumes));
            if seen.insert(p) {
                pairs.push(p);
            }
        }
    }

    let mut applications = Vec::with_capacity(total);
    for (i, (j, r)) in pairs.into_iter().enumerate() {
        let mut success = planted.overlap(j, r) >= cfg.threshold;
        if rng.gen::<f64>() < cfg.noise {
            success = !success;
        }
        let labeled = i < cfg.applications;
        applications.push(Application {
            job: format!("job{j:05}"),
            resume: format!("cv{r:05}"),
            browsed: true,
            delivered: labeled,
            satisfied: labeled && success,
        });
    }
    applications.shuffle(&mut rng);

    Ok((
        Corpus {
            jobs,
            resumes,
            applications,
        },
        planted,
    ))
}

struct Writer<'a> {
    cfg: &'a SynthConfig,
}

impl Writer<'_> {
    fn sentence(&self, rng: &mut ChaCha8Rng, skill: Option<(usize, bool)>, filler: &str) -> String {
        let len = self.cfg.sentence_len;
        let n_skill = match skill {
            Some(_) => ((len as f64 * self.cfg.skill_token_share).round() as usize).clamp(1, len),
            None => 0,
        };
        let mut words: Vec<String> = Vec::with_capacity(len);
        for _ in 0..n_skill {
            let k = rng.gen_range(0..self.cfg.tokens_per_skill);
            words.push(match skill {
                Some((s, false)) => format!("s{s}t{k}"),
                _ => format!("hx{k}"),
            });
        }
        for _ in n_skill..len {
            words.push(format!("{filler}{}", rng.gen_range(0..self.cfg.filler_tokens)));
        }
        words.shuffle(rng);
        words.join(" ")
    }

    fn document(
        &self,
        rng: &mut ChaCha8Rng,
        skills: &[usize],
        is_hidden: impl Fn(usize) -> bool,
        filler: &str,
        min_words: usize,
    ) -> Vec<String> {
        let mut sentences = Vec::new();
        for &s in skills {
            for _ in 0..self.cfg.sentences_per_skill {
                sentences.push(self.sentence(rng, Some((s, is_hidden(s))), filler));
            }
        }
        sentences.push(self.sentence(rng, None, filler));
        while sentences.len() * self.cfg.sentence_len < min_words {
            sentences.push(self.sentence(rng, None, filler));
        }
        sentences.shuffle(rng);
        sentences
    }
}
