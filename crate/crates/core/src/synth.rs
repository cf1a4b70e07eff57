//! Seeded synthetic corpus: a shared latent per segment drives the teacher
//! embedding, the acoustic frames, the transcript words and the person-level
//! outcome.
//!
//! The acoustic channel expresses half of the latents strongly and half
//! faintly, and the default outcome loads on the faint half. A random
//! saturating backbone mostly encodes the strong latents; the teacher weights
//! all latents alike, so alignment has to recover the faint ones.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{write_manifest, write_outcomes, write_store, EmbeddingStore, ManifestEntry, PersonRecord};
use crate::error::{Error, Result};
use crate::psych::{Lexicon, PsychDim};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TEACHER_FILE: &str = "teacher.bin";
pub const OUTCOMES_FILE: &str = "outcomes.csv";
pub const LEXICON_FILE: &str = "lexicon.csv";
pub const FEATURES_DIR: &str = "features";
pub const OUTCOME_NAME: &str = "outcome";
const FRAME_SECONDS: f64 = 0.02;
pub const STRONG_GAIN: f64 = 4.0;
pub const FAINT_GAIN: f64 = 0.5;

const WORD_PAIRS: [(&str, &str); 8] = [
    ("calm", "tense"),
    ("happy", "sad"),
    ("curious", "bored"),
    ("steady", "restless"),
    ("warm", "cold"),
    ("friendly", "hostile"),
    ("relaxed", "worried"),
    ("hopeful", "hopeless"),
];
const FILLERS: [&str; 4] = ["so", "well", "i", "think"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub latent_dim: usize,
    pub teacher_dim: usize,
    pub feature_dim: usize,
    pub frames: usize,
    pub persons: usize,
    pub segments_per_person: usize,
    pub noise_std: f64,
    /// Defaults to equal weights over the acoustically faint latents.
    pub outcome_weights: Option<Vec<f64>>,
    /// Per-latent scale of the acoustic mixing column. Defaults to
    /// [`STRONG_GAIN`] on the first half of the latents and [`FAINT_GAIN`]
    /// on the rest.
    pub acoustic_gains: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            teacher_dim: 32,
            feature_dim: 16,
            frames: 4,
            persons: 200,
            segments_per_person: 5,
            noise_std: 0.1,
            outcome_weights: None,
            acoustic_gains: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("latent_dim", self.latent_dim),
            ("teacher_dim", self.teacher_dim),
            ("feature_dim", self.feature_dim),
            ("frames", self.frames),
            ("persons", self.persons),
            ("segments_per_person", self.segments_per_person),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("synth.{name} must be >= 1")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("synth.noise_std must be >= 0, got {}", self.noise_std)));
        }
        for (name, v) in [("outcome_weights", &self.outcome_weights), ("acoustic_gains", &self.acoustic_gains)] {
            let Some(v) = v else { continue };
            if v.len() != self.latent_dim {
                return Err(Error::Config(format!(
                    "synth.{name} has {} entries, latent_dim is {}",
                    v.len(),
                    self.latent_dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("synth.{name} must be finite")));
            }
        }
        if let Some(g) = &self.acoustic_gains {
            if g.iter().any(|&x| x <= 0.0) {
                return Err(Error::Config("synth.acoustic_gains must be > 0".into()));
            }
        }
        Ok(())
    }

    fn faint_count(&self) -> usize {
        self.latent_dim / 2
    }

    pub fn gains(&self) -> Array1<f64> {
        match &self.acoustic_gains {
            Some(g) => Array1::from(g.clone()),
            None => {
                let strong = self.latent_dim - self.faint_count();
                Array1::from_shape_fn(self.latent_dim, |k| if k < strong { STRONG_GAIN } else { FAINT_GAIN })
            }
        }
    }

    pub fn weights(&self) -> Array1<f64> {
        if let Some(w) = &self.outcome_weights {
            return Array1::from(w.clone());
        }
        let faint = self.faint_count();
        if faint == 0 {
            return Array1::ones(self.latent_dim);
        }
        let strong = self.latent_dim - faint;
        let v = 1.0 / (faint as f64).sqrt();
        Array1::from_shape_fn(self.latent_dim, |k| if k < strong { 0.0 } else { v })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSegment {
    pub segment_id: String,
    pub person_id: String,
    pub text: String,
    pub latent: Array1<f64>,
    pub features: Array2<f64>,
    pub teacher: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub segments: Vec<SyntheticSegment>,
    pub outcomes: Vec<PersonRecord>,
    pub lexicon: Lexicon,
    pub teacher_weight: Array2<f64>,
    pub acoustic_weight: Array2<f64>,
}

impl SyntheticData {
    pub fn teacher_matrix(&self) -> Array2<f64> {
        let d = self.segments[0].teacher.len();
        Array2::from_shape_fn((self.segments.len(), d), |(i, j)| self.segments[i].teacher[j])
    }

    pub fn segment_ids(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.segment_id.clone()).collect()
    }

    /// Write manifest, per-segment feature stores, the teacher store, outcomes
    /// and the lexicon under `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let fdir = out_dir.join(FEATURES_DIR);
        fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
        let mut entries = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            let rel = format!("{FEATURES_DIR}/{}.bin", seg.segment_id);
            write_store(&EmbeddingStore::indexed(&seg.features), &out_dir.join(&rel))?;
            entries.push(ManifestEntry {
                segment_id: seg.segment_id.clone(),
                person_id: seg.person_id.clone(),
                text: seg.text.clone(),
                features_path: rel,
                duration_s: seg.features.nrows() as f64 * FRAME_SECONDS,
            });
        }
        write_manifest(&out_dir.join(MANIFEST_FILE), &entries)?;
        let teacher = EmbeddingStore::from_f64(self.segment_ids(), &self.teacher_matrix())?;
        write_store(&teacher, &out_dir.join(TEACHER_FILE))?;
        write_outcomes(&out_dir.join(OUTCOMES_FILE), &self.outcomes)?;
        let lex_path = out_dir.join(LEXICON_FILE);
        fs::write(&lex_path, self.lexicon.to_rows()).map_err(|e| Error::io(&lex_path, e))
    }
}

fn word_pair(k: usize) -> (String, String) {
    match WORD_PAIRS.get(k) {
        Some((p, n)) => (p.to_string(), n.to_string()),
        None => (format!("up{k}"), format!("down{k}")),
    }
}

/// Each psych dimension reads one latent's word pair (+1 / -1).
pub fn synthetic_lexicon(latent_dim: usize) -> Lexicon {
    let mut lex = Lexicon::new();
    for dim in PsychDim::ALL {
        let (pos, neg) = word_pair(dim.index() % latent_dim);
        lex.insert(dim, &pos, 1.0).expect("finite weight");
        lex.insert(dim, &neg, -1.0).expect("finite weight");
    }
    lex
}

fn normal(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Words for one segment: up to three repetitions of each latent's sign word,
/// scaled by its magnitude, plus one filler, in shuffled order.
fn segment_text(z: &Array1<f64>, rng: &mut ChaCha8Rng) -> String {
    let mut words = Vec::new();
    for (k, &v) in z.iter().enumerate() {
        let (pos, neg) = word_pair(k);
        let reps = (v.abs() * 1.5).round().min(3.0) as usize;
        let w = if v >= 0.0 { pos } else { neg };
        words.extend(std::iter::repeat_n(w, reps));
    }
    words.push(FILLERS[rng.random_range(0..FILLERS.len())].to_string());
    words.shuffle(rng);
    words.join(" ")
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l = spec.latent_dim;
    let teacher_weight = Array2::from_shape_fn((spec.teacher_dim, l), |_| {
        rng.sample::<f64, _>(StandardNormal) / (l as f64).sqrt()
    });
    let gains = spec.gains();
    let acoustic_weight = Array2::from_shape_fn((spec.feature_dim, l), |(_, k)| {
        gains[k] * rng.sample::<f64, _>(StandardNormal)
    });
    let w = spec.weights();
    let sigma = spec.noise_std;

    let pw = spec.persons.to_string().len().max(3);
    let mut segments = Vec::with_capacity(spec.persons * spec.segments_per_person);
    let mut outcomes = Vec::with_capacity(spec.persons);
    for p in 0..spec.persons {
        let person_id = format!("p{p:0pw$}");
        let mut z_sum = Array1::zeros(l);
        for s in 0..spec.segments_per_person {
            let z = normal(&mut rng, l, 1.0);
            let raw = teacher_weight.dot(&z) + normal(&mut rng, spec.teacher_dim, sigma);
            let norm = raw.dot(&raw).sqrt();
            if !(norm > 0.0) {
                return Err(Error::Degenerate(format!("teacher embedding of {person_id}_s{s} is zero")));
            }
            let teacher = raw / norm;
            let clean = acoustic_weight.dot(&z);
            let mut features = Array2::zeros((spec.frames, spec.feature_dim));
            for mut frame in features.rows_mut() {
                frame.assign(&(&clean + &normal(&mut rng, spec.feature_dim, sigma)));
            }
            let text = segment_text(&z, &mut rng);
            z_sum += &z;
            segments.push(SyntheticSegment {
                segment_id: format!("{person_id}_s{s}"),
                person_id: person_id.clone(),
                text,
                latent: z,
                features,
                teacher,
            });
        }
        let z_mean = z_sum / spec.segments_per_person as f64;
        let eps: f64 = rng.sample(StandardNormal);
        let value = w.dot(&z_mean) + sigma * eps;
        outcomes.push(PersonRecord {
            person_id,
            outcome_scores: [(OUTCOME_NAME.to_string(), value)].into(),
        });
    }
    Ok(SyntheticData {
        segments,
        outcomes,
        lexicon: synthetic_lexicon(l),
        teacher_weight,
        acoustic_weight,
    })
}
