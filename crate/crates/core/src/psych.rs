//! Lexicon-based psychological dimensions and their rescaling onto the
//! teacher embedding's value distribution.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const N_DIMS: usize = 10;

/// The ten dimensions, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PsychDim {
    Valence,
    Arousal,
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
    Anger,
    Anxiety,
    Depression,
}

impl PsychDim {
    pub const ALL: [PsychDim; N_DIMS] = [
        PsychDim::Valence,
        PsychDim::Arousal,
        PsychDim::Openness,
        PsychDim::Conscientiousness,
        PsychDim::Extraversion,
        PsychDim::Agreeableness,
        PsychDim::Neuroticism,
        PsychDim::Anger,
        PsychDim::Anxiety,
        PsychDim::Depression,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            PsychDim::Valence => "VAL",
            PsychDim::Arousal => "ARO",
            PsychDim::Openness => "OPE",
            PsychDim::Conscientiousness => "CON",
            PsychDim::Extraversion => "EXT",
            PsychDim::Agreeableness => "AGR",
            PsychDim::Neuroticism => "NEU",
            PsychDim::Anger => "ANG",
            PsychDim::Anxiety => "ANX",
            PsychDim::Depression => "DEP",
        }
    }
}

impl fmt::Display for PsychDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for PsychDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        PsychDim::ALL
            .into_iter()
            .find(|d| d.code() == upper)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown psych dimension {s:?}")))
    }
}

/// Ten scores in canonical [`PsychDim`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsychDims(pub [f64; N_DIMS]);

impl PsychDims {
    pub fn get(&self, dim: PsychDim) -> f64 {
        self.0[dim.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Lowercase word tokens. A token is a maximal run of alphanumerics, with
/// apostrophes kept when they sit between two alphanumerics ("can't").
/// Everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = (c == '\'' || c == '\u{2019}')
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if inner_apostrophe {
            cur.push('\'');
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

/// Per-dimension token weights plus an intercept.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lexicon {
    weights: [HashMap<String, f64>; N_DIMS],
    intercepts: [f64; N_DIMS],
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dim: PsychDim, token: &str, weight: f64) -> Result<()> {
        if !weight.is_finite() {
            return Err(Error::NonFinite(format!("lexicon weight for {dim}/{token}")));
        }
        self.weights[dim.index()].insert(token.to_lowercase(), weight);
        Ok(())
    }

    pub fn set_intercept(&mut self, dim: PsychDim, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("lexicon intercept for {dim}")));
        }
        self.intercepts[dim.index()] = value;
        Ok(())
    }

    pub fn intercept(&self, dim: PsychDim) -> f64 {
        self.intercepts[dim.index()]
    }

    pub fn weight(&self, dim: PsychDim, token: &str) -> Option<f64> {
        self.weights[dim.index()].get(token).copied()
    }

    pub fn is_valid(&self) -> bool {
        self.weights.iter().any(|w| !w.is_empty())
    }

    /// Parse `dimension,token,weight` rows; the token `_intercept` sets the
    /// dimension's intercept.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [dim, token, value] = fields[..] else {
                return Err(err(format!("expected 3 fields, got {}", fields.len())));
            };
            let dim: PsychDim = dim.parse().map_err(|e: Error| err(e.to_string()))?;
            let value: f64 = value
                .parse()
                .map_err(|_| err(format!("bad weight {value:?}")))?;
            let res = if token == "_intercept" {
                lex.set_intercept(dim, value)
            } else {
                lex.insert(dim, token, value)
            };
            res.map_err(|e| err(e.to_string()))?;
        }
        if !lex.is_valid() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: 0,
                msg: "lexicon has no token weights".into(),
            });
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Serialize in the same row format [`Lexicon::parse`] reads, sorted.
    pub fn to_rows(&self) -> String {
        let mut out = String::new();
        for dim in PsychDim::ALL {
            let i = dim.index();
            if self.intercepts[i] != 0.0 {
                out.push_str(&format!("{dim},_intercept,{}\n", self.intercepts[i]));
            }
            let mut entries: Vec<_> = self.weights[i].iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            for (tok, w) in entries {
                out.push_str(&format!("{dim},{tok},{w}\n"));
            }
        }
        out
    }
}

/// score_d = intercept_d + sum over tokens of weight_d(token) * relfreq(token).
pub fn extract_psych(text: &str, lexicon: &Lexicon) -> PsychDims {
    let tokens = tokenize(text);
    let mut scores = lexicon.intercepts;
    if tokens.is_empty() {
        return PsychDims(scores);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &tokens {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let total = tokens.len() as f64;
    for (d, weights) in lexicon.weights.iter().enumerate() {
        // sorted so the float summation order does not depend on hash order
        let mut hits: Vec<(&str, f64)> = counts
            .iter()
            .filter_map(|(t, &c)| weights.get(*t).map(|w| (*t, w * c as f64 / total)))
            .collect();
        hits.sort_by(|a, b| a.0.cmp(b.0));
        scores[d] += hits.iter().map(|(_, v)| v).sum::<f64>();
    }
    PsychDims(scores)
}

/// Statistics mapping raw psych scores onto the teacher value distribution.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalerParams {
    pub teacher_mean: f64,
    pub teacher_std: f64,
    pub per_dim_mean: [f64; N_DIMS],
    pub per_dim_std: [f64; N_DIMS],
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Population statistics: one pooled mean/std over every teacher value, and
/// column-wise mean/std for the psych matrix.
pub fn fit_scaler(teacher: ArrayView2<f64>, psych: ArrayView2<f64>) -> Result<ScalerParams> {
    let n = teacher.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "scaler needs at least 2 rows, got {n}"
        )));
    }
    if psych.nrows() != n || psych.ncols() != N_DIMS {
        return Err(Error::Shape(format!(
            "psych matrix {:?}, expected ({n}, {N_DIMS})",
            psych.dim()
        )));
    }
    if teacher.ncols() == 0 {
        return Err(Error::Shape("teacher matrix has no columns".into()));
    }
    let (teacher_mean, teacher_std) = mean_std(teacher.iter());
    if !(teacher_std > 0.0) {
        return Err(Error::Degenerate("teacher values have zero variance".into()));
    }
    let mut per_dim_mean = [0.0; N_DIMS];
    let mut per_dim_std = [0.0; N_DIMS];
    for (d, col) in psych.columns().into_iter().enumerate() {
        let (m, s) = mean_std(col.iter());
        if !(s > 0.0) {
            return Err(Error::Degenerate(format!(
                "psych dimension {} has zero variance",
                PsychDim::ALL[d]
            )));
        }
        per_dim_mean[d] = m;
        per_dim_std[d] = s;
    }
    Ok(ScalerParams {
        teacher_mean,
        teacher_std,
        per_dim_mean,
        per_dim_std,
    })
}

pub fn standardize_psych(psych: &PsychDims, scaler: &ScalerParams) -> PsychDims {
    let mut out = [0.0; N_DIMS];
    for (d, o) in out.iter_mut().enumerate() {
        let z = (psych.0[d] - scaler.per_dim_mean[d]) / scaler.per_dim_std[d];
        *o = z * scaler.teacher_std + scaler.teacher_mean;
    }
    PsychDims(out)
}

/// Row-wise [`standardize_psych`] over an N x 10 matrix.
pub fn standardize_matrix(psych: ArrayView2<f64>, scaler: &ScalerParams) -> Result<Array2<f64>> {
    if psych.ncols() != N_DIMS {
        return Err(Error::Shape(format!(
            "psych matrix has {} columns, expected {N_DIMS}",
            psych.ncols()
        )));
    }
    let mut out = psych.to_owned();
    for mut row in out.rows_mut() {
        let dims = PsychDims(std::array::from_fn(|d| row[d]));
        let s = standardize_psych(&dims, scaler);
        row.iter_mut().zip(s.0).for_each(|(o, v)| *o = v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Good, good BAD!"), ["good", "good", "bad"]);
        assert_eq!(tokenize("but I can't"), ["but", "i", "can't"]);
        assert_eq!(tokenize("'quoted' -- x"), ["quoted", "x"]);
        assert!(tokenize("  ,.; ").is_empty());
    }

    #[test]
    fn weighted_relative_frequency() {
        let mut lex = Lexicon::new();
        lex.insert(PsychDim::Valence, "good", 2.0).unwrap();
        let p = extract_psych("good good bad", &lex);
        // hand oracle: 2.0 * (2 / 3)
        assert!((p.get(PsychDim::Valence) - 4.0 / 3.0).abs() < 1e-12);
        assert!(PsychDim::ALL[1..].iter().all(|&d| p.get(d) == 0.0));
    }

    #[test]
    fn empty_and_unmatched_text_give_intercepts() {
        let mut lex = Lexicon::new();
        lex.insert(PsychDim::Anger, "mad", 1.0).unwrap();
        assert_eq!(extract_psych("", &lex).0, [0.0; N_DIMS]);
        lex.set_intercept(PsychDim::Anger, 0.25).unwrap();
        let p = extract_psych("nothing matches here", &lex);
        assert_eq!(p.get(PsychDim::Anger), 0.25);
        assert_eq!(p.get(PsychDim::Valence), 0.0);
    }

    #[test]
    fn lexicon_file_format() {
        let text = "VAL,good,2\nval,_intercept,0.5\nDEP,sad,-1.5\n";
        let lex = Lexicon::parse(text, Path::new("lex.csv")).unwrap();
        assert_eq!(lex.weight(PsychDim::Valence, "good"), Some(2.0));
        assert_eq!(lex.intercept(PsychDim::Valence), 0.5);
        assert_eq!(lex.weight(PsychDim::Depression, "sad"), Some(-1.5));
        let again = Lexicon::parse(&lex.to_rows(), Path::new("x")).unwrap();
        assert_eq!(again, lex);
        assert!(Lexicon::parse("FOO,x,1", Path::new("x")).is_err());
        assert!(Lexicon::parse("VAL,_intercept,1", Path::new("x")).is_err());
    }

    fn psych_cols(col0: &[f64]) -> Array2<f64> {
        // column 0 as given, the rest a varying filler so no column is constant
        Array2::from_shape_fn((col0.len(), N_DIMS), |(i, d)| {
            if d == 0 {
                col0[i]
            } else {
                (i * (d + 1)) as f64
            }
        })
    }

    #[test]
    fn scaler_hand_values() {
        let teacher = array![[0.0, 2.0], [2.0, 4.0]];
        let s = fit_scaler(teacher.view(), psych_cols(&[1.0, 2.0]).view()).unwrap();
        assert!((s.teacher_mean - 2.0).abs() < 1e-12);
        assert!((s.teacher_std - 2f64.sqrt()).abs() < 1e-12);

        let teacher = array![[0.0], [1.0], [5.0]];
        let s = fit_scaler(teacher.view(), psych_cols(&[1.0, 2.0, 3.0]).view()).unwrap();
        assert!((s.per_dim_mean[0] - 2.0).abs() < 1e-12);
        assert!((s.per_dim_std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_psych_column_is_named() {
        let mut psych = psych_cols(&[1.0, 2.0, 3.0]);
        psych.column_mut(8).fill(4.0);
        let teacher = array![[0.0], [1.0], [5.0]];
        let err = fit_scaler(teacher.view(), psych.view()).unwrap_err();
        assert!(err.to_string().contains("ANX"), "{err}");
    }

    #[test]
    fn standardize_anchor_values() {
        let mut scaler = ScalerParams {
            teacher_mean: 0.0,
            teacher_std: 1.0,
            per_dim_mean: [2.0; N_DIMS],
            per_dim_std: [(2.0f64 / 3.0).sqrt(); N_DIMS],
        };
        let out = standardize_psych(&PsychDims([3.0; N_DIMS]), &scaler);
        // (3 - 2) / sqrt(2/3) = sqrt(3/2)
        assert!((out.0[0] - 1.5f64.sqrt()).abs() < 1e-12);

        scaler.teacher_mean = 0.7;
        let out = standardize_psych(&PsychDims([2.0; N_DIMS]), &scaler);
        assert!(out.0.iter().all(|&v| v == 0.7));

        let identity = ScalerParams {
            teacher_mean: 0.0,
            teacher_std: 1.0,
            per_dim_mean: [0.0; N_DIMS],
            per_dim_std: [1.0; N_DIMS],
        };
        let p = PsychDims(std::array::from_fn(|i| i as f64 - 3.3));
        assert_eq!(standardize_psych(&p, &identity), p);
    }

    proptest! {
        #[test]
        fn standardized_columns_match_teacher_stats(seed in any::<u64>(), n in 3usize..40) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let teacher = Array2::from_shape_fn((n, 6), |_| rng.random_range(-2.0..3.0));
            let psych = Array2::from_shape_fn((n, N_DIMS), |_| rng.random_range(-5.0..5.0));
            let s = fit_scaler(teacher.view(), psych.view()).unwrap();
            let out = standardize_matrix(psych.view(), &s).unwrap();
            for col in out.columns() {
                let (m, sd) = mean_std(col.iter());
                prop_assert!((m - s.teacher_mean).abs() < 1e-9);
                prop_assert!((sd - s.teacher_std).abs() < 1e-9);
            }
        }

        #[test]
        fn extraction_is_linear_in_weights(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let text = "good day bad day good";
            let mut la = Lexicon::new();
            la.insert(PsychDim::Arousal, "good", a).unwrap();
            la.insert(PsychDim::Arousal, "bad", b).unwrap();
            let got = extract_psych(text, &la).get(PsychDim::Arousal);
            prop_assert!((got - (a * 2.0 / 5.0 + b / 5.0)).abs() < 1e-12);
        }
    }
}
