//! Person-level downstream evaluation: mean aggregation, ridge regression with
//! grouped k-fold cross-validation, Pearson r, MSE and paired t-tests.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingStore, PersonRecord};
use crate::error::{Error, Result};
use crate::stats::{mean, student_t_two_sided_p, variance};

pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [1e-6, 1e-4, 1e-2, 1.0, 100.0, 10000.0];

#[derive(Debug, Clone, PartialEq)]
pub struct PersonEmbedding {
    pub person_id: String,
    pub vector: Array1<f64>,
    pub n_segments: usize,
}

/// Group rows of `embeddings` by the parallel `person_ids`.
pub fn group_by_person(
    person_ids: &[String],
    embeddings: ArrayView2<f64>,
) -> Result<BTreeMap<String, Vec<Array1<f64>>>> {
    if person_ids.len() != embeddings.nrows() {
        return Err(Error::Shape(format!(
            "{} person ids for {} embeddings",
            person_ids.len(),
            embeddings.nrows()
        )));
    }
    let mut groups: BTreeMap<String, Vec<Array1<f64>>> = BTreeMap::new();
    for (pid, row) in person_ids.iter().zip(embeddings.rows()) {
        groups.entry(pid.clone()).or_default().push(row.to_owned());
    }
    Ok(groups)
}

/// Per-person arithmetic mean, sorted by person id.
pub fn aggregate_person(groups: &BTreeMap<String, Vec<Array1<f64>>>) -> Result<Vec<PersonEmbedding>> {
    groups
        .iter()
        .map(|(pid, segs)| {
            let first = segs
                .first()
                .ok_or_else(|| Error::InvalidArgument(format!("person {pid} has no segments")))?;
            let mut sum = Array1::zeros(first.len());
            for s in segs {
                if s.len() != first.len() {
                    return Err(Error::Shape(format!("person {pid}: mixed embedding lengths")));
                }
                sum += s;
            }
            Ok(PersonEmbedding {
                person_id: pid.clone(),
                vector: sum / segs.len() as f64,
                n_segments: segs.len(),
            })
        })
        .collect()
}

/// A statistic that may be undefined on zero-variance input, in which case
/// it is reported as 0 with `degenerate` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub degenerate: bool,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("pearson on {} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least 2 values".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let constant = |v: &[f64]| v.iter().all(|&e| e == v[0]);
    if constant(x) || constant(y) || !(sxx > 0.0 && syy > 0.0) {
        return Ok(Correlation {
            r: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub degenerate: bool,
}

/// Paired two-sided t-test on `a - b` with sample standard deviation.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired t-test on {} vs {} values", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let sd = variance(&d, 1).sqrt();
    let df = n - 1;
    if !(sd > 0.0) {
        return Ok(TTest {
            t: 0.0,
            p: 1.0,
            df,
            degenerate: true,
        });
    }
    let t = m / (sd / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided_p(t, df as f64),
        df,
        degenerate: false,
    })
}

/// Closed-form ridge `(X^T X + lambda I)^-1 X^T y` without centering or scaling.
pub fn ridge_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<Array1<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows vs {} targets", x.nrows(), y.len())));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge lambda must be > 0, got {lambda}")));
    }
    let d = x.ncols();
    let xm = DMatrix::from_fn(x.nrows(), d, |i, j| x[[i, j]]);
    let yv = DVector::from_iterator(y.len(), y.iter().copied());
    let gram = xm.transpose() * &xm + DMatrix::identity(d, d) * lambda;
    let rhs = xm.transpose() * yv;
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate("ridge system is not positive definite".into()))?
        .solve(&rhs);
    Ok(Array1::from_iter(beta.iter().copied()))
}

/// Ridge with y centered and X standardized on the fitting rows.
struct FittedRidge {
    x_mean: Array1<f64>,
    x_std: Array1<f64>,
    y_mean: f64,
    beta: Array1<f64>,
}

impl FittedRidge {
    fn fit(x: &Array2<f64>, y: &[f64], rows: &[usize], lambda: f64) -> Result<Self> {
        let d = x.ncols();
        let n = rows.len() as f64;
        let sub = x.select(ndarray::Axis(0), rows);
        let x_mean = sub.sum_axis(ndarray::Axis(0)) / n;
        let x_std = Array1::from_shape_fn(d, |j| {
            let v = sub.column(j).iter().map(|v| (v - x_mean[j]).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        });
        let xs = (&sub - &x_mean) / &x_std;
        let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
        let yc = Array1::from_iter(rows.iter().map(|&i| y[i] - y_mean));
        let beta = ridge_fit(xs.view(), yc.view(), lambda)?;
        Ok(Self {
            x_mean,
            x_std,
            y_mean,
            beta,
        })
    }

    fn predict(&self, row: ArrayView1<f64>) -> f64 {
        self.y_mean + ((&row - &self.x_mean) / &self.x_std).dot(&self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    /// Fraction of each training fold held out to pick lambda.
    pub inner_val_fraction: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            seed: 0,
            inner_val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Out-of-fold predictions, aligned with the input rows.
    pub predictions: Vec<f64>,
    pub pearson: Correlation,
    pub mse: f64,
    /// Fold index of each input row.
    pub fold_of: Vec<usize>,
    pub fold_lambdas: Vec<f64>,
}

impl CvResult {
    pub fn squared_errors(&self, y: &[f64]) -> Vec<f64> {
        self.predictions.iter().zip(y).map(|(p, t)| (p - t).powi(2)).collect()
    }
}

/// Seeded permutation of `rows`, ordered by id first so the result depends on
/// ids rather than on input positions.
fn shuffled_by_id(ids: &[String], rows: &[usize], seed: u64) -> Vec<usize> {
    let mut rows = rows.to_vec();
    rows.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    rows
}

/// k-fold cross-validated ridge regression, folds grouped by (unique) id.
pub fn ridge_cv(ids: &[String], x: &Array2<f64>, y: &[f64], config: &CvConfig) -> Result<CvResult> {
    let n = x.nrows();
    let k = config.folds;
    if ids.len() != n || y.len() != n {
        return Err(Error::Shape(format!(
            "{} ids, {} rows, {} targets",
            ids.len(),
            n,
            y.len()
        )));
    }
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("need 2 <= folds <= rows, got k={k}, n={n}")));
    }
    if config.lambda_grid.is_empty() || config.lambda_grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidArgument("lambda grid must be nonempty and strictly positive".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge inputs".into()));
    }
    if ids.iter().collect::<BTreeSet<_>>().len() != n {
        return Err(Error::InvalidArgument("ridge_cv ids must be unique".into()));
    }

    let all: Vec<usize> = (0..n).collect();
    let mut fold_of = vec![0; n];
    for (pos, &row) in shuffled_by_id(ids, &all, config.seed).iter().enumerate() {
        fold_of[row] = pos % k;
    }

    let mut predictions = vec![0.0; n];
    let mut fold_lambdas = Vec::with_capacity(k);
    for fold in 0..k {
        let train: Vec<usize> = all.iter().copied().filter(|&i| fold_of[i] != fold).collect();
        let lambda = select_lambda(ids, x, y, &train, config, fold)?;
        let model = FittedRidge::fit(x, y, &train, lambda)?;
        for i in all.iter().copied().filter(|&i| fold_of[i] == fold) {
            predictions[i] = model.predict(x.row(i));
        }
        fold_lambdas.push(lambda);
    }

    let mse = predictions.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64;
    Ok(CvResult {
        pearson: pearson(&predictions, y)?,
        predictions,
        mse,
        fold_of,
        fold_lambdas,
    })
}

/// Pick lambda on a seeded 90/10 split of the training rows.
fn select_lambda(
    ids: &[String],
    x: &Array2<f64>,
    y: &[f64],
    train: &[usize],
    config: &CvConfig,
    fold: usize,
) -> Result<f64> {
    if config.lambda_grid.len() == 1 || train.len() < 2 {
        return Ok(config.lambda_grid[0]);
    }
    let order = shuffled_by_id(ids, train, config.seed.wrapping_add(1 + fold as u64));
    let n_val = ((train.len() as f64 * config.inner_val_fraction).round() as usize).clamp(1, train.len() - 1);
    let (inner_val, inner_train) = order.split_at(n_val);
    let mut best = (f64::INFINITY, config.lambda_grid[0]);
    for &lambda in &config.lambda_grid {
        let m = FittedRidge::fit(x, y, inner_train, lambda)?;
        let err = inner_val
            .iter()
            .map(|&i| (m.predict(x.row(i)) - y[i]).powi(2))
            .sum::<f64>()
            / n_val as f64;
        if err < best.0 {
            best = (err, lambda);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cv: CvConfig,
    /// Model whose squared errors every other model is tested against.
    pub baseline: Option<String>,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cv: CvConfig::default(),
            baseline: None,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub outcome: String,
    pub n_persons: usize,
    pub r: f64,
    pub degenerate: bool,
    pub mse: f64,
    /// Paired t-test p-value on squared errors against the baseline.
    pub p_vs_baseline: Option<f64>,
    /// Lower error than the baseline with p below alpha.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline: Option<String>,
    pub models: Vec<String>,
    pub outcomes: Vec<String>,
    pub rows: Vec<EvalRow>,
}

/// Person-level embeddings (sorted by person) from a store keyed by segment id.
pub fn person_embeddings(
    store: &EmbeddingStore,
    segment_person: &HashMap<String, String>,
) -> Result<Vec<PersonEmbedding>> {
    let mut persons = Vec::with_capacity(store.len());
    for id in store.ids() {
        let pid = segment_person
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("segment {id:?} has no person")))?;
        persons.push(pid.clone());
    }
    aggregate_person(&group_by_person(&persons, store.to_f64().view())?)
}

/// Cross-validated r/mse for every model x outcome, with significance markers
/// against `config.baseline`.
pub fn evaluate_models(
    models: &[(String, EmbeddingStore)],
    segment_person: &HashMap<String, String>,
    outcomes: &[PersonRecord],
    config: &EvalConfig,
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to evaluate".into()));
    }
    if let Some(b) = &config.baseline {
        if !models.iter().any(|(name, _)| name == b) {
            return Err(Error::InvalidArgument(format!("baseline {b:?} is not among the models")));
        }
    }
    let mut per_model = Vec::with_capacity(models.len());
    for (name, store) in models {
        let pe = person_embeddings(store, segment_person)?;
        if let Some((_, first)) = per_model.first() {
            let first: &Vec<PersonEmbedding> = first;
            let same = pe.len() == first.len() && pe.iter().zip(first).all(|(a, b)| a.person_id == b.person_id);
            if !same {
                return Err(Error::InvalidArgument(format!(
                    "model {name} covers a different person set"
                )));
            }
        }
        per_model.push((name.clone(), pe));
    }
    let persons: Vec<String> = per_model[0].1.iter().map(|p| p.person_id.clone()).collect();
    let known: BTreeSet<&str> = persons.iter().map(String::as_str).collect();
    if let Some(p) = outcomes.iter().find(|p| !known.contains(p.person_id.as_str())) {
        return Err(Error::InvalidArgument(format!(
            "person {:?} has outcomes but no segments",
            p.person_id
        )));
    }
    let outcome_names: BTreeSet<String> = outcomes
        .iter()
        .flat_map(|p| p.outcome_scores.keys().cloned())
        .collect();
    let by_person: HashMap<&str, &PersonRecord> =
        outcomes.iter().map(|p| (p.person_id.as_str(), p)).collect();

    let mut rows = Vec::new();
    for outcome in &outcome_names {
        // persons with a value for this outcome, in sorted person order
        let members: Vec<usize> = persons
            .iter()
            .enumerate()
            .filter(|(_, pid)| {
                by_person
                    .get(pid.as_str())
                    .is_some_and(|p| p.outcome_scores.contains_key(outcome))
            })
            .map(|(i, _)| i)
            .collect();
        let ids: Vec<String> = members.iter().map(|&i| persons[i].clone()).collect();
        let y: Vec<f64> = ids.iter().map(|pid| by_person[pid.as_str()].outcome_scores[outcome]).collect();

        let mut results = Vec::with_capacity(per_model.len());
        for (_, pe) in &per_model {
            let dim = pe[0].vector.len();
            let mut x = Array2::zeros((members.len(), dim));
            for (r, &i) in members.iter().enumerate() {
                x.row_mut(r).assign(&pe[i].vector);
            }
            results.push(ridge_cv(&ids, &x, &y, &config.cv)?);
        }
        let baseline_errors = config.baseline.as_ref().map(|b| {
            let idx = per_model.iter().position(|(n, _)| n == b).expect("checked above");
            results[idx].squared_errors(&y)
        });
        for ((name, _), res) in per_model.iter().zip(&results) {
            let errors = res.squared_errors(&y);
            let mut row = EvalRow {
                model: name.clone(),
                outcome: outcome.clone(),
                n_persons: y.len(),
                r: res.pearson.r,
                degenerate: res.pearson.degenerate,
                mse: res.mse,
                p_vs_baseline: None,
                significant: false,
            };
            if let (Some(base), Some(b_err)) = (&config.baseline, &baseline_errors) {
                if name != base {
                    let tt = paired_ttest(&errors, b_err)?;
                    row.p_vs_baseline = Some(tt.p);
                    row.significant = !tt.degenerate && tt.p < config.alpha && tt.t < 0.0;
                }
            }
            rows.push(row);
        }
    }
    Ok(EvalReport {
        baseline: config.baseline.clone(),
        models: per_model.into_iter().map(|(n, _)| n).collect(),
        outcomes: outcome_names.into_iter().collect(),
        rows,
    })
}

impl EvalReport {
    pub fn row(&self, model: &str, outcome: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.model == model && r.outcome == outcome)
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }

    /// Model x outcome table with `r` and `mse` columns; a dagger marks a
    /// significant improvement over the baseline.
    pub fn render_table(&self) -> String {
        let name_w = self.models.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:name_w$}", "model");
        for o in &self.outcomes {
            let _ = write!(out, " | {:>9} {:>9}", format!("{o} r"), "mse");
        }
        out.push('\n');
        out.push_str(&"-".repeat(out.len() - 1));
        out.push('\n');
        for m in &self.models {
            let _ = write!(out, "{m:name_w$}");
            for o in &self.outcomes {
                match self.row(m, o) {
                    Some(r) => {
                        let mark = if r.significant { "\u{2020}" } else { " " };
                        let _ = write!(out, " | {:>8.3}{mark} {:>9.4}", r.r, r.mse);
                    }
                    None => {
                        let _ = write!(out, " | {:>9} {:>9}", "-", "-");
                    }
                }
            }
            out.push('\n');
        }
        if let Some(b) = &self.baseline {
            let _ = writeln!(out, "\u{2020} p < .05 lower squared error than {b} (paired t-test)");
        }
        out
    }
}
