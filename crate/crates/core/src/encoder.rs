//! Student encoder: backbone -> mean pool -> dense head [-> tanh projection head].
//!
//! Checkpoints are directories holding one embedding-store file per parameter
//! tensor (row ids are row indices) and a `model.json` manifest naming each
//! tensor with its shape, plus the target mode and tanh scope.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{read_store, write_store, EmbeddingStore};
use crate::error::{Error, Result};
use crate::psych::N_DIMS;
use crate::targets::{TargetKind, TargetMode};

/// Anything that turns an acoustic feature matrix (frames x feature_dim) into
/// a hidden-state sequence (L x d_model) and can backpropagate through itself.
pub trait Backbone: Clone {
    /// Identifier written to checkpoints.
    fn kind(&self) -> &'static str;
    fn feature_dim(&self) -> usize;
    fn d_model(&self) -> usize;

    /// `context` carries optional transcript token ids; backbones without a
    /// text-conditioned decoder ignore it.
    fn forward(&self, features: ArrayView2<f64>, context: Option<&[u32]>) -> Result<Array2<f64>>;

    /// Accumulate parameter gradients into `grads` (same order as
    /// [`Backbone::parameters`]) given d loss / d hidden.
    fn backward(
        &self,
        features: ArrayView2<f64>,
        hidden: ArrayView2<f64>,
        grad_hidden: ArrayView2<f64>,
        grads: &mut [Array2<f64>],
    );

    fn parameters(&self) -> Vec<(String, &Array2<f64>)>;
    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>>;
    fn init(&mut self, rng: &mut ChaCha8Rng);
}

/// Frame-wise `tanh(x W)`; frames are mapped independently.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBackbone {
    pub weight: Array2<f64>,
}

impl SyntheticBackbone {
    pub fn new(feature_dim: usize, d_model: usize) -> Self {
        Self {
            weight: Array2::zeros((feature_dim, d_model)),
        }
    }
}

impl Backbone for SyntheticBackbone {
    fn kind(&self) -> &'static str {
        "synthetic"
    }

    fn feature_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn d_model(&self) -> usize {
        self.weight.ncols()
    }

    fn forward(&self, features: ArrayView2<f64>, _context: Option<&[u32]>) -> Result<Array2<f64>> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "features have {} columns, backbone expects {}",
                features.ncols(),
                self.feature_dim()
            )));
        }
        Ok(features.dot(&self.weight).mapv(f64::tanh))
    }

    fn backward(
        &self,
        features: ArrayView2<f64>,
        hidden: ArrayView2<f64>,
        grad_hidden: ArrayView2<f64>,
        grads: &mut [Array2<f64>],
    ) {
        let pre = &grad_hidden * &hidden.mapv(|h| 1.0 - h * h);
        grads[0] += &features.t().dot(&pre);
    }

    fn parameters(&self) -> Vec<(String, &Array2<f64>)> {
        vec![("backbone.weight".into(), &self.weight)]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weight]
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (self.feature_dim() as f64).sqrt();
        fill_uniform(&mut self.weight, bound, rng);
    }
}

/// Values are drawn as f32 so parameters survive a checkpoint round trip exactly.
fn fill_uniform(m: &mut Array2<f64>, bound: f64, rng: &mut ChaCha8Rng) {
    let bound = bound as f32;
    m.mapv_inplace(|_| f64::from(rng.random_range(-bound..=bound)));
}

/// Which coordinates of the projection-mode output pass through tanh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TanhScope {
    /// Only the ten projected psych coordinates.
    #[default]
    Psych,
    /// Every output coordinate.
    All,
}

pub fn mean_pool(hidden: ArrayView2<f64>) -> Result<Array1<f64>> {
    hidden
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::InvalidArgument("cannot pool an empty sequence".into()))
}

/// `W e + b`.
pub fn dense_pool(e: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    if w.ncols() != e.len() || w.nrows() != b.len() {
        return Err(Error::Shape(format!(
            "dense weight {:?}, input {}, bias {}",
            w.dim(),
            e.len(),
            b.len()
        )));
    }
    Ok(w.dot(&e) + b)
}

/// `tanh(P^T e)`.
pub fn project_psych(e: ArrayView1<f64>, p: ArrayView2<f64>) -> Result<Array1<f64>> {
    if p.nrows() != e.len() || p.ncols() != N_DIMS {
        return Err(Error::Shape(format!(
            "projection {:?} for input of length {}",
            p.dim(),
            e.len()
        )));
    }
    Ok(p.t().dot(&e).mapv(f64::tanh))
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub hidden: Array2<f64>,
    pub pooled: Array1<f64>,
    pub output: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel<B: Backbone = SyntheticBackbone> {
    pub backbone: B,
    pub dense_weight: Array2<f64>,
    /// Stored as a 1 x d_model row.
    pub dense_bias: Array2<f64>,
    pub projection: Option<Array2<f64>>,
    pub mode: TargetMode,
    pub tanh_scope: TanhScope,
}

pub type SyntheticStudent = StudentModel<SyntheticBackbone>;

impl<B: Backbone> StudentModel<B> {
    /// All head parameters start at zero; call [`StudentModel::init_parameters`].
    pub fn new(backbone: B, mode: TargetMode, tanh_scope: TanhScope) -> Self {
        let d = backbone.d_model();
        Self {
            backbone,
            dense_weight: Array2::zeros((d, d)),
            dense_bias: Array2::zeros((1, d)),
            projection: (mode.kind == TargetKind::Projection).then(|| Array2::zeros((d, N_DIMS))),
            mode,
            tanh_scope,
        }
    }

    pub fn d_model(&self) -> usize {
        self.backbone.d_model()
    }

    pub fn output_dim(&self) -> usize {
        self.d_model() + if self.projection.is_some() { N_DIMS } else { 0 }
    }

    pub fn init_parameters(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.backbone.init(&mut rng);
        let bound = 1.0 / (self.d_model() as f64).sqrt();
        fill_uniform(&mut self.dense_weight, bound, &mut rng);
        self.dense_bias.fill(0.0);
        if let Some(p) = self.projection.as_mut() {
            fill_uniform(p, bound, &mut rng);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wants_projection = self.mode.kind == TargetKind::Projection;
        if wants_projection != self.projection.is_some() {
            return Err(Error::InvalidArgument(
                "projection head must be present exactly in projection mode".into(),
            ));
        }
        for (name, p) in self.parameters() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, features: ArrayView2<f64>) -> Result<ForwardCache> {
        let hidden = self.backbone.forward(features, None)?;
        if hidden.nrows() == 0 {
            return Err(Error::InvalidArgument("backbone returned no hidden states".into()));
        }
        let pooled = mean_pool(hidden.view())?;
        let e = dense_pool(pooled.view(), self.dense_weight.view(), self.dense_bias.row(0))?;
        let output = match &self.projection {
            None => e,
            Some(p) => match self.tanh_scope {
                TanhScope::Psych => concatenate![Axis(0), e, project_psych(e.view(), p.view())?],
                TanhScope::All => {
                    concatenate![Axis(0), e, p.t().dot(&e)].mapv(f64::tanh)
                }
            },
        };
        Ok(ForwardCache {
            hidden,
            pooled,
            output,
        })
    }

    pub fn encode(&self, features: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(features)?.output)
    }

    /// Encode a batch of feature matrices into an N x output_dim matrix.
    pub fn encode_batch<'a, I>(&self, batch: I) -> Result<Array2<f64>>
    where
        I: IntoIterator<Item = ArrayView2<'a, f64>>,
    {
        let rows: Vec<Array1<f64>> = batch
            .into_iter()
            .map(|f| self.encode(f))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), self.output_dim()));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        Ok(out)
    }

    /// Zeroed gradient buffers matching [`StudentModel::parameters`].
    pub fn zero_grads(&self) -> Vec<Array2<f64>> {
        self.parameters()
            .into_iter()
            .map(|(_, p)| Array2::zeros(p.dim()))
            .collect()
    }

    /// Accumulate d loss / d params into `grads` for one sample.
    pub fn backward(
        &self,
        features: ArrayView2<f64>,
        cache: &ForwardCache,
        grad_output: ArrayView1<f64>,
        grads: &mut [Array2<f64>],
    ) {
        let d = self.d_model();
        let n_backbone = self.backbone.parameters().len();
        let (backbone_grads, head_grads) = grads.split_at_mut(n_backbone);

        let mut grad_e = grad_output.slice(s![..d]).to_owned();
        if let Some(p) = &self.projection {
            let (grad_e_direct, grad_u) = match self.tanh_scope {
                TanhScope::Psych => {
                    let proj = cache.output.slice(s![d..]);
                    let gu = &grad_output.slice(s![d..]) * &proj.mapv(|y| 1.0 - y * y);
                    (grad_e.clone(), gu)
                }
                TanhScope::All => {
                    let gpre = &grad_output * &cache.output.mapv(|y| 1.0 - y * y);
                    (gpre.slice(s![..d]).to_owned(), gpre.slice(s![d..]).to_owned())
                }
            };
            // output[d..] depends on e = output of the dense head, recovered here
            let e = self.dense_output(cache);
            head_grads[2] += &outer(e.view(), grad_u.view());
            grad_e = grad_e_direct + p.dot(&grad_u);
        }

        head_grads[0] += &outer(grad_e.view(), cache.pooled.view());
        head_grads[1]
            .row_mut(0)
            .zip_mut_with(&grad_e, |g, v| *g += v);

        let grad_pooled = self.dense_weight.t().dot(&grad_e);
        let l = cache.hidden.nrows() as f64;
        let grad_hidden = Array2::from_shape_fn(cache.hidden.dim(), |(_, j)| grad_pooled[j] / l);
        self.backbone
            .backward(features, cache.hidden.view(), grad_hidden.view(), backbone_grads);
    }

    fn dense_output(&self, cache: &ForwardCache) -> Array1<f64> {
        self.dense_weight.dot(&cache.pooled) + self.dense_bias.row(0)
    }

    pub fn parameters(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = self.backbone.parameters();
        out.push(("dense.weight".into(), &self.dense_weight));
        out.push(("dense.bias".into(), &self.dense_bias));
        if let Some(p) = &self.projection {
            out.push(("projection.weight".into(), p));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = self.backbone.parameters_mut();
        out.push(&mut self.dense_weight);
        out.push(&mut self.dense_bias);
        if let Some(p) = self.projection.as_mut() {
            out.push(p);
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = Vec::new();
        for (name, p) in self.parameters() {
            let file = format!("{name}.bin");
            write_store(&EmbeddingStore::indexed(p), &dir.join(&file))?;
            tensors.push(TensorEntry {
                name,
                rows: p.nrows(),
                cols: p.ncols(),
                file,
            });
        }
        let manifest = CheckpointManifest {
            backbone: self.backbone.kind().to_string(),
            feature_dim: self.backbone.feature_dim(),
            d_model: self.d_model(),
            mode: self.mode,
            tanh_scope: self.tanh_scope,
            tensors,
        };
        let path = dir.join(CHECKPOINT_MANIFEST);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Overwrite this model's parameters from a checkpoint with identical shapes.
    pub fn load_parameters(&mut self, dir: &Path) -> Result<()> {
        let manifest = CheckpointManifest::read(dir)?;
        if manifest.mode != self.mode || manifest.backbone != self.backbone.kind() {
            return Err(Error::Shape(format!(
                "checkpoint is {} / {:?}, model is {} / {:?}",
                manifest.backbone,
                manifest.mode.kind,
                self.backbone.kind(),
                self.mode.kind
            )));
        }
        self.tanh_scope = manifest.tanh_scope;
        let names: Vec<String> = self.parameters().into_iter().map(|(n, _)| n).collect();
        if names.len() != manifest.tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model has {}",
                manifest.tensors.len(),
                names.len()
            )));
        }
        let params = self.parameters_mut();
        for ((name, entry), param) in names.iter().zip(&manifest.tensors).zip(params) {
            if *name != entry.name {
                return Err(Error::Shape(format!("tensor {} where {name} expected", entry.name)));
            }
            let store = read_store(&dir.join(&entry.file))?;
            let values = store.to_f64();
            if values.dim() != param.dim() || values.dim() != (entry.rows, entry.cols) {
                return Err(Error::Shape(format!(
                    "tensor {name}: file {:?}, manifest ({}, {}), model {:?}",
                    values.dim(),
                    entry.rows,
                    entry.cols,
                    param.dim()
                )));
            }
            *param = values;
        }
        self.validate()
    }
}

impl SyntheticStudent {
    pub fn synthetic(feature_dim: usize, d_model: usize, mode: TargetMode, tanh_scope: TanhScope) -> Self {
        Self::new(SyntheticBackbone::new(feature_dim, d_model), mode, tanh_scope)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = CheckpointManifest::read(dir)?;
        if manifest.backbone != "synthetic" {
            return Err(Error::InvalidArgument(format!(
                "checkpoint backbone {:?} has no in-repo loader",
                manifest.backbone
            )));
        }
        let mut model = Self::synthetic(
            manifest.feature_dim,
            manifest.d_model,
            manifest.mode,
            manifest.tanh_scope,
        );
        model.load_parameters(dir)?;
        Ok(model)
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

pub const CHECKPOINT_MANIFEST: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub backbone: String,
    pub feature_dim: usize,
    pub d_model: usize,
    pub mode: TargetMode,
    pub tanh_scope: TanhScope,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(CHECKPOINT_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{cs_loss, nce_loss};
    use ndarray::array;

    /// Returns constant hidden rows regardless of input.
    #[derive(Clone)]
    struct ConstBackbone {
        row: Array1<f64>,
        dummy: Array2<f64>,
    }

    impl Backbone for ConstBackbone {
        fn kind(&self) -> &'static str {
            "const"
        }
        fn feature_dim(&self) -> usize {
            1
        }
        fn d_model(&self) -> usize {
            self.row.len()
        }
        fn forward(&self, f: ArrayView2<f64>, _: Option<&[u32]>) -> Result<Array2<f64>> {
            Ok(Array2::from_shape_fn((f.nrows(), self.row.len()), |(_, j)| self.row[j]))
        }
        fn backward(&self, _: ArrayView2<f64>, _: ArrayView2<f64>, _: ArrayView2<f64>, _: &mut [Array2<f64>]) {}
        fn parameters(&self) -> Vec<(String, &Array2<f64>)> {
            vec![("const.dummy".into(), &self.dummy)]
        }
        fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
            vec![&mut self.dummy]
        }
        fn init(&mut self, _: &mut ChaCha8Rng) {}
    }

    fn const_model(row: Array1<f64>, mode: TargetMode) -> StudentModel<ConstBackbone> {
        let d = row.len();
        let mut m = StudentModel::new(
            ConstBackbone {
                row,
                dummy: Array2::zeros((1, 1)),
            },
            mode,
            TanhScope::Psych,
        );
        m.dense_weight = Array2::eye(d);
        m
    }

    #[test]
    fn mean_pool_examples() {
        assert_eq!(mean_pool(array![[1.0, 3.0], [3.0, 5.0]].view()).unwrap(), array![2.0, 4.0]);
        assert_eq!(mean_pool(array![[7.0, -1.0]].view()).unwrap(), array![7.0, -1.0]);
        assert_eq!(mean_pool(Array2::from_elem((4, 3), 2.5).view()).unwrap(), array![2.5, 2.5, 2.5]);
        assert!(mean_pool(Array2::<f64>::zeros((0, 3)).view()).is_err());
    }

    #[test]
    fn dense_pool_examples() {
        let e = array![0.5, -2.0];
        let eye = Array2::eye(2);
        assert_eq!(dense_pool(e.view(), eye.view(), array![0.0, 0.0].view()).unwrap(), e);
        let c = array![3.0, 4.0];
        assert_eq!(dense_pool(e.view(), Array2::zeros((2, 2)).view(), c.view()).unwrap(), c);
        let w = array![[0.1, 0.2], [0.3, 0.4]];
        let b = array![1.0, -1.0];
        let out = dense_pool(array![1.0, 0.0].view(), w.view(), b.view()).unwrap();
        assert_eq!(out, &w.column(0) + &b);
        assert!(dense_pool(e.view(), Array2::zeros((2, 3)).view(), b.view()).is_err());
    }

    #[test]
    fn project_psych_examples() {
        let e = array![1.0, 2.0, 3.0];
        assert_eq!(project_psych(e.view(), Array2::zeros((3, 10)).view()).unwrap(), Array1::<f64>::zeros(10));
        assert_eq!(
            project_psych(Array1::zeros(3).view(), Array2::from_elem((3, 10), 0.7).view()).unwrap(),
            Array1::<f64>::zeros(10)
        );
        let out = project_psych(e.view(), Array2::from_elem((3, 10), 2.0).view()).unwrap();
        assert!(out.iter().all(|&v| v > 0.999 && v <= 1.0));
        let out = project_psych(array![1.0].view(), array![[0.5; 10]].view()).unwrap();
        assert!(out.iter().all(|&v| v < 1.0));
        assert!(project_psych(e.view(), Array2::zeros((3, 9)).view()).is_err());
    }

    #[test]
    fn encode_composition() {
        let c = array![0.3, -0.4, 1.2];
        let feats = Array2::zeros((5, 1));
        let m = const_model(c.clone(), TargetMode::semantic());
        assert_eq!(m.encode(feats.view()).unwrap(), c);

        let m = const_model(c.clone(), TargetMode::projection());
        let out = m.encode(feats.view()).unwrap();
        assert_eq!(out.len(), 3 + N_DIMS);
        assert_eq!(out.slice(s![..3]), c);
        assert!(out.slice(s![3..]).iter().all(|&v| v == 0.0));
        assert_eq!(m.output_dim(), 13);
    }

    #[test]
    fn init_is_seeded() {
        let mk = || SyntheticStudent::synthetic(4, 6, TargetMode::projection(), TanhScope::Psych);
        let (mut a, mut b, mut c) = (mk(), mk(), mk());
        a.init_parameters(5);
        b.init_parameters(5);
        c.init_parameters(6);
        assert_eq!(a, b);
        assert_ne!(a.dense_weight, c.dense_weight);
        assert!(a.dense_bias.iter().all(|&v| v == 0.0));
        let bound = 1.0 / 6f64.sqrt() + 1e-7;
        assert!(a.dense_weight.iter().all(|v| v.abs() <= bound));
        assert!(a.projection.as_ref().unwrap().iter().any(|&v| v != 0.0));
        a.validate().unwrap();
    }

    #[test]
    fn projection_coordinates_stay_inside_unit_interval() {
        let mut m = SyntheticStudent::synthetic(3, 5, TargetMode::projection(), TanhScope::Psych);
        m.init_parameters(1);
        m.projection.as_mut().unwrap().mapv_inplace(|v| v * 50.0);
        let feats = Array2::from_shape_fn((4, 3), |(i, j)| (i + 2 * j) as f64 - 3.0);
        let out = m.encode(feats.view()).unwrap();
        assert!(out.slice(s![5..]).iter().all(|v| v.abs() <= 1.0));
        assert!(out.slice(s![5..]).iter().any(|v| v.abs() > 0.99));
    }

    fn fd_model_check(mut model: SyntheticStudent, loss_nce: bool) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats: Vec<Array2<f64>> = (0..4)
            .map(|_| Array2::from_shape_fn((3, model.backbone.feature_dim()), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let targets = Array2::from_shape_fn((4, model.output_dim()), |_| rng.random_range(-1.0..1.0));
        let loss_of = |m: &SyntheticStudent| {
            let a = m.encode_batch(feats.iter().map(|f| f.view())).unwrap();
            if loss_nce {
                nce_loss(a.view(), targets.view(), 0.1).unwrap()
            } else {
                cs_loss(a.view(), targets.view()).unwrap()
            }
        };
        let res = loss_of(&model);
        let mut grads = model.zero_grads();
        for (i, f) in feats.iter().enumerate() {
            let cache = model.forward(f.view()).unwrap();
            model.backward(f.view(), &cache, res.grad.row(i), &mut grads);
        }
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for (k, g) in grads.iter().enumerate() {
            for idx in ndarray::indices(g.dim()) {
                let orig = model.parameters_mut()[k][idx];
                model.parameters_mut()[k][idx] = orig + eps;
                let plus = loss_of(&model).value;
                model.parameters_mut()[k][idx] = orig - eps;
                let minus = loss_of(&model).value;
                model.parameters_mut()[k][idx] = orig;
                let fd = (plus - minus) / (2.0 * eps);
                let rel = (g[idx] - fd).abs() / g[idx].abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn encode_loss_gradients_match_finite_differences() {
        for (mode, scope) in [
            (TargetMode::semantic(), TanhScope::Psych),
            (TargetMode::projection(), TanhScope::Psych),
            (TargetMode::projection(), TanhScope::All),
        ] {
            let mut m = SyntheticStudent::synthetic(3, 4, mode, scope);
            m.init_parameters(2);
            m.dense_bias.fill(0.1);
            for nce in [false, true] {
                let err = fd_model_check(m.clone(), nce);
                assert!(err < 1e-4, "{mode:?} {scope:?} nce={nce}: {err}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = SyntheticStudent::synthetic(3, 4, TargetMode::projection(), TanhScope::All);
        m.init_parameters(8);
        m.save(dir.path()).unwrap();
        let back = SyntheticStudent::load(dir.path()).unwrap();
        assert_eq!(back, m);

        let mut other = SyntheticStudent::synthetic(3, 4, TargetMode::semantic(), TanhScope::Psych);
        assert!(other.load_parameters(dir.path()).is_err());
    }
}
