//! Scenario generators: maps `(z, x) -> y` from latent noise and market
//! context to a next-period return vector, parameterized by a flat vector
//! `theta` that the adversary perturbs.
//!
//! Two families are supported. The affine-Gaussian family
//! `y = A xbar + B z + c` is linear in both inputs and parameters, which makes
//! inner minimizations concave and enables closed-form cross-checks. The
//! tanh-MLP family `y = W2 tanh(W1 [xbar; z] + b1) + b2` is a nonlinear
//! stand-in for richer simulators.
//!
//! The flat layout is fixed and documented per family so that perturbations,
//! masks, and serialized parameters mean the same thing everywhere:
//!
//! - affine: `[A row-major (d x F) | B row-major (d x d_z) | c (d)]`
//! - mlp:    `[W1 row-major (h x (F+d_z)) | b1 (h) | W2 row-major (d x h) | b2 (d)]`

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("dimension {axis} must be at least 1")]
    ZeroDim { axis: &'static str },
    #[error("shape mismatch on {axis}: expected {expected}, got {got}")]
    Shape { axis: &'static str, expected: usize, got: usize },
    #[error("theta has {got} entries but {kind} with these dims needs {expected}")]
    ThetaLength { kind: String, expected: usize, got: usize },
    #[error("latent batch size must be at least 1")]
    EmptyBatch,
    #[error("generator file: {0}")]
    Io(#[from] std::io::Error),
    #[error("generator JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Input/output sizes shared by both families.
///
/// `context` is the flattened context length (lookback times assets),
/// `latent` the noise dimension, `output` the number of assets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorDims {
    pub context: usize,
    pub latent: usize,
    pub output: usize,
}

impl GeneratorDims {
    pub fn new(context: usize, latent: usize, output: usize) -> Result<Self, GeneratorError> {
        if context == 0 {
            return Err(GeneratorError::ZeroDim { axis: "context" });
        }
        if latent == 0 {
            return Err(GeneratorError::ZeroDim { axis: "latent" });
        }
        if output == 0 {
            return Err(GeneratorError::ZeroDim { axis: "output" });
        }
        Ok(GeneratorDims { context, latent, output })
    }
}

/// Which parametric family a [`GeneratorSpec`] instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GeneratorKind {
    AffineGaussian,
    MlpTanh { hidden: usize },
}

impl GeneratorKind {
    fn name(&self) -> String {
        match self {
            GeneratorKind::AffineGaussian => "affine_gaussian".to_string(),
            GeneratorKind::MlpTanh { hidden } => format!("mlp_tanh(hidden={hidden})"),
        }
    }
}

/// Number of flat parameters for a family at given dims.
pub fn param_count(kind: GeneratorKind, dims: GeneratorDims) -> usize {
    let (f, dz, d) = (dims.context, dims.latent, dims.output);
    match kind {
        GeneratorKind::AffineGaussian => d * f + d * dz + d,
        GeneratorKind::MlpTanh { hidden } => {
            let m = f + dz;
            hidden * m + hidden + d * hidden + d
        }
    }
}

/// Flat-slice ranges of the affine blocks inside `theta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineLayout {
    pub a: Range<usize>,
    pub b: Range<usize>,
    pub c: Range<usize>,
}

impl AffineLayout {
    pub fn of(dims: GeneratorDims) -> Self {
        let (f, dz, d) = (dims.context, dims.latent, dims.output);
        let a_len = d * f;
        let b_len = d * dz;
        AffineLayout {
            a: 0..a_len,
            b: a_len..a_len + b_len,
            c: a_len + b_len..a_len + b_len + d,
        }
    }
}

/// Flat-slice ranges of the MLP blocks inside `theta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpLayout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

impl MlpLayout {
    pub fn of(dims: GeneratorDims, hidden: usize) -> Self {
        let (f, dz, d) = (dims.context, dims.latent, dims.output);
        let m = f + dz;
        let w1_len = hidden * m;
        let w2_len = d * hidden;
        MlpLayout {
            w1: 0..w1_len,
            b1: w1_len..w1_len + hidden,
            w2: w1_len + hidden..w1_len + hidden + w2_len,
            b2: w1_len + hidden + w2_len..w1_len + hidden + w2_len + d,
        }
    }
}

/// A generator: family tag, dims, and the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec<T> {
    pub kind: GeneratorKind,
    pub dims: GeneratorDims,
    pub theta: Vec<T>,
}

/// Structured view of affine parameters; `flatten`/`unflatten` are exact
/// inverses of each other.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGaussianParams<T> {
    pub dims: GeneratorDims,
    /// `d x context`, row-major.
    pub a: Vec<T>,
    /// `d x latent`, row-major.
    pub b: Vec<T>,
    /// length `d`.
    pub c: Vec<T>,
}

impl<T: Scalar> AffineGaussianParams<T> {
    pub fn new(dims: GeneratorDims, a: Vec<T>, b: Vec<T>, c: Vec<T>) -> Result<Self, GeneratorError> {
        let (f, dz, d) = (dims.context, dims.latent, dims.output);
        if a.len() != d * f {
            return Err(GeneratorError::Shape { axis: "a", expected: d * f, got: a.len() });
        }
        if b.len() != d * dz {
            return Err(GeneratorError::Shape { axis: "b", expected: d * dz, got: b.len() });
        }
        if c.len() != d {
            return Err(GeneratorError::Shape { axis: "c", expected: d, got: c.len() });
        }
        Ok(AffineGaussianParams { dims, a, b, c })
    }

    pub fn flatten(&self) -> GeneratorSpec<T> {
        let mut theta = Vec::with_capacity(self.a.len() + self.b.len() + self.c.len());
        theta.extend_from_slice(&self.a);
        theta.extend_from_slice(&self.b);
        theta.extend_from_slice(&self.c);
        GeneratorSpec { kind: GeneratorKind::AffineGaussian, dims: self.dims, theta }
    }

    pub fn unflatten(spec: &GeneratorSpec<T>) -> Result<Self, GeneratorError> {
        spec.validate()?;
        if spec.kind != GeneratorKind::AffineGaussian {
            return Err(GeneratorError::ThetaLength {
                kind: spec.kind.name(),
                expected: param_count(GeneratorKind::AffineGaussian, spec.dims),
                got: spec.theta.len(),
            });
        }
        let layout = AffineLayout::of(spec.dims);
        Ok(AffineGaussianParams {
            dims: spec.dims,
            a: spec.theta[layout.a].to_vec(),
            b: spec.theta[layout.b].to_vec(),
            c: spec.theta[layout.c].to_vec(),
        })
    }
}

/// Structured view of MLP parameters; `flatten`/`unflatten` are exact inverses.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpTanhParams<T> {
    pub dims: GeneratorDims,
    pub hidden: usize,
    /// `hidden x (context + latent)`, row-major.
    pub w1: Vec<T>,
    /// length `hidden`.
    pub b1: Vec<T>,
    /// `d x hidden`, row-major.
    pub w2: Vec<T>,
    /// length `d`.
    pub b2: Vec<T>,
}

impl<T: Scalar> MlpTanhParams<T> {
    pub fn new(
        dims: GeneratorDims,
        hidden: usize,
        w1: Vec<T>,
        b1: Vec<T>,
        w2: Vec<T>,
        b2: Vec<T>,
    ) -> Result<Self, GeneratorError> {
        if hidden == 0 {
            return Err(GeneratorError::ZeroDim { axis: "hidden" });
        }
        let m = dims.context + dims.latent;
        let d = dims.output;
        if w1.len() != hidden * m {
            return Err(GeneratorError::Shape { axis: "w1", expected: hidden * m, got: w1.len() });
        }
        if b1.len() != hidden {
            return Err(GeneratorError::Shape { axis: "b1", expected: hidden, got: b1.len() });
        }
        if w2.len() != d * hidden {
            return Err(GeneratorError::Shape { axis: "w2", expected: d * hidden, got: w2.len() });
        }
        if b2.len() != d {
            return Err(GeneratorError::Shape { axis: "b2", expected: d, got: b2.len() });
        }
        Ok(MlpTanhParams { dims, hidden, w1, b1, w2, b2 })
    }

    pub fn flatten(&self) -> GeneratorSpec<T> {
        let mut theta =
            Vec::with_capacity(self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len());
        theta.extend_from_slice(&self.w1);
        theta.extend_from_slice(&self.b1);
        theta.extend_from_slice(&self.w2);
        theta.extend_from_slice(&self.b2);
        GeneratorSpec {
            kind: GeneratorKind::MlpTanh { hidden: self.hidden },
            dims: self.dims,
            theta,
        }
    }

    pub fn unflatten(spec: &GeneratorSpec<T>) -> Result<Self, GeneratorError> {
        spec.validate()?;
        let hidden = match spec.kind {
            GeneratorKind::MlpTanh { hidden } => hidden,
            GeneratorKind::AffineGaussian => {
                return Err(GeneratorError::ThetaLength {
                    kind: spec.kind.name(),
                    expected: 0,
                    got: spec.theta.len(),
                })
            }
        };
        let layout = MlpLayout::of(spec.dims, hidden);
        Ok(MlpTanhParams {
            dims: spec.dims,
            hidden,
            w1: spec.theta[layout.w1].to_vec(),
            b1: spec.theta[layout.b1].to_vec(),
            w2: spec.theta[layout.w2].to_vec(),
            b2: spec.theta[layout.b2].to_vec(),
        })
    }
}

/// Scratch buffers reused across forward/VJP calls so the solver loops stay
/// allocation-free. Sized for the generator that created it.
#[derive(Debug, Clone)]
pub struct GenWorkspace<T> {
    activation: Vec<T>,
    backprop: Vec<T>,
}

impl<T: Scalar> GeneratorSpec<T> {
    pub fn new(kind: GeneratorKind, dims: GeneratorDims, theta: Vec<T>) -> Result<Self, GeneratorError> {
        let spec = GeneratorSpec { kind, dims, theta };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks theta length and (for MLP) the hidden width against `dims`.
    pub fn validate(&self) -> Result<(), GeneratorError> {
        GeneratorDims::new(self.dims.context, self.dims.latent, self.dims.output)?;
        if let GeneratorKind::MlpTanh { hidden } = self.kind {
            if hidden == 0 {
                return Err(GeneratorError::ZeroDim { axis: "hidden" });
            }
        }
        let expected = param_count(self.kind, self.dims);
        if self.theta.len() != expected {
            return Err(GeneratorError::ThetaLength {
                kind: self.kind.name(),
                expected,
                got: self.theta.len(),
            });
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        param_count(self.kind, self.dims)
    }

    pub fn workspace(&self) -> GenWorkspace<T> {
        let h = match self.kind {
            GeneratorKind::AffineGaussian => 0,
            GeneratorKind::MlpTanh { hidden } => hidden,
        };
        GenWorkspace { activation: vec![T::zero(); h], backprop: vec![T::zero(); h] }
    }

    /// Layout of the affine blocks, if this is an affine generator.
    pub fn affine_layout(&self) -> Option<AffineLayout> {
        match self.kind {
            GeneratorKind::AffineGaussian => Some(AffineLayout::of(self.dims)),
            GeneratorKind::MlpTanh { .. } => None,
        }
    }

    /// Simulates one scenario. Validates input shapes.
    pub fn forward(&self, z: &[T], x: &[T]) -> Result<Vec<T>, GeneratorError> {
        self.check_inputs(z, x)?;
        let mut out = vec![T::zero(); self.dims.output];
        let mut ws = self.workspace();
        self.forward_into(z, x, &mut ws, &mut out);
        Ok(out)
    }

    fn check_inputs(&self, z: &[T], x: &[T]) -> Result<(), GeneratorError> {
        self.validate()?;
        if z.len() != self.dims.latent {
            return Err(GeneratorError::Shape { axis: "latent", expected: self.dims.latent, got: z.len() });
        }
        if x.len() != self.dims.context {
            return Err(GeneratorError::Shape { axis: "context", expected: self.dims.context, got: x.len() });
        }
        Ok(())
    }

    /// Forward pass into a caller-provided buffer; shapes must already be
    /// validated (hot path for the solvers).
    pub fn forward_into(&self, z: &[T], x: &[T], ws: &mut GenWorkspace<T>, out: &mut [T]) {
        let (f, dz, d) = (self.dims.context, self.dims.latent, self.dims.output);
        debug_assert_eq!(z.len(), dz);
        debug_assert_eq!(x.len(), f);
        debug_assert_eq!(out.len(), d);
        match self.kind {
            GeneratorKind::AffineGaussian => {
                let layout = AffineLayout::of(self.dims);
                let a = &self.theta[layout.a];
                let b = &self.theta[layout.b];
                let c = &self.theta[layout.c];
                for i in 0..d {
                    let mut acc = c[i];
                    let a_row = &a[i * f..(i + 1) * f];
                    for (aij, xj) in a_row.iter().zip(x) {
                        acc += *aij * *xj;
                    }
                    let b_row = &b[i * dz..(i + 1) * dz];
                    for (bik, zk) in b_row.iter().zip(z) {
                        acc += *bik * *zk;
                    }
                    out[i] = acc;
                }
            }
            GeneratorKind::MlpTanh { hidden } => {
                let m = f + dz;
                let layout = MlpLayout::of(self.dims, hidden);
                let w1 = &self.theta[layout.w1];
                let b1 = &self.theta[layout.b1];
                let w2 = &self.theta[layout.w2];
                let b2 = &self.theta[layout.b2];
                debug_assert_eq!(ws.activation.len(), hidden);
                for k in 0..hidden {
                    let mut acc = b1[k];
                    let row = &w1[k * m..(k + 1) * m];
                    for (j, w) in row.iter().enumerate() {
                        let v = if j < f { x[j] } else { z[j - f] };
                        acc += *w * v;
                    }
                    ws.activation[k] = acc.tanh();
                }
                for i in 0..d {
                    let mut acc = b2[i];
                    let row = &w2[i * hidden..(i + 1) * hidden];
                    for (w, a) in row.iter().zip(&ws.activation) {
                        acc += *w * *a;
                    }
                    out[i] = acc;
                }
            }
        }
    }

    /// Vector-Jacobian product `d(upstream . y)/d(theta)`, flat layout.
    pub fn vjp_theta(&self, z: &[T], x: &[T], upstream: &[T]) -> Result<Vec<T>, GeneratorError> {
        self.check_inputs(z, x)?;
        if upstream.len() != self.dims.output {
            return Err(GeneratorError::Shape {
                axis: "upstream",
                expected: self.dims.output,
                got: upstream.len(),
            });
        }
        let mut acc = vec![T::zero(); self.param_count()];
        let mut ws = self.workspace();
        self.vjp_theta_accumulate(z, x, upstream, T::one(), &mut ws, &mut acc);
        Ok(acc)
    }

    /// Accumulates `scale * d(upstream . y)/d(theta)` into `acc` (hot path).
    ///
    /// Recomputes the forward activations internally, so no prior
    /// `forward_into` call is required.
    pub fn vjp_theta_accumulate(
        &self,
        z: &[T],
        x: &[T],
        upstream: &[T],
        scale: T,
        ws: &mut GenWorkspace<T>,
        acc: &mut [T],
    ) {
        let (f, dz, d) = (self.dims.context, self.dims.latent, self.dims.output);
        debug_assert_eq!(acc.len(), self.param_count());
        match self.kind {
            GeneratorKind::AffineGaussian => {
                let layout = AffineLayout::of(self.dims);
                // d/dA[i,j] = u_i x_j ; d/dB[i,k] = u_i z_k ; d/dc[i] = u_i.
                for i in 0..d {
                    let ui = scale * upstream[i];
                    if ui == T::zero() {
                        continue;
                    }
                    let a_row = &mut acc[layout.a.start + i * f..layout.a.start + (i + 1) * f];
                    for (g, xj) in a_row.iter_mut().zip(x) {
                        *g += ui * *xj;
                    }
                    let b_row = &mut acc[layout.b.start + i * dz..layout.b.start + (i + 1) * dz];
                    for (g, zk) in b_row.iter_mut().zip(z) {
                        *g += ui * *zk;
                    }
                    acc[layout.c.start + i] += ui;
                }
            }
            GeneratorKind::MlpTanh { hidden } => {
                let m = f + dz;
                let layout = MlpLayout::of(self.dims, hidden);
                let w1 = &self.theta[layout.w1.clone()];
                let b1 = &self.theta[layout.b1.clone()];
                let w2 = &self.theta[layout.w2.clone()];
                for k in 0..hidden {
                    let mut pre = b1[k];
                    let row = &w1[k * m..(k + 1) * m];
                    for (j, w) in row.iter().enumerate() {
                        let v = if j < f { x[j] } else { z[j - f] };
                        pre += *w * v;
                    }
                    ws.activation[k] = pre.tanh();
                }
                // Backprop through the output layer: s = W2^T u.
                for k in 0..hidden {
                    let mut s = T::zero();
                    for i in 0..d {
                        s += w2[i * hidden + k] * upstream[i];
                    }
                    // Pre-activation gradient: t = s * (1 - a^2).
                    ws.backprop[k] = s * (T::one() - ws.activation[k] * ws.activation[k]);
                }
                for k in 0..hidden {
                    let tk = scale * ws.backprop[k];
                    if tk != T::zero() {
                        let w1_row = &mut acc[layout.w1.start + k * m..layout.w1.start + (k + 1) * m];
                        for (j, g) in w1_row.iter_mut().enumerate() {
                            let v = if j < f { x[j] } else { z[j - f] };
                            *g += tk * v;
                        }
                    }
                    acc[layout.b1.start + k] += tk;
                }
                for i in 0..d {
                    let ui = scale * upstream[i];
                    if ui == T::zero() {
                        continue;
                    }
                    let w2_row =
                        &mut acc[layout.w2.start + i * hidden..layout.w2.start + (i + 1) * hidden];
                    for (g, a) in w2_row.iter_mut().zip(&ws.activation) {
                        *g += ui * *a;
                    }
                    acc[layout.b2.start + i] += ui;
                }
            }
        }
    }
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> GeneratorSpec<T> {
    pub fn to_json_string(&self) -> Result<String, GeneratorError> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self, GeneratorError> {
        let spec: GeneratorSpec<T> = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeneratorError> {
        let body = self.to_json_string()?;
        std::fs::write(path, body + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GeneratorError> {
        let body = std::fs::read_to_string(path)?;
        Self::from_json_str(&body)
    }
}

/// Draws `theta ~ N(0, scale^2)` entrywise: an affine generator for tests and
/// synthetic studies.
pub fn random_affine<T: Scalar>(seed: u64, dims: GeneratorDims, scale: f64) -> GeneratorSpec<T>
where
    StandardNormal: Distribution<T>,
{
    let count = param_count(GeneratorKind::AffineGaussian, dims);
    GeneratorSpec {
        kind: GeneratorKind::AffineGaussian,
        dims,
        theta: gaussian_vec(seed, count, scale),
    }
}

/// Random MLP generator, `theta ~ N(0, scale^2)` entrywise.
pub fn random_mlp<T: Scalar>(
    seed: u64,
    dims: GeneratorDims,
    hidden: usize,
    scale: f64,
) -> GeneratorSpec<T>
where
    StandardNormal: Distribution<T>,
{
    let kind = GeneratorKind::MlpTanh { hidden };
    let count = param_count(kind, dims);
    GeneratorSpec { kind, dims, theta: gaussian_vec(seed, count, scale) }
}

fn gaussian_vec<T: Scalar>(seed: u64, count: usize, scale: f64) -> Vec<T>
where
    StandardNormal: Distribution<T>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = crate::scalar::real::<T>(scale);
    (0..count).map(|_| s * rng.sample::<T, _>(StandardNormal)).collect()
}

/// A fixed batch of standard-Gaussian latent draws, row-major `n x d_z`.
///
/// Sampled once per refinement run and never resampled mid-run; the same seed
/// always reproduces the same batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch<T> {
    draws: Vec<T>,
    n: usize,
    d_z: usize,
}

impl<T: Scalar> LatentBatch<T>
where
    StandardNormal: Distribution<T>,
{
    pub fn sample(seed: u64, n: usize, d_z: usize) -> Result<Self, GeneratorError> {
        if n == 0 {
            return Err(GeneratorError::EmptyBatch);
        }
        if d_z == 0 {
            return Err(GeneratorError::ZeroDim { axis: "latent" });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = (0..n * d_z).map(|_| rng.sample::<T, _>(StandardNormal)).collect();
        Ok(LatentBatch { draws, n, d_z })
    }
}

impl<T: Scalar> LatentBatch<T> {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.d_z
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.draws[i * self.d_z..(i + 1) * self.d_z]
    }
}
