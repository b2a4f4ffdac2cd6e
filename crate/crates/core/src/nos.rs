//! Operator scaffolding: training FuSe filters through a depthwise kernel.
//!
//! Each scaffolded layer keeps its `(C, K, K)` depthwise kernel `T` and one
//! `K × K` adapter `A` shared by every filter of the layer, for both roles.
//! A row-filter channel uses `A · T[c, :, mid]`, a column-filter channel
//! `A · T[c, mid, :]`. After training the products are collapsed into plain
//! `K`-tap filters and the kernel and adapter are discarded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{fuse_center, fuseconv, Matrix, Tensor3};
use crate::topology::FuseVariant;

/// Square adapter, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AdapterRepr", into = "AdapterRepr")]
pub struct AdapterMatrix {
    k: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AdapterRepr {
    k: usize,
    values: Vec<f64>,
}

impl TryFrom<AdapterRepr> for AdapterMatrix {
    type Error = Error;
    fn try_from(r: AdapterRepr) -> Result<Self> {
        AdapterMatrix::new(r.k, r.values)
    }
}

impl From<AdapterMatrix> for AdapterRepr {
    fn from(a: AdapterMatrix) -> Self {
        AdapterRepr { k: a.k, values: a.values }
    }
}

impl AdapterMatrix {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || values.len() != k * k {
            return Err(Error::ShapeMismatch(format!(
                "adapter of dimension {k} needs {} entries, got {}",
                k * k,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("adapter entries must be finite".into()));
        }
        Ok(AdapterMatrix { k, values })
    }

    pub fn identity(k: usize) -> Self {
        AdapterMatrix {
            k,
            values: (0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn zeros(k: usize) -> Self {
        AdapterMatrix {
            k,
            values: vec![0.0; k * k],
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        AdapterMatrix {
            k: self.k,
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }

    /// `A · v`.
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.k).map(|i| (0..self.k).map(|j| self.get(i, j) * v[j]).sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelRole {
    RowFilter,
    ColFilter,
}

/// Roles in the FuSe-Half layout: the first `ceil(C/2)` channels are row filters.
pub fn half_roles(channels: usize) -> Vec<ChannelRole> {
    let (rows, _) = FuseVariant::Half.split(channels as u64);
    (0..channels)
        .map(|c| if (c as u64) < rows { ChannelRole::RowFilter } else { ChannelRole::ColFilter })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaffoldedLayer {
    /// `(C, K, K)`.
    pub depthwise_kernel: Tensor3<f64>,
    pub adapter: AdapterMatrix,
    /// One per channel; counts match the Half split, order is free.
    pub channel_roles: Vec<ChannelRole>,
}

impl ScaffoldedLayer {
    pub fn new(depthwise_kernel: Tensor3<f64>, adapter: AdapterMatrix, channel_roles: Vec<ChannelRole>) -> Result<Self> {
        let layer = ScaffoldedLayer {
            depthwise_kernel,
            adapter,
            channel_roles,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Half layout roles.
    pub fn half(depthwise_kernel: Tensor3<f64>, adapter: AdapterMatrix) -> Result<Self> {
        let roles = half_roles(depthwise_kernel.dims().0);
        ScaffoldedLayer::new(depthwise_kernel, adapter, roles)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, kh, kw) = self.depthwise_kernel.dims();
        if kh != kw {
            return Err(Error::ShapeMismatch(format!("depthwise kernel must be square, got {kh}x{kw}")));
        }
        if self.adapter.dim() != kh {
            return Err(Error::ShapeMismatch(format!(
                "adapter dimension {} does not match K = {kh}",
                self.adapter.dim()
            )));
        }
        if self.channel_roles.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "{} channel roles for {c} channels",
                self.channel_roles.len()
            )));
        }
        let rows = self.row_channels().len() as u64;
        if (rows, c as u64 - rows) != FuseVariant::Half.split(c as u64) {
            return Err(Error::Invalid(format!(
                "{rows} row-filter channels of {c} do not match the half split"
            )));
        }
        if self.depthwise_kernel.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("kernel entries must be finite".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channel_roles.len()
    }

    pub fn kernel_size(&self) -> usize {
        self.adapter.dim()
    }

    fn channels_with(&self, role: ChannelRole) -> Vec<usize> {
        (0..self.channels()).filter(|&c| self.channel_roles[c] == role).collect()
    }

    pub fn row_channels(&self) -> Vec<usize> {
        self.channels_with(ChannelRole::RowFilter)
    }

    pub fn col_channels(&self) -> Vec<usize> {
        self.channels_with(ChannelRole::ColFilter)
    }

    /// Trainables while scaffolded: the kernel plus one shared adapter.
    pub fn trainable_params(&self) -> usize {
        let k = self.kernel_size();
        self.channels() * k * k + k * k
    }

    /// Parameters of the depthwise layer being scaffolded.
    pub fn depthwise_params(&self) -> usize {
        let k = self.kernel_size();
        self.channels() * k * k
    }

    /// The kernel's middle column (`Row`) or middle row (`Col`) for channel `c`.
    fn kernel_slice(&self, c: usize, role: ChannelRole, mid: usize) -> Vec<f64> {
        let k = self.kernel_size();
        (0..k)
            .map(|j| match role {
                ChannelRole::RowFilter => self.depthwise_kernel.get(c, j, mid),
                ChannelRole::ColFilter => self.depthwise_kernel.get(c, mid, j),
            })
            .collect()
    }
}

/// Projected filters: row filters `C_r × K`, column filters `C_c × K`, in channel order.
pub fn project(layer: &ScaffoldedLayer) -> Result<(Matrix<f64>, Matrix<f64>)> {
    let k = layer.kernel_size();
    if k.is_multiple_of(2) {
        return Err(Error::Invalid(format!(
            "K = {k} has no middle slice; use project_at with an explicit index"
        )));
    }
    project_at(layer, (k - 1) / 2)
}

/// [`project`] with the slice index given explicitly, for even `K`.
pub fn project_at(layer: &ScaffoldedLayer, mid: usize) -> Result<(Matrix<f64>, Matrix<f64>)> {
    layer.validate()?;
    let k = layer.kernel_size();
    if mid >= k {
        return Err(Error::Invalid(format!("slice index {mid} out of range for K = {k}")));
    }
    let build = |role: ChannelRole| {
        let chans = layer.channels_with(role);
        let data = chans
            .iter()
            .flat_map(|&c| layer.adapter.apply(&layer.kernel_slice(c, role, mid)))
            .collect();
        Matrix::new(chans.len(), k, data)
    };
    Ok((build(ChannelRole::RowFilter)?, build(ChannelRole::ColFilter)?))
}

/// Plain FuSe filters left after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapsedLayer {
    pub channel_roles: Vec<ChannelRole>,
    pub row_filters: Matrix<f64>,
    pub col_filters: Matrix<f64>,
}

impl CollapsedLayer {
    pub fn params(&self) -> usize {
        self.row_filters.data.len() + self.col_filters.data.len()
    }

    /// Output channel `c` is channel `c` filtered by its role.
    pub fn forward(&self, input: &Tensor3<f64>, stride: usize, padding: usize) -> Result<Tensor3<f64>> {
        let (c, h, w) = input.dims();
        if c != self.channel_roles.len() {
            return Err(Error::ShapeMismatch(format!(
                "input has {c} channels, layer has {}",
                self.channel_roles.len()
            )));
        }
        // The oracle wants row channels first; permute in, run, permute back.
        let order: Vec<usize> = [ChannelRole::RowFilter, ChannelRole::ColFilter]
            .iter()
            .flat_map(|&r| (0..c).filter(move |&i| self.channel_roles[i] == r))
            .collect();
        let permuted = Tensor3::from_fn(c, h, w, |ci, y, x| input.get(order[ci], y, x));
        let out = fuseconv(
            &permuted,
            &self.row_filters,
            &self.col_filters,
            FuseVariant::Half,
            stride,
            padding,
        )?;
        let (_, m, n) = out.dims();
        let mut back = Tensor3::zeros(c, m, n);
        for (ci, &orig) in order.iter().enumerate() {
            for y in 0..m {
                for x in 0..n {
                    back.set(orig, y, x, out.get(ci, y, x));
                }
            }
        }
        Ok(back)
    }
}

pub fn collapse(layer: &ScaffoldedLayer) -> Result<CollapsedLayer> {
    let (row_filters, col_filters) = project(layer)?;
    Ok(CollapsedLayer {
        channel_roles: layer.channel_roles.clone(),
        row_filters,
        col_filters,
    })
}

fn out_dims(layer: &ScaffoldedLayer, input: &Tensor3<f64>, stride: usize, padding: usize) -> Result<(usize, usize)> {
    let (c, h, w) = input.dims();
    let k = layer.kernel_size();
    if c != layer.channels() {
        return Err(Error::ShapeMismatch(format!("input has {c} channels, layer has {}", layer.channels())));
    }
    if stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::ShapeMismatch("kernel larger than padded input or zero stride".into()));
    }
    Ok(((h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1))
}

/// Forward pass through the scaffold, evaluating `Σ_t Σ_j A[t][j]·T[c][j][mid]·x`
/// without forming the projected filters.
pub fn scaffold_forward(layer: &ScaffoldedLayer, input: &Tensor3<f64>, stride: usize, padding: usize) -> Result<Tensor3<f64>> {
    layer.validate()?;
    let k = layer.kernel_size();
    if k.is_multiple_of(2) {
        return Err(Error::Invalid(format!("K = {k} has no middle slice")));
    }
    let mid = (k - 1) / 2;
    let (m, n) = out_dims(layer, input, stride, padding)?;
    let a = &layer.adapter;
    let t = &layer.depthwise_kernel;
    Ok(Tensor3::from_fn(layer.channels(), m, n, |c, om, on| {
        let mut acc = 0.0;
        for tap in 0..k {
            let x = match layer.channel_roles[c] {
                ChannelRole::RowFilter => input.get_padded(
                    c,
                    fuse_center(om, k, stride, padding),
                    (on * stride + tap) as i64 - padding as i64,
                ),
                ChannelRole::ColFilter => input.get_padded(
                    c,
                    (om * stride + tap) as i64 - padding as i64,
                    fuse_center(on, k, stride, padding),
                ),
            };
            let mut w = 0.0;
            for j in 0..k {
                let tw = match layer.channel_roles[c] {
                    ChannelRole::RowFilter => t.get(c, j, mid),
                    ChannelRole::ColFilter => t.get(c, mid, j),
                };
                w += a.get(tap, j) * tw;
            }
            acc += w * x;
        }
        acc
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerChoice {
    Depthwise,
    Fuse,
}

/// Operator chosen for every scaffolded layer in one training step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldConfig {
    pub choices: Vec<LayerChoice>,
}

/// Independent fair coin per layer.
pub fn sample_config(num_layers: usize, seed: u64) -> ScaffoldConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScaffoldConfig {
        choices: (0..num_layers)
            .map(|_| if rng.random_bool(0.5) { LayerChoice::Fuse } else { LayerChoice::Depthwise })
            .collect(),
    }
}

/// Mean squared difference of logits.
pub fn distill_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} student logits against {} teacher logits",
            student.len(),
            teacher.len()
        )));
    }
    if student.is_empty() {
        return Err(Error::ShapeMismatch("no logits".into()));
    }
    let sum: f64 = student.iter().zip(teacher).map(|(s, t)| (s - t) * (s - t)).sum();
    Ok(sum / student.len() as f64)
}

/// Scalar loss over a layer output, with its gradient.
pub trait ScalarLoss {
    fn value(&self, output: &Tensor3<f64>) -> Result<f64>;
    /// `∂loss/∂output`, same shape as `output`.
    fn grad(&self, output: &Tensor3<f64>) -> Result<Tensor3<f64>>;
}

/// `Σ w·y`.
#[derive(Debug, Clone)]
pub struct LinearLoss {
    pub weights: Tensor3<f64>,
}

/// `½ Σ y²`.
#[derive(Debug, Clone, Copy)]
pub struct SquaredLoss;

/// [`distill_loss`] of the flattened output against a teacher output.
#[derive(Debug, Clone)]
pub struct DistillLoss {
    pub teacher: Tensor3<f64>,
}

fn same_dims(a: &Tensor3<f64>, b: &Tensor3<f64>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("loss expects {:?}, output is {:?}", b.dims(), a.dims())));
    }
    Ok(())
}

impl ScalarLoss for LinearLoss {
    fn value(&self, y: &Tensor3<f64>) -> Result<f64> {
        same_dims(y, &self.weights)?;
        Ok(y.data().iter().zip(self.weights.data()).map(|(a, b)| a * b).sum())
    }

    fn grad(&self, y: &Tensor3<f64>) -> Result<Tensor3<f64>> {
        same_dims(y, &self.weights)?;
        Ok(self.weights.clone())
    }
}

impl ScalarLoss for SquaredLoss {
    fn value(&self, y: &Tensor3<f64>) -> Result<f64> {
        Ok(0.5 * y.data().iter().map(|v| v * v).sum::<f64>())
    }

    fn grad(&self, y: &Tensor3<f64>) -> Result<Tensor3<f64>> {
        Ok(y.clone())
    }
}

impl ScalarLoss for DistillLoss {
    fn value(&self, y: &Tensor3<f64>) -> Result<f64> {
        same_dims(y, &self.teacher)?;
        distill_loss(y.data(), self.teacher.data())
    }

    fn grad(&self, y: &Tensor3<f64>) -> Result<Tensor3<f64>> {
        same_dims(y, &self.teacher)?;
        let (c, h, w) = y.dims();
        let scale = 2.0 / y.data().len() as f64;
        Ok(Tensor3::from_fn(c, h, w, |a, b, d| scale * (y.get(a, b, d) - self.teacher.get(a, b, d))))
    }
}

/// Gradients with respect to the scaffold's trainables.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldGradients {
    /// Row-major `K × K`.
    pub adapter: Vec<f64>,
    /// Same layout as the kernel data.
    pub kernel: Vec<f64>,
}

/// Chain rule through the forward pass and the projection.
pub fn analytic_gradients(
    layer: &ScaffoldedLayer,
    input: &Tensor3<f64>,
    stride: usize,
    padding: usize,
    loss: &dyn ScalarLoss,
) -> Result<ScaffoldGradients> {
    let (rows, cols) = project(layer)?;
    let collapsed = CollapsedLayer {
        channel_roles: layer.channel_roles.clone(),
        row_filters: rows,
        col_filters: cols,
    };
    let y = collapsed.forward(input, stride, padding)?;
    let g = loss.grad(&y)?;
    let k = layer.kernel_size();
    let mid = (k - 1) / 2;
    let (_, m, n) = y.dims();
    let mut ga = vec![0.0; k * k];
    let mut gt = vec![0.0; layer.depthwise_kernel.data().len()];
    for c in 0..layer.channels() {
        let role = layer.channel_roles[c];
        // ∂L/∂filter[c][tap].
        let mut gf = vec![0.0; k];
        for (tap, gft) in gf.iter_mut().enumerate() {
            for om in 0..m {
                for on in 0..n {
                    let x = match role {
                        ChannelRole::RowFilter => input.get_padded(
                            c,
                            fuse_center(om, k, stride, padding),
                            (on * stride + tap) as i64 - padding as i64,
                        ),
                        ChannelRole::ColFilter => input.get_padded(
                            c,
                            (om * stride + tap) as i64 - padding as i64,
                            fuse_center(on, k, stride, padding),
                        ),
                    };
                    *gft += g.get(c, om, on) * x;
                }
            }
        }
        // filter = A · s, s = kernel slice.
        let s = layer.kernel_slice(c, role, mid);
        for i in 0..k {
            for j in 0..k {
                ga[i * k + j] += gf[i] * s[j];
                let flat = match role {
                    ChannelRole::RowFilter => (c * k + j) * k + mid,
                    ChannelRole::ColFilter => (c * k + mid) * k + j,
                };
                gt[flat] += gf[i] * layer.adapter.get(i, j);
            }
        }
    }
    Ok(ScaffoldGradients { adapter: ga, kernel: gt })
}

pub const FINITE_DIFFERENCE_STEP: f64 = 1e-5;

/// Central differences of the loss through [`scaffold_forward`].
pub fn numeric_gradients(
    layer: &ScaffoldedLayer,
    input: &Tensor3<f64>,
    stride: usize,
    padding: usize,
    loss: &dyn ScalarLoss,
) -> Result<ScaffoldGradients> {
    let h = FINITE_DIFFERENCE_STEP;
    let eval = |l: &ScaffoldedLayer| -> Result<f64> { loss.value(&scaffold_forward(l, input, stride, padding)?) };
    let k = layer.kernel_size();
    let mut adapter = Vec::with_capacity(k * k);
    for i in 0..k * k {
        let mut vals = layer.adapter.values.clone();
        vals[i] += h;
        let plus = ScaffoldedLayer {
            adapter: AdapterMatrix { k, values: vals.clone() },
            ..layer.clone()
        };
        vals[i] -= 2.0 * h;
        let minus = ScaffoldedLayer {
            adapter: AdapterMatrix { k, values: vals },
            ..layer.clone()
        };
        adapter.push((eval(&plus)? - eval(&minus)?) / (2.0 * h));
    }
    let (c, kh, kw) = layer.depthwise_kernel.dims();
    let base = layer.depthwise_kernel.data().to_vec();
    let mut kernel = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let shifted = |d: f64| -> Result<f64> {
            let mut data = base.clone();
            data[i] += d;
            let l = ScaffoldedLayer {
                depthwise_kernel: Tensor3::new(c, kh, kw, data)?,
                ..layer.clone()
            };
            eval(&l)
        };
        kernel.push((shifted(h)? - shifted(-h)?) / (2.0 * h));
    }
    Ok(ScaffoldGradients { adapter, kernel })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: ScaffoldGradients,
    pub numeric: ScaffoldGradients,
    /// Largest `|a − n| / max(|a|, |n|, 1)` over all trainables. Below unit
    /// magnitude this is the absolute error, where the difference quotient's
    /// rounding noise (about `ε·|loss|/h`) dominates any true relative error.
    pub max_relative_error: f64,
}

pub fn grad_check(
    layer: &ScaffoldedLayer,
    input: &Tensor3<f64>,
    stride: usize,
    padding: usize,
    loss: &dyn ScalarLoss,
) -> Result<GradCheck> {
    let analytic = analytic_gradients(layer, input, stride, padding, loss)?;
    let numeric = numeric_gradients(layer, input, stride, padding, loss)?;
    let pairs = analytic
        .adapter
        .iter()
        .zip(&numeric.adapter)
        .chain(analytic.kernel.iter().zip(&numeric.kernel));
    let max_relative_error = pairs
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        analytic,
        numeric,
        max_relative_error,
    })
}

/// Loss applied in a randomized gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    Linear(Tensor3<f64>),
    Squared,
    Distill(Tensor3<f64>),
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Linear(_) => "linear",
            LossSpec::Squared => "squared",
            LossSpec::Distill(_) => "distill",
        }
    }

    fn as_loss(&self) -> Box<dyn ScalarLoss + '_> {
        match self {
            LossSpec::Linear(w) => Box::new(LinearLoss { weights: w.clone() }),
            LossSpec::Squared => Box::new(SquaredLoss),
            LossSpec::Distill(t) => Box::new(DistillLoss { teacher: t.clone() }),
        }
    }
}

/// A small scaffolded layer, input and loss drawn from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub layer: ScaffoldedLayer,
    pub input: Tensor3<f64>,
    pub stride: usize,
    pub padding: usize,
    pub loss: LossSpec,
}

impl GradCase {
    /// `C ∈ [2, 6]`, `K ∈ {3, 5}`, spatial size in `[K, K + 4]`, stride 1 or 2,
    /// entries uniform in `[-1, 1]`, roles shuffled.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(2..=6usize);
        let k = if rng.random_bool(0.5) { 3 } else { 5 };
        let h = rng.random_range(k..=k + 4);
        let w = rng.random_range(k..=k + 4);
        let stride = rng.random_range(1..=2usize);
        let padding = rng.random_range(0..=k / 2);
        let mut u = || rng.random_range(-1.0..=1.0);
        let kernel = Tensor3::from_fn(c, k, k, |_, _, _| u());
        let adapter = AdapterMatrix {
            k,
            values: (0..k * k).map(|_| u()).collect(),
        };
        let input = Tensor3::from_fn(c, h, w, |_, _, _| u());
        let (m, n) = ((h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1);
        let loss = match rng.random_range(0..3) {
            0 => LossSpec::Linear(Tensor3::from_fn(c, m, n, |_, _, _| rng.random_range(-1.0..=1.0))),
            1 => LossSpec::Squared,
            _ => LossSpec::Distill(Tensor3::from_fn(c, m, n, |_, _, _| rng.random_range(-1.0..=1.0))),
        };
        let mut roles = half_roles(c);
        for i in (1..c).rev() {
            roles.swap(i, rng.random_range(0..=i));
        }
        GradCase {
            layer: ScaffoldedLayer {
                depthwise_kernel: kernel,
                adapter,
                channel_roles: roles,
            },
            input,
            stride,
            padding,
            loss,
        }
    }

    pub fn check(&self) -> Result<GradCheck> {
        grad_check(&self.layer, &self.input, self.stride, self.padding, self.loss.as_loss().as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel_123() -> Tensor3<f64> {
        Tensor3::new(2, 3, 3, (1..=9).chain(1..=9).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn identity_projection_by_hand() {
        let layer = ScaffoldedLayer::half(kernel_123(), AdapterMatrix::identity(3)).unwrap();
        let (r, c) = project(&layer).unwrap();
        assert_eq!(r.data, vec![2.0, 5.0, 8.0]);
        assert_eq!(c.data, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn zero_adapter_annihilates() {
        let layer = ScaffoldedLayer::half(kernel_123(), AdapterMatrix::zeros(3)).unwrap();
        let (r, c) = project(&layer).unwrap();
        assert!(r.data.iter().chain(&c.data).all(|&v| v == 0.0));
    }

    #[test]
    fn even_kernel_needs_explicit_slice() {
        let t = Tensor3::from_fn(2, 2, 2, |c, y, x| (c * 4 + y * 2 + x) as f64);
        let layer = ScaffoldedLayer::half(t, AdapterMatrix::identity(2)).unwrap();
        assert!(matches!(project(&layer), Err(Error::Invalid(_))));
        let (r, _) = project_at(&layer, 1).unwrap();
        assert_eq!(r.data, vec![1.0, 3.0]);
    }

    #[test]
    fn role_counts_checked() {
        let roles = vec![ChannelRole::ColFilter, ChannelRole::ColFilter];
        assert!(ScaffoldedLayer::new(kernel_123(), AdapterMatrix::identity(3), roles).is_err());
        let swapped = vec![ChannelRole::ColFilter, ChannelRole::RowFilter];
        assert!(ScaffoldedLayer::new(kernel_123(), AdapterMatrix::identity(3), swapped).is_ok());
    }

    #[test]
    fn collapse_counts_and_idempotence() {
        let layer = ScaffoldedLayer::half(kernel_123(), AdapterMatrix::identity(3)).unwrap();
        let once = collapse(&layer).unwrap();
        assert_eq!(once.params(), 6);
        assert_eq!(layer.trainable_params() - layer.depthwise_params(), 9);
        assert_eq!(collapse(&layer).unwrap(), once);
    }

    #[test]
    fn distill_mse() {
        assert_eq!(distill_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(distill_loss(&[0.0, 0.0], &[2.0, 0.0]).unwrap(), 2.0);
        assert!(distill_loss(&[0.0], &[0.0, 1.0]).is_err());
        assert!(distill_loss(&[], &[]).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        assert_eq!(sample_config(40, 3), sample_config(40, 3));
        assert!(sample_config(0, 3).choices.is_empty());
        assert_ne!(sample_config(40, 3), sample_config(40, 4));
    }

    #[test]
    fn zero_input_zero_adapter_gradient() {
        let layer = ScaffoldedLayer::half(kernel_123(), AdapterMatrix::identity(3)).unwrap();
        let input = Tensor3::zeros(2, 4, 4);
        let g = analytic_gradients(&layer, &input, 1, 1, &SquaredLoss).unwrap();
        assert!(g.adapter.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_loss_gradient_is_exact() {
        let layer = ScaffoldedLayer::half(kernel_123(), AdapterMatrix::identity(3)).unwrap();
        let input = Tensor3::from_fn(2, 4, 5, |c, y, x| (c + 2 * y) as f64 - 0.5 * x as f64);
        let weights = Tensor3::from_fn(2, 4, 5, |c, y, x| ((c * 7 + y * 3 + x) % 5) as f64 - 2.0);
        let check = grad_check(&layer, &input, 1, 1, &LinearLoss { weights }).unwrap();
        assert!(check.max_relative_error < 1e-9, "{}", check.max_relative_error);
    }

    #[test]
    fn random_cases_are_valid_and_seeded() {
        for seed in 0..20 {
            let case = GradCase::random(seed);
            case.layer.validate().unwrap();
            assert_eq!(case, GradCase::random(seed));
            assert!(case.check().unwrap().max_relative_error < 1e-4);
        }
    }

    #[test]
    fn adapter_serde_validates() {
        let a: AdapterMatrix = serde_json::from_str(r#"{"k":2,"values":[1,0,0,1]}"#).unwrap();
        assert_eq!(a, AdapterMatrix::identity(2));
        assert!(serde_json::from_str::<AdapterMatrix>(r#"{"k":2,"values":[1,0,0]}"#).is_err());
    }
}
