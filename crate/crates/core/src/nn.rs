//! MLP hedging policy, Adam, and the training loop that minimizes the
//! indifference price of the hedged position.
//!
//! The policy is a single network shared across hedging dates:
//! `Linear → LayerNorm → ReLU` repeated, then a linear head producing the
//! position. It sees the feature row of each date and, optionally, the
//! previous position (which makes the forward pass sequential in time).

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::hedge::{feature_matrix, feature_width, pl_gradient, pl_unchecked, HedgeOutcome, VolEstimator};
use crate::instruments::OptionSpec;
use crate::paths::{substream, PricePath};
use crate::risk::{indifference_price, RiskMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Feed the previous position `δ_{i-1}` (with `δ_{-1} = 0`) as an extra input.
    pub prev_position: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden_width: 32,
            hidden_layers: 3,
            prev_position: false,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.hidden_width >= 1, "hidden width must be >= 1");
        ensure!(self.hidden_layers >= 1, "need at least one hidden layer");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    feature_width: usize,
    config: PolicyConfig,
    /// Per hidden layer `[W, b, gain, shift]`, then the head `[W, b]`.
    params: Vec<Tensor>,
}

impl MlpPolicy {
    /// Kaiming-uniform hidden weights, zero biases, unit LayerNorm gains and a
    /// zero head, so a fresh policy does not trade.
    pub fn new(feature_width: usize, config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        ensure!(feature_width >= 1, "policy needs at least one feature");
        let mut rng = substream(seed, 0);
        let h = config.hidden_width;
        let mut params = Vec::with_capacity(4 * config.hidden_layers + 2);
        let mut fan_in = feature_width + usize::from(config.prev_position);
        for _ in 0..config.hidden_layers {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = (0..fan_in * h).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(Tensor::new(fan_in, h, w));
            params.push(Tensor::zeros(1, h));
            params.push(Tensor::filled(1, h, 1.0));
            params.push(Tensor::zeros(1, h));
            fan_in = h;
        }
        params.push(Tensor::zeros(h, 1));
        params.push(Tensor::zeros(1, 1));
        Ok(MlpPolicy {
            feature_width,
            config,
            params,
        })
    }

    /// Replaces the zero head with small random weights; useful when a test
    /// needs a policy whose output depends on every parameter.
    pub fn randomize_head(&mut self, seed: u64, scale: f64) {
        let mut rng = substream(seed, 1);
        let n = self.params.len();
        for t in &mut self.params[n - 2..] {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn config(&self) -> PolicyConfig {
        self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|t| g.leaf(t.clone())).collect()
    }

    fn network(&self, g: &mut Graph, leaves: &[Var], x: Var) -> Var {
        let mut h = x;
        for layer in leaves[..leaves.len() - 2].chunks(4) {
            h = g.matmul(h, layer[0]);
            h = g.add_row(h, layer[1]);
            h = g.layer_norm(h);
            h = g.mul_row(h, layer[2]);
            h = g.add_row(h, layer[3]);
            h = g.relu(h);
        }
        let n = leaves.len();
        let out = g.matmul(h, leaves[n - 2]);
        g.add_row(out, leaves[n - 1])
    }

    /// Positions `(batch × n)` for a feature matrix with rows `p * n + i`.
    fn positions(&self, g: &mut Graph, leaves: &[Var], features: &[f64], n: usize) -> Var {
        let d = self.feature_width;
        let batch = features.len() / (n * d);
        if !self.config.prev_position {
            let x = g.leaf(Tensor::new(batch * n, d, features.to_vec()));
            let out = self.network(g, leaves, x);
            return g.reshape(out, batch, n);
        }
        let mut prev = g.leaf(Tensor::zeros(batch, 1));
        let mut cols = Vec::with_capacity(n);
        for i in 0..n {
            let mut step = Vec::with_capacity(batch * d);
            for p in 0..batch {
                let row = p * n + i;
                step.extend_from_slice(&features[row * d..(row + 1) * d]);
            }
            let x = g.leaf(Tensor::new(batch, d, step));
            let input = g.concat_cols(&[x, prev]);
            prev = self.network(g, leaves, input);
            cols.push(prev);
        }
        g.concat_cols(&cols)
    }

    /// Hedge positions for each path, evaluated in chunks.
    pub fn hedge_positions(
        &self,
        paths: &[PricePath],
        spec: &OptionSpec,
        vol: &VolEstimator,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_spec(spec)?;
        let n = spec.maturity_days;
        let mut out = Vec::with_capacity(paths.len());
        for chunk in paths.chunks(EVAL_CHUNK) {
            let features = feature_matrix(chunk, spec, vol)?;
            let mut g = Graph::new();
            let leaves = self.register(&mut g);
            let pos = self.positions(&mut g, &leaves, &features, n);
            out.extend(g.value(pos).data.chunks(n).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    fn check_spec(&self, spec: &OptionSpec) -> Result<()> {
        spec.validate()?;
        ensure!(
            feature_width(spec) == self.feature_width,
            "policy expects {} features, the {} option provides {}",
            self.feature_width,
            spec.kind.label(),
            feature_width(spec)
        );
        Ok(())
    }
}

const EVAL_CHUNK: usize = 2048;

/// Precomputed per-path training inputs.
struct Dataset {
    n: usize,
    width: usize,
    features: Vec<f64>,
    prices: Vec<f64>,
    payoffs: Vec<f64>,
}

impl Dataset {
    fn new(paths: &[PricePath], spec: &OptionSpec, vol: &VolEstimator) -> Result<Self> {
        let features = feature_matrix(paths, spec, vol)?;
        let prices = paths.iter().flat_map(|p| p.prices().iter().copied()).collect();
        let payoffs = paths.iter().map(|p| spec.payoff_unchecked(p.prices())).collect();
        Ok(Dataset {
            n: spec.maturity_days,
            width: feature_width(spec),
            features,
            prices,
            payoffs,
        })
    }

    fn len(&self) -> usize {
        self.payoffs.len()
    }

    fn gather(&self, idx: &[usize]) -> Dataset {
        let (n, d) = (self.n, self.width);
        let mut features = Vec::with_capacity(idx.len() * n * d);
        let mut prices = Vec::with_capacity(idx.len() * (n + 1));
        let mut payoffs = Vec::with_capacity(idx.len());
        for &p in idx {
            features.extend_from_slice(&self.features[p * n * d..(p + 1) * n * d]);
            prices.extend_from_slice(&self.prices[p * (n + 1)..(p + 1) * (n + 1)]);
            payoffs.push(self.payoffs[p]);
        }
        Dataset {
            n,
            width: d,
            features,
            prices,
            payoffs,
        }
    }
}

/// Builds `-u(PL)` on the tape; returns the loss node and the P&L samples.
fn objective(
    policy: &MlpPolicy,
    g: &mut Graph,
    leaves: &[Var],
    data: &Dataset,
    measure: &RiskMeasure,
    cost_rate: f64,
) -> Result<(Var, Vec<f64>)> {
    let n = data.n;
    let m = data.len();
    let pos = policy.positions(g, leaves, &data.features, n);
    let deltas = g.value(pos).clone();
    let mut pl = Vec::with_capacity(m);
    let mut jac = Vec::with_capacity(m * n);
    for p in 0..m {
        let prices = &data.prices[p * (n + 1)..(p + 1) * (n + 1)];
        let row = deltas.row(p);
        pl.push(pl_unchecked(prices, row, data.payoffs[p], cost_rate).pl);
        jac.extend(pl_gradient(prices, row, cost_rate));
    }
    let pl_node = g.row_reduce(pos, pl.clone(), Tensor::new(m, n, jac));
    let flat = g.reshape(pl_node, 1, m);
    let (u, du) = measure.utility_with_grad(&pl)?;
    let u_node = g.row_reduce(flat, vec![u], Tensor::new(1, m, du));
    Ok((g.neg(u_node), pl))
}

/// The training objective `-u(PL)` over `paths` and its gradient with
/// respect to every policy parameter.
pub fn objective_and_gradient(
    policy: &MlpPolicy,
    paths: &[PricePath],
    spec: &OptionSpec,
    measure: &RiskMeasure,
    cost_rate: f64,
    vol: &VolEstimator,
) -> Result<(f64, Vec<Tensor>)> {
    policy.check_spec(spec)?;
    measure.validate()?;
    ensure!(!paths.is_empty(), "objective needs at least one path");
    let data = Dataset::new(paths, spec, vol)?;
    let mut g = Graph::new();
    let leaves = policy.register(&mut g);
    let (loss, _) = objective(policy, &mut g, &leaves, &data, measure, cost_rate)?;
    let grads = g.backward(loss)?;
    let out = leaves
        .iter()
        .zip(policy.params())
        .map(|(&v, t)| grads.wrt(v, t.shape()))
        .collect();
    Ok((g.value(loss).data[0], out))
}

/// P&L decomposition of the policy's hedge on every path.
pub fn evaluate(
    policy: &MlpPolicy,
    paths: &[PricePath],
    spec: &OptionSpec,
    cost_rate: f64,
    vol: &VolEstimator,
) -> Result<Vec<HedgeOutcome>> {
    ensure!(cost_rate >= 0.0 && cost_rate.is_finite(), "transaction cost must be nonnegative");
    let positions = policy.hedge_positions(paths, spec, vol)?;
    Ok(paths
        .iter()
        .zip(&positions)
        .map(|(p, d)| pl_unchecked(p.prices(), d, spec.payoff_unchecked(p.prices()), cost_rate))
        .collect())
}

/// Indifference price of the option hedged by `policy` over `paths`.
pub fn price(
    policy: &MlpPolicy,
    paths: &[PricePath],
    spec: &OptionSpec,
    measure: &RiskMeasure,
    cost_rate: f64,
    vol: &VolEstimator,
) -> Result<f64> {
    ensure!(!paths.is_empty(), "pricing needs at least one path");
    let pl: Vec<f64> = evaluate(policy, paths, spec, cost_rate, vol)?
        .iter()
        .map(|o| o.pl)
        .collect();
    indifference_price(&pl, measure)
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m.data[j] / c1;
                let vhat = v.data[j] / c2;
                p.data[j] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub cost_rate: f64,
    pub measure: RiskMeasure,
    pub vol: VolEstimator,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 256,
            seed: 0,
            cost_rate: 0.0,
            measure: RiskMeasure::Erm { lambda: 1.0 },
            vol: VolEstimator::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning rate must be positive, got {}",
            self.learning_rate
        );
        ensure!(self.batch_size >= 1, "batch size must be >= 1");
        ensure!(
            self.cost_rate >= 0.0 && self.cost_rate.is_finite(),
            "transaction cost must be nonnegative"
        );
        self.measure.validate()?;
        self.policy.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Validation price after each epoch (entry `e` is epoch `e + 1`).
    pub val_prices: Vec<f64>,
    /// Mean minibatch objective per epoch; `None` when every step was skipped.
    pub train_objectives: Vec<Option<f64>>,
    /// 1-based epoch with the lowest finite validation price.
    pub best_epoch: Option<usize>,
    pub best_val_price: Option<f64>,
    pub diagnostics: Vec<String>,
}

impl TrainReport {
    /// `epoch,val_price` rows, epochs counted from 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,val_price")?;
        for (e, v) in self.val_prices.iter().enumerate() {
            writeln!(out, "{},{v}", e + 1)?;
        }
        Ok(())
    }
}

/// Trains a fresh policy and returns the parameters with the lowest
/// validation price.
pub fn train(
    train_paths: &[PricePath],
    val_paths: &[PricePath],
    spec: &OptionSpec,
    cfg: &TrainConfig,
) -> Result<(MlpPolicy, TrainReport)> {
    let policy = MlpPolicy::new(feature_width(spec), cfg.policy, cfg.seed)?;
    train_from(policy, train_paths, val_paths, spec, cfg)
}

pub fn train_from(
    mut policy: MlpPolicy,
    train_paths: &[PricePath],
    val_paths: &[PricePath],
    spec: &OptionSpec,
    cfg: &TrainConfig,
) -> Result<(MlpPolicy, TrainReport)> {
    cfg.validate()?;
    policy.check_spec(spec)?;
    ensure!(!train_paths.is_empty(), "training set is empty");
    ensure!(!val_paths.is_empty(), "validation set is empty");
    let data = Dataset::new(train_paths, spec, &cfg.vol)?;
    let validate = |p: &MlpPolicy| price(p, val_paths, spec, &cfg.measure, cfg.cost_rate, &cfg.vol);

    let mut report = TrainReport::default();
    let mut best = policy.clone();

    let mut adam = Adam::new(cfg.learning_rate, policy.params());
    let mut rng = substream(cfg.seed, 2);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch = data.gather(idx);
            let mut g = Graph::new();
            let leaves = policy.register(&mut g);
            let (loss, _) = objective(&policy, &mut g, &leaves, &batch, &cfg.measure, cfg.cost_rate)?;
            let value = g.value(loss).data[0];
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> = leaves
                .iter()
                .zip(policy.params())
                .map(|(&v, t)| grads.wrt(v, t.shape()))
                .collect();
            if !value.is_finite() || !grads.iter().all(Tensor::is_finite) {
                report
                    .diagnostics
                    .push(format!("epoch {epoch}: non-finite objective or gradient, step skipped"));
                continue;
            }
            let snapshot = policy.params.clone();
            adam.step(&mut policy.params, &grads);
            if !policy.is_finite() {
                policy.params = snapshot;
                report
                    .diagnostics
                    .push(format!("epoch {epoch}: update produced non-finite weights, restored"));
                continue;
            }
            total += value;
            batches += 1;
        }
        let val = validate(&policy).unwrap_or(f64::NAN);
        if !val.is_finite() {
            report
                .diagnostics
                .push(format!("epoch {epoch}: validation price is not finite"));
        }
        report.val_prices.push(val);
        report
            .train_objectives
            .push((batches > 0).then(|| total / batches as f64));
        if val.is_finite() && report.best_val_price.is_none_or(|b| val < b) {
            report.best_val_price = Some(val);
            report.best_epoch = Some(epoch);
            best = policy.clone();
        }
        log::debug!("epoch {epoch}: validation price {val}");
    }
    Ok((best, report))
}

const MAGIC: &[u8; 8] = b"HLPOLICY";
const FORMAT_VERSION: u32 = 1;

/// SHA-256 of a configuration's canonical text, stored in checkpoints.
pub fn config_hash(config_text: &str) -> [u8; 32] {
    Sha256::digest(config_text.as_bytes()).into()
}

impl MlpPolicy {
    /// Little-endian binary checkpoint: magic, version, config hash,
    /// architecture, then every parameter tensor.
    pub fn write_checkpoint<W: Write>(&self, mut out: W, hash: &[u8; 32]) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(hash)?;
        for v in [
            self.feature_width,
            self.config.hidden_width,
            self.config.hidden_layers,
            usize::from(self.config.prev_position),
            self.params.len(),
        ] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for t in &self.params {
            out.write_all(&(t.rows as u32).to_le_bytes())?;
            out.write_all(&(t.cols as u32).to_le_bytes())?;
            for x in &t.data {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(Self, [u8; 32])> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a policy checkpoint".into()));
        }
        let version = read_u32(&mut input)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let mut hash = [0u8; 32];
        input.read_exact(&mut hash)?;
        let feature_width = read_u32(&mut input)? as usize;
        let config = PolicyConfig {
            hidden_width: read_u32(&mut input)? as usize,
            hidden_layers: read_u32(&mut input)? as usize,
            prev_position: read_u32(&mut input)? != 0,
        };
        let template = MlpPolicy::new(feature_width, config, 0)
            .map_err(|e| Error::Format(format!("bad checkpoint architecture: {e}")))?;
        let count = read_u32(&mut input)? as usize;
        if count != template.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {count} tensors, architecture needs {}",
                template.params.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for expected in &template.params {
            let rows = read_u32(&mut input)? as usize;
            let cols = read_u32(&mut input)? as usize;
            if (rows, cols) != expected.shape() {
                return Err(Error::Format(format!(
                    "tensor shape {rows}x{cols}, expected {}x{}",
                    expected.rows, expected.cols
                )));
            }
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                input.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            params.push(Tensor::new(rows, cols, data));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", rest.len())));
        }
        Ok((
            MlpPolicy {
                feature_width,
                config,
                params,
            },
            hash,
        ))
    }

    pub fn save(&self, path: &Path, hash: &[u8; 32]) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf, hash)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, [u8; 32])> {
        let bytes = std::fs::read(path)?;
        Self::read_checkpoint(bytes.as_slice())
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
