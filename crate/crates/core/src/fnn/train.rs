//! Mini-batch SGD with momentum on standardised data. Validation and the
//! returned weights use a running average of the iterates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::TrainingSet;
use super::net::{forward_layers, FeedForwardNet, Layer, Scaling, SplitMetrics, TrainMetrics};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_layers: usize,
    pub neurons: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub momentum: f64,
    /// Per-step factor of the weight average that is validated and kept.
    /// 0 uses the raw iterate.
    #[serde(default)]
    pub averaging: f64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            neurons: 8,
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            momentum: 0.9,
            averaging: 0.999,
            split: [0.7, 0.15, 0.15],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        let bad = |m: String| Err(Error::domain(m));
        if (sum - 1.0).abs() > 1e-9 || self.split.iter().any(|&f| f < 0.0) || self.split[0] == 0.0 {
            return bad(format!("split fractions {:?} must be nonnegative and sum to 1", self.split));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("learning rate, batch size and epochs must be positive".into());
        }
        if self.hidden_layers == 0 || self.neurons == 0 {
            return bad("the network needs at least one hidden neuron".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(0.0..1.0).contains(&self.averaging) {
            return bad(format!("averaging factor {} outside [0, 1)", self.averaging));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!(
            "{}x{} lr={} batch={}",
            self.hidden_layers, self.neurons, self.learning_rate, self.batch_size
        )
    }
}

/// Row indices of the train/validation/test parts.
pub fn split_indices(n: usize, split: [f64; 3], seed: u64) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (split[0] * n as f64).round() as usize;
    let n_val = ((split[1] * n as f64).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    [idx, val, test]
}

fn metrics(layers: &[Layer], ts: &TrainingSet, rows: &[usize]) -> SplitMetrics {
    if rows.is_empty() {
        return SplitMetrics::default();
    }
    let (mut sum, mut max) = (0.0, 0.0f64);
    for &r in rows {
        let err = (forward_layers(layers, ts.expectation[r], ts.variance[r]) - ts.target[r]).abs();
        sum += err;
        max = max.max(err);
    }
    SplitMetrics {
        mae: sum / rows.len() as f64,
        max_ae: max,
    }
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    let v = xs.map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    // Constant features still need a usable divisor.
    (m, if v > 0.0 { v.sqrt() } else { 1.0 })
}

fn check_divergence(loss: f64, layers: &[Layer], cfg: &TrainConfig, epoch: usize) -> Result<()> {
    let finite = layers
        .iter()
        .all(|l| l.weights.iter().chain(&l.biases).all(|w| w.is_finite()));
    if loss.is_finite() && finite {
        return Ok(());
    }
    Err(Error::Training(format!(
        "training diverged at epoch {epoch} for config {}",
        cfg.describe()
    )))
}

fn fold(net: &FeedForwardNet, layers: &[Layer]) -> Vec<Layer> {
    let mut n = net.clone();
    n.layers = layers.to_vec();
    n.folded_layers()
}

/// Train one network. Deterministic for a given config (including seed).
pub fn train(ts: &TrainingSet, cfg: &TrainConfig) -> Result<FeedForwardNet> {
    cfg.validate()?;
    if ts.len() < 3 {
        return Err(Error::Training("training set needs at least 3 rows".into()));
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(&ts.expectation) || !finite(&ts.variance) || !finite(&ts.target) {
        return Err(Error::domain("training set contains non-finite values".to_string()));
    }
    let [train_rows, val_rows, test_rows] = split_indices(ts.len(), cfg.split, cfg.seed);
    let val_for_stopping = if val_rows.is_empty() { &train_rows } else { &val_rows };

    let scaling = {
        let (em, es) = mean_std(train_rows.iter().map(|&r| ts.expectation[r]));
        let (vm, vs) = mean_std(train_rows.iter().map(|&r| ts.variance[r]));
        let (tm, tsd) = mean_std(train_rows.iter().map(|&r| ts.target[r]));
        Scaling {
            input_mean: [em, vm],
            input_std: [es, vs],
            output_mean: tm,
            output_std: tsd,
        }
    };
    let xs: Vec<[f64; 2]> = (0..ts.len())
        .map(|r| {
            [
                (ts.expectation[r] - scaling.input_mean[0]) / scaling.input_std[0],
                (ts.variance[r] - scaling.input_mean[1]) / scaling.input_std[1],
            ]
        })
        .collect();
    let ys: Vec<f64> = ts.target.iter().map(|t| (t - scaling.output_mean) / scaling.output_std).collect();
    // The output ReLU clips at raw zero, i.e. at this value in scaled units.
    let floor = -scaling.output_mean / scaling.output_std;

    let sizes = FeedForwardNet::shape(cfg.hidden_layers, cfg.neurons);
    let mut net = FeedForwardNet::zeros(&sizes)?;
    net.scaling = scaling;
    net.alpha = Some(ts.alpha);
    net.config = Some(*cfg);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    for l in &mut net.layers {
        let he = Normal::new(0.0, (2.0 / l.inputs as f64).sqrt()).expect("positive sd");
        for w in &mut l.weights {
            *w = he.sample(&mut rng);
        }
    }

    let nl = net.layers.len();
    let mut vel: Vec<Layer> = net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
    let mut grad: Vec<Layer> = vel.clone();
    let mut z: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut a: Vec<Vec<f64>> = z.clone();
    let mut delta: Vec<Vec<f64>> = z.clone();

    let mut best = (f64::INFINITY, net.layers.clone(), 0usize);
    let mut order = train_rows.clone();
    let mut epochs = 0;
    let mut avg = net.layers.clone();
    let mut steps = 0u64;
    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in &mut grad {
                g.weights.iter_mut().for_each(|w| *w = 0.0);
                g.biases.iter_mut().for_each(|b| *b = 0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            for &r in batch {
                a[0].copy_from_slice(&xs[r]);
                for l in 0..nl {
                    let (lo, hi) = a.split_at_mut(l + 1);
                    net.layers[l].apply(&lo[l], &mut z[l + 1]);
                    let out = &mut hi[0];
                    let clip = if l + 1 == nl { floor } else { 0.0 };
                    for (o, &zi) in out.iter_mut().zip(&z[l + 1]) {
                        *o = zi.max(clip);
                    }
                }
                let err = a[nl][0] - ys[r];
                loss += err * err;
                delta[nl][0] = if z[nl][0] > floor { 2.0 * err * scale } else { 0.0 };
                for l in (0..nl).rev() {
                    let layer = &net.layers[l];
                    let g = &mut grad[l];
                    for j in 0..layer.outputs {
                        let d = delta[l + 1][j];
                        if d == 0.0 {
                            continue;
                        }
                        g.biases[j] += d;
                        let row = &mut g.weights[j * layer.inputs..(j + 1) * layer.inputs];
                        for (gw, &ai) in row.iter_mut().zip(&a[l]) {
                            *gw += d * ai;
                        }
                    }
                    if l > 0 {
                        for k in 0..layer.inputs {
                            let mut s = 0.0;
                            for j in 0..layer.outputs {
                                s += layer.weights[j * layer.inputs + k] * delta[l + 1][j];
                            }
                            delta[l][k] = if z[l][k] > 0.0 { s } else { 0.0 };
                        }
                    }
                }
            }
            for l in 0..nl {
                let (layer, v, g) = (&mut net.layers[l], &mut vel[l], &grad[l]);
                for ((w, vw), gw) in layer.weights.iter_mut().zip(&mut v.weights).zip(&g.weights) {
                    *vw = cfg.momentum * *vw - cfg.learning_rate * gw;
                    *w += *vw;
                }
                for ((b, vb), gb) in layer.biases.iter_mut().zip(&mut v.biases).zip(&g.biases) {
                    *vb = cfg.momentum * *vb - cfg.learning_rate * gb;
                    *b += *vb;
                }
            }
            steps += 1;
            if cfg.averaging > 0.0 {
                // Short warm-up so early iterates do not dominate small runs.
                let beta = cfg.averaging.min((1.0 + steps as f64) / (10.0 + steps as f64));
                for (al, l) in avg.iter_mut().zip(&net.layers) {
                    for (x, &w) in al.weights.iter_mut().zip(&l.weights).chain(al.biases.iter_mut().zip(&l.biases)) {
                        *x = beta * *x + (1.0 - beta) * w;
                    }
                }
            }
        }
        check_divergence(loss, &net.layers, cfg, epoch)?;
        if cfg.averaging == 0.0 {
            avg.clone_from(&net.layers);
        }
        let val_mae = metrics(&fold(&net, &avg), ts, val_for_stopping).mae;
        log::debug!(
            "{} epoch {epoch}: train mse {:.3e}, validation MAE {val_mae:.4}",
            cfg.describe(),
            loss / order.len() as f64
        );
        if val_mae < best.0 {
            best = (val_mae, avg.clone(), epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    net.layers = best.1;
    let folded = net.folded_layers();
    net.metrics = Some(TrainMetrics {
        train: metrics(&folded, ts, &train_rows),
        validation: metrics(&folded, ts, &val_rows),
        test: metrics(&folded, ts, &test_rows),
        epochs,
        best_epoch: best.2,
    });
    Ok(net)
}

/// Ranges searched when choosing an architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub hidden_layers: Vec<usize>,
    pub neurons: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            hidden_layers: vec![1, 2, 3],
            neurons: vec![2, 4, 6, 8],
            learning_rates: vec![0.1, 0.01, 0.001],
            batch_sizes: vec![32, 64, 128],
        }
    }
}

impl Grid {
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &hidden_layers in &self.hidden_layers {
            for &neurons in &self.neurons {
                for &learning_rate in &self.learning_rates {
                    for &batch_size in &self.batch_sizes {
                        out.push(TrainConfig {
                            hidden_layers,
                            neurons,
                            learning_rate,
                            batch_size,
                            ..*base
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridEntry {
    pub config: TrainConfig,
    /// `None` when training diverged.
    pub metrics: Option<TrainMetrics>,
}

#[derive(Debug, Clone)]
pub struct GridSearch {
    pub entries: Vec<GridEntry>,
    pub best: usize,
    pub best_net: FeedForwardNet,
}

/// Train every grid point and keep the lowest validation MAE (first on ties).
pub fn grid_search(ts: &TrainingSet, grid: &Grid, base: &TrainConfig) -> Result<GridSearch> {
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(Error::domain("empty architecture grid".to_string()));
    }
    #[cfg(feature = "parallel")]
    let results: Vec<Result<FeedForwardNet>> = {
        use rayon::prelude::*;
        configs.par_iter().map(|c| train(ts, c)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<FeedForwardNet>> = configs.iter().map(|c| train(ts, c)).collect();

    let mut entries = Vec::with_capacity(configs.len());
    let mut best: Option<(usize, f64, FeedForwardNet)> = None;
    for (i, (config, res)) in configs.into_iter().zip(results).enumerate() {
        match res {
            Ok(net) => {
                let m = net.metrics.expect("trained nets carry metrics");
                if best.as_ref().is_none_or(|b| m.validation.mae < b.1) {
                    best = Some((i, m.validation.mae, net));
                }
                entries.push(GridEntry { config, metrics: Some(m) });
            }
            Err(Error::Training(msg)) => {
                log::warn!("{msg}");
                entries.push(GridEntry { config, metrics: None });
            }
            Err(e) => return Err(e),
        }
    }
    let (best, _, best_net) = best.ok_or_else(|| Error::Training("every grid configuration diverged".into()))?;
    Ok(GridSearch {
        entries,
        best,
        best_net,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Moments;
    use crate::fnn::data::generate_from_moments;

    #[test]
    fn split_partitions_rows() {
        let [a, b, c] = split_indices(1000, [0.7, 0.15, 0.15], 3);
        assert_eq!((a.len(), b.len(), c.len()), (700, 150, 150));
        let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
        all.sort();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            split: [0.5, 0.2, 0.2],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn constant_target_is_learned() {
        let rows: Vec<(f64, f64, f64)> = (0..400).map(|i| (i as f64, 2.0 * i as f64, 250.0)).collect();
        let ts = TrainingSet::from_rows(&rows, 0.15);
        let net = train(&ts, &TrainConfig { max_epochs: 50, ..TrainConfig::default() }).unwrap();
        assert!(net.metrics.unwrap().test.mae < 0.05, "{:?}", net.metrics);
    }

    #[test]
    fn training_is_deterministic_and_divergence_reported() {
        let parts: Vec<Moments> = (0..5)
            .map(|i| Moments { mean: 50.0 + 40.0 * i as f64, variance: 300.0 + 500.0 * i as f64 })
            .collect();
        let ts = generate_from_moments(&parts, 0.15).unwrap();
        let cfg = TrainConfig { max_epochs: 5, ..TrainConfig::default() };
        assert_eq!(train(&ts, &cfg).unwrap(), train(&ts, &cfg).unwrap());

        let layers = train(&ts, &cfg).unwrap().layers;
        assert!(check_divergence(1.0, &layers, &cfg, 3).is_ok());
        match check_divergence(f64::NAN, &layers, &cfg, 3) {
            Err(Error::Training(msg)) => assert!(msg.contains("2x8 lr=0.01 batch=32"), "{msg}"),
            other => panic!("expected divergence, got {other:?}"),
        }
        let rows = [(1.0, 1.0, f64::NAN), (2.0, 2.0, 2.0), (3.0, 3.0, 3.0)];
        assert!(train(&TrainingSet::from_rows(&rows, 0.15), &cfg).is_err());
    }

    #[test]
    fn grid_search_picks_lowest_validation_mae() {
        let parts: Vec<Moments> = (0..6)
            .map(|i| Moments { mean: 60.0 + 30.0 * i as f64, variance: 400.0 + 300.0 * i as f64 })
            .collect();
        let ts = generate_from_moments(&parts, 0.15).unwrap();
        let grid = Grid {
            hidden_layers: vec![1, 2],
            neurons: vec![2, 4],
            learning_rates: vec![0.01],
            batch_sizes: vec![32, 64],
        };
        let base = TrainConfig { max_epochs: 20, ..TrainConfig::default() };
        let gs = grid_search(&ts, &grid, &base).unwrap();
        assert_eq!(gs.entries.len(), 8);
        let oracle = gs
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.metrics.map(|m| (i, m.validation.mae)))
            .fold((usize::MAX, f64::INFINITY), |acc, (i, m)| if m < acc.1 { (i, m) } else { acc });
        assert_eq!(gs.best, oracle.0);
        assert_eq!(gs.best_net.config.unwrap(), gs.entries[gs.best].config);
        // Independent retraining of the winner gives the same network.
        assert_eq!(train(&ts, &gs.entries[gs.best].config).unwrap(), gs.best_net);
    }
}
