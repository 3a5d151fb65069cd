//! Alternating sampler/recommender training, the baseline samplers, the
//! Monte-Carlo lower-bound estimate and the gradient-variance probe.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::alias::AliasTable;
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::graph::InteractionGraph;
use crate::optim::{Adam, AdamConfig};
use crate::recommender::{RecommenderModel, DEFAULT_DIM};
use crate::rng::{self, Purpose};
use crate::sampler::{SampleBatch, SamplerConfig, SamplerModel, DEFAULT_MAX_SWEEPS, DEFAULT_RHO_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    CoSam,
    Uniform,
    Popularity,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::CoSam => "cosam",
            SamplerKind::Uniform => "uniform",
            SamplerKind::Popularity => "pop",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cosam" => Ok(SamplerKind::CoSam),
            "uniform" => Ok(SamplerKind::Uniform),
            "pop" | "popularity" => Ok(SamplerKind::Popularity),
            other => Err(Error::Config(format!("unknown sampler {other:?} (expected cosam, uniform or pop)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Users per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub sampler_config: SamplerConfig,
    /// Popularity exponent, used by the `pop` sampler only.
    pub alpha: f64,
    pub dim: usize,
    pub lr: f64,
    pub sampler_lr: f64,
    pub lambda: f64,
    /// Evaluate on the test split every this many epochs; 0 disables.
    pub eval_every: usize,
    /// Number of leading epochs that update the sampler; `None` means all.
    pub sampler_epochs: Option<usize>,
    /// Write wall time into the log; when off the column reads `NA`.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            seed: 42,
            sampler: SamplerKind::CoSam,
            sampler_config: SamplerConfig::default(),
            alpha: 0.75,
            dim: DEFAULT_DIM,
            lr: 0.01,
            sampler_lr: 0.01,
            lambda: 1e-5,
            eval_every: 10,
            sampler_epochs: None,
            timing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler_config.validate()?;
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be >= 0");
        }
        if self.dim < 1 {
            return bad("dim must be >= 1");
        }
        if !(self.lr > 0.0) || !(self.sampler_lr > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        Ok(())
    }
}

/// Item popularity sampler, `p(i) ∝ deg(i)^alpha` over train degrees.
#[derive(Debug, Clone)]
pub struct PopularitySampler {
    m: usize,
    table: Option<AliasTable>,
}

impl PopularitySampler {
    pub fn new(graph: &InteractionGraph, alpha: f64) -> Result<Self> {
        let degrees: Vec<usize> = (0..graph.n_items() as u32).map(|i| graph.item_degree(i)).collect();
        Self::from_degrees(&degrees, alpha)
    }

    /// `0^0` counts as 1, so `alpha = 0` is uniform.
    pub fn from_degrees(degrees: &[usize], alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
        }
        let w: Vec<f64> = degrees.iter().map(|&d| (d as f64).powf(alpha)).collect();
        Ok(PopularitySampler { m: degrees.len(), table: AliasTable::new(&w) })
    }

    pub fn probability(&self, i: u32) -> f64 {
        match &self.table {
            Some(t) => t.probability(i as usize),
            None => 1.0 / self.m as f64,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match &self.table {
            Some(t) => t.sample(rng) as u32,
            None => rng.random_range(0..self.m as u32),
        }
    }
}

/// `n_u` uniform draws over all items.
pub fn uniform_sample<R: Rng + ?Sized>(graph: &InteractionGraph, u: u32, n_u: usize, rng: &mut R) -> SampleBatch {
    let m = graph.n_items() as u32;
    let items = (0..n_u).map(|_| rng.random_range(0..m)).collect();
    SampleBatch::new(graph, u, items, Vec::new())
}

/// `n_u` draws from the popularity distribution.
pub fn popularity_sample<R: Rng + ?Sized>(
    graph: &InteractionGraph,
    pop: &PopularitySampler,
    u: u32,
    n_u: usize,
    rng: &mut R,
) -> SampleBatch {
    let items = (0..n_u).map(|_| pop.sample(rng)).collect();
    SampleBatch::new(graph, u, items, Vec::new())
}

/// Source of candidate sets.
#[derive(Debug, Clone, Copy)]
pub enum Drawer<'a> {
    CoSam(&'a SamplerModel),
    Uniform,
    Popularity(&'a PopularitySampler),
}

impl Drawer<'_> {
    /// Candidate set for `u`; baselines use the same `N_u` rule as the walk sampler.
    pub fn draw<R: Rng + ?Sized>(&self, graph: &InteractionGraph, u: u32, multiplier: f64, rng: &mut R) -> SampleBatch {
        let n_u = ((multiplier * graph.user_degree(u) as f64).round() as usize).max(1);
        match self {
            Drawer::CoSam(s) => s.draw_candidate_set(graph, u, rng),
            Drawer::Uniform => uniform_sample(graph, u, n_u, rng),
            Drawer::Popularity(p) => popularity_sample(graph, p, u, n_u, rng),
        }
    }

    /// `p_s(· | u)` as a dense vector.
    pub fn distribution(&self, graph: &InteractionGraph, u: u32) -> Vec<f64> {
        let m = graph.n_items();
        match self {
            Drawer::CoSam(s) => {
                s.exact_rho(graph, u, DEFAULT_RHO_TOL, DEFAULT_MAX_SWEEPS)
                    .expect("user id in range")
                    .rho
            }
            Drawer::Uniform => vec![1.0 / m as f64; m],
            Drawer::Popularity(p) => (0..m as u32).map(|i| p.probability(i)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub pre5: f64,
    pub rec5: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sum of the mini-batch objectives, each taken before its update.
    pub objective: f64,
    pub seconds: Option<f64>,
    pub metrics: Option<EpochMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Draw,
    RecommenderUpdate,
    SamplerUpdate,
}

/// One step of the alternating loop, tagged with the sampler version
/// (number of sampler updates applied so far) it saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainEvent {
    pub epoch: usize,
    pub batch: usize,
    pub stage: Stage,
    pub sampler_version: u64,
}

pub const LOG_HEADER: &str = "epoch,objective,seconds,pre5,rec5,ndcg";

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: TrainConfig,
    /// Absent for the baseline samplers.
    pub sampler: Option<SamplerModel>,
    pub recommender: RecommenderModel,
    pub log: Vec<EpochRecord>,
    pub events: Vec<TrainEvent>,
    pub threads: usize,
    popularity: Option<PopularitySampler>,
}

impl TrainedModel {
    /// Wraps loaded models; the popularity table is rebuilt from `graph`.
    pub fn from_parts(
        config: TrainConfig,
        sampler: Option<SamplerModel>,
        recommender: RecommenderModel,
        graph: &InteractionGraph,
    ) -> Result<Self> {
        let popularity = match config.sampler {
            SamplerKind::Popularity => Some(PopularitySampler::new(graph, config.alpha)?),
            _ => None,
        };
        if (config.sampler == SamplerKind::CoSam) != sampler.is_some() {
            return Err(Error::InvalidParameter(format!(
                "sampler kind {} does not match the presence of sampler parameters",
                config.sampler
            )));
        }
        Ok(TrainedModel {
            config,
            sampler,
            recommender,
            log: Vec::new(),
            events: Vec::new(),
            threads: rayon::current_num_threads(),
            popularity,
        })
    }

    pub fn drawer(&self) -> Drawer<'_> {
        match (self.config.sampler, &self.sampler, &self.popularity) {
            (SamplerKind::CoSam, Some(s), _) => Drawer::CoSam(s),
            (SamplerKind::Popularity, _, Some(p)) => Drawer::Popularity(p),
            _ => Drawer::Uniform,
        }
    }

    /// Prediction scores of `u` over all items: `rho_u * f_r` with a
    /// sampler, `f_r` alone without.
    pub fn scores(&self, graph: &InteractionGraph, u: u32) -> Vec<f64> {
        let fr = self.recommender.predict_user(u);
        match &self.sampler {
            Some(s) => {
                let rho = s
                    .exact_rho(graph, u, DEFAULT_RHO_TOL, DEFAULT_MAX_SWEEPS)
                    .expect("user id in range")
                    .rho;
                rho.iter().zip(&fr).map(|(&r, &f)| eval::integrated_score(r, f)).collect()
            }
            None => fr,
        }
    }

    pub fn evaluate(&self, graph: &InteractionGraph, test_by_user: &[Vec<u32>], ks: &[usize], per_user: bool) -> EvalReport {
        eval::evaluate(graph, test_by_user, ks, per_user, |u| self.scores(graph, u))
    }

    pub fn log_csv(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for r in &self.log {
            let secs = r.seconds.map_or_else(|| "NA".to_string(), |s| format!("{s:.3}"));
            let metrics = r
                .metrics
                .map_or_else(|| ",,".to_string(), |m| format!("{},{},{}", m.pre5, m.rec5, m.ndcg));
            out.push_str(&format!("{},{},{secs},{metrics}\n", r.epoch, r.objective));
        }
        out
    }
}

/// Users with at least one train positive.
fn train_users(graph: &InteractionGraph) -> Vec<u32> {
    (0..graph.n_users() as u32).filter(|&u| graph.user_degree(u) > 0).collect()
}

fn draw_all(drawer: Drawer<'_>, graph: &InteractionGraph, users: &[u32], multiplier: f64, seed: u64, purpose: Purpose, epoch: u32) -> Vec<SampleBatch> {
    users
        .par_iter()
        .map(|&u| drawer.draw(graph, u, multiplier, &mut rng::stream(seed, purpose, epoch, u)))
        .collect()
}

/// Runs the alternating loop: per mini-batch, draw candidate sets, ascend
/// the recommender objective, then (CoSam only) score the draws with the
/// updated recommender and ascend the sampler's policy gradient.
pub fn train(split: &SplitDataset, config: &TrainConfig) -> Result<TrainedModel> {
    train_observed(split, config, |_, _| {})
}

/// [`train`], calling `observe(model, graph)` after every epoch.
pub fn train_observed<F>(split: &SplitDataset, config: &TrainConfig, mut observe: F) -> Result<TrainedModel>
where
    F: FnMut(&TrainedModel, &InteractionGraph),
{
    config.validate()?;
    let graph = InteractionGraph::from_pairs(split.n, split.m, &split.train)?;
    let test = split.test_by_user();
    let recommender = RecommenderModel::init(split.n, split.m, config.dim, config.seed)?;
    let sampler = match config.sampler {
        SamplerKind::CoSam => Some(SamplerModel::new(&graph, config.sampler_config)?),
        _ => None,
    };
    let mut model = TrainedModel::from_parts(config.clone(), sampler, recommender, &graph)?;
    let mut rec_adam = Adam::new(model.recommender.params().len(), AdamConfig::with_lr(config.lr));
    let mut sampler_adam = Adam::new(graph.directed_edge_count(), AdamConfig::with_lr(config.sampler_lr));
    let users = train_users(&graph);
    let multiplier = config.sampler_config.candidate_multiplier;
    let mut version = 0u64;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut order = users.clone();
        order.shuffle(&mut rng::global(config.seed, Purpose::Shuffle, epoch as u32));
        let update_sampler = config.sampler_epochs.is_none_or(|k| epoch < k);
        let mut objective = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let event = |stage, version| TrainEvent { epoch, batch: b, stage, sampler_version: version };
            let batches = draw_all(model.drawer(), &graph, chunk, multiplier, config.seed, Purpose::Sample, epoch as u32);
            model.events.push(event(Stage::Draw, version));

            let obj = model.recommender.objective(&graph, &batches, config.lambda);
            if !obj.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            objective += obj;
            let grad = model.recommender.gradient(&graph, &batches, config.lambda);
            rec_adam.ascend(model.recommender.params_mut(), &grad);
            if model.recommender.params().iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            model.events.push(event(Stage::RecommenderUpdate, version));

            if let (Some(s), true) = (model.sampler.as_mut(), update_sampler) {
                let rec = &model.recommender;
                let rewards: Vec<Vec<f64>> = batches.par_iter().map(|b| rec.batch_rewards(b)).collect();
                let g = s.policy_gradient(&graph, &batches, &rewards);
                s.apply_gradient(&graph, &g, &mut sampler_adam);
                if s.logits().iter().any(|x| !x.is_finite()) {
                    return Err(Error::Diverged { epoch, batch: b });
                }
                version += 1;
                model.events.push(event(Stage::SamplerUpdate, version));
            }
        }
        let seconds = started.elapsed().as_secs_f64();
        let metrics = (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0).then(|| {
            let rep = model.evaluate(&graph, &test, &[5], false);
            EpochMetrics { pre5: rep.precision[0], rec5: rep.recall[0], ndcg: rep.ndcg }
        });
        log::info!(
            "epoch {:>3}  objective {:.4}  {:.2}s{}",
            epoch + 1,
            objective,
            seconds,
            metrics.map_or(String::new(), |m| format!("  pre@5 {:.4}  rec@5 {:.4}  ndcg {:.4}", m.pre5, m.rec5, m.ndcg))
        );
        model.log.push(EpochRecord {
            epoch: epoch + 1,
            objective,
            seconds: config.timing.then_some(seconds),
            metrics,
        });
        observe(&model, &graph);
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of
/// `sum_u [ sum_{i in X_u} (log p_s(i|u) + log f_r(u,i)) + N_u E_{p_s}[(1 - x) log(1 - f_r)] ]`
/// over train users, with `sample_count` draws from `p_s(·|u)` per user.
pub fn lower_bound_estimate(
    drawer: Drawer<'_>,
    recommender: &RecommenderModel,
    graph: &InteractionGraph,
    multiplier: f64,
    sample_count: usize,
    seed: u64,
) -> Result<BoundEstimate> {
    if sample_count == 0 {
        return Err(Error::InvalidParameter("sample_count must be >= 1".into()));
    }
    let users = train_users(graph);
    let parts: Vec<(f64, f64)> = users
        .par_iter()
        .map(|&u| {
            let ps = drawer.distribution(graph, u);
            let table = AliasTable::new(&ps).expect("a sampling distribution has positive mass");
            let positives = graph.user_items(u);
            let fixed: f64 = positives
                .iter()
                .map(|&i| ps[i as usize].ln() + recommender.predict_fr(u, i).expect("ids in range").ln())
                .sum();
            let n_u = ((multiplier * positives.len() as f64).round()).max(1.0);
            let mut r = rng::stream(seed, Purpose::Bound, 0, u);
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..sample_count {
                let i = table.sample(&mut r) as u32;
                let e = recommender.reward(graph, u, i);
                sum += e;
                sq += e * e;
            }
            let s = sample_count as f64;
            let mean = sum / s;
            let var = if sample_count > 1 { (sq - s * mean * mean).max(0.0) / (s - 1.0) } else { 0.0 };
            (fixed + n_u * mean, n_u * n_u * var / s)
        })
        .collect();
    let value = parts.iter().map(|p| p.0).sum();
    let std_error = parts.iter().map(|p| p.1).sum::<f64>().sqrt();
    Ok(BoundEstimate { value, std_error })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    pub repeats: usize,
    pub batch_size: usize,
    /// Mean over coordinates of the variance of the unit-normalized
    /// recommender gradient across repeats.
    pub gradient_variance: f64,
    /// Mean of `-log(1 - f_r)` over sampled non-positive items.
    pub mean_sampled_loss: f64,
}

/// Draws `repeats` independent mini-batches of `batch_size` users and
/// summarizes the recommender gradient (without regularization) and the
/// per-instance loss of the sampled negatives.
pub fn variance_probe(
    drawer: Drawer<'_>,
    recommender: &RecommenderModel,
    graph: &InteractionGraph,
    multiplier: f64,
    repeats: usize,
    batch_size: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if batch_size == 0 {
        return Err(Error::InvalidParameter("probe batch size must be >= 1".into()));
    }
    if repeats < 2 {
        return Err(Error::InvalidParameter("probe needs at least 2 repeats".into()));
    }
    let users = train_users(graph);
    let take = batch_size.min(users.len());
    let dim = recommender.params().len();
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    for r in 0..repeats {
        let mut pick = rng::global(seed, Purpose::Probe, r as u32);
        let chosen: Vec<u32> = rand::seq::index::sample(&mut pick, users.len(), take)
            .into_iter()
            .map(|k| users[k])
            .collect();
        let batches = draw_all(drawer, graph, &chosen, multiplier, seed, Purpose::Probe, r as u32);
        for b in &batches {
            for i in b.rest_part() {
                loss_sum -= (1.0 - recommender.predict_fr(b.user, i)?).ln();
                loss_count += 1;
            }
        }
        let mut g = recommender.gradient(graph, &batches, 0.0);
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            g.iter_mut().for_each(|x| *x /= norm);
        }
        let k = (r + 1) as f64;
        for ((mu, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(&g) {
            let delta = x - *mu;
            *mu += delta / k;
            *s += delta * (x - *mu);
        }
    }
    let gradient_variance = m2.iter().sum::<f64>() / (repeats - 1) as f64 / dim as f64;
    Ok(ProbeReport {
        repeats,
        batch_size: take,
        gradient_variance,
        mean_sampled_loss: if loss_count == 0 { 0.0 } else { loss_sum / loss_count as f64 },
    })
}
