//! Mini-batch training loop with Adam, beta scheduling, periodic dev
//! evaluation with keep-best checkpointing, and the ablation modes.

use crate::augment::{AugmentationKind, AugmentationPlan};
use crate::encoder::{init_params, EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::evaluate_sts;
use crate::objectives::{
    pcl_loss, prepare_batch, BetaSchedule, ContrastSettings, LossValues, PeerVars,
};
use crate::optim::{adam_step, AdamHyper, AdamState};
use crate::seeds;
use crate::tape::Tape;
use crate::text::{Sentence, SimilarityPair};
use crate::{checkpoint, encoder::EncoderVars};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Which loss the loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrainMode {
    /// Cooperative term plus vanilla contrast over the full plan.
    Full,
    /// Vanilla contrast only (no peer-network cooperation).
    NoPeerCooperation,
    /// Full objective restricted to a single dropout positive
    /// (no peer-positive contrast).
    NoPeerContrast,
    /// Full objective with one DP slot and a single repeated strategy.
    Mono(AugmentationKind),
}

impl TrainMode {
    pub fn label(&self) -> String {
        match self {
            TrainMode::Full => "full".into(),
            TrainMode::NoPeerCooperation => "nop".into(),
            TrainMode::NoPeerContrast => "noc".into(),
            TrainMode::Mono(kind) => format!("mono:{}", kind.label().to_lowercase()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub temperature: f64,
    pub dropout_rate: f64,
    /// Number of positives per anchor; ignored when `plan` is given.
    pub k: usize,
    /// Explicit plan; when `None` the diversity-first default for `k`
    /// applies (subject to `mode`).
    pub plan: Option<AugmentationPlan>,
    pub wr_ratio: f64,
    pub wd_ratio: f64,
    pub beta: BetaSchedule,
    pub tied: bool,
    pub fixed_peer: bool,
    pub fixed_peer_checkpoint: Option<PathBuf>,
    pub mode: TrainMode,
    pub eval_every: u64,
    pub seed: u64,
    pub d_embed: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub candidate_dropout: bool,
    pub vanilla_cross_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            steps: 500,
            learning_rate: 3e-3,
            temperature: 0.05,
            dropout_rate: 0.1,
            k: 9,
            plan: None,
            wr_ratio: 0.2,
            wd_ratio: 0.2,
            beta: BetaSchedule::Constant(1.0),
            tied: false,
            fixed_peer: false,
            fixed_peer_checkpoint: None,
            mode: TrainMode::Full,
            eval_every: 125,
            seed: 42,
            d_embed: 64,
            d_hidden: 128,
            d_out: 64,
            candidate_dropout: true,
            vanilla_cross_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be >= 2 (in-batch negatives need peers)".into(),
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must be in [0, 1)".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if let Some(plan) = &self.plan {
            if plan.k() != self.k {
                return Err(Error::Config(format!(
                    "plan has {} slots but k = {}",
                    plan.k(),
                    self.k
                )));
            }
        }
        if self.tied && self.fixed_peer {
            return Err(Error::Config(
                "tied and fixed_peer are mutually exclusive".into(),
            ));
        }
        self.beta.validate()?;
        self.dims().validate_without_vocab()
    }

    fn dims(&self) -> DimSpec {
        DimSpec {
            d_embed: self.d_embed,
            d_hidden: self.d_hidden,
            d_out: self.d_out,
        }
    }

    pub fn encoder_dims(&self, vocab: usize) -> EncoderDims {
        EncoderDims {
            vocab,
            d_embed: self.d_embed,
            d_hidden: self.d_hidden,
            d_out: self.d_out,
        }
    }

    /// The plan the configured mode actually trains with.
    pub fn effective_plan(&self) -> Result<AugmentationPlan> {
        match self.mode {
            TrainMode::NoPeerContrast => {
                // Single dropout positive; K forced to 1.
                AugmentationPlan::new(vec![AugmentationKind::Dp])
            }
            TrainMode::Mono(kind) => AugmentationPlan::mono(kind, self.k),
            TrainMode::Full | TrainMode::NoPeerCooperation => match &self.plan {
                Some(p) => Ok(p.clone()),
                None => AugmentationPlan::default_for_k(self.k, self.wr_ratio, self.wd_ratio),
            },
        }
    }

    /// Whether the configured mode keeps the cooperative term.
    pub fn include_cooperative(&self) -> bool {
        !matches!(self.mode, TrainMode::NoPeerCooperation)
    }

    pub fn contrast_settings(&self) -> ContrastSettings {
        ContrastSettings {
            temperature: self.temperature,
            candidate_dropout: self.candidate_dropout,
            vanilla_cross_encoder: self.vanilla_cross_encoder,
        }
    }
}

struct DimSpec {
    d_embed: usize,
    d_hidden: usize,
    d_out: usize,
}

impl DimSpec {
    fn validate_without_vocab(&self) -> Result<()> {
        for (name, v) in [
            ("d_embed", self.d_embed),
            ("d_hidden", self.d_hidden),
            ("d_out", self.d_out),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One dev-evaluation point of a run. Losses are means over the window
/// of steps since the previous point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub total_loss: f64,
    pub cooperative_loss: f64,
    pub vanilla_loss: f64,
    pub dev_spearman: f64,
    /// KL floor clamps observed in the window (diagnostic; normally 0).
    pub kl_clamp_events: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainingRecord {
    pub points: Vec<EvalPoint>,
    pub best_step: Option<u64>,
    pub best_dev: Option<f64>,
}

impl TrainingRecord {
    /// One JSON object per eval point, newline separated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&serde_json::to_string(p).expect("points serialize"));
            out.push('\n');
        }
        out
    }
}

pub struct TrainOutput {
    /// Main network at the best dev score (initial parameters when the
    /// run had no evaluation points).
    pub theta: EncoderParams,
    pub peer: EncoderParams,
    pub record: TrainingRecord,
}

#[derive(Default)]
struct LossWindow {
    total: f64,
    cooperative: f64,
    vanilla: f64,
    clamps: u64,
    n: u64,
}

impl LossWindow {
    fn push(&mut self, v: &LossValues, clamps: u64) {
        self.total += v.total;
        self.cooperative += v.cooperative;
        self.vanilla += v.vanilla_sum;
        self.clamps += clamps;
        self.n += 1;
    }

    fn drain(&mut self) -> (f64, f64, f64, u64) {
        let n = self.n.max(1) as f64;
        let out = (
            self.total / n,
            self.cooperative / n,
            self.vanilla / n,
            self.clamps,
        );
        *self = LossWindow::default();
        out
    }
}

fn init_peer(cfg: &TrainConfig, dims: EncoderDims) -> Result<EncoderParams> {
    if cfg.fixed_peer {
        if let Some(path) = &cfg.fixed_peer_checkpoint {
            let (theta, _peer, meta) = checkpoint::load_checkpoint(path)?;
            checkpoint::expect_dims(&meta, dims)?;
            let mut peer = theta;
            peer.dropout_rate = cfg.dropout_rate;
            return Ok(peer);
        }
    }
    init_params(
        dims,
        cfg.dropout_rate,
        seeds::chain(&[cfg.seed, seeds::TAG_PEER_INIT]),
    )
}

/// Train on a corpus, evaluating on dev pairs every `eval_every` steps
/// and keeping the best-dev snapshot. Fully deterministic per config.
pub fn train(
    corpus: &[Sentence],
    dev_pairs: &[SimilarityPair],
    vocab_size: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if corpus.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "corpus of {} sentences is smaller than batch_size {}",
            corpus.len(),
            cfg.batch_size
        )));
    }
    if dev_pairs.is_empty() {
        return Err(Error::Config("dev pair set is empty".into()));
    }
    let dims = cfg.encoder_dims(vocab_size);
    let plan = cfg.effective_plan()?;
    let settings = cfg.contrast_settings();

    let mut theta = init_params(
        dims,
        cfg.dropout_rate,
        seeds::chain(&[cfg.seed, seeds::TAG_THETA_INIT]),
    )?;
    let mut peer = if cfg.tied {
        theta.clone()
    } else {
        init_peer(cfg, dims)?
    };

    let hyper = AdamHyper::with_lr(cfg.learning_rate);
    let mut theta_state = AdamState::for_params(&theta.tensors());
    let mut peer_state = AdamState::for_params(&peer.tensors());

    let mut order_rng = seeds::rng(seeds::chain(&[cfg.seed, seeds::TAG_BATCH_ORDER]));
    let mut deck: Vec<usize> = Vec::new();

    let mut record = TrainingRecord::default();
    let mut window = LossWindow::default();
    let mut best: Option<(f64, u64, EncoderParams, EncoderParams)> = None;

    for step in 0..cfg.steps {
        if deck.len() < cfg.batch_size {
            let mut fresh: Vec<usize> = (0..corpus.len()).collect();
            fresh.shuffle(&mut order_rng);
            deck.extend(fresh);
        }
        let batch: Vec<Sentence> = deck
            .drain(..cfg.batch_size)
            .map(|i| corpus[i].clone())
            .collect();

        let step_seed = seeds::chain(&[cfg.seed, 0x57e9, step]);
        let (groups, anchor_seeds) = prepare_batch(&batch, &plan, step_seed);

        let mut tape = Tape::new();
        let theta_vars = EncoderVars::register(&mut tape, &theta, true);
        let nets = if cfg.tied {
            PeerVars::tied(theta_vars)
        } else {
            let peer_vars = EncoderVars::register(&mut tape, &peer, !cfg.fixed_peer);
            PeerVars::untied(theta_vars, peer_vars)
        };

        let beta = cfg.beta.value(step);
        let breakdown = pcl_loss(
            &mut tape,
            &nets,
            &batch,
            &groups,
            &anchor_seeds,
            &settings,
            beta,
            cfg.include_cooperative(),
        )?;
        let values = breakdown.values(&tape);
        tape.backward(breakdown.total)?;

        let theta_grads = tape.gradients(&theta_vars.var_list());
        adam_step(&mut theta.tensors_mut(), &theta_grads, &mut theta_state, hyper)?;
        if cfg.tied {
            peer = theta.clone();
        } else if !cfg.fixed_peer {
            let peer_grads = tape.gradients(&nets.peer.var_list());
            adam_step(&mut peer.tensors_mut(), &peer_grads, &mut peer_state, hyper)?;
        }

        window.push(&values, tape.kl_clamp_events());

        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            let dev = evaluate_sts(&theta, dev_pairs)?.score()?;
            let (total, coop, vanilla, clamps) = window.drain();
            record.points.push(EvalPoint {
                step: done,
                total_loss: total,
                cooperative_loss: coop,
                vanilla_loss: vanilla,
                dev_spearman: dev,
                kl_clamp_events: clamps,
            });
            let improved = best.as_ref().map_or(true, |(b, _, _, _)| dev > *b);
            if improved {
                best = Some((dev, done, theta.clone(), peer.clone()));
            }
        }
    }

    let (theta, peer) = match &best {
        Some((dev, step, t, p)) => {
            record.best_dev = Some(*dev);
            record.best_step = Some(*step);
            (t.clone(), p.clone())
        }
        None => (theta, peer),
    };
    Ok(TrainOutput {
        theta,
        peer,
        record,
    })
}

/// Short stable hash of a config echo, recorded in checkpoints so a
/// checkpoint can be matched to the run that produced it.
pub fn config_hash(echo: &str) -> String {
    // FNV-1a, 64-bit.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in echo.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{h:016x}")
}

/// Re-evaluate a parameter set on pairs; convenience for keep-best
/// verification against a reloaded checkpoint.
pub fn dev_score(theta: &EncoderParams, pairs: &[SimilarityPair]) -> Result<f64> {
    evaluate_sts(theta, pairs)?.score()
}

/// Sum of elementwise absolute differences between two parameter sets;
/// zero iff they are bitwise identical (no NaNs arise in training).
pub fn param_distance(a: &EncoderParams, b: &EncoderParams) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors().iter())
        .map(|(ta, tb)| {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
        })
        .sum()
}
