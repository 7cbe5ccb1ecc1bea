//! Loss functions: vanilla InfoNCE over in-batch negatives, the
//! group-wise peer-contrast distribution, the cooperative dual-KL loss
//! between the two peer networks, the combined training objective, and
//! the closed-form noisy-positive probability model.
//!
//! Candidate layout of every contrast distribution: indices `[0, K)` are
//! the anchor's positives in plan order, indices `[K, K+B-1)` are the
//! raw other-batch sentences in batch order skipping the anchor. All
//! similarities are cosine scaled by `1/temperature`.

use crate::augment::{AugmentedGroup, AugmentationKind};
use crate::encoder::{encode_on_tape, DropoutMode, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tape::{Tape, Var};
use crate::text::Sentence;
use serde::{Deserialize, Serialize};

/// Knobs of the contrastive objective that are not architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastSettings {
    pub temperature: f64,
    /// Encode discrete positives with dropout active (the standard
    /// training-time forward); `false` encodes them deterministically.
    pub candidate_dropout: bool,
    /// Alternative reading of the second vanilla term: the main network
    /// encodes anchors and negatives while the peer provides positives.
    /// The default reading trains the peer on its own full InfoNCE.
    pub vanilla_cross_encoder: bool,
}

impl Default for ContrastSettings {
    fn default() -> Self {
        ContrastSettings {
            temperature: 0.05,
            candidate_dropout: true,
            vanilla_cross_encoder: false,
        }
    }
}

impl ContrastSettings {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Which of the two peer networks performs a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Main,
    Peer,
}

const ROLES: [Role; 2] = [Role::Main, Role::Peer];

fn role_index(role: Role) -> usize {
    match role {
        Role::Main => 0,
        Role::Peer => 1,
    }
}

/// The two peer networks registered on one tape. In tied mode both
/// handles point at the same parameters and the "two networks" are two
/// stochastic forward passes distinguished only by their dropout masks.
#[derive(Debug, Clone, Copy)]
pub struct PeerVars {
    pub main: EncoderVars,
    pub peer: EncoderVars,
    pub tied: bool,
}

impl PeerVars {
    pub fn untied(main: EncoderVars, peer: EncoderVars) -> Self {
        PeerVars {
            main,
            peer,
            tied: false,
        }
    }

    pub fn tied(shared: EncoderVars) -> Self {
        PeerVars {
            main: shared,
            peer: shared,
            tied: true,
        }
    }

    pub fn vars(&self, role: Role) -> &EncoderVars {
        match role {
            Role::Main => &self.main,
            Role::Peer => &self.peer,
        }
    }

    /// Per-slot mask seed for a role. Untied networks share the slot
    /// seed, so the four cooperative distributions differ only through
    /// parameters; tied networks split it by role, so the two passes
    /// draw independent masks.
    fn mask_seed(&self, role: Role, base: u64) -> u64 {
        if self.tied && role == Role::Peer {
            seeds::chain(&[base, seeds::TAG_PEER_ROLE])
        } else {
            base
        }
    }
}

/// All forward passes one batch needs, per role: each sentence encoded
/// once (serving as both its own anchor and the other anchors' negative
/// candidate) and each positive slot encoded once.
pub struct BatchEncodings {
    anchors: [Vec<Var>; 2],
    positives: [Vec<Vec<Var>>; 2],
    batch_size: usize,
    k: usize,
}

impl BatchEncodings {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn anchor(&self, role: Role, i: usize) -> Var {
        self.anchors[role_index(role)][i]
    }

    pub fn positive(&self, role: Role, i: usize, slot: usize) -> Var {
        self.positives[role_index(role)][i][slot]
    }
}

/// Encode a batch under both roles.
pub fn encode_batch(
    tape: &mut Tape,
    nets: &PeerVars,
    batch: &[Sentence],
    groups: &[AugmentedGroup],
    anchor_seeds: &[u64],
    settings: &ContrastSettings,
) -> Result<BatchEncodings> {
    settings.validate()?;
    let b = batch.len();
    if b < 2 {
        return Err(Error::Contract(format!(
            "batch of {b} sentences cannot provide in-batch negatives"
        )));
    }
    if groups.len() != b || anchor_seeds.len() != b {
        return Err(Error::Contract(
            "batch, groups and anchor seeds must have equal lengths".into(),
        ));
    }
    let k = groups[0].positives.len();
    if k == 0 || groups.iter().any(|g| g.positives.len() != k) {
        return Err(Error::Contract(
            "all groups must carry the same positive count K >= 1".into(),
        ));
    }

    let mut anchors: [Vec<Var>; 2] = [Vec::with_capacity(b), Vec::with_capacity(b)];
    let mut positives: [Vec<Vec<Var>>; 2] = [Vec::with_capacity(b), Vec::with_capacity(b)];
    for role in ROLES {
        let vars = *nets.vars(role);
        for (i, sentence) in batch.iter().enumerate() {
            let seed = nets.mask_seed(role, anchor_seeds[i]);
            let a = encode_on_tape(tape, &vars, sentence, DropoutMode::Stochastic(seed))?;
            anchors[role_index(role)].push(a);

            let mut row = Vec::with_capacity(k);
            for slot in &groups[i].positives {
                let seed = nets.mask_seed(role, slot.mask_seed);
                let var = match &slot.text {
                    // DP: re-encode the anchor under a fresh mask.
                    None => encode_on_tape(tape, &vars, sentence, DropoutMode::Stochastic(seed))?,
                    Some(text) => {
                        let mode = if settings.candidate_dropout {
                            DropoutMode::Stochastic(seed)
                        } else {
                            DropoutMode::Off
                        };
                        encode_on_tape(tape, &vars, text, mode)?
                    }
                };
                row.push(var);
            }
            positives[role_index(role)].push(row);
        }
    }
    Ok(BatchEncodings {
        anchors,
        positives,
        batch_size: b,
        k,
    })
}

/// Scaled cosine logits between role `r1` anchors and role `r2`
/// candidates.
pub struct LogitFamily {
    /// `pos[i][k]`: anchor i against its k-th positive.
    pub pos: Vec<Vec<Var>>,
    /// `neg[i]`: anchor i against the other sentences, batch order,
    /// anchor skipped.
    pub neg: Vec<Vec<Var>>,
}

pub fn logit_family(
    tape: &mut Tape,
    enc: &BatchEncodings,
    r1: Role,
    r2: Role,
    temperature: f64,
) -> Result<LogitFamily> {
    let inv_t = 1.0 / temperature;
    let (b, k) = (enc.batch_size, enc.k);
    let mut pos = Vec::with_capacity(b);
    let mut neg = Vec::with_capacity(b);
    for i in 0..b {
        let anchor = enc.anchor(r1, i);
        let mut prow = Vec::with_capacity(k);
        for slot in 0..k {
            let c = tape.cosine(anchor, enc.positive(r2, i, slot))?;
            prow.push(tape.scale(c, inv_t));
        }
        pos.push(prow);
        let mut nrow = Vec::with_capacity(b - 1);
        for j in 0..b {
            if j == i {
                continue;
            }
            let c = tape.cosine(anchor, enc.anchor(r2, j))?;
            nrow.push(tape.scale(c, inv_t));
        }
        neg.push(nrow);
    }
    Ok(LogitFamily { pos, neg })
}

/// Per-anchor contrast distributions: softmax over positives then
/// negatives.
pub fn contrast_rows(tape: &mut Tape, family: &LogitFamily) -> Result<Vec<Var>> {
    family
        .pos
        .iter()
        .zip(&family.neg)
        .map(|(prow, nrow)| {
            let mut parts = prow.clone();
            parts.extend_from_slice(nrow);
            let logits = tape.concat(&parts)?;
            tape.softmax(logits)
        })
        .collect()
}

/// The cooperative loss: for each anchor,
/// `KL(p[main,main] || p[peer,peer]) + KL(p[main,peer] || p[peer,main])`,
/// averaged over the batch. The first term pushes the two networks'
/// self-views to agree; the second ties the cross-views together so the
/// peer cannot drift arbitrarily far. All four distributions share the
/// per-slot mask seeds, so they differ only through parameters.
fn cooperative_from_encodings(tape: &mut Tape, enc: &BatchEncodings, temperature: f64) -> Result<Var> {
    let fam_mm = logit_family(tape, enc, Role::Main, Role::Main, temperature)?;
    let fam_pp = logit_family(tape, enc, Role::Peer, Role::Peer, temperature)?;
    let fam_mp = logit_family(tape, enc, Role::Main, Role::Peer, temperature)?;
    let fam_pm = logit_family(tape, enc, Role::Peer, Role::Main, temperature)?;
    let rows_mm = contrast_rows(tape, &fam_mm)?;
    let rows_pp = contrast_rows(tape, &fam_pp)?;
    let rows_mp = contrast_rows(tape, &fam_mp)?;
    let rows_pm = contrast_rows(tape, &fam_pm)?;

    let mut per_anchor = Vec::with_capacity(enc.batch_size);
    for i in 0..enc.batch_size {
        let agree = tape.kl_div(rows_mm[i], rows_pp[i])?;
        let anchor_term = tape.kl_div(rows_mp[i], rows_pm[i])?;
        per_anchor.push(tape.add(agree, anchor_term)?);
    }
    let stacked = tape.concat(&per_anchor)?;
    Ok(tape.mean(stacked))
}

/// InfoNCE for one positive slot from precomputed logits: mean over
/// anchors of `logsumexp(candidates) - positive`.
fn info_nce_from_family(
    tape: &mut Tape,
    pos: &[Vec<Var>],
    neg: &[Vec<Var>],
    slot: usize,
) -> Result<Var> {
    let mut per_anchor = Vec::with_capacity(pos.len());
    for (prow, nrow) in pos.iter().zip(neg) {
        let mut parts = vec![prow[slot]];
        parts.extend_from_slice(nrow);
        let logits = tape.concat(&parts)?;
        let lse = tape.log_sum_exp(logits)?;
        let target = tape.pick(logits, 0)?;
        per_anchor.push(tape.sub(lse, target)?);
    }
    let stacked = tape.concat(&per_anchor)?;
    Ok(tape.mean(stacked))
}

/// The total loss of one batch, decomposed. The `total` node is
/// `cooperative + beta * sum(vanilla)`.
pub struct LossBreakdown {
    pub cooperative: Var,
    /// K InfoNCE terms for the main network, then K for the peer.
    pub vanilla: Vec<Var>,
    pub total: Var,
    pub beta: f64,
}

/// Loss values extracted from a breakdown, for records and metrics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub cooperative: f64,
    pub vanilla_sum: f64,
    pub beta: f64,
}

impl LossBreakdown {
    pub fn values(&self, tape: &Tape) -> LossValues {
        LossValues {
            total: tape.item(self.total),
            cooperative: tape.item(self.cooperative),
            vanilla_sum: self.vanilla.iter().map(|&v| tape.item(v)).sum(),
            beta: self.beta,
        }
    }
}

/// Assemble the full training objective for one batch.
///
/// `include_cooperative = false` drops the cooperative term (the
/// vanilla-only ablation); the vanilla sum always covers every plan slot
/// for both networks.
pub fn pcl_loss(
    tape: &mut Tape,
    nets: &PeerVars,
    batch: &[Sentence],
    groups: &[AugmentedGroup],
    anchor_seeds: &[u64],
    settings: &ContrastSettings,
    beta: f64,
    include_cooperative: bool,
) -> Result<LossBreakdown> {
    if beta < 0.0 {
        return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
    }
    let enc = encode_batch(tape, nets, batch, groups, anchor_seeds, settings)?;

    let cooperative = if include_cooperative {
        cooperative_from_encodings(tape, &enc, settings.temperature)?
    } else {
        tape.scalar_constant(0.0)
    };

    let fam_mm = logit_family(tape, &enc, Role::Main, Role::Main, settings.temperature)?;
    let mut vanilla = Vec::with_capacity(2 * enc.k);
    for slot in 0..enc.k {
        vanilla.push(info_nce_from_family(tape, &fam_mm.pos, &fam_mm.neg, slot)?);
    }
    if settings.vanilla_cross_encoder {
        let fam_mp = logit_family(tape, &enc, Role::Main, Role::Peer, settings.temperature)?;
        for slot in 0..enc.k {
            vanilla.push(info_nce_from_family(tape, &fam_mp.pos, &fam_mm.neg, slot)?);
        }
    } else {
        let fam_pp = logit_family(tape, &enc, Role::Peer, Role::Peer, settings.temperature)?;
        for slot in 0..enc.k {
            vanilla.push(info_nce_from_family(tape, &fam_pp.pos, &fam_pp.neg, slot)?);
        }
    }

    let stacked = tape.concat(&vanilla)?;
    let mean = tape.mean(stacked);
    let scaled = tape.scale(mean, beta * vanilla.len() as f64);
    let total = tape.add(cooperative, scaled)?;
    Ok(LossBreakdown {
        cooperative,
        vanilla,
        total,
        beta,
    })
}

// ── Standalone spec operations ──────────────────────────────────────────

/// Vanilla InfoNCE over embeddings already on the tape: for each anchor
/// the candidates are its positive plus the other anchors.
pub fn info_nce(
    tape: &mut Tape,
    anchors: &[Var],
    positives: &[Var],
    temperature: f64,
) -> Result<Var> {
    if temperature <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let b = anchors.len();
    if b < 2 {
        return Err(Error::Contract(format!(
            "info_nce needs at least 2 anchors for in-batch negatives, got {b}"
        )));
    }
    if positives.len() != b {
        return Err(Error::Contract(format!(
            "info_nce: {b} anchors but {} positives",
            positives.len()
        )));
    }
    let inv_t = 1.0 / temperature;
    let mut per_anchor = Vec::with_capacity(b);
    for i in 0..b {
        let mut parts = Vec::with_capacity(b);
        let c = tape.cosine(anchors[i], positives[i])?;
        parts.push(tape.scale(c, inv_t));
        for j in 0..b {
            if j == i {
                continue;
            }
            let c = tape.cosine(anchors[i], anchors[j])?;
            parts.push(tape.scale(c, inv_t));
        }
        let logits = tape.concat(&parts)?;
        let lse = tape.log_sum_exp(logits)?;
        let target = tape.pick(logits, 0)?;
        per_anchor.push(tape.sub(lse, target)?);
    }
    let stacked = tape.concat(&per_anchor)?;
    Ok(tape.mean(stacked))
}

/// Per-slot dropout seeds for a single-anchor distribution: one for the
/// anchor pass, one per in-batch negative. Positive slots carry their
/// seeds inside the [`AugmentedGroup`].
#[derive(Debug, Clone)]
pub struct SlotSeeds {
    pub anchor: u64,
    pub negatives: Vec<u64>,
}

impl SlotSeeds {
    /// Derive all slot seeds from one base seed.
    pub fn derive(base: u64, num_negatives: usize) -> Self {
        SlotSeeds {
            anchor: seeds::chain(&[base, 0]),
            negatives: (0..num_negatives as u64)
                .map(|j| seeds::chain(&[base, 1, j]))
                .collect(),
        }
    }
}

/// The group-wise probability distribution for one anchor, by value.
#[derive(Debug, Clone, Serialize)]
pub struct ContrastDistribution {
    /// Length `K + (B-1)`; positives first, in plan order.
    pub probs: Vec<f64>,
    pub num_positives: usize,
}

/// Contrast an anchor (encoded by `enc1`) against its positives and the
/// raw other-batch sentences (all encoded by `enc2`).
pub fn peer_contrast_distribution(
    anchor: &Sentence,
    group: &AugmentedGroup,
    batch_others: &[Sentence],
    enc1: &EncoderParams,
    enc2: &EncoderParams,
    temperature: f64,
    slot_seeds: &SlotSeeds,
    candidate_dropout: bool,
) -> Result<ContrastDistribution> {
    if temperature <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if batch_others.is_empty() {
        return Err(Error::Contract(
            "peer contrast needs at least one in-batch negative".into(),
        ));
    }
    if slot_seeds.negatives.len() != batch_others.len() {
        return Err(Error::Contract(
            "one negative seed per other-batch sentence required".into(),
        ));
    }
    let mut tape = Tape::new();
    let v1 = EncoderVars::register(&mut tape, enc1, false);
    let v2 = EncoderVars::register(&mut tape, enc2, false);
    let inv_t = 1.0 / temperature;

    let a = encode_on_tape(
        &mut tape,
        &v1,
        anchor,
        DropoutMode::Stochastic(slot_seeds.anchor),
    )?;
    let mut logits = Vec::with_capacity(group.positives.len() + batch_others.len());
    for slot in &group.positives {
        let var = match &slot.text {
            None => encode_on_tape(
                &mut tape,
                &v2,
                anchor,
                DropoutMode::Stochastic(slot.mask_seed),
            )?,
            Some(text) => {
                let mode = if candidate_dropout {
                    DropoutMode::Stochastic(slot.mask_seed)
                } else {
                    DropoutMode::Off
                };
                encode_on_tape(&mut tape, &v2, text, mode)?
            }
        };
        let c = tape.cosine(a, var)?;
        logits.push(tape.scale(c, inv_t));
    }
    for (other, &seed) in batch_others.iter().zip(&slot_seeds.negatives) {
        let n = encode_on_tape(&mut tape, &v2, other, DropoutMode::Stochastic(seed))?;
        let c = tape.cosine(a, n)?;
        logits.push(tape.scale(c, inv_t));
    }
    let stacked = tape.concat(&logits)?;
    let probs = tape.softmax(stacked)?;
    Ok(ContrastDistribution {
        probs: tape.value(probs).to_vec(),
        num_positives: group.positives.len(),
    })
}

/// Value-level cooperative loss for a batch (no gradients).
#[allow(clippy::too_many_arguments)]
pub fn cooperative_loss(
    batch: &[Sentence],
    groups: &[AugmentedGroup],
    theta: &EncoderParams,
    peer: &EncoderParams,
    anchor_seeds: &[u64],
    settings: &ContrastSettings,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vm = EncoderVars::register(&mut tape, theta, false);
    let vp = EncoderVars::register(&mut tape, peer, false);
    let nets = PeerVars::untied(vm, vp);
    let enc = encode_batch(&mut tape, &nets, batch, groups, anchor_seeds, settings)?;
    let coop = cooperative_from_encodings(&mut tape, &enc, settings.temperature)?;
    Ok(tape.item(coop))
}

/// Probability that at least one of `k` independent augmentations is a
/// bad positive when each is bad with probability `p`: `1 - (1-p)^k`.
pub fn prob_bad_positive(p: f64, k: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    if k == 0 {
        return Err(Error::Domain("K must be >= 1".into()));
    }
    Ok(1.0 - (1.0 - p).powi(k as i32))
}

/// Weight schedule for the vanilla term of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BetaSchedule {
    Constant(f64),
    /// Linear interpolation from `start` at step 0 to `end` at
    /// `total_steps`, constant afterwards.
    LinearAnneal {
        start: f64,
        end: f64,
        total_steps: u64,
    },
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::Constant(1.0)
    }
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaSchedule::Constant(b) if b >= 0.0 => Ok(()),
            BetaSchedule::Constant(b) => {
                Err(Error::Config(format!("beta must be >= 0, got {b}")))
            }
            BetaSchedule::LinearAnneal {
                start,
                end,
                total_steps,
            } => {
                if start < 0.0 || end < 0.0 {
                    return Err(Error::Config(format!(
                        "beta anneal endpoints must be >= 0, got {start}..{end}"
                    )));
                }
                if total_steps == 0 {
                    return Err(Error::Config("beta anneal needs total_steps >= 1".into()));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        match *self {
            BetaSchedule::Constant(b) => b,
            BetaSchedule::LinearAnneal {
                start,
                end,
                total_steps,
            } => {
                let t = (step.min(total_steps)) as f64 / total_steps as f64;
                start + (end - start) * t
            }
        }
    }
}

/// Build one augmentation-plan instance per batch sentence plus the
/// anchor pass seeds, all derived from `base_seed`.
pub fn prepare_batch(
    batch: &[Sentence],
    plan: &crate::augment::AugmentationPlan,
    base_seed: u64,
) -> (Vec<AugmentedGroup>, Vec<u64>) {
    let groups = batch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            crate::augment::apply_plan(s, plan, seeds::chain(&[base_seed, seeds::TAG_GROUPS, i as u64]))
        })
        .collect();
    let anchor_seeds = (0..batch.len() as u64)
        .map(|i| seeds::chain(&[base_seed, seeds::TAG_ANCHOR_PASS, i]))
        .collect();
    (groups, anchor_seeds)
}

/// `true` when a plan slot is the dropout strategy.
pub fn is_dropout_slot(kind: AugmentationKind) -> bool {
    matches!(kind, AugmentationKind::Dp)
}
