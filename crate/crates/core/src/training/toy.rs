//! A miniature image-conditioned autoregressive model, small enough to train
//! on a CPU in seconds, used to exercise the masked objective end to end.
//!
//! The encoder maps image features to a hidden vector. The decoder predicts
//! each token from the previous token's embedding, the running mean of all
//! embeddings so far, and the image vector, through one tanh layer.

use std::collections::HashMap;
use std::io::Cursor;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Schedule, Scope, Stage, StageConfig};
use crate::dataset::{Provenance, VQARecord};
use crate::domain::LocationVocabulary;
use crate::seed::{keyed_rng, stable_hash};
use crate::text::fold;

pub const BOS: u32 = 0;
pub const UNK: u32 = 1;
const FEATURE_SIDE: u32 = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainingError {
    #[error("sample {0}: empty target")]
    EmptyTarget(String),
    #[error("record {0}: stage-2 samples need an expert-corrected record with a rationale")]
    NotCorrected(String),
    #[error("image: {0}")]
    Image(String),
    #[error("sample {0}: does not fit the model dimensions")]
    Shape(String),
    #[error("loss became NaN in epoch {epoch}")]
    Diverged { epoch: usize, trace: Box<TrainingTrace> },
}

/// Word-level vocabulary over folded text; CJK text is split per character.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

fn pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in fold(text).split_whitespace() {
        if w.chars().any(|c| ('\u{4E00}'..='\u{9FFF}').contains(&c)) {
            out.extend(w.chars().map(String::from));
        } else {
            out.push(w.to_string());
        }
    }
    out
}

impl Tokenizer {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut t = Tokenizer { words: vec!["<bos>".into(), "<unk>".into()], index: HashMap::new() };
        for text in texts {
            for p in pieces(text) {
                if !t.words.contains(&p) {
                    t.words.push(p);
                }
            }
        }
        t.reindex();
        t
    }

    fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        if self.index.len() != self.words.len() {
            let mut t = self.clone();
            t.reindex();
            return t.encode(text);
        }
        pieces(text).iter().map(|p| self.index.get(p).copied().unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, tokens: &[u32]) -> Vec<&str> {
        tokens.iter().map(|&t| self.words.get(t as usize).map_or("<unk>", String::as_str)).collect()
    }
}

/// Grayscale 4x4 thumbnail in [0, 1], row-major.
pub fn image_features(bytes: &[u8]) -> Result<Vec<f64>, TrainingError> {
    let img = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| TrainingError::Image(e.to_string()))?
        .decode()
        .map_err(|e| TrainingError::Image(e.to_string()))?;
    let small = image::imageops::thumbnail(&img.to_luma8(), FEATURE_SIDE, FEATURE_SIDE);
    let small = image::imageops::resize(&small, FEATURE_SIDE, FEATURE_SIDE, image::imageops::FilterType::Triangle);
    Ok(small.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub sample_id: String,
    pub image_features: Vec<f64>,
    pub prompt: Vec<u32>,
    pub answer: Vec<u32>,
    #[serde(default)]
    pub rationale: Vec<u32>,
    #[serde(default)]
    pub locations: Vec<u32>,
}

impl TrainingSample {
    /// Supervised span: the answer in stage 1; answer, rationale and locations in stage 2.
    pub fn target(&self, stage: Stage) -> Vec<u32> {
        match stage {
            Stage::One => self.answer.clone(),
            Stage::Two => [&self.answer[..], &self.rationale, &self.locations].concat(),
        }
    }

    pub fn from_record(
        record: &VQARecord,
        image: &[u8],
        stage: Stage,
        tokenizer: &Tokenizer,
        vocabulary: &LocationVocabulary,
    ) -> Result<Self, TrainingError> {
        let mut sample = TrainingSample {
            sample_id: record.record_id.clone(),
            image_features: image_features(image)?,
            prompt: tokenizer.encode(&record.question),
            answer: tokenizer.encode(&record.answer.to_string()),
            rationale: Vec::new(),
            locations: Vec::new(),
        };
        if stage == Stage::Two {
            let rationale = record.rationale.as_deref().filter(|_| record.provenance == Provenance::ExpertCorrected);
            let rationale = rationale.ok_or_else(|| TrainingError::NotCorrected(record.record_id.clone()))?;
            sample.rationale = tokenizer.encode(rationale);
            if let Some(locs) = &record.locations {
                sample.locations = tokenizer.encode(&vocabulary.describe(*locs, record.language).join(" "));
            }
        }
        if sample.target(stage).is_empty() {
            return Err(TrainingError::EmptyTarget(sample.sample_id));
        }
        Ok(sample)
    }
}

/// Anything that can score a token sequence position by position.
pub trait TokenModel {
    fn vocab_size(&self) -> usize;
    /// Log-probabilities over the vocabulary for every position of `tokens`,
    /// each conditioned on the image and the tokens before it.
    fn log_probs(&self, image: &[f64], tokens: &[u32]) -> Vec<Vec<f64>>;
}

/// Mean negative log-likelihood of (possibly soft) labels over masked-in
/// positions. Terms with zero label weight are skipped, so a model that
/// assigns `-inf` to non-target tokens is fine.
pub fn masked_nll(log_probs: &[Vec<f64>], labels: &[Vec<f64>], mask: &[bool]) -> f64 {
    let n = mask.iter().filter(|&&m| m).count();
    let mut total = 0.0;
    for ((lp, y), &m) in log_probs.iter().zip(labels).zip(mask) {
        if !m {
            continue;
        }
        for (l, w) in lp.iter().zip(y) {
            if *w != 0.0 {
                total -= w * l;
            }
        }
    }
    total / n as f64
}

fn one_hot(tokens: &[u32], vocab: usize) -> Vec<Vec<f64>> {
    tokens
        .iter()
        .map(|&t| {
            let mut v = vec![0.0; vocab];
            v[t as usize] = 1.0;
            v
        })
        .collect()
}

fn sequence(sample: &TrainingSample, stage: Stage) -> Result<(Vec<u32>, Vec<bool>), TrainingError> {
    let target = sample.target(stage);
    if target.is_empty() {
        return Err(TrainingError::EmptyTarget(sample.sample_id.clone()));
    }
    let tokens = [&sample.prompt[..], &target].concat();
    let mask = std::iter::repeat_n(false, sample.prompt.len()).chain(std::iter::repeat_n(true, target.len())).collect();
    Ok((tokens, mask))
}

/// Mean NLL over the stage's target tokens; prompt positions carry no loss.
pub fn objective_loss(model: &dyn TokenModel, sample: &TrainingSample, stage: Stage) -> Result<f64, TrainingError> {
    let (tokens, mask) = sequence(sample, stage)?;
    let lp = model.log_probs(&sample.image_features, &tokens);
    Ok(masked_nll(&lp, &one_hot(&tokens, model.vocab_size()), &mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDims {
    pub vocab: usize,
    pub hidden: usize,
    pub features: usize,
}

struct Layout {
    enc_w: usize,
    enc_b: usize,
    emb: usize,
    dec_b: usize,
    out_w: usize,
    out_b: usize,
    end: usize,
}

impl ToyDims {
    fn layout(&self) -> Layout {
        let (v, h, f) = (self.vocab, self.hidden, self.features);
        let enc_w = 0;
        let enc_b = enc_w + h * f;
        let emb = enc_b + h;
        let dec_b = emb + v * h;
        let out_w = dec_b + h;
        let out_b = out_w + v * h;
        Layout { enc_w, enc_b, emb, dec_b, out_w, out_b, end: out_b + v }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub dims: ToyDims,
    pub params: Vec<f64>,
}

struct Forward {
    himg: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    log_probs: Vec<Vec<f64>>,
}

fn log_softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter_mut().for_each(|x| *x -= lse);
}

impl ToyModel {
    /// All-zero parameters: the uniform distribution at every position.
    pub fn uniform(dims: ToyDims) -> Self {
        ToyModel { dims, params: vec![0.0; dims.layout().end] }
    }

    pub fn new(dims: ToyDims, seed: u64) -> Self {
        let mut rng = keyed_rng(seed, &["toy-init"]);
        let mut m = Self::uniform(dims);
        let scale = 1.0 / (dims.hidden as f64).sqrt();
        m.params.iter_mut().for_each(|p| *p = rng.random_range(-scale..scale));
        m
    }

    pub fn encoder_range(&self) -> std::ops::Range<usize> {
        let l = self.dims.layout();
        l.enc_w..l.emb
    }

    pub fn encoder_checksum(&self) -> u64 {
        let bytes: String = self.params[self.encoder_range()].iter().map(|p| format!("{:016x}", p.to_bits())).collect();
        stable_hash(&[&bytes])
    }

    fn check(&self, sample: &TrainingSample) -> Result<(), TrainingError> {
        let ok = sample.image_features.len() == self.dims.features
            && sample
                .prompt
                .iter()
                .chain(&sample.answer)
                .chain(&sample.rationale)
                .chain(&sample.locations)
                .all(|&t| (t as usize) < self.dims.vocab);
        ok.then_some(()).ok_or_else(|| TrainingError::Shape(sample.sample_id.clone()))
    }

    fn forward(&self, image: &[f64], tokens: &[u32]) -> Forward {
        let ToyDims { vocab: v, hidden: h, features: f } = self.dims;
        let l = self.dims.layout();
        let p = &self.params;
        let himg: Vec<f64> = (0..h)
            .map(|k| (p[l.enc_b + k] + (0..f).map(|j| p[l.enc_w + k * f + j] * image[j]).sum::<f64>()).tanh())
            .collect();
        let emb = |t: u32, k: usize| p[l.emb + t as usize * h + k];
        let mut ctx = vec![0.0; h];
        let mut hidden = Vec::with_capacity(tokens.len());
        let mut log_probs = Vec::with_capacity(tokens.len());
        for t in 0..tokens.len() {
            let prev = if t == 0 { BOS } else { tokens[t - 1] };
            (0..h).for_each(|k| ctx[k] += emb(prev, k));
            let hid: Vec<f64> =
                (0..h).map(|k| (emb(prev, k) + ctx[k] / (t + 1) as f64 + himg[k] + p[l.dec_b + k]).tanh()).collect();
            let mut z: Vec<f64> =
                (0..v).map(|u| p[l.out_b + u] + (0..h).map(|k| p[l.out_w + u * h + k] * hid[k]).sum::<f64>()).collect();
            log_softmax(&mut z);
            hidden.push(hid);
            log_probs.push(z);
        }
        Forward { himg, hidden, log_probs }
    }

    /// Objective value and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, sample: &TrainingSample, stage: Stage) -> Result<(f64, Vec<f64>), TrainingError> {
        self.check(sample)?;
        let (tokens, mask) = sequence(sample, stage)?;
        let ToyDims { vocab: v, hidden: h, features: f } = self.dims;
        let l = self.dims.layout();
        let p = &self.params;
        let fw = self.forward(&sample.image_features, &tokens);
        let loss = masked_nll(&fw.log_probs, &one_hot(&tokens, v), &mask);
        let n = mask.iter().filter(|&&m| m).count() as f64;
        let mut g = vec![0.0; p.len()];
        let mut dimg = vec![0.0; h];
        for t in (0..tokens.len()).filter(|&t| mask[t]) {
            let hid = &fw.hidden[t];
            let dz: Vec<f64> =
                (0..v).map(|u| (fw.log_probs[t][u].exp() - f64::from(u32::from(u as u32 == tokens[t]))) / n).collect();
            let mut da = vec![0.0; h];
            for u in 0..v {
                g[l.out_b + u] += dz[u];
                for k in 0..h {
                    g[l.out_w + u * h + k] += dz[u] * hid[k];
                    da[k] += p[l.out_w + u * h + k] * dz[u];
                }
            }
            for k in 0..h {
                da[k] *= 1.0 - hid[k] * hid[k];
                g[l.dec_b + k] += da[k];
                dimg[k] += da[k];
            }
            let prev = if t == 0 { BOS } else { tokens[t - 1] } as usize;
            let share = 1.0 / (t + 1) as f64;
            for k in 0..h {
                g[l.emb + prev * h + k] += da[k];
            }
            for j in 0..=t {
                let tok = if j == 0 { BOS } else { tokens[j - 1] } as usize;
                for k in 0..h {
                    g[l.emb + tok * h + k] += da[k] * share;
                }
            }
        }
        for k in 0..h {
            let d = dimg[k] * (1.0 - fw.himg[k] * fw.himg[k]);
            g[l.enc_b + k] += d;
            for j in 0..f {
                g[l.enc_w + k * f + j] += d * sample.image_features[j];
            }
        }
        Ok((loss, g))
    }
}

impl TokenModel for ToyModel {
    fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    fn log_probs(&self, image: &[f64], tokens: &[u32]) -> Vec<Vec<f64>> {
        self.forward(image, tokens).log_probs
    }
}

/// Toy-scale hyperparameters. Schedule, warm-up and trainable scopes come
/// from the stage defaults; step size and batch are sized for the toy model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub schedule: Schedule,
    pub trainable: Vec<Scope>,
}

impl ToyConfig {
    pub fn for_stage(stage: Stage) -> Self {
        let s = StageConfig::defaults(stage);
        ToyConfig {
            stage,
            epochs: 3,
            batch_size: 8,
            learning_rate: 0.05,
            warmup_ratio: s.warmup_ratio,
            schedule: s.schedule,
            trainable: s.trainable,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub stage: Stage,
    pub seed: u64,
    /// Mean corpus loss before the first update.
    pub initial_loss: f64,
    /// Mean corpus loss after each epoch.
    pub epoch_losses: Vec<f64>,
    pub encoder_checksum_before: u64,
    pub encoder_checksum_after: u64,
}

impl TrainingTrace {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

fn corpus_loss(model: &ToyModel, corpus: &[TrainingSample], stage: Stage) -> Result<f64, TrainingError> {
    let mut total = 0.0;
    for s in corpus {
        total += objective_loss(model, s, stage)?;
    }
    Ok(total / corpus.len().max(1) as f64)
}

/// Mini-batch Adam on the stage objective, single-threaded and deterministic
/// for a given seed. Parameters outside the trainable scopes are not touched.
pub fn run_toy_training(
    config: &ToyConfig,
    corpus: &[TrainingSample],
    model: &mut ToyModel,
    seed: u64,
) -> Result<TrainingTrace, TrainingError> {
    for s in corpus {
        model.check(s)?;
        sequence(s, config.stage)?;
    }
    let enc = model.encoder_range();
    let trainable: Vec<bool> = (0..model.params.len())
        .map(|i| config.trainable.contains(&if enc.contains(&i) { Scope::Encoder } else { Scope::Decoder }))
        .collect();
    let mut trace = TrainingTrace {
        stage: config.stage,
        seed,
        initial_loss: corpus_loss(model, corpus, config.stage)?,
        epoch_losses: Vec::new(),
        encoder_checksum_before: model.encoder_checksum(),
        encoder_checksum_after: model.encoder_checksum(),
    };
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; model.params.len()];
    let mut v = vec![0.0; model.params.len()];
    let batch = config.batch_size.max(1);
    let steps_per_epoch = corpus.len().div_ceil(batch);
    let total = steps_per_epoch * config.epochs;
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut keyed_rng(seed, &["toy-epoch", &epoch.to_string()]));
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; model.params.len()];
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (loss, g) = model.loss_and_grad(&corpus[i], config.stage)?;
                batch_loss += loss;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b / chunk.len() as f64);
            }
            if batch_loss.is_nan() {
                trace.epoch_losses.push(f64::NAN);
                trace.encoder_checksum_after = model.encoder_checksum();
                return Err(TrainingError::Diverged { epoch, trace: Box::new(trace) });
            }
            step += 1;
            let lr = config.learning_rate * config.schedule.factor(step - 1, total, config.warmup_ratio);
            let (c1, c2) = (1.0 - b1.powi(step as i32), 1.0 - b2.powi(step as i32));
            for i in (0..grad.len()).filter(|&i| trainable[i]) {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                model.params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        let loss = corpus_loss(model, corpus, config.stage)?;
        trace.epoch_losses.push(loss);
        trace.encoder_checksum_after = model.encoder_checksum();
        if loss.is_nan() {
            return Err(TrainingError::Diverged { epoch, trace: Box::new(trace) });
        }
    }
    Ok(trace)
}

/// A learnable synthetic corpus: four binary "tasks", each answered by the
/// sign of one image feature, with task-specific rationale tokens and an
/// image-dependent location token.
pub fn synthetic_corpus(n: usize, seed: u64) -> (ToyDims, Vec<TrainingSample>) {
    let dims = ToyDims { vocab: 32, hidden: 16, features: 8 };
    let mut rng = keyed_rng(seed, &["toy-corpus"]);
    let samples = (0..n)
        .map(|i| {
            let task = rng.random_range(0..4u32);
            let feats: Vec<f64> = (0..dims.features).map(|_| rng.random_range(-1.0..1.0)).collect();
            let positive = feats[task as usize] > 0.0;
            let loc = (4..8).max_by(|&a, &b| feats[a].total_cmp(&feats[b])).unwrap() as u32;
            TrainingSample {
                sample_id: format!("syn-{i:04}"),
                image_features: feats,
                prompt: vec![6, 2 + task, 7, 8],
                answer: vec![if positive { 11 } else { 10 }],
                rationale: vec![12 + task, if positive { 17 } else { 16 }],
                locations: if positive { vec![20 + loc - 4] } else { Vec::new() },
            }
        })
        .collect();
    (dims, samples)
}
