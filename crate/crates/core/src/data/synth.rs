//! Synthetic conversations with a controllable shift rate.
//!
//! A latent polarity follows a two-state Markov chain that keeps its state
//! with probability `rho`. Even class indices are positive, odd ones negative.
//! Each modality's features are Gaussian around a class mean whose first half
//! encodes the polarity (`±mu`) and whose second half is a per-class `±mu`
//! pattern.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Conversation, Corpus, Dims, EmotionLabel, Modality, Task, Utterance};
use crate::error::{Error, Result};
use crate::shift::{Polarity, PolarityMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_conversations: usize,
    pub utterances_per_conversation: usize,
    pub n_speakers: usize,
    pub n_classes: usize,
    pub rho: f64,
    pub mu: f64,
    pub sigma: f64,
    pub dims: Dims,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_conversations: 100,
            utterances_per_conversation: 8,
            n_speakers: 2,
            n_classes: 2,
            rho: 0.66,
            mu: 2.0,
            sigma: 0.5,
            dims: Dims {
                text: 8,
                audio: 4,
                video: 4,
            },
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synthetic config: {m}")));
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return bad("sigma must be positive");
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite");
        }
        if self.n_classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.n_conversations == 0 || self.utterances_per_conversation == 0 {
            return bad("need at least one conversation and utterance");
        }
        if self.n_speakers == 0 {
            return bad("need at least one speaker");
        }
        if Modality::ALL.iter().any(|&m| self.dims.get(m) == 0) {
            return bad("feature dims must be positive");
        }
        Ok(())
    }
}

pub fn class_polarity(class: usize) -> Polarity {
    if class.is_multiple_of(2) {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

fn class_means(cfg: &SyntheticConfig, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let half = dim.div_ceil(2);
    (0..cfg.n_classes)
        .map(|k| {
            let sign = match class_polarity(k) {
                Polarity::Positive => 1.0,
                _ => -1.0,
            };
            (0..dim)
                .map(|j| {
                    if j < half {
                        sign * cfg.mu
                    } else if rng.random_bool(0.5) {
                        cfg.mu
                    } else {
                        -cfg.mu
                    }
                })
                .collect()
        })
        .collect()
}

/// Generates a corpus; identical configs give identical corpora.
pub fn synth_generate(cfg: &SyntheticConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means: Vec<Vec<Vec<f64>>> = Modality::ALL
        .iter()
        .map(|&m| class_means(cfg, cfg.dims.get(m), &mut rng))
        .collect();
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let positives: Vec<usize> = (0..cfg.n_classes).step_by(2).collect();
    let negatives: Vec<usize> = (1..cfg.n_classes).step_by(2).collect();

    let mut conversations = Vec::with_capacity(cfg.n_conversations);
    for ci in 0..cfg.n_conversations {
        let mut positive = rng.random_bool(0.5);
        let mut utterances = Vec::with_capacity(cfg.utterances_per_conversation);
        for t in 0..cfg.utterances_per_conversation {
            if t > 0 && !rng.random_bool(cfg.rho) {
                positive = !positive;
            }
            let pool = if positive { &positives } else { &negatives };
            let class = pool[rng.random_range(0..pool.len())];
            let speaker = rng.random_range(0..cfg.n_speakers);
            let mut feats = means.iter().map(|per_class| {
                per_class[class]
                    .iter()
                    .map(|&m| m + noise.sample(&mut rng))
                    .collect::<Vec<f64>>()
            });
            let (text, audio, video) = (
                feats.next().expect("text"),
                feats.next().expect("audio"),
                feats.next().expect("video"),
            );
            let magnitude = rng.random_range(0.5..=3.0);
            utterances.push(Utterance {
                utterance_id: format!("syn{ci:05}_{t:03}"),
                speaker: format!("s{speaker}"),
                text_features: text,
                audio_features: audio,
                video_features: video,
                emotion_label: Some(EmotionLabel::Single(class)),
                sentiment_score: Some(if positive { magnitude } else { -magnitude }),
            });
        }
        conversations.push(Conversation {
            id: format!("syn{ci:05}"),
            utterances,
        });
    }

    let label_set: Vec<String> = (0..cfg.n_classes).map(|k| format!("c{k}")).collect();
    let polarity_map =
        PolarityMap::from_pairs(label_set.iter().enumerate().map(|(k, l)| (l.as_str(), class_polarity(k))));
    Ok(Corpus {
        name: format!("synthetic-{}", cfg.seed),
        dims: cfg.dims,
        label_set,
        polarity_map: Some(polarity_map),
        task: if cfg.n_classes <= 4 {
            Task::Emotion4
        } else {
            Task::Emotion6
        },
        conversations,
    })
}
