//! Corpus model, the line-delimited JSON file format, shift statistics and
//! train/validation splitting.

mod synth;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shift::{sentiment_polarity, shift_labels_from_polarities, Polarity, PolarityMap};

pub use synth::{synth_generate, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "l")]
    Text,
    #[serde(rename = "a")]
    Audio,
    #[serde(rename = "v")]
    Video,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Video];

    pub fn short(self) -> char {
        match self {
            Modality::Text => 'l',
            Modality::Audio => 'a',
            Modality::Video => 'v',
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.short())
    }
}

/// Input feature dimensions per modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub text: usize,
    pub audio: usize,
    pub video: usize,
}

impl Dims {
    pub const MOSEI: Dims = Dims {
        text: 768,
        audio: 384,
        video: 711,
    };
    pub const IEMOCAP: Dims = Dims {
        text: 768,
        audio: 100,
        video: 512,
    };

    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Text => self.text,
            Modality::Audio => self.audio,
            Modality::Video => self.video,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sentiment2,
    EmotionMultilabel,
    Emotion4,
    Emotion6,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "sentiment2" => Ok(Task::Sentiment2),
            "emotion_multilabel" => Ok(Task::EmotionMultilabel),
            "emotion4" => Ok(Task::Emotion4),
            "emotion6" => Ok(Task::Emotion6),
            _ => Err(Error::Invalid(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmotionLabel {
    Single(usize),
    Multi(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker: String,
    pub text_features: Vec<f64>,
    pub audio_features: Vec<f64>,
    pub video_features: Vec<f64>,
    pub emotion_label: Option<EmotionLabel>,
    pub sentiment_score: Option<f64>,
}

impl Utterance {
    pub fn features(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Text => &self.text_features,
            Modality::Audio => &self.audio_features,
            Modality::Video => &self.video_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

/// What a model is trained to predict from a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The corpus task's own label.
    Class,
    /// Presence of one label of a multilabel corpus.
    Binary(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub dims: Dims,
    pub label_set: Vec<String>,
    pub polarity_map: Option<PolarityMap>,
    pub task: Task,
    pub conversations: Vec<Conversation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    name: String,
    dims: Dims,
    label_set: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polarity_map: Option<PolarityMap>,
    task: Task,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    conversation_id: String,
    position: u64,
    utterance_id: String,
    speaker: String,
    text_features: Vec<f64>,
    audio_features: Vec<f64>,
    video_features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotion_label: Option<EmotionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentiment_score: Option<f64>,
}

/// Shift counts over consecutive utterance pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftStats {
    pub pairs: usize,
    pub shifts: usize,
    pub percentage: f64,
}

impl Corpus {
    pub fn num_utterances(&self) -> usize {
        self.conversations.iter().map(|c| c.utterances.len()).sum()
    }

    pub fn num_pairs(&self) -> usize {
        self.conversations
            .iter()
            .map(|c| c.utterances.len().saturating_sub(1))
            .sum()
    }

    pub fn conversation(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.id == id)
    }

    /// Number of output classes for `target`.
    pub fn num_classes(&self, target: Target) -> usize {
        match target {
            Target::Class => self.label_set.len(),
            Target::Binary(_) => 2,
        }
    }

    fn single_label(&self, u: &Utterance) -> Result<usize> {
        match &u.emotion_label {
            Some(EmotionLabel::Single(k)) => Ok(*k),
            Some(EmotionLabel::Multi(ks)) if ks.len() == 1 => Ok(ks[0]),
            Some(EmotionLabel::Multi(_)) => Err(Error::Utterance {
                utterance_id: u.utterance_id.clone(),
                msg: format!("task {:?} needs a single emotion label", self.task),
            }),
            None => Err(Error::Utterance {
                utterance_id: u.utterance_id.clone(),
                msg: "missing emotion_label".into(),
            }),
        }
    }

    /// Class index of one utterance under `target`.
    ///
    /// For `sentiment2`, a present sentiment score decides the class with
    /// index 0 negative and index 1 positive.
    pub fn target_of(&self, u: &Utterance, target: Target) -> Result<usize> {
        match target {
            Target::Binary(k) => match &u.emotion_label {
                Some(EmotionLabel::Multi(ks)) => Ok(ks.contains(&k) as usize),
                Some(EmotionLabel::Single(j)) => Ok((*j == k) as usize),
                None => Err(Error::Utterance {
                    utterance_id: u.utterance_id.clone(),
                    msg: "missing emotion_label".into(),
                }),
            },
            Target::Class => match (self.task, u.sentiment_score) {
                (Task::Sentiment2, Some(s)) => Ok(match sentiment_polarity(s) {
                    Polarity::Positive => 1,
                    _ => 0,
                }),
                _ => self.single_label(u),
            },
        }
    }

    pub fn targets(&self, conv: &Conversation, target: Target) -> Result<Vec<usize>> {
        conv.utterances
            .iter()
            .map(|u| self.target_of(u, target))
            .collect()
    }

    /// Polarity used for shift labels. Sentiment-bearing tasks use the
    /// sentiment score; single-label emotion tasks use the polarity map.
    pub fn polarity_of(&self, u: &Utterance) -> Result<Polarity> {
        if matches!(self.task, Task::Sentiment2 | Task::EmotionMultilabel) {
            if let Some(s) = u.sentiment_score {
                return Ok(sentiment_polarity(s));
            }
            if self.task == Task::EmotionMultilabel {
                return Err(Error::Utterance {
                    utterance_id: u.utterance_id.clone(),
                    msg: "multilabel corpora need sentiment_score for shift labels".into(),
                });
            }
        }
        let pm = self.polarity_map.as_ref().ok_or(Error::MissingPolarityMap)?;
        let k = self.single_label(u)?;
        pm.polarity(&self.label_set[k])
    }

    pub fn polarities(&self, conv: &Conversation) -> Result<Vec<Polarity>> {
        conv.utterances.iter().map(|u| self.polarity_of(u)).collect()
    }

    /// Shift labels for the consecutive pairs of one conversation.
    pub fn shift_labels(&self, conv: &Conversation) -> Result<Vec<bool>> {
        Ok(shift_labels_from_polarities(&self.polarities(conv)?))
    }

    /// Checks every invariant of a loaded corpus.
    pub fn validate(&self) -> Result<()> {
        if self.label_set.is_empty() {
            return Err(Error::Invalid("label_set is empty".into()));
        }
        if let Some(pm) = &self.polarity_map {
            for l in &self.label_set {
                pm.polarity(l)?;
            }
        }
        for conv in &self.conversations {
            if conv.utterances.is_empty() {
                return Err(Error::Empty(format!("conversation {}", conv.id)));
            }
            for u in &conv.utterances {
                self.validate_utterance(u)?;
            }
        }
        Ok(())
    }

    fn validate_utterance(&self, u: &Utterance) -> Result<()> {
        let bad = |msg: String| Error::Utterance {
            utterance_id: u.utterance_id.clone(),
            msg,
        };
        for m in Modality::ALL {
            let (got, want) = (u.features(m).len(), self.dims.get(m));
            if got != want {
                return Err(bad(format!(
                    "{m} features have {got} dims, header declares {want}"
                )));
            }
            if u.features(m).iter().any(|x| !x.is_finite()) {
                return Err(bad(format!("{m} features contain non-finite values")));
            }
        }
        if u.emotion_label.is_none() && u.sentiment_score.is_none() {
            return Err(bad("needs emotion_label or sentiment_score".into()));
        }
        let k = self.label_set.len();
        match &u.emotion_label {
            Some(EmotionLabel::Single(j)) if *j >= k => {
                return Err(bad(format!("label {j} outside label_set of {k}")))
            }
            Some(EmotionLabel::Multi(js)) => {
                if let Some(j) = js.iter().find(|&&j| j >= k) {
                    return Err(bad(format!("label {j} outside label_set of {k}")));
                }
            }
            _ => {}
        }
        if let Some(s) = u.sentiment_score {
            if !s.is_finite() || !(-3.0..=3.0).contains(&s) {
                return Err(bad(format!("sentiment_score {s} outside [-3, 3]")));
            }
        }
        Ok(())
    }
}

/// Reads and validates a corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(Error::file(path))?);
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| perr(i + 1, format!("header: {e}")))?;
            }
            None => return Err(perr(1, "missing header line".into())),
        }
    };
    let mut conversations: Vec<Conversation> = Vec::new();
    let mut last_position = 0u64;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| perr(i + 1, e.to_string()))?;
        let continues = conversations
            .last()
            .is_some_and(|c| c.id == rec.conversation_id);
        if continues {
            if rec.position <= last_position {
                return Err(perr(
                    i + 1,
                    format!(
                        "conversation {} is not sorted by position",
                        rec.conversation_id
                    ),
                ));
            }
        } else if conversations.iter().any(|c| c.id == rec.conversation_id) {
            return Err(perr(
                i + 1,
                format!("conversation {} is not contiguous", rec.conversation_id),
            ));
        } else {
            conversations.push(Conversation {
                id: rec.conversation_id.clone(),
                utterances: Vec::new(),
            });
        }
        last_position = rec.position;
        conversations
            .last_mut()
            .expect("pushed above")
            .utterances
            .push(Utterance {
                utterance_id: rec.utterance_id,
                speaker: rec.speaker,
                text_features: rec.text_features,
                audio_features: rec.audio_features,
                video_features: rec.video_features,
                emotion_label: rec.emotion_label,
                sentiment_score: rec.sentiment_score,
            });
    }
    let corpus = Corpus {
        name: header.name,
        dims: header.dims,
        label_set: header.label_set,
        polarity_map: header.polarity_map,
        task: header.task,
        conversations,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Writes a corpus; positions are emitted as utterance indices.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(Error::file(path))?);
    let header = Header {
        name: corpus.name.clone(),
        dims: corpus.dims,
        label_set: corpus.label_set.clone(),
        polarity_map: corpus.polarity_map.clone(),
        task: corpus.task,
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for conv in &corpus.conversations {
        for (pos, u) in conv.utterances.iter().enumerate() {
            let rec = Record {
                conversation_id: conv.id.clone(),
                position: pos as u64,
                utterance_id: u.utterance_id.clone(),
                speaker: u.speaker.clone(),
                text_features: u.text_features.clone(),
                audio_features: u.audio_features.clone(),
                video_features: u.video_features.clone(),
                emotion_label: u.emotion_label.clone(),
                sentiment_score: u.sentiment_score,
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Percentage of consecutive within-conversation pairs labeled as a shift.
pub fn shift_statistics(corpus: &Corpus) -> Result<ShiftStats> {
    let mut pairs = 0;
    let mut shifts = 0;
    for conv in &corpus.conversations {
        let labels = corpus.shift_labels(conv)?;
        pairs += labels.len();
        shifts += labels.iter().filter(|&&s| s).count();
    }
    if pairs == 0 {
        return Err(Error::NoPairs);
    }
    Ok(ShiftStats {
        pairs,
        shifts,
        percentage: 100.0 * shifts as f64 / pairs as f64,
    })
}

/// Conversation-level random split; both halves keep the original order.
pub fn split_train_val(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    let n = corpus.conversations.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 conversations to split, got {n}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Invalid(format!("split fraction {fraction} not in (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut train_idx = idx[..n_train].to_vec();
    let mut val_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let subset = |ids: &[usize]| Corpus {
        conversations: ids.iter().map(|&i| corpus.conversations[i].clone()).collect(),
        ..corpus.clone_header()
    };
    Ok((subset(&train_idx), subset(&val_idx)))
}

impl Corpus {
    /// Copy of everything but the conversations.
    pub fn clone_header(&self) -> Corpus {
        Corpus {
            name: self.name.clone(),
            dims: self.dims,
            label_set: self.label_set.clone(),
            polarity_map: self.polarity_map.clone(),
            task: self.task,
            conversations: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shift::Polarity::{Negative as N, Neutral as Z, Positive as P};

    pub(crate) fn toy_corpus(seqs: &[&[Polarity]]) -> Corpus {
        let label_set = vec!["pos".to_string(), "neg".to_string(), "neu".to_string()];
        let pm = PolarityMap::from_pairs([("pos", P), ("neg", N), ("neu", Z)]);
        let conversations = seqs
            .iter()
            .enumerate()
            .map(|(ci, seq)| Conversation {
                id: format!("c{ci}"),
                utterances: seq
                    .iter()
                    .enumerate()
                    .map(|(i, p)| Utterance {
                        utterance_id: format!("c{ci}_u{i}"),
                        speaker: if i % 2 == 0 { "A" } else { "B" }.into(),
                        text_features: vec![i as f64],
                        audio_features: vec![0.0],
                        video_features: vec![0.0],
                        emotion_label: Some(EmotionLabel::Single(match p {
                            P => 0,
                            N => 1,
                            Z => 2,
                        })),
                        sentiment_score: None,
                    })
                    .collect(),
            })
            .collect();
        Corpus {
            name: "toy".into(),
            dims: Dims {
                text: 1,
                audio: 1,
                video: 1,
            },
            label_set,
            polarity_map: Some(pm),
            task: Task::Emotion4,
            conversations,
        }
    }

    #[test]
    fn shift_statistics_examples() {
        let c = toy_corpus(&[&[P, N, P]]);
        assert_eq!(shift_statistics(&c).unwrap().percentage, 100.0);
        let c = toy_corpus(&[&[P, P, Z, N]]);
        assert_eq!(shift_statistics(&c).unwrap().percentage, 0.0);
        let c = toy_corpus(&[&[P]]);
        assert!(matches!(shift_statistics(&c), Err(Error::NoPairs)));
    }

    #[test]
    fn shift_statistics_ignores_conversation_order() {
        let a = toy_corpus(&[&[P, N, N], &[Z, P], &[N, P, N, P]]);
        let mut b = a.clone();
        b.conversations.reverse();
        assert_eq!(shift_statistics(&a).unwrap(), shift_statistics(&b).unwrap());
    }

    #[test]
    fn missing_polarity_map() {
        let mut c = toy_corpus(&[&[P, N]]);
        c.polarity_map = None;
        assert!(matches!(shift_statistics(&c), Err(Error::MissingPolarityMap)));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let seqs: Vec<&[Polarity]> = vec![&[P, N]; 10];
        let c = toy_corpus(&seqs);
        let (tr, va) = split_train_val(&c, 0.8, 42).unwrap();
        assert_eq!((tr.conversations.len(), va.conversations.len()), (8, 2));
        let (tr2, va2) = split_train_val(&c, 0.8, 42).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        assert!(split_train_val(&toy_corpus(&[&[P]]), 0.8, 42).is_err());
    }

    #[test]
    fn split_depends_on_seed() {
        let seqs: Vec<&[Polarity]> = vec![&[P, N]; 100];
        let c = toy_corpus(&seqs);
        let ids = |c: &Corpus| c.conversations.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
        let (a, _) = split_train_val(&c, 0.8, 42).unwrap();
        let (b, _) = split_train_val(&c, 0.8, 43).unwrap();
        assert_ne!(ids(&a), ids(&b));
    }

    #[test]
    fn sentiment_targets_follow_score_sign() {
        let mut c = toy_corpus(&[&[P, N]]);
        c.task = Task::Sentiment2;
        c.label_set = vec!["negative".into(), "positive".into()];
        c.polarity_map = None;
        let u = &mut c.conversations[0].utterances;
        u[0].emotion_label = None;
        u[0].sentiment_score = Some(0.0);
        u[1].emotion_label = None;
        u[1].sentiment_score = Some(-1.2);
        let conv = &c.conversations[0];
        assert_eq!(c.targets(conv, Target::Class).unwrap(), vec![1, 0]);
        assert_eq!(c.shift_labels(conv).unwrap(), vec![true]);
    }

    #[test]
    fn multilabel_binary_targets() {
        let mut c = toy_corpus(&[&[P, N]]);
        c.task = Task::EmotionMultilabel;
        c.conversations[0].utterances[0].emotion_label = Some(EmotionLabel::Multi(vec![0, 2]));
        c.conversations[0].utterances[1].emotion_label = Some(EmotionLabel::Multi(vec![]));
        let conv = &c.conversations[0];
        assert_eq!(c.targets(conv, Target::Binary(2)).unwrap(), vec![1, 0]);
        assert_eq!(c.targets(conv, Target::Binary(1)).unwrap(), vec![0, 0]);
        // shift labels need the sentiment track
        assert!(c.shift_labels(conv).is_err());
    }
}
