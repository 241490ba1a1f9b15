//! Synthetic event-clustered tweets for desk-scale experiments.
//!
//! Every event has a random unit center. Image and text embeddings are the
//! center plus isotropic Gaussian noise, normalised. Fake tweets also move
//! their text by `fake_offset` along a per-event direction that mixes a
//! direction shared by all events with an event-specific one, so a model
//! trained on some events has something to transfer to the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::datamodel::{Dataset, Label, Split, TweetRecord};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SynthError {
    #[error("bad synthetic config: {0}")]
    BadConfig(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub events: usize,
    pub per_event: usize,
    pub dim: usize,
    pub fake_offset: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            events: 6,
            per_event: 100,
            dim: 32,
            fake_offset: 0.5,
            noise: 0.15,
            seed: 0,
        }
    }
}

/// `(seen, unseen, test)` event counts. Test events come last.
pub fn event_split(events: usize) -> (usize, usize, usize) {
    let test = events.div_ceil(3);
    let rest = events - test;
    let unseen = if rest >= 2 { (rest / 4).max(1) } else { 0 };
    (rest - unseen, unseen, test)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim);
        if v.iter().any(|&x| x != 0.0) {
            return normalize(v);
        }
    }
}

pub fn gen_synth(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    if cfg.events < 2 {
        return Err(SynthError::BadConfig("events must be at least 2".into()));
    }
    if cfg.per_event == 0 || cfg.dim == 0 {
        return Err(SynthError::BadConfig("per_event and dim must be positive".into()));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite())
        || !(cfg.fake_offset >= 0.0 && cfg.fake_offset.is_finite())
    {
        return Err(SynthError::BadConfig(
            "noise and fake_offset must be finite and non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (seen, unseen, _) = event_split(cfg.events);
    let sigma = cfg.noise / (cfg.dim as f64).sqrt();
    let shared = unit(&mut rng, cfg.dim);

    let mut records = Vec::with_capacity(cfg.events * cfg.per_event);
    for e in 0..cfg.events {
        let center = unit(&mut rng, cfg.dim);
        let own = unit(&mut rng, cfg.dim);
        let fake_dir = normalize(shared.iter().zip(&own).map(|(a, b)| a + b).collect());
        let split = if e < seen {
            Split::Seen
        } else if e < seen + unseen {
            Split::Unseen
        } else {
            Split::Test
        };
        for k in 0..cfg.per_event {
            let label = if k % 2 == 1 { Label::Fake } else { Label::Real };
            let mut noisy = |shift: f64| -> Vec<f32> {
                let v: Vec<f64> = center
                    .iter()
                    .zip(&fake_dir)
                    .map(|(c, f)| c + shift * f + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                normalize(v).into_iter().map(|x| x as f32).collect()
            };
            let image_emb = noisy(0.0);
            let shift = if label == Label::Fake { cfg.fake_offset } else { 0.0 };
            let text_emb = noisy(shift);
            records.push(TweetRecord {
                id: format!("e{e}-{k}"),
                image_emb,
                text_emb,
                label,
                event_id: Some(e as u32),
                split,
            });
        }
    }
    Dataset::new(records, cfg.dim, cfg.dim).map_err(|e| SynthError::BadConfig(e.to_string()))
}
