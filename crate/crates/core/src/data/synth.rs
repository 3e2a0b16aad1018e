use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Dialogue, Role, Utterance, Vocabularies};

/// Random dialogues over the default vocabularies. Speakers alternate with
/// probability `switch_prob` per turn; labels are uniform.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub dialogues: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    pub switch_prob: f64,
    pub seed: u64,
}

impl Default for SynthCorpus {
    fn default() -> Self {
        SynthCorpus {
            dialogues: 100,
            min_turns: 6,
            max_turns: 14,
            switch_prob: 0.7,
            seed: 0,
        }
    }
}

pub fn synth_corpus(cfg: &SynthCorpus) -> Corpus {
    synth_corpus_with(cfg, Vocabularies::defaults())
}

pub fn synth_corpus_with(cfg: &SynthCorpus, vocabs: Vocabularies) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes = vocabs.sizes();
    let dialogues = (0..cfg.dialogues)
        .map(|k| {
            let t = rng.random_range(cfg.min_turns..=cfg.max_turns.max(cfg.min_turns));
            let mut role = Role::Er;
            let utterances = (0..t)
                .map(|index| {
                    if index > 0 && rng.random::<f64>() < cfg.switch_prob {
                        role = if role == Role::Er { Role::Ee } else { Role::Er };
                    }
                    let label_id = rng.random_range(0..sizes[role.index()]);
                    Utterance {
                        index,
                        role,
                        text: format!("synthetic utterance {index}"),
                        label_id,
                    }
                })
                .collect();
            Dialogue {
                id: format!("synth-{k:04}"),
                utterances,
                success: rng.random::<bool>(),
            }
        })
        .collect();
    Corpus::new(dialogues, vocabs)
}
