//! Labelled title corpora with known structure, for testing the pipeline.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Label, TitleRecord};
use crate::error::Result;

/// Words whose within-title count carries the label. Every title holds
/// exactly one of them, dealt evenly within each label so that presence is
/// unrelated to the label (statistic near 0); men's titles repeat it.
pub const COUNT_SIGNAL_WORDS: [&str; 5] = ["quill", "lantern", "harbour", "meadow", "tower"];

/// Words present only in titles of one label, with the number of titles.
pub const MARKER_WORDS: [(&str, Label, usize); 4] = [
    ("authoress", Label::Woman, 30),
    ("esquire", Label::Man, 25),
    ("officer", Label::Man, 20),
    ("lady", Label::Woman, 20),
];

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub records: Vec<TitleRecord>,
}

/// `titles` alternating Man/Woman over 1800..1829, each with four filler
/// words drawn by Zipf weight from `filler_vocabulary` label-free words.
pub fn planted_corpus(titles: usize, filler_vocabulary: usize, seed: u64) -> Result<PlantedCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Label> = (0..titles)
        .map(|i| if i % 2 == 0 { Label::Man } else { Label::Woman })
        .collect();
    let mut words: Vec<Vec<String>> = vec![Vec::new(); titles];
    let by_label = |l: Label| -> Vec<usize> { (0..titles).filter(|&i| labels[i] == l).collect() };
    let (men, women) = (by_label(Label::Man), by_label(Label::Woman));

    for (group, copies) in [(&men, 2), (&women, 1)] {
        let order = sample(&mut rng, group.len(), group.len());
        for (k, j) in order.into_iter().enumerate() {
            let w = COUNT_SIGNAL_WORDS[k % COUNT_SIGNAL_WORDS.len()];
            for _ in 0..copies {
                words[group[j]].push(w.to_string());
            }
        }
    }
    for (w, label, k) in MARKER_WORDS {
        let group = if label == Label::Man { &men } else { &women };
        for j in sample(&mut rng, group.len(), k.min(group.len())) {
            words[group[j]].push(w.to_string());
        }
    }
    let weights: Vec<f64> = (1..=filler_vocabulary).map(|r| 1.0 / r as f64).collect();
    let total: f64 = weights.iter().sum();
    for title in words.iter_mut() {
        for _ in 0..4 {
            let mut u = rng.random::<f64>() * total;
            let mut r = 0;
            while r + 1 < weights.len() && u >= weights[r] {
                u -= weights[r];
                r += 1;
            }
            title.push(format!("w{r}"));
        }
    }
    let records = words
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (w, &l))| TitleRecord::new(1800 + ((i / 2) % 30) as i32, l, &w.join(" ")))
        .collect::<Result<_>>()?;
    Ok(PlantedCorpus { records })
}
