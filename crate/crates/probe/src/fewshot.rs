//! Few-shot episode construction over a labeled cloud dataset.

use hfbm_core::rng::SeededRng;
use hfbm_mae::Dataset;

use crate::ProbeError;

/// One N-way K-shot episode. Indices point into the source dataset; labels
/// are episode-local, i.e. the position of the cloud's class in `classes`.
#[derive(Debug, Clone)]
pub struct Episode {
    /// Sampled dataset class ids, in draw order.
    pub classes: Vec<usize>,
    pub support_indices: Vec<usize>,
    pub support_labels: Vec<usize>,
    pub query_indices: Vec<usize>,
    pub query_labels: Vec<usize>,
}

/// Sample `ways` classes uniformly, then disjoint support and query clouds
/// per class. Deterministic in `seed`.
pub fn few_shot_episode(
    data: &Dataset,
    ways: usize,
    shots: usize,
    queries: usize,
    seed: u64,
) -> Result<Episode, ProbeError> {
    if ways == 0 || shots == 0 || queries == 0 {
        return Err(ProbeError::Data(
            "ways, shots, and queries must all be positive".into(),
        ));
    }
    if ways > data.n_classes {
        return Err(ProbeError::Data(format!(
            "requested a {ways}-way episode but the dataset has {} classes",
            data.n_classes
        )));
    }

    let mut rng = SeededRng::new(seed);
    let mut class_order: Vec<usize> = (0..data.n_classes).collect();
    rng.shuffle(&mut class_order);
    let classes: Vec<usize> = class_order.into_iter().take(ways).collect();

    let need = shots + queries;
    let mut episode = Episode {
        classes: classes.clone(),
        support_indices: Vec::with_capacity(ways * shots),
        support_labels: Vec::with_capacity(ways * shots),
        query_indices: Vec::with_capacity(ways * queries),
        query_labels: Vec::with_capacity(ways * queries),
    };

    for (slot, &class) in classes.iter().enumerate() {
        let mut members: Vec<usize> = (0..data.len())
            .filter(|&i| data.labels[i] == class)
            .collect();
        if members.len() < need {
            return Err(ProbeError::Data(format!(
                "class {class} has {} examples but the episode needs {need}",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for &i in &members[..shots] {
            episode.support_indices.push(i);
            episode.support_labels.push(slot);
        }
        for &i in &members[shots..need] {
            episode.query_indices.push(i);
            episode.query_labels.push(slot);
        }
    }
    Ok(episode)
}
