use std::ops::Range;

use super::{fit, ModelSpec, TrainConfig, TrainedPair};
use crate::benchmarks::IoDataset;
use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::student::{PredictMode, Prediction};

/// Fits `members` models; member `i` trains with seed `cfg.seed + i`.
pub fn fit_ensemble(data: &IoDataset, spec: &ModelSpec, cfg: &TrainConfig, members: usize, threads: usize) -> Result<Vec<TrainedPair>> {
    if members == 0 {
        return Err(Error::Config("ensemble size must be at least 1".into()));
    }
    map_indexed(members, threads, |i| {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i as u64);
        fit(data, spec, &c)
    })
    .into_iter()
    .collect()
}

/// Mean of the member means; variance of the equal-weight mixture.
pub fn ensemble_average(pairs: &[TrainedPair], data: &IoDataset, times: Range<usize>, mode: PredictMode) -> Result<Prediction> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidInput("ensemble of zero models".into()))?;
    if let Some(p) = pairs.iter().find(|p| p.model.spec != first.model.spec) {
        return Err(Error::InvalidInput(format!(
            "ensemble members differ: {:?} vs {:?}",
            first.model.spec.student, p.model.spec.student
        )));
    }
    let preds: Vec<Prediction> = pairs
        .iter()
        .map(|p| p.predict(data, times.clone(), mode))
        .collect::<Result<_>>()?;
    Ok(average_predictions(&preds))
}

pub(crate) fn average_predictions(preds: &[Prediction]) -> Prediction {
    let n = preds.len() as f64;
    let len = preds[0].len();
    let mut mean = vec![0.0; len];
    let mut second = vec![0.0; len];
    for p in preds {
        for i in 0..len {
            mean[i] += p.mean[i];
            second[i] += p.var[i] + p.mean[i] * p.mean[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let var = second.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0)).collect();
    Prediction {
        start: preds[0].start,
        mean,
        var,
    }
}
