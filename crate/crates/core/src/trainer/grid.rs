use serde::{Deserialize, Serialize};

use super::{fit, ModelKind, ModelSpec, TrainConfig};
use crate::benchmarks::IoDataset;
use crate::error::{Error, Result};
use crate::par::map_indexed;

/// Uniform-width stacks: every depth paired with every width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    /// Epochs per candidate.
    pub budget_epochs: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            depths: (1..=5).collect(),
            widths: (1..=10).map(|i| 10 * i).collect(),
            budget_epochs: 30,
        }
    }
}

impl Grid {
    /// Candidate specs derived from `base`; a teacher's representation width
    /// follows the candidate's last width.
    pub fn candidates(&self, base: &ModelSpec) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for &d in &self.depths {
            for &w in &self.widths {
                let mut spec = base.clone();
                spec.student = std::iter::once(base.lags.dim())
                    .chain(std::iter::repeat_n(w, d))
                    .chain(std::iter::once(1))
                    .collect();
                if let Some(t) = &mut spec.teacher {
                    let n = t.len();
                    t[n - 2] = w;
                }
                out.push(spec);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridEntry {
    pub spec: ModelSpec,
    /// Validation negative ELBO per row for teacher-bearing models, validation
    /// loss per row otherwise. Lower is better.
    pub score: f64,
    pub criterion: &'static str,
    pub params_count: usize,
}

/// `student` widths appear in `baseline` in order (`H_S ⊆ H_B`).
pub fn is_width_subset(student: &[usize], baseline: &[usize]) -> bool {
    let mut it = baseline.iter();
    student.iter().all(|w| it.any(|b| b == w))
}

/// Scores every candidate and sorts ascending; ties keep candidate order.
pub fn rank_candidates<F>(candidates: Vec<ModelSpec>, threads: usize, score: F) -> Result<Vec<GridEntry>>
where
    F: Fn(&ModelSpec) -> Result<(f64, usize)> + Sync + Send,
{
    if candidates.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    let scored = map_indexed(candidates.len(), threads, |i| score(&candidates[i]));
    let mut out = Vec::with_capacity(candidates.len());
    for (spec, s) in candidates.into_iter().zip(scored) {
        let (score, params_count) = s?;
        let criterion = if spec.kind == ModelKind::Regenerative {
            "val_nelbo"
        } else {
            "val_loss"
        };
        out.push(GridEntry {
            spec,
            score,
            criterion,
            params_count,
        });
    }
    out.sort_by(|a, b| a.score.total_cmp(&b.score));
    Ok(out)
}

/// Short-budget fit of every grid candidate, ranked by validation criterion.
pub fn grid_search(data: &IoDataset, base: &ModelSpec, grid: &Grid, cfg: &TrainConfig, threads: usize) -> Result<Vec<GridEntry>> {
    let mut c = cfg.clone();
    c.max_epochs = grid.budget_epochs.max(1);
    rank_candidates(grid.candidates(base), threads, |spec| {
        let pair = fit(data, spec, &c)?;
        let best = pair
            .history
            .best()
            .ok_or_else(|| Error::InvalidInput("fit recorded no epochs".into()))?;
        Ok((best.val_nelbo.unwrap_or(best.val_loss), pair.model.params_count()))
    })
}
