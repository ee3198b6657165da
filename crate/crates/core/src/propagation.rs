//! Densifies labelled clicks into a mask by cosine-similarity thresholding
//! in patch-feature space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{pixel_to_patch, FeatureMap, Mask, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Background,
    Foreground,
}

impl Label {
    pub fn is_fg(self) -> bool {
        self == Label::Foreground
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictRule {
    LatestWins,
    MaxSimilarityWins,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub tau: f64,
    pub conflict_rule: ConflictRule,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            conflict_rule: ConflictRule::MaxSimilarityWins,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > -1.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} outside (-1, 1]", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledClick {
    pub row: usize,
    pub col: usize,
    pub label: Label,
    /// Ordinal within the episode; larger is later.
    pub sequence: usize,
}

fn patch_size_of<F: Scalar>(features: &FeatureMap<F>, base: &Mask) -> Result<usize> {
    let ps = base.height() / features.grid_h().max(1);
    if ps == 0
        || base.height() != features.grid_h() * ps
        || base.width() != features.grid_w() * ps
    {
        return Err(Error::Shape(format!(
            "mask {}x{} does not tile feature grid {}x{}",
            base.height(),
            base.width(),
            features.grid_h(),
            features.grid_w()
        )));
    }
    Ok(ps)
}

/// Cosine similarity of every patch to the clicked patch, accumulated in f64.
fn similarities<F: Scalar>(features: &FeatureMap<F>, patch: usize) -> Result<Vec<f64>> {
    let norm = |v: &[F]| v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
    let anchor = features.vector(patch);
    let na = norm(anchor);
    if !(na > 0.0) {
        return Err(Error::DegenerateFeature(
            patch / features.grid_w(),
            patch % features.grid_w(),
        ));
    }
    (0..features.num_patches())
        .map(|i| {
            let v = features.vector(i);
            let nv = norm(v);
            if !(nv > 0.0) {
                return Err(Error::DegenerateFeature(i / features.grid_w(), i % features.grid_w()));
            }
            let dot: f64 = anchor.iter().zip(v).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            Ok(if i == patch { 1.0 } else { dot / (na * nv) })
        })
        .collect()
}

/// Per-patch cosine similarity to the clicked patch as a `grid_h × grid_w`
/// tensor. The click is given in pixels.
pub fn similarity_map<F: Scalar>(
    click: &LabeledClick,
    features: &FeatureMap<F>,
    patch_size: usize,
) -> Result<Tensor<F>> {
    let (gr, gc) = pixel_to_patch(
        click.row,
        click.col,
        features.grid_h() * patch_size,
        features.grid_w() * patch_size,
        patch_size,
    )?;
    let sims = similarities(features, gr * features.grid_w() + gc)?;
    Tensor::new(
        vec![features.grid_h(), features.grid_w()],
        sims.into_iter().map(F::lit).collect(),
    )
}

/// Which click, if any, claims each patch, and with what label.
pub fn claimed_labels<F: Scalar>(
    clicks: &[LabeledClick],
    features: &FeatureMap<F>,
    config: &PropagationConfig,
    patch_size: usize,
) -> Result<Vec<Option<Label>>> {
    config.validate()?;
    let (h, w) = (features.grid_h() * patch_size, features.grid_w() * patch_size);
    let n = features.num_patches();
    // (similarity, sequence, label) of the current winner
    let mut best: Vec<Option<(f64, usize, Label)>> = vec![None; n];
    for click in clicks {
        let (gr, gc) = pixel_to_patch(click.row, click.col, h, w, patch_size)?;
        let sims = similarities(features, gr * features.grid_w() + gc)?;
        for (slot, &s) in best.iter_mut().zip(&sims) {
            if s < config.tau {
                continue;
            }
            let candidate = (s, click.sequence, click.label);
            *slot = Some(match *slot {
                None => candidate,
                Some(cur) => resolve(cur, candidate, config.conflict_rule),
            });
        }
    }
    Ok(best.into_iter().map(|b| b.map(|(_, _, l)| l)).collect())
}

fn resolve(
    cur: (f64, usize, Label),
    new: (f64, usize, Label),
    rule: ConflictRule,
) -> (f64, usize, Label) {
    match rule {
        ConflictRule::LatestWins => {
            if new.1 >= cur.1 {
                new
            } else {
                cur
            }
        }
        ConflictRule::MaxSimilarityWins => {
            if new.0 > cur.0 {
                new
            } else if new.0 < cur.0 {
                cur
            } else if new.2 == Label::Background {
                // exact tie: prefer background
                new
            } else {
                cur
            }
        }
    }
}

/// Assigns each click's label to every patch with similarity ≥ τ to the
/// clicked patch; patches no click claims keep their value from `base`.
pub fn propagate<F: Scalar>(
    clicks: &[LabeledClick],
    features: &FeatureMap<F>,
    base: &Mask,
    config: &PropagationConfig,
) -> Result<Mask> {
    if clicks.is_empty() {
        return Err(Error::Config("propagate needs at least one click".into()));
    }
    let ps = patch_size_of(features, base)?;
    let claims = claimed_labels(clicks, features, config, ps)?;
    let gw = features.grid_w();
    let mut out = base.clone();
    for r in 0..base.height() {
        for c in 0..base.width() {
            if let Some(label) = claims[(r / ps) * gw + c / ps] {
                out.set(r, c, label.is_fg());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(gh: usize, gw: usize, vecs: &[[f32; 2]]) -> FeatureMap<f32> {
        let data = vecs.iter().flat_map(|v| v.iter().copied()).collect();
        FeatureMap::new(Tensor::new(vec![gh, gw, 2], data).unwrap()).unwrap()
    }

    fn click(row: usize, col: usize, label: Label, sequence: usize) -> LabeledClick {
        LabeledClick { row, col, label, sequence }
    }

    #[test]
    fn identical_features_fill_everything() {
        let fm = map(2, 2, &[[1.0, 0.0]; 4]);
        let out = propagate(
            &[click(0, 0, Label::Foreground, 0)],
            &fm,
            &Mask::empty(8, 8),
            &PropagationConfig::default(),
        )
        .unwrap();
        assert_eq!(out, Mask::filled(8, 8, true));
    }

    #[test]
    fn orthogonal_clusters_split() {
        let fm = map(1, 2, &[[1.0, 0.0], [0.0, 1.0]]);
        let base = Mask::empty(4, 8);
        let out = propagate(&[click(1, 1, Label::Foreground, 0)], &fm, &base, &PropagationConfig::default())
            .unwrap();
        assert_eq!(out, Mask::from_fn(4, 8, |_, c| c < 4));
    }

    #[test]
    fn conflict_rules() {
        let fm = map(1, 2, &[[1.0, 0.0], [1.0, 0.0]]);
        let base = Mask::empty(2, 4);
        let clicks = [click(0, 0, Label::Foreground, 0), click(0, 3, Label::Background, 1)];
        let latest = PropagationConfig { tau: 0.8, conflict_rule: ConflictRule::LatestWins };
        assert_eq!(propagate(&clicks, &fm, &base, &latest).unwrap(), Mask::empty(2, 4));
        // identical features: every similarity ties, background preferred
        let maxsim = PropagationConfig::default();
        let flipped = [click(0, 3, Label::Background, 0), click(0, 0, Label::Foreground, 1)];
        assert_eq!(propagate(&flipped, &fm, &base, &maxsim).unwrap(), Mask::empty(2, 4));
    }

    #[test]
    fn similarity_map_values() {
        let fm = map(1, 3, &[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        let s = similarity_map(&click(0, 0, Label::Foreground, 0), &fm, 2).unwrap();
        assert_eq!(s.dims(), &[1, 3]);
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1].abs() < 1e-5);
        assert!((s.data()[2] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        let fm = map(1, 1, &[[1.0, 0.0]]);
        let base = Mask::empty(4, 4);
        let cfg = PropagationConfig::default();
        assert!(propagate(&[], &fm, &base, &cfg).is_err());
        assert!(matches!(
            propagate(&[click(4, 0, Label::Foreground, 0)], &fm, &base, &cfg),
            Err(Error::OutOfBounds { .. })
        ));
        let bad_tau = PropagationConfig { tau: 1.5, ..cfg };
        assert!(propagate(&[click(0, 0, Label::Foreground, 0)], &fm, &base, &bad_tau).is_err());
    }
}
