//! Inter-modal alignment: how well the claims match the image in a shared
//! text/image embedding space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::item::ClaimSet;
use crate::linalg::dot;
use crate::providers::{JointPayload, ProviderError, Session};

/// How per-claim scores reduce to one alignment score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Conservative: any misaligned claim pulls the score down.
    Min,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignmentError {
    #[error("alignment needs at least one claim")]
    EmptyClaims,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub s_inter: f64,
    pub per_claim: Vec<(usize, f64)>,
    pub aggregation: Aggregation,
}

pub fn aggregate(scores: &[f64], aggregation: Aggregation) -> Result<f64, AlignmentError> {
    if scores.is_empty() {
        return Err(AlignmentError::EmptyClaims);
    }
    Ok(match aggregation {
        Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        Aggregation::Min => scores.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

impl AlignmentReport {
    pub fn from_scores(scores: &[f64], aggregation: Aggregation) -> Result<Self, AlignmentError> {
        Ok(Self {
            s_inter: aggregate(scores, aggregation)?,
            per_claim: scores.iter().copied().enumerate().collect(),
            aggregation,
        })
    }

    pub fn scores(&self) -> Vec<f64> {
        self.per_claim.iter().map(|(_, s)| *s).collect()
    }
}

/// Embeds the image and each claim in the joint space and aggregates the
/// per-claim dot products.
pub fn alignment_score(
    session: &mut Session,
    claims: &ClaimSet,
    image: &str,
    aggregation: Aggregation,
) -> Result<AlignmentReport, AlignmentError> {
    if claims.is_empty() {
        return Err(AlignmentError::EmptyClaims);
    }
    let img = session.embed_joint(&JointPayload::Image(image.to_string()), "align_image")?;
    let mut scores = Vec::with_capacity(claims.len());
    for statement in claims.statements() {
        let txt = session.embed_joint(&JointPayload::Text(statement.to_string()), "align_claim")?;
        scores.push(dot(&txt.values, &img.values).clamp(-1.0, 1.0));
    }
    AlignmentReport::from_scores(&scores, aggregation)
}
