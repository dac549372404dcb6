//! Bayesian segmentation under the Hamming loss: per-node argmax of the
//! posterior marginals.

use crate::appearance::AppearanceModel;
use crate::error::{Error, Result};
use crate::evidence::{ClampMask, Evidence, Image};
use crate::grid::{GrfModel, Labelling};
use crate::oracle::MarginalField;
use crate::sampler::{estimate_marginals, SamplerConfig};

#[derive(Clone, Debug)]
pub struct SegmentationResult {
    pub labelling: Labelling,
    pub marginals: MarginalField,
    /// Largest marginal per node.
    pub confidence: Vec<f64>,
}

/// Per node, the label with the largest marginal; ties go to the smallest label.
pub fn decode_max_marginal(marginals: &MarginalField) -> Labelling {
    let k = marginals.num_labels();
    let data = marginals
        .probs()
        .chunks_exact(k)
        .map(|p| {
            let mut best = 0;
            for (l, &v) in p.iter().enumerate().skip(1) {
                if v > p[best] {
                    best = l;
                }
            }
            best as u8
        })
        .collect();
    Labelling::new(marginals.domain(), data).expect("marginal field matches its domain")
}

/// Number of nodes where the labellings differ.
pub fn hamming_loss(a: &Labelling, b: &Labelling) -> Result<usize> {
    if a.domain() != b.domain() {
        return Err(Error::DimensionMismatch("labellings have different sizes".into()));
    }
    Ok(a.as_slice().iter().zip(b.as_slice()).filter(|(x, y)| x != y).count())
}

/// Expected Hamming loss of `y` under the marginals: `Σ_t (1 - p_t(y_t))`.
pub fn expected_risk(marginals: &MarginalField, y: &Labelling) -> Result<f64> {
    if marginals.domain() != y.domain() {
        return Err(Error::DimensionMismatch("labelling does not match the marginal field".into()));
    }
    y.check_labels(&crate::grid::LabelSet::new(marginals.num_labels())?)?;
    Ok(y.as_slice().iter().enumerate().map(|(t, &k)| 1.0 - marginals.at(t)[k as usize]).sum())
}

/// Estimates posterior marginals by sampling and decodes them.
pub fn segment(
    model: &GrfModel,
    appearance: &AppearanceModel,
    image: &Image,
    clamps: Option<&ClampMask>,
    config: &SamplerConfig,
) -> Result<SegmentationResult> {
    if appearance.channels != image.channels() {
        return Err(Error::ChannelMismatch { expected: appearance.channels, found: image.channels() });
    }
    let local = model.with_domain(image.domain());
    let evidence = Evidence { image: Some(image.clone()), clamps: clamps.cloned() };
    let marginals = estimate_marginals(&local, Some(&evidence), Some(appearance), config)?;
    Ok(from_marginals(marginals))
}

pub fn from_marginals(marginals: MarginalField) -> SegmentationResult {
    let labelling = decode_max_marginal(&marginals);
    let confidence = marginals
        .probs()
        .chunks_exact(marginals.num_labels())
        .map(|p| p.iter().copied().fold(0.0, f64::max))
        .collect();
    SegmentationResult { labelling, marginals, confidence }
}

/// Fraction of nodes where `y` equals the reference.
pub fn accuracy(y: &Labelling, reference: &Labelling) -> Result<f64> {
    Ok(1.0 - hamming_loss(y, reference)? as f64 / y.domain().nodes() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridDomain;
    use approx::assert_abs_diff_eq;

    fn field(probs: Vec<f64>, w: usize) -> MarginalField {
        MarginalField::new(GridDomain::new(w, 1).unwrap(), 2, probs).unwrap()
    }

    #[test]
    fn decoding_and_ties() {
        let m = field(vec![0.9, 0.1, 0.5, 0.5, 0.2, 0.8], 3);
        assert_eq!(decode_max_marginal(&m).as_slice(), &[0, 0, 1]);
    }

    #[test]
    fn hamming_examples() {
        let d = GridDomain::new(4, 2).unwrap();
        let a = Labelling::filled(d, 0);
        assert_eq!(hamming_loss(&a, &a).unwrap(), 0);
        let mut b = a.clone();
        b.set(0, 0, 1);
        b.set(3, 1, 1);
        b.set(2, 0, 1);
        assert_eq!(hamming_loss(&a, &b).unwrap(), 3);
        assert_eq!(hamming_loss(&a, &Labelling::filled(d, 1)).unwrap(), 8);
        assert!(hamming_loss(&a, &Labelling::filled(GridDomain::new(2, 2).unwrap(), 0)).is_err());
    }

    #[test]
    fn risk_examples() {
        let m = field(vec![0.9, 0.1, 0.4, 0.6], 2);
        let y = Labelling::new(m.domain(), vec![0, 1]).unwrap();
        assert_abs_diff_eq!(expected_risk(&m, &y).unwrap(), 0.5, epsilon = 1e-12);
        let point = field(vec![1.0, 0.0, 0.0, 1.0], 2);
        assert_eq!(expected_risk(&point, &y).unwrap(), 0.0);
    }
}
