//! Joint-wise attention from heatmap peaks and attention-based merging.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{JointSet, Rotation, NUM_JOINTS};
use crate::scene::HeatmapStack;

/// Attention softness `β`: a positive number or infinity.
///
/// Serialized as a number, or as the string `"inf"` for infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Softness(f64);

impl Softness {
    pub const INFINITE: Softness = Softness(f64::INFINITY);

    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_nan() || beta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "attention softness must be positive, got {beta}"
            )));
        }
        Ok(Self(beta))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl Default for Softness {
    fn default() -> Self {
        Self::INFINITE
    }
}

impl fmt::Display for Softness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for Softness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Self::INFINITE),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("cannot parse softness {other:?}")))
                .and_then(Self::new),
        }
    }
}

impl Serialize for Softness {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Softness {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Number(x) => Softness::new(x),
            Raw::Text(t) => t.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Per-joint weights of the two views; `first[j] + second[j] == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl AttentionWeights {
    /// The same weight for view 1 on every joint.
    pub fn uniform(first: f64) -> Result<Self> {
        Self::from_first(vec![first; NUM_JOINTS])
    }

    pub fn from_first(first: Vec<f64>) -> Result<Self> {
        if first.len() != NUM_JOINTS || first.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidInput(
                "need 21 attention weights in [0, 1]".into(),
            ));
        }
        let second = first.iter().map(|w| 1.0 - w).collect();
        Ok(Self { first, second })
    }
}

/// `w_j^v = β^{p_j^v} / Σ_u β^{p_j^u}` with `p` the heatmap peak values.
///
/// At `β = ∞` the view with the strictly larger peak gets weight 1, and exact
/// ties split evenly.
pub fn joint_attention(h1: &HeatmapStack, h2: &HeatmapStack, beta: Softness) -> AttentionWeights {
    let log_beta = beta.value().ln();
    let first = (0..NUM_JOINTS)
        .map(|j| {
            let (p1, p2) = (h1.peak_value(j), h2.peak_value(j));
            if beta.is_infinite() {
                match p1.partial_cmp(&p2) {
                    Some(std::cmp::Ordering::Greater) => 1.0,
                    Some(std::cmp::Ordering::Less) => 0.0,
                    _ => 0.5,
                }
            } else {
                // β^p1 / (β^p1 + β^p2), written to avoid overflow.
                1.0 / (1.0 + ((p2 - p1) * log_beta).exp())
            }
        })
        .collect::<Vec<f64>>();
    let second = first.iter().map(|w| 1.0 - w).collect();
    AttentionWeights { first, second }
}

fn check_aligned(j: &JointSet, name: &str) -> Result<()> {
    if !j.is_finite() || !j.is_wrist_aligned(1e-9) {
        return Err(Error::InvalidInput(format!(
            "{name} must be finite and wrist-aligned"
        )));
    }
    Ok(())
}

/// Attention-weighted fusion of both views, expressed in each view's frame:
/// `ŷ¹ = w¹∘j1 + w²∘(Rᵀ j2)` and `ŷ² = w¹∘(R j1) + w²∘j2`.
pub fn abm_merge(
    j1: &JointSet,
    j2: &JointSet,
    w: &AttentionWeights,
    r: &Rotation,
) -> Result<(JointSet, JointSet)> {
    check_aligned(j1, "view 1 joints")?;
    check_aligned(j2, "view 2 joints")?;
    let j2_in_1 = j2.rotate_inverse(r);
    let j1_in_2 = j1.rotate(r);
    let mut y1 = Vec::with_capacity(NUM_JOINTS);
    let mut y2 = Vec::with_capacity(NUM_JOINTS);
    for k in 0..NUM_JOINTS {
        let (a, b) = (w.first[k], w.second[k]);
        y1.push(j1[k] * a + j2_in_1[k] * b);
        y2.push(j1_in_2[k] * a + j2[k] * b);
    }
    Ok((
        JointSet::from_points_unchecked(y1)?,
        JointSet::from_points_unchecked(y2)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softness_parsing() {
        assert!("inf".parse::<Softness>().unwrap().is_infinite());
        assert_eq!("2.5".parse::<Softness>().unwrap().value(), 2.5);
        assert!("0".parse::<Softness>().is_err());
        assert!("-1".parse::<Softness>().is_err());
        assert!(Softness::new(f64::NAN).is_err());
        let json = serde_json::to_string(&Softness::INFINITE).unwrap();
        assert_eq!(json, "\"inf\"");
        assert!(serde_json::from_str::<Softness>(&json)
            .unwrap()
            .is_infinite());
        assert_eq!(
            serde_json::from_str::<Softness>("3.0").unwrap().value(),
            3.0
        );
    }

    #[test]
    fn extreme_peaks_do_not_overflow() {
        let a = HeatmapStack::uniform(1.0).unwrap();
        let b = HeatmapStack::uniform(0.0).unwrap();
        let w = joint_attention(&a, &b, Softness::new(1e300).unwrap());
        assert!(w.first.iter().all(|x| x.is_finite() && *x > 0.99));
    }
}
