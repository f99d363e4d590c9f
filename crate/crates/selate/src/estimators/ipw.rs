//! Inverse propensity weighting restricted to the overlap regions.

use crate::data::Dataset;
use crate::propensity::{OverlapRegions, PropensityModel};
use crate::{Error, Result};

/// Self-normalized weighted mean of the factual outcomes of `arm` within its
/// overlap region, weights `1 / P_hat(T=arm | x)`.
pub fn ipw_arm_mean(
    observed: &Dataset,
    model: &PropensityModel,
    arm: u8,
    regions: &OverlapRegions,
) -> Result<f64> {
    let samples = observed.samples();
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in regions.region_for_arm(arm) {
        let s = &samples[i];
        if s.t != arm {
            continue;
        }
        let w = 1.0 / model.arm_probability(arm, s.x);
        num += w * s.y;
        den += w;
    }
    if den == 0.0 {
        return Err(Error::Data(format!("no overlap support for arm {arm}")));
    }
    Ok(num / den)
}
