use serde::{Deserialize, Serialize};

use super::ToolError;

/// Output size rules for zoomed crops.
///
/// Every bound is a multiple of `patch_factor`; [`ResizePolicy::from_nominal`]
/// rounds a lower bound up and upper bounds down to get there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub struct ResizePolicy {
    patch_factor: u32,
    min_side: u32,
    max_w: u32,
    max_h: u32,
}

#[derive(Serialize, Deserialize)]
struct RawPolicy {
    patch_factor: u32,
    min_side: u32,
    max_w: u32,
    max_h: u32,
}

impl TryFrom<RawPolicy> for ResizePolicy {
    type Error = ToolError;

    fn try_from(r: RawPolicy) -> Result<Self, Self::Error> {
        ResizePolicy::new(r.patch_factor, r.min_side, r.max_w, r.max_h)
    }
}

impl From<ResizePolicy> for RawPolicy {
    fn from(p: ResizePolicy) -> Self {
        RawPolicy {
            patch_factor: p.patch_factor,
            min_side: p.min_side,
            max_w: p.max_w,
            max_h: p.max_h,
        }
    }
}

impl Default for ResizePolicy {
    /// 28 px patches, nominal 256 minimum and 2048x1024 maximum, which snap
    /// to 280 and 2044x1008.
    fn default() -> Self {
        Self::from_nominal(28, 256, 2048, 1024).expect("default policy is valid")
    }
}

impl ResizePolicy {
    pub fn new(
        patch_factor: u32,
        min_side: u32,
        max_w: u32,
        max_h: u32,
    ) -> Result<Self, ToolError> {
        let bad = |msg: &str| Err(ToolError::ResizePolicy(msg.to_string()));
        if patch_factor == 0 || min_side == 0 || max_w == 0 || max_h == 0 {
            return bad("all sizes must be positive");
        }
        if [min_side, max_w, max_h]
            .iter()
            .any(|v| v % patch_factor != 0)
        {
            return bad("bounds must be multiples of the patch factor");
        }
        if min_side > max_w || min_side > max_h {
            return bad("minimum side exceeds a maximum");
        }
        Ok(Self {
            patch_factor,
            min_side,
            max_w,
            max_h,
        })
    }

    pub fn from_nominal(
        patch_factor: u32,
        min_side: u32,
        max_w: u32,
        max_h: u32,
    ) -> Result<Self, ToolError> {
        if patch_factor == 0 {
            return Err(ToolError::ResizePolicy(
                "patch factor must be positive".into(),
            ));
        }
        let up = min_side.div_ceil(patch_factor) * patch_factor;
        let down = |v: u32| v / patch_factor * patch_factor;
        Self::new(patch_factor, up, down(max_w), down(max_h))
    }

    pub fn patch_factor(&self) -> u32 {
        self.patch_factor
    }
    pub fn min_side(&self) -> u32 {
        self.min_side
    }
    pub fn max_w(&self) -> u32 {
        self.max_w
    }
    pub fn max_h(&self) -> u32 {
        self.max_h
    }

    fn snap(&self, v: f64) -> u32 {
        let p = self.patch_factor as f64;
        // nearest multiple, ties up
        let k = (v / p + 0.5).floor().max(1.0);
        k as u32 * self.patch_factor
    }
}

/// Uniformly rescale `w x h` so the short side reaches the minimum and both
/// sides fit the maxima (maxima win when both cannot hold), then snap each
/// side to the nearest patch multiple.
pub fn smart_resize(w: u32, h: u32, policy: &ResizePolicy) -> (u32, u32) {
    let (wf, hf) = (w.max(1) as f64, h.max(1) as f64);
    let short = wf.min(hf);
    let mut s = if short < policy.min_side as f64 {
        policy.min_side as f64 / short
    } else {
        1.0
    };
    s = s
        .min(policy.max_w as f64 / wf)
        .min(policy.max_h as f64 / hf);
    (policy.snap(wf * s), policy.snap(hf * s))
}
