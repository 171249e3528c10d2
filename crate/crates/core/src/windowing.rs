//! Sliding-window segmentation plans over token offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 512;
pub const DEFAULT_STRIDE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowParams {
    pub w: usize,
    pub s: usize,
    pub cap: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        WindowParams {
            w: DEFAULT_WINDOW,
            s: DEFAULT_STRIDE,
            cap: crate::embedding::DEFAULT_CAP,
        }
    }
}

impl WindowParams {
    pub fn validate(&self) -> Result<()> {
        if self.w == 0 {
            return Err(Error::invalid("window size must be at least 1"));
        }
        if self.s == 0 || self.s > self.w {
            return Err(Error::invalid(format!(
                "stride {} must lie in [1, window size {}]",
                self.s, self.w
            )));
        }
        if self.cap == 0 {
            return Err(Error::invalid("cap must be at least 1"));
        }
        Ok(())
    }
}

/// Half-open `[start, end)` token spans, serialized as two-element arrays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub w: usize,
    pub s: usize,
    pub cap: usize,
    pub spans: Vec<(usize, usize)>,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Windows needed to cover `n_tokens` before capping.
fn uncapped_count(n_tokens: usize, w: usize, s: usize) -> usize {
    if n_tokens <= w {
        1
    } else {
        (n_tokens - w).div_ceil(s) + 1
    }
}

fn check(n_tokens: usize, params: &WindowParams) -> Result<()> {
    if n_tokens == 0 {
        return Err(Error::invalid("n_tokens must be at least 1"));
    }
    params.validate()
}

pub fn window_count(n_tokens: usize, w: usize, s: usize, cap: usize) -> Result<usize> {
    let params = WindowParams { w, s, cap };
    check(n_tokens, &params)?;
    Ok(uncapped_count(n_tokens, w, s).min(cap))
}

/// Starts at `0, s, 2s, …`; the final uncapped window is clipped to end at
/// `n_tokens`. When the cap binds, the first `cap` windows are kept.
pub fn plan_windows(n_tokens: usize, w: usize, s: usize, cap: usize) -> Result<WindowPlan> {
    let count = window_count(n_tokens, w, s, cap)?;
    let spans = (0..count)
        .map(|i| {
            let start = i * s;
            (start, (start + w).min(n_tokens))
        })
        .collect();
    Ok(WindowPlan { w, s, cap, spans })
}

impl WindowParams {
    pub fn plan(&self, n_tokens: usize) -> Result<WindowPlan> {
        plan_windows(n_tokens, self.w, self.s, self.cap)
    }

    pub fn count(&self, n_tokens: usize) -> Result<usize> {
        window_count(n_tokens, self.w, self.s, self.cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn short_transcript_single_span() {
        let p = plan_windows(300, 512, 256, 200).unwrap();
        assert_eq!(p.spans, vec![(0, 300)]);
    }

    #[test]
    fn three_overlapping_spans() {
        let p = plan_windows(1000, 512, 256, 200).unwrap();
        assert_eq!(p.spans, vec![(0, 512), (256, 768), (512, 1000)]);
    }

    #[test]
    fn cap_keeps_first_windows() {
        let p = plan_windows(60000, 512, 256, 200).unwrap();
        assert_eq!(p.len(), 200);
        assert_eq!(p.spans[0].0, 0);
        assert_eq!(p.spans[199].0, 199 * 256);
        assert_eq!(p.spans[199].1, 199 * 256 + 512);
    }

    #[test]
    fn counts() {
        assert_eq!(window_count(512, 512, 256, 200).unwrap(), 1);
        assert_eq!(window_count(513, 512, 256, 200).unwrap(), 2);
        assert_eq!(window_count(2992, 512, 256, 200).unwrap(), 11);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(plan_windows(0, 512, 256, 200).is_err());
        assert!(plan_windows(10, 512, 0, 200).is_err());
        assert!(plan_windows(10, 4, 5, 200).is_err());
        assert!(plan_windows(10, 4, 2, 0).is_err());
    }

    #[test]
    fn json_shape() {
        let p = plan_windows(1000, 512, 256, 200).unwrap();
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["spans"][2], serde_json::json!([512, 1000]));
    }

    proptest! {
        #[test]
        fn plan_invariants(n in 1usize..5000, w in 1usize..300, frac in 0.0f64..1.0, cap in 1usize..40) {
            let s = 1 + ((w - 1) as f64 * frac) as usize;
            let p = plan_windows(n, w, s, cap).unwrap();
            prop_assert!(!p.spans.is_empty() && p.len() <= cap);
            prop_assert_eq!(p.len(), window_count(n, w, s, cap).unwrap());
            for pair in p.spans.windows(2) {
                prop_assert_eq!(pair[1].0 - pair[0].0, s);
            }
            prop_assert!(p.spans.iter().all(|&(a, b)| a < b && b <= n && b - a <= w));
            if uncapped_count(n, w, s) <= cap {
                // full coverage of every token
                let mut covered = 0;
                for &(a, b) in &p.spans {
                    prop_assert!(a <= covered);
                    covered = covered.max(b);
                }
                prop_assert_eq!(covered, n);
            }
        }

        #[test]
        fn count_monotone(n in 1usize..5000, w in 1usize..300, s_raw in 1usize..300, cap in 1usize..50) {
            let s = s_raw.min(w);
            prop_assert!(window_count(n + 1, w, s, cap).unwrap() >= window_count(n, w, s, cap).unwrap());
        }

        #[test]
        fn no_overlap_partitions(n in 1usize..3000, w in 1usize..200) {
            let p = plan_windows(n, w, w, usize::MAX).unwrap();
            let total: usize = p.spans.iter().map(|&(a, b)| b - a).sum();
            prop_assert_eq!(total, n);
            for pair in p.spans.windows(2) {
                prop_assert_eq!(pair[0].1, pair[1].0);
            }
        }
    }
}
