//! Sliding-window framing shared by the victim and the surrogate backbone.

use crate::error::{Error, Result};

/// Window geometry in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Framing {
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for Framing {
    fn default() -> Self {
        Self {
            frame_len: 400,
            hop: 320,
        }
    }
}

impl Framing {
    /// `floor((n - frame_len) / hop) + 1`, or `None` if `n < frame_len`.
    pub fn frame_count(&self, n: usize) -> Option<usize> {
        (n >= self.frame_len).then(|| (n - self.frame_len) / self.hop + 1)
    }

    pub fn frames<'a>(&self, samples: &'a [f64]) -> Result<impl ExactSizeIterator<Item = &'a [f64]> + 'a> {
        let t = self.frame_count(samples.len()).ok_or_else(|| {
            Error::input(format!(
                "{} samples is shorter than one {}-sample frame",
                samples.len(),
                self.frame_len
            ))
        })?;
        let (len, hop) = (self.frame_len, self.hop);
        Ok((0..t).map(move |i| &samples[i * hop..i * hop + len]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second() {
        assert_eq!(Framing::default().frame_count(16_000), Some(49));
        assert_eq!(Framing::default().frame_count(400), Some(1));
        assert_eq!(Framing::default().frame_count(399), None);
    }
}
