//! Constant voting map from `L_out` output units to `C` class scores: the
//! average of each contiguous group of `L_out / C` units.

use crate::diff::Tensor;
use crate::error::{invalid, Error, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Voting {
    pub classes: usize,
    pub width: usize,
}

impl Voting {
    pub fn new(width: usize, classes: usize) -> Result<Self> {
        if classes == 0 || width == 0 || !width.is_multiple_of(classes) {
            return Err(Error::Spec(format!(
                "voting width {width} is not divisible by {classes} classes"
            )));
        }
        Ok(Voting { classes, width })
    }

    pub fn group(&self) -> usize {
        self.width / self.classes
    }

    /// Dense `[C, L_out]` form.
    pub fn matrix(&self) -> Tensor {
        let g = self.group();
        Tensor::from_fn([self.classes, self.width], |i| {
            let (c, n) = (i / self.width, i % self.width);
            if n / g == c {
                1.0 / g as Real
            } else {
                0.0
            }
        })
    }

    /// Class scores `[B, C]` from outputs `[T, B, L_out]`: time average,
    /// then group average.
    pub fn scores(&self, o: &Tensor) -> Result<Tensor> {
        let &[t, b, l] = o.shape() else {
            return Err(invalid!(
                "voting expects [T, B, L_out], got {:?}",
                o.shape()
            ));
        };
        if l != self.width || t == 0 {
            return Err(invalid!(
                "voting over width {} got {:?}",
                self.width,
                o.shape()
            ));
        }
        let g = self.group();
        let norm = 1.0 / (t * g) as Real;
        let mut s = Tensor::zeros([b, self.classes]);
        let od = o.data();
        let sd = s.data_mut();
        for ti in 0..t {
            for bi in 0..b {
                let row = &od[(ti * b + bi) * l..(ti * b + bi + 1) * l];
                for (n, &v) in row.iter().enumerate() {
                    sd[bi * self.classes + n / g] += v;
                }
            }
        }
        sd.iter_mut().for_each(|v| *v *= norm);
        Ok(s)
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_group_averages() {
        let v = Voting::new(100, 20).unwrap();
        assert_eq!(v.group(), 5);
        let m = v.matrix();
        for c in 0..20 {
            let row = &m.data()[c * 100..(c + 1) * 100];
            assert!((row.iter().sum::<Real>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        assert!(matches!(Voting::new(100, 7), Err(Error::Spec(_))));
    }

    #[test]
    fn scores_match_matrix_form() {
        let v = Voting::new(6, 3).unwrap();
        let o = Tensor::from_fn([2, 1, 6], |i| i as Real);
        let s = v.scores(&o).unwrap();
        // time mean of unit n is n + 3; groups {0,1}, {2,3}, {4,5}
        assert_eq!(s.data(), &[3.5, 5.5, 7.5]);
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
