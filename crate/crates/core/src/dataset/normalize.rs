use ndarray::Array2;
use num_traits::ToPrimitive;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub enum Normalization {
    /// `(x - min) / (max - min)`; a constant image maps to zeros.
    #[default]
    MinMax,
    /// Clip to the given percentiles (0..=100) first, then min-max.
    Percentile { low: f64, high: f64 },
}


/// Linear-interpolated percentile of already sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p.clamp(0.0, 100.0) / 100.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Maps an image into `[0, 1]`.
pub fn normalize<P: ToPrimitive + Copy, T: Scalar>(image: &Array2<P>, method: Normalization) -> Array2<T> {
    let values = image.mapv(|v| v.to_f64().unwrap_or(0.0));
    let (lo, hi) = match method {
        Normalization::MinMax => values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        Normalization::Percentile { low, high } => {
            let mut sorted: Vec<f64> = values.iter().copied().collect();
            sorted.sort_by(f64::total_cmp);
            (percentile(&sorted, low), percentile(&sorted, high))
        }
    };
    let range = hi - lo;
    if !(range > 0.0) {
        return Array2::zeros(image.raw_dim());
    }
    values.mapv(|v| T::of((v.clamp(lo, hi) - lo) / range))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_maps_to_zero() {
        let img = Array2::from_elem((3, 3), 500u16);
        assert!(normalize::<_, f64>(&img, Normalization::MinMax).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_range_and_midpoint() {
        let img = Array2::from_shape_vec((1, 2), vec![0u16, 65535]).unwrap();
        assert_eq!(normalize::<_, f64>(&img, Normalization::MinMax).into_raw_vec_and_offset().0, vec![0.0, 1.0]);
        let img = Array2::from_shape_vec((1, 3), vec![10u16, 20, 30]).unwrap();
        assert_eq!(normalize::<_, f64>(&img, Normalization::MinMax).into_raw_vec_and_offset().0, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn percentile_clips_outliers() {
        let mut v: Vec<u16> = (0..100).collect();
        v[99] = 60000;
        let img = Array2::from_shape_vec((10, 10), v).unwrap();
        let n = normalize::<_, f64>(&img, Normalization::Percentile { low: 1.0, high: 98.0 });
        assert_eq!(n[[9, 9]], 1.0);
        assert_eq!(n[[0, 0]], 0.0);
        assert!(n[[5, 0]] > 0.45 && n[[5, 0]] < 0.55);
    }

    proptest! {
        #[test]
        fn minmax_is_monotone(values in prop::collection::vec(0u16..=u16::MAX, 16)) {
            let img = Array2::from_shape_vec((4, 4), values.clone()).unwrap();
            let n = normalize::<_, f64>(&img, Normalization::MinMax);
            for i in 0..16 {
                for j in 0..16 {
                    if values[i] <= values[j] {
                        prop_assert!(n.as_slice().unwrap()[i] <= n.as_slice().unwrap()[j]);
                    }
                }
            }
            prop_assert!(n.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
