use std::fmt;

use ndarray::{s, Array2};

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quadrant {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::TopLeft, Quadrant::TopRight, Quadrant::BottomLeft, Quadrant::BottomRight];

    /// `(row, col)` origin in units of the quadrant size.
    fn origin(self) -> (usize, usize) {
        match self {
            Quadrant::TopLeft => (0, 0),
            Quadrant::TopRight => (0, 1),
            Quadrant::BottomLeft => (1, 0),
            Quadrant::BottomRight => (1, 1),
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrant::TopLeft => "tl",
            Quadrant::TopRight => "tr",
            Quadrant::BottomLeft => "bl",
            Quadrant::BottomRight => "br",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub fov: String,
    pub frame: usize,
    pub quadrant: Quadrant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch<T> {
    pub provenance: Provenance,
    pub input: Array2<T>,
    pub target: Array2<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchSet<T> {
    pub patches: Vec<Patch<T>>,
}

fn quadrants<T: Clone>(image: &Array2<T>) -> Result<[Array2<T>; 4], DatasetError> {
    let (h, w) = image.dim();
    if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(DatasetError::Dimension(format!("cannot split a {h}x{w} image into four equal quadrants")));
    }
    let (qh, qw) = (h / 2, w / 2);
    Ok(Quadrant::ALL.map(|q| {
        let (r, c) = q.origin();
        image.slice(s![r * qh..(r + 1) * qh, c * qw..(c + 1) * qw]).to_owned()
    }))
}

/// Four aligned (input, target) quadrant pairs in TL, TR, BL, BR order.
pub fn slice_patches<T: Clone>(
    input: &Array2<T>,
    target: &Array2<T>,
    fov: &str,
    frame: usize,
) -> Result<PatchSet<T>, DatasetError> {
    if input.dim() != target.dim() {
        return Err(DatasetError::Dimension(format!("input {:?} and target {:?} differ", input.dim(), target.dim())));
    }
    let ins = quadrants(input)?;
    let tgs = quadrants(target)?;
    let patches = ins
        .into_iter()
        .zip(tgs)
        .zip(Quadrant::ALL)
        .map(|((input, target), quadrant)| Patch {
            provenance: Provenance { fov: fov.to_string(), frame, quadrant },
            input,
            target,
        })
        .collect();
    Ok(PatchSet { patches })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Input,
    Target,
}

/// Inverse of [`slice_patches`] for one side of the pairs.
pub fn reassemble_patches<T: Clone + num_traits::Zero>(patches: &[Patch<T>], side: Side) -> Result<Array2<T>, DatasetError> {
    if patches.len() != 4 {
        return Err(DatasetError::Patches(format!("need exactly 4 quadrants, got {}", patches.len())));
    }
    let first = &patches[0].provenance;
    let mut seen = [false; 4];
    for p in patches {
        if p.provenance.fov != first.fov || p.provenance.frame != first.frame {
            return Err(DatasetError::Patches("quadrants come from different source images".into()));
        }
        let idx = p.provenance.quadrant as usize;
        if seen[idx] {
            return Err(DatasetError::Patches(format!("duplicate quadrant {}", p.provenance.quadrant)));
        }
        seen[idx] = true;
    }
    let pick = |p: &Patch<T>| match side {
        Side::Input => p.input.clone(),
        Side::Target => p.target.clone(),
    };
    let (qh, qw) = pick(&patches[0]).dim();
    let mut out = Array2::zeros((2 * qh, 2 * qw));
    for p in patches {
        let q = pick(p);
        if q.dim() != (qh, qw) {
            return Err(DatasetError::Patches("quadrants differ in size".into()));
        }
        let (r, c) = p.provenance.quadrant.origin();
        out.slice_mut(s![r * qh..(r + 1) * qh, c * qw..(c + 1) * qw]).assign(&q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadrant_order_and_alignment() {
        let img = Array2::from_shape_fn((4, 4), |(r, c)| (r * 4 + c) as u16);
        let set = slice_patches(&img, &img, "a", 0).unwrap();
        let q: Vec<Quadrant> = set.patches.iter().map(|p| p.provenance.quadrant).collect();
        assert_eq!(q, Quadrant::ALL.to_vec());
        assert_eq!(set.patches[1].input, ndarray::arr2(&[[2u16, 3], [6, 7]]));
        assert_eq!(set.patches[2].target, ndarray::arr2(&[[8u16, 9], [12, 13]]));
    }

    #[test]
    fn constant_image_gives_identical_patches() {
        let img = Array2::from_elem((256, 256), 7u16);
        let set = slice_patches(&img, &img, "c", 3).unwrap();
        assert_eq!(set.patches.len(), 4);
        assert!(set.patches.iter().all(|p| p.input == Array2::from_elem((128, 128), 7u16)));
    }

    #[test]
    fn odd_or_mismatched_dimensions_fail() {
        let a = Array2::<u16>::zeros((5, 4));
        assert!(matches!(slice_patches(&a, &a, "x", 0), Err(DatasetError::Dimension(_))));
        let b = Array2::<u16>::zeros((4, 4));
        let c = Array2::<u16>::zeros((4, 6));
        assert!(matches!(slice_patches(&b, &c, "x", 0), Err(DatasetError::Dimension(_))));
    }

    #[test]
    fn missing_or_duplicate_quadrants_fail() {
        let img = Array2::from_shape_fn((4, 4), |(r, c)| (r + c) as u16);
        let set = slice_patches(&img, &img, "x", 0).unwrap();
        assert!(reassemble_patches(&set.patches[..3], Side::Input).is_err());
        let mut dup = set.patches.clone();
        dup[3] = dup[0].clone();
        assert!(matches!(reassemble_patches(&dup, Side::Input), Err(DatasetError::Patches(_))));
    }

    proptest! {
        #[test]
        fn slice_then_reassemble_is_identity(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
            let img = Array2::from_shape_fn((2 * h, 2 * w), |(r, c)| {
                (seed.wrapping_mul(6364136223846793005).wrapping_add((r * 977 + c * 131) as u64) >> 48) as u16
            });
            let target = img.mapv(|v| v.wrapping_mul(3));
            let set = slice_patches(&img, &target, "p", 1).unwrap();
            prop_assert_eq!(reassemble_patches(&set.patches, Side::Input).unwrap(), img);
            prop_assert_eq!(reassemble_patches(&set.patches, Side::Target).unwrap(), target);
        }
    }
}
