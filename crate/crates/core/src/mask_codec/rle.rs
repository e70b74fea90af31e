use super::BinaryMask;
use crate::error::{Error, Result};

/// Run-length coded binary mask.
///
/// Runs alternate between zeros and ones over the row-major flattening,
/// starting with a (possibly empty) run of zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub runs: Vec<u32>,
}

impl RleMask {
    /// Checks the header/run invariants without expanding the mask.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidMask(format!("empty rle header {}x{}", self.height, self.width)));
        }
        let total: u64 = self.runs.iter().map(|&r| u64::from(r)).sum();
        if total != (self.height * self.width) as u64 {
            return Err(Error::Shape(format!(
                "runs cover {total} pixels but header is {}x{}",
                self.height, self.width
            )));
        }
        if self.runs.iter().skip(1).any(|&r| r == 0) {
            return Err(Error::InvalidMask("empty run after the leading zero-run".into()));
        }
        Ok(())
    }

    /// Encoded size in bytes (header plus runs).
    pub fn encoded_len(&self) -> usize {
        8 + 4 * self.runs.len()
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let mut runs = Vec::new();
    let mut current = 0u8;
    let mut len = 0u32;
    for &v in mask.values() {
        if v == current {
            len += 1;
        } else {
            runs.push(len);
            current = v;
            len = 1;
        }
    }
    runs.push(len);
    RleMask {
        height: mask.height(),
        width: mask.width(),
        runs,
    }
}

/// Expands runs back into a mask.
///
/// Empty runs after the first are tolerated here (they merge neighbouring
/// runs); only the pixel total is checked against the header.
pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    let total = rle.height * rle.width;
    let covered: u64 = rle.runs.iter().map(|&r| u64::from(r)).sum();
    if covered != total as u64 {
        return Err(Error::Shape(format!(
            "runs cover {covered} pixels but header is {}x{}",
            rle.height, rle.width
        )));
    }
    let mut values = Vec::with_capacity(total);
    for (i, &run) in rle.runs.iter().enumerate() {
        let v = (i % 2) as u8;
        values.extend(std::iter::repeat_n(v, run as usize));
    }
    BinaryMask::new(rle.height, rle.width, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_is_one_run() {
        assert_eq!(rle_encode(&BinaryMask::zeros(2, 2)).runs, vec![4]);
    }

    #[test]
    fn leading_ones_get_empty_zero_run() {
        let m = BinaryMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        assert_eq!(rle_encode(&m).runs, vec![0, 2, 2]);
    }

    #[test]
    fn decode_hand_cases() {
        let zero = RleMask { height: 2, width: 2, runs: vec![4] };
        assert_eq!(rle_decode(&zero).unwrap(), BinaryMask::zeros(2, 2));
        let one = RleMask { height: 2, width: 2, runs: vec![0, 4] };
        assert_eq!(rle_decode(&one).unwrap(), BinaryMask::ones(2, 2));
        let mixed = RleMask { height: 2, width: 2, runs: vec![1, 2, 1] };
        assert_eq!(rle_decode(&mixed).unwrap().values(), &[0, 1, 1, 0]);
    }

    #[test]
    fn decode_rejects_wrong_total() {
        let bad = RleMask { height: 2, width: 2, runs: vec![1, 2] };
        assert!(matches!(rle_decode(&bad), Err(Error::Shape(_))));
        assert!(bad.validate().is_err());
    }

    #[test]
    fn validate_rejects_inner_empty_run() {
        let r = RleMask { height: 1, width: 3, runs: vec![1, 0, 2] };
        assert!(r.validate().is_err());
        // Still decodable: the empty run just merges its neighbours.
        assert_eq!(rle_decode(&r).unwrap().values(), &[0, 0, 0]);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..24, 1usize..24).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..=1, h * w)
                .prop_map(move |v| BinaryMask::new(h, w, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn encode_is_valid_and_invertible(m in arb_mask()) {
            let r = rle_encode(&m);
            prop_assert!(r.validate().is_ok());
            prop_assert_eq!(rle_decode(&r).unwrap(), m);
        }

        #[test]
        fn reencoding_normalizes_empty_runs(runs in proptest::collection::vec(0u32..5, 1..12)) {
            let total: u32 = runs.iter().sum();
            prop_assume!(total > 0);
            let r = RleMask { height: 1, width: total as usize, runs };
            let m = rle_decode(&r).unwrap();
            let canonical = rle_encode(&m);
            prop_assert!(canonical.validate().is_ok());
            prop_assert_eq!(rle_decode(&canonical).unwrap(), m);
        }
    }
}
