//! The published five- and seven-oscillator uncertainty classes used for OED evaluation.

use crate::scalar::Scalar;
use crate::types::UncertaintyClass;

const N5_OMEGAS: [f64; 5] = [-2.50, -0.6667, 1.1667, 2.0, 5.8333];
const N5_UPPER: [f64; 10] = [
    1.0541, 0.6325, 0.7762, 1.4375, 1.0542, 0.6900, 1.6819, 0.4791, 2.6833, 2.2041,
];
const N5_LOWER: [f64; 10] = [
    0.7791, 0.4675, 0.5737, 1.0625, 0.7792, 0.5100, 1.2431, 0.3541, 1.9833, 1.6291,
];

const N7_OMEGAS: [f64; 7] = [-3.46, -1.96, -0.68, -0.38, -0.37, 6.12, 8.3287];
const N7_UPPER: [f64; 21] = [
    0.848, 0.988, 1.446, 1.607, 3.820, 0.915, 0.400, 0.850, 0.419, 4.162, 1.090, 0.122, 0.039,
    2.124, 0.872, 0.007, 2.737, 1.804, 1.360, 0.744, 1.174,
];
const N7_LOWER: [f64; 21] = [
    0.073, 0.172, 0.153, 0.054, 0.501, 0.463, 0.043, 0.015, 0.096, 0.501, 0.103, 0.007, 0.009,
    0.139, 0.408, 0.000, 0.131, 0.119, 0.300, 0.286, 0.131,
];

fn build<T: Scalar>(omegas: &[f64], lower: &[f64], upper: &[f64]) -> UncertaintyClass<T> {
    let c = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect();
    UncertaintyClass::new(c(omegas), c(lower), c(upper)).expect("published class is valid")
}

pub fn published_n5<T: Scalar>() -> UncertaintyClass<T> {
    build(&N5_OMEGAS, &N5_LOWER, &N5_UPPER)
}

pub fn published_n7<T: Scalar>() -> UncertaintyClass<T> {
    build(&N7_OMEGAS, &N7_LOWER, &N7_UPPER)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_classes_are_valid() {
        let c5 = published_n5::<f64>();
        assert_eq!((c5.n(), c5.pair_count()), (5, 10));
        let c7 = published_n7::<f64>();
        assert_eq!((c7.n(), c7.pair_count()), (7, 21));
        assert_eq!(c7.bounds(15), (0.0, 0.007));
    }

    #[test]
    fn published_classes_round_trip_bit_exactly() {
        for c in [published_n5::<f64>(), published_n7::<f64>()] {
            let text = serde_json::to_string(&c).unwrap();
            let back: UncertaintyClass<f64> = serde_json::from_str(&text).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(back.omegas()), bits(c.omegas()));
            assert_eq!(bits(back.lower()), bits(c.lower()));
            assert_eq!(bits(back.upper()), bits(c.upper()));
            assert_eq!(serde_json::to_string(&back).unwrap(), text);
        }
    }
}
