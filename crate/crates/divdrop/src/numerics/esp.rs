/// Table of elementary symmetric polynomials over prefixes of `lambda`.
///
/// `e[k][n]` is the k-th elementary symmetric polynomial of the first `n`
/// entries, built with the recurrence
/// `e[k][n] = e[k][n-1] + lambda[n-1] * e[k-1][n-1]`, with `e[0][n] = 1`
/// and `e[k][0] = 0` for k >= 1. Shape is `(k_max + 1) x (len + 1)`.
pub fn elementary_symmetric(lambda: &[f64], k_max: usize) -> Vec<Vec<f64>> {
    assert!(k_max <= lambda.len(), "k_max must not exceed the number of values");
    let n = lambda.len();
    let mut e = vec![vec![0.0; n + 1]; k_max + 1];
    e[0] = vec![1.0; n + 1];
    for k in 1..=k_max {
        for m in 1..=n {
            e[k][m] = e[k][m - 1] + lambda[m - 1] * e[k - 1][m - 1];
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use approx::assert_abs_diff_eq;

    // oracle: sum of products over every k-subset
    fn brute_force_esp(lambda: &[f64], k: usize) -> f64 {
        let n = lambda.len();
        let mut total = 0.0;
        for bits in 0u32..(1 << n) {
            if bits.count_ones() as usize != k {
                continue;
            }
            let mut prod = 1.0;
            for (i, &l) in lambda.iter().enumerate() {
                if bits >> i & 1 == 1 {
                    prod *= l;
                }
            }
            total += prod;
        }
        total
    }

    #[test]
    fn ones_give_binomial_coefficients() {
        let e = elementary_symmetric(&[1.0, 1.0, 1.0], 2);
        assert_eq!(e[2][3], 3.0); // C(3, 2)
        assert_eq!(e[1][3], 3.0);
        assert_eq!(e[0][3], 1.0);
    }

    #[test]
    fn hand_expansion_two_values() {
        let e = elementary_symmetric(&[2.0, 3.0], 2);
        assert_eq!(e[1][2], 5.0);
        assert_eq!(e[2][2], 6.0);
    }

    #[test]
    fn matches_subset_enumeration() {
        let mut rng = RngStream::new(42, 0);
        let lambda: Vec<f64> = (0..5).map(|_| rng.next_f64() * 3.0).collect();
        let e = elementary_symmetric(&lambda, 5);
        for k in 0..=5 {
            assert_abs_diff_eq!(e[k][5], brute_force_esp(&lambda, k), epsilon = 1e-12);
        }
    }

    #[test]
    fn recurrence_holds_exactly_as_stored() {
        let mut rng = RngStream::new(43, 0);
        let lambda: Vec<f64> = (0..7).map(|_| rng.next_f64() * 2.0).collect();
        let e = elementary_symmetric(&lambda, 4);
        for k in 1..=4 {
            for m in 1..=7 {
                assert_eq!(e[k][m], e[k][m - 1] + lambda[m - 1] * e[k - 1][m - 1]);
            }
        }
    }
}
