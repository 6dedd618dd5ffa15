//! Decimal float formatting for the CSV formats: values must parse back to
//! the exact same bits while staying readable.

/// Formats a finite float as decimal text carrying at least nine
/// significant digits.
///
/// The shortest round-trip form is used when it is already that precise;
/// anything shorter is padded to nine digits in scientific notation, which
/// still parses back exactly: nine correctly rounded digits uniquely
/// identify any value whose shortest form needs at most nine.
pub(crate) fn fmt_float(v: f64) -> String {
    debug_assert!(v.is_finite(), "only finite values are serialized");
    let shortest = format!("{v}");
    if significant_digits(&shortest) >= 9 {
        shortest
    } else {
        format!("{v:.8e}")
    }
}

fn significant_digits(s: &str) -> usize {
    let mantissa = s.split(['e', 'E']).next().unwrap_or(s);
    mantissa
        .chars()
        .filter(|c| c.is_ascii_digit())
        .skip_while(|&c| c == '0')
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn roundtrips(v: f64) {
        let text = fmt_float(v);
        let back: f64 = text.parse().unwrap();
        assert!(
            back == v || (back == 0.0 && v == 0.0),
            "{v} -> {text} -> {back}"
        );
    }

    #[test]
    fn known_values_roundtrip_with_nine_digits() {
        for v in [
            0.0,
            -0.0,
            1.0,
            0.5,
            0.1,
            1.0 / 3.0,
            5.0 / 3.0,
            -5.999999999,
            f64::EPSILON,
            1e-300,
            9.87654321e8,
            6.0,
            -6.0,
        ] {
            roundtrips(v);
            let text = fmt_float(v);
            assert!(
                significant_digits(&text) >= 9 || text.contains('e'),
                "{text} lost precision budget"
            );
        }
    }

    #[test]
    fn short_values_are_padded_to_scientific() {
        assert_eq!(fmt_float(0.5), "5.00000000e-1");
        assert_eq!(fmt_float(0.0), "0.00000000e0");
        assert_eq!(fmt_float(1.0), "1.00000000e0");
    }

    #[test]
    fn long_values_keep_their_shortest_form() {
        let v = 0.123456789012345;
        assert_eq!(fmt_float(v), format!("{v}"));
    }

    #[test]
    fn random_values_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20_000 {
            roundtrips(rng.gen_range(-6.0..6.0));
            roundtrips(rng.gen_range(-1e-4..1e-4));
            let bits: u64 = rng.gen();
            let v = f64::from_bits(bits);
            if v.is_finite() {
                roundtrips(v);
            }
        }
    }
}
