//! Real spherical harmonics on the unit sphere.
//!
//! Convention used throughout the crate: real basis, orthonormal on S^2,
//! Condon-Shortley phase omitted. With theta the polar angle (cos theta = z)
//! and phi = atan2(y, x):
//!
//! ```text
//! Y_{l,0}  = N_{l,0} P_l(cos theta)
//! Y_{l,m}  = sqrt(2) N_{l,m}  P_l^m(cos theta)  cos(m phi)   (m > 0)
//! Y_{l,-m} = sqrt(2) N_{l,m}  P_l^m(cos theta)  sin(m phi)   (m > 0)
//! N_{l,m}  = sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!)
//! ```
//!
//! The associated Legendre functions are computed by the standard stable
//! recurrence, without the (-1)^m phase factor.

/// Associated Legendre P_l^m(x) for m >= 0, Condon-Shortley phase omitted.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    assert!(m <= l, "assoc_legendre requires m <= l");
    // P_m^m = (2m-1)!! (1-x^2)^(m/2)
    let mut pmm = 1.0;
    if m > 0 {
        let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= fact * somx2;
            fact += 2.0;
        }
    }
    if l == m {
        return pmm;
    }
    // P_{m+1}^m = x (2m+1) P_m^m
    let mut pmmp1 = x * (2.0 * m as f64 + 1.0) * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    // upward recurrence in l
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = (x * (2.0 * ll as f64 - 1.0) * pmmp1 - (ll + m - 1) as f64 * pmm)
            / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Legendre polynomial P_l(x) = P_l^0(x).
pub fn legendre(l: usize, x: f64) -> f64 {
    assoc_legendre(l, 0, x)
}

/// P_l(0) in closed form: zero for odd l, (-1)^(l/2) (l-1)!!/l!! for even l.
pub fn legendre_at_zero(l: usize) -> f64 {
    if l % 2 == 1 {
        return 0.0;
    }
    let mut v = 1.0;
    let mut k = l;
    // (l-1)!! / l!! built pairwise to stay exact in f64 for small l
    while k >= 2 {
        v *= (k - 1) as f64 / k as f64;
        k -= 2;
    }
    if (l / 2) % 2 == 1 {
        -v
    } else {
        v
    }
}

fn factorial_ratio(l: usize, m: usize) -> f64 {
    // (l-m)! / (l+m)! as a product of inverse factors
    let mut v = 1.0;
    for k in (l - m + 1)..=(l + m) {
        v /= k as f64;
    }
    v
}

/// Evaluate the real spherical harmonic Y_{l,m} at a unit direction.
///
/// The azimuthal factors cos(m phi) and sin(m phi) are built by the
/// Chebyshev-style product recurrence on (x/rho, y/rho) rather than through
/// atan2, which keeps antipodal evaluation bitwise exact for even l: negating
/// the direction negates both seed values, and all even-order products of
/// exactly negated IEEE numbers reproduce identical bits.
pub fn eval_real_sh(l: usize, m: i32, dir: [f64; 3]) -> f64 {
    let [x, y, z] = dir;
    let m_abs = m.unsigned_abs() as usize;
    debug_assert!(m_abs <= l);
    let norm = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial_ratio(l, m_abs))
        .sqrt();
    let p = assoc_legendre(l, m_abs, z);
    if m == 0 {
        return norm * p;
    }
    let rho = (x * x + y * y).sqrt();
    if rho == 0.0 {
        // at the poles every m != 0 harmonic vanishes (P_l^m(+-1) = 0)
        return 0.0;
    }
    let (c1, s1) = (x / rho, y / rho);
    let (mut cm, mut sm) = (c1, s1);
    for _ in 1..m_abs {
        let c = cm * c1 - sm * s1;
        let s = sm * c1 + cm * s1;
        cm = c;
        sm = s;
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    if m > 0 {
        sqrt2 * norm * p * cm
    } else {
        sqrt2 * norm * p * sm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    // Independent closed forms for low orders, written from the textbook
    // expressions (orthonormal real SH, no Condon-Shortley phase).
    fn reference_l2(m: i32, d: [f64; 3]) -> f64 {
        let [x, y, z] = d;
        match m {
            -2 => 0.25 * (15.0 / PI).sqrt() * 2.0 * x * y,
            -1 => 0.5 * (15.0 / PI).sqrt() * y * z,
            0 => 0.25 * (5.0 / PI).sqrt() * (3.0 * z * z - 1.0),
            1 => 0.5 * (15.0 / PI).sqrt() * x * z,
            2 => 0.25 * (15.0 / PI).sqrt() * (x * x - y * y),
            _ => unreachable!(),
        }
    }

    fn reference_l4_m0(d: [f64; 3]) -> f64 {
        let z = d[2];
        (3.0 / 16.0) * (1.0 / PI).sqrt() * (35.0 * z.powi(4) - 30.0 * z * z + 3.0)
    }

    fn sample_dirs() -> Vec<[f64; 3]> {
        let raw: [[f64; 3]; 6] = [
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.6, 0.8, 0.0],
            [0.48, -0.6, 0.64],
            [-0.267261, 0.534522, 0.801784],
        ];
        raw.iter()
            .map(|d| {
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                [d[0] / n, d[1] / n, d[2] / n]
            })
            .collect()
    }

    #[test]
    fn l0_is_constant() {
        for d in sample_dirs() {
            let v = eval_real_sh(0, 0, d);
            assert!((v - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn l2_matches_reference_table() {
        for d in sample_dirs() {
            for m in -2..=2 {
                let got = eval_real_sh(2, m, d);
                let want = reference_l2(m, d);
                assert!(
                    (got - want).abs() < 1e-13,
                    "Y_2^{m} at {d:?}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn l2_m0_at_pole() {
        // (1/4) sqrt(5/pi) (3 cos^2 0 - 1) = (1/2) sqrt(5/pi)
        let v = eval_real_sh(2, 0, [0.0, 0.0, 1.0]);
        assert!((v - 0.5 * (5.0 / PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn l4_m0_matches_reference() {
        for d in sample_dirs() {
            let got = eval_real_sh(4, 0, d);
            let want = reference_l4_m0(d);
            assert!((got - want).abs() < 1e-13, "at {d:?}: {got} vs {want}");
        }
    }

    #[test]
    fn even_orders_are_antipodally_symmetric() {
        for d in sample_dirs() {
            let neg = [-d[0], -d[1], -d[2]];
            for l in [0usize, 2, 4, 6, 8] {
                for m in -(l as i32)..=(l as i32) {
                    let a = eval_real_sh(l, m, d);
                    let b = eval_real_sh(l, m, neg);
                    assert_eq!(a.to_bits(), b.to_bits(), "l={l} m={m} dir={d:?}");
                }
            }
        }
    }

    #[test]
    fn legendre_at_zero_closed_form() {
        assert_eq!(legendre_at_zero(0), 1.0);
        assert!((legendre_at_zero(2) + 0.5).abs() < 1e-15);
        assert!((legendre_at_zero(4) - 0.375).abs() < 1e-15);
        assert!((legendre_at_zero(6) + 5.0 / 16.0).abs() < 1e-15);
        assert!((legendre_at_zero(8) - 35.0 / 128.0).abs() < 1e-15);
        // agrees with the recurrence evaluated at x = 0
        for l in [0usize, 2, 4, 6, 8, 10] {
            assert!((legendre_at_zero(l) - legendre(l, 0.0)).abs() < 1e-14);
        }
    }
}
