//! Saturating extended reals.
//!
//! Values live in `[-V_MAX, V_MAX]` plus a single `+INF_TOKEN`, represented
//! as `f64::INFINITY`. Anything computed above `V_MAX` saturates to the token;
//! anything below `-V_MAX` is clamped to `-V_MAX`. IEEE semantics already give
//! the absorbing behaviour we want for `max` and `+`, and `min(INF, a) = a`.

pub const V_MAX: f64 = 1e6;
pub const INF_TOKEN: f64 = f64::INFINITY;

#[inline]
pub fn saturate(x: f64) -> f64 {
    if x.is_nan() {
        // NaN only arises from INF - INF; the token wins.
        INF_TOKEN
    } else if x > V_MAX {
        INF_TOKEN
    } else if x < -V_MAX {
        -V_MAX
    } else {
        x
    }
}

#[inline]
pub fn is_inf(x: f64) -> bool {
    x == INF_TOKEN
}

#[inline]
pub fn ext_add(a: f64, b: f64) -> f64 {
    if is_inf(a) || is_inf(b) {
        INF_TOKEN
    } else {
        saturate(a + b)
    }
}

#[inline]
pub fn ext_max(a: f64, b: f64) -> f64 {
    if a >= b {
        a
    } else {
        b
    }
}

#[inline]
pub fn ext_min(a: f64, b: f64) -> f64 {
    if a <= b {
        a
    } else {
        b
    }
}

/// `(x - lambda)^+` with the token absorbing.
#[inline]
pub fn positive_part_shift(x: f64, lambda: f64) -> f64 {
    if is_inf(x) {
        INF_TOKEN
    } else {
        (x - lambda).max(0.0)
    }
}

/// Negation for the minorant/majorant duality: `-INF_TOKEN` clamps to `-V_MAX`.
#[inline]
pub fn ext_neg(x: f64) -> f64 {
    if is_inf(x) {
        -V_MAX
    } else if x <= -V_MAX {
        // Only reachable from a clamped value; map back to the token.
        INF_TOKEN
    } else {
        -x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_rules() {
        assert!(is_inf(saturate(2e6)));
        assert_eq!(saturate(-2e6), -V_MAX);
        assert_eq!(saturate(3.5), 3.5);
        assert!(is_inf(saturate(f64::NAN)));
    }

    #[test]
    fn token_is_absorbing_for_sum_and_max_dominated_for_min() {
        assert!(is_inf(ext_add(INF_TOKEN, -5.0)));
        assert!(is_inf(ext_max(INF_TOKEN, 1.0)));
        assert_eq!(ext_min(INF_TOKEN, 1.0), 1.0);
        assert!(is_inf(ext_add(V_MAX, 1.0)));
    }

    #[test]
    fn negation_round_trips_the_token() {
        assert_eq!(ext_neg(INF_TOKEN), -V_MAX);
        assert!(is_inf(ext_neg(ext_neg(INF_TOKEN))));
        assert_eq!(ext_neg(ext_neg(2.0)), 2.0);
    }
}
