//! Spherical Bessel functions of the first kind and their positive roots.

/// `j_l(x)` for `x >= 0`.
///
/// Small arguments use the power series; everything else uses Miller's
/// downward recurrence normalised against the closed forms of `j_0`/`j_1`.
pub fn spherical_bessel(l: usize, x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return if l == 0 { 1.0 } else { 0.0 };
    }
    if x < 2.0 {
        return series(l, x);
    }
    miller(l, x)
}

fn series(l: usize, x: f64) -> f64 {
    // x^l / (2l+1)!!
    let mut lead = 1.0;
    for k in 1..=l {
        lead *= x / (2 * k + 1) as f64;
    }
    let y = -0.5 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        term *= y / (k as f64 * (2 * l + 2 * k + 1) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    lead * sum
}

fn miller(l: usize, x: f64) -> f64 {
    let start = l + x as usize + 40;
    let mut next = 0.0; // j_{k+1}
    let mut cur = 1e-300; // j_k
    let mut at_l = 0.0;
    let mut k = start;
    while k > 0 {
        let prev = (2 * k + 1) as f64 / x * cur - next;
        next = cur;
        cur = prev;
        k -= 1;
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            at_l *= 1e-250;
        }
        if k == l {
            at_l = cur;
        }
    }
    // cur holds the unnormalised j_0 and next the unnormalised j_1
    if l == 0 {
        at_l = cur;
    }
    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    if j0.abs() >= j1.abs() {
        at_l * (j0 / cur)
    } else {
        at_l * (j1 / next)
    }
}

/// Bessel function of the first kind at half-integer order `l + 1/2`.
pub fn bessel_half_integer(l: usize, x: f64) -> f64 {
    (2.0 * x / std::f64::consts::PI).sqrt() * spherical_bessel(l, x)
}

/// `n`-th positive root of `j_l` (`n >= 1`).
pub fn bessel_root(n: usize, l: usize) -> f64 {
    assert!(n >= 1, "roots are numbered from 1");
    // j_l is positive on (0, first root); roots are about π apart, so a
    // 0.1 step never skips a pair of sign changes.
    let step = 0.1;
    let mut a = 1e-3;
    let mut fa = spherical_bessel(l, a);
    let mut found = 0;
    loop {
        let b = a + step;
        let fb = spherical_bessel(l, b);
        if fa == 0.0 {
            found += 1;
            if found == n {
                return a;
            }
        } else if fa * fb < 0.0 {
            found += 1;
            if found == n {
                return bisect(l, a, b, fa);
            }
        }
        a = b;
        fa = fb;
    }
}

fn bisect(l: usize, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = spherical_bessel(l, m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
        if b - a <= 4.0 * f64::EPSILON * m {
            break;
        }
    }
    0.5 * (a + b)
}
