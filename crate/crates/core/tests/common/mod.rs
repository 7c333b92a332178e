//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use ctm_core::io::constraints::parse_constraints;
use ctm_core::io::tables::{parse_chain, parse_default_curves, CurveReadOptions};
use ctm_core::{AbsorbingChain, BoxConstraints, DefaultCurveTable, LinearSystem, RatingScale};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CHAIN_CSV: &str = include_str!("../../fixtures/reference_chain.csv");
pub const CURVES_CSV: &str = include_str!("../../fixtures/cumulative_defaults_7y.csv");
pub const SP_CSV: &str = include_str!("../../fixtures/sp_cumulative_defaults_pct.csv");
pub const DIAGONAL_BOUNDS: &str = include_str!("../../fixtures/diagonal_bounds.txt");
pub const SP_DIAGONAL_BOUNDS: &str = include_str!("../../fixtures/sp_diagonal_bounds.txt");

/// Published l1 errors, unconstrained reconstruction from 7 years, years 8..=20.
pub const UNCONSTRAINED_ERRORS: [f64; 13] = [
    0.0042, 0.0078, 0.0125, 0.0181, 0.0252, 0.0332, 0.0421, 0.0517, 0.0619, 0.0728, 0.0841, 0.0958,
    0.1078,
];

/// Published l1 errors with diagonal bounds; rows 4..=7 data years, columns years 10..=20.
pub const BOUNDED_ERRORS: [[f64; 11]; 4] = [
    [
        0.0159, 0.0209, 0.0264, 0.0326, 0.0394, 0.0407, 0.0480, 0.0557, 0.0638, 0.0723, 0.0811,
    ],
    [
        0.0081, 0.0112, 0.0149, 0.0192, 0.0241, 0.0267, 0.0322, 0.0382, 0.0446, 0.0515, 0.0587,
    ],
    [
        0.0050, 0.0073, 0.0102, 0.0136, 0.0175, 0.0206, 0.0254, 0.0306, 0.0362, 0.0423, 0.0488,
    ],
    [
        0.0033, 0.0051, 0.0074, 0.0102, 0.0135, 0.0164, 0.0205, 0.0252, 0.0304, 0.0362, 0.0423,
    ],
];

/// Published l1 errors for the agency data; rows 4..=7 data years, columns years 8..=15.
pub const AGENCY_ERRORS: [[f64; 8]; 4] = [
    [
        0.0544, 0.0719, 0.0888, 0.1073, 0.1264, 0.1435, 0.1606, 0.1795,
    ],
    [
        0.0440, 0.0600, 0.0752, 0.0919, 0.1092, 0.1243, 0.1393, 0.1560,
    ],
    [
        0.0184, 0.0260, 0.0325, 0.0403, 0.0485, 0.0546, 0.0607, 0.0687,
    ],
    [
        0.0100, 0.0156, 0.0199, 0.0254, 0.0312, 0.0349, 0.0385, 0.0438,
    ],
];

/// The published chain has five-decimal entries; one row sums to 1.00001.
pub const PUBLISHED_ROW_TOL: f64 = 1e-4;

pub fn reference_chain() -> AbsorbingChain {
    parse_chain(CHAIN_CSV, PUBLISHED_ROW_TOL).unwrap()
}

pub fn printed_curves() -> DefaultCurveTable {
    parse_default_curves(CURVES_CSV, CurveReadOptions::default()).unwrap()
}

pub fn sp_table() -> DefaultCurveTable {
    parse_default_curves(
        SP_CSV,
        CurveReadOptions {
            percent: true,
            strict_monotone: false,
        },
    )
    .unwrap()
}

pub fn diagonal_bounds(scale: &RatingScale) -> BoxConstraints {
    parse_constraints(DIAGONAL_BOUNDS, scale).unwrap()
}

pub fn sp_diagonal_bounds(scale: &RatingScale) -> BoxConstraints {
    parse_constraints(SP_DIAGONAL_BOUNDS, scale).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random chain with `m` non-default classes; every cell strictly positive.
pub fn random_chain(rng: &mut impl Rng, m: usize) -> AbsorbingChain {
    let mut q = DMatrix::zeros(m, m);
    let mut p1 = DVector::zeros(m);
    for i in 0..m {
        let default_share = rng.gen_range(0.01..0.3);
        let mut weights: Vec<f64> = (0..m)
            .map(|j| {
                if i == j {
                    rng.gen_range(3.0..8.0)
                } else {
                    rng.gen_range(0.2..1.0)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights
            .iter_mut()
            .for_each(|w| *w *= (1.0 - default_share) / total);
        for j in 0..m {
            q[(i, j)] = weights[j];
        }
        p1[i] = 1.0 - q.row(i).sum();
    }
    AbsorbingChain::new(RatingScale::numbered(m + 1).unwrap(), q, p1).unwrap()
}

/// Random box strictly containing `center` (entries in (0, 1)).
pub fn random_box_around(rng: &mut impl Rng, center: &DVector<f64>) -> BoxConstraints {
    let lower = center.map(|c| c * rng.gen_range(0.3..0.95));
    let upper = center.map(|c| c + (1.0 - c) * rng.gen_range(0.05..0.7));
    BoxConstraints::new(lower, upper).unwrap()
}

/// Term-by-term entropy with a compensated sum, straight from the definition.
pub fn entropy_oracle(x: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for j in 0..x.len() {
        let d = upper[j] - lower[j];
        let p = (x[j] - lower[j]) / d;
        let q = (upper[j] - x[j]) / d;
        let term = p * p.ln() + q * q.ln();
        let y = term - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Central finite-difference gradient.
pub fn finite_difference(
    f: impl Fn(&DVector<f64>) -> f64,
    at: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let mut g = DVector::zeros(at.len());
    for i in 0..at.len() {
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus[i] += h;
        minus[i] -= h;
        g[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

/// `argmin_{a < x < b} psi(x) - t x` for one coordinate, by dense grid
/// search followed by golden-section refinement.
pub fn scalar_primal_oracle(a: f64, b: f64, t: f64) -> f64 {
    let d = b - a;
    let f = |x: f64| {
        let u = (x - a) / d;
        let v = (b - x) / d;
        u * u.ln() + v * v.ln() - t * x
    };
    let n = 20_000;
    let (mut best, mut best_val) = (a + d * 0.5, f64::INFINITY);
    for k in 1..n {
        let x = a + d * k as f64 / n as f64;
        let v = f(x);
        if v < best_val {
            best_val = v;
            best = x;
        }
    }
    let step = d / n as f64;
    let (mut lo, mut hi) = ((best - step).max(a + 1e-300), (best + step).min(b));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = hi - phi * (hi - lo);
        let x2 = lo + phi * (hi - lo);
        if f(x1) < f(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    0.5 * (lo + hi)
}

/// Minimizes the entropy on `{A x = y}` inside the box by gradient descent
/// projected onto the null space of `A`, starting from a feasible interior
/// point. Returns the minimizer once the projected gradient norm is at most `tol`.
pub fn projected_gradient_primal(
    system: &LinearSystem,
    start: &DVector<f64>,
    tol: f64,
) -> DVector<f64> {
    let a = &system.a_matrix;
    let lower = system.bounds.lower();
    let upper = system.bounds.upper();
    let n = a.ncols();
    let gram_inv = (a * a.transpose()).pseudo_inverse(1e-14).unwrap();
    let projector = DMatrix::identity(n, n) - a.transpose() * gram_inv * a;

    let psi = |x: &DVector<f64>| entropy_oracle(x.as_slice(), lower.as_slice(), upper.as_slice());
    let grad = |x: &DVector<f64>| {
        DVector::from_iterator(
            n,
            (0..n).map(|j| {
                let d = upper[j] - lower[j];
                ((x[j] - lower[j]) / (upper[j] - x[j])).ln() / d
            }),
        )
    };
    let interior = |x: &DVector<f64>| (0..n).all(|j| lower[j] < x[j] && x[j] < upper[j]);

    let mut x = start.clone();
    assert!(interior(&x), "start must be interior");
    let mut step = 1e-2;
    for _ in 0..2_000_000 {
        let direction = -(&projector * grad(&x));
        let norm = direction.norm();
        if norm <= tol {
            return x;
        }
        let current = psi(&x);
        let slope = -direction.norm_squared();
        step *= 2.0;
        loop {
            let candidate = &x + step * &direction;
            if interior(&candidate) && psi(&candidate) <= current + 1e-4 * step * slope {
                x = candidate;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return x;
            }
        }
    }
    x
}

/// Truncated Neumann series `sum_{k=0}^{terms} Q^k`.
pub fn neumann_series(q: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let m = q.nrows();
    let mut power = DMatrix::identity(m, m);
    let mut sum = DMatrix::identity(m, m);
    for _ in 0..terms {
        power = &power * q;
        sum += &power;
    }
    sum
}

/// Monte-Carlo absorption times: per start state, mean and standard error
/// over `paths` simulated paths. Sojourns in a class are drawn as geometric
/// holding times, followed by a jump to another class or to default.
pub fn monte_carlo_mean_times(chain: &AbsorbingChain, paths: usize, seed: u64) -> Vec<(f64, f64)> {
    let q = chain.q().entries();
    let p1 = chain.first_year_default();
    let m = q.nrows();
    // Exit distribution conditional on leaving the current class; index m = default.
    let exits: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let leave = 1.0 - q[(i, i)];
            let mut cdf = Vec::with_capacity(m + 1);
            let mut acc = 0.0;
            for j in 0..=m {
                let p = if j == m {
                    p1[i]
                } else if j == i {
                    0.0
                } else {
                    q[(i, j)]
                };
                acc += p / leave;
                cdf.push(acc);
            }
            cdf
        })
        .collect();
    let log_stay: Vec<f64> = (0..m).map(|i| q[(i, i)].ln()).collect();
    let mut rng = rng(seed);
    (0..m)
        .map(|start| {
            let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
            for _ in 0..paths {
                let mut state = start;
                let mut time = 0.0f64;
                loop {
                    let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                    let hold = if q[(state, state)] > 0.0 {
                        1.0 + (u.ln() / log_stay[state]).floor()
                    } else {
                        1.0
                    };
                    time += hold;
                    let r: f64 = rng.gen::<f64>() * exits[state][m];
                    let next = exits[state].iter().position(|&c| r < c).unwrap_or(m);
                    if next == m {
                        break;
                    }
                    state = next;
                }
                sum += time;
                sum_sq += time * time;
            }
            let n = paths as f64;
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
            (mean, (var / n).sqrt())
        })
        .collect()
}
