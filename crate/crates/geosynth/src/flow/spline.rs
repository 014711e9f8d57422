//! Monotone rational-quadratic spline transform, written generically over
//! [`Real`] so the same code runs on plain floats and on the gradient tape.
//!
//! The spline acts on [-T, T] with identity linear tails outside. Raw
//! parameters (from the conditioner net) are `bins` unnormalized widths,
//! `bins` unnormalized heights, and `bins - 1` unnormalized interior
//! derivatives, 3*bins - 1 in total. Widths and heights pass through a
//! softmax with a minimum bin fraction; derivatives pass through a shifted
//! softplus so a raw value of zero maps to slope one. All-zero raw
//! parameters therefore give the identity map.

use crate::diffnet::scalar::{softplus, Real};

/// Minimum bin fraction, preventing degenerate bins in the quadratic inverse.
const MIN_BIN_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Normalized knots: `bins + 1` x/y positions and derivatives, boundary
/// derivatives fixed to one.
pub struct SplineKnots<R: Real> {
    pub xs: Vec<R>,
    pub ys: Vec<R>,
    pub derivs: Vec<R>,
    pub half_width: f64,
}

pub fn raw_param_count(bins: usize) -> usize {
    3 * bins - 1
}

/// Map raw parameters to normalized knots.
pub fn normalize<R: Real>(raw: &[R], bins: usize, half_width: f64) -> SplineKnots<R> {
    assert_eq!(raw.len(), raw_param_count(bins));
    let widths = softmax_fractions(&raw[..bins]);
    let heights = softmax_fractions(&raw[bins..2 * bins]);
    let anchor = raw[0];

    let total = 2.0 * half_width;
    let mut xs = Vec::with_capacity(bins + 1);
    let mut ys = Vec::with_capacity(bins + 1);
    let mut x = anchor.lift(-half_width);
    let mut y = anchor.lift(-half_width);
    xs.push(x);
    ys.push(y);
    for k in 0..bins {
        x = x + widths[k] * anchor.lift(total);
        y = y + heights[k] * anchor.lift(total);
        xs.push(x);
        ys.push(y);
    }

    // shifted softplus: raw 0 -> derivative 1
    let shift = (std::f64::consts::E - 1.0f64).ln();
    let mut derivs = Vec::with_capacity(bins + 1);
    derivs.push(anchor.lift(1.0));
    for k in 0..bins - 1 {
        derivs.push(softplus(raw[2 * bins + k] + anchor.lift(shift)));
    }
    derivs.push(anchor.lift(1.0));

    SplineKnots {
        xs,
        ys,
        derivs,
        half_width,
    }
}

fn softmax_fractions<R: Real>(raw: &[R]) -> Vec<R> {
    let max = raw
        .iter()
        .map(|r| r.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<R> = raw.iter().map(|&r| (r - r.lift(max)).exp()).collect();
    let mut sum = exps[0];
    for &e in &exps[1..] {
        sum = sum + e;
    }
    let b = raw.len() as f64;
    exps.iter()
        .map(|&e| {
            let soft = e / sum;
            soft.lift(MIN_BIN_FRACTION) + soft * soft.lift(1.0 - b * MIN_BIN_FRACTION)
        })
        .collect()
}

/// Apply the spline (or its inverse). Returns the mapped value and the log
/// absolute derivative of the applied map. Outside [-T, T] the map is the
/// identity with log-derivative zero.
pub fn apply<R: Real>(x: R, knots: &SplineKnots<R>, direction: Direction) -> (R, R) {
    let t = knots.half_width;
    if x.value() < -t || x.value() > t {
        return (x, x.lift(0.0));
    }
    match direction {
        Direction::Forward => forward(x, knots),
        Direction::Inverse => inverse(x, knots),
    }
}

fn find_bin<R: Real>(v: f64, positions: &[R]) -> usize {
    let bins = positions.len() - 1;
    let mut k = 0;
    while k + 1 < bins && v >= positions[k + 1].value() {
        k += 1;
    }
    k
}

fn forward<R: Real>(x: R, knots: &SplineKnots<R>) -> (R, R) {
    let k = find_bin(x.value(), &knots.xs);
    let xk = knots.xs[k];
    let w = knots.xs[k + 1] - xk;
    let h = knots.ys[k + 1] - knots.ys[k];
    let s = h / w;
    let d0 = knots.derivs[k];
    let d1 = knots.derivs[k + 1];

    let xi = (x - xk) / w;
    let one = x.lift(1.0);
    let two = x.lift(2.0);
    let xi1 = one - xi;
    let q = xi * xi1;
    let denom = s + (d1 + d0 - two * s) * q;

    let y = knots.ys[k] + h * (s * xi * xi + d0 * q) / denom;
    let num = s * s * (d1 * xi * xi + two * s * q + d0 * xi1 * xi1);
    let log_deriv = num.ln() - (denom * denom).ln();
    (y, log_deriv)
}

fn inverse<R: Real>(y: R, knots: &SplineKnots<R>) -> (R, R) {
    let k = find_bin(y.value(), &knots.ys);
    let xk = knots.xs[k];
    let yk = knots.ys[k];
    let w = knots.xs[k + 1] - xk;
    let h = knots.ys[k + 1] - yk;
    let s = h / w;
    let d0 = knots.derivs[k];
    let d1 = knots.derivs[k + 1];

    let one = y.lift(1.0);
    let two = y.lift(2.0);
    let four = y.lift(4.0);
    let dy = y - yk;
    let shape = d1 + d0 - two * s;

    // per-bin quadratic a xi^2 + b xi + c = 0, stable root
    let a = h * (s - d0) + dy * shape;
    let b = h * d0 - dy * shape;
    let c = -s * dy;
    let disc = (b * b - four * a * c).sqrt();
    let xi = (two * c) / (-b - disc);
    let x = xk + xi * w;

    let xi1 = one - xi;
    let q = xi * xi1;
    let denom = s + shape * q;
    let num = s * s * (d1 * xi * xi + two * s * q + d0 * xi1 * xi1);
    // derivative of the inverse map is the reciprocal of the forward slope
    let log_deriv = (denom * denom).ln() - num.ln();
    (x, log_deriv)
}

/// A standalone spline with raw parameters, the unit the flow layers stack.
#[derive(Debug, Clone)]
pub struct RQSpline {
    pub bins: usize,
    pub half_width: f64,
    pub raw: Vec<f64>,
}

impl RQSpline {
    pub fn identity(bins: usize, half_width: f64) -> Self {
        RQSpline {
            bins,
            half_width,
            raw: vec![0.0; raw_param_count(bins)],
        }
    }

    pub fn apply(&self, x: f64, direction: Direction) -> (f64, f64) {
        let knots = normalize(&self.raw, self.bins, self.half_width);
        apply(x, &knots, direction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spline(seed: u64) -> RQSpline {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RQSpline {
            bins: 8,
            half_width: 4.0,
            raw: (0..raw_param_count(8)).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        }
    }

    #[test]
    fn tail_is_identity() {
        let spline = random_spline(1);
        for &x in &[-5.0, 4.5, 100.0, -1e6] {
            let (y, ld) = spline.apply(x, Direction::Forward);
            assert_eq!(y, x);
            assert_eq!(ld, 0.0);
        }
    }

    #[test]
    fn zero_params_give_identity() {
        let spline = RQSpline::identity(8, 4.0);
        for &x in &[-3.9, -1.0, 0.0, 0.3, 2.5, 3.999] {
            let (y, ld) = spline.apply(x, Direction::Forward);
            assert!((y - x).abs() < 1e-12, "x={x} y={y}");
            assert!(ld.abs() < 1e-12, "x={x} ld={ld}");
        }
    }

    #[test]
    fn inverse_of_forward_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..5 {
            let spline = random_spline(100 + seed);
            for _ in 0..200 {
                let x = rng.gen_range(-4.0..4.0);
                let (y, ld_f) = spline.apply(x, Direction::Forward);
                let (back, ld_i) = spline.apply(y, Direction::Inverse);
                assert!((back - x).abs() < 1e-10, "x={x} back={back}");
                assert!((ld_f + ld_i).abs() < 1e-8, "logdet antisymmetry");
            }
        }
    }

    #[test]
    fn forward_is_strictly_increasing() {
        let spline = random_spline(42);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let a = rng.gen_range(-4.0..4.0);
            let b = rng.gen_range(-4.0..4.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if hi - lo < 1e-12 {
                continue;
            }
            let (ylo, _) = spline.apply(lo, Direction::Forward);
            let (yhi, _) = spline.apply(hi, Direction::Forward);
            assert!(ylo < yhi, "order violated: f({lo})={ylo} f({hi})={yhi}");
        }
    }

    #[test]
    fn log_derivative_matches_finite_differences() {
        let spline = random_spline(3);
        let h = 1e-6;
        for &x in &[-3.5, -0.7, 0.0, 1.3, 3.8] {
            let (_, ld) = spline.apply(x, Direction::Forward);
            let (yp, _) = spline.apply(x + h, Direction::Forward);
            let (ym, _) = spline.apply(x - h, Direction::Forward);
            let numeric = ((yp - ym) / (2.0 * h)).ln();
            assert!((ld - numeric).abs() < 1e-5, "x={x}: {ld} vs {numeric}");
        }
    }

    #[test]
    fn tape_gradients_match_finite_differences() {
        use crate::diffnet::scalar::Tape;
        let spline = random_spline(11);
        let x0 = 0.85;
        let h = 1e-6;

        // analytic gradients of (y + 2 ld) wrt every raw parameter via the tape
        let tape = Tape::new();
        let raw_vars: Vec<_> = spline.raw.iter().map(|&r| tape.var(r)).collect();
        let x = tape.var(x0);
        let knots = normalize(&raw_vars, spline.bins, spline.half_width);
        let (y, ld) = apply(x, &knots, Direction::Inverse);
        let objective = y + ld * y.lift(2.0);
        let grads = tape.gradients(objective);

        for p in 0..spline.raw.len() {
            let mut bumped = spline.clone();
            bumped.raw[p] += h;
            let (yp, ldp) = bumped.apply(x0, Direction::Inverse);
            bumped.raw[p] = spline.raw[p] - h;
            let (ym, ldm) = bumped.apply(x0, Direction::Inverse);
            let numeric = ((yp + 2.0 * ldp) - (ym + 2.0 * ldm)) / (2.0 * h);
            let analytic = grads[raw_vars[p].idx];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "param {p}: analytic {analytic} vs numeric {numeric}"
            );
        }
        // gradient wrt the input too
        let (yp, ldp) = spline.apply(x0 + h, Direction::Inverse);
        let (ym, ldm) = spline.apply(x0 - h, Direction::Inverse);
        let numeric = ((yp + 2.0 * ldp) - (ym + 2.0 * ldm)) / (2.0 * h);
        let analytic = grads[x.idx];
        assert!((analytic - numeric).abs() / numeric.abs().max(1e-8) < 1e-4);
    }
}
