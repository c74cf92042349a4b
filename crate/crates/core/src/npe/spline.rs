//! Monotonic rational-quadratic spline on `[-B, B]`, identity outside.
//!
//! One spline is described by `3K - 1` unconstrained numbers: `K` bin-width
//! logits, `K` bin-height logits and `K - 1` interior knot derivatives before
//! a softplus. The boundary derivatives are fixed at 1 so the map joins the
//! identity tails smoothly. All-zero raw parameters give the identity.

/// Bins per spline.
pub const BINS: usize = 8;
/// Half-width of the spline interval in standardized coordinates.
pub const TAIL_BOUND: f64 = 5.0;
pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Raw parameters per transformed coordinate.
pub const fn raw_len(bins: usize) -> usize {
    3 * bins - 1
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Offset making a zero raw derivative map to exactly 1.
fn derivative_offset() -> f64 {
    (1.0 - MIN_DERIVATIVE).exp_m1().ln()
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let m = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Knot layout decoded from raw parameters.
struct Knots {
    /// Normalized bin widths and heights (softmax with floor); sum to 1.
    wp: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    hp: Vec<f64>,
    sm_w: Vec<f64>,
    sm_h: Vec<f64>,
    /// Knot positions, `K + 1` each.
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Derivatives at all `K + 1` knots.
    ds: Vec<f64>,
}

impl Knots {
    fn new(raw: &[f64]) -> Self {
        let k = (raw.len() + 1) / 3;
        debug_assert_eq!(raw.len(), raw_len(k));
        let sm_w = softmax(&raw[..k]);
        let sm_h = softmax(&raw[k..2 * k]);
        let wp: Vec<f64> = sm_w.iter().map(|p| MIN_BIN_WIDTH + (1.0 - k as f64 * MIN_BIN_WIDTH) * p).collect();
        let hp: Vec<f64> = sm_h.iter().map(|p| MIN_BIN_HEIGHT + (1.0 - k as f64 * MIN_BIN_HEIGHT) * p).collect();
        let knots = |p: &[f64]| {
            let mut out = Vec::with_capacity(k + 1);
            let mut acc = 0.0;
            out.push(-TAIL_BOUND);
            for v in &p[..k - 1] {
                acc += v;
                out.push(-TAIL_BOUND + 2.0 * TAIL_BOUND * acc);
            }
            out.push(TAIL_BOUND);
            out
        };
        let c = derivative_offset();
        let mut ds = Vec::with_capacity(k + 1);
        ds.push(1.0);
        ds.extend(raw[2 * k..].iter().map(|u| MIN_DERIVATIVE + softplus(u + c)));
        ds.push(1.0);
        Self {
            xs: knots(&wp),
            ys: knots(&hp),
            wp,
            hp,
            sm_w,
            sm_h,
            ds,
        }
    }

    fn bins(&self) -> usize {
        self.wp.len()
    }

    fn bin_of(knots: &[f64], v: f64) -> usize {
        let k = knots.len() - 1;
        knots[1..k].iter().take_while(|&&t| t <= v).count()
    }
}

/// Output, log-derivative and their gradients from one spline evaluation.
#[derive(Debug, Clone)]
pub struct SplineEval {
    pub y: f64,
    pub logdet: f64,
    pub dy_dx: f64,
    pub dlogdet_dx: f64,
    /// Gradients with respect to the raw parameters; empty in the tails.
    pub dy_draw: Vec<f64>,
    pub dlogdet_draw: Vec<f64>,
}

/// Forward map `x -> y` with log |dy/dx|.
pub fn forward(x: f64, raw: &[f64]) -> (f64, f64) {
    if !(-TAIL_BOUND..=TAIL_BOUND).contains(&x) {
        return (x, 0.0);
    }
    let kn = Knots::new(raw);
    let b = Knots::bin_of(&kn.xs, x);
    let loc = Local::new(&kn, b, x);
    (loc.y(), loc.logdet())
}

/// Forward map with gradients of `y` and `logdet` with respect to `x` and
/// the raw parameters.
pub fn forward_with_grad(x: f64, raw: &[f64]) -> SplineEval {
    if !(-TAIL_BOUND..=TAIL_BOUND).contains(&x) {
        return SplineEval {
            y: x,
            logdet: 0.0,
            dy_dx: 1.0,
            dlogdet_dx: 0.0,
            dy_draw: vec![0.0; raw.len()],
            dlogdet_draw: vec![0.0; raw.len()],
        };
    }
    let kn = Knots::new(raw);
    let k = kn.bins();
    let b = Knots::bin_of(&kn.xs, x);
    let loc = Local::new(&kn, b, x);
    let g = loc.grads();

    // Knot quantities as functions of the normalized widths and heights:
    // xk = -B + 2B sum_{j<b} wp_j, W = 2B wp_b; same for heights.
    let span = 2.0 * TAIL_BOUND;
    let mut dy_draw = vec![0.0; raw.len()];
    let mut dl_draw = vec![0.0; raw.len()];
    for (out, gy) in [(&mut dy_draw, &g.y), (&mut dl_draw, &g.l)] {
        let mut g_wp = vec![0.0; k];
        let mut g_hp = vec![0.0; k];
        for j in 0..b {
            g_wp[j] += span * gy.xk;
            g_hp[j] += span * gy.yk;
        }
        g_wp[b] += span * gy.w;
        g_hp[b] += span * gy.h;
        for (block, sm, gp, floor) in [
            (0, &kn.sm_w, &g_wp, MIN_BIN_WIDTH),
            (k, &kn.sm_h, &g_hp, MIN_BIN_HEIGHT),
        ] {
            let scale = 1.0 - k as f64 * floor;
            let dot: f64 = sm.iter().zip(gp.iter()).map(|(p, g)| p * g).sum();
            for i in 0..k {
                out[block + i] = scale * sm[i] * (gp[i] - dot);
            }
        }
        let c = derivative_offset();
        // interior derivative d_i (1 <= i < K) comes from raw[2K + i - 1]
        for (knot, gd) in [(b, gy.d0), (b + 1, gy.d1)] {
            if knot >= 1 && knot < k {
                let r = 2 * k + knot - 1;
                out[r] += gd * sigmoid(raw[r] + c);
            }
        }
    }
    SplineEval {
        y: loc.y(),
        logdet: loc.logdet(),
        dy_dx: g.y.x,
        dlogdet_dx: g.l.x,
        dy_draw,
        dlogdet_draw: dl_draw,
    }
}

/// Inverse map `y -> x` with log |dx/dy|.
pub fn inverse(y: f64, raw: &[f64]) -> (f64, f64) {
    if !(-TAIL_BOUND..=TAIL_BOUND).contains(&y) {
        return (y, 0.0);
    }
    let kn = Knots::new(raw);
    let b = Knots::bin_of(&kn.ys, y);
    let (xk, w) = (kn.xs[b], kn.xs[b + 1] - kn.xs[b]);
    let (yk, h) = (kn.ys[b], kn.ys[b + 1] - kn.ys[b]);
    let (d0, d1) = (kn.ds[b], kn.ds[b + 1]);
    let s = h / w;
    let dy = y - yk;
    let a = h * (s - d0) + dy * (d1 + d0 - 2.0 * s);
    let bq = h * d0 - dy * (d1 + d0 - 2.0 * s);
    let c = -s * dy;
    let disc = (bq * bq - 4.0 * a * c).max(0.0);
    let xi = (2.0 * c / (-bq - disc.sqrt())).clamp(0.0, 1.0);
    let x = xk + xi * w;
    let loc = Local::new(&kn, b, x);
    (x, -loc.logdet())
}

/// Partial derivatives of one output with respect to the bin quantities.
#[derive(Debug, Default, Clone, Copy)]
struct Partials {
    x: f64,
    xk: f64,
    w: f64,
    yk: f64,
    h: f64,
    d0: f64,
    d1: f64,
}

struct LocalGrads {
    y: Partials,
    l: Partials,
}

/// The spline restricted to one bin.
struct Local {
    xi: f64,
    w: f64,
    yk: f64,
    h: f64,
    s: f64,
    d0: f64,
    d1: f64,
}

impl Local {
    fn new(kn: &Knots, b: usize, x: f64) -> Self {
        let w = kn.xs[b + 1] - kn.xs[b];
        let h = kn.ys[b + 1] - kn.ys[b];
        Self {
            xi: ((x - kn.xs[b]) / w).clamp(0.0, 1.0),
            w,
            yk: kn.ys[b],
            h,
            s: h / w,
            d0: kn.ds[b],
            d1: kn.ds[b + 1],
        }
    }

    fn t(&self) -> f64 {
        self.xi * (1.0 - self.xi)
    }

    fn den(&self) -> f64 {
        self.s + (self.d1 + self.d0 - 2.0 * self.s) * self.t()
    }

    fn num(&self) -> f64 {
        self.s * self.xi * self.xi + self.d0 * self.t()
    }

    fn gnum(&self) -> f64 {
        let xi = self.xi;
        self.d1 * xi * xi + 2.0 * self.s * self.t() + self.d0 * (1.0 - xi) * (1.0 - xi)
    }

    fn y(&self) -> f64 {
        self.yk + self.h * self.num() / self.den()
    }

    fn logdet(&self) -> f64 {
        2.0 * self.s.ln() + self.gnum().ln() - 2.0 * self.den().ln()
    }

    fn grads(&self) -> LocalGrads {
        let (xi, s, h, w, d0, d1) = (self.xi, self.s, self.h, self.w, self.d0, self.d1);
        let t = self.t();
        let den = self.den();
        let a = self.num();
        let g = self.gnum();
        let dt = 1.0 - 2.0 * xi;
        let c = d1 + d0 - 2.0 * s;

        // y = yk + h a / den with a, den functions of (xi, s, d0, d1)
        let y_xi = h * ((2.0 * s * xi + d0 * dt) * den - a * c * dt) / (den * den);
        let y_s = h * (xi * xi * den - a * (1.0 - 2.0 * t)) / (den * den);
        let y_h = a / den;
        let y_d0 = h * t * (den - a) / (den * den);
        let y_d1 = -h * a * t / (den * den);

        // logdet = 2 ln s + ln g - 2 ln den
        let l_xi = (2.0 * d1 * xi + 2.0 * s * dt - 2.0 * d0 * (1.0 - xi)) / g - 2.0 * c * dt / den;
        let l_s = 2.0 / s + 2.0 * t / g - 2.0 * (1.0 - 2.0 * t) / den;
        let l_d0 = (1.0 - xi) * (1.0 - xi) / g - 2.0 * t / den;
        let l_d1 = xi * xi / g - 2.0 * t / den;

        // xi = (x - xk) / w, s = h / w
        let chain = |f_xi: f64, f_s: f64, f_h: f64, f_yk: f64, f_d0: f64, f_d1: f64| Partials {
            x: f_xi / w,
            xk: -f_xi / w,
            w: -f_xi * xi / w - f_s * s / w,
            yk: f_yk,
            h: f_h + f_s / w,
            d0: f_d0,
            d1: f_d1,
        };
        LocalGrads {
            y: chain(y_xi, y_s, y_h, 1.0, y_d0, y_d1),
            l: chain(l_xi, l_s, 0.0, 0.0, l_d0, l_d1),
        }
    }
}
