//! Adaptive Gauss–Kronrod quadrature and Wynn epsilon extrapolation.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge within {evals} evaluations (error estimate {error:e})")]
    Budget { evals: usize, error: f64 },
    #[error("integrand returned a non-finite value at {0}")]
    NonFinite(f64),
}

/// Result of a quadrature call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Points per 21-point Kronrod rule application.
pub const GK21_POINTS: usize = 21;

/// One 21-point Gauss–Kronrod rule on `[a, b]` with the QUADPACK error
/// heuristic.
pub fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Estimate, QuadError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let eval = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(QuadError::NonFinite(x))
        }
    };
    let fc = eval(center)?;
    let mut res_k = fc * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = fc.abs() * WGK[10];
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Estimate {
        value,
        error,
        evals: GK21_POINTS,
    })
}

/// Globally adaptive bisection on `[a, b]` until the summed error estimate
/// is below `max(abs_tol, rel_tol·|I|)` or the evaluation budget runs out.
pub fn integrate<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_evals: usize,
) -> Result<Estimate, QuadError> {
    let first = gk21(f, a, b)?;
    let mut segments = vec![(a, b, first)];
    let mut value = first.value;
    let mut error = first.error;
    let mut evals = first.evals;
    loop {
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Estimate { value, error, evals });
        }
        if evals + 2 * GK21_POINTS > max_evals {
            return Err(QuadError::Budget { evals, error });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error))
            .expect("at least one segment");
        let (lo, hi, est) = segments.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval cannot be split further in floating point
            return Err(QuadError::Budget { evals, error });
        }
        let left = gk21(f, lo, mid)?;
        let right = gk21(f, mid, hi)?;
        evals += left.evals + right.evals;
        segments.push((lo, mid, left));
        segments.push((mid, hi, right));
        // re-sum rather than update incrementally to avoid drift
        let _ = est;
        value = segments.iter().map(|s| s.2.value).sum();
        error = segments.iter().map(|s| s.2.error).sum();
    }
}

/// Wynn epsilon-algorithm accelerator for slowly converging or
/// alternating series, fed with successive partial sums.
#[derive(Debug, Default, Clone)]
pub struct WynnEpsilon {
    partial_sums: Vec<f64>,
    estimates: Vec<f64>,
}

impl WynnEpsilon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a partial sum and returns the current `(estimate, error)`.
    pub fn push(&mut self, partial_sum: f64) -> (f64, f64) {
        self.partial_sums.push(partial_sum);
        let est = Self::extrapolate(&self.partial_sums);
        self.estimates.push(est);
        let n = self.estimates.len();
        let error = if n >= 3 {
            (est - self.estimates[n - 2]).abs() + (est - self.estimates[n - 3]).abs()
        } else {
            f64::INFINITY
        };
        (est, error.max(5.0 * f64::EPSILON * est.abs()))
    }

    pub fn len(&self) -> usize {
        self.partial_sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partial_sums.is_empty()
    }

    fn extrapolate(s: &[f64]) -> f64 {
        let n = s.len();
        let mut prev: Vec<f64> = vec![0.0; n + 1];
        let mut cur: Vec<f64> = s.to_vec();
        let mut best = *s.last().expect("non-empty");
        let mut k = 0usize;
        while cur.len() >= 2 {
            let mut next = Vec::with_capacity(cur.len() - 1);
            for i in 0..cur.len() - 1 {
                let diff = cur[i + 1] - cur[i];
                if diff == 0.0 || !diff.is_finite() || diff.abs() <= 1e-300 {
                    return best;
                }
                next.push(prev[i + 1] + 1.0 / diff);
            }
            k += 1;
            prev = cur;
            cur = next;
            if k.is_multiple_of(2) {
                let v = *cur.last().expect("non-empty");
                if !v.is_finite() {
                    return best;
                }
                best = v;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gk21_is_exact_for_polynomials() {
        let e = gk21(&|x: f64| x.powi(20) - 3.0 * x.powi(7), -1.0, 2.0).unwrap();
        let want = (2f64.powi(21) + 1.0) / 21.0 - 3.0 * (2f64.powi(8) - 1.0) / 8.0;
        assert!((e.value - want).abs() < 1e-9 * want.abs());
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        let f = |x: f64| 1.0 / (1e-4 + x * x);
        let e = integrate(&f, -1.0, 1.0, 1e-12, 1e-13, 100_000).unwrap();
        let want = 2.0 / 1e-2 * (1.0f64 / 1e-2).atan();
        assert!((e.value - want).abs() < 1e-9 * want);
    }

    #[test]
    fn adaptive_reports_budget_exhaustion() {
        let f = |x: f64| (1.0 / x).sin();
        assert!(matches!(
            integrate(&f, 1e-9, 1.0, 1e-15, 0.0, 500),
            Err(QuadError::Budget { .. })
        ));
    }

    #[test]
    fn wynn_accelerates_alternating_series() {
        // ln 2 = 1 - 1/2 + 1/3 - ...
        let mut w = WynnEpsilon::new();
        let mut s = 0.0;
        let mut last = (0.0, 0.0);
        for k in 1..=20 {
            s += if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
            last = w.push(s);
        }
        assert!((last.0 - 2f64.ln()).abs() < 1e-12);
        assert!(last.1 < 1e-9);
    }

    #[test]
    fn wynn_with_oscillatory_panels() {
        // ∫_0^∞ sin(x)/x dx = π/2, summed panel by panel
        let f = |x: f64| if x == 0.0 { 1.0 } else { x.sin() / x };
        let mut w = WynnEpsilon::new();
        let mut s = 0.0;
        let mut last = (0.0, 0.0);
        for k in 0..30 {
            s += gk21(&f, k as f64 * PI, (k + 1) as f64 * PI).unwrap().value;
            last = w.push(s);
        }
        assert!((last.0 - PI / 2.0).abs() < 1e-11);
    }
}
