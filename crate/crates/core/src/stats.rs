//! Listening-test statistics: one-sided t-tests on preference scores and
//! t confidence intervals on opinion scores.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Admissible values of a score set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRange {
    /// Comparative preference, `-3..=3`.
    Preference,
    /// Opinion score, `1..=5`.
    Mos,
}

impl ScoreRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ScoreRange::Preference => (-3.0, 3.0),
            ScoreRange::Mos => (1.0, 5.0),
        }
    }
}

impl fmt::Display for ScoreRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.bounds();
        write!(f, "[{lo}, {hi}]")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub label: String,
    pub range: ScoreRange,
    scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(label: impl Into<String>, range: ScoreRange, scores: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if scores.is_empty() {
            return Err(Error::DegenerateScores(format!("{label}: no scores")));
        }
        let (lo, hi) = range.bounds();
        if let Some((i, v)) = scores.iter().enumerate().find(|(_, v)| !(lo..=hi).contains(*v)) {
            return Err(Error::Invalid(format!("{label}: score {i} = {v} outside {range}")));
        }
        Ok(Self { label, range, scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Parses one score per line; blank lines and text after `#` are ignored.
pub fn parse_scores(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let v: f64 = body
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: {body:?} is not a number", n + 1)))?;
        if !v.is_finite() {
            return Err(Error::Parse(format!("line {}: {body:?} is not finite", n + 1)));
        }
        out.push(v);
    }
    Ok(out)
}

/// Reads a score file, labelled by its file stem.
pub fn read_score_file(path: &Path, range: ScoreRange) -> Result<ScoreSet> {
    let text = std::fs::read_to_string(path)?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ScoreSet::new(label, range, parse_scores(&text)?)
}

/// Result of a one-sided test of mean preference > 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean: f64,
    pub t: f64,
    pub p: f64,
}

/// Mean with a two-sided t confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosSummary {
    pub n: usize,
    pub mean: f64,
    pub half_width: f64,
    pub alpha: f64,
}

fn mean_sd(set: &ScoreSet) -> Result<(f64, f64)> {
    let x = set.scores();
    if x.len() < 2 {
        return Err(Error::DegenerateScores(format!("{}: need at least 2 scores, got {}", set.label, x.len())));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::DegenerateScores(format!("{}: all scores are equal", set.label)));
    }
    Ok((mean, var.sqrt()))
}

/// Tests mean > 0 against mean <= 0: `p = P(T_{n-1} >= mean / (sd / sqrt n))`.
pub fn one_sided_t_test(set: &ScoreSet) -> Result<TTest> {
    let (mean, sd) = mean_sd(set)?;
    let n = set.len();
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest {
        n,
        mean,
        t,
        p: t_sf(t, (n - 1) as f64),
    })
}

/// Mean and half-width `t_{1-alpha/2, n-1} * sd / sqrt n`.
pub fn mos_summary(set: &ScoreSet, alpha: f64) -> Result<MosSummary> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {alpha}, must lie in (0, 1)")));
    }
    let (mean, sd) = mean_sd(set)?;
    let n = set.len();
    let q = t_quantile_upper(alpha / 2.0, (n - 1) as f64);
    Ok(MosSummary {
        n,
        mean,
        half_width: q * sd / (n as f64).sqrt(),
        alpha,
    })
}

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction of the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Survival function `P(T_df >= t)` of Student's t distribution.
pub fn t_sf(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    let tail = 0.5 * inc_beta(0.5 * df, 0.5, df / (df + t * t));
    if t > 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// `q` with `P(T_df >= q) = p` for `p` in `(0, 0.5]`, by bisection.
pub fn t_quantile_upper(p: f64, df: f64) -> f64 {
    let mut hi = 1.0;
    while t_sf(hi, df) > p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if t_sf(mid, df) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pref(scores: &[f64]) -> ScoreSet {
        ScoreSet::new("x", ScoreRange::Preference, scores.to_vec()).unwrap()
    }

    #[test]
    fn small_preference_sample() {
        let r = one_sided_t_test(&pref(&[2.0, 0.0, 1.0, 3.0])).unwrap();
        assert_eq!(r.mean, 1.5);
        assert!((r.p - 0.0513).abs() < 1e-4);
        assert!((r.p - 0.051_364_039_429_199_5).abs() < 1e-12, "{}", r.p);
    }

    #[test]
    fn symmetric_scores_give_one_half() {
        let r = one_sided_t_test(&pref(&[-1.0, 1.0])).unwrap();
        assert_eq!((r.mean, r.p), (0.0, 0.5));
    }

    #[test]
    fn negation_complements_p() {
        let x = [2.0, -1.0, 0.5, 3.0, 1.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = one_sided_t_test(&pref(&x)).unwrap().p;
        let b = one_sided_t_test(&pref(&neg)).unwrap().p;
        assert!((a + b - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mos_interval() {
        let s = ScoreSet::new("m", ScoreRange::Mos, vec![3.0, 3.0, 4.0, 4.0]).unwrap();
        let r = mos_summary(&s, 0.05).unwrap();
        assert_eq!(r.mean, 3.5);
        assert!((r.half_width - 0.919).abs() < 5e-4, "{}", r.half_width);
        let doubled = ScoreSet::new("m", ScoreRange::Preference, vec![-0.5, -0.5, 1.5, 1.5]).unwrap();
        let d = mos_summary(&doubled, 0.05).unwrap();
        assert!((d.half_width - 2.0 * r.half_width).abs() < 1e-12);
    }

    #[test]
    fn known_quantiles() {
        assert!((t_quantile_upper(0.025, 3.0) - 3.182_446_305_284_263).abs() < 1e-10);
        assert!((t_quantile_upper(0.05, 1.0) - 6.313_751_514_675_043).abs() < 1e-10);
        // One degree of freedom is Cauchy: P(T >= 1) = 1/4.
        assert!((t_sf(1.0, 1.0) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn survival_function_to_ten_digits() {
        let cases = [
            (0.3, 1.0, 0.407_226_420_922_257_7),
            (2.5, 3.0, 0.043_853_323_504_032_77),
            (1.0, 7.5, 0.174_238_012_815_375_63),
            (4.0, 20.0, 0.000_351_761_646_564_159_1),
            (-1.7, 12.0, 0.942_560_067_302_395_4),
            (10.0, 2.0, 0.004_926_228_511_662_846),
            (0.05, 49.0, 0.480_162_825_168_140_1),
            (3.3, 200.0, 0.000_572_361_332_564_442_1),
        ];
        for (t, df, want) in cases {
            assert!((t_sf(t, df) - want).abs() < 1e-10 * want.max(1e-3), "t={t} df={df}");
        }
    }

    #[test]
    fn ln_gamma_at_integers_and_half() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "{n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn degenerate_sets_rejected() {
        assert!(matches!(one_sided_t_test(&pref(&[1.0, 1.0, 1.0])), Err(Error::DegenerateScores(_))));
        assert!(matches!(one_sided_t_test(&pref(&[1.0])), Err(Error::DegenerateScores(_))));
        assert!(ScoreSet::new("e", ScoreRange::Mos, vec![]).is_err());
        assert!(matches!(ScoreSet::new("r", ScoreRange::Mos, vec![0.0]), Err(Error::Invalid(_))));
    }

    #[test]
    fn score_file_syntax() {
        let v = parse_scores("# header\n1\n\n-2.5  # note\n 3\n").unwrap();
        assert_eq!(v, [1.0, -2.5, 3.0]);
        assert!(matches!(parse_scores("1\nabc\n"), Err(Error::Parse(m)) if m.contains("line 2")));
        assert!(parse_scores("nan\n").is_err());
    }
}
