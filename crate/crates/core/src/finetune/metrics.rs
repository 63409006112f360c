//! Classification and distribution metrics. All functions are pure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::FinetuneError;

/// Tolerance on `Σ p = 1` for distribution inputs.
pub const NORMALIZATION_TOL: f64 = 1e-9;

fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Exact-match accuracy after trimming and lowercasing.
pub fn accuracy(preds: &[String], golds: &[String]) -> Result<f64, FinetuneError> {
    if preds.len() != golds.len() {
        return Err(FinetuneError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(FinetuneError::EmptyList);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalize_label(p) == normalize_label(g))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Unweighted mean of per-class F1 over `label_space`.
///
/// A class with no gold support and no predictions scores 0. Predictions
/// outside the label space are simply wrong for their gold class.
pub fn macro_f1(preds: &[String], golds: &[String], label_space: &[String]) -> Result<f64, FinetuneError> {
    if preds.len() != golds.len() {
        return Err(FinetuneError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if label_space.is_empty() {
        return Err(FinetuneError::EmptyList);
    }
    let preds: Vec<String> = preds.iter().map(|s| normalize_label(s)).collect();
    let golds: Vec<String> = golds.iter().map(|s| normalize_label(s)).collect();
    let mut total = 0.0;
    for class in label_space {
        let c = normalize_label(class);
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (p, g) in preds.iter().zip(&golds) {
            match (*p == c, *g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        total += if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    }
    Ok(total / label_space.len() as f64)
}

/// A probability mass function over an ordered domain.
pub type Distribution<K> = BTreeMap<K, f64>;

/// Relative frequencies of `values`.
pub fn empirical<K: Ord + Clone>(values: &[K]) -> Result<Distribution<K>, FinetuneError> {
    if values.is_empty() {
        return Err(FinetuneError::EmptyList);
    }
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v.clone()).or_insert(0) += 1;
    }
    let n = values.len() as f64;
    Ok(counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect())
}

fn check_normalized<K>(p: &Distribution<K>) -> Result<(), FinetuneError> {
    let sum: f64 = p.values().sum();
    if p.values().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(FinetuneError::NotNormalized { sum });
    }
    Ok(())
}

fn union<'a, K: Ord>(p: &'a Distribution<K>, q: &'a Distribution<K>) -> BTreeSet<&'a K> {
    p.keys().chain(q.keys()).collect()
}

/// Jensen-Shannon divergence in bits, so it lies in `[0, 1]`.
pub fn jsd<K: Ord>(p: &Distribution<K>, q: &Distribution<K>) -> Result<f64, FinetuneError> {
    check_normalized(p)?;
    check_normalized(q)?;
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let mut sum = 0.0;
    for k in union(p, q) {
        let a = p.get(k).copied().unwrap_or(0.0);
        let b = q.get(k).copied().unwrap_or(0.0);
        let m = 0.5 * (a + b);
        sum += 0.5 * term(a, m) + 0.5 * term(b, m);
    }
    Ok(sum.clamp(0.0, 1.0))
}

/// Total variation distance, `½ Σ |p - q|`.
pub fn tvd<K: Ord>(p: &Distribution<K>, q: &Distribution<K>) -> Result<f64, FinetuneError> {
    check_normalized(p)?;
    check_normalized(q)?;
    let sum: f64 = union(p, q)
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum();
    Ok((0.5 * sum).clamp(0.0, 1.0))
}

/// What a generated value is supposed to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Ip,
    Port,
    Len,
}

/// Parses `s` as a value of `kind`, or `None` if it is not valid.
pub fn parse_valid(s: &str, kind: ValueKind) -> Option<Value> {
    let s = s.trim();
    match kind {
        ValueKind::Ip => parse_dotted_quad(s).map(Value::Ip),
        ValueKind::Port | ValueKind::Len => {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            s.parse::<u64>().ok().filter(|&n| n <= 65_535).map(Value::Num)
        }
    }
}

fn parse_dotted_quad(s: &str) -> Option<Ipv4Addr> {
    let parts: Vec<&str> = s.split('.').collect();
    if parts.len() != 4 {
        return None;
    }
    let mut octets = [0u8; 4];
    for (o, p) in octets.iter_mut().zip(&parts) {
        if p.is_empty() || p.len() > 3 || !p.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        *o = p.parse::<u16>().ok().filter(|&n| n <= 255)? as u8;
    }
    Some(Ipv4Addr::from(octets))
}

/// Diversity ratio: distinct valid values over total cases.
pub fn dr(generated: &[String], kind: ValueKind) -> Result<f64, FinetuneError> {
    if generated.is_empty() {
        return Err(FinetuneError::EmptyList);
    }
    let distinct: BTreeSet<Value> = generated.iter().filter_map(|s| parse_valid(s, kind)).collect();
    Ok(distinct.len() as f64 / generated.len() as f64)
}

/// Ordering key for report tables: numbers, then addresses, then free text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Num(u64),
    Ip(Ipv4Addr),
    Text(String),
}

impl Value {
    pub fn parse(s: &str) -> Value {
        let t = s.trim();
        if let Some(ip) = parse_dotted_quad(t) {
            Value::Ip(ip)
        } else if !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()) {
            t.parse().map(Value::Num).unwrap_or_else(|_| Value::Text(t.to_string()))
        } else {
            Value::Text(t.to_string())
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(n) => write!(f, "{n}"),
            Value::Ip(ip) => write!(f, "{ip}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkRow {
    pub value: String,
    pub real_freq: f64,
    pub generated_freq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub value: String,
    pub real_cdf: f64,
    pub generated_cdf: f64,
}

/// Top-`k` real values with both frequencies, and both empirical CDFs over
/// the sorted union of values.
pub fn distribution_report(
    real: &[String],
    generated: &[String],
    k: usize,
) -> Result<(Vec<TopkRow>, Vec<CdfRow>), FinetuneError> {
    let real: Vec<Value> = real.iter().map(|s| Value::parse(s)).collect();
    let generated: Vec<Value> = generated.iter().map(|s| Value::parse(s)).collect();
    let p = empirical(&real)?;
    let q = empirical(&generated)?;

    let mut ranked: Vec<(&Value, f64)> = p.iter().map(|(v, &f)| (v, f)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let topk = ranked
        .into_iter()
        .take(k)
        .map(|(v, f)| TopkRow {
            value: v.to_string(),
            real_freq: f,
            generated_freq: q.get(v).copied().unwrap_or(0.0),
        })
        .collect();

    let mut cdf = Vec::new();
    let (mut cp, mut cq) = (0.0, 0.0);
    let values = union(&p, &q);
    let last = values.len().saturating_sub(1);
    for (i, v) in values.into_iter().enumerate() {
        cp += p.get(v).copied().unwrap_or(0.0);
        cq += q.get(v).copied().unwrap_or(0.0);
        // Pin the final row so rounding cannot leave it a hair under 1.
        let (rc, gc) = if i == last { (1.0, 1.0) } else { (cp.min(1.0), cq.min(1.0)) };
        cdf.push(CdfRow {
            value: v.to_string(),
            real_cdf: rc,
            generated_cdf: gc,
        });
    }
    Ok((topk, cdf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn dist(v: &[(&'static str, f64)]) -> Distribution<&'static str> {
        v.iter().copied().collect()
    }

    #[test]
    fn accuracy_and_macro_f1_hand_values() {
        let golds = s(&["a", "a", "b", "b"]);
        let preds = s(&["a", "a", "a", "a"]);
        let space = s(&["a", "b"]);
        assert_eq!(accuracy(&preds, &golds).unwrap(), 0.5);
        assert!((macro_f1(&preds, &golds, &space).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(macro_f1(&golds, &golds, &space).unwrap(), 1.0);
        assert_eq!(accuracy(&s(&[" A "]), &s(&["a"])).unwrap(), 1.0);
        assert!(matches!(accuracy(&preds, &golds[..3]), Err(FinetuneError::LengthMismatch { .. })));
        let space3 = s(&["a", "b", "c"]);
        assert!((macro_f1(&golds, &golds, &space3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn divergence_worked_examples() {
        let p = dist(&[("a", 0.5), ("b", 0.5)]);
        let q = dist(&[("a", 1.0)]);
        let expect = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2()) + 0.5 * (1.0f64 / 0.75).log2();
        assert!((jsd(&p, &q).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.3113).abs() < 1e-4);
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert_eq!(jsd(&dist(&[("a", 1.0)]), &dist(&[("b", 1.0)])).unwrap(), 1.0);
        assert_eq!(tvd(&dist(&[("a", 1.0)]), &dist(&[("b", 1.0)])).unwrap(), 1.0);
        assert_eq!(tvd(&p, &dist(&[("a", 0.75), ("b", 0.25)])).unwrap(), 0.25);
        assert!(matches!(jsd(&dist(&[("a", 0.7)]), &q), Err(FinetuneError::NotNormalized { .. })));
    }

    #[test]
    fn diversity_ratio_cases() {
        assert_eq!(dr(&s(&["1.2.3.4", "1.2.3.4"]), ValueKind::Ip).unwrap(), 0.5);
        assert_eq!(dr(&s(&["999.1.1.1"]), ValueKind::Ip).unwrap(), 0.0);
        assert_eq!(dr(&s(&["1.1.1.1", "2.2.2.2", "3.3.3.3", "4.4.4.4"]), ValueKind::Ip).unwrap(), 1.0);
        assert_eq!(dr(&s(&["80", "65536", "x"]), ValueKind::Port).unwrap(), 1.0 / 3.0);
        assert!(matches!(dr(&[], ValueKind::Len), Err(FinetuneError::EmptyList)));
    }

    #[test]
    fn report_tables() {
        let real = s(&["80", "80", "443"]);
        let (topk, cdf) = distribution_report(&real, &s(&["443"]), 1).unwrap();
        assert_eq!(topk.len(), 1);
        assert_eq!(topk[0].value, "80");
        assert!((topk[0].real_freq - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(topk[0].generated_freq, 0.0);
        // numeric order, not lexicographic
        assert_eq!(cdf.iter().map(|r| r.value.as_str()).collect::<Vec<_>>(), ["80", "443"]);
        assert_eq!(cdf[0].generated_cdf, 0.0);
        assert_eq!((cdf[1].real_cdf, cdf[1].generated_cdf), (1.0, 1.0));
    }
}
