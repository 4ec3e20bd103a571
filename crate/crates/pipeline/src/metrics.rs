//! Sample statistics: validity, uniqueness, per-property histograms,
//! pairwise-Tanimoto diversity and per-prompt comparisons.

use std::collections::{BTreeMap, HashSet};

use era_chem::{parse_smiles, tanimoto, Fingerprint, Property, PropertyContext};
use era_neural::NeuralPolicy;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::sample::{sample_smiles, PromptSamples};
use crate::text::PromptSet;

pub const BINS: usize = 30;

/// Fixed histogram range for a property. Values outside are counted in the
/// nearest edge bin so every value lands somewhere.
pub fn default_range(p: Property) -> [f64; 2] {
    match p {
        Property::Logp => [-5.0, 10.0],
        Property::Mr => [0.0, 150.0],
        Property::RingCount => [-0.5, 5.5],
        Property::Qed | Property::Tanimoto => [0.0, 1.0],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || bins == 0 {
            return Err(PipelineError::config(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
        }
        Ok(Histogram { lo, hi, counts: vec![0; bins] })
    }

    pub fn add(&mut self, v: f64) {
        let n = self.counts.len();
        let pos = (v - self.lo) / (self.hi - self.lo) * n as f64;
        let bin = if pos.is_nan() { 0 } else { (pos.floor().max(0.0) as usize).min(n - 1) };
        self.counts[bin] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySummary {
    /// Valid molecules with a value for this property.
    pub count: usize,
    /// Valid molecules for which the property could not be computed.
    pub missing: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMetrics {
    pub prompt: String,
    pub samples: usize,
    pub valid: usize,
    /// Mean of each property over this prompt's valid samples.
    pub means: BTreeMap<String, f64>,
    /// Fraction of samples whose fingerprint equals the prompt's
    /// (Tanimoto similarity 1). Absent for the empty prompt.
    pub identical_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDelta {
    pub prompt: String,
    /// Aligned minus reference per-prompt mean, where both have valid samples.
    pub deltas: BTreeMap<String, f64>,
    pub identical_fraction_reference: Option<f64>,
    pub identical_fraction_aligned: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub valid: usize,
    pub validity_fraction: f64,
    /// Distinct valid strings over valid samples.
    pub uniqueness_fraction: f64,
    /// Over all prompted samples, the fraction identical to their prompt.
    pub identical_fraction: Option<f64>,
    pub properties: BTreeMap<String, PropertySummary>,
    /// Tanimoto similarity of every pair among the first valid samples.
    pub diversity: Histogram,
    pub diversity_molecules: usize,
    pub per_prompt: Vec<PromptMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<PromptDelta>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Samples drawn per prompt.
    pub n_samples: usize,
    pub temperature: f64,
    /// Tanimoto similarity to the prompt is added automatically for prompts.
    pub properties: Vec<Property>,
    /// Overrides of [`default_range`], keyed by property name.
    pub ranges: BTreeMap<String, [f64; 2]>,
    /// Cap on the molecules entering the pairwise diversity histogram.
    pub diversity_cap: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            n_samples: 100,
            temperature: 1.0,
            properties: vec![Property::Logp, Property::Mr, Property::RingCount],
            ranges: BTreeMap::new(),
            diversity_cap: 500,
        }
    }
}

impl MetricsConfig {
    fn range(&self, p: Property) -> [f64; 2] {
        self.ranges.get(p.name()).copied().unwrap_or_else(|| default_range(p))
    }
}

/// Sample from `policy` and summarize.
pub fn emit_metrics(
    policy: &NeuralPolicy,
    prompts: &PromptSet,
    cfg: &MetricsConfig,
    ctx: &PropertyContext,
    seed: u64,
) -> Result<MetricsReport> {
    if cfg.n_samples == 0 {
        return Err(PipelineError::config("n_samples must be at least 1"));
    }
    let samples = sample_smiles(policy, prompts, cfg.n_samples, cfg.temperature, seed)?;
    metrics_from_samples(&samples, cfg, ctx)
}

pub fn metrics_from_samples(samples: &[PromptSamples], cfg: &MetricsConfig, ctx: &PropertyContext) -> Result<MetricsReport> {
    let prompted = samples.iter().any(|s| !s.prompt.is_empty());
    let mut props = cfg.properties.clone();
    if prompted && !props.contains(&Property::Tanimoto) {
        props.push(Property::Tanimoto);
    }
    let mut values: BTreeMap<Property, Vec<f64>> = props.iter().map(|&p| (p, Vec::new())).collect();
    let mut missing: BTreeMap<Property, usize> = props.iter().map(|&p| (p, 0)).collect();
    let (mut total, mut valid, mut identical, mut prompted_samples) = (0usize, 0usize, 0usize, 0usize);
    let mut distinct = HashSet::new();
    let mut fingerprints = Vec::new();
    let mut per_prompt = Vec::with_capacity(samples.len());

    for group in samples {
        let prompt_fp = if group.prompt.is_empty() {
            None
        } else {
            let mol = parse_smiles(&group.prompt)
                .map_err(|e| PipelineError::config(format!("prompt {:?} is not a valid molecule: {e}", group.prompt)))?;
            Some(Fingerprint::of(&mol))
        };
        let mut sums: BTreeMap<Property, (f64, usize)> = BTreeMap::new();
        let (mut group_valid, mut group_identical) = (0, 0);
        for smi in &group.samples {
            total += 1;
            let Ok(mol) = parse_smiles(smi) else { continue };
            valid += 1;
            group_valid += 1;
            distinct.insert(smi.as_str());
            let fp = Fingerprint::of(&mol);
            if let Some(pfp) = &prompt_fp {
                if tanimoto(&fp, pfp)? == 1.0 {
                    group_identical += 1;
                }
            }
            for &p in &props {
                if p == Property::Tanimoto && prompt_fp.is_none() {
                    *missing.get_mut(&p).expect("listed") += 1;
                    continue;
                }
                match ctx.evaluate(p, smi, &mol, prompt_fp.as_ref()) {
                    Ok(v) if v.is_finite() => {
                        values.get_mut(&p).expect("listed").push(v);
                        let e = sums.entry(p).or_insert((0.0, 0));
                        e.0 += v;
                        e.1 += 1;
                    }
                    _ => *missing.get_mut(&p).expect("listed") += 1,
                }
            }
            if fingerprints.len() < cfg.diversity_cap {
                fingerprints.push(fp);
            }
        }
        let identical_fraction = prompt_fp.as_ref().map(|_| ratio(group_identical, group.samples.len()));
        if prompt_fp.is_some() {
            identical += group_identical;
            prompted_samples += group.samples.len();
        }
        per_prompt.push(PromptMetrics {
            prompt: group.prompt.clone(),
            samples: group.samples.len(),
            valid: group_valid,
            means: sums.into_iter().map(|(p, (s, n))| (p.name().to_string(), s / n as f64)).collect(),
            identical_fraction,
        });
    }

    let mut properties = BTreeMap::new();
    for &p in &props {
        let [lo, hi] = cfg.range(p);
        let mut histogram = Histogram::new(lo, hi, BINS)?;
        let vs = &values[&p];
        for &v in vs {
            histogram.add(v);
        }
        let (mean, std) = mean_std(vs);
        properties.insert(
            p.name().to_string(),
            PropertySummary { count: vs.len(), missing: missing[&p], mean, std, histogram },
        );
    }

    let mut diversity = Histogram::new(0.0, 1.0, BINS)?;
    for i in 0..fingerprints.len() {
        for j in i + 1..fingerprints.len() {
            diversity.add(tanimoto(&fingerprints[i], &fingerprints[j])?);
        }
    }

    Ok(MetricsReport {
        n_samples: total,
        valid,
        validity_fraction: ratio(valid, total),
        uniqueness_fraction: ratio(distinct.len(), valid),
        identical_fraction: (prompted_samples > 0).then(|| ratio(identical, prompted_samples)),
        properties,
        diversity,
        diversity_molecules: fingerprints.len(),
        per_prompt,
        deltas: None,
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn mean_std(vs: &[f64]) -> (Option<f64>, Option<f64>) {
    if vs.is_empty() {
        return (None, None);
    }
    let n = vs.len() as f64;
    let mean = vs.iter().sum::<f64>() / n;
    let var = vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Per-prompt aligned-minus-reference differences. Both reports must cover
/// the same prompts in the same order.
pub fn prompt_deltas(aligned: &MetricsReport, reference: &MetricsReport) -> Result<Vec<PromptDelta>> {
    if aligned.per_prompt.len() != reference.per_prompt.len() {
        return Err(PipelineError::config("reports cover different prompt sets"));
    }
    aligned
        .per_prompt
        .iter()
        .zip(&reference.per_prompt)
        .map(|(a, r)| {
            if a.prompt != r.prompt {
                return Err(PipelineError::config(format!("prompt mismatch: {:?} vs {:?}", a.prompt, r.prompt)));
            }
            let deltas =
                a.means.iter().filter_map(|(k, va)| r.means.get(k).map(|vr| (k.clone(), va - vr))).collect();
            Ok(PromptDelta {
                prompt: a.prompt.clone(),
                deltas,
                identical_fraction_reference: r.identical_fraction,
                identical_fraction_aligned: a.identical_fraction,
            })
        })
        .collect()
}

/// One-sided sign test: probability of at least `successes` heads in
/// `successes + failures` fair coin flips.
pub fn sign_test_p_value(successes: usize, failures: usize) -> f64 {
    let n = successes + failures;
    if n == 0 {
        return 1.0;
    }
    // ln C(n, k) accumulated term by term
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = 0.0;
    let mut p = 0.0;
    for k in 0..=n {
        if k > 0 {
            ln_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= successes {
            p += (ln_choose + ln_half_n).exp();
        }
    }
    p.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(prompt: &str, samples: &[&str]) -> PromptSamples {
        PromptSamples { prompt: prompt.into(), samples: samples.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn conservation_and_fractions() {
        let samples = [group("", &["CCO", "C1CC", "c1ccccc1", "CCO", "xyz"])];
        let r = metrics_from_samples(&samples, &MetricsConfig::default(), &PropertyContext::default()).unwrap();
        assert_eq!(r.n_samples, 5);
        assert_eq!(r.valid, 3);
        assert!((r.validity_fraction - 0.6).abs() < 1e-15);
        assert!((r.uniqueness_fraction - 2.0 / 3.0).abs() < 1e-15);
        for s in r.properties.values() {
            assert_eq!(s.histogram.total() as usize, r.valid);
            assert_eq!(s.histogram.counts.len(), BINS);
        }
        assert_eq!(r.diversity.total(), 3);
        assert_eq!(r.properties["ring_count"].mean, Some(1.0 / 3.0));
        assert_eq!(r.identical_fraction, None);
    }

    #[test]
    fn single_sample_fills_one_bin() {
        let r = metrics_from_samples(&[group("", &["CC"])], &MetricsConfig::default(), &PropertyContext::default())
            .unwrap();
        for s in r.properties.values() {
            assert_eq!(s.histogram.counts.iter().filter(|&&c| c > 0).count(), 1);
            assert_eq!(s.std, Some(0.0));
        }
    }

    #[test]
    fn prompted_identity_and_deltas() {
        let ctx = PropertyContext::default();
        let cfg = MetricsConfig::default();
        let reference = metrics_from_samples(&[group("CCO", &["CCO", "OCC", "CCCO", "CC"])], &cfg, &ctx).unwrap();
        let aligned = metrics_from_samples(&[group("CCO", &["CCCO", "CCCCO", "CCO", "C1CC1"])], &cfg, &ctx).unwrap();
        assert_eq!(reference.identical_fraction, Some(0.5));
        assert_eq!(aligned.identical_fraction, Some(0.25));
        assert_eq!(reference.properties["tanimoto"].count, 4);
        let d = prompt_deltas(&aligned, &reference).unwrap();
        assert!(d[0].deltas["logp"] > 0.0);
        let same = prompt_deltas(&reference, &reference).unwrap();
        assert!(same[0].deltas.values().all(|v| *v == 0.0));
    }

    #[test]
    fn histogram_edges_clamp() {
        let mut h = Histogram::new(0.0, 3.0, 3).unwrap();
        for v in [-1.0, 0.0, 0.99, 1.0, 2.5, 3.0, 10.0] {
            h.add(v);
        }
        assert_eq!(h.counts, vec![3, 1, 3]);
        assert_eq!(h.edges(), vec![0.0, 1.0, 2.0, 3.0]);
        assert!(Histogram::new(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn sign_test() {
        assert!((sign_test_p_value(0, 10) - 1.0).abs() < 1e-12);
        assert!((sign_test_p_value(10, 0) - 0.5f64.powi(10)).abs() < 1e-15);
        assert!((sign_test_p_value(5, 5) - 638.0 / 1024.0).abs() < 1e-12);
        assert!(sign_test_p_value(560, 440) < 0.01);
    }
}
