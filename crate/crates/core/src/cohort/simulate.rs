//! Synthetic cohort generation with known ground truth.
//!
//! Each feature is generated as
//! `baseline + loading·age + effect_years·loading + site_shift + site_scale·ε`
//! with `ε ~ Normal(0, noise_sd)`. Group effects are aging-like offsets
//! expressed in years and pushed through the per-feature age loadings, so an
//! injected `+5` for a patient group makes its brains look five years older
//! in feature space. Generation is bit-reproducible per seed.

use super::{CohortError, CohortTable, Group, Sex, SubjectRecord};
use crate::FEATURE_COUNT;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

/// Location/scale corruption of one acquisition site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteEffect {
    pub label: String,
    /// Additive per-feature shift.
    pub location_shift: Vec<f64>,
    /// Multiplicative per-feature noise scale (> 0).
    pub scale: Vec<f64>,
}

impl SiteEffect {
    /// A site with no corruption.
    pub fn neutral(label: &str) -> Self {
        Self {
            label: label.to_string(),
            location_shift: vec![0.0; FEATURE_COUNT],
            scale: vec![1.0; FEATURE_COUNT],
        }
    }
}

/// Full generative description of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n_subjects: usize,
    pub sites: Vec<SiteEffect>,
    /// Ages are drawn uniformly from this range (years).
    pub age_range: (f64, f64),
    /// Per-feature baseline volume at age 0.
    pub baseline: Vec<f64>,
    /// Per-feature change per year of age.
    pub age_loadings: Vec<f64>,
    /// Aging-like offset in years for each group (missing groups get 0).
    pub group_effect_years: Vec<(Group, f64)>,
    /// Fraction of subjects per group; must sum to 1.
    pub group_fractions: Vec<(Group, f64)>,
    /// Per-feature noise standard deviation (≥ 0).
    pub noise_sd: Vec<f64>,
    pub seed: u64,
}

impl SimSpec {
    /// Single-site all-control spec with the given loadings and noise.
    pub fn healthy_single_site(
        n_subjects: usize,
        baseline: Vec<f64>,
        age_loadings: Vec<f64>,
        noise_sd: Vec<f64>,
        seed: u64,
    ) -> Self {
        Self {
            n_subjects,
            sites: vec![SiteEffect::neutral("site0")],
            age_range: (18.0, 65.0),
            baseline,
            age_loadings,
            group_effect_years: Vec::new(),
            group_fractions: vec![(Group::Control, 1.0)],
            noise_sd,
            seed,
        }
    }

    fn validate(&self) -> Result<(), CohortError> {
        if self.n_subjects == 0 {
            return Err(CohortError::BadSimSpec("n_subjects must be > 0".into()));
        }
        if self.sites.is_empty() {
            return Err(CohortError::BadSimSpec("at least one site required".into()));
        }
        for v in [&self.baseline, &self.age_loadings, &self.noise_sd] {
            if v.len() != FEATURE_COUNT {
                return Err(CohortError::BadSimSpec(format!(
                    "feature-space vectors must have length {FEATURE_COUNT}, got {}",
                    v.len()
                )));
            }
        }
        for s in &self.sites {
            if s.location_shift.len() != FEATURE_COUNT || s.scale.len() != FEATURE_COUNT {
                return Err(CohortError::BadSimSpec(format!(
                    "site `{}` vectors must have length {FEATURE_COUNT}",
                    s.label
                )));
            }
            if s.scale.iter().any(|&v| v <= 0.0) {
                return Err(CohortError::BadSimSpec(format!(
                    "site `{}` has a non-positive scale factor",
                    s.label
                )));
            }
        }
        if self.noise_sd.iter().any(|&v| v < 0.0) {
            return Err(CohortError::BadSimSpec("noise_sd must be ≥ 0".into()));
        }
        if !(self.age_range.1 > self.age_range.0) {
            return Err(CohortError::BadSimSpec("age_range must be increasing".into()));
        }
        if self.group_fractions.is_empty() {
            return Err(CohortError::BadSimSpec("group_fractions must be nonempty".into()));
        }
        let total: f64 = self.group_fractions.iter().map(|(_, f)| f).sum();
        if (total - 1.0).abs() > 1e-9 || self.group_fractions.iter().any(|(_, f)| *f < 0.0) {
            return Err(CohortError::BadSimSpec(
                "group_fractions must be non-negative and sum to 1".into(),
            ));
        }
        Ok(())
    }

    fn effect_years(&self, group: Group) -> f64 {
        self.group_effect_years
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, y)| *y)
            .unwrap_or(0.0)
    }
}

/// Everything needed to score a pipeline against the generative truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SimSpec,
}

/// Draw a synthetic cohort from the spec. Deterministic per seed.
pub fn simulate_cohort(spec: &SimSpec) -> Result<(CohortTable, GroundTruth), CohortError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let age_dist = Uniform::new_inclusive(spec.age_range.0, spec.age_range.1)
        .map_err(|e| CohortError::BadSimSpec(format!("age range: {e}")))?;
    let std_normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");

    // Group assignment by largest-remainder counts, then a seeded shuffle, so
    // the realized composition matches the requested fractions exactly.
    let mut group_of: Vec<Group> = Vec::with_capacity(spec.n_subjects);
    {
        let quotas: Vec<f64> = spec
            .group_fractions
            .iter()
            .map(|(_, f)| f * spec.n_subjects as f64)
            .collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let mut missing = spec.n_subjects - counts.iter().sum::<usize>();
        for &i in &order {
            if missing == 0 {
                break;
            }
            counts[i] += 1;
            missing -= 1;
        }
        for (i, (g, _)) in spec.group_fractions.iter().enumerate() {
            group_of.extend(std::iter::repeat(*g).take(counts[i]));
        }
        use rand::seq::SliceRandom;
        group_of.shuffle(&mut rng);
    }

    let mut records = Vec::with_capacity(spec.n_subjects);
    for (i, &group) in group_of.iter().enumerate() {
        let age = age_dist.sample(&mut rng);
        let sex = if rng.random::<bool>() { Sex::Male } else { Sex::Female };
        let site_idx = rng.random_range(0..spec.sites.len());
        let site = &spec.sites[site_idx];
        let bmi = (25.0 + 4.0 * std_normal.sample(&mut rng)).max(15.0);
        let etiv = (1.45 + 0.10 * sex.as_f64() + 0.08 * std_normal.sample(&mut rng)).max(1.0);
        let duration_months = match group {
            Group::Control => None,
            Group::SchizophreniaFe => Some((12.0 + 10.0 * std_normal.sample(&mut rng)).abs()),
            Group::SchizophreniaChronic => {
                Some((130.0 + 60.0 * std_normal.sample(&mut rng)).abs())
            }
            Group::BipolarAp | Group::BipolarNoAp => {
                Some((180.0 + 90.0 * std_normal.sample(&mut rng)).abs())
            }
        };
        let cpz_equiv = match group {
            Group::SchizophreniaFe | Group::SchizophreniaChronic | Group::BipolarAp => {
                Some((300.0 + 150.0 * std_normal.sample(&mut rng)).abs())
            }
            Group::Control | Group::BipolarNoAp => None,
        };

        let effect = spec.effect_years(group);
        let mut features = Vec::with_capacity(FEATURE_COUNT);
        for f in 0..FEATURE_COUNT {
            let eps: f64 = std_normal.sample(&mut rng) * spec.noise_sd[f];
            let value = spec.baseline[f]
                + spec.age_loadings[f] * (age + effect)
                + site.location_shift[f]
                + site.scale[f] * eps;
            features.push(value);
        }
        records.push(SubjectRecord {
            subject_id: format!("SIM{i:05}"),
            site: site.label.clone(),
            age,
            sex,
            group,
            bmi: Some(bmi),
            etiv: Some(etiv),
            duration_months,
            cpz_equiv,
            features,
        });
    }

    let table = CohortTable::new(records, &format!("simulated(seed={})", spec.seed));
    Ok((table, GroundTruth { spec: spec.clone() }))
}

/// Compact, TOML-friendly simulation recipe.
///
/// The per-feature vectors of a full [`SimSpec`] are unwieldy in a config
/// file; a recipe instead describes distributions and is expanded
/// deterministically (from its own seed) into a concrete spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecipe {
    pub n_subjects: usize,
    pub seed: u64,
    #[serde(default = "default_age_min")]
    pub age_min: f64,
    #[serde(default = "default_age_max")]
    pub age_max: f64,
    /// Site labels; shifts and scales are drawn per feature.
    #[serde(default = "default_sites")]
    pub sites: Vec<String>,
    /// SD of the per-feature site location shifts (first site stays clean).
    #[serde(default)]
    pub site_location_sd: f64,
    /// Per-feature site scale factors drawn log-uniformly in this range
    /// (first site stays at 1).
    #[serde(default = "default_one")]
    pub site_scale_low: f64,
    #[serde(default = "default_one")]
    pub site_scale_high: f64,
    #[serde(default = "default_baseline_mean")]
    pub baseline_mean: f64,
    #[serde(default = "default_baseline_sd")]
    pub baseline_sd: f64,
    /// Age loadings drawn uniformly in [loading_low, loading_high] with a
    /// random sign per feature.
    #[serde(default = "default_loading_low")]
    pub loading_low: f64,
    #[serde(default = "default_loading_high")]
    pub loading_high: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    /// Group fractions by CSV code, e.g. `{ CTRL = 0.6, SZ = 0.4 }`.
    #[serde(default)]
    pub groups: std::collections::BTreeMap<String, f64>,
    /// Aging-like group offsets in years by CSV code.
    #[serde(default)]
    pub group_effect_years: std::collections::BTreeMap<String, f64>,
}

fn default_age_min() -> f64 {
    18.0
}
fn default_age_max() -> f64 {
    65.0
}
fn default_sites() -> Vec<String> {
    vec!["site0".to_string()]
}
fn default_one() -> f64 {
    1.0
}
fn default_baseline_mean() -> f64 {
    1000.0
}
fn default_baseline_sd() -> f64 {
    200.0
}
fn default_loading_low() -> f64 {
    0.3
}
fn default_loading_high() -> f64 {
    1.0
}
fn default_noise_sd() -> f64 {
    25.0
}

impl SimRecipe {
    /// Expand the recipe into a concrete [`SimSpec`].
    pub fn expand(&self) -> Result<SimSpec, CohortError> {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed ^ 0x5e17_ab1e_0f00_d5ed);
        let std_normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
        let baseline: Vec<f64> = (0..FEATURE_COUNT)
            .map(|_| self.baseline_mean + self.baseline_sd * std_normal.sample(&mut rng))
            .collect();
        let age_loadings: Vec<f64> = (0..FEATURE_COUNT)
            .map(|_| {
                let mag = rng.random_range(self.loading_low..=self.loading_high);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let mut sites = Vec::with_capacity(self.sites.len());
        for (i, label) in self.sites.iter().enumerate() {
            let (shift, scale) = if i == 0 {
                (vec![0.0; FEATURE_COUNT], vec![1.0; FEATURE_COUNT])
            } else {
                let shift = (0..FEATURE_COUNT)
                    .map(|_| self.site_location_sd * std_normal.sample(&mut rng))
                    .collect();
                let (lo, hi) = (self.site_scale_low, self.site_scale_high);
                if lo <= 0.0 || hi < lo {
                    return Err(CohortError::BadSimSpec(
                        "site scale range must be positive and increasing".into(),
                    ));
                }
                let scale = (0..FEATURE_COUNT)
                    .map(|_| {
                        let u: f64 = rng.random_range(lo.ln()..=hi.ln());
                        u.exp()
                    })
                    .collect();
                (shift, scale)
            };
            sites.push(SiteEffect {
                label: label.clone(),
                location_shift: shift,
                scale,
            });
        }
        let mut group_fractions: Vec<(Group, f64)> = Vec::new();
        if self.groups.is_empty() {
            group_fractions.push((Group::Control, 1.0));
        } else {
            for (code, frac) in &self.groups {
                let g = Group::from_code(code).ok_or_else(|| {
                    CohortError::BadSimSpec(format!("unknown group code `{code}`"))
                })?;
                group_fractions.push((g, *frac));
            }
        }
        let mut group_effect_years = Vec::new();
        for (code, years) in &self.group_effect_years {
            let g = Group::from_code(code)
                .ok_or_else(|| CohortError::BadSimSpec(format!("unknown group code `{code}`")))?;
            group_effect_years.push((g, *years));
        }
        Ok(SimSpec {
            n_subjects: self.n_subjects,
            sites,
            age_range: (self.age_min, self.age_max),
            baseline,
            age_loadings,
            group_effect_years,
            group_fractions,
            noise_sd: vec![self.noise_sd; FEATURE_COUNT],
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: f64) -> Vec<f64> {
        vec![v; FEATURE_COUNT]
    }

    #[test]
    fn noiseless_features_match_the_generative_identity() {
        let mut spec = SimSpec::healthy_single_site(20, flat(100.0), flat(2.0), flat(0.0), 5);
        spec.age_range = (20.0, 60.0);
        let (table, truth) = simulate_cohort(&spec).unwrap();
        for r in &table.records {
            for f in 0..FEATURE_COUNT {
                let expected = truth.spec.baseline[f] + truth.spec.age_loadings[f] * r.age;
                assert!(
                    (r.features[f] - expected).abs() < 1e-12,
                    "feature {f} deviates"
                );
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SimSpec::healthy_single_site(50, flat(100.0), flat(1.0), flat(3.0), 99);
        let (a, _) = simulate_cohort(&spec).unwrap();
        let (b, _) = simulate_cohort(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_sample_slope_matches_loading() {
        let spec = SimSpec::healthy_single_site(200, flat(50.0), flat(1.7), flat(0.0), 11);
        let (table, _) = simulate_cohort(&spec).unwrap();
        let ages = table.ages();
        let mean_age = ages.iter().sum::<f64>() / ages.len() as f64;
        for f in [0usize, 80, 174] {
            let ys = table.feature_column(f);
            let mean_y = ys.iter().sum::<f64>() / ys.len() as f64;
            let mut sxy = 0.0;
            let mut sxx = 0.0;
            for (a, y) in ages.iter().zip(&ys) {
                sxy += (a - mean_age) * (y - mean_y);
                sxx += (a - mean_age) * (a - mean_age);
            }
            assert!((sxy / sxx - 1.7).abs() < 1e-10, "slope off at feature {f}");
        }
    }

    #[test]
    fn two_site_mean_gap_recovered_after_age_residualization() {
        // +10 location shift on feature 0 for the second site, noise 1.
        let mut spec = SimSpec::healthy_single_site(2000, flat(0.0), flat(1.0), flat(1.0), 42);
        let mut shifted = SiteEffect::neutral("site1");
        shifted.location_shift[0] = 10.0;
        spec.sites = vec![SiteEffect::neutral("site0"), shifted];
        let (table, _) = simulate_cohort(&spec).unwrap();

        // Residualize feature 0 on age with plain least squares.
        let ages = table.ages();
        let ys = table.feature_column(0);
        let n = ages.len() as f64;
        let mean_age = ages.iter().sum::<f64>() / n;
        let mean_y = ys.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        for (a, y) in ages.iter().zip(&ys) {
            sxy += (a - mean_age) * (y - mean_y);
            sxx += (a - mean_age) * (a - mean_age);
        }
        let slope = sxy / sxx;
        let resid: Vec<f64> = ages
            .iter()
            .zip(&ys)
            .map(|(a, y)| y - mean_y - slope * (a - mean_age))
            .collect();
        let (mut sum0, mut n0, mut sum1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for (r, rec) in resid.iter().zip(&table.records) {
            if rec.site == "site0" {
                sum0 += r;
                n0 += 1;
            } else {
                sum1 += r;
                n1 += 1;
            }
        }
        let gap = sum1 / n1 as f64 - sum0 / n0 as f64;
        // Monte-Carlo bound: 3·σ·sqrt(1/n0 + 1/n1) ≈ 0.15 for σ=1, n≈1000.
        assert!((gap - 10.0).abs() < 0.15, "gap {gap}");
    }

    #[test]
    fn group_effect_shifts_features_like_aging() {
        let mut spec = SimSpec::healthy_single_site(400, flat(0.0), flat(2.0), flat(0.0), 17);
        spec.group_fractions = vec![(Group::Control, 0.5), (Group::SchizophreniaChronic, 0.5)];
        spec.group_effect_years = vec![(Group::SchizophreniaChronic, 5.0)];
        let (table, _) = simulate_cohort(&spec).unwrap();
        for r in &table.records {
            let offset = match r.group {
                Group::SchizophreniaChronic => 5.0,
                _ => 0.0,
            };
            assert!((r.features[3] - 2.0 * (r.age + offset)).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut spec = SimSpec::healthy_single_site(10, flat(0.0), flat(1.0), flat(1.0), 1);
        spec.noise_sd[4] = -0.5;
        assert!(simulate_cohort(&spec).is_err());

        let mut spec = SimSpec::healthy_single_site(10, flat(0.0), flat(1.0), flat(1.0), 1);
        spec.sites[0].scale[0] = 0.0;
        assert!(simulate_cohort(&spec).is_err());
    }

    #[test]
    fn recipe_expansion_is_deterministic() {
        let recipe = SimRecipe {
            n_subjects: 30,
            seed: 4,
            age_min: 18.0,
            age_max: 65.0,
            sites: vec!["a".into(), "b".into()],
            site_location_sd: 5.0,
            site_scale_low: 0.8,
            site_scale_high: 1.2,
            baseline_mean: 1000.0,
            baseline_sd: 100.0,
            loading_low: 0.3,
            loading_high: 1.0,
            noise_sd: 10.0,
            groups: Default::default(),
            group_effect_years: Default::default(),
        };
        let a = recipe.expand().unwrap();
        let b = recipe.expand().unwrap();
        assert_eq!(a, b);
        let (ta, _) = simulate_cohort(&a).unwrap();
        let (tb, _) = simulate_cohort(&b).unwrap();
        assert_eq!(ta, tb);
    }
}
