//! Treatments, components, studies and the conversion of arm-level counts
//! into within-study contrasts.
//!
//! Component indices are handed out in first-appearance order by a
//! [`ComponentDict`] and never change afterwards; every design matrix built
//! from a [`Network`] uses that column order.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{CnmaError, Result};

pub const DEFAULT_SEPARATOR: &str = "+";

/// Ordered dictionary of component names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentDict {
    names: Vec<String>,
}

impl ComponentDict {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut dict = Self::new();
        for name in names {
            dict.register(&name.into());
        }
        dict
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Returns the index of `name`, adding it at the end when unseen.
    pub fn register(&mut self, name: &str) -> usize {
        match self.index_of(name) {
            Some(i) => i,
            None => {
                self.names.push(name.to_string());
                self.names.len() - 1
            }
        }
    }

    /// Parses a label against the existing dictionary without registering
    /// anything new.
    pub fn lookup(&self, label: &str, separator: &str) -> Result<Treatment> {
        let mut components = Vec::new();
        for token in split_label(label, separator)? {
            let idx = self
                .index_of(token)
                .ok_or_else(|| CnmaError::UnknownTreatment(label.to_string()))?;
            if components.contains(&idx) {
                return Err(CnmaError::DuplicateComponent {
                    label: label.to_string(),
                    component: token.to_string(),
                });
            }
            components.push(idx);
        }
        Ok(Treatment::from_components(label, components))
    }

    /// Single-component treatment for component `index`.
    pub fn single(&self, index: usize) -> Result<Treatment> {
        let name = self.name(index).ok_or(CnmaError::UnknownComponent(index))?;
        Ok(Treatment::from_components(name, vec![index]))
    }
}

fn split_label<'a>(label: &'a str, separator: &str) -> Result<Vec<&'a str>> {
    if label.trim().is_empty() {
        return Err(CnmaError::EmptyToken(label.to_string()));
    }
    let tokens: Vec<&str> = label.split(separator).map(str::trim).collect();
    if tokens.iter().any(|t| t.is_empty()) {
        return Err(CnmaError::EmptyToken(label.to_string()));
    }
    Ok(tokens)
}

/// A treatment protocol: a non-empty set of components.
///
/// Equality and hashing look only at the component set; the label is for
/// display.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Treatment {
    pub label: String,
    components: Vec<usize>,
}

impl Treatment {
    /// Builds a treatment from component indices. Indices are sorted and
    /// deduplicated.
    pub fn from_components(label: impl Into<String>, mut components: Vec<usize>) -> Self {
        components.sort_unstable();
        components.dedup();
        Self {
            label: label.into(),
            components,
        }
    }

    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn size(&self) -> usize {
        self.components.len()
    }

    pub fn contains(&self, component: usize) -> bool {
        self.components.binary_search(&component).is_ok()
    }

    pub fn is_single(&self) -> bool {
        self.components.len() == 1
    }
}

impl PartialEq for Treatment {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components
    }
}

impl Eq for Treatment {}

impl Hash for Treatment {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.components.hash(state);
    }
}

/// Splits `label` on `separator`, registers unseen components, and returns
/// the treatment with sorted component indices.
pub fn parse_treatment(label: &str, separator: &str, dict: &mut ComponentDict) -> Result<Treatment> {
    let tokens = split_label(label, separator)?;
    for (i, t) in tokens.iter().enumerate() {
        if tokens[..i].contains(t) {
            return Err(CnmaError::DuplicateComponent {
                label: label.to_string(),
                component: t.to_string(),
            });
        }
    }
    let components = tokens.iter().map(|t| dict.register(t)).collect();
    let canonical = tokens.join(separator);
    Ok(Treatment::from_components(canonical, components))
}

/// Canonical label: component names in index order joined by `separator`.
pub fn format_treatment(treatment: &Treatment, dict: &ComponentDict, separator: &str) -> Result<String> {
    let names = treatment
        .components()
        .iter()
        .map(|&c| dict.name(c).ok_or(CnmaError::UnknownComponent(c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(names.join(separator))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub treatment: Treatment,
    pub events: u64,
    pub total: u64,
}

impl ArmRecord {
    pub fn new(treatment: Treatment, events: u64, total: u64) -> Self {
        Self {
            treatment,
            events,
            total,
        }
    }

    /// Observed log-odds, or `None` when either cell is empty.
    pub fn log_odds(&self) -> Option<f64> {
        let (r, f) = (self.events as f64, (self.total - self.events) as f64);
        (r > 0.0 && f > 0.0).then(|| (r / f).ln())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub id: String,
    pub arms: Vec<ArmRecord>,
}

impl Study {
    pub fn new(id: impl Into<String>, arms: Vec<ArmRecord>) -> Result<Self> {
        let id = id.into();
        if arms.len() < 2 {
            return Err(CnmaError::TooFewArms(id));
        }
        for (j, arm) in arms.iter().enumerate() {
            if arm.total == 0 {
                return Err(CnmaError::EmptyArm(id));
            }
            if arm.events > arm.total {
                return Err(CnmaError::EventsExceedTotal {
                    study: id,
                    events: arm.events,
                    total: arm.total,
                });
            }
            if arms[..j].iter().any(|a| a.treatment == arm.treatment) {
                return Err(CnmaError::DuplicateTreatment {
                    study: id,
                    treatment: arm.treatment.label.clone(),
                });
            }
        }
        Ok(Self { id, arms })
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn treatments(&self) -> impl Iterator<Item = &Treatment> {
        self.arms.iter().map(|a| &a.treatment)
    }

    pub fn arm_of(&self, treatment: &Treatment) -> Option<usize> {
        self.arms.iter().position(|a| &a.treatment == treatment)
    }

    /// Copy of the study with arm `index` moved to the front; the other arms
    /// keep their relative order.
    pub fn with_first_arm(&self, index: usize) -> Self {
        let mut arms = Vec::with_capacity(self.arms.len());
        arms.push(self.arms[index].clone());
        arms.extend(
            self.arms
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != index)
                .map(|(_, a)| a.clone()),
        );
        Self {
            id: self.id.clone(),
            arms,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub studies: Vec<Study>,
    pub components: ComponentDict,
    pub treatments: Vec<Treatment>,
    pub connected: bool,
}

impl Network {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn treatment(&self, label: &str, separator: &str) -> Result<Treatment> {
        let t = self.components.lookup(label, separator)?;
        self.treatments
            .iter()
            .find(|x| **x == t)
            .cloned()
            .ok_or_else(|| CnmaError::UnknownTreatment(label.to_string()))
    }

    pub fn contains_treatment(&self, t: &Treatment) -> bool {
        self.treatments.contains(t)
    }

    pub fn require_connected(&self) -> Result<()> {
        if self.connected {
            Ok(())
        } else {
            Err(CnmaError::Disconnected(check_connectivity(self)?.len()))
        }
    }

    /// Single-component treatments for every component, in index order.
    pub fn component_treatments(&self) -> Vec<Treatment> {
        (0..self.n_components())
            .map(|c| self.components.single(c).expect("index in range"))
            .collect()
    }
}

/// Assembles a network from validated studies whose treatments index into
/// `components`.
pub fn build_network(components: ComponentDict, studies: Vec<Study>) -> Result<Network> {
    if studies.is_empty() {
        return Err(CnmaError::EmptyNetwork);
    }
    let mut treatments: Vec<Treatment> = Vec::new();
    for (i, study) in studies.iter().enumerate() {
        if study.arms.len() < 2 {
            return Err(CnmaError::TooFewArms(study.id.clone()));
        }
        if studies[..i].iter().any(|s| s.id == study.id) {
            return Err(CnmaError::DuplicateStudy(study.id.clone()));
        }
        for t in study.treatments() {
            if let Some(&bad) = t.components().iter().find(|&&c| c >= components.len()) {
                return Err(CnmaError::UnknownComponent(bad));
            }
            if !treatments.contains(t) {
                treatments.push(t.clone());
            }
        }
    }
    let mut network = Network {
        studies,
        components,
        treatments,
        connected: false,
    };
    network.connected = check_connectivity(&network)?.len() == 1;
    Ok(network)
}

/// Network over the treatments of contrast blocks, for fits that read only
/// contrasts. Arm counts are placeholders (0 of 1) and carry no data.
pub fn contrast_network(components: ComponentDict, blocks: &[ContrastBlock]) -> Result<Network> {
    let studies = blocks
        .iter()
        .map(|b| Study::new(b.study_id.clone(), b.treatments.iter().map(|t| ArmRecord::new(t.clone(), 0, 1)).collect()))
        .collect::<Result<Vec<_>>>()?;
    build_network(components, studies)
}

/// Groups treatments by the transitive closure of "appear together in a
/// study". Groups are ordered by their first treatment's position in
/// `network.treatments`.
pub fn check_connectivity(network: &Network) -> Result<Vec<Vec<Treatment>>> {
    let n = network.treatments.len();
    if n == 0 {
        return Err(CnmaError::EmptyNetwork);
    }
    let pos: HashMap<&Treatment, usize> = network.treatments.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for study in &network.studies {
        let mut ids = study.treatments().filter_map(|t| pos.get(t).copied());
        if let Some(first) = ids.next() {
            for other in ids {
                let (a, b) = (find(&mut parent, first), find(&mut parent, other));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<Treatment>)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, g)) => g.push(network.treatments[i].clone()),
            None => groups.push((root, vec![network.treatments[i].clone()])),
        }
    }
    Ok(groups.into_iter().map(|(_, g)| g).collect())
}

/// What to do when a contrast would involve an empty cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroCellPolicy {
    #[default]
    Error,
    /// Add 0.5 to every cell of a study that has any empty cell.
    #[serde(rename = "cc05")]
    Continuity05,
}

/// Independent contrasts of one study against a common baseline arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastBlock {
    pub study_id: String,
    pub baseline_arm: usize,
    /// Log odds ratios of the non-baseline arms, in arm order.
    pub y_star: Vec<f64>,
    pub se: Vec<f64>,
    pub se_baseline: f64,
    /// All arm treatments in arm order, baseline included.
    pub treatments: Vec<Treatment>,
}

impl ContrastBlock {
    pub fn new(
        study_id: impl Into<String>,
        baseline_arm: usize,
        y_star: Vec<f64>,
        se: Vec<f64>,
        se_baseline: f64,
        treatments: Vec<Treatment>,
    ) -> Result<Self> {
        let study_id = study_id.into();
        let a = treatments.len();
        if a < 2 {
            return Err(CnmaError::TooFewArms(study_id));
        }
        if baseline_arm >= a {
            return Err(CnmaError::ArmOutOfRange {
                index: baseline_arm,
                arms: a,
            });
        }
        if y_star.len() != a - 1 || se.len() != a - 1 {
            return Err(CnmaError::DimensionMismatch(format!(
                "study '{study_id}' has {a} arms but {} contrasts and {} standard errors",
                y_star.len(),
                se.len()
            )));
        }
        let finite = y_star.iter().chain(&se).all(|v| v.is_finite()) && se_baseline.is_finite();
        if !finite || se.iter().any(|&s| s <= 0.0) || se_baseline < 0.0 {
            return Err(CnmaError::InvalidArgument(format!(
                "study '{study_id}' needs finite contrasts, positive standard errors and a non-negative baseline standard error"
            )));
        }
        let min_var = se.iter().map(|s| s * s).fold(f64::INFINITY, f64::min);
        if se_baseline * se_baseline >= min_var {
            return Err(CnmaError::NotPositiveDefinite);
        }
        Ok(Self {
            study_id,
            baseline_arm,
            y_star,
            se,
            se_baseline,
            treatments,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.treatments.len()
    }

    pub fn n_contrasts(&self) -> usize {
        self.y_star.len()
    }

    /// Treatments of the non-baseline arms, matching `y_star` order.
    pub fn contrast_treatments(&self) -> impl Iterator<Item = &Treatment> {
        let b = self.baseline_arm;
        self.treatments.iter().enumerate().filter(move |(j, _)| *j != b).map(|(_, t)| t)
    }

    pub fn baseline_treatment(&self) -> &Treatment {
        &self.treatments[self.baseline_arm]
    }
}

/// Log odds ratios of every arm against `baseline_arm` with their standard
/// errors.
pub fn arm_to_contrast(study: &Study, baseline_arm: usize, policy: ZeroCellPolicy) -> Result<ContrastBlock> {
    let a = study.n_arms();
    if baseline_arm >= a {
        return Err(CnmaError::ArmOutOfRange {
            index: baseline_arm,
            arms: a,
        });
    }
    let has_zero = study.arms.iter().any(|arm| arm.events == 0 || arm.events == arm.total);
    let shift = match (has_zero, policy) {
        (false, _) => 0.0,
        (true, ZeroCellPolicy::Error) => return Err(CnmaError::ZeroCell(study.id.clone())),
        (true, ZeroCellPolicy::Continuity05) => 0.5,
    };
    let cells = |arm: &ArmRecord| {
        let r = arm.events as f64 + shift;
        let f = (arm.total - arm.events) as f64 + shift;
        ((r / f).ln(), 1.0 / r + 1.0 / f)
    };
    let (base_lo, base_var) = cells(&study.arms[baseline_arm]);
    let mut y_star = Vec::with_capacity(a - 1);
    let mut se = Vec::with_capacity(a - 1);
    for (j, arm) in study.arms.iter().enumerate() {
        if j == baseline_arm {
            continue;
        }
        let (lo, var) = cells(arm);
        y_star.push(lo - base_lo);
        se.push((var + base_var).sqrt());
    }
    ContrastBlock::new(
        study.id.clone(),
        baseline_arm,
        y_star,
        se,
        base_var.sqrt(),
        study.treatments().cloned().collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_arm(dict: &mut ComponentDict, id: &str, t1: &str, t2: &str, r: (u64, u64), n: (u64, u64)) -> Study {
        let a = parse_treatment(t1, "+", dict).unwrap();
        let b = parse_treatment(t2, "+", dict).unwrap();
        Study::new(id, vec![ArmRecord::new(a, r.0, n.0), ArmRecord::new(b, r.1, n.1)]).unwrap()
    }

    #[test]
    fn contrast_network_from_blocks() {
        let mut dict = ComponentDict::new();
        let (p, a, ab) = (
            parse_treatment("P", "+", &mut dict).unwrap(),
            parse_treatment("A", "+", &mut dict).unwrap(),
            parse_treatment("A+B", "+", &mut dict).unwrap(),
        );
        let blocks = vec![
            ContrastBlock::new("s1", 0, vec![0.2, 0.4], vec![0.3, 0.3], 0.1, vec![p.clone(), a.clone(), ab.clone()]).unwrap(),
            ContrastBlock::new("s2", 0, vec![0.1], vec![0.2], 0.0, vec![a.clone(), ab.clone()]).unwrap(),
        ];
        let net = contrast_network(dict.clone(), &blocks).unwrap();
        assert_eq!(net.n_studies(), 2);
        assert_eq!(net.n_components(), 3);
        assert_eq!(net.studies[0].treatments().cloned().collect::<Vec<_>>(), vec![p, a.clone(), ab.clone()]);
        assert!(net.connected);
        let dup = vec![blocks[1].clone(), blocks[1].clone()];
        assert!(contrast_network(dict, &dup).is_err());
    }

    #[test]
    fn parses_multicomponent_labels() {
        let mut dict = ComponentDict::new();
        let t = parse_treatment("A+C+D", "+", &mut dict).unwrap();
        assert_eq!(t.size(), 3);
        assert_eq!(dict.names(), &["A", "C", "D"]);
        let e = parse_treatment("E", "+", &mut dict).unwrap();
        assert_eq!(e.components(), &[3]);
        assert!(matches!(
            parse_treatment("A+A", "+", &mut dict),
            Err(CnmaError::DuplicateComponent { .. })
        ));
        assert!(matches!(parse_treatment("A+", "+", &mut dict), Err(CnmaError::EmptyToken(_))));
        // whitespace is trimmed and order does not matter for equality
        let t2 = parse_treatment(" D + A+C", "+", &mut dict).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn builds_small_network() {
        let mut dict = ComponentDict::new();
        let s = two_arm(&mut dict, "s1", "E", "A", (10, 20), (50, 50));
        let net = build_network(dict, vec![s]).unwrap();
        assert_eq!(net.n_components(), 2);
        assert_eq!(net.n_studies(), 1);
        assert!(net.connected);
    }

    #[test]
    fn rejects_bad_studies() {
        let mut dict = ComponentDict::new();
        let a = parse_treatment("A", "+", &mut dict).unwrap();
        assert!(matches!(
            Study::new("x", vec![ArmRecord::new(a.clone(), 1, 10)]),
            Err(CnmaError::TooFewArms(_))
        ));
        assert!(matches!(
            Study::new("x", vec![ArmRecord::new(a.clone(), 1, 10), ArmRecord::new(a.clone(), 2, 10)]),
            Err(CnmaError::DuplicateTreatment { .. })
        ));
        let s1 = two_arm(&mut dict, "s", "A", "B", (1, 1), (5, 5));
        let s2 = two_arm(&mut dict, "s", "A", "C", (1, 1), (5, 5));
        assert!(matches!(build_network(dict, vec![s1, s2]), Err(CnmaError::DuplicateStudy(_))));
        assert!(matches!(
            build_network(ComponentDict::new(), vec![]),
            Err(CnmaError::EmptyNetwork)
        ));
    }

    #[test]
    fn connectivity_partitions() {
        let mut dict = ComponentDict::new();
        let s1 = two_arm(&mut dict, "1", "E", "A", (1, 1), (5, 5));
        let s2 = two_arm(&mut dict, "2", "A", "B", (1, 1), (5, 5));
        let net = build_network(dict.clone(), vec![s1.clone(), s2]).unwrap();
        let groups = check_connectivity(&net).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].len(), 3);

        let s3 = two_arm(&mut dict, "3", "C", "D", (1, 1), (5, 5));
        let net = build_network(dict, vec![s1, s3]).unwrap();
        assert!(!net.connected);
        assert_eq!(check_connectivity(&net).unwrap().len(), 2);
        assert!(matches!(net.require_connected(), Err(CnmaError::Disconnected(2))));

        let empty = Network {
            studies: vec![],
            components: ComponentDict::new(),
            treatments: vec![],
            connected: false,
        };
        assert!(matches!(check_connectivity(&empty), Err(CnmaError::EmptyNetwork)));
    }

    #[test]
    fn contrast_from_counts() {
        let mut dict = ComponentDict::new();
        let s = two_arm(&mut dict, "s", "P", "A", (10, 20), (50, 50));
        let b = arm_to_contrast(&s, 0, ZeroCellPolicy::Error).unwrap();
        // log[(20/30)/(10/40)] = log(8/3)
        assert_abs_diff_eq!(b.y_star[0], 0.980_829_253_011_726, epsilon = 1e-12);
        assert_abs_diff_eq!(b.se[0], (0.1f64 + 1.0 / 40.0 + 0.05 + 1.0 / 30.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(b.se[0], 0.45644, epsilon = 5e-6);
        assert_abs_diff_eq!(b.se_baseline, 0.35355, epsilon = 5e-6);

        let same = two_arm(&mut dict, "t", "P", "A", (10, 10), (50, 50));
        let b = arm_to_contrast(&same, 0, ZeroCellPolicy::Error).unwrap();
        assert_eq!(b.y_star[0], 0.0);
        assert_abs_diff_eq!(b.se[0], (2.0f64 * 0.125).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn zero_cells_follow_policy() {
        let mut dict = ComponentDict::new();
        let s = two_arm(&mut dict, "z", "P", "A", (0, 5), (50, 50));
        assert!(matches!(arm_to_contrast(&s, 0, ZeroCellPolicy::Error), Err(CnmaError::ZeroCell(_))));
        let b = arm_to_contrast(&s, 0, ZeroCellPolicy::Continuity05).unwrap();
        let expected = ((5.5f64 / 45.5) / (0.5 / 50.5)).ln();
        assert_abs_diff_eq!(b.y_star[0], expected, epsilon = 1e-12);
        assert!(matches!(arm_to_contrast(&s, 2, ZeroCellPolicy::Error), Err(CnmaError::ArmOutOfRange { .. })));
    }

    #[test]
    fn three_arm_contrasts_are_consistent() {
        let mut dict = ComponentDict::new();
        let t: Vec<_> = ["U", "E+R", "E+C+R"].iter().map(|l| parse_treatment(l, "+", &mut dict).unwrap()).collect();
        let s = Study::new(
            "23",
            vec![
                ArmRecord::new(t[0].clone(), 12, 80),
                ArmRecord::new(t[1].clone(), 7, 75),
                ArmRecord::new(t[2].clone(), 5, 77),
            ],
        )
        .unwrap();
        let b = arm_to_contrast(&s, 0, ZeroCellPolicy::Error).unwrap();
        let direct = arm_to_contrast(&s.with_first_arm(1), 0, ZeroCellPolicy::Error).unwrap();
        // with arm 2 first the order of the remaining arms is (1, 3)
        assert_abs_diff_eq!(b.y_star[1] - b.y_star[0], direct.y_star[1], epsilon = 1e-12);
        assert!(b.se_baseline.powi(2) < b.se[0].powi(2));
    }

    proptest! {
        #[test]
        fn swapping_arms_negates_log_odds_ratio(r1 in 1u64..99, r2 in 1u64..99, n1 in 100u64..300, n2 in 100u64..300) {
            let mut dict = ComponentDict::new();
            let s = two_arm(&mut dict, "p", "X", "Y", (r1, r2), (n1, n2));
            let fwd = arm_to_contrast(&s, 0, ZeroCellPolicy::Error).unwrap();
            let rev = arm_to_contrast(&s, 1, ZeroCellPolicy::Error).unwrap();
            prop_assert!((fwd.y_star[0] + rev.y_star[0]).abs() < 1e-12);
            prop_assert!((fwd.se[0] - rev.se[0]).abs() < 1e-12);
        }

        #[test]
        fn canonical_labels_round_trip(mask in 1u8..32) {
            let mut dict = ComponentDict::from_names(["A", "B", "C", "D", "E"]);
            let comps: Vec<usize> = (0..5).filter(|i| mask & (1 << i) != 0).collect();
            let t = Treatment::from_components("", comps);
            let label = format_treatment(&t, &dict, "+").unwrap();
            let back = parse_treatment(&label, "+", &mut dict).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(format_treatment(&back, &dict, "+").unwrap(), label);
        }
    }
}
