//! Ranking QA facts by how much their validity tells about which caption
//! describes an image.
//!
//! Model uncertainty is sampled with dropout: one draw `θ` fixes every
//! dropout mask in the VQA head and the ranker, and both predictions in a
//! sample use that same draw.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{fact_log_probs, u_matrix, BankEncoding, QaBank};
use crate::heads::{HeadKind, VqaHead};
use crate::numcore::rng::derive_seed;
use crate::numcore::{softmax_rows, DropoutSite, MaskSet, Matrix, Mode};
use crate::ranking::{Scorer, SideInputs};

/// Largest number of dropout units [`exact_joint_oracle`] will enumerate.
pub const MAX_EXACT_UNITS: usize = 12;

/// Samples folded into one accumulation block.
const BLOCK: usize = 64;

/// `P(V_i = v, C = C_k)`: row 0 is `v = true`, row 1 is `v = false`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub qa_index: usize,
    pub joint: Matrix,
    pub n_samples: usize,
    pub seed: u64,
}

impl JointTable {
    pub fn k(&self) -> usize {
        self.joint.cols()
    }

    pub fn total(&self) -> f64 {
        self.joint.sum()
    }

    /// Entries in `[0, 1]` summing to 1 within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.joint.rows() != 2 || self.joint.cols() == 0 {
            return Err(Error::shape(
                "JointTable",
                "2 x K with K >= 1",
                format!("{}x{}", self.joint.rows(), self.joint.cols()),
            ));
        }
        if let Some(v) = self.joint.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Param(format!("joint entry {v} outside [0, 1]")));
        }
        let total = self.total();
        if (total - 1.0).abs() > tol {
            return Err(Error::Param(format!("joint sums to {total}, expected 1")));
        }
        Ok(())
    }
}

/// Fact-validity and caption-choice predictions under one parameter draw.
pub trait JointPredictor {
    fn n_facts(&self) -> usize;

    fn n_captions(&self) -> usize;

    /// `(p, q)`: `p[i] = P(A_i | Q_i, I, θ)` for every fact and
    /// `q[k] = P_cap(C_k | I, θ)` over all candidates.
    fn predict(&self, mode: &Mode) -> Result<(Vec<f64>, Vec<f64>)>;

    fn dropout_sites(&self) -> Vec<DropoutSite>;
}

/// VQA head → grounded image features → ranker, for one image.
pub struct PipelinePredictor<'a> {
    pub head: &'a VqaHead,
    /// Facts whose validity is scored.
    pub facts: BankEncoding,
    /// The ranker's grounding bank, when it uses one.
    pub grounding: Option<BankEncoding>,
    pub ranker: &'a dyn Scorer,
    /// Raw image features, one column.
    pub image: Matrix,
    /// Candidate captions with their (fixed) grounded features.
    pub captions: &'a SideInputs,
}

impl<'a> PipelinePredictor<'a> {
    pub fn new(
        head: &'a VqaHead,
        facts: &QaBank,
        grounding: Option<&QaBank>,
        ranker: &'a dyn Scorer,
        image: &[f64],
        captions: &'a SideInputs,
    ) -> Result<Self> {
        if head.kind != HeadKind::Image {
            return Err(Error::Param("fact validity needs an image head".into()));
        }
        if captions.is_empty() {
            return Err(Error::Data("no candidate captions".into()));
        }
        Ok(Self {
            head,
            facts: BankEncoding::new(head, facts)?,
            grounding: grounding.map(|b| BankEncoding::new(head, b)).transpose()?,
            ranker,
            image: Matrix::column(image),
            captions,
        })
    }
}

impl JointPredictor for PipelinePredictor<'_> {
    fn n_facts(&self) -> usize {
        self.facts.len()
    }

    fn n_captions(&self) -> usize {
        self.captions.len()
    }

    fn predict(&self, mode: &Mode) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = fact_log_probs(self.head, &self.facts, &self.image, mode)?.map(f64::exp).into_vec();
        let u = match &self.grounding {
            Some(enc) => Some(u_matrix(self.head, enc, &self.image, mode)?),
            None => None,
        };
        let image = SideInputs::new(self.image.clone(), u);
        let s = self.ranker.score_matrix(&image, self.captions, mode)?;
        Ok((p, softmax_rows(&s).into_vec()))
    }

    fn dropout_sites(&self) -> Vec<DropoutSite> {
        let mut sites = self.head.dropout_sites();
        sites.extend(self.ranker.dropout_sites());
        sites
    }
}

fn check_prediction(p: &[f64], q: &[f64], n: usize, k: usize) -> Result<()> {
    if p.len() != n || q.len() != k {
        return Err(Error::shape(
            "predict",
            format!("{n} facts, {k} captions"),
            format!("{} facts, {} captions", p.len(), q.len()),
        ));
    }
    if p.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction under a dropout draw".into()));
    }
    Ok(())
}

/// Joint tables for every fact from one set of `n_samples` shared draws.
/// Sample `s` uses `Mode::Sample { seed: derive_seed(seed, s) }`.
pub fn mc_joint_all(pred: &dyn JointPredictor, n_samples: usize, seed: u64) -> Result<Vec<JointTable>> {
    if n_samples == 0 {
        return Err(Error::Param("n_samples must be at least 1".into()));
    }
    let (n, k) = (pred.n_facts(), pred.n_captions());
    if k == 0 {
        return Err(Error::Data("no candidate captions".into()));
    }
    let mut pq = Matrix::zeros(n, k);
    let mut q_sum = vec![0.0; k];
    let mut s = 0;
    while s < n_samples {
        let b = BLOCK.min(n_samples - s);
        let mut p_block = Matrix::zeros(b, n);
        let mut q_block = Matrix::zeros(b, k);
        for r in 0..b {
            let mode = Mode::Sample {
                seed: derive_seed(seed, (s + r) as u64),
            };
            let (p, q) = pred.predict(&mode)?;
            check_prediction(&p, &q, n, k)?;
            p_block.row_mut(r).copy_from_slice(&p);
            q_block.row_mut(r).copy_from_slice(&q);
            q_sum.iter_mut().zip(&q).for_each(|(a, b)| *a += b);
        }
        pq.add_assign(&p_block.t_matmul(&q_block)?)?;
        s += b;
    }
    Ok(tables_from_sums(&pq, &q_sum, 1.0 / n_samples as f64, n_samples, seed))
}

fn tables_from_sums(pq: &Matrix, q_sum: &[f64], w: f64, n_samples: usize, seed: u64) -> Vec<JointTable> {
    (0..pq.rows())
        .map(|i| {
            let mut joint = Matrix::zeros(2, q_sum.len());
            for (c, &qs) in q_sum.iter().enumerate() {
                let t = (pq[(i, c)] * w).clamp(0.0, 1.0);
                joint[(0, c)] = t;
                joint[(1, c)] = (qs * w - t).clamp(0.0, 1.0);
            }
            JointTable {
                qa_index: i,
                joint,
                n_samples,
                seed,
            }
        })
        .collect()
}

/// Monte Carlo joint for a single fact.
pub fn mc_joint(pred: &dyn JointPredictor, qa_index: usize, n_samples: usize, seed: u64) -> Result<JointTable> {
    if qa_index >= pred.n_facts() {
        return Err(Error::Param(format!(
            "qa index {qa_index} out of range for {} facts",
            pred.n_facts()
        )));
    }
    Ok(mc_joint_all(pred, n_samples, seed)?.swap_remove(qa_index))
}

/// Exact expectation over every per-unit dropout mask, weighted by its
/// Bernoulli probability. Refuses more than [`MAX_EXACT_UNITS`] units.
pub fn exact_joint_oracle(pred: &dyn JointPredictor) -> Result<Vec<JointTable>> {
    let sites = pred.dropout_sites();
    let units: usize = sites.iter().map(|s| s.units).sum();
    if units > MAX_EXACT_UNITS {
        return Err(Error::Param(format!(
            "exact enumeration supports at most {MAX_EXACT_UNITS} dropout units ({} masks), model has {units}",
            1usize << MAX_EXACT_UNITS
        )));
    }
    let (n, k) = (pred.n_facts(), pred.n_captions());
    let mut pq = Matrix::zeros(n, k);
    let mut q_sum = vec![0.0; k];
    for code in 0u64..(1u64 << units) {
        let mut set = MaskSet::new();
        let mut weight = 1.0;
        let mut bit = 0;
        for site in &sites {
            let mask: Vec<bool> = (0..site.units)
                .map(|u| {
                    let keep = code >> (bit + u) & 1 == 1;
                    weight *= if keep { site.keep_prob } else { 1.0 - site.keep_prob };
                    keep
                })
                .collect();
            bit += site.units;
            set.insert(site.id, mask);
        }
        if weight == 0.0 {
            continue;
        }
        let (p, q) = pred.predict(&Mode::Fixed(Arc::new(set)))?;
        check_prediction(&p, &q, n, k)?;
        for i in 0..n {
            for c in 0..k {
                pq[(i, c)] += weight * p[i] * q[c];
            }
        }
        q_sum.iter_mut().zip(&q).for_each(|(a, b)| *a += weight * b);
    }
    Ok(tables_from_sums(&pq, &q_sum, 1.0, 0, 0))
}

/// Where the marginals in the MI sum come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalMode {
    /// Row and column sums of the joint; MI is then non-negative.
    #[default]
    FromJoint,
    /// Caller-supplied `P(V)` (true, false) and `P(C)`.
    PointEstimate { p_v: [f64; 2], p_c: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiResult {
    pub qa_index: usize,
    pub mi_nats: f64,
    pub marginals_v: [f64; 2],
    pub marginals_c: Vec<f64>,
}

pub fn mutual_information(joint: &JointTable, mode: &MarginalMode) -> Result<MiResult> {
    joint.validate(1e-6)?;
    let j = &joint.joint;
    let (p_v, p_c) = match mode {
        MarginalMode::FromJoint => {
            let rows = j.row_sums();
            ([rows[0], rows[1]], j.col_sums())
        }
        MarginalMode::PointEstimate { p_v, p_c } => {
            if p_c.len() != j.cols() {
                return Err(Error::shape(
                    "mutual_information",
                    format!("{} caption marginals", j.cols()),
                    format!("{}", p_c.len()),
                ));
            }
            (*p_v, p_c.clone())
        }
    };
    let mut mi = 0.0;
    for (v, &pv) in p_v.iter().enumerate() {
        for (k, &pc) in p_c.iter().enumerate() {
            let pj = j[(v, k)];
            if pj == 0.0 {
                continue;
            }
            if pv <= 0.0 || pc <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "marginal is zero where the joint is {pj} (v = {}, caption {k})",
                    v == 0
                )));
            }
            mi += pj * (pj / (pv * pc)).ln();
        }
    }
    Ok(MiResult {
        qa_index: joint.qa_index,
        mi_nats: mi,
        marginals_v: p_v,
        marginals_c: p_c,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalKind {
    FromJoint,
    PointEstimate,
}

impl std::str::FromStr for MarginalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "from_joint" => Ok(MarginalKind::FromJoint),
            "point_estimate" => Ok(MarginalKind::PointEstimate),
            other => Err(Error::Param(format!(
                "unknown marginal mode {other:?} (from_joint or point_estimate)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub marginals: MarginalKind,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            seed: 0,
            marginals: MarginalKind::FromJoint,
        }
    }
}

/// Every fact with its MI, most informative first; ties by ascending index.
pub fn select_informative_qa(pred: &dyn JointPredictor, cfg: &SelectConfig) -> Result<Vec<MiResult>> {
    if pred.n_facts() == 0 {
        return Err(Error::Data("empty QA bank".into()));
    }
    let tables = mc_joint_all(pred, cfg.n_samples, cfg.seed)?;
    let literal = match cfg.marginals {
        MarginalKind::FromJoint => None,
        MarginalKind::PointEstimate => Some(pred.predict(&Mode::Infer)?),
    };
    let mut out = tables
        .iter()
        .map(|t| {
            let mode = match &literal {
                None => MarginalMode::FromJoint,
                Some((p, q)) => MarginalMode::PointEstimate {
                    p_v: [p[t.qa_index], 1.0 - p[t.qa_index]],
                    p_c: q.clone(),
                },
            };
            mutual_information(t, &mode)
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.mi_nats.total_cmp(&a.mi_nats).then(a.qa_index.cmp(&b.qa_index)));
    Ok(out)
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeMap;

    /// Fixed `(p, q)` per mask configuration.
    struct TablePredictor {
        pub sites: Vec<DropoutSite>,
        pub f: Box<dyn Fn(&BTreeMap<u32, Vec<bool>>) -> (Vec<f64>, Vec<f64>)>,
        pub n: usize,
        pub k: usize,
    }

    impl JointPredictor for TablePredictor {
        fn n_facts(&self) -> usize {
            self.n
        }

        fn n_captions(&self) -> usize {
            self.k
        }

        fn predict(&self, mode: &Mode) -> Result<(Vec<f64>, Vec<f64>)> {
            let set: MaskSet = match mode {
                Mode::Fixed(set) => (**set).clone(),
                Mode::Infer => self.sites.iter().map(|s| (s.id, vec![true; s.units])).collect(),
                _ => self
                    .sites
                    .iter()
                    .map(|s| {
                        let ones = Matrix::filled(s.units, 1, 1.0);
                        let (_, m) = crate::numcore::apply_site(&ones, s.keep_prob, mode, s.id)?;
                        Ok((s.id, m.mask))
                    })
                    .collect::<Result<_>>()?,
            };
            Ok((self.f)(&set))
        }

        fn dropout_sites(&self) -> Vec<DropoutSite> {
            self.sites.clone()
        }
    }

    fn table(j: Vec<Vec<f64>>) -> JointTable {
        JointTable {
            qa_index: 0,
            joint: Matrix::from_rows(&j),
            n_samples: 1,
            seed: 0,
        }
    }

    fn direct_mi(j: &[[f64; 3]; 2]) -> f64 {
        let pv = [j[0].iter().sum::<f64>(), j[1].iter().sum::<f64>()];
        let pc: Vec<f64> = (0..3).map(|k| j[0][k] + j[1][k]).collect();
        let mut total = 0.0;
        for v in 0..2 {
            for k in 0..3 {
                if j[v][k] > 0.0 {
                    total += j[v][k] * (j[v][k].ln() - pv[v].ln() - pc[k].ln());
                }
            }
        }
        total
    }

    fn random_joint(r: &mut crate::numcore::rng::Rng, k: usize) -> JointTable {
        let raw: Vec<f64> = (0..2 * k).map(|_| r.gen_range(0.0..1.0f64).powi(3)).collect();
        let s: f64 = raw.iter().sum();
        JointTable {
            qa_index: 0,
            joint: Matrix::from_vec(2, k, raw.iter().map(|v| v / s).collect()).unwrap(),
            n_samples: 1,
            seed: 0,
        }
    }

    /// One unit per site; `p` and `q` depend on which units survive.
    fn three_unit_predictor() -> TablePredictor {
        TablePredictor {
            sites: vec![
                DropoutSite {
                    id: 1,
                    units: 2,
                    keep_prob: 0.5,
                },
                DropoutSite {
                    id: 2,
                    units: 1,
                    keep_prob: 0.7,
                },
            ],
            f: Box::new(|m| {
                let a = m[&1][0] as u8 as f64;
                let b = m[&1][1] as u8 as f64;
                let c = m[&2][0] as u8 as f64;
                let p = vec![0.2 + 0.6 * a, 0.5, 0.1 + 0.3 * b * c];
                let w = [1.0 + 2.0 * a, 1.0 + c, 0.5 + b];
                let s: f64 = w.iter().sum();
                (p, w.iter().map(|v| v / s).collect())
            }),
            n: 3,
            k: 3,
        }
    }

    #[test]
    fn independence_gives_zero() {
        let pv = [0.3, 0.7];
        let pc = [0.2, 0.5, 0.3];
        let j = table(pv.iter().map(|a| pc.iter().map(|b| a * b).collect()).collect());
        let mi = mutual_information(&j, &MarginalMode::FromJoint).unwrap().mi_nats;
        assert!(mi.abs() <= 1e-12, "{mi}");
    }

    #[test]
    fn perfect_coupling_is_ln2() {
        let j = table(vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
        let mi = mutual_information(&j, &MarginalMode::FromJoint).unwrap().mi_nats;
        assert!((mi - 2f64.ln()).abs() < 1e-12);
        assert!((mi - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn matches_direct_summation() {
        let mut r = rng(1);
        for _ in 0..100 {
            let t = random_joint(&mut r, 3);
            let arr = [
                [t.joint[(0, 0)], t.joint[(0, 1)], t.joint[(0, 2)]],
                [t.joint[(1, 0)], t.joint[(1, 1)], t.joint[(1, 2)]],
            ];
            let mi = mutual_information(&t, &MarginalMode::FromJoint).unwrap().mi_nats;
            assert!((mi - direct_mi(&arr)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_marginal_with_mass_is_degenerate() {
        let j = table(vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
        let mode = MarginalMode::PointEstimate {
            p_v: [1.0, 0.0],
            p_c: vec![0.5, 0.5],
        };
        assert!(matches!(mutual_information(&j, &mode), Err(Error::Degenerate(_))));
        let bad = table(vec![vec![0.5, 0.0], vec![0.0, 0.4]]);
        assert!(mutual_information(&bad, &MarginalMode::FromJoint).is_err());
    }

    #[test]
    fn mi_is_bounded_by_entropies() {
        let mut r = rng(2);
        for _ in 0..200 {
            let t = random_joint(&mut r, 4);
            let res = mutual_information(&t, &MarginalMode::FromJoint).unwrap();
            let bound = entropy(&res.marginals_v).min(entropy(&res.marginals_c));
            assert!(res.mi_nats <= bound + 1e-9);
        }
    }

    #[test]
    fn deterministic_models_factorize() {
        let pred = TablePredictor {
            sites: vec![],
            f: Box::new(|_| (vec![0.3, 0.9], vec![0.6, 0.4])),
            n: 2,
            k: 2,
        };
        let tables = mc_joint_all(&pred, 7, 1).unwrap();
        for (i, p) in [0.3, 0.9].iter().enumerate() {
            for (k, q) in [0.6, 0.4].iter().enumerate() {
                assert!((tables[i].joint[(0, k)] - p * q).abs() < 1e-15);
                assert!((tables[i].joint[(1, k)] - (1.0 - p) * q).abs() < 1e-15);
            }
        }
        let exact = exact_joint_oracle(&pred).unwrap();
        assert!(exact[1].joint.max_abs_diff(&tables[1].joint) < 1e-15);
    }

    #[test]
    fn single_unit_oracle_averages_two_masks() {
        let pred = TablePredictor {
            sites: vec![DropoutSite {
                id: 5,
                units: 1,
                keep_prob: 0.5,
            }],
            f: Box::new(|m| {
                if m[&5][0] {
                    (vec![1.0], vec![1.0, 0.0])
                } else {
                    (vec![0.0], vec![0.0, 1.0])
                }
            }),
            n: 1,
            k: 2,
        };
        let t = &exact_joint_oracle(&pred).unwrap()[0];
        assert_eq!(t.joint, Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]));
    }

    #[test]
    fn oracle_refuses_large_mask_spaces() {
        let pred = TablePredictor {
            sites: vec![DropoutSite {
                id: 1,
                units: 13,
                keep_prob: 0.5,
            }],
            f: Box::new(|_| (vec![0.5], vec![1.0])),
            n: 1,
            k: 1,
        };
        let err = exact_joint_oracle(&pred).unwrap_err().to_string();
        assert!(err.contains("12"), "{err}");
    }

    #[test]
    fn monte_carlo_converges_to_exact() {
        let pred = three_unit_predictor();
        let exact = exact_joint_oracle(&pred).unwrap();
        let mc = mc_joint_all(&pred, 20_000, 3).unwrap();
        for (e, m) in exact.iter().zip(&mc) {
            assert!(e.joint.max_abs_diff(&m.joint) < 0.01);
            assert!((m.total() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn one_sample_is_rank_one() {
        let pred = three_unit_predictor();
        let t = mc_joint(&pred, 2, 1, 11).unwrap();
        let det = t.joint[(0, 0)] * t.joint[(1, 1)] - t.joint[(0, 1)] * t.joint[(1, 0)];
        assert!(det.abs() < 1e-15);
        assert!(mc_joint(&pred, 2, 0, 11).is_err());
        assert!(mc_joint(&pred, 3, 1, 11).is_err());
    }

    #[test]
    fn uninformative_fact_ranks_last_and_ranking_is_reproducible() {
        let pred = TablePredictor {
            sites: vec![DropoutSite {
                id: 1,
                units: 2,
                keep_prob: 0.5,
            }],
            f: Box::new(|m| {
                let a = m[&1][0];
                let p = vec![0.5, if a { 0.9 } else { 0.1 }, if m[&1][1] { 0.8 } else { 0.4 }];
                let q = if a { vec![0.9, 0.1] } else { vec![0.1, 0.9] };
                (p, q)
            }),
            n: 3,
            k: 2,
        };
        let cfg = SelectConfig {
            n_samples: 2000,
            seed: 4,
            marginals: MarginalKind::FromJoint,
        };
        let ranked = select_informative_qa(&pred, &cfg).unwrap();
        assert_eq!(ranked[0].qa_index, 1);
        assert_eq!(ranked[2].qa_index, 0);
        assert!(ranked[2].mi_nats.abs() < 1e-12);
        let again = select_informative_qa(&pred, &cfg).unwrap();
        assert_eq!(ranked, again);
        let literal = SelectConfig {
            marginals: MarginalKind::PointEstimate,
            ..cfg
        };
        assert_eq!(select_informative_qa(&pred, &literal).unwrap().len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn gibbs_inequality(seed in any::<u64>(), k in 1usize..8) {
            let t = random_joint(&mut rng(seed), k);
            prop_assert!(mutual_information(&t, &MarginalMode::FromJoint).unwrap().mi_nats >= -1e-12);
        }

        #[test]
        fn merging_captions_never_increases_mi(seed in any::<u64>(), k in 2usize..8) {
            let t = random_joint(&mut rng(seed), k);
            let mut merged = Matrix::zeros(2, k - 1);
            for v in 0..2 {
                for c in 0..k {
                    merged[(v, c.min(k - 2))] += t.joint[(v, c)];
                }
            }
            let coarse = JointTable { joint: merged, ..t.clone() };
            let a = mutual_information(&t, &MarginalMode::FromJoint).unwrap().mi_nats;
            let b = mutual_information(&coarse, &MarginalMode::FromJoint).unwrap().mi_nats;
            prop_assert!(b <= a + 1e-12);
        }
    }
}
