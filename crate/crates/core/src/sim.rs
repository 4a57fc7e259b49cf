//! Monte Carlo comparison of the plain and EL-weighted estimators in the
//! two-equation model
//!
//! ```text
//! y1 = λ1 x2 + ε1
//! y2 = β y1 + λ3 x1 + λ2 x2 + ε2
//! ```
//!
//! with exponential covariates and scale-mixture normal errors.
//!
//! Replication `r` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `r`, so results do not depend on scheduling or thread count.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{SideInfoKind, SideInfoSpec};
use crate::fit::{fit_el_from, fit_plain, DiscrepancyKind};
use crate::sem::{DataMatrix, ModelMatrices, SemParams, SemSpec};
use crate::{Error, Result};

/// Studies with a larger share of skipped replications are rejected.
pub const MAX_SKIP_RATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "one")]
    pub lambda1: f64,
    #[serde(default = "minus_one")]
    pub lambda2: f64,
    #[serde(default = "half")]
    pub lambda3: f64,
    #[serde(default = "one")]
    pub beta: f64,
    /// Scale of each error coordinate: `ε_i = √ψ_i · mixture draw`.
    #[serde(default = "unit_pair")]
    pub psi: [f64; 2],
}

fn one() -> f64 {
    1.0
}

fn minus_one() -> f64 {
    -1.0
}

fn half() -> f64 {
    0.5
}

fn unit_pair() -> [f64; 2] {
    [1.0, 1.0]
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { lambda1: 1.0, lambda2: -1.0, lambda3: 0.5, beta: 1.0, psi: [1.0, 1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    /// Independent marginals; the only variant implemented.
    #[default]
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum XDist {
    /// Exponential marginals with means (scales) `gamma1`, `gamma2`.
    Biexp {
        gamma1: f64,
        gamma2: f64,
        #[serde(default)]
        dependence: Dependence,
    },
}

impl XDist {
    pub fn scales(&self) -> [f64; 2] {
        match self {
            XDist::Biexp { gamma1, gamma2, .. } => [*gamma1, *gamma2],
        }
    }

    pub fn medians(&self) -> Vec<f64> {
        self.scales().iter().map(|g| g * std::f64::consts::LN_2).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsDist {
    /// Mixture of `N(0, variances[k] I₂)` with probabilities `weights[k]`.
    NormalMixture { weights: Vec<f64>, variances: Vec<f64> },
}

impl Default for EpsDist {
    fn default() -> Self {
        EpsDist::NormalMixture { weights: vec![0.9, 0.1], variances: vec![1.0, 5.0] }
    }
}

impl EpsDist {
    pub fn variance(&self) -> f64 {
        match self {
            EpsDist::NormalMixture { weights, variances } => weights.iter().zip(variances).map(|(w, v)| w * v).sum(),
        }
    }
}

fn default_report_params() -> Vec<String> {
    vec!["lambda1".into(), "lambda2".into(), "lambda3".into()]
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    /// Label used in the report; derived from the side information when absent.
    #[serde(default)]
    pub scenario: Option<String>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    pub x_dist: XDist,
    #[serde(default)]
    pub eps_dist: EpsDist,
    pub side: SideInfoSpec,
    #[serde(default)]
    pub discrepancy: DiscrepancyKind,
    #[serde(default)]
    pub fix_beta: bool,
    #[serde(default = "default_report_params")]
    pub report_params: Vec<String>,
}

impl McConfig {
    /// Known-medians design with `X ~ biexp(γ₁, γ₂)`.
    pub fn medians_design(n: usize, reps: usize, seed: u64, gamma1: f64, gamma2: f64) -> Self {
        let x_dist = XDist::Biexp { gamma1, gamma2, dependence: Dependence::Independent };
        McConfig {
            scenario: None,
            n,
            reps,
            seed,
            model: ModelConfig::default(),
            side: SideInfoSpec::medians(x_dist.medians()),
            x_dist,
            eps_dist: EpsDist::default(),
            discrepancy: DiscrepancyKind::Ml,
            fix_beta: false,
            report_params: default_report_params(),
        }
    }

    /// Independence design with `X ~ biexp(1, 3)` and basis size `m`.
    pub fn independence_design(n: usize, reps: usize, seed: u64, m: usize) -> Self {
        let mut cfg = Self::medians_design(n, reps, seed, 1.0, 3.0);
        cfg.side = SideInfoSpec::independence(m);
        cfg
    }

    pub fn from_json(text: &str) -> Result<Vec<McConfig>> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let configs = if value.is_array() {
            serde_json::from_value::<Vec<McConfig>>(value)
        } else {
            serde_json::from_value::<McConfig>(value).map(|c| vec![c])
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        for c in &configs {
            c.validate()?;
        }
        Ok(configs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.n <= 4 {
            return bad(format!("n = {} must exceed p = 4", self.n));
        }
        let [g1, g2] = self.x_dist.scales();
        if !(g1 > 0.0 && g2 > 0.0 && g1.is_finite() && g2.is_finite()) {
            return bad("exponential scales must be positive".into());
        }
        let EpsDist::NormalMixture { weights, variances } = &self.eps_dist;
        if weights.is_empty() || weights.len() != variances.len() {
            return bad("mixture weights and variances must have equal nonzero length".into());
        }
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("mixture weights must lie in [0, 1] and sum to 1".into());
        }
        if variances.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return bad("mixture variances must be nonnegative".into());
        }
        if self.model.psi.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("psi must be positive".into());
        }
        let spec = self.spec();
        for p in &self.report_params {
            if spec.index_of(p).is_none() {
                return bad(format!("unknown parameter {p:?}; model has {:?}", spec.labels()));
            }
        }
        self.side_info().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.side.kind == SideInfoKind::Independence && self.side.m * self.side.m + 1 >= self.n {
            return bad(format!("m^2 = {} too large for n = {}", self.side.m * self.side.m, self.n));
        }
        Ok(())
    }

    pub fn spec(&self) -> SemSpec {
        SemSpec::two_equation(self.fix_beta)
    }

    /// Side information with known medians filled in from the generator.
    pub fn side_info(&self) -> SideInfoSpec {
        let mut side = self.side.clone();
        if side.kind == SideInfoKind::Medians && side.medians.is_none() {
            side.medians = Some(self.x_dist.medians());
        }
        side
    }

    pub fn scenario_label(&self) -> String {
        if let Some(s) = &self.scenario {
            return s.clone();
        }
        match self.side.kind {
            SideInfoKind::Medians => {
                let [g1, g2] = self.x_dist.scales();
                format!("({g1},{g2})")
            }
            SideInfoKind::Independence => format!("m={}", self.side.m),
        }
    }

    /// Population values of all free parameters.
    pub fn true_params(&self) -> SemParams {
        let mut m = ModelMatrices::zeros(2, 2);
        m.b[(1, 0)] = self.model.beta;
        m.gamma[(0, 1)] = self.model.lambda1;
        m.gamma[(1, 1)] = self.model.lambda2;
        m.gamma[(1, 0)] = self.model.lambda3;
        let ev = self.eps_dist.variance();
        m.psi = DVector::from_iterator(2, self.model.psi.iter().map(|p| p * ev));
        let [g1, g2] = self.x_dist.scales();
        m.phi_chol = DMatrix::from_diagonal(&DVector::from_column_slice(&[g1, g2]));
        self.spec().pack(&m)
    }
}

/// `n × 2` draws from the two-dimensional normal scale mixture.
pub fn gen_normal_mixture<R: Rng + ?Sized>(n: usize, weights: &[f64], variances: &[f64], rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, 2);
    for j in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = k;
                break;
            }
        }
        let sd = variances[comp].sqrt();
        for i in 0..2 {
            let z: f64 = StandardNormal.sample(rng);
            out[(j, i)] = sd * z;
        }
    }
    out
}

/// `n × 2` independent exponentials with means `gamma1`, `gamma2`.
pub fn gen_biexp<R: Rng + ?Sized>(n: usize, gamma1: f64, gamma2: f64, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, 2);
    for j in 0..n {
        for (i, g) in [gamma1, gamma2].into_iter().enumerate() {
            let e: f64 = Exp1.sample(rng);
            out[(j, i)] = g * e;
        }
    }
    out
}

pub fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// One sample of size `n` from the configured model.
pub fn generate<R: Rng + ?Sized>(cfg: &McConfig, n: usize, rng: &mut R) -> DataMatrix {
    let [g1, g2] = cfg.x_dist.scales();
    let x = gen_biexp(n, g1, g2, rng);
    let EpsDist::NormalMixture { weights, variances } = &cfg.eps_dist;
    let eps = gen_normal_mixture(n, weights, variances, rng);
    let m = &cfg.model;
    let mut y = DMatrix::zeros(n, 2);
    for j in 0..n {
        let y1 = m.lambda1 * x[(j, 1)] + m.psi[0].sqrt() * eps[(j, 0)];
        y[(j, 0)] = y1;
        y[(j, 1)] = m.beta * y1 + m.lambda3 * x[(j, 0)] + m.lambda2 * x[(j, 1)] + m.psi[1].sqrt() * eps[(j, 1)];
    }
    DataMatrix::from_blocks(&y, &x).expect("n > p checked by config validation")
}

/// Estimates from one replication; `None` marks a failed fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub rep: usize,
    pub plain: Option<DVector<f64>>,
    pub el: Option<DVector<f64>>,
    pub skipped_reason: Option<String>,
}

impl RepRecord {
    pub fn used(&self) -> bool {
        self.plain.is_some() && self.el.is_some()
    }
}

pub fn run_replication(cfg: &McConfig, rep: usize) -> RepRecord {
    let mut rng = rep_rng(cfg.seed, rep);
    let data = generate(cfg, cfg.n, &mut rng);
    let spec = cfg.spec();
    let side = cfg.side_info();
    let mut rec = RepRecord { rep, plain: None, el: None, skipped_reason: None };
    let stage1 = match fit_plain(&data, &spec, &cfg.discrepancy) {
        Ok(f) => f,
        Err(e) => {
            rec.skipped_reason = Some(format!("plain fit: {e}"));
            return rec;
        }
    };
    rec.plain = Some(stage1.theta_hat.theta.clone());
    match fit_el_from(&data, &spec, &cfg.discrepancy, &side, stage1) {
        Ok(f) if f.is_skipped() => rec.skipped_reason = f.skipped_reason,
        Ok(f) => rec.el = Some(f.theta_hat.theta),
        Err(e) => rec.skipped_reason = Some(format!("EL fit: {e}")),
    }
    rec
}

/// Summary statistics for one parameter in one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub param: String,
    pub mean_bias_plain: f64,
    pub mean_bias_el: f64,
    pub median_bias_plain: f64,
    pub median_bias_el: f64,
    pub mean_var_plain: f64,
    pub mean_var_el: f64,
    pub r1: f64,
    pub median_var_plain: f64,
    pub median_var_el: f64,
    pub r2: f64,
}

pub const REPORT_HEADER: [&str; 12] = [
    "scenario",
    "param",
    "mean_bias_plain",
    "mean_bias_el",
    "median_bias_plain",
    "median_bias_el",
    "mean_var_plain",
    "mean_var_el",
    "r1",
    "median_var_plain",
    "median_var_el",
    "r2",
];

impl ReportRow {
    fn values(&self) -> [f64; 10] {
        [
            self.mean_bias_plain,
            self.mean_bias_el,
            self.median_bias_plain,
            self.median_bias_el,
            self.mean_var_plain,
            self.mean_var_el,
            self.r1,
            self.median_var_plain,
            self.median_var_el,
            self.r2,
        ]
    }

    fn from_values(scenario: String, param: String, v: [f64; 10]) -> Self {
        ReportRow {
            scenario,
            param,
            mean_bias_plain: v[0],
            mean_bias_el: v[1],
            median_bias_plain: v[2],
            median_bias_el: v[3],
            mean_var_plain: v[4],
            mean_var_el: v[5],
            r1: v[6],
            median_var_plain: v[7],
            median_var_el: v[8],
            r2: v[9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct McReport {
    pub rows: Vec<ReportRow>,
}

impl McReport {
    pub fn row(&self, scenario: &str, param: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.param == param)
    }

    pub fn extend(&mut self, other: McReport) {
        self.rows.extend(other.rows);
    }
}

/// Report plus the per-replication records behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub config: McConfig,
    pub report: McReport,
    pub records: Vec<RepRecord>,
    pub skipped: usize,
}

impl StudyResult {
    pub fn skip_rate(&self) -> f64 {
        self.skipped as f64 / self.records.len() as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Per-replication variance contributions `R/(R−1)(θ̂_r − θ̄)²`; their mean is
/// the sample variance. Empty when `R < 2`.
fn variance_terms(est: &[f64]) -> Vec<f64> {
    let r = est.len();
    if r < 2 {
        return Vec::new();
    }
    let m = mean(est);
    let scale = r as f64 / (r - 1) as f64;
    est.iter().map(|e| scale * (e - m).powi(2)).collect()
}

fn mean_or_nan(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        mean(v)
    }
}

/// Aggregates replication records in `rep` order.
pub fn summarize(cfg: &McConfig, records: &[RepRecord]) -> McReport {
    let spec = cfg.spec();
    let truth = cfg.true_params();
    let used: Vec<&RepRecord> = records.iter().filter(|r| r.used()).collect();
    let scenario = cfg.scenario_label();
    let rows = cfg
        .report_params
        .iter()
        .map(|param| {
            let k = spec.index_of(param).expect("validated parameter name");
            let t = truth.theta[k];
            let plain: Vec<f64> = used.iter().map(|r| r.plain.as_ref().unwrap()[k]).collect();
            let el: Vec<f64> = used.iter().map(|r| r.el.as_ref().unwrap()[k]).collect();
            let bias = |v: &[f64]| v.iter().map(|e| e - t).collect::<Vec<_>>();
            let (bp, be) = (bias(&plain), bias(&el));
            let (vp, ve) = (variance_terms(&plain), variance_terms(&el));
            let (mvp, mve) = (mean_or_nan(&vp), mean_or_nan(&ve));
            let (dvp, dve) = (median(&vp), median(&ve));
            ReportRow {
                scenario: scenario.clone(),
                param: param.clone(),
                mean_bias_plain: mean_or_nan(&bp),
                mean_bias_el: mean_or_nan(&be),
                median_bias_plain: median(&bp),
                median_bias_el: median(&be),
                mean_var_plain: mvp,
                mean_var_el: mve,
                r1: mve / mvp,
                median_var_plain: dvp,
                median_var_el: dve,
                r2: dve / dvp,
            }
        })
        .collect();
    McReport { rows }
}

/// Runs all replications on a pool of `threads` workers (0 = rayon default).
pub fn run_study(cfg: &McConfig, threads: usize) -> Result<StudyResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records: Vec<RepRecord> =
        pool.install(|| (0..cfg.reps).into_par_iter().map(|r| run_replication(cfg, r)).collect());
    let skipped = records.iter().filter(|r| !r.used()).count();
    let skip_rate = skipped as f64 / cfg.reps as f64;
    if skipped == cfg.reps || skip_rate > MAX_SKIP_RATE {
        return Err(Error::StudyDegenerate { skip_rate });
    }
    let report = summarize(cfg, &records);
    Ok(StudyResult { config: cfg.clone(), report, records, skipped })
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

fn parse_num(s: &str) -> Result<f64> {
    let s = s.trim();
    if s == "NA" {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| Error::InvalidInput(format!("not a number: {s:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

pub fn render_report(report: &McReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_csv(report: &McReport) -> String {
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(REPORT_HEADER).expect("in-memory write");
    for row in &report.rows {
        let mut rec = vec![row.scenario.clone(), row.param.clone()];
        rec.extend(row.values().iter().map(|&v| fmt_num(v)));
        wr.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(wr.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn render_markdown(report: &McReport) -> String {
    let mut out = String::new();
    let heads = ["scenario", "param", "b̄", "b̃̄", "m(b)", "m(b̃)", "v̄", "ṽ̄", "r1", "m(v)", "m(ṽ)", "r2"];
    writeln!(out, "| {} |", heads.join(" | ")).unwrap();
    writeln!(out, "|{}", "---|".repeat(heads.len())).unwrap();
    for row in &report.rows {
        let cells: Vec<String> =
            row.values().iter().map(|&v| if v.is_nan() { "NA".to_string() } else { format!("{v:.4}") }).collect();
        writeln!(out, "| {} | {} | {} |", row.scenario, row.param, cells.join(" | ")).unwrap();
    }
    out
}

/// Parses the CSV produced by [`render_report`].
pub fn parse_report_csv(text: &str) -> Result<McReport> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header != REPORT_HEADER {
        return Err(Error::InvalidInput(format!("unexpected report header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let mut v = [0.0; 10];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = parse_num(&rec[k + 2])?;
        }
        rows.push(ReportRow::from_values(rec[0].to_string(), rec[1].to_string(), v));
    }
    Ok(McReport { rows })
}

/// One row per replication, estimator and reported parameter.
pub fn render_replications(study: &StudyResult) -> String {
    let spec = study.config.spec();
    let scenario = study.config.scenario_label();
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["scenario", "rep", "estimator", "param", "estimate", "skipped_reason"]).expect("in-memory write");
    for rec in &study.records {
        for (name, est) in [("plain", &rec.plain), ("el", &rec.el)] {
            for param in spec.labels() {
                let k = spec.index_of(param).expect("label from spec");
                let value = est.as_ref().map_or(f64::NAN, |e| e[k]);
                let reason = rec.skipped_reason.clone().unwrap_or_default();
                wr.write_record([scenario.as_str(), &rec.rep.to_string(), name, param, &fmt_num(value), &reason])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(wr.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
