//! Part-to-word matching by entropic optimal transport.
//!
//! The ground cost between a fused part feature and a word vector is
//! `1 - cos`. Marginals are uniform. The transport plan comes from
//! log-domain Sinkhorn iterations and is treated as a constant when the score
//! is differentiated.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const NORM_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Weight of the similarity term in the matching loss.
    pub lambda: f64,
    /// Weight of the transport loss against the pooled cosine loss.
    pub alpha: f64,
    /// Entropic regularisation strength.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Largest tolerated marginal violation.
    pub tolerance: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            lambda: 1.0,
            alpha: 0.5,
            epsilon: 0.05,
            max_iters: 200,
            tolerance: 1e-6,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_iters == 0 || !(self.tolerance > 0.0) {
            return Err(Error::Config("max_iters and tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostRule {
    OneMinusCosine,
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    values: Tensor,
    rule: CostRule,
}

impl CostMatrix {
    pub fn new(values: Tensor, rule: CostRule) -> Result<Self> {
        if !values.is_matrix() {
            return Err(Error::shape("cost_matrix", format!("{:?}", values.shape())));
        }
        if rule == CostRule::OneMinusCosine
            && values.data().iter().any(|&v| !(-1e-12..=2.0 + 1e-12).contains(&v))
        {
            return Err(Error::InvalidArgument("one-minus-cosine cost outside [0, 2]".into()));
        }
        Ok(CostMatrix { values, rule })
    }

    /// `1 - sim`, elementwise.
    pub fn from_similarity(sim: &Tensor) -> Result<Self> {
        Self::new(sim.map(|s| 1.0 - s), CostRule::OneMinusCosine)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn rule(&self) -> CostRule {
        self.rule
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub plan: Tensor,
    pub row_marginals: Vec<f64>,
    pub col_marginals: Vec<f64>,
    /// Largest absolute marginal violation at exit.
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl TransportPlan {
    /// `<plan, m>` for a matrix of the same shape.
    pub fn inner(&self, m: &Tensor) -> f64 {
        self.plan
            .data()
            .iter()
            .zip(m.data())
            .fold(0.0, |s, (p, c)| s + p * c)
    }

    pub fn mass(&self) -> f64 {
        self.plan.sum()
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Row-wise cosine similarity between `a` (n x D) and `b` (m x D).
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.is_matrix() || !b.is_matrix() || a.cols() != b.cols() {
        return Err(Error::shape("cosine_matrix", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let norms = |t: &Tensor| -> Vec<f64> {
        (0..t.rows())
            .map(|r| t.row_slice(r).iter().fold(0.0, |s, &v| s + v * v).sqrt().max(NORM_CLAMP))
            .collect()
    };
    let (na, nb) = (norms(a), norms(b));
    let mut out = Vec::with_capacity(a.rows() * b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let d = a
                .row_slice(i)
                .iter()
                .zip(b.row_slice(j))
                .fold(0.0, |s, (x, y)| s + x * y);
            out.push((d / (na[i] * nb[j])).clamp(-1.0, 1.0));
        }
    }
    Tensor::matrix(a.rows(), b.rows(), out)
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.fold(0.0, |s, v| s + (v - m).exp()).ln()
}

/// Sinkhorn sweeps before switching to Newton steps.
const WARM_SWEEPS: usize = 8;
const MAX_HALVINGS: usize = 40;

/// Row potentials that make every row sum exact for column potentials `g`.
fn row_potentials(cd: &[f64], m: usize, log_r: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    log_r
        .iter()
        .enumerate()
        .map(|(i, &lr)| {
            let row = &cd[i * m..(i + 1) * m];
            eps * lr - eps * log_sum_exp(row.iter().zip(g).map(|(&cij, &gj)| (gj - cij) / eps))
        })
        .collect()
}

fn plan_entries(cd: &[f64], m: usize, f: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len() * m);
    for (i, fi) in f.iter().enumerate() {
        for j in 0..m {
            out.push(((fi + g[j] - cd[i * m + j]) / eps).exp());
        }
    }
    out
}

/// Largest absolute deviation of the plan's row and column sums from `r`, `c`.
fn marginal_violation(p: &[f64], r: &[f64], c: &[f64]) -> f64 {
    let m = c.len();
    let mut worst: f64 = 0.0;
    for (i, ri) in r.iter().enumerate() {
        worst = worst.max((p[i * m..(i + 1) * m].iter().sum::<f64>() - ri).abs());
    }
    for (j, cj) in c.iter().enumerate() {
        worst = worst.max(((0..r.len()).map(|i| p[i * m + j]).sum::<f64>() - cj).abs());
    }
    worst
}

/// Dual objective with the row potentials eliminated.
fn semi_dual(f: &[f64], g: &[f64], r: &[f64], c: &[f64]) -> f64 {
    f.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() + g.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&x, &y| a[x * n + k].abs().total_cmp(&a[y * n + k].abs()))?;
        if !(a[piv * n + k].abs() > 1e-300) {
            return None;
        }
        if piv != k {
            for j in 0..n {
                a.swap(k * n + j, piv * n + j);
            }
            b.swap(k, piv);
        }
        for i in k + 1..n {
            let factor = a[i * n + k] / a[k * n + k];
            for j in k..n {
                a[i * n + j] -= factor * a[k * n + j];
            }
            b[i] -= factor * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let tail: f64 = (k + 1..n).map(|j| a[k * n + j] * x[j]).sum();
        x[k] = (b[k] - tail) / a[k * n + k];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Damped Newton step on the column potentials, last one held fixed.
/// Returns `None` if the system is singular or no ascent is found.
fn newton_step(cd: &[f64], r: &[f64], c: &[f64], log_r: &[f64], g: &[f64], eps: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (r.len(), c.len());
    let f = row_potentials(cd, m, log_r, g, eps);
    let p = plan_entries(cd, m, &f, g, eps);
    let col: Vec<f64> = (0..m).map(|j| (0..n).map(|i| p[i * m + j]).sum()).collect();
    let k = m - 1;
    // diag(col) - sum_i p_i p_i^T / r_i, restricted to the free coordinates.
    let mut h = vec![0.0; k * k];
    for a in 0..k {
        h[a * k + a] = col[a];
    }
    for i in 0..n {
        let row = &p[i * m..i * m + k];
        for a in 0..k {
            for b in 0..k {
                h[a * k + b] -= row[a] * row[b] / r[i];
            }
        }
    }
    let grad: Vec<f64> = (0..k).map(|a| c[a] - col[a]).collect();
    let dir = solve(h, grad.iter().map(|x| eps * x).collect())?;
    let slope: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
    if !(slope > 0.0) {
        return None;
    }
    let base = semi_dual(&f, g, r, c);
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let mut trial = g.to_vec();
        for a in 0..k {
            trial[a] += t * dir[a];
        }
        let tf = row_potentials(cd, m, log_r, &trial, eps);
        if semi_dual(&tf, &trial, r, c) >= base + 1e-4 * t * slope {
            return Some((tf, trial));
        }
        t *= 0.5;
    }
    None
}

/// Entropic optimal transport in the log domain.
///
/// A few Sinkhorn sweeps warm-start damped Newton iterations on the column
/// potentials, falling back to a sweep whenever a Newton step fails. Each
/// sweep or step counts as one iteration. Non-convergence within `max_iters`
/// is reported through [`TransportPlan::converged`], not as an error.
pub fn sinkhorn_plan(cost: &CostMatrix, r: &[f64], c: &[f64], cfg: &MatchConfig) -> Result<TransportPlan> {
    let cm = cost.values();
    let (n, m) = (cm.rows(), cm.cols());
    if r.len() != n || c.len() != m {
        return Err(Error::shape(
            "sinkhorn",
            format!("cost {n}x{m} with marginals {} and {}", r.len(), c.len()),
        ));
    }
    for (name, marg) in [("row", r), ("column", c)] {
        if marg.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} marginals must be strictly positive")));
        }
        let total: f64 = marg.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("{name} marginals sum to {total}, not 1")));
        }
    }
    if cm.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite transport cost".into()));
    }
    let eps = cfg.epsilon;
    let cd = cm.data();
    let log_r: Vec<f64> = r.iter().map(|x| x.ln()).collect();
    let log_c: Vec<f64> = c.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut violation = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let newton = if iterations > WARM_SWEEPS && m > 1 {
            newton_step(cd, r, c, &log_r, &g, eps)
        } else {
            None
        };
        match newton {
            Some((nf, ng)) => {
                f = nf;
                g = ng;
            }
            None => {
                f = row_potentials(cd, m, &log_r, &g, eps);
                for j in 0..m {
                    g[j] = eps * log_c[j] - eps * log_sum_exp((0..n).map(|i| (f[i] - cd[i * m + j]) / eps));
                }
            }
        }
        violation = marginal_violation(&plan_entries(cd, m, &f, &g, eps), r, c);
        if violation < cfg.tolerance {
            break;
        }
    }
    let plan = Tensor::matrix(n, m, plan_entries(cd, m, &f, &g, eps))
        .map_err(|_| Error::Numeric("non-finite transport plan".into()))?;
    Ok(TransportPlan {
        plan,
        row_marginals: r.to_vec(),
        col_marginals: c.to_vec(),
        violation,
        iterations,
        converged: violation < cfg.tolerance,
    })
}

/// Matching loss between one shape's fused part features and one caption's
/// word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Transport cost `<plan, 1 - sim>`, entropy excluded.
    pub emd: f64,
    /// `sum_ij sim_ij * plan_ij`.
    pub sim_term: f64,
    /// `emd - lambda * sim_term`.
    pub loss: f64,
    /// `-loss`; larger means a better match.
    pub score: f64,
    pub plan: TransportPlan,
}

pub fn matching_score(fused: &Tensor, text: &Tensor, cfg: &MatchConfig) -> Result<MatchResult> {
    let sim = cosine_matrix(fused, text)?;
    match_from_similarity(&sim, cfg)
}

pub(crate) fn match_from_similarity(sim: &Tensor, cfg: &MatchConfig) -> Result<MatchResult> {
    let cost = CostMatrix::from_similarity(sim)?;
    let plan = sinkhorn_plan(&cost, &uniform(sim.rows()), &uniform(sim.cols()), cfg)?;
    let emd = plan.inner(cost.values());
    let sim_term = plan.inner(sim);
    let loss = emd - cfg.lambda * sim_term;
    Ok(MatchResult {
        emd,
        sim_term,
        loss,
        score: -loss,
        plan,
    })
}

/// `alpha * l_emd + (1 - alpha) * l_cos`.
pub fn combined_loss(l_emd: f64, l_cos: f64, cfg: &MatchConfig) -> f64 {
    cfg.alpha * l_emd + (1.0 - cfg.alpha) * l_cos
}

/// Transport plans for every (shape, caption) pair of a batch, row-major by shape.
#[derive(Clone, Debug)]
pub struct PlanTable {
    pub shapes: usize,
    pub captions: usize,
    pub plans: Vec<Tensor>,
}

impl PlanTable {
    pub fn get(&self, i: usize, j: usize) -> &Tensor {
        &self.plans[i * self.captions + j]
    }
}

/// Matching-score matrix (shapes x captions) recorded on `tape`.
///
/// Entry `(i, j)` is `-(emd_ij - lambda * sim_term_ij)`. When `frozen` is
/// `None` the plans are computed from the current values and returned;
/// otherwise the given plans are reused.
pub fn score_matrix_on_tape(
    tape: &mut Tape,
    fused: &[Var],
    texts: &[Var],
    cfg: &MatchConfig,
    frozen: Option<&PlanTable>,
) -> Result<(Var, PlanTable)> {
    let (b_s, b_t) = (fused.len(), texts.len());
    if b_s == 0 || b_t == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let part_counts: Vec<usize> = fused.iter().map(|&v| tape.value(v).rows()).collect();
    let word_counts: Vec<usize> = texts.iter().map(|&v| tape.value(v).rows()).collect();
    let (total_p, total_w) = (part_counts.iter().sum::<usize>(), word_counts.iter().sum::<usize>());
    let f_all = tape.concat_rows(fused)?;
    let t_all = tape.concat_rows(texts)?;
    let f_n = tape.l2_normalize_rows(f_all)?;
    let t_n = tape.l2_normalize_rows(t_all)?;
    let t_nt = tape.transpose(t_n)?;
    let sim = tape.matmul(f_n, t_nt)?;

    let offsets = |counts: &[usize]| -> Vec<usize> {
        counts
            .iter()
            .scan(0, |acc, &c| {
                let o = *acc;
                *acc += c;
                Some(o)
            })
            .collect()
    };
    let (p_off, w_off) = (offsets(&part_counts), offsets(&word_counts));

    let table = match frozen {
        Some(t) => {
            if t.shapes != b_s || t.captions != b_t {
                return Err(Error::shape("score_matrix", "frozen plan table does not match batch"));
            }
            t.clone()
        }
        None => {
            let sv = tape.value(sim);
            let mut plans = Vec::with_capacity(b_s * b_t);
            for i in 0..b_s {
                for j in 0..b_t {
                    let mut block = Vec::with_capacity(part_counts[i] * word_counts[j]);
                    for r in 0..part_counts[i] {
                        let row = sv.row_slice(p_off[i] + r);
                        block.extend_from_slice(&row[w_off[j]..w_off[j] + word_counts[j]]);
                    }
                    let s = Tensor::matrix(part_counts[i], word_counts[j], block)?;
                    plans.push(match_from_similarity(&s, cfg)?.plan.plan);
                }
            }
            PlanTable {
                shapes: b_s,
                captions: b_t,
                plans,
            }
        }
    };

    let mut weights = vec![0.0; total_p * total_w];
    let mut mass = vec![0.0; b_s * b_t];
    for i in 0..b_s {
        for j in 0..b_t {
            let p = table.get(i, j);
            for r in 0..part_counts[i] {
                for c in 0..word_counts[j] {
                    weights[(p_off[i] + r) * total_w + w_off[j] + c] = p.at(r, c);
                }
            }
            mass[i * b_t + j] = p.sum();
        }
    }
    let mut row_sel = vec![0.0; b_s * total_p];
    for i in 0..b_s {
        for r in 0..part_counts[i] {
            row_sel[i * total_p + p_off[i] + r] = 1.0;
        }
    }
    let mut col_sel = vec![0.0; total_w * b_t];
    for j in 0..b_t {
        for c in 0..word_counts[j] {
            col_sel[(w_off[j] + c) * b_t + j] = 1.0;
        }
    }
    let w = tape.constant(Tensor::matrix(total_p, total_w, weights)?);
    let rs = tape.constant(Tensor::matrix(b_s, total_p, row_sel)?);
    let cs = tape.constant(Tensor::matrix(total_w, b_t, col_sel)?);
    let mass = tape.constant(Tensor::matrix(b_s, b_t, mass)?);

    let weighted = tape.mul(sim, w)?;
    let left = tape.matmul(rs, weighted)?;
    let sim_term = tape.matmul(left, cs)?;
    // emd = mass - sim_term; loss = emd - lambda * sim_term; score = -loss.
    let emd = tape.sub(mass, sim_term)?;
    let scaled = tape.scale(sim_term, cfg.lambda);
    let loss = tape.sub(emd, scaled)?;
    let score = tape.scale(loss, -1.0);
    Ok((score, table))
}

/// Cosine similarity of mean-pooled shape features against mean-pooled word
/// vectors (shapes x captions), recorded on `tape`.
pub fn pooled_cosine_on_tape(tape: &mut Tape, fused: &[Var], texts: &[Var]) -> Result<Var> {
    let pool = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let mut rows = Vec::with_capacity(vars.len());
        for &v in vars {
            let n = tape.value(v).rows();
            let avg = tape.constant(Tensor::matrix(1, n, vec![1.0 / n as f64; n])?);
            rows.push(tape.matmul(avg, v)?);
        }
        let all = tape.concat_rows(&rows)?;
        tape.l2_normalize_rows(all)
    };
    let f = pool(tape, fused)?;
    let t = pool(tape, texts)?;
    let tt = tape.transpose(t)?;
    tape.matmul(f, tt)
}

/// Mean-pooled cosine similarity, values only.
pub fn pooled_cosine(fused: &Tensor, text: &Tensor) -> Result<f64> {
    let mean_row = |t: &Tensor| -> Result<Tensor> {
        let n = t.rows() as f64;
        let d = t.cols();
        let mut acc = vec![0.0; d];
        for r in 0..t.rows() {
            for (a, &v) in acc.iter_mut().zip(t.row_slice(r)) {
                *a += v;
            }
        }
        Tensor::row(acc.into_iter().map(|v| v / n).collect())
    };
    Ok(cosine_matrix(&mean_row(fused)?, &mean_row(text)?)?.item())
}
