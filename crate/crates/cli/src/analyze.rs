//! Representation analysis: principal components of the task and mapping
//! representations, and cosine-similarity distributions between groups.

use anyhow::bail;

use autodiff::Array;
use metamap::config::DomainKind;

use crate::runner::TrainedRun;

/// Jacobi eigendecomposition of a symmetric matrix; returns eigenvalues in
/// descending order with matching eigenvectors (rows).
pub fn symmetric_eigen(mat: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = mat.len();
    let mut a: Vec<Vec<f64>> = mat.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let eigvecs: Vec<Vec<f64>> =
        order.iter().map(|&c| (0..n).map(|r| v[r][c]).collect()).collect();
    (eigvals, eigvecs)
}

pub struct Analysis {
    /// (task id, group, projection onto the top components)
    pub projections: Vec<(String, &'static str, Vec<f64>)>,
    /// (group pair, count, mean, std, min, max) of pairwise cosine
    /// similarities.
    pub cosine_groups: Vec<(String, usize, f64, f64, f64, f64)>,
    pub eigenvalues: Vec<f64>,
    /// Set when the covariance rank forced fewer components than requested.
    pub reduced_k_warning: Option<String>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb + 1e-300)
}

fn group_stats(vals: &[f64]) -> (usize, f64, f64, f64, f64) {
    let n = vals.len();
    if n == 0 {
        return (0, 0.0, 0.0, 0.0, 0.0);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (n, mean, var.sqrt(), min, max)
}

/// Gather (id, group, representation) rows for a trained run.
fn collect_reps(run: &mut TrainedRun) -> anyhow::Result<Vec<(String, &'static str, Array)>> {
    let mut out: Vec<(String, &'static str, Array)> = Vec::new();
    match run {
        TrainedRun::Poly(run) => {
            run.refresh_datasets(0);
            run.cache_task_reps();
            for (task, rep) in run.registry.trained.iter().zip(&run.rep_cache) {
                out.push((task.id.clone(), "base", rep.clone()));
            }
            for mi in 0..run.registry.mappings.len() {
                let m = run.registry.mappings[mi].clone();
                if m.train_pairs.is_empty() {
                    continue;
                }
                let pairs: Vec<(Array, Array)> = m
                    .train_pairs
                    .iter()
                    .map(|(s, t)| {
                        let si = run.registry.trained.iter().position(|x| &x.id == s).unwrap();
                        let ti = run.registry.trained.iter().position(|x| &x.id == t).unwrap();
                        (run.rep_cache[si].clone(), run.rep_cache[ti].clone())
                    })
                    .collect();
                let rep = run.model.meta_rep_from_pairs(&pairs);
                out.push((m.mapping.id(), "meta", rep.values));
            }
        }
        TrainedRun::Cards(run) => {
            run.cache_task_reps();
            for (rules, rep) in run.registry.trained.clone().iter().zip(run.rep_cache.clone()) {
                out.push((rules.id(), "base", rep));
            }
            for mi in 0..run.registry.mappings.len() {
                let rep = run.mapping_rep(mi);
                out.push((run.registry.mappings[mi].name.to_string(), "meta", rep.values));
            }
        }
        TrainedRun::Grid(run) => {
            for ti in 0..run.registry.trained.len() {
                let task = run.registry.trained[ti];
                out.push((task.id(), "base", run.task_rep(ti).values));
            }
            out.push(("switch_colors".into(), "meta", run.mapping_rep().values));
        }
        TrainedRun::Stroop(_) => bail!("stroop runs have no representation store"),
    }
    Ok(out)
}

/// PCA projections (top `k` components) and per-group cosine similarity of a
/// run's task and mapping representations.
pub fn analyze_reps(run: &mut TrainedRun, k: usize) -> anyhow::Result<Analysis> {
    let reps = collect_reps(run)?;
    if reps.len() < 2 {
        bail!("need at least 2 task representations to analyze");
    }
    let d = reps[0].2.len();
    let n = reps.len();

    // mean-center
    let mut mean = vec![0.0; d];
    for (_, _, r) in &reps {
        for (m, x) in mean.iter_mut().zip(r.data()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = reps
        .iter()
        .map(|(_, _, r)| r.data().iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    // covariance
    let mut cov = vec![vec![0.0; d]; d];
    for row in &centered {
        for i in 0..d {
            if row[i] == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }

    let (eigvals, eigvecs) = symmetric_eigen(&cov);
    let total: f64 = eigvals.iter().filter(|&&v| v > 0.0).sum();
    let rank = eigvals.iter().filter(|&&v| v > total * 1e-12).count();
    let mut k_used = k.min(d);
    let mut warning = None;
    if rank < k_used {
        warning = Some(format!(
            "covariance rank {rank} below requested {k_used} components; reducing"
        ));
        k_used = rank.max(1);
    }

    let projections: Vec<(String, &'static str, Vec<f64>)> = reps
        .iter()
        .zip(&centered)
        .map(|((id, group, _), row)| {
            let proj: Vec<f64> = (0..k_used)
                .map(|c| row.iter().zip(&eigvecs[c]).map(|(x, e)| x * e).sum())
                .collect();
            (id.clone(), *group, proj)
        })
        .collect();

    // cosine-similarity groups over the raw representations
    let mut base_base = Vec::new();
    let mut meta_meta = Vec::new();
    let mut base_meta = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let c = cosine(reps[i].2.data(), reps[j].2.data());
            match (reps[i].1, reps[j].1) {
                ("base", "base") => base_base.push(c),
                ("meta", "meta") => meta_meta.push(c),
                _ => base_meta.push(c),
            }
        }
    }
    let cosine_groups = [("base-base", base_base), ("meta-meta", meta_meta), ("base-meta", base_meta)]
        .into_iter()
        .map(|(name, vals)| {
            let (c, mean, sd, min, max) = group_stats(&vals);
            (name.to_string(), c, mean, sd, min, max)
        })
        .collect();

    Ok(Analysis { projections, cosine_groups, eigenvalues: eigvals, reduced_k_warning: warning })
}

pub fn projections_csv(analysis: &Analysis) -> String {
    let k = analysis.projections.first().map(|(_, _, p)| p.len()).unwrap_or(0);
    let mut out = String::from("task_id,group");
    for i in 0..k {
        out.push_str(&format!(",pc{}", i + 1));
    }
    out.push('\n');
    for (id, group, proj) in &analysis.projections {
        out.push_str(&format!("{id},{group}"));
        for v in proj {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn cosine_csv(analysis: &Analysis) -> String {
    let mut out = String::from("group,count,mean,std,min,max\n");
    for (g, c, mean, sd, min, max) in &analysis.cosine_groups {
        out.push_str(&format!("{g},{c},{mean},{sd},{min},{max}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_recovers_diagonal() {
        let mat = vec![
            vec![4.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 9.0],
        ];
        let (vals, vecs) = symmetric_eigen(&mat);
        assert!((vals[0] - 9.0).abs() < 1e-10);
        assert!((vals[1] - 4.0).abs() < 1e-10);
        assert!((vals[2] - 1.0).abs() < 1e-10);
        assert!((vecs[0][2].abs() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn eigen_values_sorted_descending() {
        // reconstruction error is non-increasing in k exactly when the
        // eigenvalues come out sorted
        let mat = vec![
            vec![2.0, 0.5, 0.1],
            vec![0.5, 1.0, 0.2],
            vec![0.1, 0.2, 0.5],
        ];
        let (vals, _) = symmetric_eigen(&mat);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let trace: f64 = 2.0 + 1.0 + 0.5;
        assert!((vals.iter().sum::<f64>() - trace).abs() < 1e-9);
    }

    #[test]
    fn cosine_self_is_one() {
        let v = [0.3, -0.8, 0.5];
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);
    }
}
