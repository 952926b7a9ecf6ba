//! Shared oracles for the verification suites. Everything here evaluates
//! forward definitions only (enumeration, finite differences), independent
//! of the gradient and sampling code it is used to check.

/// Exact inclusion probabilities of sequential without-replacement draws of
/// size `k` from the categorical distribution `p`, by enumerating every
/// ordered draw.
pub fn enumerate_inclusion_probabilities(p: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    let mut chosen = Vec::with_capacity(k);
    recurse(p, k, 1.0, 1.0, &mut chosen, &mut out);
    out
}

fn recurse(
    p: &[f64],
    k: usize,
    remaining_mass: f64,
    prob: f64,
    chosen: &mut Vec<usize>,
    out: &mut [f64],
) {
    if chosen.len() == k {
        for &v in chosen.iter() {
            out[v] += prob;
        }
        return;
    }
    for v in 0..p.len() {
        if p[v] == 0.0 || chosen.contains(&v) {
            continue;
        }
        chosen.push(v);
        recurse(
            p,
            k,
            remaining_mass - p[v],
            prob * p[v] / remaining_mass,
            chosen,
            out,
        );
        chosen.pop();
    }
}

/// Expected value of the mean reward over a size-`k` without-replacement
/// draw: `E[(1/k) * sum_{v in draw} r_v]`, by enumeration.
pub fn enumerate_expected_mean_reward(p: &[f64], rewards: &[f64], k: usize) -> f64 {
    let inclusion = enumerate_inclusion_probabilities(p, k);
    inclusion
        .iter()
        .zip(rewards)
        .map(|(pi, r)| pi * r)
        .sum::<f64>()
        / k as f64
}

/// Sample mean and standard error of each coordinate over a set of vectors.
pub fn mean_and_standard_error(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len();
    let dims = samples[0].len();
    let mut mean = vec![0.0; dims];
    for s in samples {
        for (m, &x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut se = vec![0.0; dims];
    for s in samples {
        for ((e, &x), &m) in se.iter_mut().zip(s).zip(&mean) {
            *e += (x - m) * (x - m);
        }
    }
    for e in &mut se {
        *e = (*e / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt();
    }
    (mean, se)
}

#[allow(dead_code)]
fn unused() {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inclusion_probabilities_sum_to_k() {
        let p = [0.5, 0.3, 0.2];
        for k in 1..=3 {
            let inc = enumerate_inclusion_probabilities(&p, k);
            let total: f64 = inc.iter().sum();
            assert!((total - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn single_draw_inclusion_equals_p() {
        let p = [0.7, 0.1, 0.1, 0.1];
        let inc = enumerate_inclusion_probabilities(&p, 1);
        for (a, b) in inc.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
