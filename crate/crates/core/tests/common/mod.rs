//! Plaintext oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use consentry::leader_election::Ballot;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Plain instant runoff where each ballot may move once, to its secondary.
/// Returns the winner and the number of exhausted ballots.
pub fn irv(n: usize, ballots: &[Ballot]) -> (usize, u64) {
    // (current candidate or None if exhausted, secondary, already moved)
    let mut state: Vec<(Option<usize>, Option<usize>, bool)> = ballots
        .iter()
        .map(|b| (Some(b.primary.0), b.secondary.map(|s| s.0), false))
        .collect();
    let mut alive = vec![true; n];
    let mut eliminated_any = false;
    let pick = |ids: &[usize], v: u64| ids[(v % ids.len() as u64) as usize];
    loop {
        let mut votes = vec![0u64; n];
        for (cur, _, _) in &state {
            if let Some(c) = cur {
                votes[*c] += 1;
            }
        }
        let active: u64 = votes.iter().sum();
        let exhausted = ballots.len() as u64 - active;
        let live: Vec<usize> = (0..n).filter(|&c| alive[c]).collect();
        if let Some(&c) = live.iter().find(|&&c| 2 * votes[c] > active) {
            return (c, exhausted);
        }
        if live.len() == 1 {
            return (live[0], exhausted);
        }
        let low = live.iter().map(|&c| votes[c]).min().unwrap();
        let lowest: Vec<usize> = live.iter().copied().filter(|&c| votes[c] == low).collect();
        if eliminated_any && lowest.len() == live.len() {
            return (pick(&lowest, low), exhausted);
        }
        let out = pick(&lowest, low);
        alive[out] = false;
        eliminated_any = true;
        for (cur, sec, moved) in state.iter_mut() {
            if *cur == Some(out) {
                *cur = match sec {
                    Some(s) if !*moved && alive[*s] => Some(*s),
                    _ => None,
                };
                *moved = true;
            }
        }
    }
}

pub struct OutlierOracle {
    pub mu: f64,
    pub sigma: f64,
    pub kept: usize,
    pub value: Option<f64>,
}

/// Mean over all inputs, deviation over `round2`, filtered mean over `round3`.
pub fn outlier(
    v: &[f64],
    c: f64,
    round2: &BTreeSet<usize>,
    round3: &BTreeSet<usize>,
) -> OutlierOracle {
    let mu = mean(v);
    let var = round2.iter().map(|&i| (v[i] - mu).powi(2)).sum::<f64>() / round2.len() as f64;
    let sigma = var.sqrt();
    let kept: Vec<f64> = round3
        .iter()
        .map(|&i| v[i])
        .filter(|x| (x - mu).abs() <= c * sigma)
        .collect();
    OutlierOracle {
        mu,
        sigma,
        kept: kept.len(),
        value: (!kept.is_empty()).then(|| mean(&kept)),
    }
}

pub fn all(n: usize) -> BTreeSet<usize> {
    (0..n).collect()
}
