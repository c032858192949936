//! Convergence diagnostics for scalar chains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A diagnostic value; `flagged` marks an undefined result (for example a
/// chain that never moved), in which case `value` is a placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub value: f64,
    pub flagged: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Integrated autocorrelation time of one chain by Geyer's initial positive
/// sequence: pairs `rho_{2k} + rho_{2k+1}` are summed until the first
/// negative pair. `None` for a constant chain.
pub fn autocorrelation_time(x: &[f64]) -> Option<f64> {
    let n = x.len();
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let gamma = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let g0 = gamma(0);
    if !(g0 > 0.0) {
        return None;
    }
    let mut sum_pairs = 0.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (gamma(lag) + gamma(lag + 1)) / g0;
        if pair < 0.0 {
            break;
        }
        sum_pairs += pair;
        lag += 2;
    }
    // tau = -rho_0 + 2 sum_k P_k = 1 + 2 sum_{t>=1} rho_t
    let tau = -1.0 + 2.0 * sum_pairs;
    // antithetic chains can push tau toward zero; cap the gain like
    // common implementations do
    Some(tau.max(1.0 / (n as f64).ln().max(1.0)))
}

/// Effective sample size of a scalar quantity: per-chain `U / tau`,
/// summed over chains. Chains with zero variance contribute 0 and set the
/// flag.
pub fn ess(chains: &[&[f64]]) -> Result<Diagnostic> {
    if chains.is_empty() {
        return Err(Error::input("ess needs at least one chain"));
    }
    let mut total = 0.0;
    let mut flagged = false;
    for c in chains {
        if c.len() < 10 {
            return Err(Error::input(format!(
                "ess needs at least 10 draws per chain, got {}",
                c.len()
            )));
        }
        match autocorrelation_time(c) {
            Some(tau) => total += c.len() as f64 / tau,
            None => flagged = true,
        }
    }
    Ok(Diagnostic {
        value: total,
        flagged,
    })
}

/// Potential scale reduction from `M >= 2` equal-length chains:
/// `B = U/(M-1) sum_m (mean_m - mean)^2`, `W` the mean within-chain sample
/// variance, `var+ = (U-1)/U W + B/U`, `R = sqrt(var+ / W)`.
pub fn rhat(chains: &[&[f64]]) -> Result<Diagnostic> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::input("rhat needs at least 2 chains"));
    }
    let u = chains[0].len();
    if u < 10 {
        return Err(Error::input(format!(
            "rhat needs at least 10 draws per chain, got {u}"
        )));
    }
    if chains.iter().any(|c| c.len() != u) {
        return Err(Error::input("rhat chains must have equal length"));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b =
        u as f64 / (m - 1) as f64 * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (u - 1) as f64)
        .sum::<f64>()
        / m as f64;
    if !(w > 0.0) {
        return Ok(Diagnostic {
            value: f64::NAN,
            flagged: true,
        });
    }
    let uf = u as f64;
    let var_plus = (uf - 1.0) / uf * w + b / uf;
    Ok(Diagnostic {
        value: (var_plus / w).sqrt(),
        flagged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, stream: u64) -> Vec<f64> {
        let mut rng = stream_rng(1234, stream);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1(n: usize, phi: f64, stream: u64) -> Vec<f64> {
        let mut rng = stream_rng(77, stream);
        let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn iid_ess_close_to_draw_count() {
        let x = normals(10_000, 0);
        let e = ess(&[&x]).unwrap();
        assert!(!e.flagged);
        assert!((9000.0..=11000.0).contains(&e.value), "{}", e.value);
    }

    #[test]
    fn ar1_ess_ratio() {
        let x = ar1(100_000, 0.9, 0);
        let e = ess(&[&x]).unwrap().value / x.len() as f64;
        let want = 0.1 / 1.9;
        assert!((e / want - 1.0).abs() < 0.25, "{e} vs {want}");
    }

    #[test]
    fn constant_chain_is_flagged() {
        let x = vec![2.5; 100];
        let e = ess(&[&x]).unwrap();
        assert!(e.flagged && e.value == 0.0);
        assert!(ess(&[&x[..5]]).is_err());
    }

    #[test]
    fn ess_sums_over_chains_and_thinning() {
        let a = normals(5000, 1);
        let b = normals(5000, 2);
        let e = ess(&[&a, &b]).unwrap().value;
        assert!((e / 10_000.0 - 1.0).abs() < 0.1);
        let x = normals(20_000, 3);
        let thinned: Vec<f64> = x.iter().step_by(4).copied().collect();
        let et = ess(&[&thinned]).unwrap().value;
        assert!((et / 5000.0 - 1.0).abs() < 0.15);
    }

    #[test]
    fn rhat_examples() {
        let chains: Vec<Vec<f64>> = (0..4).map(|s| normals(1000, 10 + s)).collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let r = rhat(&refs).unwrap().value;
        assert!((0.999..=1.01).contains(&r), "{r}");

        let far: Vec<f64> = normals(1000, 20).iter().map(|v| v + 10.0).collect();
        let near = normals(1000, 21);
        assert!(rhat(&[&near, &far]).unwrap().value > 3.0);

        let same = normals(1000, 22);
        let r = rhat(&[&same, &same]).unwrap().value;
        assert!((r - (999.0f64 / 1000.0).sqrt()).abs() < 1e-12);

        let flat = vec![1.0; 50];
        assert!(rhat(&[&flat, &flat]).unwrap().flagged);
        assert!(rhat(&[&same]).is_err());
    }

    #[test]
    fn independent_streams_are_uncorrelated() {
        let a = normals(10_000, 30);
        let b = normals(10_000, 31);
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        assert!((cov / (va * vb).sqrt()).abs() < 0.05);
    }
}
