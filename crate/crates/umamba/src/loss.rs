//! Training objective: negated scale-invariant SNR with permutation-invariant
//! assignment, built on the autodiff graph so it can be backpropagated.
//!
//! The assignment is picked by value and only the winning pairs are wired
//! into the loss node, so losing branches get no gradient.

use crate::graph::{Graph, Var};
use crate::metrics::{permutations, DB_CLAMP, MAX_SOURCES};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Stabilizer added to both energies before the ratio.
pub const LOSS_EPS: f64 = 1e-10;

/// Differentiable SI-SNR in dB between two equal-length rows of the graph.
/// Mirrors the evaluation metric up to the stabilizer, clamp included.
pub fn si_snr_var<S: Scalar>(g: &mut Graph<S>, est: Var, reference: Var) -> Result<Var> {
    let n = g.value(est).numel();
    if n == 0 || g.value(reference).numel() != n {
        return Err(Error::shape(format!(
            "signals must have equal nonzero length, got {} and {}",
            n,
            g.value(reference).numel()
        )));
    }
    let neg_inv_n = S::from_f64(-1.0 / n as f64);
    let eps = S::from_f64(LOSS_EPS);

    let est_sum = g.sum(est);
    let est_neg_mean = g.scale(est_sum, neg_inv_n);
    let e = g.broadcast_add(est, est_neg_mean)?;
    let ref_sum = g.sum(reference);
    let ref_neg_mean = g.scale(ref_sum, neg_inv_n);
    let r = g.broadcast_add(reference, ref_neg_mean)?;

    let er = g.mul(e, r)?;
    let dot_er = g.sum(er);
    let rr = g.mul(r, r)?;
    let r_energy = g.sum(rr);
    let r_energy_eps = g.add_const(r_energy, eps);
    let alpha = g.div(dot_er, r_energy_eps)?;

    let target = g.scalar_mul(alpha, r)?;
    let err = g.sub(e, target)?;
    let tt = g.mul(target, target)?;
    let target_energy = g.sum(tt);
    let ee = g.mul(err, err)?;
    let err_energy = g.sum(ee);

    let num = g.add_const(target_energy, eps);
    let den = g.add_const(err_energy, eps);
    let ratio = g.div(num, den)?;
    let ln_ratio = g.ln(ratio);
    let db = g.scale(ln_ratio, S::from_f64(10.0 / std::f64::consts::LN_10));
    Ok(g.clamp(db, S::from_f64(-DB_CLAMP), S::from_f64(DB_CLAMP)))
}

/// Permutation-invariant training loss: the negated mean SI-SNR under the
/// best estimate-to-reference assignment. Returns the scalar loss node and
/// the winning permutation (est i matched with ref perm[i], ties resolved
/// to the lexicographically smallest).
pub fn pit_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    ests: &[Var],
    refs: &[Var],
) -> Result<(Var, Vec<usize>)> {
    let s = ests.len();
    if s == 0 || refs.len() != s {
        return Err(Error::shape(format!(
            "need matching nonzero source counts, got {} and {}",
            s,
            refs.len()
        )));
    }
    if s > MAX_SOURCES {
        return Err(Error::invalid(format!(
            "exhaustive permutation search is capped at {MAX_SOURCES} sources, got {s}"
        )));
    }

    let mut scores = vec![Vec::with_capacity(s); s];
    for (i, &est) in ests.iter().enumerate() {
        for &reference in refs {
            let v = si_snr_var(g, est, reference)?;
            scores[i].push(v);
        }
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(s) {
        let mean = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| Scalar::to_f64(g.value(scores[i][j]).data[0]))
            .sum::<f64>()
            / s as f64;
        let better = match &best {
            None => true,
            Some((b, _)) => mean > *b,
        };
        if better {
            best = Some((mean, perm));
        }
    }
    let (_, perm) = best.expect("at least one permutation");

    let mut acc = scores[0][perm[0]];
    for (i, &j) in perm.iter().enumerate().skip(1) {
        acc = g.add(acc, scores[i][j])?;
    }
    let loss = g.scale(acc, S::from_f64(-1.0 / s as f64));
    Ok((loss, perm))
}
