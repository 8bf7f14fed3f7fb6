//! Proof constants and parameter formulas, evaluated for reporting.

use serde::Serialize;

pub const C: f64 = 6.25e-54;
pub const C_PRIME: f64 = 1e-11;

pub fn f(g: usize) -> f64 { (g * (2 * g + 1)) as f64 }

/// `t := 99(ln 99 + 4 ln f − ln c − 6 ln ε)`.
pub fn t_param(g: usize, eps: f64) -> f64 { 99.0 * (99f64.ln() + 4.0 * f(g).ln() - C.ln() - 6.0 * eps.ln()) }

/// `ξ := c′ε / f(1+t)`.
pub fn xi(g: usize, eps: f64) -> f64 { C_PRIME * eps / (f(g) * (1.0 + t_param(g, eps))) }

/// Trim overlap target `δ = 8√c ε³/f²`.
pub fn trim_delta(g: usize, eps: f64) -> f64 { 8.0 * C.sqrt() * eps.powi(3) / f(g).powi(2) }

/// Energy net spacing `η = 4c′ε/f`.
pub fn energy_net_eta(g: usize, eps: f64) -> f64 { 4.0 * C_PRIME * eps / f(g) }

/// Error after `Reduce`, `cε⁶/f⁴`.
pub fn reduce_delta(g: usize, eps: f64) -> f64 { C * eps.powi(6) / f(g).powi(4) }

/// Error after `FinalReduce`, `η²/4f`.
pub fn final_delta(g: usize, eta: f64) -> f64 { eta * eta / (4.0 * f(g)) }

/// `P = 800 n B`.
pub fn truncation_bond(n: usize, bond: usize) -> f64 { 800.0 * n as f64 * bond as f64 }

/// `δ_Low(D) = 1 − (1 − c′/f − √D)/√(1−D)` for `0 ≤ D < 1`.
pub fn delta_low(dist: f64, g: usize) -> f64 { 1.0 - (1.0 - C_PRIME / f(g) - dist.sqrt()) / (1.0 - dist).sqrt() }

/// Kept eigenvalue mass `Λ = 1 − 1/(10000g + 5000)`.
pub fn lambda(g: usize) -> f64 { 1.0 - 1.0 / (10000.0 * g as f64 + 5000.0) }

/// The theoretical parameters next to the ones actually used.
#[derive(Clone, Debug, Serialize)]
pub struct TheoryReport {
    pub c: f64,
    pub c_prime: f64,
    pub f: f64,
    pub t: f64,
    pub xi: f64,
    pub trim_delta: f64,
    pub energy_net_eta: f64,
    pub reduce_delta: f64,
    pub final_delta: f64,
    pub truncation_bond_per_b: f64,
    pub lambda: f64,
}

pub fn report(n: usize, g: usize, eps: f64, eta: f64) -> TheoryReport {
    TheoryReport {
        c: C,
        c_prime: C_PRIME,
        f: f(g),
        t: t_param(g, eps),
        xi: xi(g, eps),
        trim_delta: trim_delta(g, eps),
        energy_net_eta: energy_net_eta(g, eps),
        reduce_delta: reduce_delta(g, eps),
        final_delta: final_delta(g, eta),
        truncation_bond_per_b: truncation_bond(n, 1),
        lambda: lambda(g),
    }
}

/// Cardinality and bond bounds of the four sub-stages of one step, from
/// the entry bounds `(s, b)` and the step polynomials.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct FlowParams {
    pub d: usize,
    /// Left Schmidt terms of the AGSP at the cut.
    pub p: usize,
    /// Trim output size.
    pub p1: usize,
    /// Truncation bond.
    pub p2: usize,
    /// Recycled vectors.
    pub q: usize,
}

pub fn step_flow(s: usize, b: usize, fp: &FlowParams) -> [(usize, usize); 4] {
    let FlowParams { d, p, p1, p2, q } = *fp;
    [(d * s, b), (p1, d * s * b + q * q), (p1 + q, p2), (p * p1 + p * q + q, p * p2)]
}

/// Bounds for the final set `S_n`: `(p₁ + 2q, p₀p₂ + q)`.
pub fn final_flow(p0: usize, fp: &FlowParams) -> (usize, usize) { (fp.p1 + 2 * fp.q, p0 * fp.p2 + fp.q) }

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_low_is_increasing() {
        for g in 1..=3 {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..1000 {
                let dist = k as f64 / 1000.0 * 0.999;
                let v = delta_low(dist, g);
                assert!(v > prev, "g {g} D {dist}");
                prev = v;
            }
        }
    }

    #[test]
    fn constants_and_formulas() {
        assert_eq!(f(2), 10.0);
        assert_eq!(truncation_bond(8, 1), 6400.0);
        assert!((final_delta(2, 0.2) - 0.001).abs() < 1e-15);
        assert!((lambda(1) - (1.0 - 1.0 / 15000.0)).abs() < 1e-15);
        assert!(xi(2, 1.0) > 0.0 && xi(2, 1.0) < C_PRIME);
    }

    #[test]
    fn step_flow_reaches_fixed_point() {
        let fp = FlowParams { d: 2, p: 5, p1: 7, p2: 4, q: 3 };
        let fixed = (fp.p * fp.p1 + fp.p * fp.q + fp.q, fp.p * fp.p2);
        let first = step_flow(1, 1, &fp)[3];
        assert_eq!(first, fixed);
        let second = step_flow(first.0, first.1, &fp)[3];
        assert!(second.0 <= first.0 && second.1 <= first.1);
        let third = step_flow(second.0, second.1, &fp)[3];
        assert!(third.0 <= second.0 && third.1 <= second.1);
    }
}
