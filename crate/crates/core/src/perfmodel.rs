//! Speedup and efficiency model for one window.
//!
//! Serial cost is `K_s M_s Nx^(q-1) Nt`, parallel cost is
//! `K_p M_p Nx^(q-1) + T_c`, giving
//!
//! ```text
//! S = Nt / (γ ω) · 1 / (1 + T_c / T_b) · 1 / core_penalty
//! E = S / (core_penalty · Nt)
//! ```
//!
//! with `γ = K_p / K_s` and `ω = M_p / M_s`. `core_penalty` is the number of
//! cores per timestep of the parallel run relative to the serial run: 2 when
//! complex blocks take twice the cores, 1 when parallel and serial use the
//! same cores per timestep. Any extra preconditioner application, such as
//! Richardson's initial one, is included by the caller in `M_p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::SolveReport;

/// `T_c / T_b` above which the transpose visibly limits the speedup.
pub const COMMUNICATION_WARNING_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerfInputs {
    pub k_s: f64,
    pub k_p: f64,
    pub m_s: f64,
    pub m_p: f64,
    pub nx: usize,
    pub nt: usize,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub t_c: f64,
    #[serde(default)]
    pub t_b: f64,
    #[serde(default = "default_penalty")]
    pub core_penalty: f64,
}

fn default_q() -> f64 {
    1.0
}

fn default_penalty() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfEstimate {
    pub gamma: f64,
    pub omega: f64,
    #[serde(rename = "S")]
    pub speedup: f64,
    #[serde(rename = "E")]
    pub efficiency: f64,
    pub t_s_rel: f64,
    pub t_p_rel: f64,
    /// `T_c / T_b` exceeds [`COMMUNICATION_WARNING_RATIO`].
    pub communication_bound: bool,
}

impl PerfInputs {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("k_s", self.k_s),
            ("k_p", self.k_p),
            ("m_s", self.m_s),
            ("m_p", self.m_p),
            ("t_c", self.t_c),
            ("t_b", self.t_b),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.k_s == 0.0 || self.m_s == 0.0 {
            return Err(Error::InvalidInput("k_s and m_s must be positive to form gamma and omega".into()));
        }
        if self.k_p == 0.0 || self.m_p == 0.0 {
            return Err(Error::InvalidInput("k_p and m_p must be positive for a finite speedup".into()));
        }
        if self.nx == 0 || self.nt == 0 {
            return Err(Error::InvalidInput("nx and nt must be positive".into()));
        }
        if !(self.q >= 1.0) {
            return Err(Error::InvalidInput(format!("q must be >= 1, got {}", self.q)));
        }
        if !(self.core_penalty >= 1.0) {
            return Err(Error::InvalidInput(format!("core_penalty must be >= 1, got {}", self.core_penalty)));
        }
        Ok(())
    }
}

fn comm_ratio(t_c: f64, t_b: f64) -> f64 {
    if t_c == 0.0 {
        0.0
    } else if t_b == 0.0 {
        f64::INFINITY
    } else {
        t_c / t_b
    }
}

pub fn predict(inputs: &PerfInputs) -> Result<PerfEstimate> {
    inputs.validate()?;
    let gamma = inputs.k_p / inputs.k_s;
    let omega = inputs.m_p / inputs.m_s;
    let nt = inputs.nt as f64;
    let ratio = comm_ratio(inputs.t_c, inputs.t_b);
    let speedup = nt / (gamma * omega) / (1.0 + ratio) / inputs.core_penalty;
    let scale = (inputs.nx as f64).powf(inputs.q - 1.0);
    Ok(PerfEstimate {
        gamma,
        omega,
        speedup,
        efficiency: speedup / (inputs.core_penalty * nt),
        t_s_rel: inputs.k_s * inputs.m_s * scale * nt,
        t_p_rel: inputs.k_p * inputs.m_p * scale + inputs.t_c,
        communication_bound: ratio > COMMUNICATION_WARNING_RATIO,
    })
}

/// Extracts the model inputs from a serial and a parallel report of the
/// same window and predicts the speedup.
///
/// `K_s` is the mean Krylov count per serial block solve, `M_s` the block
/// solves per step, `K_p` the largest per-block count and `M_p` the outer
/// iteration count plus `extra_applications`.
pub fn measure_and_predict(
    serial: &SolveReport,
    parallel: &SolveReport,
    nx: usize,
    nt: usize,
    q: f64,
    core_penalty: f64,
    extra_applications: usize,
) -> Result<PerfEstimate> {
    if serial.fingerprint != parallel.fingerprint {
        return Err(Error::MismatchedReports(
            serial.fingerprint.clone(),
            parallel.fingerprint.clone(),
        ));
    }
    if serial.block_solves == 0 || serial.n_steps == 0 {
        return Err(Error::InvalidInput("serial report has no block solves".into()));
    }
    let inputs = PerfInputs {
        k_s: serial.block_krylov_iterations as f64 / serial.block_solves as f64,
        k_p: parallel.k_p_max.max(1) as f64,
        m_s: serial.block_solves as f64 / serial.n_steps as f64,
        m_p: (parallel.m_p + extra_applications) as f64,
        nx,
        nt,
        q,
        t_c: parallel.timings.transpose,
        t_b: parallel.timings.blocks,
        core_penalty,
    };
    let est = predict(&inputs)?;
    if est.communication_bound {
        log::warn!(
            "transpose time {:.3e}s exceeds {} of block time {:.3e}s",
            inputs.t_c,
            COMMUNICATION_WARNING_RATIO,
            inputs.t_b
        );
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs(nt: usize, m_p: f64, penalty: f64) -> PerfInputs {
        PerfInputs {
            k_s: 1.0,
            k_p: 1.0,
            m_s: 1.0,
            m_p,
            nx: 128,
            nt,
            q: 1.0,
            t_c: 0.0,
            t_b: 0.0,
            core_penalty: penalty,
        }
    }

    #[test]
    fn ideal_limit() {
        let e = predict(&inputs(32, 1.0, 1.0)).unwrap();
        assert_eq!((e.speedup, e.efficiency), (32.0, 1.0));
    }

    #[test]
    fn advection_table_rows() {
        let e = predict(&inputs(64, 4.0, 2.0)).unwrap();
        assert_eq!(e.speedup, 8.0);
        let e = predict(&inputs(2048, 4.0, 2.0)).unwrap();
        assert_eq!((e.speedup, e.efficiency), (256.0, 1.0 / 16.0));
    }

    #[test]
    fn rejects_zero_serial_counts() {
        assert!(predict(&PerfInputs { k_s: 0.0, ..inputs(4, 1.0, 1.0) }).is_err());
        assert!(predict(&PerfInputs { m_s: 0.0, ..inputs(4, 1.0, 1.0) }).is_err());
        assert!(predict(&PerfInputs { core_penalty: 0.5, ..inputs(4, 1.0, 1.0) }).is_err());
    }

    #[test]
    fn communication_flag() {
        let e = predict(&PerfInputs { t_c: 0.2, t_b: 1.0, ..inputs(4, 1.0, 1.0) }).unwrap();
        assert!(e.communication_bound);
        assert!((e.speedup - 4.0 / 1.2).abs() < 1e-12);
    }

    #[test]
    fn same_report_twice() {
        let rep = SolveReport {
            m_p: 1,
            k_p_max: 1,
            block_solves: 1,
            block_krylov_iterations: 1,
            n_steps: 1,
            fingerprint: "x".into(),
            ..Default::default()
        };
        let e = measure_and_predict(&rep, &rep, 10, 1, 1.0, 2.0, 0).unwrap();
        assert_eq!(e.speedup, 0.5);
        let other = SolveReport { fingerprint: "y".into(), ..rep.clone() };
        assert!(matches!(measure_and_predict(&rep, &other, 10, 1, 1.0, 2.0, 0), Err(Error::MismatchedReports(..))));
    }

    fn arb_inputs() -> impl Strategy<Value = PerfInputs> {
        (0.1f64..10.0, 0.1f64..10.0, 0.1f64..10.0, 0.1f64..50.0, 1usize..4096, 0.0f64..5.0, 0.01f64..5.0, 1.0f64..4.0)
            .prop_map(|(k_s, k_p, m_s, m_p, nt, t_c, t_b, core_penalty)| PerfInputs {
                k_s,
                k_p,
                m_s,
                m_p,
                nx: 64,
                nt,
                q: 1.3,
                t_c,
                t_b,
                core_penalty,
            })
    }

    proptest! {
        #[test]
        fn homogeneous_in_times(i in arb_inputs(), s in 0.01f64..100.0) {
            let a = predict(&i).unwrap();
            let b = predict(&PerfInputs { t_c: i.t_c * s, t_b: i.t_b * s, ..i }).unwrap();
            prop_assert!((a.speedup - b.speedup).abs() <= 1e-12 * a.speedup);
        }

        #[test]
        fn monotone_in_each_input(i in arb_inputs(), f in 1.01f64..3.0) {
            let s = predict(&i).unwrap().speedup;
            prop_assert!(s > 0.0);
            let more_steps = predict(&PerfInputs { nt: i.nt + 1, ..i }).unwrap().speedup;
            let harder_blocks = predict(&PerfInputs { k_p: i.k_p * f, ..i }).unwrap().speedup;
            let more_outer = predict(&PerfInputs { m_p: i.m_p * f, ..i }).unwrap().speedup;
            let slower_transpose = predict(&PerfInputs { t_c: i.t_c * f + 0.01, ..i }).unwrap().speedup;
            prop_assert!(more_steps > s);
            prop_assert!(harder_blocks < s);
            prop_assert!(more_outer < s);
            prop_assert!(slower_transpose < s);
        }

        #[test]
        fn efficiency_bound(i in arb_inputs()) {
            let e = predict(&i).unwrap();
            prop_assert!((e.efficiency - e.speedup / (i.core_penalty * i.nt as f64)).abs() <= 1e-12 * e.efficiency);
            let bound = 1.0 / (i.core_penalty * i.core_penalty * e.gamma * e.omega);
            prop_assert!(e.efficiency <= bound * (1.0 + 1e-12));
            if i.t_c > 0.0 {
                prop_assert!(e.efficiency < bound);
            }
            let ideal = predict(&PerfInputs { t_c: 0.0, ..i }).unwrap();
            prop_assert!((ideal.efficiency - bound).abs() <= 1e-12 * bound);
        }
    }
}
