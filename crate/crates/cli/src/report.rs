//! Trend verdicts for a field sweep.

use std::f64::consts::E;
use std::fmt::Write as _;

use dotspec::inversion::GaussianFit;
use dotspec::CoherenceCurve;
use serde::{Deserialize, Serialize};

/// Two-stage Hahn decay summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStage {
    /// C at T = 100 ns.
    pub c_100ns: f64,
    /// First T where C falls within 10% of the drop to C(100 ns).
    pub drop_complete_ns: f64,
    /// First T > 100 ns where C reaches C(100 ns) / e.
    pub second_stage_us: Option<f64>,
}

/// Linear interpolation of C at `t`, `None` outside the sampled range.
fn c_at(times: &[f64], c: &[f64], t: f64) -> Option<f64> {
    let j = times.partition_point(|&x| x < t);
    if j >= times.len() || (j == 0 && times[0] > t) {
        return None;
    }
    if times[j] == t || j == 0 {
        return Some(c[j]);
    }
    let f = (t - times[j - 1]) / (times[j] - times[j - 1]);
    Some(c[j - 1] + f * (c[j] - c[j - 1]))
}

/// First downward crossing of `level` at or after `from`, interpolated.
fn crossing(times: &[f64], c: &[f64], level: f64, from: f64) -> Option<f64> {
    let start = times.partition_point(|&x| x < from);
    for j in start..times.len() {
        if c[j] <= level {
            if j == 0 || j == start {
                return Some(times[j]);
            }
            let f = (c[j - 1] - level) / (c[j - 1] - c[j]);
            return Some(times[j - 1] + f * (times[j] - times[j - 1]));
        }
    }
    None
}

pub fn two_stage(curve: &CoherenceCurve) -> Option<TwoStage> {
    let times = curve.times();
    let c = curve.values();
    let c100 = c_at(&times, &c, 0.1)?;
    let drop = crossing(&times, &c, c100 + 0.1 * (1.0 - c100), 0.0)?;
    Some(TwoStage {
        c_100ns: c100,
        drop_complete_ns: drop * 1e3,
        second_stage_us: crossing(&times, &c, c100 / E, 0.1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub field_b_tesla: f64,
    pub fit: GaussianFit,
    pub hahn: Option<TwoStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub value: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub seed: u64,
    pub fields: Vec<FieldSummary>,
    pub verdicts: Vec<Verdict>,
}

fn strictly(xs: &[f64], increasing: bool) -> bool {
    xs.windows(2)
        .all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
}

fn list(xs: &[f64], digits: usize) -> String {
    xs.iter()
        .map(|x| format!("{x:.digits$}"))
        .collect::<Vec<_>>()
        .join(" / ")
}

/// Field-sweep trend checks; `in115_larmor_mhz_per_t` places the 2 T anchor.
pub fn evaluate(seed: u64, mut fields: Vec<FieldSummary>, in115_larmor_mhz_per_t: f64) -> TrendReport {
    fields.sort_by(|a, b| a.field_b_tesla.total_cmp(&b.field_b_tesla));
    let centers: Vec<f64> = fields.iter().map(|f| f.fit.center_mhz).collect();
    let amps: Vec<f64> = fields.iter().map(|f| f.fit.amplitude).collect();
    let mut verdicts = Vec::new();
    if fields.len() >= 2 {
        verdicts.push(Verdict {
            check: "center strictly increasing in B".into(),
            value: format!("{} MHz", list(&centers, 2)),
            pass: strictly(&centers, true),
        });
        verdicts.push(Verdict {
            check: "amplitude strictly decreasing in B".into(),
            value: format!("{} rad/us", list(&amps, 2)),
            pass: strictly(&amps, false),
        });
    }
    let at = |b: f64| fields.iter().find(|f| (f.field_b_tesla - b).abs() < 1e-9);
    if let Some(f) = at(2.0) {
        let c = f.fit.center_mhz;
        let anchor = 2.0 * in115_larmor_mhz_per_t * 2.0;
        verdicts.push(Verdict {
            check: "center at 2 T within 38 +/- 3 MHz".into(),
            value: format!("{c:.2} MHz (2 f_L(In) = {anchor:.2} MHz)"),
            pass: (c - 38.0).abs() <= 3.0,
        });
        if let Some(h) = f.hahn {
            verdicts.push(Verdict {
                check: "Hahn contrast drop completes within [15, 60] ns at 2 T".into(),
                value: format!("{:.1} ns", h.drop_complete_ns),
                pass: (15.0..=60.0).contains(&h.drop_complete_ns),
            });
            verdicts.push(Verdict {
                check: "Hahn second-stage 1/e time within [0.3, 3] us at 2 T".into(),
                value: h
                    .second_stage_us
                    .map_or("not reached".into(), |t| format!("{t:.3} us")),
                pass: h.second_stage_us.is_some_and(|t| (0.3..=3.0).contains(&t)),
            });
        }
    }
    if let Some(h) = at(1.2).and_then(|f| f.hahn) {
        let loss = 1.0 - h.c_100ns;
        verdicts.push(Verdict {
            check: "Hahn first-stage loss above 90% at 1.2 T".into(),
            value: format!("{:.1}%", 100.0 * loss),
            pass: loss > 0.9,
        });
    }
    TrendReport {
        seed,
        fields,
        verdicts,
    }
}

impl TrendReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    /// Fixed-width table, one verdict per line.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed {}", self.seed);
        for f in &self.fields {
            let _ = writeln!(
                out,
                "  B = {:.2} T: center {:.2} +/- {:.2} MHz, amplitude {:.2} +/- {:.2} rad/us",
                f.field_b_tesla,
                f.fit.center_mhz,
                f.fit.center_sigma_mhz(),
                f.fit.amplitude,
                f.fit.amplitude_sigma()
            );
        }
        for v in &self.verdicts {
            let _ = writeln!(out, "{}  {:<56} {}", if v.pass { "PASS" } else { "FAIL" }, v.check, v.value);
        }
        out
    }
}

/// In-115 Larmor frequency per tesla, MHz/T.
pub fn in115_ratio(species: &dotspec::SpeciesTable) -> f64 {
    species
        .get("In115")
        .map(|s| s.gyro_ratio)
        .unwrap_or(f64::NAN)
}
