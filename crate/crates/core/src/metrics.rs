//! SDR / SIR / SAR by orthogonal projection with single-tap (instantaneous)
//! projections.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DB_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bss {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// Components of an estimate relative to a set of references.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Splits `estimate` into the target projection, the interference lying in
/// the span of all references, and the residual artifact.
pub fn decompose(estimate: &[f64], references: &[&[f64]], target: usize) -> Result<Decomposition> {
    let len = estimate.len();
    if target >= references.len() {
        return Err(Error::invalid(format!(
            "target index {target} out of {} references",
            references.len()
        )));
    }
    if let Some(r) = references.iter().find(|r| r.len() != len) {
        return Err(Error::LengthMismatch {
            left: len,
            right: r.len(),
        });
    }
    let st = references[target];
    let e_t = energy(st);
    if e_t <= f64::MIN_POSITIVE {
        return Err(Error::invalid("degenerate reference: target has zero energy"));
    }
    let coef = dot(estimate, st) / e_t;
    let s_target: Vec<f64> = st.iter().map(|v| coef * v).collect();

    // Orthonormal basis of the reference span, target first.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let order = std::iter::once(target).chain((0..references.len()).filter(|&i| i != target));
    for i in order {
        let mut v = references[i].to_vec();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = energy(&v).sqrt();
        if n > 1e-12 * energy(references[i]).sqrt().max(f64::MIN_POSITIVE) {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    let mut p_all = vec![0.0; len];
    for q in &basis {
        let c = dot(estimate, q);
        p_all.iter_mut().zip(q).for_each(|(p, y)| *p += c * y);
    }
    let e_interf = p_all.iter().zip(&s_target).map(|(p, s)| p - s).collect();
    let e_artif = estimate.iter().zip(&p_all).map(|(e, p)| e - p).collect();
    Ok(Decomposition {
        s_target,
        e_interf,
        e_artif,
    })
}

/// `10 log10(num / den)` clipped to `±DB_CAP`.
pub fn capped_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { DB_CAP } else { 0.0 };
    }
    if num <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

pub fn bss_eval(estimate: &[f64], references: &[&[f64]], target: usize) -> Result<Bss> {
    let d = decompose(estimate, references, target)?;
    let st = energy(&d.s_target);
    let noise: Vec<f64> = d.e_interf.iter().zip(&d.e_artif).map(|(a, b)| a + b).collect();
    let signal: Vec<f64> = d.s_target.iter().zip(&d.e_interf).map(|(a, b)| a + b).collect();
    let sdr = capped_db(st, energy(&noise));
    let sir = capped_db(st, energy(&d.e_interf));
    let sar = capped_db(energy(&signal), energy(&d.e_artif));
    Ok(Bss { sdr, sir, sar })
}

/// One evaluated (mixture, source, method) triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub mixture: String,
    pub source: usize,
    pub method: String,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: Bss,
    pub median: Bss,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    /// Mixtures that failed, with the error text.
    pub errors: Vec<(String, String)>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl MetricReport {
    pub fn push(&mut self, mixture: &str, source: usize, method: &str, m: Bss) {
        self.rows.push(MetricRow {
            mixture: mixture.to_string(),
            source,
            method: method.to_string(),
            sdr: m.sdr,
            sir: m.sir,
            sar: m.sar,
        });
    }

    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn summary(&self, method: &str) -> Option<Summary> {
        let rows: Vec<&MetricRow> = self.rows.iter().filter(|r| r.method == method).collect();
        if rows.is_empty() {
            return None;
        }
        let col = |f: fn(&MetricRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        Some(Summary {
            count: rows.len(),
            mean: Bss {
                sdr: mean(col(|r| r.sdr)),
                sir: mean(col(|r| r.sir)),
                sar: mean(col(|r| r.sar)),
            },
            median: Bss {
                sdr: median(col(|r| r.sdr)),
                sir: median(col(|r| r.sir)),
                sar: median(col(|r| r.sar)),
            },
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Per-method mean and median table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<14} {:>5} {:>9} {:>9} {:>9} {:>9}\n",
            "method", "n", "SDR", "SIR", "SAR", "SDR(med)"
        );
        for m in self.methods() {
            let sm = self.summary(&m).expect("method has rows");
            s.push_str(&format!(
                "{:<14} {:>5} {:>9.2} {:>9.2} {:>9.2} {:>9.2}\n",
                m, sm.count, sm.mean.sdr, sm.mean.sir, sm.mean.sar, sm.median.sdr
            ));
        }
        for (mix, err) in &self.errors {
            s.push_str(&format!("error {mix}: {err}\n"));
        }
        s
    }
}
