//! CSV exports and the binary value-field format.
//!
//! All floats are written with 12 significant digits in the style of C's
//! `%.12g`, so outputs are byte-stable across runs.
//!
//! Binary field layout (little endian):
//!
//! ```text
//! magic    8 bytes  "SIRDVF01"
//! params   8 x f64  beta gamma theta l_bar nu r w chi
//! phi      u8 kind (0 constant, 1 affine-saturating), 3 x f64 phi0 slope cap
//! n        u64
//! dt       f64
//! m        u64
//! iters    u64
//! residual f64
//! count    u64, then count x f64 node values in index order
//! ```

use std::io::{Read, Write};

use crate::dynamics::{FullState, State, Trajectory};
use crate::error::{Error, Result};
use crate::grid::TriangularGrid;
use crate::hjb::{hjb_residual, ValueField};
use crate::params::{ModelParams, MortalityCurve};
use crate::policy::PolicyReport;

const MAGIC: &[u8; 8] = b"SIRDVF01";

/// `%.12g`.
pub fn fmt_g12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..12).contains(&exp) {
        let fixed = format!("{:.*}", (11 - exp) as usize, x);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_g12).unwrap_or_default()
}

pub fn write_trajectory_csv<W: Write>(mut out: W, traj: &Trajectory<State>) -> Result<()> {
    writeln!(out, "t,s,i,r,d,l")?;
    for ((t, x), l) in traj.times.iter().zip(&traj.states).zip(&traj.control_values) {
        writeln!(out, "{},{},{},,,{}", fmt_g12(*t), fmt_g12(x.s), fmt_g12(x.i), fmt_g12(*l))?;
    }
    Ok(())
}

pub fn write_full_trajectory_csv<W: Write>(mut out: W, traj: &Trajectory<FullState>) -> Result<()> {
    writeln!(out, "t,s,i,r,d,l")?;
    for ((t, x), l) in traj.times.iter().zip(&traj.states).zip(&traj.control_values) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_g12(*t),
            fmt_g12(x.s),
            fmt_g12(x.i),
            fmt_g12(x.r_frac),
            fmt_g12(x.d),
            fmt_g12(*l)
        )?;
    }
    Ok(())
}

/// One row per node: value, finite-difference gradient and HJB residual.
pub fn write_value_field_csv<W: Write>(mut out: W, field: &ValueField) -> Result<()> {
    let residual = hjb_residual(field, &field.params);
    writeln!(out, "s,i,value,ds_value,di_value,residual")?;
    for (idx, (j, k)) in field.grid.nodes().enumerate() {
        let x = field.grid.node_state(j, k);
        let c = field.node_costate(j, k);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_g12(x.s),
            fmt_g12(x.i),
            fmt_g12(field.values[idx]),
            fmt_g12(c.p),
            fmt_g12(c.q),
            fmt_g12(residual.per_node[idx])
        )?;
    }
    Ok(())
}

pub fn write_policy_csv<W: Write>(mut out: W, report: &PolicyReport) -> Result<()> {
    writeln!(out, "t,s,i,l,region,K1,K2,pressure,running_cost")?;
    for k in 0..report.times.len() {
        let th = report.thresholds[k];
        let x = report.states[k];
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_g12(report.times[k]),
            fmt_g12(x.s),
            fmt_g12(x.i),
            fmt_g12(report.applied_l[k]),
            report.region_tags[k].tag(),
            opt(th.map(|t| t.k1)),
            opt(th.map(|t| t.k2)),
            opt(th.map(|t| t.pressure)),
            fmt_g12(report.running_costs[k])
        )?;
    }
    Ok(())
}

fn put_f64<W: Write>(out: &mut W, v: f64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64<W: Write>(out: &mut W, v: u64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_value_field<W: Write>(mut out: W, field: &ValueField) -> Result<()> {
    let p = &field.params;
    out.write_all(MAGIC)?;
    for v in [p.beta, p.gamma, p.theta, p.l_bar, p.nu, p.r, p.w, p.chi] {
        put_f64(&mut out, v)?;
    }
    let (kind, phi0, slope, cap) = match p.phi {
        MortalityCurve::Constant { phi0 } => (0u8, phi0, 0.0, phi0),
        MortalityCurve::AffineSaturating { phi0, slope, cap } => (1u8, phi0, slope, cap),
    };
    out.write_all(&[kind])?;
    for v in [phi0, slope, cap] {
        put_f64(&mut out, v)?;
    }
    put_u64(&mut out, field.grid.n() as u64)?;
    put_f64(&mut out, field.dt)?;
    put_u64(&mut out, field.m as u64)?;
    put_u64(&mut out, field.iterations as u64)?;
    put_f64(&mut out, field.residual)?;
    put_u64(&mut out, field.values.len() as u64)?;
    for v in &field.values {
        put_f64(&mut out, *v)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated input: {e}")))?;
        Ok(buf)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
}

pub fn read_value_field<R: Read>(input: R) -> Result<ValueField> {
    let mut rd = Reader { inner: input };
    if &rd.bytes::<8>()? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut head = [0.0; 8];
    for v in head.iter_mut() {
        *v = rd.f64()?;
    }
    let [kind] = rd.bytes::<1>()?;
    let (phi0, slope, cap) = (rd.f64()?, rd.f64()?, rd.f64()?);
    let phi = match kind {
        0 => MortalityCurve::Constant { phi0 },
        1 => MortalityCurve::AffineSaturating { phi0, slope, cap },
        k => return Err(Error::Format(format!("unknown mortality kind {k}"))),
    };
    let params = ModelParams {
        beta: head[0],
        gamma: head[1],
        theta: head[2],
        l_bar: head[3],
        nu: head[4],
        r: head[5],
        w: head[6],
        chi: head[7],
        phi,
    };
    params.validate()?;
    let n = rd.u64()? as usize;
    let grid = TriangularGrid::new(n)?;
    let dt = rd.f64()?;
    let m = rd.u64()? as usize;
    let iterations = rd.u64()? as usize;
    let residual = rd.f64()?;
    let count = rd.u64()? as usize;
    if count != grid.node_count() {
        return Err(Error::Format(format!(
            "{count} values for a grid of {} nodes",
            grid.node_count()
        )));
    }
    let values = (0..count).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
    Ok(ValueField {
        grid,
        values,
        params,
        dt,
        m,
        iterations,
        residual,
        history: Vec::new(),
    })
}
