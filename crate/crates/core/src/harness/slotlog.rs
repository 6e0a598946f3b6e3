//! Per-slot log as delimited text. Floats are written in shortest
//! round-trip form so a parsed log reproduces the in-memory records
//! bit-for-bit.

use std::io::{Read, Write};
use std::path::Path;

use crate::envs::SlotRecord;
use crate::error::{Error, Result};

const FIXED: [&str; 18] = [
    "day",
    "slot",
    "t_out_c",
    "irradiance_kw_m2",
    "buy_price",
    "p_hvac_kw",
    "p_solar_kw",
    "p_const_kw",
    "p_dg_kw",
    "p_ess_kw",
    "p_net_kw",
    "p_grid_kw",
    "soc_kwh",
    "cost",
    "reward",
    "w_energy",
    "w_comfort",
    "balance_residual_kw",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_slots<W: Write>(out: W, records: &[SlotRecord]) -> Result<()> {
    let n = records.first().map_or(0, |r| r.zone_temps_c.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend((1..=n).map(|i| format!("mdot_{i}")));
    header.extend((1..=n).map(|i| format!("temp_{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.day.to_string(),
            r.slot.to_string(),
            r.t_out_c.to_string(),
            r.irradiance_kw_m2.to_string(),
            r.buy_price.to_string(),
            r.p_hvac_kw.to_string(),
            r.p_solar_kw.to_string(),
            r.p_const_kw.to_string(),
            r.p_dg_kw.to_string(),
            r.p_ess_kw.to_string(),
            r.p_net_kw.to_string(),
            r.p_grid_kw.to_string(),
            r.soc_kwh.to_string(),
            r.cost.to_string(),
            opt(r.reward),
            opt(r.w_energy),
            opt(r.w_comfort),
            r.balance_residual_kw.to_string(),
        ];
        row.extend(r.mdots.iter().map(f64::to_string));
        row.extend(r.zone_temps_c.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("writing slot log", e))
}

pub fn slots_to_string(records: &[SlotRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_slots(&mut buf, records)?;
    String::from_utf8(buf).map_err(|e| Error::Invariant(e.to_string()))
}

pub fn read_slots<R: Read>(input: R, source: &Path) -> Result<Vec<SlotRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let extra = headers.len().checked_sub(FIXED.len()).unwrap_or(0);
    if headers.len() < FIXED.len() || extra % 2 != 0 || FIXED.iter().zip(headers.iter()).any(|(a, b)| *a != b) {
        return Err(Error::Parse {
            path: source.to_path_buf(),
            line: 1,
            msg: "not a slot log header".into(),
        });
    }
    let n = extra / 2;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            msg,
        };
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or_default()
                .parse::<f64>()
                .map_err(|_| err(format!("bad number in column `{}`", &headers[i])))
        };
        let o = |i: usize| -> Result<Option<f64>> {
            match rec.get(i).unwrap_or_default() {
                "" => Ok(None),
                _ => f(i).map(Some),
            }
        };
        let u = |i: usize| -> Result<usize> {
            rec.get(i)
                .unwrap_or_default()
                .parse::<usize>()
                .map_err(|_| err(format!("bad integer in column `{}`", &headers[i])))
        };
        let base = FIXED.len();
        out.push(SlotRecord {
            day: u(0)?,
            slot: u(1)?,
            t_out_c: f(2)?,
            irradiance_kw_m2: f(3)?,
            buy_price: f(4)?,
            p_hvac_kw: f(5)?,
            p_solar_kw: f(6)?,
            p_const_kw: f(7)?,
            p_dg_kw: f(8)?,
            p_ess_kw: f(9)?,
            p_net_kw: f(10)?,
            p_grid_kw: f(11)?,
            soc_kwh: f(12)?,
            cost: f(13)?,
            reward: o(14)?,
            w_energy: o(15)?,
            w_comfort: o(16)?,
            balance_residual_kw: f(17)?,
            mdots: (0..n).map(|k| f(base + k)).collect::<Result<_>>()?,
            zone_temps_c: (0..n).map(|k| f(base + n + k)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

pub fn load_slots(path: &Path) -> Result<Vec<SlotRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_slots(f, path)
}
