//! Weather and tariff time series: CSV ingestion, validation, resampling
//! onto the slot grid, and per-day windows.
//!
//! Schema (header row required, column order free, extra columns ignored):
//!
//! * weather: `timestamp,t_out_c,irradiance_kw_m2`
//! * prices:  `timestamp,buy_price`
//!
//! Timestamps are RFC 3339 with an explicit offset, e.g.
//! `2023-05-01T00:30:00+05:30`, and must be strictly increasing. Series are
//! linearly interpolated onto a grid of `slot_hours` starting at the first
//! timestamp. Day `d` is grid slots `[48d, 48d + 48)`.

use std::io::Read;
use std::path::Path;

use chrono::{DateTime, FixedOffset};
use log::warn;

use crate::error::{Error, Result};

/// Environment variable naming a directory holding `weather.csv` and
/// `prices.csv`.
pub const DATA_DIR_ENV: &str = "COHVAC_DATA_DIR";

const SPACING_TOL_HOURS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    pub start: DateTime<FixedOffset>,
    pub slot_hours: f64,
    pub t_out_c: Vec<f64>,
    pub irradiance_kw_m2: Vec<f64>,
    /// Number of negative irradiance samples clamped to zero on load.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub start: DateTime<FixedOffset>,
    pub slot_hours: f64,
    pub buy_price: Vec<f64>,
}

impl WeatherSeries {
    pub fn len(&self) -> usize {
        self.t_out_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_out_c.is_empty()
    }
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.buy_price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buy_price.is_empty()
    }
}

struct RawTable {
    times: Vec<DateTime<FixedOffset>>,
    columns: Vec<Vec<f64>>,
    /// 1-based file line of each data row.
    lines: Vec<u64>,
}

fn read_table<R: Read>(reader: R, source: &Path, wanted: &[&str]) -> Result<RawTable> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
    };
    let ts_col = find("timestamp")?;
    let cols = wanted.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut table = RawTable {
        times: Vec::new(),
        columns: vec![Vec::new(); wanted.len()],
        lines: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let ts = rec.get(ts_col).unwrap_or_default();
        let t = DateTime::parse_from_rfc3339(ts).map_err(|e| parse_err(line, format!("bad timestamp `{ts}`: {e}")))?;
        for (k, &c) in cols.iter().enumerate() {
            let raw = rec.get(c).unwrap_or_default();
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("bad number `{raw}` in column `{}`", wanted[k])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value in column `{}`", wanted[k])));
            }
            table.columns[k].push(v);
        }
        table.times.push(t);
        table.lines.push(line);
    }
    if table.times.len() < 2 {
        return Err(Error::Validation(format!("{}: need at least two samples", source.display())));
    }
    for w in 1..table.times.len() {
        if table.times[w] <= table.times[w - 1] {
            return Err(Error::Validation(format!(
                "{}:{}: timestamps must be strictly increasing",
                source.display(),
                table.lines[w]
            )));
        }
    }
    Ok(table)
}

fn hours_between(a: &DateTime<FixedOffset>, b: &DateTime<FixedOffset>) -> f64 {
    (*b - *a).num_milliseconds() as f64 / 3_600_000.0
}

/// Linear interpolation of `(times, values)` onto a uniform grid starting
/// at `times[0]` with `slot_hours` spacing, up to the last sample.
pub fn resample_linear(times: &[DateTime<FixedOffset>], values: &[f64], slot_hours: f64) -> Vec<f64> {
    let offsets: Vec<f64> = times.iter().map(|t| hours_between(&times[0], t)).collect();
    let end = *offsets.last().expect("non-empty");
    let n = ((end + SPACING_TOL_HOURS) / slot_hours).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let x = k as f64 * slot_hours;
        while j + 1 < offsets.len() - 1 && offsets[j + 1] <= x + SPACING_TOL_HOURS {
            j += 1;
        }
        let (x0, x1) = (offsets[j], offsets[j + 1]);
        if (x - x0).abs() <= SPACING_TOL_HOURS {
            out.push(values[j]);
        } else if (x - x1).abs() <= SPACING_TOL_HOURS {
            out.push(values[j + 1]);
        } else {
            let w = (x - x0) / (x1 - x0);
            out.push(values[j] + w * (values[j + 1] - values[j]));
        }
    }
    out
}

fn check_slot(slot_hours: f64) -> Result<()> {
    if !(slot_hours > 0.0) {
        return Err(Error::input(format!("slot length must be positive, got {slot_hours}")));
    }
    Ok(())
}

pub fn parse_weather<R: Read>(reader: R, source: &Path, slot_hours: f64) -> Result<WeatherSeries> {
    check_slot(slot_hours)?;
    let table = read_table(reader, source, &["t_out_c", "irradiance_kw_m2"])?;
    let mut irr_raw = table.columns[1].clone();
    let mut clamped = 0;
    for v in irr_raw.iter_mut().filter(|v| **v < 0.0) {
        *v = 0.0;
        clamped += 1;
    }
    if clamped > 0 {
        warn!("{}: clamped {clamped} negative irradiance sample(s) to zero", source.display());
    }
    Ok(WeatherSeries {
        start: table.times[0],
        slot_hours,
        t_out_c: resample_linear(&table.times, &table.columns[0], slot_hours),
        irradiance_kw_m2: resample_linear(&table.times, &irr_raw, slot_hours),
        clamped,
    })
}

pub fn load_weather(path: &Path, slot_hours: f64) -> Result<WeatherSeries> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_weather(f, path, slot_hours)
}

pub fn parse_prices<R: Read>(reader: R, source: &Path, slot_hours: f64) -> Result<PriceSeries> {
    check_slot(slot_hours)?;
    let table = read_table(reader, source, &["buy_price"])?;
    if let Some(i) = table.columns[0].iter().position(|p| *p < 0.0) {
        return Err(Error::Validation(format!(
            "{}:{}: buy price must be >= 0",
            source.display(),
            table.lines[i]
        )));
    }
    Ok(PriceSeries {
        start: table.times[0],
        slot_hours,
        buy_price: resample_linear(&table.times, &table.columns[0], slot_hours),
    })
}

pub fn load_prices(path: &Path, slot_hours: f64) -> Result<PriceSeries> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_prices(f, path, slot_hours)
}

/// The `day`-th window of `slots_per_day` samples.
pub fn slice_day<T>(values: &[T], day: usize, slots_per_day: usize) -> Result<&[T]> {
    let lo = day * slots_per_day;
    let hi = lo + slots_per_day;
    if hi > values.len() {
        return Err(Error::input(format!(
            "day {day} needs slots [{lo}, {hi}) but the series has {} slots",
            values.len()
        )));
    }
    Ok(&values[lo..hi])
}

/// Exogenous inputs for one day, extended past midnight by a look-ahead
/// tail so a receding-horizon controller always has a full forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct DayData {
    pub day: usize,
    pub t_out: Vec<f64>,
    pub irradiance: Vec<f64>,
    pub buy_price: Vec<f64>,
}

impl DayData {
    pub fn len(&self) -> usize {
        self.t_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_out.is_empty()
    }
}

/// Aligned weather and price series cut to whole days.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub weather: WeatherSeries,
    pub prices: PriceSeries,
    pub slots_per_day: usize,
}

impl Dataset {
    pub fn new(weather: WeatherSeries, prices: PriceSeries) -> Result<Self> {
        if (weather.slot_hours - prices.slot_hours).abs() > SPACING_TOL_HOURS {
            return Err(Error::Validation("weather and price series use different slot lengths".into()));
        }
        if weather.start != prices.start {
            return Err(Error::Validation(format!(
                "weather starts at {} but prices start at {}",
                weather.start, prices.start
            )));
        }
        let slots_per_day = (24.0 / weather.slot_hours).round() as usize;
        if ((slots_per_day as f64) * weather.slot_hours - 24.0).abs() > SPACING_TOL_HOURS {
            return Err(Error::Validation("slot length must divide a day".into()));
        }
        let ds = Self {
            weather,
            prices,
            slots_per_day,
        };
        if ds.num_days() == 0 {
            return Err(Error::Validation("dataset does not cover a single whole day".into()));
        }
        Ok(ds)
    }

    pub fn num_days(&self) -> usize {
        self.weather.len().min(self.prices.len()) / self.slots_per_day
    }

    pub fn slot_hours(&self) -> f64 {
        self.weather.slot_hours
    }

    /// Day `d` plus `lookahead` further slots, taken from the following day
    /// when it exists and otherwise wrapped from the start of day `d`.
    pub fn day(&self, d: usize, lookahead: usize) -> Result<DayData> {
        if d >= self.num_days() {
            return Err(Error::input(format!("day {d} outside dataset of {} days", self.num_days())));
        }
        let spd = self.slots_per_day;
        let lo = d * spd;
        let avail = self.num_days() * spd;
        let idx = |k: usize| {
            let i = lo + k;
            if i < avail {
                i
            } else {
                lo + (k % spd)
            }
        };
        let pick = |v: &[f64]| (0..spd + lookahead).map(|k| v[idx(k)]).collect::<Vec<_>>();
        Ok(DayData {
            day: d,
            t_out: pick(&self.weather.t_out_c),
            irradiance: pick(&self.weather.irradiance_kw_m2),
            buy_price: pick(&self.prices.buy_price),
        })
    }

    /// Bundled synthetic dataset (25 days).
    pub fn bundled(slot_hours: f64) -> Result<Self> {
        let weather = parse_weather(synthetic::BUNDLED_WEATHER.as_bytes(), Path::new("<bundled weather>"), slot_hours)?;
        let prices = parse_prices(synthetic::BUNDLED_PRICES.as_bytes(), Path::new("<bundled prices>"), slot_hours)?;
        Self::new(weather, prices)
    }

    /// Stable digest of the data seen on the given days, used to check that
    /// reports being compared were evaluated on the same inputs.
    pub fn fingerprint(&self, days: &[usize]) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.slot_hours().to_le_bytes());
        for &d in days {
            h.update((d as u64).to_le_bytes());
            if let Ok(day) = self.day(d, 0) {
                for v in day.t_out.iter().chain(&day.irradiance).chain(&day.buy_price) {
                    h.update(v.to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Invented synthetic series shaped like a hot, humid tropical summer:
/// diurnal temperature between roughly 24 °C (05:00) and 36 °C (14:00),
/// clipped-sine irradiance over 06:00–18:00 peaking near 0.9 kW/m², and a
/// two-tier tariff with an afternoon peak block.
pub mod synthetic {
    use std::f64::consts::PI;
    use std::fmt::Write;

    use chrono::{DateTime, Duration};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub const BUNDLED_WEATHER: &str = include_str!("../data/weather_synthetic.csv");
    pub const BUNDLED_PRICES: &str = include_str!("../data/prices_synthetic.csv");
    pub const BUNDLED_SEED: u64 = 2021;
    pub const BUNDLED_DAYS: usize = 25;
    pub const START: &str = "2023-05-01T00:00:00+05:30";

    pub const OFF_PEAK_PRICE: f64 = 0.10;
    pub const PEAK_PRICE: f64 = 0.24;
    pub const PEAK_START_HOUR: f64 = 14.0;
    pub const PEAK_END_HOUR: f64 = 20.0;

    /// Nominal outdoor temperature at hour-of-day `h`.
    pub fn diurnal_temp(h: f64, mid: f64, amp: f64) -> f64 {
        if (5.0..=14.0).contains(&h) {
            mid - amp * (PI * (h - 5.0) / 9.0).cos()
        } else {
            let s = (h - 14.0).rem_euclid(24.0);
            mid + amp * (PI * s / 15.0).cos()
        }
    }

    pub fn clear_sky_irradiance(h: f64) -> f64 {
        if (6.0..=18.0).contains(&h) {
            (0.9 * (PI * (h - 6.0) / 12.0).sin()).max(0.0)
        } else {
            0.0
        }
    }

    pub fn price_at(h: f64) -> f64 {
        if (PEAK_START_HOUR..PEAK_END_HOUR).contains(&h) {
            PEAK_PRICE
        } else {
            OFF_PEAK_PRICE
        }
    }

    fn timestamp(slot: usize, slot_hours: f64) -> String {
        let start = DateTime::parse_from_rfc3339(START).expect("valid constant");
        let t = start + Duration::milliseconds((slot as f64 * slot_hours * 3_600_000.0).round() as i64);
        t.to_rfc3339()
    }

    /// Weather CSV for `days` days on a `slot_hours` grid.
    pub fn weather_csv(days: usize, slot_hours: f64, seed: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, 0.3).expect("valid");
        let spd = (24.0 / slot_hours).round() as usize;
        let mut out = String::from("timestamp,t_out_c,irradiance_kw_m2\n");
        for d in 0..days {
            let offset = Normal::new(0.0, 1.0).expect("valid").sample(&mut rng);
            let amp = 6.0 * rng.random_range(0.85..1.15);
            let cloud = rng.random_range(0.55..1.0);
            for k in 0..spd {
                let h = k as f64 * slot_hours;
                let t = diurnal_temp(h, 30.0 + offset, amp) + jitter.sample(&mut rng);
                let r = clear_sky_irradiance(h) * cloud;
                writeln!(out, "{},{:.3},{:.4}", timestamp(d * spd + k, slot_hours), t, r).expect("string write");
            }
        }
        out
    }

    pub fn prices_csv(days: usize, slot_hours: f64) -> String {
        let spd = (24.0 / slot_hours).round() as usize;
        let mut out = String::from("timestamp,buy_price\n");
        for d in 0..days {
            for k in 0..spd {
                let h = k as f64 * slot_hours;
                writeln!(out, "{},{:.4}", timestamp(d * spd + k, slot_hours), price_at(h)).expect("string write");
            }
        }
        out
    }
}
