//! Per-step episode records and their CSV form.
//!
//! A trace file starts with one `#` metadata line (config digest, initial
//! heading and lift), followed by a header and one row per environment step.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::env::Outcome;
use crate::error::{Error, Result};

pub const EPISODE_COLUMNS: [&str; 15] = [
    "step",
    "t",
    "x",
    "y",
    "rel_x",
    "rel_y",
    "speed",
    "lift",
    "brake_action",
    "lift_action",
    "reward_total",
    "reward_progress",
    "reward_lift",
    "reward_time",
    "outcome",
];

pub const EMULATION_COLUMNS: [&str; 7] = [
    "true_x",
    "true_y",
    "delayed_x",
    "delayed_y",
    "pid_command",
    "pedal_fraction",
    "overshoot",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmulationColumns {
    pub true_x: f64,
    pub true_y: f64,
    pub delayed_x: f64,
    pub delayed_y: f64,
    pub pid_command: f64,
    pub pedal_fraction: f64,
    /// Signed displacement past the target along the initial heading.
    pub overshoot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub rel_x: f64,
    pub rel_y: f64,
    pub speed: f64,
    pub lift: f64,
    pub brake_action: bool,
    pub lift_action: bool,
    pub reward_total: f64,
    pub reward_progress: f64,
    pub reward_lift: f64,
    pub reward_time: f64,
    pub outcome: Outcome,
    pub emulation: Option<EmulationColumns>,
}

impl TraceRow {
    pub fn distance(&self) -> f64 {
        self.rel_x.hypot(self.rel_y)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub config_digest: String,
    pub heading: f64,
    pub start_lift: f64,
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.rows.iter().map(|r| r.reward_total).sum()
    }

    pub fn outcome(&self) -> Outcome {
        self.rows.last().map_or(Outcome::Running, |r| r.outcome)
    }

    pub fn final_distance(&self) -> Option<f64> {
        self.rows.last().map(TraceRow::distance)
    }

    /// Time of the first step with the brake commanded.
    pub fn brake_onset(&self) -> Option<f64> {
        self.rows.iter().find(|r| r.brake_action).map(|r| r.t)
    }

    pub fn final_overshoot(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.emulation).map(|e| e.overshoot)
    }

    fn has_emulation(&self) -> bool {
        self.rows.first().is_some_and(|r| r.emulation.is_some())
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut cols = EPISODE_COLUMNS.to_vec();
        if self.has_emulation() {
            cols.extend(EMULATION_COLUMNS);
        }
        cols
    }

    /// Numeric columns in header order, with `step` and `outcome` excluded.
    fn numeric_row(row: &TraceRow) -> Vec<f64> {
        let mut v = vec![
            row.t,
            row.x,
            row.y,
            row.rel_x,
            row.rel_y,
            row.speed,
            row.lift,
            f64::from(u8::from(row.brake_action)),
            f64::from(u8::from(row.lift_action)),
            row.reward_total,
            row.reward_progress,
            row.reward_lift,
            row.reward_time,
        ];
        if let Some(e) = row.emulation {
            v.extend([
                e.true_x,
                e.true_y,
                e.delayed_x,
                e.delayed_y,
                e.pid_command,
                e.pedal_fraction,
                e.overshoot,
            ]);
        }
        v
    }

    /// Writes the trace as CSV. With `normalized`, every numeric column
    /// except `step` is min-max scaled to [0, 1]; constant columns become 0.
    pub fn write_csv<W: Write>(&self, out: W, normalized: bool) -> Result<()> {
        let mut out = out;
        writeln!(
            out,
            "# config_digest={} heading={} start_lift={} normalized={}",
            self.config_digest,
            self.heading,
            self.start_lift,
            u8::from(normalized)
        )
        .map_err(|e| Error::io("<trace>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header()).map_err(csv_err)?;

        let numeric: Vec<Vec<f64>> = self.rows.iter().map(Self::numeric_row).collect();
        let width = numeric.first().map_or(0, Vec::len);
        let ranges: Vec<(f64, f64)> = (0..width)
            .map(|c| {
                numeric.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[c]), hi.max(r[c]))
                })
            })
            .collect();

        for (row, values) in self.rows.iter().zip(&numeric) {
            let mut record = Vec::with_capacity(width + 2);
            record.push(row.step.to_string());
            for (c, &v) in values.iter().enumerate() {
                let v = if normalized {
                    let (lo, hi) = ranges[c];
                    if hi > lo {
                        (v - lo) / (hi - lo)
                    } else {
                        0.0
                    }
                } else {
                    v
                };
                // outcome sits between the episode and emulation columns
                if c == 13 {
                    record.push(row.outcome.name().to_string());
                }
                record.push(v.to_string());
            }
            if values.len() == 13 {
                record.push(row.outcome.name().to_string());
            }
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self, normalized: bool) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, normalized)?;
        String::from_utf8(buf).map_err(|e| Error::format(e.to_string()))
    }

    /// Parses a raw (non-normalized) trace written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut text = String::new();
        let mut input = input;
        input
            .read_to_string(&mut text)
            .map_err(|e| Error::io("<trace>", e))?;
        let (meta_line, body) = text
            .split_once('\n')
            .ok_or_else(|| Error::format("trace is empty"))?;
        let meta = parse_meta(meta_line)?;
        if meta.get("normalized").map(String::as_str) == Some("1") {
            return Err(Error::format("normalized traces cannot be read back"));
        }
        let number = |key: &str| -> Result<f64> {
            meta.get(key)
                .ok_or_else(|| Error::format(format!("trace metadata lacks `{key}`")))?
                .parse()
                .map_err(|_| Error::format(format!("trace metadata `{key}` is not a number")))
        };
        let mut trace = EpisodeTrace {
            config_digest: meta.get("config_digest").cloned().unwrap_or_default(),
            heading: number("heading")?,
            start_lift: number("start_lift")?,
            rows: Vec::new(),
        };

        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let headers = reader.headers().map_err(csv_err)?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let emulated = if names == EPISODE_COLUMNS {
            false
        } else if names.len() == EPISODE_COLUMNS.len() + EMULATION_COLUMNS.len()
            && names[..EPISODE_COLUMNS.len()] == EPISODE_COLUMNS
            && names[EPISODE_COLUMNS.len()..] == EMULATION_COLUMNS
        {
            true
        } else {
            return Err(Error::format(format!("unexpected trace header: {}", names.join(","))));
        };

        for (i, record) in reader.records().enumerate() {
            let line = i + 3;
            let record = record.map_err(csv_err)?;
            let f = |c: usize| -> Result<f64> {
                record
                    .get(c)
                    .ok_or_else(|| Error::format(format!("row {line}: missing column {c}")))?
                    .parse::<f64>()
                    .map_err(|_| Error::format(format!("row {line}: column `{}` is not a number", names[c])))
            };
            let flag = |c: usize| -> Result<bool> {
                match f(c)? {
                    v if v == 0.0 => Ok(false),
                    v if v == 1.0 => Ok(true),
                    v => Err(Error::format(format!("row {line}: action column holds {v}"))),
                }
            };
            let step = record
                .get(0)
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| Error::format(format!("row {line}: bad step")))?;
            let outcome = Outcome::from_name(record.get(14).unwrap_or(""))
                .map_err(|e| Error::format(format!("row {line}: {e}")))?;
            let emulation = if emulated {
                Some(EmulationColumns {
                    true_x: f(15)?,
                    true_y: f(16)?,
                    delayed_x: f(17)?,
                    delayed_y: f(18)?,
                    pid_command: f(19)?,
                    pedal_fraction: f(20)?,
                    overshoot: f(21)?,
                })
            } else {
                None
            };
            trace.rows.push(TraceRow {
                step,
                t: f(1)?,
                x: f(2)?,
                y: f(3)?,
                rel_x: f(4)?,
                rel_y: f(5)?,
                speed: f(6)?,
                lift: f(7)?,
                brake_action: flag(8)?,
                lift_action: flag(9)?,
                reward_total: f(10)?,
                reward_progress: f(11)?,
                reward_lift: f(12)?,
                reward_time: f(13)?,
                outcome,
                emulation,
            });
        }
        Ok(trace)
    }
}

fn parse_meta(line: &str) -> Result<BTreeMap<String, String>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::format("trace must start with a `#` metadata line"))?;
    body.split_whitespace()
        .map(|pair| {
            pair.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::format(format!("bad trace metadata entry `{pair}`")))
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::format(format!("csv: {e}"))
}
