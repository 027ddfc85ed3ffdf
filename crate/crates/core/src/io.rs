//! CSV and JSON formats shared by the library and the CLI.
//!
//! | file            | columns                                                      |
//! |-----------------|--------------------------------------------------------------|
//! | loss trace      | `step,loss[,lr]`                                             |
//! | learning rates  | `step,lr`                                                    |
//! | bound trace     | `tau,bound`                                                  |
//! | run records     | `eta_ref,T_or_tokens,unit,final_loss[,batch_size][,model_size]` |
//! | prediction      | `T,predicted_loss`                                           |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Writer};

use crate::bound::BoundTrace;
use crate::error::{Error, Result};
use crate::fitter::LossTrace;
use crate::scaling::{HorizonUnit, RunRecord};
use crate::schedule::{LearningRateSequence, ScheduleSpec};

/// Column lookup over a CSV header with line-numbered parse errors.
struct Columns {
    names: Vec<String>,
}

impl Columns {
    fn new(headers: &StringRecord) -> Self {
        Columns {
            names: headers.iter().map(|h| h.trim().to_string()).collect(),
        }
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.find(name).ok_or_else(|| Error::Schema { column: name.into() })
    }
}

fn line_of(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn field<'r>(record: &'r StringRecord, idx: usize, column: &str) -> Result<&'r str> {
    record.get(idx).map(str::trim).ok_or_else(|| Error::Parse {
        line: line_of(record),
        message: format!("missing value for column `{column}`"),
    })
}

fn parse<T: FromStr>(record: &StringRecord, idx: usize, column: &str) -> Result<T> {
    let raw = field(record, idx, column)?;
    raw.parse().map_err(|_| Error::Parse {
        line: line_of(record),
        message: format!("cannot parse `{raw}` in column `{column}`"),
    })
}

fn parse_opt<T: FromStr>(record: &StringRecord, idx: Option<usize>, column: &str) -> Result<Option<T>> {
    match idx {
        None => Ok(None),
        Some(i) if record.get(i).is_none_or(|v| v.trim().is_empty()) => Ok(None),
        Some(i) => parse(record, i, column).map(Some),
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn records<R: Read>(rdr: &mut csv::Reader<R>) -> impl Iterator<Item = Result<StringRecord>> + '_ {
    rdr.records().map(|r| {
        r.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })
    })
}

/// Read a `step,loss[,lr]` trace with the default smoothing window.
pub fn read_loss_trace<R: Read>(input: R) -> Result<LossTrace> {
    let mut rdr = reader(input);
    let cols = Columns::new(rdr.headers()?);
    let (step, loss) = (cols.require("step")?, cols.require("loss")?);
    let lr = cols.find("lr");
    let (mut steps, mut losses, mut lrs) = (Vec::new(), Vec::new(), Vec::new());
    for rec in records(&mut rdr) {
        let rec = rec?;
        steps.push(parse::<u64>(&rec, step, "step")?);
        losses.push(parse::<f64>(&rec, loss, "loss")?);
        if let Some(i) = lr {
            lrs.push(parse::<f64>(&rec, i, "lr")?);
        }
    }
    LossTrace::new(steps, losses, lr.map(|_| lrs))
}

pub fn write_loss_trace<W: Write>(out: W, trace: &LossTrace) -> Result<()> {
    let mut w = Writer::from_writer(out);
    match &trace.lrs {
        Some(lrs) => {
            w.write_record(["step", "loss", "lr"])?;
            for ((s, l), e) in trace.steps.iter().zip(&trace.losses).zip(lrs) {
                w.write_record([s.to_string(), l.to_string(), e.to_string()])?;
            }
        }
        None => {
            w.write_record(["step", "loss"])?;
            for (s, l) in trace.steps.iter().zip(&trace.losses) {
                w.write_record([s.to_string(), l.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a `step,lr` file. Steps must be `1..=T` in order.
pub fn read_lrs<R: Read>(input: R) -> Result<LearningRateSequence> {
    let mut rdr = reader(input);
    let cols = Columns::new(rdr.headers()?);
    let (step, lr) = (cols.require("step")?, cols.require("lr")?);
    let mut values = Vec::new();
    for rec in records(&mut rdr) {
        let rec = rec?;
        let s: u64 = parse(&rec, step, "step")?;
        if s != values.len() as u64 + 1 {
            return Err(Error::Parse {
                line: line_of(&rec),
                message: format!("expected step {}, got {s}", values.len() + 1),
            });
        }
        values.push(parse::<f64>(&rec, lr, "lr")?);
    }
    LearningRateSequence::new(values)
}

pub fn write_lrs<W: Write>(out: W, lrs: &LearningRateSequence) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record(["step", "lr"])?;
    for (i, e) in lrs.as_slice().iter().enumerate() {
        w.write_record([(i + 1).to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bound_trace<W: Write>(out: W, trace: &BoundTrace) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record(["tau", "bound"])?;
    for (t, v) in trace.tau_grid.iter().zip(&trace.values) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Read run records. `eta_ref`, `batch_size` and `model_size` may be
/// blank or absent; `unit` defaults to `steps` when the column is absent.
pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rdr = reader(input);
    let cols = Columns::new(rdr.headers()?);
    let horizon = cols.require("T_or_tokens")?;
    let loss = cols.require("final_loss")?;
    let eta = cols.find("eta_ref");
    let unit = cols.find("unit");
    let batch = cols.find("batch_size");
    let model = cols.find("model_size");
    let eta_peak = cols.find("eta_peak");
    let mut out = Vec::new();
    for rec in records(&mut rdr) {
        let rec = rec?;
        let unit = match unit {
            Some(i) => field(&rec, i, "unit")?
                .parse::<HorizonUnit>()
                .map_err(|e| Error::Parse {
                    line: line_of(&rec),
                    message: e.to_string(),
                })?,
            None => HorizonUnit::Steps,
        };
        let record = RunRecord {
            eta_ref: parse_opt(&rec, eta, "eta_ref")?,
            horizon: parse(&rec, horizon, "T_or_tokens")?,
            unit,
            batch_size: parse_opt(&rec, batch, "batch_size")?,
            model_size: parse_opt(&rec, model, "model_size")?,
            eta_peak: parse_opt(&rec, eta_peak, "eta_peak")?,
            final_loss: parse(&rec, loss, "final_loss")?,
        };
        record.validate().map_err(|e| Error::Parse {
            line: line_of(&rec),
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record([
        "eta_ref",
        "T_or_tokens",
        "unit",
        "final_loss",
        "batch_size",
        "model_size",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in records {
        w.write_record([
            opt(r.eta_ref.map(|v| v.to_string())),
            r.horizon.to_string(),
            r.unit.to_string(),
            r.final_loss.to_string(),
            opt(r.batch_size.map(|v| v.to_string())),
            opt(r.model_size.map(|v| v.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_prediction<W: Write>(out: W, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record(["T", "predicted_loss"])?;
    for (t, l) in rows {
        w.write_record([t.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a schedule given either inline (starting with `{`) or as a path
/// to a JSON file.
pub fn read_schedule(arg: &str) -> Result<ScheduleSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(Path::new(arg))?
    };
    let spec: ScheduleSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_trace_round_trip() {
        let trace = LossTrace::new(vec![1, 2, 5], vec![3.0, 2.5, 0.125], Some(vec![0.1, 0.1, 0.05])).unwrap();
        let mut buf = Vec::new();
        write_loss_trace(&mut buf, &trace).unwrap();
        assert_eq!(read_loss_trace(buf.as_slice()).unwrap(), trace);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let csv = "step,loss\n1,0.5\n2,abc\n";
        match read_loss_trace(csv.as_bytes()).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("loss"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "step,value\n1,0.5\n";
        assert!(matches!(read_loss_trace(csv.as_bytes()), Err(Error::Schema { column }) if column == "loss"));
    }

    #[test]
    fn lrs_round_trip_and_order_check() {
        let lrs = ScheduleSpec::cosine_decay(0.3, 7).eval_discrete().unwrap();
        let mut buf = Vec::new();
        write_lrs(&mut buf, &lrs).unwrap();
        assert_eq!(read_lrs(buf.as_slice()).unwrap(), lrs);
        assert!(read_lrs("step,lr\n2,0.1\n".as_bytes()).is_err());
    }

    #[test]
    fn records_round_trip() {
        let csv = "eta_ref,T_or_tokens,unit,final_loss,batch_size,model_size\n\
                   0.3,1000,steps,2.5,,\n\
                   ,3e11,tokens,2.2,8,2.004e9\n";
        let recs = read_records(csv.as_bytes()).unwrap();
        assert_eq!(recs[0].eta_ref, Some(0.3));
        assert_eq!(recs[1].eta_ref, None);
        assert_eq!(recs[1].unit, HorizonUnit::Tokens);
        assert_eq!(recs[1].batch_size, Some(8));
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn bad_unit_is_a_parse_error() {
        let csv = "eta_ref,T_or_tokens,unit,final_loss\n1,10,epochs,1.0\n";
        assert!(matches!(
            read_records(csv.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn inline_schedule() {
        let spec = read_schedule(r#"{"kind":"wsd","eta_peak":0.5,"T":100,"c":0.8}"#).unwrap();
        assert_eq!(spec, ScheduleSpec::wsd(0.5, 100, 0.8));
        assert!(read_schedule(r#"{"kind":"wsd","eta_peak":0.5,"T":100}"#).is_err());
    }
}
