//! Per-run telemetry as CSV.

use std::io::{Read, Write};

pub const HEADER: [&str; 5] = ["iteration", "loss", "train_acc", "test_acc", "seconds"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

pub fn write_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            format!("{:?}", r.loss),
            format!("{:?}", r.train_acc),
            format!("{:?}", r.test_acc),
            format!("{:.3}", r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>, csv::Error> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let parse = |i: usize| field(i).parse::<f64>().unwrap_or(f64::NAN);
        out.push(MetricsRecord {
            iteration: field(0).parse().unwrap_or(0),
            loss: parse(1),
            train_acc: parse(2),
            test_acc: parse(3),
            seconds: parse(4),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_for_no_records() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,loss,train_acc,test_acc,seconds\n");
    }

    #[test]
    fn records_round_trip() {
        let recs = [
            MetricsRecord {
                iteration: 10,
                loss: 0.713_263_841_509_172_6,
                train_acc: 0.5,
                test_acc: 0.25,
                seconds: 1.25,
            },
            MetricsRecord {
                iteration: 20,
                loss: 1e-9,
                train_acc: 1.0,
                test_acc: 0.96875,
                seconds: 2.5,
            },
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 5));
        assert!(text.ends_with('\n'));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), recs);
    }
}
