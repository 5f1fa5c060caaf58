use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, TrainError};

pub const CSV_HEADER: &str = "epoch,train_loss,train_dice,val_dice,seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean Dice loss over the epoch's minibatches.
    pub train_loss: f64,
    /// `1 − train_loss`.
    pub train_dice: f64,
    /// Mean hard Dice on the validation split; `None` on epochs that skip
    /// validation.
    pub val_dice: Option<f64>,
    pub seconds: f64,
}

impl EpochLog {
    /// Equality ignoring wall time.
    pub fn same_metrics(&self, other: &EpochLog) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.train_dice.to_bits() == other.train_dice.to_bits()
            && self.val_dice.map(f64::to_bits) == other.val_dice.map(f64::to_bits)
    }
}

/// Floats are written with Rust's shortest round-trip formatting, so reading
/// the CSV back recovers every value bit for bit.
pub fn to_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for l in logs {
        let val = l.val_dice.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            l.epoch, l.train_loss, l.train_dice, val, l.seconds
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<EpochLog>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(TrainError::Config(format!("epoch log must start with {CSV_HEADER:?}")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || TrainError::Config(format!("malformed epoch log row {}: {line:?}", i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        out.push(EpochLog {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_loss: num(f[1])?,
            train_dice: num(f[2])?,
            val_dice: if f[3].is_empty() { None } else { Some(num(f[3])?) },
            seconds: num(f[4])?,
        });
    }
    Ok(out)
}

pub fn write_csv(path: &Path, logs: &[EpochLog]) -> Result<()> {
    fs::write(path, to_csv(logs))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<EpochLog>> {
    parse_csv(&fs::read_to_string(path)?)
}
