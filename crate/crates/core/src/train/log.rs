//! Per-epoch metrics log, exported as tab-separated text.
//!
//! Lines starting with `#` carry the run configuration; the first other line
//! is the header `epoch train_loss train_acc val_loss val_acc lr`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\tlr";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate after this epoch's scheduler update.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    /// Free text written as leading `#` lines, typically the run configuration.
    pub preamble: String,
    records: Vec<EpochRecord>,
}

impl EventLog {
    pub fn new(preamble: impl Into<String>) -> Self {
        Self {
            preamble: preamble.into(),
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record; epochs must strictly increase.
    pub fn append(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::invalid(format!(
                    "event log epoch {} does not follow epoch {}",
                    record.epoch, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Lowest validation loss and its record.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss).then(a.epoch.cmp(&b.epoch)))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for line in self.preamble.lines() {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "{LOG_HEADER}");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut log = EventLog::default();
        let mut preamble = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::invalid(format!("event log line {}: {what}", lineno + 1));
            if let Some(rest) = line.strip_prefix('#') {
                preamble.push(rest.strip_prefix(' ').unwrap_or(rest));
                continue;
            }
            if !header_seen {
                if line != LOG_HEADER {
                    return Err(bad("missing header row"));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(bad(&format!("expected 6 fields, got {}", fields.len())));
            }
            let num = |k: usize| fields[k].parse::<f64>().map_err(|_| bad(&format!("bad number {:?}", fields[k])));
            let epoch = fields[0].parse::<usize>().map_err(|_| bad("bad epoch"))?;
            log.append(EpochRecord {
                epoch,
                train_loss: num(1)?,
                train_acc: num(2)?,
                val_loss: num(3)?,
                val_acc: num(4)?,
                lr: num(5)?,
            })?;
        }
        log.preamble = preamble.join("\n");
        Ok(log)
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn import(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}
