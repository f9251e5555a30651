//! Per-run training metrics with a fixed CSV schema.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the metrics CSV. Never reorder.
pub const CSV_HEADER: [&str; 13] = [
    "global_step",
    "episode_return_task",
    "episode_energy_sum",
    "critic_loss_task",
    "critic_loss_energy",
    "actor_loss_task",
    "actor_loss_energy",
    "beta_scale",
    "cos_g",
    "norm_gR",
    "norm_gE_perp",
    "eval_return_mean",
    "eval_energy_mean",
];

/// One logging row. Unset fields are written as empty cells; the eval fields
/// are set only on evaluation rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub global_step: u64,
    pub episode_return_task: Option<f64>,
    pub episode_energy_sum: Option<f64>,
    pub critic_loss_task: Option<f64>,
    pub critic_loss_energy: Option<f64>,
    pub actor_loss_task: Option<f64>,
    pub actor_loss_energy: Option<f64>,
    pub beta_scale: Option<f64>,
    pub cos_g: Option<f64>,
    pub norm_g_r: Option<f64>,
    pub norm_g_e_perp: Option<f64>,
    pub eval_return_mean: Option<f64>,
    pub eval_energy_mean: Option<f64>,
}

impl MetricsRow {
    pub fn new(global_step: u64) -> Self {
        Self {
            global_step,
            ..Self::default()
        }
    }

    pub fn is_eval(&self) -> bool {
        self.eval_return_mean.is_some()
    }

    fn optional(&self) -> [Option<f64>; 12] {
        [
            self.episode_return_task,
            self.episode_energy_sum,
            self.critic_loss_task,
            self.critic_loss_energy,
            self.actor_loss_task,
            self.actor_loss_energy,
            self.beta_scale,
            self.cos_g,
            self.norm_g_r,
            self.norm_g_e_perp,
            self.eval_return_mean,
            self.eval_energy_mean,
        ]
    }

    fn record(&self) -> Vec<String> {
        let mut out = vec![self.global_step.to_string()];
        out.extend(self.optional().iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        out
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Csv(format!("expected {} columns, got {}", CSV_HEADER.len(), rec.len())));
        }
        let cell = |i: usize| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::Csv(format!("bad number `{s}` in {}", CSV_HEADER[i])))
        };
        Ok(Self {
            global_step: rec[0]
                .parse()
                .map_err(|_| Error::Csv(format!("bad global_step `{}`", &rec[0])))?,
            episode_return_task: cell(1)?,
            episode_energy_sum: cell(2)?,
            critic_loss_task: cell(3)?,
            critic_loss_energy: cell(4)?,
            actor_loss_task: cell(5)?,
            actor_loss_energy: cell(6)?,
            beta_scale: cell(7)?,
            cos_g: cell(8)?,
            norm_g_r: cell(9)?,
            norm_g_e_perp: cell(10)?,
            eval_return_mean: cell(11)?,
            eval_energy_mean: cell(12)?,
        })
    }
}

/// Ordered metrics rows, optionally streamed to a CSV sink as they arrive.
#[derive(Default)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
    sink: Option<csv::Writer<Box<dyn Write + Send>>>,
}

impl std::fmt::Debug for MetricsLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricsLog")
            .field("rows", &self.rows)
            .field("streaming", &self.sink.is_some())
            .finish()
    }
}

impl Clone for MetricsLog {
    /// Clones the rows only; the sink stays with the original.
    fn clone(&self) -> Self {
        Self {
            rows: self.rows.clone(),
            sink: None,
        }
    }
}

impl PartialEq for MetricsLog {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
    }
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Streams every pushed row to `out`, header first.
    pub fn with_sink(out: Box<dyn Write + Send>) -> Result<Self> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        w.flush()?;
        Ok(Self {
            rows: Vec::new(),
            sink: Some(w),
        })
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn last_eval(&self) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.is_eval())
    }

    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.global_step <= last.global_step {
                return Err(Error::InvalidArgument(format!(
                    "metrics step {} does not follow {}",
                    row.global_step, last.global_step
                )));
            }
        }
        if let Some(w) = &mut self.sink {
            w.write_record(row.record())?;
            w.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            w.write_record(row.record())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::Csv(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
        }
        let mut log = Self::new();
        for rec in r.records() {
            log.push(MetricsRow::from_record(&rec?)?)?;
        }
        Ok(log)
    }
}
