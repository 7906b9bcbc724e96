use std::fmt::Write;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean quality BCE over the epoch's batches.
    pub loss_q: f64,
    /// Mean domain BCE; `None` when no domain loss is trained.
    pub loss_d: Option<f64>,
    /// Fraction of patches the domain head classified correctly.
    pub domain_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub epochs: Vec<EpochStats>,
}

pub const CSV_HEADER: &str = "epoch,loss_q,loss_d,domain_acc,seconds";

impl RunLog {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = format!("{CSV_HEADER}\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{},{},{:.3}",
                e.epoch,
                e.loss_q,
                opt(e.loss_d),
                opt(e.domain_acc),
                e.seconds
            );
        }
        out
    }
}
