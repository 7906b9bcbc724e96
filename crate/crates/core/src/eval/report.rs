use std::fmt::Write;

/// Correlations of one model on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub n: usize,
    pub plcc: f64,
    pub srocc: f64,
    pub config: Option<u8>,
    pub checkpoint: String,
}

impl EvalReport {
    fn row_key(&self) -> (Option<u8>, &str) {
        (self.config, &self.checkpoint)
    }
}

fn config_label(c: Option<u8>) -> String {
    c.map_or_else(|| "-".to_owned(), |c| c.to_string())
}

/// Fixed-width table with one row per (config, checkpoint) and one
/// PLCC/SROCC column pair per dataset, both in first-appearance order.
pub fn render_report(reports: &[EvalReport]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut rows: Vec<(Option<u8>, &str)> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !rows.contains(&r.row_key()) {
            rows.push(r.row_key());
        }
    }
    let ckpt_w = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max("Checkpoint".len());
    let pair_w = datasets.iter().map(|d| d.len()).max().unwrap_or(0).max(15);

    let mut out = String::new();
    let _ = write!(out, "{:<7} {:<ckpt_w$}", "Config.", "Checkpoint");
    for d in &datasets {
        let _ = write!(out, " | {d:^pair_w$}");
    }
    out.push('\n');
    let _ = write!(out, "{:<7} {:<ckpt_w$}", "", "");
    for _ in &datasets {
        let _ = write!(out, " | {:^pair_w$}", format!("{:>7} {:>7}", "PLCC", "SROCC"));
    }
    out.push('\n');
    for &(config, ckpt) in &rows {
        let _ = write!(out, "{:<7} {:<ckpt_w$}", config_label(config), ckpt);
        for d in &datasets {
            let cell = reports
                .iter()
                .find(|r| r.dataset == *d && r.row_key() == (config, ckpt))
                .map_or_else(|| format!("{:>7} {:>7}", "-", "-"), |r| format!("{:>7.3} {:>7.3}", r.plcc, r.srocc));
            let _ = write!(out, " | {cell:^pair_w$}");
        }
        out.push('\n');
    }
    out
}

pub const CSV_HEADER: &str = "dataset,config,n,plcc,srocc";

pub fn render_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{},{}", r.dataset, config_label(r.config), r.n, r.plcc, r.srocc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(dataset: &str, config: u8, plcc: f64, srocc: f64) -> EvalReport {
        EvalReport { dataset: dataset.into(), n: 18, plcc, srocc, config: Some(config), checkpoint: format!("c{config}") }
    }

    #[test]
    fn one_report_one_row() {
        let text = render_report(&[rep("MD72", 4, 0.81, 0.812)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].contains("0.810"), "{text}");
        assert!(lines[2].contains("0.812"));
        assert!(lines[1].contains("PLCC") && lines[1].contains("SROCC"));
    }

    #[test]
    fn four_configs_two_datasets() {
        let mut reports = Vec::new();
        for c in 1..=4u8 {
            reports.push(rep("MD72", c, 0.5 + c as f64 / 10.0, 0.6));
            reports.push(rep("TID13", c, 0.3, 0.4 + c as f64 / 10.0));
        }
        let text = render_report(&reports);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2 + 4);
        for (i, line) in lines[2..].iter().enumerate() {
            assert!(line.starts_with(&(i + 1).to_string()));
            assert_eq!(line.matches('|').count(), 2);
        }
        assert!(lines[0].contains("MD72") && lines[0].contains("TID13"));
        let widths: Vec<usize> = lines.iter().map(|l| l.len()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{widths:?}");
    }

    #[test]
    fn csv_layout() {
        let csv = render_csv(&[rep("syn", 2, 0.75, 0.5)]);
        assert_eq!(csv, "dataset,config,n,plcc,srocc\nsyn,2,18,0.75,0.5\n");
    }
}
