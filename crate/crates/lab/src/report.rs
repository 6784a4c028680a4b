//! Before/after comparison of every evaluated condition, in markdown and
//! JSON. Both forms print numbers in shortest round-trip notation, so they
//! agree exactly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::pipeline::{EvalRecord, Victim};

/// Row order of the comparison table.
pub const CONDITIONS: [&str; 6] = ["clean", "heuristic", "learned", "random_masker", "reward_based", "adversary"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub before: Option<f64>,
    pub after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub victim: Victim,
    pub high: f64,
    pub low: f64,
    pub average: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub environment: String,
    pub seed: u64,
    pub episodes: Option<usize>,
    pub win_rates: Vec<ConditionRow>,
    /// Clean-condition communication frequency per victim.
    pub frequency: Vec<FrequencyRow>,
    /// Conditions with no evaluation behind them.
    pub gaps: Vec<String>,
}

impl Report {
    pub fn build(environment: &str, seed: u64, records: &[EvalRecord]) -> Self {
        let find = |v: Victim, c: &str| records.iter().find(|r| r.victim == v && r.condition == c);
        let mut gaps = Vec::new();
        let win_rates = CONDITIONS
            .iter()
            .map(|&c| {
                let mut cell = |v: Victim| {
                    let r = find(v, c).map(|r| r.win_rate);
                    if r.is_none() {
                        gaps.push(format!("{c}/{}", v.name()));
                    }
                    r
                };
                ConditionRow {
                    condition: c.to_string(),
                    before: cell(Victim::Before),
                    after: cell(Victim::After),
                }
            })
            .collect();
        let frequency = [Victim::Before, Victim::After]
            .into_iter()
            .filter_map(|v| {
                find(v, "clean").map(|r| FrequencyRow {
                    victim: v,
                    high: r.summary.high,
                    low: r.summary.low,
                    average: r.summary.average,
                    sd: r.summary.sd,
                })
            })
            .collect();
        Self {
            version: crate::checkpoint::FORMAT_VERSION,
            environment: environment.to_string(),
            seed,
            episodes: records.first().map(|r| r.episodes),
            win_rates,
            frequency,
            gaps,
        }
    }

    pub fn to_markdown(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_else(|| "n/a".into());
        let mut s = String::new();
        writeln!(s, "# Evaluation report").unwrap();
        writeln!(s).unwrap();
        writeln!(s, "environment: {}", self.environment).unwrap();
        writeln!(s, "seed: {}", self.seed).unwrap();
        writeln!(s, "episodes per condition: {}", self.episodes.map(|e| e.to_string()).unwrap_or_else(|| "n/a".into())).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "## Win rate").unwrap();
        writeln!(s).unwrap();
        writeln!(s, "| condition | before | after |").unwrap();
        writeln!(s, "|---|---|---|").unwrap();
        for r in &self.win_rates {
            writeln!(s, "| {} | {} | {} |", r.condition, cell(r.before), cell(r.after)).unwrap();
        }
        writeln!(s).unwrap();
        writeln!(s, "## Communication frequency (clean)").unwrap();
        writeln!(s).unwrap();
        writeln!(s, "| victim | High | Low | Average | SD |").unwrap();
        writeln!(s, "|---|---|---|---|---|").unwrap();
        for f in &self.frequency {
            writeln!(s, "| {} | {} | {} | {} | {} |", f.victim.name(), f.high, f.low, f.average, f.sd).unwrap();
        }
        if !self.gaps.is_empty() {
            writeln!(s).unwrap();
            writeln!(s, "## Missing").unwrap();
            writeln!(s).unwrap();
            for g in &self.gaps {
                writeln!(s, "- {g}").unwrap();
            }
        }
        s
    }
}

/// Reads the win-rate table back out of [`Report::to_markdown`] output.
pub fn parse_markdown_win_rates(md: &str) -> Vec<ConditionRow> {
    let parse = |c: &str| c.trim().parse::<f64>().ok();
    md.lines()
        .skip_while(|l| !l.starts_with("## Win rate"))
        .filter(|l| l.starts_with("| ") && !l.starts_with("| condition"))
        .take_while(|l| l.split('|').count() == 5)
        .map(|l| {
            let cells: Vec<&str> = l.split('|').map(str::trim).collect();
            ConditionRow {
                condition: cells[1].to_string(),
                before: parse(cells[2]),
                after: parse(cells[3]),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::SummaryRecord;

    fn record(victim: Victim, condition: &str, win_rate: f64) -> EvalRecord {
        EvalRecord {
            victim,
            condition: condition.into(),
            episodes: 7,
            wins: 0,
            win_rate,
            mean_return: -1.0,
            masks: 0,
            perturbed: 0,
            summary: SummaryRecord {
                high: 3.0,
                low: 1.0 / 7.0,
                average: 2.0,
                sd: 0.1,
            },
            heatmap: String::new(),
        }
    }

    #[test]
    fn empty_report_is_a_skeleton() {
        let r = Report::build("relay", 1, &[]);
        assert_eq!(r.win_rates.len(), CONDITIONS.len());
        assert!(r.win_rates.iter().all(|c| c.before.is_none() && c.after.is_none()));
        assert_eq!(r.gaps.len(), 2 * CONDITIONS.len());
        let md = r.to_markdown();
        assert!(md.contains("| clean | n/a | n/a |"));
        let back: Report = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn markdown_and_json_agree() {
        let recs = vec![
            record(Victim::Before, "clean", 0.1 + 0.2),
            record(Victim::After, "clean", 2.0 / 3.0),
            record(Victim::Before, "learned", 0.043),
        ];
        let r = Report::build("traffic", 5, &recs);
        let json: Report = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        let md = parse_markdown_win_rates(&r.to_markdown());
        assert_eq!(md, json.win_rates);
        assert_eq!(md[0].before, Some(0.1 + 0.2));
        assert_eq!(r.frequency.len(), 2);
        assert!(r.gaps.contains(&"learned/after".to_string()));
    }
}
