//! CSV and markdown rendering of an [`EvalReport`].
//!
//! Numbers are printed with fixed precision so identical reports produce
//! identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::campaign::{EvalReport, SIGNIFICANCE_LEVEL};
use crate::models::VariantKind;

pub const SUBSTITUTIONS: &str = "\
- Encoder: mean-pooled word embeddings followed by a two-layer MLP, in place of a pretrained transformer.
- Signature generation: nearest-DRF ranking over the source DRF sets (or a learned multi-label scorer), in place of seq2seq beam search.
- PADA is run as PADA-lite: signature prompt, no auxiliary generation loss.
- Absolute scores from fine-tuned large language models are not reproducible at this scale; only comparisons between variants are meaningful.
";

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.6}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        fill(&mut w)?;
        w.flush().map_err(|e| Error::io("<report>", e))?;
    }
    Ok(buf)
}

impl EvalReport {
    pub fn rows_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &["target", "variant", "fraction", "eval_domain", "eval_split", "metric", "value", "n_test", "status"],
            |w| {
                for r in &self.rows {
                    w.write_record([
                        r.target.clone(),
                        r.variant.to_string(),
                        num(r.fraction),
                        r.eval_domain.clone(),
                        format!("{:?}", r.eval_split).to_lowercase(),
                        self.metric.to_string(),
                        opt(r.value),
                        r.n_test.to_string(),
                        r.error.as_ref().map_or_else(|| "ok".into(), |e| format!("failed: {e}")),
                    ])?;
                }
                Ok(())
            },
        )
    }

    pub fn averages_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(&["variant", "fraction", "metric", "mean", "n_rows", "n_failed"], |w| {
            for a in &self.averages {
                w.write_record([
                    a.variant.to_string(),
                    num(a.fraction),
                    self.metric.to_string(),
                    opt(a.mean),
                    a.n_rows.to_string(),
                    a.n_failed.to_string(),
                ])?;
            }
            Ok(())
        })
    }

    pub fn significance_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &[
                "target",
                "fraction",
                "eval_domain",
                "group",
                "baseline",
                "hyper_pada",
                "baseline_value",
                "mcnemar_p",
                "bootstrap_p",
                "significant",
            ],
            |w| {
                for s in &self.significance {
                    w.write_record([
                        s.target.clone(),
                        num(s.fraction),
                        s.eval_domain.clone(),
                        s.group.to_string(),
                        s.baseline.to_string(),
                        num(s.value),
                        num(s.baseline_value),
                        num(s.mcnemar_p),
                        num(s.bootstrap_p),
                        s.significant.to_string(),
                    ])?;
                }
                Ok(())
            },
        )
    }

    pub fn diversity_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(&["target", "diversity", "improvement"], |w| {
            for d in &self.diversity {
                w.write_record([d.target.clone(), num(d.diversity), opt(d.improvement)])?;
            }
            Ok(())
        })
    }

    pub fn correlation_csv(&self) -> Result<Vec<u8>> {
        let n = self.diversity.iter().filter(|d| d.improvement.is_some()).count();
        csv_bytes(&["n", "pearson", "spearman"], |w| {
            let (p, s) = match &self.correlation {
                Some(c) => (
                    c.pearson.map_or_else(|| "undefined".into(), num),
                    c.spearman.map_or_else(|| "undefined".into(), num),
                ),
                None => ("undefined".into(), "undefined".into()),
            };
            w.write_record([n.to_string(), p, s])?;
            Ok(())
        })
    }

    /// Whether Hyper-PADA significantly beats every baseline group it was
    /// compared with in this setting.
    fn beats_all(&self, target: &str, fraction: f64, eval_domain: &str) -> bool {
        let mut rows = self
            .significance
            .iter()
            .filter(|s| s.target == target && s.fraction == fraction && s.eval_domain == eval_domain)
            .peekable();
        rows.peek().is_some() && rows.all(|s| s.significant)
    }

    pub fn markdown(&self) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "# Evaluation report\n");
        let _ = writeln!(md, "Mode: {}. Metric: {}.\n", self.mode, self.metric);
        let _ = writeln!(md, "## Substitutions\n\n{SUBSTITUTIONS}");

        let variants: Vec<VariantKind> = {
            let mut v = Vec::new();
            for a in &self.averages {
                if !v.contains(&a.variant) {
                    v.push(a.variant);
                }
            }
            v
        };
        let mut fractions: Vec<f64> = Vec::new();
        for a in &self.averages {
            if !fractions.contains(&a.fraction) {
                fractions.push(a.fraction);
            }
        }
        let mut settings: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let key = (r.target.clone(), r.eval_domain.clone());
            if !settings.contains(&key) {
                settings.push(key);
            }
        }

        for &fraction in &fractions {
            let _ = writeln!(md, "## Results (train fraction {fraction})\n");
            let _ = write!(md, "| setting |");
            for v in &variants {
                let _ = write!(md, " {v} |");
            }
            let _ = writeln!(md);
            let _ = writeln!(md, "|---|{}", "---|".repeat(variants.len()));
            for (target, eval_domain) in &settings {
                let label = if target == eval_domain {
                    target.clone()
                } else {
                    format!("{target} (on {eval_domain})")
                };
                let _ = write!(md, "| {label} |");
                for v in &variants {
                    let cell = self.rows.iter().find(|r| {
                        &r.target == target
                            && &r.eval_domain == eval_domain
                            && r.variant == *v
                            && r.fraction == fraction
                    });
                    let text = match cell {
                        Some(r) => match r.value {
                            Some(x) => {
                                let mark = if *v == VariantKind::HyperPADA
                                    && self.beats_all(target, fraction, eval_domain)
                                {
                                    "*"
                                } else {
                                    ""
                                };
                                format!("{:.2}{mark}", 100.0 * x)
                            }
                            None => "failed".into(),
                        },
                        None => String::new(),
                    };
                    let _ = write!(md, " {text} |");
                }
                let _ = writeln!(md);
            }
            let _ = write!(md, "| **average** |");
            for v in &variants {
                let text = self.average(*v, fraction).map_or_else(|| "n/a".into(), |x| format!("{:.2}", 100.0 * x));
                let _ = write!(md, " {text} |");
            }
            let _ = writeln!(md, "\n");
        }
        let _ = writeln!(
            md,
            "`*`: Hyper-PADA beats the best model of every baseline group at p < {SIGNIFICANCE_LEVEL} \
             (McNemar for accuracy, paired bootstrap for macro-F1).\n"
        );

        if !self.diversity.is_empty() {
            let _ = writeln!(md, "## Weight diversity\n");
            let _ = writeln!(md, "| target | diversity | improvement over pada-lite |");
            let _ = writeln!(md, "|---|---|---|");
            for d in &self.diversity {
                let _ = writeln!(md, "| {} | {} | {} |", d.target, num(d.diversity), opt(d.improvement));
            }
            let (p, s) = match &self.correlation {
                Some(c) => (
                    c.pearson.map_or_else(|| "undefined".into(), num),
                    c.spearman.map_or_else(|| "undefined".into(), num),
                ),
                None => ("undefined".into(), "undefined".into()),
            };
            let _ = writeln!(md, "\nPearson: {p}. Spearman: {s}.\n");
        }

        let _ = writeln!(md, "## Configuration\n\n```\n{}```", self.config_text);
        md
    }

    /// Writes every report artifact into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files: [(&str, Vec<u8>); 7] = [
            ("report.csv", self.rows_csv()?),
            ("averages.csv", self.averages_csv()?),
            ("significance.csv", self.significance_csv()?),
            ("diversity.csv", self.diversity_csv()?),
            ("correlation.csv", self.correlation_csv()?),
            ("report.md", self.markdown().into_bytes()),
            ("config.txt", self.config_text.clone().into_bytes()),
        ];
        for (name, bytes) in files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
