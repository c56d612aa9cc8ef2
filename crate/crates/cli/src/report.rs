//! Summaries of a run's score table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use connectome_core::evaluate::{
    anova_effects, curve_summary, holm, pipeline_means, top_decile, wilcoxon_pairwise, CurveRecord,
    DecileSummary, EffectEstimate, ScoreRecord, FACTORS,
};
use connectome_core::pipeline::{read_rows, read_scores, write_rows, CURVES_FILE, SCORES_FILE};
use connectome_core::tables;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Scores sharing a cross-validation scheme and subsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub scheme: String,
    pub subsample: u8,
    pub n_pipelines: usize,
    /// Factors with a single level here, left out of the analysis.
    pub skipped_factors: Vec<String>,
    pub effects: Vec<EffectEstimate>,
    pub comparisons: Vec<Comparison>,
    pub top_decile: Vec<DecileSummary>,
}

/// Paired comparison of two levels of one factor, matched on every other
/// option and the fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub factor: String,
    pub level_a: String,
    pub level_b: String,
    pub n_pairs: usize,
    /// Mean of `b − a` in accuracy points.
    pub mean_difference: f64,
    pub p_value: f64,
    pub p_holm: f64,
}

pub fn report(run_dir: &Path) -> Result<(), CliError> {
    let scores_path = run_dir.join(SCORES_FILE);
    if !scores_path.is_file() {
        return Err(CliError::Runtime(format!(
            "no scores at {}; run the pipelines first",
            scores_path.display()
        )));
    }
    let scores = read_scores(&scores_path)?;
    if scores.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} has no rows",
            scores_path.display()
        )));
    }
    let slices = analyse(&scores)?;
    let dir = run_dir.join("report");
    tables::create_dir(&dir)?;
    let effects: Vec<&EffectEstimate> = slices.iter().flat_map(|s| &s.effects).collect();
    tables::write_json(&dir.join("effects.json"), &effects)?;
    tables::write_json(&dir.join("report.json"), &slices)?;
    let curves_path = run_dir.join(CURVES_FILE);
    if curves_path.is_file() {
        let curves: Vec<CurveRecord> = read_rows(&curves_path)?;
        write_rows(&dir.join("curves_summary.csv"), &curve_summary(&curves))?;
    }
    let text = render(&slices);
    std::fs::write(dir.join("report.txt"), &text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    print!("{text}");
    Ok(())
}

/// Effects, comparisons and top-decile summaries for each (scheme, subsample).
pub fn analyse(scores: &[ScoreRecord]) -> Result<Vec<Slice>, CliError> {
    let mut groups: BTreeMap<(String, u8), Vec<&ScoreRecord>> = BTreeMap::new();
    for s in scores {
        groups
            .entry((s.scheme.clone(), s.subsample))
            .or_default()
            .push(s);
    }
    let mut out = Vec::new();
    for ((scheme, subsample), rows) in groups {
        let levels: Vec<Vec<String>> = rows.iter().map(|r| r.levels()).collect();
        let varying: Vec<usize> = (0..FACTORS.len())
            .filter(|&f| levels.iter().map(|l| &l[f]).collect::<BTreeSet<_>>().len() > 1)
            .collect();
        let skipped: Vec<String> = (0..FACTORS.len())
            .filter(|f| !varying.contains(f))
            .map(|f| FACTORS[f].to_string())
            .collect();
        for f in &skipped {
            log::warn!("{scheme} subsample {subsample}: factor {f} has a single level; skipped");
        }
        let names: Vec<String> = varying.iter().map(|&f| FACTORS[f].to_string()).collect();
        let effects = if varying.is_empty() {
            Vec::new()
        } else {
            let reduced: Vec<Vec<String>> = levels
                .iter()
                .map(|l| varying.iter().map(|&f| l[f].clone()).collect())
                .collect();
            let points: Vec<f64> = rows.iter().map(|r| 100.0 * r.accuracy).collect();
            anova_effects(&names, &reduced, &points)?
        };
        let comparisons = compare(&rows, &levels, &varying)?;
        let owned: Vec<ScoreRecord> = rows.iter().map(|r| (*r).clone()).collect();
        let pipelines = pipeline_means(&owned);
        let decile = top_decile(&pipelines)
            .into_iter()
            .filter(|d| names.contains(&d.factor))
            .collect();
        out.push(Slice {
            scheme,
            subsample,
            n_pipelines: pipelines.len(),
            skipped_factors: skipped,
            effects,
            comparisons,
            top_decile: decile,
        });
    }
    Ok(out)
}

fn compare(
    rows: &[&ScoreRecord],
    levels: &[Vec<String>],
    varying: &[usize],
) -> Result<Vec<Comparison>, CliError> {
    let mut out = Vec::new();
    for &f in varying {
        // Key: every other factor's level plus the fold.
        let mut cells: BTreeMap<(Vec<String>, usize), BTreeMap<String, f64>> = BTreeMap::new();
        for (r, l) in rows.iter().zip(levels) {
            let mut key: Vec<String> = l.clone();
            let level = key.remove(f);
            cells
                .entry((key, r.fold))
                .or_default()
                .insert(level, 100.0 * r.accuracy);
        }
        let distinct: BTreeSet<&String> = levels.iter().map(|l| &l[f]).collect();
        let distinct: Vec<&String> = distinct.into_iter().collect();
        for (i, a) in distinct.iter().enumerate() {
            for b in &distinct[i + 1..] {
                let pairs: Vec<(f64, f64)> = cells
                    .values()
                    .filter_map(|c| Some((*c.get(*a)?, *c.get(*b)?)))
                    .collect();
                if pairs.len() < 6 {
                    log::warn!(
                        "{}: {a} vs {b} has {} matched pairs; at least 6 needed",
                        FACTORS[f],
                        pairs.len()
                    );
                    continue;
                }
                let (xa, xb): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
                let w = wilcoxon_pairwise(&xa, &xb)?;
                let mean_difference =
                    pairs.iter().map(|(a, b)| b - a).sum::<f64>() / pairs.len() as f64;
                out.push(Comparison {
                    factor: FACTORS[f].to_string(),
                    level_a: (*a).clone(),
                    level_b: (*b).clone(),
                    n_pairs: pairs.len(),
                    mean_difference,
                    p_value: w.p_value,
                    p_holm: f64::NAN,
                });
            }
        }
    }
    let adjusted = holm(&out.iter().map(|c| c.p_value).collect::<Vec<_>>());
    for (c, p) in out.iter_mut().zip(adjusted) {
        c.p_holm = p;
    }
    Ok(out)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut s = String::new();
    let line = |cells: Vec<&str>, s: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(s, "  {}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut s);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut s);
    }
    s
}

/// Aligned plain-text rendering of the report.
pub fn render(slices: &[Slice]) -> String {
    let mut s = String::new();
    for sl in slices {
        let _ = writeln!(
            s,
            "== {} / subsample {} ({} pipelines)",
            sl.scheme, sl.subsample, sl.n_pipelines
        );
        if sl.effects.is_empty() {
            let _ = writeln!(s, "  no factor varies; nothing to compare\n");
            continue;
        }
        let _ = writeln!(s, "Effects on accuracy (points relative to the mean)");
        let rows: Vec<Vec<String>> = sl
            .effects
            .iter()
            .map(|e| {
                vec![
                    e.factor.clone(),
                    e.level.clone(),
                    format!("{:+.2}", e.coefficient),
                    format!("[{:+.2}, {:+.2}]", e.ci_low, e.ci_high),
                ]
            })
            .collect();
        s.push_str(&table(&["factor", "level", "effect", "95% CI"], &rows));
        if !sl.comparisons.is_empty() {
            let _ = writeln!(s, "Pairwise comparisons (signed-rank, Holm corrected)");
            let rows: Vec<Vec<String>> = sl
                .comparisons
                .iter()
                .map(|c| {
                    vec![
                        c.factor.clone(),
                        format!("{} vs {}", c.level_b, c.level_a),
                        c.n_pairs.to_string(),
                        format!("{:+.2}", c.mean_difference),
                        format!("{:.4}", c.p_value),
                        format!("{:.4}", c.p_holm),
                    ]
                })
                .collect();
            s.push_str(&table(
                &["factor", "levels", "pairs", "diff", "p", "p_holm"],
                &rows,
            ));
        }
        let _ = writeln!(s, "Best tenth of pipelines per level (accuracy %)");
        let rows: Vec<Vec<String>> = sl
            .top_decile
            .iter()
            .map(|d| {
                vec![
                    d.factor.clone(),
                    d.level.clone(),
                    format!("{}/{}", d.n_kept, d.n_pipelines),
                    format!("{:.1} ± {:.1}", 100.0 * d.mean, 100.0 * d.sd),
                ]
            })
            .collect();
        s.push_str(&table(&["factor", "level", "kept", "accuracy"], &rows));
        s.push('\n');
    }
    s
}
