//! Drivers for the simulation studies behind `floc experiment`.
//!
//! Each driver writes its CSV files into the output directory and returns
//! a plain-text summary table.

use std::path::Path;

use floc::calibration::{calibrate, calibrate_arl, BinLayout, CalibrationResult, CalibrationSpec};
use floc::detector::{DetectorConfig, PrechangeMode};
use floc::experiments::{
    estimate_arl, estimate_metrics, fmt_sig, rate_check, robustness_csv, robustness_study, type_discrimination_study,
    ArlReport, ArlSpec, MetricsReport, RobustnessTemplate, Scenario,
};
use floc::prechange::TimeScale;
use floc::signal_model::{replication_seed, ChangeKind, NoiseSpec};

use crate::args::{ExperimentArgs, ExperimentName, RateKind};
use crate::commands::{warn, write_text};
use crate::error::{CliError, CliResult};

pub const CAL_REPLICATIONS: usize = 10_000;
pub const JUMP_SIZES: [f64; 3] = [2.0, 1.0, 0.5];
/// Slope changes per observation.
pub const KINK_SIZES: [f64; 3] = [0.5, 0.1, 0.02];
/// Observations simulated after the change in delay runs.
const POST_CHANGE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arm {
    Jump,
    Kink,
    Both,
}

impl Arm {
    const ALL: [Arm; 3] = [Arm::Jump, Arm::Kink, Arm::Both];

    fn name(self) -> &'static str {
        match self {
            Arm::Jump => "jump",
            Arm::Kink => "kink",
            Arm::Both => "both",
        }
    }

    fn layout(self, bin: usize) -> BinLayout {
        match self {
            Arm::Jump => BinLayout::jump(bin),
            Arm::Kink => BinLayout::kink(bin),
            Arm::Both => BinLayout::both(bin),
        }
    }
}

struct Ctx<'a> {
    args: &'a ExperimentArgs,
    cell: u64,
    wide: bool,
}

impl Ctx<'_> {
    fn reps(&self, default: usize) -> usize {
        self.args.replications.unwrap_or(default)
    }

    fn cal_reps(&self) -> usize {
        self.args.cal_replications.unwrap_or(CAL_REPLICATIONS)
    }

    /// A fresh seed per simulated cell, derived from the master seed.
    fn seed(&mut self) -> u64 {
        self.cell += 1;
        replication_seed(self.args.seed, self.cell)
    }

    fn keep(&self, bin: usize, k: usize) -> bool {
        self.args.bin.is_none_or(|b| b == bin) && self.args.k.is_none_or(|x| x == k)
    }

    fn note(&mut self, r: &MetricsReport) {
        self.wide |= r.wide_ci();
    }

    fn note_arl(&mut self, r: &ArlReport) {
        self.wide |= r.spec.replications < 30 || !r.halfwidth.is_finite();
    }

    fn calibration(&mut self, layout: BinLayout, k: usize, horizon: usize, eta: f64) -> CalibrationSpec {
        CalibrationSpec {
            replications: self.cal_reps(),
            eta,
            horizon,
            k,
            layout,
            noise: NoiseSpec::standard(),
            prechange: PrechangeMode::Fit(TimeScale::Index),
            master_seed: self.seed(),
        }
    }

    /// Delay runs with the change right after observation `k`.
    fn delays(&mut self, config: DetectorConfig, k: usize, arm: Arm, reps: usize) -> CliResult<Vec<Option<MetricsReport>>> {
        let mut out = Vec::new();
        for (kind, sizes) in [(Arm::Jump, JUMP_SIZES), (Arm::Kink, KINK_SIZES)] {
            for size in sizes {
                if arm != Arm::Both && arm != kind {
                    out.push(None);
                    continue;
                }
                let (jump, slope) = if kind == Arm::Jump { (size, 0.0) } else { (0.0, size) };
                let s = Scenario::change_after(k + POST_CHANGE, k, k, jump, slope, config, reps, self.seed());
                let r = estimate_metrics(&s)?;
                self.note(&r);
                out.push(Some(r));
            }
        }
        Ok(out)
    }
}

fn fmt_delay(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.0}"))
}

fn fmt_rho(x: f64) -> String {
    if x.is_finite() {
        fmt_sig(x)
    } else {
        "-".into()
    }
}

fn edd_cells(delays: &[Option<MetricsReport>]) -> Vec<String> {
    delays
        .iter()
        .map(|d| fmt_delay(d.as_ref().and_then(|r| r.edd)))
        .collect()
}

/// Aligned text table from a header and rows of cells.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        format!("{}\n", parts.join("  ").trim_end())
    };
    let mut out = line(header.to_vec());
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("{}\n", header.join(","));
    for row in rows {
        out.push_str(&format!("{}\n", row.join(",")));
    }
    out
}

fn metrics_csv(reports: &[&MetricsReport]) -> String {
    let mut out = String::new();
    for (i, r) in reports.iter().enumerate() {
        let csv = r.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if i == 0 {
            out.push_str(header);
            out.push('\n');
        }
        for l in lines {
            out.push_str(l);
            out.push('\n');
        }
    }
    out
}

fn arl_csv(reports: &[&ArlReport]) -> String {
    let mut out = String::new();
    for (i, r) in reports.iter().enumerate() {
        let csv = r.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if i == 0 {
            out.push_str(header);
            out.push('\n');
        }
        for l in lines {
            out.push_str(l);
            out.push('\n');
        }
    }
    out
}

const TABLE2_ROWS: [(usize, usize); 5] = [(5, 500), (10, 500), (10, 1000), (10, 5000), (15, 500)];

/// Monitored observations before the change in false-alarm calibration.
fn table2_horizon(k: usize) -> usize {
    if k >= 5000 {
        10_000
    } else {
        1000
    }
}

fn table2(ctx: &mut Ctx, out: &Path) -> CliResult<String> {
    let header = [
        "floc", "N", "target_fa", "k", "rho_jump", "rho_kink", "fa", "jump_2", "jump_1", "jump_0.5", "kink_0.5",
        "kink_0.1", "kink_0.02",
    ];
    let reps = ctx.reps(200);
    let mut rows = Vec::new();
    let mut reports: Vec<MetricsReport> = Vec::new();
    for arm in Arm::ALL {
        for (bin, k) in TABLE2_ROWS {
            if !ctx.keep(bin, k) {
                continue;
            }
            let horizon = table2_horizon(k);
            let cal = calibrate(&ctx.calibration(arm.layout(bin), k, horizon, 0.5))?;
            let config = cal.config();
            let fa = estimate_metrics(&Scenario::change_after(
                k + horizon,
                k,
                k + horizon,
                0.0,
                0.0,
                config,
                reps,
                ctx.seed(),
            ))?;
            ctx.note(&fa);
            let delays = ctx.delays(config, k, arm, reps)?;
            let mut row = vec![
                arm.name().to_string(),
                bin.to_string(),
                "0.5".into(),
                k.to_string(),
                fmt_rho(cal.rho_jump),
                fmt_rho(cal.rho_kink),
                fmt_sig(fa.fa_prob),
            ];
            row.extend(edd_cells(&delays));
            rows.push(row);
            reports.push(fa);
            reports.extend(delays.into_iter().flatten());
        }
    }
    write_text(&out.join("table2.csv"), &csv_table(&header, &rows))?;
    write_text(&out.join("table2_metrics.csv"), &metrics_csv(&reports.iter().collect::<Vec<_>>()))?;
    Ok(text_table(&header, &rows))
}

const TABLE3_ROWS: [(usize, usize, usize); 4] = [(10, 1000, 1000), (15, 1000, 1000), (10, 1000, 5000), (10, 5000, 2500)];

fn table3(ctx: &mut Ctx, out: &Path) -> CliResult<String> {
    let header = [
        "floc", "N", "target_arl", "k", "rho_jump", "rho_kink", "arl", "censored", "jump_2", "jump_1", "jump_0.5",
        "kink_0.5", "kink_0.1", "kink_0.02",
    ];
    let reps = ctx.reps(100);
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut arls = Vec::new();
    for arm in Arm::ALL {
        for (bin, target, k) in TABLE3_ROWS {
            if !ctx.keep(bin, k) {
                continue;
            }
            let cal: CalibrationResult = calibrate_arl(&ctx.calibration(arm.layout(bin), k, target, 0.5))?;
            let config = cal.config();
            let arl = estimate_arl(&ArlSpec::for_target(config, k, target, reps, ctx.seed()))?;
            ctx.note_arl(&arl);
            let delays = ctx.delays(config, k, arm, reps)?;
            let mut row = vec![
                arm.name().to_string(),
                bin.to_string(),
                target.to_string(),
                k.to_string(),
                fmt_rho(cal.rho_jump),
                fmt_rho(cal.rho_kink),
                format!("{:.2}", arl.arl),
                arl.censored.to_string(),
            ];
            row.extend(edd_cells(&delays));
            rows.push(row);
            reports.extend(delays.into_iter().flatten());
            arls.push(arl);
        }
    }
    write_text(&out.join("table3.csv"), &csv_table(&header, &rows))?;
    write_text(&out.join("table3_arl.csv"), &arl_csv(&arls.iter().collect::<Vec<_>>()))?;
    write_text(&out.join("table3_metrics.csv"), &metrics_csv(&reports.iter().collect::<Vec<_>>()))?;
    Ok(text_table(&header, &rows))
}

pub const TABLE5_DF: [f64; 8] = [1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 30.0, f64::INFINITY];

fn table5(ctx: &mut Ctx, out: &Path) -> CliResult<String> {
    let bin = ctx.args.bin.unwrap_or(15);
    let k = ctx.args.k.unwrap_or(5000);
    let target = 1000;
    let reps = ctx.reps(500);
    let df_grid = ctx.args.df_grid.clone().unwrap_or_else(|| TABLE5_DF.to_vec());
    let mut arms = Vec::new();
    for (arm, jump, slope) in [(Arm::Jump, 0.5, 0.0), (Arm::Kink, 0.0, 0.01)] {
        let cal = calibrate_arl(&ctx.calibration(arm.layout(bin), k, target, 0.5))?;
        let template = RobustnessTemplate {
            config: cal.config(),
            k,
            arl_cap: 10 * target,
            jump,
            slope_change: slope,
            post_change: POST_CHANGE,
            replications: reps,
            master_seed: ctx.seed(),
        };
        let rows = robustness_study(&df_grid, &template)?;
        for r in &rows {
            ctx.note(&r.metrics);
            ctx.note_arl(&r.arl);
        }
        write_text(&out.join(format!("table5_{}.csv", arm.name())), &robustness_csv(&rows))?;
        arms.push(rows);
    }
    let header = ["df", "jump_arl", "jump_edd", "kink_arl", "kink_edd"];
    let rows: Vec<Vec<String>> = df_grid
        .iter()
        .enumerate()
        .map(|(i, df)| {
            let (j, kk) = (&arms[0][i], &arms[1][i]);
            vec![
                df.to_string(),
                format!("{:.0}", j.arl.arl),
                fmt_delay(j.metrics.edd),
                format!("{:.0}", kk.arl.arl),
                fmt_delay(kk.metrics.edd),
            ]
        })
        .collect();
    write_text(&out.join("table5.csv"), &csv_table(&header, &rows))?;
    Ok(text_table(&header, &rows))
}

fn rates(ctx: &mut Ctx, out: &Path) -> CliResult<String> {
    let grid = ctx
        .args
        .n_grid
        .clone()
        .unwrap_or_else(|| (10..=16).map(|p| 1usize << p).collect());
    let reps = ctx.reps(200);
    let kinds: &[ChangeKind] = match ctx.args.kind {
        RateKind::Jump => &[ChangeKind::Jump],
        RateKind::Kink => &[ChangeKind::Kink],
        RateKind::Both => &[ChangeKind::Jump, ChangeKind::Kink],
    };
    let mut text = String::new();
    for &kind in kinds {
        let report = rate_check(ctx.args.c, &grid, kind, reps, ctx.seed())?;
        if report.rows.iter().any(|r| r.insufficient) {
            warn(&format!("{kind}: some horizons detected the change in fewer than half the runs"));
        }
        write_text(&out.join(format!("rates_{kind}.csv")), &report.to_csv())?;
        text.push_str(&report.to_text());
    }
    Ok(text)
}

fn types(ctx: &mut Ctx, out: &Path) -> CliResult<String> {
    let bin = ctx.args.bin.unwrap_or(10);
    let k = ctx.args.k.unwrap_or(1000);
    let reps = ctx.reps(1000);
    let cal = calibrate(&ctx.calibration(BinLayout::both(bin), k, table2_horizon(k), 0.5))?;
    let config = cal.config();
    let scenarios = [
        Scenario::change_after(k + POST_CHANGE, k, k, 1.0, 0.0, config, reps, ctx.seed()),
        Scenario::change_after(k + POST_CHANGE, k, k, 0.0, 0.1, config, reps, ctx.seed()),
    ];
    let rows = type_discrimination_study(&scenarios)?;
    let header = ["true_kind", "N", "k", "rho_jump", "rho_kink", "alarms", "misattributed", "rate"];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.true_kind.to_string(),
                bin.to_string(),
                k.to_string(),
                cal.rho_jump.to_string(),
                cal.rho_kink.to_string(),
                r.alarms.to_string(),
                r.misattributed.to_string(),
                r.rate().map_or("NA".into(), |x| x.to_string()),
            ]
        })
        .collect();
    ctx.wide |= reps < 30;
    write_text(&out.join("types.csv"), &csv_table(&header, &cells))?;
    Ok(text_table(&header, &cells))
}

pub fn cmd_experiment(args: &ExperimentArgs) -> CliResult<String> {
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    if args.replications == Some(0) || args.cal_replications == Some(0) {
        return Err(CliError::usage("replication counts must be positive"));
    }
    let mut ctx = Ctx {
        args,
        cell: 0,
        wide: false,
    };
    let out = args.out_dir.as_path();
    let text = match args.name {
        ExperimentName::Table2 => table2(&mut ctx, out)?,
        ExperimentName::Table3 => table3(&mut ctx, out)?,
        ExperimentName::Table5 => table5(&mut ctx, out)?,
        ExperimentName::Rates => rates(&mut ctx, out)?,
        ExperimentName::Types => types(&mut ctx, out)?,
    };
    if ctx.wide {
        warn("few replications: confidence intervals are wide");
    }
    Ok(text)
}
