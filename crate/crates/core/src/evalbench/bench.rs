use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{contract, Result};
use crate::graph::{plan_arena, to_bytes, Executor, ModelGraph, NumericMode};
use crate::quantizer::argmax;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub mode: NumericMode,
    pub latencies: Vec<Duration>,
    pub median: Duration,
    pub p90: Duration,
    pub model_bytes: usize,
    pub arena_bytes: usize,
    /// Class chosen on the first timed run.
    pub label: usize,
    /// Whether every timed run chose `label`.
    pub label_stable: bool,
}

/// Nearest-rank percentile of sorted durations (`q` in (0, 1]).
pub fn percentile(sorted: &[Duration], q: f64) -> Duration {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn median(sorted: &[Duration]) -> Duration {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    }
}

/// Times `repetitions` single-image inferences after `warmup` discarded runs
/// on one executor.
pub fn benchmark(
    g: &ModelGraph,
    input: &Tensor<f32>,
    repetitions: usize,
    warmup: usize,
) -> Result<BenchReport> {
    if repetitions < 1 {
        return Err(contract("benchmark needs at least one repetition"));
    }
    let mut ex = Executor::new(g)?;
    for _ in 0..warmup {
        ex.run(input)?;
    }
    let mut latencies = Vec::with_capacity(repetitions);
    let mut labels = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        let out = ex.run(input)?;
        latencies.push(t.elapsed());
        labels.push(argmax(&out));
    }
    let mut sorted = latencies.clone();
    sorted.sort();
    Ok(BenchReport {
        mode: g.mode,
        median: median(&sorted),
        p90: percentile(&sorted, 0.9),
        latencies,
        model_bytes: to_bytes(g).len(),
        arena_bytes: plan_arena(g)?.total_bytes,
        label: labels[0],
        label_stable: labels.iter().all(|&l| l == labels[0]),
    })
}

impl BenchReport {
    pub fn budget_check(&self, flash_budget: usize, ram_budget: usize) -> Result<BudgetCheck> {
        budget_check(self.model_bytes, self.arena_bytes, flash_budget, ram_budget)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetCheck {
    pub flash_ok: bool,
    pub ram_ok: bool,
    /// `(budget - used) / budget` in percent; negative when over budget.
    pub flash_margin_pct: f64,
    pub ram_margin_pct: f64,
}

impl BudgetCheck {
    pub fn passed(&self) -> bool {
        self.flash_ok && self.ram_ok
    }

    pub fn render(
        &self,
        model_bytes: usize,
        arena_bytes: usize,
        flash: usize,
        ram: usize,
    ) -> String {
        let verdict = |ok| if ok { "PASS" } else { "FAIL" };
        format!(
            "flash\t{model_bytes}\t{flash}\t{:.2}%\t{}\nram\t{arena_bytes}\t{ram}\t{:.2}%\t{}\n",
            self.flash_margin_pct,
            verdict(self.flash_ok),
            self.ram_margin_pct,
            verdict(self.ram_ok)
        )
    }
}

/// Compares model size with the flash budget and arena size with the RAM
/// budget. Usage equal to the budget passes.
pub fn budget_check(
    model_bytes: usize,
    arena_bytes: usize,
    flash_budget: usize,
    ram_budget: usize,
) -> Result<BudgetCheck> {
    if flash_budget == 0 || ram_budget == 0 {
        return Err(contract("budgets must be positive"));
    }
    let margin = |used: usize, budget: usize| 100.0 * (budget as f64 - used as f64) / budget as f64;
    Ok(BudgetCheck {
        flash_ok: model_bytes <= flash_budget,
        ram_ok: arena_bytes <= ram_budget,
        flash_margin_pct: margin(model_bytes, flash_budget),
        ram_margin_pct: margin(arena_bytes, ram_budget),
    })
}

/// One column of the device-performance table.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceRow {
    pub name: String,
    pub bench: BenchReport,
    pub accuracy: Option<f64>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn kb(b: usize) -> f64 {
    b as f64 / 1024.0
}

/// Aligned text table with one column per model.
pub fn render_table(rows: &[DeviceRow]) -> String {
    let mut s = format!("{:<24}", "");
    for r in rows {
        write!(s, "{:>14}", r.name).expect("string write");
    }
    s.push('\n');
    let mut line = |label: &str, f: &dyn Fn(&DeviceRow) -> String| {
        write!(s, "{label:<24}").expect("string write");
        for r in rows {
            write!(s, "{:>14}", f(r)).expect("string write");
        }
        s.push('\n');
    };
    line("Inferencing Time", &|r| {
        format!("{:.3} ms", ms(r.bench.median))
    });
    line("Inferencing Time p90", &|r| {
        format!("{:.3} ms", ms(r.bench.p90))
    });
    line("Peak RAM usage", &|r| {
        format!("{:.1} K", kb(r.bench.arena_bytes))
    });
    line("Flash Usage", &|r| {
        format!("{:.1} K", kb(r.bench.model_bytes))
    });
    line("Accuracy", &|r| {
        r.accuracy
            .map_or("-".into(), |a| format!("{:.2}%", 100.0 * a))
    });
    s
}

/// Machine-readable form of the table: one line per model.
pub fn render_tsv(rows: &[DeviceRow]) -> String {
    let mut s =
        String::from("model\tmode\truns\tmedian_ms\tp90_ms\tarena_bytes\tmodel_bytes\taccuracy\n");
    for r in rows {
        let b = &r.bench;
        writeln!(
            s,
            "{}\t{:?}\t{}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            r.name,
            b.mode,
            b.latencies.len(),
            ms(b.median),
            ms(b.p90),
            b.arena_bytes,
            b.model_bytes,
            r.accuracy.map_or("-".into(), |a| format!("{a:.6}"))
        )
        .expect("string write");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(ms: u64) -> Duration {
        Duration::from_millis(ms)
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<Duration> = (1..=10).map(d).collect();
        assert_eq!(percentile(&v, 0.9), d(9));
        assert_eq!(percentile(&v, 1.0), d(10));
        assert_eq!(median(&v), Duration::from_micros(5500));
        assert_eq!(percentile(&[d(4)], 0.9), d(4));
    }

    #[test]
    fn budget_boundaries() {
        let flash = 583_600;
        let ok = budget_check(309_700, 100, flash, 100).unwrap();
        assert!(ok.passed());
        assert_eq!(ok.ram_margin_pct, 0.0);
        assert!((ok.flash_margin_pct - 100.0 * (583_600.0 - 309_700.0) / 583_600.0).abs() < 1e-12);
        let over = budget_check(flash + 1, 0, flash, 1).unwrap();
        assert!(!over.flash_ok && over.flash_margin_pct < 0.0);
        assert!(budget_check(1, 1, 0, 1).is_err());
    }
}
