//! Emitted matplotlib scripts. They read the trace CSV next to them and save
//! PNG figures; nothing is rendered in-process.

use distobs::sim::{ModelSpec, SimulationTrace};

/// Agent whose true and estimated trajectories are overlaid in localization
/// runs.
const OVERLAY_AGENT: usize = 3;

fn py_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("{s:?}")).collect();
    format!("[{}]", quoted.join(", "))
}

pub fn script(trace: &SimulationTrace, stem: &str) -> String {
    let labels: Vec<usize> = trace.label_dims().into_keys().collect();
    let pairs: Vec<String> = labels
        .iter()
        .flat_map(|&i| labels.iter().filter(move |&&j| j != i).map(move |&j| format!("err[{i}][{j}]")))
        .collect();
    let bars: Vec<String> = labels.iter().map(|j| format!("ebar[{j}]")).collect();
    let overlay = matches!(trace.config.model, ModelSpec::Localization { .. })
        && labels.contains(&OVERLAY_AGENT);
    let events = format!("{:?}", trace.events.iter().map(|e| e.applied_time).collect::<Vec<_>>());
    let mut s = format!(
        r#"# Error and trajectory plots for the {name} trace.
import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(HERE, "{stem}.csv"), newline="") as fh:
    ROWS = list(csv.DictReader(fh))


def col(name):
    return [float(r[name]) if r[name] != "" else math.nan for r in ROWS]


T = col("t")
EVENTS = {events}


def finish(ax, path, ylabel):
    for te in EVENTS:
        ax.axvline(te, color="grey", linestyle=":")
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    ax.figure.tight_layout()
    ax.figure.savefig(os.path.join(HERE, path), dpi=150)


fig, ax = plt.subplots()
ax.semilogy(T, col("E_norm"))
finish(ax, "{stem}_E_norm.png", "stacked error norm")

fig, ax = plt.subplots()
for name in {pairs}:
    ax.plot(T, col(name), label=name)
ax.legend(fontsize="small", ncol=2)
finish(ax, "{stem}_pair_errors.png", "estimation error norm")

fig, ax = plt.subplots()
for name in {bars}:
    ax.plot(T, col(name), label=name)
ax.legend(fontsize="small")
finish(ax, "{stem}_local_errors.png", "local estimate error norm")
"#,
        name = trace.config.name,
        events = events,
        pairs = py_list(&pairs),
        bars = py_list(&bars),
    );
    if overlay {
        let k = OVERLAY_AGENT;
        let estimators: Vec<String> = labels.iter().filter(|&&i| i != k).map(|i| i.to_string()).collect();
        s.push_str(&format!(
            r#"
fig, ax = plt.subplots()
ax.plot(col("x[{k}][1]"), col("x[{k}][2]"), "k-", linewidth=2, label="agent {k}")
for i in {estimators}:
    ax.plot(col(f"xhat[{{i}}][{k}][1]"), col(f"xhat[{{i}}][{k}][2]"), "--", label=f"estimate by agent {{i}}")
ax.set_xlabel("position 1")
ax.set_ylabel("position 2")
ax.legend(fontsize="small")
ax.grid(True, alpha=0.3)
fig.tight_layout()
fig.savefig(os.path.join(HERE, "{stem}_trajectory_{k}.png"), dpi=150)
"#,
            estimators = py_list(&estimators),
        ));
    }
    s
}
