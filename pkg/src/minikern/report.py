"""Run summary: outcome classification, counters, and optional figures.

The report is delimited text, one ``key=value`` record per line, derived
entirely from the trace plus the final view-context counters, so a report can
always be recomputed from its trace. Outcome classification:

    blocked         at least one denied access hit a protected FILE_OBJECT
                    region (the defense interposed on the hijack)
    succeeded       no such deny, and some assertion matched (the attacker
                    got the bytes it came for)
    not-applicable  neither happened

``render_figures`` draws the same information as pictures: an event timeline
striped by permission view, and a counter/outcome panel. matplotlib loads
lazily so runs that never ask for figures never pay for it.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import trace as tr
from .ept import ActiveContext

OUTCOME_SUCCEEDED = "succeeded"
OUTCOME_BLOCKED = "blocked"
OUTCOME_NOT_APPLICABLE = "not-applicable"


@dataclass
class Report:
    attack_outcome: str
    deny_count: int
    switch_count: int
    trap_count: int
    drivers: list[tuple[str, int, list[tuple[str, str]]]]  # (name, enclave, [(api, status)])
    asserts: list[tuple[str, str, bool]]  # (step, var, ok)
    fault: str | None = None


def classify_outcome(events: list[tr.TraceEvent]) -> str:
    fobj_deny = any(
        ev.kind == tr.POLICY_DECISION
        and ev.get("verdict") == "deny"
        and ev.get("rkind") == "file_object"
        for ev in events
    )
    if fobj_deny:
        return OUTCOME_BLOCKED
    if any(ev.kind == tr.ASSERT and ev.get("ok") == "true" for ev in events):
        return OUTCOME_SUCCEEDED
    return OUTCOME_NOT_APPLICABLE


def build_report(
    events: list[tr.TraceEvent],
    driver_order: list[tuple[str, int]],
    active: ActiveContext,
    fault: str | None = None,
) -> Report:
    by_driver = {name: [] for name, _ in driver_order}
    for ev in events:
        if ev.kind != tr.API_CALL:
            continue
        driver = ev.step.rsplit(":", 1)[0]
        if driver in by_driver:
            by_driver[driver].append((ev.get("api", "?"), ev.get("status", "?")))
    asserts = [
        (ev.step, ev.get("var", "?"), ev.get("ok") == "true")
        for ev in events
        if ev.kind == tr.ASSERT
    ]
    deny_count = sum(
        1
        for ev in events
        if ev.kind == tr.POLICY_DECISION and ev.get("verdict") == "deny"
    )
    return Report(
        attack_outcome=classify_outcome(events),
        deny_count=deny_count,
        switch_count=active.switch_count,
        trap_count=active.trap_count,
        drivers=[(name, enclave, by_driver[name]) for name, enclave in driver_order],
        asserts=asserts,
        fault=fault,
    )


def serialize_report(report: Report) -> str:
    lines = [
        f"attack_outcome={report.attack_outcome}",
        f"deny_count={report.deny_count}",
        f"switch_count={report.switch_count}",
        f"trap_count={report.trap_count}",
    ]
    for name, enclave, calls in report.drivers:
        apis = ",".join(f"{api}:{status}" for api, status in calls)
        lines.append(f"driver name={name} enclave={enclave} apis={apis}")
    for step, var, ok in report.asserts:
        lines.append(f"assert step={step} var={var} ok={'true' if ok else 'false'}")
    if report.fault is not None:
        lines.append(f"fault={report.fault}")
    return "\n".join(lines) + "\n"


# -- figures -----------------------------------------------------------------

_KIND_ROWS = [
    tr.DRIVER_LOAD,
    tr.API_CALL,
    tr.MEM_READ,
    tr.MEM_WRITE,
    tr.PROTECT,
    tr.UNPROTECT,
    tr.POLICY_DECISION,
    tr.SKIPPED,
    tr.ASSERT,
]


def render_figures(events: list[tr.TraceEvent], report: Report, out_dir) -> list[str]:
    """Write timeline.png and counters.png under out_dir; returns the paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    view_ids = sorted({ev.view for ev in events})
    view_color = {v: plt.cm.tab10(i % 10) for i, v in enumerate(view_ids)}

    fig, ax = plt.subplots(figsize=(10, 3.2))
    rows = {kind: i for i, kind in enumerate(_KIND_ROWS)}
    for ev in events:
        denied = ev.kind == tr.POLICY_DECISION and ev.get("verdict") == "deny"
        ax.scatter(
            ev.seq,
            rows[ev.kind],
            s=34 if denied else 18,
            color="crimson" if denied else view_color[ev.view],
            marker="x" if denied else "o",
            linewidths=1.4 if denied else 0.8,
        )
    ax.set_yticks(list(rows.values()), list(rows.keys()))
    ax.set_xlabel("event sequence")
    ax.set_title(f"trace timeline ({report.attack_outcome})")
    handles = [
        plt.Line2D([], [], marker="o", ls="", color=view_color[v], label=f"view {v}")
        for v in view_ids
    ]
    handles.append(plt.Line2D([], [], marker="x", ls="", color="crimson", label="deny"))
    ax.legend(handles=handles, loc="upper left", fontsize=8)
    ax.margins(y=0.15)
    fig.tight_layout()
    path = out / "timeline.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(str(path))

    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    names = ["deny", "trap", "switch"]
    values = [report.deny_count, report.trap_count, report.switch_count]
    bars = ax.bar(names, values, color=["crimson", "darkorange", "steelblue"])
    ax.bar_label(bars)
    ax.set_title(f"policy counters (outcome: {report.attack_outcome})")
    fig.tight_layout()
    path = out / "counters.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(str(path))
    return written
