"""Run records and the text/CSV tables built from them.

Estimates are shown as deltas from nominal: mass and CoM entries are the
stored offsets, damping and friction entries are ``scale - 1``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError


def as_delta(name: str, value: float) -> float:
    return value - 1.0 if name.startswith(("damping[", "friction[")) else value


def is_payload_entry(name: str) -> bool:
    return name.startswith(("mass[", "com_x[", "com_z["))


@dataclass
class RunRecord:
    scenario: str
    mode: str
    seed: int
    stages: list[dict]  # IdentificationReport.to_dict() of each stage, in order
    truth: dict[str, float]  # ground truth on the identified layout (may be empty)

    @property
    def final(self) -> dict[str, float]:
        return self.stages[-1]["final_params"]

    @property
    def names(self) -> list[str]:
        return list(self.stages[-1]["parameter_names"])

    def to_json(self) -> str:
        doc = {"scenario": self.scenario, "mode": self.mode, "seed": self.seed, "stages": self.stages, "truth": self.truth}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        try:
            d = json.loads(text)
            return cls(d["scenario"], d["mode"], int(d["seed"]), d["stages"], d.get("truth", {}))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"not a run report: {exc}") from exc


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def convergence_csv(run: RunRecord) -> str:
    """Snapshot rows of every stage: stage, iteration, loss, then the flat parameters."""
    rows = [["stage", "iteration", "loss", *run.names]]
    for stage in run.stages:
        for h in stage["history"]:
            if "theta" in h:
                rows.append([stage["stage"], h["iteration"], repr(float(h["loss"])), *(repr(float(v)) for v in h["theta"])])
    return _csv(rows)


def loss_curve_csv(run: RunRecord) -> str:
    """Every recorded iteration: stage, iteration, loss (the convergence-curve data)."""
    rows = [["stage", "iteration", "loss"]]
    for stage in run.stages:
        rows += [[stage["stage"], h["iteration"], repr(float(h["loss"]))] for h in stage["history"]]
    return _csv(rows)


def _fmt(v: float, width: int = 10) -> str:
    return f"{v:+{width}.4f}"


def estimate_table(run: RunRecord) -> str:
    """Estimated vs. ground-truth deltas with absolute errors."""
    lines = [f"{'parameter':<26}{'truth':>11}{'estimate':>11}{'abs err':>11}"]
    for name in run.names:
        est = as_delta(name, run.final[name])
        if name in run.truth:
            tru = as_delta(name, run.truth[name])
            lines.append(f"{name:<26}{_fmt(tru)} {_fmt(est)} {abs(est - tru):10.4f}")
        else:
            lines.append(f"{name:<26}{'n/a':>11}{_fmt(est)} {'n/a':>10}")
    losses = [f"{s['stage']}: {s['initial_loss']:.3e} -> {s['final_loss']:.3e}" for s in run.stages]
    lines.append("loss " + "; ".join(losses))
    return "\n".join(lines) + "\n"


def seed_spread(values) -> tuple[float, float]:
    """Mean and population std; the std is exactly zero when every value is identical."""
    vals = np.asarray(values, dtype=float)
    # deviations from the first value are exact zeros for bit-identical runs,
    # which a plain std (through the rounded mean) does not guarantee
    dev = vals - vals[0]
    return float(vals.mean()), float(dev.std())


def _stats(runs: list[RunRecord], name: str) -> tuple[float, float]:
    return seed_spread([as_delta(name, r.final[name]) for r in runs])


def _payload_names(runs: list[RunRecord]) -> list[str]:
    return [n for n in runs[0].names if is_payload_entry(n)]


def spread_table(runs: list[RunRecord]) -> str:
    """Mean +- standard deviation over seeds of every payload entry."""
    names = _payload_names(runs)
    truth = runs[0].truth
    seeds = ",".join(str(r.seed) for r in runs)
    lines = [f"{runs[0].scenario} / {runs[0].mode}, seeds {seeds}", f"{'parameter':<26}{'truth':>11}   {'mean +- std':>22}"]
    for n in names:
        mean, std = _stats(runs, n)
        tru = f"{as_delta(n, truth[n]):+11.4f}" if n in truth else f"{'n/a':>11}"
        lines.append(f"{n:<26}{tru}   {mean:+11.4f} +- {std:.4f}")
    return "\n".join(lines) + "\n"


def spread_csv(runs: list[RunRecord]) -> str:
    rows = [["parameter", "truth", "mean", "std", "n"]]
    for n in _payload_names(runs):
        mean, std = _stats(runs, n)
        t = runs[0].truth.get(n)
        rows.append([n, "" if t is None else repr(as_delta(n, t)), repr(mean), repr(std), len(runs)])
    return _csv(rows)


def _groups(runs: list[RunRecord]) -> list[tuple[str, str, list[RunRecord]]]:
    keyed: dict[tuple[str, str], list[RunRecord]] = {}
    for r in runs:
        keyed.setdefault((r.scenario, r.mode), []).append(r)
    return [(s, m, sorted(rs, key=lambda r: r.seed)) for (s, m), rs in sorted(keyed.items())]


def comparison_table(runs: list[RunRecord]) -> str:
    """One row per (scenario, mode): mean +- std of each payload delta, plus a truth row."""
    names = sorted({n for r in runs for n in r.names if is_payload_entry(n)}, key=_payload_order)
    label_w = max(len("scenario / mode (runs)"), *(len(f"{s} / {m} ({len(rs)})") for s, m, rs in _groups(runs))) + 2
    col_w = 20
    head = f"{'scenario / mode (runs)':<{label_w}}" + "".join(f"{n:>{col_w}}" for n in names)
    lines = [head, "-" * len(head)]
    truths: dict[str, dict] = {}
    for scen, mode, rs in _groups(runs):
        cells = []
        for n in names:
            have = [r for r in rs if n in r.final]
            if not have:
                cells.append(f"{'-':>{col_w}}")
                continue
            mean, std = _stats(have, n)
            cells.append(f"{f'{mean:+.4f} +- {std:.4f}':>{col_w}}")
        lines.append(f"{f'{scen} / {mode} ({len(rs)})':<{label_w}}" + "".join(cells))
        truths.setdefault(scen, rs[0].truth)
    for scen, truth in sorted(truths.items()):
        if truth:
            cells = [f"{as_delta(n, truth[n]):>+{col_w}.4f}" if n in truth else f"{'-':>{col_w}}" for n in names]
            lines.append(f"{f'{scen} / truth':<{label_w}}" + "".join(cells))
    return "\n".join(lines) + "\n"


def comparison_csv(runs: list[RunRecord]) -> str:
    names = sorted({n for r in runs for n in r.names if is_payload_entry(n)}, key=_payload_order)
    rows = [["scenario", "mode", "runs", *[f"{n} {stat}" for n in names for stat in ("mean", "std")]]]
    for scen, mode, rs in _groups(runs):
        row = [scen, mode, len(rs)]
        for n in names:
            have = [r for r in rs if n in r.final]
            row += [repr(v) for v in _stats(have, n)] if have else ["", ""]
        rows.append(row)
    return _csv(rows)


def _payload_order(name: str) -> tuple[int, str]:
    kind, _, owner = name.partition("[")
    return ({"mass": 0, "com_x": 1, "com_z": 2}.get(kind, 3), owner)
