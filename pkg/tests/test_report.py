import json
from pathlib import Path

import numpy as np
import pytest

from diffsysid.errors import FormatError
from diffsysid.report import (
    RunRecord,
    as_delta,
    comparison_csv,
    comparison_table,
    convergence_csv,
    estimate_table,
    loss_curve_csv,
    spread_csv,
    seed_spread,
    spread_table,
)

GOLDEN = Path(__file__).parent / "golden"
NAMES = ["mass[torso]", "mass[left_hand]", "com_x[torso]", "damping[knee]"]
TRUTH = {"mass[torso]": 6.0, "mass[left_hand]": 2.4, "com_x[torso]": 0.01, "damping[knee]": 1.0}
TRUTH_3 = {"mass[torso]": 12.0, "mass[left_hand]": 3.5, "com_x[torso]": 0.02, "damping[knee]": 1.0}


def _run(scenario, mode, seed, values, stages=("stage1",), truth=TRUTH):
    final = dict(zip(NAMES, values))
    stage_docs = []
    for k, label in enumerate(stages):
        stage_docs.append({
            "stage": label,
            "parameter_names": NAMES,
            "final_params": final,
            "initial_loss": 10.0 / (k + 1),
            "final_loss": 0.5 / (k + 1),
            "history": [
                {"iteration": 0, "loss": 10.0 / (k + 1), "theta": [0.0, 0.0, 0.0, 1.0]},
                {"iteration": 1, "loss": 2.0 / (k + 1)},
                {"iteration": 2, "loss": 0.5 / (k + 1), "theta": list(values)},
            ],
        })
    return RunRecord(scenario, mode, seed, stage_docs, dict(truth))


@pytest.fixture
def mixed_runs():
    return [
        _run("setting1", "two-stage", 0, [6.01, 2.40, 0.0102, 1.2], ("stage1", "stage2")),
        _run("setting1", "two-stage", 1, [6.01, 2.40, 0.0102, 1.2], ("stage1", "stage2")),
        _run("setting1", "cma-es", 0, [5.90, 2.50, 0.0080, 1.0], ("cma-es",)),
        _run("setting1", "cma-es", 1, [6.10, 2.30, 0.0120, 1.0], ("cma-es",)),
        _run("setting3", "cma-es", 0, [12.0, 3.5, 0.02, 1.0], ("cma-es",), TRUTH_3),
    ]


def test_as_delta():
    assert as_delta("damping[knee]", 1.15) == pytest.approx(0.15)
    assert as_delta("friction[ankle]", 1.0) == 0.0
    assert as_delta("mass[torso]", 6.0) == 6.0


def _regenerate_golden(runs):  # run by hand after an intended format change
    (GOLDEN / "comparison.txt").write_text(comparison_table(runs))
    (GOLDEN / "comparison.csv").write_text(comparison_csv(runs))


def test_comparison_table_matches_golden(mixed_runs):
    assert comparison_table(mixed_runs) == (GOLDEN / "comparison.txt").read_text()


def test_comparison_csv_matches_golden(mixed_runs):
    assert comparison_csv(mixed_runs) == (GOLDEN / "comparison.csv").read_text()


def test_comparison_is_order_independent(mixed_runs):
    assert comparison_table(mixed_runs[::-1]) == comparison_table(mixed_runs)


def test_identical_runs_have_zero_spread(mixed_runs):
    text = spread_table(mixed_runs[:2])
    assert "seeds 0,1" in text
    assert all(line.endswith("+- 0.0000") for line in text.splitlines()[2:])
    rows = spread_csv(mixed_runs[:2]).splitlines()[1:]
    assert [r.split(",")[3] for r in rows] == ["0.0", "0.0", "0.0"]


def test_spread_of_differing_runs(mixed_runs):
    row = spread_csv(mixed_runs[2:4]).splitlines()[1].split(",")
    assert row[0] == "mass[torso]"
    assert float(row[2]) == pytest.approx(6.0) and float(row[3]) == pytest.approx(0.1)


def test_estimate_table(mixed_runs):
    text = estimate_table(mixed_runs[0])
    lines = text.splitlines()
    assert lines[1].split() == ["mass[torso]", "+6.0000", "+6.0100", "0.0100"]
    assert lines[-1] == "loss stage1: 1.000e+01 -> 5.000e-01; stage2: 5.000e+00 -> 2.500e-01"
    assert "+0.2000" in text  # damping shown as scale - 1


def test_convergence_and_loss_csv(mixed_runs):
    conv = convergence_csv(mixed_runs[0]).splitlines()
    assert conv[0] == "stage,iteration,loss," + ",".join(NAMES)
    assert len(conv) == 1 + 2 * 2
    curve = loss_curve_csv(mixed_runs[0]).splitlines()
    assert len(curve) == 1 + 2 * 3 and curve[2] == "stage1,1,2.0"


def test_run_record_roundtrip(mixed_runs):
    run = mixed_runs[0]
    text = run.to_json()
    assert RunRecord.from_json(text) == run
    assert json.loads(text)["truth"] == TRUTH


def test_run_record_rejects_other_json():
    with pytest.raises(FormatError):
        RunRecord.from_json('{"stage1": 1.0}')
    with pytest.raises(FormatError):
        RunRecord.from_json("[1, 2")


def test_seed_spread_is_exactly_zero_for_identical_values():
    v = 1.7446678440967576
    assert np.std([v] * 5) > 0.0  # the mean rounds away from v
    assert seed_spread([v] * 5)[1] == 0.0
    mean, std = seed_spread([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5 and std == pytest.approx(np.std([1.0, 2.0, 3.0, 4.0]), rel=1e-15)
