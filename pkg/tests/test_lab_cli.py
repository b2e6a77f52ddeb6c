import math
import os

import numpy as np
import pytest

from mdrklab import lab
from mdrklab.cli import main
from mdrklab.newton import NewtonConfig


def test_convergence_backward_euler_first_order():
    recs = lab.run_convergence(
        "ImplTaylor-1", "ej", "direct", "dimdrk", "dahlquist", 1.0, 1.0, [8, 16, 32, 64]
    )
    eocs = [r.eoc for r in recs if r.eoc is not None]
    assert all(abs(e - 1.0) <= 0.15 for e in eocs)
    assert all(r.converged for r in recs)


def test_convergence_rows_are_reproducible_and_extendable():
    args = ("HB-I2DRK4-2s", "at", "direct", "dimdrk", "kaps", 1.0, 1.0)
    first = lab.run_convergence(*args, [4, 8])
    again = lab.run_convergence(*args, [4, 8])
    assert lab.records_to_csv(first) == lab.records_to_csv(again)
    extended = lab.run_convergence(*args, [4, 8, 16])
    for a, b in zip(first, extended):
        assert b.l2_error == pytest.approx(a.l2_error, abs=1e-14)


def test_convergence_requires_increasing_steps():
    with pytest.raises(ValueError, match="increasing"):
        lab.run_convergence(
            "ImplTaylor-1", "ej", "direct", "dimdrk", "dahlquist", 1.0, 1.0, [8, 8]
        )


def test_reference_state_is_cached(tmp_path):
    model = lab.make_problem("pr", 1.0)
    ref1 = lab.reference_state(model, 1.0, 4, directory=tmp_path)
    files = list(tmp_path.glob("ref_pr_*.json"))
    assert len(files) == 1
    ref2 = lab.reference_state(model, 1.0, 4, directory=tmp_path)
    assert np.array_equal(ref1, ref2)


def test_reference_unavailable_error():
    with pytest.raises(lab.ReferenceUnavailableError):
        lab.run_convergence(
            "ImplTaylor-1", "ej", "direct", "dimdrk", "pr", 1.0, 1.0, [4, 8],
            allow_fine_reference=False,
        )


def test_conditioning_records_eo_and_modes():
    recs = lab.run_conditioning(
        "ImplTaylor-3", "at", "dersol", "dimdrk", "pr", [1e-1, 1e-2, 1e-3]
    )
    assert recs[0].eo_eps is None
    assert recs[1].eo_eps == pytest.approx(1.0, abs=0.3)
    assert all("analytic" in r.method for r in recs)
    recs = lab.run_conditioning(
        "ImplTaylor-3", "rec", "direct", "dimdrk", "pr", [1e-1, 1e-2]
    )
    assert all(r.method.endswith("+fd") for r in recs)


def test_conditioning_requires_decreasing_epsilons():
    with pytest.raises(ValueError, match="decreasing"):
        lab.run_conditioning(
            "ImplTaylor-3", "at", "direct", "dimdrk", "pr", [1e-2, 1e-1]
        )


def test_integrate_runner_backward_euler():
    record, state, iters = lab.run_integrate(
        "ImplTaylor-1", "ej", "direct", "dimdrk", "dahlquist", 1.0, 1.0, 10
    )
    assert state[0] == pytest.approx(0.385543, abs=5e-7)
    assert record.converged
    assert len(iters) == 10
    assert record.l2_error is not None  # exact reference available


def test_csv_round_trip(tmp_path):
    recs = lab.run_conditioning(
        "ImplTaylor-3", "at", "direct", "dimdrk", "pr", [1e-1, 1e-2], t_end=1.0
    )
    path = tmp_path / "cond.csv"
    lab.write_records(recs, path)
    rows = lab.read_records(path)
    assert rows[0]["method"] == recs[0].method
    assert rows[0]["epsilon"] == pytest.approx(0.1)
    assert rows[1]["eo_eps"] == pytest.approx(recs[1].eo_eps)
    assert rows[0]["l2_error"] is None
    assert rows[0]["converged"] is True


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def test_cli_integrate_prints_final_state(tmp_path, capsys):
    code = main(
        [
            "integrate",
            "--scheme", "ImplTaylor-1",
            "--strategy", "ej",
            "--problem", "dahlquist",
            "--epsilon", "1",
            "--tend", "1.0",
            "--nsteps", "10",
            "--out", str(tmp_path / "run.csv"),
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "0.385543" in out
    assert "newton iterations per step" in out
    assert (tmp_path / "run.csv").exists()


def test_cli_unknown_scheme_exits_2(capsys):
    code = main(["integrate", "--scheme", "RK44", "--problem", "dahlquist"])
    err = capsys.readouterr().err
    assert code == 2
    assert "HB-I2DRK4-2s" in err


def test_cli_convergence_writes_csv_to_stdout(capsys):
    code = main(
        [
            "convergence",
            "--scheme", "ImplTaylor-1",
            "--strategy", "ej",
            "--problem", "dahlquist",
            "--tend", "1.0",
            "--nsteps", "4,8,16",
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    header, *rows = [ln for ln in out.splitlines() if ln]
    assert header.split(",") == list(lab.CSV_COLUMNS)
    assert len(rows) == 3


def test_cli_no_fine_reference_flag_exits_2(capsys):
    code = main(
        [
            "convergence",
            "--scheme", "ImplTaylor-1",
            "--problem", "pr",
            "--nsteps", "4,8",
            "--no-fine-reference",
        ]
    )
    assert code == 2
    assert "reference" in capsys.readouterr().err


def test_cli_conditioning_diverged_run_exits_1(tmp_path, capsys):
    out = tmp_path / "cond.csv"
    code = main(
        [
            "conditioning",
            "--scheme", "ImplTaylor-3",
            "--strategy", "at",
            "--problem", "pr",
            "--epsilon", "1e-4,1e-5",
            "--tend", "1.0",
            "--maxiter", "400",
            "--p", "1",
            "--out", str(out),
        ]
    )
    assert code == 1
    rows = lab.read_records(out)
    assert any(not r["converged"] for r in rows)
    assert all(r["mean_cond1"] is not None for r in rows)


def test_cli_bad_list_exits_2(capsys):
    code = main(["conditioning", "--scheme", "ImplTaylor-3", "--epsilon", "1e-1,1e-2",
                 "--nsteps", "1,2"])
    assert code == 2


def test_cli_plot_renders_files(tmp_path, capsys):
    cond_csv = tmp_path / "cond.csv"
    main(
        [
            "conditioning",
            "--scheme", "ImplTaylor-3",
            "--strategy", "at",
            "--formulation", "dersol",
            "--problem", "pr",
            "--epsilon", "1e-1,1e-2",
            "--out", str(cond_csv),
        ]
    )
    assert main(["plot", str(cond_csv)]) == 0
    assert cond_csv.with_suffix(".pdf").exists()
    out_png = tmp_path / "cond.png"
    assert main(["plot", str(cond_csv), "--out", str(out_png), "--format", "png"]) == 0
    assert out_png.exists()

    conv_csv = tmp_path / "conv.csv"
    main(
        [
            "convergence",
            "--scheme", "ImplTaylor-1",
            "--strategy", "ej",
            "--problem", "dahlquist",
            "--tend", "1.0",
            "--nsteps", "4,8,16",
            "--out", str(conv_csv),
        ]
    )
    assert main(["plot", str(conv_csv)]) == 0
    assert conv_csv.with_suffix(".pdf").exists()


def test_cli_plot_rejects_empty_csv(tmp_path, capsys):
    bad = tmp_path / "empty.csv"
    bad.write_text(",".join(lab.CSV_COLUMNS) + "\n")
    assert main(["plot", str(bad)]) == 2
