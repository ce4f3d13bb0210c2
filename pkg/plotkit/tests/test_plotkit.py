"""Figure rendering from the bundled sample metrics."""

import json
import os

import pytest

from plotkit import PlotError, render, validate_spec
from plotkit.cli import main
from plotkit.figures import render_attack_bars, render_curves, render_step_probs

SAMPLE = os.path.join(os.path.dirname(__file__), "data", "sample_metrics.jsonl")


def _spec(figure, out, **extra):
    spec = {"figure": figure, "metrics": [SAMPLE], "out": str(out)}
    spec.update(extra)
    return validate_spec(spec)


def test_curves_render_png_and_svg(tmp_path):
    written = render_curves(_spec("curves", tmp_path / "curves",
                                  smoothing_window=5))
    assert sorted(os.path.splitext(w)[1] for w in written) == [".png", ".svg"]
    for path in written:
        assert os.path.getsize(path) > 1000


def test_curves_single_seed_band_collapses(tmp_path):
    # Rendering only seed-0 rows must still work (band is the line).
    import json as _json
    rows = [_json.loads(l) for l in open(SAMPLE, encoding="utf-8")]
    solo = tmp_path / "solo.jsonl"
    with open(solo, "w", encoding="utf-8") as fh:
        for r in rows:
            if r["kind"] == "train_episode" and r["seed"] == 0:
                fh.write(_json.dumps(r) + "\n")
    written = render_curves(validate_spec({
        "figure": "curves", "metrics": [str(solo)],
        "out": str(tmp_path / "solo")}))
    assert written


def test_smoothing_window_one_is_raw(tmp_path):
    a = render_curves(_spec("curves", tmp_path / "w1", smoothing_window=1))
    b = render_curves(_spec("curves", tmp_path / "w5", smoothing_window=5))
    assert open(a[0], "rb").read() != open(b[0], "rb").read()


def test_attack_bars_render(tmp_path):
    written = render_attack_bars(_spec(
        "attack_bars", tmp_path / "bars",
        attackers=["natural", "random", "wolfpack"],
        methods=["qmix-vanilla", "qmix-wall"]))
    assert len(written) == 2


def test_attack_bars_missing_attacker_errors(tmp_path):
    with pytest.raises(PlotError, match="attacker"):
        render_attack_bars(_spec("attack_bars", tmp_path / "bars",
                                 attackers=["natural", "ega"]))


def test_attack_bars_on_rows_without_attacker_column(tmp_path):
    bad = tmp_path / "noattacker.jsonl"
    with open(bad, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"v": 1, "kind": "eval_episode",
                             "ep_return": 1.0, "method": "m", "seed": 0}) + "\n")
    with pytest.raises(PlotError, match="'attacker'"):
        render_attack_bars(validate_spec({
            "figure": "attack_bars", "metrics": [str(bad)],
            "out": str(tmp_path / "x")}))


def test_step_probs_three_temperature_traces(tmp_path):
    written = render_step_probs(_spec("step_probs", tmp_path / "probs",
                                      temperatures=[0.1, 1.0, 10.0]))
    assert len(written) == 2


def test_empty_selection_gives_explicit_message(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(PlotError, match="no train_episode rows"):
        render_curves(validate_spec({"figure": "curves",
                                     "metrics": [str(empty)],
                                     "out": str(tmp_path / "none")}))


def test_spec_validation_errors(tmp_path):
    with pytest.raises(PlotError):
        validate_spec({"figure": "curves"})
    with pytest.raises(PlotError):
        validate_spec({"figure": "pie", "metrics": [SAMPLE], "out": "x"})
    with pytest.raises(PlotError):
        validate_spec({"figure": "curves", "metrics": [SAMPLE], "out": "x",
                       "smoothing_window": 0})
    with pytest.raises(PlotError):
        validate_spec({"figure": "curves", "metrics": ["/nope.jsonl"],
                       "out": "x"})
    with pytest.raises(PlotError):
        validate_spec({"figure": "curves", "metrics": [SAMPLE], "out": "x",
                       "formats": ["bmp"]})
    with pytest.raises(PlotError):
        validate_spec({"figure": "curves", "metrics": [SAMPLE], "out": "x",
                       "surprise": 1})


def test_inputs_untouched_and_output_deterministic(tmp_path):
    before = open(SAMPLE, "rb").read()
    for figure, extra in (("curves", {"smoothing_window": 3}),
                          ("attack_bars", {}),
                          ("step_probs", {"temperatures": [0.1, 1.0, 10.0]})):
        first = render(_spec(figure, tmp_path / "a" / figure, **extra))
        second = render(_spec(figure, tmp_path / "b" / figure, **extra))
        for f1, f2 in zip(first, second):
            assert open(f1, "rb").read() == open(f2, "rb").read()
    assert open(SAMPLE, "rb").read() == before


def test_cli_plot_subcommand(tmp_path, capsys):
    spec_path = tmp_path / "fig.json"
    spec_path.write_text(json.dumps({
        "figure": "curves", "metrics": [SAMPLE],
        "out": str(tmp_path / "cli_curves")}), encoding="utf-8")
    assert main(["plot", "--spec", str(spec_path)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 2 and all(os.path.exists(p) for p in out)
    assert main(["--spec", str(spec_path)]) == 0

    bad = tmp_path / "bad.json"
    bad.write_text("{}", encoding="utf-8")
    assert main(["plot", "--spec", str(bad)]) == 1
