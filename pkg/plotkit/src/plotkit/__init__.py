"""Figure rendering for wolfpack metrics JSONL (schema v1)."""

from .figures import render, render_attack_bars, render_curves, render_step_probs
from .io import PlotError, load_spec, read_rows, validate_spec

__all__ = ["render", "render_attack_bars", "render_curves",
           "render_step_probs", "PlotError", "load_spec", "read_rows",
           "validate_spec"]

__version__ = "0.1.0"
