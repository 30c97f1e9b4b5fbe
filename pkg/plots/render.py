#!/usr/bin/env python3
"""Render figure images from the pipeline's CSV tables.

Reads one JSON figure spec and writes one image:

    python plots/render.py --spec figure.json

The spec names the input CSV, the figure kind, the output path, and optional
axis labels::

    {"input": "out/fig1_values.csv", "figure": "fig1", "output": "fig1.png",
     "xlabel": "t", "ylabel": "value"}

Figure kinds and the columns they require:

* ``fig1`` — three value-vs-time curves from ``(t, V0, V1, V2)``.
* ``fig2``/``fig3`` — a value-difference heatmap from ``(i, c_b2, difference)``.
* ``fig4`` — log relative difference vs kernel size from
  ``(probe_inventory, n, log_rel_diff)``, one ordinary-least-squares line per
  probe drawn in red, each slope printed to stdout.

Inputs are opened read-only; a schema mismatch (missing column, empty table,
unknown figure or spec key) exits with status 2, an unreadable file with 3.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib import pyplot as plt

FIGURE_COLUMNS = {
    "fig1": ("t", "V0", "V1", "V2"),
    "fig2": ("i", "c_b2", "difference"),
    "fig3": ("i", "c_b2", "difference"),
    "fig4": ("probe_inventory", "n", "log_rel_diff"),
}

DEFAULT_LABELS = {
    "fig1": ("t", "value at the probe state"),
    "fig2": ("second bid-memory coordinate", "inventory"),
    "fig3": ("second bid-memory coordinate", "inventory"),
    "fig4": ("number of exponentials n", "log relative difference"),
}

_SPEC_KEYS = ("input", "figure", "output", "xlabel", "ylabel", "title")


class SpecError(ValueError):
    """The figure spec or the CSV schema does not match expectations."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure to render: input table, figure kind, output image, labels."""

    input: str
    figure: str
    output: str
    xlabel: str | None = None
    ylabel: str | None = None
    title: str | None = None

    def __post_init__(self) -> None:
        if self.figure not in FIGURE_COLUMNS:
            raise SpecError(
                f"unknown figure {self.figure!r}; expected one of {sorted(FIGURE_COLUMNS)}"
            )

    @staticmethod
    def from_json(text: str) -> "FigureSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise SpecError("spec must be a JSON object")
        unknown = sorted(set(data) - set(_SPEC_KEYS))
        if unknown:
            raise SpecError(f"unknown spec keys: {', '.join(unknown)}")
        for key in ("input", "figure", "output"):
            if key not in data:
                raise SpecError(f"spec is missing {key!r}")
        return FigureSpec(**{k: str(v) for k, v in data.items()})


def load_columns(path: str, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Read the required columns as float arrays; reject schema mismatches."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [name for name in required if name not in header]
        if missing:
            raise SpecError(
                f"{path}: missing columns {', '.join(missing)} (found {', '.join(header) or 'none'})"
            )
        rows = list(reader)
    if not rows:
        raise SpecError(f"{path}: no data rows")
    try:
        return {name: np.array([float(row[name]) for row in rows]) for name in required}
    except (TypeError, ValueError) as exc:
        raise SpecError(f"{path}: non-numeric value in a required column: {exc}") from exc


def _render_curves(ax, table) -> None:
    for name in ("V0", "V1", "V2"):
        ax.plot(table["t"], table[name], label=name)
    ax.legend()


def _render_heatmap(fig, ax, table) -> None:
    i_vals = np.unique(table["i"])
    c_vals = np.unique(table["c_b2"])
    z = np.full((i_vals.size, c_vals.size), np.nan)
    i_pos = {v: k for k, v in enumerate(i_vals)}
    c_pos = {v: k for k, v in enumerate(c_vals)}
    for i, c, d in zip(table["i"], table["c_b2"], table["difference"]):
        z[i_pos[i], c_pos[c]] = d
    mesh = ax.pcolormesh(c_vals, i_vals, z, shading="nearest")
    fig.colorbar(mesh, ax=ax)


def _render_regression(ax, table) -> list[tuple[int, float]]:
    slopes = []
    for inv in np.unique(table["probe_inventory"]):
        mask = table["probe_inventory"] == inv
        ns = table["n"][mask]
        ys = table["log_rel_diff"][mask]
        points = ax.plot(ns, ys, "o", label=f"inventory {int(inv):+d}")
        if ns.size >= 2:
            coeffs = np.polyfit(ns, ys, 1)
            ax.plot(ns, np.polyval(coeffs, ns), "-", color="red", linewidth=1)
            slopes.append((int(inv), float(coeffs[0])))
    ax.legend()
    return slopes


def render(spec: FigureSpec) -> str:
    """Write the image described by the spec; return the output path."""
    table = load_columns(spec.input, FIGURE_COLUMNS[spec.figure])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    try:
        if spec.figure == "fig1":
            _render_curves(ax, table)
        elif spec.figure in ("fig2", "fig3"):
            _render_heatmap(fig, ax, table)
        else:
            for inv, slope in _render_regression(ax, table):
                print(f"{spec.figure} regression slope (inventory {inv:+d}): {slope:+.6f}")
        xlabel, ylabel = DEFAULT_LABELS[spec.figure]
        ax.set_xlabel(spec.xlabel or xlabel)
        ax.set_ylabel(spec.ylabel or ylabel)
        if spec.title:
            ax.set_title(spec.title)
        fig.savefig(spec.output, dpi=150, bbox_inches="tight")
    finally:
        plt.close(fig)
    return spec.output


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=
        "render one figure image from a pipeline CSV, as described by a JSON spec")
    parser.add_argument("--spec", required=True, help="path to the figure-spec JSON file")
    args = parser.parse_args(argv)
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = FigureSpec.from_json(fh.read())
        out = render(spec)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
