"""Turn benchmark CSV files into static figures.

Four figure kinds mirror the benchmark CLI's outputs:

- ``convergence``: relative error vs step size per method (log-log), with
  slope-1 and slope-2 guide lines anchored at the largest-h datum;
- ``mesh``: relative error vs grid size per method;
- ``krylov``: reduced-solve error vs iteration count per subspace variant,
  with the a-priori bound rows overlaid as a dashed series;
- ``adaptive``: rank-vs-time step plot per tolerance, read from the
  ``*_series.csv`` companion files the adaptive command writes.

Rendering is deterministic: a pinned style plus a fixed SVG hash salt makes
re-renders byte-identical for identical inputs.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

KINDS = ("convergence", "mesh", "krylov", "adaptive")

_REQUIRED = {
    "convergence": {"method", "h", "error_rel"},
    "mesh": {"method", "n", "error_rel"},
    "krylov": {"method", "variant", "k", "error_rel"},
    "adaptive": {"tol", "t", "rank"},
}

_STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 120,
    "font.size": 10,
    "font.family": "DejaVu Sans",
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "lowrank-expint-plots",
    "legend.fontsize": 9,
}


class RenderError(Exception):
    """Input CSVs cannot produce the requested figure."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list[Path]
    out: Path
    xscale: str | None = None
    yscale: str | None = None
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RenderError(f"unknown figure kind {self.kind!r}; choose from {KINDS}")
        self.inputs = [Path(p) for p in self.inputs]
        self.out = Path(self.out)
        if not self.inputs:
            raise RenderError("at least one input CSV is required")


def _load_rows(spec: FigureSpec) -> list[dict]:
    rows: list[dict] = []
    needed = _REQUIRED[spec.kind]
    for path in spec.inputs:
        if not path.exists():
            raise RenderError(f"input CSV not found: {path}")
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = set(reader.fieldnames or ())
            missing = needed - header
            if missing:
                raise RenderError(
                    f"{path} lacks required columns {sorted(missing)} "
                    f"for kind {spec.kind!r} (has {sorted(header)})"
                )
            rows.extend(reader)
    return rows


def _series(rows, key_col, x_col, y_col):
    """Group rows into {key: sorted [(x, y), ...]}, skipping blank fields."""
    grouped: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        key, xs, ys = row.get(key_col, ""), row.get(x_col, ""), row.get(y_col, "")
        if not key or xs == "" or ys == "":
            continue
        grouped.setdefault(key, []).append((float(xs), float(ys)))
    for pts in grouped.values():
        pts.sort()
    return grouped


def _finish(fig, ax, spec: FigureSpec, default_x: str, default_y: str):
    ax.set_xscale(spec.xscale or default_x)
    ax.set_yscale(spec.yscale or default_y)
    if spec.title:
        ax.set_title(spec.title)
    ax.legend()
    fig.tight_layout()
    spec.out.parent.mkdir(parents=True, exist_ok=True)
    if spec.out.suffix.lower() == ".svg":
        # a matplotlib SVG embeds a creation date unless told otherwise;
        # dropping it (plus the pinned hash salt) makes re-renders identical
        fig.savefig(spec.out, metadata={"Date": None})
    else:
        fig.savefig(spec.out)
    plt.close(fig)


def _draw_convergence(rows, spec: FigureSpec):
    per_method = _series(rows, "method", "h", "error_rel")
    if not per_method:
        raise RenderError("no (method, h, error_rel) rows to plot")
    fig, ax = plt.subplots()
    anchor = (0.0, 0.0)
    h_all = []
    for method in sorted(per_method):
        pts = per_method[method]
        hs = [p[0] for p in pts]
        errs = [p[1] for p in pts]
        ax.plot(hs, errs, marker="o", label=method)
        h_all.extend(hs)
        if pts[-1][0] > anchor[0]:
            anchor = pts[-1]
    h0, e0 = anchor
    hs = sorted(set(h_all))
    for slope, ls in ((1, "--"), (2, ":")):
        ax.plot(hs, [e0 * (h / h0) ** slope for h in hs],
                color="black", linestyle=ls, linewidth=1.0, label=f"slope {slope}")
    ax.set_xlabel("step size h")
    ax.set_ylabel("relative error")
    _finish(fig, ax, spec, "log", "log")


def _draw_mesh(rows, spec: FigureSpec):
    per_method = _series(rows, "method", "n", "error_rel")
    if not per_method:
        raise RenderError("no (method, n, error_rel) rows to plot")
    fig, ax = plt.subplots()
    for method in sorted(per_method):
        pts = per_method[method]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", label=method)
    ax.set_xlabel("grid size n")
    ax.set_ylabel("relative error")
    _finish(fig, ax, spec, "linear", "log")


def _draw_krylov(rows, spec: FigureSpec):
    variant_rows = [r for r in rows if r.get("variant")]
    per_variant = _series(variant_rows, "variant", "k", "error_rel")
    if not per_variant:
        raise RenderError("no (variant, k, error_rel) rows to plot")
    fig, ax = plt.subplots()
    for variant in sorted(per_variant):
        pts = per_variant[variant]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=variant)
    bound_rows = [r for r in rows if r.get("method") == "bound_order1"]
    bounds = _series(bound_rows, "method", "k", "error_rel").get("bound_order1")
    if bounds:
        ax.plot([p[0] for p in bounds], [p[1] for p in bounds],
                color="black", linestyle="--", linewidth=1.2, label="a-priori bound")
    ax.set_xlabel("Krylov iterations k")
    ax.set_ylabel("relative error")
    _finish(fig, ax, spec, "log", "log")


def _draw_adaptive(rows, spec: FigureSpec):
    per_tol = _series(rows, "tol", "t", "rank")
    if not per_tol:
        raise RenderError("no (tol, t, rank) rows to plot; pass the *_series.csv file")
    fig, ax = plt.subplots()
    for tol in sorted(per_tol, key=float):
        pts = per_tol[tol]
        ax.step([p[0] for p in pts], [p[1] for p in pts], where="post",
                label=f"tol={float(tol):g}")
    ax.set_xlabel("time t")
    ax.set_ylabel("rank")
    _finish(fig, ax, spec, "linear", "linear")


_DRAWERS = {
    "convergence": _draw_convergence,
    "mesh": _draw_mesh,
    "krylov": _draw_krylov,
    "adaptive": _draw_adaptive,
}


def render(spec: FigureSpec) -> Path:
    """Render the figure described by ``spec``; returns the output path.

    Raises RenderError (and writes nothing) when the inputs are missing,
    lack the kind's columns, or select no data points.
    """
    rows = _load_rows(spec)
    with matplotlib.rc_context(_STYLE):
        _DRAWERS[spec.kind](rows, spec)
    return spec.out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render", description="Render figures from benchmark CSV results."
    )
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        metavar="CSV", help="input CSV (repeatable)")
    parser.add_argument("--out", required=True, help="output image path (.svg, .png, ...)")
    parser.add_argument("--xscale", choices=("linear", "log"), default=None)
    parser.add_argument("--yscale", choices=("linear", "log"), default=None)
    parser.add_argument("--title", default="")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(kind=args.kind, inputs=args.inputs, out=args.out,
                          xscale=args.xscale, yscale=args.yscale, title=args.title)
        render(spec)
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
