"""Command-line entry point: ``plots <kind> --in PATH --out DIR``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figspec import KINDS, normalize_kind
from .io import PlotsError
from .render import plot_collapse, plot_crossing, plot_phase_diagram

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots",
        description=(
            "Render figures from renyiqmc sweep and analysis outputs. "
            "Writes both .svg and .png per figure."
        ),
    )
    parser.add_argument(
        "kind",
        help="figure kind: " + ", ".join(KINDS) + " (hyphens accepted)",
    )
    parser.add_argument(
        "--in",
        dest="input_path",
        required=True,
        help=(
            "analysis JSON file (crossing/collapse) or sweep directory "
            "containing */summary.json (phase_diagram); for crossing/"
            "collapse a directory is accepted and <dir>/analysis.json used"
        ),
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--stem",
        default=None,
        help="output file stem (default: the figure kind)",
    )
    parser.add_argument(
        "--quantity",
        default="R1",
        help="estimate name for phase_diagram (default R1)",
    )
    parser.add_argument(
        "--nu", type=float, default=None, help="override collapse exponent nu"
    )
    parser.add_argument(
        "--xc", type=float, default=None, help="override collapse point x_c"
    )
    parser.add_argument("--xlabel", default="", help="x-axis label override")
    parser.add_argument("--ylabel", default="", help="y-axis label override")
    parser.add_argument("--title", default="", help="figure title override")
    return parser


def _analysis_file(input_path: str) -> Path:
    path = Path(input_path)
    if path.is_dir():
        return path / "analysis.json"
    return path


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        kind = normalize_kind(args.kind)
    except ValueError as exc:
        print(f"plots: {exc}", file=sys.stderr)
        return EXIT_USAGE

    stem = Path(args.out) / (args.stem or kind)
    try:
        if kind == "crossing":
            meta = plot_crossing(
                _analysis_file(args.input_path),
                stem,
                xlabel=args.xlabel,
                ylabel=args.ylabel,
                title=args.title,
            )
            marker = meta["marker"]
            print(
                f"crossing marker at {marker['x']:.6f} "
                f"± {marker['band']:.6f}"
            )
        elif kind == "collapse":
            meta = plot_collapse(
                _analysis_file(args.input_path),
                stem,
                nu=args.nu,
                x_c=args.xc,
                xlabel=args.xlabel,
                ylabel=args.ylabel,
                title=args.title,
            )
            print(
                f"collapse with x_c = {meta['x_c']:.6f}, "
                f"nu = {meta['nu']:.4f}, spread = {meta['spread']:.6f}"
            )
        else:
            meta = plot_phase_diagram(
                args.input_path,
                stem,
                quantity=args.quantity,
                xlabel=args.xlabel or "J",
                ylabel=args.ylabel or "p",
                title=args.title,
            )
            print(
                f"phase diagram of {meta['quantity']} "
                f"over {meta['n_points']} points"
            )
    except PlotsError as exc:
        print(f"plots: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {meta['svg']} and {meta['png']}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
