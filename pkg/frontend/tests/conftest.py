"""Shared synthetic fixtures for the plotting tests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

PLANTED_XC = 0.355
PLANTED_NU = 1.0


def planted_curves(
    sizes=(4, 8, 16),
    x_c=PLANTED_XC,
    nu=PLANTED_NU,
    n_points=13,
    stderr=0.004,
):
    """Noiseless ratio curves R = 2 + tanh((x - x_c) * L^(1/nu))."""
    xs = np.linspace(0.30, 0.42, n_points)
    curves = []
    for L in sizes:
        u = (xs - x_c) * float(L) ** (1.0 / nu)
        values = 2.0 + np.tanh(u)
        curves.append(
            {
                "L": int(L),
                "points": [
                    [float(x), float(v), float(stderr)]
                    for x, v in zip(xs, values)
                ],
            }
        )
    return curves


def planted_analysis(
    sizes=(4, 8, 16),
    x_c=PLANTED_XC,
    nu=PLANTED_NU,
    *,
    with_crossings=True,
    with_collapse=True,
    crossing_jitter=(0.0010, -0.0008, 0.0002),
    crossing_sigma=0.002,
):
    """A full analysis document with a planted crossing at ``x_c``.

    The pairwise crossing entries are deterministically jittered around the
    planted value so the weighted-mean marker is a genuine combination, not
    a copy of a single number.
    """
    curves = planted_curves(sizes=sizes, x_c=x_c, nu=nu)
    crossings = []
    if with_crossings:
        pairs = [
            (sizes[i], sizes[j])
            for i in range(len(sizes))
            for j in range(i + 1, len(sizes))
        ]
        for k, (La, Lb) in enumerate(pairs):
            jit = crossing_jitter[k % len(crossing_jitter)]
            crossings.append(
                {
                    "found": True,
                    "x": x_c + jit,
                    "sigma_x": crossing_sigma,
                    "L_a": La,
                    "L_b": Lb,
                    "window": [0.30, 0.42],
                    "n_bootstrap": 100,
                    "note": "",
                }
            )
    collapse = None
    if with_collapse:
        collapse = {
            "x_c": x_c,
            "nu": nu,
            "quality": 1.0e-4,
            "bootstrap_errors": [0.003, 0.02],
            "converged": True,
            "n_bootstrap": 100,
        }
    return {
        "schema": "renyiqmc-analysis/1",
        "curves": curves,
        "crossings": crossings,
        "collapse": collapse,
        "nu_from_slopes": None,
        "inputs": {"x": "p", "quantity": "R1"},
    }


def write_analysis(tmp_path: Path, doc: dict, name: str = "analysis.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    return path


def synthetic_summary(J: float, p: float, value: float, quantity: str = "R1"):
    return {
        "schema": "renyiqmc-summary/1",
        "lattice": {"Lx": 2, "Ly": 2, "n_sites": 4},
        "params": {"J": J, "beta": 1.0, "p": p},
        "r": 2,
        "purity_mode": False,
        "sweeps": {"thermalization": 100, "measurement": 400},
        "estimates": {
            quantity: {
                "value": value,
                "stderr": 0.01,
                "n_bins": 25,
                "autocorrelation_time_estimate": 1.0,
                "flags": [],
            }
        },
        "metadata": {},
    }


def write_sweep_tree(tmp_path: Path, quantity: str = "R1") -> Path:
    """A minimal sweep directory with four summary-bearing cells."""
    root = tmp_path / "sweep"
    cells = [
        (0.1, 0.2, 1.30),
        (0.1, 0.5, 1.55),
        (0.3, 0.2, 1.80),
        (0.3, 0.5, 2.05),
    ]
    for J, p, value in cells:
        cell = root / f"J{J}_p{p}"
        cell.mkdir(parents=True)
        doc = synthetic_summary(J, p, value, quantity=quantity)
        (cell / "summary.json").write_text(
            json.dumps(doc, indent=1), encoding="utf-8"
        )
    return root


@pytest.fixture
def analysis_path(tmp_path):
    return write_analysis(tmp_path, planted_analysis())
