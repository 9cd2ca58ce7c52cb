"""Diagonal measurements and error analysis for the replica ensembles.

Turns raw per-sweep sampler rows into typed measurement records, applies
thermalization cuts, and produces binned jackknife estimates of the
linear and Renyi-2 diagnostics (C0, C1, C2) and their summed Binder
ratios (R0, R1, R2), together with CSV / JSON persistence.

Estimator identities (every inserted observable is Z-diagonal):

* the junction slices of the r=2 contour expose two Z-basis
  configurations z^(1), z^(2); inserting Z_i Z_j at a junction
  multiplies the configuration weight by the corresponding spin
  product, because every contour operator between the two insertions
  is Z-diagonal at that slice.  Hence

      C2(i,j)  <-  z_i^(1) z_j^(1) z_i^(2) z_j^(2)
      C1(i,j)  <-  z_i^(k) z_j^(k)        averaged over junctions k

* the r=1 ensemble measures C0(i,j) <- z_i z_j on its single slice
  (the dephasing channel commutes with ZZ, so the linear correlator is
  channel-invariant and the r=1 run supplies it);

* the summed Binder ratios use the all-site sums (coincident indices
  included, as powers of a total sum)

      M_k = sum_i z_i^(k),      Q = sum_i z_i^(1) z_i^(2)

  with R = <S^4> / <S^2>^2 estimated as mean(num) / mean(den)^2 under
  a jackknife over bins (junction-averaged for R1).

Error analysis: streams are binned and the bin size doubled until the
jackknife error plateaus (10% tolerance); ratio estimates are jackknife
bias-corrected.  Thermalization discards max(20% of the stream, 10x the
estimated integrated autocorrelation time).
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .contour import ContourState
from .ed_oracle import ModelParams
from .lattice import LatticeSpec, correlation_distance_pairs

__all__ = [
    "EstimationError",
    "InsufficientDataError",
    "MeasurementRecord",
    "RatioEstimate",
    "measure",
    "records_from_rows",
    "autocorrelation_time",
    "thermalization_cut",
    "bin_and_jackknife",
    "binder_transform",
    "odds_transform",
    "binder_ratio",
    "summarize_run",
    "write_measurements_csv",
    "read_measurements_csv",
    "write_summary_json",
    "CSV_COLUMNS",
]

#: Relative tolerance for the binning-error plateau detector.
PLATEAU_TOLERANCE = 0.10

#: Binder ratios are reported, not clipped; values outside this window
#: (1 exact broken-phase floor, 3 Gaussian limit + 0.5 finite-size
#: allowance) are flagged for review.
BINDER_EXPECTED_RANGE = (1.0, 3.5)

CSV_COLUMNS = (
    "sweep_index",
    "M1",
    "M2",
    "Q",
    "C1_maxdist",
    "C2_maxdist",
    "sector_fraction",
)


class EstimationError(RuntimeError):
    """Numerical failure inside an estimator (e.g. vanishing denominator)."""


class InsufficientDataError(EstimationError):
    """Too few measurements to honor the requested analysis."""


# ------------------------------------------------------------------ records
@dataclass(frozen=True)
class MeasurementRecord:
    """Per-sweep diagonal measurements.

    For r=1 runs the junction-pair fields (m2, q, c1_maxdist,
    c2_maxdist) are None; for r=2 runs the single-slice field
    c0_maxdist is None (the r=2 measurement slices are the junction
    slices, where the equal-time pair product estimates C1, not C0).
    Records are immutable; accumulating them is an order-independent
    merge.
    """

    sweep_index: int
    r: int
    m1: int
    m2: int | None
    q: int | None
    c0_maxdist: float | None
    c1_maxdist: float | None
    c2_maxdist: float | None
    sector_fraction: float
    topology_joined: bool
    n_operators: int

    def validate(self, n_sites: int) -> None:
        """Hard invariants: |M1|, |M2|, |Q| <= N and all of parity N."""
        for name in ("m1", "m2", "q"):
            v = getattr(self, name)
            if v is None:
                continue
            if abs(v) > n_sites:
                raise ValueError(f"{name}={v} exceeds the site count {n_sites}")
            if (v - n_sites) % 2 != 0:
                raise ValueError(f"{name}={v} has the wrong parity for N={n_sites}")
        if not 0.0 <= self.sector_fraction <= 1.0:
            raise ValueError(f"sector_fraction={self.sector_fraction} not in [0, 1]")


def _records_from_rows(rows: np.ndarray, n_pairs: int, n_bonds: int, r: int,
                       first_sweep_index: int) -> list[MeasurementRecord]:
    recs = []
    denom = float(r * n_bonds)
    for k in range(rows.shape[0]):
        row = rows[k]
        common = dict(
            sweep_index=first_sweep_index + k,
            r=r,
            m1=int(row[K.MEAS_M1]),
            sector_fraction=float(row[K.MEAS_S2N]) / denom,
            topology_joined=bool(row[K.MEAS_TOPO] == K.TOPO_JOINED),
            n_operators=int(row[K.MEAS_NOPS]),
        )
        if r == 1:
            recs.append(MeasurementRecord(
                m2=None, q=None,
                c0_maxdist=float(row[K.MEAS_C0]) / n_pairs,
                c1_maxdist=None, c2_maxdist=None, **common))
        else:
            recs.append(MeasurementRecord(
                m2=int(row[K.MEAS_M2]), q=int(row[K.MEAS_Q]),
                c0_maxdist=None,
                c1_maxdist=float(row[K.MEAS_C1X2]) / (2.0 * n_pairs),
                c2_maxdist=float(row[K.MEAS_C2]) / n_pairs, **common))
    return recs


def records_from_rows(rows: np.ndarray, spec: LatticeSpec, r: int,
                      first_sweep_index: int = 0) -> list[MeasurementRecord]:
    """Convert raw sampler rows (int64[n, N_MEAS_COLS]) to typed records."""
    n_pairs = len(correlation_distance_pairs(spec))
    return _records_from_rows(np.asarray(rows), n_pairs, spec.n_bonds, r,
                              first_sweep_index)


def measure(contour: ContourState) -> MeasurementRecord:
    """One diagonal measurement of the sampler's current configuration."""
    row = contour.measure_row()
    rec = records_from_rows(row[None, :], contour.spec, contour.r,
                            contour.sweep_index)[0]
    rec.validate(contour.spec.n_sites)
    return rec


# ----------------------------------------------------------------- estimates
@dataclass(frozen=True)
class RatioEstimate:
    """A binned jackknife estimate with its error budget."""

    value: float
    stderr: float
    n_bins: int
    autocorrelation_time_estimate: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n_bins": self.n_bins,
            "autocorrelation_time_estimate": self.autocorrelation_time_estimate,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RatioEstimate":
        return cls(value=float(d["value"]), stderr=float(d["stderr"]),
                   n_bins=int(d["n_bins"]),
                   autocorrelation_time_estimate=float(
                       d["autocorrelation_time_estimate"]),
                   flags=tuple(d.get("flags", ())))


def autocorrelation_time(stream, *, rho_cut: float = 0.05) -> float:
    """Integrated autocorrelation time (windowed sum, cut at rho < rho_cut).

    Returns 0.5 for an uncorrelated stream (so that 2*tau*var/n is the
    naive variance of the mean).
    """
    x = np.asarray(stream, dtype=float).ravel()
    n = x.size
    if n < 4:
        return 0.5
    f = x - x.mean()
    var = float(np.dot(f, f)) / n
    if var <= 0.0:
        return 0.5
    tau = 0.5
    for t in range(1, n // 4 + 1):
        rho = float(np.dot(f[:-t], f[t:])) / ((n - t) * var)
        if rho < rho_cut:
            break
        tau += rho
    return tau


def thermalization_cut(stream) -> int:
    """Sweeps to discard: max(20% of the stream, 10x estimated tau)."""
    x = np.asarray(stream, dtype=float).ravel()
    n = x.size
    if n == 0:
        return 0
    cut = max(int(math.ceil(0.2 * n)),
              int(math.ceil(10.0 * autocorrelation_time(x))))
    return min(cut, n)


# transforms map bin-mean vectors (..., k) -> estimates (...)
def _mean_transform(v: np.ndarray) -> np.ndarray:
    return v[..., 0]


def _ratio_transform(v: np.ndarray) -> np.ndarray:
    return v[..., 0] / v[..., 1]


def binder_transform(v: np.ndarray) -> np.ndarray:
    """mean(num)/mean(den)^2 — the Binder-ratio estimator shape."""
    return v[..., 0] / np.square(v[..., 1])


def odds_transform(v: np.ndarray) -> np.ndarray:
    """f/(1-f) — turns an indicator fraction into an ensemble-weight ratio."""
    return v[..., 0] / (1.0 - v[..., 0])


def _as_columns(stream) -> np.ndarray:
    x = np.asarray(stream, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("stream must be 1-D scalars or 2-D (n, k) tuples")
    return x


def _jackknife_at(x: np.ndarray, bin_size: int, transform) -> tuple[float, float, int]:
    """Bias-corrected jackknife of transform(columnwise bin means)."""
    n_bins = x.shape[0] // bin_size
    if n_bins < 2:
        raise InsufficientDataError(
            f"need >= 2 bins, got {n_bins} "
            f"(stream length {x.shape[0]}, bin size {bin_size})")
    bins = x[: n_bins * bin_size].reshape(n_bins, bin_size, x.shape[1]).mean(axis=1)
    if np.all(bins == bins[0]):
        # exactly constant bins: the estimate is exact, not merely tight
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(transform(bins[0:1])[0]), 0.0, n_bins
    with np.errstate(divide="ignore", invalid="ignore"):
        theta_full = float(transform(bins.mean(axis=0)[None, :])[0])
        loo = (bins.sum(axis=0)[None, :] - bins) / (n_bins - 1)
        jk = np.asarray(transform(loo), dtype=float)
    theta_dot = float(jk.mean())
    var = (n_bins - 1.0) / n_bins * float(np.sum((jk - theta_dot) ** 2))
    value = n_bins * theta_full - (n_bins - 1) * theta_dot
    return value, math.sqrt(max(var, 0.0)), n_bins


def bin_and_jackknife(stream, bin_size: int | None = None, *,
                      transform: Callable[[np.ndarray], np.ndarray] | None = None,
                      min_bins: int = 16) -> RatioEstimate:
    """Binned jackknife estimate of a scalar stream or a tuple stream.

    A 1-D stream estimates its mean; an (n, 2) stream estimates the
    ratio of column means.  Other shapes require an explicit
    ``transform`` mapping bin-mean vectors (..., k) to estimates (...).

    With ``bin_size=None`` the bin size is doubled from 1 until the
    jackknife error stops growing by more than 10% per doubling
    (plateau detection); if the plateau is not reached before the bin
    count would drop below ``min_bins``, the largest usable bin size is
    used and the estimate is flagged ``no_plateau``.
    """
    x = _as_columns(stream)
    n, k = x.shape
    if transform is None:
        if k == 1:
            transform = _mean_transform
        elif k == 2:
            transform = _ratio_transform
        else:
            raise ValueError(f"no default transform for {k}-column streams")
    if n < 2:
        raise InsufficientDataError(f"stream length {n} < 2")
    flags: list[str] = []
    if bin_size is not None:
        if bin_size < 1:
            raise ValueError(f"bin_size must be >= 1, got {bin_size}")
        if n < 2 * bin_size:
            raise InsufficientDataError(
                f"stream length {n} < 2 x bin size {bin_size}")
        _, stderr_raw, _ = _jackknife_at(x, 1, transform)
        value, stderr, n_bins = _jackknife_at(x, bin_size, transform)
    else:
        if n < max(min_bins, 2):
            raise InsufficientDataError(
                f"stream length {n} < minimum bin count {min_bins}")
        stderr_raw = None
        prev_stderr = None
        history: tuple[float, float, int] | None = None
        b = 1
        while n // b >= max(min_bins, 2):
            value, stderr, n_bins = _jackknife_at(x, b, transform)
            history = (value, stderr, n_bins)
            if stderr_raw is None:
                stderr_raw = stderr
            if prev_stderr is not None and \
                    stderr <= prev_stderr * (1.0 + PLATEAU_TOLERANCE):
                break
            prev_stderr = stderr
            b *= 2
        else:
            flags.append("no_plateau")
        value, stderr, n_bins = history
    if not (math.isfinite(value) and math.isfinite(stderr)):
        raise EstimationError(
            f"non-finite estimate value={value} stderr={stderr} "
            "(vanishing denominator?)")
    if stderr_raw and stderr_raw > 0.0:
        tau = max(0.5, 0.5 * (stderr / stderr_raw) ** 2)
    else:
        tau = 0.5
    return RatioEstimate(value=value, stderr=stderr, n_bins=n_bins,
                         autocorrelation_time_estimate=tau,
                         flags=tuple(flags))


# -------------------------------------------------------------- Binder ratios
_BINDER_FIELDS = {
    "R0": ("m1",),
    "R1": ("m1", "m2"),
    "R2": ("q",),
}


def _binder_columns(kind: str, m1: np.ndarray, m2: np.ndarray | None,
                    q: np.ndarray | None) -> np.ndarray:
    if kind == "R0":
        s2 = m1.astype(float) ** 2
        return np.column_stack([s2 * s2, s2])
    if kind == "R1":
        a = m1.astype(float) ** 2
        b = m2.astype(float) ** 2
        return np.column_stack([0.5 * (a * a + b * b), 0.5 * (a + b)])
    if kind == "R2":
        s2 = q.astype(float) ** 2
        return np.column_stack([s2 * s2, s2])
    raise ValueError(f"unknown Binder kind {kind!r}; expected R0, R1 or R2")


def _binder_estimate(cols: np.ndarray, *, bin_size: int | None,
                     min_bins: int) -> RatioEstimate:
    """Shared Binder core: denominator guard + ratio jackknife + range flag."""
    den = bin_and_jackknife(cols[:, 1], bin_size, min_bins=min(min_bins, 16))
    if den.value <= 3.0 * den.stderr:
        raise EstimationError(
            f"<S^2> = {den.value:.3g} +- {den.stderr:.3g} is consistent with "
            "zero; the Binder ratio is undefined at this statistics level")
    est = bin_and_jackknife(cols, bin_size, transform=binder_transform,
                            min_bins=min_bins)
    flags = list(est.flags)
    lo, hi = BINDER_EXPECTED_RANGE
    if not lo <= est.value <= hi:
        flags.append("outside_expected_range")
    return dataclasses.replace(est, flags=tuple(flags))


def binder_ratio(records: Sequence[MeasurementRecord], kind: str, *,
                 bin_size: int | None = None, min_bins: int = 100,
                 thermalize: bool = True) -> RatioEstimate:
    """Summed Binder ratio R = <S^4>/<S^2>^2 from measurement records.

    kind: "R0" (r=1 slice magnetization), "R1" (junction-averaged
    magnetization, r=2), "R2" (replica overlap Q, r=2).  Applies the
    thermalization cut unless ``thermalize=False``, requires at least
    ``min_bins`` bins afterwards, and reports (not asserts) values
    outside the expected [1, 3.5] window via a flag.
    """
    kind = kind.upper()
    if kind not in _BINDER_FIELDS:
        raise ValueError(f"unknown Binder kind {kind!r}; expected R0, R1 or R2")
    if not records:
        raise InsufficientDataError("no records")
    need_r = 1 if kind == "R0" else 2
    for rec in records:
        if rec.r != need_r:
            raise EstimationError(
                f"{kind} needs r={need_r} records, got a record with r={rec.r}")
    m1 = np.array([rec.m1 for rec in records], dtype=float)
    m2 = (np.array([rec.m2 for rec in records], dtype=float)
          if kind == "R1" else None)
    q = (np.array([rec.q for rec in records], dtype=float)
         if kind == "R2" else None)
    cols = _binder_columns(kind, m1, m2, q)
    if thermalize:
        cut = max(thermalization_cut(cols[:, 0]), thermalization_cut(cols[:, 1]))
        if cut >= len(cols):
            raise InsufficientDataError(
                f"thermalization cut {cut} consumes all {len(cols)} records")
        cols = cols[cut:]
    return _binder_estimate(cols, bin_size=bin_size, min_bins=min_bins)


# ------------------------------------------------------------------- summary
SUMMARY_SCHEMA = "renyiqmc-summary/1"


def _z2_flags(est: RatioEstimate) -> RatioEstimate:
    """Flag a magnetization mean that breaks the global spin-flip symmetry."""
    if est.stderr > 0.0 and abs(est.value) > 4.0 * est.stderr:
        return dataclasses.replace(est, flags=est.flags + ("z2_asymmetry",))
    return est


def summarize_run(chains, spec: LatticeSpec, params: ModelParams, r: int, *,
                  purity_mode: bool = False, min_bins: int = 100,
                  metadata: dict | None = None) -> dict:
    """Full error-analyzed summary of one run (one or more chains).

    ``chains`` is a raw row array (int64[n, N_MEAS_COLS]) or a list of
    them, one per chain.  Each chain is thermalized independently
    (max(20%, 10 tau) on its workhorse series), then the kept rows are
    pooled.  Returns a JSON-serializable dict.
    """
    if isinstance(chains, np.ndarray):
        chains = [chains]
    if not chains or any(len(c) == 0 for c in chains):
        raise InsufficientDataError("empty measurement chain")
    n_pairs = len(correlation_distance_pairs(spec))
    total = sum(len(c) for c in chains)
    kept_list = []
    cut_total = 0
    for rows in chains:
        rows = np.asarray(rows)
        if purity_mode:
            series = (rows[:, K.MEAS_TOPO] == K.TOPO_JOINED).astype(float)
        elif r == 2:
            series = rows[:, K.MEAS_C1X2].astype(float)
        else:
            series = rows[:, K.MEAS_C0].astype(float)
        cut = thermalization_cut(series)
        if cut >= len(rows):
            raise InsufficientDataError(
                f"thermalization cut {cut} consumes a whole chain of {len(rows)}")
        cut_total += cut
        kept_list.append(rows[cut:])
    kept = np.vstack(kept_list)

    estimates: dict[str, RatioEstimate] = {}
    m1 = kept[:, K.MEAS_M1].astype(float)
    estimates["m1_mean"] = _z2_flags(bin_and_jackknife(m1))
    estimates["sector_fraction"] = bin_and_jackknife(
        kept[:, K.MEAS_S2N].astype(float) / (r * spec.n_bonds))
    if purity_mode:
        if r != 2:
            raise EstimationError("purity estimation requires an r=2 run")
        joined = (kept[:, K.MEAS_TOPO] == K.TOPO_JOINED).astype(float)
        fj = bin_and_jackknife(joined)
        if fj.value >= 1.0 or fj.value <= 0.0:
            raise EstimationError(
                f"joined-topology fraction {fj.value:.3g} gives no purity "
                "estimate (topology move never accepted?)")
        estimates["joined_fraction"] = fj
        estimates["purity"] = bin_and_jackknife(joined, transform=odds_transform)
    elif r == 2:
        m2 = kept[:, K.MEAS_M2].astype(float)
        q = kept[:, K.MEAS_Q].astype(float)
        estimates["m2_mean"] = _z2_flags(bin_and_jackknife(m2))
        estimates["C1"] = bin_and_jackknife(
            kept[:, K.MEAS_C1X2].astype(float) / (2.0 * n_pairs))
        estimates["C2"] = bin_and_jackknife(
            kept[:, K.MEAS_C2].astype(float) / n_pairs)
        estimates["R1"] = _binder_estimate(
            _binder_columns("R1", m1, m2, None), bin_size=None, min_bins=min_bins)
        estimates["R2"] = _binder_estimate(
            _binder_columns("R2", None, None, q), bin_size=None, min_bins=min_bins)
    else:
        estimates["C0"] = bin_and_jackknife(
            kept[:, K.MEAS_C0].astype(float) / n_pairs)
        estimates["R0"] = _binder_estimate(
            _binder_columns("R0", m1, None, None), bin_size=None,
            min_bins=min_bins)
        energy_series = (spec.n_sites + params.J * spec.n_bonds
                         - kept[:, K.MEAS_NOPS].astype(float) / params.beta)
        estimates["energy"] = bin_and_jackknife(energy_series)

    return {
        "schema": SUMMARY_SCHEMA,
        "lattice": {"Lx": spec.Lx, "Ly": spec.Ly, "n_sites": spec.n_sites},
        "params": {"J": params.J, "beta": params.beta, "p": params.p},
        "r": r,
        "purity_mode": purity_mode,
        "sweeps": {"total": total, "thermalization_cut": cut_total,
                   "measured": int(len(kept))},
        "estimates": {name: est.to_dict() for name, est in estimates.items()},
        "metadata": dict(metadata or {}),
    }


# --------------------------------------------------------------- persistence
def _fmt(v: float) -> str:
    return format(v, ".17g")


def write_measurements_csv(path, rows: np.ndarray, spec: LatticeSpec, r: int,
                           first_sweep_index: int = 0) -> None:
    """Write raw sampler rows as a deterministic measurement CSV.

    Columns: sweep_index, M1, M2, Q, C1_maxdist, C2_maxdist,
    sector_fraction.  The C1/C2 columns hold the equal-time max-distance
    pair products on the measurement slices: for r=2 these are the
    junction slices (C1/C2 estimator series); for r=1 there is a single
    slice, whose pair product is the C0 estimator series — it is stored
    in the C1_maxdist column and the remaining junction columns (M2, Q,
    C2_maxdist) are written as nan.
    """
    rows = np.asarray(rows)
    n_pairs = len(correlation_distance_pairs(spec))
    denom = float(r * spec.n_bonds)
    lines = [",".join(CSV_COLUMNS)]
    for k in range(rows.shape[0]):
        row = rows[k]
        cells = [str(first_sweep_index + k), str(int(row[K.MEAS_M1]))]
        if r == 1:
            cells += ["nan", "nan",
                      _fmt(float(row[K.MEAS_C0]) / n_pairs), "nan"]
        else:
            cells += [str(int(row[K.MEAS_M2])), str(int(row[K.MEAS_Q])),
                      _fmt(float(row[K.MEAS_C1X2]) / (2.0 * n_pairs)),
                      _fmt(float(row[K.MEAS_C2]) / n_pairs)]
        cells.append(_fmt(float(row[K.MEAS_S2N]) / denom))
        lines.append(",".join(cells))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_measurements_csv(path) -> dict[str, np.ndarray]:
    """Read a measurement CSV back as float column arrays (keyed by name)."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        names = header.split(",") if header else []
        missing = [c for c in CSV_COLUMNS if c not in names]
        if missing:
            raise ValueError(f"measurement CSV {path} is missing "
                             f"columns: {', '.join(missing)}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=float)
    if data.size == 0:
        data = data.reshape(0, len(names))
    if data.shape[1] != len(names):
        raise ValueError(f"measurement CSV {path} has {data.shape[1]} columns, "
                         f"header names {len(names)}")
    return {name: data[:, i] for i, name in enumerate(names)}


def write_summary_json(path, summary: dict) -> None:
    """Write a run summary as deterministic (sorted, indented) JSON."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
