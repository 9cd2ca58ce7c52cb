"""Run orchestration: configuration, seeding, persistence, checkpoints, CLI.

This is the reproducibility shell around the sampler.  One root seed flows
through a documented splitting chain: chain ``k`` of a run point gets the
k-th 64-bit output of a :func:`renyiqmc.rng.derive_stream_seeds` walk off
the root seed, and the engine expands each chain seed into an independent
PCG32 (state, increment) stream; sweep cells derive their root seeds by
folding a content hash of the cell coordinates into the sweep seed (one
:func:`renyiqmc.rng.splitmix64` step), so a cell's trajectory depends only
on the root seed and its own (J, p, L) — never on enumeration order.

Run directories are append-only: ``run_point`` assembles its outputs in a
scratch directory and renames it into place only when everything (manifest,
per-chain CSVs, summary) has been written; on failure the partial directory
is quarantined under a ``.failed`` suffix for postmortem instead of being
left masquerading as a result.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import shutil
import struct
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:  # standard library on Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from . import __version__
from . import _kernels as K
from . import estimators as est
from . import rng as rng_mod
from . import scaling_analysis as scaling
from .contour import (ContourState, dump_contour, equilibrate, init_contour,
                      parse_contour, run_sweeps)
from .ed_oracle import (DEFAULT_SITE_CAP, FIXTURE_VERSION, ModelParams,
                        build_hamiltonian, dephased_gibbs, emit_fixtures,
                        gibbs_state, oracle_diagnostics)
from .lattice import build_square_lattice

__all__ = [
    "RunConfig",
    "RunnerError",
    "ConfigError",
    "CheckpointError",
    "OracleSizeError",
    "BETA_TOKEN",
    "MANIFEST_SCHEMA",
    "load_toml_config",
    "build_run_config",
    "chain_seeds",
    "cell_seed",
    "cell_name",
    "build_manifest",
    "manifest_core",
    "run_point",
    "run_sweep",
    "checkpoint",
    "restore",
    "ed_check",
    "analyze_sweep",
    "benchmark_sweep_seconds",
    "main",
]

BETA_TOKEN = "2L"
MANIFEST_SCHEMA = "renyiqmc-manifest/1"
EDCHECK_SCHEMA = "renyiqmc-edcheck/1"
SWEEP_REPORT_SCHEMA = "renyiqmc-sweep-report/1"
_MASK64 = 0xFFFFFFFFFFFFFFFF


class RunnerError(RuntimeError):
    """Orchestration failure (I/O, invalid run tree, refused operation)."""


class ConfigError(RunnerError):
    """Invalid configuration or command line (usage-level error)."""


class CheckpointError(RunnerError):
    """Unreadable, corrupt, or version-incompatible checkpoint file."""


class OracleSizeError(RunnerError):
    """Exact-diagonalization cross-check requested beyond the dense cap."""


# ----------------------------------------------------------------- RunConfig
@dataclass(frozen=True)
class RunConfig:
    """Fully resolved description of one run point.

    ``beta`` is always the resolved numerical value; when the config gave
    the ``"2L"`` token instead of a number, ``beta_spec`` records that and
    ``beta == 2 * max(Lx, Ly)``.
    """

    Lx: int
    Ly: int
    J: float
    p: float
    beta: float
    r: int
    therm_sweeps: int
    measure_sweeps: int
    chains: int
    seed: int
    output_dir: str
    beta_spec: str = ""
    purity_mode: bool = False
    checks_every: int = 64
    min_bins: int = 100

    def __post_init__(self):
        if self.Lx < 1 or self.Ly < 1:
            raise ConfigError(f"lattice dimensions must be >= 1, "
                              f"got {self.Lx}x{self.Ly}")
        if self.r not in (1, 2):
            raise ConfigError(f"replicas must be 1 or 2, got {self.r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"p must be in [0, 1], got {self.p}")
        if self.J < 0.0:
            raise ConfigError(f"J must be >= 0, got {self.J}")
        if not (self.beta > 0.0 and np.isfinite(self.beta)):
            raise ConfigError(f"beta must be a positive number, "
                              f"got {self.beta}")
        if self.therm_sweeps < 0:
            raise ConfigError(
                f"therm_sweeps must be >= 0, got {self.therm_sweeps}")
        if self.measure_sweeps < 1:
            raise ConfigError(
                f"measure_sweeps must be >= 1, got {self.measure_sweeps}")
        if self.chains < 1:
            raise ConfigError(f"chains must be >= 1, got {self.chains}")
        if not 0 <= self.seed <= _MASK64:
            raise ConfigError(
                f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.purity_mode and self.r != 2:
            raise ConfigError("purity_mode requires replicas = 2")
        if self.checks_every < 0:
            raise ConfigError(
                f"checks_every must be >= 0, got {self.checks_every}")
        if self.min_bins < 2:
            raise ConfigError(f"min_bins must be >= 2, got {self.min_bins}")

    @property
    def spec(self):
        return build_square_lattice(self.Lx, self.Ly)

    @property
    def params(self) -> ModelParams:
        return ModelParams(J=self.J, beta=self.beta, p=self.p)


def resolve_beta(raw, Lx: int, Ly: int) -> tuple[float, str]:
    """Resolve a beta entry: a number passes through, the "2L" token maps
    to 2 * max(Lx, Ly).  Returns (value, token-or-empty)."""
    if isinstance(raw, str):
        if raw.strip() == BETA_TOKEN:
            return 2.0 * max(Lx, Ly), BETA_TOKEN
        try:
            return float(raw), ""
        except ValueError:
            raise ConfigError(
                f"beta must be a number or the {BETA_TOKEN!r} token, "
                f"got {raw!r}") from None
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(
            f"beta must be a number or the {BETA_TOKEN!r} token, got {raw!r}")
    return float(raw), ""


# ------------------------------------------------------------- TOML loading
_CONFIG_SCHEMA: dict[str, dict[str, tuple]] = {
    "lattice": {"Lx": (int,), "Ly": (int,)},
    "model": {"J": (int, float), "p": (int, float), "beta": (int, float, str)},
    "run": {
        "replicas": (int,),
        "therm_sweeps": (int,),
        "measure_sweeps": (int,),
        "chains": (int,),
        "seed": (int,),
        "output_dir": (str,),
        "purity_mode": (bool,),
        "checks_every": (int,),
        "min_bins": (int,),
    },
    "sweep": {"J": (list,), "p": (list,), "L": (list,)},
}

_REQUIRED_KEYS = (
    ("lattice", "Lx"), ("lattice", "Ly"),
    ("model", "J"), ("model", "p"), ("model", "beta"),
    ("run", "therm_sweeps"), ("run", "measure_sweeps"),
    ("run", "seed"), ("run", "output_dir"),
)


def load_toml_config(path) -> dict:
    """Parse and schema-check a TOML config file.

    Unknown sections or keys are errors (silent typos must not survive),
    and every value must have the expected type.  Returns the raw nested
    dict; combine with overrides via :func:`build_run_config`.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") \
            from None
    validate_config_dict(raw)
    return raw


def validate_config_dict(raw: dict) -> None:
    """Reject unknown sections/keys and wrongly typed values."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table of sections")
    for section, content in raw.items():
        if section not in _CONFIG_SCHEMA:
            known = ", ".join(sorted(_CONFIG_SCHEMA))
            raise ConfigError(
                f"unknown config section [{section}] (known: {known})")
        if not isinstance(content, dict):
            raise ConfigError(f"config section [{section}] must be a table")
        for key, value in content.items():
            types = _CONFIG_SCHEMA[section].get(key)
            if types is None:
                known = ", ".join(sorted(_CONFIG_SCHEMA[section]))
                raise ConfigError(
                    f"unknown key {key!r} in [{section}] (known: {known})")
            if bool not in types and isinstance(value, bool):
                raise ConfigError(
                    f"[{section}] {key} must be {types[0].__name__}, "
                    f"got a boolean")
            if not isinstance(value, types):
                names = " or ".join(t.__name__ for t in types)
                raise ConfigError(
                    f"[{section}] {key} must be {names}, "
                    f"got {type(value).__name__}")


def build_run_config(raw: dict, **overrides) -> RunConfig:
    """Build a RunConfig from a validated config dict plus overrides.

    Overrides use RunConfig field names (Lx, Ly, J, p, beta, r,
    therm_sweeps, measure_sweeps, chains, seed, output_dir, purity_mode,
    checks_every, min_bins); a None override is ignored.  The "2L" beta
    token is resolved here, after the final lattice size is known.
    """
    validate_config_dict(raw)
    flat: dict = {}
    lattice = raw.get("lattice", {})
    model = raw.get("model", {})
    run = raw.get("run", {})
    flat["Lx"], flat["Ly"] = lattice.get("Lx"), lattice.get("Ly")
    flat["J"], flat["p"] = model.get("J"), model.get("p")
    flat["beta"] = model.get("beta")
    flat["r"] = run.get("replicas", 2)
    flat["therm_sweeps"] = run.get("therm_sweeps")
    flat["measure_sweeps"] = run.get("measure_sweeps")
    flat["chains"] = run.get("chains", 1)
    flat["seed"] = run.get("seed")
    flat["output_dir"] = run.get("output_dir")
    flat["purity_mode"] = run.get("purity_mode", False)
    flat["checks_every"] = run.get("checks_every", 64)
    flat["min_bins"] = run.get("min_bins", 100)
    for key, value in overrides.items():
        if key not in flat:
            raise ConfigError(f"unknown config override {key!r}")
        if value is not None:
            flat[key] = value
    missing = [name for name, value in flat.items()
               if value is None and name != "beta"]
    if flat["beta"] is None:
        missing.append("beta")
    if missing:
        raise ConfigError(
            "config is missing required settings: " + ", ".join(sorted(missing)))
    beta, beta_spec = resolve_beta(flat.pop("beta"), flat["Lx"], flat["Ly"])
    return RunConfig(beta=beta, beta_spec=beta_spec, **flat)


# ------------------------------------------------------------------ seeding
def chain_seeds(root_seed: int, n_chains: int) -> list[int]:
    """Chain k's seed: first member of the k-th (seed, seq) pair of the
    splitmix64 walk off the root seed (see :mod:`renyiqmc.rng`)."""
    return [seed for seed, _ in rng_mod.derive_stream_seeds(root_seed, n_chains)]


def cell_seed(root_seed: int, J: float, p: float, L: int) -> int:
    """Root seed for one sweep cell: fold a 64-bit content hash of the
    exact cell coordinates into the sweep seed and apply one splitmix64
    step.  Depends only on (root_seed, J, p, L)."""
    key = f"{float(J)!r}|{float(p)!r}|{int(L)}".encode()
    h = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
    return rng_mod.splitmix64((root_seed ^ h) & _MASK64)


def cell_name(J: float, p: float, L: int) -> str:
    return f"J{float(J):g}_p{float(p):g}_L{int(L)}"


# ----------------------------------------------------------------- manifest
def build_manifest(config: RunConfig, seeds: list[int],
                   fixture_version: int | None = None) -> dict:
    return {
        "schema": MANIFEST_SCHEMA,
        "code_version": __version__,
        "fixture_version": fixture_version,
        "config": dataclasses.asdict(config),
        "chain_seeds": [int(s) for s in seeds],
    }


def manifest_core(manifest: dict) -> dict:
    """The determinism-relevant manifest content (timing stripped):
    two runs whose cores match produce bit-identical measurement CSVs."""
    return {k: v for k, v in manifest.items() if k != "timing"}


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path) -> dict:
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- run_point
def _run_chain(config: RunConfig, seed: int) -> tuple[np.ndarray, int]:
    """Execute one chain: thermalize, then measure.  Returns the raw
    measurement rows and the sweep index of the first measured row."""
    contour = init_contour(config.spec, config.params, config.r, seed,
                           purity_mode=config.purity_mode,
                           checks_every=config.checks_every)
    if config.therm_sweeps:
        equilibrate(contour, config.therm_sweeps)
    rows = run_sweeps(contour, config.measure_sweeps)
    return rows, contour.sweep_index - config.measure_sweeps


def _map_chains(fn, arg_tuples, threads: int) -> list:
    if threads <= 1 or len(arg_tuples) <= 1:
        return [fn(*args) for args in arg_tuples]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *args) for args in arg_tuples]
        return [f.result() for f in futures]


def _quarantine_path(out: Path) -> Path:
    cand = out.parent / (out.name + ".failed")
    k = 1
    while cand.exists():
        cand = out.parent / (out.name + f".failed.{k}")
        k += 1
    return cand


def run_point(config: RunConfig, *, threads: int = 1) -> Path:
    """Execute one run point and persist manifest + CSVs + summary.

    The target directory appears atomically (assembled under a
    ``.partial`` scratch name, renamed on success); a failure quarantines
    whatever was written under a ``.failed`` suffix and re-raises.
    Deterministic: the chain seeds derive from ``config.seed`` alone, so
    identical configs give bit-identical CSV files.
    """
    out = Path(config.output_dir)
    if out.exists():
        raise RunnerError(
            f"output directory {out} already exists; run directories are "
            "append-only (move it aside to re-run)")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / (out.name + ".partial")
    if tmp.exists():  # leftover scratch from a crash: incomplete by construction
        shutil.rmtree(tmp)
    seeds = chain_seeds(config.seed, config.chains)
    manifest = build_manifest(config, seeds)
    started = time.time()
    started_stamp = _utc_stamp()
    try:
        tmp.mkdir()
        _write_json(tmp / "manifest.json", manifest)  # echo config pre-sampling
        results = _map_chains(_run_chain, [(config, s) for s in seeds], threads)
        spec, params = config.spec, config.params
        for k, (rows, first_index) in enumerate(results):
            est.write_measurements_csv(tmp / f"chain_{k:02d}.csv", rows, spec,
                                       config.r, first_sweep_index=first_index)
        summary = est.summarize_run(
            [rows for rows, _ in results], spec, params, config.r,
            purity_mode=config.purity_mode, min_bins=config.min_bins,
            metadata={"seed": config.seed, "chains": config.chains,
                      "output_dir": str(out)})
        est.write_summary_json(tmp / "summary.json", summary)
        seconds = time.time() - started
        total_sweeps = config.chains * (config.therm_sweeps
                                        + config.measure_sweeps)
        manifest["timing"] = {
            "started_utc": started_stamp,
            "finished_utc": _utc_stamp(),
            "seconds_total": seconds,
            "sweeps_per_second": total_sweeps / seconds if seconds > 0
            else float("inf"),
            "threads": threads,
        }
        _write_json(tmp / "manifest.json", manifest)
    except BaseException:
        if tmp.exists():
            tmp.rename(_quarantine_path(out))
        raise
    tmp.rename(out)
    return out


def _utc_stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


# ---------------------------------------------------------------- run_sweep
def _cell_complete(cell_dir: Path, expected: RunConfig) -> bool:
    """A cell counts as complete when its manifest and summary both parse
    and the manifest's resolved config matches what this sweep would run."""
    try:
        manifest = _read_json(cell_dir / "manifest.json")
        summary = _read_json(cell_dir / "summary.json")
    except (OSError, json.JSONDecodeError):
        return False
    if manifest.get("schema") != MANIFEST_SCHEMA:
        return False
    if summary.get("schema") != est.SUMMARY_SCHEMA:
        return False
    return manifest.get("config") == dataclasses.asdict(expected)


def sweep_cell_config(base: RunConfig, J: float, p: float, L: int,
                      root: Path) -> RunConfig:
    """Per-cell config: square LxL lattice, cell-resolved beta ("2L" token
    tracks the cell's own L), content-derived seed, cell subdirectory."""
    if base.beta_spec == BETA_TOKEN:
        beta, beta_spec = 2.0 * L, BETA_TOKEN
    else:
        beta, beta_spec = base.beta, base.beta_spec
    return dataclasses.replace(
        base, Lx=L, Ly=L, J=float(J), p=float(p), beta=beta,
        beta_spec=beta_spec, seed=cell_seed(base.seed, J, p, L),
        output_dir=str(root / cell_name(J, p, L)))


def run_sweep(base: RunConfig, grid: dict, *, threads: int = 1,
              resume: bool = False) -> dict:
    """Run one point per grid cell under ``base.output_dir``.

    ``grid`` maps any of "J", "p", "L" to value lists; missing axes default
    to the base config's single value.  Per-cell failures are recorded and
    the sweep continues.  With ``resume``, cells that already hold a valid
    manifest + summary for the same resolved config are skipped, so an
    interrupted sweep restarts without duplicating any sampling.
    """
    for axis in grid:
        if axis not in ("J", "p", "L"):
            raise ConfigError(f"unknown sweep axis {axis!r} (use J, p, L)")
    def axis(key, default):
        values = grid.get(key)
        return [default] if values is None else list(values)

    js = [float(x) for x in axis("J", base.J)]
    ps = [float(x) for x in axis("p", base.p)]
    ls = [int(x) for x in axis("L", max(base.Lx, base.Ly))]
    if not js or not ps or not ls:
        raise ConfigError("sweep grid has an empty axis")
    root = Path(base.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    report: dict = {"schema": SWEEP_REPORT_SCHEMA,
                    "grid": {"J": js, "p": ps, "L": ls},
                    "completed": [], "skipped": [], "failed": {}}
    for L in ls:
        for J in js:
            for p in ps:
                name = cell_name(J, p, L)
                cfg = sweep_cell_config(base, J, p, L, root)
                cell_dir = root / name
                if cell_dir.exists():
                    if resume and _cell_complete(cell_dir, cfg):
                        report["skipped"].append(name)
                    elif resume:
                        report["failed"][name] = (
                            "existing directory is incomplete or was run "
                            "with a different config; move it aside")
                    else:
                        report["failed"][name] = (
                            "output directory already exists "
                            "(pass --resume to skip completed cells)")
                    continue
                try:
                    run_point(cfg, threads=threads)
                    report["completed"].append(name)
                except Exception as exc:
                    report["failed"][name] = f"{type(exc).__name__}: {exc}"
    _write_json(root / "sweep_report.json", report)
    return report


# -------------------------------------------------------------- checkpoints
CHECKPOINT_MAGIC = b"RQMCCKPT"
CHECKPOINT_VERSION = 1


def checkpoint(contour: ContourState, path,
               rows: np.ndarray | None = None) -> Path:
    """Versioned binary snapshot of one chain at a sweep boundary.

    Stores the full contour (spins, operator strings, channel labels,
    RNG state, counters, sweep index) plus the accumulated measurement
    rows.  Layout: magic, little-endian version, SHA-256 of the payload,
    zlib payload.  Restoring continues the identical trajectory.
    """
    if rows is None:
        rows = np.zeros((0, K.N_MEAS_COLS), dtype=np.int64)
    rows = np.ascontiguousarray(np.asarray(rows, dtype=np.int64))
    if rows.ndim != 2:
        raise ValueError(f"rows must be 2-D, got shape {rows.shape}")
    dump = dump_contour(contour).encode("ascii")
    body = (struct.pack("<QQQ", len(dump), rows.shape[0], rows.shape[1])
            + dump + rows.astype("<i8").tobytes(order="C"))
    payload = zlib.compress(body, 6)
    blob = (CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
            + hashlib.sha256(payload).digest() + payload)
    path = Path(path)
    scratch = path.parent / (path.name + ".partial")
    scratch.write_bytes(blob)
    scratch.replace(path)
    return path


def restore(path) -> tuple[ContourState, np.ndarray]:
    """Load a checkpoint: (contour, accumulated rows).

    Refuses non-checkpoint files, unsupported versions, and corrupt
    payloads (checksum or structure) with explicit messages.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") \
            from None
    header = len(CHECKPOINT_MAGIC) + 4 + 32
    if len(data) < header or data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a renyiqmc checkpoint file")
    (version,) = struct.unpack_from("<I", data, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has version {version}; this build reads "
            f"version {CHECKPOINT_VERSION} only")
    digest = data[len(CHECKPOINT_MAGIC) + 4:header]
    payload = data[header:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(
            f"checkpoint {path} is corrupt (checksum mismatch)")
    try:
        body = zlib.decompress(payload)
        dump_len, n_rows, n_cols = struct.unpack_from("<QQQ", body, 0)
        text = body[24:24 + dump_len].decode("ascii")
        raw = body[24 + dump_len:]
        if len(raw) != 8 * n_rows * n_cols:
            raise ValueError("row block length mismatch")
        rows = np.frombuffer(raw, dtype="<i8").reshape(
            int(n_rows), int(n_cols)).astype(np.int64)
        contour = parse_contour(text)
    except (zlib.error, ValueError, struct.error) as exc:
        raise CheckpointError(
            f"checkpoint {path} is corrupt ({exc})") from None
    return contour, rows


# ------------------------------------------------------------------ ed_check
_EDCHECK_QUANTITIES = {1: ("C0", "R0", "energy"), 2: ("C1", "C2", "R1", "R2")}


def ed_check(config: RunConfig, *, threads: int = 1,
             z_threshold: float = 4.0) -> dict:
    """Cross-check the sampler against the dense oracle at one point.

    Runs the configured chains, then compares every estimate the run
    produces with its exactly computed counterpart and reports per-quantity
    z-scores.  Refuses lattices beyond the dense-oracle site cap.
    """
    n_sites = config.Lx * config.Ly
    if n_sites > DEFAULT_SITE_CAP:
        raise OracleSizeError(
            f"exact-diagonalization check supports at most "
            f"{DEFAULT_SITE_CAP} sites; {config.Lx}x{config.Ly} has "
            f"{n_sites}. Use the sampler's own acceptance suite for "
            f"larger lattices.")
    spec, params = config.spec, config.params
    seeds = chain_seeds(config.seed, config.chains)
    results = _map_chains(_run_chain, [(config, s) for s in seeds], threads)
    summary = est.summarize_run(
        [rows for rows, _ in results], spec, params, config.r,
        purity_mode=config.purity_mode, min_bins=config.min_bins)

    rho = dephased_gibbs(spec, params)
    oracle = oracle_diagnostics(rho, spec)
    targets: dict[str, float] = {}
    if config.purity_mode:
        targets["purity"] = oracle["purity"]
    else:
        for name in _EDCHECK_QUANTITIES[config.r]:
            if name == "energy":
                H = build_hamiltonian(spec, config.J)
                rho_g = gibbs_state(H, config.beta)
                targets["energy"] = float(np.trace(rho_g.data @ H).real)
            else:
                targets[name] = float(oracle[name])

    quantities = {}
    z_values = []
    for name, target in targets.items():
        e = summary["estimates"][name]
        stderr = float(e["stderr"])
        diff = float(e["value"]) - target
        z = diff / stderr if stderr > 0 else _signed_inf(diff)
        z_values.append(abs(z))
        quantities[name] = {"qmc": float(e["value"]), "stderr": stderr,
                            "oracle": target, "z": z,
                            "flags": list(e.get("flags", []))}
    max_abs_z = max(z_values)
    return {
        "schema": EDCHECK_SCHEMA,
        "lattice": summary["lattice"],
        "params": summary["params"],
        "r": config.r,
        "purity_mode": config.purity_mode,
        "sweeps": summary["sweeps"],
        "fixture_version": FIXTURE_VERSION,
        "z_threshold": z_threshold,
        "quantities": quantities,
        "max_abs_z": max_abs_z,
        "passed": bool(max_abs_z <= z_threshold),
    }


def _signed_inf(diff: float) -> float:
    if diff == 0.0:
        return 0.0
    return float("inf") if diff > 0 else float("-inf")


# ----------------------------------------------------------------- analysis
def analyze_sweep(sweep_dir, x_key: str, *, quantity: str = "R2",
                  pair_factor: int = 2, x_c_init: float | None = None,
                  nu_init: float = 1.0, n_bootstrap: int = 200,
                  out_path=None) -> dict:
    """Scaling analysis over a sweep tree: crossings + collapse + slopes.

    Reads every completed cell's summary, builds per-size ratio curves of
    ``quantity`` against ``x_key``, finds (L, pair_factor*L) crossings,
    and — given at least three sizes — fits the scaling collapse and the
    slope-growth exponent.  Never re-reads raw CSVs and never mutates the
    run tree; the payload records the manifest hashes it consumed.
    """
    root = Path(sweep_dir)
    if not root.is_dir():
        raise RunnerError(f"{root} is not a directory")
    summaries = []
    hashes = {}
    for cell in sorted(p for p in root.iterdir() if p.is_dir()):
        summary_path = cell / "summary.json"
        if not summary_path.exists():
            continue
        summaries.append(_read_json(summary_path))
        manifest_path = cell / "manifest.json"
        if manifest_path.exists():
            hashes[cell.name] = hashlib.sha256(
                manifest_path.read_bytes()).hexdigest()
    if not summaries:
        raise RunnerError(f"no completed run points under {root}")
    curves = scaling.curves_from_summaries(summaries, x_key, quantity)
    sizes = [c.L for c in curves]
    by_size = {c.L: c for c in curves}
    pairs = scaling.crossing_pairs(sizes, pair_factor)
    crossings = [scaling.find_crossing(by_size[a], by_size[b])
                 for a, b in pairs]
    found = [c.x for c in crossings if c.found]
    if x_c_init is None:
        if found:
            x_c_init = float(np.mean(found))
        else:
            x_c_init = float(np.mean([np.mean(c.xs) for c in curves]))
    collapse = None
    slope_fit = None
    notes = []
    if len(set(sizes)) >= 3:
        collapse = scaling.collapse_fit(curves, x_c_init, nu_init,
                                        n_bootstrap=n_bootstrap)
        try:
            slope_fit = scaling.nu_from_slopes(curves, collapse.x_c)
        except ValueError as exc:
            notes.append(f"slope-scaling fit unavailable: {exc}")
    else:
        notes.append("fewer than 3 system sizes: collapse fit skipped")
    payload = scaling.analysis_payload(
        curves, crossings, collapse, slope_fit,
        inputs={"sweep_dir": str(root), "x_key": x_key,
                "quantity": quantity, "manifest_sha256": hashes})
    if notes:
        payload["notes"] = notes
    if out_path is not None:
        _write_json(out_path, payload)
    return payload


# ---------------------------------------------------------------- benchmark
def benchmark_sweep_seconds(L: int, J: float, p: float, *,
                            beta: float | None = None, r: int = 2,
                            seed: int = 714025, n_sweeps: int = 40,
                            therm_sweeps: int = 20) -> float:
    """Measured wall-clock seconds per sweep on an LxL lattice (JIT-warm,
    cutoff equilibrated).  beta defaults to 2L."""
    spec = build_square_lattice(L, L)
    params = ModelParams(J=J, beta=2.0 * L if beta is None else beta, p=p)
    contour = init_contour(spec, params, r, seed)
    equilibrate(contour, therm_sweeps)
    t0 = time.perf_counter()
    run_sweeps(contour, n_sweeps)
    return (time.perf_counter() - t0) / n_sweeps


# ----------------------------------------------------------------------- CLI
class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def _add_exec_flags(sp, *, resume: bool = True):
    sp.add_argument("--seed", type=int, default=None,
                    help="override the root seed")
    sp.add_argument("--threads", type=int, default=1,
                    help="worker-pool size for chains (default 1)")
    if resume:
        sp.add_argument("--resume", action="store_true",
                        help="skip work that already has valid outputs")


def _add_config_flags(sp, *, output: bool = True):
    sp.add_argument("--config", default=None, metavar="TOML",
                    help="TOML config file")
    sp.add_argument("--lattice", nargs=2, type=int, metavar=("LX", "LY"),
                    default=None, help="lattice dimensions")
    sp.add_argument("--J", type=float, default=None, help="Ising coupling")
    sp.add_argument("--p", type=float, default=None,
                    help="dephasing strength in [0, 1]")
    sp.add_argument("--beta", default=None,
                    help=f"inverse temperature (number or {BETA_TOKEN!r})")
    sp.add_argument("--replicas", type=int, default=None, choices=(1, 2),
                    help="replica count r")
    sp.add_argument("--therm", type=int, default=None, dest="therm",
                    help="thermalization sweeps")
    sp.add_argument("--measure", type=int, default=None, dest="measure",
                    help="measurement sweeps")
    sp.add_argument("--chains", type=int, default=None,
                    help="independent chains")
    sp.add_argument("--purity-mode", action="store_true", default=None,
                    help="sample the replica topology (purity estimation)")
    if output:
        sp.add_argument("--out", default=None, help="output directory")


def _config_from_args(args, *, default_out: str | None = None) -> RunConfig:
    raw = load_toml_config(args.config) if args.config else {}
    lattice = getattr(args, "lattice", None)
    overrides = dict(
        Lx=lattice[0] if lattice else None,
        Ly=lattice[1] if lattice else None,
        J=getattr(args, "J", None),
        p=getattr(args, "p", None),
        beta=getattr(args, "beta", None),
        r=getattr(args, "replicas", None),
        therm_sweeps=getattr(args, "therm", None),
        measure_sweeps=getattr(args, "measure", None),
        chains=getattr(args, "chains", None),
        seed=getattr(args, "seed", None),
        output_dir=getattr(args, "out", None) or default_out,
        purity_mode=getattr(args, "purity_mode", None),
    )
    return build_run_config(raw, **overrides)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="renyiqmc",
        description="Replica QMC for bond-dephased transverse-field Ising "
                    "states: run points, parameter sweeps, oracle checks, "
                    "and finite-size-scaling analysis.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    sp = sub.add_parser("run", help="execute one run point")
    _add_config_flags(sp)
    _add_exec_flags(sp)
    sp.set_defaults(func=_cmd_run)

    sp = sub.add_parser("sweep", help="execute a parameter grid")
    _add_config_flags(sp)
    sp.add_argument("--grid-J", default=None,
                    help="comma-separated J values (overrides [sweep] J)")
    sp.add_argument("--grid-p", default=None,
                    help="comma-separated p values (overrides [sweep] p)")
    sp.add_argument("--grid-L", default=None,
                    help="comma-separated L values (overrides [sweep] L)")
    _add_exec_flags(sp)
    sp.set_defaults(func=_cmd_sweep)

    sp = sub.add_parser("ed-check",
                        help="cross-check the sampler against the dense "
                             "oracle at one point")
    _add_config_flags(sp, output=False)
    sp.add_argument("--z-max", type=float, default=4.0,
                    help="largest acceptable |z| (default 4)")
    sp.add_argument("--report", default=None,
                    help="write the full report JSON here")
    _add_exec_flags(sp)
    sp.set_defaults(func=_cmd_ed_check)

    sp = sub.add_parser("analyze",
                        help="crossings + collapse over a sweep tree")
    sp.add_argument("--in", dest="sweep_dir", required=True,
                    help="sweep output directory")
    sp.add_argument("--x", dest="x_key", required=True,
                    choices=("p", "J", "beta"), help="tuning parameter")
    sp.add_argument("--quantity", default="R2",
                    help="summary estimate to analyze (default R2)")
    sp.add_argument("--pair-factor", type=int, default=2,
                    help="crossing pairs are (L, factor*L); default 2")
    sp.add_argument("--x0", type=float, default=None,
                    help="initial critical-point guess")
    sp.add_argument("--nu0", type=float, default=1.0,
                    help="initial exponent guess (default 1.0)")
    sp.add_argument("--bootstrap", type=int, default=200,
                    help="bootstrap replicas for fit errors (default 200)")
    sp.add_argument("--out", default=None, help="analysis JSON output path")
    sp.set_defaults(func=_cmd_analyze)

    sp = sub.add_parser("fixtures", help="emit the dense-oracle fixture JSON")
    sp.add_argument("--out", required=True, help="fixture JSON output path")
    sp.add_argument("--lattices", default=None,
                    help="comma-separated LxW list (default 2x2,2x3,3x3)")
    sp.set_defaults(func=_cmd_fixtures)
    return parser


def _cmd_run(args) -> int:
    config = _config_from_args(args)
    out = Path(config.output_dir)
    if args.resume and out.exists():
        if _cell_complete(out, config):
            print(f"{out} is already complete; skipped")
            return 0
        raise RunnerError(
            f"{out} exists but is incomplete or from a different config; "
            "move it aside to re-run")
    path = run_point(config, threads=max(1, args.threads))
    summary = _read_json(path / "summary.json")
    print(f"run point written to {path}")
    for name, e in sorted(summary["estimates"].items()):
        print(f"  {name}: {e['value']:.6g} +/- {e['stderr']:.2g}")
    return 0


def _parse_grid_list(text: str | None, kind) -> list | None:
    if text is None:
        return None
    try:
        return [kind(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"bad grid list {text!r}") from None


def _cmd_sweep(args) -> int:
    raw = load_toml_config(args.config) if args.config else {}
    grid = dict(raw.get("sweep", {}))
    for axis, flag, kind in (("J", args.grid_J, float),
                             ("p", args.grid_p, float),
                             ("L", args.grid_L, int)):
        values = _parse_grid_list(flag, kind)
        if values is not None:
            grid[axis] = values
    if not grid:
        raise ConfigError("no sweep grid: give a [sweep] section or "
                          "--grid-J/--grid-p/--grid-L")
    base = _config_from_args(args)
    report = run_sweep(base, grid, threads=max(1, args.threads),
                       resume=args.resume)
    print(f"sweep over {len(report['grid']['J'])} J x "
          f"{len(report['grid']['p'])} p x {len(report['grid']['L'])} L "
          f"under {base.output_dir}")
    print(f"  completed: {len(report['completed'])}, "
          f"skipped: {len(report['skipped'])}, "
          f"failed: {len(report['failed'])}")
    for name, why in report["failed"].items():
        print(f"  FAILED {name}: {why}", file=sys.stderr)
    return 2 if report["failed"] else 0


def _cmd_ed_check(args) -> int:
    config = _config_from_args(args, default_out="unused")
    report = ed_check(config, threads=max(1, args.threads),
                      z_threshold=args.z_max)
    lat = report["lattice"]
    print(f"ed-check {lat['Lx']}x{lat['Ly']} J={report['params']['J']:g} "
          f"beta={report['params']['beta']:g} p={report['params']['p']:g} "
          f"r={report['r']}")
    for name, q in sorted(report["quantities"].items()):
        print(f"  {name}: qmc={q['qmc']:.6g} +/- {q['stderr']:.2g}  "
              f"oracle={q['oracle']:.6g}  z={q['z']:+.2f}")
    verdict = "PASS" if report["passed"] else "FAIL"
    print(f"  max |z| = {report['max_abs_z']:.2f} "
          f"(threshold {report['z_threshold']:g}): {verdict}")
    if args.report:
        _write_json(args.report, report)
        print(f"  report written to {args.report}")
    return 0 if report["passed"] else 3


def _cmd_analyze(args) -> int:
    payload = analyze_sweep(
        args.sweep_dir, args.x_key, quantity=args.quantity,
        pair_factor=args.pair_factor, x_c_init=args.x0, nu_init=args.nu0,
        n_bootstrap=args.bootstrap, out_path=args.out)
    for c in payload["crossings"]:
        if c["found"]:
            print(f"crossing L={c['L_a']}/{c['L_b']}: "
                  f"x = {c['x']:.5g} +/- {c['sigma_x']:.2g}")
        else:
            print(f"crossing L={c['L_a']}/{c['L_b']}: none ({c['note']})")
    collapse = payload["collapse"]
    if collapse is not None:
        ex, en = collapse["bootstrap_errors"]
        print(f"collapse: x_c = {collapse['x_c']:.5g} +/- {ex:.2g}, "
              f"nu = {collapse['nu']:.4g} +/- {en:.2g}, "
              f"quality = {collapse['quality']:.3g}")
    slopes = payload["nu_from_slopes"]
    if slopes is not None:
        print(f"slope scaling: nu = {slopes['nu']:.4g} "
              f"+/- {slopes['sigma_nu']:.2g}")
    for note in payload.get("notes", []):
        print(f"note: {note}")
    if args.out:
        print(f"analysis written to {args.out}")
    return 0


def _parse_lattice_list(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for token in text.split(","):
        token = token.strip().lower()
        parts = token.split("x")
        if len(parts) != 2:
            raise ConfigError(f"bad lattice token {token!r} (want e.g. 2x3)")
        try:
            out.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ConfigError(
                f"bad lattice token {token!r} (want e.g. 2x3)") from None
    if not out:
        raise ConfigError("--lattices list is empty")
    return tuple(out)


def _cmd_fixtures(args) -> int:
    if args.lattices is not None:
        emit_fixtures(args.out, lattices=_parse_lattice_list(args.lattices))
    else:
        emit_fixtures(args.out)
    print(f"fixtures written to {args.out}")
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (RunnerError, est.EstimationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
