"""Command line driver: convergence sweeps (``run``) and coefficient/operator
diagnostics (``diagnose``), both writing CSV.

Configuration files hold ``key = value`` lines; lists are comma separated
and ``#`` starts a comment. Command line flags override file values.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import coefficient as co
from . import fem, lod
from .mesh import build_hierarchy, element_neighborhood
from .quasi_interp import KINDS, build_operator, estimate_qi3

EXPERIMENTS = ("blocks", "channels", "raster")
RUN_COLUMNS = ("experiment", "operator", "beta", "n_H", "H", "k", "rel_energy_error",
               "coarse_dofs", "fine_dofs", "corrector_solves", "wall_time_s", "reason")
DIAG_COLUMNS = ("experiment", "operator", "beta", "n_H", "triangle", "qm_type", "C_P_est",
                "C_qip_est", "reason")
PRESETS = {"desk": 128, "large": 256}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "blocks"
    raster_path: str | None = None
    operators: list = field(default_factory=lambda: ["aw-proj"])
    betas: list = field(default_factory=lambda: [1.0])
    n_H: list = field(default_factory=lambda: [4, 8, 16, 32])
    n_h: int = PRESETS["desk"]
    k: object = "tied"                 # "tied", "theory" or a list of ints
    localization: str = "nodal"
    source: str | None = None
    out: str = "lodlab.csv"
    workers: int = 1
    diag_nodes: list = field(default_factory=list)
    decay_k: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    qi3: bool = False

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r} "
                              f"(expected {', '.join(EXPERIMENTS)})")
        if not self.betas:
            raise ConfigError("beta list is empty")
        bad = [o for o in self.operators if o not in KINDS]
        if bad or not self.operators:
            raise ConfigError(f"unknown operator(s) {bad}; expected {', '.join(KINDS)}")
        for n in self.n_H:
            if n < 1 or self.n_h % n:
                raise ConfigError(f"n_H={n} does not divide n_h={self.n_h}")
        if not (self.k in ("tied", "theory") or
                (isinstance(self.k, list) and self.k and all(k >= 1 for k in self.k))):
            raise ConfigError(f"k must be 'tied', 'theory' or a list of positive integers, "
                              f"got {self.k!r}")
        if self.localization not in ("nodal", "element"):
            raise ConfigError(f"localization must be nodal or element, got {self.localization!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


def _split(value: str) -> list:
    return [v.strip() for v in value.split(",") if v.strip()]


def _ints(value: str, key: str) -> list:
    try:
        return [int(v) for v in _split(value)]
    except ValueError:
        raise ConfigError(f"{key}: expected integers, got {value!r}") from None


def _floats(value: str, key: str) -> list:
    try:
        return [float(v) for v in _split(value)]
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {value!r}") from None


def _set(cfg: ExperimentConfig, key: str, value: str) -> None:
    key = _normalize_key(key).lower().replace("-", "_")
    value = value.strip()
    if key == "experiment":
        cfg.experiment = value
    elif key in ("raster", "raster_path"):
        cfg.raster_path = value
    elif key in ("operator", "operators"):
        cfg.operators = _split(value)
    elif key in ("beta", "betas"):
        cfg.betas = _floats(value, key)
    elif key == "nh_coarse":
        cfg.n_H = _ints(value, key)
    elif key == "n_h":
        cfg.n_h = _ints(value, key)[0]
    elif key == "preset":
        if value not in PRESETS:
            raise ConfigError(f"unknown preset {value!r} (expected {', '.join(PRESETS)})")
        cfg.n_h = PRESETS[value]
    elif key == "k":
        cfg.k = value if value in ("tied", "theory") else _ints(value, key)
    elif key == "localization":
        cfg.localization = value
    elif key == "source":
        cfg.source = value
    elif key == "out":
        cfg.out = value
    elif key == "workers":
        cfg.workers = _ints(value, key)[0]
    elif key == "diag_nodes":
        cfg.diag_nodes = _ints(value, key)
    elif key == "decay_k":
        cfg.decay_k = _ints(value, key)
    elif key == "qi3":
        cfg.qi3 = value.lower() in ("1", "true", "yes", "on")
    else:
        raise ConfigError(f"unknown configuration key {key!r}")


def _normalize_key(key: str) -> str:
    # "nH" and "n_H" name the coarse list; "nh" and "n_h" the fine size
    k = key.strip()
    if k in ("nH", "n_H"):
        return "nh_coarse"
    if k in ("nh", "n_h"):
        return "n_h"
    return k


def parse_config(text: str, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = replace(cfg) if cfg is not None else ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        _set(cfg, key, value)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text)


# -- experiment plumbing -----------------------------------------------------

def _coefficient(cfg: ExperimentConfig, beta: float):
    if cfg.experiment == "blocks":
        return co.make_blocks(beta), 32
    if cfg.experiment == "channels":
        return co.make_channels(beta), 32
    if not cfg.raster_path:
        raise co.RasterError("raster experiment needs raster_path")
    raster = co.load_raster(cfg.raster_path)
    if raster.nx != raster.ny:
        raise co.RasterError(f"{cfg.raster_path}: raster must be square, got "
                             f"{raster.nx}x{raster.ny}")
    return raster, raster.nx


def _source(cfg: ExperimentConfig):
    name = cfg.source or ("spe-corners" if cfg.experiment == "raster" else "half-step")
    if Path(name).suffix or Path(name).exists():
        return name, co.load_raster(name, positive=False)
    co.builtin_source(name)
    return name, name


def _k_values(cfg: ExperimentConfig, n_H: int, contrast: float) -> list:
    if cfg.k == "tied":
        return [lod.k_tied(n_H)]
    if cfg.k == "theory":
        return [lod.k_theory(n_H, contrast)]
    return list(cfg.k)


@dataclass
class ExperimentReport:
    columns: tuple
    rows: list

    @property
    def failed(self) -> list:
        return [r for r in self.rows if r.get("reason")]

    def write(self, path) -> None:
        path = Path(path)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.columns, lineterminator="\n")
            w.writeheader()
            for row in self.rows:
                w.writerow({c: _fmt(row.get(c, "")) for c in self.columns})


def _fmt(v):
    if isinstance(v, float):
        return "NaN" if math.isnan(v) else repr(float(v))
    return v


class _ReferenceCache:
    """Fine reference solutions keyed by (experiment, beta, n_h, source)."""

    def __init__(self):
        self._store = {}

    def get(self, key, compute):
        if key not in self._store:
            self._store[key] = compute()
        return self._store[key]


def _row_sort_key(row):
    return (row["operator"], row["beta"], row["n_H"], row["k"])


def run(cfg: ExperimentConfig) -> ExperimentReport:
    cfg.validate()
    rows = []
    refs = _ReferenceCache()
    for beta in cfg.betas:
        for n_H in cfg.n_H:
            for kind in cfg.operators:
                base = dict(experiment=cfg.experiment, operator=kind, beta=float(beta),
                            n_H=n_H, H=1.0 / n_H, fine_dofs=(cfg.n_h - 1) ** 2,
                            coarse_dofs=(n_H - 1) ** 2)
                try:
                    coeff, n_eps = _coefficient(cfg, beta)
                    src_name, src = _source(cfg)
                    row_beta = float(beta) if cfg.experiment != "raster" else coeff.contrast()
                    base["beta"] = row_beta
                    ks = _k_values(cfg, n_H, coeff.contrast())
                except Exception as exc:  # recorded as a failed row
                    ks = cfg.k if isinstance(cfg.k, list) else \
                        [lod.k_tied(n_H) if cfg.k == "tied" else 0]
                    for k in ks:
                        rows.append(dict(base, k=k, rel_energy_error=float("nan"),
                                         corrector_solves=0, wall_time_s=0.0,
                                         reason=f"{type(exc).__name__}: {exc}"))
                    continue
                try:
                    hier = build_hierarchy(n_H, n_eps, cfg.n_h)
                    ec = co.sample_coefficient(coeff, hier)
                    key = (cfg.experiment, row_beta, cfg.n_h, src_name)
                    uh = refs.get(key, lambda: fem.solve_reference(hier, ec, src))
                    op = build_operator(kind, hier, ec)
                    solver = lod.CorrectorSolver(hier, ec, op)
                    K = solver.K
                except Exception as exc:
                    for k in ks:
                        rows.append(dict(base, k=k, rel_energy_error=float("nan"),
                                         corrector_solves=0, wall_time_s=0.0,
                                         reason=f"{type(exc).__name__}: {exc}"))
                    continue
                for k in ks:
                    t0 = time.perf_counter()
                    try:
                        sol = lod.solve_coarse(hier, ec, op, src, k=k,
                                               localization=cfg.localization,
                                               workers=cfg.workers, solver=solver,
                                               beta=row_beta)
                        err = fem.energy_error(uh, sol.fine, K, relative=True)
                        rows.append(dict(base, k=k, rel_energy_error=float(err),
                                         corrector_solves=sol.corrector_solves,
                                         wall_time_s=round(time.perf_counter() - t0, 3),
                                         reason=""))
                    except Exception as exc:
                        rows.append(dict(base, k=k, rel_energy_error=float("nan"),
                                         corrector_solves=0,
                                         wall_time_s=round(time.perf_counter() - t0, 3),
                                         reason=f"{type(exc).__name__}: {exc}"))
    rows.sort(key=_row_sort_key)
    return ExperimentReport(RUN_COLUMNS, rows)


def _decay_path(out) -> Path:
    p = Path(out)
    return p.with_name(p.stem + "_decay" + (p.suffix or ".csv"))


def _default_nodes(hier) -> list:
    c = hier.coarse
    inner = c.interior_vertices
    d = np.linalg.norm(c.vertices[inner] - 0.5, axis=1)
    return [int(inner[np.argmin(d)])]


def diagnose(cfg: ExperimentConfig):
    """Per-triangle quasi-monotonicity, Poincare and (optionally) QI3
    estimates plus corrector decay tails; returns ``(triangle_report, decay_report)``."""
    cfg.validate()
    rows, decay_rows = [], []
    decay_cols = ("experiment", "operator", "beta", "n_H", "node") + \
        tuple(f"tail_k{k}" for k in sorted(cfg.decay_k)) + ("total", "reason")
    for beta in cfg.betas:
        for n_H in cfg.n_H:
            for kind in cfg.operators:
                base = dict(experiment=cfg.experiment, operator=kind, beta=float(beta), n_H=n_H)
                try:
                    coeff, n_eps = _coefficient(cfg, beta)
                    hier = build_hierarchy(n_H, n_eps, cfg.n_h)
                    ec = co.sample_coefficient(coeff, hier)
                    op = build_operator(kind, hier, ec)
                except Exception as exc:
                    rows.append(dict(base, triangle=-1, qm_type="", C_P_est=float("nan"),
                                     C_qip_est=float("nan"),
                                     reason=f"{type(exc).__name__}: {exc}"))
                    continue
                for T in range(hier.coarse.num_triangles):
                    row = dict(base, triangle=T, reason="")
                    try:
                        row["qm_type"] = co.classify_quasi_monotone(ec, hier, T).type
                        row["C_P_est"] = co.estimate_poincare(
                            ec, hier, element_neighborhood(hier, T)).C_P_est
                        row["C_qip_est"] = (estimate_qi3(op, ec, triangles=[T]).C_qip_est
                                            if cfg.qi3 else float("nan"))
                    except Exception as exc:
                        row.setdefault("qm_type", "")
                        row.setdefault("C_P_est", float("nan"))
                        row.setdefault("C_qip_est", float("nan"))
                        row["reason"] = f"{type(exc).__name__}: {exc}"
                    rows.append(row)
                nodes = cfg.diag_nodes or _default_nodes(hier)
                solver = lod.CorrectorSolver(hier, ec, op)
                for z in nodes:
                    row = dict(base, node=z, reason="")
                    try:
                        prof = lod.decay_profile(hier, ec, op, z, sorted(cfg.decay_k), solver)
                        for k, tail in prof:
                            row[f"tail_k{k}"] = tail
                        phi = lod.corrector_global(hier, ec, op, z, solver)
                        row["total"] = fem.energy_norm(phi.values, solver.K)
                    except Exception as exc:
                        row["reason"] = f"{type(exc).__name__}: {exc}"
                    decay_rows.append(row)
    rows.sort(key=lambda r: (r["operator"], r["beta"], r["n_H"], r["triangle"]))
    decay_rows.sort(key=lambda r: (r["operator"], r["beta"], r["n_H"], r["node"]))
    return ExperimentReport(DIAG_COLUMNS, rows), ExperimentReport(decay_cols, decay_rows)


# -- entry point -------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lodlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "convergence sweep"), ("diagnose", "coefficient and "
                                                             "operator diagnostics")):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", help="key = value configuration file")
        s.add_argument("--experiment", choices=EXPERIMENTS)
        s.add_argument("--raster", dest="raster_path", help="coefficient raster file")
        s.add_argument("--beta", help="comma-separated contrast values")
        s.add_argument("--nH", help="comma-separated coarse subdivisions")
        s.add_argument("--nh", help="fine subdivisions")
        s.add_argument("--k", help="'tied', 'theory' or comma-separated patch orders")
        s.add_argument("--operator", help=f"comma-separated kinds from {', '.join(KINDS)}")
        s.add_argument("--localization", choices=("nodal", "element"))
        s.add_argument("--source", help="built-in source name or raster file")
        s.add_argument("--out", help="CSV output path")
        s.add_argument("--workers", help="worker threads for corrector solves")
    return p


def build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {"experiment": args.experiment, "raster_path": args.raster_path,
                 "beta": args.beta, "nh_coarse": args.nH, "n_h": args.nh, "k": args.k,
                 "operator": args.operator, "localization": args.localization,
                 "source": args.source, "out": args.out, "workers": args.workers}
    for key, value in overrides.items():
        if value is not None:
            _set(cfg, key, str(value))
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = build_config(args).validate()
    except ConfigError as exc:
        print(f"lodlab: configuration error: {exc}", file=sys.stderr)
        return 2
    if args.command == "run":
        report = run(cfg)
        report.write(cfg.out)
        failed = report.failed
    else:
        report, decay = diagnose(cfg)
        report.write(cfg.out)
        decay.write(_decay_path(cfg.out))
        failed = report.failed + decay.failed
    for row in failed:
        print(f"lodlab: failed row {row.get('operator')} beta={row.get('beta')} "
              f"n_H={row.get('n_H')}: {row['reason']}", file=sys.stderr)
    print(f"lodlab: wrote {len(report.rows)} rows to {cfg.out}"
          f"{f' ({len(failed)} failed)' if failed else ''}")
    return 0 if not failed else 1


if __name__ == "__main__":
    sys.exit(main())
