"""Flat ``key=value`` run configuration with dotted section keys.

Example::

    # comments start with '#'
    data.path = data/synthetic.csv
    data.unit = km
    basis.kind = bspline
    basis.p_z = 2
    run.seed = 7

Values stay strings until :func:`RunConfig.from_mapping` converts them, so
the merged mapping can be written back verbatim into a run manifest.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import UsageError

DEFAULTS: dict[str, str] = {
    "data.path": "",
    "data.unit": "deg",
    "data.domain": "",
    "data.T": "",
    "data.y": "y",
    "data.h": "h",
    "data.time": "time",
    "data.coord_y": "coord_y",
    "data.coord_x": "coord_x",
    "data.covariate_prefix": "x_beta_",
    "basis.kind": "bspline",
    "basis.order": "2",
    "basis.p_z": "2",
    "basis.p_beta": "1",
    "basis.p_sigma": "1",
    "basis.range": "",
    "basis.knots": "",
    "em.exit_toll_par": "1e-4",
    "em.exit_toll_loglike": "1e-4",
    "em.max_iterations": "100",
    "partition.k": "1",
    "partition.lambda": "",
    "partition.trials": "1",
    "varcov.enabled": "false",
    "varcov.delta": "1e-3",
    "varcov.method": "innovations",
    "varcov.levels": "0.9,0.95,0.99",
    "varcov.h_points": "21",
    "krige.fit_dir": "",
    "krige.grid": "",
    "krige.targets": "",
    "krige.h": "",
    "krige.t": "",
    "krige.nn_size": "",
    "krige.block_size": "",
    "krige.no_varcov": "false",
    "krige.covariates": "",
    "validate.val_sites": "",
    "validate.bins": "10",
    "validate.nn_size": "",
    "simulate.n_sites": "20",
    "simulate.T": "50",
    "simulate.h": "0,0.25,0.5,0.75,1",
    "simulate.extent": "0,10,0,10",
    "simulate.covariates": "const",
    "simulate.missing": "0",
    "simulate.c_eps": "-2.3",
    "simulate.c_beta": "2",
    "simulate.g": "0.7,0.4",
    "simulate.v": "1,0.5",
    "simulate.theta": "3,2",
    "simulate.output": "",
    "run.seed": "0",
    "run.workers": "1",
    "run.out": "out",
}


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def load_config(path: str | Path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def merge(*layers: Mapping[str, str]) -> dict[str, str]:
    """Later layers win; starts from :data:`DEFAULTS`."""
    out = dict(DEFAULTS)
    for layer in layers:
        for k, v in layer.items():
            if k not in DEFAULTS:
                raise UsageError(f"unknown config key {k!r}")
            out[k] = v
    return out


def dump(mapping: Mapping[str, str]) -> str:
    return "".join(f"{k}={mapping[k]}\n" for k in sorted(mapping))


def config_hash(mapping: Mapping[str, str]) -> str:
    return hashlib.sha256(dump(mapping).encode("utf-8")).hexdigest()[:16]


def sub_seed(seed: int, name: str) -> int:
    """Independent, reproducible seed for the named random stream."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# Typed view
# ---------------------------------------------------------------------------

def _floats(s: str, key: str) -> list[float]:
    if not s.strip():
        return []
    try:
        return [float(x) for x in s.split(",")]
    except ValueError:
        raise UsageError(f"{key}: expected comma-separated numbers, got {s!r}") from None


def _ints(s: str, key: str) -> list[int]:
    if not s.strip():
        return []
    try:
        return [int(x) for x in s.split(",")]
    except ValueError:
        raise UsageError(f"{key}: expected comma-separated integers, got {s!r}") from None


def _int(s: str, key: str) -> int | None:
    if not s.strip():
        return None
    try:
        return int(s)
    except ValueError:
        raise UsageError(f"{key}: expected an integer, got {s!r}") from None


def _float(s: str, key: str) -> float | None:
    if not s.strip():
        return None
    try:
        return float(s)
    except ValueError:
        raise UsageError(f"{key}: expected a number, got {s!r}") from None


def _bool(s: str, key: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise UsageError(f"{key}: expected true/false, got {s!r}")


def _pair(s: str, key: str) -> tuple[float, float] | None:
    vals = _floats(s, key)
    if not vals:
        return None
    if len(vals) != 2 or vals[0] >= vals[1]:
        raise UsageError(f"{key}: expected 'lo,hi' with lo < hi, got {s!r}")
    return vals[0], vals[1]


@dataclass
class RunConfig:
    raw: dict[str, str]
    data_path: str
    unit: str
    domain: tuple[float, float] | None
    T: int | None
    schema: dict[str, str]
    basis_kind: str
    basis_order: int
    p_z: int
    p_beta: int
    p_sigma: int
    basis_range: tuple[float, float] | None
    knots: list[float]
    exit_toll_par: float
    exit_toll_loglike: float
    max_iterations: int
    k: int
    lam: float | None
    trials: int
    varcov: bool
    delta: float
    varcov_method: str
    levels: list[float]
    band_points: int
    krige: dict = field(default_factory=dict)
    validate: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1
    out: str = "out"

    @classmethod
    def from_mapping(cls, m: Mapping[str, str]) -> "RunConfig":
        m = merge(m)
        g = m.get
        kind = g("basis.kind").strip().lower()
        if kind not in ("bspline", "fourier"):
            raise UsageError(f"basis.kind must be bspline or fourier, got {kind!r}")
        cfg = cls(
            raw=m,
            data_path=g("data.path"),
            unit=g("data.unit"),
            domain=_pair(g("data.domain"), "data.domain"),
            T=_int(g("data.T"), "data.T"),
            schema={k: g(f"data.{k}") for k in ("y", "h", "time", "coord_y", "coord_x", "covariate_prefix")},
            basis_kind=kind,
            basis_order=_int(g("basis.order"), "basis.order"),
            p_z=_int(g("basis.p_z"), "basis.p_z"),
            p_beta=_int(g("basis.p_beta"), "basis.p_beta"),
            p_sigma=_int(g("basis.p_sigma"), "basis.p_sigma"),
            basis_range=_pair(g("basis.range"), "basis.range"),
            knots=_floats(g("basis.knots"), "basis.knots"),
            exit_toll_par=_float(g("em.exit_toll_par"), "em.exit_toll_par"),
            exit_toll_loglike=_float(g("em.exit_toll_loglike"), "em.exit_toll_loglike"),
            max_iterations=_int(g("em.max_iterations"), "em.max_iterations"),
            k=_int(g("partition.k"), "partition.k"),
            lam=_float(g("partition.lambda"), "partition.lambda"),
            trials=_int(g("partition.trials"), "partition.trials"),
            varcov=_bool(g("varcov.enabled"), "varcov.enabled"),
            delta=_float(g("varcov.delta"), "varcov.delta"),
            varcov_method=g("varcov.method").strip(),
            levels=_floats(g("varcov.levels"), "varcov.levels"),
            band_points=_int(g("varcov.h_points"), "varcov.h_points"),
            krige={
                "fit_dir": g("krige.fit_dir"),
                "grid": g("krige.grid"),
                "targets": g("krige.targets"),
                "h": _floats(g("krige.h"), "krige.h"),
                "t": _ints(g("krige.t"), "krige.t"),
                "nn_size": _int(g("krige.nn_size"), "krige.nn_size"),
                "block_size": _int(g("krige.block_size"), "krige.block_size"),
                "no_varcov": _bool(g("krige.no_varcov"), "krige.no_varcov"),
                "covariates": g("krige.covariates"),
            },
            validate={
                "val_sites": _ints(g("validate.val_sites"), "validate.val_sites"),
                "bins": _int(g("validate.bins"), "validate.bins"),
                "nn_size": _int(g("validate.nn_size"), "validate.nn_size"),
            },
            simulate={
                "n_sites": _int(g("simulate.n_sites"), "simulate.n_sites"),
                "T": _int(g("simulate.T"), "simulate.T"),
                "h": _floats(g("simulate.h"), "simulate.h"),
                "extent": _floats(g("simulate.extent"), "simulate.extent"),
                "covariates": [c.strip() for c in g("simulate.covariates").split(",") if c.strip()],
                "missing": _float(g("simulate.missing"), "simulate.missing"),
                "c_eps": _floats(g("simulate.c_eps"), "simulate.c_eps"),
                "c_beta": _floats(g("simulate.c_beta"), "simulate.c_beta"),
                "g": _floats(g("simulate.g"), "simulate.g"),
                "v": _floats(g("simulate.v"), "simulate.v"),
                "theta": _floats(g("simulate.theta"), "simulate.theta"),
                "output": g("simulate.output"),
            },
            seed=_int(g("run.seed"), "run.seed"),
            workers=_int(g("run.workers"), "run.workers"),
            out=g("run.out") or "out",
        )
        for name in ("p_z", "p_beta", "p_sigma", "max_iterations", "k", "trials", "workers", "band_points"):
            v = getattr(cfg, name)
            if v is None or v < 1:
                raise UsageError(f"{name} must be a positive integer")
        if cfg.varcov_method not in ("innovations", "opg"):
            raise UsageError("varcov.method must be innovations or opg")
        return cfg
