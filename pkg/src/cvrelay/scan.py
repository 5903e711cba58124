"""Point evaluation, parameter sweeps and their CSV/JSON serialization."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .environment import (
    BELL_CONVENTIONS,
    QMINUS_PPLUS,
    AdditiveEnvironmentParams,
    EnvironmentParams,
    UnphysicalEnvironmentError,
    additive_kappas,
    bona_fide_violation,
    classify,
    eb_threshold,
    env_mutual_info,
    kappas,
)
from .relay import (
    _SPLITS,
    additive_metrics,
    build_network_state,
    entanglement_structure,
    relay_metrics,
)

MODES = ("eval", "scan-plane", "scan-noise", "env-check")
FORMATS = ("csv", "json")
SIG_DIGITS = 12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScanConfig:
    mode: str = "eval"
    tau: float | None = None
    omega: float | None = None
    g: float = 0.0
    g_prime: float = 0.0
    n: float | None = None
    c: float = 0.0
    c_prime: float = 0.0
    mu: float = 1e6
    mu_qkd: float | None = None
    xi: float = 1.0
    gain: float = 1.0
    grid: int = 201
    range: tuple[float, float] | None = None
    bell: str = QMINUS_PPLUS
    out: str | None = None
    format: str = "json"
    jobs: int = 1

    @property
    def additive(self) -> bool:
        return self.n is not None

    @property
    def effective_mu_qkd(self) -> float:
        return self.mu if self.mu_qkd is None else self.mu_qkd

    def environment(self) -> EnvironmentParams:
        return EnvironmentParams(self.tau, self.omega, self.g, self.g_prime)

    def additive_environment(self, n: float | None = None) -> AdditiveEnvironmentParams:
        return AdditiveEnvironmentParams(self.n if n is None else n, self.c, self.c_prime)

    def validate(self) -> "ScanConfig":
        """Return ``self`` or raise :class:`ConfigError`."""
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.bell not in BELL_CONVENTIONS:
            raise ConfigError(f"bell must be one of {BELL_CONVENTIONS}")
        if self.grid < 2:
            raise ConfigError("grid resolution must be >= 2")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for name in ("mu", "mu_qkd", "xi", "gain", "tau", "omega", "g", "g_prime",
                     "n", "c", "c_prime"):
            val = getattr(self, name)
            if val is not None and not math.isfinite(val):
                raise ConfigError(f"{name} must be finite")
        if self.mu < 1.0 or self.effective_mu_qkd < 1.0:
            raise ConfigError("mu and mu-qkd must be >= 1")
        if not 0.0 <= self.xi <= 1.0:
            raise ConfigError("xi must lie in [0, 1]")
        if self.gain < 0.0:
            raise ConfigError("gain must be >= 0")
        if self.range is not None:
            lo, hi = self.range
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ConfigError("range must be two finite numbers with lo <= hi")
        thermal = self.tau is not None or self.omega is not None
        if thermal and self.additive:
            raise ConfigError("give either --tau/--omega or --n, not both")
        if self.mode == "scan-noise":
            if thermal:
                raise ConfigError("scan-noise works on the additive environment (--c, --cprime)")
            if self.range is not None and self.range[0] < 0.0:
                raise ConfigError("noise range must be >= 0")
        elif self.additive:
            if self.mode == "scan-plane":
                raise ConfigError("scan-plane needs a thermal environment (--tau, --omega)")
            if self.n < 0.0:
                raise ConfigError("n must be >= 0")
        else:
            if self.tau is None or self.omega is None:
                raise ConfigError("a thermal environment needs both --tau and --omega")
            if not 0.0 < self.tau < 1.0:
                raise ConfigError("tau must lie in (0, 1)")
            if self.omega < 1.0:
                raise ConfigError("omega must be >= 1")
        if not (-1.0 <= self.c <= 1.0 and -1.0 <= self.c_prime <= 1.0):
            raise ConfigError("c and cprime must lie in [-1, 1]")
        return self

    def echo(self) -> dict[str, Any]:
        """Config fields that determine the data (``out`` and ``jobs`` do not)."""
        d = asdict(self)
        d.pop("out")
        d.pop("jobs")
        if d["range"] is not None:
            d["range"] = list(d["range"])
        return d


# -- record layout ----------------------------------------------------------


def _column_label(label: str) -> str:
    return label.replace("'", "p").replace("|", "_")


STRUCTURE_COLUMNS = [
    (group, label, _column_label(label)) for group, label, _, _ in _SPLITS
]
_GROUP_TAG = {"bipartite": "bi", "tripartite": "tri", "quadripartite": "quad"}

METRIC_COLUMNS = [
    "eps", "logneg", "fidelity", "fidelity_opt", "coherent_info", "qkd_rate",
    "qkd_rate_opt_bound", "eps_opt", "coherent_info_asymptotic", "key_distill_bound",
    "mutual_info_ab", "holevo_eve", "kappa", "kappa_prime",
]

_FLAG_COLUMNS = [
    f"ent_{_GROUP_TAG[g]}_{c}"
    for grp in ("quadripartite", "bipartite", "tripartite")
    for g, _, c in STRUCTURE_COLUMNS if g == grp
]
_EIG_COLUMNS = [
    f"eig_{_GROUP_TAG[g]}_{c}"
    for grp in ("quadripartite", "bipartite", "tripartite")
    for g, _, c in STRUCTURE_COLUMNS if g == grp
]

PLANE_COLUMNS = (
    ["g", "g_prime", "physical", "separable", "entanglement_breaking", "env_mutual_info"]
    + _FLAG_COLUMNS + _EIG_COLUMNS + METRIC_COLUMNS
)
NOISE_COLUMNS = ["n", "c", "c_prime", "entanglement_breaking"] + METRIC_COLUMNS


def _metric_fields(m, k) -> dict[str, Any]:
    d = m.as_dict()
    out = {name: d.get(name) for name in METRIC_COLUMNS}
    out["kappa"], out["kappa_prime"] = k.kappa, k.kappa_prime
    return out


def plane_record(cfg: ScanConfig, g: float, g_prime: float) -> dict[str, Any]:
    """One thermal-environment record; protocol columns are None unless separable."""
    env = EnvironmentParams(cfg.tau, cfg.omega, g, g_prime)
    cls = classify(env)
    rec: dict[str, Any] = dict.fromkeys(PLANE_COLUMNS)
    rec.update(
        g=g,
        g_prime=g_prime,
        physical=cls.physical,
        separable=cls.separable,
        entanglement_breaking=cls.entanglement_breaking,
    )
    if cls.physical:
        rec["env_mutual_info"] = env_mutual_info(env.omega, g, g_prime)
    if not cls.separable:
        return rec
    es = entanglement_structure(build_network_state(cfg.mu, env))
    for group, label, col in STRUCTURE_COLUMNS:
        val = getattr(es, group)[label]
        tag = _GROUP_TAG[group]
        rec[f"eig_{tag}_{col}"] = val
        rec[f"ent_{tag}_{col}"] = es.flag(val)
    m = relay_metrics(cfg.mu, env, cfg.xi, cfg.effective_mu_qkd, cfg.gain, cfg.bell)
    rec.update(_metric_fields(m, kappas(env, cfg.bell)))
    return rec


def noise_record(cfg: ScanConfig, n: float) -> dict[str, Any]:
    add = cfg.additive_environment(n)
    m = additive_metrics(cfg.xi, cfg.mu, add, "kappa", cfg.gain, cfg.bell, cfg.effective_mu_qkd)
    rec: dict[str, Any] = dict(n=n, c=add.c, c_prime=add.c_prime,
                               entanglement_breaking=add.entanglement_breaking)
    rec.update(_metric_fields(m, additive_kappas(add, cfg.bell)))
    return rec


# -- operations -------------------------------------------------------------


def eval_point(cfg: ScanConfig) -> dict[str, Any]:
    """All quantities for the single parameter point described by ``cfg``.

    Raises :class:`UnphysicalEnvironmentError` for unphysical thermal input.
    """
    cfg.validate()
    if cfg.additive:
        rec = noise_record(cfg, cfg.n)
        rec["mu"], rec["mu_qkd"] = cfg.mu, cfg.effective_mu_qkd
        return rec
    bad = bona_fide_violation(cfg.omega, cfg.g, cfg.g_prime)
    if bad is not None:
        raise UnphysicalEnvironmentError(f"unphysical environment: {bad}")
    rec = {"tau": cfg.tau, "omega": cfg.omega, "omega_eb": eb_threshold(cfg.tau),
           "mu": cfg.mu, "mu_qkd": cfg.effective_mu_qkd}
    rec.update(plane_record(cfg, cfg.g, cfg.g_prime))
    return rec


def env_check(cfg: ScanConfig) -> dict[str, Any]:
    cfg.validate()
    if cfg.additive:
        add = cfg.additive_environment()
        k = additive_kappas(add, cfg.bell)
        return {"n": add.n, "c": add.c, "c_prime": add.c_prime, "physical": True,
                "separable": True, "entanglement_breaking": add.entanglement_breaking,
                "eb_threshold_n": 2.0, "kappa": k.kappa, "kappa_prime": k.kappa_prime}
    env = cfg.environment()
    cls = classify(env)
    k = kappas(env, cfg.bell)
    return {
        "tau": env.tau, "omega": env.omega, "g": env.g, "g_prime": env.g_prime,
        "physical": cls.physical, "separable": cls.separable,
        "entanglement_breaking": cls.entanglement_breaking,
        "omega_eb": eb_threshold(env.tau), "kappa": k.kappa, "kappa_prime": k.kappa_prime,
        "env_mutual_info": env_mutual_info(env.omega, env.g, env.g_prime) if cls.physical else None,
        "violation": bona_fide_violation(env.omega, env.g, env.g_prime),
    }


def _axis(lo: float, hi: float, num: int) -> list[float]:
    if lo == hi:
        return [float(lo)]
    return [float(x) for x in np.linspace(lo, hi, num)]


def _plane_task(args):
    cfg, g, gp = args
    return plane_record(cfg, g, gp)


def _noise_task(args):
    cfg, n = args
    return noise_record(cfg, n)


def _run(task, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) < 2:
        return [task(it) for it in items]
    chunk = max(1, len(items) // (8 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(task, items, chunksize=chunk))


@dataclass
class ScanResult:
    kind: str
    config: dict[str, Any]
    columns: list[str]
    records: list[dict[str, Any]]
    antidiagonal: list[dict[str, Any]] | None = None
    diagnostics: dict[str, Any] | None = None


def plane_axis(cfg: ScanConfig) -> list[float]:
    lo, hi = cfg.range if cfg.range is not None else (-(cfg.omega - 1.0), cfg.omega - 1.0)
    return _axis(lo, hi, cfg.grid)


def scan_plane(cfg: ScanConfig) -> ScanResult:
    """Row-major grid over ``(g, g')``; ``g`` is the slow index."""
    cfg.validate()
    axis = plane_axis(cfg)
    items = [(cfg, g, gp) for g in axis for gp in axis]
    diag = [(cfg, g, -g) for g in axis]
    out = _run(_plane_task, items + diag, cfg.jobs)
    return ScanResult("scan-plane", cfg.echo(), PLANE_COLUMNS, out[:len(items)],
                      antidiagonal=out[len(items):])


def noise_diagnostics(records: list[dict[str, Any]]) -> dict[str, Any]:
    ns = [r["n"] for r in records]
    rs = [r["qkd_rate"] for r in records]
    diffs = np.diff(rs)
    changes = [
        0.5 * (ns[i] + ns[i + 1]) for i in range(len(rs) - 1) if (rs[i] > 0) != (rs[i + 1] > 0)
    ]
    after_eb = [r for n, r in zip(ns, rs) if n > 2.0]
    return {
        "monotone_decreasing": bool(np.all(diffs < 0)) if len(rs) > 1 else True,
        "sign_changes": changes,
        "positive_beyond_eb": bool(after_eb) and all(r > 0 for r in after_eb),
        "rate_min": min(rs),
        "rate_max": max(rs),
    }


def scan_noise(cfg: ScanConfig) -> ScanResult:
    cfg.validate()
    lo, hi = cfg.range if cfg.range is not None else (0.0, 4.0)
    items = [(cfg, n) for n in _axis(lo, hi, cfg.grid)]
    records = _run(_noise_task, items, cfg.jobs)
    return ScanResult("scan-noise", cfg.echo(), NOISE_COLUMNS, records,
                      diagnostics=noise_diagnostics(records))


# -- serialization ----------------------------------------------------------


def format_value(x: Any) -> str:
    """Text form shared by the CSV and JSON writers."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{SIG_DIGITS}g}"


def _json_value(x: Any) -> Any:
    if x is None or isinstance(x, (bool, np.bool_, str)):
        return bool(x) if isinstance(x, np.bool_) else x
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return format_value(x)
        return float(format_value(x))
    if isinstance(x, dict):
        return {k: _json_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    return x


def to_json(result: ScanResult | dict[str, Any]) -> str:
    if isinstance(result, ScanResult):
        payload = {"kind": result.kind, "config": result.config,
                   "columns": result.columns, "records": result.records}
        if result.antidiagonal is not None:
            payload["antidiagonal"] = result.antidiagonal
        if result.diagnostics is not None:
            payload["diagnostics"] = result.diagnostics
    else:
        payload = result
    return json.dumps(_json_value(payload), indent=1) + "\n"


def _csv_block(kind: str, config: dict, columns: list[str], records: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# cvrelay {kind}\n")
    for key, val in config.items():
        if isinstance(val, list):
            val = ",".join(format_value(v) for v in val)
        elif not isinstance(val, str):
            val = format_value(val)
        buf.write(f"# {key} = {val}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        writer.writerow([format_value(rec.get(c)) for c in columns])
    return buf.getvalue()


def to_csv(result: ScanResult) -> str:
    text = _csv_block(result.kind, result.config, result.columns, result.records)
    if result.diagnostics:
        for key, val in result.diagnostics.items():
            if isinstance(val, list):
                val = ",".join(format_value(v) for v in val)
            else:
                val = format_value(val)
            text += f"# diagnostic {key} = {val}\n"
    return text


def antidiagonal_csv(result: ScanResult) -> str:
    return _csv_block(result.kind + " antidiagonal", result.config, result.columns,
                      result.antidiagonal or [])


def sidecar_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".antidiagonal" + p.suffix)


def write_result(result: ScanResult, fmt: str, out: str | None) -> str | None:
    """Write ``result``; returns the text instead when ``out`` is None."""
    if fmt == "json":
        text = to_json(result)
    else:
        text = to_csv(result)
    if out is None:
        if fmt == "csv" and result.antidiagonal is not None:
            text += antidiagonal_csv(result)
        return text
    Path(out).write_text(text)
    if fmt == "csv" and result.antidiagonal is not None:
        sidecar_path(out).write_text(antidiagonal_csv(result))
    return None


# -- decoding (used to cross-check the two encodings) -----------------------


def parse_value(text: str) -> Any:
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    return float(text)


def read_csv(text: str) -> list[dict[str, Any]]:
    """Decode the first CSV block; a later ``# cvrelay`` banner starts a new block."""
    lines = []
    for num, ln in enumerate(text.splitlines()):
        if num and ln.startswith("# cvrelay "):
            break
        if not ln.startswith("#"):
            lines.append(ln)
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    return [{k: parse_value(v) for k, v in zip(header, row)} for row in body]


def read_json(text: str) -> list[dict[str, Any]]:
    def norm(v):
        if isinstance(v, str):
            return float(v)
        if isinstance(v, int) and not isinstance(v, bool):
            return float(v)
        return v

    payload = json.loads(text)
    cols = payload["columns"]
    return [{c: norm(rec.get(c)) for c in cols} for rec in payload["records"]]


def iter_flags(record: dict[str, Any]) -> Iterable[tuple[str, bool, float]]:
    """(column, flag, eigenvalue) triples of a plane record."""
    for col in _FLAG_COLUMNS:
        yield col, record[col], record["eig_" + col[len("ent_"):]]
