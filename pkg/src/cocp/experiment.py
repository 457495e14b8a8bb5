"""Repeated-split experiments: fit methods, evaluate, write per-rep rows and summaries."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .conformal import fit_cqr_baseline, fit_split_baseline
from .data import Dataset, Preprocessor, generate_synthetic, make_split_plan, read_csv
from .distributions import FAMILIES
from .metrics import conmae, coverage_and_length, ert, msce, wsc
from .nn import TrainConfig
from .trainer import CocpConfig, fit_cocp

logger = logging.getLogger(__name__)

METHODS = ("oracle", "split", "cqr", "cocp")
OPTIONAL_METRICS = ("conmae", "msce", "wsc", "ert")
CSV_FIELDS = ["method", "rep", "seed", "coverage", "length", "conmae", "msce", "wsc",
              "ert_l1", "ert_l2", "train_seconds", "status"]
SUMMARY_METRICS = ["coverage", "length", "conmae", "msce", "wsc", "ert_l1", "ert_l2", "train_seconds"]


class ConfigError(ValueError):
    pass


def _check_keys(doc: dict, allowed, where: str):
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class ExperimentConfig:
    """One experiment.

    ``dataset`` is either ``{"kind": "normal", "n": 20000}`` or
    ``{"csv": path, "target": column, "transform": {...}}``. ``cocp`` holds
    overrides of :class:`~cocp.trainer.CocpConfig` fields (``K``, ``T``,
    ``beta``, ...), ``train`` overrides of the network
    :class:`~cocp.nn.TrainConfig` shared by all methods.
    """

    dataset: dict = field(default_factory=lambda: {"kind": "normal", "n": 20000})
    methods: list = field(default_factory=lambda: ["split", "cqr", "cocp"])
    alpha: float = 0.1
    repetitions: int = 10
    seed: int = 0
    cocp: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    metrics: list = field(default_factory=lambda: list(OPTIONAL_METRICS))
    wsc_directions: int = 1000
    out: str | None = None

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        bad = [m for m in self.metrics if m not in OPTIONAL_METRICS]
        if bad:
            raise ConfigError(f"unknown metrics {bad}; choose from {OPTIONAL_METRICS}")
        ds = dict(self.dataset)
        if "kind" in ds:
            _check_keys(ds, {"kind", "n", "sigma_ln"}, "dataset")
            if ds["kind"] not in FAMILIES:
                raise ConfigError(f"unknown synthetic kind {ds['kind']!r}")
        elif "csv" in ds:
            _check_keys(ds, {"csv", "target", "transform"}, "dataset")
            if "target" not in ds:
                raise ConfigError("csv dataset needs a target column")
            if "oracle" in self.methods:
                raise ConfigError("the oracle method needs a synthetic dataset")
        else:
            raise ConfigError("dataset needs either 'kind' (synthetic) or 'csv'")
        _check_keys(self.cocp, {f.name for f in fields(CocpConfig)} - {"alpha", "warmup", "phase"}
                    | {"phase_epochs", "phase_patience"}, "cocp")
        _check_keys(self.train, {f.name for f in fields(TrainConfig)} - {"rng_seed"}, "train")
        self.cocp_config()  # validate values early

    @property
    def synthetic(self) -> bool:
        return "kind" in self.dataset

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        _check_keys(doc, {f.name for f in fields(cls)}, "config")
        return cls(**doc)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **changes})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def cocp_config(self) -> CocpConfig:
        over = dict(self.cocp)
        warmup = self.train_config()
        phase = TrainConfig(**{**self.train, "max_epochs": over.pop("phase_epochs", 200),
                               "patience": over.pop("phase_patience", 20)})
        if "hidden" in over:
            over["hidden"] = tuple(over["hidden"])
        return CocpConfig(alpha=self.alpha, warmup=warmup, phase=phase, **over)


def load_config(path) -> ExperimentConfig:
    """Read a YAML or JSON config file; unknown keys are errors."""
    text = Path(path).read_text()
    doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} does not contain a mapping")
    return ExperimentConfig.from_dict(doc)


def stream_seed(base_seed: int, rep: int, role: str) -> int:
    """Independent 32-bit seed for one (base seed, repetition, role) stream."""
    h = hashlib.sha256(f"{base_seed}:{rep}:{role}".encode()).digest()
    return int.from_bytes(h[:4], "little")


# --- one repetition ----------------------------------------------------------

@dataclass
class RepData:
    dataset: Dataset
    plan: object
    family: object


def prepare_rep(config: ExperimentConfig, rep: int) -> RepData:
    ds_cfg = config.dataset
    if config.synthetic:
        n = int(ds_cfg.get("n", 20000))
        ds = generate_synthetic(ds_cfg["kind"], n=n, seed=stream_seed(config.seed, rep, "data"),
                                sigma_ln=ds_cfg.get("sigma_ln", 0.6))
        plan = make_split_plan(n, seed=stream_seed(config.seed, rep, "split"), K=config.cocp_config().K)
        return RepData(ds, plan, ds.family)
    X, y, names = read_csv(ds_cfg["csv"], ds_cfg["target"])
    plan = make_split_plan(len(y), seed=stream_seed(config.seed, rep, "split"), K=config.cocp_config().K)
    transform = dict(ds_cfg.get("transform") or {})
    cols = [names.index(c) for c in transform.get("log1p_columns", [])]
    pool = plan.pool_idx
    pre = Preprocessor.fit(X[pool], y[pool], log1p_target=transform.get("log1p_target", False),
                           log1p_columns=cols)
    prov = {"source": "csv", "path": str(ds_cfg["csv"]), "target": ds_cfg["target"]}
    return RepData(Dataset(pre.transform_X(X), pre.transform_y(y), names, prov), plan, None)


def fit_method(method: str, rd: RepData, config: ExperimentConfig, rep: int):
    """Returns ``(lower, upper, train_seconds)`` on the test split."""
    ds, plan = rd.dataset, rd.plan
    Xt = ds.X[plan.test_idx]
    t0 = time.perf_counter()
    if method == "oracle":
        hdi = rd.family.oracle_hdi(Xt[:, 0], config.alpha)
        return np.asarray(hdi.lower), np.asarray(hdi.upper), 0.0
    init_seed = stream_seed(config.seed, rep, f"init:{method}")
    tc = config.train_config().replace(rng_seed=stream_seed(config.seed, rep, f"order:{method}"))
    tr, va, ca = plan.train_idx, plan.val_idx, plan.cal_idx
    if method == "split":
        model = fit_split_baseline((ds.X[tr], ds.y[tr]), (ds.X[va], ds.y[va]), (ds.X[ca], ds.y[ca]),
                                   config.alpha, tc, seed=init_seed)
    elif method == "cqr":
        model = fit_cqr_baseline((ds.X[tr], ds.y[tr]), (ds.X[va], ds.y[va]), (ds.X[ca], ds.y[ca]),
                                 config.alpha, tc, seed=init_seed)
    else:
        model = fit_cocp(ds, plan, config.cocp_config(), seed=init_seed)
    seconds = time.perf_counter() - t0
    lo, hi = model.predict(Xt)
    return lo, hi, seconds


def evaluate_rep(method, lo, hi, rd: RepData, config: ExperimentConfig, rep: int) -> dict:
    ds, plan = rd.dataset, rd.plan
    Xt, yt = ds.X[plan.test_idx], ds.y[plan.test_idx]
    row = dict.fromkeys(CSV_FIELDS[3:-2])
    cov, length = coverage_and_length(lo, hi, yt)
    if method == "oracle":
        # analytic conditional mass, not the sampled indicator
        cov = float(np.mean(rd.family.mass(Xt[:, 0], 0.5 * (lo + hi), 0.5 * (hi - lo))))
    row["coverage"], row["length"] = cov, length
    wanted = set(config.metrics)
    mseed = stream_seed(config.seed, rep, "metrics")
    if "conmae" in wanted and rd.family is not None:
        row["conmae"] = conmae(lo, hi, rd.family, Xt[:, 0], config.alpha)
    if "msce" in wanted:
        row["msce"] = msce(lo, hi, Xt, yt, config.alpha, seed=mseed)[0]
    if "wsc" in wanted:
        row["wsc"] = wsc(lo, hi, Xt, yt, M=config.wsc_directions, seed=mseed + 1)
    if "ert" in wanted:
        row["ert_l1"] = ert(lo, hi, Xt, yt, config.alpha, "l1", seed=mseed + 2).value
        row["ert_l2"] = ert(lo, hi, Xt, yt, config.alpha, "l2", seed=mseed + 2).value
    return row


class RowWriter:
    """Appends rows to a CSV, flushing after each one."""

    def __init__(self, path, extra_fields=()):
        self.fields = list(extra_fields) + CSV_FIELDS
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", newline="")
        self._w = csv.DictWriter(self._fh, fieldnames=self.fields)
        self._w.writeheader()
        self._fh.flush()

    def write(self, row: dict):
        self._w.writerow({k: _fmt(row.get(k)) for k in self.fields})
        self._fh.flush()

    def close(self):
        self._fh.close()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def run_rows(config: ExperimentConfig, on_row=None) -> list:
    rows = []
    for rep in range(config.repetitions):
        rd = prepare_rep(config, rep)
        for method in config.methods:
            row = {"method": method, "rep": rep, "seed": config.seed + rep}
            try:
                lo, hi, secs = fit_method(method, rd, config, rep)
                row.update(evaluate_rep(method, lo, hi, rd, config, rep))
                row["train_seconds"] = secs
                row["status"] = "infinite_interval" if not np.all(np.isfinite(hi - lo)) else "ok"
            except Exception as exc:  # recorded per row; the run continues
                logger.exception("%s rep %d failed", method, rep)
                row["status"] = f"error:{type(exc).__name__}:{exc}".replace("\n", " ")
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def summarize(rows, group_by=("method",)) -> list:
    """Mean and population std per group; failed rows and infinite lengths are skipped."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[g] for g in group_by), []).append(r)
    out = []
    for key, rs in groups.items():
        ok = [r for r in rs if r["status"] in ("ok", "infinite_interval")]
        entry = dict(zip(group_by, key))
        entry["n_ok"] = len(ok)
        entry["n_failed"] = len(rs) - len(ok)
        for m in SUMMARY_METRICS:
            vals = [r[m] for r in ok if r.get(m) is not None and math.isfinite(r[m])]
            entry[m] = float(np.mean(vals)) if vals else None
            entry[m + "_std"] = float(np.std(vals)) if vals else None
        out.append(entry)
    return out


def format_summary(summary, columns=("coverage", "length", "conmae", "msce", "wsc", "ert_l1", "ert_l2"),
                   key="method") -> str:
    head = f"{key:>8s} " + " ".join(f"{c:>18s}" for c in columns)
    lines = [head]
    for e in summary:
        cells = []
        for c in columns:
            m, s = e.get(c), e.get(c + "_std")
            cells.append(f"{'-':>18s}" if m is None else f"{m:9.4f} ({s:.4f})".rjust(18))
        lines.append(f"{str(e[key]):>8s} " + " ".join(cells))
    return "\n".join(lines)


def run_experiment(config: ExperimentConfig):
    """Run every repetition; returns ``(summary, rows)`` and writes files if ``config.out``."""
    writer = None
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        writer = RowWriter(out / "results.csv")
    try:
        rows = run_rows(config, on_row=writer.write if writer else None)
    finally:
        if writer:
            writer.close()
    summary = summarize(rows)
    if config.out:
        (Path(config.out) / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary, rows


def run_ablation_T(config: ExperimentConfig, T_values=(0, 1, 2, 3, 4, 5)):
    """CoCP at each ``T`` with shared seeds; returns ``(summary by T, rows)``."""
    writer = None
    if config.out:
        Path(config.out).mkdir(parents=True, exist_ok=True)
        writer = RowWriter(Path(config.out) / "ablation.csv", extra_fields=("T",))
    all_rows = []
    try:
        for T in T_values:
            cfg = config.replace(methods=["cocp"], cocp={**config.cocp, "T": int(T)}, out=None)

            def emit(row, T=T):
                row["T"] = T
                if writer:
                    writer.write(row)

            all_rows += run_rows(cfg, on_row=emit)
    finally:
        if writer:
            writer.close()
    summary = summarize(all_rows, group_by=("T",))
    if config.out:
        (Path(config.out) / "ablation_summary.json").write_text(json.dumps(summary, indent=1))
    return summary, all_rows
