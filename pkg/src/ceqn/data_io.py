"""LIBSVM parsing, run configuration, and trace/summary artifacts.

The LIBSVM reader accepts ``<label> <idx>:<value> ...`` lines with 1-based
strictly increasing indices, ``#`` comments, and blank lines; labels are
remapped to {-1, +1} ({0,1} and {1,2} label sets are recognized). Traces are
written as CSV with a fixed header and shortest-round-trip float text so a
read-back recovers every numeric field exactly. Run configurations are flat
JSON documents validated key by key.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np
import scipy.sparse as sp

from .driver import (
    METHOD_ADAPTIVE_DUAL,
    METHOD_ADAPTIVE_REG,
    METHOD_CEQN,
    METHOD_FIXED,
    METHODS,
    RunResult,
    SolverConfig,
    TraceRecord,
)
from .hessian import ApproxConfig
from .problems import LogisticProblem, QuadraticProblem, tridiagonal_quadratic
from .steps import AdaptiveParams, CeqnParams

DATA_DIR_ENV = "CEQN_DATA_DIR"

TRACE_HEADER = (
    "iter,wall_seconds,f,grad_norm_sq,grad_dual_norm,eta,alpha,"
    "inner_count,skipped_pairs,fallback,n_value,n_grad,n_hvp"
)


class LibsvmParseError(ValueError):
    """Malformed LIBSVM input; carries the offending 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending key."""


@dataclass
class Dataset:
    """A parsed design matrix with +/-1 labels."""

    design: sp.csr_matrix
    labels: np.ndarray
    name: str = ""
    source: str = "<memory>"

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.design.nnz)


def parse_libsvm(
    stream: IO[str] | Iterable[str] | str | Path,
    dimension: int | None = None,
    name: str = "",
) -> Dataset:
    """Parse LIBSVM text into a Dataset.

    ``stream`` may be a path, an open text file, or any iterable of lines.
    The column count is the largest feature index seen unless ``dimension``
    pins it explicitly (guarding against truncated files). Every line either
    yields a sample, is skipped as blank/comment, or raises with its line
    number.
    """
    if isinstance(stream, (str, Path)):
        with open(stream, "r", encoding="utf-8") as fh:
            return parse_libsvm(fh, dimension=dimension, name=name or Path(stream).name)
    source = getattr(stream, "name", "<memory>")

    raw_labels: list[float] = []
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    max_index = 0
    for line_no, line in enumerate(stream, start=1):
        hash_pos = line.find("#")
        if hash_pos >= 0:
            line = line[:hash_pos]
        tokens = line.split()
        if not tokens:
            continue
        try:
            label = float(tokens[0])
        except ValueError:
            raise LibsvmParseError(line_no, f"non-numeric label {tokens[0]!r}") from None
        if label not in (-1.0, 0.0, 1.0, 2.0):
            raise LibsvmParseError(
                line_no, f"label {tokens[0]!r} is not one of -1, 0, 1, 2"
            )
        row = len(raw_labels)
        raw_labels.append(label)
        prev_index = 0
        for token in tokens[1:]:
            idx_text, sep, val_text = token.partition(":")
            if not sep:
                raise LibsvmParseError(line_no, f"feature token {token!r} lacks ':'")
            try:
                index = int(idx_text)
                value = float(val_text)
            except ValueError:
                raise LibsvmParseError(
                    line_no, f"non-numeric feature token {token!r}"
                ) from None
            if index <= prev_index:
                raise LibsvmParseError(
                    line_no,
                    f"index {index} not strictly increasing after {prev_index}",
                )
            if not math.isfinite(value):
                raise LibsvmParseError(line_no, f"non-finite value in {token!r}")
            prev_index = index
            rows.append(row)
            cols.append(index - 1)
            vals.append(value)
        max_index = max(max_index, prev_index)
    if not raw_labels:
        raise LibsvmParseError(0, "no samples found")

    label_set = set(raw_labels)
    if label_set <= {-1.0, 1.0}:
        labels = np.asarray(raw_labels)
    elif label_set == {0.0, 1.0}:
        labels = np.where(np.asarray(raw_labels) == 0.0, -1.0, 1.0)
    elif label_set == {1.0, 2.0}:
        labels = np.where(np.asarray(raw_labels) == 2.0, -1.0, 1.0)
    else:
        raise LibsvmParseError(
            0, f"label set {sorted(label_set)} cannot be mapped to -1/+1"
        )

    d = max_index if dimension is None else dimension
    if dimension is not None and max_index > dimension:
        raise LibsvmParseError(
            0, f"feature index {max_index} exceeds pinned dimension {dimension}"
        )
    design = sp.csr_matrix(
        (vals, (rows, cols)), shape=(len(raw_labels), d), dtype=np.float64
    )
    return Dataset(design=design, labels=labels, name=name, source=str(source))


def _format_field(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace_csv(result: RunResult, sink: IO[str] | str | Path) -> None:
    """Write one row per trace record under the fixed header."""
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="") as fh:
            write_trace_csv(result, fh)
        return
    sink.write(TRACE_HEADER + "\n")
    for rec in result.trace:
        sink.write(
            ",".join(
                _format_field(v)
                for v in (
                    rec.iter,
                    rec.wall_seconds,
                    rec.f,
                    rec.grad_norm_sq,
                    rec.grad_dual_norm,
                    rec.eta,
                    rec.alpha,
                    rec.inner_count,
                    rec.skipped_pairs,
                    rec.fallback,
                    rec.n_value,
                    rec.n_grad,
                    rec.n_hvp,
                )
            )
            + "\n"
        )


def read_trace_csv(source: IO[str] | str | Path) -> list[TraceRecord]:
    """Read back a trace CSV; numeric fields round-trip exactly."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return read_trace_csv(fh)
    lines = [line.rstrip("\n") for line in source]
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError("trace CSV header missing or unexpected")
    records = []
    for line in lines[1:]:
        if not line:
            continue
        parts = line.split(",")
        records.append(
            TraceRecord(
                iter=int(parts[0]),
                wall_seconds=float(parts[1]),
                f=float(parts[2]),
                grad_norm_sq=float(parts[3]),
                grad_dual_norm=float(parts[4]),
                eta=float(parts[5]),
                alpha=float(parts[6]),
                inner_count=int(parts[7]),
                skipped_pairs=int(parts[8]),
                fallback=bool(int(parts[9])),
                n_value=int(parts[10]),
                n_grad=int(parts[11]),
                n_hvp=int(parts[12]),
            )
        )
    return records


def config_to_dict(config: SolverConfig) -> dict:
    """Flatten a SolverConfig into JSON-ready key/value pairs."""
    out = {
        "method": config.method,
        "approx_kind": config.approx.kind,
        "pair_strategy": config.approx.pair_strategy,
        "memory": config.approx.memory,
        "h0_scale": config.approx.h0_scale,
        "sr1_skip_tol": config.approx.sr1_skip_tol,
        "bfgs_curvature_tol": config.approx.bfgs_curvature_tol,
        "max_iters": config.max_iters,
        "grad_tol": config.grad_tol,
        "max_seconds": None if math.isinf(config.max_seconds) else config.max_seconds,
        "seed": config.seed,
        "x0": config.x0 if isinstance(config.x0, str) else list(map(float, config.x0)),
    }
    if config.ceqn is not None:
        out["theta"] = config.ceqn.theta
        out["cubic"] = config.ceqn.cubic
        out["stepsize_form"] = config.ceqn.stepsize_form
    if config.adaptive is not None:
        out["cubic"] = config.adaptive.cubic
        out["alpha0"] = config.adaptive.alpha0
        out["gamma_inc"] = config.adaptive.gamma_inc
        out["gamma_dec"] = config.adaptive.gamma_dec
        out["max_inner"] = config.adaptive.max_inner
    if config.fixed_l is not None:
        out["cubic"] = config.fixed_l
    return out


def write_summary_json(
    result: RunResult, sink: IO[str] | str | Path, dataset_info: dict | None = None
) -> None:
    """Write a run summary: config echo, termination, finals, and totals."""
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fh:
            write_summary_json(result, fh, dataset_info)
        return
    f_final = result.f_final if math.isfinite(result.f_final) else None
    gns_final = (
        result.grad_norm_sq_final
        if math.isfinite(result.grad_norm_sq_final)
        else None
    )
    summary = {
        "config": config_to_dict(result.config),
        "seed": result.seed,
        "termination": result.termination,
        "iterations": len(result.trace),
        "final_f": f_final,
        "final_grad_norm_sq": gns_final,
        "final_alpha": result.final_alpha,
        "wall_seconds": result.wall_seconds,
        "evaluations": {
            "n_value": result.n_value,
            "n_grad": result.n_grad,
            "n_hvp": result.n_hvp,
        },
    }
    if dataset_info is not None:
        summary["dataset"] = dataset_info
    json.dump(summary, sink, indent=2)
    sink.write("\n")


PROBLEM_LOGISTIC = "logistic"
PROBLEM_QUADRATIC = "quadratic"

# key -> (allowed types, default); None default means required-if-applicable
_SPEC_SCHEMA: dict[str, tuple[tuple[type, ...], object]] = {
    "method": ((str,), None),
    "problem": ((str,), PROBLEM_LOGISTIC),
    "dataset": ((str,), None),
    "mu": ((float, int), 1e-4),
    "dimension": ((int,), None),
    "approx_kind": ((str,), "LSR1"),
    "pair_strategy": ((str,), "SAMPLED"),
    "memory": ((int,), 10),
    "h0_scale": ((float, int), 1e-4),
    "sr1_skip_tol": ((float, int), 1e-8),
    "bfgs_curvature_tol": ((float, int), 1e-12),
    "theta": ((float, int), 1.0),
    "cubic": ((float, int), None),
    "stepsize_form": ((str,), "STANDARD"),
    "alpha0": ((float, int), 1.0),
    "gamma_inc": ((float, int), 2.0),
    "gamma_dec": ((float, int), 0.5),
    "max_inner": ((int,), 30),
    "max_iters": ((int,), 500),
    "grad_tol": ((float, int), 1e-12),
    "max_seconds": ((float, int), None),
    "seed": ((int,), 0),
    "x0": ((str, list), "ALL_ONES"),
}


@dataclass
class RunSpec:
    """Validated flat configuration: problem selection plus solver settings."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def with_overrides(self, overrides: dict) -> "RunSpec":
        merged = dict(self.values)
        merged.update(overrides)
        return validate_spec(merged)

    def to_solver_config(self) -> SolverConfig:
        v = self.values
        approx = ApproxConfig(
            memory=v["memory"],
            h0_scale=float(v["h0_scale"]),
            kind=v["approx_kind"],
            pair_strategy=v["pair_strategy"],
            sr1_skip_tol=float(v["sr1_skip_tol"]),
            bfgs_curvature_tol=float(v["bfgs_curvature_tol"]),
        )
        method = v["method"]
        ceqn = adaptive = fixed_l = None
        if method == METHOD_CEQN:
            ceqn = CeqnParams(
                theta=float(v["theta"]),
                cubic=float(v.get("cubic", 0.0)),
                stepsize_form=v["stepsize_form"],
            )
        elif method in (METHOD_ADAPTIVE_DUAL, METHOD_ADAPTIVE_REG):
            adaptive = AdaptiveParams(
                cubic=float(v["cubic"]),
                alpha0=float(v["alpha0"]),
                gamma_inc=float(v["gamma_inc"]),
                gamma_dec=float(v["gamma_dec"]),
                mode="DUAL" if method == METHOD_ADAPTIVE_DUAL else "REG",
                max_inner=v["max_inner"],
                grad_tol=float(v["grad_tol"]),
            )
        else:
            fixed_l = float(v["cubic"])
        max_seconds = v.get("max_seconds")
        x0 = v["x0"]
        return SolverConfig(
            method=method,
            approx=approx,
            ceqn=ceqn,
            adaptive=adaptive,
            fixed_l=fixed_l,
            max_iters=v["max_iters"],
            grad_tol=float(v["grad_tol"]),
            max_seconds=math.inf if max_seconds is None else float(max_seconds),
            seed=v["seed"],
            x0=x0 if isinstance(x0, str) else np.asarray(x0, dtype=np.float64),
        )

    def load_problem(self):
        """Build the configured problem, resolving the dataset path."""
        if self.values["problem"] == PROBLEM_QUADRATIC:
            dim = self.values.get("dimension") or 3
            return tridiagonal_quadratic(dim), {"name": f"quadratic-{dim}", "n": dim, "d": dim}
        path = resolve_dataset_path(self.values["dataset"])
        dataset = parse_libsvm(path, dimension=self.values.get("dimension"))
        problem = LogisticProblem(dataset.design, dataset.labels, float(self.values["mu"]))
        info = {
            "name": dataset.name,
            "path": str(path),
            "n": dataset.n,
            "d": dataset.d,
            "nnz": dataset.nnz,
            "mu": float(self.values["mu"]),
        }
        return problem, info


def resolve_dataset_path(path: str | Path) -> Path:
    """Resolve a dataset path, rooting relative paths at $CEQN_DATA_DIR if set."""
    p = Path(path)
    if not p.is_absolute():
        root = os.environ.get(DATA_DIR_ENV)
        if root:
            p = Path(root) / p
    return p


def validate_spec(values: dict) -> RunSpec:
    """Check a flat config mapping against the schema; errors name the key."""
    if not isinstance(values, dict):
        raise ConfigError("configuration must be a flat JSON object")
    for key, value in values.items():
        if key not in _SPEC_SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        allowed, _ = _SPEC_SCHEMA[key]
        if isinstance(value, bool) or not isinstance(value, allowed):
            names = "/".join(t.__name__ for t in allowed)
            raise ConfigError(
                f"key {key!r} expects {names}, got {type(value).__name__} ({value!r})"
            )
    merged = {}
    for key, (_, default) in _SPEC_SCHEMA.items():
        if key in values:
            merged[key] = values[key]
        elif default is not None:
            merged[key] = default
    if "method" not in merged:
        raise ConfigError("missing required key 'method'")
    if merged["method"] not in METHODS:
        raise ConfigError(
            f"key 'method' must be one of {', '.join(METHODS)}; got {merged['method']!r}"
        )
    if merged["problem"] not in (PROBLEM_LOGISTIC, PROBLEM_QUADRATIC):
        raise ConfigError(
            f"key 'problem' must be 'logistic' or 'quadratic'; got {merged['problem']!r}"
        )
    if merged["problem"] == PROBLEM_LOGISTIC and "dataset" not in merged:
        raise ConfigError("missing required key 'dataset' for a logistic problem")
    if merged["method"] != METHOD_CEQN and "cubic" not in merged:
        raise ConfigError(f"missing required key 'cubic' for method {merged['method']}")
    spec = RunSpec(merged)
    try:
        spec.to_solver_config()  # surfaces engine-level validation errors early
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return spec


def load_config(path: str | Path) -> RunSpec:
    """Load and validate a flat JSON run configuration."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    return validate_spec(values)
