"""Dataset and chain files, run configuration and atomic output writing."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .mcmc import ChainConfig, ChainOutput, PriorConfig, TuningConfig
from .model import RankingDataset
from .perm import invert, validate_permutation

SCHEMA_VERSION = 1
FORMATS = ("ordering", "ranking")


class DatasetError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def read_dataset(path: str | os.PathLike, format: str = "ordering") -> RankingDataset:
    """Load a CSV whose header holds item labels and whose rows are permutations.

    ``format="ranking"`` rows give the rank of each item and are inverted to
    orderings on load.
    """
    if format not in FORMATS:
        raise DatasetError(f"unknown data format {format!r}; use one of {FORMATS}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        labels = [h.strip() for h in header]
        K = len(labels)
        rows = []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != K:
                raise DatasetError(f"{path}, line {lineno}: expected {K} entries, got {len(row)}")
            try:
                perm = validate_permutation([int(c) for c in row], K)
            except ValueError as exc:
                raise DatasetError(f"{path}, line {lineno}: {exc}") from None
            rows.append(invert(perm) if format == "ranking" else perm)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return RankingDataset(np.array(rows), tuple(labels))


def format_dataset(data: RankingDataset, format: str = "ordering") -> str:
    if format not in FORMATS:
        raise DatasetError(f"unknown data format {format!r}; use one of {FORMATS}")
    rows = data.rankings() if format == "ranking" else data.orderings
    lines = [",".join(data.item_labels)]
    lines += [",".join(str(int(x)) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def chain_header(K: int) -> list[str]:
    return (
        ["iter"]
        + [f"rho_{t}" for t in range(1, K + 1)]
        + [f"p_{i}" for i in range(1, K + 1)]
        + ["acc_joint", "acc_swap", "log_post"]
    )


def format_chain(chain: ChainOutput) -> str:
    lines = [",".join(chain_header(chain.K))]
    for k in range(len(chain)):
        fields = [str(int(chain.iteration[k]))]
        fields += [str(int(r)) for r in chain.rho_draws[k]]
        fields += [repr(float(x)) for x in chain.p_draws[k]]
        fields += [str(int(chain.accept_joint[k])), str(int(chain.accept_swap[k]))]
        fields.append(repr(float(chain.log_posterior_trace[k])))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def read_chain(path: str | os.PathLike) -> ChainOutput:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 6 or (len(header) - 4) % 2:
            raise DatasetError(f"{path}: not a chain file")
        K = (len(header) - 4) // 2
        if header != chain_header(K):
            raise DatasetError(f"{path}: unexpected chain columns {header}")
        rows = [row for row in reader if row]
    if not rows:
        raise DatasetError(f"{path}: chain file has no draws")
    arr = np.array(rows, dtype=object)
    return ChainOutput(
        iteration=arr[:, 0].astype(np.int64),
        rho_draws=arr[:, 1 : K + 1].astype(np.int64),
        p_draws=arr[:, K + 1 : 2 * K + 1].astype(float),
        accept_joint=arr[:, 2 * K + 1].astype(int).astype(bool),
        accept_swap=arr[:, 2 * K + 2].astype(int).astype(bool),
        log_posterior_trace=arr[:, 2 * K + 3].astype(float),
    )


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


class AtomicWriter:
    """Stage files in ``out_dir`` and publish them together on :meth:`commit`.

    Nothing is renamed into place unless every file was staged successfully.
    """

    def __init__(self, out_dir: str | os.PathLike):
        self.out_dir = Path(out_dir)
        self._staged: list[tuple[Path, Path]] = []

    def add(self, name: str, text: str) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.out_dir)
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self._staged.append((Path(tmp), self.out_dir / name))

    def commit(self) -> list[Path]:
        for tmp, final in self._staged:
            os.replace(tmp, final)
        done = [final for _, final in self._staged]
        self._staged = []
        return done

    def discard(self) -> None:
        for tmp, _ in self._staged:
            tmp.unlink(missing_ok=True)
        self._staged = []

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.commit()
        else:
            self.discard()
        return False


DEFAULTS: dict[str, Any] = {
    "data.path": None,
    "data.format": "ordering",
    "prior.c": 1.0,
    "prior.d": 1.0,
    "tuning.h": 0.1,
    "tuning.alpha0": 1.0,
    "tuning.lambda1": 0.5,
    "tuning.mc_draws": None,
    "tuning.smoothing": 1.0,
    "tuning.swap_ratio": "target",
    "tuning.swap_correction": True,
    "tuning.keep_scale": True,
    "chain.iterations": 20000,
    "chain.burn_in": 2000,
    "chain.thin": 1,
    "chain.seed": 0,
    "diagnostic.B": 100,
    "diagnostic.alpha": 0.05,
    "diagnostic.constrained": True,
    "diagnostic.smoothed": False,
    "fit.summary": None,
    "fit.chain": None,
    "simulate.generator": "epl",
    "simulate.n": 100,
    "simulate.rho": [1, 5, 2, 4, 3],
    "simulate.p": [0.15, 0.4, 0.12, 0.08, 0.25],
    "simulate.sigma": [1, 2, 3, 4, 5],
    "simulate.theta": None,
    "simulate.mean_distance": 2.0,
    "simulate.labels": None,
    "power.n_datasets": 50,
    "power.N": 149,
    "power.rho": [1, 5, 2, 4, 3],
    "power.p": [0.15, 0.4, 0.12, 0.08, 0.25],
    "power.sigma": [1, 2, 3, 4, 5],
    "power.theta": None,
    "power.mean_distance": 2.0,
    "power.scenarios": ["null", "alternative"],
    "power.n_jobs": 1,
    "output_dir": "out",
}


@dataclass
class RunConfig:
    """Resolved flat configuration; ``values`` maps dotted keys to values."""

    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def prior(self) -> PriorConfig:
        return PriorConfig(float(self["prior.c"]), float(self["prior.d"]))

    @property
    def tuning(self) -> TuningConfig:
        alpha0 = self["tuning.alpha0"]
        alpha0 = tuple(float(a) for a in alpha0) if isinstance(alpha0, (list, tuple)) else float(alpha0)
        mc = self["tuning.mc_draws"]
        return TuningConfig(
            h=float(self["tuning.h"]),
            alpha0=alpha0,
            lambda1=float(self["tuning.lambda1"]),
            mc_draws=None if mc is None else int(mc),
            smoothing=float(self["tuning.smoothing"]),
            swap_ratio=str(self["tuning.swap_ratio"]),
            swap_correction=bool(self["tuning.swap_correction"]),
            keep_scale=bool(self["tuning.keep_scale"]),
        )

    @property
    def chain(self) -> ChainConfig:
        return ChainConfig(
            iterations=int(self["chain.iterations"]),
            burn_in=int(self["chain.burn_in"]),
            seed=int(self["chain.seed"]),
            thin=int(self["chain.thin"]),
        )

    @property
    def seed(self) -> int:
        return int(self["chain.seed"])

    def validate(self) -> "RunConfig":
        try:
            self.prior, self.tuning, self.chain
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if self["data.format"] not in FORMATS:
            raise ConfigError(f"data.format must be one of {FORMATS}")
        if int(self["diagnostic.B"]) < 1:
            raise ConfigError("diagnostic.B must be >= 1")
        if not 0 <= float(self["diagnostic.alpha"]) <= 1:
            raise ConfigError("diagnostic.alpha must lie in [0, 1]")
        return self

    def as_dict(self) -> dict[str, Any]:
        return dict(self.values)


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, list):
            return [float(v) for v in value]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    return value


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a flat YAML mapping of dotted keys over the defaults.

    Nested mappings are flattened, so ``chain: {iterations: 10}`` and
    ``chain.iterations: 10`` are equivalent.  Unknown keys are rejected.
    """
    values = dict(DEFAULTS)
    raw: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                loaded = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a mapping of keys to values")
        raw.update(_flatten(loaded))
    raw.update(overrides or {})
    for key, value in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = _coerce(key, value)
    return RunConfig(values).validate()


def _flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out
