"""Chain configuration and stored posterior draws."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclasses.dataclass(frozen=True)
class ChainConfig:
    seed: int
    iterations: int = 20000
    burn_in: int = 5000
    thin: int = 1
    chains: int = 1
    store_theta: bool = False
    init: str = "default"  # or "overdispersed"

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ConfigError("thin must be positive")
        if self.chains < 1:
            raise ConfigError("chains must be positive")
        if self.init not in ("default", "overdispersed"):
            raise ConfigError("init must be 'default' or 'overdispersed'")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be in [0, 2**64)")

    @property
    def stored_iterations(self) -> np.ndarray:
        """1-based iteration numbers that are kept."""
        return np.arange(self.burn_in + self.thin, self.iterations + 1, self.thin)

    @property
    def n_stored(self) -> int:
        return int(self.stored_iterations.size)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(eq=False)
class ChainDraws:
    """Post-burn-in draws of one chain, stored column-wise.

    Column names: ``mu``, ``tau``, ``beta_k`` and optionally ``theta_i``
    (gaussian); ``beta_k``, ``atom_k``, ``weight_k``, ``Q`` and optionally
    ``effect_i`` (discrete; ``effect_i`` is the person's atom value).
    """

    model: str
    chain: int
    iteration: np.ndarray
    columns: dict
    meta: dict = dataclasses.field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.iteration.shape[0])

    def _block(self, prefix: str) -> np.ndarray | None:
        names = [c for c in self.columns if c.startswith(prefix + "_")
                 and c[len(prefix) + 1:].isdigit()]
        if not names:
            return None
        names.sort(key=lambda c: int(c.rsplit("_", 1)[1]))
        return np.column_stack([self.columns[c] for c in names])

    @property
    def mu(self):
        return self.columns.get("mu")

    @property
    def tau(self):
        return self.columns.get("tau")

    @property
    def beta(self):
        b = self._block("beta")
        return np.zeros((len(self), 0)) if b is None else b

    @property
    def theta(self):
        return self._block("theta")

    @property
    def atoms(self):
        return self._block("atom")

    @property
    def weights(self):
        return self._block("weight")

    @property
    def occupied(self):
        return self.columns.get("Q")

    @property
    def effects(self):
        return self._block("effect")

    def global_columns(self) -> dict:
        """Label-invariant global parameters suitable for diagnostics."""
        out = {}
        for name, arr in self.columns.items():
            if name in ("mu", "tau", "Q") or name.startswith("beta_"):
                out[name] = arr
        return out

    def summary(self) -> list[dict]:
        """Posterior mean and central 95% interval for every global parameter."""
        rows = []
        for name, arr in self.global_columns().items():
            lo, hi = np.quantile(arr, [0.025, 0.975])
            rows.append({"parameter": name, "mean": float(np.mean(arr)),
                         "q2.5": float(lo), "q97.5": float(hi)})
        return rows

    def write(self, path) -> None:
        """Write ``<path>`` (CSV) and ``<path>.json`` (metadata sidecar)."""
        path = Path(path)
        names = list(self.columns)
        mat = np.column_stack([self.iteration] + [self.columns[c] for c in names])
        fmt = ["%d"] + ["%d" if self.columns[c].dtype.kind in "iu" else "%.17g" for c in names]
        with path.open("w", newline="") as fh:
            fh.write(",".join(["iteration", *names]) + "\n")
            np.savetxt(fh, mat, delimiter=",", fmt=fmt)
        meta = {"model": self.model, "chain": self.chain, "columns": names, **self.meta}
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "ChainDraws":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        with path.open() as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        columns = {}
        for k, name in enumerate(header[1:], start=1):
            col = data[:, k]
            columns[name] = col.astype(np.int64) if name == "Q" else col
        model = meta.pop("model")
        chain = meta.pop("chain")
        meta.pop("columns", None)
        return cls(model, chain, data[:, 0].astype(np.int64), columns, meta)


def stack_chains(chains: list[ChainDraws], name: str) -> np.ndarray:
    """Column ``name`` from each chain as a (chains, draws) array."""
    return np.stack([c.columns[name] for c in chains])


def pool(chains: list[ChainDraws]) -> ChainDraws:
    """Concatenate chains into one set of draws (chain id -1)."""
    if len(chains) == 1:
        return chains[0]
    cols = {k: np.concatenate([c.columns[k] for c in chains]) for k in chains[0].columns}
    it = np.concatenate([c.iteration for c in chains])
    return ChainDraws(chains[0].model, -1, it, cols, dict(chains[0].meta))
