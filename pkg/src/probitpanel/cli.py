"""Command-line interface: ``probitpanel {fit,predict,analyze,simulate,diagnose}``.

Every command reads one YAML config; ``--seed``, ``--out`` and ``--threads``
override it. Outputs go to a fresh directory that is populated in a
temporary sibling and renamed into place, so a failed run leaves nothing
behind.

Exit codes: 0 success, 2 config, 3 data, 4 sampler, 5 IO.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import hashlib
import json
import logging
import shutil
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import binomial_mixture as bm
from . import diagnostics, groups, simulation
from ._backend import BACKEND, set_threads
from .chains import ChainConfig, ChainDraws, pool
from .data import (PanelDataset, Schema, StandardizationParams, ingest_csv, split_train_holdout,
                   standardize)
from .errors import ConfigError, DataError, DomainError, SamplerError
from .gibbs_discrete import DiscreteHyperParams, occupancy_summary, run_chains_discrete
from .gibbs_gaussian import GaussianHyperParams, run_chains
from .predictive import PredictiveSummary, ThetaGrid, predictive_samples

log = logging.getLogger("probitpanel")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SAMPLER, EXIT_IO = 0, 2, 3, 4, 5
MODELS = ("gaussian", "discrete", "binomial-mixture")
SCHEMES = ("psa_midpoint", "psa_sized", "clustered")


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated run configuration.

    ``raw`` keeps the parsed YAML (after overrides) and ``sha256`` its
    canonical JSON hash, recorded in every output's metadata.
    """

    seed: int
    out: Path
    model: str
    data: dict
    chain: dict
    prior: dict
    discrete: dict
    binomial: dict
    analysis: dict
    simulation: dict
    raw: dict
    base: Path

    @property
    def sha256(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def chain_config(self) -> ChainConfig:
        allowed = {f.name for f in dataclasses.fields(ChainConfig)} - {"seed"}
        extra = set(self.chain) - allowed
        if extra:
            raise ConfigError(f"unknown chain keys: {sorted(extra)}")
        return ChainConfig(seed=self.seed, **self.chain)


_SECTIONS = ("data", "chain", "prior", "discrete", "binomial", "analysis", "simulation")


def load_config(path, seed=None, out=None, require_data=True) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    known = {"seed", "output", "model", *_SECTIONS}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    if seed is not None:
        raw["seed"] = int(seed)
    if "seed" not in raw or not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
        raise ConfigError("an integer 'seed' is required")
    if not 0 <= raw["seed"] < 2**63:
        raise ConfigError("seed must be in [0, 2**63)")
    if "output" not in raw and out is None:
        raise ConfigError("an 'output' directory is required")
    model = raw.get("model", "gaussian")
    if model not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}")
    sections = {}
    for s in _SECTIONS:
        v = raw.get(s) or {}
        if not isinstance(v, dict):
            raise ConfigError(f"section '{s}' must be a mapping")
        sections[s] = v
    base = path.parent.resolve()
    dest = Path(out) if out is not None else Path(raw["output"])
    if out is None and not dest.is_absolute():
        dest = base / dest
    # the output location is not part of the recorded configuration
    record = {k: v for k, v in raw.items() if k != "output"}
    cfg = RunConfig(raw["seed"], dest, model, raw=record, base=base, **sections)
    if require_data:
        src = cfg.binomial.get("path") if model == "binomial-mixture" else cfg.data.get("path")
        if not src:
            raise ConfigError("data path missing from config")
        if not cfg.path(src).exists():
            raise ConfigError(f"data file does not exist: {cfg.path(src)}")
    return cfg


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


@contextlib.contextmanager
def atomic_dir(target: Path):
    """Yield a temporary directory that replaces ``target`` on success."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if target.exists():
        old = target.with_name(f".{target.name}.old")
        shutil.rmtree(old, ignore_errors=True)
        target.rename(old)
    tmp.rename(target)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def _json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(type(v))


def _metadata(cfg: RunConfig, command: str, files: list[str]) -> dict:
    # no timestamps or thread counts, so reruns are byte-identical
    return {"command": command, "seed": cfg.seed, "config_sha256": cfg.sha256,
            "version": __version__, "backend": BACKEND, "model": cfg.model,
            "files": sorted(files), "config": cfg.raw}


def _finish(cfg: RunConfig, command: str, tmp: Path) -> None:
    files = sorted(p.name for p in tmp.iterdir())
    _json(tmp / "metadata.json", _metadata(cfg, command, files))


# ---------------------------------------------------------------------------
# data loading
# ---------------------------------------------------------------------------


def _load_panel(cfg: RunConfig, params: StandardizationParams | None = None):
    d = cfg.data
    extra = set(d) - {"path", "schema", "standardize", "holdout_after"}
    if extra:
        raise ConfigError(f"unknown data keys: {sorted(extra)}")
    schema = Schema.from_dict(d.get("schema") or {})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ds = ingest_csv(cfg.path(d["path"]), schema)
    for w in caught:
        log.warning("%s", w.message)
    train, hold = ds, None
    mask_hold = np.zeros(ds.N, dtype=bool)
    if d.get("holdout_after"):
        try:
            cutoff = np.datetime64(str(d["holdout_after"]), "D")
        except ValueError:
            raise ConfigError(f"bad holdout_after date: {d['holdout_after']}") from None
        train, hold = split_train_holdout(ds, cutoff)
        mask_hold = ds.dates > cutoff
    if d.get("standardize", True):
        if params is None:
            _, params = standardize(train)
        ds, _ = standardize(ds, params)
        train = ds.subset(~mask_hold)
    return ds, train, mask_hold, params


def _read_fit(fit_dir: Path):
    fit_dir = Path(fit_dir)
    if not (fit_dir / "metadata.json").exists():
        raise ConfigError(f"{fit_dir} is not a fit output directory")
    chains = [ChainDraws.read(p) for p in sorted(fit_dir.glob("chain_*.csv"))]
    if not chains:
        raise ConfigError(f"no chain files in {fit_dir}")
    sp = fit_dir / "standardization.json"
    params = StandardizationParams.from_dict(json.loads(sp.read_text())) if sp.exists() else None
    return chains, params


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _convergence_rows(chains: list[ChainDraws]) -> list[dict]:
    names = list(chains[0].global_columns())
    return diagnostics.convergence_report(
        {n: np.stack([c.columns[n].astype(float) for c in chains]) for n in names})


def _write_rows(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    keys = list(rows[0])
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                              for v in (r[k] for k in keys)))
    path.write_text("\n".join(lines) + "\n")


def cmd_fit(cfg: RunConfig, threads: int) -> None:
    cc = cfg.chain_config()
    with atomic_dir(cfg.out) as tmp:
        if cfg.model == "binomial-mixture":
            _fit_binomial(cfg, cc, tmp)
        else:
            ds, train, _, params = _load_panel(cfg)
            if cfg.model == "gaussian":
                try:
                    hyper = GaussianHyperParams(**cfg.prior)
                except TypeError as exc:
                    raise ConfigError(f"bad prior settings: {exc}") from None
                chains = run_chains(train, hyper, cc, threads)
            else:
                try:
                    hyper = DiscreteHyperParams(**cfg.discrete)
                except TypeError as exc:
                    raise ConfigError(f"bad discrete settings: {exc}") from None
                chains = run_chains_discrete(train, hyper, cc, threads)
                _json(tmp / "occupancy.json", occupancy_summary(chains))
            for c in chains:
                c.write(tmp / f"chain_{c.chain}.csv")
            if params is not None:
                _json(tmp / "standardization.json", params.to_dict())
            _write_rows(tmp / "convergence.csv", _convergence_rows(chains))
            _write_rows(tmp / "summary.csv", pool(chains).summary())
        _finish(cfg, "fit", tmp)


def _fit_binomial(cfg: RunConfig, cc: ChainConfig, tmp: Path) -> None:
    b = dict(cfg.binomial)
    data = bm.read_binomial_csv(cfg.path(b.pop("path")))
    hyper = bm.BetaHyper(float(b.pop("a", 1.0)), float(b.pop("b", 1.0)))
    J = int(b.pop("J", 10))
    kwargs = {k: b.pop(k) for k in ("weight_prior", "sampler", "max_ratio") if k in b}
    if b:
        raise ConfigError(f"unknown binomial keys: {sorted(b)}")
    chains = [bm.fit_binomial_mixture(data, J, hyper, config=cc, chain=c, **kwargs)
              for c in range(cc.chains)]
    for c in chains:
        c.write(tmp / f"chain_{c.chain}.csv")
    q = np.concatenate([c.occupied for c in chains])
    vals, counts = np.unique(q, return_counts=True)
    _json(tmp / "occupancy.json", {"table": dict(zip(vals.tolist(), counts.tolist())),
                                   "mode": int(vals[np.argmax(counts)])})
    _json(tmp / "beta_marginal.json",
          {"log_likelihood": bm.beta_marginal_log_likelihood(data, hyper)})
    _write_rows(tmp / "convergence.csv", _convergence_rows(chains))


def _predict(cfg: RunConfig, fit_dir: Path, all_rows: bool = False):
    chains, params = _read_fit(fit_dir)
    ds, train, mask_hold, _ = _load_panel(cfg, params)
    a = cfg.analysis
    grid = ThetaGrid(**(a.get("grid") or {}))
    rows = mask_hold
    if all_rows or not np.any(rows):
        rows = np.ones(ds.N, dtype=bool)
    summary = predictive_samples(ds, pool(chains), rows=rows, grid=grid,
                                 max_draws=a.get("max_draws", 500), seed=cfg.seed)
    return ds, mask_hold, summary


def _write_summary(path: Path, summary, level: float) -> None:
    tab = summary.table(level)
    keys = list(tab)
    with path.open("w") as fh:
        fh.write(",".join(keys) + "\n")
        for t in range(len(summary)):
            fh.write(",".join(repr(float(tab[k][t])) if tab[k].dtype.kind == "f" else str(int(tab[k][t]))
                              for k in keys) + "\n")


def _write_samples(path: Path, summary, which: str) -> None:
    s = summary.pstar if which == "pstar" else summary.post
    with path.open("w") as fh:
        fh.write("row," + ",".join(f"draw_{d + 1}" for d in range(s.shape[1])) + "\n")
        np.savetxt(fh, np.column_stack([summary.rows, s]), delimiter=",",
                   fmt=["%d"] + ["%.17g"] * s.shape[1])


def cmd_predict(cfg: RunConfig, fit_dir: Path) -> None:
    level = float(cfg.analysis.get("level", 0.95))
    _, _, summary = _predict(cfg, fit_dir)
    with atomic_dir(cfg.out) as tmp:
        _write_summary(tmp / "predictive.csv", summary, level)
        _write_samples(tmp / "pstar_samples.csv", summary, "pstar")
        _write_samples(tmp / "p_samples.csv", summary, "post")
        _finish(cfg, "predict", tmp)


def _build_schemes(cfg, ds, mask_hold, summary_all):
    """Schemes from training estimates; PSA midpoint from holdout groups."""
    wanted = cfg.analysis.get("schemes", list(SCHEMES))
    bad = set(wanted) - set(SCHEMES)
    if bad:
        raise ConfigError(f"unknown schemes: {sorted(bad)}")
    pstar_hat = summary_all.pstar_hat
    in_train = ~mask_hold[summary_all.rows]
    train_hat = pstar_hat[in_train] if in_train.any() else pstar_hat
    rg = ds.risk_group[summary_all.rows]
    hold_sel = ~in_train if (~in_train).any() else np.ones_like(in_train)
    out = {}
    have_groups = bool(np.all(rg[hold_sel] > 0))
    for name in wanted:
        if name.startswith("psa") and not have_groups:
            log.warning("risk groups missing; skipping scheme %s", name)
            continue
        if name == "psa_midpoint" and cfg.analysis.get("psa_thresholds"):
            out[name] = groups.RiskGroupScheme(
                np.asarray(cfg.analysis["psa_thresholds"], dtype=float), name)
        elif name == "psa_midpoint":
            out[name] = groups.thresholds_psa_midpoint(ds.y[summary_all.rows][hold_sel], rg[hold_sel])
        elif name == "psa_sized":
            ref = rg[in_train] if in_train.any() else rg
            if np.any(ref == 0):
                log.warning("training risk groups incomplete; skipping psa_sized")
                continue
            sizes = np.bincount(ref, minlength=ref.max() + 1)[1:]
            out[name] = groups.thresholds_equal_count(train_hat, sizes)
        else:
            out[name] = groups.thresholds_kmeans_1d(train_hat, int(cfg.analysis.get("K", 6))).scheme
    return out


def cmd_analyze(cfg: RunConfig, fit_dir: Path) -> None:
    a = cfg.analysis
    level = float(a.get("level", 0.95))
    # every row is predicted so that training estimates are available for the schemes
    ds, mask_hold, summary_all = _predict(cfg, fit_dir, all_rows=True)
    hold = mask_hold[summary_all.rows] if mask_hold.any() else np.ones(len(summary_all), bool)
    schemes = _build_schemes(cfg, ds, mask_hold, summary_all)
    hs = _subset(summary_all, hold)
    with atomic_dir(cfg.out) as tmp:
        _write_summary(tmp / "predictive.csv", hs, level)
        report = {}
        for name, scheme in schemes.items():
            assigned = hs.risk_group if name == "psa_midpoint" else None
            cal = groups.calibration_table(hs.pstar_hat, hs.p_hat, hs.y, scheme, assigned=assigned)
            groups.write_calibration_csv(cal, tmp / f"calibration_{name}.csv", name)
            wb = groups.wrong_bin_matrix(hs.post, hs.pstar_hat, scheme, assigned=assigned)
            groups.write_wrong_bin_csv(wb, tmp / f"wrong_bin_{name}.csv", name)
            report[name] = {"thresholds": scheme.thresholds.tolist(),
                            "correct_bin_probability": wb.correct_bin_probability,
                            "groups_within_2se": int(sum(r.within(2.0) for r in cal)),
                            "flags": list(wb.flags)}
        lo, hi = hs.interval(level)
        rg = hs.risk_group if hs.risk_group is not None and np.all(hs.risk_group > 0) else np.zeros(len(hs), int)
        ir = groups.interval_report(lo, hi, hs.p_median, rg, hs.prior_count,
                                    float(a.get("threshold", 0.25)))
        groups.write_interval_csv(hs, ir, tmp / "intervals.csv", level)
        groups.write_interval_table_csv(ir, tmp / "interval_lengths.csv")
        cs = a.get("certainty_c", [round(0.05 * k, 2) for k in range(1, 20)])
        hv = a.get("certainty_h", [0.5, 0.6, 0.7, 0.8, 0.9, 0.95])
        groups.write_flag_curve_csv(cs, hv, groups.flag_curve(hs.pstar, cs, hv), tmp / "flagging.csv")
        report["interval_threshold_excluded_fraction"] = ir.flagged_fraction
        _json(tmp / "analysis.json", report)
        _finish(cfg, "analyze", tmp)


def _subset(s: PredictiveSummary, mask) -> PredictiveSummary:
    return PredictiveSummary(s.rows[mask], s.person[mask], s.occasion[mask], s.y[mask],
                             s.pstar[mask], s.post[mask],
                             None if s.risk_group is None else s.risk_group[mask],
                             None if s.prior_count is None else s.prior_count[mask])


def cmd_simulate(cfg: RunConfig) -> None:
    s = dict(cfg.simulation)
    cohort = int(s.pop("cohort", 1000))
    grid_points = int(s.pop("grid_points", 4001))
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in s.items()}
    try:
        sc = simulation.SimulationScenario(seed=cfg.seed, grid=ThetaGrid(-8.0, 8.0, grid_points), **kw)
    except TypeError as exc:
        raise ConfigError(f"bad simulation settings: {exc}") from None
    rows = simulation.interval_length_curve(sc)
    results = [simulation.signal_noise_intervals(sig, tau, cohort, cfg.seed, sc.level, sc.grid)
               for sig in ("low", "high") for tau in simulation.NOISE_TAU]
    with atomic_dir(cfg.out) as tmp:
        simulation.write_curve_csv(rows, tmp / "interval_length_curve.csv")
        simulation.write_signal_noise_csv(results, tmp / "signal_noise_intervals.csv")
        simulation.write_overlap_csv(results, tmp / "signal_noise_overlap.csv")
        _finish(cfg, "simulate", tmp)


def cmd_diagnose(cfg: RunConfig, fit_dir: Path) -> None:
    chains, _ = _read_fit(fit_dir)
    rows = _convergence_rows(chains)
    with atomic_dir(cfg.out) as tmp:
        _write_rows(tmp / "convergence.csv", rows)
        _json(tmp / "advisory.json",
              {"rhat_threshold": diagnostics.RHAT_ADVISORY,
               "not_converged": [r["parameter"] for r in rows if not r["converged"]]})
        _finish(cfg, "diagnose", tmp)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="probitpanel", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_fit=False):
        sp.add_argument("config", type=Path, help="YAML run configuration")
        if needs_fit:
            sp.add_argument("--fit", type=Path, required=True, help="output directory of a fit run")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help="override the output directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads; never changes results")
        sp.add_argument("-v", "--verbose", action="count", default=0)

    common(sub.add_parser("fit", help="run Gibbs chains"))
    common(sub.add_parser("predict", help="P* and P samples for holdout rows"), True)
    common(sub.add_parser("analyze", help="risk groups, calibration, intervals, flagging"), True)
    common(sub.add_parser("simulate", help="interval-length simulations"))
    common(sub.add_parser("diagnose", help="convergence report for a fit"), True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        set_threads(args.threads)
        needs_data = args.command in ("fit", "predict", "analyze")
        cfg = load_config(args.config, args.seed, args.out, require_data=needs_data)
        if args.command == "fit":
            cmd_fit(cfg, args.threads)
        elif args.command == "predict":
            cmd_predict(cfg, args.fit)
        elif args.command == "analyze":
            cmd_analyze(cfg, args.fit)
        elif args.command == "simulate":
            cmd_simulate(cfg)
        else:
            cmd_diagnose(cfg, args.fit)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
