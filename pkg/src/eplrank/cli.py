"""Command-line entry point: ``eplrank {simulate,fit,diagnose,power-study}``.

Exit codes: 0 on success, 2 on invalid input or configuration, 3 on any
other failure.  Every command stages its files and publishes them only once
all of them have been written.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .diagnostics import (
    EPLScenario,
    MallowsScenario,
    bootstrap_p_value,
    epl_diagnostic,
    posterior_predictive_p_value,
    power_study,
)
from .io import (
    SCHEMA_VERSION,
    AtomicWriter,
    ConfigError,
    DatasetError,
    RunConfig,
    dumps_json,
    format_chain,
    format_dataset,
    load_config,
    read_chain,
    read_dataset,
)
from .mcmc import posterior_summaries, run_chain
from .model import EPLParams, sample_epl, sample_mallows_hamming
from .perm import PermutationError, ReferenceOrderError, borda_ordering

log = logging.getLogger("eplrank")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class UsageError(ValueError):
    pass


def _require_data(cfg: RunConfig):
    if not cfg["data.path"]:
        raise ConfigError("data.path is required")
    return read_dataset(cfg["data.path"], cfg["data.format"])


def _header(cfg: RunConfig, command: str) -> dict:
    config = {k: v for k, v in cfg.as_dict().items() if k != "output_dir"}
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": config}


def _build_scenario(cfg: RunConfig, prefix: str, kind: str):
    if kind == "epl":
        return EPLScenario(tuple(cfg[f"{prefix}.rho"]), tuple(cfg[f"{prefix}.p"]))
    if kind == "mallows":
        theta = cfg[f"{prefix}.theta"]
        return MallowsScenario(
            tuple(cfg[f"{prefix}.sigma"]),
            None if theta is None else float(theta),
            float(cfg[f"{prefix}.mean_distance"]),
        )
    raise ConfigError(f"unknown generator {kind!r}; use 'epl' or 'mallows'")


def cmd_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    n = cfg["simulate.n"]
    if n < 1:
        raise ConfigError(f"simulate.n must be >= 1, got {n}")
    scenario = _build_scenario(cfg, "simulate", cfg["simulate.generator"])
    rng = np.random.default_rng(cfg.seed)
    labels = tuple(cfg["simulate.labels"] or ())
    if isinstance(scenario, EPLScenario):
        data = sample_epl(EPLParams(scenario.rho, scenario.p), n, rng, labels)
    else:
        data = sample_mallows_hamming(scenario.sigma, scenario.theta, n, rng, labels)
    provenance = _header(cfg, "simulate") | {
        "generator": scenario.describe(),
        "n": n,
        "seed": cfg.seed,
        "format": cfg["data.format"],
    }
    with AtomicWriter(out) as w:
        w.add("data.csv", format_dataset(data, cfg["data.format"]))
        w.add("simulate.json", dumps_json(provenance))
    return [out / "data.csv", out / "simulate.json"]


def cmd_fit(cfg: RunConfig, out: Path) -> list[Path]:
    data = _require_data(cfg)
    prior, tuning, chain_cfg = cfg.prior, cfg.tuning, cfg.chain
    chain = run_chain(data, prior, tuning, chain_cfg)
    summary = posterior_summaries(chain, top_k=10)
    labels = data.item_labels
    doc = _header(cfg, "fit") | {
        "N": data.N,
        "K": data.K,
        "item_labels": list(labels),
        "borda_ordering": list(borda_ordering(data)),
        "posterior": summary.as_dict(),
        "supports": [
            {
                "item": i + 1,
                "label": labels[i],
                "mean": float(summary.support_mean[i]),
                "ci_low": float(summary.support_ci[i, 0]),
                "ci_high": float(summary.support_ci[i, 1]),
            }
            for i in range(data.K)
        ],
    }
    q = chain.normalized_supports()
    trace_lines = ["iter,rho,log_post," + ",".join(f"q_{i}" for i in range(1, data.K + 1))]
    for k in range(len(chain)):
        trace_lines.append(
            f"{int(chain.iteration[k])},{summary.trace['rho'][k]},"
            f"{float(chain.log_posterior_trace[k])!r},"
            + ",".join(repr(float(x)) for x in q[k])
        )
    top_lines = ["rank,rho,probability"]
    top_lines += [
        f"{r},{'-'.join(map(str, rho))},{pr!r}" for r, (rho, pr) in enumerate(summary.top, start=1)
    ]
    with AtomicWriter(out) as w:
        w.add("chain.csv", format_chain(chain))
        w.add("summary.json", dumps_json(doc))
        w.add("trace.csv", "\n".join(trace_lines) + "\n")
        w.add("top10.csv", "\n".join(top_lines) + "\n")
    log.info("modal rho %s (posterior probability %.3f)", summary.modal_rho, summary.modal_probability)
    return [out / n for n in ("chain.csv", "summary.json", "trace.csv", "top10.csv")]


def _load_plugin(cfg: RunConfig):
    chain = None
    if cfg["fit.chain"]:
        chain = read_chain(cfg["fit.chain"])
    if cfg["fit.summary"]:
        with open(cfg["fit.summary"], encoding="utf-8") as fh:
            doc = json.load(fh)
        try:
            post = doc["posterior"]
            fitted = EPLParams(tuple(post["modal_rho"]), post["support_mean"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{cfg['fit.summary']}: not a fit summary ({exc})") from None
        source = {"kind": "summary", "path": str(cfg["fit.summary"])}
    elif chain is not None:
        fitted = posterior_summaries(chain, top_k=1).plugin_params()
        source = {"kind": "chain", "path": str(cfg["fit.chain"])}
    else:
        raise ConfigError("diagnose needs fit.summary or fit.chain")
    return fitted, chain, source


def cmd_diagnose(cfg: RunConfig, out: Path) -> list[Path]:
    data = _require_data(cfg)
    fitted, chain, source = _load_plugin(cfg)
    if fitted.K != data.K:
        raise ConfigError(f"fit has K={fitted.K} but data has K={data.K}")
    constrained = bool(cfg["diagnostic.constrained"])
    smoothed = bool(cfg["diagnostic.smoothed"])
    B = int(cfg["diagnostic.B"])
    boot_ss, ppc_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    result = epl_diagnostic(data, constrained)
    p_boot = bootstrap_p_value(data, fitted, B, np.random.default_rng(boot_ss), constrained, smoothed)
    doc = _header(cfg, "diagnose") | {
        "diagnostic": result.as_dict(),
        "B": B,
        "seed": cfg.seed,
        "p_value_convention": "smoothed" if smoothed else "proportion",
        "plugin": {"source": source, "rho": list(fitted.rho.rho), "p": fitted.p.tolist()},
        "bootstrap_p_value": p_boot,
        "posterior_predictive_p_value": None,
    }
    if chain is not None:
        if chain.K != data.K:
            raise ConfigError(f"chain has K={chain.K} but data has K={data.K}")
        doc["posterior_predictive_p_value"] = posterior_predictive_p_value(
            data, chain, B, np.random.default_rng(ppc_ss), constrained, smoothed
        )
    with AtomicWriter(out) as w:
        w.add("diagnostic.json", dumps_json(doc))
    log.info("T = %s at %s, bootstrap p-value %.3f", result.t_min, result.argmin_pair, p_boot)
    return [out / "diagnostic.json"]


def cmd_power_study(cfg: RunConfig, out: Path) -> list[Path]:
    kinds = {"null": "epl", "alternative": "mallows"}
    names = cfg["power.scenarios"]
    if not names or any(n not in kinds for n in names):
        raise ConfigError(f"power.scenarios must be a non-empty subset of {list(kinds)}")
    n_datasets, N = int(cfg["power.n_datasets"]), int(cfg["power.N"])
    if n_datasets < 1 or N < 1:
        raise ConfigError("power.n_datasets and power.N must be >= 1")
    scenarios = {name: _build_scenario(cfg, "power", kinds[name]) for name in names}
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(kinds))
    alpha = float(cfg["diagnostic.alpha"])
    rows = ["scenario,dataset,p_value,t_obs,modal_rho"]
    report = _header(cfg, "power-study") | {"alpha": alpha, "B": int(cfg["diagnostic.B"]), "scenarios": {}}
    for name, scenario in scenarios.items():
        # one seed per scenario slot, so running a subset reproduces the full study
        seed = int(seeds[list(kinds).index(name)].generate_state(1)[0])
        res = power_study(
            scenario,
            n_datasets,
            N,
            int(cfg["diagnostic.B"]),
            alpha,
            seed=seed,
            prior=cfg.prior,
            tuning=cfg.tuning,
            chain_cfg=cfg.chain,
            constrained=bool(cfg["diagnostic.constrained"]),
            n_jobs=int(cfg["power.n_jobs"]),
        )
        for r in res.replicates:
            rows.append(f"{name},{r.index + 1},{r.p_value!r},{r.t_obs!r},{'-'.join(map(str, r.modal_rho))}")
        report["scenarios"][name] = res.scenario | {
            "rejection_rate": res.rejection_rate,
            "n_datasets": n_datasets,
            "N": N,
        }
        log.info("%s scenario: rejection rate %.3f", name, res.rejection_rate)
    with AtomicWriter(out) as w:
        w.add("power_pvalues.csv", "\n".join(rows) + "\n")
        w.add("power.json", dumps_json(report))
    return [out / "power_pvalues.csv", out / "power.json"]


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "power-study": cmd_power_study,
}


def _parse_set(items: list[str]) -> dict:
    overrides = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = yaml.safe_load(value)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eplrank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.add_argument("--config", help="YAML file of dotted keys")
        p.add_argument("--seed", type=int, help="overrides chain.seed")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override one configuration key; may be repeated",
        )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = _parse_set(args.set)
        if args.seed is not None:
            overrides["chain.seed"] = args.seed
        if args.out is not None:
            overrides["output_dir"] = args.out
        cfg = load_config(args.config, overrides)
        written = COMMANDS[args.command](cfg, Path(cfg["output_dir"]))
    except (ConfigError, DatasetError, UsageError, PermutationError, ReferenceOrderError,
            FileNotFoundError, ValueError) as exc:
        print(f"eplrank: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"eplrank: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
