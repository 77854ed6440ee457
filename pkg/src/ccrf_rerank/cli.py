"""Command-line driver: ``ccrf-rerank <command> --config run.ini [--set section.key=value ...]``.

Commands: build-graph, denoise, rerank, eval, sweep, ablation, gen-synth.
Every command writes its outputs plus ``<command>.manifest.json`` (resolved
config and output checksums) into ``paths.output_dir``.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ccrf import CcrfParams, PivotError, denoise_database, read_affinity, write_affinity
from .diffusion import DiffusionParams, Reranker, read_rankings, write_rankings
from .experiments import (
    PipelineConfig,
    ablation,
    cross_label_edges,
    format_table,
    sweep,
)
from .graph import DescriptorSet, build_knn, read_fvecs, reciprocity_affinity, write_fvecs
from .metrics import MODES, Protocol, mean_ap
from .synthetic import SHAPES, synth_benchmark

_INT = int
_FLOAT = float


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s):
    return None if str(s).strip().lower() in ("", "none") else int(s)


def _int_list(s):
    return [int(v) for v in str(s).replace(",", " ").split()]


# section -> key -> (parser, default); a default of REQUIRED must be supplied
REQUIRED = object()
SCHEMA = {
    "paths": {
        "descriptors": (str, None), "ids": (str, None),
        "queries": (str, None), "query_ids": (str, None),
        "protocol": (str, None), "labels": (str, None),
        "affinity": (str, None), "rankings": (str, None),
        "output_dir": (str, "out"),
    },
    "graph": {"k": (_INT, 50), "gamma": (_FLOAT, 3.0), "normalize": (_bool, False)},
    "ccrf": {
        "alpha": (_FLOAT, 1.0), "beta": (_FLOAT, 0.1),
        "sigma_d": (_FLOAT, REQUIRED), "sigma_r": (_FLOAT, REQUIRED),
        "L": (_INT, 1000), "k_out": (_opt_int, None),
        "solver": (str, "cg"), "tol": (_FLOAT, 1e-6),
        "selection": (str, "select_then_symmetrize"),
        "use_ed": (_bool, True), "use_sd": (_bool, True),
    },
    "diffusion": {
        "rho": (_FLOAT, 0.99), "mode": (str, "online"), "trunc": (_opt_int, None),
        "query_k": (_opt_int, None), "tol": (_FLOAT, 1e-6), "max_iter": (_INT, 1000),
    },
    "eval": {
        "protocol_mode": (str, "Medium"), "sweep_axis": (str, "k"),
        "sweep_values": (_int_list, [10, 20, 50]),
    },
    "synth": {
        "n_per_manifold": (_INT, 200), "noise_sigma": (_FLOAT, 0.1),
        "shape": (str, "two_moons"), "n_queries": (_INT, 40), "height": (_FLOAT, 1.0),
    },
    "run": {"seed": (_INT, 0), "workers": (_INT, 1)},
}


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


def load_config(path=None, overrides=()) -> dict:
    """Parse an INI file plus ``section.key=value`` overrides into raw strings."""
    raw: dict = {s: {} for s in SCHEMA}
    if path is not None:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, val in cp.items(section):
                raw[section][key] = val
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, val = item.split("=", 1)
        section, key = lhs.split(".", 1)
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        raw[section][key] = val
    for section, entries in raw.items():
        for key in entries:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
    return raw


def resolve(raw: dict, require=()) -> dict:
    """Typed config with defaults; ``require`` lists sections whose REQUIRED keys must be set."""
    cfg = {}
    for section, keys in SCHEMA.items():
        cfg[section] = {}
        for key, (parse, default) in keys.items():
            if key in raw.get(section, {}):
                try:
                    cfg[section][key] = parse(raw[section][key])
                except ValueError as exc:
                    raise ConfigError(f"{section}.{key}: {exc}") from exc
            elif default is REQUIRED:
                if section in require:
                    raise ConfigError(f"missing required config value {section}.{key}")
                cfg[section][key] = None
            else:
                cfg[section][key] = default
    _validate(cfg)
    return cfg


def _validate(cfg):
    g, c, e, s = cfg["graph"], cfg["ccrf"], cfg["eval"], cfg["synth"]
    if g["k"] < 1:
        raise ConfigError("graph.k must be positive")
    if g["gamma"] <= 0:
        raise ConfigError("graph.gamma must be positive")
    if c["L"] < 1:
        raise ConfigError("ccrf.L must be positive")
    if e["protocol_mode"] not in MODES:
        raise ConfigError(f"eval.protocol_mode must be one of {MODES}")
    if s["shape"] not in SHAPES:
        raise ConfigError(f"synth.shape must be one of {SHAPES}")
    if e["sweep_axis"] not in ("k", "clique_size"):
        raise ConfigError("eval.sweep_axis must be k or clique_size")
    try:
        ccrf_params(cfg)
        diffusion_params(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def ccrf_params(cfg) -> CcrfParams | None:
    c = cfg["ccrf"]
    if c["sigma_d"] is None or c["sigma_r"] is None:
        return None
    return CcrfParams(alpha=c["alpha"], beta=c["beta"], sigma_d=c["sigma_d"], sigma_r=c["sigma_r"],
                      gamma=cfg["graph"]["gamma"], solver=c["solver"], tol=c["tol"],
                      use_ed=c["use_ed"], use_sd=c["use_sd"], selection=c["selection"])


def diffusion_params(cfg) -> DiffusionParams:
    d = cfg["diffusion"]
    return DiffusionParams(rho=d["rho"], max_iter=d["max_iter"], tol=d["tol"], mode=d["mode"],
                           trunc=d["trunc"])


def pipeline_config(cfg, denoise=True) -> PipelineConfig:
    return PipelineConfig(k=cfg["graph"]["k"], gamma=cfg["graph"]["gamma"], denoise=denoise,
                          clique_size=cfg["ccrf"]["L"], ccrf=ccrf_params(cfg) or CcrfParams(),
                          diffusion=diffusion_params(cfg), query_k=cfg["diffusion"]["query_k"])


# --- helpers --------------------------------------------------------------------


def _need(cfg, key):
    path = cfg["paths"][key]
    if not path:
        raise ConfigError(f"paths.{key} is required for this command")
    return path


def _descriptors(cfg) -> DescriptorSet:
    return read_fvecs(_need(cfg, "descriptors"), cfg["paths"]["ids"],
                      normalize=cfg["graph"]["normalize"])


def _queries(cfg) -> DescriptorSet:
    return read_fvecs(_need(cfg, "queries"), cfg["paths"]["query_ids"],
                      normalize=cfg["graph"]["normalize"])


def _out(cfg) -> Path:
    out = Path(cfg["paths"]["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(cfg, command, outputs, extra=None):
    out = _out(cfg)
    inputs = {k: _sha256(v) for k, v in cfg["paths"].items()
              if k != "output_dir" and v and Path(v).is_file()}
    doc = {"command": command, "config": cfg, "inputs": inputs,
           "outputs": {Path(p).name: _sha256(p) for p in outputs}}
    if extra:
        doc.update(extra)
    path = out / f"{command}.manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")
    return path


def _check_k(k, n, what="graph.k"):
    if not 1 <= k <= n - 1:
        raise UsageError(f"{what}={k} must lie in [1, {n - 1}] for {n} descriptors")


# --- commands --------------------------------------------------------------------


def cmd_build_graph(cfg):
    t0 = time.perf_counter()
    X = _descriptors(cfg)
    k = cfg["graph"]["k"]
    _check_k(k, X.n)
    A = reciprocity_affinity(build_knn(X, k, cfg["graph"]["gamma"]))
    path = _out(cfg) / "affinity.gra"
    write_affinity(path, A)
    _manifest(cfg, "build-graph", [path])
    print(f"N={X.n} nnz={A.nnz} elapsed={time.perf_counter() - t0:.2f}s -> {path}")


def cmd_denoise(cfg):
    t0 = time.perf_counter()
    X = _descriptors(cfg)
    params = ccrf_params(cfg)
    L = cfg["ccrf"]["L"]
    k_out = cfg["ccrf"]["k_out"] or cfg["graph"]["k"]
    _check_k(L, X.n, "ccrf.L")
    if not 1 <= k_out <= L:
        raise UsageError(f"ccrf.k_out={k_out} must lie in [1, {L}]")
    knn = build_knn(X, L, params.gamma)
    A = denoise_database(X, L, params, k_out, knn, workers=cfg["run"]["workers"])
    path = _out(cfg) / "denoised.gra"
    write_affinity(path, A)
    extra = {"n": X.n, "nnz": A.nnz}
    if cfg["paths"]["labels"]:
        labels = np.loadtxt(cfg["paths"]["labels"], dtype=np.int64, ndmin=1)
        raw = denoise_database(X, L, replace(params, beta=0.0), k_out, knn)
        n_raw, w_raw = cross_label_edges(raw, labels)
        n_den, w_den = cross_label_edges(A, labels)
        extra["cross_label"] = {"raw_edges": n_raw, "raw_weight": w_raw,
                                "denoised_edges": n_den, "denoised_weight": w_den}
    _manifest(cfg, "denoise", [path], extra)
    print(f"N={X.n} nnz={A.nnz} elapsed={time.perf_counter() - t0:.2f}s -> {path}")


def cmd_rerank(cfg):
    X = _descriptors(cfg)
    Q = _queries(cfg)
    A = read_affinity(_need(cfg, "affinity"))
    if A.n != X.n:
        raise UsageError(f"affinity has {A.n} items, descriptors have {X.n}")
    k = cfg["diffusion"]["query_k"] or cfg["graph"]["k"]
    reranker = Reranker(X, A, diffusion_params(cfg), k, cfg["graph"]["gamma"])
    rankings = {qid: reranker.rank(Q.vectors[i]) for i, qid in enumerate(Q.ids)}
    path = _out(cfg) / "rankings.txt"
    write_rankings(path, rankings, X.ids)
    _manifest(cfg, "rerank", [path])
    print(f"{len(rankings)} queries ranked -> {path}")


def cmd_eval(cfg):
    ids = read_fvecs(cfg["paths"]["descriptors"], cfg["paths"]["ids"]).ids \
        if cfg["paths"]["descriptors"] else None
    rankings = read_rankings(_need(cfg, "rankings"), ids)
    protocol = Protocol.load(_need(cfg, "protocol"))
    lines = []
    for mode in MODES:
        try:
            lines.append(f"{mode} {mean_ap(rankings, protocol, mode):.2f}\n")
        except ValueError as exc:
            lines.append(f"{mode} nan  # {exc}\n")
    path = _out(cfg) / "eval.txt"
    path.write_text("".join(lines))
    _manifest(cfg, "eval", [path])
    sys.stdout.write("".join(lines))


def _benchmark_inputs(cfg):
    X = _descriptors(cfg)
    Q = _queries(cfg)
    protocol = Protocol.load(_need(cfg, "protocol"), Q.vectors)
    protocol.mode = cfg["eval"]["protocol_mode"]
    return X, protocol


def cmd_sweep(cfg):
    X, protocol = _benchmark_inputs(cfg)
    axis = cfg["eval"]["sweep_axis"]
    values = cfg["eval"]["sweep_values"]
    out = _out(cfg)
    outputs = []
    runs = [("denoised", True)] + ([("reciprocity", False)] if axis == "k" else [])
    for name, denoise in runs:
        if denoise and ccrf_params(cfg) is None:
            raise ConfigError("sweep needs ccrf.sigma_d and ccrf.sigma_r")
        result = sweep(axis, values, pipeline_config(cfg, denoise), X, protocol)
        path = out / f"sweep_{axis}_{name}.txt"
        result.write(path)
        outputs.append(path)
        for v, m in result.points:
            print(f"{name} {axis}={v} mAP={m:.2f}")
        for v, msg in result.errors.items():
            print(f"{name} {axis}={v} error: {msg}", file=sys.stderr)
    _manifest(cfg, "sweep", outputs)


def cmd_ablation(cfg):
    X, protocol = _benchmark_inputs(cfg)
    if ccrf_params(cfg) is None:
        raise ConfigError("ablation needs ccrf.sigma_d and ccrf.sigma_r")
    table = format_table(ablation(X, protocol, pipeline_config(cfg)))
    path = _out(cfg) / "ablation.txt"
    path.write_text(table + "\n")
    _manifest(cfg, "ablation", [path])
    print(table)


def cmd_gen_synth(cfg):
    s = cfg["synth"]
    X, labels, protocol = synth_benchmark(s["n_per_manifold"], s["noise_sigma"], s["shape"],
                                          cfg["run"]["seed"], s["n_queries"], s["height"],
                                          cfg["eval"]["protocol_mode"])
    out = _out(cfg)
    paths = {"descriptors": out / "descriptors.fvecs", "queries": out / "queries.fvecs",
             "query_ids": out / "queries.ids", "protocol": out / "protocol.json",
             "labels": out / "labels.txt"}
    write_fvecs(paths["descriptors"], X)
    write_fvecs(paths["queries"], DescriptorSet(protocol.query_vectors, protocol.ids),
                paths["query_ids"])
    protocol.save(paths["protocol"])
    paths["labels"].write_text("".join(f"{v}\n" for v in labels))
    _manifest(cfg, "gen-synth", list(paths.values()))
    print(f"N={X.n} queries={len(protocol.queries)} -> {out}")


COMMANDS = {
    "build-graph": (cmd_build_graph, ()),
    "denoise": (cmd_denoise, ("ccrf",)),
    "rerank": (cmd_rerank, ()),
    "eval": (cmd_eval, ()),
    "sweep": (cmd_sweep, ()),
    "ablation": (cmd_ablation, ()),
    "gen-synth": (cmd_gen_synth, ()),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ccrf-rerank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config value")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func, require = COMMANDS[args.command]
    stage = "config"
    try:
        cfg = resolve(load_config(args.config, args.overrides), require)
        stage = args.command
        func(cfg)
    except (ConfigError, UsageError) as exc:
        print(f"ccrf-rerank {args.command}: {stage} error: {exc}", file=sys.stderr)
        return 2
    except PivotError as exc:
        print(f"ccrf-rerank {args.command}: denoise failed at {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"ccrf-rerank {args.command}: {stage} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
