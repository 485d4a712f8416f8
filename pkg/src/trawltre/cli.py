"""Command-line entry point: ``trawltre {simulate,train,calibrate,diagnose,infer,gmm}``.

Every run reads one JSON config document, applies flag overrides, writes the
fully resolved config next to its outputs and stamps every output with the
SHA-256 of that resolved config.
"""

import argparse
import copy
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .box import SamplingBox
from .calibration import calibrate_model
from .classifier import RatioModel
from .diagnostics import diagnose
from .exceptions import ChecksumError, DomainError, ParameterError
from .gmm import GMMEstimator
from .posterior import map_estimate, posterior_acf_band, sequential_sample
from .training import TrainConfig, TrawlSimulator, default_box, train

__all__ = ["main", "build_parser", "resolve_config", "read_series_csv", "write_series_csv", "DEFAULTS"]

DEFAULTS = {
    "box": None,
    "simulator": {"kernel_family": "inverse_gaussian", "fixed": {}},
    "simulate": {"theta": None, "k": 200},
    "train": {},
    "calibrate": {"checkpoint": None, "k": 200, "n_pairs": 10000, "method": "beta"},
    "diagnose": {"checkpoint": None, "k": 200, "N": 2000, "M": 1000, "degree": 63, "per_block": True},
    "infer": {"checkpoint": None, "series": None, "M": 1000, "M_init": 1000, "degree": 63, "lags": 40},
    "gmm": {"series": None, "K": 35, "J": 4, "kernel_family": "inverse_gaussian", "kernel_bounds": None},
}


# ---------------------------------------------------------------------------
# config


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _apply_set(cfg, assignment):
    if "=" not in assignment:
        raise ParameterError(f"--set expects key.path=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    node = cfg
    keys = path.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = val


def resolve_config(config_path=None, seed=None, sets=()):
    """Defaults, then the config document, then ``--seed`` and ``--set`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if config_path is not None:
        cfg = _merge(cfg, json.loads(Path(config_path).read_text()))
    for s in sets:
        _apply_set(cfg, s)
    if seed is not None:
        cfg["seed"] = int(seed)
    if cfg.get("seed") is None:
        raise ParameterError("a seed is required (--seed or \"seed\" in the config)")
    if cfg["box"] is None:
        cfg["box"] = default_box().to_dict()
    cfg["train"] = TrainConfig.from_dict(cfg["train"]).to_dict()
    return cfg


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# files


def read_series_csv(path):
    """Values of a one-column CSV with header ``value``; ``#`` lines are skipped."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"series file {path} does not exist")
    rows = [r for r in csv.reader(line for line in p.read_text().splitlines() if not line.startswith("#")) if r]
    if not rows or rows[0] != ["value"]:
        raise ParameterError(f"{path}: expected a header row 'value'")
    return np.array([float(r[0]) for r in rows[1:]])


def write_series_csv(path, values, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("value\n")
        for v in values:
            fh.write(f"{float(v)!r}\n")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _load_checkpoint(path):
    if path is None:
        raise ParameterError("a checkpoint path is required")
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    return RatioModel.load(path)


# ---------------------------------------------------------------------------
# subcommands


def _simulator(cfg, box):
    sim = cfg["simulator"]
    return TrawlSimulator(box.names, sim.get("kernel_family", "inverse_gaussian"), sim.get("fixed"))


def cmd_simulate(cfg, out, rng, stamp):
    box = SamplingBox.from_dict(cfg["box"])
    spec = cfg["simulate"]
    if spec.get("theta") is None:
        raise ParameterError("simulate.theta is required (one value per box coordinate)")
    theta = np.array([float(spec["theta"][n]) for n in box.names])
    if not box.contains(theta, rtol=0.0):
        raise DomainError(f"theta {dict(zip(box.names, theta.tolist()))} lies outside the sampling box")
    k = int(spec["k"])
    if k < 2:
        raise DomainError("k must be >= 2")
    x = _simulator(cfg, box)(theta[None], k, rng)[0]
    write_series_csv(out / "series.csv", x, stamp)
    _write_json(out / "series_meta.json", {
        "theta": dict(zip(box.names, theta.tolist())), "k": k, "kernel_family": cfg["simulator"]["kernel_family"],
        "seed_family": "nig", "seed": cfg["seed"], "config_sha256": stamp[0].split(": ")[1],
    })
    return [out / "series.csv", out / "series_meta.json"]


def cmd_train(cfg, out, rng, stamp):
    box = SamplingBox.from_dict(cfg["box"])
    tc = TrainConfig.from_dict(cfg["train"])
    model, trace = train(box, _simulator(cfg, box), tc, rng)
    model.metadata["config_sha256"] = stamp[0].split(": ")[1]
    model.metadata["model_id"] = stamp[0].split(": ")[1][:16]
    model.save(out / "model.json")
    trace.to_csv(out / "metrics.csv", stamp)
    return [out / "model.json", out / "metrics.csv"]


def cmd_calibrate(cfg, out, rng, stamp):
    spec = cfg["calibrate"]
    model = _load_checkpoint(spec["checkpoint"])
    cal = calibrate_model(model, _simulator(cfg, model.box), int(spec["k"]), rng, int(spec["n_pairs"]),
                          spec["method"])
    cal.metadata["calibration_config_sha256"] = stamp[0].split(": ")[1]
    cal.save(out / "model_calibrated.json")
    return [out / "model_calibrated.json"]


def cmd_diagnose(cfg, out, rng, stamp):
    spec = cfg["diagnose"]
    model = _load_checkpoint(spec["checkpoint"])
    rep = diagnose(model, _simulator(cfg, model.box), int(spec["N"]), int(spec["M"]), rng, int(spec["k"]),
                   degree=int(spec["degree"]), per_block=bool(spec["per_block"]))
    rep.coverage_csv(out / "coverage.csv", stamp)
    rep.summary_csv(out / "diagnostics_summary.csv", stamp)
    return [out / "coverage.csv", out / "diagnostics_summary.csv"]


def cmd_infer(cfg, out, rng, stamp):
    spec = cfg["infer"]
    model = _load_checkpoint(spec["checkpoint"])
    if spec.get("series") is None:
        raise ParameterError("infer.series is required")
    x = read_series_csv(spec["series"])
    prov = [f"calibrated_for_length: {model.calibrated_for_length}",
            f"trained_for_length: {model.metadata.get('trained_for_length')}", f"series_length: {x.size}"]
    hdr = list(stamp) + prov
    draws = sequential_sample(model, x, int(spec["M"]), rng, int(spec["degree"]), seed=cfg["seed"])
    draws.to_csv(out / "draws.csv", hdr)
    mp = map_estimate(model, x, int(spec["M_init"]), rng, int(spec["degree"]))
    with open(out / "map.csv", "w", newline="") as fh:
        for line in hdr:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*model.box.names, "log_posterior", "flat", "projected"])
        w.writerow([*(repr(float(v)) for v in mp.theta), repr(mp.log_posterior), int(mp.flat), int(mp.projected)])
    files = [out / "draws.csv", out / "map.csv"]
    fam = cfg["simulator"].get("kernel_family", "inverse_gaussian")
    needed = ("gamma_acf", "eta_acf") if fam == "inverse_gaussian" else ("lambda_acf",)
    if all(n in model.box.names for n in needed):
        band = posterior_acf_band(draws, np.arange(int(spec["lags"]) + 1), fam)
        band.to_csv(out / "acf_band.csv", hdr)
        files.append(out / "acf_band.csv")
    _write_json(out / "infer_meta.json", {
        "calibrated_for_length": model.calibrated_for_length,
        "trained_for_length": model.metadata.get("trained_for_length"),
        "series_length": int(x.size),
        "provenance": draws.provenance,
        "config_sha256": stamp[0].split(": ")[1],
    })
    return files + [out / "infer_meta.json"]


def cmd_gmm(cfg, out, rng, stamp):
    spec = cfg["gmm"]
    if spec.get("series") is None:
        raise ParameterError("gmm.series is required")
    x = read_series_csv(spec["series"])
    est = GMMEstimator(spec["K"], spec["J"], spec["kernel_family"], spec.get("kernel_bounds")).fit(x)
    with open(out / "gmm_params.csv", "w", newline="") as fh:
        for line in stamp:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(est.names_)
        w.writerow([repr(float(v)) for v in est.params_])
    return [out / "gmm_params.csv"]


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "diagnose": cmd_diagnose,
    "infer": cmd_infer,
    "gmm": cmd_gmm,
}


def build_parser():
    p = argparse.ArgumentParser(prog="trawltre", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config document")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. train.n_iter=100 (value parsed as JSON)")
        if name in ("calibrate", "diagnose", "infer"):
            sp.add_argument("--checkpoint", help=f"overrides {name}.checkpoint")
        if name in ("infer", "gmm"):
            sp.add_argument("--series", help=f"overrides {name}.series")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    sets = list(args.set)
    if getattr(args, "checkpoint", None):
        sets.append(f"{args.command}.checkpoint={json.dumps(args.checkpoint)}")
    if getattr(args, "series", None):
        sets.append(f"{args.command}.series={json.dumps(args.series)}")
    cfg = resolve_config(args.config, args.seed, sets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    stamp = [f"config_sha256: {digest}", f"command: {args.command}"]
    _write_json(out / f"{args.command}_config.json", {"config": cfg, "config_sha256": digest})
    rng = np.random.default_rng(cfg["seed"])
    with threadpool_limits(limits=args.threads):
        return COMMANDS[args.command](cfg, out, rng, stamp)


def main(argv=None):
    try:
        files = run(argv)
    except (ParameterError, DomainError, ChecksumError, FileNotFoundError) as exc:
        print(f"trawltre: error: {exc}", file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
