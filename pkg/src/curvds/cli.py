"""Command line entry point: generate, train, rollout, export-field, evaluate.

Every option can also come from a JSON or TOML config file (``--config``);
keys are the long option names with dashes or underscores. Keys under a
table named after the subcommand override top-level keys. A flag given on
the command line beats the file, which beats the built-in default. The
fully resolved configuration is written next to the outputs.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
configuration error.
"""
import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .arm import ArmModel, generate_arm_dataset
from .data import SampleSet, load_dataset, save_dataset, write_csv
from .dynamics import DissipationExtras, HybridParams, rollout
from .embeddings import BumpConfig, GateParams, RbfDeformation, sigma_from_radius
from .errors import CurvdsError, DatasetParseError, PreconditionError
from .geometry import pullback_metric
from .learning import TrainConfig, train_first, train_second
from .metrics import evaluate
from .model import DSModel

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["main", "build_parser", "resolve_config", "ConfigError"]


class ConfigError(Exception):
    """Invalid or inconsistent configuration (exit code 2)."""


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    try:
        return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    return [int(v) for v in _floats(text)]


# name -> (type, default, help); ``type`` is also used to coerce config-file values
OPTIONS = {
    "seed": (int, 0, "random seed"),
    # generate
    "out": (str, None, "output path (directory for generate/train, file otherwise)"),
    "trajectories": (int, 7, "number of demonstrations"),
    "samples": (int, 1000, "samples per demonstration"),
    "train": (int, 4, "how many demonstrations go to the training split"),
    "gravity": (float, 0.0, "gravitational acceleration of the arm"),
    "radius": (float, 0.7, "distance of the start points from the task target"),
    "target": (_floats, [1.2, 0.6], "task-space target 'x,y'"),
    "sim_dt": (float, 1e-3, "simulator step"),
    # train
    "data": (str, None, "dataset manifest or directory"),
    "lambda_reg": (float, 1e-4, "weight regularization"),
    "lr0": (float, 0.01, "initial learning rate"),
    "max_iters": (int, 2000, "optimizer iterations"),
    "hidden": (_ints, [32, 32], "hidden layer widths, e.g. '32,32'"),
    "init_scale": (float, 0.3, "initial weights are uniform in [-s, s]"),
    "learn_k": (bool, True, "optimize the stiffness matrix"),
    "learn_d": (bool, True, "optimize the damping matrix"),
    "stiffness_kind": (str, "spd", "spd | diagonal | spherical"),
    "damping_kind": (str, "spd", "spd | diagonal | spherical"),
    "lr_decay": (float, 0.5, "learning-rate factor on plateau"),
    "patience": (int, 100, "plateau length in iterations"),
    "stride": (int, 1, "use every n-th training sample"),
    "bump_radius": (float, None, "attach a bump of this radius around the training data"),
    "bump_neighbors": (int, 5, "neighbors averaged in the bump distance"),
    # rollout / export-field
    "model": (str, None, "model JSON"),
    "x0": (_floats, None, "initial position"),
    "v0": (_floats, None, "initial velocity (second order)"),
    "dt": (float, 1e-3, "integration step"),
    "steps": (int, 10000, "maximum integration steps"),
    "tol": (float, 1e-3, "convergence radius"),
    "method": (str, "rk4", "rk4 | euler"),
    "obstacle": (_floats, None, "obstacle center 'x,y' (repeatable)"),
    "eta": (_floats, [1.0], "obstacle magnitudes (one or one per center)"),
    "sigma": (float, None, "kernel width"),
    "obstacle_radius": (float, None, "derive the width from this radius"),
    "obstacle_eps": (float, 1e-3, "kernel value at the radius"),
    "obstacle_mode": (str, "static", "static | gated | hybrid"),
    "kernel": (str, "gaussian", "gaussian | barrier"),
    "barrier_a": (float, 1.0, "barrier kernel numerator"),
    "barrier_b": (float, 1.0, "barrier kernel exponent"),
    "gate_tau": (float, 20.0, "velocity-gate steepness"),
    "gate_theta": (float, math.pi / 2, "velocity-gate reference angle"),
    "hybrid_midpoint": (float, None, "switch midpoint (default 0.1 max|eta|)"),
    "hybrid_rate": (float, 50.0, "switch rate"),
    "reference_model": (str, None, "first-order model for directional dissipation"),
    "lambda_dir": (float, 10.0, "directional dissipation gain"),
    "lambda_exp": (float, 0.0, "attractor-localized dissipation gain"),
    "tau_exp": (float, 1.0, "attractor-localized dissipation width"),
    "lo": (_floats, None, "grid lower corner"),
    "hi": (_floats, None, "grid upper corner"),
    "resolution": (int, 50, "grid points per axis"),
    "velocity": (_floats, None, "query velocity for second-order or gated fields"),
    # evaluate
    "mode": (str, None, "first | second (must match the model)"),
    "split": (str, "test", "train | test | all"),
    "config_out": (str, None, "where to write the resolved configuration"),
}

COMMON = ["seed", "config_out"]
OBSTACLE = ["obstacle", "eta", "sigma", "obstacle_radius", "obstacle_eps", "obstacle_mode", "kernel",
            "barrier_a", "barrier_b", "gate_tau", "gate_theta", "hybrid_midpoint", "hybrid_rate"]
COMMANDS = {
    "generate": ["out", "trajectories", "samples", "train", "gravity", "radius", "target", "sim_dt"],
    "train": ["data", "out", "lambda_reg", "lr0", "max_iters", "hidden", "init_scale", "learn_k",
              "learn_d", "stiffness_kind", "damping_kind", "lr_decay", "patience", "stride",
              "bump_radius", "bump_neighbors"],
    "rollout": ["model", "out", "x0", "v0", "dt", "steps", "tol", "method", "reference_model",
                "lambda_dir", "lambda_exp", "tau_exp"] + OBSTACLE,
    "export-field": ["model", "out", "lo", "hi", "resolution", "velocity"] + OBSTACLE,
    "evaluate": ["model", "data", "mode", "split", "method", "out"],
}
REQUIRED = {
    "generate": ["out"],
    "train": ["data", "out"],
    "rollout": ["model", "out", "x0"],
    "export-field": ["model", "out", "lo", "hi"],
    "evaluate": ["model", "data"],
}
CHOICES = {
    "method": ("rk4", "euler"),
    "obstacle_mode": ("static", "gated", "hybrid"),
    "kernel": ("gaussian", "barrier"),
    "stiffness_kind": ("spd", "diagonal", "spherical"),
    "damping_kind": ("spd", "diagonal", "spherical"),
    "mode": ("first", "second"),
    "split": ("train", "test", "all"),
    "train_mode": ("first", "second", "incremental"),
}


def _add(parser, name):
    typ, _, help_ = OPTIONS[name]
    flag = "--" + name.replace("_", "-")
    kw = dict(dest=name, default=argparse.SUPPRESS, help=help_)
    if typ is bool:
        parser.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
    elif name == "obstacle":
        parser.add_argument(flag, type=_floats, action="append", **kw)
    else:
        parser.add_argument(flag, type=typ, choices=CHOICES.get(name), **kw)


def build_parser():
    parser = argparse.ArgumentParser(prog="curvds", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, names in COMMANDS.items():
        p = sub.add_parser(cmd)
        if cmd == "train":
            p.add_argument("train_mode", choices=CHOICES["train_mode"])
        p.add_argument("--config", default=None, help="JSON or TOML configuration file")
        for name in COMMON + names:
            _add(p, name)
    return parser


def _read_config(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        if path.endswith(".toml"):
            return tomllib.loads(raw.decode("utf-8"))
        return json.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None


def _coerce(name, value):
    typ = OPTIONS[name][0]
    if value is None:
        return None
    try:
        if name == "obstacle":
            value = [value] if value and not isinstance(value[0], (list, tuple, str)) else value
            return [_floats(v) for v in value]
        if typ is bool:
            if not isinstance(value, bool):
                raise ValueError(f"expected a boolean, got {value!r}")
            return value
        if typ is _floats and not isinstance(value, (list, tuple, str)):
            return [float(value)]
        return typ(value)
    except (ValueError, TypeError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from None


def resolve_config(command, args, file_cfg=None):
    """Merge defaults, config file and explicit flags (in increasing priority)."""
    names = COMMON + COMMANDS[command]
    cfg = {n: OPTIONS[n][1] for n in names}
    file_cfg = dict(file_cfg or {})
    section = file_cfg.pop(command, None)
    merged = {k.replace("-", "_"): v for k, v in file_cfg.items() if not isinstance(v, dict)}
    if isinstance(section, dict):
        merged.update({k.replace("-", "_"): v for k, v in section.items()})
    for key, value in merged.items():
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r} for {command}")
        cfg[key] = _coerce(key, value)
    for key, value in args.items():
        if key in cfg:
            cfg[key] = value
    for key in REQUIRED[command]:
        if cfg.get(key) is None:
            raise ConfigError(f"{command} requires --{key.replace('_', '-')}")
    for key, allowed in CHOICES.items():
        if key in cfg and cfg[key] is not None and cfg[key] not in allowed:
            raise ConfigError(f"{key} must be one of {', '.join(allowed)}")
    return cfg


def _echo(cfg, default_path):
    path = cfg.get("config_out") or default_path
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(cfg):
    arm = ArmModel(gravity=cfg["gravity"])
    if not 0 <= cfg["train"] <= cfg["trajectories"]:
        raise ConfigError("--train must lie between 0 and --trajectories")
    if cfg["samples"] < 2:
        raise ConfigError("--samples must be at least 2")
    ds = generate_arm_dataset(cfg["trajectories"], cfg["samples"], cfg["train"], cfg["seed"], arm,
                              target=cfg["target"], radius=cfg["radius"], dt=cfg["sim_dt"])
    path = save_dataset(ds, cfg["out"])
    _echo(cfg, os.path.join(cfg["out"], "resolved_config.json"))
    print(f"wrote {len(ds.trajectories)} trajectories to {path}")


def _train_config(cfg):
    try:
        return TrainConfig(hidden=tuple(cfg["hidden"]), lambda_reg=cfg["lambda_reg"], lr0=cfg["lr0"],
                           max_iters=cfg["max_iters"], lr_decay=cfg["lr_decay"],
                           patience=cfg["patience"], learn_K=cfg["learn_k"], learn_D=cfg["learn_d"],
                           stiffness_kind=cfg["stiffness_kind"], damping_kind=cfg["damping_kind"],
                           init_scale=cfg["init_scale"], seed=cfg["seed"])
    except PreconditionError as exc:
        raise ConfigError(str(exc)) from None


def _save_trained(result, ds, cfg, order, stem):
    model = DSModel(result.embedding, ds.attractor, result.K, result.D if order == 2 else None, order,
                    metadata={"initial_loss": result.initial_loss, "final_loss": result.final_loss,
                              "iterations": len(result.history) - 1})
    if cfg["bump_radius"] is not None:
        model = model.with_bump(BumpConfig(cfg["bump_radius"], ds.samples("train").positions,
                                           cfg["bump_neighbors"]))
    model.save(os.path.join(cfg["out"], f"model_{stem}.json"))
    result.write_log(os.path.join(cfg["out"], f"loss_{stem}.csv"))
    print(f"{stem}: loss {result.initial_loss:.10g} -> {result.final_loss:.10g} "
          f"({len(result.history) - 1} iterations)")


def cmd_train(cfg, mode):
    ds = load_dataset(cfg["data"])
    tc = _train_config(cfg)
    if cfg["stride"] < 1:
        raise ConfigError("--stride must be >= 1")
    full = ds.samples("train")
    acc = None if full.accelerations is None else full.accelerations[::cfg["stride"]]
    samples = SampleSet(full.positions[::cfg["stride"]], full.velocities[::cfg["stride"]], acc,
                        full.attractor)
    if mode != "first" and acc is None:
        raise ConfigError("second-order training needs accelerations in the dataset")
    os.makedirs(cfg["out"], exist_ok=True)
    _echo(dict(cfg, train_mode=mode), os.path.join(cfg["out"], "resolved_config.json"))
    warm = None
    if mode in ("first", "incremental"):
        first = train_first(samples, tc)
        _save_trained(first, ds, cfg, 1, "first")
        warm = (first.embedding, first.K)
    if mode in ("second", "incremental"):
        second = train_second(samples, tc, warm_start=warm)
        _save_trained(second, ds, cfg, 2, "second")


def _deformation(cfg, dim):
    if not cfg["obstacle"]:
        return None
    centers = np.array(cfg["obstacle"], dtype=float)
    if centers.ndim != 2 or centers.shape[1] != dim:
        raise ConfigError(f"obstacle centers must have {dim} coordinates")
    eta = np.array(cfg["eta"], dtype=float)
    if eta.size not in (1, centers.shape[0]):
        raise ConfigError("give one eta or one per obstacle center")
    sigma = cfg["sigma"]
    if sigma is None:
        if cfg["obstacle_radius"] is None:
            raise ConfigError("an obstacle needs --sigma or --obstacle-radius")
        try:
            sigma = sigma_from_radius(cfg["obstacle_radius"], cfg["obstacle_eps"])
        except CurvdsError as exc:
            raise ConfigError(str(exc)) from None
    gate = None
    if cfg["obstacle_mode"] in ("gated", "hybrid"):
        gate = GateParams(cfg["gate_tau"], cfg["gate_theta"])
    try:
        return RbfDeformation(centers, eta, sigma, kernel=cfg["kernel"], a=cfg["barrier_a"],
                              b=cfg["barrier_b"], radius=cfg["obstacle_radius"] or 0.0, gate=gate)
    except PreconditionError as exc:
        raise ConfigError(str(exc)) from None


def _load_model(path):
    try:
        return DSModel.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc.strerror}") from None
    except PreconditionError as exc:
        raise ConfigError(str(exc)) from None


def _query_system(model, cfg, extras=None):
    deformation = _deformation(cfg, model.dim)
    if deformation is not None:
        model = model.with_deformation(deformation)
    hybrid = None
    if cfg["obstacle_mode"] == "hybrid" and deformation is not None:
        if model.order != 2:
            raise ConfigError("hybrid obstacles need a second-order model")
        hybrid = HybridParams(cfg["hybrid_midpoint"], cfg["hybrid_rate"])
    if deformation is not None and deformation.gated and model.order == 1:
        raise ConfigError("velocity-gated obstacles need a second-order model")
    return model, model.system(extras=extras, hybrid=hybrid)


def cmd_rollout(cfg):
    model = _load_model(cfg["model"])
    x0 = np.array(cfg["x0"])
    if x0.size != model.dim:
        raise ConfigError(f"--x0 must have {model.dim} components")
    extras = None
    if model.order == 2:
        if cfg["v0"] is None:
            raise ConfigError("a second-order model needs --v0")
        if len(cfg["v0"]) != model.dim:
            raise ConfigError(f"--v0 must have {model.dim} components")
        ref = None
        if cfg["reference_model"]:
            ref = _load_model(cfg["reference_model"]).system(order=1)
        if ref is not None or cfg["lambda_exp"] > 0:
            extras = DissipationExtras(cfg["lambda_dir"], ref, cfg["lambda_exp"], cfg["tau_exp"])
    model, system = _query_system(model, cfg, extras)
    tr = rollout(system, x0, None if model.order == 1 else np.array(cfg["v0"]), dt=cfg["dt"],
                 steps=cfg["steps"], tol=cfg["tol"], method=cfg["method"])
    d = model.dim
    header = (["step", "t"] + [f"x{i+1}" for i in range(d)] + [f"v{i+1}" for i in range(d)]
              + ([f"a{i+1}" for i in range(d)] if tr.a is not None else []) + ["V"])
    cols = [np.arange(tr.t.size)[:, None], tr.t[:, None], tr.x, tr.v]
    if tr.a is not None:
        cols.append(tr.a)
    cols.append(tr.energy[:, None])
    write_csv(cfg["out"], header, np.hstack(cols))
    _echo(cfg, cfg["out"] + ".config.json")
    dist = float(np.linalg.norm(tr.final_x - model.attractor))
    msg = f"{tr.steps} steps, final distance to attractor {dist:.6g}, converged={bool(tr.converged)}"
    if model.deformation is not None:
        gaps = np.linalg.norm(tr.x[:, None, :] - model.deformation.centers[None], axis=-1)
        msg += f", min obstacle distance {gaps.min():.6g}"
    print(msg)


def cmd_export_field(cfg):
    model = _load_model(cfg["model"])
    d = model.dim
    lo, hi = np.array(cfg["lo"]), np.array(cfg["hi"])
    if lo.size != d or hi.size != d or np.any(hi <= lo) or cfg["resolution"] < 1:
        raise ConfigError("grid bounds must have one entry per dimension with lo < hi")
    vel = np.zeros(d) if cfg["velocity"] is None else np.array(cfg["velocity"])
    if vel.size != d:
        raise ConfigError(f"--velocity must have {d} components")
    model, system = _query_system(model, cfg)
    axes = [np.linspace(lo[i], hi[i], cfg["resolution"]) for i in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    V = np.broadcast_to(vel, grid.shape)
    field = system(grid) if model.order == 1 else system(grid, V)
    surface = model.surface()
    gated = getattr(surface, "gated", False)
    psi = surface.derivatives(grid, V if gated else None)[0]
    rows = []
    for p, f, h in zip(grid, field, psi):
        b = pullback_metric(surface, p, v=vel if gated else None)
        rows.append(np.concatenate([p, f, [h, b.det_G], b.eigvals, b.eigvecs.T.ravel()]))
    header = ([f"x{i+1}" for i in range(d)] + [f"f{i+1}" for i in range(d)] + ["psi", "detG"]
              + [f"lambda{i+1}" for i in range(d)]
              + [f"e{k+1}_{i+1}" for k in range(d) for i in range(d)])
    write_csv(cfg["out"], header, rows)
    _echo(cfg, cfg["out"] + ".config.json")
    print(f"wrote {len(rows)} grid points to {cfg['out']}")


def cmd_evaluate(cfg):
    model = _load_model(cfg["model"])
    ds = load_dataset(cfg["data"])
    mode = cfg["mode"] or ("first" if model.order == 1 else "second")
    if (mode == "first") != (model.order == 1):
        raise ConfigError(f"--mode {mode} does not match the order-{model.order} model")
    if ds.dim != model.dim:
        raise ConfigError("model and dataset dimensions differ")
    report = evaluate(model.system(), ds, split=cfg["split"], method=cfg["method"])
    out = cfg["out"] or os.path.splitext(cfg["model"])[0] + "_report.json"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    _echo(cfg, out + ".config.json")
    print(report.table())
    if report.failed:
        print("some rollouts diverged; aggregate DTWD excludes them", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    args = vars(ns)
    command = args.pop("command")
    config_path = args.pop("config", None)
    mode = args.pop("train_mode", None)
    try:
        file_cfg = _read_config(config_path) if config_path else {}
        cfg = resolve_config(command, args, file_cfg)
        if command == "generate":
            return cmd_generate(cfg) or 0
        if command == "train":
            return cmd_train(cfg, mode) or 0
        if command == "rollout":
            return cmd_rollout(cfg) or 0
        if command == "export-field":
            return cmd_export_field(cfg) or 0
        return cmd_evaluate(cfg)
    except (ConfigError, DatasetParseError) as exc:
        print(f"curvds {command}: error: {exc}", file=sys.stderr)
        return 2
    except (CurvdsError, OSError, FloatingPointError) as exc:
        print(f"curvds {command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
