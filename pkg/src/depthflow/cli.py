"""depthflow command line.

Every command writes its outputs plus ``manifest.json`` into ``--out``. The
manifest snapshots the resolved options and any config file contents, so
``depthflow replay <out>/manifest.json`` re-runs the command from the manifest
alone and checks the output hashes.

Exit codes: 0 ok, 1 replay mismatch, 2 usage, 3 data, 4 numerical.
"""
import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, svg
from ._accel import backend
from .dmd import DEFAULT_RANK, eigenvalue_cloud, fit_trajectory
from .errors import DataError, NumericalError
from .metrics import alignment_r2, dynamics_report, layer_cosine
from .partition import Partition
from .segmentation import baseline_comparison, similarity_matrix
from .surrogate import (TrainConfig, load_checkpoint, rollout_errors, save_checkpoint,
                        sensitivity_profile, train_stage1, train_stage2)
from .synthetic import generate_teacher, spec_from_dict
from .trajectory import ALL_ROLES, Trajectory, parse_roles, read_trajectory, write_trajectory

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


# option name -> default, per command; flags override config-file values
DEFAULTS = {
    "gen": {"n_samples": 16, "seed": None, "dtype": "f64"},
    "simmat": {"role": "all"},
    "segment": {"k": None, "min_len": 1, "baselines": 10, "seed": 0, "role": "all", "score": "mean"},
    "fit": {"partition": None, "seed": None},
    "dynamics": {"model": None, "eps": 1e-3, "seed": 0},
    "dmd": {"model": None, "rank": DEFAULT_RANK, "role": "all", "pooled": False, "clip_rank": False},
    "compare": {"model": None, "student": None},
}
# commands whose --config is a structured document rather than option values
STRUCTURED_CONFIG = {"gen", "fit"}


def _num(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) for v in row])
    return buf.getvalue()


def _json(obj):
    return json.dumps(obj, indent=2) + "\n"


def _sha(data):
    return hashlib.sha256(data).hexdigest()


def _file_sha(path):
    try:
        return _sha(Path(path).read_bytes())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def _roles(opt, traj=None):
    try:
        roles = parse_roles(opt)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if traj is not None:
        roles = frozenset(r for r in roles if traj.has_role(r))
        if not roles:
            raise DataError(f"trajectory has none of the requested roles ({opt})")
    return roles


def _model_trajectory(opts):
    """Teacher trajectory from --in, optionally replaced by a checkpoint rollout from its layer 0."""
    traj = read_trajectory(opts["in"])
    if opts.get("model"):
        model, _ = load_checkpoint(opts["model"])
        if model.depth != traj.depth or model.dim != traj.dim:
            raise DataError(f"checkpoint (depth {model.depth}, dim {model.dim}) does not match "
                            f"trajectory (depth {traj.depth}, dim {traj.dim})")
        traj = Trajectory(model.full_trajectory(traj.data[:, 0]), traj.roles)
        return traj, model
    return traj, None


# ---- commands: each returns {filename: bytes}

def run_gen(opts, config):
    if config is None:
        raise UsageError("gen needs --config pointing at a teacher spec JSON")
    spec_doc = dict(config)
    if opts["seed"] is not None:
        spec_doc["seed"] = opts["seed"]
    try:
        spec = spec_from_dict(spec_doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid teacher spec: {exc}") from exc
    if int(opts["n_samples"]) < 1:
        raise UsageError("--n-samples must be >= 1")
    traj, part = generate_teacher(spec, int(opts["n_samples"]))
    return {
        "trajectory.atrj": _atrj_bytes(traj, opts["dtype"]),
        "partition.json": (part.dumps() + "\n").encode(),
        "teacher.ckpt": _ckpt_bytes(spec.model(), {"noise_sigma": spec.noise_sigma}),
    }


def run_simmat(opts, config):
    traj = read_trajectory(opts["in"])
    s = similarity_matrix(traj, _roles(opts["role"], traj))
    return {"similarity.csv": _matrix_csv(s, range(s.shape[0])).encode(),
            "heatmap.svg": svg.heatmap(s, "layer similarity (layers 0..L)").encode()}


def run_segment(opts, config):
    if opts["k"] is None:
        raise UsageError("segment needs --k")
    k, min_len = int(opts["k"]), int(opts["min_len"])
    if k < 1 or min_len < 1:
        raise UsageError("--k and --min-len must be >= 1")
    if opts["score"] not in ("mean", "offdiag"):
        raise UsageError("--score must be 'mean' or 'offdiag'")
    traj = read_trajectory(opts["in"])
    s = similarity_matrix(traj, _roles(opts["role"], traj))[1:, 1:]
    if k * min_len > s.shape[0]:
        raise DataError(f"cannot split {s.shape[0]} layers into k={k} segments of length >= {min_len}")
    res = baseline_comparison(s, k, min_len, int(opts["baselines"]), int(opts["seed"]), opts["score"])
    best = Partition.from_dict(res["maxcut"])
    labels = [str(i) for i in range(1, s.shape[0] + 1)]
    return {
        "partition.json": (best.dumps() + "\n").encode(),
        "baselines.json": _json(res).encode(),
        "similarity.csv": _matrix_csv(s, range(1, s.shape[0] + 1)).encode(),
        "heatmap.svg": svg.heatmap(s, f"layers 1..L, max-cut k={k}", best.segments, labels=labels).encode(),
    }


def run_fit(opts, config):
    if not opts["partition"]:
        raise UsageError("fit needs --partition")
    traj = read_trajectory(opts["in"])
    part = Partition.from_dict(_load_json(opts["partition"]))
    if part.n != traj.depth:
        raise DataError(f"partition covers {part.n} layers, trajectory depth is {traj.depth}")
    cfgs = _train_configs(config)
    if opts["seed"] is not None:
        cfgs = {k: c.replace(seed=int(opts["seed"])) for k, c in cfgs.items()}
    log = []
    model = None
    if "stage1" in cfgs:
        model = train_stage1(traj, part, cfgs["stage1"], log=log)
    if "stage2" in cfgs:
        if model is None:
            raise UsageError("stage2 alone needs a stage1 section to initialize the blocks")
        model = train_stage2(model, traj, cfgs["stage2"], log=log)
    rel, cos = rollout_errors(model, traj)
    extra = {"configs": {k: c.to_dict() for k, c in cfgs.items()}}
    layer_cols = [f"ar_layer_{i}" for i in range(1, traj.depth + 1)]
    header = ["stage", "block", "step", "lambda", "loss", "tf_loss", "ar_loss", *layer_cols]
    rows = [[r.get(h, "") for h in header] for r in log]
    return {
        "model.ckpt": _ckpt_bytes(model, extra),
        "train_log.csv": _csv(header, rows).encode(),
        "rollout.csv": _csv(["layer", "rel_error", "cosine"],
                            [[i + 1, float(rel[i]), float(cos[i])] for i in range(traj.depth)]).encode(),
    }


def run_dynamics(opts, config):
    traj, model = _model_trajectory(opts)
    report = dynamics_report(traj)
    out = {"dynamics.csv": report.to_csv().encode(),
           "dynamics.json": (report.to_json() + "\n").encode()}
    layers = np.arange(traj.n_layers)
    chart = {f"gamma {role.label}": (layers, cols["gamma"]) for role, cols in report.tables.items()}
    out["gamma.svg"] = svg.line_chart(chart, "directional convergence").encode()
    if model is not None:
        eps = float(opts["eps"])
        prof = sensitivity_profile(model, traj.data[:, 0], eps, int(opts["seed"]), roles=traj.roles)
        keys = ["all"] + [r.label for r in ALL_ROLES if traj.has_role(r)]
        rows = [[layer, key, sens[key]] for layer, sens in prof.items() for key in keys]
        out["perturbation.csv"] = _csv(["layer", "role", "sensitivity"], rows).encode()
    return out


def run_dmd(opts, config):
    traj, _ = _model_trajectory(opts)
    roles = _roles(opts["role"], traj)
    fits = fit_trajectory(traj, roles, int(opts["rank"]), bool(opts["pooled"]), bool(opts["clip_rank"]))
    doc = {role.label: [m.to_dict() for m in models] for role, models in fits.items()}
    rows = []
    for role, models in fits.items():
        for i, m in enumerate(models):
            for j, z in enumerate(m.eigenvalues):
                rows.append([role.label, i, j, float(z.real), float(z.imag), float(abs(z))])
    cloud = {role.label: vals for role, vals in eigenvalue_cloud(fits).items()}
    return {"dmd.json": _json(doc).encode(),
            "eigenvalues.csv": _csv(["role", "fit", "index", "re", "im", "modulus"], rows).encode(),
            "eigencloud.svg": svg.eigen_cloud(cloud, "DMD eigenvalues").encode()}


def run_compare(opts, config):
    teacher = read_trajectory(opts["in"])
    if bool(opts["model"]) == bool(opts["student"]):
        raise UsageError("compare needs exactly one of --model (checkpoint) or --student (ATRJ)")
    if opts["model"]:
        student, _ = _model_trajectory(opts)
    else:
        student = read_trajectory(opts["student"])
        if student.data.shape != teacher.data.shape or student.roles != teacher.roles:
            raise DataError("student and teacher trajectories differ in shape or roles")
    groups = [("all", None)] + [(r.label, [r]) for r in ALL_ROLES if teacher.has_role(r)]
    rows = []
    for layer in range(teacher.n_layers):
        for label, roles in groups:
            rows.append([layer, label, layer_cosine(student, teacher, roles, layer),
                         alignment_r2(student, teacher, roles, layer)])
    return {"compare.csv": _csv(["layer", "role", "cosine", "r2"], rows).encode()}


COMMANDS = {"gen": run_gen, "simmat": run_simmat, "segment": run_segment, "fit": run_fit,
            "dynamics": run_dynamics, "dmd": run_dmd, "compare": run_compare}


def _matrix_csv(s, labels):
    labels = list(labels)
    return _csv(["layer", *labels], [[labels[i], *map(float, s[i])] for i in range(len(labels))])


def _atrj_bytes(traj, dtype):
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.atrj"
        write_trajectory(traj, path, dtype=dtype)
        return path.read_bytes()


def _ckpt_bytes(model, extra):
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "m.ckpt"
        save_checkpoint(model, path, extra)
        return path.read_bytes()


def _train_configs(doc):
    if doc is None:
        return {"stage1": TrainConfig(), "stage2": TrainConfig(stage="stage2")}
    try:
        if "stage1" in doc or "stage2" in doc:
            return {st: TrainConfig.from_dict({**doc[st], "stage": st})
                    for st in ("stage1", "stage2") if doc.get(st) is not None}
        cfg = TrainConfig.from_dict(doc)
        return {cfg.stage: cfg}
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from exc


# ---- plumbing

def build_parser():
    p = argparse.ArgumentParser(prog="depthflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"depthflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(name, help_, needs_in=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--in", dest="in_path", required=needs_in, help="input ATRJ trajectory")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="JSON config file")
        return sp

    sp = common("gen", "generate a synthetic teacher trajectory", needs_in=False)
    sp.add_argument("--n-samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--dtype", choices=("f32", "f64"))

    sp = common("simmat", "layer-layer cosine similarity matrix")
    sp.add_argument("--role")

    sp = common("segment", "max-cut phase segmentation with random baselines")
    sp.add_argument("--k", type=int)
    sp.add_argument("--min-len", type=int)
    sp.add_argument("--baselines", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--role")
    sp.add_argument("--score", choices=("mean", "offdiag"))

    sp = common("fit", "train a weight-tied surrogate (stage1 then stage2)")
    sp.add_argument("--partition", help="partition JSON")
    sp.add_argument("--seed", type=int)

    sp = common("dynamics", "norms, convergence, angular speed, ranks, coherence")
    sp.add_argument("--model", help="checkpoint; analyze its rollout from the input's layer 0")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--seed", type=int)

    sp = common("dmd", "exact DMD per role")
    sp.add_argument("--model")
    sp.add_argument("--rank", type=int)
    sp.add_argument("--role")
    sp.add_argument("--pooled", action="store_true", default=None)
    sp.add_argument("--clip-rank", action="store_true", default=None)

    sp = common("compare", "per-layer cosine and R^2 of a student against the teacher")
    sp.add_argument("--model", help="student checkpoint")
    sp.add_argument("--student", help="student ATRJ trajectory")

    sp = sub.add_parser("replay", help="re-run a command from its manifest and verify outputs")
    sp.add_argument("manifest")
    sp.add_argument("--out", help="write outputs here instead of the recorded directory")
    return p


def resolve_options(command, args):
    """Merge defaults, config-file option values and flags (flags win)."""
    config = None
    opts = dict(DEFAULTS[command])
    if args.config:
        doc = _load_json(args.config)
        if command in STRUCTURED_CONFIG:
            config = doc
        else:
            if not isinstance(doc, dict):
                raise UsageError(f"{args.config}: expected a JSON object of options")
            unknown = set(doc) - set(opts)
            if unknown:
                raise UsageError(f"{args.config}: unknown options {sorted(unknown)}")
            opts.update(doc)
    for key in opts:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    if args.in_path is not None:
        opts["in"] = str(Path(args.in_path).resolve())
    for key in ("partition", "model", "student"):
        if opts.get(key):
            opts[key] = str(Path(opts[key]).resolve())
    return opts, config


def _inputs(opts):
    return {key: {"path": opts[key], "sha256": _file_sha(opts[key])}
            for key in ("in", "partition", "model", "student") if opts.get(key)}


def execute(command, opts, config, out_dir, argv=None):
    """Run ``command`` and write outputs + manifest; returns the manifest dict."""
    start = time.perf_counter()
    inputs = _inputs(opts)
    outputs = COMMANDS[command](opts, config)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, data in outputs.items():
            (out_dir / name).write_bytes(data)
    except OSError as exc:
        raise DataError(f"cannot write outputs to {out_dir}: {exc}") from exc
    seeds = {k: opts[k] for k in ("seed",) if k in opts}
    if command == "gen":
        seeds["spec_seed"] = config.get("seed", 0) if opts["seed"] is None else opts["seed"]
    manifest = {
        "tool": "depthflow",
        "version": __version__,
        "command": command,
        "argv": list(argv) if argv is not None else None,
        "options": opts,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "out_dir": str(out_dir.resolve()),
        "outputs": {name: _sha(data) for name, data in sorted(outputs.items())},
        "kernel_backend": backend(),
        "duration_s": round(time.perf_counter() - start, 6),
    }
    (out_dir / "manifest.json").write_text(_json(manifest), encoding="utf-8")
    return manifest


def replay(path, out=None):
    man = _load_json(path)
    try:
        command, opts, config = man["command"], man["options"], man["config"]
        expected = man["outputs"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a depthflow manifest ({exc})") from exc
    if command not in COMMANDS:
        raise DataError(f"{path}: unknown command {command!r}")
    for key, rec in man.get("inputs", {}).items():
        if _file_sha(rec["path"]) != rec["sha256"]:
            print(f"warning: input {key} ({rec['path']}) changed since the recorded run", file=sys.stderr)
    new = execute(command, opts, config, out or man["out_dir"], ["replay", str(path)])
    bad = [n for n in expected if new["outputs"].get(n) != expected[n]]
    for name in bad:
        print(f"mismatch: {name}", file=sys.stderr)
    return EXIT_MISMATCH if bad else EXIT_OK


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out)
        opts, config = resolve_options(args.command, args)
        execute(args.command, opts, config, args.out, argv)
        return EXIT_OK
    except UsageError as exc:
        print(f"depthflow {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"depthflow {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"depthflow {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
