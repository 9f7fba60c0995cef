"""Command-line front end: match, oracle, features, reconstruct, eval, sweep.

Configuration comes from a JSON file (--config) overridden by flags; the
resolved configuration is echoed into the output directory next to the
results, and every output embeds content hashes of its inputs. Verbosity is
controlled by the SIGMA_LOG environment variable (DEBUG/INFO/WARNING/ERROR).

Exit codes: 0 success (match/oracle: status Optimal), 2 time budget
exceeded, 3 infeasible, 1 any error.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import evaluation, spectral
from .errors import SigmaError, ValidationError
from .evaluation import (DEFAULT_FACTORS, evaluate_solution, input_hashes,
                         keypoint_errors, pck_curve, reconstruction_study,
                         scale_sweep, write_pck_csv, write_sweep_csv)
from .meshes import load_shape, write_off, write_xyz
from .model import (UNMATCHED, Assignment, Weights, assemble_problem,
                    save_problem)
from .solver import (STATUS_INFEASIBLE, STATUS_OPTIMAL, STATUS_TIME,
                     SolverConfig, exhaustive_oracle, solve)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_TIME = 2
EXIT_INFEASIBLE = 3

_STATUS_EXIT = {STATUS_OPTIMAL: EXIT_OK, STATUS_TIME: EXIT_TIME,
                STATUS_INFEASIBLE: EXIT_INFEASIBLE}


@dataclass
class RunConfig:
    """Resolved run settings; defaults follow the reference setting."""

    lambda_def: float = 5.0
    lambda_ori: float = 0.025
    k: int = 11
    partial: bool = False
    rho: float = 0.05
    time_budget_secs: float = 3600.0
    gap_threshold: float = 1e-2
    eps_continuous: float = 1e-6
    workers: int = 1
    seed: int = 0
    enumerate_limit: int = 256
    root_iterations: int = 3000
    node_iterations: int = 0
    wks_energies: int = 100
    wks_variance_scale: float = 7.0
    knn: int = 8
    merge_duplicates: bool = False
    check_orientation: bool = False

    def weights(self):
        return Weights(lambda_def=self.lambda_def, lambda_ori=self.lambda_ori)

    def solver_config(self, checkpoint_path=None):
        return SolverConfig(
            time_budget_secs=self.time_budget_secs,
            gap_threshold=self.gap_threshold,
            eps_continuous=self.eps_continuous,
            workers=self.workers,
            seed=self.seed,
            enumerate_limit=self.enumerate_limit,
            root_iterations=self.root_iterations,
            node_iterations=self.node_iterations,
            checkpoint_path=str(checkpoint_path) if checkpoint_path else None,
        )


def resolve_config(config_path, overrides):
    """RunConfig from defaults, then the config file, then explicit flags."""
    values = {}
    if config_path:
        with open(config_path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{config_path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{config_path}: config must be a JSON object")
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(
                f"{config_path}: unknown config keys {', '.join(unknown)}"
            )
        values.update(data)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def _setup_logging():
    level = os.environ.get("SIGMA_LOG", "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        level = "WARNING"
    logging.basicConfig(level=getattr(logging, level),
                        format="%(levelname)s %(name)s: %(message)s")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _finite(x):
    return float(x) if np.isfinite(x) else None


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _load_pair(args, cfg):
    shape_x = load_shape(args.shape_x, args.keypoints_x, knn=cfg.knn,
                         merge_duplicates=cfg.merge_duplicates,
                         check_orientation=cfg.check_orientation)
    shape_y = load_shape(args.shape_y, args.keypoints_y, knn=cfg.knn,
                         merge_duplicates=cfg.merge_duplicates,
                         check_orientation=cfg.check_orientation)
    return shape_x, shape_y


def load_assignment(path):
    """Ground-truth/prediction assignment file: one target index per source
    line (-1 unmatched), or JSON (a list, or an object with "assignment")."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{") or stripped.startswith("["):
        data = json.loads(text)
        if isinstance(data, dict):
            data = data.get("assignment")
        if not isinstance(data, list):
            raise ValidationError(f"{path}: no assignment list found")
        return Assignment(np.asarray(data, dtype=np.int64))
    rows = [int(tok) for line in text.splitlines()
            for tok in [line.split("#")[0].strip()] if tok]
    return Assignment(np.asarray(rows, dtype=np.int64))


def _write_reconstruction(out_dir, name, shape, vertices):
    if vertices is None:
        return None
    if shape.is_mesh:
        path = out_dir / f"{name}.off"
        write_off(path, vertices, shape.geometry.faces)
    else:
        path = out_dir / f"{name}.xyz"
        write_xyz(path, vertices)
    return str(path)


def _solution_payload(solution, hashes, extra=None):
    payload = {
        "assignment": solution.assignment.target_of_source.tolist()
        if solution.assignment is not None else None,
        "objective": _finite(solution.objective),
        "lower_bound": _finite(solution.lower_bound),
        "rel_gap": _finite(solution.rel_gap),
        "status": solution.status,
        "stats": solution.stats,
        "input_hashes": hashes,
    }
    payload.update(extra or {})
    return payload


def _echo_config(out_dir, cfg):
    _write_json(out_dir / "config.json", asdict(cfg))


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_match(args, cfg):
    shape_x, shape_y = _load_pair(args, cfg)
    problem = assemble_problem(
        shape_x, shape_y, weights=cfg.weights(), k=cfg.k, partial=cfg.partial,
        rho=cfg.rho, wks_energies=cfg.wks_energies,
        wks_variance_scale=cfg.wks_variance_scale)
    out = _out_dir(args)
    _echo_config(out, cfg)
    save_problem(problem, out / "problem.json")
    solution = solve(problem, cfg.solver_config(out / "checkpoints.ndjson"))
    hashes = input_hashes(shape_x=shape_x, shape_y=shape_y)
    recon = solution.reconstruction
    x_path = _write_reconstruction(out, "x_hat", shape_x,
                                   recon.x_hat if recon else None)
    y_path = _write_reconstruction(out, "y_hat", shape_y,
                                   recon.y_hat if recon else None)
    _write_json(out / "solution.json", _solution_payload(
        solution, hashes, {"x_hat_path": x_path, "y_hat_path": y_path}))
    return _STATUS_EXIT[solution.status]


def cmd_oracle(args, cfg):
    shape_x, shape_y = _load_pair(args, cfg)
    problem = assemble_problem(
        shape_x, shape_y, weights=cfg.weights(), k=cfg.k, partial=cfg.partial,
        rho=cfg.rho, wks_energies=cfg.wks_energies,
        wks_variance_scale=cfg.wks_variance_scale)
    out = _out_dir(args)
    _echo_config(out, cfg)
    solution = exhaustive_oracle(problem, limit=args.limit)
    hashes = input_hashes(shape_x=shape_x, shape_y=shape_y)
    recon = solution.reconstruction
    x_path = _write_reconstruction(out, "x_hat", shape_x,
                                   recon.x_hat if recon else None)
    y_path = _write_reconstruction(out, "y_hat", shape_y,
                                   recon.y_hat if recon else None)
    _write_json(out / "solution.json", _solution_payload(
        solution, hashes, {"x_hat_path": x_path, "y_hat_path": y_path}))
    return _STATUS_EXIT[solution.status]


def cmd_features(args, cfg):
    out = _out_dir(args)
    _echo_config(out, cfg)
    wrote = []
    for name, path, kp in [("x", args.shape_x, args.keypoints_x),
                           ("y", args.shape_y, args.keypoints_y)]:
        if path is None:
            continue
        shape = load_shape(path, kp, knn=cfg.knn,
                           merge_duplicates=cfg.merge_duplicates)
        basis = spectral.eigenpairs(
            shape, spectral.default_eigencount(shape.geometry.n_vertices))
        desc = spectral.wks(basis, num_energies=cfg.wks_energies,
                            variance_scale=cfg.wks_variance_scale)
        h = None
        if shape.is_mesh:
            h = spectral.orientation_field(
                shape, num_energies=cfg.wks_energies,
                variance_scale=cfg.wks_variance_scale).h
        csv_path = out / f"features_{name}.csv"
        _write_features_csv(csv_path, shape, desc, h)
        wrote.append(str(csv_path))
    if not wrote:
        raise ValidationError("features needs --shape-x and/or --shape-y")
    return EXIT_OK


def _write_features_csv(path, shape, desc, h):
    hashes = input_hashes(shape=shape)
    with open(path, "w", newline="") as fh:
        fh.write(f"# input_hashes: shape={hashes['shape']}\n")
        writer = csv.writer(fh)
        cols = ["vertex"] + (["h"] if h is not None else [])
        cols += [f"wks_{i:03d}" for i in range(desc.values.shape[1])]
        writer.writerow(cols)
        for v in range(desc.values.shape[0]):
            row = [v] + ([repr(float(h[v]))] if h is not None else [])
            row += [repr(float(x)) for x in desc.values[v]]
            writer.writerow(row)


def cmd_reconstruct(args, cfg):
    shape_x, shape_y = _load_pair(args, cfg)
    if args.ground_truth:
        gt = load_assignment(args.ground_truth)
    elif shape_x.n_keypoints == shape_y.n_keypoints:
        gt = Assignment.identity(shape_x.n_keypoints)
    else:
        raise ValidationError(
            "keypoint counts differ; pass the correspondence with --ground-truth"
        )
    out = _out_dir(args)
    _echo_config(out, cfg)
    priors = ["plbo", "lbo"] if args.prior == "both" else [args.prior]
    hashes = input_hashes(shape_x=shape_x, shape_y=shape_y)
    report = {"input_hashes": hashes, "priors": {}}
    for prior in priors:
        study = reconstruction_study(shape_x, shape_y, gt, prior=prior,
                                     weights=cfg.weights())
        path = _write_reconstruction(out, f"x_hat_{prior}", shape_x, study.x_hat)
        report["priors"][prior] = {
            "rms": study.rms,
            "rms_normalized": study.rms_normalized,
            "x_hat_path": path,
        }
    _write_json(out / "study.json", report)
    return EXIT_OK


def cmd_eval(args, cfg):
    shape_y = load_shape(args.shape_y, args.keypoints_y, knn=cfg.knn,
                         merge_duplicates=cfg.merge_duplicates)
    gt = load_assignment(args.ground_truth)
    with open(args.solution) as fh:
        payload = json.load(fh)
    arr = payload.get("assignment") if isinstance(payload, dict) else payload
    if arr is None:
        raise ValidationError(f"{args.solution}: no assignment to evaluate")
    prediction = Assignment(np.asarray(arr, dtype=np.int64))
    errors = keypoint_errors(prediction, gt, shape_y)
    curve = pck_curve(errors)
    out = _out_dir(args)
    _echo_config(out, cfg)
    hashes = input_hashes(shape_y=shape_y)
    scored = errors[~np.isnan(errors)]
    _write_json(out / "report.json", {
        "mean_error": _finite(scored.mean()) if scored.size else None,
        "auc": curve.auc,
        "errors": [None if np.isnan(e) else float(e) for e in errors],
        "input_hashes": hashes,
    })
    write_pck_csv(out / "pck.csv", curve, hashes)
    return EXIT_OK


def cmd_sweep(args, cfg):
    shape_x, shape_y = _load_pair(args, cfg)
    factors = tuple(float(tok) for tok in args.factors.split(","))
    gt = load_assignment(args.ground_truth) if args.ground_truth else None
    rows = scale_sweep(shape_x, shape_y, factors, ground_truth=gt,
                       weights=cfg.weights(), k=cfg.k, partial=cfg.partial,
                       rho=cfg.rho,
                       config=cfg.solver_config())
    out = _out_dir(args)
    _echo_config(out, cfg)
    write_sweep_csv(out / "sweep.csv",
                    rows, input_hashes(shape_x=shape_x, shape_y=shape_y))
    return EXIT_OK


def _add_common(sub, *, pair=True):
    if pair:
        sub.add_argument("--shape-x", required=True)
        sub.add_argument("--shape-y", required=True)
    else:
        sub.add_argument("--shape-x")
        sub.add_argument("--shape-y")
    sub.add_argument("--keypoints-x")
    sub.add_argument("--keypoints-y")
    sub.add_argument("--config")
    sub.add_argument("--out", required=True)
    sub.add_argument("--time-budget", type=float, dest="time_budget_secs")
    sub.add_argument("--gap", type=float, dest="gap_threshold")
    sub.add_argument("--eps-continuous", type=float, dest="eps_continuous")
    sub.add_argument("--k", type=int)
    sub.add_argument("--lambda-def", type=float, dest="lambda_def")
    sub.add_argument("--lambda-ori", type=float, dest="lambda_ori")
    sub.add_argument("--partial", action="store_const", const=True, default=None)
    sub.add_argument("--rho", type=float)
    sub.add_argument("--workers", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--enumerate-limit", type=int, dest="enumerate_limit")
    sub.add_argument("--root-iterations", type=int, dest="root_iterations")
    sub.add_argument("--node-iterations", type=int, dest="node_iterations")
    sub.add_argument("--wks-energies", type=int, dest="wks_energies")
    sub.add_argument("--wks-variance-scale", type=float, dest="wks_variance_scale")
    sub.add_argument("--knn", type=int)
    sub.add_argument("--merge-duplicates", action="store_const", const=True,
                     default=None, dest="merge_duplicates")
    sub.add_argument("--check-orientation", action="store_const", const=True,
                     default=None, dest="check_orientation")


_CONFIG_KEYS = [f.name for f in fields(RunConfig)]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sigma",
        description="Sparse non-rigid shape matching with certified bounds")
    subs = parser.add_subparsers(dest="command", required=True)

    match = subs.add_parser("match", help="branch-and-bound matching")
    _add_common(match)
    match.set_defaults(func=cmd_match)

    oracle = subs.add_parser("oracle", help="exhaustive exact matching")
    _add_common(oracle)
    oracle.add_argument("--limit", type=int, default=1_000_000)
    oracle.set_defaults(func=cmd_oracle)

    features = subs.add_parser("features", help="spectral descriptor dump")
    _add_common(features, pair=False)
    features.set_defaults(func=cmd_features)

    recon = subs.add_parser("reconstruct", help="deformation prior study")
    _add_common(recon)
    recon.add_argument("--ground-truth")
    recon.add_argument("--prior", choices=["plbo", "lbo", "both"],
                       default="both")
    recon.set_defaults(func=cmd_reconstruct)

    ev = subs.add_parser("eval", help="geodesic errors and PCK of a solution")
    _add_common(ev, pair=False)
    ev.add_argument("--solution", required=True)
    ev.add_argument("--ground-truth", required=True)
    ev.set_defaults(func=cmd_eval)

    sweep = subs.add_parser("sweep", help="scale-factor sweep")
    _add_common(sweep)
    sweep.add_argument("--factors",
                       default=",".join(str(f) for f in DEFAULT_FACTORS))
    sweep.add_argument("--ground-truth")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and args.shape_y is None:
        parser.error("eval needs --shape-y")
    overrides = {key: getattr(args, key, None) for key in _CONFIG_KEYS}
    try:
        cfg = resolve_config(args.config, overrides)
        return args.func(args, cfg)
    except SigmaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
