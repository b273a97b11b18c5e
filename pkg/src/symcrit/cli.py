"""Command-line pipeline from config files to machine-readable artifacts.

Exit codes: 0 converged and verified, 1 configuration or module error
(with a single-line JSON diagnostic on stderr), 2 non-converged solve,
3 criticality check failed.  Every output file embeds the content hash
of the effective config; wall-clock data is quarantined to the manifest
so payload files are byte-identical across reruns.
"""

import os

# honor the thread cap before numpy picks its pool size; results are
# thread-count independent either way, this only pins CPU usage
_THREADS = os.environ.get("SYMCRIT_THREADS")
if _THREADS and _THREADS.isdigit():
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse
import dataclasses
import datetime
import hashlib
import json
import math
import sys
import time

from . import config as config_mod
from . import functional
from . import grid
from . import group as group_mod
from . import integrand as integrand_mod
from . import solver
from . import symmetrize
from . import verify
from .errors import ConfigurationError, HypothesisViolationError, SymcritError

ARTIFACT_VERSION = "0.1.0"

_DOMAIN_KEYS = {
    "kind": "str",
    "resolution": "int",
    "dimension": "int",
    "side": "float",
    "radius": "float",
    "inner_radius": "float",
    "outer_radius": "float",
    "angular_resolution": "int",
    "max_rotation_order": "int",
}

_KNOWN_KEYS = (
    {f"domain.{k}" for k in _DOMAIN_KEYS}
    | {"group.label", "model.q", "model.positivity",
       "solver.mode", "solver.path_points", "solver.max_iterations",
       "solver.grad_tol", "solver.step_init", "solver.step_shrink",
       "solver.armijo", "solver.log_iterations",
       "verify.tau_tan", "verify.tau_trans", "verify.j_max",
       "verify.level_tolerance",
       "run.seed", "output.dir"}
)


# ---------------------------------------------------------------------------
# deterministic 17-digit JSON


def _json_scalar(value):
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return "null"
        return f"{value:.17g}"
    return json.dumps(value, ensure_ascii=False)


def dump_json(obj, indent=0) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        rows = [f'{inner}{json.dumps(str(k))}: {dump_json(v, indent + 1)}'
                for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(rows) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        rows = [f"{inner}{dump_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(rows) + f"\n{pad}]"
    return _json_scalar(obj)


def _write_json(payload: dict, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_json(payload) + "\n")


# ---------------------------------------------------------------------------
# config to objects


def _reject_unknown_keys(cfg: dict):
    for key in cfg:
        if key in _KNOWN_KEYS or key.startswith("integrand."):
            continue
        raise ConfigurationError(f"unknown config key {key!r}")


def build_domain(cfg: dict):
    kind = config_mod.take(cfg, "domain.kind", "str")
    kwargs = {}
    for name, kind_tag in _DOMAIN_KEYS.items():
        if name == "kind":
            continue
        val = config_mod.take(cfg, f"domain.{name}", kind_tag, default=None)
        if val is not None:
            kwargs[name] = val
    return grid.build_domain(kind, **kwargs)


def build_integrand(cfg: dict):
    name = config_mod.take(cfg, "integrand.name", "str")
    p = config_mod.take(cfg, "integrand.p", "float")
    params = {key.split(".", 1)[1]: cfg[key] for key in cfg
              if key.startswith("integrand.")
              and key not in ("integrand.name", "integrand.p")}
    return integrand_mod.builtin(name, p=p, **params)


def build_model(cfg: dict):
    dom = build_domain(cfg)
    J = build_integrand(cfg)
    return functional.EnergyModel(
        domain=dom,
        integrand=J,
        q=config_mod.take(cfg, "model.q", "float"),
        positivity=config_mod.take(cfg, "model.positivity", "bool",
                                   default=False))


def build_solve_config(cfg: dict, seed: int):
    return solver.SolveConfig(
        mode=config_mod.take(cfg, "solver.mode", "str",
                             default="restricted"),
        path_points=config_mod.take(cfg, "solver.path_points", "int",
                                    default=12),
        max_iterations=config_mod.take(cfg, "solver.max_iterations", "int",
                                       default=5000),
        grad_tol=config_mod.take(cfg, "solver.grad_tol", "float",
                                 default=1e-8),
        step_init=config_mod.take(cfg, "solver.step_init", "float",
                                  default=1.0),
        step_shrink=config_mod.take(cfg, "solver.step_shrink", "float",
                                    default=0.5),
        armijo=config_mod.take(cfg, "solver.armijo", "float", default=1e-4),
        seed=seed,
        log_iterations=config_mod.take(cfg, "solver.log_iterations", "bool",
                                       default=True))


def _effective_config(args) -> dict:
    cfg = config_mod.read_config(args.config)
    _reject_unknown_keys(cfg)
    if args.seed is not None:
        cfg["run.seed"] = args.seed
    if args.out is not None:
        cfg["output.dir"] = args.out
    return cfg


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _say(args, text):
    if not args.quiet:
        print(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args) -> int:
    cfg = _effective_config(args)
    stamp = config_mod.config_hash(cfg)
    seed = config_mod.take(cfg, "run.seed", "int", default=0)
    outdir = config_mod.take(cfg, "output.dir", "str", default="runs")
    tau_tan = config_mod.take(cfg, "verify.tau_tan", "float", default=1e-8)
    tau_trans = config_mod.take(cfg, "verify.tau_trans", "float",
                                default=None)
    j_max = config_mod.take(cfg, "verify.j_max", "int", default=None)

    model = build_model(cfg)
    sym = group_mod.build_group(model.domain,
                                config_mod.take(cfg, "group.label", "str"))
    scfg = build_solve_config(cfg, seed)

    started = datetime.datetime.now(datetime.timezone.utc)
    t0 = time.perf_counter()
    stages = {}
    rep = solver.run(model, sym, scfg)
    stages["solve"] = "converged" if rep.converged else "not-converged"
    if rep.downgrade_reason:
        stages["solve"] += " (downgraded to plain)"

    os.makedirs(outdir, exist_ok=True)
    note = f"config_hash {stamp}"
    grid.write_gridfunction(rep.u, os.path.join(outdir, "u_final.csv"),
                            extra_comments=(note,))
    rep.record.write_csv(os.path.join(outdir, "record.csv"),
                         extra_comments=(note,))

    crit_path = os.path.join(outdir, "criticality.json")
    principle_holds = False
    try:
        crit = verify.palais_check(model, sym, rep.u, tau_tan=tau_tan,
                                   tau_trans=tau_trans, j_max=j_max)
        principle_holds = crit.principle_holds
        stages["verify"] = "holds" if principle_holds else "violated"
        _write_json({"config_hash": stamp, **crit.to_dict()}, crit_path)
        verify.write_sweep_csv(crit.sweep, os.path.join(outdir, "sweep.csv"),
                               extra_comments=(note,))
    except HypothesisViolationError as exc:
        stages["verify"] = "hypothesis-violated"
        _write_json({"config_hash": stamp, "error": str(exc)}, crit_path)

    if len(rep.record) >= 2:
        diag = solver.ps_diagnostics(rep.record, model,
                                     direct_mode=(rep.mode == "direct"),
                                     sweep_start=rep.sweep_start)
        stages["diagnostics"] = ("passed" if diag.passed else
                                 f"{len(diag.violations)} violations")
        _write_json({"config_hash": stamp, **diag.to_dict()},
                    os.path.join(outdir, "diagnostics.json"))
    else:
        stages["diagnostics"] = "skipped (record too short)"

    _write_json({
        "config": cfg,
        "config_hash": stamp,
        "mode": rep.mode,
        "requested_mode": rep.requested_mode,
        "downgrade_reason": rep.downgrade_reason,
        "converged": rep.converged,
        "level": rep.level,
        "iterations": rep.iterations,
        "sweep_start": rep.sweep_start,
        "record_length": len(rep.record),
        "solver_config_hash": rep.config_hash,
        "endpoints": rep.endpoints.to_dict(),
    }, os.path.join(outdir, "solve_report.json"))

    payload_names = sorted(
        name for name in os.listdir(outdir)
        if name != "manifest.json" and not name.endswith(".tmp"))
    finished = datetime.datetime.now(datetime.timezone.utc)
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "config_hash": stamp,
        "threads": os.environ.get("SYMCRIT_THREADS"),
        "timestamps": {
            "started": started.isoformat(),
            "finished": finished.isoformat(),
            "wall_seconds": time.perf_counter() - t0,
        },
        "stages": stages,
        "files": {
            name: {
                "bytes": os.path.getsize(os.path.join(outdir, name)),
                "sha256": _sha256_file(os.path.join(outdir, name)),
            } for name in payload_names
        },
    }
    manifest_path = os.path.join(outdir, "manifest.json")
    _write_json(manifest, manifest_path + ".tmp")
    os.replace(manifest_path + ".tmp", manifest_path)

    if not rep.converged:
        code = 2
    elif not principle_holds:
        code = 3
    else:
        code = 0
    _say(args, f"solve: {stages['solve']}, verify: {stages['verify']}, "
               f"level {rep.level:.9f}, outputs in {outdir} (exit {code})")
    return code


def _report_out(args, payload: dict, filename: str):
    text = dump_json(payload)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, filename)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
        _say(args, f"report written to {path}")
    else:
        print(text)


def cmd_check_integrand(args) -> int:
    cfg = _effective_config(args)
    stamp = config_mod.config_hash(cfg)
    J = build_integrand(cfg)
    q = config_mod.take(cfg, "model.q", "float")
    report = integrand_mod.check_conditions(J, q)
    _report_out(args, {"config_hash": stamp, **report.to_dict()},
                "check_integrand.json")
    return 0 if report.all_passed else 1


def cmd_check_axioms(args) -> int:
    cfg = _effective_config(args)
    stamp = config_mod.config_hash(cfg)
    dom = build_domain(cfg)
    seed = config_mod.take(cfg, "run.seed", "int", default=0)
    report = symmetrize.check_axioms(dom, seed=seed)
    payload = {"config_hash": stamp, "all_passed": report.all_passed,
               **dataclasses.asdict(report)}
    _report_out(args, payload, "check_axioms.json")
    return 0 if report.all_passed else 1


def cmd_compare_levels(args) -> int:
    cfg = _effective_config(args)
    stamp = config_mod.config_hash(cfg)
    seed = config_mod.take(cfg, "run.seed", "int", default=0)
    tol = config_mod.take(cfg, "verify.level_tolerance", "float",
                          default=1e-4)
    model = build_model(cfg)
    sym = group_mod.build_group(model.domain,
                                config_mod.take(cfg, "group.label", "str"))
    scfg = build_solve_config(cfg, seed)
    cmp_ = solver.compare_levels(model, sym, scfg, level_tolerance=tol)
    _report_out(args, {"config_hash": stamp, **cmp_.to_dict()},
                "compare_levels.json")
    if cmp_.declined:
        return 2
    return 0 if cmp_.ordered else 3


def cmd_verify_point(args) -> int:
    cfg = _effective_config(args)
    stamp = config_mod.config_hash(cfg)
    tau_tan = config_mod.take(cfg, "verify.tau_tan", "float", default=1e-8)
    tau_trans = config_mod.take(cfg, "verify.tau_trans", "float",
                                default=None)
    j_max = config_mod.take(cfg, "verify.j_max", "int", default=None)
    model = build_model(cfg)
    sym = group_mod.build_group(model.domain,
                                config_mod.take(cfg, "group.label", "str"))
    u = grid.read_gridfunction(model.domain, args.ufile)
    crit = verify.palais_check(model, sym, u, tau_tan=tau_tan,
                               tau_trans=tau_trans, j_max=j_max)
    _report_out(args, {"config_hash": stamp, **crit.to_dict()},
                "criticality.json")
    return 0 if crit.principle_holds else 3


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="path to a section.key = value config file")
    common.add_argument("--out", default=None,
                        help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, default=None,
                        help="seed override (overrides run.seed)")
    common.add_argument("--quiet", action="store_true",
                        help="suppress progress chatter")

    parser = argparse.ArgumentParser(
        prog="symcrit",
        description="mountain-pass solves with symmetric-criticality "
                    "verification")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common],
                   help="run the full solve/verify/diagnose pipeline") \
       .set_defaults(func=cmd_solve)
    sub.add_parser("check-integrand", parents=[common],
                   help="sample the structural conditions of the density") \
       .set_defaults(func=cmd_check_integrand)
    sub.add_parser("check-axioms", parents=[common],
                   help="sample the rearrangement axioms on the domain") \
       .set_defaults(func=cmd_check_axioms)
    sub.add_parser("compare-levels", parents=[common],
                   help="compare plain and restricted minimax levels") \
       .set_defaults(func=cmd_compare_levels)
    vp = sub.add_parser("verify-point", parents=[common],
                        help="run the criticality check on a stored point")
    vp.add_argument("ufile", help="grid-function CSV with the point")
    vp.set_defaults(func=cmd_verify_point)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SymcritError as exc:
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
