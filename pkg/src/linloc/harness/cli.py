"""Command line entry point.

Exit codes: 0 success, 1 configuration or validation failure, 2 runtime
error. Failures also print ``{"error": ..., "detail": ...}`` on stderr.
"""

import argparse
import itertools
import json
import os
import sys

from .. import mobile
from ..errors import ConfigError, InvalidInput, LocalizationError
from .config import ExperimentConfig, load_config, set_path
from .runner import run_experiment
from .validate import validate_geometry


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("argv", message)


def _fail(code, error, detail):
    print(json.dumps({"error": error, "detail": detail}), file=sys.stderr)
    return code


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_param(spec):
    path, sep, values = spec.partition("=")
    if not sep or not path or not values:
        raise ConfigError("--param", f"expected path=v1,v2,... got {spec!r}")
    return path, [_parse_value(v) for v in values.split(",")]


def _print_aggregates(result):
    agg = result.aggregates()
    for key, st in agg.items():
        print(f"  {key:24s} {st['mean']:.6g} +/- {st['std']:.3g}")


def cmd_run(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.replicates is not None:
        changes["replicates"] = args.replicates
    if changes:
        cfg = cfg.replace(**changes)
    result = run_experiment(cfg, args.out, workers=args.workers)
    print(f"{cfg.name or cfg.algorithm}: {cfg.replicates} replicate(s) x {cfg.steps} steps"
          f" -> {args.out}")
    _print_aggregates(result)
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config)
    axes = [_parse_param(p) for p in args.param]
    rows = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        doc = cfg.to_dict()
        label = []
        for (path, _), value in zip(axes, combo):
            doc = set_path(doc, path, value)
            label.append(f"{path}={json.dumps(value)}")
        variant = ExperimentConfig.from_dict(doc)
        name = ",".join(label)
        out = os.path.join(args.out, name.replace("/", "_").replace('"', ""))
        result = run_experiment(variant, out, workers=args.workers)
        print(name)
        _print_aggregates(result)
        rows.append({"variant": dict(zip((p for p, _ in axes), combo)), "dir": out,
                     "aggregates": result.aggregates()})
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep.json"), "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_validate_geometry(args):
    if args.samples < 1:
        raise ConfigError("--samples", "must be positive")
    report = validate_geometry(args.samples, args.seed)
    for m, e in report["dims"].items():
        print(f"R^{m}: volume {e['volume_pass']}/{args.samples} "
              f"(max rel err {e['volume_max_rel_error']:.2e}); inclusion "
              f"{e['inclusion_pass']}/{e['inclusion_checked']} "
              f"({e['inclusion_skipped_boundary']} near the boundary skipped)")
    print("PASS" if report["ok"] else "FAIL")
    if not report["ok"]:
        return _fail(1, "ValidationFailed", report)
    return 0


def cmd_feasibility(args):
    try:
        verdict = mobile.feasibility_check(
            args.anchors, args.agents, args.agent_motion_dim, args.anchor_motion_dim, args.dim
        )
    except InvalidInput as exc:
        raise ConfigError("feasibility", str(exc)) from None
    print(verdict)
    if not verdict:
        return _fail(1, "Infeasible", list(verdict.reasons))
    return 0


def build_parser():
    p = _Parser(prog="linloc", description="Distributed linear localization experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("config", help="config JSON file or preset:NAME")
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int)
    r.add_argument("--replicates", type=int)
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a grid of config variants")
    s.add_argument("config")
    s.add_argument("--param", action="append", required=True,
                   help="dotted path and values, e.g. scene.n_agents=5,10,20")
    s.add_argument("--out", default="sweep")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("validate-geometry", help="check geometry against coordinate oracles")
    g.add_argument("--samples", type=int, default=10_000)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_validate_geometry)

    f = sub.add_parser("feasibility", help="necessary anchor-count conditions")
    f.add_argument("--anchors", type=int, required=True)
    f.add_argument("--agents", type=int, required=True)
    f.add_argument("--dim", type=int, required=True)
    f.add_argument("--agent-motion-dim", type=int, required=True)
    f.add_argument("--anchor-motion-dim", type=int, required=True)
    f.set_defaults(func=cmd_feasibility)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        return _fail(1, "ConfigError", {"path": exc.path, "detail": exc.detail})
    except LocalizationError as exc:
        return _fail(2, type(exc).__name__, str(exc))
    except Exception as exc:  # noqa: BLE001 - last-resort report for the shell
        return _fail(2, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
