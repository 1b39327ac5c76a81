"""Command line entry point: ``dpnet run|compare|allocate-budget|validate-graph``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from ..errors import ConfigError, DataError, IsolatedNode, OutOfSupport, ParseError, UnboundedSensitivity

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
log = logging.getLogger("dpnet")


def _epsilons(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad epsilon list {text!r}") from exc
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("epsilons must be positive")
    return vals


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpnet", description="Private distributed estimation experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", required=True, type=Path, help="TOML experiment config")
        if out:
            sp.add_argument("--out", type=Path, help="output directory (default: config 'out')")
        sp.add_argument("--seed", type=_seed)
        sp.add_argument("--replicates", type=int)
        sp.add_argument("--epsilon", type=_epsilons, help="comma-separated budget grid")

    r = sub.add_parser("run", help="run the configured algorithms over the eps grid")
    common(r)
    r.add_argument("--workers", type=int, default=1)
    c = sub.add_parser("compare", help="paired MSE against the first-order baseline")
    common(c)
    c.add_argument("--workers", type=int, default=1)
    a = sub.add_parser("allocate-budget", help="heterogeneous budget allocation")
    common(a)
    v = sub.add_parser("validate-graph", help="check a graph and report its mixing properties")
    common(v, out=False)
    v.add_argument("--edges", type=Path, help="edge-list file overriding the config graph")
    return p


def _config(args):
    from .config import load_config

    cfg = load_config(args.config, edges=getattr(args, "edges", None))
    if args.replicates is not None and args.replicates < 1:
        raise ConfigError("--replicates must be positive")
    return cfg.with_overrides(seed=args.seed, replicates=args.replicates, epsilons=args.epsilon)


def _validate_graph(args, cfg) -> int:
    from .. import graph

    if cfg.graph.kind == "file":
        top, stats = graph.load_edge_list(cfg.resolve(cfg.graph.path), return_stats=True)
    else:
        from .experiment import Scenario

        top, stats = Scenario(cfg).topology, {}
    iso = top.isolated_nodes()
    report = {"nodes": top.node_count, "edges": top.edge_count, "isolated": int(iso.size),
              "components": top.component_count(), **stats}
    if iso.size and top.node_count > 1:
        print(json.dumps(report, indent=2))
        raise IsolatedNode(int(iso[0]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        A = graph.build_weights(top, cfg.graph.weights)
    report.update(beta_star=A.beta_star, non_mixing=bool(A.non_mixing), row_sum_error=A.row_sum_error(),
                  max_neighbor_weight=A.max_offdiagonal)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        if args.command == "validate-graph":
            return _validate_graph(args, cfg)
        from . import experiment

        out = args.out if args.out is not None else cfg.resolve(cfg.out)
        if args.command == "run":
            paths = experiment.run_experiment(cfg, out, workers=args.workers)
            for row in paths["rows"]:
                log.info("%s %s eps=%s MSE=%.6g", row["algorithm"], row["regime"], row["epsilon"], row["MSE_mean"])
            print(f"wrote {paths['summary']}, {paths['trace']}, {paths['metadata']}")
        elif args.command == "compare":
            rows = experiment.compare_baseline(cfg, out, workers=args.workers)
            for row in rows:
                print(f"{row['regime']:>10} eps={row['epsilon']:<6g} ours={row['ours_MSE']:.4g} "
                      f"baseline={row['baseline_MSE']:.4g} ratio={row['ratio']:.3g}")
        elif args.command == "allocate-budget":
            alloc = experiment.allocate_for_config(cfg, out, cfg.epsilons[0])
            print(f"objective {alloc.objective:.6g} ({alloc.method}); wrote {Path(out) / 'allocation.csv'}")
    except (ConfigError, UnboundedSensitivity) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ParseError, IsolatedNode, OutOfSupport) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
