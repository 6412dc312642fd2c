"""Command-line entry point: ``tokenadapt {forward,bench,flops,masks}``.

Exit codes: 0 success, 2 configuration error, 3 contract violation.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import flops, ilsa
from .bench import masks, runner
from .bench.config import load_config
from .errors import ConfigError, ContractViolation

log = logging.getLogger("tokenadapt")

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT = 0, 2, 3


def _with_bench(cfg, **changes):
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(cfg, bench=replace(cfg.bench, **changes)) if changes else cfg


def cmd_forward(args):
    cfg = load_config(args.config)
    record, traj = runner.forward_scenario(cfg, args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "trace.json"), "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=1)
        fh.write("\n")
    traj.to_csv(os.path.join(args.out, "trajectory.csv"), cfg.planner.timestep)
    print(f"lengths {record['lengths']}  planted recall {record['recall']:.3f}  -> {args.out}")
    return EXIT_OK


def cmd_bench(args):
    cfg = _with_bench(load_config(args.config), seeds=args.seeds, first_seed=args.first_seed,
                      workers=args.workers)
    report = runner.run_bench(cfg)
    paths = runner.write_reports(report, args.out)
    if cfg.bench.mask_seed is not None:
        _render(cfg, cfg.bench.mask_seed, os.path.join(args.out, "masks"))
    for name, by_metric in report["summary"].items():
        parts = "  ".join(f"{m} {s['mean']:.3f}±{s['std']:.3f}" for m, s in by_metric.items())
        print(f"{name:<18} {parts}")
    print(f"wrote {', '.join(sorted(paths.values()))}")
    return EXIT_OK


def cmd_flops(args):
    arch = flops.FlopsArchAssumptions()
    if args.text_tokens is not None:
        arch = replace(arch, text_tokens=args.text_tokens)
    settings = [(tuple(args.sparse_layers), r) for r in args.rate]
    report = flops.summary(arch, settings, args.recycle)
    report["text_sensitivity"] = {str(k): v for k, v in flops.text_sensitivity(arch, settings, recycle=args.recycle).items()}
    if not args.per_layer:
        report["dense"].pop("layers")
    text = json.dumps(report, sort_keys=True, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(f"dense {report['dense']['total_gflops']:.0f} GFLOPs "
          f"(frontend {report['dense']['frontend_gflops']:.0f}, reference 9105)")
    for row in report["pruned"]:
        print(f"layers {row['sparse_layers']} rate {row['pruning_rate']}: "
              f"{row['gflops']:.0f} GFLOPs, reduction {100 * row['reduction']:.1f}%")
    if args.json:
        print(text)
    return EXIT_OK


def _render(cfg, seed, out_dir):
    models = runner.build_models(cfg)
    scen, emb, layout = runner.embed_scenario(cfg, models, seed)
    x = runner.sparse_layer_inputs(cfg, models, emb, layout)
    d = ilsa.ilsa_step(x.h, x.scoring, layout, cfg.prune, cfg.prune.rate_for_layer(x.layer)).validate(layout)
    return masks.render_masks(d, layout, scen, out_dir)


def cmd_masks(args):
    cfg = load_config(args.config)
    paths = _render(cfg, args.seed, args.out)
    print(f"wrote {len(paths)} files to {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="tokenadapt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forward", help="run one scenario end to end, dump trace and trajectory")
    f.add_argument("--config")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default="forward_out")
    f.set_defaults(func=cmd_forward)

    b = sub.add_parser("bench", help="compare pruning strategies over many seeds")
    b.add_argument("--config")
    b.add_argument("--seeds", type=int)
    b.add_argument("--first-seed", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("--out", default="bench_out")
    b.set_defaults(func=cmd_bench)

    fl = sub.add_parser("flops", help="analytic FLOPs for the 7B-scale assumptions")
    fl.add_argument("--sparse-layers", type=int, nargs="+", default=[4])
    fl.add_argument("--rate", type=float, nargs="+", default=[0.35, 0.85])
    fl.add_argument("--recycle", type=float, default=ilsa.DEFAULT_RECYCLE)
    fl.add_argument("--text-tokens", type=int)
    fl.add_argument("--per-layer", action="store_true", help="include the per-layer breakdown")
    fl.add_argument("--json", action="store_true", help="print the full report")
    fl.add_argument("--out")
    fl.set_defaults(func=cmd_flops)

    m = sub.add_parser("masks", help="render per-view pruning masks for one scenario")
    m.add_argument("--config")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", default="masks_out")
    m.set_defaults(func=cmd_masks)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as e:
        print(f"contract violation: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except (OSError, ValueError) as e:
        # bad paths or values given on the command line
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
