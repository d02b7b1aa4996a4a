"""Command-line entry point ``decolab``.

Exit codes: 0 on success, 1 when the configuration is invalid, 2 when a
computation fails (partial results are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .experiments import (
    ENGINES,
    PRESETS,
    ConfigError,
    RunFailed,
    UnknownPreset,
    load_config,
    preset,
    replace_seed,
    run_scenario,
)
from .perturbation import NonSeparableCoupling, QuadratureConfig, second_order_rates

log = logging.getLogger("decolab")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _engines(text: str) -> tuple[str, ...]:
    names = tuple(e.strip() for e in text.split(",") if e.strip())
    bad = [e for e in names if e not in ENGINES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"engines must be a comma list drawn from {','.join(ENGINES)}")
    return names


def _load(args):
    if getattr(args, "preset", None):
        return preset(args.preset)
    if not args.config:
        raise ConfigError(["give a config file or --preset"])
    return load_config(args.config)


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"{cfg.name}: ok (hash {cfg.config_hash()})")
    return EXIT_OK


def cmd_rates(args) -> int:
    cfg = _load(args)
    try:
        rates = second_order_rates(cfg.system, cfg.state(), QuadratureConfig())
    except NonSeparableCoupling as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.json:
        print(json.dumps({"scenario": cfg.name, **rates.to_dict()}, indent=2))
        return EXIT_OK
    s = cfg.state()
    rows = [
        ("coupling", _describe(cfg.system.coupling.to_dict())),
        ("state", f"Q0={s.sys.x0:g} P0={s.sys.y0:g} q0={s.bath.x0:g} p0={s.bath.y0:.6g} "
                  f"sigma_Q={s.sys.sx:.4g} sigma_P={s.sys.sy:.4g}"),
        ("1/tau_c2^2", f"{rates.inv_tau_c2_sq:.10g}"),
        ("1/tau_q2^2", f"{rates.inv_tau_q2_sq:.10g}"),
        ("classicality_ratio", f"{rates.classicality_ratio:.6g}"),
    ]
    width = max(len(k) for k, _ in rows)
    print(f"{cfg.name}")
    for k, v in rows:
        print(f"  {k:<{width}}  {v}")
    return EXIT_OK


def _describe(d: dict) -> str:
    kind = d.get("kind", "?")
    rest = ", ".join(f"{k}={v}" for k, v in d.items() if k != "kind")
    return f"{kind}({rest})"


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.seed is not None:
        cfg = replace_seed(cfg, args.seed)
    engines = args.engines or cfg.engines
    try:
        series = run_scenario(cfg, engines, out_dir=args.out, write=True, log=log.info)
    except RunFailed as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    for msg in series.metadata.get("out_of_range", []):
        log.warning("out of range: %s", msg)
    out = args.out or f"{cfg.output_dir}/{cfg.name}"
    print(f"{cfg.name}: wrote {out}/{cfg.name}.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decolab", description="Quantum and classical decoherence entropy experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("config", nargs="?", help="YAML scenario file or preset name")
        sp.add_argument("--preset", choices=sorted(PRESETS), help="use a built-in scenario")

    sp = sub.add_parser("validate", help="check a scenario file and report every problem")
    scenario_args(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("rates", help="second-order entropy production rates")
    scenario_args(sp)
    sp.add_argument("--json", action="store_true", help="print JSON instead of a table")
    sp.set_defaults(func=cmd_rates)

    sp = sub.add_parser("run", help="compute entropy curves and write CSV, plot script and summary")
    scenario_args(sp)
    sp.add_argument("--engines", type=_engines, help=f"comma list from {','.join(ENGINES)}")
    sp.add_argument("--seed", type=int, help="override the scenario seed")
    sp.add_argument("--out", help="output directory (default: <output_dir>/<name>)")
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, UnknownPreset) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
