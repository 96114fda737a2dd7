"""Command-line entry point: ``distest {simulate,estimate,calibrate-test,rates,hard-instance}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .channel import BudgetExceeded
from .harness import (ExperimentSpec, calibrate_test, default_J_max, emit, make_signal,
                      run_indistinguishability, run_method, run_risk)
from .model import ModelConfig, rng_stream, simulate

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("distest")

EXIT_USAGE = 2
EXIT_INVARIANT = 3
CALIBRATION_COLUMNS = ("alpha", "n", "m", "s1", "s2", "type1_hat", "type2_hat", "separation", "reps", "seed")


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if p.suffix == ".toml":
        return tomllib.loads(p.read_text())
    return json.loads(p.read_text())


def resolve_seed(seed: int) -> int:
    env = os.environ.get("DISTEST_SEED")
    return int(env) if env not in (None, "") else int(seed)


def parse_signal(text: str | None) -> dict:
    """A CoeffSeq JSON file, a generator-spec JSON file or string, or ``kind:key=val,...``."""
    if text is None:
        return {"kind": "zero"}
    p = Path(text)
    if p.is_file():
        data = json.loads(p.read_text())
        return {"kind": "file", "path": str(p)} if "levels" in data else data
    if text.lstrip().startswith("{"):
        return json.loads(text)
    kind, _, rest = text.partition(":")
    out: dict = {"kind": kind}
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        out[key] = json.loads(val)
    return out


def _write(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(a) -> int:
    seed = resolve_seed(a.seed)
    cfg = ModelConfig(a.n, a.m, a.J_max, seed)
    f0 = make_signal(parse_signal(a.signal), a.J_max, rng_stream(seed, 0, a.replicate, "signal"), a.n, a.m)
    samples = simulate(f0, cfg, a.replicate, workers=a.workers)
    payload = {"n": a.n, "m": a.m, "seed": seed, "replicate": a.replicate, "signal": f0.to_dict(),
               "samples": [{"machine": s.machine, "noise_sd": s.noise_sd, "obs": s.obs.to_dict()} for s in samples]}
    _write(json.dumps(payload) + "\n", a.out)
    return 0


def _method_params(a) -> dict:
    keys = ("s", "s0", "s_max", "s1", "s2", "L", "p", "budget", "eps", "j0", "rho", "kappa")
    return {k: getattr(a, k) for k in keys if getattr(a, k) is not None}


def cmd_estimate(a) -> int:
    seed = resolve_seed(a.seed)
    params = _method_params(a)
    J = a.J_max if a.J_max is not None else default_J_max(a.method, a.n, a.m, params)
    cfg = ModelConfig(a.n, a.m, J, seed)
    f0 = make_signal(parse_signal(a.signal), J, rng_stream(seed, 0, 0, "signal"), a.n, a.m)
    rep = run_method(a.method, simulate(f0, cfg, 0), cfg, params)
    if (rep.ledger.counts > rep.cap).any():
        raise AssertionError("bit cap violated")
    out = rep.to_dict()
    out.update(method=a.method, n=a.n, m=a.m, seed=seed)
    _write(json.dumps(out) + "\n", a.out)
    return 0


def cmd_calibrate(a) -> int:
    seed = resolve_seed(a.seed)
    rows = [calibrate_test(alpha, a.n, a.m, a.s1, a.s2, a.L, a.reps, seed, workers=a.workers)
            for alpha in a.alpha]
    lines = [",".join(CALIBRATION_COLUMNS)]
    lines += [",".join(str(r[c]) for c in CALIBRATION_COLUMNS) for r in rows]
    _write("\n".join(lines) + "\n", a.out)
    return 0


def cmd_rates(a) -> int:
    cfg = load_config(a.config)
    cfg = cfg.get("rates", cfg)
    if not cfg:
        raise ValueError("rates needs --config with an experiment spec")
    cfg["seed"] = resolve_seed(cfg.get("seed", 0))
    fmt = a.format or cfg.pop("format", "csv")
    x = cfg.pop("x", "log2n")
    spec = ExperimentSpec.from_dict(cfg)
    report = run_risk(spec, workers=a.workers, x=x)
    for w in report.warnings:
        log.warning(w)
    text = emit(report, None, fmt)
    _write(text, a.out or spec.output)
    return 0


def cmd_hard(a) -> int:
    seed = resolve_seed(a.seed)
    res = run_indistinguishability(a.n, a.m, a.s1, a.s2, a.p, a.budget, a.reps, seed, variant=a.variant)
    out = {"n": a.n, "m": a.m, "s1": a.s1, "delta": res.delta, "j_n": res.j_n, "type1": res.type1,
           "type2": res.type2, "total_error": res.total, "reps": res.reps, "seed": seed}
    _write(json.dumps(out) + "\n", a.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="distest", description=__doc__)
    top.add_argument("--config", help="TOML or JSON file; a section named after the subcommand sets its defaults")
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, reps=False):
        p.add_argument("--n", type=int)
        p.add_argument("--m", type=int)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out")
        if reps:
            p.add_argument("--reps", type=int, default=1000)

    p = sub.add_parser("simulate", help="draw local samples and dump them as JSON")
    common(p)
    p.add_argument("--J-max", dest="J_max", type=int, default=8)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--signal")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run one distributed procedure and print its report")
    common(p)
    p.add_argument("--method", choices=("l2", "linf", "oracle-s0", "adaptive2", "adaptive-grid", "selfsim"))
    p.add_argument("--budget", type=float)
    for name in ("s", "s0", "s1", "s2", "L", "p", "eps", "rho", "kappa"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--s-max", dest="s_max", type=float)
    p.add_argument("--j0", type=int)
    p.add_argument("--J-max", dest="J_max", type=int)
    p.add_argument("--signal")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate-test", help="empirical type-I/II errors of the smoothness test (CSV)")
    common(p, reps=True)
    p.add_argument("--alpha", type=float, nargs="+", default=[0.04])
    p.add_argument("--s1", type=float, default=0.5)
    p.add_argument("--s2", type=float, default=1.0)
    p.add_argument("--L", type=float, default=1.0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("rates", help="Monte Carlo risk over an n-grid with a fitted rate exponent")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("hard-instance", help="likelihood-ratio test on the hard sign-pattern class")
    common(p, reps=True)
    p.add_argument("--s1", type=float, default=1.0)
    p.add_argument("--s2", type=float, default=2.0)
    p.add_argument("--p", type=float)
    p.add_argument("--budget", type=float)
    p.add_argument("--variant", choices=("l2", "linf"), default="l2")
    p.set_defaults(func=cmd_hard)
    return top


REQUIRED = {"simulate": ("n", "m"), "estimate": ("n", "m", "method"), "calibrate-test": ("n", "m"),
            "hard-instance": ("n", "m", "budget")}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command != "rates":
        section = load_config(args.config).get(args.command, {})
        if section:
            # subparsers overwrite namespace values with their own defaults, so set them there
            subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
            subparsers.choices[args.command].set_defaults(**{k.replace("-", "_"): v for k, v in section.items()})
            args = parser.parse_args(argv)
    missing = [k for k in REQUIRED.get(args.command, ()) if getattr(args, k, None) is None]
    if missing:
        parser.error(f"missing required options: {', '.join('--' + k for k in missing)}")
    try:
        return args.func(args)
    except (AssertionError, BudgetExceeded) as exc:
        log.error("invariant violation: %s", exc)
        return EXIT_INVARIANT
    except (ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
