"""Command-line front end: ``fquant <command> [options]``.

Every option can also be given in a JSON file passed with ``--config``;
keys are option names with dashes or underscores, plus an optional
``"command"`` entry.  Explicit command-line flags win over the file.
Output files embed the full run configuration and its digest, and contain
no timings, so equal configurations give byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import cubature as cub
from .diffusion import DiffusionError, ScalarDiffusionSpec, heston_vol_quantizer, quantize_scalar_diffusion
from .gridstore import GridError, GridStore, canonical_json, config_digest, load_grid, plain, save_grid
from .heston import mc_reference, preset, price_asian_fq, price_asian_interpolated, PRESETS
from .kl_basis import KLSystem, build_optimal_fq, build_product_fq, dimension_rule, optimal_allocation
from .rng import RngStream
from .scalar_quant import ConvergenceError, normal_distortion_table, optimal_normal_quantizer, optimal_uniform_quantizer
from .vq_core import CovNorm, OptSchedule, optimize_pipeline

TABLE_BUDGETS = (1, 10, 100, 1000, 10000)
SCHEDULE_FIELDS = tuple(OptSchedule().as_dict())


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _strikes(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or a comma-separated list."""
    text = str(text)
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            count = int(math.floor((b - a) / step + 1e-9)) + 1
            return [a + i * step for i in range(count)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad strike specification {text!r}") from None


def _add_schedule(p):
    g = p.add_argument_group("optimization schedule")
    for name, value in OptSchedule().as_dict().items():
        g.add_argument("--" + name.replace("_", "-"), type=type(value), default=value)


def _add_common(p, seed=True, out=True):
    if seed:
        p.add_argument("--seed", type=int, default=2024)
    if out:
        p.add_argument("--out", help="output file")
    p.add_argument("--grid-dir", help="grid store directory (overrides FQUANT_GRID_DIR)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fquant", description="Functional quantization toolkit")
    parser.add_argument("--config", help="JSON file with option values")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("scalar", help="optimal scalar quantizer")
    p.add_argument("--law", choices=("normal", "uniform"), default="normal")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--b", type=float, default=1.0)
    _add_common(p, seed=False)

    p = sub.add_parser("optimize", help="optimized quantizer of a diagonal Gaussian vector")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--process", choices=("bm", "bridge"), default="bm")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--dim", type=int, help="dimension (default: floor(log N))")
    _add_schedule(p)
    _add_common(p)

    p = sub.add_parser("build-fq", help="functional quantizer of Brownian motion or bridge")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--mode", choices=("optimal", "product"), default="optimal")
    p.add_argument("--process", choices=("bm", "bridge"), default="bm")
    p.add_argument("--T", type=float, default=1.0)
    _add_schedule(p)
    _add_common(p)

    p = sub.add_parser("cubature", help="quantized cubature of a built-in functional")
    p.add_argument("--fq", help="functional quantizer grid file")
    p.add_argument("--functional", choices=tuple(cub.BUILTINS), required=True)
    p.add_argument("--romberg", type=_int_list, help="N1,N2: extrapolate between two optimal quantizers from the store")
    p.add_argument("--grid", type=int, default=cub.DEFAULT_GRID, help="time grid intervals")
    _add_common(p)

    p = sub.add_parser("quantize-diffusion", help="quantized diffusion paths")
    p.add_argument("--model", choices=("ou", "gbm", "heston-vol"), required=True)
    p.add_argument("--fq", required=True, help="Brownian functional quantizer grid file")
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--a", type=float, default=0.01)
    p.add_argument("--theta", type=float, default=0.2)
    p.add_argument("--mu", type=float, default=0.05)
    p.add_argument("--v0", type=float, default=0.1)
    _add_common(p, seed=False)

    p = sub.add_parser("price-asian", help="Asian call prices in the Heston model")
    p.add_argument("--model", choices=("heston",), default="heston")
    p.add_argument("--preset", choices=tuple(PRESETS), default="paper-2007")
    p.add_argument("--N", type=int, default=400)
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--N2", type=int, default=1600)
    p.add_argument("--M2", type=int, default=400)
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--strikes", type=_strikes)
    p.add_argument("--mc-paths", type=int, default=0)
    p.add_argument("--mc-steps", type=int, default=128, help="coarse Euler steps (fine scheme uses twice as many)")
    _add_common(p)

    p = sub.add_parser("reproduce", help="reproduce a benchmark")
    p.add_argument("target", choices=("table-6-4", "constant-opt", "asian-heston"))
    p.add_argument("--sizes", type=_int_list, default=[10, 100, 1000], help="constant-opt sizes")
    p.add_argument("--mc-paths", type=int, default=10_000_000)
    p.add_argument("--mc-steps", type=int, default=128)
    p.add_argument("--steps", type=int, default=32)
    _add_common(p)
    return parser


# ---------------------------------------------------------------- helpers


def _schedule(args) -> OptSchedule:
    return OptSchedule(**{f: getattr(args, f) for f in SCHEDULE_FIELDS})


def _store(args) -> GridStore:
    return GridStore(args.grid_dir) if getattr(args, "grid_dir", None) else GridStore()


def _write_records(path, config: dict, results: dict):
    if not path:
        return
    doc = {"config": config, "config_digest": config_digest(config), "results": plain(results)}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(plain(doc), sort_keys=True, indent=1) + "\n", encoding="ascii")


def _table(headers, rows) -> str:
    cells = [list(headers)] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


def _out(text: str, stream):
    stream.write(text + "\n")


# ---------------------------------------------------------------- commands


def cmd_scalar(args, config, out):
    if args.law == "normal":
        q = optimal_normal_quantizer(args.size)
    else:
        q = optimal_uniform_quantizer(args.a, args.b, args.size)
    if args.out:
        save_grid(args.out, q, config)
    rows = [(i + 1, f"{x:.10f}", f"{w:.10f}") for i, (x, w) in enumerate(zip(q.points, q.weights))]
    _out(_table(("i", "point", "weight"), rows), out)
    _out(f"distortion {q.distortion:.15g}", out)


def cmd_optimize(args, config, out):
    system = KLSystem(args.process, args.T)
    d = args.dim or dimension_rule(args.N)
    cb = optimize_pipeline(args.N, CovNorm(system.eigenvalues(d)), _schedule(args), RngStream(args.seed))
    if args.out:
        save_grid(args.out, cb, config)
    _out(f"N {cb.size}  d {cb.dim}  distortion {cb.distortion:.10g}", out)


def cmd_build_fq(args, config, out):
    system = KLSystem(args.process, args.T)
    if args.mode == "optimal":
        fq = build_optimal_fq(args.N, system, _schedule(args), RngStream(args.seed))
    else:
        fq = build_product_fq(optimal_allocation(args.N, system), system)
    if args.out:
        save_grid(args.out, fq, config)
    _out(f"N {fq.size}  d {fq.dim}  quant_error {fq.quant_error:.10g}  log(N) e^2 {math.log(max(fq.size, 2)) * fq.quant_error**2:.6f}", out)


def _functional(name: str, T: float) -> cub.Functional:
    if name == "integral":
        return cub.integral_functional(T)
    if name == "asian-bs":
        return cub.asian_bs_functional(T=T)
    return cub.BUILTINS[name]()


def cmd_cubature(args, config, out):
    results = {}
    if args.romberg:
        if len(args.romberg) != 2:
            raise UsageError("--romberg takes two sizes N1,N2")
        store = _store(args)
        fqs = [store.functional(N, seed=args.seed) for N in args.romberg]
        vals = [cub.cubature(fq, _functional(args.functional, fq.system.T), args.grid).value for fq in fqs]
        ext = cub.romberg_log_extrapolate(list(zip(args.romberg, vals)))
        results.update(sizes=args.romberg, values=vals, romberg=ext)
        _out(_table(("N", "value"), [(N, f"{v:.10f}") for N, v in zip(args.romberg, vals)]), out)
        _out(f"log-Romberg {ext:.10f}", out)
    if args.fq:
        fq = load_grid(args.fq, "functional")
        res = cub.cubature(fq, _functional(args.functional, fq.system.T), args.grid)
        results.update(value=res.value, error_bound=res.error_bound, N=fq.size)
        bound = "n/a" if res.error_bound is None else f"{res.error_bound:.6g}"
        _out(f"N {fq.size}  value {res.value:.10f}  error bound {bound}", out)
    if not results:
        raise UsageError("cubature needs --fq or --romberg")
    _write_records(args.out, config, results)


def cmd_quantize_diffusion(args, config, out):
    fq = load_grid(args.fq, "functional")
    if args.model == "heston-vol":
        ens = heston_vol_quantizer(args.k, args.a, args.theta, args.v0, fq, args.steps)
    else:
        if args.model == "ou":
            k, th = args.k, args.theta
            spec = ScalarDiffusionSpec(lambda t, x: -k * x, lambda t, x: th + 0.0 * x, lambda t, x: 0.0 * x, args.x0)
        else:
            mu, th = args.mu, args.theta
            spec = ScalarDiffusionSpec(lambda t, x: mu * x, lambda t, x: th * x, lambda t, x: th + 0.0 * x, args.x0)
        ens = quantize_scalar_diffusion(spec, fq, args.steps)
    if args.out:
        save_grid(args.out, ens, config)
    final = ens.paths[:, -1]
    _out(f"N {ens.size}  steps {args.steps}  E[X_T] {ens.weights @ final:.10f}  min {ens.paths.min():.6g}  max {ens.paths.max():.6g}", out)


def _heston_run(args, config, out, err, strikes=None):
    params, default_strikes = preset(args.preset)
    K = strikes if strikes is not None else (args.strikes or default_strikes)
    store = _store(args)
    t0 = time.perf_counter()
    sizes = sorted({args.N, args.M, args.N2, args.M2})
    fqs = {N: store.functional(N, KLSystem("bm", params.T), seed=args.seed) for N in sizes}
    t_load = time.perf_counter() - t0
    budgets = [(fqs[args.N], fqs[args.M]), (fqs[args.N2], fqs[args.M2])]
    t0 = time.perf_counter()
    crude = price_asian_fq(params, K, fqs[args.N], fqs[args.M], args.steps)
    interp = price_asian_interpolated(params, K, budgets, args.steps)
    t_fq = time.perf_counter() - t0
    mc = None
    if args.mc_paths:
        mc = mc_reference(params, K, args.mc_paths, args.mc_steps, RngStream(args.seed).child("mc"))
    headers = ["strike", f"FQ({args.N},{args.M})", "FQ-Romberg", "interpolated"]
    cols = [crude.prices, interp.diagnostics["romberg_calls"], interp.prices]
    if mc is not None:
        headers += ["MC", "MC s.e.", "abs diff"]
        cols += [mc.prices, mc.diagnostics["se"], np.abs(interp.prices - mc.prices)]
    rows = [[f"{k:g}"] + [f"{c[i]:.4f}" for c in cols] for i, k in enumerate(interp.strikes)]
    _out(_table(headers, rows), out)
    results = {
        "strikes": interp.strikes,
        "fq": crude.prices,
        "fq_romberg": interp.diagnostics["romberg_calls"],
        "interpolated": interp.prices,
        "anchors": interp.diagnostics["anchors"],
        "budgets": [[args.N, args.M], [args.N2, args.M2]],
    }
    if mc is not None:
        results.update(mc=mc.prices, mc_se=mc.diagnostics["se"], max_abs_diff=float(np.abs(interp.prices - mc.prices).max()))
        _out(f"max |interpolated - MC| = {results['max_abs_diff']:.4f}", out)
        err.write(f"MC time {mc.diagnostics['runtime']:.1f} s\n")
    err.write(f"grid load {t_load:.2f} s, FQ pricing {t_fq:.3f} s\n")
    _write_records(args.out, config, results)
    return results


def cmd_price_asian(args, config, out, err):
    _heston_run(args, config, out, err)


def cmd_reproduce(args, config, out, err):
    if args.target == "table-6-4":
        e2 = normal_distortion_table(64)
        rows, recs = [], []
        for N in TABLE_BUDGETS:
            a = optimal_allocation(N, KLSystem(), e2)
            rows.append((N, a.N_rec, f"{a.quant_error:.6f}", a.label if a.sizes else "-"))
            recs.append({"N": N, "N_rec": a.N_rec, "quant_error": a.quant_error, "allocation": list(a.sizes)})
        _out(_table(("N", "N_rec", "error", "allocation"), rows), out)
        _write_records(args.out, config, {"rows": recs})
    elif args.target == "constant-opt":
        store = _store(args)
        rows, recs = [], []
        for N in args.sizes:
            fq = store.functional(N, seed=args.seed)
            c = math.log(N) * fq.quant_error**2
            rows.append((N, fq.dim, f"{fq.quant_error**2:.6f}", f"{c:.6f}"))
            recs.append({"N": N, "d": fq.dim, "e2": fq.quant_error**2, "logN_e2": c})
        _out(_table(("N", "d", "e^2", "log(N) e^2"), rows), out)
        _write_records(args.out, config, {"rows": recs})
    else:
        ns = argparse.Namespace(
            preset="paper-2007", N=400, M=100, N2=1600, M2=400, strikes=None,
            steps=args.steps, mc_paths=args.mc_paths, mc_steps=args.mc_steps,
            seed=args.seed, grid_dir=args.grid_dir, out=args.out,
        )
        _heston_run(ns, config, out, err)


COMMANDS = {
    "scalar": cmd_scalar,
    "optimize": cmd_optimize,
    "build-fq": cmd_build_fq,
    "cubature": cmd_cubature,
    "quantize-diffusion": cmd_quantize_diffusion,
}


def _split_config(argv):
    """Remove ``--config PATH`` from argv and return (rest, config dict)."""
    rest, path = [], None
    it = iter(argv)
    for tok in it:
        if tok == "--config":
            path = next(it, None)
            if path is None:
                raise UsageError("--config needs a file name")
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
        else:
            rest.append(tok)
    if path is None:
        return rest, {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return rest, {str(k).replace("-", "_"): v for k, v in data.items()}


def _parse(argv):
    parser = build_parser()
    argv, file_cfg = _split_config(list(argv))
    choices = parser._subparsers._group_actions[0].choices
    pos = next((i for i, a in enumerate(argv) if a in choices), None)
    if pos is None:
        if "command" not in file_cfg:
            raise UsageError(parser.format_help())
        argv = [str(file_cfg["command"])] + argv
        pos = 0
    command = argv[pos]
    if command not in choices:
        raise UsageError(f"unknown command {command!r}\n{parser.format_usage()}")
    if command == "reproduce" and "target" in file_cfg:
        if pos + 1 >= len(argv) or argv[pos + 1].startswith("-"):
            argv.insert(pos + 1, str(file_cfg["target"]))
    if file_cfg:
        sub = choices[command]
        valid = {a.dest for a in sub._actions} | {"command", "target"}
        unknown = sorted(set(file_cfg) - valid)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        defaults = {k: v for k, v in file_cfg.items() if k not in ("command", "target")}
        for action in sub._actions:
            if action.dest in defaults:
                if action.type is not None and isinstance(defaults[action.dest], str):
                    defaults[action.dest] = action.type(defaults[action.dest])
                action.required = False
        sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    if not args.command:
        raise UsageError(parser.format_help())
    return args


def run_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "grid_dir")}
    return json.loads(canonical_json(cfg))


def run(argv=None, stdout=None, stderr=None) -> int:
    """Run the CLI; returns 0 on success, 2 on usage errors, 1 on numerical failures."""
    out = stdout or sys.stdout
    err = stderr or sys.stderr
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        err.write(str(exc).rstrip() + "\n")
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    config = run_config(args)
    try:
        if args.command in COMMANDS:
            COMMANDS[args.command](args, config, out)
        elif args.command == "price-asian":
            cmd_price_asian(args, config, out, err)
        else:
            cmd_reproduce(args, config, out, err)
    except UsageError as exc:
        err.write(f"fquant: error: {exc}\n")
        return 2
    except (ConvergenceError, DiffusionError, cub.CubatureError, GridError, ArithmeticError, ValueError, OSError) as exc:
        err.write(f"fquant {args.command}: {type(exc).__name__}: {exc}\n")
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
