"""Command line entry point: run, sweep, identities, lame-check, energy-audit."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evolve as ev
from . import experiments as ex
from .config import RunConfig, load_config
from .errors import ConfigurationError, ViscoslabError

DEFAULT_KAPPAS = "10,100,1000,10000"


def _int_list(text: str) -> tuple:
    try:
        vals = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("resolution needs n1,n2,n3m,n3p")
    return vals


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viscoslab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--dim", type=int, choices=(2, 3))
    common.add_argument("--resolution", type=_int_list, metavar="n1,n2,n3m,n3p")
    common.add_argument("--dt", type=float)
    common.add_argument("--T", type=float, dest="T")
    common.add_argument("--kappas", type=_float_list, metavar="k1,k2,...")
    sub.add_parser("run", parents=[common], help="single simulation from a config")
    sub.add_parser("sweep", parents=[common], help="kappa sweep against the linear companion problem")
    s = sub.add_parser("identities", parents=[common], help="algebraic and oracle property checks")
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    sub.add_parser("lame-check", parents=[common], help="manufactured-solution study of the Lame solver")
    sub.add_parser("energy-audit", parents=[common], help="dt-refinement of the energy identity residual")
    return p


def _config(args, kappa=None) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(dim=args.dim, resolution=args.resolution, dt=args.dt, T=args.T, kappa=kappa)


def _out(args, name) -> Path:
    out = args.out or Path("runs") / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=2, default=ev._json_default))


def cmd_run(args) -> int:
    kappa = args.kappas[0] if args.kappas else None
    cfg = _config(args, kappa)
    out = _out(args, "run")
    res = ex.run_config(cfg, out_dir=out)
    status = res.event.kind if res.event else "completed"
    print(f"run {status}: t={res.final.t:.6g}, steps={res.final.step_index}, "
          f"energy monotone={res.ledger.is_monotone()}, outputs in {out}")
    return 0


def cmd_sweep(args) -> int:
    kappas = args.kappas or _float_list(DEFAULT_KAPPAS)
    cfg = _config(args)
    out = _out(args, "sweep")
    result = ex.kappa_sweep(cfg, kappas, dt=args.dt, T_end=args.T)
    result.write_csv(out / "sweep.csv")
    _write_json(out / "manifest.json", {
        "config": cfg.to_dict(),
        "kappas": list(kappas),
        "slopes": result.slopes,
        "strictly_decreasing": result.strictly_decreasing(),
        "rows": [asdict(r) for r in result.rows],
    })
    for r in result.rows:
        print(f"kappa={r.kappa:g} errors={r.errors()} status={r.status}")
    print(f"slopes: {result.slopes}")
    return 0


def cmd_identities(args) -> int:
    out = _out(args, "identities")
    reports = ex.identity_suite(args.samples, args.seed)
    h, res, order = ex.piola_study((16, 32, 64))
    reports.append(ex.IdentityReport("Piola residual fitted order", order, 2.0, at_least=True))
    rows, worst = ex.lame_check((8, 16, 32))
    reports.append(ex.IdentityReport("Lame per-mode residual", worst, 1e-10))
    reports.append(ex.IdentityReport("Lame linearity", ex.lame_linearity(), 1e-10))
    t = np.linspace(0, 3, 31)
    rate, r2 = ex.decay_fit(t, np.exp(-2 * t))
    reports.append(ex.IdentityReport("decay fit on exp(-2t)", abs(rate - 2.0) / 2.0, 1e-6))
    lines = [r.line() for r in reports]
    (out / "identities.txt").write_text("\n".join(lines) + "\n")
    _write_json(out / "manifest.json", {
        "samples": args.samples, "seed": args.seed,
        "piola_residuals": res.tolist(), "piola_order": order,
        "results": [{"name": r.name, "value": r.error, "tol": r.tol, "at_least": r.at_least,
                     "passed": r.passed} for r in reports],
    })
    print("\n".join(lines))
    return 0


def cmd_lame_check(args) -> int:
    out = _out(args, "lame-check")
    res = tuple(args.resolution[2:3]) if args.resolution else None
    resolutions = (8, 16, 32, 64) if res is None else tuple(res[0] * 2 ** k for k in range(4))
    rows, worst = ex.lame_check(resolutions)
    with open(out / "lame_check.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("resolution", "error", "order"))
        for n, err, order in rows:
            w.writerow((n, repr(err), repr(order)))
    _write_json(out / "manifest.json", {"resolutions": list(resolutions), "max_mode_residual": worst})
    for n, err, order in rows:
        print(f"n3={n:4d} error={err:.3e} order={order:.3f}")
    return 0


def cmd_energy_audit(args) -> int:
    cfg = _config(args)
    if args.dt is None:
        cfg = cfg.with_overrides(dt=1.25e-3)
    if args.T is None:
        cfg = cfg.with_overrides(T=0.1)
    out = _out(args, "energy-audit")
    dts, res, order = ex.energy_audit(cfg)
    with open(out / "energy_audit.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("dt", "max_residual"))
        for d, r in zip(dts, res):
            w.writerow((repr(float(d)), repr(float(r))))
    _write_json(out / "manifest.json", {"config": cfg.to_dict(), "dts": dts.tolist(),
                                        "residuals": res.tolist(), "fitted_order": order})
    print(f"residual order {order:.3f} over dt={dts.tolist()}")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "identities": cmd_identities,
            "lame-check": cmd_lame_check, "energy-audit": cmd_energy_audit}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ViscoslabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
