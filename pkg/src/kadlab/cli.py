"""Experiment orchestration: subcommands binding simulator, model, and bounds
into reproducible seeded runs with CSV/JSON outputs.

Exit codes: 0 ok, 1 usage error, 2 runtime failure. KADLAB_THREADS bounds the
worker count used to fan simulation runs out across processes.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import bounds as bounds_mod
from . import model as model_mod
from . import simulator as sim_mod
from .routing import DIVERSE, SCHEMES, STANDARD, get_profile


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _worker_count(runs: int) -> int:
    cap = os.environ.get("KADLAB_THREADS")
    avail = os.cpu_count() or 1
    limit = int(cap) if cap else avail
    return max(1, min(runs, avail, limit))


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    with open(p, "rb") as fh:
        return tomllib.load(fh)


def _merge(args: argparse.Namespace, config: dict, keys) -> None:
    """Config supplies values only for flags left at their defaults-as-None."""
    for key in keys:
        if getattr(args, key, None) is None and key in config:
            setattr(args, key, config[key])


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


# ------------------------------------------------------------------ subcommands


def cmd_simulate(args) -> int:
    profile = get_profile(args.profile, args.alpha, args.beta)
    out = Path(args.out)
    churn = None
    if args.churn is not None:
        churn = sim_mod.ChurnSpec(enabled=True, mean_session=float(args.churn),
                                  mean_deadtime=float(args.churn))
    workers = _worker_count(args.runs)
    rows = []
    cdf_rows = []
    payload: dict = {}
    churn_label = args.churn if args.churn is not None else ""
    if args.compare:
        paired = sim_mod.compare_schemes(profile, args.n, churn, args.lookups, args.runs,
                                         args.seed, workers=workers)
        payload = paired.to_json_dict()
        for rep, gain in ((paired.standard, ""), (paired.modified, None)):
            g = (paired.gain_pct, paired.gain_min, paired.gain_max) if rep is paired.modified else ("", "", "")
            rows.append([rep.profile, rep.scheme, rep.n, churn_label, _fmt(rep.sample_mean),
                         _fmt(rep.ci95_halfwidth), _fmt(rep.median),
                         *(("", "", "") if g[0] == "" else map(_fmt, g))])
            for h, c in sorted(rep.cdf.items()):
                cdf_rows.append([rep.profile, rep.scheme, h, _fmt(c)])
        print(f"profile={profile.name} n={args.n} churn={churn_label or 'off'}")
        print(f"  standard: mean={paired.standard.sample_mean:.5f} ± {paired.standard.ci95_halfwidth:.5f} "
              f"median={paired.standard.median:.5f}")
        print(f"  modified: mean={paired.modified.sample_mean:.5f} ± {paired.modified.ci95_halfwidth:.5f} "
              f"median={paired.modified.median:.5f}")
        print(f"  gain: +{paired.gain_pct:.5f}%  [{paired.gain_min:.5f} , {paired.gain_max:.5f}]")
    else:
        rep = sim_mod.run_experiment(profile, args.n, args.scheme, churn, args.lookups,
                                     args.runs, args.seed, workers=workers)
        payload = rep.to_json_dict()
        rows.append([rep.profile, rep.scheme, rep.n, churn_label, _fmt(rep.sample_mean),
                     _fmt(rep.ci95_halfwidth), _fmt(rep.median), "", "", ""])
        for h, c in sorted(rep.cdf.items()):
            cdf_rows.append([rep.profile, rep.scheme, h, _fmt(c)])
        print(f"profile={profile.name} scheme={rep.scheme} n={args.n} churn={churn_label or 'off'}")
        print(f"  mean={rep.sample_mean:.5f} ± {rep.ci95_halfwidth:.5f} median={rep.median:.5f}")
    _write_csv(out / "summary.csv",
               ["profile", "scheme", "n", "churn", "mean", "ci95", "median",
                "gain_pct", "gain_min", "gain_max"], rows)
    _write_csv(out / "cdf.csv", ["profile", "scheme", "hops", "cumulative_fraction"], cdf_rows)
    _write_json(out / "report.json", payload)
    if args.dump_tables:
        net = sim_mod.build_network(profile, args.n, args.scheme if not args.compare else "standard",
                                    args.seed)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "tables.jsonl", "w") as fh:
            for ident in net.online_ids[: args.dump_tables]:
                fh.write(net.tables[ident].dump_json())
                fh.write("\n")
    return 0


def cmd_model(args) -> int:
    profile = get_profile(args.profile, args.alpha, args.beta)
    out = Path(args.out)
    schemes = list(SCHEMES) if args.compare else [args.scheme]
    srows, crows = [], []
    payload = {}
    for scheme in schemes:
        res = model_mod.hop_count_cdf(profile, args.n, scheme, h_max=args.h_max)
        srows.append([res.profile, res.scheme, res.n, _fmt(res.mean), _fmt(res.residual_mass)])
        for h, c in enumerate(res.cdf, start=1):
            crows.append([res.profile, res.scheme, h, _fmt(c)])
        payload[scheme] = {
            "mean": res.mean,
            "cdf": res.cdf,
            "residual_mass": res.residual_mass,
            "truncation_loss": res.truncation_loss,
            "law_source": res.law_source,
        }
        flag = "  [residual mass warning]" if res.residual_warning else ""
        print(f"model {res.profile} {res.scheme} n={res.n}: mean={res.mean:.5f} "
              f"residual={res.residual_mass:.3g}{flag}")
    _write_csv(out / "model_summary.csv", ["profile", "scheme", "n", "mean", "residual_mass"], srows)
    _write_csv(out / "model_cdf.csv", ["profile", "scheme", "hops", "cdf"], crows)
    _write_json(out / "model.json", payload)
    return 0


def cmd_bounds(args) -> int:
    profile = get_profile(args.profile)
    out = Path(args.out)
    grid = bounds_mod.default_grid(args.n_min, args.n_max, args.points)
    curve = bounds_mod.bound_curve(profile, grid)
    rows = [[curve.profile, n, _fmt(v)] for n, v in curve.points]
    _write_csv(out / "bounds.csv", ["profile", "n", "bound"], rows)
    peak = max(v for _, v in curve.points)
    print(f"bounds {curve.profile}: {len(curve.points)} points, max={peak:.3g}")
    return 0


def _read_cdf_csv(path: Path, value_col: str) -> dict:
    if not path.exists():
        raise UsageError(f"missing input file: {path}")
    out: dict = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            key = (row["profile"], row["scheme"])
            out.setdefault(key, {})[int(row["hops"])] = float(row[value_col])
    return out


def cmd_compare(args) -> int:
    out = Path(args.out)
    sim = _read_cdf_csv(Path(args.sim_cdf), "cumulative_fraction")
    mod = _read_cdf_csv(Path(args.model_cdf), "cdf")
    rows = []
    for key in sorted(set(sim) & set(mod)):
        s, m = sim[key], mod[key]
        hmax = max(max(s), max(m))
        gap = 0.0
        prev_s = prev_m = 0.0
        mean_s = mean_m = 0.0
        for h in range(1, hmax + 1):
            cs = s.get(h, 1.0 if h > max(s) else prev_s)
            cm = m.get(h, 1.0 if h > max(m) else prev_m)
            gap = max(gap, abs(cs - cm))
            mean_s += h * (cs - prev_s)
            mean_m += h * (cm - prev_m)
            prev_s, prev_m = cs, cm
        rel = abs(mean_s - mean_m) / mean_s * 100.0 if mean_s else 0.0
        rows.append([key[0], key[1], _fmt(mean_s), _fmt(mean_m), _fmt(rel), _fmt(gap)])
        print(f"compare {key[0]} {key[1]}: sim_mean={mean_s:.5f} model_mean={mean_m:.5f} "
              f"rel_gap={rel:.3f}% max_cdf_gap={gap:.4f}")
    if not rows:
        raise UsageError("no joinable (profile, scheme) rows between the two CDF files")
    _write_csv(out / "model_vs_sim.csv",
               ["profile", "scheme", "mean_sim", "mean_model", "rel_mean_gap_pct", "max_cdf_gap"],
               rows)
    return 0


def cmd_bitgain(args) -> int:
    out = Path(args.out)
    ks = [int(x) for x in args.k_set.split(",") if x]
    rows = []
    all_dominant = True
    for l in range(args.l_min, args.l_max + 1):
        for k in ks:
            gs = model_mod.bitgain_standard(l, k)
            gd = model_mod.bitgain_diverse(l, k)
            dom = gd >= gs - 1e-12
            all_dominant &= dom
            rows.append([l, k, _fmt(gs), _fmt(gd), str(dom).lower()])
    _write_csv(out / "bitgain.csv", ["l", "k", "bitgain_standard", "bitgain_diverse", "dominant"], rows)
    print(f"bitgain: {len(rows)} rows, dominance {'holds' if all_dominant else 'VIOLATED'}")
    return 0 if all_dominant else 2


# ------------------------------------------------------------------------ main


def build_parser() -> _Parser:
    p = _Parser(prog="kadlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scheme=True):
        sp.add_argument("--profile", choices=["mdht", "imdht", "kad"], default=None)
        sp.add_argument("--n", type=int, default=None)
        if scheme:
            sp.add_argument("--scheme", choices=list(SCHEMES), default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--config", default=None)
        sp.add_argument("--alpha", type=int, default=None)
        sp.add_argument("--beta", type=int, default=None)

    ps = sub.add_parser("simulate", help="run seeded lookup experiments")
    common(ps)
    ps.add_argument("--compare", action="store_true")
    ps.add_argument("--churn", type=float, default=None, help="mean session length in seconds")
    ps.add_argument("--lookups", type=int, default=None)
    ps.add_argument("--runs", type=int, default=None)
    ps.add_argument("--dump-tables", dest="dump_tables", type=int, default=0,
                    help="write the first N routing tables of the run-1 network as JSON lines")

    pm = sub.add_parser("model", help="analytical hop-count distribution")
    common(pm)
    pm.add_argument("--compare", action="store_true")
    pm.add_argument("--h-max", dest="h_max", type=int, default=None)

    pb = sub.add_parser("bounds", help="empty-bucket termination error bound")
    pb.add_argument("--profile", choices=["mdht", "imdht", "kad"], default=None)
    pb.add_argument("--n-min", dest="n_min", type=int, default=None)
    pb.add_argument("--n-max", dest="n_max", type=int, default=None)
    pb.add_argument("--points", type=int, default=None)
    pb.add_argument("--out", default=None)
    pb.add_argument("--config", default=None)

    pc = sub.add_parser("compare", help="join simulated and model CDFs")
    pc.add_argument("--sim-cdf", dest="sim_cdf", default=None)
    pc.add_argument("--model-cdf", dest="model_cdf", default=None)
    pc.add_argument("--out", default=None)
    pc.add_argument("--config", default=None)

    pg = sub.add_parser("bitgain", help="expected one-hop bit gain table")
    pg.add_argument("--l-min", dest="l_min", type=int, default=None)
    pg.add_argument("--l-max", dest="l_max", type=int, default=None)
    pg.add_argument("--k-set", dest="k_set", default=None)
    pg.add_argument("--out", default=None)
    pg.add_argument("--config", default=None)

    return p


_DEFAULTS = {
    "simulate": {"profile": "kad", "n": 10000, "scheme": STANDARD, "seed": 42, "out": "out",
                 "lookups": 500, "runs": 10},
    "model": {"profile": "kad", "n": 10000, "scheme": STANDARD, "seed": 42, "out": "out",
              "h_max": 16},
    "bounds": {"profile": "kad", "n_min": 1000, "n_max": 4_000_000, "points": 60, "out": "out"},
    "compare": {"sim_cdf": "out/cdf.csv", "model_cdf": "out/model_cdf.csv", "out": "out"},
    "bitgain": {"l_min": 0, "l_max": 8, "k_set": "2,4,8,10,16,32,64,128", "out": "out"},
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(getattr(args, "config", None))
        defaults = dict(_DEFAULTS[args.command])
        _merge(args, config, list(defaults) + ["scheme", "churn", "alpha", "beta"])
        for key, val in defaults.items():
            if getattr(args, key, None) is None:
                setattr(args, key, val)
        if getattr(args, "n", None) is not None and args.n < 1:
            raise UsageError("--n must be >= 1")
        if getattr(args, "runs", None) is not None and args.runs < 2:
            raise UsageError("--runs must be >= 2")
        if args.command == "bounds" and (args.points is None or args.points < 1):
            raise UsageError("--points must be >= 1 (empty grid)")
        handler = {
            "simulate": cmd_simulate,
            "model": cmd_model,
            "bounds": cmd_bounds,
            "compare": cmd_compare,
            "bitgain": cmd_bitgain,
        }[args.command]
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
