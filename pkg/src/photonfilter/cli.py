"""Command-line entry point: ``photonfilter <command> [options]``.

Exit codes: 0 success, 1 numerical failure or failed validation, 2 usage or
input errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, dump_config, parse_config
from .ensemble import EnsembleError, run_ensemble
from .homodyne import simulate_homodyne
from .master import NumericalAbort, integrate_master, local_maxima
from .photocount import JumpRateError, simulate_photocount

log = logging.getLogger("photonfilter")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


class _Usage(Exception):
    pass


def _load(args) -> RunConfig:
    if args.config is None and args.preset is None:
        raise _Usage("one of --config or --preset is required")
    cfg = parse_config(args.config, preset=args.preset)
    over = {"t_final": args.t_final, "dt": args.dt, "stride": args.stride}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "N", None) is not None:
        over["N"] = args.N
    if getattr(args, "mode", None) is not None:
        over["mode"] = args.mode
    cfg = cfg.with_overrides(**over)
    cfg.pulse_set()  # re-check the window after overrides
    return cfg


def _open_out(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def _write_rows(path, header, rows):
    fh, close = _open_out(path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if close:
            fh.close()


def cmd_master(args) -> int:
    cfg = _load(args)
    model, pulses = cfg.model(), cfg.pulse_set()
    sol = integrate_master(model, pulses, cfg.t_final, cfg.dt, stride=cfg.stride)
    st = sol.structure
    obs = cfg.observables
    traces = np.trace(sol.data, axis1=-2, axis2=-1)
    exps = {lab: sol.data.conj().reshape(len(sol), st.count, -1) @ np.asarray(X).reshape(-1)
            for lab, X in obs.items()}
    rows = []
    for i, t in enumerate(sol.times):
        for c in range(st.count):
            l, r = st.label(c)
            tr = traces[i, c]
            base = [_fmt(t), l, r]
            if not obs:
                rows.append(base + ["", _fmt(tr.real), _fmt(tr.imag), "", ""])
            for lab in obs:
                e = exps[lab][i, c]
                rows.append(base + [lab, _fmt(tr.real), _fmt(tr.imag), _fmt(e.real), _fmt(e.imag)])
    _write_rows(args.out, ["t", "pair_id_l", "pair_id_r", "observable", "re_tr", "im_tr",
                           "re_exp_X", "im_exp_X"], rows)
    for lab in obs:
        series = exps[lab][:, 0].real
        peaks = ", ".join(f"{v:.5f} at t={t:.3f}" for t, v in local_maxima(sol.times, series))
        print(f"{lab}: max {series.max():.6f}; local maxima: {peaks or 'none'}", file=sys.stderr)
    print(f"max trace drift {sol.max_trace_drift():.2e}", file=sys.stderr)
    return 0


def _read_column(path: str) -> np.ndarray:
    vals = []
    for no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            vals.append(float(line.split(",")[0]))
        except ValueError:
            raise ValueError(f"{path}:{no}: expected a number, got {line!r}") from None
    return np.array(vals)


def _write_column(path: str, values):
    Path(path).write_text("".join(f"{_fmt(v)}\n" for v in values), encoding="utf-8")


def cmd_homodyne(args) -> int:
    cfg = _load(args)
    replay = _read_column(args.replay) if args.replay else None
    rec = simulate_homodyne(cfg.model(), cfg.pulse_set(), cfg.t_final, cfg.dt, seed=cfg.seed,
                            stride=cfg.stride, observables=cfg.observables,
                            renormalize=args.renormalize, replay=replay, keep_states=False)
    steps = np.rint(rec.times / rec.dt).astype(int)
    Y = np.concatenate(([0.0], np.cumsum(rec.dY)))
    inc = np.diff(Y[steps], prepend=0.0)
    labels = list(rec.conditional)
    rows = [[_fmt(t), _fmt(inc[i])] + [_fmt(rec.conditional[lab][i]) for lab in labels]
            + [_fmt(rec.trace_drift[steps[i]])] for i, t in enumerate(rec.times)]
    _write_rows(args.out, ["t", "dY"] + [f"re_{lab}" for lab in labels] + ["trace_drift"], rows)
    if args.record:
        _write_column(args.record, rec.dY)
    return 0


def cmd_photocount(args) -> int:
    cfg = _load(args)
    replay = _read_column(args.replay) if args.replay else None
    rec = simulate_photocount(cfg.model(), cfg.pulse_set(), cfg.t_final, cfg.dt, seed=cfg.seed,
                              stride=cfg.stride, observables=cfg.observables, replay=replay,
                              keep_states=False)
    labels = list(rec.conditional)
    rows = [[_fmt(t), int(rec.counts[i])] + [_fmt(rec.conditional[lab][i]) for lab in labels]
            for i, t in enumerate(rec.times)]
    _write_rows(args.out, ["t", "n_cum"] + [f"re_{lab}" for lab in labels], rows)
    if args.record:
        _write_column(args.record, rec.jump_times)
    print(f"{len(rec.jump_times)} detections", file=sys.stderr)
    return 0


def cmd_ensemble(args) -> int:
    cfg = _load(args)
    if cfg.mode == "none":
        cfg = cfg.with_overrides(mode="homodyne")
    spec = cfg.ensemble_spec()
    summary = run_ensemble(spec, cfg.model(), cfg.pulse_set(), cfg.t_final, cfg.dt,
                           workers=args.workers)
    labels = summary.labels
    header = ["t"]
    for lab in labels:
        header += [f"mean_{lab}", f"stderr_{lab}", f"master_{lab}"]
    rows = []
    for i, t in enumerate(summary.times):
        row = [_fmt(t)]
        for lab in labels:
            row += [_fmt(summary.mean[lab][i]), _fmt(summary.stderr[lab][i]),
                    _fmt(summary.master[lab][i])]
        rows.append(row)
    _write_rows(args.out, header, rows)
    notes = [f"ensemble of {spec.N} {spec.detection} trajectories, base seed {spec.base_seed}",
             f"wall time {summary.wall_time:.2f} s",
             f"failures {summary.failures}",
             f"top-component sup-norm error vs master {summary.component_errors()[0]:.4g}"]
    notes += [f"sup-norm error {lab} {summary.sup_error(lab):.4g}" for lab in labels]
    if spec.detection == "photocount":
        notes.append(f"mean detections {summary.mean_counts():.4f}")
    if args.out and args.out != "-":
        Path(args.out + ".meta").write_text(dump_config(cfg, notes), encoding="utf-8")
    for line in notes:
        print(line, file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    from .validate import run_all

    results = run_all()
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="photonfilter",
                                description="n-photon master equations and quantum filters")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="configuration file")
        sp.add_argument("--preset", help="named preset (a config file may override it)")
        sp.add_argument("--out", help="output CSV (default: stdout)")
        sp.add_argument("--t-final", type=float, dest="t_final")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--stride", type=int, help="output every STRIDE-th step")

    sp = sub.add_parser("master", help="integrate the master-equation hierarchy")
    common(sp)
    sp.set_defaults(func=cmd_master)

    for name, func, extra in (("filter-homodyne", cmd_homodyne, "dY increments, one per step"),
                              ("filter-photocount", cmd_photocount, "detection times, one per line")):
        sp = sub.add_parser(name, help=f"simulate one trajectory ({name.split('-')[1]})")
        common(sp)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replay", help=f"filter a recorded measurement ({extra})")
        sp.add_argument("--record", help=f"write the measurement record ({extra})")
        if name == "filter-homodyne":
            sp.add_argument("--renormalize", action="store_true",
                            help="rescale the hierarchy to unit top trace after every step")
        sp.set_defaults(func=func)

    sp = sub.add_parser("ensemble", help="average many trajectories and compare with the master equation")
    common(sp)
    sp.add_argument("--seed", type=int, help="base seed; trajectory i uses seed + i")
    sp.add_argument("--N", type=int, help="number of trajectories")
    sp.add_argument("--mode", choices=("homodyne", "photocount"))
    sp.add_argument("--workers", type=int,
                    help="worker processes (default: PHOTONFILTER_THREADS, 0 = all CPUs)")
    sp.set_defaults(func=cmd_ensemble)

    sp = sub.add_parser("validate", help="run the internal oracle checks")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _Usage as exc:
        parser.error(str(exc))
    except (NumericalAbort, JumpRateError, EnsembleError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
