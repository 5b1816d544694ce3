"""Command-line entry point: ``qpburst <subcommand> ...``.

Outputs are CSV (comma, '.' decimal, header row, LF endings) or JSON, each
with a ``<output>.manifest.json`` side file recording how it was produced.
Exit codes: 0 success, 2 usage, 3 input, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 2, 3, 4


class InputError(Exception):
    pass


@dataclass
class RunManifest:
    subcommand: str
    profile_hash: str
    seeds: list
    parameters: dict
    outputs: list = field(default_factory=list)
    tool_version: str = __version__

    def write(self, path: Path) -> Path:
        side = Path(str(path) + ".manifest.json")
        side.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n", newline="\n")
        return side


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    Path(path).write_text(buf.getvalue(), newline="\n")


def _profile(args):
    from .device_model import ConfigError, default_profile, load_config
    try:
        return load_config(args.profile) if args.profile else default_profile()
    except (OSError, ConfigError) as e:
        raise InputError(f"cannot load profile: {e}") from e


def _jobs(args) -> int:
    return max(1, args.jobs or os.cpu_count() or 1)


def _params(args) -> dict:
    skip = {"func", "profile"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}


# ---------------------------------------------------------------------------
# subcommands


def cmd_synthesize(args) -> int:
    from . import impact_synthesizer as isyn
    prof = _profile(args)
    series = isyn.generate_dataset(prof, args.experiment, args.duration, seed=args.seed)
    out = Path(args.out)
    if args.csv:
        out.write_text(series.to_csv(), newline="\n")
    else:
        series.save(out)
    RunManifest("synthesize", prof.profile_hash(), [args.seed], _params(args), [str(out)]).write(out)
    print(f"wrote {out} ({series.n_qubits} qubits x {series.n_cycles} cycles, "
          f"{len(series.metadata['events'])} impacts)")
    return 0


def _load_series(path):
    from .impact_synthesizer import GridSeries
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as e:
        raise InputError(f"cannot read {p}: {e}") from e
    if len(data) == 0:
        return None
    try:
        return GridSeries.from_bytes(data)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise InputError(f"{p} is not a series container: {e}") from e


def cmd_detect(args) -> int:
    from . import burst_pipeline as bp
    series = _load_series(args.inp)
    cfg = bp.FilterConfig.scan() if args.mode == "scan" else bp.FilterConfig.interleaved()
    if args.threshold is not None:
        cfg = bp.FilterConfig(cfg.ma_window, cfg.tau_MF, args.threshold)
    reports, mf_rows = [], []
    if series is not None and series.n_cycles > 0:
        kinds = ["R"] if args.mode == "scan" else [k for k in ("R", "M") if series.slots_of(k)]
        if not kinds or not series.slots_of(kinds[0]):
            raise InputError("series lacks the sequences required by this mode")
        dt = series.period
        found = {}
        for kind in kinds:
            times, sigma = bp.error_count_series(series, kind)
            if sigma.size < 2 * int(round(cfg.ma_window / dt)) + 1:
                w = max(10, sigma.size // 4)
            else:
                w = int(round(cfg.ma_window / dt))
            d = bp.subtract_moving_average(sigma, w) if sigma.size > 20 else sigma - sigma.mean()
            mf = bp.matched_filter(d, cfg.tau_MF, dt)
            mf_rows.append((kind, times, mf))
            for i in bp.detect_bursts(mf, cfg.threshold, int(round(cfg.refractory_time / dt))):
                found.setdefault(int(i), (kind, float(mf[i])))
        refr = int(round(cfg.refractory_time / dt))
        last = -10**18
        for i in sorted(found):
            if i - last < refr:
                continue
            last = i
            kind, peak = found[i]
            cls = "impact"
            if args.mode == "interleaved" and series.slots_of("M"):
                s = series.slots_of("M")[0]
                m = series.outcomes[s][series.masks[s]]
                lo, hi = max(0, i - int(50e-6 / dt)), min(series.n_cycles, i + int(1e-3 / dt))
                pre = m[:, max(0, lo - int(50e-3 / dt)):lo]
                cls, _ = bp.classify_box_event(m[:, lo:hi], dt, pre if pre.shape[1] > 60 else None)
            reports.append(bp.BurstReport(float(series.times[i]), peak, classification=cls))
    out = Path(args.out)
    out.write_text(bp.reports_to_json(reports, mode=args.mode, threshold=cfg.threshold,
                                      tau_MF=cfg.tau_MF, ma_window=cfg.ma_window) + "\n", newline="\n")
    outputs = [str(out)]
    if args.mf_csv:
        rows = [(k, t, v) for k, ts, mf in mf_rows for t, v in zip(ts, mf)]
        write_csv(args.mf_csv, ["kind", "time_s", "mf"], rows)
        outputs.append(str(args.mf_csv))
    meta = series.metadata if series is not None else {}
    RunManifest("detect", meta.get("profile_hash", ""), [meta.get("seed")], _params(args), outputs).write(out)
    print(f"{len(reports)} bursts")
    return 0


def cmd_tomography_fit(args) -> int:
    from . import impact_synthesizer as isyn
    from .burst_pipeline import burst_size
    prof = _profile(args)
    series = _load_series(args.inp)
    if series is None or not series.slots_of("RX") or not series.slots_of("RY"):
        raise InputError("tomography-fit needs a series with RX and RY sequences")
    tau = series.metadata["sequences"][series.slots_of("RX")[0]]["free_time"]
    i0 = int(np.searchsorted(series.times, args.t0))
    n = int(args.span / series.period) // 10 * 10
    if i0 + n > series.n_cycles or n < 10:
        raise InputError("t0 + span exceeds the series")
    rx = series.outcomes[series.slots_of("RX")[0], :, i0:i0 + n]
    ry = series.outcomes[series.slots_of("RY")[0], :, i0:i0 + n]
    c, s = isyn.tomography_windows(rx, ry)
    tw = (np.arange(c.shape[1]) * 10 + 4.5) * series.period
    af = isyn._shift_coefficients(prof) * prof.f_q
    r_guess = prof.impacts.recombination_rate
    est = np.array([isyn.fit_initial_shift(tw, c[q], s[q], af[q], r_guess, tau=tau)
                    for q in range(c.shape[0])])
    try:
        r, _ = isyn.fit_event_recombination(tw, c, s, af, r_guess, tau=tau)
    except ValueError:
        r = None
    res = {"t0": args.t0, "tau": tau, "shifts_hz": est.tolist(), "recombination_rate": r,
           "size": burst_size(est, args.sigma_f), "sigma_f": args.sigma_f}
    out = Path(args.out)
    out.write_text(json.dumps(res, indent=1) + "\n", newline="\n")
    RunManifest("tomography-fit", prof.profile_hash(), [series.metadata.get("seed")], _params(args),
                [str(out)]).write(out)
    print(f"size {res['size']}, r = {r}")
    return 0


def cmd_qp_curves(args) -> int:
    from . import qp_spectral as qs
    from .device_model import normal_phonon_time
    prof = _profile(args)
    qp = prof.qubits[0]
    tau = args.tau_phN if args.tau_phN else normal_phonon_time(prof.material, qp.delta_L)
    times = np.geomspace(args.t_min, args.t_max, args.points)
    sol = qs.default_scaling_solution()
    p1, t1 = qs.burst_error_curves(args.x_qp, tau, args.n_scale, times, args.wait, qp, sol)
    out = Path(args.out)
    write_csv(out, ["time_s", "sigma_P1", "sigma_T1"], zip(times, p1, t1))
    outputs = [str(out)]
    if args.scaling_out:
        write_csv(args.scaling_out, ["xi", "phi"], zip(sol.xi_grid, sol.phi))
        outputs.append(str(args.scaling_out))
    ratio = qs.threshold_crossing(times, t1) / qs.threshold_crossing(times, p1)
    RunManifest("qp-curves", prof.profile_hash(), [], dict(_params(args), tau_phN_used=tau,
                crossing_ratio=ratio), outputs).write(out)
    print(f"T1/P1 crossing ratio {ratio:.2f} (formula {qs.duration_ratio_formula(qp.d_delta, qp.f_q):.2f})")
    return 0


def cmd_shift_table(args) -> int:
    from .junction_response import shift_coefficients
    prof = _profile(args)
    roles = prof.grid.roles()
    rows = []
    for i, (q, (r, c)) in enumerate(zip(prof.qubits, prof.grid.active_sites)):
        c_L, c_H = shift_coefficients(q)
        rows.append((i, r, c, roles[i], q.f_q, c_L, c_H, -c_L * args.x_qp * q.f_q))
    out = Path(args.out)
    write_csv(out, ["qubit", "row", "col", "role", "f_q_hz", "c_L", "c_H", "shift_hz"], rows)
    RunManifest("shift-table", prof.profile_hash(), [], _params(args), [str(out)]).write(out)
    return 0


def _sweep_one(job):
    from . import repcode_sim as rc
    basis, variant, n_data, amp, traj, seed, j, cycles = job
    spec = rc.CircuitSpec(basis, variant, n_data)
    _, p, e = rc.sweep_detection_vs_shift(spec, [amp], trajectories=traj, n_cycles=cycles,
                                          seed=seed + 7919 * j)
    return float(p[0]), float(e[0])


def run_sweep(basis, variant, n_data, amps, traj, seed, jobs, cycles=15):
    """Detection probability per amplitude; each amplitude has its own seed,
    so the result does not depend on ``jobs``."""
    tasks = [(basis, variant, n_data, float(a), traj, seed, j, cycles) for j, a in enumerate(amps)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(min(jobs, len(tasks))) as ex:
            res = list(ex.map(_sweep_one, tasks))
    else:
        res = [_sweep_one(t) for t in tasks]
    return np.array([r[0] for r in res]), np.array([r[1] for r in res])


def _amps(args):
    if args.amps:
        return np.array([float(x) * 1e6 for x in args.amps.split(",")])
    return -np.linspace(0, args.max_shift_mhz, args.points) * 1e6


def cmd_repcode_sweep(args) -> int:
    amps = _amps(args)
    p, e = run_sweep(args.basis, args.variant, args.n_data, amps, args.traj, args.seed, _jobs(args),
                     args.cycles)
    out = Path(args.out)
    write_csv(out, ["shift_hz", "detection_probability", "stderr"], zip(amps, p, e))
    RunManifest("repcode sweep", "", [args.seed], _params(args), [str(out)]).write(out)
    return 0


def cmd_repcode_interleaved(args) -> int:
    from . import burst_pipeline as bp
    from . import impact_synthesizer as isyn
    from . import repcode_sim as rc
    prof = _profile(args)
    pos = prof.grid.positions()
    chain = prof.grid.chain()
    q = chain[len(chain) // 2]
    af = isyn._shift_coefficients(prof) * prof.f_q
    ev = isyn.ImpactEvent(1e-3, tuple(pos[q]), args.peak_shift_mhz * 1e6 / af[q],
                          prof.impacts.spatial_scale, (args.t_t1_us * 1e-6 / 22.6, args.t_t1_us * 1e-6),
                          prof.impacts.recombination_rate)
    res = rc.run_interleaved(rc.CircuitSpec(args.basis, args.variant, args.n_data), prof, ev,
                             args.duration_us * 1e-6, seed=args.seed, trajectories=args.traj)
    fits = {k: bp.fit_burst_decay(res.times, y, ev.t0)
            for k, y in (("qec", res.qec_probability), ("R", res.r_errors), ("T1", res.t1_errors))}
    out = Path(args.out)
    write_csv(out, ["time_s", "qec_detection_probability", "r_errors", "t1_errors"],
              zip(res.times - ev.t0, res.qec_probability, res.r_errors, res.t1_errors))
    # one realization per channel, in the container that `detect` reads
    s = res.series
    qec = isyn.GridSeries(["M"], s.offsets[:1], s.period, s.outcomes[:1], s.masks[:1], s.t_start, s.metadata)
    mon = isyn.GridSeries(["R", "T1"], s.offsets[1:], s.period, s.outcomes[1:], s.masks[1:], s.t_start,
                          s.metadata)
    stem = out.with_suffix("")
    paths = [Path(f"{stem}_qec.bin"), Path(f"{stem}_monitor.bin")]
    qec.save(paths[0])
    mon.save(paths[1])
    RunManifest("repcode interleaved", prof.profile_hash(), [args.seed],
                dict(_params(args), decay_times=fits), [str(out)] + [str(p) for p in paths]).write(out)
    print(json.dumps(fits))
    return 0


def cmd_reproduce(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fig = args.figure
    if fig == "fig6c":
        amps = -np.linspace(0, 5, 21) * 1e6
        for v in ("i", "ii", "iii"):
            p, e = run_sweep("X", v, 3, amps, args.traj, args.seed, _jobs(args))
            out = outdir / f"fig6c_{v}.csv"
            write_csv(out, ["shift_hz", "detection_probability", "stderr"], zip(amps, p, e))
            RunManifest("reproduce fig6c", "", [args.seed], _params(args), [str(out)]).write(out)
        return 0
    if fig == "fig6b":
        from . import repcode_sim as rc
        for v in ("i", "ii", "iii"):
            spec = rc.CircuitSpec("X", v, 3)
            prof = rc.InjectionProfile(-1e6, 10, 20)
            rec = rc.run_trajectories(spec, prof, cycles=40, trajectories=args.traj, seed=args.seed)
            curve = rec.detections.mean(axis=(0, 1))
            out = outdir / f"fig6b_{v}.csv"
            write_csv(out, ["cycle", "detection_probability"], enumerate(curve))
            RunManifest("reproduce fig6b", "", [args.seed], _params(args), [str(out)]).write(out)
        return 0
    if fig == "fig3c":
        from . import impact_synthesizer as isyn
        prof = _profile(args)
        pos = prof.grid.positions()
        af = isyn._shift_coefficients(prof) * prof.f_q
        q = 30
        ev = isyn.ImpactEvent(1e-3, tuple(pos[q]), 2.7e6 / af[q], prof.impacts.spatial_scale,
                              recombination_rate=1 / 105e-9)
        sec = isyn.tomography_section(prof, ev, ev.t0, args.seed)
        out = outdir / "fig3c.csv"
        write_csv(out, ["time_s", "window_shift_hz"], zip(sec.times, sec.window_shift[q]))
        RunManifest("reproduce fig3c", prof.profile_hash(), [args.seed], _params(args), [str(out)]).write(out)
        return 0
    if fig == "burst-stats":
        from . import burst_pipeline as bp
        from . import impact_synthesizer as isyn
        prof = _profile(args)
        events, secs, sigma_f = isyn.tomography_campaign(prof, args.duration_h * 3600, args.seed)
        reps = [bp.BurstReport(s.t0, float("nan"), bp.burst_size(s.est_shift, sigma_f),
                               shifts=s.est_shift.tolist()) for s in secs]
        st = bp.ensemble_stats(reps, args.duration_h * 3600)
        out = outdir / "burst_stats_sizes.csv"
        write_csv(out, ["size", "count"], zip(st["size_bins"], st["size_hist"]))
        out2 = outdir / "burst_stats_shifts.csv"
        write_csv(out2, ["peak_shift_hz", "count"], zip(st["shift_bins"], st["shift_hist"]))
        RunManifest("reproduce burst-stats", prof.profile_hash(), [args.seed],
                    dict(_params(args), sigma_f=sigma_f, median_size=st["median_size"],
                         median_peak_shift=st["median_peak_shift"]), [str(out), str(out2)]).write(out)
        return 0
    if fig == "kinetic-curves":
        from . import qp_spectral as qs
        prof = _profile(args)
        qp = prof.qubits[0]
        tred = np.geomspace(1.0, 1e6, 61)
        exc, rel = qs.kinetic_burst_curves(qp, tred)
        out = outdir / "kinetic_curves.csv"
        write_csv(out, ["time_reduced", "excitation", "relaxation"], zip(tred, exc, rel))
        RunManifest("reproduce kinetic-curves", prof.profile_hash(), [], _params(args), [str(out)]).write(out)
        return 0
    raise InputError(f"unknown figure {fig!r}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qpburst", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", help="device profile TOML (default: built-in)")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", parents=[common], help="generate a synthetic measurement record")
    p.add_argument("--experiment", required=True,
                   choices=["scan_RET1", "tomography", "fast_T1", "excitation_P1", "interleaved_monitor"])
    p.add_argument("--duration", type=float, required=True, help="seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", action="store_true", help="write CSV instead of the binary container")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("detect", parents=[common], help="detect bursts in a record")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--mode", choices=["scan", "interleaved"], default="scan")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--mf-csv", default=None, help="also write the matched-filter trace")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("tomography-fit", parents=[common], help="per-qubit initial shifts and r")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--t0", type=float, required=True, help="burst start (s)")
    p.add_argument("--span", type=float, default=5e-3)
    p.add_argument("--sigma-f", type=float, default=67e3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tomography_fit)

    p = sub.add_parser("qp-curves", parents=[common], help="P1/T1 burst curves from the scaling solution")
    p.add_argument("--x-qp", type=float, default=1e-6)
    p.add_argument("--tau-phN", type=float, default=None)
    p.add_argument("--n-scale", type=float, default=1.0)
    p.add_argument("--wait", type=float, default=1e-6)
    p.add_argument("--t-min", type=float, default=1e-8)
    p.add_argument("--t-max", type=float, default=1e-2)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--out", required=True)
    p.add_argument("--scaling-out", default=None)
    p.set_defaults(func=cmd_qp_curves)

    p = sub.add_parser("shift-table", parents=[common], help="per-qubit shift coefficients")
    p.add_argument("--x-qp", type=float, default=1e-4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shift_table)

    p = sub.add_parser("repcode", help="repetition-code simulations")
    rsub = p.add_subparsers(dest="repcode_command", required=True)
    for name in ("sweep", "interleaved"):
        q = rsub.add_parser(name, parents=[common])
        q.add_argument("--variant", choices=["i", "ii", "iii", "plain", "echo"], default="i")
        q.add_argument("--basis", type=str.upper, choices=["X", "Z"], default="X")
        q.add_argument("--n-data", type=int, default=3)
        q.add_argument("--traj", type=int, default=2000)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--out", required=True)
        if name == "sweep":
            q.add_argument("--amps", default=None, help="comma-separated shifts in MHz")
            q.add_argument("--max-shift-mhz", type=float, default=5.0)
            q.add_argument("--points", type=int, default=21)
            q.add_argument("--cycles", type=int, default=15, help="cycles under the shift step")
            q.set_defaults(func=cmd_repcode_sweep)
        else:
            q.add_argument("--peak-shift-mhz", type=float, default=3.0)
            q.add_argument("--t-t1-us", type=float, default=10.0)
            q.add_argument("--duration-us", type=float, default=1500.0)
            q.set_defaults(func=cmd_repcode_interleaved, traj=64)

    p = sub.add_parser("reproduce", parents=[common], help="regenerate the data behind a figure")
    p.add_argument("figure", choices=["fig3c", "fig6b", "fig6c", "burst-stats", "kinetic-curves"])
    p.add_argument("--traj", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration-h", type=float, default=5.2)
    p.add_argument("--outdir", default=".")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    from .device_model import ConfigError
    from .qp_dynamics import FitError
    from .qp_spectral import ConvergenceError, StepSizeError
    from .repcode_sim import NumericError
    ap = build_parser()
    args = ap.parse_args(argv)          # exits with 2 on usage errors
    stage = getattr(args, "command", "?")
    try:
        return int(args.func(args) or 0)
    except (InputError, ConfigError, FileNotFoundError) as e:
        print(f"qpburst {stage}: input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, FitError, ConvergenceError, StepSizeError, FloatingPointError,
            np.linalg.LinAlgError) as e:
        print(f"qpburst {stage}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
