"""Command-line interface: simulate, tomo, skr, calibrate, sweep.

Every command accepts --seed / --out / --format, exits 0 on success and 2 on
a handled error (printing a machine-parsable ``error class=... msg=...`` line
to stderr), and stamps seed, tool version, and the scenario digest into every
output file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np
import yaml

from . import __version__, keyrate, linksim, quantum, report, tomography
from .calibrate import calibrate_scenario, _invert
from .errors import ConfigError, PathQkdError, ValidationError
from .keyrate import SkrParams, fit_sweep_model, skr_vs_distance
from .linksim import CountTable, ScheduleEntry, read_count_table, write_count_table
from .scenario import (Scenario, bundled_dataset_path, bundled_scenario_names,
                       load_bundled_scenario, load_scenario, save_scenario,
                       scenario_digest, scenario_to_dict)

TARGET_STATES = {
    "phi_plus": quantum.bell_phi_plus,
    "phi_minus": quantum.bell_phi_minus,
}


def _resolve_scenario(ref: str) -> Scenario:
    if os.path.exists(ref):
        return load_scenario(ref)
    return load_bundled_scenario(ref)


def _resolve_counts(ref: str) -> tuple[CountTable, dict]:
    if os.path.exists(ref):
        return read_count_table(ref)
    try:
        return read_count_table(bundled_dataset_path(ref))
    except ConfigError:
        raise ValidationError(f"counts file not found: {ref!r}") from None


def _meta(seed, digest=None, name=None) -> dict:
    meta = {"tool_version": __version__, "seed": seed}
    if name is not None:
        meta["scenario"] = name
    if digest is not None:
        meta["scenario_digest"] = digest
    return meta


def _write_json(path, doc: dict):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _parse_lengths(spec: str) -> list[float]:
    lengths = []
    for part in spec.split(","):
        part = part.strip()
        if ":" in part:
            pieces = part.split(":")
            if len(pieces) != 3:
                raise ConfigError(f"--lengths: bad range {part!r}, expected start:stop:count")
            start, stop, count = float(pieces[0]), float(pieces[1]), int(pieces[2])
            lengths.extend(np.linspace(start, stop, count).tolist())
        elif part:
            lengths.append(float(part))
    return sorted(set(lengths))


# ------------------------------------------------------------------ simulate

def cmd_simulate(args) -> int:
    scn = _resolve_scenario(args.scenario)
    if args.seed is not None:
        scn = replace(scn, seed=args.seed)
    digest = scenario_digest(scn)
    os.makedirs(args.out, exist_ok=True)

    started = time.monotonic()
    table, trace = linksim.simulate_counts(scn.link, scn.schedule, scn.seed,
                                           trace_stride=args.trace_stride)
    wall = time.monotonic() - started

    meta = _meta(scn.seed, digest, scn.name)
    write_count_table(os.path.join(args.out, "counts.json"), table, header=meta)
    report.write_phase_trace_csv(os.path.join(args.out, "phase_trace.csv"), trace, meta)
    save_scenario(os.path.join(args.out, "scenario_snapshot.yaml"), scn)
    report.fig_phase_trace(trace, os.path.join(args.out, "phase_trace.png"))
    if args.timestamps and args.timestamps > 0:
        linksim.export_timestamps(scn.link, args.timestamps, scn.seed,
                                  os.path.join(args.out, "timestamps.txt"))

    qber = keyrate.qber_report(table) if all(
        (b, b) in table.counts for b in quantum.BASES) else None
    run_record = {
        "tool_version": __version__,
        "seed": scn.seed,
        "scenario_name": scn.name,
        "scenario_digest": digest,
        "scenario": scenario_to_dict(scn),
        "counts_totals": {f"{a}{b}": table.total(a, b) for a, b in table.settings()},
        "accidental_estimate": {f"{a}{b}": table.accidental_estimate[(a, b)]
                                for a, b in table.settings()},
        "phase_trace_summary": trace.summary(),
        "qber": None if qber is None else {
            "qber_z": qber.qber_z, "qber_x": qber.qber_x, "qber_y": qber.qber_y,
            "avg_qber_zx": qber.avg_qber_zx(),
        },
        "wall_clock_s": wall,
    }
    _write_json(os.path.join(args.out, "run.json"), run_record)

    if args.format == "text":
        print(f"scenario {scn.name} (seed {scn.seed}, digest {digest})")
        for (a, b) in table.settings():
            counts = table.setting_counts(a, b)
            print(f"  {a}{b}: {' '.join(str(int(c)) for c in counts)}  "
                  f"({table.integration_s[(a, b)]:.3g} s)")
        if qber is not None:
            print(f"  QBER Z/X/Y: {100 * qber.qber_z:.2f}% / {100 * qber.qber_x:.2f}% "
                  f"/ {100 * qber.qber_y:.2f}%")
        print(f"  locked fraction: {trace.locked_fraction():.4f}")
    else:
        print(json.dumps(run_record))
    return 0


# ---------------------------------------------------------------------- tomo

def cmd_tomo(args) -> int:
    table, header = _resolve_counts(args.counts)
    data = tomography.TomographyDataset(table)
    target = TARGET_STATES[args.target]()
    os.makedirs(args.out, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    meta = _meta(seed, header.get("scenario_digest"), header.get("scenario"))

    result = tomography.mle_reconstruct(data)
    fid_point = quantum.fidelity(result.rho, target)
    chsh = quantum.chsh_max(result.rho)
    joint = tomography.joint_probability_matrix(data)
    overlap = tomography.matrix_overlap(joint,
                                        tomography.ideal_joint_probability_matrix())

    hist = tomography.monte_carlo_fidelity(data, target, args.runs, seed=seed,
                                           resample_scale=args.resample_scale)
    chsh_samples = tomography.monte_carlo_statistic(
        data, quantum.chsh_max, min(args.runs, args.chsh_runs), seed=seed + 1,
        resample_scale=args.resample_scale)

    report.write_density_matrix_csv(os.path.join(args.out, "density_matrix.csv"),
                                    result.rho, meta)
    report.write_density_matrix_polar_csv(
        os.path.join(args.out, "density_matrix_polar.csv"), result.rho, meta)
    report.write_fidelity_samples_csv(
        os.path.join(args.out, "fidelity_samples.csv"), hist.samples, meta)
    report.fig_density_matrix(result.rho, os.path.join(args.out, "density_matrix.png"))
    report.fig_fidelity_histogram(hist.samples, hist.mean, hist.std,
                                  os.path.join(args.out, "fidelity_histogram.png"))
    report.fig_joint_probabilities(joint, os.path.join(args.out,
                                                       "joint_probabilities.png"))

    doc = {
        "tool_version": __version__,
        "seed": seed,
        "counts_header": header,
        "target": args.target,
        "fidelity_point": fid_point,
        "fidelity_mean": hist.mean,
        "fidelity_std": hist.std,
        "monte_carlo_runs": int(args.runs),
        "excluded_runs": hist.excluded_runs,
        "chsh": chsh,
        "chsh_mc_mean": float(np.mean(chsh_samples)) if chsh_samples.size else None,
        "chsh_mc_std": float(np.std(chsh_samples)) if chsh_samples.size else None,
        "overlap": overlap,
        "joint_probabilities": joint.tolist(),
        "log_likelihood": result.log_likelihood,
        "mle_iterations": result.iterations,
        "mle_converged": result.converged,
        "physical_inversion": result.physical_inversion,
    }
    _write_json(os.path.join(args.out, "tomo_report.json"), doc)

    if args.format == "text":
        print(f"fidelity to {args.target}: {hist.mean:.4f} +/- {hist.std:.4f} "
              f"({args.runs} runs, {hist.excluded_runs} excluded)")
        print(f"CHSH S = {chsh:.4f}; joint-probability overlap = {overlap:.4f}")
    else:
        print(json.dumps(doc))
    return 0


# ----------------------------------------------------------------------- skr

def cmd_skr(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    params = SkrParams()
    label = "qber-input"
    sifted_rate = None
    header = {}

    if args.params is not None:
        scn = _resolve_scenario(args.params)
        params = scn.analysis
        label = scn.name

    if args.counts is not None:
        table, header = _resolve_counts(args.counts)
        rep = keyrate.qber_report(table)
        qz, qx, qy = rep.qber_z, rep.qber_x, rep.qber_y
        total = sum(table.total(b, b) for b in quantum.BASES)
        total_time = sum(table.integration_s[(b, b)] for b in quantum.BASES)
        # Measured mode: transmittance and efficiency live inside the rate.
        params = replace(params, raw_rate_hz=total / total_time, alpha=1.0, eta=1.0)
        label = header.get("scenario", label)
    elif args.qber is not None:
        qz, qx, qy = args.qber
    else:
        raise ConfigError("skr: give a counts file or --qber Z X Y values")

    rep_tuple = (label, qz, qx, qy)
    key_basis, check_basis = keyrate.select_key_bases(
        keyrate.QberReport(qz, qx, qy, 0, 0, 0), f=params.f)
    asymptotic = keyrate.skr_asymptotic(qz, qx, params)
    sifted_rate = params.sifted_rate_bps()
    blocks = [int(float(b)) for b in args.blocks.split(",") if b.strip()]
    finite = [keyrate.skr_finite(qz, qx, params, n, sifted_rate)
              for n in sorted(blocks)]

    meta = _meta(seed, header.get("scenario_digest"), label)
    report.write_qber_table_csv(os.path.join(args.out, "qber_table.csv"),
                                [rep_tuple], meta)
    report.write_skr_table_csv(os.path.join(args.out, "skr_table.csv"),
                               asymptotic, finite, meta)
    report.fig_skr_blocks(asymptotic, finite, os.path.join(args.out, "skr_finite.png"))

    doc = {
        "tool_version": __version__,
        "seed": seed,
        "scenario": label,
        "qber": {"qber_z": qz, "qber_x": qx, "qber_y": qy,
                 "avg_qber_zx": 0.5 * (qz + qx)},
        "key_bases": [key_basis, check_basis],
        "params": {
            "f": params.f, "sift_ratio": params.sift_ratio,
            "raw_rate_hz": params.raw_rate_hz, "alpha": params.alpha,
            "eta": params.eta, "eps_sec": params.eps_sec, "eps_cor": params.eps_cor,
        },
        "sifted_rate_bps": sifted_rate,
        "skr_asymptotic_bps": asymptotic,
        "finite_key": [
            {"block_size": r.block_size, "skr_fin_bps": r.skr_fin_bps,
             "delta": r.delta, "lambda_ev_bits": r.lambda_ev_bits,
             "acquisition_time_s": r.acquisition_time_s,
             "block_too_small": r.block_too_small}
            for r in finite
        ],
    }
    _write_json(os.path.join(args.out, "skr_report.json"), doc)

    if args.format == "text":
        print(f"QBER Z/X/Y: {100 * qz:.2f}% / {100 * qx:.2f}% / {100 * qy:.2f}%  "
              f"(key bases {key_basis}/{check_basis})")
        print(f"asymptotic SKR: {asymptotic:.4g} bit/s")
        for r in finite:
            print(f"  n={r.block_size:.0e}: {r.skr_fin_bps:.4g} bit/s")
    else:
        print(json.dumps(doc))
    return 0


# ------------------------------------------------------------------ calibrate

def cmd_calibrate(args) -> int:
    with open(args.targets) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "targets" not in doc:
        raise ConfigError(f"{args.targets}: expected a mapping with a 'targets' section")
    scenario_ref = args.scenario or doc.get("scenario")
    if not scenario_ref:
        raise ConfigError("calibrate: no scenario given (targets file or --scenario)")
    scn = _resolve_scenario(scenario_ref)
    if args.seed is not None:
        scn = replace(scn, seed=args.seed)

    knobs = doc.get("fit")
    result = calibrate_scenario(
        scn, doc["targets"], knobs=knobs, n_seeds=args.seeds,
        max_rounds=args.rounds, residual_tol=args.tol,
        sim_time_scale=args.time_scale)

    os.makedirs(args.out, exist_ok=True)
    fitted_path = os.path.join(args.out, f"{result.scenario.name}.fitted.yaml")
    save_scenario(fitted_path, result.scenario)
    _write_json(os.path.join(args.out, "calibration_report.json"), {
        "tool_version": __version__,
        "seed": scn.seed,
        "scenario": result.scenario.name,
        "targets": doc["targets"],
        "residuals": result.residuals,
        "metrics": result.metrics,
        "rounds": result.rounds,
        "evaluations": result.evaluations,
        "converged": result.converged,
    })
    if args.format == "text":
        print(f"calibrated {result.scenario.name} in {result.rounds} round(s), "
              f"{result.evaluations} evaluation(s)")
        for key in sorted(result.residuals):
            print(f"  {key}: achieved {result.metrics[key]:.6g} "
                  f"(residual {result.residuals[key]:.2%})")
        print(f"wrote {fitted_path}")
    else:
        print(json.dumps({"residuals": result.residuals, "fitted": fitted_path}))
    return 0


# ---------------------------------------------------------------------- sweep

def cmd_sweep(args) -> int:
    near = _resolve_scenario(args.near)
    far = _resolve_scenario(args.far)
    for scn, ref in ((near, args.near), (far, args.far)):
        missing = {"qber_z", "qber_x", "coincidence_rate_hz",
                   "skr_asymptotic_bps"} - set(scn.expected)
        if missing:
            raise ConfigError(
                f"sweep: scenario {ref!r} lacks calibrated 'expected' values {sorted(missing)}"
            )
    lengths = _parse_lengths(args.lengths)
    seed = args.seed if args.seed is not None else near.seed

    params = near.analysis.with_raw_rate(near.expected["coincidence_rate_hz"])
    far_params = far.analysis.with_raw_rate(far.expected["coincidence_rate_hz"])
    acc_to_true = (linksim.expected_accidental_rate(near.link)
                   / max(linksim.expected_coincidence_rate(near.link), 1e-12))
    model = fit_sweep_model(
        anchor_length_km=near.link.channel.length_km,
        sifted_rate_anchor_bps=params.sifted_rate_bps(),
        qber_z_anchor=near.expected["qber_z"],
        qber_x_anchor=near.expected["qber_x"],
        far_length_km=far.link.channel.length_km,
        qber_z_far=far.expected["qber_z"],
        qber_x_far=far.expected["qber_x"],
        sifted_rate_far_bps=far_params.sifted_rate_bps(),
        params=params,
        accidental_to_true_anchor=acc_to_true,
    )
    analytic = skr_vs_distance(model, lengths)

    rows = []
    seeds = np.random.SeedSequence(seed).spawn(len(lengths))
    for (length, skr_model), length_seed in zip(analytic, seeds):
        skr_sim = None
        if args.simulate:
            scn_l = _interpolated_scenario(near, far, model, length)
            schedule = [ScheduleEntry(b, b, args.sim_time) for b in quantum.BASES]
            table, _ = linksim.simulate_counts(scn_l.link, schedule, length_seed)
            rep = keyrate.qber_report(table)
            total = sum(table.total(b, b) for b in quantum.BASES)
            total_time = 3.0 * args.sim_time
            p_sim = replace(params, raw_rate_hz=max(total / total_time, 1e-9),
                            alpha=1.0, eta=1.0)
            skr_sim = keyrate.skr_asymptotic(rep.qber_z, rep.qber_x, p_sim)
        rows.append((length, skr_model, skr_sim))

    os.makedirs(args.out, exist_ok=True)
    meta = _meta(seed, name=f"{near.name}->{far.name}")
    meta["atten_db_per_km_eff"] = f"{model.atten_db_per_km_eff:.6g}"
    report.write_delimited(
        os.path.join(args.out, "skr_vs_length.csv"),
        ["length_km", "skr_analytic_bps", "skr_simulated_bps"],
        [(l, a, "" if s is None else s) for l, a, s in rows], meta)
    report.fig_skr_vs_length(rows, os.path.join(args.out, "skr_vs_length.png"))
    _write_json(os.path.join(args.out, "sweep_report.json"), {
        "tool_version": __version__,
        "seed": seed,
        "near": near.name,
        "far": far.name,
        "atten_db_per_km_eff": model.atten_db_per_km_eff,
        "accidental_to_true_anchor": model.accidental_to_true_anchor,
        "rows": [{"length_km": l, "skr_analytic_bps": a, "skr_simulated_bps": s}
                 for l, a, s in rows],
    })
    if args.format == "text":
        for l, a, s in rows:
            sim_txt = "" if s is None else f"  simulated {s:.4g}"
            print(f"L={l:9.3f} km  analytic {a:.4g} bit/s{sim_txt}")
    else:
        print(json.dumps({"rows": [[l, a, s] for l, a, s in rows]}))
    return 0


def _interpolated_scenario(near: Scenario, far: Scenario, model, length_km: float) -> Scenario:
    """Per-length scenario between two calibrated anchors.

    Channel insertion loss interpolates linearly in length between the
    anchors; the noise knobs are re-inverted so the link's predicted QBERs
    follow the analytic sweep model at this length.
    """
    l_near = near.link.channel.length_km
    l_far = far.link.channel.length_km
    frac = 0.0 if l_far == l_near else (length_km - l_near) / (l_far - l_near)
    insertion = (near.link.channel.insertion_loss_db
                 + frac * (far.link.channel.insertion_loss_db
                           - near.link.channel.insertion_loss_db))
    channel = replace(near.link.channel, length_km=length_km,
                      insertion_loss_db=max(insertion, 0.0))
    link = replace(near.link, channel=channel)
    scn = replace(near, name=f"sweep-{length_km:g}km", link=link)

    qz, qx = model.qbers(length_km)
    qy_gap_near = near.expected.get("qber_y", qx) - near.expected["qber_x"]
    qy_gap_far = far.expected.get("qber_y", qx) - far.expected["qber_x"]
    qy = qx + qy_gap_near + frac * (qy_gap_far - qy_gap_near)
    core = {"qber_z": min(qz, 0.49), "qber_x": min(qx, 0.49),
            "qber_y": min(max(qy, qx), 0.49)}
    return _invert(scn, core, ("noise_floor", "std_rad", "y_basis_phase_rad"))


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathqkd",
        description="Simulate and analyze a path-encoded entanglement QKD link.")
    parser.add_argument("--version", action="version", version=f"pathqkd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--format", choices=("text", "structured"), default="text")

    p = sub.add_parser("simulate", help="run the link over a scenario's schedule")
    p.add_argument("scenario", help="scenario file or bundled name "
                   f"({', '.join(bundled_scenario_names() or ['none'])})")
    p.add_argument("--trace-stride", type=int, default=None,
                   help="keep every Nth phase-trace sample")
    p.add_argument("--timestamps", type=float, default=0.0, metavar="SECONDS",
                   help="also export a detection-timestamp stream of this duration")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tomo", help="reconstruct a state from a 9-setting counts file")
    p.add_argument("counts", help="counts file or bundled dataset name")
    p.add_argument("--target", choices=sorted(TARGET_STATES), default="phi_plus")
    p.add_argument("--runs", type=int, default=20000,
                   help="Monte Carlo resampling runs")
    p.add_argument("--chsh-runs", type=int, default=1000,
                   help="Monte Carlo runs for the CHSH statistic")
    p.add_argument("--resample-scale", type=float, default=1.0,
                   help="variance scale of the count resampler (0 disables)")
    common(p)
    p.set_defaults(func=cmd_tomo)

    p = sub.add_parser("skr", help="QBER and secret-key-rate analysis")
    p.add_argument("counts", nargs="?", default=None,
                   help="counts file or bundled dataset name")
    p.add_argument("--qber", type=float, nargs=3, metavar=("Z", "X", "Y"),
                   default=None, help="QBER fractions instead of a counts file")
    p.add_argument("--params", default=None,
                   help="scenario (file or bundled name) providing analysis parameters")
    p.add_argument("--blocks", default="1e8,1e7,1e6,1e5",
                   help="comma-separated finite-key block sizes")
    common(p)
    p.set_defaults(func=cmd_skr)

    p = sub.add_parser("calibrate", help="fit free parameters to target observables")
    p.add_argument("targets", help="YAML targets file")
    p.add_argument("--scenario", default=None,
                   help="base scenario (overrides the targets file)")
    p.add_argument("--seeds", type=int, default=3, help="seeds per evaluation")
    p.add_argument("--rounds", type=int, default=4, help="max fit rounds")
    p.add_argument("--tol", type=float, default=0.05, help="residual tolerance")
    p.add_argument("--time-scale", dest="time_scale", type=float, default=1.0,
                   help="scale factor on schedule integration times during fitting")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="SKR versus fiber length")
    p.add_argument("--near", default="short-4m", help="anchor scenario")
    p.add_argument("--far", default="mcf-80km", help="far calibrated scenario")
    p.add_argument("--lengths", default="0.004,5,10,20,30,40,50,60,70,80",
                   help="comma list and/or start:stop:count ranges (km)")
    p.add_argument("--simulate", action=argparse.BooleanOptionalAction, default=True,
                   help="also simulate each length")
    p.add_argument("--sim-time", type=float, default=40.0,
                   help="integration seconds per basis during sweep simulation")
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PathQkdError as exc:
        print(f"error class={type(exc).__name__} msg=\"{exc}\"", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error class=IoError msg=\"{exc}\"", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
