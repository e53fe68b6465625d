"""Command-line front end.

Subcommands: ``encode`` a payload, ``decode`` a received vector, estimate a
``trial`` operating point, ``sweep`` the minimum Eb/N0 over user counts,
and ``reproduce-fig3`` for the published trade-off curves.  Every command
accepts one JSON run-config plus flag overrides.  Exit codes: 0 on
success, 2 on configuration errors, 3 when a search cannot bracket the
target or decoding returns an empty list.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

import numpy as np

from .errors import CcsAmpError, ConfigError, NoBracket
from .pipeline import decode
from .sensing import build_power, ebn0_to_power
from .sim import (
    RunConfig,
    TrialConfig,
    estimate_pupe,
    load_run_config,
    min_ebn0_search,
    reference_curves,
    resolve_code,
    resolve_operator,
)
from .tree import encode, int_to_bits

# Energy convention stamped on every CSV we emit.
CSV_NOTE = ("# ebn0_db = n*P/(2*w) in dB with unit-variance real noise; "
            "P is the per-channel-use symbol power\n")


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="run-config JSON file")
    parser.add_argument("--preset", help="code preset override")
    parser.add_argument("--n", type=int, help="channel uses override")
    parser.add_argument("--ka", type=int, help="active user count override")
    parser.add_argument("--ebn0-db", type=float, help="Eb/N0 override (dB)")
    parser.add_argument("--mode", choices=("original", "enhanced"),
                        help="decoder mode override")
    parser.add_argument("--amp-iters", type=int)
    parser.add_argument("--survivor-budget", type=int)
    parser.add_argument("--list-cap", type=int)
    parser.add_argument("--prior-damping", type=float)
    parser.add_argument("--prior-stride", type=int)
    parser.add_argument("--trials", type=int, help="trial count override")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--generator-seed", type=int)
    parser.add_argument("--operator-seed", type=int)
    parser.add_argument("--workers", type=int,
                        help="worker processes (CCS_AMP_THREADS caps this)")


def _load_run(args) -> RunConfig:
    run = load_run_config(args.config) if args.config else RunConfig(TrialConfig())
    trial = run.trial
    dec = trial.decoder
    if args.preset is not None:
        trial = replace(trial, tree=args.preset)
    for flag, field in (("n", "n"), ("ka", "ka"), ("ebn0_db", "ebn0_db"),
                        ("generator_seed", "generator_seed"),
                        ("operator_seed", "operator_seed")):
        val = getattr(args, flag)
        if val is not None:
            trial = replace(trial, **{field: val})
    for flag, field in (("mode", "mode"), ("amp_iters", "amp_iters"),
                        ("survivor_budget", "survivor_budget"),
                        ("list_cap", "list_cap"),
                        ("prior_damping", "prior_damping"),
                        ("prior_stride", "prior_stride")):
        val = getattr(args, flag)
        if val is not None:
            dec = replace(dec, **{field: val})
    trial = replace(trial, decoder=dec)
    run = replace(run, trial=trial)
    if args.trials is not None:
        run = replace(run, trials=args.trials)
    if args.seed is not None:
        run = replace(run, master_seed=args.seed)
    return run


def _open_out(path):
    return open(path, "w", encoding="utf-8", newline="") if path else sys.stdout


def _write_csv(path, header, rows, note=True):
    fh = _open_out(path)
    try:
        if note:
            fh.write(CSV_NOTE)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x
                             for x in row])
    finally:
        if path:
            fh.close()


def _cmd_encode(args) -> int:
    run = _load_run(args)
    config, gens, _ = resolve_code(run.trial.tree, run.trial.generator_seed)
    if args.payload_hex is not None:
        value = int(args.payload_hex, 16)
        if value >= 1 << config.payload_bits:
            raise ConfigError(
                f"payload does not fit in {config.payload_bits} bits")
        bits = np.array([(value >> (config.payload_bits - 1 - i)) & 1
                         for i in range(config.payload_bits)], dtype=np.uint8)
    else:
        rng = np.random.default_rng(run.master_seed)
        bits = rng.integers(0, 2, size=config.payload_bits, dtype=np.uint8)
    msg = encode(bits, config, gens)
    values = msg.values()
    doc = {
        "payload_hex": f"{int(''.join(str(b) for b in bits), 2):0{(config.payload_bits + 3) // 4}x}",
        "sections": {str(s): int(values[s - 1])
                     for s in range(1, config.num_sections + 1)},
        "info_sections": list(config.info_sections),
    }
    fh = _open_out(args.out)
    try:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    finally:
        if args.out:
            fh.close()
    return 0


def _load_vector(path) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    with open(path, "r", encoding="utf-8") as fh:
        return np.asarray(json.load(fh), dtype=np.float64)


def _cmd_decode(args) -> int:
    run = _load_run(args)
    trial = run.trial
    config, gens, table = resolve_code(trial.tree, trial.generator_seed)
    y = _load_vector(args.y_file)
    if y.size != trial.n:
        raise ConfigError(f"received vector has length {y.size}, "
                          f"config says n={trial.n}")
    op = resolve_operator(trial.n, config.total_size, trial.operator_seed,
                          trial.skip_dc_row)
    power = build_power(config, trial.n,
                        ebn0_to_power(trial.ebn0_db, config.payload_bits,
                                      trial.n), trial.ka)
    msg_list = decode(y, op, power, config, gens, trial.decoder, table)
    fh = _open_out(args.out)
    try:
        json.dump(msg_list.to_json(), fh, indent=2)
        fh.write("\n")
    finally:
        if args.out:
            fh.close()
    return 3 if len(msg_list) == 0 else 0


def _cmd_trial(args) -> int:
    run = _load_run(args)
    est = estimate_pupe(run.trial, run.trials, run.master_seed, args.workers)
    print(f"ka={run.trial.ka} mode={run.trial.decoder.mode} "
          f"ebn0_db={run.trial.ebn0_db} pupe={est.mean:.6f} "
          f"stderr={est.stderr:.6f} trials={est.trials} failed={est.failed}")
    if args.csv:
        _write_csv(args.csv,
                   ["ka", "mode", "ebn0_db", "pupe", "stderr", "trials",
                    "failed"],
                   [[run.trial.ka, run.trial.decoder.mode,
                     float(run.trial.ebn0_db), float(est.mean),
                     float(est.stderr), est.trials, est.failed]])
    return 0


def _parse_ka_list(text) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise ConfigError(f"bad ka list {text!r}") from exc


def _cmd_sweep(args) -> int:
    run = _load_run(args)
    rows = []
    for ka in _parse_ka_list(args.ka_list):
        trial = replace(run.trial, ka=ka)
        row = min_ebn0_search(trial, args.lo, args.hi,
                              target_pe=args.target_pe,
                              resolution=args.resolution,
                              trials=run.trials,
                              master_seed=run.master_seed,
                              workers=args.workers)
        rows.append([row.ka, row.mode, row.ebn0_db, row.pupe, row.stderr,
                     row.trials, row.bracket_lo, row.bracket_hi])
        print(f"ka={row.ka} mode={row.mode} min_ebn0_db={row.ebn0_db:.3f} "
              f"pupe={row.pupe:.4f}")
    _write_csv(args.csv,
               ["ka", "mode", "ebn0_db", "pupe", "stderr", "trials",
                "bracket_lo", "bracket_hi"], rows)
    return 0


def _cmd_fig3(args) -> int:
    run = _load_run(args)
    mode = run.trial.decoder.mode
    curve = dict(reference_curves()[mode])
    rows = []
    for ka in _parse_ka_list(args.ka_list):
        if ka in curve:
            ref = curve[ka]
        else:
            kas = sorted(curve)
            ref = float(np.interp(ka, kas, [curve[k] for k in kas]))
        trial = replace(run.trial, ka=ka)
        row = min_ebn0_search(trial, ref + args.bracket_lo,
                              ref + args.bracket_hi,
                              target_pe=args.target_pe,
                              resolution=args.resolution,
                              trials=run.trials,
                              master_seed=run.master_seed,
                              workers=args.workers)
        rows.append([row.ka, row.mode, row.ebn0_db, row.pupe, row.stderr,
                     row.trials, row.wall_time])
        print(f"ka={row.ka} mode={row.mode} min_ebn0_db={row.ebn0_db:.3f} "
              f"reference={ref:.2f}")
    _write_csv(args.csv,
               ["ka", "mode", "ebn0_db", "pupe", "stderr", "trials",
                "wall_time"], rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccsamp",
        description="Coded compressed sensing with AMP decoding: encode, "
                    "decode and simulate the unsourced multiple-access link.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode one payload into section values")
    _add_common(p)
    p.add_argument("--payload-hex", help="payload as hex (random if omitted)")
    p.add_argument("--out", help="output JSON path (stdout if omitted)")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode one received vector")
    _add_common(p)
    p.add_argument("--y-file", required=True,
                   help="received vector (.npy or JSON array)")
    p.add_argument("--out", help="output JSON path (stdout if omitted)")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("trial", help="estimate PUPE at one operating point")
    _add_common(p)
    p.add_argument("--csv", help="optional CSV output path")
    p.set_defaults(func=_cmd_trial)

    p = sub.add_parser("sweep", help="minimum Eb/N0 per user count")
    _add_common(p)
    p.add_argument("--ka-list", required=True, help="comma-separated counts")
    p.add_argument("--lo", type=float, required=True, help="bracket low (dB)")
    p.add_argument("--hi", type=float, required=True, help="bracket high (dB)")
    p.add_argument("--target-pe", type=float, default=0.05)
    p.add_argument("--resolution", type=float, default=0.05)
    p.add_argument("--csv", help="CSV output path (stdout if omitted)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("reproduce-fig3",
                       help="minimum Eb/N0 curve against the published one")
    _add_common(p)
    p.add_argument("--ka-list", default="25", help="comma-separated counts")
    p.add_argument("--target-pe", type=float, default=0.05)
    p.add_argument("--resolution", type=float, default=0.05)
    p.add_argument("--bracket-lo", type=float, default=-0.75,
                   help="bracket start relative to the reference (dB)")
    p.add_argument("--bracket-hi", type=float, default=1.25,
                   help="bracket end relative to the reference (dB)")
    p.add_argument("--csv", help="CSV output path (stdout if omitted)")
    p.set_defaults(func=_cmd_fig3)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NoBracket as exc:
        print(f"search failed: {exc}", file=sys.stderr)
        return 3
    except CcsAmpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
