"""Command-line entry points: single runs, run matrices, report conversion
and a quick self-verification of the codec/voter/recovery oracles."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from cotsim.config import (ARCHITECTURES, CampaignConfig, load_campaign,
                           make_architecture)
from cotsim.crc import crc16_ccitt
from cotsim.fpga import InvariantViolation, tmr_vote
from cotsim.frame_link import PixelFrame, decode_frame, encode_frame
from cotsim.harness import emit_matrix, emit_vpu_table, run_fpga, run_matrix, \
    run_vpu_table
from cotsim.injector import CampaignError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2


def _parse_seeds(spec: str) -> list[int]:
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(s) for s in spec.split(",") if s]


def _campaign(args) -> CampaignConfig:
    if args.campaign:
        return load_campaign(args.campaign)
    return CampaignConfig()


def cmd_run(args) -> int:
    campaign = _campaign(args)
    report, log = run_fpga(args.arch, campaign, args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(args.out, "mutations.log"), "w") as fh:
        fh.write(log.text())
    print(f"{report.architecture} seed={report.seed} "
          f"down={report.down_pct:.1f}% "
          f"erroneous={report.erroneous_pct:.1f}% "
          f"correct={report.correct_pct:.1f}%")
    return EXIT_OK


def cmd_matrix(args) -> int:
    campaign = _campaign(args)
    archs = list(ARCHITECTURES) if args.archs == "all" \
        else args.archs.split(",")
    for arch in archs:
        make_architecture(arch)  # validate early
    result = run_matrix(archs, _parse_seeds(args.seeds), campaign)
    written = emit_matrix(result, args.out)
    if args.vpu:
        written.append(emit_vpu_table(
            run_vpu_table(["conv2d", "binning2d"],
                          ["none", "imr", "dmr", "nmr"],
                          [3, 6, 9, 12], _parse_seeds(args.seeds)),
            args.out))
    for row in result.rows:
        print(f"{row.architecture:18s} down={row.down_pct:6.2f}% "
              f"erroneous={row.erroneous_pct:6.2f}% "
              f"correct={row.correct_pct:6.2f}%")
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for name in sorted(os.listdir(args.inp)):
        if name.startswith("run_") and name.endswith(".json"):
            with open(os.path.join(args.inp, name)) as fh:
                reports.append(json.load(fh))
    if not reports:
        print("no run reports found", file=sys.stderr)
        return EXIT_CONFIG
    if args.format == "json":
        json.dump(reports, sys.stdout, indent=2, sort_keys=True)
        print()
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["architecture", "seed", "down_pct", "erroneous_pct",
                         "correct_pct", "lambda_per_s"])
        for rep in reports:
            writer.writerow([rep["architecture"], rep["seed"],
                             f"{rep['down_pct']:.3f}",
                             f"{rep['erroneous_pct']:.3f}",
                             f"{rep['correct_pct']:.3f}",
                             rep["lam_per_s"]])
    return EXIT_OK


def cmd_verify(_args) -> int:
    """Quick oracle checks: checksum, codec round-trip, voter table."""
    failures = []

    def check(name, ok):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        if not ok:
            failures.append(name)

    check("crc16 check value", crc16_ccitt(b"123456789") == 0x31C3)
    check("crc16 empty input", crc16_ccitt(b"") == 0x0000)

    rng = np.random.default_rng(7)
    ok = True
    for depth in (8, 16, 24):
        pixels = rng.integers(0, 1 << depth, size=(6, 5), dtype=np.uint32)
        frame = PixelFrame(5, 6, depth, pixels)
        res = decode_frame(encode_frame(frame))
        ok &= res.crc_ok and res.padding_ok and \
            bool(np.array_equal(res.frame.pixels, frame.pixels))
    check("frame round-trip", ok)

    ok = True
    for a in range(4):
        for b in range(4):
            for c in range(4):
                out, status = tmr_vote([a], [b], [c])
                votes = sorted([a, b, c])
                if a == b or a == c:
                    ok &= out[0] == a
                elif b == c:
                    ok &= out[0] == b
                else:
                    ok &= out[0] == a and status[0] == 2
                del votes
    check("majority voter truth table", ok)

    return EXIT_OK if not failures else EXIT_INVARIANT


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cotsim",
        description="Fault-injection simulator for an FPGA+VPU payload")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single architecture run")
    p.add_argument("--arch", required=True, choices=ARCHITECTURES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--campaign", help="campaign spec JSON")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("matrix", help="architectures x seeds")
    p.add_argument("--archs", default="all",
                   help="comma list or 'all'")
    p.add_argument("--seeds", default="0:10", help="lo:hi or comma list")
    p.add_argument("--campaign", help="campaign spec JSON")
    p.add_argument("--vpu", action="store_true",
                   help="also run the VPU error-rate table")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("report", help="convert stored run reports")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="run the quick oracle checks")
    p.set_defaults(func=cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, CampaignError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
