#!/usr/bin/env python3
"""Run the verifier suites over every bundled scenario and print a table.

Equivalent to ``augpd verify scenarios/<name>.toml`` for each file; exits
nonzero if any verification fails.
"""
import argparse
import sys
from dataclasses import replace
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from augpd.cli import parse_scenario, run_scenario  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="augpd-out/verify")
    ap.add_argument("--scenarios", default=str(ROOT / "scenarios"))
    args = ap.parse_args()

    ok = True
    for path in sorted(Path(args.scenarios).glob("*.toml")):
        scenario = parse_scenario(path)
        verify = replace(scenario.verify, identities=True, optimality=True)
        scenario = replace(scenario, verify=verify)
        summary = run_scenario(scenario, Path(args.out) / scenario.name, mode="verify")
        for name, info in summary["algorithms"].items():
            status = "ok" if info["passed"] else "FAIL"
            print(
                f"{scenario.name:>20s} / {name:<12s} [{info['variant']:<19s}] "
                f"settle={info['settling_time']:7.3f} osc={info['oscillation_count']:3d} {status}"
            )
        ok &= summary["all_passed"]
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
