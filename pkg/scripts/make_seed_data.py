"""Regenerate the expert replay-seed files shipped in ``configs/seed``.

DP and rule-based rollouts on the desk cycle from four start SOCs, scored
with the shaped reward, 80-bin action grid.
"""

import argparse
from pathlib import Path

from tractor_ems.cli import main as cli_main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
START_SOCS = ("0.7", "0.75", "0.8", "0.85")


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=str(CONFIGS / "seed"))
    args = p.parse_args(argv)
    socs = [a for s in START_SOCS for a in ("--soc", s)]
    for expert in ("dp", "rule"):
        code = cli_main(["seed-gen", "--config", str(CONFIGS / "desk.cfg"), "--expert", expert,
                         "--out", args.out, *socs])
        if code:
            return code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
