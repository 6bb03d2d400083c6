"""Command-line entry point: ``bctoeplitz <command> [--config FILE] [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import BCError
from .pipeline import bench, load_config, run_bcp, run_forward, run_gram, run_solve, shortened_family, verify

COMMANDS = ("forward", "gram", "solve", "verify", "bench", "all")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bctoeplitz", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML experiment file")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--lambda", dest="lam", type=float, help="Tikhonov shift added to G")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--dense-oracle", action="store_true", help="solve with dense elimination")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config, out_dir=args.out, lam=args.lam, seed=args.seed,
                          threads=args.threads, dense_oracle=args.dense_oracle or None)
        out = cfg.out_dir
        cmd = args.command
        if cmd == "forward":
            _print(run_forward(cfg, out))
        elif cmd == "gram":
            asm = run_gram(cfg, out)[0]
            _print({"M": asm.G.M, "N": asm.G.N, "min_eigenvalue": asm.min_eigenvalue,
                    "n_negative": asm.n_negative})
        elif cmd == "solve":
            res = run_solve(cfg, out)
            _print({k: v for k, v in res.items() if k != "C"})
        elif cmd == "verify":
            rep = verify(cfg, out)
            print("\n".join(rep.lines()))
            return 0 if rep.passed else 1
        elif cmd == "bench":
            t = bench(cfg, out)
            _print({"M": t.M, "N": t.N, "exponent_levinson": t.exponent_levinson,
                    "exponent_dense": t.exponent_dense})
        else:
            run_forward(cfg, out)
            rep = run_bcp(cfg, out)
            _print(rep.to_dict())
            if cfg.shortened:
                shortened_family(cfg, out)
            ver = verify(cfg, out)
            print("\n".join(ver.lines()))
            bench(cfg, out)
            return 0 if ver.passed else 1
    except (BCError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
