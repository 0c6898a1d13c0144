#!/usr/bin/env python3
"""Parameter count against width for both up-sampling factors, with the default marked."""
import argparse

from noisr.net import DEFAULT_WIDTH, NetworkConfig, param_count

TARGETS = {2: 889_000, 4: 253_000}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--widths", default="8-48")
    args = ap.parse_args()
    lo, hi = (int(x) for x in args.widths.split("-"))
    print("factor,width,params,rel_to_target")
    for k in (2, 4):
        for w in range(lo, hi + 1):
            n = param_count(NetworkConfig(k, width=w))
            mark = " <- default" if w == DEFAULT_WIDTH[k] else ""
            print(f"{k},{w},{n},{n / TARGETS[k] - 1:+.3f}{mark}")


if __name__ == "__main__":
    main()
