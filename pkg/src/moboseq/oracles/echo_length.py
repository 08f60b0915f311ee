"""Reference external oracle: scores each sequence by its length.

The ``--mode`` flag turns it into a misbehaving double for protocol tests.
"""

from __future__ import annotations

import argparse
import json
import random
import sys


def main(argv=None) -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--mode", default="normal",
                    choices=["normal", "malformed", "misaligned", "random", "crash", "silent", "minimize"])
    ap.add_argument("--name", default="echo-length")
    args = ap.parse_args(argv)

    if args.mode == "silent":
        sys.stdin.read()
        return 0
    direction = "minimize" if args.mode == "minimize" else "maximize"
    print(json.dumps({"type": "hello", "name": args.name, "direction": direction}), flush=True)
    for line in sys.stdin:
        msg = json.loads(line)
        if msg.get("type") == "bye":
            break
        seqs = msg["sequences"]
        if args.mode == "malformed":
            print("scores: not json", flush=True)
            continue
        if args.mode == "crash":
            print("oracle crashed while scoring", file=sys.stderr, flush=True)
            return 1
        values = [float(len(s)) for s in seqs]
        if args.mode == "misaligned":
            values = values[:-1]
        elif args.mode == "random":
            values = [v + random.random() for v in values]
        print(json.dumps({"type": "scores", "id": msg["id"], "values": values}), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
