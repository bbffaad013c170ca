"""Reference endpoint speaking the newline-delimited JSON wire protocol.

Run a synthetic oracle (or a plain echo) as a subprocess model::

    python -m modex.serve --echo
    python -m modex.serve --modalities image:5,text:3 --synthetic linear \
        --params '{"weights": [1, 0, 0, 0, 0, 2, 0, 0]}'

Each stdin line ``{"id": int, "mask": [...]}`` gets exactly one stdout
line ``{"id": int, "output": [...]}``. Bad requests get
``{"id": ..., "error": str}``. EOF terminates the server.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import IO

import numpy as np

from .blackbox import EchoOracle, make_synthetic
from .space import build_instance_spec


def serve(model, stdin: IO[str], stdout: IO[str]) -> int:
    """Answer requests until EOF; returns the number served."""
    served = 0
    for line in stdin:
        if not line.strip():
            continue
        req_id = None
        try:
            req = json.loads(line)
            req_id = req["id"]
            mask = np.asarray(req["mask"], dtype=np.int8)[None, :]
            out = np.asarray(model(mask), dtype=float).reshape(-1)
            reply = {"id": req_id, "output": out.tolist()}
        except Exception as exc:  # report and keep serving
            reply = {"id": req_id, "error": f"{type(exc).__name__}: {exc}"}
        stdout.write(json.dumps(reply, separators=(",", ":")) + "\n")
        stdout.flush()
        served += 1
    return served


def _parse_modalities(text: str):
    names, counts = [], []
    for part in text.split(","):
        name, _, k = part.partition(":")
        names.append(name.strip())
        counts.append(int(k))
    return build_instance_spec(names, counts)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m modex.serve", description=__doc__.split("\n")[0])
    parser.add_argument("--echo", action="store_true", help="reply with the mask itself")
    parser.add_argument("--modalities", help="name:count,name:count,...")
    parser.add_argument("--synthetic", help="synthetic oracle kind")
    parser.add_argument("--params", default="{}", help="JSON object of oracle parameters")
    args = parser.parse_args(argv)

    if args.echo or not args.synthetic:
        model = EchoOracle()
    else:
        if not args.modalities:
            parser.error("--synthetic requires --modalities")
        spec = _parse_modalities(args.modalities)
        model = make_synthetic(args.synthetic, spec, **json.loads(args.params))
    serve(model, sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
