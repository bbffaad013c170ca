"""
Talking to a model in another process
=====================================

Any program that reads one JSON request per line ({"id", "mask"}) and
answers with {"id", "output"} can be explained. Here the bundled reference
server plays the model, first directly and then through the command line.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from modex import BlackBoxSession, build_instance_spec
from modex.blackbox import SubprocessEndpoint

spec = build_instance_spec(["image", "text"], [3, 2])
params = json.dumps({"weights": [1.0, 0.0, 2.0, -1.0, 0.5]})
cmd = [sys.executable, "-m", "modex.serve", "--modalities", "image:3,text:2",
       "--synthetic", "linear", "--params", params]

with SubprocessEndpoint(cmd) as endpoint:
    session = BlackBoxSession(endpoint, spec, batch_size=4)
    print(session.query_raw(np.eye(5, dtype=np.int8)).ravel(), flush=True)

# the same model from the CLI, writing report.json and friends
out = Path(tempfile.mkdtemp()) / "run"
config = {
    "modalities": [{"name": "image", "units": 3}, {"name": "text", "units": 2}],
    "endpoint": " ".join([sys.executable, "-m", "modex.serve", "--modalities", "image:3,text:2",
                          "--synthetic", "linear", "--params", "'" + params + "'"]),
    "n_perturbations": 200,
    "out": str(out),
}
cfg_path = out.parent / "config.json"
cfg_path.write_text(json.dumps(config))
subprocess.run([sys.executable, "-m", "modex", "explain", "--config", str(cfg_path)], check=True)
report = json.loads((out / "report.json").read_text())
print(report["ledger"], [m["share"] for m in report["explanation"]["modalities"]])
