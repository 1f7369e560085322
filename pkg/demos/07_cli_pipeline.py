"""
The command-line pipeline
=========================

gen -> index -> match -> eval -> plot, driven through the same entry point
the defmatch console script uses. Output goes to a temporary directory.
"""

import json
import tempfile
from pathlib import Path

from defmatch.cli import main

out = Path(tempfile.mkdtemp(prefix="defmatch-demo-"))
main(["gen", "--config", "smoke", "--out", str(out / "data")])

entry = json.loads((out / "data" / "tasks.json").read_text())[0]
q, r = str(out / "data" / entry["query"]), str(out / "data" / entry["ref"])

main(["index", r, "--config", "smoke", "--out", str(out / "model.json")])
main(["match", q, r, "--config", "smoke", "--model", str(out / "model.json"), "--out", str(out / "hyp.jsonl")])
main(["eval", str(out / "hyp.jsonl"), q, r, "--x-list", "1,5"])
main(["plot", q, r, str(out / "hyp.jsonl"), "--out", str(out / "plot.svg")])
print("artifacts in", out)
