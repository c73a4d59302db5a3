"""
Command-line workflow
=====================

The same steps as the library demos through the ``vbsmooth`` command:
simulate a dataset, smooth it, benchmark, and diff two summaries.  Each
call below is what ``python3 -m vbsmooth ...`` would run.
"""

import tempfile
from pathlib import Path

from vbsmooth.cli import main

work = Path(tempfile.mkdtemp())
cfg = work / "experiment.ini"
cfg.write_text("""\
[scenario]
schedule = time-varying
K = 800
mc_runs = 2
seed = 3

[algorithms]
names = rts, vbs-r, vbs-rq

[algorithm:vbs-rq]
max_iterations = 20
""")

main(["simulate", "--config", str(cfg), "--out", str(work / "data")])
main(["smooth", str(work / "data"), "--algorithm", "vbs-rq", "--out", str(work / "vb")])
print(sorted(p.name for p in (work / "vb").iterdir()))

main(["benchmark", "--config", str(cfg), "--out", str(work / "bench1")])
main(["benchmark", "--config", str(cfg), "--out", str(work / "bench2")])
status = main(["compare", str(work / "bench1" / "summary.csv"), str(work / "bench2" / "summary.csv")])
print("compare exit status:", status)
