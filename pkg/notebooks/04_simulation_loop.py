"""
The closed loop through the command line
========================================

``simulate`` renders model draws as label files and hazard percentiles,
and the remaining subcommands treat them like real inputs. Running the
whole chain and comparing the fitted paths with the generator's truth
checks every stage at once.
"""

import json
import tempfile
from pathlib import Path

from flourishsem.cli import main

work = Path(tempfile.mkdtemp())
(work / "run.json").write_text(json.dumps({"out": "out", "simulate": {"counties": 200}}))
cfg = str(work / "run.json")
out = work / "out"

for argv in (
    ["simulate", "--config", cfg, "--seed", "2024"],
    ["aggregate", "--config", cfg, "--labels", str(out / "labels.csv")],
    ["correlate", "--config", cfg, "--climate", str(out / "climate.csv")],
    ["fit", "--config", cfg, "--climate", str(out / "climate.csv")],
    ["scores", "--config", cfg, "--climate", str(out / "climate.csv")],
):
    print(argv[0], "->", main(argv))

###############################################################################
# The aggregate report lists what the variance screen removed; the three
# questions that the simulator fills with a constant stream drop out.

report = json.loads((out / "report_aggregate.json").read_text())
print("screened out:", report["dropped_low_variance"])

###############################################################################
# Standardized structural paths: fitted vs generator truth.

fitted = {r["name"]: r for r in json.loads((out / "fit.json").read_text())["parameters"]}
truth = json.loads((out / "truth.json").read_text())["standardized_truth"]
for name, row in fitted.items():
    if row["kind"] == "path":
        print(f"{name:<40} {row['standardized']:+.3f}  truth {truth[name]:+.3f}  {row['sig']}")

print((out / "fit.txt").read_text().splitlines()[-4])
