"""Run the bundled churn scenario and report what survived.

    python3 demos/churn_run.py [seed]
"""

import os
import sys

from swarmmsg.sim.config import load_scenario
from swarmmsg.sim.world import run

here = os.path.dirname(os.path.abspath(__file__))
sc = load_scenario(os.path.join(here, "..", "scenarios", "churn30.scn"))
if len(sys.argv) > 1:
    sc.config.seed = int(sys.argv[1])
result = run(sc.config)
m = result.metrics
print(f"nodes still active:      {m['nodes_active']} of {sc.config.nodes}")
print(f"records stored:          {m['records_stored']}")
print(f"held by every member:    {m['replication_min']:.0%} (worst record)")
print(f"retrievable somewhere:   {m['durability']:.0%}")
print(f"messages delivered:      {m['messages_delivered']}/{m['messages_sent']}")
print("\nlast membership changes:")
for line in [l for l in result.log if " ring " in f" {l} "][-5:]:
    print("  " + line)
