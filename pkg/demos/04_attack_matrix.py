"""
Attack matrix
=============

Run every canned attack scenario on its own demo machine and tabulate the
result against the expected outcome.
"""

import time

from inuksuk.adversary import canned_scenarios, run

start = time.perf_counter()
for scenario in canned_scenarios():
    outcome = run(scenario)
    diff = outcome.compare(scenario.expected_outcome)
    status = "match" if not diff else "MISMATCH"
    print(f"{scenario.id:24s} {status:9s} loss={len(outcome.data_loss)} "
          f"signals={','.join(outcome.detection_signals) or '-'}")
print(f"total {time.perf_counter() - start:.2f}s")
