"""
Ransomware and recovery
=======================

Run the canned persistent-ransomware attack against a demo machine and then
restore every version from the protected partition.
"""

import hashlib
import tempfile
from pathlib import Path

from inuksuk.adversary import canned_scenarios, run, world_for

scenario = next(s for s in canned_scenarios() if s.id == "persistent_ransomware")
sim = world_for(scenario)

# Record what the protected partition held before the attack.
before = sim.recovery_view().triples()
print(f"{len(before)} committed versions before the attack")

# The ransomware encrypts every original, rewrites the plaintext policy copy
# and lets the scheduled commits run for a while.
outcome = run(scenario, sim)
print("files encrypted:", outcome.facts["files_encrypted"])
print("signals:", outcome.detection_signals)
print("diff against expected outcome:", outcome.compare(scenario.expected_outcome) or "none")

# Recovery needs no credential: mount read-only and copy everything out.
with tempfile.TemporaryDirectory() as out:
    names = sim.recovery_view().export(out)
    digests = {hashlib.sha256((Path(out) / n).read_bytes()).hexdigest() for n in names}
print("pre-attack versions still present:",
      sum(sha in digests for _b, _t, sha in before), "of", len(before))
