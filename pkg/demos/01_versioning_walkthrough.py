"""
Versioning walkthrough
======================

Provision a machine, edit some files, commit, and look at what the
protected partition keeps.
"""

from inuksuk import Simulation
from inuksuk.updater import UpdatePolicy

HOUR = 3600

# A machine with a 4 MB original partition and an 8 MB protected one.
sim = Simulation(seed=1, original_mb=4, protected_mb=8, now=1_000)

# Provisioning runs inside one measured session: it seals a fresh drive
# credential, creates the write-locked range and copies the selection.
files = {"thesis.tex": b"\\section{Intro}\n", "budget.csv": b"item,cost\n"}
policy = UpdatePolicy(commit_interval=8 * HOUR, version_limit=3, avatar="grey owl")
report = sim.provision(files, policy)
print("provisioned:", [name for name, _ts, _size in report.committed])

# The user keeps working on the original partition.
for draft in range(4):
    sim.clock.advance(HOUR)
    sim.host.app_write("thesis.tex", b"\\section{Intro}\n" + b"more text\n" * (draft + 1))
    rep = sim.commit()
    print(f"commit {draft}: committed={[c[0] for c in rep.committed]} deletions={rep.deletions}")

# The trusted screen showed the avatar on every run.
print("banner lines seen:", sum(line == "== grey owl ==" for line in sim.console.screen))

# Any OS can mount the protected partition read-only.  With version_limit=3
# the live copy plus two hidden versions survive.
view = sim.recovery_view()
for entry in view.list(show_hidden=True):
    flag = "hidden" if entry.hidden else "live"
    print(f"{entry.name:32s} {entry.size:6d} bytes  {flag}")

# An autosave storm is committed once and flagged.
sim.clock.advance(HOUR)
sim.host.app_autosave_storm("budget.csv", 150)
rep = sim.commit()
print("anomalies:", rep.anomalies)
