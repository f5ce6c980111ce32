"""Persisting a whole simulated machine to a directory and back.

Layout of a state directory::

    disk.img         raw sector image (sparse where the drive is zero)
    disk.img.json    geometry and range table, no credentials
    state.json       TPM, drive-internal digests, clock, schedule, host flags
    transcript.log   append-only session and report log

Saving is deterministic: loading a state and saving it again without
running anything reproduces every file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import random

from .sed import SedDevice
from .tee import ProgramImage
from .timeauth import TimeToken
from .tpm import Tpm
from .updater import GENUINE_CODE, Layout, updater_main
from .world import Simulation

STATE_FILE = "state.json"
IMAGE_FILE = "disk.img"
TRANSCRIPT_FILE = "transcript.log"
FORMAT_VERSION = 1


def _rng_seed(seed: int, launches: int, clock: int) -> str:
    return f"{seed}/{launches}/{clock}"


def exists(directory) -> bool:
    return os.path.exists(os.path.join(directory, STATE_FILE))


def save(sim: Simulation, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    image = os.path.join(directory, IMAGE_FILE)
    sim.sed.export_image(image)
    host = sim.host
    doc = {
        "format": FORMAT_VERSION,
        "seed": sim.seed,
        "clock": sim.clock.now,
        "layout": vars(sim.layout),
        "sed_secrets": sim.sed.device_secrets(),
        "tpm": sim.tpm.to_dict(),
        "authority_seed": sim.authority_seed.hex(),
        "schedule": vars(host.schedule),
        "host": {
            "driver_alive": host.driver_alive,
            "clock_offset": host.clock_offset,
            "last_token": host.last_token.hex() if host.last_token else None,
            "updater_name": host.updater_image.name,
            "updater_code": host.updater_image.code.hex(),
        },
        "tee_launches": sim.tee.launches,
    }
    with open(os.path.join(directory, STATE_FILE), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, TRANSCRIPT_FILE), "w") as fh:
        fh.writelines(line + "\n" for line in sim.transcript)


def load(directory) -> Simulation:
    with open(os.path.join(directory, STATE_FILE)) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported state format {doc.get('format')!r}")
    secrets = doc["sed_secrets"]
    sed = SedDevice.import_image(os.path.join(directory, IMAGE_FILE),
                                 psid=bytes.fromhex(secrets["psid"]),
                                 msid=bytes.fromhex(secrets["msid"]))
    sed.restore_secrets(secrets)
    seed_text = _rng_seed(doc["seed"], doc["tee_launches"], doc["clock"])
    tpm = Tpm.from_dict(doc["tpm"], rng=random.Random(seed_text + "/tpm"))
    sim = Simulation(seed=doc["seed"], now=doc["clock"], sector_size=sed.sector_size,
                     _restore={"sed": sed, "tpm": tpm, "layout": Layout(**doc["layout"]),
                               "authority_seed": bytes.fromhex(doc["authority_seed"]),
                               "rng_seed": seed_text})
    for key, value in doc["schedule"].items():
        setattr(sim.host.schedule, key, value)
    h = doc["host"]
    sim.host.driver_alive = h["driver_alive"]
    sim.host.clock_offset = h["clock_offset"]
    sim.host.last_token = TimeToken.from_hex(h["last_token"]) if h["last_token"] else None
    code = bytes.fromhex(h["updater_code"])
    if code != GENUINE_CODE or h["updater_name"] != sim.host.updater_image.name:
        # Whatever binary sits on disk is what gets launched and measured.
        sim.host.updater_image = ProgramImage(h["updater_name"], code, updater_main)
    sim.tee.launches = doc["tee_launches"]
    path = os.path.join(directory, TRANSCRIPT_FILE)
    if os.path.exists(path):
        with open(path) as fh:
            sim.transcript.extend(line.rstrip("\n") for line in fh)
    return sim


def digest(directory) -> str:
    """SHA-256 over every file of a state directory, for round-trip checks."""
    h = hashlib.sha256()
    for name in (STATE_FILE, IMAGE_FILE, IMAGE_FILE + ".json", TRANSCRIPT_FILE):
        path = os.path.join(directory, name)
        h.update(name.encode() + b"\0")
        if os.path.exists(path):
            with open(path, "rb") as fh:
                for block in iter(lambda: fh.read(1 << 20), b""):
                    h.update(block)
    return h.hexdigest()
