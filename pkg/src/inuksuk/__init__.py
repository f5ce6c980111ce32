"""Simulation of TEE-aided write protection for user files.

A self-encrypting drive keeps a protected partition permanently
write-locked.  Only a measured updater, launched in an exclusive trusted
session, can unseal the drive credential from the TPM and append new
versions of the user's files.
"""

from .world import Simulation, demo_world

__all__ = ["Simulation", "demo_world"]
__version__ = "0.1.0"
