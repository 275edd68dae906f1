"""Blockchain-anchored health-record sharing with patient-controlled access.

Encrypted records live on hospital servers; only their hashes are anchored
on a simulated Ethereum-style ledger. Patients mask the anchor location and
record key behind keyed-hash indexes, and reshare records to a designated
doctor via a broadcast grant that only that doctor's tag key can open.
"""

from .errors import EhrChainError

__version__ = "0.1.0"

__all__ = ["EhrChainError", "__version__"]
