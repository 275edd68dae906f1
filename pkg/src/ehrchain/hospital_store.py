"""Hospital server: encrypted-record storage and the release handshake.

The store is deliberately blind. It holds only the masked index entry and
the record ciphertext — never the unmasking pad, the patient nonce, the
record key, or any plaintext — and releases the stored triple only after
both the requester's certificate and the request signature verify.

Every request is appended to a JSON-lines audit log (requester pseudonym,
lookup key, timestamp, outcome), so the release history replays from the
log alone.

Persistence (optional, under ``root``): one ``<X hex>.rec`` file per entry::

    X 32B || Z 32B || K 16B || stored_at u64 || has_expiry u8 ||
    expires_at u64 || deleted u8 || ciphertext blob

plus an append-only ``audit.log``.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

from . import codec
from .crypto import DIGEST_LEN, SYM_KEY_LEN, Point, h2_hash, verify
from .errors import EhrChainError
from .ledger import Ledger, build_signed_tx
from .record_exchange import AccessRequest, MaskedIndexEntry, encode_tombstone_payload
from .registry import ParticipantIdentity, verify_certificate


class StoreError(EhrChainError):
    code = "store"


class DuplicateIndexError(StoreError):
    code = "duplicate-index"


class BadCertificateError(StoreError):
    code = "bad-certificate"


class BadRequestSignatureError(StoreError):
    code = "bad-request-signature"


class UnknownIndexError(StoreError):
    code = "unknown-index"


class EntryUnavailableError(StoreError):
    """The entry exists but was deleted or has passed its retention window."""

    code = "entry-unavailable"


@dataclass
class StoredEntry:
    x_index: bytes
    entry: MaskedIndexEntry
    chr_ciphertext: bytes
    stored_at: int
    expires_at: int | None
    deleted: bool = False


def encode_release(z_masked: bytes, k_masked: bytes, chr_ciphertext: bytes) -> bytes:
    """Release triple wire form: Z 32B || K 16B || ciphertext blob."""
    return z_masked + k_masked + codec.pack_bytes(chr_ciphertext)


def decode_release(data: bytes) -> tuple[bytes, bytes, bytes]:
    r = codec.Reader(data)
    z = r.take(DIGEST_LEN)
    k = r.take(SYM_KEY_LEN)
    chr_ct = r.blob()
    r.done()
    return z, k, chr_ct


class HospitalStore:
    """One hospital's record server, keyed by masked lookup index.

    ``identity`` and ``ledger`` are needed only for tombstoning expired
    records; a store that never deletes can omit both.
    """

    def __init__(
        self,
        hospital_id: str,
        *,
        identity: ParticipantIdentity | None = None,
        ledger: Ledger | None = None,
        root: Path | str | None = None,
        h2_id: str = "sha256",
        rng=None,
    ):
        self.hospital_id = hospital_id
        self.identity = identity
        self.ledger = ledger
        self.h2_id = h2_id
        self._rng = rng
        self._lock = threading.Lock()
        self._entries: dict[bytes, StoredEntry] = {}
        self.audit_log: list[dict] = []
        self._root = Path(root) if root is not None else None
        if self._root is not None:
            self._root.mkdir(parents=True, exist_ok=True)

    # -- storage ------------------------------------------------------------

    def store_record(
        self,
        entry: MaskedIndexEntry,
        chr_ciphertext: bytes,
        now: int,
        retention: int | None = None,
    ) -> None:
        """Persist a masked entry and its ciphertext under the lookup key X."""
        expires_at = now + retention if retention is not None else None
        with self._lock:
            if entry.x_index in self._entries:
                raise DuplicateIndexError("lookup key already present; refusing to cross-link records")
            stored = StoredEntry(entry.x_index, entry, chr_ciphertext, now, expires_at)
            self._entries[entry.x_index] = stored
            self._write_entry(stored)

    # -- release handshake ------------------------------------------------------

    def handle_access_request(self, request: AccessRequest, ha_pk: Point, now: int) -> tuple[bytes, bytes, bytes]:
        """Verify certificate then signature, look up W, release the triple.

        No code path returns data without both verifications passing.
        """
        requester = request.cert.subject_id.hex()
        cert_check = verify_certificate(request.cert, ha_pk, now)
        if not cert_check:
            self._audit(now, requester, request.w, "denied:" + cert_check.reason)
            raise BadCertificateError(f"certificate rejected: {cert_check.reason}")
        if not verify(request.cert.subject_pk_enc, request.w, request.signature):
            self._audit(now, requester, request.w, "denied:bad-signature")
            raise BadRequestSignatureError("request signature does not verify")
        with self._lock:
            stored = self._entries.get(request.w)
            if stored is None:
                self._audit_locked(now, requester, request.w, "denied:unknown-index")
                raise UnknownIndexError("no entry under this lookup key")
            if stored.deleted or (stored.expires_at is not None and now >= stored.expires_at):
                self._audit_locked(now, requester, request.w, "denied:unavailable")
                raise EntryUnavailableError("entry deleted or past retention")
            self._audit_locked(now, requester, request.w, "released")
            return stored.entry.z_masked_txid, stored.entry.k_masked_key, stored.chr_ciphertext

    # -- retention ---------------------------------------------------------------

    def delete_expired(self, now: int) -> int:
        """Mark expired entries deleted, erase ciphertexts, tombstone anchors."""
        tombstones = []
        with self._lock:
            count = 0
            for stored in self._entries.values():
                if stored.deleted or stored.expires_at is None or stored.expires_at > now:
                    continue
                digest = h2_hash(stored.chr_ciphertext, self.h2_id)
                stored.deleted = True
                stored.chr_ciphertext = b""
                self._write_entry(stored)
                self._audit_locked(now, "retention-sweep", stored.x_index, "deleted")
                tombstones.append(encode_tombstone_payload(stored.x_index, digest))
                count += 1
        if self.ledger is not None and self.identity is not None:
            for payload in tombstones:
                nonce = self.ledger.next_nonce(self.identity.address)
                tx = build_signed_tx(self.identity.enc_keypair, nonce, payload, self._rng)
                self.ledger.submit_transaction(tx)
        return count

    # -- audit -------------------------------------------------------------------

    def _audit(self, now: int, requester: str, x_index: bytes, outcome: str) -> None:
        with self._lock:
            self._audit_locked(now, requester, x_index, outcome)

    def _audit_locked(self, now: int, requester: str, x_index: bytes, outcome: str) -> None:
        line = {"at": int(now), "requester": requester, "x_index": x_index.hex(), "outcome": outcome}
        self.audit_log.append(line)
        if self._root is not None:
            with open(self._root / "audit.log", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(line) + "\n")

    def releases(self) -> list[dict]:
        """Successful releases, in order, as reconstructed from the audit log."""
        return [line for line in self.audit_log if line["outcome"] == "released"]

    # -- persistence --------------------------------------------------------------

    def _write_entry(self, stored: StoredEntry) -> None:
        if self._root is None:
            return
        blob = (
            stored.x_index
            + stored.entry.z_masked_txid
            + stored.entry.k_masked_key
            + codec.pack_u64(stored.stored_at)
            + (b"\x01" + codec.pack_u64(stored.expires_at) if stored.expires_at is not None else b"\x00" + codec.pack_u64(0))
            + (b"\x01" if stored.deleted else b"\x00")
            + codec.pack_bytes(stored.chr_ciphertext)
        )
        (self._root / f"{stored.x_index.hex()}.rec").write_bytes(blob)

    @classmethod
    def load(cls, hospital_id: str, root: Path | str, **kwargs) -> "HospitalStore":
        """Rebuild a store from its persistence directory."""
        store = cls(hospital_id, root=root, **kwargs)
        root = Path(root)
        for rec_file in sorted(root.glob("*.rec")):
            r = codec.Reader(rec_file.read_bytes())
            x = r.take(DIGEST_LEN)
            z = r.take(DIGEST_LEN)
            k = r.take(SYM_KEY_LEN)
            stored_at = r.u64()
            has_expiry = r.take(1) == b"\x01"
            expires_at = r.u64()
            deleted = r.take(1) == b"\x01"
            chr_ct = r.blob()
            r.done()
            store._entries[x] = StoredEntry(
                x, MaskedIndexEntry(x, z, k), chr_ct, stored_at, expires_at if has_expiry else None, deleted
            )
        audit_path = root / "audit.log"
        if audit_path.exists():
            with open(audit_path, encoding="utf-8") as fh:
                store.audit_log = [json.loads(line) for line in fh if line.strip()]
        return store
