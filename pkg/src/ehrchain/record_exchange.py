"""Record anchoring and access-controlled resharing: the protocol core.

A doctor encrypts a health record under a fresh 128-bit key, anchors the
ciphertext hash on the ledger, and hands the ciphertext to the hospital.
The patient then derives a masked index entry from a private nonce ``k_t``:
lookup key X and one-time pad Y come from the keyed hash of
``hospital || record_time || domain byte``, and the pad masks both the
anchor transaction id and the record key before they reach the hospital.

Resharing broadcasts a grant ``(R, tag, C1)``: only the doctor holding the
tag secret ``a`` matching the tag public key ``A`` can recompute
``h1(a·R)·G`` and recognize the grant as theirs, after which the encrypted
authorization pass ``(hospital, record_time, k_t)`` lets them rebuild X and
Y, request the masked entry, unmask it, and decrypt — verifying the
ciphertext hash against the anchor on the way.

On-chain payloads and hospital-bound messages use tagged canonical
encodings (type byte first), documented field-by-field on each codec.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from . import codec
from .crypto import (
    DIGEST_LEN,
    SYM_KEY_LEN,
    Point,
    Scalar,
    SystemParams,
    h1_point_to_scalar,
    h2_keyed,
    h2_hash,
    keygen,
    pk_decrypt,
    pk_encrypt,
    sign,
    sym_decrypt,
    sym_encrypt,
    xor_mask,
)
from .errors import EhrChainError
from .ledger import Ledger, account_address, build_signed_tx
from .registry import Certificate, DoctorEnrollment, ParticipantIdentity

K_T_LEN = 32

# Payload type tags (first byte of every on-chain payload).
PAYLOAD_ANCHOR = 0x01
PAYLOAD_GRANT = 0x02
PAYLOAD_TOMBSTONE = 0x03


class ExchangeError(EhrChainError):
    code = "exchange"


class UnknownRecordError(ExchangeError):
    code = "unknown-record"


class TagMismatchError(ExchangeError):
    """The grant is designated to someone else; nothing was decrypted."""

    code = "tag-mismatch"


class DigestMismatchError(ExchangeError):
    """Stored ciphertext does not match its on-chain anchor digest."""

    code = "digest-mismatch"

    def __init__(self, message: str, anchor_tx_id: bytes):
        super().__init__(message)
        self.anchor_tx_id = anchor_tx_id


class PayloadTypeError(ExchangeError):
    code = "payload-type"


# -- Domain types -------------------------------------------------------------


@dataclass(frozen=True)
class HealthRecord:
    patient_ref: str
    body: bytes
    created_at: int
    record_type: str

    def __post_init__(self):
        if not self.body:
            raise ExchangeError("health record body must be non-empty")


@dataclass(frozen=True)
class EncryptedRecord:
    ciphertext: bytes
    digest: bytes  # h2 over the ciphertext, the value anchored on chain


@dataclass(frozen=True)
class MaskedIndexEntry:
    x_index: bytes  # lookup key X, 32 bytes
    z_masked_txid: bytes  # anchor tx id XOR pad, 32 bytes
    k_masked_key: bytes  # record key XOR pad[:16], 16 bytes

    def encode(self) -> bytes:
        """Wire form: X 32B || Z 32B || K 16B."""
        return self.x_index + self.z_masked_txid + self.k_masked_key

    @classmethod
    def decode(cls, data: bytes) -> "MaskedIndexEntry":
        r = codec.Reader(data)
        x = r.take(DIGEST_LEN)
        z = r.take(DIGEST_LEN)
        k = r.take(SYM_KEY_LEN)
        r.done()
        return cls(x, z, k)


@dataclass(frozen=True)
class AuthorizationPass:
    """The capability a patient hands to one doctor: no party identities
    beyond the hosting hospital, by construction."""

    hospital_id: str
    record_time: int
    k_t: bytes

    def encode(self) -> bytes:
        """Wire form: hospital string || record_time u64 || k_t 32B."""
        return codec.pack_str(self.hospital_id) + codec.pack_u64(self.record_time) + self.k_t

    @classmethod
    def decode(cls, data: bytes) -> "AuthorizationPass":
        r = codec.Reader(data)
        hospital_id = r.string()
        record_time = r.u64()
        k_t = r.take(K_T_LEN)
        r.done()
        return cls(hospital_id, record_time, k_t)


@dataclass(frozen=True)
class ReshareGrant:
    r_point: Point  # R = r·G, fresh per grant
    tag: Point  # h1(r·A)·G for the grantee's tag key A
    c1: bytes  # authorization pass encrypted to the grantee

    def encode(self) -> bytes:
        """On-chain payload: type 0x02 || R 33B || tag 33B || C1 blob."""
        return bytes([PAYLOAD_GRANT]) + self.r_point.encode() + self.tag.encode() + codec.pack_bytes(self.c1)

    @classmethod
    def decode(cls, data: bytes) -> "ReshareGrant":
        if not data or data[0] != PAYLOAD_GRANT:
            raise PayloadTypeError("not a grant payload")
        r = codec.Reader(data[1:])
        r_point = Point.decode(r.take(33))
        tag = Point.decode(r.take(33))
        c1 = r.blob()
        r.done()
        return cls(r_point, tag, c1)


@dataclass(frozen=True)
class AccessRequest:
    w: bytes  # the recomputed lookup key X'
    signature: bytes  # over w, under the certificate's encryption key
    cert: Certificate

    def encode(self) -> bytes:
        """Hospital-bound wire form: W 32B || signature blob || certificate blob."""
        return self.w + codec.pack_bytes(self.signature) + codec.pack_bytes(self.cert.encode())

    @classmethod
    def decode(cls, data: bytes) -> "AccessRequest":
        r = codec.Reader(data)
        w = r.take(DIGEST_LEN)
        signature = r.blob()
        cert = Certificate.decode(r.blob())
        r.done()
        return cls(w, signature, cert)


# -- On-chain payload codecs ---------------------------------------------------


def encode_anchor_payload(created_at: int, record_type: str, digest: bytes) -> bytes:
    """Anchor payload: type 0x01 || created_at u64 || record_type string || digest 32B."""
    return bytes([PAYLOAD_ANCHOR]) + codec.pack_u64(created_at) + codec.pack_str(record_type) + digest


def decode_anchor_payload(data: bytes) -> tuple[int, str, bytes]:
    if not data or data[0] != PAYLOAD_ANCHOR:
        raise PayloadTypeError("not an anchor payload")
    r = codec.Reader(data[1:])
    created_at = r.u64()
    record_type = r.string()
    digest = r.take(DIGEST_LEN)
    r.done()
    return created_at, record_type, digest


def encode_tombstone_payload(x_index: bytes, digest: bytes) -> bytes:
    """Tombstone payload: type 0x03 || X 32B || anchored digest 32B."""
    return bytes([PAYLOAD_TOMBSTONE]) + x_index + digest


def decode_tombstone_payload(data: bytes) -> tuple[bytes, bytes]:
    if not data or data[0] != PAYLOAD_TOMBSTONE:
        raise PayloadTypeError("not a tombstone payload")
    r = codec.Reader(data[1:])
    x = r.take(DIGEST_LEN)
    digest = r.take(DIGEST_LEN)
    r.done()
    return x, digest


# -- Index derivation -----------------------------------------------------------


def index_material(hospital_id: str, record_time: int, domain: int) -> bytes:
    """Keyed-hash input ``hospital || record_time || domain`` (0 for X, 1 for Y)."""
    return codec.pack_str(hospital_id) + codec.pack_u64(record_time) + bytes([domain])


def derive_index_pair(hospital_id: str, record_time: int, k_t: bytes, h2_id: str = "sha256") -> tuple[bytes, bytes]:
    """Lookup key X and secret pad Y for one record under nonce ``k_t``."""
    x = h2_keyed(index_material(hospital_id, record_time, 0), k_t, h2_id)
    y = h2_keyed(index_material(hospital_id, record_time, 1), k_t, h2_id)
    return x, y


# -- Actors ---------------------------------------------------------------------


class Doctor:
    """Certified medical staff: authors records and receives reshares.

    Single-threaded internally; interacts with the world only through the
    ledger and whatever hospital transport the caller provides.
    """

    def __init__(
        self,
        identity: ParticipantIdentity,
        enrollment: DoctorEnrollment,
        certificate: Certificate | None,
        params: SystemParams,
    ):
        self.identity = identity
        self.enrollment = enrollment
        self.certificate = certificate
        self.params = params
        self._pads: dict[bytes, bytes] = {}  # X' -> retained pad Y'
        self._lock = threading.Lock()  # actor is single-threaded internally

    def create_and_anchor_record(
        self,
        patient_ref: str,
        body: bytes,
        record_type: str,
        now: int,
        rng,
        ledger: Ledger,
    ) -> tuple[EncryptedRecord, bytes, bytes]:
        """Encrypt a record, anchor its hash on chain, return the record key.

        Returns (encrypted record, anchor tx id, symmetric key). The caller
        delivers the ciphertext to the hospital and the key to the patient.
        """
        if self.certificate is None:
            raise ExchangeError("doctor holds no certificate")
        record = HealthRecord(patient_ref, body, now, record_type)
        with self._lock:
            key = rng.randbytes(SYM_KEY_LEN)
            ciphertext = sym_encrypt(key, record.body, rng)
            digest = h2_hash(ciphertext, self.params.h2_id)
            payload = encode_anchor_payload(record.created_at, record.record_type, digest)
            nonce = ledger.next_nonce(self.identity.address)
            tx = build_signed_tx(self.identity.enc_keypair, nonce, payload, rng)
            tx_id = ledger.submit_transaction(tx)
        return EncryptedRecord(ciphertext, digest), tx_id, key

    def accept_grant(self, grant: ReshareGrant) -> AuthorizationPass:
        """Recompute the designation tag; decrypt the pass only on a match."""
        expected = self.params.generator.mul(
            h1_point_to_scalar(grant.r_point.mul(self.enrollment.tag_secret), self.params.h1_id)
        )
        if expected != grant.tag:
            raise TagMismatchError("grant is not designated to this doctor")
        return AuthorizationPass.decode(pk_decrypt(self.identity.enc_keypair.secret, grant.c1))

    def build_access_request(self, a_pass: AuthorizationPass, cert: Certificate, rng) -> AccessRequest:
        """Rebuild the lookup key from the pass, retain the pad, sign the key."""
        x, y = derive_index_pair(a_pass.hospital_id, a_pass.record_time, a_pass.k_t, self.params.h2_id)
        with self._lock:
            self._pads[x] = y
        signature = sign(self.identity.enc_keypair.secret, x, rng)
        return AccessRequest(x, signature, cert)

    def retained_pad(self, w: bytes) -> bytes:
        pad = self._pads.get(w)
        if pad is None:
            raise UnknownRecordError("no retained pad for this lookup key")
        return pad

    def recover_record(
        self,
        z_masked: bytes,
        k_masked: bytes,
        chr_ciphertext: bytes,
        y_pad: bytes,
        ledger: Ledger,
    ) -> bytes:
        """Unmask, check the ciphertext against its anchor, then decrypt."""
        tx_id = xor_mask(z_masked, y_pad)
        key = xor_mask(k_masked, y_pad)
        tx = ledger.get_transaction(tx_id)
        _, _, anchored_digest = decode_anchor_payload(tx.payload)
        if h2_hash(chr_ciphertext, self.params.h2_id) != anchored_digest:
            raise DigestMismatchError(
                f"ciphertext digest does not match anchor tx {tx_id.hex()}", tx_id
            )
        return sym_decrypt(key, chr_ciphertext)


class Patient:
    """Record owner: masks index entries and issues designated grants.

    ``fresh_grant_accounts`` signs each grant from a throwaway ledger
    account instead of the patient's registered one.
    """

    def __init__(self, identity: ParticipantIdentity, params: SystemParams, *, fresh_grant_accounts: bool = False):
        self.identity = identity
        self.params = params
        self.fresh_grant_accounts = fresh_grant_accounts
        self._k_t: dict[tuple[str, int], bytes] = {}  # (hospital, record_time) -> nonce
        self._lock = threading.Lock()  # actor is single-threaded internally

    def derive_masked_entry(
        self,
        hospital_id: str,
        record_time: int,
        tx_id: bytes,
        key: bytes,
        rng,
    ) -> tuple[MaskedIndexEntry, bytes]:
        """Fresh nonce, keyed-hash index pair, pad-masked tx id and key.

        The pad never leaves this method; the nonce is retained for grants.
        """
        with self._lock:
            k_t = rng.randbytes(K_T_LEN)
            x, y = derive_index_pair(hospital_id, record_time, k_t, self.params.h2_id)
            entry = MaskedIndexEntry(x, xor_mask(tx_id, y), xor_mask(key, y))
            self._k_t[(hospital_id, record_time)] = k_t
        return entry, k_t

    def grant_access(
        self,
        grantee_tag_pub: Point,
        grantee_pk_enc: Point,
        hospital_id: str,
        record_time: int,
        rng,
        ledger: Ledger,
    ) -> tuple[ReshareGrant, bytes]:
        """Broadcast a grant opening one record to one designated doctor."""
        with self._lock:
            k_t = self._k_t.get((hospital_id, record_time))
            if k_t is None:
                raise UnknownRecordError(f"no record nonce for {hospital_id!r} at {record_time}")
            r = Scalar.random(rng)
            r_point = self.params.generator.mul(r)
            tag = self.params.generator.mul(h1_point_to_scalar(grantee_tag_pub.mul(r), self.params.h1_id))
            a_pass = AuthorizationPass(hospital_id, record_time, k_t)
            c1 = pk_encrypt(grantee_pk_enc, a_pass.encode(), rng)
            grant = ReshareGrant(r_point, tag, c1)
            if self.fresh_grant_accounts:
                sender = keygen(self.params, rng)
                ledger.create_account(sender.public)
            else:
                sender = self.identity.enc_keypair
            nonce = ledger.next_nonce(account_address(sender.public, ledger.h2_id))
            tx = build_signed_tx(sender, nonce, grant.encode(), rng)
            tx_id = ledger.submit_transaction(tx)
        return grant, tx_id
