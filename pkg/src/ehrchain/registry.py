"""Health-authority setup, enrollment and certificate issuance.

The authority is the only party that can map ledger addresses or
certificate subjects back to enrolled identities (dispute tracing), so the
directory lives here and nothing outside this class exposes it.

Certificates bind a doctor's two public keys (encryption key and tag key)
to a *pseudonymous* subject id — the h2 digest of the enrolled identity
string — so that presenting a certificate never reveals the raw identity;
the authority can still trace the digest back through its directory.

Certificate canonical bytes (the signature covers exactly this)::

    not_before u64 || not_after u64 || subject_id 32B ||
    subject_pk_enc 33B || subject_tag_pub 33B || issuer 20B
"""

from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass

from . import codec
from .crypto import (
    KeyPair,
    Point,
    Scalar,
    SystemParams,
    h2_hash,
    keygen,
    setup_params,
    sign,
    verify,
)
from .errors import EhrChainError
from .ledger import ADDRESS_LEN, Ledger


class RegistryError(EhrChainError):
    code = "registry"


class SetupError(RegistryError):
    code = "double-setup"


class DuplicateIdentityError(RegistryError):
    code = "duplicate-identity"


class UnknownHospitalError(RegistryError):
    code = "unknown-hospital"


class UnknownIdentityError(RegistryError):
    code = "unknown-identity"


class RoleError(RegistryError):
    code = "role"


class InvalidEnrollmentError(RegistryError):
    code = "invalid-enrollment"


class InvalidValidityError(RegistryError):
    code = "invalid-validity"


class Role(str, enum.Enum):
    HA = "HA"
    HOSPITAL = "Hospital"
    DOCTOR = "Doctor"
    PATIENT = "Patient"


# Number of id components each role's composite identity carries:
# authority / authority+hospital / authority+hospital+person.
_ID_ARITY = {Role.HA: 1, Role.HOSPITAL: 2, Role.DOCTOR: 3, Role.PATIENT: 3}


def compose_id(components) -> str:
    parts = tuple(components)
    if not parts or any(not p or "/" in p for p in parts):
        raise RegistryError(f"malformed id components {parts!r}")
    return "/".join(parts)


@dataclass
class ParticipantIdentity:
    """An enrolled actor's own view: role, composite id, account, keys."""

    role: Role
    id_string: str
    address: bytes
    enc_keypair: KeyPair


@dataclass(frozen=True)
class EnrollmentRequest:
    """What a doctor forwards to the authority: id and both public keys."""

    doctor_id: str
    pk_enc: Point
    tag_pub: Point

    def encode(self) -> bytes:
        return codec.pack_str(self.doctor_id) + self.pk_enc.encode() + self.tag_pub.encode()

    @classmethod
    def decode(cls, data: bytes) -> "EnrollmentRequest":
        r = codec.Reader(data)
        doctor_id = r.string()
        pk_enc = Point.decode(r.take(33))
        tag_pub = Point.decode(r.take(33))
        r.done()
        return cls(doctor_id, pk_enc, tag_pub)


@dataclass(frozen=True)
class DoctorEnrollment:
    """Doctor-held enrollment state; ``tag_secret`` never leaves the doctor."""

    doctor_id: str
    pk_enc: Point
    tag_pub: Point
    tag_secret: Scalar

    def to_request(self) -> EnrollmentRequest:
        return EnrollmentRequest(self.doctor_id, self.pk_enc, self.tag_pub)


@dataclass(frozen=True)
class Certificate:
    not_before: int
    not_after: int
    subject_id: bytes  # h2 digest of the enrolled identity string
    subject_pk_enc: Point
    subject_tag_pub: Point
    issuer: bytes  # authority account address
    signature: bytes

    def body_bytes(self) -> bytes:
        return (
            codec.pack_u64(self.not_before)
            + codec.pack_u64(self.not_after)
            + self.subject_id
            + self.subject_pk_enc.encode()
            + self.subject_tag_pub.encode()
            + self.issuer
        )

    def encode(self) -> bytes:
        return self.body_bytes() + codec.pack_bytes(self.signature)

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        r = codec.Reader(data)
        not_before = r.u64()
        not_after = r.u64()
        subject_id = r.take(32)
        pk_enc = Point.decode(r.take(33))
        tag_pub = Point.decode(r.take(33))
        issuer = r.take(ADDRESS_LEN)
        signature = r.blob()
        r.done()
        return cls(not_before, not_after, subject_id, pk_enc, tag_pub, issuer, signature)


class CertCheck:
    """Boolean verification outcome with a reason code for the false case."""

    def __init__(self, ok: bool, reason: str = "ok"):
        self.ok = ok
        self.reason = reason

    def __bool__(self) -> bool:
        return self.ok

    def __repr__(self) -> str:
        return f"CertCheck({self.ok}, {self.reason!r})"


def verify_certificate(cert: Certificate, ha_pk: Point, now: int) -> CertCheck:
    """Signature under the authority key plus validity-window check."""
    if not verify(ha_pk, cert.body_bytes(), cert.signature):
        return CertCheck(False, "bad-signature")
    if not (cert.not_before <= now < cert.not_after):
        return CertCheck(False, "outside-validity-window")
    return CertCheck(True)


def register_doctor(identity: ParticipantIdentity, rng=None, params: SystemParams | None = None) -> DoctorEnrollment:
    """Doctor-side enrollment: pick the tag secret, derive its public point."""
    if identity.role is not Role.DOCTOR:
        raise RoleError(f"{identity.role.value} cannot enroll as a doctor")
    gen = params.generator if params is not None else setup_params().generator
    tag_secret = Scalar.random(rng)
    return DoctorEnrollment(identity.id_string, identity.enc_keypair.public, gen.mul(tag_secret), tag_secret)


class Registry:
    """The health authority: runs setup once, then enrolls and certifies.

    Registration is single-writer; reads (tracing, cert verification) are
    lock-free on immutable snapshots.
    """

    def __init__(self, ledger: Ledger, rng, curve_id: str = "secp256k1", h1_id: str = "sha256", h2_id: str = "sha256"):
        self._ledger = ledger
        self._rng = rng
        self._curve_id = curve_id
        self._h1_id = h1_id
        self._h2_id = h2_id
        self._lock = threading.Lock()
        self._params: SystemParams | None = None
        self._ha: ParticipantIdentity | None = None
        # id_string -> (role, address, public key); plus reverse maps for tracing.
        self._directory: dict[str, tuple[Role, bytes, Point]] = {}
        self._by_address: dict[bytes, str] = {}
        self._by_subject: dict[bytes, str] = {}

    # -- Setup ---------------------------------------------------------------

    def system_setup(self) -> tuple[SystemParams, ParticipantIdentity]:
        """Publish public parameters and enroll the authority itself."""
        with self._lock:
            if self._params is not None:
                raise SetupError("system setup already ran for this universe")
            self._params = setup_params(self._curve_id, self._h1_id, self._h2_id)
            kp = keygen(self._params, self._rng)
            address = self._ledger.create_account(kp.public)
            self._ha = ParticipantIdentity(Role.HA, "M", address, kp)
            self._record_locked("M", Role.HA, address, kp.public)
            return self._params, self._ha

    @property
    def params(self) -> SystemParams:
        if self._params is None:
            raise RegistryError("system setup has not run")
        return self._params

    @property
    def ha_public_key(self) -> Point:
        if self._ha is None:
            raise RegistryError("system setup has not run")
        return self._ha.enc_keypair.public


    # -- Enrollment ------------------------------------------------------------

    def register_participant(self, role: Role, id_components) -> ParticipantIdentity:
        """Enroll a hospital, doctor or patient: keypair, account, directory row."""
        params = self.params
        if role is Role.HA:
            raise RoleError("the authority is enrolled by system_setup")
        id_string = compose_id(id_components)
        parts = id_string.split("/")
        if len(parts) != _ID_ARITY[role]:
            raise RegistryError(f"{role.value} id must have {_ID_ARITY[role]} components, got {len(parts)}")
        with self._lock:
            if id_string in self._directory:
                raise DuplicateIdentityError(f"{id_string!r} is already registered")
            if role in (Role.DOCTOR, Role.PATIENT):
                hospital = "/".join(parts[:2])
                entry = self._directory.get(hospital)
                if entry is None or entry[0] is not Role.HOSPITAL:
                    raise UnknownHospitalError(f"{id_string!r} references unregistered hospital {hospital!r}")
            kp = keygen(params, self._rng)
            address = self._ledger.create_account(kp.public)
            self._record_locked(id_string, role, address, kp.public)
            return ParticipantIdentity(role, id_string, address, kp)

    def _record_locked(self, id_string: str, role: Role, address: bytes, pk: Point) -> None:
        self._directory[id_string] = (role, address, pk)
        self._by_address[address] = id_string
        self._by_subject[h2_hash(id_string.encode("utf-8"), self._h2_id)] = id_string

    # -- Certificates ------------------------------------------------------------

    def issue_certificate(self, request: EnrollmentRequest, validity: tuple[int, int]) -> Certificate:
        """Validity-check the enrollment request and sign a certificate."""
        if self._ha is None:
            raise RegistryError("system setup has not run")
        entry = self._directory.get(request.doctor_id)
        if entry is None or entry[0] is not Role.DOCTOR:
            raise UnknownIdentityError(f"no enrolled doctor {request.doctor_id!r}")
        if request.pk_enc.is_identity() or request.tag_pub.is_identity():
            raise InvalidEnrollmentError("enrollment keys must be non-identity curve points")
        not_before, not_after = validity
        if not_after <= not_before:
            raise InvalidValidityError(f"empty validity window [{not_before}, {not_after})")
        subject = h2_hash(request.doctor_id.encode("utf-8"), self._h2_id)
        unsigned = Certificate(not_before, not_after, subject, request.pk_enc, request.tag_pub, self._ha.address, b"")
        sig = sign(self._ha.enc_keypair.secret, unsigned.body_bytes(), self._rng)
        return Certificate(not_before, not_after, subject, request.pk_enc, request.tag_pub, self._ha.address, sig)

    # -- Dispute tracing (authority-only) -----------------------------------------

    def trace_address(self, address: bytes) -> tuple[Role, str]:
        id_string = self._by_address.get(address)
        if id_string is None:
            raise UnknownIdentityError(f"no participant with address {address.hex()}")
        role, _, _ = self._directory[id_string]
        return role, id_string

    def trace_subject(self, subject_id: bytes) -> str:
        id_string = self._by_subject.get(subject_id)
        if id_string is None:
            raise UnknownIdentityError(f"no participant with subject digest {subject_id.hex()}")
        return id_string

    def registered_public_key(self, id_string: str) -> Point:
        entry = self._directory.get(id_string)
        if entry is None:
            raise UnknownIdentityError(f"{id_string!r} is not registered")
        return entry[2]

    # -- Inspection ------------------------------------------------------------

    def export_directory(self):
        """Directory as line-delimited JSON, for offline inspection."""
        for id_string, (role, address, pk) in sorted(self._directory.items()):
            yield json.dumps(
                {
                    "id": id_string,
                    "role": role.value,
                    "address": address.hex(),
                    "public_key": pk.encode().hex(),
                }
            )
