import random

import pytest

from ehrchain.harness import SimClock, YEAR
from ehrchain.hospital_store import HospitalStore
from ehrchain.ledger import Ledger
from ehrchain.record_exchange import Doctor, Patient
from ehrchain.registry import Registry, Role, register_doctor


@pytest.fixture
def rng():
    return random.Random(0xEC)


@pytest.fixture
def clock():
    return SimClock()


class World:
    """One hospital, two certified doctors, one patient, shared ledger."""

    def __init__(self, seed=1, n_doctors=2, n_patients=1):
        self.rng = random.Random(seed)
        self.clock = SimClock()
        self.ledger = Ledger(clock=self.clock)
        self.registry = Registry(self.ledger, self.rng)
        self.params, self.ha = self.registry.system_setup()
        self.ha_pk = self.registry.ha_public_key
        hospital_identity = self.registry.register_participant(Role.HOSPITAL, ("M", "H1"))
        self.hospital_id = hospital_identity.id_string
        self.store = HospitalStore(
            self.hospital_id, identity=hospital_identity, ledger=self.ledger, rng=self.rng
        )
        now = self.clock()
        self.doctors = []
        for i in range(n_doctors):
            identity = self.registry.register_participant(Role.DOCTOR, ("M", "H1", f"D{i + 1}"))
            enrollment = register_doctor(identity, self.rng, self.params)
            cert = self.registry.issue_certificate(enrollment.to_request(), (now, now + YEAR))
            self.doctors.append(Doctor(identity, enrollment, cert, self.params))
        self.patients = [
            Patient(self.registry.register_participant(Role.PATIENT, ("M", "H1", f"P{i + 1}")), self.params)
            for i in range(n_patients)
        ]

    def consult(self, body=b"blood panel: normal", patient=None, author=None, grantee=None):
        """Full record pipeline; returns every intermediate artifact."""
        patient = patient or self.patients[0]
        author = author or self.doctors[0]
        grantee = grantee or self.doctors[1]
        now = self.clock()
        enc_record, anchor_tx_id, key = author.create_and_anchor_record(
            patient.identity.id_string, body, "consult", now, self.rng, self.ledger
        )
        entry, k_t = patient.derive_masked_entry(self.hospital_id, now, anchor_tx_id, key, self.rng)
        self.store.store_record(entry, enc_record.ciphertext, self.clock())
        grant, grant_tx_id = patient.grant_access(
            grantee.enrollment.tag_pub,
            grantee.identity.enc_keypair.public,
            self.hospital_id,
            now,
            self.rng,
            self.ledger,
        )
        return {
            "now": now,
            "enc_record": enc_record,
            "anchor_tx_id": anchor_tx_id,
            "key": key,
            "entry": entry,
            "k_t": k_t,
            "grant": grant,
            "grant_tx_id": grant_tx_id,
            "patient": patient,
            "author": author,
            "grantee": grantee,
        }


@pytest.fixture
def world():
    return World()
