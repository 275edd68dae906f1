"""Acceptance suite: every exit criterion as one test, each printing a
pass/fail line (run with ``pytest tests/test_acceptance.py -s -v``).

Criteria:
  1. full-pipeline round trip, 200 seeded bodies 1 B-4 MB, < 60 s
  2. grant designation: designated doctor always passes the tag check,
     impostors always fail it before any decryption
  3. tamper auditability: every ciphertext byte mutation caught at the
     digest check; every sealed-tx byte mutation flips chain verification
  4. privacy: no patient/grantee address or identity bytes on chain or in
     access requests
  5. unlinkability: fresh grants and fresh indexes never collide
  6. authentication/authorization negatives, four distinct error codes
  7. benchmark shapes: linear encryption scaling, exactly additive patient
     bytes, latency monotone in concurrent patients
  8. oracle equivalence for scalar multiplication, tx ids and block hashes
"""

import dataclasses
import functools
import json
import random
import subprocess
import sys
import time

import pytest

import ehrchain.record_exchange as record_exchange
from ehrchain.crypto import FIELD_PRIME, h2_hash, keygen, setup_params
from ehrchain.harness import (
    ScenarioConfig,
    bench_communication,
    bench_latency,
    execute_scenario,
)
from ehrchain.hospital_store import (
    BadCertificateError,
    BadRequestSignatureError,
    UnknownIndexError,
)
from ehrchain.ledger import Ledger, Transaction, account_address, build_signed_tx, compute_block_hash
from ehrchain.record_exchange import DigestMismatchError, TagMismatchError
from ehrchain.registry import Role, UnknownHospitalError, register_doctor
from ehrchain.errors import EhrChainError

from conftest import World

MB = 1024 * 1024


def criterion(number, title):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                print(f"\n[criterion {number}] FAIL - {title}")
                raise
            print(f"\n[criterion {number}] PASS - {title}")
            return result

        return wrapper

    return decorate


def run_pipeline(world, body, patient=None):
    """Create -> anchor -> mask -> store -> grant -> accept -> request ->
    release -> recover; returns the recovered bytes."""
    c = world.consult(body=body, patient=patient)
    grantee = c["grantee"]
    a_pass = grantee.accept_grant(c["grant"])
    request = grantee.build_access_request(a_pass, grantee.certificate, world.rng)
    z, k, chr_ct = world.store.handle_access_request(request, world.ha_pk, world.clock())
    return grantee.recover_record(z, k, chr_ct, grantee.retained_pad(request.w), world.ledger)


@criterion(1, "200-body protocol round trip, 1 B-4 MB, under 60 s")
def test_criterion_1_roundtrip_200_bodies():
    started = time.monotonic()
    world = World(seed=101)
    size_rng = random.Random(202)
    ok = 0
    for _ in range(200):
        body = size_rng.randbytes(size_rng.randrange(1, 4 * MB + 1))
        if run_pipeline(world, body) == body:
            ok += 1
    elapsed = time.monotonic() - started
    assert ok == 200, f"only {ok}/200 recoveries matched"
    assert elapsed < 60, f"took {elapsed:.1f}s, budget is 60s"


@criterion(2, "grant designation sound for 100 grantee/impostor pairs")
def test_criterion_2_designation(monkeypatch):
    world = World(seed=303)
    params = world.params
    decrypt_calls = []
    real_pk_decrypt = record_exchange.pk_decrypt

    def spying_pk_decrypt(sk, ct):
        decrypt_calls.append(1)
        return real_pk_decrypt(sk, ct)

    monkeypatch.setattr(record_exchange, "pk_decrypt", spying_pk_decrypt)

    patient = world.patients[0]
    rng = world.rng
    c = world.consult()
    designated_ok = 0
    impostor_rejected = 0
    for i in range(100):
        grantee_identity = world.registry.register_participant(Role.DOCTOR, ("M", "H1", f"G{i}"))
        grantee_enr = register_doctor(grantee_identity, rng, params)
        impostor_identity = world.registry.register_participant(Role.DOCTOR, ("M", "H1", f"I{i}"))
        impostor_enr = register_doctor(impostor_identity, rng, params)
        grantee = record_exchange.Doctor(grantee_identity, grantee_enr, None, params)
        impostor = record_exchange.Doctor(impostor_identity, impostor_enr, None, params)

        grant, _ = patient.grant_access(
            grantee_enr.tag_pub, grantee_identity.enc_keypair.public, world.hospital_id, c["now"], rng, world.ledger
        )
        before = len(decrypt_calls)
        with pytest.raises(TagMismatchError):
            impostor.accept_grant(grant)
        assert len(decrypt_calls) == before, "impostor path attempted decryption"
        impostor_rejected += 1
        a_pass = grantee.accept_grant(grant)
        assert a_pass.k_t == c["k_t"]
        designated_ok += 1
    assert designated_ok == 100 and impostor_rejected == 100


@criterion(3, "tamper evidence: 1024/1024 ciphertext mutations and all tx mutations caught")
def test_criterion_3_tamper_auditability():
    world = World(seed=404)
    body = random.Random(405).randbytes(1024 - 29)  # ciphertext is body + 29 bytes framing
    c = world.consult(body=body)
    grantee = c["grantee"]
    a_pass = grantee.accept_grant(c["grant"])
    request = grantee.build_access_request(a_pass, grantee.certificate, world.rng)
    z, k, chr_ct = world.store.handle_access_request(request, world.ha_pk, world.clock())
    assert len(chr_ct) == 1024
    pad = grantee.retained_pad(request.w)

    detected = 0
    for pos in range(len(chr_ct)):
        mutated = bytearray(chr_ct)
        mutated[pos] ^= 0x01
        with pytest.raises(DigestMismatchError):
            grantee.recover_record(z, k, bytes(mutated), pad, world.ledger)
        detected += 1
    assert detected == 1024

    # Every single-byte mutation of a sealed transaction must break the chain.
    anchor_txid = c["anchor_tx_id"]
    original = world.ledger.get_transaction(anchor_txid)
    raw = original.canonical_bytes()
    assert world.ledger.verify_chain()
    tx_detected = 0
    for pos in range(len(raw)):
        mutated = bytearray(raw)
        mutated[pos] ^= 0x01
        try:
            candidate = Transaction.decode(bytes(mutated))
        except EhrChainError:
            tx_detected += 1  # cannot even be parsed back into the chain
            continue
        world.ledger._txs[anchor_txid] = candidate
        if not world.ledger.verify_chain():
            tx_detected += 1
        world.ledger._txs[anchor_txid] = original
    assert tx_detected == len(raw)
    assert world.ledger.verify_chain()


@criterion(4, "no patient/grantee address or identity bytes on chain or in requests")
def test_criterion_4_privacy_scan():
    run = execute_scenario(ScenarioConfig(seed=506, n_hospitals=1, n_doctors=4, n_patients=10))
    uni = run.universe

    needles = []
    for patient in uni.patients:
        needles.append(patient.identity.address)
        needles.append(patient.identity.id_string.encode("utf-8"))
    for doctor in uni.doctors:
        needles.append(doctor.identity.address)
        needles.append(doctor.identity.id_string.encode("utf-8"))

    haystacks = [("tx", tx.canonical_bytes()) for _, tx in uni.ledger.transactions()]
    haystacks += [("psi", consult.psi_bytes) for consult in run.consults]
    assert len(haystacks) >= 30  # 10 anchors + 10 grants + 10 requests

    hits = [
        (kind, needle)
        for kind, blob in haystacks
        for needle in needles
        if needle in blob
    ]
    assert hits == [], f"identity material leaked: {hits[:3]}"


@criterion(5, "100 grants pairwise distinct; 100 record indexes pairwise distinct")
def test_criterion_5_unlinkability():
    world = World(seed=607)
    c = world.consult()
    patient, grantee = c["patient"], c["grantee"]

    grants = []
    for _ in range(100):
        grant, _ = patient.grant_access(
            grantee.enrollment.tag_pub,
            grantee.identity.enc_keypair.public,
            world.hospital_id,
            c["now"],
            world.rng,
            world.ledger,
        )
        grants.append(grant)
    assert len({g.r_point.encode() for g in grants}) == 100
    assert len({g.tag.encode() for g in grants}) == 100
    assert len({g.c1 for g in grants}) == 100

    # Same patient, same hospital, same record time: index freshness must
    # come from k_t alone.
    xs = set()
    for _ in range(100):
        entry, _ = patient.derive_masked_entry(world.hospital_id, c["now"], bytes(32), bytes(16), world.rng)
        xs.add(entry.x_index)
    assert len(xs) == 100


@criterion(6, "four authentication/authorization failures, distinct codes, no data")
def test_criterion_6_auth_negatives():
    world = World(seed=708)
    c = world.consult()
    grantee = c["grantee"]
    seen_codes = set()

    # (a) registration gate: unknown hospital reference.
    with pytest.raises(UnknownHospitalError) as exc_a:
        world.registry.register_participant(Role.PATIENT, ("M", "H9", "P1"))
    seen_codes.add(exc_a.value.code)

    # (b) expired certificate.
    expired_cert = world.registry.issue_certificate(grantee.enrollment.to_request(), (1, 2))
    a_pass = grantee.accept_grant(c["grant"])
    stale_request = grantee.build_access_request(a_pass, expired_cert, world.rng)
    with pytest.raises(BadCertificateError) as exc_b:
        world.store.handle_access_request(stale_request, world.ha_pk, world.clock())
    seen_codes.add(exc_b.value.code)

    # (c) wrong signature on the request.
    good_request = grantee.build_access_request(a_pass, grantee.certificate, world.rng)
    forged = dataclasses.replace(good_request, signature=bytes(len(good_request.signature)))
    with pytest.raises(BadRequestSignatureError) as exc_c:
        world.store.handle_access_request(forged, world.ha_pk, world.clock())
    seen_codes.add(exc_c.value.code)

    # (d) unknown lookup index, with an otherwise honest request.
    from ehrchain.crypto import sign

    w = random.Random(709).randbytes(32)
    sig = sign(grantee.identity.enc_keypair.secret, w, world.rng)
    probing = dataclasses.replace(good_request, w=w, signature=sig)
    with pytest.raises(UnknownIndexError) as exc_d:
        world.store.handle_access_request(probing, world.ha_pk, world.clock())
    seen_codes.add(exc_d.value.code)

    assert len(seen_codes) == 4, f"codes not distinct: {seen_codes}"


@criterion(7, "benchmark shapes: linear encryption, additive bytes, monotone latency")
def test_criterion_7_benchmark_shapes():
    # Encryption scaling over 1-64 MB: monotone, with per-doubling ratio in
    # the calibrated linear window. Runs through the CLI in a fresh process
    # (a heap fragmented by earlier MB-scale tests skews small-size timings)
    # and trends on the min columns; host-load spikes only ever add time, so
    # the fastest pass per size is the faithful reading of the curve.
    sizes = [MB, 2 * MB, 4 * MB, 8 * MB, 16 * MB, 32 * MB, 64 * MB]
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "ehrchain.cli",
            "bench-enc",
            "--sizes",
            ",".join(str(s) for s in sizes),
            "--reps",
            "7",
            "--format",
            "json",
        ],
        capture_output=True,
        text=True,
        check=True,
    )
    rows = json.loads(proc.stdout)
    assert [r["size_bytes"] for r in rows] == sizes
    enc = [r["enc_ms_min"] for r in rows]
    dec = [r["dec_ms_min"] for r in rows]
    assert all(b >= a for a, b in zip(enc, enc[1:])), f"enc not monotone: {enc}"
    assert all(b >= a for a, b in zip(dec, dec[1:])), f"dec not monotone: {dec}"
    for series, name in ((enc, "enc"), (dec, "dec")):
        for a, b in zip(series, series[1:]):
            ratio = b / a
            assert 1.5 <= ratio <= 3.0, f"{name} doubling ratio {ratio:.2f} outside [1.5, 3.0]: {series}"

    # Communication: patient bytes exactly additive per granted doctor.
    comm = bench_communication([1, 2, 4, 8], seed=810)
    increments = [
        (b["patient_bytes"] - a["patient_bytes"]) / (b["n_doctors"] - a["n_doctors"])
        for a, b in zip(comm, comm[1:])
    ]
    assert len(set(increments)) == 1, f"per-doctor increment not constant: {increments}"
    assert increments[0] > 0
    release_sizes = {s for row in comm for s in row["breakdown"]["release"]}
    assert len(release_sizes) == 1, "hospital release size varies with n"

    # Latency monotone nondecreasing in concurrent patients.
    lat = bench_latency([1, 2, 5, 10], consults_per_patient=3, seed=811)
    means = [r["mean_latency_ms"] for r in lat]
    assert all(b >= a for a, b in zip(means, means[1:])), f"latency not monotone: {means}"

    print(
        f"\n[criterion 7][info] patient bytes for one doctor: {comm[0]['patient_bytes']} B"
        f" (reference figure ~4 KB); 10-patient mean latency: {means[-1]:.1f} ms"
        f" (reference figure ~300 ms)"
    )


@criterion(8, "oracle equivalence: scalar mult, tx ids, block hashes")
def test_criterion_8_oracle_equivalence():
    # Scalar multiplication vs naive repeated addition, k <= 64, 20 points.
    def oracle_add(p1, p2):
        if p1 is None:
            return p2
        if p2 is None:
            return p1
        x1, y1 = p1
        x2, y2 = p2
        if x1 == x2:
            if (y1 + y2) % FIELD_PRIME == 0:
                return None
            s = (3 * x1 * x1) * pow(2 * y1, -1, FIELD_PRIME) % FIELD_PRIME
        else:
            s = (y2 - y1) * pow(x2 - x1, -1, FIELD_PRIME) % FIELD_PRIME
        x3 = (s * s - x1 - x2) % FIELD_PRIME
        return x3, (s * (x1 - x3) - y1) % FIELD_PRIME

    params = setup_params()
    rng = random.Random(912)
    checked = 0
    for _ in range(20):
        p = keygen(params, rng).public
        acc = None
        for k in range(1, 65):
            acc = oracle_add(acc, (p.x, p.y))
            result = p.mul(k)
            assert (result.x, result.y) == acc
            checked += 1
    assert checked == 20 * 64

    # Tx ids and block hashes recompute from canonical bytes on a 100-tx chain.
    led = Ledger(auto_seal=False, clock=lambda: 0)
    senders = [keygen(params, rng) for _ in range(4)]
    submitted = []
    for i in range(100):
        sender = senders[i % 4]
        nonce = led.next_nonce(account_address(sender.public))
        tx = build_signed_tx(sender, nonce, f"record-{i}".encode(), rng)
        submitted.append(led.submit_transaction(tx))
        if (i + 1) % 10 == 0:
            led.seal_block(1000 + i)
    matched = 0
    for txid in submitted:
        tx = led.get_transaction(txid)
        assert h2_hash(tx.canonical_bytes()) == txid
        matched += 1
    assert matched == 100
    for block in led.blocks():
        assert compute_block_hash(block.height, block.prev_hash, block.timestamp, block.tx_ids) == block.block_hash
    assert led.verify_chain()
