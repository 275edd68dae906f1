"""Deterministic multi-actor scenario runner and benchmark suite.

A scenario builds a fresh universe from a seed (simulated clock, ledger,
authority, hospitals, certified doctors, patients), drives the full
record-sharing pipeline, asserts every recovery returns the original
bytes, and reports wall times plus byte counts measured from the actual
serialized messages — never estimates.

Benchmarks cover the three cost axes: symmetric crypto vs record size,
per-role communication vs number of granted doctors, and end-to-end
consult latency vs concurrent patients.
"""

from __future__ import annotations

import csv
import io
import json
import os
import random
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import EhrChainError
from .crypto import sym_decrypt, sym_encrypt
from .hospital_store import HospitalStore, encode_release
from .ledger import Ledger
from .record_exchange import Doctor, Patient
from .registry import Registry, Role, register_doctor

SIM_EPOCH = 1_700_000_000  # fixed origin so replays produce identical timestamps
YEAR = 365 * 24 * 3600


class ScenarioError(EhrChainError):
    code = "scenario"

    def __init__(self, phase: str, message: str):
        super().__init__(f"phase {phase!r}: {message}")
        self.phase = phase


class SimClock:
    """Deterministic monotone clock: starts at a fixed epoch, steps per read."""

    def __init__(self, start: int = SIM_EPOCH, step: int = 1):
        self._now = start
        self._step = step
        self._lock = threading.Lock()

    def __call__(self) -> int:
        with self._lock:
            now = self._now
            self._now += self._step
            return now

    def peek(self) -> int:
        with self._lock:
            return self._now


@dataclass
class ScenarioConfig:
    seed: int = 42
    n_hospitals: int = 1
    n_doctors: int = 2
    n_patients: int = 1
    record_size_bytes: int | list[int] = 1024
    record_type: str = "consult"
    n_concurrent: int = 1
    block_seal_latency_ms: float = 0.0
    tamper: bool = False
    output_path: str | None = None

    def validate(self) -> None:
        if min(self.n_hospitals, self.n_doctors, self.n_patients, self.n_concurrent) < 1:
            raise ScenarioError("config", "all counts must be >= 1")
        sizes = self.sizes()
        if not sizes or min(sizes) < 1:
            raise ScenarioError("config", "record sizes must be >= 1 byte")

    def sizes(self) -> list[int]:
        s = self.record_size_bytes
        return list(s) if isinstance(s, (list, tuple)) else [int(s)]


@dataclass
class MetricsReport:
    """Scenario outcome. Non-timing fields are a pure function of the config."""

    seed: int
    n_hospitals: int
    n_doctors: int
    n_patients: int
    record_sizes: list[int]
    block_seal_latency_ms: float
    recoveries_ok: int
    chain_ok: bool
    patient_bytes_sent: int
    hospital_bytes_sent: int
    doctor_bytes_sent: int
    message_sizes: dict[str, list[int]]
    phase_wall_ms: dict[str, float]
    per_patient_latency_ms: list[float]

    def deterministic_fields(self) -> dict:
        d = self.to_dict()
        d.pop("phase_wall_ms")
        d.pop("per_patient_latency_ms")
        return d

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_hospitals": self.n_hospitals,
            "n_doctors": self.n_doctors,
            "n_patients": self.n_patients,
            "record_sizes": self.record_sizes,
            "block_seal_latency_ms": self.block_seal_latency_ms,
            "recoveries_ok": self.recoveries_ok,
            "chain_ok": self.chain_ok,
            "patient_bytes_sent": self.patient_bytes_sent,
            "hospital_bytes_sent": self.hospital_bytes_sent,
            "doctor_bytes_sent": self.doctor_bytes_sent,
            "message_sizes": self.message_sizes,
            "phase_wall_ms": self.phase_wall_ms,
            "per_patient_latency_ms": self.per_patient_latency_ms,
        }


@dataclass
class Universe:
    """Everything execute_scenario builds before any record flows."""

    config: ScenarioConfig
    clock: SimClock
    rng: random.Random
    ledger: Ledger
    registry: Registry
    ha_pk: object
    stores: list[HospitalStore]
    doctors: list[Doctor]
    patients: list[Patient]
    patient_hospital: list[int]  # patient index -> hospital index


@dataclass
class ConsultTrace:
    """Per-consult artifacts retained for scans and byte accounting."""

    patient_index: int
    body: bytes
    recovered: bytes
    anchor_tx_id: bytes
    anchor_tx_bytes: bytes
    masked_entry_bytes: bytes
    grant_tx_bytes: bytes
    psi_bytes: bytes
    release_bytes: bytes
    chr_len: int
    latency_s: float


@dataclass
class ScenarioRun:
    universe: Universe
    consults: list[ConsultTrace] = field(default_factory=list)
    report: MetricsReport | None = None


def build_universe(config: ScenarioConfig) -> Universe:
    """Setup plus registration, deterministic in config.seed."""
    config.validate()
    clock = SimClock()
    rng = random.Random(config.seed)
    ledger = Ledger(clock=clock, seal_latency_s=config.block_seal_latency_ms / 1000.0)
    registry = Registry(ledger, rng)
    params, _ = registry.system_setup()
    ha_pk = registry.ha_public_key

    stores = []
    for h in range(config.n_hospitals):
        hospital_id = registry.register_participant(Role.HOSPITAL, ("M", f"H{h + 1}"))
        stores.append(
            HospitalStore(hospital_id.id_string, identity=hospital_id, ledger=ledger, rng=rng)
        )

    doctors = []
    now = clock()
    for d in range(config.n_doctors):
        hospital = f"H{(d % config.n_hospitals) + 1}"
        identity = registry.register_participant(Role.DOCTOR, ("M", hospital, f"D{d + 1}"))
        enrollment = register_doctor(identity, rng, params)
        cert = registry.issue_certificate(enrollment.to_request(), (now, now + YEAR))
        doctors.append(Doctor(identity, enrollment, cert, params))

    patients = []
    patient_hospital = []
    for p in range(config.n_patients):
        h = p % config.n_hospitals
        identity = registry.register_participant(Role.PATIENT, ("M", f"H{h + 1}", f"P{p + 1}"))
        patients.append(Patient(identity, params))
        patient_hospital.append(h)

    return Universe(config, clock, rng, ledger, registry, ha_pk, stores, doctors, patients, patient_hospital)


def _run_consult(
    uni: Universe,
    patient_index: int,
    author: Doctor,
    grantee: Doctor,
    store: HospitalStore,
    body: bytes,
    rng: random.Random,
    tamper: bool = False,
) -> ConsultTrace:
    """One full pipeline: create, anchor, mask, store, grant, accept,
    request, release, recover. Raises ScenarioError naming the failed phase."""
    config = uni.config
    patient = uni.patients[patient_index]
    start = time.perf_counter()

    try:
        now = uni.clock()
        enc_record, anchor_tx_id, key = author.create_and_anchor_record(
            patient.identity.id_string, body, config.record_type, now, rng, uni.ledger
        )
        record_time = now
    except EhrChainError as exc:
        raise ScenarioError("record", str(exc)) from exc

    try:
        entry, _ = patient.derive_masked_entry(store.hospital_id, record_time, anchor_tx_id, key, rng)
        store.store_record(entry, enc_record.ciphertext, uni.clock())
    except EhrChainError as exc:
        raise ScenarioError("mask-and-store", str(exc)) from exc

    try:
        grant, grant_tx_id = patient.grant_access(
            grantee.enrollment.tag_pub,
            grantee.identity.enc_keypair.public,
            store.hospital_id,
            record_time,
            rng,
            uni.ledger,
        )
    except EhrChainError as exc:
        raise ScenarioError("grant", str(exc)) from exc

    try:
        a_pass = grantee.accept_grant(grant)
        request = grantee.build_access_request(a_pass, grantee.certificate, rng)
        psi_bytes = request.encode()
    except EhrChainError as exc:
        raise ScenarioError("accept", str(exc)) from exc

    try:
        z, k, chr_ct = store.handle_access_request(request, uni.ha_pk, uni.clock())
        release_bytes = encode_release(z, k, chr_ct)
    except EhrChainError as exc:
        raise ScenarioError("release", str(exc)) from exc

    if tamper:
        # Simulated in-flight corruption of the released ciphertext.
        flipped = bytearray(chr_ct)
        flipped[len(flipped) // 2] ^= 0x01
        chr_ct = bytes(flipped)

    try:
        recovered = grantee.recover_record(z, k, chr_ct, grantee.retained_pad(request.w), uni.ledger)
    except EhrChainError as exc:
        raise ScenarioError("recover", str(exc)) from exc

    if recovered != body:
        raise ScenarioError("recover", "recovered bytes differ from the original record")

    anchor_tx_bytes = uni.ledger.get_transaction(anchor_tx_id).canonical_bytes()
    grant_tx_bytes = uni.ledger.get_transaction(grant_tx_id).canonical_bytes()
    return ConsultTrace(
        patient_index=patient_index,
        body=body,
        recovered=recovered,
        anchor_tx_id=anchor_tx_id,
        anchor_tx_bytes=anchor_tx_bytes,
        masked_entry_bytes=entry.encode(),
        grant_tx_bytes=grant_tx_bytes,
        psi_bytes=psi_bytes,
        release_bytes=release_bytes,
        chr_len=len(enc_record.ciphertext),
        latency_s=time.perf_counter() - start,
    )


def execute_scenario(config: ScenarioConfig) -> ScenarioRun:
    """Run the scenario and keep every artifact for inspection."""
    t0 = time.perf_counter()
    uni = build_universe(config)
    setup_ms = (time.perf_counter() - t0) * 1000

    sizes = config.sizes()
    jobs = []
    for p in range(config.n_patients):
        author = uni.doctors[p % config.n_doctors]
        grantee = uni.doctors[(p + 1) % config.n_doctors]
        store = uni.stores[uni.patient_hospital[p]]
        rng = random.Random(f"{config.seed}/patient/{p}")
        body = rng.randbytes(sizes[p % len(sizes)])
        jobs.append((p, author, grantee, store, body, rng))

    t1 = time.perf_counter()
    if config.n_concurrent > 1:
        with ThreadPoolExecutor(max_workers=config.n_concurrent) as pool:
            consults = list(
                pool.map(lambda j: _run_consult(uni, j[0], j[1], j[2], j[3], j[4], j[5], config.tamper), jobs)
            )
    else:
        consults = [_run_consult(uni, *job, config.tamper) for job in jobs]
    consult_ms = (time.perf_counter() - t1) * 1000

    chain_check = uni.ledger.verify_chain()
    if not chain_check:
        raise ScenarioError("audit", repr(chain_check))

    message_sizes = {
        "anchor_tx": [len(c.anchor_tx_bytes) for c in consults],
        "masked_entry": [len(c.masked_entry_bytes) for c in consults],
        "grant_tx": [len(c.grant_tx_bytes) for c in consults],
        "psi": [len(c.psi_bytes) for c in consults],
        "release": [len(c.release_bytes) for c in consults],
        "chr_upload": [c.chr_len for c in consults],
    }
    report = MetricsReport(
        seed=config.seed,
        n_hospitals=config.n_hospitals,
        n_doctors=config.n_doctors,
        n_patients=config.n_patients,
        record_sizes=sizes,
        block_seal_latency_ms=config.block_seal_latency_ms,
        recoveries_ok=sum(1 for c in consults if c.recovered == c.body),
        chain_ok=bool(chain_check),
        patient_bytes_sent=sum(len(c.masked_entry_bytes) + len(c.grant_tx_bytes) for c in consults),
        hospital_bytes_sent=sum(len(c.release_bytes) for c in consults),
        doctor_bytes_sent=sum(len(c.anchor_tx_bytes) + c.chr_len + len(c.psi_bytes) for c in consults),
        message_sizes=message_sizes,
        phase_wall_ms={"setup_and_registration": setup_ms, "consults": consult_ms},
        per_patient_latency_ms=[c.latency_s * 1000 for c in consults],
    )
    return ScenarioRun(uni, consults, report)


def run_scenario(config: ScenarioConfig) -> MetricsReport:
    return execute_scenario(config).report


# -- Benchmarks --------------------------------------------------------------


_allocator_tuned = False


def _tune_allocator_for_benchmarks() -> None:
    """Pin glibc's malloc to recycle large buffers instead of mmap/trim churn.

    One-shot AEAD over tens of megabytes allocates and frees a buffer per
    call; above glibc's dynamic mmap threshold (32 MiB) every call then
    pays a full page-fault-and-zero pass, which costs far more than the
    cipher itself and puts a spurious step into the size/time curve. Raising
    the mmap and trim thresholds keeps freed pages resident so the benchmark
    times encryption, not the allocator. No-op on non-glibc platforms.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return
    _allocator_tuned = True
    try:
        import ctypes

        libc = ctypes.CDLL(None)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


# Every timed pass streams this many bytes regardless of record size (many
# small records or few large ones), so the cache works the same way at every
# size and the per-record time reflects the cipher, not the cache level a
# single buffer happens to fit in. All sizes stay resident at once
# (~2x this per size), so keep it moderate.
_BENCH_BATCH_BYTES = 64 * 1024 * 1024


def bench_encryption(sizes: list[int], reps: int = 3) -> list[dict]:
    """Per-record encrypt/decrypt wall time per size (sizes ascending, bytes).

    Reps run as interleaved sweeps over all sizes, each timing one
    constant-volume batch (see above), so drift in host load lands on every
    size alike. Rows carry the mean over reps, the median, and the minimum.
    Trend against the minimum: preemption and load only ever add time, so
    the fastest pass is the faithful cost estimate.
    """
    if not sizes or min(sizes) < 1:
        raise ScenarioError("bench-enc", "sizes must be positive byte counts")
    if sorted(sizes) != list(sizes):
        raise ScenarioError("bench-enc", "sizes must be ascending")
    if reps < 1:
        raise ScenarioError("bench-enc", "reps must be >= 1")
    _tune_allocator_for_benchmarks()
    rng = random.Random(0)
    key = rng.randbytes(16)
    pools = []
    for size in sizes:
        n_ops = max(1, _BENCH_BATCH_BYTES // size)
        bodies = [os.urandom(size) for _ in range(n_ops)]
        cts = [sym_encrypt(key, body, rng) for body in bodies]  # warm, and dec inputs
        if sym_decrypt(key, cts[0]) != bodies[0]:
            raise ScenarioError("bench-enc", "roundtrip mismatch")
        pools.append((size, bodies, cts))
    enc_times: dict[int, list[float]] = {size: [] for size in sizes}
    dec_times: dict[int, list[float]] = {size: [] for size in sizes}
    for _ in range(reps):
        for size, bodies, cts in pools:
            t0 = time.perf_counter()
            for body in bodies:
                sym_encrypt(key, body, rng)
            enc_times[size].append((time.perf_counter() - t0) / len(bodies))
            t0 = time.perf_counter()
            for ct in cts:
                sym_decrypt(key, ct)
            dec_times[size].append((time.perf_counter() - t0) / len(cts))
    return [
        {
            "size_bytes": size,
            "enc_ms": statistics.mean(enc_times[size]) * 1000,
            "dec_ms": statistics.mean(dec_times[size]) * 1000,
            "enc_ms_min": min(enc_times[size]) * 1000,
            "dec_ms_min": min(dec_times[size]) * 1000,
            "enc_ms_p50": statistics.median(enc_times[size]) * 1000,
            "dec_ms_p50": statistics.median(dec_times[size]) * 1000,
            "records_per_pass": max(1, _BENCH_BATCH_BYTES // size),
        }
        for size in sizes
    ]


def bench_communication(n_doctors: list[int], seed: int = 42) -> list[dict]:
    """Measured bytes per role for one record plus n reshares, per n.

    Patient-side bytes are the masked index upload plus the broadcast grant
    transactions; hospital-side bytes are the release triples. Sizes come
    from the real serialized messages, so codec changes show up here
    without touching this function.
    """
    rows = []
    for n in n_doctors:
        if n < 1:
            raise ScenarioError("bench-comm", "doctor counts must be >= 1")
        config = ScenarioConfig(seed=seed, n_hospitals=1, n_doctors=1 + n, n_patients=1)
        uni = build_universe(config)
        rng = random.Random(f"{seed}/bench-comm/{n}")
        author = uni.doctors[0]
        grantees = uni.doctors[1 : 1 + n]
        patient = uni.patients[0]
        store = uni.stores[0]

        body = rng.randbytes(1024)
        now = uni.clock()
        enc_record, anchor_tx_id, key = author.create_and_anchor_record(
            patient.identity.id_string, body, config.record_type, now, rng, uni.ledger
        )
        entry, _ = patient.derive_masked_entry(store.hospital_id, now, anchor_tx_id, key, rng)
        store.store_record(entry, enc_record.ciphertext, uni.clock())

        patient_bytes = len(entry.encode())
        hospital_bytes = 0
        breakdown = {"masked_entry": len(entry.encode()), "grant_tx": [], "release": []}
        for grantee in grantees:
            grant, grant_tx_id = patient.grant_access(
                grantee.enrollment.tag_pub,
                grantee.identity.enc_keypair.public,
                store.hospital_id,
                now,
                rng,
                uni.ledger,
            )
            grant_bytes = len(uni.ledger.get_transaction(grant_tx_id).canonical_bytes())
            patient_bytes += grant_bytes
            breakdown["grant_tx"].append(grant_bytes)

            a_pass = grantee.accept_grant(grant)
            request = grantee.build_access_request(a_pass, grantee.certificate, rng)
            z, k, chr_ct = store.handle_access_request(request, uni.ha_pk, uni.clock())
            release_len = len(encode_release(z, k, chr_ct))
            hospital_bytes += release_len
            breakdown["release"].append(release_len)
            recovered = grantee.recover_record(z, k, chr_ct, grantee.retained_pad(request.w), uni.ledger)
            if recovered != body:
                raise ScenarioError("bench-comm", "recovery mismatch")
        rows.append(
            {
                "n_doctors": n,
                "patient_bytes": patient_bytes,
                "hospital_bytes": hospital_bytes,
                "breakdown": breakdown,
            }
        )
    return rows


def bench_latency(
    n_patients: list[int],
    block_seal_latency_ms: float = 0.0,
    consults_per_patient: int = 3,
    seed: int = 42,
    record_size_bytes: int = 4096,
) -> list[dict]:
    """Mean end-to-end consult latency with n concurrent patient actors.

    Each patient drives its own author/grantee pair so contention happens
    at the shared hospital store and ledger, not on actor accounts.
    """
    rows = []
    for n in n_patients:
        if n < 1:
            raise ScenarioError("bench-latency", "patient counts must be >= 1")
        config = ScenarioConfig(
            seed=seed,
            n_hospitals=1,
            n_doctors=2 * n,
            n_patients=n,
            block_seal_latency_ms=block_seal_latency_ms,
        )
        uni = build_universe(config)
        store = uni.stores[0]
        barrier = threading.Barrier(n)
        latencies: list[list[float]] = [[] for _ in range(n)]

        def drive(p: int) -> None:
            rng = random.Random(f"{seed}/bench-latency/{n}/{p}")
            author = uni.doctors[2 * p]
            grantee = uni.doctors[2 * p + 1]
            barrier.wait()
            for _ in range(consults_per_patient):
                body = rng.randbytes(record_size_bytes)
                trace = _run_consult(uni, p, author, grantee, store, body, rng)
                latencies[p].append(trace.latency_s)

        threads = [threading.Thread(target=drive, args=(p,)) for p in range(n)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        flat = [lat for per in latencies for lat in per]
        rows.append(
            {
                "n_patients": n,
                "mean_latency_ms": statistics.mean(flat) * 1000,
                "stdev_latency_ms": statistics.stdev(flat) * 1000 if len(flat) > 1 else 0.0,
                "consults": len(flat),
            }
        )
    return rows


# -- Output -------------------------------------------------------------------


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    flat_rows = [{k: v for k, v in row.items() if not isinstance(v, (dict, list))} for row in rows]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(flat_rows[0].keys()))
    writer.writeheader()
    writer.writerows(flat_rows)
    return buf.getvalue()


def emit(rows_or_report, path: str | None, fmt: str) -> str:
    """Serialize benchmark rows or a report to csv/json; write if path given."""
    if fmt == "json":
        payload = rows_or_report.to_dict() if isinstance(rows_or_report, MetricsReport) else rows_or_report
        text = json.dumps(payload, indent=2) + "\n"
    elif fmt == "csv":
        if isinstance(rows_or_report, MetricsReport):
            rows = [
                {
                    "metric": k,
                    "value": v if not isinstance(v, (dict, list)) else json.dumps(v),
                }
                for k, v in rows_or_report.to_dict().items()
            ]
        else:
            rows = rows_or_report
        text = rows_to_csv(rows)
    else:
        raise ScenarioError("output", f"unknown format {fmt!r}")
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
