"""In-process simulated Ethereum-style ledger.

One sealing authority, no consensus: transactions are validated at
submission, ordered by arrival, and sealed into hash-chained blocks.
Gas fields are carried for wire-shape fidelity and byte counting but are
never charged. The canonical transaction serialization (see
``Transaction.signing_bytes``/``canonical_bytes``) is the exact byte string
that signatures and transaction ids commit to.

Wire layout::

    signing_bytes  = nonce u64 || gas_price u64 || gas_limit u64 ||
                     recipient 20B || value u64 || payload blob ||
                     sender_pub 33B
    canonical      = signing_bytes || signature blob
    tx_id          = h2(canonical)
    block_hash     = h2(height u64 || prev_hash 32B || timestamp u64 ||
                        count u32 || tx_id*)

Chain export is one JSON object per line (blocks carry their tx ids,
transactions their canonical hex), replayable byte-for-byte.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass

from . import codec
from .crypto import KeyPair, Point, h2_hash, sign, verify
from .errors import EhrChainError

ADDRESS_LEN = 20

# Recipient marker for transactions addressed to no particular account.
BROADCAST = b"\xff" * ADDRESS_LEN

GENESIS_PREV_HASH = b"\x00" * 32


class LedgerError(EhrChainError):
    code = "ledger"


class InvalidSignatureError(LedgerError):
    code = "bad-signature"


class NonceError(LedgerError):
    code = "bad-nonce"


class UnknownTransactionError(LedgerError):
    code = "unknown-tx"


def account_address(pk: Point, h2_id: str = "sha256") -> bytes:
    """Account address: first 20 bytes of h2 over the compressed public key."""
    return h2_hash(pk.encode(), h2_id)[:ADDRESS_LEN]


@dataclass(frozen=True)
class Transaction:
    nonce: int
    gas_price: int
    gas_limit: int
    recipient: bytes
    value: int
    payload: bytes
    sender_pub: Point
    signature: bytes

    def signing_bytes(self) -> bytes:
        return (
            codec.pack_u64(self.nonce)
            + codec.pack_u64(self.gas_price)
            + codec.pack_u64(self.gas_limit)
            + self.recipient
            + codec.pack_u64(self.value)
            + codec.pack_bytes(self.payload)
            + self.sender_pub.encode()
        )

    def canonical_bytes(self) -> bytes:
        return self.signing_bytes() + codec.pack_bytes(self.signature)

    def tx_id(self, h2_id: str = "sha256") -> bytes:
        return h2_hash(self.canonical_bytes(), h2_id)

    @classmethod
    def decode(cls, data: bytes) -> "Transaction":
        r = codec.Reader(data)
        nonce = r.u64()
        gas_price = r.u64()
        gas_limit = r.u64()
        recipient = r.take(ADDRESS_LEN)
        value = r.u64()
        payload = r.blob()
        sender_pub = Point.decode(r.take(33))
        signature = r.blob()
        r.done()
        return cls(nonce, gas_price, gas_limit, recipient, value, payload, sender_pub, signature)


def build_signed_tx(
    sender: KeyPair,
    nonce: int,
    payload: bytes,
    rng=None,
    *,
    recipient: bytes = BROADCAST,
    gas_price: int = 1,
    gas_limit: int = 21000,
    value: int = 0,
) -> Transaction:
    unsigned = Transaction(nonce, gas_price, gas_limit, recipient, value, payload, sender.public, b"")
    sig = sign(sender.secret, unsigned.signing_bytes(), rng)
    return Transaction(nonce, gas_price, gas_limit, recipient, value, payload, sender.public, sig)


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: int
    tx_ids: tuple[bytes, ...]
    block_hash: bytes


def compute_block_hash(
    height: int, prev_hash: bytes, timestamp: int, tx_ids: tuple[bytes, ...], h2_id: str = "sha256"
) -> bytes:
    body = codec.pack_u64(height) + prev_hash + codec.pack_u64(timestamp) + codec.pack_u32(len(tx_ids))
    for txid in tx_ids:
        body += txid
    return h2_hash(body, h2_id)


class ChainVerification:
    """Outcome of a whole-chain audit; falsy with a located fault."""

    def __init__(self, ok: bool, height: int | None = None, reason: str | None = None):
        self.ok = ok
        self.height = height
        self.reason = reason

    def __bool__(self) -> bool:
        return self.ok

    def __repr__(self) -> str:
        if self.ok:
            return "ChainVerification(ok)"
        return f"ChainVerification(fault at block {self.height}: {self.reason})"


class Ledger:
    """Single logical chain state machine; submissions are serialized.

    With ``auto_seal`` (the default) every submission is confirmed into its
    own block immediately, after an optional simulated upload delay.
    """

    def __init__(
        self,
        h2_id: str = "sha256",
        *,
        auto_seal: bool = True,
        clock=None,
        seal_latency_s: float = 0.0,
    ):
        self.h2_id = h2_id
        self.auto_seal = auto_seal
        self.seal_latency_s = seal_latency_s
        self._clock = clock if clock is not None else (lambda: int(time.time()))
        self._lock = threading.Lock()
        self._nonces: dict[bytes, int] = {}  # address -> last accepted nonce
        self._mempool: list[Transaction] = []
        self._txs: dict[bytes, Transaction] = {}
        self._blocks: list[Block] = []

    # -- accounts ----------------------------------------------------------

    def create_account(self, pk: Point) -> bytes:
        address = account_address(pk, self.h2_id)
        with self._lock:
            self._nonces.setdefault(address, -1)
        return address

    def next_nonce(self, address: bytes) -> int:
        with self._lock:
            return self._nonces.get(address, -1) + 1

    # -- transactions ------------------------------------------------------

    def submit_transaction(self, tx: Transaction) -> bytes:
        if not verify(tx.sender_pub, tx.signing_bytes(), tx.signature):
            raise InvalidSignatureError("transaction signature does not verify")
        address = account_address(tx.sender_pub, self.h2_id)
        with self._lock:
            last = self._nonces.get(address, -1)
            if tx.nonce != last + 1:
                raise NonceError(f"expected nonce {last + 1}, got {tx.nonce}")
            self._nonces[address] = tx.nonce
            self._mempool.append(tx)
        if self.auto_seal:
            if self.seal_latency_s > 0:
                time.sleep(self.seal_latency_s)
            self.seal_block(self._clock())
        return tx.tx_id(self.h2_id)

    def seal_block(self, now: int) -> Block:
        with self._lock:
            pending = self._mempool
            self._mempool = []
            height = len(self._blocks)
            prev = self._blocks[-1].block_hash if self._blocks else GENESIS_PREV_HASH
            tx_ids = tuple(tx.tx_id(self.h2_id) for tx in pending)
            block = Block(height, prev, int(now), tx_ids, compute_block_hash(height, prev, int(now), tx_ids, self.h2_id))
            for tx, txid in zip(pending, tx_ids):
                self._txs[txid] = tx
            self._blocks.append(block)
            return block

    def get_transaction(self, tx_id: bytes) -> Transaction:
        tx = self._txs.get(tx_id)
        if tx is None:
            raise UnknownTransactionError(f"no sealed transaction {tx_id.hex()}")
        return tx

    @property
    def height(self) -> int:
        return len(self._blocks)

    def blocks(self) -> list[Block]:
        return list(self._blocks)

    def transactions(self):
        """Sealed transactions in chain order."""
        for block in self._blocks:
            for txid in block.tx_ids:
                yield txid, self._txs[txid]

    # -- audit ---------------------------------------------------------------

    def verify_chain(self) -> ChainVerification:
        """Recompute every link, id and signature; locate the first fault."""
        prev = GENESIS_PREV_HASH
        seen_nonces: dict[bytes, int] = {}
        for i, block in enumerate(self._blocks):
            if block.height != i:
                return ChainVerification(False, i, "height mismatch")
            if block.prev_hash != prev:
                return ChainVerification(False, i, "broken prev_hash link")
            if compute_block_hash(block.height, block.prev_hash, block.timestamp, block.tx_ids, self.h2_id) != block.block_hash:
                return ChainVerification(False, i, "block hash mismatch")
            for txid in block.tx_ids:
                tx = self._txs.get(txid)
                if tx is None:
                    return ChainVerification(False, i, f"missing transaction {txid.hex()}")
                try:
                    recomputed = tx.tx_id(self.h2_id)
                    sig_ok = verify(tx.sender_pub, tx.signing_bytes(), tx.signature)
                except EhrChainError:
                    return ChainVerification(False, i, "undecodable transaction")
                if recomputed != txid:
                    return ChainVerification(False, i, "transaction id mismatch")
                if not sig_ok:
                    return ChainVerification(False, i, "transaction signature invalid")
                sender = account_address(tx.sender_pub, self.h2_id)
                last = seen_nonces.get(sender, -1)
                if tx.nonce != last + 1:
                    return ChainVerification(False, i, "nonce sequence gap")
                seen_nonces[sender] = tx.nonce
            prev = block.block_hash
        return ChainVerification(True)

    # -- export / import -----------------------------------------------------

    def export_lines(self):
        """Chain as line-delimited JSON records (txs first, then blocks)."""
        for txid, tx in self.transactions():
            yield json.dumps({"kind": "tx", "id": txid.hex(), "raw": tx.canonical_bytes().hex()})
        for block in self._blocks:
            yield json.dumps(
                {
                    "kind": "block",
                    "height": block.height,
                    "prev_hash": block.prev_hash.hex(),
                    "timestamp": block.timestamp,
                    "tx_ids": [t.hex() for t in block.tx_ids],
                    "block_hash": block.block_hash.hex(),
                }
            )

    @classmethod
    def import_lines(cls, lines, h2_id: str = "sha256") -> "Ledger":
        led = cls(h2_id, auto_seal=False)
        for line in lines:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["kind"] == "tx":
                tx = Transaction.decode(bytes.fromhex(rec["raw"]))
                led._txs[bytes.fromhex(rec["id"])] = tx
            elif rec["kind"] == "block":
                led._blocks.append(
                    Block(
                        rec["height"],
                        bytes.fromhex(rec["prev_hash"]),
                        rec["timestamp"],
                        tuple(bytes.fromhex(t) for t in rec["tx_ids"]),
                        bytes.fromhex(rec["block_hash"]),
                    )
                )
            else:
                raise LedgerError(f"unknown record kind {rec.get('kind')!r}")
        # Rebuild nonce tracking from the imported history.
        for _, tx in led.transactions():
            led._nonces[account_address(tx.sender_pub, h2_id)] = tx.nonce
        return led
