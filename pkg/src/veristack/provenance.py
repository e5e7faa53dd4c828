"""Append-only, tamper-evident provenance log.

One chain per episode or agent group; multi-agent episodes share a chain
and discriminate by agent_id. Persistence is newline-delimited canonical
JSON, one receipt per line, human-auditable and trivially diffable. The
writer is single (the Verifier Stack); readers may observe a prefix but
never a torn receipt.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from .canonical import GENESIS_HASH
from .receipts import AttestationReceipt, format_issue, receipt_hash, verify_receipt

FAILURE_SIGNATURE = "signature"
FAILURE_LINK = "link"
FAILURE_TIMESTAMP = "timestamp"
FAILURE_FORMAT = "format"


class ProvenanceError(Exception):
    pass


class AppendRejected(ProvenanceError):
    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(f"{kind}: {message}")


class InvalidChainError(ProvenanceError):
    def __init__(self, verdict: "ChainVerdict"):
        self.verdict = verdict
        super().__init__(
            f"chain invalid at index {verdict.first_bad_index} ({verdict.failure_kind})"
        )


class StorageError(ProvenanceError):
    pass


@dataclass(frozen=True)
class ChainVerdict:
    valid: bool
    first_bad_index: Optional[int] = None
    failure_kind: Optional[str] = None
    detail: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "first_bad_index": self.first_bad_index,
            "failure_kind": self.failure_kind,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class ReplayedAction:
    agent_id: str
    tool: str
    args_hash: str
    timestamp: int

    def to_tuple(self) -> tuple:
        return (self.agent_id, self.tool, self.args_hash, self.timestamp)


@dataclass(frozen=True)
class ReceiptFilter:
    tool: Optional[str] = None
    agent_id: Optional[str] = None
    t_min: Optional[int] = None
    t_max: Optional[int] = None

    def matches(self, receipt: AttestationReceipt) -> bool:
        if self.tool is not None and receipt.tool != self.tool:
            return False
        if self.agent_id is not None and receipt.agent_id != self.agent_id:
            return False
        if self.t_min is not None and receipt.timestamp < self.t_min:
            return False
        if self.t_max is not None and receipt.timestamp > self.t_max:
            return False
        return True


class ProvenanceChain:
    """Ordered receipts with verified linkage.

    When constructed with a public key, every append re-checks the link and
    signature preconditions and rejects violators. There is no operation
    that removes or reorders persisted receipts.
    """

    def __init__(
        self,
        public_key=None,
        sink: Optional["LogSink"] = None,
    ):
        self._receipts: list[AttestationReceipt] = []
        self._head_hash = GENESIS_HASH
        self._lock = threading.Lock()
        self.public_key = public_key
        self.sink = sink

    def __len__(self) -> int:
        return len(self._receipts)

    @property
    def length(self) -> int:
        return len(self._receipts)

    @property
    def head_hash(self) -> str:
        return self._head_hash

    @property
    def receipts(self) -> tuple[AttestationReceipt, ...]:
        with self._lock:
            return tuple(self._receipts)

    def __getitem__(self, index):
        return self._receipts[index]

    def append(self, receipt: AttestationReceipt) -> "ProvenanceChain":
        """Validate, persist, then acknowledge the append."""
        with self._lock:
            if receipt.prev_hash != self._head_hash:
                raise AppendRejected(
                    FAILURE_LINK,
                    f"link mismatch: receipt.prev_hash {receipt.prev_hash[:12]}... != head {self._head_hash[:12]}...",
                )
            if self._receipts and receipt.timestamp < self._receipts[-1].timestamp:
                raise AppendRejected(
                    FAILURE_TIMESTAMP,
                    f"timestamp {receipt.timestamp} precedes head {self._receipts[-1].timestamp}",
                )
            if self.public_key is not None and not verify_receipt(receipt, self.public_key):
                raise AppendRejected(FAILURE_SIGNATURE, "receipt signature invalid")
            if self.sink is not None:
                self.sink.write_line(receipt.canonical_form())
            self._receipts.append(receipt)
            self._head_hash = receipt_hash(receipt)
        return self


def verify_chain(chain, public_key) -> ChainVerdict:
    """Check format, linkage, timestamps and signatures, in chain order.

    Total: returns a verdict with the smallest failing index rather than
    raising.
    """
    receipts = chain.receipts if isinstance(chain, ProvenanceChain) else tuple(chain)
    prev_hash = GENESIS_HASH
    prev_ts: Optional[int] = None
    for index, receipt in enumerate(receipts):
        issue = format_issue(receipt)
        if issue is not None:
            return ChainVerdict(False, index, FAILURE_FORMAT, issue)
        if receipt.prev_hash != prev_hash:
            return ChainVerdict(False, index, FAILURE_LINK, "prev_hash does not match predecessor")
        if prev_ts is not None and receipt.timestamp < prev_ts:
            return ChainVerdict(False, index, FAILURE_TIMESTAMP, "timestamp decreased")
        if not verify_receipt(receipt, public_key):
            return ChainVerdict(False, index, FAILURE_SIGNATURE, "signature does not verify")
        prev_hash = receipt_hash(receipt)
        prev_ts = receipt.timestamp
    return ChainVerdict(True)


def replay(chain, public_key=None) -> list[ReplayedAction]:
    """Reconstruct the action sequence in append order.

    With a public key the chain is verified first and an InvalidChainError
    carrying the verdict is raised on failure; without one the caller is
    asserting it already verified.
    """
    if public_key is not None:
        verdict = verify_chain(chain, public_key)
        if not verdict.valid:
            raise InvalidChainError(verdict)
    receipts = chain.receipts if isinstance(chain, ProvenanceChain) else tuple(chain)
    return [
        ReplayedAction(r.agent_id, r.tool, r.args_hash, r.timestamp) for r in receipts
    ]


def query(chain, filter: ReceiptFilter | Callable[[AttestationReceipt], bool]) -> list[AttestationReceipt]:
    """All and only matching receipts, in chain order. Read-only."""
    receipts = chain.receipts if isinstance(chain, ProvenanceChain) else tuple(chain)
    predicate = filter.matches if isinstance(filter, ReceiptFilter) else filter
    return [r for r in receipts if predicate(r)]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


class LogSink:
    """Appends one canonical-JSON receipt per line, LF-terminated.

    fsync-on-append in durable mode so a receipt is persisted before the
    append is acknowledged.
    """

    def __init__(self, path: str | Path, durable: bool = False):
        self.path = Path(path)
        self.durable = durable
        self._fh = open(self.path, "ab")

    def write_line(self, canonical: bytes) -> None:
        self._fh.write(canonical + b"\n")
        self._fh.flush()
        if self.durable:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()


@dataclass
class RecoveryReport:
    receipts_loaded: int
    truncated_partial_line: bool
    truncated_bytes: int


def load_chain_file(
    path: str | Path,
    public_key=None,
    repair: bool = False,
) -> tuple[ProvenanceChain, RecoveryReport]:
    """Recover a chain from its log file.

    A torn final line (crash mid-append) is reported and, with ``repair``,
    truncated from the file; partial receipts are never silently accepted.
    Corruption anywhere before the final line raises StorageError.
    """
    path = Path(path)
    data = path.read_bytes()
    lines = data.split(b"\n")
    trailing = lines.pop()  # empty when the file ends with LF
    receipts: list[AttestationReceipt] = []
    good_bytes = 0
    for lineno, line in enumerate(lines):
        if not line:
            raise StorageError(f"{path}: blank line at {lineno + 1}")
        try:
            record = json.loads(line.decode("utf-8"))
            receipt = AttestationReceipt.from_dict(record)
        except Exception as exc:
            if lineno == len(lines) - 1 and not trailing:
                # unparseable final line: treat as torn
                trailing = line
                break
            raise StorageError(f"{path}: corrupt receipt at line {lineno + 1}: {exc}") from None
        receipts.append(receipt)
        good_bytes += len(line) + 1

    torn = bool(trailing)
    if torn and repair:
        with open(path, "r+b") as fh:
            fh.truncate(good_bytes)

    chain = ProvenanceChain(public_key=public_key)
    for receipt in receipts:
        chain.append(receipt)
    report = RecoveryReport(
        receipts_loaded=len(receipts),
        truncated_partial_line=torn,
        truncated_bytes=len(trailing),
    )
    return chain, report


def iter_chain_file(path: str | Path) -> Iterable[AttestationReceipt]:
    """Yield receipts from a log file without link/signature checks."""
    with open(path, "rb") as fh:
        for line in fh:
            line = line.rstrip(b"\n")
            if line:
                yield AttestationReceipt.from_dict(json.loads(line.decode("utf-8")))


def load_receipts_lenient(
    path: str | Path,
) -> tuple[list[AttestationReceipt], Optional[tuple[int, str]]]:
    """Best-effort load for auditing: parse receipts up to the first
    unreadable line and report that line instead of raising.

    Returns (receipts, first_unreadable) where first_unreadable is
    (receipt_index, detail) or None. No link or signature checks.
    """
    receipts: list[AttestationReceipt] = []
    with open(path, "rb") as fh:
        for index, line in enumerate(fh):
            line = line.rstrip(b"\n")
            if not line:
                continue
            try:
                receipts.append(AttestationReceipt.from_dict(json.loads(line.decode("utf-8"))))
            except Exception as exc:
                return receipts, (index, f"unreadable receipt line: {exc}")
    return receipts, None
