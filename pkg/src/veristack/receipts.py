"""Attestation receipts: signed, hash-linked records of executed actions.

A receipt binds the tool name, argument and result hashes, a timestamp,
the acting agent, and a link to the previous receipt, all under a detached
Verifier Stack signature. The signature covers every field except itself;
the chain link hashes the full serialized receipt, signature included, so
altering any field of any receipt breaks either its own signature or the
successor's link.
"""

from __future__ import annotations

import re
import uuid
from dataclasses import dataclass
from typing import Any, Optional

from .canonical import GENESIS_HASH, canonicalize, hash_payload, is_hex_digest
from .clocks import Clock
from .ispec import IntentSpec
from .signing import SigningIdentity, verify_signature

BODY_FIELDS = ("id", "tool", "args_hash", "result_hash", "timestamp", "prev_hash", "agent_id")


class AttestationError(Exception):
    pass


@dataclass(frozen=True)
class AttestationReceipt:
    id: int | str
    tool: str
    args_hash: str
    result_hash: str
    timestamp: int
    prev_hash: str
    agent_id: str
    sigma_vs: str

    def body_dict(self) -> dict:
        return {name: getattr(self, name) for name in BODY_FIELDS}

    def canonical_body(self) -> bytes:
        """Signed portion: all fields except the signature."""
        return canonicalize(self.body_dict())

    def to_dict(self) -> dict:
        d = self.body_dict()
        d["sigma_vs"] = self.sigma_vs
        return d

    def canonical_form(self) -> bytes:
        """Full serialized receipt, as written to the log."""
        return canonicalize(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "AttestationReceipt":
        try:
            return cls(**{name: data[name] for name in BODY_FIELDS + ("sigma_vs",)})
        except KeyError as exc:
            raise AttestationError(f"receipt missing field {exc.args[0]!r}") from None


def receipt_hash(receipt: AttestationReceipt) -> str:
    """Digest of the full canonical form; what the successor links to."""
    return hash_payload(receipt.canonical_form())


def format_issue(receipt: AttestationReceipt) -> Optional[str]:
    """Shape check used by chain verification; None when well-formed."""
    if not isinstance(receipt.tool, str) or not receipt.tool:
        return "tool must be a non-empty string"
    if not is_hex_digest(receipt.args_hash):
        return "args_hash is not a 64-char lowercase hex digest"
    if not is_hex_digest(receipt.result_hash):
        return "result_hash is not a 64-char lowercase hex digest"
    if not is_hex_digest(receipt.prev_hash):
        return "prev_hash is not a 64-char lowercase hex digest"
    if isinstance(receipt.timestamp, bool) or not isinstance(receipt.timestamp, int):
        return "timestamp must be an integer"
    if not isinstance(receipt.agent_id, str) or not receipt.agent_id:
        return "agent_id must be a non-empty string"
    if not isinstance(receipt.sigma_vs, str):
        return "sigma_vs must be base64 text"
    if not isinstance(receipt.id, (int, str)) or isinstance(receipt.id, bool):
        return "id must be an integer or text"
    return None


def next_receipt_id(prev: Optional[AttestationReceipt], clock: Clock) -> int | str:
    """Episode-scoped monotonic ids in simulation mode, UUID text otherwise."""
    if clock.mode == "sim":
        if prev is None:
            return 0
        if isinstance(prev.id, int):
            return prev.id + 1
        return str(uuid.uuid4())
    return str(uuid.uuid4())


def make_receipt(
    identity: SigningIdentity,
    tool: str,
    args: Any,
    result: Any,
    prev: Optional[AttestationReceipt],
    clock: Clock,
    agent_id: str,
    receipt_id: Optional[int | str] = None,
) -> AttestationReceipt:
    """Build and sign a receipt for one executed action."""
    if not tool:
        raise AttestationError("tool name must be non-empty")
    if prev is not None and not verify_receipt(prev, identity.public_key):
        raise AttestationError("previous receipt has an invalid signature")

    timestamp = clock.now()
    if prev is not None and timestamp < prev.timestamp:
        raise AttestationError(
            f"timestamp monotonicity: {timestamp} < previous {prev.timestamp}"
        )

    body = {
        "id": receipt_id if receipt_id is not None else next_receipt_id(prev, clock),
        "tool": tool,
        "args_hash": hash_payload(canonicalize(args)),
        "result_hash": hash_payload(canonicalize(result)),
        "timestamp": timestamp,
        "prev_hash": GENESIS_HASH if prev is None else receipt_hash(prev),
        "agent_id": agent_id,
    }
    sigma = identity.sign(canonicalize(body))
    return AttestationReceipt(sigma_vs=sigma, **body)


def verify_receipt(receipt: AttestationReceipt, public_key) -> bool:
    """Total check that sigma_vs signs the canonical body; never raises."""
    try:
        body = receipt.canonical_body()
    except Exception:
        return False
    return verify_signature(public_key, body, receipt.sigma_vs)


# ---------------------------------------------------------------------------
# Pre-execution gate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProposedCall:
    agent_id: str
    tool: str
    args: Any
    justification: str = ""

    def canonical_args_text(self) -> str:
        return canonicalize(self.args).decode("utf-8")


@dataclass(frozen=True)
class AttestDecision:
    attest: bool
    reason: Optional[str] = None

    def to_dict(self) -> dict:
        return {"decision": "attest" if self.attest else "reject", "reason": self.reason}


def attest_or_reject(spec: IntentSpec, request: ProposedCall) -> AttestDecision:
    """Decide whether a proposed call may execute.

    Rejection is a decision, not an error: the action must not run, and
    nothing is appended to the chain. Checks the declared tool universe,
    the forbidden set, and forbidden argument patterns against the
    canonical argument text.
    """
    if not request.tool:
        return AttestDecision(False, "empty tool name")
    if request.tool not in spec.tool_universe:
        return AttestDecision(False, f"tool {request.tool!r} outside declared tools")
    if request.tool in spec.constraints.forbidden_tools:
        return AttestDecision(False, f"tool {request.tool!r} is forbidden")
    args_text = request.canonical_args_text()
    for pat in spec.constraints.forbidden_arg_patterns:
        if pat.tool in ("*", request.tool) and re.search(pat.pattern, args_text):
            return AttestDecision(
                False, f"arguments match forbidden pattern {pat.pattern!r}"
            )
    return AttestDecision(True)
