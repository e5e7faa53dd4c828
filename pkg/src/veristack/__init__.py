"""Runtime verifiability stack for autonomous agents.

Signed, hash-chained receipts for every tool action; an ensemble of audit
verifiers scoring alignment against a formal intent specification;
challenge-response attestation on deviation; and a controller that
restricts, pauses, or safe-modes the agent. The opera harness measures
detectability, attributability, and remediability under scripted
adversarial behaviors.
"""

from .audit import (
    AlignmentAssessment,
    BaselineProfile,
    EnsembleConfig,
    aggregate,
    cross_check,
    evaluate_stream,
    rule_score,
    sem_score,
    stat_score,
)
from .canonical import GENESIS_HASH, CanonicalizationError, canonicalize, hash_payload
from .clocks import SimClock, WallClock
from .controller import (
    AgentController,
    ControlEvent,
    ControlState,
    Mode,
    apply_event,
    is_allowed,
    remediation_timestamp,
)
from .cra import (
    Challenge,
    CraManager,
    CraOutcome,
    Justification,
    issue_challenge,
    make_honest_justification,
    verify_justification,
)
from .ispec import (
    ConstraintVerdict,
    IntentSpec,
    IspecError,
    IspecParseError,
    IspecReloadError,
    IspecValidationError,
    SpecStore,
    check_action,
    parse_ispec,
    reload_ispec,
    serialize_ispec,
)
from .provenance import (
    ChainVerdict,
    InvalidChainError,
    ProvenanceChain,
    ReceiptFilter,
    load_chain_file,
    query,
    replay,
    verify_chain,
)
from .receipts import (
    AttestationReceipt,
    AttestDecision,
    ProposedCall,
    attest_or_reject,
    make_receipt,
    verify_receipt,
)
from .service import ServiceConfig, VerifierCore, VerifierService, serve
from .signing import SigningIdentity, load_public_key, public_key_pem, verify_signature

__version__ = "0.1.0"
