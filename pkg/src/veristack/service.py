"""Verifier Stack service.

VerifierCore is the transport-independent heart: it gates proposed calls,
issues receipts through the two-phase attest flow, feeds auditors, runs
challenge-response, and drives per-agent controllers. The TCP layer wraps
it in a newline-delimited JSON protocol (one request line, one reply line,
request_id echoed) so external agents route tool calls through it.

The only path that grows the chain is the two-phase attest flow.
"""

from __future__ import annotations

import json
import os
import socket
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from .audit import AlignmentAssessment, EnsembleConfig, StreamAuditor
from .canonical import canonicalize
from .clocks import Clock, SimClock, WallClock
from .controller import AgentController, ControlEvent
from .cra import CraManager, CraOutcome, Justification
from .ispec import IntentSpec, IspecError, SpecStore
from .provenance import LogSink, ProvenanceChain, ReceiptFilter, query
from .receipts import AttestDecision, ProposedCall, attest_or_reject, make_receipt
from .signing import SigningIdentity

MSG_TYPES = (
    "ATTEST_REQUEST",
    "ATTEST_RESULT",
    "CHALLENGE",
    "CHALLENGE_RESPONSE",
    "QUERY_LOG",
    "RELOAD_ISPEC",
    "STATUS",
)

EVENT_GATE_REJECTION = "gate_rejection"
EVENT_AUDIT_ALERT = "audit_alert"
EVENT_CHAIN_TAMPER = "chain_tamper"
EVENT_CRA_ISSUED = "cra_issued"
EVENT_CRA_OUTCOME = "cra_outcome"
EVENT_CONTROL = "control_transition"
EVENT_RELOAD = "ispec_reload"


class ProtocolError(Exception):
    pass


@dataclass
class PendingAttest:
    receipt_id: int | str
    agent_id: str
    tool: str
    args: Any
    args_text: str
    justification: str


class VerifierCore:
    """Attestation, provenance, audit, CRA and control behind one handler.

    Chain appends and controller transitions are serialized through a
    single lock (single-writer discipline); auditors keep private
    incremental state and alerts carry the receipt's own timestamp.
    """

    def __init__(
        self,
        spec: IntentSpec,
        identity: SigningIdentity,
        clock: Optional[Clock] = None,
        ensemble: Optional[EnsembleConfig] = None,
        log_path: Optional[str | Path] = None,
        events_path: Optional[str | Path] = None,
        durable: bool = False,
        enable_auditors: bool = True,
        enable_cra: bool = True,
        escalate_on_reject: bool = True,
        auto_tick: Optional[bool] = None,
        nonce_source: Optional[Callable[[], bytes]] = None,
    ):
        self.spec_store = SpecStore(spec)
        self.identity = identity
        self.clock = clock or WallClock()
        if ensemble is None:
            ensemble = EnsembleConfig(tau=spec.verification.align_threshold_tau)
        self.ensemble = ensemble
        self.log_path = Path(log_path) if log_path else None
        sink = LogSink(self.log_path, durable=durable) if self.log_path else None
        self.chain = ProvenanceChain(public_key=identity.public_key, sink=sink)
        self.auditor = StreamAuditor(self.spec_store, ensemble) if enable_auditors else None
        kwargs = {"nonce_source": nonce_source} if nonce_source else {}
        self.cra = CraManager(identity, self.clock, **kwargs) if enable_cra else None
        self.enable_auditors = enable_auditors
        self.enable_cra = enable_cra
        self.escalate_on_reject = escalate_on_reject
        self.auto_tick = auto_tick if auto_tick is not None else (self.clock.mode == "sim")
        self.controllers: dict[str, AgentController] = {}
        self.events: list[dict] = []
        self._events_fh = open(events_path, "w", encoding="utf-8") if events_path else None
        self._pending: dict[int | str, PendingAttest] = {}
        self._consumed_receipt_ids: set = set()
        self._next_sim_id = 0
        self._fired_triggers: set[tuple[str, int]] = set()
        self._cost_by_agent: dict[str, float] = {}
        self.latest_assessment: Optional[AlignmentAssessment] = None
        self._lock = threading.RLock()

    # -- infrastructure ----------------------------------------------------

    @property
    def spec(self) -> IntentSpec:
        return self.spec_store.current

    def controller_for(self, agent_id: str) -> AgentController:
        if agent_id not in self.controllers:
            self.controllers[agent_id] = AgentController(agent_id)
        return self.controllers[agent_id]

    def _emit(self, kind: str, **data) -> dict:
        event = {"kind": kind, "time": self.clock.now(), **data}
        self.events.append(event)
        if self._events_fh is not None:
            self._events_fh.write(json.dumps(event, sort_keys=True) + "\n")
            self._events_fh.flush()
        return event

    def _apply_control(self, agent_id: str, kind: str, receipt_index: Optional[int], timestamp: int, tool: Optional[str] = None):
        controller = self.controller_for(agent_id)
        before = controller.state.mode
        state = controller.apply(ControlEvent(kind, receipt_index, timestamp, tool))
        self._emit(
            EVENT_CONTROL,
            agent_id=agent_id,
            event=kind,
            from_mode=before.value,
            to_mode=state.mode.value,
            timestamp=timestamp,
            tool=tool,
        )
        return state

    # -- two-phase attestation ----------------------------------------------

    def attest_request(self, agent_id: str, tool: str, args: Any, justification: str = "") -> dict:
        """Phase 1: pre-execution decision. Rejection means the action must not run."""
        with self._lock:
            now = self.clock.now()
            controller = self.controller_for(agent_id)
            if not controller.is_allowed(tool):
                reason = f"control mode {controller.state.mode.value} blocks {tool!r}"
                self._emit(
                    EVENT_GATE_REJECTION, agent_id=agent_id, tool=tool, reason=reason, cause="control-mode"
                )
                return AttestDecision(False, reason).to_dict()

            request = ProposedCall(agent_id=agent_id, tool=tool, args=args, justification=justification)
            decision = attest_or_reject(self.spec, request)
            if not decision.attest:
                self._emit(
                    EVENT_GATE_REJECTION, agent_id=agent_id, tool=tool, reason=decision.reason, cause="policy"
                )
                if self.escalate_on_reject:
                    self._apply_control(agent_id, "alert_high", None, now, tool=tool)
                return decision.to_dict()

            receipt_id = self._reserve_receipt_id()
            self._pending[receipt_id] = PendingAttest(
                receipt_id=receipt_id,
                agent_id=agent_id,
                tool=tool,
                args=args,
                args_text=request.canonical_args_text(),
                justification=justification,
            )
            reply = decision.to_dict()
            reply["receipt_id"] = receipt_id
            return reply

    def _reserve_receipt_id(self) -> int | str:
        if self.clock.mode == "sim":
            rid = self._next_sim_id
            self._next_sim_id += 1
            return rid
        return str(uuid.uuid4())

    def attest_result(self, receipt_id: int | str, result: Any) -> dict:
        """Phase 2: bind the reported result, sign, append, audit."""
        with self._lock:
            if receipt_id in self._consumed_receipt_ids:
                raise ProtocolError(f"receipt id {receipt_id!r} already bound to a receipt")
            pending = self._pending.pop(receipt_id, None)
            if pending is None:
                raise ProtocolError(f"unknown receipt id {receipt_id!r}")
            self._consumed_receipt_ids.add(receipt_id)

            prev = self.chain[-1] if len(self.chain) else None
            receipt = make_receipt(
                self.identity,
                pending.tool,
                pending.args,
                result,
                prev,
                self.clock,
                pending.agent_id,
                receipt_id=receipt_id,
            )
            self.chain.append(receipt)
            index = len(self.chain) - 1

            self._track_cost(pending)
            if self.auditor is not None:
                self._audit_receipt(receipt, index, pending)
            self._evaluate_triggers(pending.agent_id, index)
            if self.cra is not None:
                for outcome in self.cra.expire_overdue():
                    self._handle_cra_outcome(outcome)
            if self.auto_tick and isinstance(self.clock, SimClock):
                self.clock.advance()
            return {"receipt": receipt.to_dict()}

    def _track_cost(self, pending: PendingAttest) -> None:
        cost = 0.0
        if isinstance(pending.args, dict):
            raw = pending.args.get("cost")
            if isinstance(raw, (int, float)) and not isinstance(raw, bool):
                cost = float(raw)
        self._cost_by_agent[pending.agent_id] = self._cost_by_agent.get(pending.agent_id, 0.0) + cost

    def _audit_receipt(self, receipt, index: int, pending: PendingAttest) -> None:
        assessment = self.auditor.on_receipt(
            receipt,
            arg_len=len(pending.args_text.encode("utf-8")),
            justification=pending.justification,
            args_text=pending.args_text,
        )
        self.latest_assessment = assessment
        if not assessment.alert:
            return
        severity = assessment.max_new_severity
        self._emit(
            EVENT_AUDIT_ALERT,
            agent_id=receipt.agent_id,
            receipt_index=index,
            timestamp=receipt.timestamp,
            align_score=assessment.align_score,
            severity=severity or "align",
            rule_ids=list(assessment.contributing_rule_ids),
        )
        kind = "alert_high" if severity == "high" else "alert_medium"
        self._apply_control(receipt.agent_id, kind, index, receipt.timestamp, tool=receipt.tool)
        if (
            self.cra is not None
            and assessment.align_score < self.ensemble.tau
        ):
            self._issue_challenge(
                f"alignment score {assessment.align_score:.3f} below tau",
                [receipt.id],
                receipt.agent_id,
            )

    def _metric_value(self, metric: str, agent_id: str) -> Optional[float]:
        if metric == "cumulative_cost":
            return self._cost_by_agent.get(agent_id, 0.0)
        if metric == "total_calls":
            return float(len(self.chain))
        if metric.startswith("calls:"):
            tool = metric.split(":", 1)[1]
            return float(sum(1 for r in self.chain.receipts if r.tool == tool))
        return None

    def _evaluate_triggers(self, agent_id: str, index: int) -> None:
        spec = self.spec
        for ti, trigger in enumerate(spec.verification.cra_triggers):
            key = (agent_id, ti)
            if key in self._fired_triggers:
                continue
            value = self._metric_value(trigger.metric, agent_id)
            if value is None or not trigger.fires(value):
                continue
            self._fired_triggers.add(key)
            desc = f"verification trigger {trigger.metric} {trigger.comparator} {trigger.threshold:g} (observed {value:g})"
            if self.cra is not None:
                self._issue_challenge(desc, [self.chain[index].id], agent_id)
            else:
                self._emit(
                    EVENT_CRA_ISSUED,
                    agent_id=agent_id,
                    skipped="challenge-response disabled",
                    trigger=desc,
                )

    def _issue_challenge(self, desc: str, target_ids, agent_id: str) -> None:
        challenge = self.cra.issue(
            desc, target_ids, agent_id, self.chain, self.spec.verification.challenge_deadline
        )
        if challenge is not None:
            self._emit(
                EVENT_CRA_ISSUED,
                agent_id=agent_id,
                challenge_id=challenge.challenge_id,
                target_receipt_ids=list(challenge.target_receipt_ids),
                trigger=desc,
            )

    def _handle_cra_outcome(self, outcome: CraOutcome) -> None:
        challenge = self.cra._by_id[outcome.challenge_id]
        self._emit(
            EVENT_CRA_OUTCOME,
            agent_id=challenge.agent_id,
            challenge_id=outcome.challenge_id,
            outcome=outcome.kind,
            detail=outcome.detail,
            timestamp=outcome.resolved_at,
        )
        kind = "cra_pass" if outcome.passed else "cra_fail"
        self._apply_control(challenge.agent_id, kind, None, outcome.resolved_at)

    def report_coordination(self, finding) -> None:
        """Record a cross-check finding and restrict the executing agent."""
        with self._lock:
            indices = finding.receipt_indices
            last = self.chain[indices[-1]]
            self._emit(
                "coordination_finding",
                pattern_id=finding.pattern_id,
                receipt_indices=list(indices),
                detail=finding.detail,
                timestamp=last.timestamp,
            )
            self._apply_control(
                last.agent_id, "alert_medium", indices[-1], last.timestamp, tool=last.tool
            )

    # -- remaining message handlers ------------------------------------------

    def challenge_for(self, agent_id: str) -> Optional[dict]:
        if self.cra is None:
            return None
        challenge = self.cra.outstanding_for(agent_id)
        return challenge.to_dict() if challenge else None

    def challenge_response(self, justification_doc: dict) -> dict:
        with self._lock:
            justification = Justification.from_dict(justification_doc)
            outcome = self.cra.resolve(justification, self.chain)
            self._handle_cra_outcome(outcome)
            return {"outcome": outcome.to_dict()}

    def query_log(self, filter_doc: Optional[dict] = None) -> dict:
        filter_doc = filter_doc or {}
        allowed = {"tool", "agent_id", "t_min", "t_max"}
        unknown = set(filter_doc) - allowed
        if unknown:
            raise ProtocolError(f"unknown filter fields: {sorted(unknown)}")
        flt = ReceiptFilter(**filter_doc)
        return {"receipts": [r.to_dict() for r in query(self.chain, flt)]}

    def reload_ispec(self, document) -> dict:
        with self._lock:
            spec = self.spec_store.reload(document)
            self._emit(EVENT_RELOAD, version=spec.version, spec_hash=spec.document_hash())
            return {"version": spec.version, "spec_hash": spec.document_hash()}

    def status(self) -> dict:
        with self._lock:
            return {
                "chain_length": len(self.chain),
                "head_hash": self.chain.head_hash,
                "control": {aid: c.state.to_dict() for aid, c in sorted(self.controllers.items())},
                "spec_version": self.spec.version,
                "spec_hash": self.spec.document_hash(),
                "latest_align_score": (
                    self.latest_assessment.align_score if self.latest_assessment else None
                ),
            }

    def verify_storage(self) -> bool:
        """Compare the persisted log against the authoritative chain.

        Tampering with the file is detected, reported as a high alert, and
        the file is rewritten from memory. Returns True when clean.
        """
        if self.log_path is None or not self.log_path.exists():
            return True
        with self._lock:
            expected = b"".join(r.canonical_form() + b"\n" for r in self.chain.receipts)
            actual = self.log_path.read_bytes()
            if actual == expected:
                return True
            bad_index = 0
            for i, (exp, act) in enumerate(
                zip(expected.split(b"\n"), actual.split(b"\n"))
            ):
                if exp != act:
                    bad_index = i
                    break
            self._emit(
                EVENT_CHAIN_TAMPER,
                line_index=bad_index,
                detail="persisted log diverges from authoritative chain",
            )
            agents = {r.agent_id for r in self.chain.receipts}
            for agent_id in sorted(agents):
                self._apply_control(agent_id, "alert_high", bad_index, self.clock.now())
            if self.chain.sink is not None:
                self.chain.sink.close()
            self.log_path.write_bytes(expected)
            self.chain.sink = LogSink(self.log_path)
            return False

    # -- wire dispatch -------------------------------------------------------

    def handle(self, message) -> dict:
        """Dispatch one wire message; always returns exactly one reply."""
        request_id = message.get("request_id") if isinstance(message, dict) else None
        try:
            if not isinstance(message, dict) or "type" not in message:
                raise ProtocolError("message must be an object with a 'type'")
            mtype = message["type"]
            payload = message.get("payload") or {}
            if mtype == "ATTEST_REQUEST":
                result = self.attest_request(
                    payload["agent_id"],
                    payload["tool"],
                    payload.get("args"),
                    payload.get("justification", ""),
                )
            elif mtype == "ATTEST_RESULT":
                result = self.attest_result(payload["receipt_id"], payload.get("result"))
            elif mtype == "CHALLENGE":
                result = {"challenge": self.challenge_for(payload["agent_id"])}
            elif mtype == "CHALLENGE_RESPONSE":
                result = self.challenge_response(payload["justification"])
            elif mtype == "QUERY_LOG":
                result = self.query_log(payload.get("filter"))
            elif mtype == "RELOAD_ISPEC":
                result = self.reload_ispec(payload["document"])
            elif mtype == "STATUS":
                result = self.status()
            else:
                raise ProtocolError(f"unknown message type {mtype!r}")
            return {"request_id": request_id, "type": "REPLY", "payload": result}
        except (ProtocolError, IspecError, KeyError, TypeError, ValueError) as exc:
            return {
                "request_id": request_id,
                "type": "ERROR",
                "payload": {"error": f"{type(exc).__name__}: {exc}"},
            }

    def close(self) -> None:
        if self.chain.sink is not None:
            self.chain.sink.close()
        if self._events_fh is not None:
            self._events_fh.close()
        if self.auditor is not None:
            self.auditor.close()


# ---------------------------------------------------------------------------
# TCP transport
# ---------------------------------------------------------------------------


@dataclass
class ServiceConfig:
    ispec_path: str
    private_key_path: str
    public_key_path: Optional[str] = None
    listen_host: str = "127.0.0.1"
    listen_port: int = 7331
    log_path: str = "provenance.log"
    events_path: Optional[str] = None
    clock_mode: str = "wall"
    weights: tuple[float, float, float] = (0.5, 0.25, 0.25)
    window: int = 20
    durable: bool = True

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        cfg = cls(**raw)
        addr = os.environ.get("VERISTACK_ADDR")
        if addr:
            host, _, port = addr.rpartition(":")
            cfg.listen_host = host or cfg.listen_host
            cfg.listen_port = int(port)
        log_path = os.environ.get("VERISTACK_LOG")
        if log_path:
            cfg.log_path = log_path
        return cfg


class VerifierService:
    """Line-protocol TCP front end over a VerifierCore."""

    def __init__(self, core: VerifierCore, host: str = "127.0.0.1", port: int = 0):
        self.core = core
        self._sock = socket.create_server((host, port))
        self.host, self.port = self._sock.getsockname()[:2]
        self._threads: list[threading.Thread] = []
        self._stopping = threading.Event()
        self._accept_thread: Optional[threading.Thread] = None

    def start(self) -> "VerifierService":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            thread = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            thread.start()
            self._threads.append(thread)

    def _serve_conn(self, conn: socket.socket) -> None:
        with conn:
            buf = b""
            while not self._stopping.is_set():
                try:
                    data = conn.recv(65536)
                except OSError:
                    return
                if not data:
                    return
                buf += data
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if not line.strip():
                        continue
                    try:
                        message = json.loads(line.decode("utf-8"))
                    except json.JSONDecodeError as exc:
                        reply = {
                            "request_id": None,
                            "type": "ERROR",
                            "payload": {"error": f"bad json: {exc.msg}"},
                        }
                    else:
                        reply = self.core.handle(message)
                    conn.sendall(json.dumps(reply, sort_keys=True).encode("utf-8") + b"\n")

    def stop(self) -> None:
        self._stopping.set()
        try:
            self._sock.close()
        except OSError:
            pass


def serve(config: ServiceConfig) -> VerifierService:
    """Build a core from configuration and start listening."""
    from .ispec import parse_ispec

    spec = parse_ispec(Path(config.ispec_path).read_text(encoding="utf-8"))
    identity = SigningIdentity.load(config.private_key_path)
    clock: Clock = SimClock() if config.clock_mode == "sim" else WallClock()
    ensemble = EnsembleConfig(
        w_rule=config.weights[0],
        w_stat=config.weights[1],
        w_sem=config.weights[2],
        tau=spec.verification.align_threshold_tau,
        window=config.window,
    )
    core = VerifierCore(
        spec,
        identity,
        clock=clock,
        ensemble=ensemble,
        log_path=config.log_path,
        events_path=config.events_path,
        durable=config.durable,
    )
    service = VerifierService(core, config.listen_host, config.listen_port)
    return service.start()
