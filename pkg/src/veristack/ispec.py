"""Intent Specification: the deployer contract every check references.

Four layers: objective (what the agent is for), constraints (tools and
limits), policies (declarative rules over the receipt stream), and
verification (oversight triggers and the alert threshold). Specs load from
canonical JSON text, validate hard at parse time, and hot-reload through an
atomic swap so no reader ever observes a partially applied spec.

Policy predicates are deliberately restricted to a small declarative
language: counting, pattern match on canonical argument text, and sequence
adjacency. Pattern predicates need the argument text, which only exists at
attestation time; receipts carry hashes, so post-hoc checks over a bare
chain evaluate the counting and adjacency kinds.
"""

from __future__ import annotations

import json
import math
import operator
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

from .canonical import canonicalize, hash_payload

SEVERITIES = ("low", "medium", "high")

COMPARATORS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
}

PREDICATE_KINDS = ("max_count", "adjacency", "arg_pattern")

# Built-in rule ids used by constraint checks (not policy-layer rules).
RULE_UNKNOWN_TOOL = "unknown-tool"
RULE_FORBIDDEN_TOOL = "forbidden-tool"
RULE_FORBIDDEN_ARG_PATTERN = "forbidden-arg-pattern"
RULE_RESOURCE_LIMIT = "resource-limit"


class IspecError(Exception):
    pass


class IspecParseError(IspecError):
    """Document is not well-formed; carries a location when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class IspecValidationError(IspecError):
    """Document parsed but violates an invariant; names the field."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


class IspecReloadError(IspecError):
    pass


@dataclass(frozen=True)
class SuccessCondition:
    metric: str
    comparator: str
    threshold: float

    def to_document(self) -> dict:
        return {"metric": self.metric, "comparator": self.comparator, "threshold": self.threshold}


@dataclass(frozen=True)
class ObjectiveLayer:
    goal_text: str
    success_conditions: tuple[SuccessCondition, ...]

    def to_document(self) -> dict:
        return {
            "goal_text": self.goal_text,
            "success_conditions": [c.to_document() for c in self.success_conditions],
        }


@dataclass(frozen=True)
class ArgPattern:
    tool: str
    pattern: str

    def to_document(self) -> dict:
        return {"tool": self.tool, "pattern": self.pattern}


@dataclass(frozen=True)
class ConstraintLayer:
    allowed_tools: frozenset[str]
    forbidden_tools: frozenset[str]
    forbidden_arg_patterns: tuple[ArgPattern, ...]
    resource_limits: dict[str, float]

    @property
    def tool_universe(self) -> frozenset[str]:
        return self.allowed_tools | self.forbidden_tools

    def to_document(self) -> dict:
        return {
            "allowed_tools": sorted(self.allowed_tools),
            "forbidden_tools": sorted(self.forbidden_tools),
            "forbidden_arg_patterns": [p.to_document() for p in self.forbidden_arg_patterns],
            "resource_limits": dict(sorted(self.resource_limits.items())),
        }


@dataclass(frozen=True)
class PolicyRule:
    rule_id: str
    description: str
    severity: str
    predicate: dict

    def to_document(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "description": self.description,
            "severity": self.severity,
            "predicate": self.predicate,
        }


@dataclass(frozen=True)
class PolicyLayer:
    rules: tuple[PolicyRule, ...]

    def to_document(self) -> dict:
        return {"rules": [r.to_document() for r in self.rules]}


@dataclass(frozen=True)
class TriggerSpec:
    metric: str
    comparator: str
    threshold: float

    def to_document(self) -> dict:
        return {"metric": self.metric, "comparator": self.comparator, "threshold": self.threshold}

    def fires(self, value: float) -> bool:
        return COMPARATORS[self.comparator](value, self.threshold)


@dataclass(frozen=True)
class VerificationLayer:
    cra_triggers: tuple[TriggerSpec, ...]
    align_threshold_tau: float
    challenge_deadline: int

    def to_document(self) -> dict:
        return {
            "cra_triggers": [t.to_document() for t in self.cra_triggers],
            "align_threshold_tau": self.align_threshold_tau,
            "challenge_deadline": self.challenge_deadline,
        }


@dataclass(frozen=True)
class IntentSpec:
    spec_id: str
    version: int
    objective: ObjectiveLayer
    constraints: ConstraintLayer
    policies: PolicyLayer
    verification: VerificationLayer

    @property
    def tool_universe(self) -> frozenset[str]:
        return self.constraints.tool_universe

    def to_document(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "version": self.version,
            "objective": self.objective.to_document(),
            "constraints": self.constraints.to_document(),
            "policies": self.policies.to_document(),
            "verification": self.verification.to_document(),
        }

    def document_hash(self) -> str:
        """SHA-256 of the canonical document form, reported on load for audit."""
        return hash_payload(canonicalize(self.to_document()))


@dataclass(frozen=True)
class Violation:
    rule_id: str
    severity: str
    message: str

    def to_dict(self) -> dict:
        return {"rule_id": self.rule_id, "severity": self.severity, "message": self.message}


@dataclass(frozen=True)
class ConstraintVerdict:
    passed: bool
    violations: tuple[Violation, ...]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "violations": [v.to_dict() for v in self.violations]}


# ---------------------------------------------------------------------------
# Parsing and validation
# ---------------------------------------------------------------------------


def _require(doc: dict, key: str, kind, path: str):
    if key not in doc:
        raise IspecValidationError(f"{path}.{key}", "missing required field")
    value = doc[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise IspecValidationError(f"{path}.{key}", f"expected number, got {type(value).__name__}")
        return float(value)
    if not isinstance(value, kind):
        raise IspecValidationError(
            f"{path}.{key}", f"expected {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _finite_nonneg(value: float, path: str) -> float:
    if not math.isfinite(value) or value < 0:
        raise IspecValidationError(path, f"numeric limit must be finite and non-negative, got {value!r}")
    return value


def _parse_comparator(text: str, path: str) -> str:
    if text not in COMPARATORS:
        raise IspecValidationError(path, f"unknown comparator {text!r}")
    return text


def _compile_pattern(pattern: str, path: str) -> None:
    try:
        re.compile(pattern)
    except re.error as exc:
        raise IspecValidationError(path, f"pattern does not compile: {exc}") from None


def _parse_condition(doc: Any, path: str, cls):
    if not isinstance(doc, dict):
        raise IspecValidationError(path, "expected object")
    metric = _require(doc, "metric", str, path)
    comparator = _parse_comparator(_require(doc, "comparator", str, path), f"{path}.comparator")
    threshold = _require(doc, "threshold", float, path)
    if not math.isfinite(threshold):
        raise IspecValidationError(f"{path}.threshold", "threshold must be finite")
    return cls(metric=metric, comparator=comparator, threshold=threshold)


def _parse_objective(doc: Any) -> ObjectiveLayer:
    if not isinstance(doc, dict):
        raise IspecValidationError("objective", "expected object")
    goal_text = _require(doc, "goal_text", str, "objective")
    conds_doc = _require(doc, "success_conditions", list, "objective")
    if not conds_doc:
        raise IspecValidationError(
            "objective.success_conditions", "at least one success condition required"
        )
    conds = tuple(
        _parse_condition(c, f"objective.success_conditions[{i}]", SuccessCondition)
        for i, c in enumerate(conds_doc)
    )
    return ObjectiveLayer(goal_text=goal_text, success_conditions=conds)


def _parse_tool_list(doc: dict, key: str, path: str) -> frozenset[str]:
    raw = _require(doc, key, list, path)
    tools = set()
    for i, name in enumerate(raw):
        if not isinstance(name, str) or not name:
            raise IspecValidationError(f"{path}.{key}[{i}]", "tool name must be a non-empty string")
        tools.add(name)
    return frozenset(tools)


def _parse_constraints(doc: Any) -> ConstraintLayer:
    if not isinstance(doc, dict):
        raise IspecValidationError("constraints", "expected object")
    allowed = _parse_tool_list(doc, "allowed_tools", "constraints")
    forbidden = _parse_tool_list(doc, "forbidden_tools", "constraints")
    overlap = allowed & forbidden
    if overlap:
        raise IspecValidationError(
            "constraints",
            f"disjointness: tools in both allowed_tools and forbidden_tools: {sorted(overlap)}",
        )
    universe = allowed | forbidden

    patterns_doc = doc.get("forbidden_arg_patterns", [])
    if not isinstance(patterns_doc, list):
        raise IspecValidationError("constraints.forbidden_arg_patterns", "expected list")
    patterns = []
    for i, p in enumerate(patterns_doc):
        path = f"constraints.forbidden_arg_patterns[{i}]"
        if not isinstance(p, dict):
            raise IspecValidationError(path, "expected object")
        tool = _require(p, "tool", str, path)
        pattern = _require(p, "pattern", str, path)
        _compile_pattern(pattern, f"{path}.pattern")
        if tool != "*" and tool not in universe:
            raise IspecValidationError(f"{path}.tool", f"tool {tool!r} not in declared tool universe")
        patterns.append(ArgPattern(tool=tool, pattern=pattern))

    limits_doc = doc.get("resource_limits", {})
    if not isinstance(limits_doc, dict):
        raise IspecValidationError("constraints.resource_limits", "expected object")
    limits = {}
    for name, cap in limits_doc.items():
        path = f"constraints.resource_limits[{name!r}]"
        if isinstance(cap, bool) or not isinstance(cap, (int, float)):
            raise IspecValidationError(path, "cap must be a number")
        limits[name] = _finite_nonneg(float(cap), path)
        if name.startswith("calls:"):
            tool = name.split(":", 1)[1]
            if tool not in universe:
                raise IspecValidationError(path, f"tool {tool!r} not in declared tool universe")

    return ConstraintLayer(
        allowed_tools=allowed,
        forbidden_tools=forbidden,
        forbidden_arg_patterns=tuple(patterns),
        resource_limits=limits,
    )


def _parse_predicate(doc: Any, path: str, universe: frozenset[str]) -> dict:
    if not isinstance(doc, dict):
        raise IspecValidationError(path, "expected object")
    kind = _require(doc, "kind", str, path)
    if kind not in PREDICATE_KINDS:
        raise IspecValidationError(f"{path}.kind", f"unknown predicate kind {kind!r}")
    if kind == "max_count":
        tool = _require(doc, "tool", str, path)
        maximum = _require(doc, "max", float, path)
        _finite_nonneg(maximum, f"{path}.max")
        if tool != "*" and tool not in universe:
            raise IspecValidationError(f"{path}.tool", f"tool {tool!r} not in declared tool universe")
        return {"kind": kind, "tool": tool, "max": maximum}
    if kind == "adjacency":
        first = _require(doc, "first", str, path)
        then = _require(doc, "then", str, path)
        for key, tool in (("first", first), ("then", then)):
            if tool != "*" and tool not in universe:
                raise IspecValidationError(f"{path}.{key}", f"tool {tool!r} not in declared tool universe")
        return {"kind": kind, "first": first, "then": then}
    # arg_pattern
    tool = _require(doc, "tool", str, path)
    pattern = _require(doc, "pattern", str, path)
    _compile_pattern(pattern, f"{path}.pattern")
    if tool != "*" and tool not in universe:
        raise IspecValidationError(f"{path}.tool", f"tool {tool!r} not in declared tool universe")
    return {"kind": kind, "tool": tool, "pattern": pattern}


def _parse_policies(doc: Any, universe: frozenset[str]) -> PolicyLayer:
    if not isinstance(doc, dict):
        raise IspecValidationError("policies", "expected object")
    rules_doc = _require(doc, "rules", list, "policies")
    rules = []
    seen_ids = set()
    for i, r in enumerate(rules_doc):
        path = f"policies.rules[{i}]"
        if not isinstance(r, dict):
            raise IspecValidationError(path, "expected object")
        rule_id = _require(r, "rule_id", str, path)
        if rule_id in seen_ids:
            raise IspecValidationError(f"{path}.rule_id", f"duplicate rule id {rule_id!r}")
        seen_ids.add(rule_id)
        description = _require(r, "description", str, path)
        severity = _require(r, "severity", str, path)
        if severity not in SEVERITIES:
            raise IspecValidationError(f"{path}.severity", f"severity must be one of {SEVERITIES}")
        predicate = _parse_predicate(r.get("predicate"), f"{path}.predicate", universe)
        rules.append(
            PolicyRule(rule_id=rule_id, description=description, severity=severity, predicate=predicate)
        )
    return PolicyLayer(rules=tuple(rules))


def _parse_verification(doc: Any) -> VerificationLayer:
    if not isinstance(doc, dict):
        raise IspecValidationError("verification", "expected object")
    triggers_doc = _require(doc, "cra_triggers", list, "verification")
    triggers = tuple(
        _parse_condition(t, f"verification.cra_triggers[{i}]", TriggerSpec)
        for i, t in enumerate(triggers_doc)
    )
    tau = _require(doc, "align_threshold_tau", float, "verification")
    if not (0.0 < tau < 1.0):
        raise IspecValidationError("verification.align_threshold_tau", f"must be in (0,1), got {tau}")
    deadline = _require(doc, "challenge_deadline", float, "verification")
    if not math.isfinite(deadline) or deadline <= 0:
        raise IspecValidationError("verification.challenge_deadline", f"must be > 0, got {deadline}")
    return VerificationLayer(
        cra_triggers=triggers, align_threshold_tau=tau, challenge_deadline=int(deadline)
    )


def parse_ispec(document: str | bytes | dict) -> IntentSpec:
    """Parse and validate an ISpec document.

    Accepts the canonical JSON text form or an already-decoded mapping.
    Raises IspecParseError for malformed text (with location) and
    IspecValidationError for invariant violations (naming the field).
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise IspecParseError(exc.msg, line=exc.lineno, column=exc.colno) from None
    else:
        doc = document
    if not isinstance(doc, dict):
        raise IspecParseError("top-level document must be an object")

    spec_id = _require(doc, "spec_id", str, "$")
    version = _require(doc, "version", int, "$")
    if isinstance(doc["version"], bool) or version < 1:
        raise IspecValidationError("version", f"must be a positive integer, got {doc['version']!r}")

    constraints = _parse_constraints(doc.get("constraints"))
    return IntentSpec(
        spec_id=spec_id,
        version=version,
        objective=_parse_objective(doc.get("objective")),
        constraints=constraints,
        policies=_parse_policies(doc.get("policies", {"rules": []}), constraints.tool_universe),
        verification=_parse_verification(doc.get("verification")),
    )


def serialize_ispec(spec: IntentSpec) -> str:
    """Canonical JSON text form; parse_ispec(serialize_ispec(s)) == s."""
    return canonicalize(spec.to_document()).decode("utf-8")


def reload_ispec(current: IntentSpec, document: str | bytes | dict) -> IntentSpec:
    """Validate ``document`` and return it as the replacement spec.

    Fail-closed: any parse/validation error or non-increasing version
    raises, leaving the caller's current spec untouched.
    """
    new_spec = parse_ispec(document)
    if new_spec.version <= current.version:
        raise IspecReloadError(
            f"non-increasing version: {new_spec.version} <= active {current.version}"
        )
    return new_spec


# ---------------------------------------------------------------------------
# Action checking
# ---------------------------------------------------------------------------


def _count_tool(receipts: Iterable, tool: str) -> int:
    if tool == "*":
        return sum(1 for _ in receipts)
    return sum(1 for r in receipts if r.tool == tool)


def check_action(
    spec: IntentSpec,
    receipt,
    history: Sequence,
    args_text: Optional[str] = None,
) -> ConstraintVerdict:
    """Evaluate one receipt against the constraint and policy layers.

    ``history`` holds the receipts preceding this one, in chain order.
    ``args_text`` is the canonical argument text when the caller has it
    (attestation time); pattern predicates are skipped without it because
    receipts only carry argument hashes. Deterministic: identical inputs
    always produce the identical verdict.
    """
    violations: list[Violation] = []
    tool = receipt.tool

    if tool not in spec.tool_universe:
        violations.append(
            Violation(RULE_UNKNOWN_TOOL, "high", f"tool {tool!r} outside declared tool universe")
        )
    elif tool in spec.constraints.forbidden_tools:
        violations.append(Violation(RULE_FORBIDDEN_TOOL, "high", f"tool {tool!r} is forbidden"))

    if args_text is not None:
        for pat in spec.constraints.forbidden_arg_patterns:
            if pat.tool in ("*", tool) and re.search(pat.pattern, args_text):
                violations.append(
                    Violation(
                        RULE_FORBIDDEN_ARG_PATTERN,
                        "high",
                        f"arguments to {tool!r} match forbidden pattern {pat.pattern!r}",
                    )
                )

    for name, cap in sorted(spec.constraints.resource_limits.items()):
        if name == "total_calls":
            count = len(history) + 1
        elif name.startswith("calls:"):
            limited_tool = name.split(":", 1)[1]
            if limited_tool != tool:
                continue
            count = _count_tool(history, limited_tool) + 1
        else:
            continue  # caps over quantities not derivable from receipts (e.g. cost) are tracked at the gate
        if count > cap:
            violations.append(
                Violation(
                    RULE_RESOURCE_LIMIT,
                    "high",
                    f"resource limit {name!r} exceeded: {count} > {cap:g}",
                )
            )

    prev_tool = history[-1].tool if len(history) else None
    for rule in spec.policies.rules:
        pred = rule.predicate
        kind = pred["kind"]
        hit = False
        if kind == "max_count":
            if pred["tool"] in ("*", tool):
                hit = _count_tool(history, pred["tool"]) + 1 > pred["max"]
        elif kind == "adjacency":
            hit = (
                prev_tool is not None
                and pred["first"] in ("*", prev_tool)
                and pred["then"] in ("*", tool)
            )
        elif kind == "arg_pattern" and args_text is not None:
            hit = pred["tool"] in ("*", tool) and bool(re.search(pred["pattern"], args_text))
        if hit:
            violations.append(Violation(rule.rule_id, rule.severity, rule.description))

    return ConstraintVerdict(passed=not violations, violations=tuple(violations))


class SpecStore:
    """Holds the active spec; reload is an atomic swap.

    Readers call ``current`` without blocking on reloads beyond a plain
    attribute read; a failed reload never alters the active spec.
    """

    def __init__(self, spec: IntentSpec):
        self._spec = spec
        self._lock = threading.Lock()

    @property
    def current(self) -> IntentSpec:
        return self._spec

    def reload(self, document: str | bytes | dict) -> IntentSpec:
        with self._lock:
            new_spec = reload_ispec(self._spec, document)
            self._spec = new_spec
            return new_spec
