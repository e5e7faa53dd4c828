"""veristack command line: serve, audit verify, keygen, bench."""

from __future__ import annotations

import argparse
import json
import socket
import statistics
import sys
import time
from pathlib import Path

from .clocks import WallClock
from .provenance import ChainVerdict, load_receipts_lenient, verify_chain
from .service import ServiceConfig, VerifierCore, VerifierService, serve
from .signing import SigningIdentity, load_public_key


def cmd_serve(args) -> int:
    config = ServiceConfig.from_file(args.config)
    service = serve(config)
    print(f"veristack listening on {service.host}:{service.port}", flush=True)
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        service.stop()
    return 0


def cmd_audit_verify(args) -> int:
    public_key = load_public_key(args.pubkey)
    receipts, unreadable = load_receipts_lenient(args.logfile)
    verdict = verify_chain(receipts, public_key)
    if verdict.valid and unreadable is not None:
        index, detail = unreadable
        verdict = ChainVerdict(False, index, "format", detail)
    out = verdict.to_dict()
    out["receipts"] = len(receipts)
    print(json.dumps(out, sort_keys=True))
    return 0 if verdict.valid else 1


def cmd_keygen(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    identity = SigningIdentity.generate()
    private_path = out_dir / "vs_private.pem"
    public_path = out_dir / "vs_public.pem"
    identity.save_private_key(private_path)
    identity.save_public_key(public_path)
    print(f"wrote {private_path} and {public_path}")
    return 0


BENCH_ISPEC = {
    "spec_id": "bench",
    "version": 1,
    "objective": {
        "goal_text": "measure attestation round trip latency",
        "success_conditions": [{"metric": "p50_ms", "comparator": "<", "threshold": 10}],
    },
    "constraints": {
        "allowed_tools": ["search"],
        "forbidden_tools": [],
        "forbidden_arg_patterns": [],
        "resource_limits": {},
    },
    "policies": {"rules": []},
    "verification": {"cra_triggers": [], "align_threshold_tau": 0.6, "challenge_deadline": 30},
}


def _bench_core() -> VerifierCore:
    from .ispec import parse_ispec

    return VerifierCore(parse_ispec(BENCH_ISPEC), SigningIdentity.generate(), clock=WallClock())


def run_benchmark(actions: int = 200) -> dict:
    """Attest round-trip latency over TCP loopback, tool execution excluded.

    One sample is the sum of both phases' request/reply times for a single
    action: decision, then sign + append + reply.
    """
    core = _bench_core()
    service = VerifierService(core, "127.0.0.1", 0).start()
    samples_ms = []
    try:
        with socket.create_connection((service.host, service.port)) as conn:
            fh = conn.makefile("rwb")

            def round_trip(message: dict) -> dict:
                start = time.perf_counter()
                fh.write(json.dumps(message).encode() + b"\n")
                fh.flush()
                reply = json.loads(fh.readline())
                elapsed = time.perf_counter() - start
                if reply["type"] != "REPLY":
                    raise RuntimeError(f"benchmark request failed: {reply}")
                return reply, elapsed

            for i in range(actions):
                reply1, dt1 = round_trip(
                    {
                        "request_id": f"b{i}a",
                        "type": "ATTEST_REQUEST",
                        "payload": {
                            "agent_id": "bench",
                            "tool": "search",
                            "args": {"topic": "latency probe", "n": i},
                        },
                    }
                )
                receipt_id = reply1["payload"]["receipt_id"]
                _, dt2 = round_trip(
                    {
                        "request_id": f"b{i}b",
                        "type": "ATTEST_RESULT",
                        "payload": {"receipt_id": receipt_id, "result": {"ok": True}},
                    }
                )
                samples_ms.append((dt1 + dt2) * 1000.0)
    finally:
        service.stop()
        core.close()

    samples_ms.sort()
    return {
        "actions": actions,
        "p50_ms": statistics.median(samples_ms),
        "p90_ms": samples_ms[int(0.9 * (len(samples_ms) - 1))],
        "max_ms": samples_ms[-1],
    }


def cmd_bench(args) -> int:
    stats = run_benchmark(args.actions)
    print(json.dumps(stats, sort_keys=True))
    return 0 if stats["p50_ms"] < args.budget_ms else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="veristack")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the verifier service")
    p_serve.add_argument("--config", required=True, help="JSON config file")
    p_serve.set_defaults(func=cmd_serve)

    p_audit = sub.add_parser("audit", help="audit utilities")
    audit_sub = p_audit.add_subparsers(dest="audit_command", required=True)
    p_verify = audit_sub.add_parser("verify", help="verify a provenance log file")
    p_verify.add_argument("logfile")
    p_verify.add_argument("pubkey")
    p_verify.set_defaults(func=cmd_audit_verify)

    p_keygen = sub.add_parser("keygen", help="generate a Verifier Stack key pair")
    p_keygen.add_argument("--out-dir", default=".")
    p_keygen.set_defaults(func=cmd_keygen)

    p_bench = sub.add_parser("bench", help="measure attest round-trip latency")
    p_bench.add_argument("--actions", type=int, default=200)
    p_bench.add_argument("--budget-ms", type=float, default=10.0)
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
