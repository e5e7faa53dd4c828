import dataclasses
import random

import pytest

from veristack.clocks import SimClock
from veristack.provenance import (
    AppendRejected,
    InvalidChainError,
    LogSink,
    ProvenanceChain,
    ReceiptFilter,
    StorageError,
    load_chain_file,
    query,
    replay,
    verify_chain,
)
from veristack.receipts import make_receipt, receipt_hash
from veristack.signing import SigningIdentity


@pytest.fixture(scope="module")
def identity():
    return SigningIdentity.generate()


def build_receipts(identity, n, tools=("search", "read_file"), agents=("agent-1",)):
    clock = SimClock()
    receipts = []
    prev = None
    for i in range(n):
        clock.set(i)
        receipt = make_receipt(
            identity,
            tools[i % len(tools)],
            {"i": i},
            {"ok": True},
            prev,
            clock,
            agents[i % len(agents)],
        )
        receipts.append(receipt)
        prev = receipt
    return receipts


def build_chain(identity, n, **kwargs):
    chain = ProvenanceChain(public_key=identity.public_key)
    for receipt in build_receipts(identity, n, **kwargs):
        chain.append(receipt)
    return chain


def test_genesis_append(identity):
    receipts = build_receipts(identity, 1)
    chain = ProvenanceChain(public_key=identity.public_key)
    chain.append(receipts[0])
    assert len(chain) == 1
    assert chain.head_hash == receipt_hash(receipts[0])


def test_stale_prev_hash_rejected(identity):
    r = build_receipts(identity, 2)
    chain = ProvenanceChain(public_key=identity.public_key)
    chain.append(r[0])
    chain.append(r[1])
    with pytest.raises(AppendRejected, match="link mismatch"):
        chain.append(r[1])  # replay of the head receipt: prev_hash now stale


def test_invalid_signature_rejected_on_append(identity):
    r = build_receipts(identity, 1)[0]
    bad = dataclasses.replace(r, sigma_vs="AAAA" + r.sigma_vs[4:])
    chain = ProvenanceChain(public_key=identity.public_key)
    with pytest.raises(AppendRejected, match="signature"):
        chain.append(bad)


def test_500_receipt_episode_verifies(identity):
    chain = build_chain(identity, 500)
    verdict = verify_chain(chain, identity.public_key)
    assert verdict.valid and verdict.first_bad_index is None


def test_untampered_100_chain_valid(identity):
    chain = build_chain(identity, 100)
    assert verify_chain(chain, identity.public_key).valid


def test_tamper_injection_oracle_over_all_positions(identity):
    """Single-field mutation at every index is flagged at i or i+1."""
    receipts = build_receipts(identity, 30)
    for idx in range(30):
        flipped = receipts[idx].result_hash
        flipped = ("0" if flipped[0] != "0" else "f") + flipped[1:]
        mutated = (
            receipts[:idx]
            + [dataclasses.replace(receipts[idx], result_hash=flipped)]
            + receipts[idx + 1 :]
        )
        verdict = verify_chain(mutated, identity.public_key)
        assert not verdict.valid
        # body mutation: the receipt's own signature breaks at idx
        assert verdict.first_bad_index == idx
        assert verdict.failure_kind == "signature"


def test_signature_mutation_detected_via_link(identity):
    """Mutating sigma breaks the receipt's own check or the successor link."""
    receipts = build_receipts(identity, 10)
    mutated = receipts[:4] + [dataclasses.replace(receipts[4], sigma_vs=receipts[3].sigma_vs)] + receipts[5:]
    verdict = verify_chain(mutated, identity.public_key)
    assert not verdict.valid
    assert verdict.first_bad_index in (4, 5)


def test_deletion_oracle(identity):
    receipts = build_receipts(identity, 50)
    for idx in (0, 17, 37, 49):
        mutated = receipts[:idx] + receipts[idx + 1 :]
        verdict = verify_chain(mutated, identity.public_key)
        if idx == 49:
            assert verdict.valid  # dropping the head leaves a valid prefix
        else:
            assert not verdict.valid
            assert verdict.first_bad_index == idx
            assert verdict.failure_kind == "link"


def test_timestamp_regression_detected(identity):
    receipts = build_receipts(identity, 5)
    mutated = receipts[:3] + [dataclasses.replace(receipts[3], timestamp=0)] + receipts[4:]
    verdict = verify_chain(mutated, identity.public_key)
    assert not verdict.valid
    # the edit also breaks the signature at index 3; either report is within one
    assert verdict.first_bad_index == 3


def test_format_failure_detected(identity):
    receipts = build_receipts(identity, 5)
    mutated = receipts[:2] + [dataclasses.replace(receipts[2], args_hash="short")] + receipts[3:]
    verdict = verify_chain(mutated, identity.public_key)
    assert verdict.first_bad_index == 2
    assert verdict.failure_kind == "format"


# -- replay -------------------------------------------------------------------


def test_replay_empty_chain(identity):
    chain = ProvenanceChain(public_key=identity.public_key)
    assert replay(chain, identity.public_key) == []


def test_replay_preserves_order_and_length(identity):
    chain = build_chain(identity, 40)
    actions = replay(chain, identity.public_key)
    assert len(actions) == 40
    assert [a.timestamp for a in actions] == list(range(40))
    assert [a.tool for a in actions] == [r.tool for r in chain.receipts]


def test_replay_interleaved_agents_preserves_per_agent_order(identity):
    chain = build_chain(identity, 20, agents=("agent-1", "agent-2"))
    actions = replay(chain, identity.public_key)
    for agent in ("agent-1", "agent-2"):
        times = [a.timestamp for a in actions if a.agent_id == agent]
        assert times == sorted(times)
        assert len(times) == 10


def test_replay_invalid_chain_raises_with_verdict(identity):
    receipts = build_receipts(identity, 10)
    mutated = receipts[:5] + [dataclasses.replace(receipts[5], tool="shell")] + receipts[6:]
    with pytest.raises(InvalidChainError) as err:
        replay(mutated, identity.public_key)
    assert err.value.verdict.first_bad_index == 5


# -- query ----------------------------------------------------------------------


def test_query_by_tool(identity):
    chain = build_chain(identity, 30)
    result = query(chain, ReceiptFilter(tool="search"))
    assert result == [r for r in chain.receipts if r.tool == "search"]


def test_query_empty_time_range(identity):
    chain = build_chain(identity, 10)
    assert query(chain, ReceiptFilter(t_min=100, t_max=50)) == []


def test_query_window_matches_linear_scan_oracle(identity):
    chain = build_chain(identity, 60)
    rng = random.Random(11)
    for _ in range(25):
        lo = rng.randrange(0, 60)
        hi = rng.randrange(lo, 61)
        got = query(chain, ReceiptFilter(t_min=lo, t_max=hi))
        brute = [r for r in chain.receipts if lo <= r.timestamp <= hi]
        assert got == brute


def test_query_is_read_only_and_in_chain_order(identity):
    chain = build_chain(identity, 12, agents=("agent-1", "agent-2"))
    got = query(chain, ReceiptFilter(agent_id="agent-2"))
    assert [r.timestamp for r in got] == sorted(r.timestamp for r in got)
    assert len(chain) == 12


# -- persistence ------------------------------------------------------------------


def test_file_round_trip(identity, tmp_path):
    path = tmp_path / "chain.jsonl"
    sink = LogSink(path)
    chain = ProvenanceChain(public_key=identity.public_key, sink=sink)
    for receipt in build_receipts(identity, 25):
        chain.append(receipt)
    sink.close()

    loaded, report = load_chain_file(path, public_key=identity.public_key)
    assert loaded.receipts == chain.receipts
    assert loaded.head_hash == chain.head_hash
    assert not report.truncated_partial_line
    assert verify_chain(loaded, identity.public_key).valid


def test_torn_final_line_truncated_and_reported(identity, tmp_path):
    path = tmp_path / "chain.jsonl"
    sink = LogSink(path)
    chain = ProvenanceChain(public_key=identity.public_key, sink=sink)
    for receipt in build_receipts(identity, 5):
        chain.append(receipt)
    sink.close()
    with open(path, "ab") as fh:
        fh.write(b'{"id": 5, "tool": "sea')  # crash mid-append

    loaded, report = load_chain_file(path, public_key=identity.public_key, repair=True)
    assert report.truncated_partial_line
    assert report.receipts_loaded == 5
    assert len(loaded) == 5
    # after repair the file parses cleanly
    again, report2 = load_chain_file(path, public_key=identity.public_key)
    assert not report2.truncated_partial_line
    assert again.receipts == loaded.receipts


def test_mid_file_corruption_raises(identity, tmp_path):
    path = tmp_path / "chain.jsonl"
    sink = LogSink(path)
    chain = ProvenanceChain(public_key=identity.public_key, sink=sink)
    for receipt in build_receipts(identity, 5):
        chain.append(receipt)
    sink.close()
    lines = path.read_bytes().split(b"\n")
    lines[2] = b"garbage"
    path.write_bytes(b"\n".join(lines))
    with pytest.raises(StorageError, match="line 3"):
        load_chain_file(path)


def test_append_only_no_removal_api(identity):
    chain = build_chain(identity, 3)
    assert not hasattr(chain, "remove")
    assert not hasattr(chain, "pop")
    assert not hasattr(chain, "truncate")
