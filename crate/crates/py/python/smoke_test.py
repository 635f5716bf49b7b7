"""Smoke test for the lightchain extension module.

Build and install first:  maturin build -m crates/py/Cargo.toml && pip install target/wheels/lightchain-*.whl
"""

import lightchain as lc

SMALL = """NODES = 8
TRANSACTIONS = 3
DELAY = 1
BLK_SIZE = 4
INIT_BALANCE = 20
MALICIOUS = 0.125
VALID_THR = 4
SIG_THR = 3
VALID_FEE = 2
ROUTE_FEE = 1
REWARD = 3
"""


def main():
    cfg = lc.Config.parse(SMALL)
    assert cfg.nodes == 8 and cfg.signature_threshold == 3
    assert lc.Config.parse(cfg.to_text()) == cfg
    try:
        lc.Config.parse(SMALL.replace("NODES = 8", "NODES = eight"))
    except ValueError:
        pass
    else:
        raise AssertionError("bad config accepted")

    # sha-256 of the empty string
    assert lc.hash(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    nid = lc.node_identifier(0)
    assert lc.common_prefix_len(nid, nid) == 256
    assert lc.membership_vector(lc.membership_vector(nid)) == nid

    ov = lc.Overlay(16)
    assert ov.controller_count == 16
    hit = ov.search(3, lc.node_identifier(5))
    assert hit["terminal"] == 5 and hit["vertex"] == lc.node_identifier(5)
    obj = lc.hash(b"payload")
    assert ov.announce_object(obj, 2)
    assert not ov.announce_object(obj, 9)
    assert ov.resolve_holders(11, obj) == [2, 9]
    tickets = ov.select_validators(obj, 4, 6)
    validators = [t["validator"] for t in tickets]
    assert len(set(validators)) == 6 and 4 not in validators
    assert ov.select_validators(obj, 4, 6) == tickets
    ov.check_invariants()

    sim = lc.run_simulation(cfg, seed=1)
    report = sim.report()
    assert report["finalized_txs"] == 24
    csv = sim.csv_bytes().decode()
    assert csv.startswith(lc.CSV_HEADER)
    assert len(csv.splitlines()) - 1 == len(sim.records())
    again = lc.run_simulation(cfg, seed=1)
    assert again.csv_bytes() == sim.csv_bytes()
    assert sum(sim.balances()) == 8 * 20 + report["total_minted"]
    assert sim.termination_time is not None
    sim.check_invariants()

    print(sim.summary())
    print("smoke test ok")


if __name__ == "__main__":
    main()
