"""Token walk simulation: determinism, support, views, persistence."""

from __future__ import annotations

import json

import numpy as np
import pytest

from tokenwalk import walk
from tokenwalk.errors import TokenwalkError
from tokenwalk.transition import from_array
from tokenwalk.walk import simulate, view_of, visit_counts


# --------------------------------------------------------------------------- #
# Determinism and support
# --------------------------------------------------------------------------- #


def test_same_seed_same_walk(lazy_ring):
    tm = lazy_ring(8)
    a = simulate(tm, 0, 500, 42)
    b = simulate(tm, 0, 500, 42)
    assert np.array_equal(a.nodes, b.nodes)
    assert a.seed == b.seed == 42
    c = simulate(tm, 0, 500, 43)
    assert not np.array_equal(a.nodes, c.nodes)


def test_seed_sequence_reproducible(lazy_ring):
    tm = lazy_ring(8)
    a = simulate(tm, 0, 200, np.random.SeedSequence(7))
    b = simulate(tm, 0, 200, np.random.SeedSequence(7))
    assert np.array_equal(a.nodes, b.nodes)
    # spawned children are distinct streams
    kids = np.random.SeedSequence(7).spawn(2)
    x = simulate(tm, 0, 200, kids[0])
    y = simulate(tm, 0, 200, kids[1])
    assert not np.array_equal(x.nodes, y.nodes)


def test_walk_stays_on_support(er_chain):
    traj = simulate(er_chain, 0, 2000, 5)
    w = er_chain.w
    for t in range(traj.steps):
        assert w[traj.nodes[t], traj.nodes[t + 1]] > 0.0


def test_zero_mass_targets_never_selected():
    # node 0 can reach 1 but never 2 directly
    tm = from_array(
        np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]])
    )
    traj = simulate(tm, 0, 5000, 11)
    from_zero = traj.nodes[1:][traj.nodes[:-1] == 0]
    assert from_zero.size > 0
    assert not np.any(from_zero == 2)


def test_trajectory_shape(lazy_ring):
    traj = simulate(lazy_ring(4), 2, 100, 0)
    assert traj.nodes.shape == (101,)
    assert traj.steps == 100
    assert traj.nodes[0] == 2
    assert traj.n == 4
    assert traj.w_hash == lazy_ring(4).content_hash()
    assert not traj.nodes.flags.writeable


def test_zero_step_walk(lazy_ring):
    traj = simulate(lazy_ring(4), 1, 0, 9)
    assert np.array_equal(traj.nodes, [1])
    assert visit_counts(traj).tolist() == [0, 1, 0, 0]


def test_visit_counts_sum(lazy_ring):
    traj = simulate(lazy_ring(8), 0, 777, 3)
    counts = visit_counts(traj)
    assert counts.sum() == 778
    assert counts.shape == (8,)


def test_visit_frequencies_near_uniform(uniform_chain):
    steps = 20_000
    traj = simulate(uniform_chain(4), 0, steps, 1)
    freqs = visit_counts(traj) / (steps + 1)
    assert np.all(np.abs(freqs - 0.25) <= 3.0 / np.sqrt(steps))


# --------------------------------------------------------------------------- #
# Validation
# --------------------------------------------------------------------------- #


def test_simulate_validation(lazy_ring):
    tm = lazy_ring(4)
    with pytest.raises(TokenwalkError, match="start node"):
        simulate(tm, 4, 10, 0)
    with pytest.raises(TokenwalkError, match="steps"):
        simulate(tm, 0, -1, 0)
    with pytest.raises(TokenwalkError, match="burn_in"):
        simulate(tm, 0, 10, 0, burn_in=11)
    with pytest.raises(TokenwalkError, match="burn_in"):
        simulate(tm, 0, 10, 0, burn_in=-1)
    with pytest.raises(TokenwalkError, match="contribution_cap"):
        simulate(tm, 0, 10, 0, contribution_cap=-1)


def test_simulate_requires_row_stochastic():
    tm = from_array(np.array([[0.5, 0.4], [0.5, 0.5]]))
    with pytest.raises(TokenwalkError, match="row-stochastic"):
        simulate(tm, 0, 10, 0)


# --------------------------------------------------------------------------- #
# Node views and contribution caps
# --------------------------------------------------------------------------- #


def test_view_of_events(lazy_ring):
    traj = simulate(lazy_ring(6), 0, 300, 21)
    totals = 0
    for v in range(6):
        view = view_of(traj, v)
        assert view.owner == v
        totals += len(view.events)
        for t, successor in view.events:
            assert traj.nodes[t] == v
            if t == traj.steps:
                assert successor is None
            else:
                assert successor == traj.nodes[t + 1]
    assert totals == 301  # every time step belongs to exactly one owner
    with pytest.raises(TokenwalkError):
        view_of(traj, 6)


def test_final_visit_has_no_successor(lazy_ring):
    traj = simulate(lazy_ring(4), 0, 50, 2)
    last = int(traj.nodes[-1])
    assert view_of(traj, last).events[-1] == (50, None)


def test_cap_zero_flags_every_update_step(lazy_ring):
    traj = simulate(lazy_ring(4), 0, 40, 13, contribution_cap=0, burn_in=5)
    assert traj.noise_only is not None
    assert np.all(traj.noise_only[5:40])
    assert not np.any(traj.noise_only[:5])  # burn-in carries no updates
    assert not traj.noise_only[40]  # the final node never updates


def test_cap_flags_match_manual_recount(lazy_ring):
    cap = 2
    traj = simulate(lazy_ring(4), 0, 200, 17, contribution_cap=cap, burn_in=10)
    counts = np.zeros(4, dtype=int)
    for t in range(10, 200):
        node = traj.nodes[t]
        counts[node] += 1
        assert traj.noise_only[t] == (counts[node] > cap)
    # uncapped runs leave the mask all-False
    free = simulate(lazy_ring(4), 0, 200, 17)
    assert not np.any(free.noise_only)


def test_cap_does_not_change_the_path(lazy_ring):
    a = simulate(lazy_ring(4), 0, 100, 3)
    b = simulate(lazy_ring(4), 0, 100, 3, contribution_cap=1)
    assert np.array_equal(a.nodes, b.nodes)


# --------------------------------------------------------------------------- #
# Persistence
# --------------------------------------------------------------------------- #


def test_csv_round_trip(tmp_path, lazy_ring):
    traj = simulate(lazy_ring(5), 0, 30, 4, burn_in=3)
    path = tmp_path / "walk.csv"
    walk.save_trajectory_csv(traj, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,node"
    nodes = [int(line.split(",")[1]) for line in lines[1:]]
    assert nodes == traj.nodes.tolist()
    meta = json.loads((tmp_path / "walk.csv.json").read_text())
    assert meta["steps"] == 30
    assert meta["burn_in"] == 3
    assert meta["w_hash"] == traj.w_hash


def test_binary_round_trip(tmp_path, lazy_ring):
    traj = simulate(lazy_ring(5), 2, 64, 8)
    path = tmp_path / "walk.trw"
    walk.save_trajectory_binary(traj, path)
    back = walk.load_trajectory_binary(path)
    assert np.array_equal(back, traj.nodes)
    assert back.dtype == np.int64
    meta = json.loads((tmp_path / "walk.trw.json").read_text())
    assert meta["n"] == 5
    assert meta["seed"] == 8


def test_binary_rejects_bad_magic(tmp_path):
    p = tmp_path / "junk.trw"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 8)
    with pytest.raises(TokenwalkError, match="header"):
        walk.load_trajectory_binary(p)


def test_binary_rejects_truncated_payload(tmp_path, lazy_ring):
    traj = simulate(lazy_ring(4), 0, 10, 1)
    path = tmp_path / "walk.trw"
    walk.save_trajectory_binary(traj, path)
    data = path.read_bytes()
    path.write_bytes(data[:-2])  # chop mid-u32
    with pytest.raises(TokenwalkError, match="truncated"):
        walk.load_trajectory_binary(path)


def test_large_seed_serialized_as_string(tmp_path, lazy_ring):
    big = np.random.SeedSequence(123456789)
    traj = simulate(lazy_ring(4), 0, 5, big)
    path = tmp_path / "walk.csv"
    walk.save_trajectory_csv(traj, path)
    meta = json.loads((tmp_path / "walk.csv.json").read_text())
    assert isinstance(meta["seed"], (int, str))
    assert int(meta["seed"]) == traj.seed
