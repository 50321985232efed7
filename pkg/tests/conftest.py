import numpy as np
import pytest

from linkcast.graph import EdgeRecord, NodeState, Snapshot


def make_snapshot(t, n, pairs_with_loss, rng=None):
    """Snapshot with stationary nodes and one record per (src, dst, loss) triple."""
    rng = rng or np.random.default_rng(0)
    nodes = tuple(
        NodeState(id=i, x=float(10.0 * i), y=0.0, vx=0.0, vy=0.0) for i in range(n)
    )
    edges = tuple(
        EdgeRecord(
            src=src,
            dst=dst,
            distance_m=abs(src - dst) * 10.0,
            path_loss_db=loss,
            prop_delay_s=abs(src - dst) * 10.0 / 2.998e8,
            timestamp_s=float(rng.random()),
        )
        for src, dst, loss in pairs_with_loss
    )
    return Snapshot(t=t, nodes=nodes, edges=edges)


def random_snapshot(t, n, rng, edge_prob=0.4, loss_span=(100.0, 150.0)):
    pairs = []
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < edge_prob:
                loss = rng.uniform(*loss_span)
                pairs.append((i, j, loss))
                if rng.random() < 0.3:  # occasional multi-edge
                    pairs.append((i, j, rng.uniform(*loss_span)))
    return make_snapshot(t, n, pairs, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
