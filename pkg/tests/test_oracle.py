"""Oracles: synthetic classifiers, budget accounting, and the HTTP client."""

import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from conftest import ConstantOracle
from tea.oracle import (
    BudgetExhaustedError,
    CountedOracle,
    LinearOracle,
    ProtocolError,
    PrototypeOracle,
    QueryBudget,
    RemoteOracle,
    TransportError,
    remote_classify,
)

SHAPE = (3, 4, 4)


def test_query_budget_validation():
    b = QueryBudget(10)
    assert b.remaining == 10
    b.used = 4
    assert b.remaining == 6
    with pytest.raises(ValueError):
        QueryBudget(-1)
    with pytest.raises(ValueError):
        QueryBudget(5, used=6)


def test_prototype_oracle_picks_nearest():
    rng = np.random.default_rng(0)
    protos = [rng.uniform(0, 1, SHAPE) for _ in range(4)]
    oracle = PrototypeOracle(protos)
    assert oracle.num_classes == 4
    assert oracle.shape == SHAPE
    for _ in range(50):
        img = rng.uniform(0, 1, SHAPE)
        d2 = [np.sum((p - img) ** 2) for p in protos]
        assert oracle.classify(img) == int(np.argmin(d2))
    for k, p in enumerate(protos):
        assert oracle.classify(p) == k


def test_prototype_oracle_breaks_ties_low():
    p = np.full(SHAPE, 0.5)
    oracle = PrototypeOracle([p, p.copy()])
    assert oracle.classify(np.zeros(SHAPE)) == 0


def test_prototype_oracle_validation():
    with pytest.raises(ValueError):
        PrototypeOracle([np.zeros(SHAPE)])
    with pytest.raises(ValueError):
        PrototypeOracle([np.zeros(SHAPE), np.zeros((3, 5, 5))])
    with pytest.raises(ValueError):
        PrototypeOracle([np.zeros(SHAPE), np.full(SHAPE, 2.0)])
    oracle = PrototypeOracle([np.zeros(SHAPE), np.ones(SHAPE)])
    with pytest.raises(ValueError):
        oracle.classify(np.zeros((3, 5, 5)))


def test_linear_oracle_known_scores():
    # class scores: s0 = sum(x), s1 = 1 - sum(x)
    n = int(np.prod(SHAPE))
    oracle = LinearOracle([np.ones(n), -np.ones(n)], [0.0, 1.0], SHAPE)
    assert oracle.classify(np.zeros(SHAPE)) == 1
    assert oracle.classify(np.ones(SHAPE)) == 0
    assert oracle.num_classes == 2


def test_linear_oracle_random_is_seed_deterministic():
    a = LinearOracle.random(5, SHAPE, seed=3)
    b = LinearOracle.random(5, SHAPE, seed=3)
    c = LinearOracle.random(5, SHAPE, seed=4)
    rng = np.random.default_rng(1)
    imgs = [rng.uniform(0, 1, SHAPE) for _ in range(20)]
    assert [a.classify(i) for i in imgs] == [b.classify(i) for i in imgs]
    assert [a.classify(i) for i in imgs] != [c.classify(i) for i in imgs]


def test_linear_oracle_validation():
    n = int(np.prod(SHAPE))
    with pytest.raises(ValueError):
        LinearOracle(np.ones((2, n + 1)), np.zeros(2), SHAPE)
    with pytest.raises(ValueError):
        LinearOracle(np.ones((1, n)), np.zeros(1), SHAPE)
    with pytest.raises(ValueError):
        LinearOracle(np.ones((2, n)), np.zeros(3), SHAPE)


def test_counted_oracle_charges_and_raises():
    inner = ConstantOracle(1, SHAPE)
    budget = QueryBudget(3)
    counted = CountedOracle(inner, budget)
    img = np.zeros(SHAPE)
    for expected in (1, 2, 3):
        assert counted.classify(img) == 1
        assert budget.used == expected
    with pytest.raises(BudgetExhaustedError):
        counted.classify(img)
    assert budget.used == 3  # the refused call is not charged
    assert inner.calls == 3  # nor forwarded
    assert counted.calls == [(1, 1), (2, 1), (3, 1)]
    assert counted.num_classes == 2
    assert counted.shape == SHAPE


def test_counted_oracle_zero_budget():
    counted = CountedOracle(ConstantOracle(0, SHAPE), QueryBudget(0))
    with pytest.raises(BudgetExhaustedError):
        counted.classify(np.zeros(SHAPE))


def test_counted_oracle_thread_safety():
    inner = ConstantOracle(0, SHAPE)
    budget = QueryBudget(200)
    counted = CountedOracle(inner, budget)
    img = np.zeros(SHAPE)

    def hammer():
        while True:
            try:
                counted.classify(img)
            except BudgetExhaustedError:
                return

    threads = [threading.Thread(target=hammer) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert budget.used == 200
    assert inner.calls == 200
    assert [i for i, _ in counted.calls] == list(range(1, 201))


# --- remote oracle against an in-process HTTP stub ---------------------------


def _stub_server(oracle, mode="ok"):
    """Loopback HTTP server speaking the wire protocol, with failure modes."""
    shape = oracle.shape
    flat = int(np.prod(shape))

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send(self, code, payload=None, raw=None):
            body = raw if raw is not None else json.dumps(payload).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path != "/info":
                self._send(404, {"error": "no such route"})
            elif mode == "bad-info":
                self._send(200, {"classes": "several"})
            else:
                c, h, w = shape
                self._send(
                    200,
                    {"classes": oracle.num_classes, "channels": c, "height": h, "width": w},
                )

        def do_POST(self):
            if self.path != "/classify":
                self._send(404, {"error": "no such route"})
                return
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                data = body["data"]
            except Exception:
                self._send(400, {"error": "malformed payload"})
                return
            if not isinstance(data, list) or len(data) != flat:
                self._send(400, {"error": f"expected {flat} values"})
                return
            if mode == "bad-label":
                self._send(200, {"label": 99})
            elif mode == "not-json":
                self._send(200, raw=b"<html>oops</html>")
            elif mode == "boom":
                self._send(500, {"error": "internal"})
            else:
                arr = np.asarray(data, dtype=np.float64).reshape(shape)
                self._send(200, {"label": oracle.classify(arr)})

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server, f"http://127.0.0.1:{server.server_address[1]}"


@pytest.fixture
def stub():
    servers = []

    def start(oracle, mode="ok"):
        server, url = _stub_server(oracle, mode)
        servers.append(server)
        return url

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


def test_remote_oracle_matches_local(stub):
    local = PrototypeOracle([np.zeros(SHAPE), np.ones(SHAPE)])
    remote = RemoteOracle(stub(local))
    assert remote.num_classes == 2
    assert remote.shape == SHAPE
    rng = np.random.default_rng(5)
    for _ in range(10):
        img = rng.uniform(0, 1, SHAPE)
        assert remote.classify(img) == local.classify(img)


def test_remote_classify_one_shot(stub):
    local = PrototypeOracle([np.zeros(SHAPE), np.ones(SHAPE)])
    url = stub(local)
    assert remote_classify(url, np.full(SHAPE, 0.9)) == 1


def test_remote_oracle_shape_checked_client_side(stub):
    remote = RemoteOracle(stub(PrototypeOracle([np.zeros(SHAPE), np.ones(SHAPE)])))
    with pytest.raises(ValueError):
        remote.classify(np.zeros((3, 5, 5)))


def test_remote_oracle_malformed_info(stub):
    url = stub(PrototypeOracle([np.zeros(SHAPE), np.ones(SHAPE)]), mode="bad-info")
    with pytest.raises(ProtocolError):
        RemoteOracle(url)


def test_remote_oracle_label_out_of_range(stub):
    local = PrototypeOracle([np.zeros(SHAPE), np.ones(SHAPE)])
    good = RemoteOracle(stub(local))
    bad = RemoteOracle(stub(local, mode="bad-label"))
    img = np.zeros(SHAPE)
    assert good.classify(img) == 0
    with pytest.raises(ProtocolError):
        bad.classify(img)


def test_remote_oracle_non_json_reply(stub):
    remote = RemoteOracle(stub(PrototypeOracle([np.zeros(SHAPE), np.ones(SHAPE)]), mode="not-json"))
    with pytest.raises(ProtocolError):
        remote.classify(np.zeros(SHAPE))


def test_remote_oracle_http_error(stub):
    remote = RemoteOracle(stub(PrototypeOracle([np.zeros(SHAPE), np.ones(SHAPE)]), mode="boom"))
    with pytest.raises(TransportError):
        remote.classify(np.zeros(SHAPE))


def test_remote_oracle_connection_refused():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    # nothing is listening there once the socket is closed
    with pytest.raises(TransportError):
        RemoteOracle(f"http://127.0.0.1:{port}", timeout=2.0)
