import itertools
import json
import sys
import textwrap
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from modex.blackbox import (
    BlackBoxSession,
    HttpEndpoint,
    QueryLedger,
    SubprocessEndpoint,
    TargetSelector,
    decode_response,
    encode_request,
    make_synthetic,
)
from modex.errors import (
    BadParams,
    BlackBoxError,
    DimensionMismatch,
    EndpointUnreachable,
    MalformedResponse,
)
from modex.space import build_instance_spec

ECHO = [sys.executable, "-m", "modex.serve", "--echo"]


@pytest.fixture
def spec3():
    return build_instance_spec(["a", "b"], [2, 1])


def test_linear_oracle_values():
    spec = build_instance_spec(["m"], [2])
    sess = BlackBoxSession(make_synthetic("linear", spec, weights=[2, 1]), spec)
    y = sess.query_batch([[1, 1], [0, 1], [1, 0]], TargetSelector())
    np.testing.assert_array_equal(y, [3, 1, 2])
    assert sess.ledger.explanation_calls == 3


def test_constant_oracle_logit_is_zero(spec3):
    model = make_synthetic("linear", spec3, weights=[0, 0, 0], bias=0.5)
    sess = BlackBoxSession(model, spec3)
    y = sess.query_batch([[1, 1, 1], [0, 0, 0], [1, 0, 1]], TargetSelector(transform="logit"))
    np.testing.assert_allclose(y, 0.0, atol=1e-15)


def test_logit_clamps_extremes(spec3):
    sel = TargetSelector(transform="logit")
    y = sel.apply(np.array([[0.0], [1.0]]))
    np.testing.assert_allclose(y, [np.log(1e-7 / (1 - 1e-7)), np.log((1 - 1e-7) / 1e-7)])


def test_group_and_truth_table():
    spec = build_instance_spec(["a", "b"], [2, 2])
    model = make_synthetic("group_and", spec, modality="a")
    for bits in itertools.product([0, 1], repeat=4):
        expected = float(bits[0] == 1 and bits[1] == 1)
        assert model(np.array([bits]))[0, 0] == expected
    sess = BlackBoxSession(model, spec)
    np.testing.assert_array_equal(sess.query_batch([[1, 1, 1, 1], [1, 0, 1, 1]], TargetSelector()), [1, 0])


def test_linear_first_weight():
    spec = build_instance_spec(["m"], [3])
    assert make_synthetic("linear", spec, weights=[1, 0, 0])(np.ones((1, 3)))[0, 0] == 1


def test_unimodal_collapse_ignores_other_modalities_exhaustive():
    spec = build_instance_spec(["a", "b", "c"], [4, 4, 4])
    rng = np.random.default_rng(0)
    model = make_synthetic("unimodal_collapse", spec, modality=0, weights=rng.normal(size=4))
    Z = np.array(list(itertools.product([0, 1], repeat=12)), dtype=np.int8)
    y = model(Z)[:, 0]
    for j in range(4, 12):
        flipped = Z.copy()
        flipped[:, j] ^= 1
        np.testing.assert_array_equal(model(flipped)[:, 0], y)


def test_noisy_linear_zero_noise_is_linear(spec3):
    Z = np.array([[1, 0, 1], [0, 1, 1]])
    a = make_synthetic("noisy_linear", spec3, weights=[1, 2, 3], noise_std=0.0)(Z)
    b = make_synthetic("linear", spec3, weights=[1, 2, 3])(Z)
    np.testing.assert_array_equal(a, b)


def test_noisy_linear_is_seeded(spec3):
    Z = np.ones((5, 3))
    a = make_synthetic("noisy_linear", spec3, weights=[1, 2, 3], noise_std=0.5, seed=4)(Z)
    b = make_synthetic("noisy_linear", spec3, weights=[1, 2, 3], noise_std=0.5, seed=4)(Z)
    np.testing.assert_array_equal(a, b)
    assert a.std() > 0


@pytest.mark.parametrize("kind, params", [
    ("linear", {"weights": [1, 2]}),
    ("unimodal_collapse", {"modality": 0, "weights": [1]}),
    ("group_and", {"modality": "zzz"}),
    ("nope", {}),
    ("linear", {"weights": [1, 2, 3], "typo": 1}),
])
def test_bad_params(spec3, kind, params):
    with pytest.raises(BadParams):
        make_synthetic(kind, spec3, **params)


def test_dimension_mismatch(spec3):
    sess = BlackBoxSession(make_synthetic("linear", spec3), spec3)
    with pytest.raises(DimensionMismatch):
        sess.query_batch([[1, 1, 1]], TargetSelector(output_index=1))


def test_determinism_and_order(spec3):
    sess = BlackBoxSession(make_synthetic("echo", spec3), spec3, batch_size=2, max_workers=3)
    Z = np.array(list(itertools.product([0, 1], repeat=3)) * 5)
    out = sess.query_raw(Z)
    np.testing.assert_array_equal(out, Z)
    np.testing.assert_array_equal(sess.query_raw(Z), out)
    assert sess.ledger.explanation_calls == 2 * len(Z)


def test_ledger_split():
    led = QueryLedger()
    led.record(5)
    led.record(3, "metric")
    assert led.snapshot() == {"explanation_calls": 5, "metric_calls": 3}
    with pytest.raises(ValueError):
        led.record(1, "other")


def test_ledger_is_thread_safe():
    led = QueryLedger()
    threads = [threading.Thread(target=lambda: [led.record(1) for _ in range(1000)]) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert led.explanation_calls == 8000


def test_codec():
    assert json.loads(encode_request(3, [1, 0])) == {"id": 3, "mask": [1, 0]}
    assert decode_response('{"id": 3, "output": [0.5, 1]}') == (3, [0.5, 1.0])
    with pytest.raises(MalformedResponse):
        decode_response("not json")
    with pytest.raises(MalformedResponse):
        decode_response('{"output": [1]}')
    with pytest.raises(MalformedResponse):
        decode_response('{"id": 1, "output": []}')
    with pytest.raises(BlackBoxError):
        decode_response('{"id": 1, "error": "boom"}')


# --- subprocess endpoints ---------------------------------------------------


def test_subprocess_echo(spec3):
    with SubprocessEndpoint(ECHO) as ep:
        sess = BlackBoxSession(ep, spec3, batch_size=4)
        Z = np.array(list(itertools.product([0, 1], repeat=3)))
        np.testing.assert_array_equal(sess.query_raw(Z), Z)
        assert sess.ledger.explanation_calls == 8


def test_subprocess_synthetic_matches_in_process():
    spec = build_instance_spec(["a", "b"], [2, 2])
    cmd = [sys.executable, "-m", "modex.serve", "--modalities", "a:2,b:2", "--synthetic", "linear",
           "--params", json.dumps({"weights": [1, 2, 3, 4], "bias": 0.5})]
    Z = np.array(list(itertools.product([0, 1], repeat=4)))
    with SubprocessEndpoint(cmd) as ep:
        np.testing.assert_allclose(ep(Z), make_synthetic("linear", spec, weights=[1, 2, 3, 4], bias=0.5)(Z))


def _script(tmp_path, body):
    p = tmp_path / "endpoint.py"
    p.write_text(textwrap.dedent(body))
    return [sys.executable, str(p)]


def test_out_of_order_replies_are_reassembled(tmp_path, spec3):
    cmd = _script(tmp_path, """
        import json, sys
        buf = []
        for line in sys.stdin:
            buf.append(json.loads(line))
            if len(buf) == 4:
                for req in reversed(buf):
                    print(json.dumps({"id": req["id"], "output": req["mask"]}), flush=True)
                buf = []
    """)
    Z = np.array(list(itertools.product([0, 1], repeat=3)))
    with SubprocessEndpoint(cmd) as ep:
        np.testing.assert_array_equal(BlackBoxSession(ep, spec3, batch_size=4).query_raw(Z), Z)


def test_garbage_reply(tmp_path, spec3):
    cmd = _script(tmp_path, """
        import sys
        for line in sys.stdin:
            print("garbage", flush=True)
    """)
    with SubprocessEndpoint(cmd) as ep, pytest.raises(MalformedResponse):
        ep(np.ones((1, 3)))


def test_wrong_id_reply(tmp_path):
    cmd = _script(tmp_path, """
        import json, sys
        for line in sys.stdin:
            print(json.dumps({"id": 999, "output": [1.0]}), flush=True)
    """)
    with SubprocessEndpoint(cmd) as ep, pytest.raises(MalformedResponse):
        ep(np.ones((1, 3)))


def test_endpoint_dies(tmp_path):
    cmd = _script(tmp_path, "import sys; sys.exit(0)\n")
    with SubprocessEndpoint(cmd) as ep, pytest.raises(EndpointUnreachable):
        ep(np.ones((2, 3)))


def test_missing_executable():
    with pytest.raises(EndpointUnreachable):
        SubprocessEndpoint(["/nonexistent/model-server"])


def test_server_reports_bad_request():
    import io

    from modex.serve import serve

    out = io.StringIO()
    serve(lambda m: m, io.StringIO('{"id": 1}\n{"id": 2, "mask": [1]}\n'), out)
    lines = [json.loads(s) for s in out.getvalue().splitlines()]
    assert lines[0]["id"] == 1 and "error" in lines[0]
    assert lines[1] == {"id": 2, "output": [1.0]}


# --- HTTP endpoint ----------------------------------------------------------


@pytest.fixture
def http_echo():
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            req = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            body = json.dumps({"id": req["id"], "output": [float(b) for b in req["mask"]]}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/predict"
    server.shutdown()


def test_http_echo(http_echo, spec3):
    ep = HttpEndpoint(http_echo, max_workers=4)
    Z = np.array(list(itertools.product([0, 1], repeat=3)) * 4)
    np.testing.assert_array_equal(BlackBoxSession(ep, spec3, batch_size=5).query_raw(Z), Z)


def test_http_unreachable():
    with pytest.raises(EndpointUnreachable):
        HttpEndpoint("http://127.0.0.1:9/none", timeout=2)(np.ones((1, 3)))
