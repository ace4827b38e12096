import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from artifactlab.errors import DomainError, ProtocolError, TransportError, ValidationError
from artifactlab.reward import (
    ClassifierReward, OracleClassifier, RemoteClassifier, RewardConfig, RewardFunction, artifact_reward,
    canonical_answers, oracle_answer, remote_answer, validate_reward_config,
)
from artifactlab.scenes import SPECS, sample_scene
from artifactlab.textsim import EmbeddingModel


def test_no_artifacts_alpha_beta_zero():
    cfg = RewardConfig(alpha=0.0, beta=0.0, validate=False)
    assert artifact_reward("No artifacts", cfg) == pytest.approx(1.0, abs=1e-12)


def test_beta_shifts_reward():
    a = artifact_reward("Blur.", RewardConfig(beta=1.0))
    b = artifact_reward("Blur.", RewardConfig(beta=2.5))
    assert b - a == pytest.approx(1.5, abs=1e-12)


def test_alpha_monotone_penalty():
    lo = artifact_reward("Shadow anomaly.", RewardConfig(alpha=0.05))
    hi = artifact_reward("Shadow anomaly.", RewardConfig(alpha=0.2))
    assert hi < lo


def test_default_positive_and_argmax(taxonomy):
    rf = RewardFunction()
    answers = canonical_answers(taxonomy)
    assert len(answers) == 14
    values = [rf(a) for a in answers]
    assert min(values) > 0
    assert int(np.argmax(values)) == 0
    assert rf.minimum_canonical() == min(values)


def test_invalid_config_rejected(taxonomy):
    with pytest.raises(ValidationError):
        RewardFunction(RewardConfig(alpha=1.0, beta=0.0))
    with pytest.raises(ValidationError):
        RewardConfig(alpha=-0.1)
    with pytest.raises(ValidationError):
        RewardConfig(score="g")
    assert validate_reward_config(RewardConfig(), EmbeddingModel(), taxonomy)


def test_empty_answer_rejected():
    with pytest.raises(DomainError):
        artifact_reward("   ")


def test_reward_cache_consistent():
    rf = RewardFunction()
    assert rf("Blur, Out of frame.") == rf("Blur, Out of frame.") == artifact_reward("Blur, Out of frame.")


def test_oracle_answers(rng):
    assert oracle_answer(sample_scene(rng, "clean")) == "No artifacts."
    assert oracle_answer(sample_scene(rng, "omission")) == "Omitted components."
    assert oracle_answer(sample_scene(rng, "out_of_frame")) == "Out of frame."


def test_classifier_reward_prefers_clean(rng):
    cr = ClassifierReward(OracleClassifier())
    clean, _ = cr(sample_scene(rng, "clean"))
    for spec in SPECS[1:]:
        r, answer = cr(sample_scene(rng, spec))
        assert answer != "No artifacts."
        assert r < clean
    rewards, answers = cr.batch([sample_scene(rng, "clean") for _ in range(3)])
    assert rewards.shape == (3,) and set(answers) == {"No artifacts."}


class _Stub:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                stub.requests.append(json.loads(body))
                code, payload = stub.responses.pop(0) if len(stub.responses) > 1 else stub.responses[0]
                self.send_response(code)
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.server = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/classify"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def test_remote_echo():
    with _Stub([(200, json.dumps({"answer": "Blur."}).encode())]) as stub:
        assert remote_answer("q?", b"img", stub.url, timeout=5) == "Blur."
        req = stub.requests[0]
        assert req["question"] == "q?" and req["image_format"] == "pgm"
        assert req["image"] == "aW1n"


def test_remote_retries_then_succeeds():
    with _Stub([(503, b""), (200, b'{"answer": "No artifacts."}')]) as stub:
        assert remote_answer("q", b"x", stub.url, timeout=5, backoff=0) == "No artifacts."
        assert len(stub.requests) == 2


def test_remote_gives_up_after_attempts():
    with _Stub([(500, b"")]) as stub:
        with pytest.raises(TransportError):
            remote_answer("q", b"x", stub.url, timeout=5, attempts=3, backoff=0)
        assert len(stub.requests) == 3


def test_remote_client_error_not_retried():
    with _Stub([(404, b"")]) as stub:
        with pytest.raises(TransportError):
            remote_answer("q", b"x", stub.url, timeout=5, backoff=0)
        assert len(stub.requests) == 1


@pytest.mark.parametrize("payload", [b"not json", b'{"text": "Blur"}', b'{"answer": 3}'])
def test_remote_malformed(payload):
    with _Stub([(200, payload)]) as stub:
        with pytest.raises(ProtocolError, match="answer"):
            remote_answer("q", b"x", stub.url, timeout=5)


def test_remote_unreachable():
    with pytest.raises(TransportError):
        remote_answer("q", b"x", "http://127.0.0.1:9/none", timeout=1, attempts=2, backoff=0)


def test_remote_classifier_renders_scene(rng, monkeypatch):
    with _Stub([(200, b'{"answer": "No artifacts."}')]) as stub:
        monkeypatch.setenv("ARTIFACTLAB_CLASSIFIER_URL", stub.url)
        clf = RemoteClassifier(resolution=32, backoff=0)
        assert clf.answer("q", sample_scene(rng, "clean")) == "No artifacts."
        import base64
        assert base64.b64decode(stub.requests[0]["image"]).startswith(b"P5\n32 32\n255\n")


def test_remote_classifier_needs_endpoint(monkeypatch):
    monkeypatch.delenv("ARTIFACTLAB_CLASSIFIER_URL", raising=False)
    with pytest.raises(DomainError):
        RemoteClassifier()
