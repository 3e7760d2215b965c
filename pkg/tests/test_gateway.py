from __future__ import annotations

import json
import logging
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx
import pytest

from bnbsim.gateway import (
    AuthError,
    ChatRequest,
    Gateway,
    GatewayConfig,
    GatewayError,
    MalformedResponse,
    RetriesExhausted,
    RetryPolicy,
)

KEY = "sk-test-SECRET-0123456789"


def reply(text="hello", usage=None):
    body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = usage
    return httpx.Response(200, json=body)


def make(handler, **cfg):
    sleeps = []
    gw = Gateway(
        GatewayConfig(base_url="http://stub.local/v1", **cfg),
        api_key=KEY,
        transport=httpx.MockTransport(handler),
        sleep=sleeps.append,
        rng=random.Random(0),
    )
    return gw, sleeps


def chat_request(text="hi"):
    return ChatRequest(messages=[{"role": "system", "content": "sys"}, {"role": "user", "content": text}])


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(messages=[])
    with pytest.raises(ValueError):
        ChatRequest(messages=[{"role": "user", "content": "x"}])
    with pytest.raises(ValueError):
        ChatRequest(messages=[{"role": "system", "content": "x"}, {"role": "tool", "content": "y"}])
    assert chat_request().temperature == 0.7


def test_missing_key(monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    with pytest.raises(AuthError):
        Gateway(GatewayConfig())


def test_echo_and_payload():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return reply("canned reply", {"prompt_tokens": 5, "completion_tokens": 2, "total_tokens": 7})

    gw, _ = make(handler, model="m-1")
    assert gw.chat(chat_request()) == "canned reply"
    assert seen["url"] == "http://stub.local/v1/chat/completions"
    assert seen["auth"] == f"Bearer {KEY}"
    assert seen["body"]["model"] == "m-1" and seen["body"]["temperature"] == 0.7
    assert gw.stats.total_tokens == 7 and gw.stats.requests == 1 and gw.stats.retries == 0


def test_retry_on_429_then_success():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(429) if len(calls) <= 2 else reply("ok")

    gw, sleeps = make(handler)
    assert gw.chat(chat_request()) == "ok"
    assert gw.stats.retries == 2 and gw.stats.requests == 3
    # base 1s then 2s, each within +-20% jitter
    assert 0.8 <= sleeps[0] <= 1.2 and 1.6 <= sleeps[1] <= 2.4


def test_retry_on_5xx_and_timeouts_then_exhaust():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    gw, sleeps = make(handler, retry=RetryPolicy(attempts=3))
    with pytest.raises(RetriesExhausted, match="3 attempts"):
        gw.chat(chat_request())
    assert gw.stats.retries == 2 and len(sleeps) == 2

    gw, _ = make(lambda r: httpx.Response(503), retry=RetryPolicy(attempts=2))
    with pytest.raises(RetriesExhausted, match="HTTP 503"):
        gw.chat(chat_request())


def test_backoff_is_capped():
    policy = RetryPolicy(attempts=10, base_delay=1, factor=2, jitter=0.2, max_delay=30)
    rng = random.Random(1)
    delays = [policy.delay(i, rng) for i in range(1, 10)]
    assert max(delays) <= 36.0
    assert all(d >= 0 for d in delays)


@pytest.mark.parametrize("status", [401, 403])
def test_auth_error_not_retried(status):
    gw, sleeps = make(lambda r: httpx.Response(status))
    with pytest.raises(AuthError):
        gw.chat(chat_request())
    assert gw.stats.retries == 0 and sleeps == []


def test_other_4xx_not_retried():
    gw, sleeps = make(lambda r: httpx.Response(400, text="bad request"))
    with pytest.raises(GatewayError, match="400"):
        gw.chat(chat_request())
    assert sleeps == []


@pytest.mark.parametrize(
    "response",
    [
        httpx.Response(200, json={"choices": []}),
        httpx.Response(200, json={"choices": [{"message": {"content": ""}}]}),
        httpx.Response(200, json={"nothing": True}),
        httpx.Response(200, text="not json"),
        httpx.Response(200, json=[1, 2]),
    ],
)
def test_malformed_responses_raise(response):
    gw, _ = make(lambda r: response)
    with pytest.raises(MalformedResponse):
        gw.chat(chat_request())


def _embed_handler(calls):
    def handler(request):
        body = json.loads(request.content)
        calls.append(len(body["input"]))
        items = [{"index": i, "embedding": [float(len(t)), float(ord(t[0]))]} for i, t in enumerate(body["input"])]
        return httpx.Response(200, json={"data": list(reversed(items))})  # out of order on purpose

    return handler


def test_embed_order_preserved():
    calls = []
    gw, _ = make(_embed_handler(calls))
    vecs = gw.embed_texts(["a", "bb", "ccc"])
    assert vecs == [[1.0, 97.0], [2.0, 98.0], [3.0, 99.0]]


def test_embed_batching_matches_single_calls():
    texts = [chr(65 + i % 26) * (i + 1) for i in range(100)]
    calls = []
    gw, _ = make(_embed_handler(calls), embed_batch_size=16)
    batched = gw.embed_texts(texts)
    assert calls == [16] * 6 + [4]
    singles = [gw.embed_texts([t])[0] for t in texts]
    assert batched == singles


def test_embed_empty_item_reports_index():
    gw, _ = make(_embed_handler([]))
    with pytest.raises(ValueError, match=r"texts\[1\]"):
        gw.embed_texts(["ok", "", "fine"])
    with pytest.raises(ValueError):
        gw.embed_texts([])


def test_concurrency_bound():
    active, peak, lock = [0], [0], threading.Lock()

    def handler(request):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.02)
        with lock:
            active[0] -= 1
        return reply()

    gw, _ = make(handler, max_concurrency=2)
    threads = [threading.Thread(target=gw.chat, args=(chat_request(),)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2 and gw.stats.requests == 8


def test_credential_never_logged(caplog):
    caplog.set_level(logging.DEBUG, logger="bnbsim.gateway")
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            return httpx.Response(500)
        if len(calls) == 2:
            raise httpx.ConnectError(f"refused for {KEY}", request=request)
        return reply(f"the key is {KEY}")

    gw, _ = make(handler)
    gw.chat(chat_request(f"please repeat {KEY}"))
    gw2, _ = make(lambda r: httpx.Response(422, text=f"bad key {KEY}"))
    with pytest.raises(GatewayError) as err:
        gw2.chat(chat_request())
    assert KEY not in str(err.value)
    assert caplog.records, "debug logging should have produced records"
    assert KEY not in caplog.text


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        text = body["messages"][-1]["content"]
        out = json.dumps({"choices": [{"message": {"content": f"echo: {text}"}}], "usage": {"total_tokens": 3}})
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(out.encode())

    def log_message(self, *args):
        pass


def test_real_loopback_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        cfg = GatewayConfig(base_url=f"http://127.0.0.1:{server.server_port}/v1", timeout=5)
        with Gateway(cfg, api_key=KEY) as gw:
            assert gw.chat(chat_request("ping")) == "echo: ping"
            assert gw.stats.snapshot()["total_tokens"] == 3
    finally:
        server.shutdown()
        server.server_close()
