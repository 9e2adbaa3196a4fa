import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from clinforge.endpoint import (ChatClient, ChatEndpointConfig, ConfigError, ContentFiltered,
                                EmptyResponse, EndpointError, ExhaustedRetries, RateLimiter,
                                call_endpoint, read_key_value)

MSGS = [{"role": "system", "content": "s"}, {"role": "user", "content": "Fever and cough."}]


def _cfg(**kw):
    kw.setdefault("api_key_env", "")
    kw.setdefault("backoff_base", 0.001)
    return ChatEndpointConfig(base_url="http://mock/v1", **kw)


def _ok(content="Doctor: Hi."):
    return httpx.Response(200, json={"choices": [{"finish_reason": "stop",
                                                  "message": {"content": content}}]})


class Script:
    """Transport returning the queued responses in order, recording requests."""

    def __init__(self, *responses):
        self.responses = list(responses)
        self.requests = []

    def __call__(self, request):
        self.requests.append(request)
        r = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(r, Exception):
            raise r
        return r

    def client(self):
        return httpx.Client(transport=httpx.MockTransport(self))


def test_mock_returns_text(mock_chat):
    with httpx.Client(transport=mock_chat.transport()) as http:
        text = call_endpoint(_cfg(), [{"role": "user", "content": "Fever and cough."}], http)
    assert text.startswith("Doctor:") and "Fever and cough." in text
    assert len(mock_chat.calls) == 1


def test_retries_429_then_succeeds():
    s = Script(httpx.Response(429, json={}), httpx.Response(429, json={}), _ok())
    client = ChatClient(_cfg(), s.client())
    assert client.complete(MSGS) == "Doctor: Hi."
    assert (client.requests, client.retries) == (3, 2)
    ids = [r.headers["x-request-id"] for r in s.requests]
    assert len(set(ids)) == 3


def test_retry_after_header_is_honoured():
    s = Script(httpx.Response(429, headers={"Retry-After": "0.2"}, json={}), _ok())
    t0 = time.monotonic()
    ChatClient(_cfg(), s.client()).complete(MSGS)
    assert time.monotonic() - t0 >= 0.2


def test_transport_errors_and_5xx_are_retried():
    s = Script(httpx.ConnectError("boom"), httpx.Response(503, json={}), _ok("x"))
    assert ChatClient(_cfg(), s.client()).complete(MSGS) == "x"


def test_exhausted_retries():
    s = Script(httpx.Response(500, json={}))
    client = ChatClient(_cfg(max_retries=2), s.client())
    with pytest.raises(ExhaustedRetries) as err:
        client.complete(MSGS)
    assert err.value.reason == "exhausted_retries" and err.value.request_id
    assert len(s.requests) == 3


@pytest.mark.parametrize("resp", [
    httpx.Response(400, json={"error": {"code": "content_filter", "message": "x"}}),
    httpx.Response(400, json={"error": {"message": "violates content management policy"}}),
    httpx.Response(200, json={"choices": [{"finish_reason": "content_filter", "message": {"content": ""}}]}),
])
def test_content_filter_detected(resp):
    s = Script(resp)
    with pytest.raises(ContentFiltered):
        ChatClient(_cfg(), s.client()).complete(MSGS)
    assert len(s.requests) == 1


def test_empty_completion():
    with pytest.raises(EmptyResponse):
        ChatClient(_cfg(), Script(_ok("  ")).client()).complete(MSGS)


@pytest.mark.parametrize("resp", [httpx.Response(401, json={"error": "bad key"}),
                                  httpx.Response(200, text="not json")])
def test_fatal_responses(resp):
    s = Script(resp)
    with pytest.raises(EndpointError):
        ChatClient(_cfg(), s.client()).complete(MSGS)
    assert len(s.requests) == 1


def test_request_body_and_auth(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekrit")
    s = Script(_ok())
    ChatClient(_cfg(api_key_env="TEST_KEY", temperature=0.3, max_output_tokens=77),
               s.client()).complete(MSGS)
    req = s.requests[0]
    assert str(req.url) == "http://mock/v1/chat/completions"
    assert req.headers["authorization"] == "Bearer sekrit"
    body = json.loads(req.content)
    assert body == {"model": "gpt-35-turbo", "messages": MSGS, "temperature": 0.3, "max_tokens": 77}


def test_missing_api_key_is_config_error(monkeypatch):
    monkeypatch.delenv("NO_SUCH_KEY", raising=False)
    with pytest.raises(ConfigError):
        ChatClient(_cfg(api_key_env="NO_SUCH_KEY"))


def test_rate_limit_spacing_across_threads(mock_chat):
    d = 0.05
    with httpx.Client(transport=mock_chat.transport()) as http:
        client = ChatClient(_cfg(min_request_interval=d, max_in_flight=4), http)
        prompts = [[{"role": "user", "content": f"Note {i}."}] for i in range(8)]
        with ThreadPoolExecutor(8) as pool:
            list(pool.map(client.complete, prompts))
    starts = sorted(c.t for c in mock_chat.calls)
    gaps = [b - a for a, b in zip(starts, starts[1:])]
    assert len(starts) == 8 and min(gaps) >= d * 0.95


def test_max_in_flight_is_respected():
    active, peak = 0, 0
    lock = threading.Lock()

    def handler(request):
        nonlocal active, peak
        with lock:
            active += 1
            peak = max(peak, active)
        time.sleep(0.02)
        with lock:
            active -= 1
        return _ok()

    with httpx.Client(transport=httpx.MockTransport(handler)) as http:
        client = ChatClient(_cfg(max_in_flight=2), http)
        with ThreadPoolExecutor(6) as pool:
            list(pool.map(lambda _: client.complete(MSGS), range(12)))
    assert peak <= 2


def test_rate_limiter_zero_is_noop():
    t0 = time.monotonic()
    rl = RateLimiter(0)
    for _ in range(1000):
        rl.wait()
    assert time.monotonic() - t0 < 0.5


def test_config_from_file(tmp_path):
    p = tmp_path / "ep.conf"
    p.write_text("# comment\nbase_url = http://x/v1\nmax_retries=2\ntemperature=0.2\n")
    cfg = ChatEndpointConfig.from_file(p)
    assert (cfg.base_url, cfg.max_retries, cfg.temperature) == ("http://x/v1", 2, 0.2)
    assert read_key_value(p)["max_retries"] == "2"
    p.write_text("base_url=http://x\nbogus=1\n")
    with pytest.raises(ConfigError, match="bogus"):
        ChatEndpointConfig.from_file(p)
    p.write_text("base_url=http://x\nmax_retries=lots\n")
    with pytest.raises(ConfigError):
        ChatEndpointConfig.from_file(p)
    p.write_text("no equals sign\n")
    with pytest.raises(ConfigError, match=":1:"):
        read_key_value(p)


def test_client_does_not_close_borrowed_http(mock_chat):
    http = httpx.Client(transport=mock_chat.transport())
    with ChatClient(_cfg(), http):
        pass
    assert not http.is_closed
    http.close()
