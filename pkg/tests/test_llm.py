import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from sentgraph.llm import (
    BadResponse,
    ChatClient,
    ChatRequest,
    ChatResponse,
    HTTPProvider,
    ProviderTimeout,
    RateLimited,
    RetryPolicy,
    ScriptedProvider,
    TransportError,
    UsageSummary,
    complete_with_retry,
    fingerprint,
    load_script,
    script_entry,
    script_from_pairs,
    usage_ledger,
)


class Flaky:
    provider_id = "flaky"

    def __init__(self, errors):
        self.errors = list(errors)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        if self.errors:
            raise self.errors.pop(0)
        return ChatResponse("ok", 1, 1, self.provider_id)


REQ = ChatRequest.user("m", "hello")


def test_retry_fail_fail_succeed():
    provider = Flaky([ProviderTimeout("t"), TransportError("x")])
    sleeps = []
    resp = complete_with_retry(provider, REQ, RetryPolicy(max_attempts=3), sleep=sleeps.append)
    assert resp.text == "ok" and provider.calls == 3 and len(sleeps) == 2
    assert all(0 <= s <= 8 for s in sleeps)


def test_retry_gives_up_after_max_attempts():
    provider = Flaky([ProviderTimeout("t")] * 5)
    with pytest.raises(ProviderTimeout):
        complete_with_retry(provider, REQ, RetryPolicy(max_attempts=3), sleep=lambda s: None)
    assert provider.calls == 3


def test_bad_response_not_retried():
    provider = Flaky([BadResponse("no")])
    with pytest.raises(BadResponse):
        complete_with_retry(provider, REQ, sleep=lambda s: None)
    assert provider.calls == 1


def test_rate_limit_honours_retry_after():
    sleeps = []
    complete_with_retry(Flaky([RateLimited(retry_after=3.0)]), REQ, RetryPolicy(base_delay=0.01),
                        sleep=sleeps.append)
    assert sleeps == [3.0]


def test_backoff_is_capped():
    import random

    policy = RetryPolicy(base_delay=1, max_delay=4)
    rng = random.Random(0)
    assert all(policy.delay(a, rng) <= 4 for a in range(1, 20))


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("m", ())
    with pytest.raises(ValueError):
        ChatRequest("m", (("assistant", "x"),))
    with pytest.raises(ValueError):
        ChatRequest.user("m", "x", temperature=-1)


def test_fingerprint_depends_on_model_and_messages():
    a = fingerprint(ChatRequest.user("m", "hello"))
    assert a == fingerprint(ChatRequest.user("m", "hello", temperature=0.5))
    assert a != fingerprint(ChatRequest.user("n", "hello"))
    assert a != fingerprint(ChatRequest.user("m", "hello", system="s"))
    assert len(a) == 32


def test_scripted_hit_and_miss():
    provider = ScriptedProvider(script_from_pairs("m", [("hello", "hi there")]))
    resp = provider.complete(REQ)
    assert (resp.text, resp.prompt_tokens, resp.completion_tokens) == ("hi there", 1, 2)
    with pytest.raises(BadResponse) as exc:
        provider.complete(ChatRequest.user("m", "other"))
    assert exc.value.fingerprint == fingerprint(ChatRequest.user("m", "other"))


def test_load_script_formats(tmp_path):
    fp, resp = script_entry("m", "hello", "hi")
    obj = tmp_path / "s.json"
    obj.write_text(json.dumps({fp: resp}))
    lines = tmp_path / "s.jsonl"
    lines.write_text(json.dumps({"fingerprint": fp, "response": resp}) + "\n")
    assert load_script(obj) == load_script(lines) == {fp: "hi"}


def test_usage_ledger_is_additive():
    rs = [ChatResponse("a", 10, 2, "p"), ChatResponse("b", 4, 6, "p"), ChatResponse("c", 1, 1, "p")]
    whole = usage_ledger(rs)
    assert whole == usage_ledger(rs[:1]) + usage_ledger(rs[1:])
    assert (whole.calls, whole.prompt_tokens, whole.completion_tokens) == (3, 15, 9)
    assert whole.mean_prompt_tokens == 5.0
    assert UsageSummary().mean_prompt_tokens == 0.0


def test_client_ledger_records_exchanges(tmp_path):
    path = tmp_path / "ledger.jsonl"
    client = ChatClient(ScriptedProvider(script_from_pairs("m", [("hello", "hi")])), model="m", ledger_path=path)
    client.chat("hello")
    with pytest.raises(BadResponse):
        client.chat("missing")
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert recs[0]["response"] == "hi" and "error" in recs[1]
    assert recs[0]["fingerprint"] in load_script(path)


def _completion(text, usage=None):
    body = {"choices": [{"message": {"content": text}}]}
    if usage:
        body["usage"] = usage
    return body


def test_http_provider_success_and_usage():
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=_completion("fine", {"prompt_tokens": 7, "completion_tokens": 1}))

    p = HTTPProvider("http://llm/v1/", api_key="sk-secret", transport=httpx.MockTransport(handler))
    resp = p.complete(ChatRequest.user("gpt", "hi there", system="be brief"))
    assert (resp.text, resp.prompt_tokens, resp.completion_tokens) == ("fine", 7, 1)
    assert seen["auth"] == "Bearer sk-secret"
    assert seen["body"]["messages"][0] == {"role": "system", "content": "be brief"}


def test_http_provider_usage_fallback():
    p = HTTPProvider("http://llm", transport=httpx.MockTransport(lambda r: httpx.Response(200, json=_completion("a b"))))
    resp = p.complete(REQ)
    assert (resp.prompt_tokens, resp.completion_tokens) == (1, 2)


@pytest.mark.parametrize("status, error", [(429, RateLimited), (503, TransportError), (400, BadResponse)])
def test_http_provider_status_mapping(status, error):
    p = HTTPProvider("http://llm", api_key="sk-secret",
                     transport=httpx.MockTransport(lambda r: httpx.Response(status, text="bad sk-secret")))
    with pytest.raises(error) as exc:
        p.complete(REQ)
    assert "sk-secret" not in str(exc.value)


def test_http_provider_malformed_body_and_timeout():
    p = HTTPProvider("http://llm", transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"x": 1})))
    with pytest.raises(BadResponse):
        p.complete(REQ)

    def boom(request):
        raise httpx.ReadTimeout("slow", request=request)

    with pytest.raises(ProviderTimeout):
        HTTPProvider("http://llm", transport=httpx.MockTransport(boom)).complete(REQ)


def test_client_bounds_in_flight_calls():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def handler(request):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.02)
        with lock:
            state["now"] -= 1
        return httpx.Response(200, json=_completion("ok"))

    client = ChatClient(HTTPProvider("http://llm", transport=httpx.MockTransport(handler)), model="m", concurrency=3)
    with ThreadPoolExecutor(max_workers=12) as pool:
        list(pool.map(lambda i: client.chat(f"q{i}"), range(24)))
    assert 1 <= state["peak"] <= 3


def test_client_retries_through_policy():
    provider = Flaky([TransportError("x")])
    client = ChatClient(provider, model="m", sleep=lambda s: None)
    assert client.chat("hi").text == "ok" and provider.calls == 2
